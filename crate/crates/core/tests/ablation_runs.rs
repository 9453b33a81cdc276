use std::fs;
use std::path::Path;

use skelfuse_core::checkpoint::Checkpoint;
use skelfuse_core::ensemble::read_scores;
use skelfuse_core::harness::{evaluate, generate_split, run_ablation, RowKind, SynthConfig};
use skelfuse_core::input::prepare_samples;
use skelfuse_core::skeleton::{read_split, write_dataset, Split};

const FORMER: &str = r#"
base_lr = 0.002
decay_factor = 0.1
milestones = []
epochs = 3
batch_size = 8
momentum = 0.9
seed = 0
weight_decay = 0.0004

[former]
d_model = 16
d_head = 16
heads = 2
d_ff = 32
depth = 1
segments = 4
"#;

const GCN: &str = r#"
base_lr = 0.05
decay_factor = 0.1
milestones = []
epochs = 2
batch_size = 8
momentum = 0.9
seed = 1
weight_decay = 0.0004

[gcn]
channels = [8]
temporal_kernel = 3
"#;

const SPEC: &str = r#"
grid_step = 0.25

[[stream]]
backbone = "former"
modality = "J"
dims = 2
config = "former.toml"

[[stream]]
backbone = "former"
modality = "B"
dims = 2
config = "former.toml"

[[stream]]
backbone = "gcn-ctr"
modality = "JM"
dims = 3
config = "gcn.toml"
"#;

fn setup(root: &Path) {
    let cfg = SynthConfig {
        samples_per_class: 8,
        frames: 16,
        noise_std: 0.2,
        ..SynthConfig::default()
    };
    let splits: Vec<_> = [Split::Train, Split::Val, Split::Test]
        .into_iter()
        .map(|s| generate_split(&cfg, s).unwrap())
        .collect();
    write_dataset(root.join("data"), "coco17", &splits.iter().collect::<Vec<_>>()).unwrap();
    fs::write(root.join("former.toml"), FORMER).unwrap();
    fs::write(root.join("gcn.toml"), GCN).unwrap();
    fs::write(root.join("ablation.toml"), SPEC).unwrap();
}

fn run(root: &Path, out: &str) -> skelfuse_core::harness::AblationReport {
    run_ablation(&root.join("ablation.toml"), &root.join("data"), &root.join(out)).unwrap()
}

#[test]
fn ablation_reports_match_written_scores_and_fusion_dominates() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    setup(root);
    let report = run(root, "out");
    let val = read_split(root.join("data"), Split::Val).unwrap();
    let labels = val.id_labels();

    let streams: Vec<_> = report.stream_rows().collect();
    assert_eq!(streams.len(), 3);
    for row in &streams {
        let slug = row.name.replace('/', "_");
        let scores = read_scores(root.join("out/scores").join(format!("{slug}.val.csv"))).unwrap();
        assert_eq!(evaluate(&scores, &labels).unwrap().top1, row.val_top1, "{}", row.name);
        assert!(row.test_top1.is_some());
        assert!(root.join("out/checkpoints").join(format!("{slug}.json")).exists());
        assert!(root.join("out/history").join(format!("{slug}.csv")).exists());
    }

    for group in ["former-2d", "gcn-3d"] {
        let fused = report.group_fused(group).unwrap();
        let best = streams.iter().filter(|r| r.group == group).map(|r| r.val_top1).fold(0.0, f64::max);
        assert!(fused.val_top1 >= best, "{group}");
    }
    let overall = report.overall().unwrap();
    assert_eq!(overall.kind, RowKind::Overall);
    assert!(streams.iter().all(|r| overall.val_top1 >= r.val_top1));
    let fused = read_scores(root.join("out/scores/fused_all.val.csv")).unwrap();
    assert_eq!(evaluate(&fused, &labels).unwrap().top1, overall.val_top1);

    let md = fs::read_to_string(root.join("out/report.md")).unwrap();
    assert!(md.contains("former/J/2d") && md.contains("**all fused**"));

    // a second run from scratch writes the same bytes
    run(root, "again");
    for entry in fs::read_dir(root.join("out/scores")).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(root.join("out/scores").join(&name)).unwrap(),
            fs::read(root.join("again/scores").join(&name)).unwrap(),
            "{name:?}"
        );
    }
    assert_eq!(
        fs::read(root.join("out/report.csv")).unwrap(),
        fs::read(root.join("again/report.csv")).unwrap()
    );
}

#[test]
fn best_checkpoint_reproduces_its_validation_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    setup(root);
    run(root, "out");
    let val = read_split(root.join("data"), Split::Val).unwrap();
    let ckpt = Checkpoint::load(root.join("out/checkpoints/gcn-ctr_JM_3d.json")).unwrap();
    let model = ckpt.restore(17, 4).unwrap();
    let spec = ckpt.spec();
    let samples = prepare_samples(&val, &spec.input_spec(&ckpt.topology().unwrap())).unwrap();
    let logits = model.predict(&samples.inputs).unwrap();
    let scores = skelfuse_core::ensemble::ScoreMatrix::new(spec.name(), samples.ids.clone(), logits).unwrap();
    assert_eq!(Some(evaluate(&scores, &val.id_labels()).unwrap().top1), ckpt.val_acc);
}
