use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ensemble::{fuse_scores, grid_search_weights, write_scores, ScoreMatrix};
use crate::error::{Error, Result};
use crate::input::prepare_samples;
use crate::pipeline::{train_stream, Backbone, RunConfig, StreamSpec};
use crate::skeleton::{read_split, Dataset, DatasetManifest, Modality, Split, Topology};

use super::evaluate;

pub const DEFAULT_GRID_STEP: f64 = 0.1;

/// One `[[stream]]` record of an ablation spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEntry {
    pub backbone: Backbone,
    pub modality: Modality,
    pub dims: usize,
    /// Run config path, relative to the spec file. Desk defaults when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<PathBuf>,
    /// Fusion group; defaults to branch and dimensionality, e.g. `gcn-2d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl StreamEntry {
    pub fn group_name(&self) -> String {
        self.group.clone().unwrap_or_else(|| {
            let branch = if self.backbone.is_gcn() { "gcn" } else { "former" };
            format!("{branch}-{}d", self.dims)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    #[serde(rename = "stream")]
    pub streams: Vec<StreamEntry>,
}

impl AblationSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: AblationSpec =
            toml::from_str(text).map_err(|e| Error::Config(format!("ablation spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("ablation spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.streams.is_empty() {
            return Err(Error::Config("ablation spec lists no streams".into()));
        }
        for s in &self.streams {
            if s.dims != 2 && s.dims != 3 {
                return Err(Error::Config(format!("stream dims must be 2 or 3, got {}", s.dims)));
            }
        }
        let mut names: Vec<_> = self.streams.iter().map(|s| (s.backbone, s.modality, s.dims)).collect();
        names.sort_by_key(|(b, m, d)| (b.as_str(), *m, *d));
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("ablation spec lists a stream twice".into()));
        }
        if let Some(step) = self.grid_step {
            if !(step > 0.0 && step <= 1.0) {
                return Err(Error::Config(format!("grid_step must lie in (0, 1], got {step}")));
            }
        }
        Ok(())
    }

    /// Copy with every default written out.
    pub fn normalized(&self) -> Self {
        AblationSpec {
            grid_step: Some(self.grid_step.unwrap_or(DEFAULT_GRID_STEP)),
            streams: self
                .streams
                .iter()
                .map(|s| StreamEntry {
                    group: Some(s.group_name()),
                    ..s.clone()
                })
                .collect(),
        }
    }

    /// Group names in first-appearance order.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.streams {
            let g = s.group_name();
            if !out.contains(&g) {
                out.push(g);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Stream,
    GroupFused,
    Overall,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub kind: RowKind,
    pub group: String,
    pub name: String,
    pub val_top1: f64,
    pub test_top1: Option<f64>,
    /// Fusion weights, for fused rows.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationReport {
    pub rows: Vec<ReportRow>,
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

impl AblationReport {
    pub fn stream_rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.kind == RowKind::Stream)
    }

    pub fn overall(&self) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.kind == RowKind::Overall)
    }

    pub fn group_fused(&self, group: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.kind == RowKind::GroupFused && r.group == group)
    }

    /// Top-1 accuracies in percent, one row per stream followed by each
    /// group's fused row and a final overall row.
    pub fn to_markdown(&self) -> String {
        let with_test = self.rows.iter().any(|r| r.test_top1.is_some());
        let mut out = String::from("| group | stream | val top-1 (%) |");
        out.push_str(if with_test { " test top-1 (%) | weights |\n" } else { " weights |\n" });
        out.push_str(if with_test { "|---|---|---:|---:|---|\n" } else { "|---|---|---:|---|\n" });
        for r in &self.rows {
            let name = match r.kind {
                RowKind::Stream => r.name.clone(),
                _ => format!("**{}**", r.name),
            };
            let _ = write!(out, "| {} | {} | {} |", r.group, name, pct(r.val_top1));
            if with_test {
                let _ = write!(out, " {} |", r.test_top1.map(pct).unwrap_or_default());
            }
            let weights: Vec<String> = r.weights.iter().map(|w| format!("{w:.2}")).collect();
            let _ = writeln!(out, " {} |", weights.join(" "));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,group,name,val_top1,test_top1,weights\n");
        for r in &self.rows {
            let kind = match r.kind {
                RowKind::Stream => "stream",
                RowKind::GroupFused => "group_fused",
                RowKind::Overall => "overall",
            };
            let weights: Vec<String> = r.weights.iter().map(|w| w.to_string()).collect();
            let _ = writeln!(
                out,
                "{kind},{},{},{},{},{}",
                r.group,
                r.name,
                r.val_top1,
                r.test_top1.map(|t| t.to_string()).unwrap_or_default(),
                weights.join(" ")
            );
        }
        out
    }
}

/// Splits and topology an ablation runs on.
pub struct AblationData<'a> {
    pub topology: &'a Topology,
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub test: Option<&'a Dataset>,
}

/// Resolve a manifest's topology: a built-in name or a path relative to the
/// dataset root.
pub fn dataset_topology(root: &Path, manifest: &DatasetManifest) -> Result<Topology> {
    match Topology::builtin(&manifest.topology) {
        Some(t) => Ok(t),
        None => Topology::load(root.join(&manifest.topology)),
    }
}

/// Train every stream of the spec at `spec_path` on the dataset at
/// `data_root` and write scores, checkpoints, histories and the report
/// under `out_dir`.
pub fn run_ablation(spec_path: &Path, data_root: &Path, out_dir: &Path) -> Result<AblationReport> {
    let spec = AblationSpec::load(spec_path)?;
    let manifest = DatasetManifest::load(data_root)?;
    let topology = dataset_topology(data_root, &manifest)?;
    let train = read_split(data_root, Split::Train)?;
    let val = read_split(data_root, Split::Val)?;
    let test = if manifest.splits.contains(&Split::Test) {
        Some(read_split(data_root, Split::Test)?)
    } else {
        None
    };
    let base = spec_path.parent().unwrap_or(Path::new("."));
    let data = AblationData {
        topology: &topology,
        train: &train,
        val: &val,
        test: test.as_ref(),
    };
    run_ablation_with(&spec, base, &data, out_dir)
}

struct StreamScores {
    group: String,
    val: ScoreMatrix,
    test: Option<ScoreMatrix>,
}

fn fuse_group(
    members: &[&StreamScores],
    val_labels: &[(String, usize)],
    test_labels: Option<&[(String, usize)]>,
    step: f64,
    name: &str,
) -> Result<(StreamScores, Vec<f64>, f64, Option<f64>)> {
    let vals: Vec<ScoreMatrix> = members.iter().map(|m| m.val.clone()).collect();
    let (weights, val_acc) = grid_search_weights(&vals, val_labels, step)?;
    let fused_val = fuse_scores(&vals, &weights)?.renamed(name);
    let (fused_test, test_acc) = match test_labels {
        Some(labels) if members.iter().all(|m| m.test.is_some()) => {
            let tests: Vec<ScoreMatrix> = members.iter().map(|m| m.test.clone().unwrap()).collect();
            let fused = fuse_scores(&tests, &weights)?.renamed(name);
            let acc = evaluate(&fused, labels)?.top1;
            (Some(fused), Some(acc))
        }
        _ => (None, None),
    };
    Ok((
        StreamScores {
            group: name.to_string(),
            val: fused_val,
            test: fused_test,
        },
        weights.as_slice().to_vec(),
        val_acc,
        test_acc,
    ))
}

pub fn run_ablation_with(
    spec: &AblationSpec,
    base_dir: &Path,
    data: &AblationData<'_>,
    out_dir: &Path,
) -> Result<AblationReport> {
    spec.validate()?;
    let step = spec.grid_step.unwrap_or(DEFAULT_GRID_STEP);
    let scores_dir = out_dir.join("scores");
    let ckpt_dir = out_dir.join("checkpoints");
    let hist_dir = out_dir.join("history");
    for d in [&scores_dir, &ckpt_dir, &hist_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let val_labels = data.val.id_labels();
    let test_labels = data.test.map(|t| t.id_labels());

    let mut report = AblationReport::default();
    let mut all_scores = Vec::new();
    for entry in &spec.streams {
        let config = match &entry.config {
            Some(p) => RunConfig::load(base_dir.join(p))?,
            None => RunConfig::desk(entry.backbone),
        };
        let stream = StreamSpec::new(entry.backbone, entry.modality, entry.dims).with_config(config);
        let slug = stream.slug();
        let trained = train_stream(
            &stream,
            data.topology,
            data.train,
            Some(data.val),
            Some(&ckpt_dir.join(format!("{slug}.json"))),
        )?;
        trained.history.write_csv(hist_dir.join(format!("{slug}.csv")))?;

        let input = stream.input_spec(data.topology);
        let val_scores = trained.scores(&prepare_samples(data.val, &input)?)?;
        write_scores(scores_dir.join(format!("{slug}.val.csv")), &val_scores)?;
        let val_top1 = evaluate(&val_scores, &val_labels)?.top1;
        let (test_scores, test_top1) = match (data.test, &test_labels) {
            (Some(test), Some(labels)) => {
                let s = trained.scores(&prepare_samples(test, &input)?)?;
                write_scores(scores_dir.join(format!("{slug}.test.csv")), &s)?;
                let acc = evaluate(&s, labels)?.top1;
                (Some(s), Some(acc))
            }
            _ => (None, None),
        };
        report.rows.push(ReportRow {
            kind: RowKind::Stream,
            group: entry.group_name(),
            name: stream.name(),
            val_top1,
            test_top1,
            weights: Vec::new(),
        });
        all_scores.push(StreamScores {
            group: entry.group_name(),
            val: val_scores,
            test: test_scores,
        });
    }

    let mut group_scores = Vec::new();
    for group in spec.groups() {
        let members: Vec<&StreamScores> = all_scores.iter().filter(|s| s.group == group).collect();
        let name = format!("{group} fused");
        let (fused, weights, val_top1, test_top1) =
            fuse_group(&members, &val_labels, test_labels.as_deref(), step, &name)?;
        write_scores(scores_dir.join(format!("fused_{group}.val.csv")), &fused.val)?;
        if let Some(t) = &fused.test {
            write_scores(scores_dir.join(format!("fused_{group}.test.csv")), t)?;
        }
        report.rows.push(ReportRow {
            kind: RowKind::GroupFused,
            group: group.clone(),
            name,
            val_top1,
            test_top1,
            weights,
        });
        group_scores.push(fused);
    }

    let members: Vec<&StreamScores> = group_scores.iter().collect();
    let (fused, weights, val_top1, test_top1) =
        fuse_group(&members, &val_labels, test_labels.as_deref(), step, "all fused")?;
    write_scores(scores_dir.join("fused_all.val.csv"), &fused.val)?;
    if let Some(t) = &fused.test {
        write_scores(scores_dir.join("fused_all.test.csv"), t)?;
    }
    report.rows.push(ReportRow {
        kind: RowKind::Overall,
        group: "all".into(),
        name: "all fused".into(),
        val_top1,
        test_top1,
        weights,
    });

    for (name, text) in [("report.md", report.to_markdown()), ("report.csv", report.to_csv())] {
        let path = out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}
