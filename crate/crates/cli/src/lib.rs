//! `skelfuse` command-line interface.
//!
//! Every subcommand reads and writes plain files (SKL1 sequences, dataset
//! directories, TOML configs, JSON checkpoints, score CSVs), so stages can
//! be chained from a shell.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use skelfuse_core::checkpoint::Checkpoint;
use skelfuse_core::ensemble::{
    fuse_scores_with, grid_search_weights_with, read_scores, write_scores, FusionInput,
    FusionWeights, ScoreMatrix,
};
use skelfuse_core::harness::{
    dataset_topology, evaluate, generate_split, plot_confusion, run_ablation, SynthConfig,
};
use skelfuse_core::input::prepare_samples;
use skelfuse_core::lift::{lift_to_3d, load_precomputed_3d, zero_z_lifter, PoseLifter};
use skelfuse_core::pipeline::{train_stream, Backbone, RunConfig, StreamSpec};
use skelfuse_core::skeleton::{
    derive_modality, read_skl, read_split, write_dataset, write_skl, Dataset, DatasetManifest,
    Modality, Split, Topology,
};

#[derive(Debug, Parser)]
#[command(name = "skelfuse", version, about = "Skeleton action recognition toolkit")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Seed overriding the one in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config document for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Derive a modality (B, JM, BM, K2, K2M) from a joint sequence.
    Derive {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        modality: Modality,
        /// Built-in topology name or topology file.
        #[arg(long, default_value = "coco17")]
        topology: String,
    },
    /// Lift a 2D joint sequence to 3D.
    Lift {
        #[arg(long)]
        input: PathBuf,
        /// Use these 3D poses instead of the zero-depth stub.
        #[arg(long)]
        precomputed: Option<PathBuf>,
    },
    /// Write a synthetic dataset directory with train, val and test splits.
    GenSynth {
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Train one stream and write its checkpoints, history and val scores.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        backbone: Backbone,
        #[arg(long, default_value = "J")]
        modality: Modality,
        #[arg(long, default_value_t = 2)]
        dims: usize,
        /// Overrides the config; milestones at or past it are dropped.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Score a dataset split with a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "val")]
        split: Split,
    },
    /// Fuse score CSVs with given weights or a grid search on labelled data.
    Fuse {
        #[arg(long, num_args = 1.., required = true)]
        scores: Vec<PathBuf>,
        /// Comma-separated weights, one per score file.
        #[arg(long, value_delimiter = ',', conflicts_with = "grid_step")]
        weights: Option<Vec<f64>>,
        #[arg(long)]
        grid_step: Option<f64>,
        /// Dataset supplying labels for the grid search.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "val")]
        split: Split,
        /// Fuse per-stream softmax outputs instead of raw logits.
        #[arg(long)]
        probabilities: bool,
    },
    /// Train, score and fuse every stream listed in an ablation spec.
    Ablate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Render a confusion matrix for a score CSV against dataset labels.
    PlotConfusion {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "val")]
        split: Split,
    },
}

/// Parse `args` (including the program name) and run the command. Returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            1
        }
    }
}

/// The error chain on one line, skipping causes already quoted by the
/// message above them.
fn one_line(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg.replace('\n', " ")
}

fn require_out(common: &Common) -> Result<&Path> {
    common
        .out
        .as_deref()
        .context("--out is required for this command")
}

fn load_topology(spec: &str) -> Result<Topology> {
    match Topology::builtin(spec) {
        Some(t) => Ok(t),
        None => Ok(Topology::load(spec)?),
    }
}

fn load_dataset(root: &Path, split: Split) -> Result<(DatasetManifest, Topology, Dataset)> {
    let manifest = DatasetManifest::load(root)?;
    let topology = dataset_topology(root, &manifest)?;
    let data = read_split(root, split)?;
    Ok((manifest, topology, data))
}

fn dispatch(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::Derive {
            input,
            modality,
            topology,
        } => {
            let out = require_out(common)?;
            let topo = load_topology(&topology)?;
            let seq = read_skl(&input)?;
            let derived = derive_modality(&seq, &topo, modality)?;
            write_skl(out, &derived)?;
        }
        Command::Lift { input, precomputed } => {
            let out = require_out(common)?;
            let seq = read_skl(&input)?;
            let lifter = match precomputed {
                Some(path) => {
                    let poses = load_precomputed_3d(&path)?;
                    PoseLifter::new("precomputed", move |_| Ok(poses.clone()))
                }
                None => zero_z_lifter(),
            };
            write_skl(out, &lift_to_3d(&seq, &lifter)?)?;
        }
        Command::GenSynth {
            classes,
            per_class,
            frames,
            noise,
        } => {
            let out = require_out(common)?;
            let mut cfg = match &common.config {
                Some(path) => SynthConfig::load(path)?,
                None => SynthConfig::default(),
            };
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            cfg.num_classes = classes.unwrap_or(cfg.num_classes);
            cfg.samples_per_class = per_class.unwrap_or(cfg.samples_per_class);
            cfg.frames = frames.unwrap_or(cfg.frames);
            cfg.noise_std = noise.unwrap_or(cfg.noise_std);
            let splits = [Split::Train, Split::Val, Split::Test]
                .into_iter()
                .map(|s| generate_split(&cfg, s))
                .collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&Dataset> = splits.iter().collect();
            write_dataset(out, cfg.topology().name(), &refs)?;
        }
        Command::Train {
            data,
            backbone,
            modality,
            dims,
            epochs,
            lr,
        } => {
            let out = require_out(common)?;
            let mut config = match &common.config {
                Some(path) => RunConfig::load(path)?,
                None => RunConfig::desk(backbone),
            };
            if let Some(seed) = common.seed {
                config.train.seed = seed;
            }
            if let Some(e) = epochs {
                config.train.epochs = e;
                config.train.milestones.retain(|&m| m < e);
            }
            if let Some(lr) = lr {
                config.train.base_lr = lr;
            }
            config.train.validate()?;
            let (_, topology, train) = load_dataset(&data, Split::Train)?;
            let val = read_split(&data, Split::Val)?;
            std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            let spec = StreamSpec::new(backbone, modality, dims).with_config(config);
            let trained = train_stream(&spec, &topology, &train, Some(&val), Some(&out.join("best.json")))?;
            Checkpoint::capture(&spec, &topology, &trained.model).save(out.join("final.json"))?;
            trained.history.write_csv(out.join("history.csv"))?;
            let scores = trained.scores(&prepare_samples(&val, &spec.input_spec(&topology))?)?;
            write_scores(out.join("val_scores.csv"), &scores)?;
            let top1 = evaluate(&scores, &val.id_labels())?.top1;
            println!("{}: val top-1 {:.2}%", spec.name(), 100.0 * top1);
        }
        Command::Eval {
            checkpoint,
            data,
            split,
        } => {
            let out = require_out(common)?;
            let ck = Checkpoint::load(&checkpoint)?;
            let (manifest, topology, ds) = load_dataset(&data, split)?;
            let model = ck.restore(manifest.num_joints, manifest.num_classes)?;
            let spec = ck.spec();
            let samples = prepare_samples(&ds, &spec.input_spec(&topology))?;
            let scores = ScoreMatrix::new(spec.name(), samples.ids.clone(), model.predict(&samples.inputs)?)?;
            write_scores(out, &scores)?;
            let top1 = evaluate(&scores, &ds.id_labels())?.top1;
            println!("{} on {split}: top-1 {:.2}%", spec.name(), 100.0 * top1);
        }
        Command::Fuse {
            scores,
            weights,
            grid_step,
            data,
            split,
            probabilities,
        } => {
            let out = require_out(common)?;
            let input = if probabilities {
                FusionInput::Probabilities
            } else {
                FusionInput::Logits
            };
            let streams = scores
                .iter()
                .map(read_scores)
                .collect::<Result<Vec<_>, _>>()?;
            let weights = match (weights, grid_step) {
                (Some(w), _) => FusionWeights::new(w)?,
                (None, step) => {
                    let Some(root) = data else {
                        bail!("grid search needs --data to supply labels (or pass --weights)");
                    };
                    let labels = read_split(&root, split)?.id_labels();
                    let (w, acc) = grid_search_weights_with(&streams, &labels, step.unwrap_or(0.1), input)?;
                    println!("grid search on {split}: top-1 {:.2}%", 100.0 * acc);
                    w
                }
            };
            let fused = fuse_scores_with(&streams, &weights, input)?;
            write_scores(out, &fused)?;
            let w: Vec<String> = weights.as_slice().iter().map(|x| x.to_string()).collect();
            println!("weights {}", w.join(","));
        }
        Command::Ablate { spec, data } => {
            let out = require_out(common)?;
            let report = run_ablation(&spec, &data, out)?;
            print!("{}", report.to_markdown());
        }
        Command::PlotConfusion {
            scores,
            data,
            split,
        } => {
            let out = require_out(common)?;
            let scores = read_scores(&scores)?;
            let labels = read_split(&data, split)?.id_labels();
            let metrics = evaluate(&scores, &labels)?;
            plot_confusion(&metrics, out)?;
            println!("top-1 {:.2}%", 100.0 * metrics.top1);
        }
    }
    Ok(())
}
