//! Backbone selection and the train/score path shared by the CLI and the
//! ablation runner.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Array5};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::ensemble::ScoreMatrix;
use crate::error::{Error, Result};
use crate::former::{FormerConfig, FormerModel};
use crate::gcn::{AdjacencyMode, GcnConfig, GcnModel};
use crate::input::{prepare_samples, InputSpec, Samples};
use crate::network::Network;
use crate::skeleton::{Dataset, Modality, Topology};
use crate::training::{predict, train_model, TrainConfig, TrainHistory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Backbone {
    #[serde(rename = "gcn-static")]
    GcnStatic,
    #[serde(rename = "gcn-ctr")]
    GcnCtr,
    #[serde(rename = "gcn-td")]
    GcnTd,
    #[serde(rename = "former")]
    Former,
}

impl Backbone {
    pub const ALL: [Backbone; 4] = [
        Backbone::GcnStatic,
        Backbone::GcnCtr,
        Backbone::GcnTd,
        Backbone::Former,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Backbone::GcnStatic => "gcn-static",
            Backbone::GcnCtr => "gcn-ctr",
            Backbone::GcnTd => "gcn-td",
            Backbone::Former => "former",
        }
    }

    pub fn adjacency_mode(self) -> Option<AdjacencyMode> {
        match self {
            Backbone::GcnStatic => Some(AdjacencyMode::Static),
            Backbone::GcnCtr => Some(AdjacencyMode::ChannelRefined),
            Backbone::GcnTd => Some(AdjacencyMode::TemporalDependent),
            Backbone::Former => None,
        }
    }

    pub fn is_gcn(self) -> bool {
        self.adjacency_mode().is_some()
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Backbone::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown backbone `{s}` (expected gcn-static, gcn-ctr, gcn-td or former)"
                ))
            })
    }
}

/// Training schedule plus optional architecture overrides, as read from a
/// config file. Schedule keys sit at the top level; `[gcn]` and `[former]`
/// tables replace the architecture defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gcn: Option<GcnConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub former: Option<FormerConfig>,
}

impl RunConfig {
    /// CPU-sized defaults for a backbone.
    pub fn desk(backbone: Backbone) -> Self {
        RunConfig {
            train: if backbone.is_gcn() {
                TrainConfig::desk_gcn()
            } else {
                TrainConfig::desk_former()
            },
            gcn: None,
            former: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn gcn_config(&self, backbone: Backbone) -> GcnConfig {
        let cfg = self.gcn.clone().unwrap_or_default();
        match backbone.adjacency_mode() {
            Some(mode) => cfg.with_mode(mode),
            None => cfg,
        }
    }

    pub fn former_config(&self) -> FormerConfig {
        self.former.clone().unwrap_or_default()
    }
}

/// A trained backbone of either branch.
#[derive(Debug, Clone, PartialEq)]
pub enum StreamModel {
    Gcn(GcnModel),
    Former(FormerModel),
}

impl StreamModel {
    /// Fresh model initialised from `seed`.
    pub fn init(
        backbone: Backbone,
        topology: &Topology,
        in_channels: usize,
        num_classes: usize,
        config: &RunConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(if backbone.is_gcn() {
            StreamModel::Gcn(GcnModel::new(
                topology.clone(),
                in_channels,
                num_classes,
                config.gcn_config(backbone),
                &mut rng,
            )?)
        } else {
            StreamModel::Former(FormerModel::new(
                topology.num_joints(),
                in_channels,
                num_classes,
                config.former_config(),
                &mut rng,
            )?)
        })
    }

    pub fn num_classes(&self) -> usize {
        match self {
            StreamModel::Gcn(m) => m.num_classes(),
            StreamModel::Former(m) => m.num_classes(),
        }
    }

    pub fn predict(&self, inputs: &Array5<f64>) -> Result<Array2<f64>> {
        match self {
            StreamModel::Gcn(m) => predict(m, inputs, 64),
            StreamModel::Former(m) => predict(m, inputs, 64),
        }
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        match self {
            StreamModel::Gcn(m) => m.visit_params(f),
            StreamModel::Former(m) => m.visit_params(f),
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        match self {
            StreamModel::Gcn(m) => m.visit_params_mut(f),
            StreamModel::Former(m) => m.visit_params_mut(f),
        }
    }
}

/// Everything needed to rebuild a stream's inputs and model.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSpec {
    pub backbone: Backbone,
    pub modality: Modality,
    pub dims: usize,
    pub config: RunConfig,
}

impl StreamSpec {
    pub fn new(backbone: Backbone, modality: Modality, dims: usize) -> Self {
        StreamSpec {
            backbone,
            modality,
            dims,
            config: RunConfig::desk(backbone),
        }
    }

    pub fn with_config(mut self, config: RunConfig) -> Self {
        self.config = config;
        self
    }

    /// Stream label such as `gcn-ctr/J/2d`.
    pub fn name(&self) -> String {
        format!("{}/{}/{}d", self.backbone, self.modality, self.dims)
    }

    /// File-name friendly form of [`StreamSpec::name`].
    pub fn slug(&self) -> String {
        format!("{}_{}_{}d", self.backbone, self.modality, self.dims)
    }

    pub fn input_spec(&self, topology: &Topology) -> InputSpec {
        InputSpec::new(self.modality, self.dims, topology.clone())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedStream {
    pub spec: StreamSpec,
    pub model: StreamModel,
    pub history: TrainHistory,
}

impl TrainedStream {
    pub fn scores(&self, samples: &Samples) -> Result<ScoreMatrix> {
        let logits = self.model.predict(&samples.inputs)?;
        ScoreMatrix::new(self.spec.name(), samples.ids.clone(), logits)
    }
}

/// Train one stream. With `best_checkpoint` set, the model is saved there
/// every time validation accuracy improves.
pub fn train_stream(
    spec: &StreamSpec,
    topology: &Topology,
    train: &Dataset,
    val: Option<&Dataset>,
    best_checkpoint: Option<&Path>,
) -> Result<TrainedStream> {
    let input = spec.input_spec(topology);
    let train_samples = prepare_samples(train, &input)?;
    let val_samples = val.map(|v| prepare_samples(v, &input)).transpose()?;
    let model = StreamModel::init(
        spec.backbone,
        topology,
        spec.dims,
        train.num_classes(),
        &spec.config,
        spec.config.train.seed,
    )?;

    macro_rules! run {
        ($net:expr, $wrap:path) => {{
            let mut hook = |m: &_, epoch: usize, acc: f64| -> Result<()> {
                match best_checkpoint {
                    Some(path) => Checkpoint::capture(spec, topology, &$wrap(Clone::clone(m)))
                        .with_progress(epoch, acc)
                        .save(path),
                    None => Ok(()),
                }
            };
            let (net, history) = train_model(
                $net,
                &train_samples,
                val_samples.as_ref(),
                &spec.config.train,
                Some(&mut hook),
            )?;
            ($wrap(net), history)
        }};
    }
    let (model, history) = match model {
        StreamModel::Gcn(net) => run!(net, StreamModel::Gcn),
        StreamModel::Former(net) => run!(net, StreamModel::Former),
    };
    Ok(TrainedStream {
        spec: spec.clone(),
        model,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backbone_names_round_trip() {
        for b in Backbone::ALL {
            assert_eq!(b.as_str().parse::<Backbone>().unwrap(), b);
        }
        assert!(matches!("resnet".parse::<Backbone>(), Err(Error::Config(_))));
    }

    #[test]
    fn run_config_round_trip() {
        let mut cfg = RunConfig::desk(Backbone::GcnCtr);
        cfg.gcn = Some(GcnConfig {
            channels: vec![8, 16],
            temporal_kernel: 3,
            mode: AdjacencyMode::Static,
        });
        let text = cfg.to_toml_string();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
        assert_eq!(cfg.gcn_config(Backbone::GcnTd).mode, AdjacencyMode::TemporalDependent);
    }

    #[test]
    fn run_config_needs_every_schedule_field() {
        let err = RunConfig::from_toml_str("base_lr = 0.1\nepochs = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
