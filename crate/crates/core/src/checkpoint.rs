//! JSON checkpoints holding a stream's configuration and named tensors.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::former::FormerConfig;
use crate::gcn::GcnConfig;
use crate::pipeline::{Backbone, RunConfig, StreamModel, StreamSpec};
use crate::skeleton::{Modality, Topology};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub backbone: Backbone,
    pub modality: Modality,
    pub dims: usize,
    pub num_joints: usize,
    pub num_classes: usize,
    /// Topology document as written by [`Topology::to_toml_string`].
    pub topology: String,
    pub run_config: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gcn: Option<GcnConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub former: Option<FormerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_acc: Option<f64>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn capture(spec: &StreamSpec, topology: &Topology, model: &StreamModel) -> Self {
        let mut tensors = Vec::new();
        model.visit_params(&mut |name, shape, data| {
            tensors.push(NamedTensor {
                name: name.to_string(),
                shape: shape.to_vec(),
                data: data.to_vec(),
            })
        });
        let (gcn, former) = match model {
            StreamModel::Gcn(m) => (Some(m.config().clone()), None),
            StreamModel::Former(m) => (None, Some(m.config().clone())),
        };
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            backbone: spec.backbone,
            modality: spec.modality,
            dims: spec.dims,
            num_joints: topology.num_joints(),
            num_classes: model.num_classes(),
            topology: topology.to_toml_string(),
            run_config: spec.config.clone(),
            gcn,
            former,
            epoch: None,
            val_acc: None,
            tensors,
        }
    }

    pub fn with_progress(mut self, epoch: usize, val_acc: f64) -> Self {
        self.epoch = Some(epoch);
        self.val_acc = val_acc.is_finite().then_some(val_acc);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("checkpoint: {e}")))?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.format_version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn spec(&self) -> StreamSpec {
        StreamSpec::new(self.backbone, self.modality, self.dims).with_config(self.run_config.clone())
    }

    pub fn topology(&self) -> Result<Topology> {
        Topology::from_toml_str(&self.topology)
    }

    /// Rebuild the model, checking it against the joint and class counts the
    /// caller expects.
    pub fn restore(&self, num_joints: usize, num_classes: usize) -> Result<StreamModel> {
        if self.num_joints != num_joints {
            return Err(Error::Dimension(format!(
                "checkpoint was trained on {} joints, data has {num_joints}",
                self.num_joints
            )));
        }
        if self.num_classes != num_classes {
            return Err(Error::Dimension(format!(
                "checkpoint was trained on {} classes, data has {num_classes}",
                self.num_classes
            )));
        }
        self.restore_unchecked()
    }

    pub fn restore_unchecked(&self) -> Result<StreamModel> {
        let topology = self.topology()?;
        if topology.num_joints() != self.num_joints {
            return Err(Error::Format("checkpoint topology disagrees with num_joints".into()));
        }
        let mut config = self.run_config.clone();
        config.gcn = self.gcn.clone().or(config.gcn);
        config.former = self.former.clone().or(config.former);
        let mut model =
            StreamModel::init(self.backbone, &topology, self.dims, self.num_classes, &config, 0)?;

        let mut expected = Vec::new();
        model.visit_params(&mut |name, shape, _| expected.push((name.to_string(), shape.to_vec())));
        let stored: HashMap<&str, &NamedTensor> =
            self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        if stored.len() != self.tensors.len() || stored.len() != expected.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, model has {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        for (name, shape) in &expected {
            let t = stored
                .get(name.as_str())
                .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor `{name}`")))?;
            let numel: usize = t.shape.iter().product();
            if &t.shape != shape || t.data.len() != numel {
                return Err(Error::Format(format!(
                    "tensor `{name}` has shape {:?} with {} values, model expects {shape:?}",
                    t.shape,
                    t.data.len()
                )));
            }
        }
        model.visit_params_mut(&mut |name, values| values.copy_from_slice(&stored[name].data));
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcn::AdjacencyMode;
    use ndarray::Array5;

    fn small_config(backbone: Backbone) -> RunConfig {
        let mut cfg = RunConfig::desk(backbone);
        cfg.gcn = Some(GcnConfig {
            channels: vec![4, 6],
            temporal_kernel: 3,
            mode: AdjacencyMode::Static,
        });
        cfg.former = Some(FormerConfig {
            d_model: 8,
            d_head: 8,
            heads: 2,
            d_ff: 12,
            depth: 1,
            segments: 2,
        });
        cfg
    }

    #[test]
    fn round_trip_reproduces_logits() {
        let topo = Topology::coco17();
        let x = Array5::from_shape_fn((2, 2, 4, 17, 3), |(a, b, c, d, e)| {
            ((a * 7 + b * 5 + c * 3 + d + e) % 11) as f64 / 11.0 - 0.4
        });
        for backbone in Backbone::ALL {
            let spec = StreamSpec::new(backbone, Modality::Bone, 3).with_config(small_config(backbone));
            let model = StreamModel::init(backbone, &topo, 3, 5, &spec.config, 42).unwrap();
            let ck = Checkpoint::capture(&spec, &topo, &model).with_progress(3, 0.5);
            let back = Checkpoint::from_json(&ck.to_json()).unwrap();
            assert_eq!(back, ck);
            let restored = back.restore(17, 5).unwrap();
            assert_eq!(restored, model);
            assert_eq!(restored.predict(&x).unwrap(), model.predict(&x).unwrap());
            assert_eq!(back.spec(), spec);
        }
    }

    #[test]
    fn rejects_mismatches() {
        let topo = Topology::coco17();
        let spec = StreamSpec::new(Backbone::GcnStatic, Modality::Joint, 2)
            .with_config(small_config(Backbone::GcnStatic));
        let model = StreamModel::init(Backbone::GcnStatic, &topo, 2, 4, &spec.config, 1).unwrap();
        let ck = Checkpoint::capture(&spec, &topo, &model);
        assert!(matches!(ck.restore(25, 4), Err(Error::Dimension(_))));
        assert!(matches!(ck.restore(17, 3), Err(Error::Dimension(_))));

        let mut bad = ck.clone();
        bad.tensors[0].shape = vec![1];
        assert!(matches!(bad.restore(17, 4), Err(Error::Format(_))));
        let mut bad = ck.clone();
        bad.tensors.pop();
        assert!(matches!(bad.restore(17, 4), Err(Error::Format(_))));
        let mut bad = ck;
        bad.format_version = 99;
        assert!(matches!(Checkpoint::from_json(&bad.to_json()), Err(Error::Format(_))));
        assert!(matches!(Checkpoint::from_json("{"), Err(Error::Format(_))));
    }
}
