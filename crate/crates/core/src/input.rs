//! Turning datasets into model-ready tensors.

use ndarray::{Array5, Axis};

use crate::error::{Error, Result};
use crate::lift::{lift_to_3d, PoseLifter};
use crate::skeleton::{center_normalize, derive_modality, Dataset, Modality, Topology};

/// How raw 2D joint sequences are turned into one input stream.
#[derive(Debug, Clone)]
pub struct InputSpec {
    pub modality: Modality,
    /// 2 keeps the raw pose, 3 lifts it first.
    pub dims: usize,
    pub topology: Topology,
    pub lifter: Option<PoseLifter>,
}

impl InputSpec {
    pub fn new(modality: Modality, dims: usize, topology: Topology) -> Self {
        InputSpec {
            modality,
            dims,
            topology,
            lifter: None,
        }
    }

    pub fn with_lifter(mut self, lifter: PoseLifter) -> Self {
        self.lifter = Some(lifter);
        self
    }
}

/// Dense inputs `[N, M, T, V, C]` with labels and ids in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub inputs: Array5<f64>,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
    pub num_classes: usize,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> (Array5<f64>, Vec<usize>) {
        (
            self.inputs.select(Axis(0), idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Centre and scale each joint sequence, lift it if the stream is 3D, then
/// derive the requested modality. Sequences must share `M` and `T`.
pub fn prepare_samples(dataset: &Dataset, spec: &InputSpec) -> Result<Samples> {
    if spec.dims != 2 && spec.dims != 3 {
        return Err(Error::Config(format!("dims must be 2 or 3, got {}", spec.dims)));
    }
    let first = dataset
        .sequences()
        .first()
        .ok_or_else(|| Error::Argument("dataset is empty".into()))?;
    let (m, t, v) = (first.persons(), first.frames(), first.joints());
    let mut inputs = Array5::<f64>::zeros((dataset.len(), m, t, v, spec.dims));
    for (i, seq) in dataset.sequences().iter().enumerate() {
        if (seq.persons(), seq.frames()) != (m, t) {
            return Err(Error::Dimension(format!(
                "sample `{}` has M={} T={}, expected M={m} T={t}; resample first",
                seq.sample_id(),
                seq.persons(),
                seq.frames()
            )));
        }
        let mut joints = center_normalize(seq)?;
        if spec.dims == 3 && joints.channels() == 2 {
            let lifter = spec.lifter.clone().unwrap_or_else(crate::lift::zero_z_lifter);
            joints = lift_to_3d(&joints, &lifter)?;
        }
        if joints.channels() != spec.dims {
            return Err(Error::Dimension(format!(
                "sample `{}` has {} channels, stream wants {}",
                seq.sample_id(),
                joints.channels(),
                spec.dims
            )));
        }
        let derived = derive_modality(&joints, &spec.topology, spec.modality)?;
        inputs
            .index_axis_mut(Axis(0), i)
            .assign(&derived.data().mapv(f64::from));
    }
    Ok(Samples {
        inputs,
        labels: dataset.labels(),
        ids: dataset.sample_ids(),
        num_classes: dataset.num_classes(),
    })
}
