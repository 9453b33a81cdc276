use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{Dataset, Modality, SkeletonSequence, Split, Topology};

use ndarray::Array4;

/// Rest pose of the built-in 17-joint skeleton, y pointing up.
const COCO17_REST: [[f32; 3]; 17] = [
    [0.0, 1.60, 0.0],
    [-0.04, 1.65, 0.02],
    [0.04, 1.65, 0.02],
    [-0.09, 1.62, -0.02],
    [0.09, 1.62, -0.02],
    [-0.20, 1.40, 0.0],
    [0.20, 1.40, 0.0],
    [-0.30, 1.10, 0.0],
    [0.30, 1.10, 0.0],
    [-0.35, 0.85, 0.05],
    [0.35, 0.85, 0.05],
    [-0.12, 0.90, 0.0],
    [0.12, 0.90, 0.0],
    [-0.13, 0.50, 0.02],
    [0.13, 0.50, 0.02],
    [-0.14, 0.10, 0.0],
    [0.14, 0.10, 0.0],
];

/// Joint chains animated by the archetypes, ordered from the attached end.
const LIMB_GROUPS: [&[usize]; 5] = [
    &[5, 7, 9],
    &[6, 8, 10],
    &[11, 13, 15],
    &[12, 14, 16],
    &[0, 1, 2, 3, 4],
];

const LIMB_AMPLITUDE: f32 = 0.5;
const SWAY_AMPLITUDE: f32 = 0.03;
const PHASE_JITTER: f32 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub frames: usize,
    pub num_joints: usize,
    pub noise_std: f64,
    pub seed: u64,
    #[serde(default = "default_persons")]
    pub persons: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
}

fn default_persons() -> usize {
    2
}

fn default_channels() -> usize {
    2
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 4,
            samples_per_class: 50,
            frames: 32,
            num_joints: 17,
            noise_std: 0.05,
            seed: 0,
            persons: default_persons(),
            channels: default_channels(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("synthetic data needs at least 2 classes".into()));
        }
        if self.num_joints != COCO17_REST.len() {
            return Err(Error::Config(format!(
                "no shipped topology with {} joints (coco17 has {})",
                self.num_joints,
                COCO17_REST.len()
            )));
        }
        if self.samples_per_class == 0 || self.frames < 2 || self.persons == 0 {
            return Err(Error::Config(
                "samples_per_class and persons must be positive and frames at least 2".into(),
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        if self.channels != 2 && self.channels != 3 {
            return Err(Error::Config(format!("channels must be 2 or 3, got {}", self.channels)));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SynthConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("synthetic config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn topology(&self) -> Topology {
        Topology::coco17()
    }
}

/// The training split of the synthetic dataset.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset> {
    generate_split(config, Split::Train)
}

/// One split of the synthetic dataset. Each split draws from its own stream
/// so train and held-out samples never coincide.
///
/// Class `k` swings limb group `k mod 5` with `1 + k` cycles per sequence,
/// sideways for even `k` and up-down for odd `k`; the limb is also lifted
/// on average. The first person carries the motion, any further persons are
/// absent (zero). Every sample gets a random phase, amplitude, placement and
/// scale, a small whole-body sway, then i.i.d. Gaussian noise.
pub fn generate_split(config: &SynthConfig, split: Split) -> Result<Dataset> {
    config.validate()?;
    let split_tag = match split {
        Split::Train => 0u64,
        Split::Val => 1,
        Split::Test => 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(split_tag);
    let noise = Normal::new(0.0f32, config.noise_std as f32).expect("validated noise_std");
    let (t_len, v, c) = (config.frames, config.num_joints, config.channels);
    let mut sequences = Vec::with_capacity(config.num_classes * config.samples_per_class);
    for i in 0..config.samples_per_class {
        for k in 0..config.num_classes {
            let group = LIMB_GROUPS[k % LIMB_GROUPS.len()];
            let cycles = (1 + k) as f32;
            let (swing, lift) = if k % 2 == 0 { (0, 1) } else { (1, 0) };
            let phase = rng.random_range(-PHASE_JITTER..PHASE_JITTER);
            let amp = LIMB_AMPLITUDE * rng.random_range(0.85f32..1.15);
            let scale = rng.random_range(0.9f32..1.1);
            let shift = [rng.random_range(-0.5f32..0.5), rng.random_range(-0.2f32..0.2), 0.0];
            let sway_cycles = rng.random_range(0.5f32..1.5);
            let sway_phase = rng.random_range(0.0f32..std::f32::consts::TAU);

            let mut data = Array4::<f32>::zeros((config.persons, t_len, v, c));
            for t in 0..t_len {
                let tau = t as f32 / t_len as f32;
                let theta = std::f32::consts::TAU * cycles * tau + phase;
                let sway = SWAY_AMPLITUDE * (std::f32::consts::TAU * sway_cycles * tau + sway_phase).sin();
                for (j, rest) in COCO17_REST.iter().enumerate() {
                    let mut p = *rest;
                    if let Some(depth) = group.iter().position(|&g| g == j) {
                        let a = amp * (depth + 1) as f32 / group.len() as f32;
                        p[swing] += a * theta.sin();
                        p[lift] += 0.5 * a * (1.0 - theta.cos());
                        p[2] += 0.5 * a * theta.cos();
                    }
                    p[0] += sway * p[1];
                    for ch in 0..c {
                        data[[0, t, j, ch]] = scale * p[ch] + shift[ch];
                    }
                }
            }
            if config.noise_std > 0.0 {
                data.index_axis_mut(ndarray::Axis(0), 0)
                    .mapv_inplace(|x| x + noise.sample(&mut rng));
            }
            let id = format!("{split}_{:05}", i * config.num_classes + k);
            sequences.push(SkeletonSequence::new(data, Modality::Joint, id, Some(k))?);
        }
    }
    Dataset::new(sequences, config.num_classes, split)
}
