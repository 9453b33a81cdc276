//! Skeleton data model: topologies, pose sequences, datasets, and the
//! derivation of bone / motion / two-hop modalities from raw joints.

mod dataset;
mod derive;
mod skl;
mod topology;

use std::fmt;
use std::str::FromStr;

use ndarray::Array4;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use dataset::{read_split, write_dataset, Dataset, DatasetManifest, Split};
pub use derive::{
    center_normalize, center_normalize_at, derive_bone, derive_bone_motion, derive_joint_motion,
    derive_k2, derive_k2_motion, derive_modality, resample_sequence,
};
pub use skl::{decode_skl, encode_skl, read_skl, write_skl, SKL_MAGIC};
pub use topology::Topology;

/// Input representation of a skeleton sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Joint,
    Bone,
    JointMotion,
    BoneMotion,
    K2,
    K2Motion,
}

impl Modality {
    pub const ALL: [Modality; 6] = [
        Modality::Joint,
        Modality::Bone,
        Modality::JointMotion,
        Modality::BoneMotion,
        Modality::K2,
        Modality::K2Motion,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Modality::Joint => "J",
            Modality::Bone => "B",
            Modality::JointMotion => "JM",
            Modality::BoneMotion => "BM",
            Modality::K2 => "K2",
            Modality::K2Motion => "K2M",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "j" | "joint" => Ok(Modality::Joint),
            "b" | "bone" => Ok(Modality::Bone),
            "jm" | "joint-motion" => Ok(Modality::JointMotion),
            "bm" | "bone-motion" => Ok(Modality::BoneMotion),
            "k2" => Ok(Modality::K2),
            "k2m" | "k2-motion" => Ok(Modality::K2Motion),
            _ => Err(Error::Config(format!("unknown modality `{s}`"))),
        }
    }
}

impl Serialize for Modality {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.short_name())
    }
}

impl<'de> Deserialize<'de> for Modality {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Dense pose sequence laid out as `[persons, frames, joints, channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    data: Array4<f32>,
    modality: Modality,
    sample_id: String,
    label: Option<usize>,
}

impl SkeletonSequence {
    pub fn new(
        data: Array4<f32>,
        modality: Modality,
        sample_id: impl Into<String>,
        label: Option<usize>,
    ) -> Result<Self> {
        let (m, t, v, c) = data.dim();
        if t == 0 {
            return Err(Error::EmptySequence);
        }
        if m == 0 || v == 0 {
            return Err(Error::Dimension(format!(
                "sequence needs M, V >= 1, got M={m} V={v}"
            )));
        }
        if c != 2 && c != 3 {
            return Err(Error::Dimension(format!("channels must be 2 or 3, got {c}")));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Argument("sequence contains non-finite values".into()));
        }
        Ok(SkeletonSequence {
            data: data.as_standard_layout().into_owned(),
            modality,
            sample_id: sample_id.into(),
            label,
        })
    }

    pub fn data(&self) -> &Array4<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array4<f32> {
        self.data
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn sample_id(&self) -> &str {
        &self.sample_id
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn persons(&self) -> usize {
        self.data.dim().0
    }

    pub fn frames(&self) -> usize {
        self.data.dim().1
    }

    pub fn joints(&self) -> usize {
        self.data.dim().2
    }

    pub fn channels(&self) -> usize {
        self.data.dim().3
    }

    /// Same metadata, new payload and modality. Used by the derivations,
    /// whose outputs are finite whenever their inputs are.
    pub(crate) fn with_data(&self, data: Array4<f32>, modality: Modality) -> Self {
        SkeletonSequence {
            data,
            modality,
            sample_id: self.sample_id.clone(),
            label: self.label,
        }
    }

    pub fn with_sample_id(mut self, sample_id: impl Into<String>) -> Self {
        self.sample_id = sample_id.into();
        self
    }

    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = modality;
        self
    }
}
