use ndarray::{s, Array4, Axis, Zip};

use super::{Modality, SkeletonSequence, Topology};
use crate::error::{Error, Result};

fn expect_modality(seq: &SkeletonSequence, expected: Modality) -> Result<()> {
    if seq.modality() != expected {
        return Err(Error::Modality {
            expected: expected.to_string(),
            got: seq.modality().to_string(),
        });
    }
    Ok(())
}

fn check_joints(seq: &SkeletonSequence, topo: &Topology) -> Result<()> {
    if seq.joints() != topo.num_joints() {
        return Err(Error::Dimension(format!(
            "sequence has {} joints, topology `{}` has {}",
            seq.joints(),
            topo.name(),
            topo.num_joints()
        )));
    }
    Ok(())
}

/// `out[.., j, :] = data[.., j, :] - data[.., map[j], :]`
fn subtract_mapped(data: &Array4<f32>, map: &[usize]) -> Array4<f32> {
    let anchors = data.select(Axis(2), map);
    data - &anchors
}

/// Bone vectors: each joint minus its parent. The root's bone is zero.
pub fn derive_bone(seq: &SkeletonSequence, topo: &Topology) -> Result<SkeletonSequence> {
    expect_modality(seq, Modality::Joint)?;
    check_joints(seq, topo)?;
    Ok(seq.with_data(subtract_mapped(seq.data(), topo.parent()), Modality::Bone))
}

/// Two-hop bone vectors: each joint minus its grandparent.
pub fn derive_k2(seq: &SkeletonSequence, topo: &Topology) -> Result<SkeletonSequence> {
    expect_modality(seq, Modality::Joint)?;
    check_joints(seq, topo)?;
    Ok(seq.with_data(subtract_mapped(seq.data(), topo.parent2()), Modality::K2))
}

/// Forward frame difference. The last frame has no successor and is zero.
///
/// Accepts J, B and K2 sequences, producing JM, BM and K2M respectively.
pub fn derive_joint_motion(seq: &SkeletonSequence) -> Result<SkeletonSequence> {
    let target = match seq.modality() {
        Modality::Joint => Modality::JointMotion,
        Modality::Bone => Modality::BoneMotion,
        Modality::K2 => Modality::K2Motion,
        other => {
            return Err(Error::Modality {
                expected: "J, B or K2".into(),
                got: other.to_string(),
            })
        }
    };
    let data = seq.data();
    let t = data.dim().1;
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    let mut out = Array4::<f32>::zeros(data.raw_dim());
    if t > 1 {
        let next = data.slice(s![.., 1.., .., ..]);
        let cur = data.slice(s![.., ..t - 1, .., ..]);
        Zip::from(out.slice_mut(s![.., ..t - 1, .., ..]))
            .and(&next)
            .and(&cur)
            .for_each(|o, &n, &c| *o = n - c);
    }
    Ok(seq.with_data(out, target))
}

pub fn derive_bone_motion(seq: &SkeletonSequence, topo: &Topology) -> Result<SkeletonSequence> {
    derive_joint_motion(&derive_bone(seq, topo)?)
}

pub fn derive_k2_motion(seq: &SkeletonSequence, topo: &Topology) -> Result<SkeletonSequence> {
    derive_joint_motion(&derive_k2(seq, topo)?)
}

/// Derive any of the six modalities from a joint sequence.
pub fn derive_modality(
    seq: &SkeletonSequence,
    topo: &Topology,
    target: Modality,
) -> Result<SkeletonSequence> {
    match target {
        Modality::Joint => {
            expect_modality(seq, Modality::Joint)?;
            check_joints(seq, topo)?;
            Ok(seq.clone())
        }
        Modality::Bone => derive_bone(seq, topo),
        Modality::JointMotion => {
            expect_modality(seq, Modality::Joint)?;
            derive_joint_motion(seq)
        }
        Modality::BoneMotion => derive_bone_motion(seq, topo),
        Modality::K2 => derive_k2(seq, topo),
        Modality::K2Motion => derive_k2_motion(seq, topo),
    }
}

/// Linear interpolation along the frame axis to `target_frames` frames.
/// Frame `i` of the output samples source position `i * (T - 1) / (T' - 1)`.
pub fn resample_sequence(seq: &SkeletonSequence, target_frames: usize) -> Result<SkeletonSequence> {
    if target_frames == 0 {
        return Err(Error::Argument("target frame count must be positive".into()));
    }
    let t = seq.frames();
    if t == target_frames {
        return Ok(seq.clone());
    }
    let (m, _, v, c) = seq.data().dim();
    let src = seq.data();
    let mut out = Array4::<f32>::zeros((m, target_frames, v, c));
    for i in 0..target_frames {
        let pos = if target_frames == 1 || t == 1 {
            0.0
        } else {
            i as f64 * (t - 1) as f64 / (target_frames - 1) as f64
        };
        let lo = (pos.floor() as usize).min(t - 1);
        let hi = (lo + 1).min(t - 1);
        let frac = (pos - lo as f64) as f32;
        let a = src.slice(s![.., lo, .., ..]);
        let b = src.slice(s![.., hi, .., ..]);
        Zip::from(out.slice_mut(s![.., i, .., ..]))
            .and(&a)
            .and(&b)
            .for_each(|o, &a, &b| *o = if frac == 0.0 { a } else { a + (b - a) * frac });
    }
    Ok(seq.with_data(out, seq.modality()))
}

/// Root-centre every frame of every person on joint 0, then scale the whole
/// sample into `[-1, 1]`.
pub fn center_normalize(seq: &SkeletonSequence) -> Result<SkeletonSequence> {
    center_normalize_at(seq, 0)
}

pub fn center_normalize_at(seq: &SkeletonSequence, root: usize) -> Result<SkeletonSequence> {
    expect_modality(seq, Modality::Joint)?;
    if root >= seq.joints() {
        return Err(Error::Argument(format!(
            "root joint {root} out of range for {} joints",
            seq.joints()
        )));
    }
    let data = seq.data();
    let anchors = data.select(Axis(2), &vec![root; seq.joints()]);
    let mut out = data - &anchors;
    let scale = out.iter().fold(0.0f32, |acc, x| acc.max(x.abs()));
    if scale > 0.0 {
        out.mapv_inplace(|x| x / scale);
    }
    Ok(seq.with_data(out, Modality::Joint))
}
