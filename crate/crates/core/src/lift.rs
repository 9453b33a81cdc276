//! 2D -> 3D pose lifting boundary.
//!
//! A [`PoseLifter`] turns a two-channel joint sequence into a three-channel
//! one. Learned lifters run offline; their output is loaded back through
//! [`load_precomputed_3d`]. [`zero_z_lifter`] is the built-in stand-in.

use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array4};

use crate::error::{Error, Result};
use crate::skeleton::{read_skl, Modality, SkeletonSequence};

type LiftFn = dyn Fn(&SkeletonSequence) -> Result<SkeletonSequence> + Send + Sync;

#[derive(Clone)]
pub struct PoseLifter {
    name: String,
    lift: Arc<LiftFn>,
}

impl std::fmt::Debug for PoseLifter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PoseLifter").field("name", &self.name).finish()
    }
}

impl PoseLifter {
    pub fn new<F>(name: impl Into<String>, lift: F) -> Self
    where
        F: Fn(&SkeletonSequence) -> Result<SkeletonSequence> + Send + Sync + 'static,
    {
        PoseLifter {
            name: name.into(),
            lift: Arc::new(lift),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

/// Appends a zero depth channel: `(x, y) -> (x, y, 0)`.
pub fn zero_z_lifter() -> PoseLifter {
    PoseLifter::new("zero_z", |seq: &SkeletonSequence| {
        let (m, t, v, _) = seq.data().dim();
        let mut out = Array4::<f32>::zeros((m, t, v, 3));
        out.slice_mut(s![.., .., .., ..2]).assign(seq.data());
        SkeletonSequence::new(out, seq.modality(), seq.sample_id(), seq.label())
    })
}

/// Run `lifter` on a 2D joint sequence and check its output contract.
pub fn lift_to_3d(seq: &SkeletonSequence, lifter: &PoseLifter) -> Result<SkeletonSequence> {
    if seq.channels() != 2 {
        return Err(Error::Dimension(format!(
            "lifting expects 2 channels, got {}",
            seq.channels()
        )));
    }
    if seq.modality() != Modality::Joint {
        return Err(Error::Modality {
            expected: "J".into(),
            got: seq.modality().to_string(),
        });
    }
    let out = (lifter.lift)(seq)?;
    let (m, t, v, c) = out.data().dim();
    if (m, t, v) != (seq.persons(), seq.frames(), seq.joints()) || c != 3 {
        return Err(Error::ContractViolation(format!(
            "lifter `{}` returned shape [{m}, {t}, {v}, {c}] for input [{}, {}, {}, 2]",
            lifter.name,
            seq.persons(),
            seq.frames(),
            seq.joints()
        )));
    }
    if out.data().iter().any(|x| !x.is_finite()) {
        return Err(Error::ContractViolation(format!(
            "lifter `{}` produced non-finite values",
            lifter.name
        )));
    }
    Ok(out.with_modality(Modality::Joint).with_sample_id(seq.sample_id()))
}

/// Load a 3D joint sequence produced by an external lifter.
pub fn load_precomputed_3d(path: impl AsRef<Path>) -> Result<SkeletonSequence> {
    let path = path.as_ref();
    let seq = read_skl(path)?;
    if seq.channels() != 3 {
        return Err(Error::Format(format!(
            "{}: precomputed 3D pose must have 3 channels, got {}",
            path.display(),
            seq.channels()
        )));
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{derive_bone, write_skl, Topology};

    fn seq2(m: usize, t: usize, v: usize) -> SkeletonSequence {
        let data = Array4::from_shape_fn((m, t, v, 2), |(m, t, v, c)| {
            (m * 100 + t * 10 + v) as f32 * if c == 0 { 1.0 } else { -0.5 }
        });
        SkeletonSequence::new(data, Modality::Joint, "s", Some(1)).unwrap()
    }

    #[test]
    fn zero_z_appends_depth() {
        let seq = SkeletonSequence::new(
            Array4::from_shape_vec((1, 1, 1, 2), vec![1.0, 2.0]).unwrap(),
            Modality::Joint,
            "p",
            None,
        )
        .unwrap();
        let out = lift_to_3d(&seq, &zero_z_lifter()).unwrap();
        assert_eq!(out.data().iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 0.0]);

        let big = seq2(2, 8, 17);
        let out = lift_to_3d(&big, &zero_z_lifter()).unwrap();
        assert_eq!(out.data().dim(), (2, 8, 17, 3));
        assert_eq!(out.data().slice(s![.., .., .., ..2]), big.data().view());
        assert_eq!(out.label(), Some(1));
    }

    #[test]
    fn bones_of_zero_z_have_zero_depth() {
        let topo = Topology::coco17();
        let lifted = lift_to_3d(&seq2(2, 4, 17), &zero_z_lifter()).unwrap();
        let bones = derive_bone(&lifted, &topo).unwrap();
        assert!(bones.data().slice(s![.., .., .., 2]).iter().all(|&z| z == 0.0));
    }

    #[test]
    fn contract_violations_are_reported() {
        let drop_frame = PoseLifter::new("bad", |seq: &SkeletonSequence| {
            let (m, _, v, _) = seq.data().dim();
            SkeletonSequence::new(Array4::zeros((m, 1, v, 3)), Modality::Joint, "x", None)
        });
        assert!(matches!(
            lift_to_3d(&seq2(1, 3, 4), &drop_frame),
            Err(Error::ContractViolation(_))
        ));
        let flat = PoseLifter::new("flat", |seq: &SkeletonSequence| Ok(seq.clone()));
        assert!(matches!(
            lift_to_3d(&seq2(1, 3, 4), &flat),
            Err(Error::ContractViolation(_))
        ));
        let lifted = lift_to_3d(&seq2(1, 2, 3), &zero_z_lifter()).unwrap();
        assert!(lift_to_3d(&lifted, &zero_z_lifter()).is_err());
    }

    #[test]
    fn precomputed_loader() {
        let dir = tempfile::tempdir().unwrap();
        let lifted = lift_to_3d(&seq2(2, 3, 5), &zero_z_lifter()).unwrap();
        let path = dir.path().join("s.skl");
        write_skl(&path, &lifted).unwrap();
        let back = load_precomputed_3d(&path).unwrap();
        assert_eq!(back.data(), lifted.data());

        let flat = dir.path().join("flat.skl");
        write_skl(&flat, &seq2(1, 2, 3)).unwrap();
        assert!(matches!(load_precomputed_3d(&flat), Err(Error::Format(_))));

        let empty = dir.path().join("empty.skl");
        std::fs::write(&empty, b"").unwrap();
        assert!(matches!(load_precomputed_3d(&empty), Err(Error::Format(_))));
    }
}
