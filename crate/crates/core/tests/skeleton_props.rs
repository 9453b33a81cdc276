mod common;

use common::{naive_modality, random_joints};
use ndarray::{Array4, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skelfuse_core::skeleton::{
    center_normalize, decode_skl, derive_bone, derive_bone_motion, derive_joint_motion, derive_k2,
    derive_modality, encode_skl, resample_sequence, Modality, SkeletonSequence, Topology,
};
use skelfuse_core::Error;

fn integer_joints(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> Array4<f32> {
    Array4::from_shape_simple_fn(shape, || rng.random_range(-50i32..=50) as f32)
}

fn joints(data: Array4<f32>) -> SkeletonSequence {
    SkeletonSequence::new(data, Modality::Joint, "s", None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn derivations_match_loop_reference(
        seed in any::<u64>(),
        m in 1usize..=2,
        t in 1usize..=16,
        v in 1usize..=17,
        c in 2usize..=3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = Topology::random(v, 2, &mut rng);
        let seq = random_joints(&mut rng, m, t, v, c);
        for modality in Modality::ALL {
            let got = derive_modality(&seq, &topo, modality).unwrap();
            prop_assert_eq!(got.modality(), modality);
            prop_assert_eq!(got.data(), &naive_modality(seq.data(), &topo, modality));
        }
    }

    #[test]
    fn linear_in_the_input(seed in any::<u64>(), a in -3i32..=3, b in -3i32..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = Topology::random(9, 1, &mut rng);
        let x = integer_joints(&mut rng, (2, 5, 9, 2));
        let y = integer_joints(&mut rng, (2, 5, 9, 2));
        let (a, b) = (a as f32, b as f32);
        let mix = joints(&x * a + &y * b);
        let (sx, sy) = (joints(x), joints(y));
        for modality in [Modality::Bone, Modality::K2, Modality::JointMotion] {
            let lhs = derive_modality(&mix, &topo, modality).unwrap();
            let fx = derive_modality(&sx, &topo, modality).unwrap();
            let fy = derive_modality(&sy, &topo, modality).unwrap();
            prop_assert_eq!(lhs.data(), &(fx.data() * a + fy.data() * b));
        }
    }

    #[test]
    fn bones_ignore_per_frame_translation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = Topology::coco17();
        let x = integer_joints(&mut rng, (2, 6, 17, 3));
        let mut shifted = x.clone();
        for mut frame in shifted.axis_iter_mut(Axis(1)) {
            let offset = [rng.random_range(-9i32..9) as f32, rng.random_range(-9i32..9) as f32, 1.0];
            for mut joint in frame.lanes_mut(Axis(2)) {
                for (v, o) in joint.iter_mut().zip(offset) {
                    *v += o;
                }
            }
        }
        let (x, shifted) = (joints(x), joints(shifted));
        prop_assert_eq!(derive_bone(&x, &topo).unwrap().into_data(), derive_bone(&shifted, &topo).unwrap().into_data());
        prop_assert_eq!(derive_k2(&x, &topo).unwrap().into_data(), derive_k2(&shifted, &topo).unwrap().into_data());
    }

    #[test]
    fn bone_motion_is_motion_of_bones(seed in any::<u64>(), t in 1usize..=12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = Topology::coco17();
        let seq = random_joints(&mut rng, 2, t, 17, 2);
        let composed = derive_joint_motion(&derive_bone(&seq, &topo).unwrap()).unwrap();
        prop_assert_eq!(derive_bone_motion(&seq, &topo).unwrap().into_data(), composed.into_data());
    }

    #[test]
    fn constant_sequences_have_no_motion(seed in any::<u64>(), t in 1usize..=10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = random_joints(&mut rng, 2, 1, 17, 3);
        let still = joints(pose.data().broadcast((2, t, 17, 3)).unwrap().to_owned());
        for modality in [Modality::JointMotion, Modality::BoneMotion, Modality::K2Motion] {
            let out = derive_modality(&still, &Topology::coco17(), modality).unwrap();
            prop_assert!(out.data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn resample_to_same_length_is_identity(seed in any::<u64>(), t in 1usize..=20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = random_joints(&mut rng, 2, t, 5, 2);
        let same = resample_sequence(&seq, t).unwrap();
        prop_assert_eq!(same.data(), seq.data());
    }

    #[test]
    fn centred_samples_are_bounded_with_fixed_root(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = random_joints(&mut rng, 2, 7, 17, 2);
        let out = center_normalize(&seq).unwrap();
        prop_assert!(out.data().iter().all(|x| x.abs() <= 1.0));
        prop_assert!(out.data().index_axis(Axis(2), 0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn skl_round_trip(seed in any::<u64>(), m in 1usize..=2, t in 1usize..=9, c in 2usize..=3, label in proptest::option::of(0usize..100)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array4::from_shape_simple_fn((m, t, 17, c), || rng.random_range(-1e6f32..1e6));
        let seq = SkeletonSequence::new(data, Modality::Joint, "x", label).unwrap();
        let back = decode_skl(&encode_skl(&seq), "x").unwrap();
        prop_assert_eq!(back, seq);
    }
}

#[test]
fn resample_matches_index_mapping() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seq = random_joints(&mut rng, 2, 5, 4, 3);
    let out = resample_sequence(&seq, 64).unwrap();
    assert_eq!(out.frames(), 64);
    for i in 0..64 {
        let pos = i as f64 * 4.0 / 63.0;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(4);
        let frac = pos - lo as f64;
        for ((o, &a), &b) in out
            .data()
            .index_axis(Axis(1), i)
            .iter()
            .zip(seq.data().index_axis(Axis(1), lo))
            .zip(seq.data().index_axis(Axis(1), hi))
        {
            let expect = a as f64 * (1.0 - frac) + b as f64 * frac;
            assert!((*o as f64 - expect).abs() < 1e-5, "frame {i}");
        }
    }
    assert!(matches!(resample_sequence(&seq, 0), Err(Error::Argument(_))));
    let single = resample_sequence(&random_joints(&mut rng, 1, 1, 4, 2), 3).unwrap();
    assert_eq!(single.data().index_axis(Axis(1), 0), single.data().index_axis(Axis(1), 2));
}

#[test]
fn derivations_check_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let seq = random_joints(&mut rng, 1, 3, 17, 2);
    let small = Topology::random(5, 0, &mut rng);
    assert!(matches!(derive_bone(&seq, &small), Err(Error::Dimension(_))));
    let bones = derive_bone(&seq, &Topology::coco17()).unwrap();
    assert!(matches!(derive_bone(&bones, &Topology::coco17()), Err(Error::Modality { .. })));
    assert!(matches!(derive_k2(&bones, &Topology::coco17()), Err(Error::Modality { .. })));
}

#[test]
fn malformed_skl_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bytes = encode_skl(&random_joints(&mut rng, 1, 2, 17, 2));
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(decode_skl(&bad_magic, "a"), Err(Error::Format(_))));
    assert!(matches!(decode_skl(&bytes[..bytes.len() - 1], "a"), Err(Error::Format(_))));
    assert!(matches!(decode_skl(&bytes[..10], "a"), Err(Error::Format(_))));
}
