//! `SKL1` binary sequence format.
//!
//! Layout: the magic `SKL1`, five little-endian `u32` (M, T, V, C, label with
//! `0xFFFF_FFFF` meaning "no label"), then `M*T*V*C` little-endian `f32` in
//! `[m][t][v][c]` order. Nothing may follow the payload.

use std::path::Path;

use ndarray::Array4;

use super::{Modality, SkeletonSequence};
use crate::error::{Error, Result};

pub const SKL_MAGIC: &[u8; 4] = b"SKL1";
const NO_LABEL: u32 = u32::MAX;
const HEADER_LEN: usize = 4 + 5 * 4;

pub fn encode_skl(seq: &SkeletonSequence) -> Vec<u8> {
    let (m, t, v, c) = seq.data().dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * seq.data().len());
    out.extend_from_slice(SKL_MAGIC);
    for d in [m, t, v, c] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let label = seq.label().map(|l| l as u32).unwrap_or(NO_LABEL);
    out.extend_from_slice(&label.to_le_bytes());
    for x in seq.data().iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// Decode an `SKL1` buffer. The modality is not stored and is reported as J.
pub fn decode_skl(bytes: &[u8], sample_id: &str) -> Result<SkeletonSequence> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "SKL1 header truncated ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[..4] != SKL_MAGIC {
        return Err(Error::Format("bad magic, expected SKL1".into()));
    }
    let word = |i: usize| {
        let o = 4 + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap())
    };
    let (m, t, v, c) = (
        word(0) as usize,
        word(1) as usize,
        word(2) as usize,
        word(3) as usize,
    );
    let label = match word(4) {
        NO_LABEL => None,
        l => Some(l as usize),
    };
    if m == 0 || t == 0 || v == 0 {
        return Err(Error::Format(format!(
            "SKL1 dimensions must be positive, got M={m} T={t} V={v}"
        )));
    }
    if c != 2 && c != 3 {
        return Err(Error::Format(format!("SKL1 channel count must be 2 or 3, got {c}")));
    }
    let count = [m, t, v, c]
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("SKL1 dimensions overflow".into()))?;
    let expected = count
        .checked_mul(4)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format("SKL1 dimensions overflow".into()))?;
    if bytes.len() < expected {
        return Err(Error::Format(format!(
            "SKL1 payload truncated: expected {expected} bytes, got {}",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!(
            "SKL1 has {} trailing bytes",
            bytes.len() - expected
        )));
    }
    let values: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::Format("SKL1 payload has non-finite values".into()));
    }
    let data = Array4::from_shape_vec((m, t, v, c), values).expect("length checked above");
    SkeletonSequence::new(data, Modality::Joint, sample_id, label)
}

/// Read an `SKL1` file; the sample id is the file stem.
pub fn read_skl(path: impl AsRef<Path>) -> Result<SkeletonSequence> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_skl(&bytes, &id).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_skl(path: impl AsRef<Path>, seq: &SkeletonSequence) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_skl(seq)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(c: usize, label: Option<usize>) -> SkeletonSequence {
        let data = Array4::from_shape_fn((2, 3, 4, c), |(m, t, v, c)| {
            (m as f32) - 0.25 * t as f32 + 1.5e-3 * v as f32 * (c as f32 + 1.0)
        });
        SkeletonSequence::new(data, Modality::Joint, "x", label).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode_skl(&sample(2, None));
        assert_eq!(&bytes[..4], b"SKL1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &[0xFF; 4]);
        assert_eq!(bytes.len(), 24 + 2 * 3 * 4 * 2 * 4);
    }

    #[test]
    fn rejects_malformed() {
        let good = encode_skl(&sample(3, Some(1)));
        assert!(decode_skl(&good, "x").is_ok());

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_skl(&bad, "x"), Err(Error::Format(_))));
        assert!(matches!(decode_skl(&good[..good.len() - 1], "x"), Err(Error::Format(_))));
        assert!(matches!(decode_skl(&good[..10], "x"), Err(Error::Format(_))));
        assert!(matches!(decode_skl(&[], "x"), Err(Error::Format(_))));
        let mut extra = good.clone();
        extra.push(0);
        assert!(matches!(decode_skl(&extra, "x"), Err(Error::Format(_))));
        let mut c4 = good.clone();
        c4[16..20].copy_from_slice(&4u32.to_le_bytes());
        assert!(matches!(decode_skl(&c4, "x"), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            m in 1usize..3, t in 1usize..6, v in 1usize..6, c in 2usize..4,
            label in proptest::option::of(0usize..200),
            seed in any::<u64>(),
        ) {
            let n = m * t * v * c;
            let values: Vec<f32> = (0..n as u64)
                .map(|i| {
                    let bits = (seed ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15)) as u32;
                    let x = f32::from_bits(bits);
                    if x.is_finite() { x } else { i as f32 }
                })
                .collect();
            let data = Array4::from_shape_vec((m, t, v, c), values).unwrap();
            let seq = SkeletonSequence::new(data, Modality::Joint, "p", label).unwrap();
            let back = decode_skl(&encode_skl(&seq), "p").unwrap();
            prop_assert_eq!(back.label(), seq.label());
            let a: Vec<u32> = seq.data().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u32> = back.data().iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
