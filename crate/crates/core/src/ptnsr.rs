//! The `PTNSR` tensor file format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"PTNSR1\n"            7-byte magic
//! rank: u32
//! extents: rank × u32
//! payload: product(extents) × f32, row-major
//! ```
//!
//! Weights, datasets and prompt checkpoints all use this one format.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 7] = b"PTNSR1\n";

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(MAGIC.len() + 4 * (1 + t.rank() + t.len()));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        buf.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&v.as_f32().to_le_bytes());
    }
    buf
}

pub fn decode<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Tensor<T>> {
    let bad = |reason: &str| Error::format(path, reason);
    let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or_else(|| bad("missing PTNSR1 magic"))?;
    let mut words = rest.chunks_exact(4);
    let mut next_u32 = |what: &str| {
        words
            .next()
            .map(|w| u32::from_le_bytes(w.try_into().unwrap()))
            .ok_or_else(|| bad(&format!("truncated {what}")))
    };
    let rank = next_u32("rank")? as usize;
    let shape = (0..rank)
        .map(|_| next_u32("extent").map(|e| e as usize))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let payload = &rest[4 * (1 + rank)..];
    if payload.len() != 4 * n {
        return Err(bad(&format!(
            "payload holds {} bytes, shape {shape:?} needs {}",
            payload.len(),
            4 * n
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|w| T::of(f32::from_le_bytes(w.try_into().unwrap()) as f64))
        .collect();
    Tensor::new(&shape, data)
}

pub fn write<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::new(&[2, 1], vec![1.0, -2.5]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[..7], b"PTNSR1\n");
        assert_eq!(&b[7..11], &2u32.to_le_bytes());
        assert_eq!(&b[11..15], &2u32.to_le_bytes());
        assert_eq!(&b[15..19], &1u32.to_le_bytes());
        assert_eq!(&b[19..23], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 27);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let p = Path::new("x.ptnsr");
        assert!(decode::<f32>(b"PTNSR2\n\0\0\0\0", p).is_err());
        let mut b = encode(&Tensor::<f32>::ones(&[3]));
        b.pop();
        assert!(decode::<f32>(&b, p).is_err());
    }

    proptest! {
        #[test]
        fn f32_round_trip(shape in prop::collection::vec(1usize..5, 1..4), seed in any::<u32>()) {
            let t = Tensor::<f32>::from_fn(&shape, |i| ((i as u32).wrapping_mul(2654435761) ^ seed) as f32 * 1e-6);
            let back: Tensor<f32> = decode(&encode(&t), Path::new("p")).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
