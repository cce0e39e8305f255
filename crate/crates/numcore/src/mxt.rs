//! The `MXT1` binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"MXT1" | u32 dtype (0 = f32, 1 = f64) | u32 rank | rank x u64 extents | payload
//! ```
//!
//! The payload is the row-major element data. Several records may be
//! concatenated in one file; [`read_tensor`] consumes exactly one.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::{Float, NumError, Result, Tensor};

pub const MAGIC: &[u8; 4] = b"MXT1";

/// Largest rank accepted when reading; guards against garbage headers.
const MAX_RANK: u32 = 16;

/// Number of bytes `write_tensor` emits for `t`.
pub fn encoded_len<F: Float>(t: &Tensor<F>) -> u64 {
    (4 + 4 + 4 + 8 * t.rank() + F::BYTES * t.numel()) as u64
}

pub fn write_tensor<F: Float, W: Write>(w: &mut W, t: &Tensor<F>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&F::DTYPE.to_le_bytes())?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    w.write_all(&F::to_le_bytes_vec(t.data()))?;
    Ok(())
}

pub fn read_tensor<F: Float, R: Read>(r: &mut R) -> Result<Tensor<F>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NumError::Format(format!("bad magic {magic:?}")));
    }
    let dtype = read_u32(r)?;
    if dtype != F::DTYPE {
        return Err(NumError::Format(format!(
            "dtype code {dtype} does not match requested element type (code {})",
            F::DTYPE
        )));
    }
    let rank = read_u32(r)?;
    if rank > MAX_RANK {
        return Err(NumError::Format(format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let d = u64::from_le_bytes(b);
        let d = usize::try_from(d).map_err(|_| NumError::Format(format!("extent {d}")))?;
        shape.push(d);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| NumError::Format(format!("shape {shape:?} overflows")))?;
    let nbytes = numel
        .checked_mul(F::BYTES)
        .ok_or_else(|| NumError::Format(format!("shape {shape:?} overflows")))?;
    let mut payload = Vec::new();
    r.take(nbytes as u64).read_to_end(&mut payload)?;
    if payload.len() != nbytes {
        return Err(NumError::Format(format!(
            "truncated payload: expected {nbytes} bytes, got {}",
            payload.len()
        )));
    }
    let data = payload.chunks_exact(F::BYTES).map(F::from_le_chunk).collect();
    Tensor::new(&shape, data).map_err(|e| NumError::Format(e.to_string()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn save<F: Float>(path: impl AsRef<Path>, t: &Tensor<F>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load<F: Float>(path: impl AsRef<Path>) -> Result<Tensor<F>> {
    let mut r = BufReader::new(File::open(path)?);
    read_tensor(&mut r)
}

/// Read the record starting at byte `offset` of a multi-record file.
pub fn load_at<F: Float>(path: impl AsRef<Path>, offset: u64) -> Result<Tensor<F>> {
    let mut f = File::open(path)?;
    f.seek(SeekFrom::Start(offset))?;
    read_tensor(&mut BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::<f32>::from_f64(&[2, 1], &[1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[0..4], b"MXT1");
        assert_eq!(&buf[4..8], &0u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..20], &2u64.to_le_bytes());
        assert_eq!(&buf[20..28], &1u64.to_le_bytes());
        assert_eq!(&buf[28..32], &1.0f32.to_le_bytes());
        assert_eq!(&buf[32..36], &(-2.0f32).to_le_bytes());
        assert_eq!(buf.len() as u64, encoded_len(&t));
    }

    #[test]
    fn rejects_bad_magic_truncation_and_dtype() {
        let t = Tensor::<f32>::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_tensor::<f32, _>(&mut bad.as_slice()).is_err());

        let short = &buf[..buf.len() - 1];
        assert!(read_tensor::<f32, _>(&mut &short[..]).is_err());

        assert!(read_tensor::<f64, _>(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn concatenated_records_read_at_offsets() {
        let a = Tensor::<f32>::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let b = Tensor::<f32>::from_f64(&[1, 3], &[3.0, 4.0, 5.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("two.mxt");
        let mut f = File::create(&path).unwrap();
        write_tensor(&mut f, &a).unwrap();
        write_tensor(&mut f, &b).unwrap();
        drop(f);
        assert_eq!(load_at::<f32>(&path, 0).unwrap(), a);
        assert_eq!(load_at::<f32>(&path, encoded_len(&a)).unwrap(), b);
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            shape in proptest::collection::vec(1usize..4, 0..4),
            seed in any::<u32>(),
        ) {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n)
                .map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32) & 0x7f7f_ffff))
                .collect();
            let t = Tensor::new(&shape, data).unwrap();
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            let back: Tensor<f32> = read_tensor(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
