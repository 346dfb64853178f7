//! Weight checkpoint file.
//!
//! Little-endian binary layout:
//!
//! ```text
//! magic   b"NDWT"
//! version u32         (currently 1)
//! dtype   u8          (4 = f32, 8 = f64)
//! count   u64         number of parameters
//! entry*  name_len u32, name bytes (utf-8),
//!         shape 4 x u64 (b, c, h, w),
//!         raw element bytes, row-major
//! ```
//!
//! Entries appear in store insertion order, so a save/load round trip
//! reproduces the store (names, order, shapes, bits) exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{AutodiffError, Result};
use crate::scalar::Scalar;
use crate::store::ParamStore;
use crate::tensor::{Shape, Tensor};

const MAGIC: &[u8; 4] = b"NDWT";
const VERSION: u32 = 1;

pub trait CheckpointScalar: Scalar {
    const DTYPE: u8;
    fn write_bytes(v: Self, out: &mut Vec<u8>);
    fn read_bytes(buf: &[u8]) -> Self;
}

impl CheckpointScalar for f32 {
    const DTYPE: u8 = 4;
    fn write_bytes(v: Self, out: &mut Vec<u8>) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fn read_bytes(buf: &[u8]) -> Self {
        f32::from_le_bytes(buf.try_into().unwrap())
    }
}

impl CheckpointScalar for f64 {
    const DTYPE: u8 = 8;
    fn write_bytes(v: Self, out: &mut Vec<u8>) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fn read_bytes(buf: &[u8]) -> Self {
        f64::from_le_bytes(buf.try_into().unwrap())
    }
}

pub fn save<T: CheckpointScalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[T::DTYPE])?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for (name, tensor) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let s = tensor.shape();
        for dim in [s.b, s.c, s.h, s.w] {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(tensor.numel() * std::mem::size_of::<T>());
        for &v in tensor.data() {
            T::write_bytes(v, &mut buf);
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load<T: CheckpointScalar>(path: &Path) -> Result<ParamStore<T>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(AutodiffError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(AutodiffError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut dtype = [0u8; 1];
    r.read_exact(&mut dtype)?;
    if dtype[0] != T::DTYPE {
        return Err(AutodiffError::Checkpoint(format!(
            "dtype mismatch: file has {}, expected {}",
            dtype[0],
            T::DTYPE
        )));
    }
    let count = read_u64(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| AutodiffError::Checkpoint("non-utf8 name".into()))?;
        let dims: Vec<usize> = (0..4).map(|_| read_u64(&mut r).map(|v| v as usize)).collect::<Result<_>>()?;
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        let elem = std::mem::size_of::<T>();
        let mut raw = vec![0u8; shape.numel() * elem];
        r.read_exact(&mut raw)?;
        let data: Vec<T> = raw.chunks_exact(elem).map(T::read_bytes).collect();
        store.insert(name, Tensor::from_vec(shape, data)?);
    }
    Ok(store)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ndwt");
        let mut store = ParamStore::<f32>::new();
        store.insert("conv.w", Tensor::from_vec(Shape::new(2, 3, 1, 1), vec![0.1, -0.2, 0.3, 1e-30, 7.5, -0.0]).unwrap());
        store.insert("bias", Tensor::from_slice_vec(&[f32::MIN_POSITIVE, 2.0]));
        save(&store, &path).unwrap();
        let loaded = load::<f32>(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        for ((n0, t0), (n1, t1)) in store.iter().zip(loaded.iter()) {
            assert_eq!(n0, n1);
            assert_eq!(t0.shape(), t1.shape());
            for (a, b) in t0.data().iter().zip(t1.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn rejects_wrong_dtype() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ndwt");
        let mut store = ParamStore::<f64>::new();
        store.insert("x", Tensor::scalar(1.0));
        save(&store, &path).unwrap();
        assert!(load::<f32>(&path).is_err());
    }
}
