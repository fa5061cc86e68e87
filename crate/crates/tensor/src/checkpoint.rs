//! `NGWT` checkpoint files: magic, version byte, then a length-prefixed
//! sequence of `(name, shape, little-endian f32 elements)` records.
//!
//! ```text
//! "NGWT" u8:version u32:count
//! repeat count: u32:name_len name u8:rank u32:dim*rank f32:elements
//! ```

use std::io::{Read, Write};

use crate::elem::Elem;
use crate::error::{Result, TensorError};
use crate::param::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NGWT";
pub const CHECKPOINT_VERSION: u8 = 1;

fn bad(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

pub fn write_checkpoint<T: Elem>(store: &ParamStore<T>, mut w: impl Write) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&[CHECKPOINT_VERSION])?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, p) in store.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let shape = p.value.shape();
        w.write_all(&[shape.len() as u8])?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.value.numel() * 4);
        for &x in p.value.data() {
            buf.extend_from_slice(&(x.to_f64_lossless() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn checkpoint_bytes<T: Elem>(store: &ParamStore<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(store, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
    Ok(b[0])
}

pub fn read_checkpoint(mut r: impl Read) -> Result<ParamStore<f32>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let version = read_u8(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        if len > 1 << 16 {
            return Err(bad(format!("implausible name length {len}")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| bad("name is not UTF-8"))?;
        let rank = read_u8(&mut r)? as usize;
        let shape = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 4];
        r.read_exact(&mut raw).map_err(|_| bad(format!("truncated data for {name}")))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        store.add(name, Tensor::new(shape, data)?)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut store = ParamStore::<f32>::new();
        store.add("a.w", Tensor::new([2, 3], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5e-20, -7.25, 1e30]).unwrap()).unwrap();
        store.add("b", Tensor::scalar(0.1)).unwrap();
        let bytes = checkpoint_bytes(&store);
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(checkpoint_bytes(&back), bytes);
        for ((_, a), (_, b)) in store.iter().zip(back.iter()) {
            assert_eq!(a.name, b.name);
            let bits = |t: &Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut store = ParamStore::<f32>::new();
        store.add("w", Tensor::ones([4])).unwrap();
        let bytes = checkpoint_bytes(&store);
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(read_checkpoint(wrong.as_slice()).is_err());
        assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }
}
