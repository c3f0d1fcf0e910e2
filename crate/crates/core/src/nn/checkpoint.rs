//! Binary tensor archive.
//!
//! ```text
//! "PGNN" | version u32 | count u32 | count × tensor
//! tensor = name_len u16 | name | dtype u8 (0 f32, 1 f64) | rank u8 | dims u32[rank] | payload
//! ```
//! All integers and payloads are little-endian.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PGNN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorPayload {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorPayload {
    pub fn len(&self) -> usize {
        match self {
            TensorPayload::F32(v) => v.len(),
            TensorPayload::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> u8 {
        match self {
            TensorPayload::F32(_) => 0,
            TensorPayload::F64(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub payload: TensorPayload,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {CHECKPOINT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("malformed tensor record {index}: {reason}")]
    Malformed { index: usize, reason: String },
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    tensors: &[NamedTensor],
) -> Result<(), CheckpointError> {
    let malformed = |index, reason: &str| CheckpointError::Malformed {
        index,
        reason: reason.into(),
    };
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let count = u32::try_from(tensors.len()).map_err(|_| malformed(0, "too many tensors"))?;
    w.write_all(&count.to_le_bytes())?;
    for (i, t) in tensors.iter().enumerate() {
        let name_len = u16::try_from(t.name.len()).map_err(|_| malformed(i, "name too long"))?;
        let rank = u8::try_from(t.shape.len()).map_err(|_| malformed(i, "rank too large"))?;
        if t.shape.iter().product::<usize>() != t.payload.len() {
            return Err(malformed(i, "shape does not match payload"));
        }
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&[t.payload.dtype(), rank])?;
        for &d in &t.shape {
            let d = u32::try_from(d).map_err(|_| malformed(i, "dimension too large"))?;
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.payload.len() * 8);
        match &t.payload {
            TensorPayload::F32(v) => v
                .iter()
                .for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            TensorPayload::F64(v) => v
                .iter()
                .for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<NamedTensor>, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch { found: version });
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for index in 0..count {
        let malformed = |reason: String| CheckpointError::Malformed { index, reason };
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)
            .map_err(|e| malformed(e.to_string()))?;
        let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
        r.read_exact(&mut name)
            .map_err(|e| malformed(e.to_string()))?;
        let name = String::from_utf8(name).map_err(|_| malformed("name is not UTF-8".into()))?;
        r.read_exact(&mut b2)
            .map_err(|e| malformed(e.to_string()))?;
        let (dtype, rank) = (b2[0], b2[1] as usize);
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r).map_err(|e| malformed(e.to_string()))? as usize);
        }
        let n: usize = shape.iter().product();
        let width = match dtype {
            0 => 4,
            1 => 8,
            d => return Err(malformed(format!("unknown dtype {d}"))),
        };
        let mut bytes = vec![0u8; n * width];
        r.read_exact(&mut bytes)
            .map_err(|e| malformed(e.to_string()))?;
        let payload = if dtype == 0 {
            TensorPayload::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            )
        } else {
            TensorPayload::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            )
        };
        out.push(NamedTensor {
            name,
            shape,
            payload,
        });
    }
    Ok(out)
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<NamedTensor> {
        vec![
            NamedTensor {
                name: "enc.w".into(),
                shape: vec![2, 3],
                payload: TensorPayload::F32(vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5, 1e-30, -7.25]),
            },
            NamedTensor {
                name: "bias".into(),
                shape: vec![4],
                payload: TensorPayload::F64(vec![0.1, 0.2, std::f64::consts::PI, -1e300]),
            },
            NamedTensor {
                name: "scalar".into(),
                shape: vec![],
                payload: TensorPayload::F64(vec![42.0]),
            },
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &sample()).unwrap();
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in back.iter().zip(sample()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            match (&a.payload, &b.payload) {
                (TensorPayload::F32(x), TensorPayload::F32(y)) => {
                    assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()))
                }
                (TensorPayload::F64(x), TensorPayload::F64(y)) => {
                    assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()))
                }
                _ => panic!("dtype changed"),
            }
        }
        let mut again = Vec::new();
        write_checkpoint(&mut again, &back).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn header_layout() {
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &sample()[..1]).unwrap();
        assert_eq!(&bytes[..4], b"PGNN");
        assert_eq!(
            u32::from_le_bytes(bytes[4..8].try_into().unwrap()),
            CHECKPOINT_VERSION
        );
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u16::from_le_bytes(bytes[12..14].try_into().unwrap()), 5);
        assert_eq!(&bytes[14..19], b"enc.w");
        assert_eq!(bytes[19..21], [0, 2]);
        assert_eq!(bytes.len(), 21 + 8 + 6 * 4);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            read_checkpoint(&b"NOPE\x01\0\0\0\0\0\0\0"[..]),
            Err(CheckpointError::BadMagic)
        ));
        assert!(matches!(
            read_checkpoint(&b"PGNN\x09\0\0\0\0\0\0\0"[..]),
            Err(CheckpointError::VersionMismatch { found: 9 })
        ));
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &sample()).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(
            read_checkpoint(bytes.as_slice()),
            Err(CheckpointError::Malformed { index: 2, .. })
        ));
    }
}
