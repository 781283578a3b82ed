//! Binary container for named arrays (checkpoints and other artifacts).
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"AGC1"
//! u32    format version (currently 1)
//! u32    entry count
//! entry* name_len u32, name utf-8, dtype u8, ndim u8, dims u64*, payload
//! ```
//!
//! dtype: 1 = f32, 2 = f64, 3 = u64. Entries are written in the order given
//! and read back in the same order, so writing the same entries twice
//! produces byte-identical files.

use ndarray::{ArrayD, IxDyn};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"AGC1";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("container io: {0}")]
    Io(#[from] io::Error),
    #[error("not a parameter container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0} (expected {VERSION})")]
    Version(u32),
    #[error("corrupt container: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(ArrayD<f32>),
    F64(ArrayD<f64>),
    U64(Vec<u64>),
}

impl ArrayData {
    fn dtype_tag(&self) -> u8 {
        match self {
            ArrayData::F32(_) => 1,
            ArrayData::F64(_) => 2,
            ArrayData::U64(_) => 3,
        }
    }

    pub fn as_f32(&self) -> Option<&ArrayD<f32>> {
        match self {
            ArrayData::F32(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<&ArrayD<f64>> {
        match self {
            ArrayData::F64(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_u64(&self) -> Option<&[u64]> {
        match self {
            ArrayData::U64(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub data: ArrayData,
}

impl Entry {
    pub fn f32(name: impl Into<String>, a: ArrayD<f32>) -> Self {
        Entry { name: name.into(), data: ArrayData::F32(a) }
    }

    pub fn f64(name: impl Into<String>, a: ArrayD<f64>) -> Self {
        Entry { name: name.into(), data: ArrayData::F64(a) }
    }

    pub fn u64(name: impl Into<String>, v: Vec<u64>) -> Self {
        Entry { name: name.into(), data: ArrayData::U64(v) }
    }

    pub fn scalar_u64(name: impl Into<String>, v: u64) -> Self {
        Entry::u64(name, vec![v])
    }
}

pub fn write_container(path: &Path, entries: &[Entry]) -> Result<(), ContainerError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in entries {
        let name = e.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[e.data.dtype_tag()])?;
        match &e.data {
            ArrayData::F32(a) => {
                write_dims(&mut w, a.shape())?;
                for v in a.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            ArrayData::F64(a) => {
                write_dims(&mut w, a.shape())?;
                for v in a.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            ArrayData::U64(v) => {
                write_dims(&mut w, &[v.len()])?;
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn write_dims<W: Write>(w: &mut W, dims: &[usize]) -> io::Result<()> {
    w.write_all(&[dims.len() as u8])?;
    for d in dims {
        w.write_all(&(*d as u64).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_container(path: &Path) -> Result<Vec<Entry>, ContainerError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(ContainerError::Version(version));
    }
    let count = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 1 << 16 {
            return Err(ContainerError::Corrupt(format!("entry name of {name_len} bytes")));
        }
        let mut name = vec![0u8; name_len];
        read_exact(&mut r, &mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| ContainerError::Corrupt("entry name is not utf-8".into()))?;
        let mut tag = [0u8; 1];
        read_exact(&mut r, &mut tag)?;
        let mut ndim = [0u8; 1];
        read_exact(&mut r, &mut ndim)?;
        let mut dims = Vec::with_capacity(ndim[0] as usize);
        for _ in 0..ndim[0] {
            dims.push(read_u64(&mut r)? as usize);
        }
        let len: usize = dims.iter().product();
        if len > (1 << 31) {
            return Err(ContainerError::Corrupt(format!("entry {name:?} of {len} elements")));
        }
        let data = match tag[0] {
            1 => {
                let mut v = Vec::with_capacity(len);
                let mut buf = [0u8; 4];
                for _ in 0..len {
                    read_exact(&mut r, &mut buf)?;
                    v.push(f32::from_le_bytes(buf));
                }
                ArrayData::F32(array_from(dims, v, &name)?)
            }
            2 => {
                let mut v = Vec::with_capacity(len);
                let mut buf = [0u8; 8];
                for _ in 0..len {
                    read_exact(&mut r, &mut buf)?;
                    v.push(f64::from_le_bytes(buf));
                }
                ArrayData::F64(array_from(dims, v, &name)?)
            }
            3 => {
                if dims.len() != 1 {
                    return Err(ContainerError::Corrupt(format!("u64 entry {name:?} must be 1-d")));
                }
                let mut v = Vec::with_capacity(len);
                let mut buf = [0u8; 8];
                for _ in 0..len {
                    read_exact(&mut r, &mut buf)?;
                    v.push(u64::from_le_bytes(buf));
                }
                ArrayData::U64(v)
            }
            t => return Err(ContainerError::Corrupt(format!("unknown dtype tag {t}"))),
        };
        entries.push(Entry { name, data });
    }
    // Trailing garbage means the file was not produced by this writer.
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(entries),
        _ => Err(ContainerError::Corrupt("trailing bytes after last entry".into())),
    }
}

fn array_from<T>(dims: Vec<usize>, v: Vec<T>, name: &str) -> Result<ArrayD<T>, ContainerError> {
    ArrayD::from_shape_vec(IxDyn(&dims), v)
        .map_err(|_| ContainerError::Corrupt(format!("shape mismatch in entry {name:?}")))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), ContainerError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            ContainerError::Corrupt("file truncated".into())
        } else {
            ContainerError::Io(e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ContainerError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, ContainerError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
