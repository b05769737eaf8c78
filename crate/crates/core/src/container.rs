//! Versioned binary container for persisted tensors.
//!
//! Layout (little-endian throughout):
//!   magic "GCBIN1\n", version u16,
//!   meta count u32, then (key, value) length-prefixed UTF-8 pairs,
//!   array count u32, then per array: name, dtype u8 (0 = f64, 1 = u8),
//!   ndim u32, dims u64..., raw payload.
//!
//! Write-then-read is bit-exact: f64 payloads are stored as raw IEEE-754
//! bits and metadata floats should be stored via [`f64_to_meta`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 7] = b"GCBIN1\n";
const VERSION: u16 = 1;

#[derive(Debug, Clone)]
pub enum ArrayData {
    F64(Tensor),
    U8 { shape: Vec<usize>, data: Vec<u8> },
}

#[derive(Debug, Clone, Default)]
pub struct Container {
    pub meta: Vec<(String, String)>,
    pub arrays: Vec<(String, ArrayData)>,
}

impl Container {
    pub fn meta_get(&self, key: &str) -> Result<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Format(format!("container is missing meta key '{key}'")))
    }

    pub fn array_get(&self, name: &str) -> Result<&ArrayData> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::Format(format!("container is missing array '{name}'")))
    }

    pub fn tensor_get(&self, name: &str) -> Result<&Tensor> {
        match self.array_get(name)? {
            ArrayData::F64(t) => Ok(t),
            ArrayData::U8 { .. } => Err(Error::Format(format!("array '{name}' is not f64"))),
        }
    }
}

/// Lossless f64 -> metadata string (hex bit pattern).
pub fn f64_to_meta(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

pub fn f64_from_meta(s: &str) -> Result<f64> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|_| Error::Format(format!("bad float metadata '{s}'")))
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("non-UTF-8 string in container".into()))
}

pub fn write(path: &Path, container: &Container) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(container.meta.len() as u32).to_le_bytes())?;
    for (k, v) in &container.meta {
        write_str(&mut w, k)?;
        write_str(&mut w, v)?;
    }
    w.write_all(&(container.arrays.len() as u32).to_le_bytes())?;
    for (name, arr) in &container.arrays {
        write_str(&mut w, name)?;
        match arr {
            ArrayData::F64(t) => {
                w.write_all(&[0u8])?;
                w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
                for &d in t.shape() {
                    w.write_all(&(d as u64).to_le_bytes())?;
                }
                for &v in t.data() {
                    w.write_all(&v.to_bits().to_le_bytes())?;
                }
            }
            ArrayData::U8 { shape, data } => {
                w.write_all(&[1u8])?;
                w.write_all(&(shape.len() as u32).to_le_bytes())?;
                for &d in shape {
                    w.write_all(&(d as u64).to_le_bytes())?;
                }
                w.write_all(data)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Container> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "not a gridcast container: {}",
            path.display()
        )));
    }
    let mut ver = [0u8; 2];
    r.read_exact(&mut ver)?;
    let version = u16::from_le_bytes(ver);
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported container version {version} (expected {VERSION})"
        )));
    }
    let mut cnt = [0u8; 4];
    r.read_exact(&mut cnt)?;
    let meta_n = u32::from_le_bytes(cnt) as usize;
    let mut meta = Vec::with_capacity(meta_n);
    for _ in 0..meta_n {
        let k = read_str(&mut r)?;
        let v = read_str(&mut r)?;
        meta.push((k, v));
    }
    r.read_exact(&mut cnt)?;
    let arr_n = u32::from_le_bytes(cnt) as usize;
    let mut arrays = Vec::with_capacity(arr_n);
    for _ in 0..arr_n {
        let name = read_str(&mut r)?;
        let mut dtype = [0u8; 1];
        r.read_exact(&mut dtype)?;
        r.read_exact(&mut cnt)?;
        let ndim = u32::from_le_bytes(cnt) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut d = [0u8; 8];
            r.read_exact(&mut d)?;
            shape.push(u64::from_le_bytes(d) as usize);
        }
        let n: usize = shape.iter().product();
        let arr = match dtype[0] {
            0 => {
                let mut data = Vec::with_capacity(n);
                let mut buf = [0u8; 8];
                for _ in 0..n {
                    r.read_exact(&mut buf)?;
                    data.push(f64::from_bits(u64::from_le_bytes(buf)));
                }
                ArrayData::F64(Tensor::new(shape, data)?)
            }
            1 => {
                let mut data = vec![0u8; n];
                r.read_exact(&mut data)?;
                ArrayData::U8 { shape, data }
            }
            d => return Err(Error::Format(format!("unknown array dtype {d}"))),
        };
        arrays.push((name, arr));
    }
    Ok(Container { meta, arrays })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.gc");
        let t = Tensor::new(vec![2, 3], vec![0.1, -2.5, f64::NAN, 1e300, -0.0, 3.0]).unwrap();
        let c = Container {
            meta: vec![
                ("kind".into(), "test".into()),
                ("pi".into(), f64_to_meta(std::f64::consts::PI)),
            ],
            arrays: vec![
                ("values".into(), ArrayData::F64(t.clone())),
                (
                    "mask".into(),
                    ArrayData::U8 { shape: vec![3], data: vec![1, 0, 1] },
                ),
            ],
        };
        write(&path, &c).unwrap();
        let back = read(&path).unwrap();
        assert_eq!(back.meta_get("kind").unwrap(), "test");
        assert_eq!(
            f64_from_meta(back.meta_get("pi").unwrap()).unwrap(),
            std::f64::consts::PI
        );
        let rt = back.tensor_get("values").unwrap();
        assert_eq!(rt.shape(), t.shape());
        for (a, b) in rt.data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // writing again produces byte-identical files
        let path2 = dir.path().join("y.gc");
        write(&path2, &c).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk");
        std::fs::write(&path, b"not a container at all").unwrap();
        assert!(matches!(read(&path), Err(Error::Format(_))));
    }
}
