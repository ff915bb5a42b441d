//! Little-endian binary formats: SFPC clouds, SFFL flows and PVWT weights.

use std::io::Write;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

use crate::correspondence::{FlowField, FlowStage};
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::tensor::Tensor2;

pub const CLOUD_MAGIC: &[u8; 4] = b"SFPC";
pub const FLOW_MAGIC: &[u8; 4] = b"SFFL";
pub const WEIGHTS_MAGIC: &[u8; 4] = b"PVWT";
pub const FORMAT_VERSION: u32 = 1;

/// Bounds-checked reader that reports the byte offset of whatever went wrong.
pub(crate) struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Self { path, bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::TruncatedFile {
                path: self.path.to_path_buf(),
                offset: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let found = self.bytes.get(..4).unwrap_or(self.bytes);
        if found != expected {
            return Err(Error::BadMagic {
                path: self.path.to_path_buf(),
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        self.pos = 4;
        Ok(())
    }

    fn version(&mut self) -> Result<u32> {
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                path: self.path.to_path_buf(),
                version: v,
            });
        }
        Ok(v)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(LittleEndian::read_u16(self.take(2)?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4)?))
    }

    /// Reads `n` finite f32 values widened to f64.
    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let start = self.pos;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::TruncatedFile {
            path: self.path.to_path_buf(),
            offset: self.bytes.len() as u64,
        })?)?;
        let mut out = Vec::with_capacity(n);
        for (i, c) in bytes.chunks_exact(4).enumerate() {
            let v = LittleEndian::read_f32(c);
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    path: self.path.to_path_buf(),
                    location: format!("byte offset {}", start + 4 * i),
                });
            }
            out.push(v as f64);
        }
        Ok(out)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Parse {
                path: self.path.to_path_buf(),
                line: 0,
                message: format!(
                    "{} trailing bytes after byte offset {}",
                    self.bytes.len() - self.pos,
                    self.pos
                ),
            });
        }
        Ok(())
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn points_from(values: Vec<f64>) -> Vec<Point3> {
    values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

fn put_f32s(buf: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        buf.write_f32::<LittleEndian>(v as f32).expect("vec write");
    }
}

fn count_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::shape(format!("{what} {n} does not fit in u32")))
}

pub fn decode_cloud(path: &Path, bytes: &[u8]) -> Result<PointCloud> {
    let mut c = Cursor::new(path, bytes);
    c.magic(CLOUD_MAGIC)?;
    c.version()?;
    let n = c.u32()? as usize;
    let positions = points_from(c.f32s(n * 3)?);
    // files without a feature block are accepted as C = 0
    let features = if c.pos == bytes.len() {
        None
    } else {
        let ch = c.u32()? as usize;
        if ch == 0 {
            None
        } else {
            Some(Tensor2::new(n, ch, c.f32s(n * ch)?)?)
        }
    };
    c.finish()?;
    PointCloud::with_features(positions, features)
}

pub fn encode_cloud(cloud: &PointCloud) -> Result<Vec<u8>> {
    let n = cloud.len();
    let mut buf = Vec::with_capacity(16 + n * 12);
    buf.extend_from_slice(CLOUD_MAGIC);
    buf.write_u32::<LittleEndian>(FORMAT_VERSION).expect("vec write");
    buf.write_u32::<LittleEndian>(count_u32(n, "point count")?).expect("vec write");
    put_f32s(&mut buf, cloud.positions().iter().flatten().copied());
    if let Some(f) = cloud.features() {
        buf.write_u32::<LittleEndian>(count_u32(f.cols(), "channel count")?)
            .expect("vec write");
        put_f32s(&mut buf, f.data().iter().copied());
    }
    Ok(buf)
}

pub fn read_sfpc(path: &Path) -> Result<PointCloud> {
    decode_cloud(path, &read_bytes(path)?)
}

/// Writes an SFPC file; a feature block is present only when the cloud has
/// features.
pub fn write_sfpc(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_bytes(path, &encode_cloud(cloud)?)
}

pub fn decode_flow(path: &Path, bytes: &[u8]) -> Result<FlowField> {
    let mut c = Cursor::new(path, bytes);
    c.magic(FLOW_MAGIC)?;
    c.version()?;
    let n = c.u32()? as usize;
    let vectors = points_from(c.f32s(n * 3)?);
    c.finish()?;
    Ok(FlowField::new(vectors, FlowStage::Refined))
}

pub fn encode_flow(flow: &FlowField) -> Result<Vec<u8>> {
    let n = flow.len();
    let mut buf = Vec::with_capacity(12 + n * 12);
    buf.extend_from_slice(FLOW_MAGIC);
    buf.write_u32::<LittleEndian>(FORMAT_VERSION).expect("vec write");
    buf.write_u32::<LittleEndian>(count_u32(n, "point count")?).expect("vec write");
    put_f32s(&mut buf, flow.vectors.iter().flatten().copied());
    Ok(buf)
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    decode_flow(path, &read_bytes(path)?)
}

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<()> {
    write_bytes(path, &encode_flow(flow)?)
}

/// Named tensors in file order. Rank-1 and rank-0 entries load as single rows.
pub fn decode_weights(path: &Path, bytes: &[u8]) -> Result<Vec<(String, Tensor2)>> {
    let mut c = Cursor::new(path, bytes);
    c.magic(WEIGHTS_MAGIC)?;
    c.version()?;
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = c.u16()? as usize;
        let name_at = c.pos;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Weights(format!("tensor name at byte {name_at} is not UTF-8")))?
            .to_string();
        let rank = c.u8()?;
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            dims.push(c.u32()? as usize);
        }
        let (rows, cols) = match dims.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, k] => (*r, *k),
            _ => {
                return Err(Error::Weights(format!(
                    "{name}: rank {rank} tensors are not supported"
                )))
            }
        };
        let data = c.f32s(rows * cols)?;
        out.push((name, Tensor2::new(rows, cols, data)?));
    }
    c.finish()?;
    Ok(out)
}

pub fn encode_weights(tensors: &[(String, Tensor2)]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.write_u32::<LittleEndian>(FORMAT_VERSION).expect("vec write");
    buf.write_u32::<LittleEndian>(count_u32(tensors.len(), "tensor count")?)
        .expect("vec write");
    for (name, t) in tensors {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Weights(format!("tensor name too long: {name}")))?;
        buf.write_u16::<LittleEndian>(len).expect("vec write");
        buf.write_all(name.as_bytes()).expect("vec write");
        buf.write_u8(2).expect("vec write");
        buf.write_u32::<LittleEndian>(count_u32(t.rows(), "dimension")?).expect("vec write");
        buf.write_u32::<LittleEndian>(count_u32(t.cols(), "dimension")?).expect("vec write");
        put_f32s(&mut buf, t.data().iter().copied());
    }
    Ok(buf)
}

pub fn read_weights_file(path: &Path) -> Result<Vec<(String, Tensor2)>> {
    decode_weights(path, &read_bytes(path)?)
}

pub fn write_weights_file(path: &Path, tensors: &[(String, Tensor2)]) -> Result<()> {
    write_bytes(path, &encode_weights(tensors)?)
}
