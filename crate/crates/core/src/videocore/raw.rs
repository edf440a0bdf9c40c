//! Raw planar float container.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! magic    b"TKRF"
//! width
//! height
//! channels
//! frames
//! samples  frames x channels x height x width  f32 LE, plane by plane
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::frame::{Frame, Plane};
use crate::error::{Error, Result};

pub const RAW_MAGIC: [u8; 4] = *b"TKRF";
pub const RAW_HEADER_LEN: usize = 20;

pub fn write_raw(path: impl AsRef<Path>, frames: &[Frame]) -> Result<()> {
    let path = path.as_ref();
    let (w, h, c) = match frames.first() {
        Some(f) => f.shape(),
        None => (0, 0, 0),
    };
    if frames.iter().any(|f| f.shape() != (w, h, c)) {
        return Err(Error::invalid("raw container frames must share one shape"));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut header = Vec::with_capacity(RAW_HEADER_LEN);
    header.extend_from_slice(&RAW_MAGIC);
    for v in [w, h, c, frames.len()] {
        let v = u32::try_from(v).map_err(|_| Error::invalid("dimension exceeds u32"))?;
        header.extend_from_slice(&v.to_le_bytes());
    }
    let io = |e| Error::io(path, e);
    out.write_all(&header).map_err(io)?;
    for f in frames {
        for p in &f.planes {
            let mut buf = Vec::with_capacity(p.data.len() * 4);
            for v in &p.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<Vec<Frame>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = BufReader::new(file);
    let mut header = [0u8; RAW_HEADER_LEN];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::RawFormat(format!("{}: truncated header", path.display())))?;
    if header[..4] != RAW_MAGIC {
        return Err(Error::RawFormat(format!("{}: bad magic", path.display())));
    }
    let field = |i: usize| {
        u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize
    };
    let (w, h, c, n) = (field(0), field(1), field(2), field(3));
    let plane_len = w
        .checked_mul(h)
        .ok_or_else(|| Error::RawFormat("dimensions overflow".into()))?;
    let mut frames = Vec::with_capacity(n);
    let mut bytes = vec![0u8; plane_len * 4];
    for i in 0..n {
        let mut planes = Vec::with_capacity(c);
        for _ in 0..c {
            input.read_exact(&mut bytes).map_err(|_| {
                Error::RawFormat(format!("{}: truncated payload", path.display()))
            })?;
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            planes.push(Plane {
                width: w,
                height: h,
                data,
            });
        }
        frames.push(Frame::from_planes(planes)?.with_index(i));
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::RawFormat(format!(
            "{}: trailing bytes after payload",
            path.display()
        )));
    }
    Ok(frames)
}
