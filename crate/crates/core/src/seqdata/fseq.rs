//! FSEQ v1 container.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "FSEQ"
//! 4       1           version (0x01)
//! 5       4 x u32 LE  N, C, H, W
//! 21      f32 LE      capacity
//! 25      u16 LE      byte length L of dt_label
//! 27      L           dt_label, UTF-8
//! 27+L    4*N*C*H*W   f32 LE samples in (frame, channel, row, column) order
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array4;

use super::sequence::FrameSequence;
use crate::error::{FseqError, Result};

pub const MAGIC: &[u8; 4] = b"FSEQ";
pub const VERSION: u8 = 1;

pub fn encode(seq: &FrameSequence) -> Vec<u8> {
    let (n, c, h, w) = seq.frames.dim();
    let label = seq.dt_label.as_bytes();
    let label = &label[..label.len().min(u16::MAX as usize)];
    let mut out = Vec::with_capacity(27 + label.len() + 4 * seq.frames.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for d in [n, c, h, w] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&seq.capacity.to_le_bytes());
    out.extend_from_slice(&(label.len() as u16).to_le_bytes());
    out.extend_from_slice(label);
    // `iter` walks logical order regardless of memory layout.
    for v in seq.frames.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FseqError> {
        let end = self.pos.checked_add(n).ok_or(FseqError::TruncatedHeader)?;
        let bytes = self.buf.get(self.pos..end).ok_or(FseqError::TruncatedHeader)?;
        self.pos = end;
        Ok(bytes)
    }

    fn u32(&mut self) -> Result<u32, FseqError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<FrameSequence, FseqError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4).map_err(|_| FseqError::BadMagic)? != MAGIC {
        return Err(FseqError::BadMagic);
    }
    let version = r.take(1)?[0];
    if version != VERSION {
        return Err(FseqError::UnsupportedVersion(version));
    }
    let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
    if dims.contains(&0) {
        return Err(FseqError::InvalidDimensions(dims));
    }
    let capacity = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if !(capacity.is_finite() && capacity > 0.0) {
        return Err(FseqError::InvalidCapacity(capacity));
    }
    let label_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
    let dt_label = std::str::from_utf8(r.take(label_len)?)
        .map_err(|_| FseqError::BadLabel)?
        .to_string();

    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or(FseqError::InvalidDimensions(dims))?;
    let payload = &buf[r.pos..];
    let expected = count.checked_mul(4).ok_or(FseqError::InvalidDimensions(dims))?;
    if payload.len() != expected {
        return Err(FseqError::PayloadSizeMismatch {
            expected,
            actual: payload.len(),
        });
    }
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(FseqError::NonFinite(i));
        }
        data.push(v);
    }
    let shape = (dims[0] as usize, dims[1] as usize, dims[2] as usize, dims[3] as usize);
    let frames = Array4::from_shape_vec(shape, data).expect("length checked above");
    Ok(FrameSequence {
        frames,
        capacity,
        dt_label,
        norm_stats: None,
        seed: None,
    })
}

/// Write-then-rename so readers never observe a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp_name = format!(".{file_name}.tmp{}", std::process::id());
    let tmp = match dir {
        Some(d) => d.join(tmp_name),
        None => tmp_name.into(),
    };
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// `fs::read` with the path in the error message.
pub(crate) fn read_file(path: &Path) -> std::io::Result<Vec<u8>> {
    fs::read(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn save_sequence(seq: &FrameSequence, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode(seq))?;
    Ok(())
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<FrameSequence> {
    let bytes = read_file(path.as_ref())?;
    Ok(decode(&bytes)?)
}
