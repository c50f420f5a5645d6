//! Flat binary container for named tensors.
//!
//! The format is deliberately dumb so any language can parse it with a few
//! lines of code:
//!
//! ```text
//! magic bytes  "TIE1"
//! per entry, in written order:
//!     name_len   u32 little-endian
//!     name       UTF-8, name_len bytes
//!     rank       u32 little-endian
//!     dims       rank × u32 little-endian
//!     data       product(dims) × f32 little-endian
//! ```
//!
//! Element data is always stored as `f32` regardless of the scalar type in
//! memory; readers get `Tensor<f32>` back and convert if they need wider
//! precision. Entry order is preserved, which lets model loaders insist on
//! their declared parameter order.

use std::io::{self, Read, Write};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Leading magic bytes of every weight file.
pub const MAGIC: [u8; 4] = *b"TIE1";

/// Sanity cap on entry-name length; real names are tens of bytes, so a
/// larger value means a corrupt or foreign file.
const MAX_NAME_LEN: u32 = 4096;
/// Sanity cap on tensor rank.
const MAX_RANK: u32 = 8;
/// Sanity cap on elements per tensor (1 GiB of f32).
const MAX_NUMEL: u64 = 1 << 28;

fn bad_data(detail: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, detail.into())
}

/// Writes `entries` in iteration order.
pub fn write_entries<'a, T, W, I>(mut out: W, entries: I) -> io::Result<()>
where
    T: Scalar + 'a,
    W: Write,
    I: IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
{
    out.write_all(&MAGIC)?;
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        if name_bytes.len() as u64 > MAX_NAME_LEN as u64 {
            return Err(bad_data(format!("entry name longer than {MAX_NAME_LEN} bytes")));
        }
        out.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        out.write_all(name_bytes)?;
        out.write_all(&(tensor.rank() as u32).to_le_bytes())?;
        for &dim in tensor.shape() {
            out.write_all(&(dim as u32).to_le_bytes())?;
        }
        for v in tensor.data() {
            out.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads every entry until end of stream, preserving order.
pub fn read_entries<R: Read>(mut input: R) -> io::Result<Vec<(String, Tensor<f32>)>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            bad_data("file shorter than the 4-byte magic")
        } else {
            e
        }
    })?;
    if magic != MAGIC {
        return Err(bad_data(format!(
            "bad magic {magic:02x?}, expected {:02x?} (\"TIE1\")",
            MAGIC
        )));
    }

    let mut entries = Vec::new();
    loop {
        let name_len = match read_u32_or_eof(&mut input)? {
            Some(n) => n,
            None => return Ok(entries),
        };
        if name_len > MAX_NAME_LEN {
            return Err(bad_data(format!("entry name length {name_len} exceeds cap")));
        }
        let mut name_buf = vec![0u8; name_len as usize];
        input.read_exact(&mut name_buf).map_err(eof_is_truncation)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| bad_data("entry name is not valid UTF-8"))?;

        let rank = read_u32(&mut input)?;
        if rank > MAX_RANK {
            return Err(bad_data(format!("tensor rank {rank} exceeds cap {MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut numel = 1u64;
        for _ in 0..rank {
            let dim = read_u32(&mut input)? as u64;
            numel = numel.saturating_mul(dim);
            shape.push(dim as usize);
        }
        if numel > MAX_NUMEL {
            return Err(bad_data(format!("tensor \"{name}\" has {numel} elements, cap is {MAX_NUMEL}")));
        }

        let mut raw = vec![0u8; numel as usize * 4];
        input.read_exact(&mut raw).map_err(eof_is_truncation)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let tensor = Tensor::new(shape, data)
            .map_err(|e| bad_data(format!("entry \"{name}\": {e}")))?;
        entries.push((name, tensor));
    }
}

fn eof_is_truncation(e: io::Error) -> io::Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        bad_data("file truncated mid-entry")
    } else {
        e
    }
}

fn read_u32<R: Read>(input: &mut R) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf).map_err(eof_is_truncation)?;
    Ok(u32::from_le_bytes(buf))
}

/// Reads a `u32`, distinguishing a clean end-of-stream (`None`) from a
/// truncated one (error).
fn read_u32_or_eof<R: Read>(input: &mut R) -> io::Result<Option<u32>> {
    let mut buf = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match input.read(&mut buf[filled..])? {
            0 if filled == 0 => return Ok(None),
            0 => return Err(bad_data("file truncated mid-entry")),
            n => filled += n,
        }
    }
    Ok(Some(u32::from_le_bytes(buf)))
}
