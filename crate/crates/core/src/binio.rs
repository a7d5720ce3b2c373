//! Little-endian helpers shared by the binary file formats.

use std::io::{Read, Write};

use crate::{Error, Result};

pub(crate) fn write_floats<'a, W: Write>(w: &mut W, it: impl Iterator<Item = &'a f64>) -> Result<()> {
    for v in it {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated file".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

pub(crate) fn read_len<R: Read>(r: &mut R) -> Result<usize> {
    let v = u64::from_le_bytes(read_array(r)?);
    usize::try_from(v)
        .ok()
        .filter(|v| *v < (1 << 40))
        .ok_or_else(|| Error::Format(format!("implausible length {v}")))
}

pub(crate) fn read_floats<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        out.push(read_f64(r)?);
    }
    Ok(out)
}
