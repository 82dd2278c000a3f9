//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `CKPT`, version u16, architecture string
//! (u16 length + UTF-8), free-form config echo (u32 length + UTF-8), tensor
//! count u32, then per tensor: name (u16 length + UTF-8), rank u8, dims u32
//! each, and the f64 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::model::{ArchSpec, CompactResNet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CKPT";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: CompactResNet,
    /// Training configuration recorded alongside the weights.
    pub echo: String,
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &CompactResNet, echo: &str) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let arch = model.arch.to_string();
    w.write_all(&(arch.len() as u16).to_le_bytes())?;
    w.write_all(arch.as_bytes())?;
    w.write_all(&(echo.len() as u32).to_le_bytes())?;
    w.write_all(echo.as_bytes())?;
    w.write_all(&(model.tensors().len() as u32).to_le_bytes())?;
    for t in model.tensors() {
        w.write_all(&(t.name.len() as u16).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&[t.shape.len() as u8])?;
        for &d in &t.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in &model.params[t.range()] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn take_string<R: Read>(r: &mut R, len: usize, path: &Path) -> Result<String> {
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| format_err(path, "string is not UTF-8"))
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Reads a checkpoint; `origin` is only used in error messages.
pub fn read_checkpoint<R: Read>(mut r: R, origin: &Path) -> Result<Checkpoint> {
    if &take::<4, _>(&mut r)? != MAGIC {
        return Err(format_err(origin, "bad magic"));
    }
    let version = u16::from_le_bytes(take(&mut r)?);
    if version != VERSION {
        return Err(format_err(origin, format!("unsupported version {version}")));
    }
    let arch_len = u16::from_le_bytes(take(&mut r)?) as usize;
    let arch: ArchSpec = take_string(&mut r, arch_len, origin)?.parse()?;
    let echo_len = u32::from_le_bytes(take(&mut r)?) as usize;
    let echo = take_string(&mut r, echo_len, origin)?;
    let template = CompactResNet::new(arch.clone(), 0)?;
    let count = u32::from_le_bytes(take(&mut r)?) as usize;
    if count != template.tensors().len() {
        return Err(format_err(
            origin,
            format!("{count} tensors, architecture has {}", template.tensors().len()),
        ));
    }
    let mut params = vec![0.0; template.n_params()];
    for expected in template.tensors() {
        let name_len = u16::from_le_bytes(take(&mut r)?) as usize;
        let name = take_string(&mut r, name_len, origin)?;
        let rank = take::<1, _>(&mut r)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut r)?) as usize);
        }
        if name != expected.name || shape != expected.shape {
            return Err(format_err(
                origin,
                format!("tensor {name} {shape:?}, expected {} {:?}", expected.name, expected.shape),
            ));
        }
        for v in &mut params[expected.range()] {
            *v = f64::from_le_bytes(take(&mut r)?);
        }
    }
    Ok(Checkpoint {
        model: CompactResNet::from_params(arch, params)?,
        echo,
    })
}

/// Writes to a temporary sibling file and renames it into place.
pub fn save_checkpoint(path: &Path, model: &CompactResNet, echo: &str) -> Result<()> {
    let mut tmp = PathBuf::from(path);
    tmp.as_mut_os_string().push(".tmp");
    write_checkpoint(BufWriter::new(File::create(&tmp)?), model, echo)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?), path)
}
