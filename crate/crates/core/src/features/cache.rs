//! Spectrogram cache files.
//!
//! Layout, all little-endian:
//!
//! | field      | type                                  |
//! |------------|---------------------------------------|
//! | magic      | `b"MELS"`                             |
//! | version    | u16 (currently 1)                     |
//! | n_mels     | u16                                   |
//! | n_frames   | u16                                   |
//! | rate       | u32, source sampling rate in Hz       |
//! | id length  | u16, followed by that many UTF-8 bytes |
//! | power      | n_mels * n_frames f32, row-major      |
//!
//! Values are linear mel power. Readers converting to dB apply the
//! `1e-10` floor of [`super::power_to_db`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::audio::ClipMeta;
use crate::error::{Error, Result};

use super::MelSpectrogram;

pub const MEL_MAGIC: &[u8; 4] = b"MELS";
pub const MEL_CACHE_VERSION: u16 = 1;

pub fn write_mel<W: Write>(w: &mut W, spec: &MelSpectrogram) -> Result<()> {
    let id = spec.recording_id.as_bytes();
    let dims = [spec.n_mels, spec.n_frames, id.len()];
    if dims.iter().any(|&d| d > u16::MAX as usize) {
        return Err(Error::InvalidParameter("spectrogram header field exceeds u16".into()));
    }
    if spec.power.len() != spec.n_mels * spec.n_frames {
        return Err(Error::ShapeMismatch {
            expected: vec![spec.n_mels * spec.n_frames],
            got: vec![spec.power.len()],
        });
    }
    w.write_all(MEL_MAGIC)?;
    w.write_all(&MEL_CACHE_VERSION.to_le_bytes())?;
    w.write_all(&(spec.n_mels as u16).to_le_bytes())?;
    w.write_all(&(spec.n_frames as u16).to_le_bytes())?;
    w.write_all(&spec.source_rate.to_le_bytes())?;
    w.write_all(&(id.len() as u16).to_le_bytes())?;
    w.write_all(id)?;
    let mut buf = Vec::with_capacity(spec.power.len() * 4);
    for p in &spec.power {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

pub fn read_mel<R: Read>(r: &mut R) -> Result<MelSpectrogram> {
    let bad = |msg: String| Error::Format {
        path: "<stream>".into(),
        msg,
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MEL_MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let version = read_u16(r)?;
    if version != MEL_CACHE_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n_mels = read_u16(r)? as usize;
    let n_frames = read_u16(r)? as usize;
    let mut rate = [0u8; 4];
    r.read_exact(&mut rate)?;
    let id_len = read_u16(r)? as usize;
    let mut id = vec![0u8; id_len];
    r.read_exact(&mut id)?;
    let recording_id = String::from_utf8(id).map_err(|e| bad(e.to_string()))?;
    let mut raw = vec![0u8; n_mels * n_frames * 4];
    r.read_exact(&mut raw)?;
    let power = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(MelSpectrogram {
        n_mels,
        n_frames,
        power,
        source_rate: u32::from_le_bytes(rate),
        recording_id,
        meta: ClipMeta::default(),
    })
}

pub fn write_mel_file(path: &Path, spec: &MelSpectrogram) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_mel(&mut w, spec)?;
    w.flush()?;
    Ok(())
}

pub fn read_mel_file(path: &Path) -> Result<MelSpectrogram> {
    let mut r = BufReader::new(File::open(path)?);
    read_mel(&mut r).map_err(|e| match e {
        Error::Format { msg, .. } => Error::Format {
            path: path.to_path_buf(),
            msg,
        },
        other => other,
    })
}
