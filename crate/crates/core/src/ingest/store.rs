//! Atomic artifact writes and content-hash stamps for skipping up-to-date
//! pipeline stages.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::Result;

fn temp_sibling(path: &Path) -> PathBuf {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    PathBuf::from(tmp)
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = temp_sibling(path);
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(res?)
}

pub fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write as _;
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Incremental SHA-256 over labelled parts.
#[derive(Default, Clone)]
pub struct Hasher(Sha256);

impl Hasher {
    pub fn new() -> Self {
        Self::default()
    }

    /// Length-prefixed so that part boundaries matter.
    pub fn part(&mut self, bytes: &[u8]) -> &mut Self {
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
        self
    }

    pub fn file(&mut self, path: &Path) -> Result<&mut Self> {
        let bytes = fs::read(path)?;
        Ok(self.part(&bytes))
    }

    pub fn finish(&self) -> String {
        hex(&self.0.clone().finalize())
    }
}

/// Stamp files record the input key an artifact was built from.
pub fn stamp_path(artifact: &Path) -> PathBuf {
    let mut p = artifact.as_os_str().to_owned();
    p.push(".stamp");
    PathBuf::from(p)
}

/// True when `artifact` exists and was built from `key`.
pub fn is_fresh(artifact: &Path, key: &str) -> bool {
    artifact.exists() && fs::read_to_string(stamp_path(artifact)).is_ok_and(|s| s.trim() == key)
}

pub fn write_stamp(artifact: &Path, key: &str) -> Result<()> {
    write_atomic(&stamp_path(artifact), format!("{key}\n").as_bytes())
}
