//! Cache directory layout and whole-directory atomic builds.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use voicepath::hierarchy::{ExperimentId, Role};

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    /// Segment WAVs plus `index.csv`.
    pub fn segments(&self) -> PathBuf {
        self.root.join("segments")
    }

    pub fn mels(&self) -> PathBuf {
        self.root.join("mels")
    }

    pub fn models(&self, exp: ExperimentId) -> PathBuf {
        self.root.join("models").join(exp.as_str())
    }

    pub fn checkpoint(&self, exp: ExperimentId, role: Role) -> PathBuf {
        self.models(exp).join(format!("{}.ckpt", role.as_str()))
    }

    pub fn augmented(&self) -> PathBuf {
        self.root.join("augmented")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn report_json(&self, exp: ExperimentId) -> PathBuf {
        self.reports().join(format!("{}.json", exp.as_str()))
    }

    pub fn outliers(&self) -> PathBuf {
        self.root.join("outliers.csv")
    }
}

pub fn seg_name(idx: usize) -> String {
    format!("seg{idx:06}")
}

/// Fills a fresh sibling directory and swaps it in for `dir` only when
/// `fill` succeeds, so an interrupted or failed build never leaves a
/// half-written artifact under the final name.
pub fn build_dir<F>(dir: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&Path) -> Result<()>,
{
    let mut tmp = dir.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).with_context(|| format!("clearing {}", tmp.display()))?;
    }
    fs::create_dir_all(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    if let Err(e) = fill(&tmp) {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    if dir.exists() {
        fs::remove_dir_all(dir).with_context(|| format!("replacing {}", dir.display()))?;
    }
    fs::rename(&tmp, dir).with_context(|| format!("moving {} into place", dir.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_build_leaves_previous_artifact() {
        let root = tempfile::tempdir().unwrap();
        let dir = root.path().join("out");
        build_dir(&dir, |d| Ok(fs::write(d.join("a"), "1")?)).unwrap();
        let err = build_dir(&dir, |d| {
            fs::write(d.join("a"), "2")?;
            anyhow::bail!("boom")
        });
        assert!(err.is_err());
        assert_eq!(fs::read_to_string(dir.join("a")).unwrap(), "1");
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 1);
    }
}
