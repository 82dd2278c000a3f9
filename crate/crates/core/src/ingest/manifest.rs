//! CSV dataset manifests.
//!
//! Header: `path,dataset,gender,label,recording_id,excluded,reason`. Relative
//! paths resolve against the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::audio::{AudioClip, ClipMeta};
use crate::error::{Error, Result};
use crate::labels::{DatasetId, FinalLabel, Gender};

pub const MANIFEST_HEADER: [&str; 7] = ["path", "dataset", "gender", "label", "recording_id", "excluded", "reason"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub dataset: DatasetId,
    pub gender: Gender,
    pub label: FinalLabel,
    pub recording_id: String,
    pub excluded: bool,
    pub reason: String,
}

impl ManifestEntry {
    pub fn meta(&self) -> ClipMeta {
        ClipMeta {
            gender: Some(self.gender),
            label: Some(self.label),
            dataset: Some(self.dataset),
            segment: None,
            augmented: false,
        }
    }

    /// Attaches this entry's identity and labels to a decoded clip.
    pub fn label_clip(&self, mut clip: AudioClip) -> AudioClip {
        clip.recording_id = self.recording_id.clone();
        clip.meta = self.meta();
        clip
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths resolve against.
    pub base: PathBuf,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "" | "0" | "false" | "no" => Some(false),
        "1" | "true" | "yes" => Some(true),
        _ => None,
    }
}

impl Manifest {
    pub fn parse<R: std::io::Read>(reader: R, base: PathBuf) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.is_empty() {
            return Err(Error::Manifest { row: 1, msg: "empty manifest".into() });
        }
        if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
            return Err(Error::Manifest {
                row: 1,
                msg: format!("header must be {}", MANIFEST_HEADER.join(",")),
            });
        }
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, rec) in rdr.records().enumerate() {
            // Row 1 is the header.
            let row = i + 2;
            let rec = rec?;
            let bad = |e: Error| Error::Manifest { row, msg: e.to_string() };
            let field = |k: usize| rec.get(k).unwrap_or("");
            let recording_id = field(4).to_string();
            if recording_id.is_empty() {
                return Err(Error::Manifest { row, msg: "empty recording_id".into() });
            }
            if field(2).is_empty() {
                return Err(bad(Error::MissingGender(recording_id)));
            }
            let entry = ManifestEntry {
                path: PathBuf::from(field(0)),
                dataset: field(1).parse().map_err(bad)?,
                gender: field(2).parse().map_err(bad)?,
                label: field(3).parse().map_err(bad)?,
                excluded: parse_bool(field(5)).ok_or_else(|| Error::Manifest {
                    row,
                    msg: format!("excluded must be true/false, got {:?}", field(5)),
                })?,
                reason: field(6).to_string(),
                recording_id,
            };
            if !seen.insert(entry.recording_id.clone()) {
                return Err(Error::Manifest {
                    row,
                    msg: format!("duplicate recording_id {}", entry.recording_id),
                });
            }
            entries.push(entry);
        }
        if entries.is_empty() {
            return Err(Error::Manifest { row: 1, msg: "manifest has no entries".into() });
        }
        Ok(Self { entries, base })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::parse(std::fs::File::open(path)?, base)?;
        for e in m.entries.iter().filter(|e| e.excluded) {
            log::info!("skipping excluded {} ({})", e.recording_id, e.reason);
        }
        Ok(m)
    }

    pub fn write<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(MANIFEST_HEADER)?;
        for e in &self.entries {
            wtr.write_record([
                e.path.to_string_lossy().as_ref(),
                e.dataset.as_str(),
                e.gender.as_str(),
                e.label.code(),
                &e.recording_id,
                if e.excluded { "true" } else { "false" },
                &e.reason,
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        super::store::write_atomic(path, &buf)
    }

    pub fn included(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| !e.excluded)
    }

    pub fn resolve(&self, e: &ManifestEntry) -> PathBuf {
        if e.path.is_absolute() {
            e.path.clone()
        } else {
            self.base.join(&e.path)
        }
    }

    /// Included recordings per (label, gender).
    pub fn counts(&self) -> BTreeMap<(FinalLabel, Gender), usize> {
        let mut c = BTreeMap::new();
        for e in self.included() {
            *c.entry((e.label, e.gender)).or_insert(0) += 1;
        }
        c
    }

    pub fn render_counts(&self) -> String {
        let c = self.counts();
        let mut out = format!("{:<6}{:>8}{:>8}{:>8}\n", "Class", "Total", "F", "M");
        for label in FinalLabel::ALL {
            let f = c.get(&(label, Gender::F)).copied().unwrap_or(0);
            let m = c.get(&(label, Gender::M)).copied().unwrap_or(0);
            let _ = writeln!(out, "{:<6}{:>8}{:>8}{:>8}", label.code(), f + m, f, m);
        }
        out
    }
}
