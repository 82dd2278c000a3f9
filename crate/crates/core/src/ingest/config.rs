//! Pipeline configuration in a `key = value` text format.
//!
//! ```text
//! # comments start with '#'
//! seed = 42
//! experiment = Exp2
//! lrs = 1e-3, 1e-4
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::audio::{FrameSpec, SilenceConfig};
use crate::augment::AugmentStrategy;
use crate::error::{Error, Result};
use crate::features::InputScale;
use crate::hierarchy::{ExperimentConfig, ExperimentId, SplitUnit};
use crate::nnet::{ArchSpec, HyperGrid, TrainConfig};

use super::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub experiment: ExperimentId,
    /// Strategy used by the standalone augmentation stage.
    pub augmentation: AugmentStrategy,
    pub split_unit: SplitUnit,
    pub split_ratio: f64,
    pub input_scale: InputScale,
    pub manifest: PathBuf,
    pub cache_dir: PathBuf,
    pub silence: SilenceConfig,
    pub segment_window_s: f64,
    pub segment_hop_s: f64,
    pub grid: HyperGrid,
    pub folds: usize,
    pub arch: ArchSpec,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            experiment: ExperimentId::Exp2,
            augmentation: AugmentStrategy::TimeWarp,
            split_unit: SplitUnit::Recording,
            split_ratio: 0.8,
            input_scale: InputScale::Db,
            manifest: PathBuf::from("manifest.csv"),
            cache_dir: PathBuf::from("cache"),
            silence: SilenceConfig::default(),
            segment_window_s: 1.0,
            segment_hop_s: 0.4,
            grid: HyperGrid::default(),
            folds: 5,
            arch: ArchSpec::standard(2),
            synth: SynthConfig::default(),
        }
    }
}

fn list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    v.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| format!("bad list item {s:?}")))
        .collect()
}

fn scalar<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl PipelineConfig {
    pub const KEYS: [&'static str; 21] = [
        "seed",
        "experiment",
        "augmentation",
        "split_unit",
        "split_ratio",
        "input_scale",
        "manifest",
        "cache_dir",
        "silence_threshold",
        "silence_window",
        "silence_hop",
        "silence_crossfade",
        "segment_window_s",
        "segment_hop_s",
        "lrs",
        "batch_sizes",
        "epochs",
        "folds",
        "arch",
        "synth_counts",
        "synth_duration_s",
    ];

    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let r: std::result::Result<(), String> = (|| {
            match key.trim() {
                "seed" => self.seed = scalar(v)?,
                "experiment" => self.experiment = v.parse().map_err(|e: Error| e.to_string())?,
                "augmentation" => self.augmentation = v.parse().map_err(|e: Error| e.to_string())?,
                "split_unit" => self.split_unit = v.parse().map_err(|e: Error| e.to_string())?,
                "split_ratio" => self.split_ratio = scalar(v)?,
                "input_scale" => self.input_scale = v.parse().map_err(|e: Error| e.to_string())?,
                "manifest" => self.manifest = PathBuf::from(v),
                "cache_dir" => self.cache_dir = PathBuf::from(v),
                "silence_threshold" => self.silence.threshold = scalar(v)?,
                "silence_window" => {
                    self.silence.frame = FrameSpec::new(scalar(v)?, self.silence.frame.hop).map_err(|e| e.to_string())?
                }
                "silence_hop" => {
                    self.silence.frame = FrameSpec::new(self.silence.frame.window, scalar(v)?).map_err(|e| e.to_string())?
                }
                "silence_crossfade" => self.silence.crossfade = scalar(v)?,
                "segment_window_s" => self.segment_window_s = scalar(v)?,
                "segment_hop_s" => self.segment_hop_s = scalar(v)?,
                "lrs" => self.grid.lrs = list(v)?,
                "batch_sizes" => self.grid.batch_sizes = list(v)?,
                "epochs" => self.grid.epochs = list(v)?,
                "folds" => self.folds = scalar(v)?,
                "arch" => self.arch = v.parse().map_err(|e: Error| e.to_string())?,
                "synth_counts" => {
                    let c: Vec<usize> = list(v)?;
                    self.synth.counts = c.try_into().map_err(|_| "synth_counts needs 7 values".to_string())?
                }
                "synth_duration_s" => self.synth.duration_s = scalar(v)?,
                other => return Err(format!("unknown key {other:?}")),
            }
            Ok(())
        })();
        r.map_err(|msg| Error::InvalidParameter(format!("{key}: {msg}")))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
                path: PathBuf::from("<config>"),
                msg: format!("line {}: expected key = value", i + 1),
            })?;
            cfg.set(k, v).map_err(|e| Error::Format {
                path: PathBuf::from("<config>"),
                msg: format!("line {}: {e}", i + 1),
            })?;
        }
        Ok(cfg)
    }

    /// Reads a config file; relative `manifest` and `cache_dir` resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::parse(&std::fs::read_to_string(path)?).map_err(|e| match e {
            Error::Format { msg, .. } => Error::Format {
                path: path.to_path_buf(),
                msg,
            },
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.manifest, &mut cfg.cache_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("experiment", self.experiment.as_str().into());
        kv("augmentation", self.augmentation.as_str().into());
        kv("split_unit", self.split_unit.as_str().into());
        kv("split_ratio", self.split_ratio.to_string());
        kv("input_scale", self.input_scale.as_str().into());
        kv("manifest", self.manifest.display().to_string());
        kv("cache_dir", self.cache_dir.display().to_string());
        kv("silence_threshold", self.silence.threshold.to_string());
        kv("silence_window", self.silence.frame.window.to_string());
        kv("silence_hop", self.silence.frame.hop.to_string());
        kv("silence_crossfade", self.silence.crossfade.to_string());
        kv("segment_window_s", self.segment_window_s.to_string());
        kv("segment_hop_s", self.segment_hop_s.to_string());
        kv("lrs", join(&self.grid.lrs));
        kv("batch_sizes", join(&self.grid.batch_sizes));
        kv("epochs", join(&self.grid.epochs));
        kv("folds", self.folds.to_string());
        kv("arch", self.arch.to_string());
        kv("synth_counts", join(&self.synth.counts));
        kv("synth_duration_s", self.synth.duration_s.to_string());
        out
    }

    pub fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            train: TrainConfig {
                grid: self.grid.clone(),
                seed: self.seed,
                folds: self.folds,
                arch: self.arch.clone(),
            },
            input_scale: self.input_scale,
        }
    }
}
