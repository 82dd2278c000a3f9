//! Heuristic outlier flags to assist manual review. Flags never exclude a
//! recording by themselves; exclusion is recorded in the manifest by a person.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{power_to_db, MelSpectrogram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OutlierReason {
    AbsentSignal,
    TransientShock,
    DominantNoise,
    ErraticSpiking,
}

impl OutlierReason {
    pub fn describe(self) -> &'static str {
        match self {
            OutlierReason::AbsentSignal => "absence of valuable signal",
            OutlierReason::TransientShock => "transient shock",
            OutlierReason::DominantNoise => "dominant global noise",
            OutlierReason::ErraticSpiking => "erratic spiking",
        }
    }
}

impl fmt::Display for OutlierReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.describe())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierConfig {
    /// Mean power (dB) below which a spectrogram counts as empty.
    pub silence_floor_db: f64,
    /// Frame-to-frame power jump (dB) that counts as a shock.
    pub shock_jump_db: f64,
    /// Smaller jump size counted towards erratic spiking.
    pub erratic_jump_db: f64,
    pub erratic_count: usize,
    /// Spectral flatness (geometric / arithmetic mean of the time-averaged
    /// mel spectrum) above which noise dominates.
    pub flatness_max: f64,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        Self {
            silence_floor_db: -95.0,
            shock_jump_db: 20.0,
            erratic_jump_db: 10.0,
            erratic_count: 8,
            flatness_max: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierFlag {
    pub recording_id: String,
    pub reasons: Vec<OutlierReason>,
}

fn frame_power_db(spec: &MelSpectrogram) -> Vec<f64> {
    (0..spec.n_frames)
        .map(|t| {
            let sum: f64 = (0..spec.n_mels).map(|m| spec.get(m, t) as f64).sum();
            power_to_db(sum / spec.n_mels as f64)
        })
        .collect()
}

fn spectral_flatness(spec: &MelSpectrogram) -> f64 {
    let profile: Vec<f64> = (0..spec.n_mels)
        .map(|m| {
            let s: f64 = (0..spec.n_frames).map(|t| spec.get(m, t) as f64).sum();
            (s / spec.n_frames as f64).max(super::DB_FLOOR)
        })
        .collect();
    let n = profile.len() as f64;
    let log_mean = profile.iter().map(|p| p.ln()).sum::<f64>() / n;
    let mean = profile.iter().sum::<f64>() / n;
    log_mean.exp() / mean
}

fn reasons_for(spec: &MelSpectrogram, cfg: &OutlierConfig) -> Vec<OutlierReason> {
    if super::mean_power_db(spec) < cfg.silence_floor_db {
        return vec![OutlierReason::AbsentSignal];
    }
    let mut reasons = Vec::new();
    let frames = frame_power_db(spec);
    let jumps: Vec<f64> = frames.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    if jumps.iter().any(|&j| j > cfg.shock_jump_db) {
        reasons.push(OutlierReason::TransientShock);
    }
    if jumps.iter().filter(|&&j| j > cfg.erratic_jump_db).count() >= cfg.erratic_count {
        reasons.push(OutlierReason::ErraticSpiking);
    }
    if spectral_flatness(spec) > cfg.flatness_max {
        reasons.push(OutlierReason::DominantNoise);
    }
    reasons
}

/// Flags recordings whose spectrograms look empty, impulsive or noise-like.
/// Segments sharing a recording id are pooled; only flagged recordings are
/// returned, in order of first appearance.
pub fn flag_outliers(specs: &[MelSpectrogram], cfg: &OutlierConfig) -> Vec<OutlierFlag> {
    let mut order: Vec<&str> = Vec::new();
    let mut found: BTreeMap<&str, Vec<OutlierReason>> = BTreeMap::new();
    for spec in specs {
        let id = spec.recording_id.as_str();
        let entry = found.entry(id).or_insert_with(|| {
            order.push(id);
            Vec::new()
        });
        for r in reasons_for(spec, cfg) {
            if !entry.contains(&r) {
                entry.push(r);
            }
        }
    }
    order
        .into_iter()
        .filter_map(|id| {
            let mut reasons = found.remove(id)?;
            if reasons.is_empty() {
                return None;
            }
            reasons.sort();
            Some(OutlierFlag {
                recording_id: id.to_string(),
                reasons,
            })
        })
        .collect()
}
