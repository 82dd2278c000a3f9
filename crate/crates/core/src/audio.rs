//! Waveform preprocessing: RMS silence removal with crossfade reconstruction,
//! min-max normalization and fixed-length segmentation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{DatasetId, FinalLabel, Gender};

/// Label metadata carried alongside a clip through preprocessing and augmentation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub gender: Option<Gender>,
    pub label: Option<FinalLabel>,
    pub dataset: Option<DatasetId>,
    /// Index of the segment within its recording, set by [`segment`].
    pub segment: Option<u32>,
    /// True for clips synthesized by augmentation.
    pub augmented: bool,
}

/// A mono sample buffer at a fixed sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub recording_id: String,
    pub meta: ClipMeta,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32, recording_id: impl Into<String>) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        Self {
            samples,
            sample_rate,
            recording_id: recording_id.into(),
            meta: ClipMeta::default(),
        }
    }

    pub fn with_meta(mut self, meta: ClipMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Same identity and metadata, new sample buffer.
    pub fn with_samples(&self, samples: Vec<f32>, sample_rate: u32) -> AudioClip {
        AudioClip {
            samples,
            sample_rate,
            recording_id: self.recording_id.clone(),
            meta: self.meta.clone(),
        }
    }
}

/// Analysis frame geometry in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub window: usize,
    pub hop: usize,
}

impl FrameSpec {
    pub fn new(window: usize, hop: usize) -> Result<Self> {
        if hop == 0 || hop > window {
            return Err(Error::InvalidParameter(format!(
                "frame spec needs 0 < hop <= window (window {window}, hop {hop})"
            )));
        }
        Ok(Self { window, hop })
    }

    /// Number of full frames in a signal of `n` samples (no padding).
    pub fn frame_count(&self, n: usize) -> usize {
        if n < self.window {
            0
        } else {
            1 + (n - self.window) / self.hop
        }
    }
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self {
            window: 2048,
            hop: 512,
        }
    }
}

/// Per-frame voiced/silent decision.
#[derive(Debug, Clone, PartialEq)]
pub struct VoicedMask {
    pub voiced: Vec<bool>,
    pub frame_spec: FrameSpec,
    pub threshold: f64,
}

impl VoicedMask {
    /// Maximal voiced runs as half-open sample ranges. A run that includes
    /// the final frame extends to the end of the signal.
    pub fn voiced_ranges(&self, n_samples: usize) -> Vec<(usize, usize)> {
        let FrameSpec { window, hop } = self.frame_spec;
        let last = self.voiced.len().saturating_sub(1);
        let mut ranges = Vec::new();
        let mut i = 0;
        while i < self.voiced.len() {
            if !self.voiced[i] {
                i += 1;
                continue;
            }
            let start_frame = i;
            while i < self.voiced.len() && self.voiced[i] {
                i += 1;
            }
            let end_frame = i - 1;
            let start = start_frame * hop;
            let end = if end_frame == last {
                n_samples
            } else {
                (end_frame * hop + window).min(n_samples)
            };
            ranges.push((start, end));
        }
        ranges
    }

    pub fn all_voiced(&self) -> bool {
        self.voiced.iter().all(|&v| v)
    }
}

/// Parameters of [`remove_silence`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SilenceConfig {
    pub frame: FrameSpec,
    pub threshold: f64,
    pub crossfade: usize,
}

impl Default for SilenceConfig {
    fn default() -> Self {
        Self {
            frame: FrameSpec::default(),
            threshold: 1e-3,
            crossfade: 512,
        }
    }
}

/// RMS energy of every full frame.
pub fn rms_frames(clip: &AudioClip, spec: FrameSpec) -> Result<Vec<f64>> {
    let x = &clip.samples;
    if x.len() < spec.window {
        return Err(Error::TooShort {
            len: x.len(),
            need: spec.window,
        });
    }
    let count = spec.frame_count(x.len());
    Ok((0..count)
        .map(|i| {
            let frame = &x[i * spec.hop..i * spec.hop + spec.window];
            let energy: f64 = frame.iter().map(|&s| (s as f64) * (s as f64)).sum();
            (energy / spec.window as f64).sqrt()
        })
        .collect())
}

pub fn voiced_mask(clip: &AudioClip, spec: FrameSpec, threshold: f64) -> Result<VoicedMask> {
    let rms = rms_frames(clip, spec)?;
    Ok(VoicedMask {
        voiced: rms.iter().map(|&e| e >= threshold).collect(),
        frame_spec: spec,
        threshold,
    })
}

/// Appends `head` to `acc`, blending the last `v` samples of `acc` with the
/// first `v` samples of `head` using weights `n / (v - 1)`.
pub fn crossfade_append(acc: &mut Vec<f32>, head: &[f32], v: usize) -> Result<()> {
    if v < 2 {
        return Err(Error::InvalidParameter(format!(
            "crossfade interval must be at least 2, got {v}"
        )));
    }
    let short = acc.len().min(head.len());
    if short < v {
        return Err(Error::CrossfadeTooLong { v, len: short });
    }
    let base = acc.len() - v;
    let denom = (v - 1) as f64;
    for n in 0..v {
        let alpha = n as f64 / denom;
        let x1 = acc[base + n] as f64;
        let x2 = head[n] as f64;
        acc[base + n] = ((1.0 - alpha) * x1 + alpha * x2) as f32;
    }
    acc.extend_from_slice(&head[v..]);
    Ok(())
}

/// Linear crossfade join; output length is `tail.len() + head.len() - v`.
pub fn crossfade_join(tail: &[f32], head: &[f32], v: usize) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(tail.len() + head.len());
    out.extend_from_slice(tail);
    crossfade_append(&mut out, head, v)?;
    Ok(out)
}

/// Drops silent frames and rejoins the voiced runs with a linear crossfade.
pub fn remove_silence(clip: &AudioClip, cfg: &SilenceConfig) -> Result<AudioClip> {
    let mask = voiced_mask(clip, cfg.frame, cfg.threshold)?;
    if mask.all_voiced() {
        return Ok(clip.clone());
    }
    let ranges = mask.voiced_ranges(clip.len());
    let Some(&(s0, e0)) = ranges.first() else {
        return Err(Error::FullySilent(clip.recording_id.clone()));
    };
    let mut out = clip.samples[s0..e0].to_vec();
    for &(s, e) in &ranges[1..] {
        crossfade_append(&mut out, &clip.samples[s..e], cfg.crossfade)?;
    }
    Ok(clip.with_samples(out, clip.sample_rate))
}

/// Rescales amplitudes to `[0, 1]`.
pub fn minmax_normalize(clip: &AudioClip) -> Result<AudioClip> {
    if clip.is_empty() {
        return Err(Error::Empty("clip"));
    }
    let (lo, hi) = clip
        .samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
            (lo.min(s as f64), hi.max(s as f64))
        });
    if hi <= lo {
        return Err(Error::DegenerateRange(lo));
    }
    let span = hi - lo;
    let samples = clip
        .samples
        .iter()
        .map(|&s| ((s as f64 - lo) / span) as f32)
        .collect();
    Ok(clip.with_samples(samples, clip.sample_rate))
}

/// Fixed-length sliding-window segmentation. Clips shorter than one window
/// yield no segments.
pub fn segment(clip: &AudioClip, window_s: f64, hop_s: f64) -> Vec<AudioClip> {
    let sr = clip.sample_rate as f64;
    let win = (window_s * sr).round() as usize;
    if win == 0 || hop_s <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for k in 0.. {
        let start = (k as f64 * hop_s * sr).round() as usize;
        if start + win > clip.len() {
            break;
        }
        let mut seg = clip.with_samples(clip.samples[start..start + win].to_vec(), clip.sample_rate);
        seg.meta.segment = Some(k as u32);
        out.push(seg);
    }
    out
}
