//! Rate-adaptive mel spectrograms.
//!
//! Every 1-s clip in the 40-50 kHz envelope maps to exactly 128 mel rows x 98
//! frames. The STFT hop and window scale with the sampling rate so each frame
//! spans the same duration, and the filterbank edges are fixed in Hz (0 Hz to
//! 20 kHz, the Nyquist of the lowest supported rate), so row `f` measures the
//! same band at every rate.

mod cache;
mod outliers;

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, ClipMeta};
use crate::error::{Error, Result};

pub use cache::{read_mel, read_mel_file, write_mel, write_mel_file, MEL_CACHE_VERSION, MEL_MAGIC};
pub use outliers::{flag_outliers, OutlierConfig, OutlierFlag, OutlierReason};

pub const N_MELS: usize = 128;
pub const N_FRAMES: usize = 98;

pub const RATE_MIN: u32 = 40_000;
pub const RATE_MAX: u32 = 50_000;

const REFERENCE_RATE: f64 = 50_000.0;
const REFERENCE_HOP: f64 = 512.0;
const REFERENCE_HALF_WINDOW: f64 = 1024.0;

/// Upper filterbank edge in Hz, shared by all rates.
pub const MEL_FMAX: f64 = 20_000.0;

/// Floor applied before taking logarithms.
pub const DB_FLOOR: f64 = 1e-10;

/// Centered, reflect-padded, Hann-windowed STFT geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftParams {
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub centered: bool,
}

impl StftParams {
    pub fn new(n_fft: usize, win_length: usize, hop_length: usize) -> Result<Self> {
        if hop_length == 0 || hop_length > win_length || win_length > n_fft {
            return Err(Error::InvalidParameter(format!(
                "need 0 < hop <= win <= n_fft, got hop {hop_length}, win {win_length}, n_fft {n_fft}"
            )));
        }
        Ok(Self {
            n_fft,
            win_length,
            hop_length,
            centered: true,
        })
    }

    /// Frames produced for `n` samples with centered padding.
    pub fn frame_count(&self, n: usize) -> usize {
        1 + n / self.hop_length
    }
}

/// Scales the 50 kHz geometry (window 2048, hop 512) to `sample_rate`.
///
/// The FFT size is twice the next power of two above the window; the extra
/// zero padding samples the spectrum finely enough that the narrow low mel
/// filters see the same energy at every rate.
pub fn adapt_params(sample_rate: u32) -> Result<StftParams> {
    if !(RATE_MIN..=RATE_MAX).contains(&sample_rate) {
        return Err(Error::RateOutOfRange(sample_rate, RATE_MIN, RATE_MAX));
    }
    let sr = sample_rate as f64;
    let hop = (sr * REFERENCE_HOP / REFERENCE_RATE).round() as usize;
    let win = 2 * (sr * REFERENCE_HALF_WINDOW / REFERENCE_RATE).round() as usize;
    StftParams::new(2 * win.next_power_of_two(), win, hop)
}

/// Linear-frequency power matrix, `n_bins` rows x `n_frames` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    pub n_bins: usize,
    pub n_frames: usize,
    pub data: Vec<f64>,
}

impl PowerSpectrum {
    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.data[bin * self.n_frames + frame]
    }
}

/// Periodic Hann window of `win_length`, zero-padded symmetrically to `n_fft`.
pub fn hann_window(params: &StftParams) -> Vec<f64> {
    let mut w = vec![0.0; params.n_fft];
    let offset = (params.n_fft - params.win_length) / 2;
    let n = params.win_length as f64;
    for i in 0..params.win_length {
        w[offset + i] = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos();
    }
    w
}

fn reflect_pad(x: &[f32], pad: usize) -> Result<Vec<f64>> {
    if x.len() <= pad {
        return Err(Error::TooShort {
            len: x.len(),
            need: pad + 1,
        });
    }
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i] as f64));
    out.extend(x.iter().map(|&s| s as f64));
    out.extend((0..pad).map(|i| x[n - 2 - i] as f64));
    Ok(out)
}

fn plan_fft(n: usize) -> Arc<dyn Fft<f64>> {
    FftPlanner::<f64>::new().plan_fft_forward(n)
}

/// |STFT|^2 with `n_fft / 2 + 1` frequency rows (no scaling).
pub fn stft_power(samples: &[f32], params: &StftParams) -> Result<PowerSpectrum> {
    let n_fft = params.n_fft;
    let padded = reflect_pad(samples, n_fft / 2)?;
    let n_frames = params.frame_count(samples.len());
    let n_bins = n_fft / 2 + 1;
    let window = hann_window(params);
    let fft = plan_fft(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut data = vec![0.0; n_bins * n_frames];
    for t in 0..n_frames {
        let frame = &padded[t * params.hop_length..t * params.hop_length + n_fft];
        for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&window) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, c) in buf.iter().take(n_bins).enumerate() {
            data[k * n_frames + t] = c.norm_sqr();
        }
    }
    Ok(PowerSpectrum {
        n_bins,
        n_frames,
        data,
    })
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= MIN_LOG_HZ {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        MIN_LOG_HZ * (logstep * (mel - min_log_mel)).exp()
    } else {
        F_SP * mel
    }
}

/// Center frequencies (Hz) of the `n_mels` filters for a band edge `fmax`.
pub fn mel_center_frequencies(n_mels: usize, fmax: f64) -> Vec<f64> {
    let edges = mel_edges(n_mels, 0.0, fmax);
    edges[1..=n_mels].to_vec()
}

fn mel_edges(n_mels: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let lo = hz_to_mel(fmin);
    let hi = hz_to_mel(fmax);
    (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Filterbank edge used for `sample_rate`: 20 kHz, or Nyquist below 40 kHz.
pub fn filterbank_fmax(sample_rate: u32) -> f64 {
    MEL_FMAX.min(sample_rate as f64 / 2.0)
}

/// Area-normalized triangular Slaney filters, `n_mels` rows x `n_fft/2 + 1` bins.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize) -> Result<Vec<Vec<f64>>> {
    if n_mels == 0 {
        return Err(Error::InvalidParameter("n_mels must be at least 1".into()));
    }
    let n_bins = n_fft / 2 + 1;
    let sr = sample_rate as f64;
    let freqs: Vec<f64> = (0..n_bins).map(|k| k as f64 * sr / n_fft as f64).collect();
    let edges = mel_edges(n_mels, 0.0, filterbank_fmax(sample_rate));
    let mut bank = vec![vec![0.0; n_bins]; n_mels];
    for (i, row) in bank.iter_mut().enumerate() {
        let (lo, mid, hi) = (edges[i], edges[i + 1], edges[i + 2]);
        let enorm = 2.0 / (hi - lo);
        for (w, &f) in row.iter_mut().zip(&freqs) {
            let lower = (f - lo) / (mid - lo);
            let upper = (hi - f) / (hi - mid);
            *w = lower.min(upper).max(0.0) * enorm;
        }
        if row.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mel filter {i} has no FFT bins at {sample_rate} Hz / n_fft {n_fft}"
            )));
        }
    }
    Ok(bank)
}

/// A fixed-shape mel power spectrogram, `n_mels` rows x `n_frames` columns,
/// stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub n_mels: usize,
    pub n_frames: usize,
    pub power: Vec<f32>,
    pub source_rate: u32,
    pub recording_id: String,
    pub meta: ClipMeta,
}

impl MelSpectrogram {
    pub fn zeros(recording_id: impl Into<String>, source_rate: u32) -> Self {
        Self {
            n_mels: N_MELS,
            n_frames: N_FRAMES,
            power: vec![0.0; N_MELS * N_FRAMES],
            source_rate,
            recording_id: recording_id.into(),
            meta: ClipMeta::default(),
        }
    }

    pub fn get(&self, mel: usize, frame: usize) -> f32 {
        self.power[mel * self.n_frames + frame]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_mels, self.n_frames)
    }

    pub fn to_db(&self) -> Vec<f64> {
        self.power.iter().map(|&p| power_to_db(p as f64)).collect()
    }

    /// Network input: the spectrogram in the chosen scale, min-max normalized
    /// to [0, 1]. A constant spectrogram maps to all zeros.
    pub fn model_input(&self, scale: InputScale) -> Vec<f64> {
        let mut v: Vec<f64> = match scale {
            InputScale::Db => self.to_db(),
            InputScale::Power => self.power.iter().map(|&p| p as f64).collect(),
        };
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for x in &mut v {
            *x = if span > 0.0 { (*x - lo) / span } else { 0.0 };
        }
        v
    }
}

/// Amplitude scale fed to the network before per-example min-max scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputScale {
    #[default]
    Db,
    Power,
}

impl InputScale {
    pub fn as_str(self) -> &'static str {
        match self {
            InputScale::Db => "db",
            InputScale::Power => "power",
        }
    }
}

impl std::str::FromStr for InputScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "db" => Ok(InputScale::Db),
            "power" => Ok(InputScale::Power),
            other => Err(Error::InvalidParameter(format!("unknown input scale {other:?}"))),
        }
    }
}

/// Computes the 128 x 98 mel spectrogram of a 1-s clip.
///
/// Power is scaled by `1 / (n_fft * sum(w^2))`, which makes a sinusoid of a
/// given amplitude land at the same mel power whatever the sampling rate.
pub fn mel_spectrogram(clip: &AudioClip) -> Result<MelSpectrogram> {
    let params = adapt_params(clip.sample_rate)?;
    let stft = stft_power(&clip.samples, &params)?;
    let bank = SparseBank::new(&mel_filterbank(clip.sample_rate, params.n_fft, N_MELS)?);
    let window = hann_window(&params);
    let scale = 1.0 / (params.n_fft as f64 * window.iter().map(|w| w * w).sum::<f64>());

    let mut power = vec![0.0f32; N_MELS * N_FRAMES];
    for (m, (start, weights)) in bank.rows.iter().enumerate() {
        for t in 0..N_FRAMES {
            // Deficit frames repeat the last computed one; extra frames are dropped.
            let src = t.min(stft.n_frames - 1);
            let mut acc = 0.0;
            for (j, w) in weights.iter().enumerate() {
                acc += w * stft.get(start + j, src);
            }
            power[m * N_FRAMES + t] = (acc * scale) as f32;
        }
    }
    Ok(MelSpectrogram {
        n_mels: N_MELS,
        n_frames: N_FRAMES,
        power,
        source_rate: clip.sample_rate,
        recording_id: clip.recording_id.clone(),
        meta: clip.meta.clone(),
    })
}

struct SparseBank {
    rows: Vec<(usize, Vec<f64>)>,
}

impl SparseBank {
    fn new(dense: &[Vec<f64>]) -> Self {
        let rows = dense
            .iter()
            .map(|row| {
                let start = row.iter().position(|&w| w > 0.0).unwrap_or(0);
                let end = row.iter().rposition(|&w| w > 0.0).map_or(start, |e| e + 1);
                (start, row[start..end].to_vec())
            })
            .collect();
        Self { rows }
    }
}

/// `10 log10(max(s, 1e-10))`.
pub fn power_to_db(s: f64) -> f64 {
    10.0 * s.max(DB_FLOOR).log10()
}

/// Mean of the per-bin dB values over all time-frequency bins.
pub fn mean_power_db(spec: &MelSpectrogram) -> f64 {
    let n = spec.power.len() as f64;
    spec.power.iter().map(|&p| power_to_db(p as f64)).sum::<f64>() / n
}

/// Elementwise arithmetic mean of equally shaped spectrograms.
pub fn mean_spectrogram(group: &[MelSpectrogram]) -> Result<MelSpectrogram> {
    let first = group.first().ok_or(Error::Empty("spectrogram group"))?;
    let mut acc = vec![0.0f64; first.power.len()];
    for s in group {
        if s.shape() != first.shape() {
            return Err(Error::ShapeMismatch {
                expected: vec![first.n_mels, first.n_frames],
                got: vec![s.n_mels, s.n_frames],
            });
        }
        for (a, &p) in acc.iter_mut().zip(&s.power) {
            *a += p as f64;
        }
    }
    let n = group.len() as f64;
    Ok(MelSpectrogram {
        n_mels: first.n_mels,
        n_frames: first.n_frames,
        power: acc.into_iter().map(|a| (a / n) as f32).collect(),
        source_rate: first.source_rate,
        recording_id: format!("mean_of_{}", group.len()),
        meta: ClipMeta::default(),
    })
}
