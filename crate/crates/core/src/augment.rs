//! Class-balancing augmentation on raw audio: bandlimited resampling to a
//! nearby rate and piecewise time warping.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::audio::{crossfade_append, AudioClip};
use crate::error::{Error, Result};

/// Candidate target rates for resampling augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateGrid {
    pub low: u32,
    pub high: u32,
    pub step: u32,
}

impl Default for RateGrid {
    fn default() -> Self {
        Self {
            low: 40_000,
            high: 50_000,
            step: 125,
        }
    }
}

impl RateGrid {
    pub fn new(low: u32, high: u32, step: u32) -> Result<Self> {
        if step == 0 || low == 0 || high < low || (high - low) % step != 0 {
            return Err(Error::InvalidParameter(format!(
                "rate grid {low}..{high} step {step}"
            )));
        }
        Ok(Self { low, high, step })
    }

    pub fn len(&self) -> usize {
        ((self.high - self.low) / self.step + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn candidates(&self) -> Vec<u32> {
        (0..self.len() as u32).map(|i| self.low + i * self.step).collect()
    }

    pub fn contains(&self, rate: u32) -> bool {
        rate >= self.low && rate <= self.high && (rate - self.low) % self.step == 0
    }
}

/// `n` rates drawn uniformly with replacement from the grid minus `exclude`.
pub fn draw_rates<R: Rng>(grid: &RateGrid, n: usize, exclude: u32, rng: &mut R) -> Vec<u32> {
    let pool: Vec<u32> = grid.candidates().into_iter().filter(|&r| r != exclude).collect();
    if pool.is_empty() {
        return Vec::new();
    }
    (0..n).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
}

/// Zero crossings of the sinc kernel on each side.
pub const SINC_ZEROS: usize = 64;
/// Kaiser window shape parameter.
pub const KAISER_BETA: f64 = 14.77;
const TABLE_DENSITY: usize = 4096;

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Windowed sinc sampled at `TABLE_DENSITY` points per zero crossing, with
/// one trailing zero so linear interpolation never reads past the end.
fn kernel_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = SINC_ZEROS * TABLE_DENSITY;
        let norm = bessel_i0(KAISER_BETA);
        let mut t: Vec<f64> = (0..n)
            .map(|i| {
                let d = i as f64 / TABLE_DENSITY as f64;
                let sinc = if i == 0 { 1.0 } else { (PI * d).sin() / (PI * d) };
                let r = d / SINC_ZEROS as f64;
                sinc * bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / norm
            })
            .collect();
        t.push(0.0);
        t
    })
}

#[inline]
fn kernel(d: f64) -> f64 {
    let pos = d.abs() * TABLE_DENSITY as f64;
    let i = pos as usize;
    if i >= SINC_ZEROS * TABLE_DENSITY {
        return 0.0;
    }
    let t = kernel_table();
    let frac = pos - i as f64;
    t[i] + frac * (t[i + 1] - t[i])
}

/// Kaiser-windowed sinc interpolation to `target_rate`, low-passed at the
/// smaller of the two Nyquist frequencies. Samples outside the clip are zero.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 || clip.sample_rate == 0 {
        return Err(Error::InvalidParameter("sample rates must be positive".into()));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let src = clip.sample_rate as f64;
    let tgt = target_rate as f64;
    let n_in = clip.samples.len();
    let n_out = (n_in as f64 * tgt / src).round() as usize;
    let ratio = (tgt / src).min(1.0);
    let reach = SINC_ZEROS as f64 / ratio;
    let x = &clip.samples;
    let out: Vec<f32> = (0..n_out)
        .map(|j| {
            let u = j as f64 * src / tgt;
            let lo = ((u - reach).ceil().max(0.0)) as usize;
            let hi = ((u + reach).floor() as isize).min(n_in as isize - 1);
            let mut acc = 0.0;
            if hi >= lo as isize {
                for (i, &xi) in x.iter().enumerate().take(hi as usize + 1).skip(lo) {
                    acc += xi as f64 * kernel(ratio * (u - i as f64));
                }
            }
            (acc * ratio) as f32
        })
        .collect();
    Ok(clip.with_samples(out, target_rate))
}

/// Reordering of `k` equal pieces joined by `crossfade_v`-sample crossfades.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarpPlan {
    permutation: Vec<usize>,
    crossfade_v: usize,
}

impl WarpPlan {
    pub const DEFAULT_PIECES: usize = 5;
    pub const DEFAULT_CROSSFADE: usize = 32;

    pub fn new(permutation: Vec<usize>, crossfade_v: usize) -> Result<Self> {
        let k = permutation.len();
        let mut seen = vec![false; k];
        for &p in &permutation {
            if p >= k || seen[p] {
                return Err(Error::InvalidParameter(format!(
                    "{permutation:?} is not a permutation of 0..{k}"
                )));
            }
            seen[p] = true;
        }
        if k < 2 || permutation.iter().enumerate().all(|(i, &p)| i == p) {
            return Err(Error::InvalidParameter(format!(
                "warp permutation {permutation:?} leaves the clip unchanged"
            )));
        }
        if crossfade_v < 2 {
            return Err(Error::InvalidParameter("crossfade must span at least 2 samples".into()));
        }
        Ok(Self {
            permutation,
            crossfade_v,
        })
    }

    /// Uniform non-identity permutation of `k` pieces.
    pub fn random<R: Rng>(k: usize, crossfade_v: usize, rng: &mut R) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidParameter(format!("cannot reorder {k} piece(s)")));
        }
        let mut perm: Vec<usize> = (0..k).collect();
        loop {
            perm.shuffle(rng);
            if perm.iter().enumerate().any(|(i, &p)| i != p) {
                return Self::new(perm, crossfade_v);
            }
        }
    }

    pub fn k(&self) -> usize {
        self.permutation.len()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn crossfade_v(&self) -> usize {
        self.crossfade_v
    }

    /// Piece boundaries for a clip of `n` samples; the last piece takes the remainder.
    pub fn pieces(&self, n: usize) -> Vec<(usize, usize)> {
        let k = self.k();
        let base = n / k;
        (0..k)
            .map(|i| (i * base, if i + 1 == k { n } else { (i + 1) * base }))
            .collect()
    }
}

/// Splits the clip into the plan's pieces, reorders them, crossfades the
/// joins and restores the input length by repeating the last sample.
pub fn time_warp(clip: &AudioClip, plan: &WarpPlan) -> Result<AudioClip> {
    let n = clip.samples.len();
    let k = plan.k();
    let v = plan.crossfade_v;
    if n < k * v || n / k < v {
        return Err(Error::TooShort { len: n, need: k * v });
    }
    let pieces = plan.pieces(n);
    let mut out: Vec<f32> = Vec::with_capacity(n);
    for (i, &p) in plan.permutation.iter().enumerate() {
        let (a, b) = pieces[p];
        let piece = &clip.samples[a..b];
        if i == 0 {
            out.extend_from_slice(piece);
        } else {
            crossfade_append(&mut out, piece, v)?;
        }
    }
    let last = *out.last().expect("non-empty pieces");
    out.resize(n, last);
    Ok(clip.with_samples(out, clip.sample_rate))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AugmentStrategy {
    Resample,
    TimeWarp,
}

impl AugmentStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            AugmentStrategy::Resample => "resample",
            AugmentStrategy::TimeWarp => "timewarp",
        }
    }
}

impl FromStr for AugmentStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "resample" => Ok(Self::Resample),
            "timewarp" | "time_warp" | "time-warp" => Ok(Self::TimeWarp),
            other => Err(Error::InvalidParameter(format!("unknown augmentation {other:?}"))),
        }
    }
}

/// Generator for one task, derived from the global seed and a task label so
/// results do not depend on processing order.
pub fn task_rng(seed: u64, task: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(task.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Produces one synthetic variant of `clip`.
pub fn augment_clip<R: Rng>(
    clip: &AudioClip,
    strategy: AugmentStrategy,
    grid: &RateGrid,
    rng: &mut R,
) -> Result<AudioClip> {
    let mut out = match strategy {
        AugmentStrategy::Resample => {
            let rate = draw_rates(grid, 1, clip.sample_rate, rng)
                .pop()
                .ok_or_else(|| Error::InvalidParameter("rate grid has no alternative rate".into()))?;
            resample(clip, rate)?
        }
        AugmentStrategy::TimeWarp => {
            let plan = WarpPlan::random(WarpPlan::DEFAULT_PIECES, WarpPlan::DEFAULT_CROSSFADE, rng)?;
            time_warp(clip, &plan)?
        }
    };
    out.meta.augmented = true;
    Ok(out)
}

/// Appends synthetic clips to every class below `target` (default: the
/// largest class count) until each class reaches it. Each new clip is a
/// transformed copy of a uniformly drawn original of its class; originals
/// are kept as they are and in order.
///
/// `classes` lists every class that must be present; one with no originals
/// is an error.
pub fn balance<K, F>(
    clips: &[AudioClip],
    classes: &[K],
    key: F,
    strategy: AugmentStrategy,
    target: Option<usize>,
    seed: u64,
) -> Result<Vec<AudioClip>>
where
    K: Ord + Clone + std::fmt::Debug,
    F: Fn(&AudioClip) -> K,
{
    if clips.is_empty() {
        return Err(Error::Empty("dataset to balance"));
    }
    let mut members: BTreeMap<K, Vec<usize>> = classes.iter().map(|c| (c.clone(), Vec::new())).collect();
    for (i, c) in clips.iter().enumerate() {
        members.entry(key(c)).or_default().push(i);
    }
    if let Some((c, _)) = members.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::EmptyClass(format!("{c:?}")));
    }
    let max = members.values().map(Vec::len).max().unwrap_or(0);
    let target = target.unwrap_or(max);
    let grid = RateGrid::default();
    let mut out = clips.to_vec();
    for (class, idx) in &members {
        if idx.len() >= target {
            continue;
        }
        let mut pick = task_rng(seed, &format!("balance/{}/{class:?}", strategy.as_str()));
        for copy in 0..target - idx.len() {
            let src = &clips[idx[pick.gen_range(0..idx.len())]];
            let task = format!(
                "{}/{}/{:?}/{copy}",
                strategy.as_str(),
                src.recording_id,
                src.meta.segment
            );
            out.push(augment_clip(src, strategy, &grid, &mut task_rng(seed, &task))?);
        }
    }
    Ok(out)
}
