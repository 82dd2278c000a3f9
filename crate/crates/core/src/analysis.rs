//! Representation similarity between classifiers (linear CKA) and
//! gender power statistics with significance tests.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::features::{mean_power_db, MelSpectrogram};
use crate::labels::{FinalLabel, Gender};
use crate::nnet::{CompactResNet, Tap};

/// Probe inputs used by [`cka_profile`] are capped at this many rows.
pub const MAX_PROBES: usize = 256;

/// n × d activation matrix, one row per probe input.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![rows, cols],
                got: vec![data.len()],
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::ShapeMismatch {
                    expected: vec![cols],
                    got: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Double-centered linear Gram matrix H X Xᵀ H.
    fn centered_gram(&self) -> Vec<f64> {
        let n = self.rows;
        let mut means = vec![0.0; self.cols];
        for i in 0..n {
            for (m, v) in means.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n as f64;
        }
        let centered: Vec<Vec<f64>> = (0..n)
            .map(|i| self.row(i).iter().zip(&means).map(|(v, m)| v - m).collect())
            .collect();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = crate::nnet::layers::dot(&centered[i], &centered[j]);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        // Column centering makes the Gram matrix centered already; applying H
        // again only removes rounding drift.
        let row_means: Vec<f64> = (0..n).map(|i| k[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
        let grand = row_means.iter().sum::<f64>() / n as f64;
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] += grand - row_means[i] - row_means[j];
            }
        }
        k
    }
}

/// Linear centered kernel alignment of two representations of the same
/// `n` inputs.
pub fn cka(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<f64> {
    if x.rows != y.rows {
        return Err(Error::ShapeMismatch {
            expected: vec![x.rows],
            got: vec![y.rows],
        });
    }
    if x.rows < 3 {
        return Err(Error::InvalidParameter(format!("CKA needs at least 3 rows, got {}", x.rows)));
    }
    let k = x.centered_gram();
    let l = y.centered_gram();
    let kl = crate::nnet::layers::dot(&k, &l);
    let kk = crate::nnet::layers::dot(&k, &k).sqrt();
    let ll = crate::nnet::layers::dot(&l, &l).sqrt();
    // Relative to the raw scale so round-off of a constant matrix is caught.
    let scale = |m: &FeatureMatrix| m.data.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    if kk <= 1e-12 * scale(x) || ll <= 1e-12 * scale(y) {
        return Err(Error::DegenerateRepresentation);
    }
    Ok((kl / (kk * ll)).clamp(0.0, 1.0))
}

/// Per-tap activations of `model` on `probes`, one matrix per tap.
pub fn tap_matrices(model: &CompactResNet, probes: &[&[f64]]) -> Result<Vec<(Tap, FeatureMatrix)>> {
    let shapes = model.tap_shapes();
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); shapes.len()];
    for p in probes {
        let trace = model.forward_one(p)?;
        for (buf, v) in rows.iter_mut().zip(trace.tap_values()) {
            buf.extend_from_slice(v);
        }
    }
    shapes
        .into_iter()
        .zip(rows)
        .map(|((tap, shape), data)| {
            let cols = shape.iter().product();
            Ok((tap, FeatureMatrix::new(probes.len(), cols, data)?))
        })
        .collect()
}

/// CKA between two models at every tap, in architectural order. Uses at
/// most [`MAX_PROBES`] probes.
pub fn cka_profile(a: &CompactResNet, b: &CompactResNet, probes: &[&[f64]]) -> Result<Vec<(Tap, f64)>> {
    let probes = &probes[..probes.len().min(MAX_PROBES)];
    let ta = tap_matrices(a, probes)?;
    let tb = tap_matrices(b, probes)?;
    ta.iter()
        .zip(&tb)
        .map(|((tap, x), (_, y))| Ok((*tap, cka(x, y)?)))
        .collect()
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid normal")
}

/// Shapiro–Wilk W statistic and p-value (Royston's approximation, 3 ≤ n ≤ 5000).
/// A constant sample is an error.
pub fn shapiro_wilk(samples: &[f64]) -> Result<(f64, f64)> {
    let n = samples.len();
    if n < 3 {
        return Err(Error::InvalidParameter(format!("normality test needs n >= 3, got {n}")));
    }
    if n > 5000 {
        return Err(Error::InvalidParameter(format!("normality test supports n <= 5000, got {n}")));
    }
    let mut x = samples.to_vec();
    x.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let range = x[n - 1] - x[0];
    if !(range > 0.0) {
        return Err(Error::DegenerateRange(range));
    }
    let nf = n as f64;
    let norm = std_normal();
    let mut a = vec![0.0; n];
    if n == 3 {
        a[0] = -std::f64::consts::FRAC_1_SQRT_2;
        a[2] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        let m: Vec<f64> = (1..=n)
            .map(|i| norm.inverse_cdf((i as f64 - 0.375) / (nf + 0.25)))
            .collect();
        let mm: f64 = m.iter().map(|v| v * v).sum();
        let u = 1.0 / nf.sqrt();
        let an = m[n - 1] / mm.sqrt() + poly(&[0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056], u);
        let (phi, fixed) = if n > 5 {
            let an1 = m[n - 2] / mm.sqrt() + poly(&[0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633], u);
            a[n - 2] = an1;
            a[1] = -an1;
            (
                (mm - 2.0 * m[n - 1].powi(2) - 2.0 * m[n - 2].powi(2)) / (1.0 - 2.0 * an * an - 2.0 * an1 * an1),
                2,
            )
        } else {
            ((mm - 2.0 * m[n - 1].powi(2)) / (1.0 - 2.0 * an * an), 1)
        };
        a[n - 1] = an;
        a[0] = -an;
        for i in fixed..n - fixed {
            a[i] = m[i] / phi.sqrt();
        }
    }
    let mean = x.iter().sum::<f64>() / nf;
    let ss: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let num: f64 = a.iter().zip(&x).map(|(ai, xi)| ai * xi).sum();
    let w = (num * num / ss).min(1.0);

    let p = if n == 3 {
        let p = 6.0 / std::f64::consts::PI * (w.sqrt().asin() - 0.75f64.sqrt().asin());
        p.clamp(0.0, 1.0)
    } else if n <= 11 {
        let gamma = poly(&[-2.273, 0.459], nf);
        let y = -(gamma - (1.0 - w).ln()).ln();
        let mu = poly(&[0.5440, -0.39978, 0.025054, -0.0006714], nf);
        let sigma = poly(&[1.3822, -0.77857, 0.062767, -0.0020322], nf).exp();
        1.0 - norm.cdf((y - mu) / sigma)
    } else {
        let ln_n = nf.ln();
        let y = (1.0 - w).ln();
        let mu = poly(&[-1.5861, -0.31082, -0.083751, 0.0038915], ln_n);
        let sigma = poly(&[-0.4803, -0.082676, 0.0030302], ln_n).exp();
        1.0 - norm.cdf((y - mu) / sigma)
    };
    Ok((w, p))
}

/// Shapiro–Wilk p-value.
pub fn normality_test(samples: &[f64]) -> Result<f64> {
    Ok(shapiro_wilk(samples)?.1)
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch's unequal-variance two-sided t-test: (t, p).
pub fn t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidParameter("t-test needs at least 2 values per group".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Ok(if ma == mb {
            (0.0, 1.0)
        } else {
            ((ma - mb).signum() * f64::INFINITY, 0.0)
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok((t, p.clamp(0.0, 1.0)))
}

/// Largest group size for which [`mann_whitney_u`] is always exact.
pub const MW_EXACT_MAX: usize = 20;

/// Mann–Whitney U test, two-sided. `U` counts pairs with a > b plus half
/// the ties, so `U = 0` when every value of `a` is below every value of `b`.
/// Exact (over the tie-aware permutation distribution) unless both groups
/// exceed [`MW_EXACT_MAX`]; otherwise normal approximation with tie and
/// continuity correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParameter("Mann-Whitney needs non-empty groups".into()));
    }
    let (n1, n2) = (a.len(), b.len());
    let mut u = 0.0;
    for &x in a {
        for &y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    // Doubled midranks keep tied ranks integral.
    let mut pooled: Vec<(f64, usize)> = a.iter().map(|&v| (v, 0)).chain(b.iter().map(|&v| (v, 1))).collect();
    pooled.sort_by(|p, q| p.0.partial_cmp(&q.0).expect("finite values"));
    let n = pooled.len();
    let mut ranks2 = vec![0usize; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        // Ranks i+1..=j+1 average to (i + j + 2) / 2.
        for r in &mut ranks2[i..=j] {
            *r = i + j + 2;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let mu = (n1 * n2) as f64 / 2.0;
    let p = if n1 <= MW_EXACT_MAX || n2 <= MW_EXACT_MAX {
        exact_u_pvalue(&ranks2, n1.min(n2), n1, n2, u)
    } else {
        let nf = n as f64;
        let var = (n1 * n2) as f64 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
        if var <= 0.0 {
            1.0
        } else {
            let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
            (2.0 * (1.0 - std_normal().cdf(z))).clamp(0.0, 1.0)
        }
    };
    Ok((u, p))
}

/// P(|U - μ| ≥ |u_obs - μ|) under random assignment of the pooled ranks,
/// counting subsets of size `k` by their doubled rank sum.
fn exact_u_pvalue(ranks2: &[usize], k: usize, n1: usize, n2: usize, u_obs: f64) -> f64 {
    let max_sum: usize = {
        let mut r = ranks2.to_vec();
        r.sort_unstable_by(|x, y| y.cmp(x));
        r[..k].iter().sum()
    };
    // counts[j][s]: subsets of size j with doubled rank sum s.
    let mut counts = vec![vec![0.0f64; max_sum + 1]; k + 1];
    counts[0][0] = 1.0;
    for &r in ranks2 {
        for j in (1..=k).rev() {
            let (lo, hi) = counts.split_at_mut(j);
            let (prev, cur) = (&lo[j - 1], &mut hi[0]);
            for s in (r..=max_sum).rev() {
                if prev[s - r] != 0.0 {
                    cur[s] += prev[s - r];
                }
            }
        }
    }
    // For the chosen group of size k: U_k = R_k - k(k+1)/2, with R_k = s/2.
    let mu = (n1 * n2) as f64 / 2.0;
    let dev_obs = (u_obs - mu).abs();
    let base = (k * (k + 1)) as f64 / 2.0;
    let total: f64 = counts[k].iter().sum();
    let extreme: f64 = counts[k]
        .iter()
        .enumerate()
        .filter(|(_, &c)| c != 0.0)
        .filter(|(s, _)| ((*s as f64 / 2.0 - base) - mu).abs() >= dev_obs - 1e-9)
        .map(|(_, &c)| c)
        .sum();
    (extreme / total).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestUsed {
    T,
    MannWhitney,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n: usize,
    pub mean_db: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std_db: f64,
}

impl GroupSummary {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 { mean_var(values).1.sqrt() } else { 0.0 };
        Some(Self {
            n,
            mean_db: mean,
            std_db: std,
        })
    }
}

/// One row of the gender power table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub label: String,
    pub female: Option<GroupSummary>,
    pub male: Option<GroupSummary>,
    /// Female mean minus male mean.
    pub delta_db: Option<f64>,
    pub p_value: Option<f64>,
    pub test_used: Option<TestUsed>,
    pub significant: bool,
}

/// Mean power of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingPower {
    pub recording_id: String,
    pub gender: Gender,
    pub label: FinalLabel,
    pub mean_db: f64,
}

/// Averages segment mean powers per recording. Segments without gender or
/// label metadata are an error.
pub fn recording_powers(specs: &[MelSpectrogram]) -> Result<Vec<RecordingPower>> {
    let mut acc: BTreeMap<&str, (Gender, FinalLabel, f64, usize)> = BTreeMap::new();
    for s in specs {
        let gender = s.meta.gender.ok_or_else(|| Error::MissingGender(s.recording_id.clone()))?;
        let label = s
            .meta
            .label
            .ok_or_else(|| Error::InvalidParameter(format!("segment of {} has no label", s.recording_id)))?;
        let e = acc.entry(&s.recording_id).or_insert((gender, label, 0.0, 0));
        e.2 += mean_power_db(s);
        e.3 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(id, (gender, label, sum, n))| RecordingPower {
            recording_id: id.to_string(),
            gender,
            label,
            mean_db: sum / n as f64,
        })
        .collect())
}

pub const ALPHA: f64 = 0.05;

/// Per-label female vs male comparison of recording mean power. Welch's
/// t-test is used when both sides pass the normality test, Mann–Whitney
/// otherwise (including when a side is too small to test normality).
/// Labels with fewer than 2 recordings on a side get no p-value.
pub fn gender_power_report(recordings: &[RecordingPower]) -> Result<Vec<PowerRow>> {
    let mut rows = Vec::new();
    for label in FinalLabel::ALL {
        let side = |g: Gender| {
            let mut v: Vec<f64> = recordings
                .iter()
                .filter(|r| r.label == label && r.gender == g)
                .map(|r| r.mean_db)
                .collect();
            // Order-independent results regardless of input order.
            v.sort_by(|a, b| a.partial_cmp(b).expect("finite power"));
            v
        };
        let (f, m) = (side(Gender::F), side(Gender::M));
        if f.is_empty() && m.is_empty() {
            continue;
        }
        let (female, male) = (GroupSummary::of(&f), GroupSummary::of(&m));
        let delta_db = match (&female, &male) {
            (Some(a), Some(b)) => Some(a.mean_db - b.mean_db),
            _ => None,
        };
        let (p_value, test_used) = if f.len() >= 2 && m.len() >= 2 {
            let normal = |x: &[f64]| x.len() >= 3 && shapiro_wilk(x).map_or(false, |(_, p)| p > ALPHA);
            if normal(&f) && normal(&m) {
                (Some(t_test(&f, &m)?.1), Some(TestUsed::T))
            } else {
                (Some(mann_whitney_u(&f, &m)?.1), Some(TestUsed::MannWhitney))
            }
        } else {
            (None, None)
        };
        rows.push(PowerRow {
            label: label.code().to_string(),
            female,
            male,
            delta_db,
            p_value,
            test_used,
            significant: p_value.map_or(false, |p| p < ALPHA),
        });
    }
    Ok(rows)
}

/// Aligned text table: label, female mean ± std, male mean ± std, Δ(F−M)
/// with `*` marking p < 0.05.
pub fn render_power_table(rows: &[PowerRow]) -> String {
    let cell = |g: &Option<GroupSummary>| match g {
        Some(s) => format!("{:.2} ± {:.2}", s.mean_db, s.std_db),
        None => "-".to_string(),
    };
    let mut out = String::new();
    let _ = writeln!(out, "{:<8}{:>18}{:>18}{:>12}", "Disease", "Female (dB)", "Male (dB)", "Δ (F-M)");
    for r in rows {
        let delta = match r.delta_db {
            Some(d) => format!("{:+.3}{}", d, if r.significant { "*" } else { "" }),
            None => "-".to_string(),
        };
        let _ = writeln!(out, "{:<8}{:>18}{:>18}{:>12}", r.label, cell(&r.female), cell(&r.male), delta);
    }
    out
}

/// Aligned text of a CKA profile.
pub fn render_cka_profile(profile: &[(Tap, f64)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<8}{:>8}", "layer", "CKA");
    for (tap, v) in profile {
        let _ = writeln!(out, "{:<8}{:>8.4}", tap.as_str(), v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
        FeatureMatrix::new(rows, cols, data).unwrap()
    }

    /// Random orthogonal matrix by Gram–Schmidt on Gaussian columns.
    fn orthogonal(d: usize, seed: u64) -> Vec<Vec<f64>> {
        let g = gaussian(d, d, seed);
        let mut q: Vec<Vec<f64>> = Vec::new();
        for i in 0..d {
            let mut v = g.row(i).to_vec();
            for u in &q {
                let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= p * ui;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            q.push(v.into_iter().map(|x| x / norm).collect());
        }
        q
    }

    fn matmul(x: &FeatureMatrix, q: &[Vec<f64>]) -> FeatureMatrix {
        let d = q.len();
        let mut data = Vec::new();
        for i in 0..x.rows {
            for j in 0..d {
                data.push((0..x.cols).map(|k| x.row(i)[k] * q[k][j]).sum());
            }
        }
        FeatureMatrix::new(x.rows, d, data).unwrap()
    }

    #[test]
    fn cka_self_is_one() {
        let x = gaussian(40, 7, 1);
        assert!((cka(&x, &x).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cka_invariances() {
        let x = gaussian(50, 6, 2);
        let y = gaussian(50, 9, 3);
        let base = cka(&x, &y).unwrap();
        let xq = matmul(&x, &orthogonal(6, 4));
        assert!((cka(&xq, &y).unwrap() - base).abs() < 1e-9);
        assert!((cka(&x, &xq).unwrap() - 1.0).abs() < 1e-9);
        let scaled = FeatureMatrix::new(50, 6, x.data.iter().map(|v| -3.5 * v).collect()).unwrap();
        assert!((cka(&scaled, &y).unwrap() - base).abs() < 1e-9);
        let shifted = FeatureMatrix::new(50, 6, x.data.iter().enumerate().map(|(i, v)| v + (i % 6) as f64).collect()).unwrap();
        assert!((cka(&shifted, &y).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn independent_gaussians_have_low_cka() {
        let mut scores: Vec<f64> = (0..10)
            .map(|s| cka(&gaussian(200, 50, 100 + s), &gaussian(200, 50, 200 + s)).unwrap())
            .collect();
        scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(scores[5] < 0.3, "median {}", scores[5]);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let x = gaussian(10, 3, 1);
        let c = FeatureMatrix::new(10, 3, vec![2.0; 30]).unwrap();
        assert!(matches!(cka(&x, &c), Err(Error::DegenerateRepresentation)));
        assert!(cka(&x, &gaussian(11, 3, 1)).is_err());
    }

    #[test]
    fn cka_is_stable_under_row_permutation() {
        let x = gaussian(30, 5, 5);
        let y = gaussian(30, 4, 6);
        let perm: Vec<usize> = (0..30).map(|i| (i * 7) % 30).collect();
        let px = FeatureMatrix::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let py = FeatureMatrix::from_rows(&perm.iter().map(|&i| y.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        assert!((cka(&x, &y).unwrap() - cka(&px, &py).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn shapiro_matches_reference_values() {
        // Reference statistics and p-values from SciPy's implementation.
        let cases: [(&[f64], f64, f64); 4] = [
            (&[2.1, 3.4, 1.9, 5.6, 4.4, 3.3, 2.8, 3.9, 4.1, 2.2], 0.9524826258613804, 0.6979170251090755),
            (&[148.0, 154.0, 158.0, 160.0, 161.0, 162.0, 166.0, 170.0, 182.0, 195.0, 236.0], 0.7888146948631716, 0.006703814061898823),
            (&[1.0, 2.0, 4.0], 0.9642857142857142, 0.6368868450289689),
            (
                &[
                    0.3, 1.1, 0.9, 2.5, 0.2, 0.7, 1.6, 0.8, 3.9, 1.2, 0.5, 0.4, 2.2, 1.0, 0.6, 0.1, 1.4, 0.9, 5.2,
                    0.35, 0.75, 1.05, 0.15, 2.8, 0.45,
                ],
                0.7840737602118439,
                0.00012475671283823203,
            ),
        ];
        for (x, w, p) in cases {
            let (gw, gp) = shapiro_wilk(x).unwrap();
            assert!((gw - w).abs() < 1e-4, "W {gw} vs {w}");
            assert!((gp - p).abs() < 1e-3 * p.max(0.01), "p {gp} vs {p}");
        }
    }

    #[test]
    fn shapiro_separates_normal_from_lognormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let trials = 50;
        let mut normal_pass = 0;
        let mut lognormal_reject = 0;
        for _ in 0..trials {
            let x: Vec<f64> = (0..500).map(|_| StandardNormal.sample(&mut rng)).collect();
            if normality_test(&x).unwrap() > 0.05 {
                normal_pass += 1;
            }
            let y: Vec<f64> = x.iter().map(|v: &f64| v.exp()).collect();
            if normality_test(&y).unwrap() < 0.05 {
                lognormal_reject += 1;
            }
        }
        assert!(normal_pass * 10 >= trials * 9, "{normal_pass}/{trials}");
        assert!(lognormal_reject * 10 >= trials * 9);
    }

    #[test]
    fn shapiro_rejects_degenerate_input() {
        assert!(shapiro_wilk(&[1.0, 2.0]).is_err());
        assert!(matches!(shapiro_wilk(&[3.0; 10]), Err(Error::DegenerateRange(_))));
    }

    #[test]
    fn welch_examples() {
        let (t, p) = t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!((t + 1.0).abs() < 1e-12);
        assert!((p - 0.3466).abs() < 1e-3);
        let same = [1.0, 4.0, 2.0];
        assert_eq!(t_test(&same, &same).unwrap(), (0.0, 1.0));
        let (_, p) = t_test(&[10.0, 10.001, 9.999, 10.0], &[20.0, 20.001, 19.999, 20.0]).unwrap();
        assert!(p < 1e-6);
        // Unequal sizes and variances, reference from SciPy.
        let (t, p) = t_test(&[1.2, 3.1, 2.2, 5.0], &[7.5, 8.1, 6.9, 9.9, 10.2, 8.8]).unwrap();
        assert!((t + 5.870289090752884).abs() < 1e-9);
        assert!((p - 0.0013971020405936746).abs() < 1e-6);
        assert_eq!(t_test(&[2.0, 2.0], &[2.0, 2.0]).unwrap(), (0.0, 1.0));
    }

    /// Exact two-sided p by enumerating every split of the pooled sample.
    fn brute_force_mw(a: &[f64], b: &[f64]) -> f64 {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let n = pooled.len();
        let u_of = |mask: u32| {
            let mut u = 0.0;
            for i in 0..n {
                if mask >> i & 1 == 0 {
                    continue;
                }
                for j in 0..n {
                    if mask >> j & 1 == 1 {
                        continue;
                    }
                    u += if pooled[i] > pooled[j] { 1.0 } else if pooled[i] == pooled[j] { 0.5 } else { 0.0 };
                }
            }
            u
        };
        let mu = (a.len() * b.len()) as f64 / 2.0;
        let obs = (u_of((1u32 << a.len()) - 1) - mu).abs();
        let (mut hit, mut total) = (0usize, 0usize);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != a.len() {
                continue;
            }
            total += 1;
            if (u_of(mask) - mu).abs() >= obs - 1e-9 {
                hit += 1;
            }
        }
        hit as f64 / total as f64
    }

    #[test]
    fn mann_whitney_exact_examples() {
        let (u, p) = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(u, 0.0);
        assert!((p - 0.1).abs() < 1e-12);
        let (u, _) = mann_whitney_u(&[4.0, 5.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(u, 9.0);
        let a = [1.0, 3.0, 3.0, 7.0];
        let (u, p) = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(u, 8.0);
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mann_whitney_exact_matches_enumeration_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let n1 = rng.gen_range(1..7);
            let n2 = rng.gen_range(1..7);
            let a: Vec<f64> = (0..n1).map(|_| rng.gen_range(0..5) as f64).collect();
            let b: Vec<f64> = (0..n2).map(|_| rng.gen_range(0..5) as f64).collect();
            let (_, p) = mann_whitney_u(&a, &b).unwrap();
            assert!((p - brute_force_mw(&a, &b)).abs() < 1e-12, "{a:?} {b:?}");
        }
    }

    #[test]
    fn mann_whitney_normal_approximation_matches_reference() {
        // Reference values from SciPy (asymptotic, continuity-corrected).
        let x: Vec<f64> = (1..26).map(f64::from).collect();
        let y: Vec<f64> = (10..40).map(|v| v as f64 + 0.5).collect();
        let (u, p) = mann_whitney_u(&x, &y).unwrap();
        assert_eq!(u, 120.0);
        assert!((p - 1.693893136602701e-05).abs() < 1e-9);
        let x2 = [1., 1., 2., 2., 3., 3., 4., 4., 5., 5., 6., 6., 7., 7., 8., 8., 9., 9., 10., 10., 11., 11.];
        let y2 = [3., 3., 4., 5., 6., 7., 8., 9., 10., 11., 12., 13., 14., 15., 16., 17., 18., 19., 20., 21., 22., 23.];
        let (u, p) = mann_whitney_u(&x2, &y2).unwrap();
        assert_eq!(u, 98.0);
        assert!((p - 0.0007420388096848513).abs() < 1e-9);
    }

    #[test]
    fn mann_whitney_swap_mirrors_u() {
        let a = [1.0, 5.0, 2.5, 8.0];
        let b = [2.0, 2.5, 9.0];
        let (u1, p1) = mann_whitney_u(&a, &b).unwrap();
        let (u2, p2) = mann_whitney_u(&b, &a).unwrap();
        assert_eq!(u1 + u2, 12.0);
        assert!((p1 - p2).abs() < 1e-12);
    }

    fn synth_powers(seed: u64, female: (f64, f64), male: (f64, f64), n: usize) -> Vec<RecordingPower> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for i in 0..n {
            for (g, (m, s)) in [(Gender::F, female), (Gender::M, male)] {
                let z: f64 = StandardNormal.sample(&mut rng);
                out.push(RecordingPower {
                    recording_id: format!("{g:?}{i}"),
                    gender: g,
                    label: FinalLabel::HC,
                    mean_db: m + s * z,
                });
            }
        }
        out
    }

    #[test]
    fn power_report_flags_large_gender_gap() {
        let recs = synth_powers(7, (-9.63, 9.49), (-14.55, 9.16), 400);
        let rows = gender_power_report(&recs).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!(r.label, "HC");
        assert!((r.delta_db.unwrap() - 4.92).abs() < 1.5);
        assert!(r.significant);
        let text = render_power_table(&rows);
        assert!(text.contains("Female (dB)") && text.contains('*'));
    }

    #[test]
    fn power_report_is_antisymmetric_and_order_free() {
        let recs = synth_powers(8, (-3.0, 2.0), (-2.0, 3.0), 30);
        let rows = gender_power_report(&recs).unwrap();
        let swapped: Vec<RecordingPower> = recs
            .iter()
            .rev()
            .map(|r| RecordingPower {
                gender: r.gender.opposite(),
                ..r.clone()
            })
            .collect();
        let rows2 = gender_power_report(&swapped).unwrap();
        assert!((rows[0].delta_db.unwrap() + rows2[0].delta_db.unwrap()).abs() < 1e-12);
        assert_eq!(rows[0].p_value, rows2[0].p_value);
        let reversed: Vec<RecordingPower> = recs.iter().rev().cloned().collect();
        assert_eq!(gender_power_report(&reversed).unwrap(), rows);
    }

    #[test]
    fn small_groups_get_no_p_value() {
        let recs = vec![
            RecordingPower {
                recording_id: "a".into(),
                gender: Gender::F,
                label: FinalLabel::ALL[6],
                mean_db: -5.0,
            },
            RecordingPower {
                recording_id: "b".into(),
                gender: Gender::M,
                label: FinalLabel::ALL[6],
                mean_db: -7.0,
            },
        ];
        let rows = gender_power_report(&recs).unwrap();
        assert_eq!(rows[0].delta_db, Some(2.0));
        assert_eq!(rows[0].p_value, None);
        assert!(!rows[0].significant);
    }

    #[test]
    fn model_compared_with_itself_scores_one_everywhere() {
        use crate::nnet::ArchSpec;
        let arch = ArchSpec {
            input_h: 12,
            input_w: 10,
            stem: 3,
            blocks: vec![(4, 2), (6, 2), (6, 1), (6, 1)],
            classes: 3,
        };
        let m = CompactResNet::new(arch, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let probes: Vec<Vec<f64>> = (0..12).map(|_| (0..120).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let refs: Vec<&[f64]> = probes.iter().map(|p| p.as_slice()).collect();
        let prof = cka_profile(&m, &m, &refs).unwrap();
        assert_eq!(prof.len(), 7);
        assert_eq!(prof.iter().map(|p| p.0).collect::<Vec<_>>(), Tap::ALL.to_vec());
        assert!(prof.iter().all(|(_, v)| (v - 1.0).abs() < 1e-9));
    }
}
