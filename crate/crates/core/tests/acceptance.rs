//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use voicepath::analysis::{cka, mann_whitney_u, t_test, FeatureMatrix};
use voicepath::audio::{crossfade_join, AudioClip};
use voicepath::augment::{resample, time_warp, RateGrid, WarpPlan};
use voicepath::features::{mel_spectrogram, N_FRAMES, N_MELS};
use voicepath::hierarchy::{
    render_class_accuracy_table, render_results_table, run_experiment, ExperimentData, ExperimentId, ExperimentReport,
    SplitUnit,
};
use voicepath::ingest::{build_segments, synth_dataset, PipelineConfig};
use voicepath::metrics::{accuracy, mcc_binary, mcc_multiclass, weighted_f1, ConfusionMatrix};
use voicepath::nnet::{gradcheck, ArchSpec, CompactResNet, HyperGrid, Hyperparams};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    if elapsed.as_secs_f64() < limit_s as f64 {
        Ok(())
    } else {
        Err(format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64()))
    }
}

fn tone(freq: f64, rate: u32, n: usize) -> AudioClip {
    let s = (0..n).map(|i| (0.5 * (2.0 * PI * freq * i as f64 / rate as f64).sin()) as f32).collect();
    AudioClip::new(s, rate, "tone")
}

fn shape_guarantee() -> Outcome {
    let mut rates = RateGrid::default().candidates();
    rates.extend([44_100, 48_000, 50_000]);
    let mut bad = Vec::new();
    for &r in &rates {
        let mut clip = tone(220.0, r, r as usize);
        for (i, s) in clip.samples.iter_mut().enumerate() {
            *s += 0.01 * ((i * 7919) % 101) as f32 / 101.0;
        }
        let m = mel_spectrogram(&clip).map_err(|e| format!("{r} Hz: {e}"))?;
        if m.shape() != (N_MELS, N_FRAMES) || m.power.len() != N_MELS * N_FRAMES || (N_MELS, N_FRAMES) != (128, 98) {
            bad.push(r);
        }
    }
    check(bad.is_empty(), format!("{} rates give 128x98, mismatches {bad:?}", rates.len()))
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let names = |k: usize| (0..k).map(|i| format!("c{i}")).collect::<Vec<_>>();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let [tn, fp, fn_, tp]: [u64; 4] = std::array::from_fn(|_| rng.gen_range(0..40));
        if tn + fp + fn_ + tp == 0 {
            continue;
        }
        let cm = ConfusionMatrix::from_counts(vec![vec![tn, fp], vec![fn_, tp]], names(2)).map_err(|e| e.to_string())?;
        let multi = mcc_multiclass(&cm).map_err(|e| e.to_string())?;
        worst = worst.max((multi - mcc_binary(tp, fp, tn, fn_)).abs());
    }
    if worst > 1e-12 {
        return Err(format!("multiclass vs binary MCC differ by {worst:e}"));
    }
    // Accuracy and weighted F1 recounted straight from prediction streams.
    for trial in 0..200 {
        let k = 2 + trial % 6;
        let n = rng.gen_range(1..300);
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let pred: Vec<usize> = truth
            .iter()
            .map(|&t| if rng.gen_bool(0.6) { t } else { rng.gen_range(0..k) })
            .collect();
        let cm = ConfusionMatrix::from_pairs(&truth, &pred, names(k)).map_err(|e| e.to_string())?;
        let hits = truth.iter().zip(&pred).filter(|(t, p)| t == p).count();
        let acc = hits as f64 / n as f64;
        let mut f1_sum = 0.0;
        for c in 0..k {
            let tp = truth.iter().zip(&pred).filter(|&(&t, &p)| t == c && p == c).count() as f64;
            let fp = truth.iter().zip(&pred).filter(|&(&t, &p)| t != c && p == c).count() as f64;
            let fn_ = truth.iter().zip(&pred).filter(|&(&t, &p)| t == c && p != c).count() as f64;
            let support = truth.iter().filter(|&&t| t == c).count() as f64;
            let f1 = if tp + fp + fn_ > 0.0 { 2.0 * tp / (2.0 * tp + fp + fn_) } else { 0.0 };
            f1_sum += support * f1;
        }
        let f1 = f1_sum / n as f64;
        let (a, w) = (accuracy(&cm).map_err(|e| e.to_string())?, weighted_f1(&cm).map_err(|e| e.to_string())?);
        if a != acc || w != f1 {
            return Err(format!("trial {trial}: accuracy {a} vs {acc}, weighted F1 {w} vs {f1}"));
        }
    }
    Ok(format!("max MCC gap {worst:.1e} over 1000 2x2 matrices; 200 stream recounts exact"))
}

fn gradient_check() -> Outcome {
    let arch = ArchSpec {
        input_h: 128,
        input_w: 98,
        stem: 4,
        blocks: vec![(8, 2), (16, 2), (16, 2), (16, 1)],
        classes: 7,
    };
    let model = CompactResNet::new(arch, 3).map_err(|e| e.to_string())?;
    if model.n_params() > 10_000 {
        return Err(format!("{} parameters", model.n_params()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..128 * 98).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    let ys = vec![0, 3, 6, 2];
    let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    let (_, grads) = model.loss_and_grad(&refs, &ys).map_err(|e| e.to_string())?;
    let err = gradcheck::max_relative_error(&model, &refs, &ys, &grads, 1e-3);
    check(err < 1e-4, format!("max relative error {err:.2e} over {} parameters (h = 1e-3)", model.n_params()))
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Gram-Schmidt on the rows of a Gaussian matrix.
    let mut q = gaussian(d, d, rng);
    for i in 0..d {
        for j in 0..i {
            let dot: f64 = (0..d).map(|k| q[i * d + k] * q[j * d + k]).sum();
            for k in 0..d {
                q[i * d + k] -= dot * q[j * d + k];
            }
        }
        let norm = (0..d).map(|k| q[i * d + k].powi(2)).sum::<f64>().sqrt();
        for k in 0..d {
            q[i * d + k] /= norm;
        }
    }
    q
}

fn matmul(a: &[f64], n: usize, d: usize, b: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for k in 0..d {
            for j in 0..m {
                out[i * m + j] += a[i * d + k] * b[k * m + j];
            }
        }
    }
    out
}

fn cka_properties() -> Outcome {
    let (n, d) = (200, 50);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let fm = |data: Vec<f64>| FeatureMatrix::new(n, d, data).map_err(|e| e.to_string());
    let x = gaussian(n, d, &mut rng);
    let self_sim = cka(&fm(x.clone())?, &fm(x.clone())?).map_err(|e| e.to_string())?;
    let q = random_orthogonal(d, &mut rng);
    let rotated = cka(&fm(x.clone())?, &fm(matmul(&x, n, d, &q, d))?).map_err(|e| e.to_string())?;
    let scaled = cka(&fm(x.clone())?, &fm(x.iter().map(|v| 3.7 * v).collect())?).map_err(|e| e.to_string())?;
    let mut indep = Vec::new();
    for seed in 0..10 {
        let mut r = ChaCha8Rng::seed_from_u64(1000 + seed);
        let a = gaussian(n, d, &mut r);
        let b = gaussian(n, d, &mut r);
        indep.push(cka(&fm(a)?, &fm(b)?).map_err(|e| e.to_string())?);
    }
    indep.sort_by(f64::total_cmp);
    let median = 0.5 * (indep[4] + indep[5]);
    let ok = (self_sim - 1.0).abs() <= 1e-9 && (rotated - 1.0).abs() <= 1e-9 && (scaled - 1.0).abs() <= 1e-9 && median < 0.3;
    check(
        ok,
        format!(
            "CKA(X,X) - 1 = {:.1e}, rotation {:.1e}, scale {:.1e}, independent median {median:.3}",
            self_sim - 1.0,
            rotated - 1.0,
            scaled - 1.0
        ),
    )
}

fn crossfade_and_warp() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tail: Vec<f32> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let head: Vec<f32> = (0..80).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let v = 32;
    let j = crossfade_join(&tail, &head, v).map_err(|e| e.to_string())?;
    let endpoints = j.len() == tail.len() + head.len() - v
        && j[..tail.len() - v] == tail[..tail.len() - v]
        && j[tail.len() - v] == tail[tail.len() - v]
        && j[tail.len() - 1] == head[v - 1]
        && j[tail.len()..] == head[v..];
    if !endpoints {
        return Err("crossfade endpoint identities broken".into());
    }

    let n = 50_000;
    let samples: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let clip = AudioClip::new(samples.clone(), 50_000, "w");
    let perm = vec![3, 0, 4, 2, 1];
    let plan = WarpPlan::new(perm.clone(), v).map_err(|e| e.to_string())?;
    let warped = time_warp(&clip, &plan).map_err(|e| e.to_string())?;
    if warped.len() != n {
        return Err(format!("warp length {} != {n}", warped.len()));
    }
    let constant = time_warp(&AudioClip::new(vec![0.25; n], 50_000, "c"), &plan).map_err(|e| e.to_string())?;
    if constant.samples.iter().any(|&s| s != 0.25) {
        return Err("constant signal not preserved by warp".into());
    }
    // Samples outside the blended joins and the padded tail, versus the
    // source samples that never take part in a blend.
    let piece = n / 5;
    let bounds: Vec<(usize, usize)> = (0..5).map(|i| (i * piece, if i == 4 { n } else { (i + 1) * piece })).collect();
    let mut expected = Vec::new();
    let mut kept = Vec::new();
    let mut pos = 0;
    for (i, &p) in perm.iter().enumerate() {
        let (a, b) = bounds[p];
        let lo = if i == 0 { a } else { a + v };
        let hi = if i + 1 == perm.len() { b } else { b - v };
        expected.extend_from_slice(&samples[lo..hi]);
        let start = if i == 0 { 0 } else { pos };
        let len = hi - lo;
        kept.extend_from_slice(&warped.samples[start..start + len]);
        pos = start + len + v;
    }
    let key = |x: &f32| x.to_bits();
    let mut e = expected.clone();
    let mut k = kept.clone();
    e.sort_by_key(key);
    k.sort_by_key(key);
    check(
        e == k,
        format!("join endpoints exact, length {n} kept, constant stays constant, {} unblended samples match", e.len()),
    )
}

fn resampler_fidelity() -> Outcome {
    let c = tone(440.0, 48_000, 48_000);
    let back = resample(&resample(&c, 44_100).map_err(|e| e.to_string())?, 48_000).map_err(|e| e.to_string())?;
    if back.len() != c.len() {
        return Err(format!("round trip length {} != {}", back.len(), c.len()));
    }
    let num: f64 = c.samples.iter().zip(&back.samples).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum();
    let den: f64 = c.samples.iter().map(|&a| (a as f64).powi(2)).sum();
    let rel = (num / den).sqrt();
    let peak = |x: &[f32]| {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        (1..buf.len() / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap_or(0)
    };
    let drift = (peak(&back.samples) as i64 - peak(&c.samples) as i64).abs();
    check(rel < 1e-2 && drift <= 1, format!("relative L2 {rel:.2e}, peak drift {drift} bin(s)"))
}

fn statistics_oracles() -> Outcome {
    let (_, p_t) = t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).map_err(|e| e.to_string())?;
    let (_, p_u) = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).map_err(|e| e.to_string())?;
    check(
        (p_t - 0.3466).abs() <= 1e-3 && (p_u - 0.1).abs() <= 1e-6,
        format!("Welch p = {p_t:.4}, Mann-Whitney exact p = {p_u:.6}"),
    )
}

/// Criterion 8 run: Exp1, Exp2 and Exp3.2 on the default synthetic corpus.
fn synthetic_run() -> Result<(Vec<ExperimentReport>, Vec<u8>, Duration), String> {
    let t = Instant::now();
    let mut cfg = PipelineConfig::default();
    cfg.grid = HyperGrid::single(Hyperparams {
        lr: 1e-3,
        batch_size: 32,
        epochs: 30,
    });
    let clips = synth_dataset(&cfg.synth, cfg.seed).map_err(|e| e.to_string())?;
    let segments = build_segments(&clips, &cfg).map_err(|e| e.to_string())?;
    let data = ExperimentData::new(segments, cfg.split_ratio, cfg.seed, SplitUnit::Recording).map_err(|e| e.to_string())?;
    let ecfg = cfg.experiment_config();
    let mut reports = Vec::new();
    for id in [ExperimentId::Exp1, ExperimentId::Exp2, ExperimentId::Exp32] {
        reports.push(run_experiment(id, &data, &ecfg).map_err(|e| e.to_string())?.0);
    }
    let bytes = serde_json::to_vec_pretty(&reports).map_err(|e| e.to_string())?;
    Ok((reports, bytes, t.elapsed()))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: u32, name: &str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let out = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (status, detail) = match out {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n} {name}: {status} ({detail}; {:.1} s)", t.elapsed().as_secs_f64());
    };

    let limited = |limit: u64, f: fn() -> Outcome| {
        move || {
            let t = Instant::now();
            let d = f()?;
            within(t.elapsed(), limit)?;
            Ok(d)
        }
    };
    report(1, "shape guarantee", &limited(30, shape_guarantee));
    report(2, "metric oracle", &limited(10, metric_oracle));
    report(3, "gradient check", &limited(120, gradient_check));
    report(4, "CKA properties", &limited(30, cka_properties));
    report(5, "crossfade and warp", &limited(10, crossfade_and_warp));
    report(6, "resampler fidelity", &limited(30, resampler_fidelity));
    report(7, "statistics oracles", &limited(5, statistics_oracles));

    let first = std::cell::RefCell::new(None);
    report(8, "synthetic Exp1/Exp2/Exp3.2", &|| {
        let (reports, bytes, elapsed) = synthetic_run()?;
        within(elapsed, 600)?;
        let mcc = |i: usize| reports[i].mcc;
        eprint!("{}", render_results_table(&reports));
        eprint!("{}", render_class_accuracy_table(&reports));
        *first.borrow_mut() = Some(bytes);
        check(
            mcc(1) >= 0.85 && mcc(2) >= mcc(1) - 0.02,
            format!("MCC Exp1 {:.4}, Exp2 {:.4}, Exp3.2 {:.4}", mcc(0), mcc(1), mcc(2)),
        )
    });
    report(9, "determinism", &|| {
        let a = first.borrow().clone().ok_or("criterion 8 produced no report")?;
        let (_, b, elapsed) = synthetic_run()?;
        within(elapsed, 600)?;
        check(a == b, format!("{} report bytes, identical: {}", a.len(), a == b))
    });

    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
