use voicepath::audio::{AudioClip, ClipMeta};
use voicepath::features::MelSpectrogram;
use voicepath::hierarchy::*;
use voicepath::ingest::{build_segments, synth_dataset, PipelineConfig, SynthConfig};
use voicepath::labels::{Disease, FinalLabel, Gender, GenderHealthLabel};
use voicepath::nnet::{ArchSpec, CompactResNet, HyperGrid, Hyperparams, TrainConfig};

fn tiny_arch(classes: usize) -> ArchSpec {
    ArchSpec {
        input_h: 128,
        input_w: 98,
        stem: 4,
        blocks: vec![(8, 2), (8, 2)],
        classes,
    }
}

fn constant_model(classes: usize, winner: usize, seed: u64) -> CompactResNet {
    let mut m = CompactResNet::new(tiny_arch(classes), seed).unwrap();
    m.zero_head();
    let r = m.tensor("fc.bias").unwrap().range();
    m.params[r.start + winner] = 1.0;
    m
}

fn meta(label: FinalLabel, gender: Gender) -> ClipMeta {
    ClipMeta {
        gender: Some(gender),
        label: Some(label),
        ..ClipMeta::default()
    }
}

/// Stripe textures: the frame period encodes the label, the mel period the
/// gender. Textures survive global pooling where band positions would not.
fn striped(label: FinalLabel, gender: Gender, id: &str) -> Segment {
    let mut spec = MelSpectrogram::zeros(id, 48_000);
    spec.meta = meta(label, gender);
    let tp = 2 + label.index();
    let mp = if gender == Gender::F { 3 } else { 7 };
    for m in 0..spec.n_mels {
        for t in 0..spec.n_frames {
            let on = t % tp == 0 || m % mp == 0;
            spec.power[m * spec.n_frames + t] = if on { 1.0 } else { 1e-6 };
        }
    }
    let clip = AudioClip::new(vec![0.0; 16], 48_000, id).with_meta(meta(label, gender));
    Segment { clip, spec }
}

#[test]
fn healthy_route_ignores_stage_two() {
    let x = vec![0.5; 128 * 98];
    for stage2 in 0..6 {
        let h = HierarchicalModel {
            pd: constant_model(4, GenderHealthLabel::HcF.index(), 1),
            mp: constant_model(6, stage2, 2),
            fp: constant_model(6, stage2, 3),
        };
        assert_eq!(h.predict(&x).unwrap(), FinalLabel::HC);
    }
}

#[test]
fn pathological_route_uses_the_predicted_gender_model() {
    let x = vec![0.5; 128 * 98];
    let h = HierarchicalModel {
        pd: constant_model(4, GenderHealthLabel::PM.index(), 1),
        mp: constant_model(6, Disease::D4.index(), 2),
        fp: constant_model(6, Disease::D1.index(), 3),
    };
    assert_eq!(h.predict(&x).unwrap(), FinalLabel::Disease(Disease::D4));
    let h = HierarchicalModel {
        pd: constant_model(4, GenderHealthLabel::PF.index(), 1),
        ..h
    };
    assert_eq!(h.predict(&x).unwrap(), FinalLabel::Disease(Disease::D1));
}

#[test]
fn output_is_healthy_iff_stage_one_says_healthy() {
    let h = HierarchicalModel {
        pd: CompactResNet::new(tiny_arch(4), 11).unwrap(),
        mp: CompactResNet::new(tiny_arch(6), 12).unwrap(),
        fp: CompactResNet::new(tiny_arch(6), 13).unwrap(),
    };
    for k in 0..20 {
        let x: Vec<f64> = (0..128 * 98).map(|i| ((i * (k + 3)) % 17) as f64 / 17.0).collect();
        let s1 = voicepath::nnet::argmax(&h.pd.logits(&x).unwrap());
        let healthy = GenderHealthLabel::from_index(s1).unwrap().is_healthy();
        assert_eq!(h.predict(&x).unwrap().is_healthy(), healthy);
    }
}

fn quick_config(epochs: usize, lr: f64) -> ExperimentConfig {
    ExperimentConfig {
        train: TrainConfig {
            grid: HyperGrid::single(Hyperparams { lr, batch_size: 16, epochs }),
            seed: 42,
            folds: 5,
            arch: tiny_arch(2),
        },
        ..ExperimentConfig::default()
    }
}

#[test]
fn separable_stages_compose_to_perfect_accuracy() {
    let mut segs = Vec::new();
    for label in FinalLabel::ALL {
        for gender in Gender::ALL {
            for i in 0..10 {
                segs.push(striped(label, gender, &format!("{label}-{gender}-{i}")));
            }
        }
    }
    let data = ExperimentData::new(segs, 0.8, 42, SplitUnit::Recording).unwrap();
    let (report, _) = run_experiment(ExperimentId::Exp2, &data, &quick_config(25, 1e-2)).unwrap();
    assert_eq!(report.accuracy, 1.0, "{:?}", report.confusion);
    assert_eq!(report.classifiers.len(), 3);
}

fn small_synthetic() -> ExperimentData {
    let mut cfg = PipelineConfig::default();
    cfg.synth = SynthConfig {
        rates: vec![44_100],
        ..SynthConfig::uniform(10)
    };
    cfg.synth.counts[0] = 20;
    let clips = synth_dataset(&cfg.synth, 5).unwrap();
    ExperimentData::new(build_segments(&clips, &cfg).unwrap(), 0.8, 42, SplitUnit::Recording).unwrap()
}

#[test]
fn experiment_reports_follow_the_harness_contract() {
    let data = small_synthetic();
    let cfg = quick_config(1, 1e-3);
    let (exp1, _) = run_experiment(ExperimentId::Exp1, &data, &cfg).unwrap();
    let (exp2, _) = run_experiment(ExperimentId::Exp2, &data, &cfg).unwrap();
    let (exp32, models) = run_experiment(ExperimentId::Exp32, &data, &cfg).unwrap();
    assert_eq!(exp1.classifiers.len(), 1);
    assert_eq!(exp2.classifiers.len(), 3);
    assert!(matches!(models, ExperimentModels::Hierarchy(_)));

    // Test split untouched by augmentation.
    assert_eq!(exp1.test_counts, exp2.test_counts);
    assert_eq!(exp2.test_counts, exp32.test_counts);
    assert_eq!(exp2.dataset_digest, exp32.dataset_digest);

    for (plain, balanced) in exp2.classifiers.iter().zip(&exp32.classifiers) {
        assert_eq!(plain.augmented, 0);
        let max = plain.train_counts.values().copied().max().unwrap();
        assert!(balanced.train_counts.values().all(|&c| c == max), "{:?}", balanced.train_counts);
        let added: usize = balanced.train_counts.values().sum::<usize>() - plain.train_counts.values().sum::<usize>();
        assert_eq!(added, balanced.augmented);
    }
    // Stage-2 classifiers never see healthy examples.
    assert!(!exp2.classifiers[1].train_counts.keys().any(|k| k.starts_with("HC")));

    let json = serde_json::to_string(&exp32).unwrap();
    let back: ExperimentReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, exp32);
}

#[test]
fn runs_are_reproducible() {
    let data = small_synthetic();
    let cfg = quick_config(1, 1e-3);
    let a = run_experiment(ExperimentId::Exp31, &data, &cfg).unwrap().0;
    let b = run_experiment(ExperimentId::Exp31, &data, &cfg).unwrap().0;
    assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
}
