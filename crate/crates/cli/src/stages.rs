//! Pipeline stages behind the subcommands. Each stage keys its output on a
//! hash of everything it was built from and skips work when that key is
//! unchanged.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use voicepath::analysis::{self, MAX_PROBES};
use voicepath::audio::{AudioClip, ClipMeta};
use voicepath::augment::balance;
use voicepath::features::{self, mel_spectrogram, read_mel_file, write_mel_file, MelSpectrogram, OutlierConfig};
use voicepath::hierarchy::{
    self, ClassifierReport, ExperimentData, ExperimentId, ExperimentModels, ExperimentReport, Segment,
    TrainedExperiment, UnitKey,
};
use voicepath::ingest::store::{is_fresh, stamp_path, write_atomic, write_stamp, Hasher};
use voicepath::ingest::{decode_wav, synth_dataset, write_corpus, write_wav_f32, Manifest, PipelineConfig};
use voicepath::nnet::{load_checkpoint, save_checkpoint};

use crate::layout::{build_dir, seg_name, Layout};

const INDEX: &str = "index.csv";

#[derive(Debug, Serialize, Deserialize)]
struct SegmentRow {
    recording_id: String,
    segment: u32,
    dataset: String,
    gender: String,
    label: String,
    rate: u32,
    file: String,
}

impl SegmentRow {
    fn meta(&self) -> Result<ClipMeta> {
        Ok(ClipMeta {
            gender: Some(self.gender.parse()?),
            label: Some(self.label.parse()?),
            dataset: Some(self.dataset.parse()?),
            segment: Some(self.segment),
            augmented: false,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainingRecord {
    experiment: String,
    dataset_digest: String,
    classifiers: Vec<ClassifierReport>,
}

#[derive(Debug, Serialize)]
struct CkaRow {
    layer: String,
    cka: f64,
}

#[derive(Debug, Serialize)]
struct AnalysisRecord {
    experiment: String,
    probes: usize,
    cka: Vec<CkaRow>,
    power: Vec<analysis::PowerRow>,
}

fn read_stamp(artifact: &Path) -> Result<String> {
    let s = fs::read_to_string(stamp_path(artifact))
        .with_context(|| format!("{} has no build stamp", artifact.display()))?;
    Ok(s.trim().to_string())
}

fn read_rows(dir: &Path) -> Result<Vec<SegmentRow>> {
    let path = dir.join(INDEX);
    let mut rdr = csv::Reader::from_path(&path).with_context(|| format!("opening {}", path.display()))?;
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<SegmentRow>, _>>()?;
    Ok(rows)
}

pub fn synth(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    log::info!("synthesizing {} recordings (seed {})", cfg.synth.total(), cfg.seed);
    let clips = synth_dataset(&cfg.synth, cfg.seed)?;
    let manifest = write_corpus(out, &clips)?;
    let path = out.join("manifest.csv");
    manifest.save(&path)?;
    print!("{}", manifest.render_counts());
    println!("manifest written to {}", path.display());
    Ok(())
}

fn preprocess_key(cfg: &PipelineConfig, manifest: &Manifest) -> Result<String> {
    let mut h = Hasher::new();
    h.part(b"preprocess/1");
    h.part(format!("{:?}|{}|{}", cfg.silence, cfg.segment_window_s, cfg.segment_hop_s).as_bytes());
    for e in manifest.included() {
        h.part(e.recording_id.as_bytes())
            .part(format!("{}|{}|{}", e.dataset, e.gender, e.label).as_bytes());
        let path = manifest.resolve(e);
        h.file(&path).with_context(|| format!("reading {}", path.display()))?;
    }
    Ok(h.finish())
}

/// Returns the key of the (possibly rebuilt) segment set.
pub fn ensure_segments(cfg: &PipelineConfig, force: bool) -> Result<String> {
    let manifest =
        Manifest::load(&cfg.manifest).with_context(|| format!("loading manifest {}", cfg.manifest.display()))?;
    let key = preprocess_key(cfg, &manifest)?;
    let dir = Layout::new(&cfg.cache_dir).segments();
    if !force && is_fresh(&dir, &key) {
        log::info!("segments up to date");
        return Ok(key);
    }
    build_dir(&dir, |tmp| {
        let mut wtr = csv::Writer::from_path(tmp.join(INDEX))?;
        let mut n = 0;
        for e in manifest.included() {
            let path = manifest.resolve(e);
            let clip = e.label_clip(decode_wav(&path).with_context(|| format!("decoding {}", path.display()))?);
            for seg in voicepath::ingest::preprocess_clip(&clip, &cfg.silence, cfg.segment_window_s, cfg.segment_hop_s)? {
                let file = format!("{}.wav", seg_name(n));
                write_wav_f32(&tmp.join(&file), &seg)?;
                wtr.serialize(SegmentRow {
                    recording_id: seg.recording_id.clone(),
                    segment: seg.meta.segment.unwrap_or(0),
                    dataset: e.dataset.to_string(),
                    gender: e.gender.to_string(),
                    label: e.label.to_string(),
                    rate: seg.sample_rate,
                    file,
                })?;
                n += 1;
            }
        }
        wtr.flush()?;
        log::info!("{n} segments from {} recordings", manifest.included().count());
        Ok(())
    })?;
    write_stamp(&dir, &key)?;
    Ok(key)
}

pub fn preprocess(cfg: &PipelineConfig, force: bool) -> Result<()> {
    ensure_segments(cfg, force)?;
    let n = read_rows(&Layout::new(&cfg.cache_dir).segments())?.len();
    println!("{n} segments in {}", Layout::new(&cfg.cache_dir).segments().display());
    Ok(())
}

pub fn ensure_mels(cfg: &PipelineConfig, force: bool) -> Result<String> {
    let seg_key = ensure_segments(cfg, false)?;
    let layout = Layout::new(&cfg.cache_dir);
    let key = Hasher::new().part(b"featurize/1").part(seg_key.as_bytes()).finish();
    let dir = layout.mels();
    if !force && is_fresh(&dir, &key) {
        log::info!("mel spectrograms up to date");
        return Ok(key);
    }
    let rows = read_rows(&layout.segments())?;
    build_dir(&dir, |tmp| {
        for row in &rows {
            let clip = decode_wav(&layout.segments().join(&row.file))?;
            let spec = mel_spectrogram(&clip)?;
            let name = Path::new(&row.file).with_extension("mel");
            write_mel_file(&tmp.join(name), &spec)?;
        }
        log::info!("{} mel spectrograms", rows.len());
        Ok(())
    })?;
    write_stamp(&dir, &key)?;
    Ok(key)
}

pub fn featurize(cfg: &PipelineConfig, force: bool) -> Result<()> {
    ensure_mels(cfg, force)?;
    println!("mel spectrograms in {}", Layout::new(&cfg.cache_dir).mels().display());
    Ok(())
}

/// Segments with audio, labels and features, in index order.
fn load_segments(cfg: &PipelineConfig) -> Result<(Vec<Segment>, String)> {
    let key = ensure_mels(cfg, false)?;
    let layout = Layout::new(&cfg.cache_dir);
    let mut out = Vec::new();
    for row in read_rows(&layout.segments())? {
        let meta = row.meta().with_context(|| format!("segment index row for {}", row.recording_id))?;
        let mut clip: AudioClip = decode_wav(&layout.segments().join(&row.file))?;
        clip.recording_id = row.recording_id.clone();
        clip.meta = meta.clone();
        let mut spec: MelSpectrogram = read_mel_file(&layout.mels().join(Path::new(&row.file).with_extension("mel")))?;
        spec.recording_id = row.recording_id.clone();
        spec.meta = meta;
        out.push(Segment { clip, spec });
    }
    Ok((out, key))
}

fn load_data(cfg: &PipelineConfig) -> Result<(ExperimentData, String)> {
    let (segments, key) = load_segments(cfg)?;
    let data = ExperimentData::new(segments, cfg.split_ratio, cfg.seed, cfg.split_unit)?;
    Ok((data, key))
}

pub fn flag_outliers(cfg: &PipelineConfig) -> Result<()> {
    let (segments, _) = load_segments(cfg)?;
    let specs: Vec<MelSpectrogram> = segments.into_iter().map(|s| s.spec).collect();
    let flags = features::flag_outliers(&specs, &OutlierConfig::default());
    let path = Layout::new(&cfg.cache_dir).outliers();
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["recording_id", "reasons"])?;
    for f in &flags {
        let reasons: Vec<&str> = f.reasons.iter().map(|r| r.describe()).collect();
        wtr.write_record([f.recording_id.as_str(), &reasons.join("; ")])?;
        println!("{}: {}", f.recording_id, reasons.join(", "));
    }
    write_atomic(&path, &wtr.into_inner()?)?;
    println!(
        "{} recording(s) flagged for review; suggestions in {}. Set excluded=true in the manifest to drop one.",
        flags.len(),
        path.display()
    );
    Ok(())
}

pub fn augment(cfg: &PipelineConfig, force: bool) -> Result<()> {
    let (data, mels_key) = load_data(cfg)?;
    let strategy = cfg.augmentation;
    let layout = Layout::new(&cfg.cache_dir);
    let dir = layout.augmented().join(strategy.as_str());
    let key = Hasher::new()
        .part(b"augment/1")
        .part(mels_key.as_bytes())
        .part(format!("{}|{}|{}|{}", cfg.seed, cfg.split_ratio, cfg.split_unit.as_str(), cfg.experiment).as_bytes())
        .finish();
    if !force && is_fresh(&dir, &key) {
        println!("augmented sets up to date in {}", dir.display());
        return Ok(());
    }
    build_dir(&dir, |tmp| {
        for &role in cfg.experiment.roles() {
            let clips: Vec<AudioClip> = data
                .split
                .train
                .iter()
                .filter(|&&i| role.target(data.keys[i].gender, data.keys[i].label).is_some())
                .map(|&i| data.segments[i].clip.clone())
                .collect();
            let target = |c: &AudioClip| {
                let k = UnitKey::of_clip(c).expect("labelled clip");
                role.target(k.gender, k.label).expect("clip inside role population")
            };
            let classes: Vec<usize> = (0..role.classes()).collect();
            let balanced = balance(&clips, &classes, target, strategy, None, cfg.seed + role.seed_offset())?;
            let rdir = tmp.join(role.as_str());
            fs::create_dir_all(&rdir)?;
            let mut wtr = csv::Writer::from_path(rdir.join(INDEX))?;
            wtr.write_record(["file", "recording_id", "segment", "class", "augmented"])?;
            let names = role.class_names();
            let mut counts = vec![0usize; role.classes()];
            for (n, c) in balanced.iter().enumerate() {
                let file = if c.meta.augmented {
                    let f = format!("{}.wav", seg_name(n));
                    write_wav_f32(&rdir.join(&f), c)?;
                    f
                } else {
                    String::new()
                };
                let y = target(c);
                counts[y] += 1;
                wtr.write_record([
                    file.as_str(),
                    &c.recording_id,
                    &c.meta.segment.map_or(String::new(), |s| s.to_string()),
                    &names[y],
                    if c.meta.augmented { "true" } else { "false" },
                ])?;
            }
            wtr.flush()?;
            let summary: Vec<String> = names.iter().zip(&counts).map(|(n, c)| format!("{n}={c}")).collect();
            println!(
                "{} {}: {} originals + {} synthetic ({})",
                cfg.experiment,
                role.as_str(),
                clips.len(),
                balanced.len() - clips.len(),
                summary.join(" ")
            );
        }
        Ok(())
    })?;
    write_stamp(&dir, &key)?;
    println!("augmented sets in {}", dir.display());
    Ok(())
}

fn train_key(cfg: &PipelineConfig, mels_key: &str) -> String {
    let settings = format!(
        "{}|{}|{}|{}|{}|{:?}|{}|{}",
        cfg.experiment,
        cfg.seed,
        cfg.split_ratio,
        cfg.split_unit.as_str(),
        cfg.input_scale.as_str(),
        cfg.grid,
        cfg.folds,
        cfg.arch
    );
    Hasher::new()
        .part(b"train/1")
        .part(mels_key.as_bytes())
        .part(settings.as_bytes())
        .finish()
}

pub fn train(cfg: &PipelineConfig, force: bool) -> Result<()> {
    let (data, mels_key) = load_data(cfg)?;
    let exp = cfg.experiment;
    let layout = Layout::new(&cfg.cache_dir);
    let dir = layout.models(exp);
    let key = train_key(cfg, &mels_key);
    if !force && is_fresh(&dir, &key) {
        println!("{exp} models up to date in {}", dir.display());
        return Ok(());
    }
    let trained = hierarchy::train_experiment(exp, &data, &cfg.experiment_config())?;
    let echo = cfg.to_text();
    build_dir(&dir, |tmp| {
        for (role, model) in trained.models.by_role() {
            save_checkpoint(&tmp.join(format!("{}.ckpt", role.as_str())), model, &echo)?;
        }
        let record = TrainingRecord {
            experiment: exp.as_str().to_string(),
            dataset_digest: data.digest.clone(),
            classifiers: trained.classifiers.clone(),
        };
        fs::write(tmp.join("training.json"), serde_json::to_string_pretty(&record)?)?;
        Ok(())
    })?;
    write_stamp(&dir, &key)?;
    for c in &trained.classifiers {
        println!(
            "{exp} {}: lr {:e}, batch {}, epochs {}, {} synthetic, final loss {:.4}",
            c.role.as_str(),
            c.hyperparams.lr,
            c.hyperparams.batch_size,
            c.hyperparams.epochs,
            c.augmented,
            c.epoch_losses.last().copied().unwrap_or(f64::NAN)
        );
    }
    println!("models written to {}", dir.display());
    Ok(())
}

fn load_trained(cfg: &PipelineConfig, mels_key: &str) -> Result<TrainedExperiment> {
    let exp = cfg.experiment;
    let layout = Layout::new(&cfg.cache_dir);
    let dir = layout.models(exp);
    if !dir.exists() {
        bail!(
            "no trained {exp} model in {}; run `voicepath train --exp {exp}` first",
            dir.display()
        );
    }
    if read_stamp(&dir)? != train_key(cfg, mels_key) {
        bail!(
            "{exp} model in {} was trained on different data or settings; re-run `voicepath train --exp {exp}`",
            dir.display()
        );
    }
    let mut models = Vec::new();
    for &role in exp.roles() {
        let path = layout.checkpoint(exp, role);
        models.push(load_checkpoint(&path).with_context(|| format!("loading {}", path.display()))?.model);
    }
    let record: TrainingRecord = serde_json::from_str(&fs::read_to_string(dir.join("training.json"))?)?;
    Ok(TrainedExperiment {
        id: exp,
        classifiers: record.classifiers,
        models: ExperimentModels::from_roles(exp, models)?,
    })
}

pub fn evaluate(cfg: &PipelineConfig) -> Result<()> {
    let (data, mels_key) = load_data(cfg)?;
    let trained = load_trained(cfg, &mels_key)?;
    let report = hierarchy::evaluate_experiment(&trained, &data, &cfg.experiment_config())?;
    let layout = Layout::new(&cfg.cache_dir);
    write_atomic(&layout.report_json(cfg.experiment), serde_json::to_string_pretty(&report)?.as_bytes())?;
    let text = format!(
        "{}\n{}",
        hierarchy::render_results_table(std::slice::from_ref(&report)),
        hierarchy::render_class_accuracy_table(std::slice::from_ref(&report))
    );
    write_atomic(&layout.report_json(cfg.experiment).with_extension("txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

pub fn analyze(cfg: &PipelineConfig) -> Result<()> {
    let exp = cfg.experiment;
    if exp == ExperimentId::Exp1 {
        bail!("{exp} has no gender-specific classifiers to compare; use --exp Exp2, Exp3.1 or Exp3.2");
    }
    let (data, mels_key) = load_data(cfg)?;
    let trained = load_trained(cfg, &mels_key)?;
    let ExperimentModels::Hierarchy(h) = &trained.models else {
        bail!("{exp} models are not hierarchical");
    };
    let inputs: Vec<Vec<f64>> = data
        .split
        .test
        .iter()
        .filter(|&&i| !data.keys[i].label.is_healthy())
        .take(MAX_PROBES)
        .map(|&i| data.segments[i].spec.model_input(cfg.input_scale))
        .collect();
    if inputs.len() < 2 {
        bail!("need at least 2 pathological test segments for CKA, found {}", inputs.len());
    }
    let probes: Vec<&[f64]> = inputs.iter().map(|x| x.as_slice()).collect();
    let profile = analysis::cka_profile(&h.mp, &h.fp, &probes)?;
    let specs: Vec<MelSpectrogram> = data.segments.iter().map(|s| s.spec.clone()).collect();
    let power = analysis::gender_power_report(&analysis::recording_powers(&specs)?)?;

    let record = AnalysisRecord {
        experiment: exp.as_str().to_string(),
        probes: probes.len(),
        cka: profile
            .iter()
            .map(|(t, v)| CkaRow {
                layer: t.as_str().to_string(),
                cka: *v,
            })
            .collect(),
        power: power.clone(),
    };
    let text = format!(
        "CKA, {} male vs female classifier over {} test segments\n{}\nMean power by gender\n{}",
        exp,
        probes.len(),
        analysis::render_cka_profile(&profile),
        analysis::render_power_table(&power)
    );
    let dir = Layout::new(&cfg.cache_dir).reports();
    write_atomic(&dir.join("analysis.json"), serde_json::to_string_pretty(&record)?.as_bytes())?;
    write_atomic(&dir.join("analysis.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

pub fn report(cfg: &PipelineConfig) -> Result<()> {
    let layout = Layout::new(&cfg.cache_dir);
    let mut reports: Vec<ExperimentReport> = Vec::new();
    for exp in ExperimentId::ALL {
        let path = layout.report_json(exp);
        if path.exists() {
            let r = serde_json::from_str(&fs::read_to_string(&path)?)
                .with_context(|| format!("parsing {}", path.display()))?;
            reports.push(r);
        }
    }
    if reports.is_empty() {
        bail!("no evaluated experiments in {}; run `voicepath evaluate` first", layout.reports().display());
    }
    let digests: std::collections::BTreeSet<&str> = reports.iter().map(|r| r.dataset_digest.as_str()).collect();
    if digests.len() > 1 {
        log::warn!("reports come from {} different datasets", digests.len());
    }
    let mut text = format!(
        "{}\n{}",
        hierarchy::render_results_table(&reports),
        hierarchy::render_class_accuracy_table(&reports)
    );
    let analysis = layout.reports().join("analysis.txt");
    if analysis.exists() {
        text.push('\n');
        text.push_str(&fs::read_to_string(analysis)?);
    }
    write_atomic(&layout.root.join("report.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}
