//! Two-stage gender-conditioned classifier, the single-stage baseline, the
//! shared train/test split and the four-experiment harness.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::AudioClip;
use crate::augment::{balance, task_rng, AugmentStrategy};
use crate::error::{Error, Result};
use crate::features::{mel_spectrogram, InputScale, MelSpectrogram};
use crate::labels::{Disease, FinalLabel, Gender, GenderHealthLabel};
use crate::metrics::{scores, ConfusionMatrix};
use crate::nnet::{argmax, train, CompactResNet, GridResult, Hyperparams, TrainConfig};

/// Stage-1 class of an example.
pub fn stage1_label(gender: Gender, label: FinalLabel) -> GenderHealthLabel {
    match (label.is_healthy(), gender) {
        (true, Gender::M) => GenderHealthLabel::HcM,
        (true, Gender::F) => GenderHealthLabel::HcF,
        (false, Gender::M) => GenderHealthLabel::PM,
        (false, Gender::F) => GenderHealthLabel::PF,
    }
}

/// Stage-1 class from optional metadata; a missing gender is an error.
pub fn stage1_labels(gender: Option<Gender>, label: FinalLabel, id: &str) -> Result<GenderHealthLabel> {
    gender
        .map(|g| stage1_label(g, label))
        .ok_or_else(|| Error::MissingGender(id.to_string()))
}

/// A classifier in one of the experiments and the label space it sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    /// Single-stage seven-way classifier.
    Single,
    /// Stage 1: {HC_M, HC_F, P_M, P_F}.
    Pd,
    /// Stage 2 for male pathological examples.
    Mp,
    /// Stage 2 for female pathological examples.
    Fp,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Single => "single",
            Role::Pd => "pd",
            Role::Mp => "mp",
            Role::Fp => "fp",
        }
    }

    pub fn classes(self) -> usize {
        match self {
            Role::Single => FinalLabel::COUNT,
            Role::Pd => GenderHealthLabel::ALL.len(),
            Role::Mp | Role::Fp => Disease::ALL.len(),
        }
    }

    pub fn class_names(self) -> Vec<String> {
        match self {
            Role::Single => FinalLabel::ALL.iter().map(|l| l.code().to_string()).collect(),
            Role::Pd => GenderHealthLabel::ALL.iter().map(|l| l.code().to_string()).collect(),
            Role::Mp => Disease::ALL.iter().map(|d| format!("{d:?}_M")).collect(),
            Role::Fp => Disease::ALL.iter().map(|d| format!("{d:?}_F")).collect(),
        }
    }

    /// Class index of an example for this role, or `None` when the example
    /// is outside the role's training population.
    pub fn target(self, gender: Gender, label: FinalLabel) -> Option<usize> {
        match (self, label) {
            (Role::Single, l) => Some(l.index()),
            (Role::Pd, l) => Some(stage1_label(gender, l).index()),
            (Role::Mp, FinalLabel::Disease(d)) if gender == Gender::M => Some(d.index()),
            (Role::Fp, FinalLabel::Disease(d)) if gender == Gender::F => Some(d.index()),
            _ => None,
        }
    }

    /// Offset added to the base seed for this classifier.
    pub fn seed_offset(self) -> u64 {
        match self {
            Role::Single | Role::Pd => 0,
            Role::Mp => 1,
            Role::Fp => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExperimentId {
    Exp1,
    Exp2,
    Exp31,
    Exp32,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 4] = [ExperimentId::Exp1, ExperimentId::Exp2, ExperimentId::Exp31, ExperimentId::Exp32];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::Exp1 => "Exp1",
            ExperimentId::Exp2 => "Exp2",
            ExperimentId::Exp31 => "Exp3.1",
            ExperimentId::Exp32 => "Exp3.2",
        }
    }

    pub fn augmentation(self) -> Option<AugmentStrategy> {
        match self {
            ExperimentId::Exp31 => Some(AugmentStrategy::Resample),
            ExperimentId::Exp32 => Some(AugmentStrategy::TimeWarp),
            _ => None,
        }
    }

    pub fn roles(self) -> &'static [Role] {
        match self {
            ExperimentId::Exp1 => &[Role::Single],
            _ => &[Role::Pd, Role::Mp, Role::Fp],
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', '-'], ".").as_str() {
            "exp1" | "1" => Ok(Self::Exp1),
            "exp2" | "2" => Ok(Self::Exp2),
            "exp3.1" | "exp31" | "3.1" => Ok(Self::Exp31),
            "exp3.2" | "exp32" | "3.2" => Ok(Self::Exp32),
            other => Err(Error::InvalidParameter(format!("unknown experiment {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitUnit {
    Recording,
    Segment,
}

impl SplitUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitUnit::Recording => "recording",
            SplitUnit::Segment => "segment",
        }
    }
}

impl FromStr for SplitUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "recording" => Ok(Self::Recording),
            "segment" => Ok(Self::Segment),
            other => Err(Error::InvalidParameter(format!("unknown split unit {other:?}"))),
        }
    }
}

/// Identity and labels of one segment, as needed for splitting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitKey {
    pub recording_id: String,
    pub segment: Option<u32>,
    pub gender: Gender,
    pub label: FinalLabel,
}

impl UnitKey {
    pub fn of_clip(clip: &AudioClip) -> Result<Self> {
        Self::from_parts(&clip.recording_id, clip.meta.gender, clip.meta.label, clip.meta.segment)
    }

    pub fn of_spec(spec: &MelSpectrogram) -> Result<Self> {
        Self::from_parts(&spec.recording_id, spec.meta.gender, spec.meta.label, spec.meta.segment)
    }

    fn from_parts(id: &str, gender: Option<Gender>, label: Option<FinalLabel>, segment: Option<u32>) -> Result<Self> {
        Ok(Self {
            recording_id: id.to_string(),
            segment,
            gender: gender.ok_or_else(|| Error::MissingGender(id.to_string()))?,
            label: label.ok_or_else(|| Error::InvalidParameter(format!("{id} has no label")))?,
        })
    }
}

/// Indices of segments on each side of the split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split over (gender, label). With `SplitUnit::Recording` all
/// segments of a recording land on the same side. Each stratum needs at
/// least 2 units; its train share is round(ratio · n) clamped to [1, n − 1].
pub fn split(keys: &[UnitKey], ratio: f64, seed: u64, unit: SplitUnit) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidParameter(format!("split ratio {ratio} outside (0, 1)")));
    }
    // unit name -> segment indices
    let mut units: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        let name = match unit {
            SplitUnit::Recording => k.recording_id.clone(),
            SplitUnit::Segment => format!("{}#{}#{i}", k.recording_id, k.segment.map_or(-1, i64::from)),
        };
        units.entry(name).or_default().push(i);
    }
    let mut strata: BTreeMap<(Gender, FinalLabel), Vec<&String>> = BTreeMap::new();
    for (name, members) in &units {
        let first = &keys[members[0]];
        if members.iter().any(|&m| keys[m].gender != first.gender || keys[m].label != first.label) {
            return Err(Error::InvalidParameter(format!(
                "recording {} has segments with different labels",
                first.recording_id
            )));
        }
        strata.entry((first.gender, first.label)).or_default().push(name);
    }
    let mut train_set = Vec::new();
    let mut test_set = Vec::new();
    for ((gender, label), mut names) in strata {
        let n = names.len();
        if n < 2 {
            return Err(Error::ClassTooSmall(format!("{} {}", label.code(), gender.as_str()), n));
        }
        let mut rng = task_rng(seed, &format!("split/{}/{}", gender.as_str(), label.code()));
        names.shuffle(&mut rng);
        let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
        for (j, name) in names.iter().enumerate() {
            let dst = if j < n_train { &mut train_set } else { &mut test_set };
            dst.extend_from_slice(&units[*name]);
        }
    }
    train_set.sort_unstable();
    test_set.sort_unstable();
    Ok(Split {
        train: train_set,
        test: test_set,
    })
}

/// One labelled segment with its audio (needed for augmentation) and features.
#[derive(Debug, Clone)]
pub struct Segment {
    pub clip: AudioClip,
    pub spec: MelSpectrogram,
}

/// Segments plus the split every experiment shares.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub segments: Vec<Segment>,
    pub keys: Vec<UnitKey>,
    pub split: Split,
    pub split_unit: SplitUnit,
    pub digest: String,
}

impl ExperimentData {
    pub fn new(segments: Vec<Segment>, ratio: f64, seed: u64, unit: SplitUnit) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Empty("experiment dataset"));
        }
        let keys = segments.iter().map(|s| UnitKey::of_spec(&s.spec)).collect::<Result<Vec<_>>>()?;
        let split = split(&keys, ratio, seed, unit)?;
        let digest = dataset_digest(&segments);
        Ok(Self {
            segments,
            keys,
            split,
            split_unit: unit,
            digest,
        })
    }
}

/// SHA-256 over every segment's identity, labels and feature bytes.
pub fn dataset_digest(segments: &[Segment]) -> String {
    let mut h = Sha256::new();
    for s in segments {
        let m = &s.spec.meta;
        h.update(s.spec.recording_id.as_bytes());
        h.update([0]);
        h.update(format!("{:?}|{:?}|{:?}|", m.gender, m.label, m.segment).as_bytes());
        h.update(s.spec.source_rate.to_le_bytes());
        for v in &s.spec.power {
            h.update(v.to_le_bytes());
        }
    }
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub input_scale: InputScale,
}

/// Stage-1 router plus gender-specific disease classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalModel {
    pub pd: CompactResNet,
    pub mp: CompactResNet,
    pub fp: CompactResNet,
}

impl HierarchicalModel {
    /// Routes on stage 1's predicted class; healthy predictions never reach stage 2.
    pub fn predict(&self, input: &[f64]) -> Result<FinalLabel> {
        let stage1 = GenderHealthLabel::from_index(argmax(&self.pd.logits(input)?)).expect("four stage-1 outputs");
        Ok(match stage1 {
            GenderHealthLabel::HcM | GenderHealthLabel::HcF => FinalLabel::HC,
            GenderHealthLabel::PM => disease_of(&self.mp, input)?,
            GenderHealthLabel::PF => disease_of(&self.fp, input)?,
        })
    }
}

fn disease_of(model: &CompactResNet, input: &[f64]) -> Result<FinalLabel> {
    let d = Disease::from_index(argmax(&model.logits(input)?)).expect("six stage-2 outputs");
    Ok(FinalLabel::Disease(d))
}

/// Trained models of one experiment.
#[derive(Debug, Clone)]
pub enum ExperimentModels {
    Single(CompactResNet),
    Hierarchy(HierarchicalModel),
}

impl ExperimentModels {
    pub fn predict(&self, input: &[f64]) -> Result<FinalLabel> {
        match self {
            ExperimentModels::Single(m) => {
                Ok(FinalLabel::from_index(argmax(&m.logits(input)?)).expect("seven outputs"))
            }
            ExperimentModels::Hierarchy(h) => h.predict(input),
        }
    }

    pub fn by_role(&self) -> Vec<(Role, &CompactResNet)> {
        match self {
            ExperimentModels::Single(m) => vec![(Role::Single, m)],
            ExperimentModels::Hierarchy(h) => vec![(Role::Pd, &h.pd), (Role::Mp, &h.mp), (Role::Fp, &h.fp)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub role: Role,
    pub seed: u64,
    pub hyperparams: Hyperparams,
    pub cv_skipped: bool,
    pub train_counts: BTreeMap<String, usize>,
    pub augmented: usize,
    pub grid: Vec<GridResult>,
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub dataset_digest: String,
    pub split_unit: SplitUnit,
    pub input_scale: String,
    pub augmentation: Option<String>,
    pub classifiers: Vec<ClassifierReport>,
    pub test_counts: BTreeMap<String, usize>,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub mcc: f64,
    pub class_names: Vec<String>,
    /// One-vs-rest accuracy per final class.
    pub per_class_accuracy: BTreeMap<String, f64>,
    pub per_class_recall: BTreeMap<String, f64>,
    /// Rows are true classes, columns predictions, in `class_names` order.
    pub confusion: Vec<Vec<u64>>,
}

/// Training set of one role: model inputs, targets and the number of
/// synthetic examples among them.
pub fn role_training_set(
    role: Role,
    data: &ExperimentData,
    augmentation: Option<AugmentStrategy>,
    scale: InputScale,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<usize>, usize)> {
    let idx: Vec<usize> = data
        .split
        .train
        .iter()
        .copied()
        .filter(|&i| role.target(data.keys[i].gender, data.keys[i].label).is_some())
        .collect();
    if idx.is_empty() {
        return Err(Error::Empty("training set for classifier"));
    }
    let target_of = |clip: &AudioClip| -> usize {
        let k = UnitKey::of_clip(clip).expect("labelled clip");
        role.target(k.gender, k.label).expect("clip inside role population")
    };
    let mut xs: Vec<Vec<f64>> = idx.iter().map(|&i| data.segments[i].spec.model_input(scale)).collect();
    let mut ys: Vec<usize> = idx
        .iter()
        .map(|&i| role.target(data.keys[i].gender, data.keys[i].label).expect("filtered"))
        .collect();
    let mut added = 0;
    if let Some(strategy) = augmentation {
        let clips: Vec<AudioClip> = idx.iter().map(|&i| data.segments[i].clip.clone()).collect();
        let classes: Vec<usize> = (0..role.classes()).collect();
        let balanced = balance(&clips, &classes, target_of, strategy, None, seed)?;
        for clip in &balanced[clips.len()..] {
            xs.push(mel_spectrogram(clip)?.model_input(scale));
            ys.push(target_of(clip));
        }
        added = balanced.len() - clips.len();
    }
    Ok((xs, ys, added))
}

/// Trained classifiers of one experiment with their training records.
#[derive(Debug, Clone)]
pub struct TrainedExperiment {
    pub id: ExperimentId,
    pub classifiers: Vec<ClassifierReport>,
    pub models: ExperimentModels,
}

impl ExperimentModels {
    /// Reassembles models listed in `id.roles()` order.
    pub fn from_roles(id: ExperimentId, mut models: Vec<CompactResNet>) -> Result<Self> {
        if models.len() != id.roles().len() {
            return Err(Error::InvalidParameter(format!(
                "{id} needs {} models, got {}",
                id.roles().len(),
                models.len()
            )));
        }
        Ok(if id == ExperimentId::Exp1 {
            ExperimentModels::Single(models.remove(0))
        } else {
            let fp = models.pop().expect("three models");
            let mp = models.pop().expect("three models");
            let pd = models.pop().expect("three models");
            ExperimentModels::Hierarchy(HierarchicalModel { pd, mp, fp })
        })
    }
}

/// Trains the experiment's classifier(s) on the training split.
pub fn train_experiment(id: ExperimentId, data: &ExperimentData, config: &ExperimentConfig) -> Result<TrainedExperiment> {
    let mut reports = Vec::new();
    let mut models = Vec::new();
    for &role in id.roles() {
        let seed = config.train.seed + role.seed_offset();
        log::info!("{id}: training {} classifier", role.as_str());
        let (xs, ys, augmented) = role_training_set(role, data, id.augmentation(), config.input_scale, seed)?;
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let cfg = TrainConfig {
            seed,
            ..config.train.clone()
        };
        let trained = train(&refs, &ys, role.classes(), &cfg)?;
        let names = role.class_names();
        let mut train_counts = BTreeMap::new();
        for &y in &ys {
            *train_counts.entry(names[y].clone()).or_insert(0) += 1;
        }
        reports.push(ClassifierReport {
            role,
            seed,
            hyperparams: trained.history.chosen,
            cv_skipped: trained.history.cv_skipped,
            train_counts,
            augmented,
            grid: trained.history.grid.clone(),
            epoch_losses: trained.history.epochs.iter().map(|e| e.loss).collect(),
        });
        models.push(trained.model);
    }
    Ok(TrainedExperiment {
        id,
        classifiers: reports,
        models: ExperimentModels::from_roles(id, models)?,
    })
}

/// Scores the composed prediction on the untouched test split.
pub fn evaluate_experiment(
    trained: &TrainedExperiment,
    data: &ExperimentData,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    let id = trained.id;
    let class_names: Vec<String> = FinalLabel::ALL.iter().map(|l| l.code().to_string()).collect();
    let mut cm = ConfusionMatrix::new(class_names.clone());
    let mut test_counts = BTreeMap::new();
    for &i in &data.split.test {
        let truth = data.keys[i].label;
        let pred = trained.models.predict(&data.segments[i].spec.model_input(config.input_scale))?;
        cm.record(truth.index(), pred.index())?;
        *test_counts.entry(truth.code().to_string()).or_insert(0) += 1;
    }
    let s = scores(&cm)?;
    let mut per_class_accuracy = BTreeMap::new();
    let mut per_class_recall = BTreeMap::new();
    for (k, name) in class_names.iter().enumerate() {
        per_class_accuracy.insert(name.clone(), cm.class_accuracy(k));
        let support = cm.support(k);
        let recall = if support == 0 { 0.0 } else { cm.true_positives(k) as f64 / support as f64 };
        per_class_recall.insert(name.clone(), recall);
    }
    Ok(ExperimentReport {
        experiment: id.as_str().to_string(),
        seed: config.train.seed,
        dataset_digest: data.digest.clone(),
        split_unit: data.split_unit,
        input_scale: config.input_scale.as_str().to_string(),
        augmentation: id.augmentation().map(|a| a.as_str().to_string()),
        classifiers: trained.classifiers.clone(),
        test_counts,
        accuracy: s.accuracy,
        weighted_f1: s.weighted_f1,
        mcc: s.mcc,
        class_names,
        per_class_accuracy,
        per_class_recall,
        confusion: cm.counts().to_vec(),
    })
}

/// Trains on the training split and scores on the test split.
pub fn run_experiment(
    id: ExperimentId,
    data: &ExperimentData,
    config: &ExperimentConfig,
) -> Result<(ExperimentReport, ExperimentModels)> {
    let trained = train_experiment(id, data, config)?;
    let report = evaluate_experiment(&trained, data, config)?;
    Ok((report, trained.models))
}

fn hp_text(h: &Hyperparams) -> String {
    format!("{:e}, {}, {}", h.lr, h.batch_size, h.epochs)
}

/// Experiment summary: chosen hyperparameters per classifier and the three
/// test metrics.
pub fn render_results_table(reports: &[ExperimentReport]) -> String {
    let hps: Vec<String> = reports
        .iter()
        .map(|r| {
            let parts: Vec<String> = r.classifiers.iter().map(|c| format!("[{}]", hp_text(&c.hyperparams))).collect();
            parts.join(", ")
        })
        .collect();
    let width = hps.iter().map(|h| h.chars().count()).max().unwrap_or(0).max(24);
    let mut out = String::new();
    let _ = writeln!(out, "{:<8}  {:<width$}  {:>8}  {:>8}  {:>8}", "Exp", "Optimal hyperparameters", "Accuracy", "F1", "MCC");
    for (r, hp) in reports.iter().zip(&hps) {
        let _ = writeln!(
            out,
            "{:<8}  {:<width$}  {:>8.4}  {:>8.4}  {:>8.4}",
            r.experiment, hp, r.accuracy, r.weighted_f1, r.mcc
        );
    }
    out
}

/// Per-class one-vs-rest accuracy, one column per experiment.
pub fn render_class_accuracy_table(reports: &[ExperimentReport]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<22}", "Class");
    for r in reports {
        let _ = write!(out, "{:>9}", r.experiment);
    }
    out.push('\n');
    for label in FinalLabel::ALL {
        let name = match label {
            FinalLabel::HC => "Healthy control".to_string(),
            FinalLabel::Disease(d) => d.name().to_string(),
        };
        let _ = write!(out, "{name:<22}");
        for r in reports {
            let v = r.per_class_accuracy.get(label.code()).copied().unwrap_or(f64::NAN);
            let _ = write!(out, "{v:>9.3}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(id: &str, g: Gender, l: FinalLabel, seg: u32) -> UnitKey {
        UnitKey {
            recording_id: id.to_string(),
            segment: Some(seg),
            gender: g,
            label: l,
        }
    }

    #[test]
    fn stage1_table() {
        let d3 = FinalLabel::Disease(Disease::D3);
        assert_eq!(stage1_label(Gender::F, FinalLabel::HC), GenderHealthLabel::HcF);
        assert_eq!(stage1_label(Gender::M, d3), GenderHealthLabel::PM);
        assert!(matches!(stage1_labels(None, d3, "r1"), Err(Error::MissingGender(_))));
        let mut seen = std::collections::BTreeSet::new();
        for g in Gender::ALL {
            for l in FinalLabel::ALL {
                seen.insert(stage1_label(g, l));
            }
        }
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn roles_partition_the_label_space() {
        let d1 = FinalLabel::Disease(Disease::D1);
        assert_eq!(Role::Mp.target(Gender::M, d1), Some(0));
        assert_eq!(Role::Mp.target(Gender::F, d1), None);
        assert_eq!(Role::Fp.target(Gender::M, FinalLabel::HC), None);
        assert_eq!(Role::Pd.target(Gender::F, d1), Some(GenderHealthLabel::PF.index()));
        assert_eq!(Role::Single.target(Gender::F, d1), Some(1));
        assert_eq!(Role::Mp.class_names()[5], "D6_M");
    }

    #[test]
    fn experiment_names_parse() {
        for id in ExperimentId::ALL {
            assert_eq!(id.as_str().parse::<ExperimentId>().unwrap(), id);
        }
        assert_eq!(ExperimentId::Exp1.roles().len(), 1);
        assert_eq!(ExperimentId::Exp32.roles().len(), 3);
    }

    #[test]
    fn split_of_one_class_is_80_20_and_deterministic() {
        let keys: Vec<UnitKey> = (0..100).map(|i| key(&format!("r{i}"), Gender::M, FinalLabel::HC, 0)).collect();
        let s = split(&keys, 0.8, 42, SplitUnit::Recording).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (80, 20));
        assert_eq!(s, split(&keys, 0.8, 42, SplitUnit::Recording).unwrap());
        assert_ne!(s, split(&keys, 0.8, 7, SplitUnit::Recording).unwrap());
    }

    #[test]
    fn split_is_stratified_within_one_unit() {
        let mut keys = Vec::new();
        let sizes = [37, 12, 9, 5, 23, 2, 14];
        for (c, &n) in sizes.iter().enumerate() {
            for g in Gender::ALL {
                for i in 0..n {
                    keys.push(key(&format!("{c}{g:?}{i}"), g, FinalLabel::ALL[c], 0));
                }
            }
        }
        let s = split(&keys, 0.8, 42, SplitUnit::Recording).unwrap();
        for (c, &n) in sizes.iter().enumerate() {
            for g in Gender::ALL {
                let t = s.train.iter().filter(|&&i| keys[i].label == FinalLabel::ALL[c] && keys[i].gender == g).count();
                assert!((t as f64 - 0.8 * n as f64).abs() <= 1.0, "class {c}: {t} of {n}");
            }
        }
    }

    #[test]
    fn recordings_stay_on_one_side() {
        let mut keys = Vec::new();
        for r in 0..20 {
            for seg in 0..3 {
                keys.push(key(&format!("r{r}"), Gender::F, FinalLabel::HC, seg));
            }
        }
        let s = split(&keys, 0.8, 1, SplitUnit::Recording).unwrap();
        assert_eq!(s.train.len(), 48);
        for &i in &s.train {
            assert!(!s.test.iter().any(|&j| keys[j].recording_id == keys[i].recording_id));
        }
        let seg = split(&keys, 0.8, 1, SplitUnit::Segment).unwrap();
        assert_eq!(seg.train.len(), 48);
    }

    #[test]
    fn tiny_class_is_rejected_by_name() {
        let keys = vec![
            key("a", Gender::M, FinalLabel::HC, 0),
            key("b", Gender::M, FinalLabel::HC, 0),
            key("c", Gender::F, FinalLabel::Disease(Disease::D6), 0),
        ];
        let err = split(&keys, 0.8, 42, SplitUnit::Recording).unwrap_err();
        assert!(err.to_string().contains("D6"), "{err}");
    }

    #[test]
    fn results_table_lists_every_classifier() {
        let hp = Hyperparams { lr: 1e-3, batch_size: 32, epochs: 30 };
        let cr = |role| ClassifierReport {
            role,
            seed: 42,
            hyperparams: hp,
            cv_skipped: false,
            train_counts: BTreeMap::new(),
            augmented: 0,
            grid: vec![],
            epoch_losses: vec![],
        };
        let r = ExperimentReport {
            experiment: "Exp2".into(),
            seed: 42,
            dataset_digest: String::new(),
            split_unit: SplitUnit::Recording,
            input_scale: "db".into(),
            augmentation: None,
            classifiers: vec![cr(Role::Pd), cr(Role::Mp), cr(Role::Fp)],
            test_counts: BTreeMap::new(),
            accuracy: 0.9,
            weighted_f1: 0.8,
            mcc: 0.7,
            class_names: vec![],
            per_class_accuracy: BTreeMap::new(),
            per_class_recall: BTreeMap::new(),
            confusion: vec![],
        };
        let t = render_results_table(&[r.clone()]);
        assert_eq!(t.matches("[1e-3, 32, 30]").count(), 3);
        assert!(render_class_accuracy_table(&[r]).contains("ALS"));
    }
}
