use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::model::{ArchSpec, CompactResNet};
use crate::error::{Error, Result};
use crate::metrics::{mcc_multiclass, ConfusionMatrix};

/// One point of the hyperparameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub lrs: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub epochs: Vec<usize>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            lrs: vec![1e-3, 1e-4, 1e-5],
            batch_sizes: vec![32, 64],
            epochs: vec![10, 20, 30],
        }
    }
}

impl HyperGrid {
    pub fn single(hp: Hyperparams) -> Self {
        Self {
            lrs: vec![hp.lr],
            batch_sizes: vec![hp.batch_size],
            epochs: vec![hp.epochs],
        }
    }

    pub fn size(&self) -> usize {
        self.lrs.len() * self.batch_sizes.len() * self.epochs.len()
    }

    fn validate(&self) -> Result<()> {
        if self.size() == 0 {
            return Err(Error::Empty("hyperparameter grid"));
        }
        if self.batch_sizes.contains(&0) || self.epochs.contains(&0) {
            return Err(Error::InvalidParameter("batch size and epochs must be positive".into()));
        }
        if self.lrs.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(Error::InvalidParameter("learning rates must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub grid: HyperGrid,
    pub seed: u64,
    pub folds: usize,
    /// Layer widths; the class count is taken from the training call.
    pub arch: ArchSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            grid: HyperGrid::default(),
            seed: 42,
            folds: 5,
            arch: ArchSpec::standard(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training loss over the epoch's minibatches.
    pub loss: f64,
}

/// Cross-validation outcome of one grid point. `fold_mcc[k]` is `None` when
/// fold `k` was skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub params: Hyperparams,
    pub fold_mcc: Vec<Option<f64>>,
    pub mean_mcc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub grid: Vec<GridResult>,
    pub chosen: Hyperparams,
    /// True when the grid had a single point and cross-validation was not run.
    pub cv_skipped: bool,
    pub epochs: Vec<EpochStats>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: CompactResNet,
    pub history: TrainHistory,
}

/// Stratified `k`-fold assignment: returns the fold index of every example.
/// Each class is shuffled and dealt round-robin, continuing where the
/// previous class stopped so fold sizes stay within one of each other.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut fold = vec![0; labels.len()];
    let mut next = 0;
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            fold[i] = next % k;
            next += 1;
        }
    }
    fold
}

/// Trains a fresh model for `max_epochs`, calling `on_epoch(epoch, model)`
/// after every epoch. Minibatch order comes from one shuffle stream per run,
/// so stopping after E epochs gives the same model as a run configured for E.
pub fn fit(
    arch: &ArchSpec,
    xs: &[&[f64]],
    ys: &[usize],
    lr: f64,
    batch_size: usize,
    max_epochs: usize,
    seed: u64,
    mut on_epoch: impl FnMut(usize, &CompactResNet) -> Result<()>,
) -> Result<(CompactResNet, Vec<EpochStats>)> {
    if xs.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut model = CompactResNet::new(arch.clone(), seed)?;
    let mut adam = AdamState::new(model.n_params(), lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut stats = Vec::with_capacity(max_epochs);
    for epoch in 1..=max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch_size) {
            let bx: Vec<&[f64]> = chunk.iter().map(|&i| xs[i]).collect();
            let by: Vec<usize> = chunk.iter().map(|&i| ys[i]).collect();
            let (loss, grads) = model.loss_and_grad(&bx, &by)?;
            total += loss * chunk.len() as f64;
            adam.step(&mut model.params, &grads);
        }
        let loss = total / xs.len() as f64;
        log::debug!("epoch {epoch}: loss {loss:.6}");
        stats.push(EpochStats { epoch, loss });
        on_epoch(epoch, &model)?;
    }
    Ok((model, stats))
}

fn validation_mcc(model: &CompactResNet, xs: &[&[f64]], ys: &[usize]) -> Result<f64> {
    let mut cm = ConfusionMatrix::with_classes(model.arch.classes);
    for (x, &y) in xs.iter().zip(ys) {
        cm.record(y, model.predict(x)?)?;
    }
    mcc_multiclass(&cm)
}

/// Orders grid points: higher mean MCC first, then smaller E, smaller B,
/// larger learning rate.
fn better(a: &GridResult, b: &GridResult) -> bool {
    let (ma, mb) = (a.mean_mcc.unwrap_or(f64::NEG_INFINITY), b.mean_mcc.unwrap_or(f64::NEG_INFINITY));
    if ma != mb {
        return ma > mb;
    }
    let (pa, pb) = (a.params, b.params);
    if pa.epochs != pb.epochs {
        return pa.epochs < pb.epochs;
    }
    if pa.batch_size != pb.batch_size {
        return pa.batch_size < pb.batch_size;
    }
    pa.lr > pb.lr
}

/// Grid search with stratified k-fold cross-validation on mean validation
/// MCC, then a final fit of the chosen point on all of `xs`.
pub fn train(xs: &[&[f64]], ys: &[usize], classes: usize, config: &TrainConfig) -> Result<TrainedModel> {
    if xs.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if xs.len() != ys.len() {
        return Err(Error::InvalidParameter(format!("{} inputs but {} labels", xs.len(), ys.len())));
    }
    if let Some(&bad) = ys.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidParameter(format!("label {bad} outside 0..{classes}")));
    }
    config.grid.validate()?;
    let arch = ArchSpec {
        classes,
        ..config.arch.clone()
    };
    let mut epochs = config.grid.epochs.clone();
    epochs.sort_unstable();
    epochs.dedup();

    let (chosen, grid, cv_skipped) = if config.grid.size() == 1 {
        let hp = Hyperparams {
            lr: config.grid.lrs[0],
            batch_size: config.grid.batch_sizes[0],
            epochs: epochs[0],
        };
        (hp, Vec::new(), true)
    } else {
        if config.folds < 2 {
            return Err(Error::InvalidParameter("cross-validation needs at least 2 folds".into()));
        }
        let folds = stratified_folds(ys, config.folds, config.seed);
        let max_e = *epochs.last().expect("validated non-empty");
        let mut results = Vec::new();
        for &lr in &config.grid.lrs {
            for &batch_size in &config.grid.batch_sizes {
                // fold_scores[e][k]
                let mut fold_scores = vec![vec![None; config.folds]; epochs.len()];
                for k in 0..config.folds {
                    let (mut tx, mut ty, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
                    for i in 0..xs.len() {
                        if folds[i] == k {
                            vx.push(xs[i]);
                            vy.push(ys[i]);
                        } else {
                            tx.push(xs[i]);
                            ty.push(ys[i]);
                        }
                    }
                    let missing: Vec<usize> = (0..classes)
                        .filter(|c| ys.contains(c) && !ty.contains(c))
                        .collect();
                    if !missing.is_empty() || vx.is_empty() {
                        log::warn!("fold {k}: classes {missing:?} absent from training, fold skipped");
                        continue;
                    }
                    fit(&arch, &tx, &ty, lr, batch_size, max_e, config.seed, |e, m| {
                        if let Some(pos) = epochs.iter().position(|&x| x == e) {
                            fold_scores[pos][k] = Some(validation_mcc(m, &vx, &vy)?);
                        }
                        Ok(())
                    })?;
                }
                for (pos, &e) in epochs.iter().enumerate() {
                    let fold_mcc = fold_scores[pos].clone();
                    let vals: Vec<f64> = fold_mcc.iter().flatten().copied().collect();
                    let mean_mcc = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
                    results.push(GridResult {
                        params: Hyperparams {
                            lr,
                            batch_size,
                            epochs: e,
                        },
                        fold_mcc,
                        mean_mcc,
                    });
                }
            }
        }
        let best = results
            .iter()
            .fold(None::<&GridResult>, |acc, r| match acc {
                Some(b) if !better(r, b) => Some(b),
                _ => Some(r),
            })
            .expect("grid is non-empty");
        if best.mean_mcc.is_none() {
            return Err(Error::InvalidParameter("every cross-validation fold was skipped".into()));
        }
        (best.params, results, false)
    };

    let (model, epoch_stats) = fit(
        &arch,
        xs,
        ys,
        chosen.lr,
        chosen.batch_size,
        chosen.epochs,
        config.seed,
        |_, _| Ok(()),
    )?;
    Ok(TrainedModel {
        model,
        history: TrainHistory {
            grid,
            chosen,
            cv_skipped,
            epochs: epoch_stats,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny(classes: usize) -> ArchSpec {
        ArchSpec {
            input_h: 8,
            input_w: 8,
            stem: 4,
            blocks: vec![(8, 2), (8, 1)],
            classes,
        }
    }

    fn blobs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let x: Vec<f64> = (0..64)
                .map(|p| {
                    let top = p < 32;
                    let base = if (y == 0) == top { 0.8 } else { 0.2 };
                    base + rng.gen_range(-0.1..0.1)
                })
                .collect();
            xs.push(x);
            ys.push(y);
        }
        (xs, ys)
    }

    #[test]
    fn folds_are_stratified_and_balanced() {
        let labels: Vec<usize> = (0..53).map(|i| if i < 40 { 0 } else { 1 }).collect();
        let f = stratified_folds(&labels, 5, 42);
        for k in 0..5 {
            let size = f.iter().filter(|&&x| x == k).count();
            assert!((10..=11).contains(&size));
            let ones = (0..53).filter(|&i| f[i] == k && labels[i] == 1).count();
            assert!((2..=3).contains(&ones));
        }
        assert_eq!(f, stratified_folds(&labels, 5, 42));
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (xs, ys) = blobs(10, 1);
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let (m, _) = fit(&tiny(2), &refs, &ys, 0.0, 4, 2, 7, |_, _| Ok(())).unwrap();
        assert_eq!(m, CompactResNet::new(tiny(2), 7).unwrap());
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (xs, ys) = blobs(60, 2);
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let cfg = TrainConfig {
            grid: HyperGrid {
                lrs: vec![1e-2, 1e-3],
                batch_sizes: vec![8],
                epochs: vec![5, 15],
            },
            seed: 42,
            folds: 3,
            arch: tiny(2),
        };
        let t = train(&refs, &ys, 2, &cfg).unwrap();
        assert_eq!(t.history.grid.len(), 4);
        let best = t.history.grid.iter().find(|g| g.params == t.history.chosen).unwrap();
        assert!(best.mean_mcc.unwrap() >= 0.95);
        let again = train(&refs, &ys, 2, &cfg).unwrap();
        assert_eq!(again.history.chosen, t.history.chosen);
        assert_eq!(again.model, t.model);
    }

    #[test]
    fn tie_break_prefers_short_small_fast() {
        let r = |lr, batch_size, epochs| GridResult {
            params: Hyperparams { lr, batch_size, epochs },
            fold_mcc: vec![],
            mean_mcc: Some(0.5),
        };
        assert!(better(&r(1e-4, 64, 10), &r(1e-3, 32, 20)));
        assert!(better(&r(1e-4, 32, 10), &r(1e-3, 64, 10)));
        assert!(better(&r(1e-3, 32, 10), &r(1e-4, 32, 10)));
    }

    #[test]
    fn single_point_grid_skips_cross_validation() {
        let (xs, ys) = blobs(8, 3);
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let cfg = TrainConfig {
            grid: HyperGrid::single(Hyperparams { lr: 1e-3, batch_size: 4, epochs: 2 }),
            seed: 1,
            folds: 5,
            arch: tiny(2),
        };
        let t = train(&refs, &ys, 2, &cfg).unwrap();
        assert!(t.history.cv_skipped);
        assert_eq!(t.history.epochs.len(), 2);
    }

    #[test]
    fn out_of_range_labels_are_rejected() {
        let (xs, _) = blobs(4, 3);
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        assert!(train(&refs, &[0, 1, 2, 0], 2, &TrainConfig::default()).is_err());
    }
}
