use super::model::CompactResNet;

/// Fraction of the largest analytic gradient below which differences are
/// measured against that scale instead of the entry's own magnitude.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// Largest relative disagreement between `analytic` and central differences
/// of the batch loss, over every parameter.
///
/// Per entry the error is `|a - n| / max(|a|, |n|, RELATIVE_FLOOR * max_j |a_j|)`.
/// Central differences carry an O(h^2) truncation term that does not shrink
/// with the gradient, so entries that nearly cancel to zero would otherwise
/// report large relative errors with a correct backward pass.
pub fn max_relative_error(
    model: &CompactResNet,
    xs: &[&[f64]],
    ys: &[usize],
    analytic: &[f64],
    h: f64,
) -> f64 {
    let scale = analytic.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let floor = (RELATIVE_FLOOR * scale).max(f64::MIN_POSITIVE);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..model.params.len() {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let lp = probe.loss(xs, ys).expect("valid batch");
        probe.params[i] = orig - h;
        let lm = probe.loss(xs, ys).expect("valid batch");
        probe.params[i] = orig;
        let numeric = (lp - lm) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst = worst.max(rel);
    }
    worst
}
