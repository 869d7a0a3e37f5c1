//! Precision, recall, F and MF scores, direction-set distances, wavefront
//! mismatch counts and the logistic-regression baseline.

use serde::{Deserialize, Serialize};

use crate::densee::{example_probabilities, DenseeModel, LabeledPatchSet};
use crate::error::{mismatch, Error, Result};
use crate::wavefront::WavefrontSet;

/// Confusion counts of a binary detector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryScore {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl BinaryScore {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    /// `tp / (tp + fp)`, zero when nothing was predicted.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `tp / (tp + fn)`, zero when nothing was there to find.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f_score(&self) -> f64 {
        f_from(self.precision(), self.recall())
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(&self, other: &BinaryScore) -> BinaryScore {
        BinaryScore {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }

    fn push(&mut self, pred: bool, truth: bool) {
        match (pred, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// `2PR / (P + R)`, zero when both vanish.
pub fn f_from(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Score two binary tensors entry by entry; nonzero means positive.
pub fn score(pred: &[u8], truth: &[u8]) -> Result<BinaryScore> {
    if pred.len() != truth.len() {
        return Err(mismatch(truth.len(), pred.len()));
    }
    let mut s = BinaryScore::default();
    for (&p, &t) in pred.iter().zip(truth) {
        s.push(p != 0, t != 0);
    }
    Ok(s)
}

pub fn score_labels(pred: &[bool], truth: &[bool]) -> Result<BinaryScore> {
    if pred.len() != truth.len() {
        return Err(mismatch(truth.len(), pred.len()));
    }
    let mut s = BinaryScore::default();
    for (&p, &t) in pred.iter().zip(truth) {
        s.push(p, t);
    }
    Ok(s)
}

/// Per-bin score of two wavefront sets: bin `θ` is the detector "θ is
/// singular here", bin 180 the detector "nothing is singular here".
pub fn score_head(pred: &WavefrontSet, truth: &WavefrontSet, head: usize) -> Result<BinaryScore> {
    pred.check_shape(truth)?;
    let mut s = BinaryScore::default();
    for i in 0..truth.rows() {
        for j in 0..truth.cols() {
            if head == crate::densee::SMOOTH_HEAD {
                s.push(!pred.any_at(i, j), !truth.any_at(i, j));
            } else {
                s.push(pred.get(i, j, head), truth.get(i, j, head));
            }
        }
    }
    Ok(s)
}

/// Mean F-score.
pub fn mf_score(scores: &[BinaryScore]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("score list"));
    }
    Ok(scores.iter().map(BinaryScore::f_score).sum::<f64>() / scores.len() as f64)
}

/// Mean accuracy.
pub fn mean_accuracy(scores: &[BinaryScore]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("score list"));
    }
    Ok(scores.iter().map(BinaryScore::accuracy).sum::<f64>() / scores.len() as f64)
}

/// Orientation bins as unit vectors at twice their angle, so that bins 0
/// and 179 land next to each other.
pub fn lift_bins(bins: &[usize]) -> Vec<[f64; 2]> {
    bins.iter()
        .map(|&b| {
            let (s, c) = (2.0 * b as f64).to_radians().sin_cos();
            [c, s]
        })
        .collect()
}

/// Hausdorff distance between finite direction sets under the chord metric.
///
/// The distance between an empty and a nonempty set is 1; two empty sets
/// are at distance 0.
pub fn hausdorff_direction_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return 1.0,
        _ => {}
    }
    let chord = |p: &[f64; 2], q: &[f64; 2]| (p[0] - q[0]).hypot(p[1] - q[1]);
    let directed = |x: &[[f64; 2]], y: &[[f64; 2]]| {
        x.iter()
            .map(|p| y.iter().map(|q| chord(p, q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

/// Number of entries on which two wavefront sets disagree.
pub fn wf_mismatch(pred: &WavefrontSet, truth: &WavefrontSet) -> Result<u64> {
    pred.check_shape(truth)?;
    Ok(pred
        .as_bytes()
        .iter()
        .zip(truth.as_bytes())
        .filter(|(a, b)| a != b)
        .count() as u64)
}

/// Mean mismatch over `(prediction, truth)` pairs.
pub fn mean_wf_mismatch(pairs: &[(WavefrontSet, WavefrontSet)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut total = 0u64;
    for (p, t) in pairs {
        total += wf_mismatch(p, t)?;
    }
    Ok(total as f64 / pairs.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadScore {
    pub head: usize,
    #[serde(flatten)]
    pub counts: BinaryScore,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub accuracy: f64,
}

impl HeadScore {
    pub fn new(head: usize, counts: BinaryScore) -> Self {
        Self {
            head,
            counts,
            precision: counts.precision(),
            recall: counts.recall(),
            f_score: counts.f_score(),
            accuracy: counts.accuracy(),
        }
    }
}

/// Per-head scores with their aggregates, as written by `densee eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub heads: Vec<HeadScore>,
    pub mf_score: f64,
    pub mean_accuracy: f64,
    /// Mean wavefront mismatch per image, when whole masks were compared.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_wf_mismatch: Option<f64>,
}

impl EvalReport {
    pub fn new(heads: Vec<(usize, BinaryScore)>) -> Result<Self> {
        let scores: Vec<BinaryScore> = heads.iter().map(|h| h.1).collect();
        Ok(Self {
            mf_score: mf_score(&scores)?,
            mean_accuracy: mean_accuracy(&scores)?,
            heads: heads.into_iter().map(|(h, s)| HeadScore::new(h, s)).collect(),
            mean_wf_mismatch: None,
        })
    }
}

/// Scores of every trained head of `model` that `data` has examples for,
/// thresholding the positive-class probability at `threshold`.
pub fn score_model(model: &DenseeModel, data: &LabeledPatchSet, threshold: f64) -> Result<Vec<(usize, BinaryScore)>> {
    let mut out = Vec::new();
    for head in data.heads() {
        if !model.is_trained(head) {
            continue;
        }
        let probs = example_probabilities(model, data, head)?;
        let pred: Vec<bool> = probs.iter().map(|&p| p > threshold).collect();
        let truth: Vec<bool> = data.examples(head).iter().map(|e| e.1).collect();
        out.push((head, score_labels(&pred, &truth)?));
    }
    if out.is_empty() {
        return Err(Error::Empty("trained heads with examples"));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            learning_rate: 0.5,
        }
    }
}

/// Per-head logistic regression on flattened, standardized patches, fit by
/// full-batch gradient descent and scored on `test`.
pub fn logistic_baseline(train: &LabeledPatchSet, test: &LabeledPatchSet, cfg: &LogisticConfig) -> Result<Vec<(usize, BinaryScore)>> {
    if train.patch_len() != test.patch_len() {
        return Err(mismatch(train.patch_len(), test.patch_len()));
    }
    let mut out = Vec::new();
    for head in train.heads() {
        let (x, y) = design_matrix(train, head)?;
        let model = Logistic::fit(&x, &y, train.patch_len(), cfg)
            .map_err(|e| match e {
                Error::Degenerate(msg) => Error::Degenerate(format!("head {head}: {msg}")),
                other => other,
            })?;
        let (tx, ty) = design_matrix(test, head)?;
        let pred = model.predict(&tx);
        out.push((head, score_labels(&pred, &ty)?));
    }
    Ok(out)
}

fn design_matrix(set: &LabeledPatchSet, head: usize) -> Result<(Vec<f32>, Vec<bool>)> {
    let len = set.patch_len();
    let ex = set.examples(head);
    let mut x = vec![0f32; ex.len() * len];
    for (k, &(patch, _)) in ex.iter().enumerate() {
        set.write_patch(patch, &mut x[k * len..(k + 1) * len])?;
    }
    Ok((x, ex.iter().map(|e| e.1).collect()))
}

/// Binary logistic regression over standardized features.
#[derive(Clone, Debug, PartialEq)]
pub struct Logistic {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
}

impl Logistic {
    /// Fit on `x` (row-major, `dim` columns) with labels `y`.
    pub fn fit(x: &[f32], y: &[bool], dim: usize, cfg: &LogisticConfig) -> Result<Self> {
        let n = y.len();
        if dim == 0 || x.len() != n * dim {
            return Err(mismatch(n * dim, x.len()));
        }
        let pos = y.iter().filter(|&&v| v).count();
        if pos == 0 || pos == n {
            return Err(Error::Degenerate("training labels have a single class".into()));
        }
        let mut mean = vec![0f64; dim];
        let mut var = vec![0f64; dim];
        for row in x.chunks(dim) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        for row in x.chunks(dim) {
            for ((s, &m), &v) in var.iter_mut().zip(&mean).zip(row) {
                *s += (v as f64 - m).powi(2);
            }
        }
        let inv_std: Vec<f64> = var
            .iter()
            .map(|&s| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-12 { 1.0 / sd } else { 0.0 }
            })
            .collect();
        let z: Vec<f64> = x
            .chunks(dim)
            .flat_map(|row| row.iter().zip(&mean).zip(&inv_std).map(|((&v, &m), &s)| (v as f64 - m) * s))
            .collect();

        let mut w = vec![0f64; dim];
        let mut b = 0f64;
        let mut grad = vec![0f64; dim];
        for _ in 0..cfg.iterations {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for (row, &label) in z.chunks(dim).zip(y) {
                let t = dot(row, &w) + b;
                let r = sigmoid(t) - label as u8 as f64;
                gb += r;
                for (g, &v) in grad.iter_mut().zip(row) {
                    *g += r * v;
                }
            }
            let step = cfg.learning_rate / n as f64;
            for (wi, g) in w.iter_mut().zip(&grad) {
                *wi -= step * g;
            }
            b -= step * gb;
            if !b.is_finite() {
                return Err(Error::NonFinite("logistic regression".into()));
            }
        }
        Ok(Self {
            mean,
            inv_std,
            weights: w,
            bias: b,
        })
    }

    pub fn probability(&self, row: &[f32]) -> f64 {
        let t: f64 = row
            .iter()
            .zip(&self.mean)
            .zip(&self.inv_std)
            .zip(&self.weights)
            .map(|(((&v, &m), &s), &w)| (v as f64 - m) * s * w)
            .sum();
        sigmoid(t + self.bias)
    }

    pub fn predict(&self, x: &[f32]) -> Vec<bool> {
        x.chunks(self.weights.len()).map(|row| self.probability(row) > 0.5).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_scores_one() {
        let t = [1u8, 0, 1, 1, 0];
        let s = score(&t, &t).unwrap();
        assert_eq!((s.precision(), s.recall(), s.f_score()), (1.0, 1.0, 1.0));
        assert_eq!(s.accuracy(), 1.0);
    }

    #[test]
    fn f_score_closed_form() {
        assert!((f_from(0.9, 0.95) - 2.0 * 0.855 / 1.85).abs() < 1e-12);
        assert!((f_from(0.9, 0.95) - 0.92432).abs() < 1e-5);
    }

    #[test]
    fn empty_prediction_has_zero_recall() {
        let s = score(&[0, 0, 0], &[1, 0, 1]).unwrap();
        assert_eq!((s.precision(), s.recall(), s.f_score()), (0.0, 0.0, 0.0));
        assert_eq!(s, BinaryScore::new(0, 0, 2, 1));
    }

    #[test]
    fn score_rejects_shape_mismatch() {
        assert!(score(&[0, 1], &[0]).is_err());
        assert!(wf_mismatch(&WavefrontSet::empty(3, 3), &WavefrontSet::empty(3, 4)).is_err());
    }

    #[test]
    fn mf_is_the_mean_f() {
        let one = BinaryScore::new(3, 0, 0, 4);
        let zero = BinaryScore::new(0, 2, 2, 4);
        assert_eq!(mf_score(&[one, one]).unwrap(), 1.0);
        assert_eq!(mf_score(&[one, zero]).unwrap(), 0.5);
        assert!(mf_score(&[]).is_err());
    }

    #[test]
    fn hausdorff_conventions() {
        let a = [[1.0, 0.0]];
        let b = [[0.0, 1.0]];
        assert_eq!(hausdorff_direction_distance(&a, &a), 0.0);
        assert_eq!(hausdorff_direction_distance(&a, &[]), 1.0);
        assert_eq!(hausdorff_direction_distance(&[], &a), 1.0);
        assert_eq!(hausdorff_direction_distance(&[], &[]), 0.0);
        assert!((hausdorff_direction_distance(&a, &b) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn lifted_bins_wrap_around() {
        let near = hausdorff_direction_distance(&lift_bins(&[0]), &lift_bins(&[179]));
        let far = hausdorff_direction_distance(&lift_bins(&[0]), &lift_bins(&[90]));
        assert!(near < 0.04);
        assert!((far - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mismatch_counts_spurious_entries() {
        let mut truth = WavefrontSet::empty(8, 8);
        truth.set(2, 3, 40);
        truth.set(5, 5, 90);
        let mut pred = truth.clone();
        assert_eq!(wf_mismatch(&pred, &truth).unwrap(), 0);
        for k in 0..7 {
            pred.set(k, 0, k * 10);
        }
        assert_eq!(wf_mismatch(&pred, &truth).unwrap(), 7);
        assert_eq!(mean_wf_mismatch(&[(pred.clone(), truth.clone()), (truth.clone(), truth)]).unwrap(), 3.5);
    }

    #[test]
    fn smooth_head_scores_empty_pixels() {
        let mut truth = WavefrontSet::empty(2, 2);
        truth.set(0, 0, 10);
        let pred = WavefrontSet::empty(2, 2);
        let s = score_head(&pred, &truth, crate::densee::SMOOTH_HEAD).unwrap();
        assert_eq!(s, BinaryScore::new(3, 1, 0, 0));
    }

    #[test]
    fn logistic_rejects_single_class() {
        let x = vec![0.5f32; 8];
        let err = Logistic::fit(&x, &[true; 4], 2, &LogisticConfig::default());
        assert!(matches!(err, Err(Error::Degenerate(_))));
    }

    #[test]
    fn logistic_separates_shifted_clusters() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for k in 0..200 {
            let label = k % 2 == 0;
            let base = if label { 1.0 } else { -1.0 };
            x.extend([base + 0.1 * ((k * 7 % 11) as f32 - 5.0) / 5.0, (k % 13) as f32]);
            y.push(label);
        }
        let m = Logistic::fit(&x, &y, 2, &LogisticConfig::default()).unwrap();
        let s = score_labels(&m.predict(&x), &y).unwrap();
        assert!(s.f_score() >= 0.99, "{s:?}");
    }
}
