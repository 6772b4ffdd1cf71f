//! ROC statistics: midrank AUROC, confusion metrics at a threshold,
//! stratified percentile bootstrap intervals and the DeLong comparison.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("scores, labels and subject ids differ in length ({scores}, {labels}, {subjects})")]
    Length {
        scores: usize,
        labels: usize,
        subjects: usize,
    },
    #[error("need at least 2 samples, got {0}")]
    TooFew(usize),
    #[error("label {0} is not 0 or 1")]
    Label(u8),
    #[error("score {0} is not a probability")]
    Score(f64),
    #[error("both classes must be present ({n_pos} positive, {n_neg} negative)")]
    SingleClass { n_pos: usize, n_neg: usize },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("paired comparison needs identical labels on the same instances")]
    Unpaired,
    #[error("zero variance with AUROC difference {0}")]
    Degenerate(f64),
}

/// Test-set scores with 1 = AMD as the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub subject_ids: Vec<String>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>, subject_ids: Vec<String>) -> Result<Self, EvalError> {
        if scores.len() != labels.len() || scores.len() != subject_ids.len() {
            return Err(EvalError::Length {
                scores: scores.len(),
                labels: labels.len(),
                subjects: subject_ids.len(),
            });
        }
        if scores.len() < 2 {
            return Err(EvalError::TooFew(scores.len()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l > 1) {
            return Err(EvalError::Label(l));
        }
        if let Some(&s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(EvalError::Score(s));
        }
        Ok(ScoreSet {
            scores,
            labels,
            subject_ids,
        })
    }

    /// Subject ids `s0, s1, ...`; handy when only scores matter.
    pub fn anonymous(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self, EvalError> {
        let ids = (0..scores.len()).map(|i| format!("s{i}")).collect();
        ScoreSet::new(scores, labels, ids)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_pos(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn n_neg(&self) -> usize {
        self.len() - self.n_pos()
    }

    fn split(&self) -> (Vec<f64>, Vec<f64>) {
        let pos = self.iter_class(1).collect();
        let neg = self.iter_class(0).collect();
        (pos, neg)
    }

    fn iter_class(&self, label: u8) -> impl Iterator<Item = f64> + '_ {
        self.scores
            .iter()
            .zip(&self.labels)
            .filter(move |(_, &l)| l == label)
            .map(|(&s, _)| s)
    }

    fn require_two_class(&self) -> Result<(), EvalError> {
        let (n_pos, n_neg) = (self.n_pos(), self.n_neg());
        if n_pos == 0 || n_neg == 0 {
            return Err(EvalError::SingleClass { n_pos, n_neg });
        }
        Ok(())
    }
}

/// 1-based ranks, ties sharing the mean of their positions.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Mann-Whitney AUROC with ties counted half, via midranks.
pub fn auroc(set: &ScoreSet) -> Result<f64, EvalError> {
    set.require_two_class()?;
    let ranks = midranks(&set.scores);
    let (n1, n0) = (set.n_pos() as f64, set.n_neg() as f64);
    let r1: f64 = ranks
        .iter()
        .zip(&set.labels)
        .filter(|(_, &l)| l == 1)
        .map(|(r, _)| r)
        .sum();
    Ok((r1 - n1 * (n1 + 1.0) / 2.0) / (n1 * n0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / (self.tp + self.tn + self.fp + self.fn_) as f64
    }

    /// NaN without positives.
    pub fn sensitivity(&self) -> f64 {
        self.tp as f64 / (self.tp + self.fn_) as f64
    }

    /// NaN without negatives.
    pub fn specificity(&self) -> f64 {
        self.tn as f64 / (self.tn + self.fp) as f64
    }
}

/// Predicted positive iff `score >= threshold`.
pub fn confusion(set: &ScoreSet, threshold: f64) -> Confusion {
    let mut c = Confusion {
        tp: 0,
        fn_: 0,
        fp: 0,
        tn: 0,
    };
    for (&s, &l) in set.scores.iter().zip(&set.labels) {
        match (s >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (false, true) => c.fn_ += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// (accuracy, sensitivity, specificity) at `threshold`.
pub fn confusion_metrics(set: &ScoreSet, threshold: f64) -> (f64, f64, f64) {
    let c = confusion(set, threshold);
    (c.accuracy(), c.sensitivity(), c.specificity())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Stratified resample number `b`: positives then negatives, each drawn
/// with replacement from its own class with the RNG `stream(seed, b)`.
pub fn stratified_resample(set: &ScoreSet, seed: u64, b: u64) -> ScoreSet {
    let (pos, neg) = set.split();
    let mut r = rng::stream(seed, b);
    let mut scores = Vec::with_capacity(set.len());
    for _ in 0..pos.len() {
        scores.push(pos[r.random_range(0..pos.len())]);
    }
    for _ in 0..neg.len() {
        scores.push(neg[r.random_range(0..neg.len())]);
    }
    let labels = std::iter::repeat_n(1u8, pos.len())
        .chain(std::iter::repeat_n(0u8, neg.len()))
        .collect();
    ScoreSet {
        scores,
        labels,
        subject_ids: vec![String::new(); set.len()],
    }
}

/// Percentile interval `[alpha/2, 1 - alpha/2]` of `metric` over `b`
/// stratified resamples.
pub fn bootstrap_ci(
    set: &ScoreSet,
    metric: impl Fn(&ScoreSet) -> f64,
    b: usize,
    alpha: f64,
    seed: u64,
) -> Result<Interval, EvalError> {
    if b < 100 {
        return Err(EvalError::Param(format!("bootstrap needs B >= 100, got {b}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EvalError::Param(format!("alpha must be in (0, 1), got {alpha}")));
    }
    set.require_two_class()?;
    let mut values: Vec<f64> = (0..b as u64)
        .map(|i| metric(&stratified_resample(set, seed, i)))
        .collect();
    values.sort_by(f64::total_cmp);
    Ok(Interval {
        low: percentile_sorted(&values, alpha / 2.0),
        high: percentile_sorted(&values, 1.0 - alpha / 2.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive; infinite for the origin.
    pub threshold: f64,
}

/// One point per distinct score, from (0, 0) to (1, 1).
pub fn roc_points(set: &ScoreSet) -> Result<Vec<RocPoint>, EvalError> {
    set.require_two_class()?;
    let (n1, n0) = (set.n_pos() as f64, set.n_neg() as f64);
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.sort_by(|&a, &b| set.scores[b].total_cmp(&set.scores[a]));
    let mut pts = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let t = set.scores[idx[i]];
        while i < idx.len() && set.scores[idx[i]] == t {
            if set.labels[idx[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        pts.push(RocPoint {
            fpr: fp as f64 / n0,
            tpr: tp as f64 / n1,
            threshold: t,
        });
    }
    Ok(pts)
}

/// Trapezoidal area under a polyline of ROC points.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Threshold maximising sensitivity + specificity - 1; first one wins ties.
pub fn youden_threshold(set: &ScoreSet) -> Result<f64, EvalError> {
    let pts = roc_points(set)?;
    let best = pts[1..]
        .iter()
        .fold((f64::NEG_INFINITY, f64::NAN), |acc, p| {
            let j = p.tpr - p.fpr;
            if j > acc.0 {
                (j, p.threshold)
            } else {
                acc
            }
        });
    Ok(best.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricCi {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auroc: MetricCi,
    pub accuracy: MetricCi,
    pub sensitivity: MetricCi,
    pub specificity: MetricCi,
    pub threshold: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Point metrics at the Youden-optimal threshold (secondary).
    pub youden: ThresholdRow,
}

/// Point estimates with stratified bootstrap intervals. Each interval is
/// widened, if needed, to contain its point estimate.
pub fn metrics_report(
    set: &ScoreSet,
    threshold: f64,
    b: usize,
    alpha: f64,
    seed: u64,
) -> Result<MetricsReport, EvalError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(EvalError::Param(format!("threshold {threshold} outside [0, 1]")));
    }
    let with_ci = |point: f64, metric: &dyn Fn(&ScoreSet) -> f64| -> Result<MetricCi, EvalError> {
        let ci = bootstrap_ci(set, metric, b, alpha, seed)?;
        Ok(MetricCi {
            point,
            ci_low: ci.low.min(point),
            ci_high: ci.high.max(point),
        })
    };
    let auc_of = |s: &ScoreSet| auroc(s).expect("stratified resample has both classes");
    let (acc, sens, spec) = confusion_metrics(set, threshold);
    let yt = youden_threshold(set)?;
    let (ya, ys, yp) = confusion_metrics(set, yt);
    Ok(MetricsReport {
        auroc: with_ci(auroc(set)?, &auc_of)?,
        accuracy: with_ci(acc, &|s| confusion_metrics(s, threshold).0)?,
        sensitivity: with_ci(sens, &|s| confusion_metrics(s, threshold).1)?,
        specificity: with_ci(spec, &|s| confusion_metrics(s, threshold).2)?,
        threshold,
        n_pos: set.n_pos(),
        n_neg: set.n_neg(),
        youden: ThresholdRow {
            threshold: yt,
            accuracy: ya,
            sensitivity: ys,
            specificity: yp,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DelongMode {
    Paired,
    #[default]
    Unpaired,
}

/// DeLong structural components: `V10` per positive and `V01` per negative.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub v10: Vec<f64>,
    pub v01: Vec<f64>,
}

impl Components {
    pub fn auroc(&self) -> f64 {
        self.v10.iter().sum::<f64>() / self.v10.len() as f64
    }
}

/// Components from midranks in O(n log n).
pub fn components(set: &ScoreSet) -> Result<Components, EvalError> {
    set.require_two_class()?;
    let (pos, neg) = set.split();
    let (m, n) = (pos.len() as f64, neg.len() as f64);
    let all: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    let tz = midranks(&all);
    let tx = midranks(&pos);
    let ty = midranks(&neg);
    let v10 = (0..pos.len()).map(|i| (tz[i] - tx[i]) / n).collect();
    let v01 = (0..neg.len())
        .map(|j| 1.0 - (tz[pos.len() + j] - ty[j]) / m)
        .collect();
    Ok(Components { v10, v01 })
}

fn psi(x: f64, y: f64) -> f64 {
    if x > y {
        1.0
    } else if x == y {
        0.5
    } else {
        0.0
    }
}

/// Components by explicit pairwise comparison, O(n^2).
pub fn components_naive(set: &ScoreSet) -> Result<Components, EvalError> {
    set.require_two_class()?;
    let (pos, neg) = set.split();
    let v10 = pos
        .iter()
        .map(|&x| neg.iter().map(|&y| psi(x, y)).sum::<f64>() / neg.len() as f64)
        .collect();
    let v01 = neg
        .iter()
        .map(|&y| pos.iter().map(|&x| psi(x, y)).sum::<f64>() / pos.len() as f64)
        .collect();
    Ok(Components { v10, v01 })
}

fn sample_cov(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / (n - 1.0)
}

/// DeLong covariance of two AUROC estimates from their components. Both
/// must come from the same instances in the same order.
pub fn delong_cov(a: &Components, b: &Components) -> f64 {
    let m = a.v10.len() as f64;
    let n = a.v01.len() as f64;
    let s10 = if a.v10.len() > 1 { sample_cov(&a.v10, &b.v10) } else { 0.0 };
    let s01 = if a.v01.len() > 1 { sample_cov(&a.v01, &b.v01) } else { 0.0 };
    s10 / m + s01 / n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub auroc_a: f64,
    pub auroc_b: f64,
    pub z: f64,
    pub p_value: f64,
    pub mode: DelongMode,
}

/// Two-sided DeLong test of `auroc(a) == auroc(b)`.
pub fn delong_test(a: &ScoreSet, b: &ScoreSet, mode: DelongMode) -> Result<ComparisonResult, EvalError> {
    if mode == DelongMode::Paired && (a.labels != b.labels) {
        return Err(EvalError::Unpaired);
    }
    let ca = components(a)?;
    let cb = components(b)?;
    let (auc_a, auc_b) = (ca.auroc(), cb.auroc());
    let var = match mode {
        DelongMode::Paired => delong_cov(&ca, &ca) + delong_cov(&cb, &cb) - 2.0 * delong_cov(&ca, &cb),
        DelongMode::Unpaired => delong_cov(&ca, &ca) + delong_cov(&cb, &cb),
    };
    let diff = auc_a - auc_b;
    let (z, p_value) = if var <= 0.0 {
        if diff != 0.0 {
            return Err(EvalError::Degenerate(diff));
        }
        (0.0, 1.0)
    } else {
        let z = diff / var.sqrt();
        (z, libm::erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0))
    };
    Ok(ComparisonResult {
        auroc_a: auc_a,
        auroc_b: auc_b,
        z,
        p_value,
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(scores: &[f64], labels: &[u8]) -> ScoreSet {
        ScoreSet::anonymous(scores.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&set(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(auroc(&set(&[0.3; 6], &[1, 0, 1, 0, 1, 0])).unwrap(), 0.5);
        assert_eq!(auroc(&set(&[0.9, 0.4, 0.35, 0.8], &[1, 0, 1, 0])).unwrap(), 0.5);
        assert!(matches!(
            auroc(&set(&[0.1, 0.2], &[1, 1])),
            Err(EvalError::SingleClass { .. })
        ));
    }

    #[test]
    fn confusion_examples() {
        assert_eq!(
            confusion_metrics(&set(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]), 0.5),
            (1.0, 1.0, 1.0)
        );
        let (_, sens, spec) = confusion_metrics(&set(&[0.0; 4], &[1, 0, 1, 0]), 0.5);
        assert_eq!((sens, spec), (0.0, 1.0));
        let s = set(&[0.6, 0.4, 0.7, 0.2], &[1, 1, 0, 0]);
        assert_eq!(
            confusion(&s, 0.5),
            Confusion {
                tp: 1,
                fn_: 1,
                fp: 1,
                tn: 1
            }
        );
        assert_eq!(confusion_metrics(&s, 0.5), (0.5, 0.5, 0.5));
        assert_eq!(confusion(&set(&[0.5, 0.1], &[1, 0]), 0.5).tp, 1);
    }

    #[test]
    fn score_set_validation() {
        assert!(ScoreSet::anonymous(vec![0.1], vec![1]).is_err());
        assert!(ScoreSet::anonymous(vec![0.1, 1.5], vec![1, 0]).is_err());
        assert!(ScoreSet::anonymous(vec![0.1, 0.5], vec![1, 2]).is_err());
        assert!(ScoreSet::new(vec![0.1, 0.5], vec![1, 0], vec!["a".into()]).is_err());
    }

    #[test]
    fn midrank_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn roc_examples() {
        let pts = roc_points(&set(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0])).unwrap();
        assert!(pts.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        let pts = roc_points(&set(&[0.4; 4], &[1, 0, 1, 0])).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!((pts[1].fpr, pts[1].tpr), (1.0, 1.0));
        assert_eq!(trapezoid_area(&pts), 0.5);
    }

    #[test]
    fn identical_paired_sets_give_p_one() {
        let s = set(&[0.9, 0.4, 0.35, 0.8, 0.1, 0.6], &[1, 0, 1, 0, 0, 1]);
        let r = delong_test(&s, &s, DelongMode::Paired).unwrap();
        assert_eq!((r.z, r.p_value), (0.0, 1.0));
    }

    #[test]
    fn paired_requires_matching_labels() {
        let a = set(&[0.9, 0.4, 0.35], &[1, 0, 1]);
        let b = set(&[0.9, 0.4, 0.35], &[1, 0, 0]);
        assert_eq!(delong_test(&a, &b, DelongMode::Paired).unwrap_err(), EvalError::Unpaired);
        assert!(delong_test(&a, &b, DelongMode::Unpaired).is_ok());
    }

    #[test]
    fn perfect_bootstrap_interval() {
        let s = set(&[0.9, 0.8, 0.7, 0.1, 0.2, 0.3], &[1, 1, 1, 0, 0, 0]);
        let ci = bootstrap_ci(&s, |x| auroc(x).unwrap(), 200, 0.05, 1).unwrap();
        assert_eq!((ci.low, ci.high), (1.0, 1.0));
        assert!(bootstrap_ci(&s, |x| auroc(x).unwrap(), 99, 0.05, 1).is_err());
    }

    #[test]
    fn youden_picks_separating_threshold() {
        let s = set(&[0.9, 0.8, 0.3, 0.1, 0.2, 0.25], &[1, 1, 1, 0, 0, 0]);
        assert_eq!(youden_threshold(&s).unwrap(), 0.3);
    }
}
