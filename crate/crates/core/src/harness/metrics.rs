use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{shape_err, Error, Result};
use crate::par;
use crate::seed::derive_seed;

/// Confusion-matrix metrics with class 1 as positive, plus AUC.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub acc: f64,
    pub auc: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 5] = ["acc", "auc", "recall", "precision", "f1"];

    pub fn values(&self) -> [f64; 5] {
        [self.acc, self.auc, self.recall, self.precision, self.f1]
    }

    fn from_values(v: [f64; 5]) -> Self {
        Self {
            acc: v[0],
            auc: v[1],
            recall: v[2],
            precision: v[3],
            f1: v[4],
        }
    }
}

fn check_lengths(labels: &[u8], scores: &[f64]) -> Result<()> {
    if labels.len() != scores.len() {
        return Err(shape_err("metrics", format!("{} labels, {} scores", labels.len(), scores.len())));
    }
    Ok(())
}

/// Mann–Whitney concordance: the fraction of (negative, positive) pairs ranked correctly,
/// ties counting one half. Computed from mid-ranks in `O(n log n)`.
pub fn auc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    check_lengths(labels, scores)?;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Accuracy, recall, precision and F1 at `score > threshold`, and AUC.
/// Precision (and so F1) is 0 when nothing is predicted positive.
pub fn compute_metrics(labels: &[u8], scores: &[f64], threshold: f64) -> Result<Metrics> {
    let auc = auc(labels, scores)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0.0, 0.0, 0.0, 0.0);
    for (&l, &s) in labels.iter().zip(scores) {
        match (l == 1, s > threshold) {
            (true, true) => tp += 1.0,
            (false, true) => fp += 1.0,
            (false, false) => tn += 1.0,
            (true, false) => fn_ += 1.0,
        }
    }
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    let recall = ratio(tp, tp + fn_);
    let precision = ratio(tp, tp + fp);
    Ok(Metrics {
        acc: (tp + tn) / labels.len() as f64,
        auc,
        recall,
        precision,
        f1: ratio(2.0 * precision * recall, precision + recall),
    })
}

/// Mean, sample standard deviation and range of one metric across folds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Cross-validated metrics: per-fold values, their spread, a bootstrap AUC interval
/// over the pooled held-out predictions and the inference time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub folds: Vec<Metrics>,
    pub mean: Metrics,
    pub std: Metrics,
    pub auc_ci: (f64, f64),
    pub inference_time_s_per_10: Option<f64>,
}

impl MetricsReport {
    pub fn from_folds(folds: Vec<Metrics>, auc_ci: (f64, f64), inference_time_s_per_10: Option<f64>) -> Self {
        let spreads: Vec<Spread> = (0..5)
            .map(|m| Spread::of(&folds.iter().map(|f| f.values()[m]).collect::<Vec<_>>()))
            .collect();
        Self {
            mean: Metrics::from_values([0, 1, 2, 3, 4].map(|m| spreads[m].mean)),
            std: Metrics::from_values([0, 1, 2, 3, 4].map(|m| spreads[m].std)),
            folds,
            auc_ci,
            inference_time_s_per_10,
        }
    }

    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("folds={}\n", self.folds.len()));
        for (m, name) in Metrics::NAMES.iter().enumerate() {
            out.push_str(&format!("{name}_mean={:.6}\n", self.mean.values()[m]));
            out.push_str(&format!("{name}_std={:.6}\n", self.std.values()[m]));
            let per: Vec<String> = self.folds.iter().map(|f| format!("{:.6}", f.values()[m])).collect();
            out.push_str(&format!("{name}_folds={}\n", per.join(",")));
        }
        out.push_str(&format!("auc_ci_lo={:.6}\nauc_ci_hi={:.6}\n", self.auc_ci.0, self.auc_ci.1));
        if let Some(t) = self.inference_time_s_per_10 {
            out.push_str(&format!("inference_time_s_per_10={t:.6}\n"));
        }
        out
    }
}

/// Indices of one case-level resample that contains both classes.
fn resample(labels: &[u8], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = labels.len();
    loop {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let pos = idx.iter().filter(|&&i| labels[i] == 1).count();
        if pos > 0 && pos < n {
            return idx;
        }
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn auc_at(labels: &[u8], scores: &[f64], idx: &[usize]) -> f64 {
    let l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
    let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
    auc(&l, &s).expect("resample holds both classes")
}

/// 95 % percentile interval of AUC over `iters` case resamples.
pub fn bootstrap_auc_ci(labels: &[u8], scores: &[f64], iters: usize, seed: u64) -> Result<(f64, f64)> {
    auc(labels, scores)?;
    let mut aucs = par::map_indexed(iters, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
        auc_at(labels, scores, &resample(labels, &mut rng))
    });
    aucs.sort_by(f64::total_cmp);
    Ok((percentile(&aucs, 0.025), percentile(&aucs, 0.975)))
}

/// Paired bootstrap comparison of two scorers on the same cases.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BootstrapResult {
    /// `AUC(a) - AUC(b)` on the original cases.
    pub delta_auc: f64,
    /// Two-sided: twice the smaller tail of the resampled differences around zero, capped at 1.
    pub p_value: f64,
    /// 95 % percentile interval of the resampled differences.
    pub ci: (f64, f64),
}

/// Case-level paired bootstrap of `AUC(a) - AUC(b)`; iteration `i` draws from `derive_seed(seed, [i])`.
pub fn bootstrap_auc(labels: &[u8], scores_a: &[f64], scores_b: &[f64], iters: usize, seed: u64) -> Result<BootstrapResult> {
    check_lengths(labels, scores_b)?;
    if iters == 0 {
        return Err(Error::ConfigInvalid("bootstrap needs at least one iteration".into()));
    }
    let delta_auc = auc(labels, scores_a)? - auc(labels, scores_b)?;
    let mut deltas = par::map_indexed(iters, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
        let idx = resample(labels, &mut rng);
        auc_at(labels, scores_a, &idx) - auc_at(labels, scores_b, &idx)
    });
    deltas.sort_by(f64::total_cmp);
    let below = deltas.iter().filter(|&&d| d <= 0.0).count() as f64;
    let above = deltas.iter().filter(|&&d| d >= 0.0).count() as f64;
    let p_value = (2.0 * below.min(above) / iters as f64).min(1.0);
    Ok(BootstrapResult {
        delta_auc,
        p_value,
        ci: (percentile(&deltas, 0.025), percentile(&deltas, 0.975)),
    })
}
