//! Predictive and uncertainty metrics.
//!
//! AUROC is the Mann-Whitney statistic with mid-ranks for ties. AUPRC is
//! average precision (step interpolation). Sorting always breaks ties by
//! ascending sample index.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::PredictionRecord;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::Empty("metric input"));
    }
    if a != b {
        return Err(Error::Dimension(format!("{a} predictions but {b} labels")));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / preds.len() as f64)
}

fn class_f1(preds: &[usize], labels: &[usize], class: usize) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &l) in preds.iter().zip(labels) {
        match (p == class, l == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Binary: F1 of class 1. Multiclass: unweighted mean over all `k` classes,
/// where a class with no true and no predicted members scores 0.
pub fn f1(preds: &[usize], labels: &[usize], k: usize) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    if k < 2 {
        return Err(Error::Config(format!("F1 needs at least 2 classes, got {k}")));
    }
    if let Some(bad) = preds.iter().chain(labels).find(|&&c| c >= k) {
        return Err(Error::Dimension(format!("class {bad} outside 0..{k}")));
    }
    if k == 2 {
        return Ok(class_f1(preds, labels, 1));
    }
    Ok((0..k).map(|c| class_f1(preds, labels, c)).sum::<f64>() / k as f64)
}

/// 1-based average ranks of `scores`, ties sharing their mean rank.
fn mid_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        i = j;
    }
    ranks
}

/// `P(score⁺ > score⁻) + ½ P(tie)`.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both positives and negatives"));
    }
    let ranks = mid_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Average precision over the descending-score ranking.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("AUPRC needs at least one positive"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut tp = 0usize;
    let mut ap = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
            ap += tp as f64 / (rank + 1) as f64;
        }
    }
    Ok(ap / n_pos as f64)
}

/// AUROC of uncertainty as a detector of incorrect predictions.
pub fn uncertainty_auroc(uncertainties: &[f64], correct: &[bool]) -> Result<f64> {
    let incorrect: Vec<bool> = correct.iter().map(|c| !c).collect();
    auroc(uncertainties, &incorrect).map_err(|e| match e {
        Error::UndefinedMetric(_) => {
            Error::UndefinedMetric("uncertainty AUROC needs both correct and incorrect predictions")
        }
        other => other,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskCoveragePoint {
    pub coverage: f64,
    pub risk: f64,
}

/// Error rate among the `k` most confident samples, for `k = 1..n`.
pub fn risk_coverage(uncertainties: &[f64], correct: &[bool]) -> Result<Vec<RiskCoveragePoint>> {
    check_lengths(uncertainties.len(), correct.len())?;
    let n = uncertainties.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| uncertainties[a].total_cmp(&uncertainties[b]).then(a.cmp(&b)));
    let mut errors = 0usize;
    Ok(order
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            if !correct[i] {
                errors += 1;
            }
            RiskCoveragePoint {
                coverage: (k + 1) as f64 / n as f64,
                risk: errors as f64 / (k + 1) as f64,
            }
        })
        .collect())
}

/// Risk at the first curve point whose coverage reaches `coverage`.
pub fn risk_at_coverage(curve: &[RiskCoveragePoint], coverage: f64) -> Option<f64> {
    curve
        .iter()
        .find(|p| p.coverage >= coverage - 1e-12)
        .map(|p| p.risk)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectivePoint {
    pub threshold: f64,
    pub misclassification_rate: f64,
    pub rejection_rate: f64,
}

/// Rejects samples with uncertainty above each threshold. The error rate of
/// an empty accepted set is 0.
pub fn selective_sweep(
    uncertainties: &[f64],
    correct: &[bool],
    thresholds: &[f64],
) -> Result<Vec<SelectivePoint>> {
    check_lengths(uncertainties.len(), correct.len())?;
    if thresholds.is_empty() {
        return Err(Error::Empty("selective sweep thresholds"));
    }
    let n = uncertainties.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&tau| {
            let (mut accepted, mut errors) = (0usize, 0usize);
            for (&u, &c) in uncertainties.iter().zip(correct) {
                if u <= tau {
                    accepted += 1;
                    if !c {
                        errors += 1;
                    }
                }
            }
            SelectivePoint {
                threshold: tau,
                misclassification_rate: if accepted == 0 {
                    0.0
                } else {
                    errors as f64 / accepted as f64
                },
                rejection_rate: (n - accepted as f64) / n,
            }
        })
        .collect())
}

/// Evaluation thresholds used when none are given: 0.05, 0.10, ..., 1.00.
pub fn default_thresholds() -> Vec<f64> {
    (1..=20).map(|i| i as f64 * 0.05).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_samples: usize,
    pub num_classes: usize,
    pub accuracy: f64,
    pub f1: f64,
    /// `"binary"` (class 1 as positive) or `"macro-ovr"`.
    pub averaging: String,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub uncertainty_auroc: Option<f64>,
    pub risk_coverage: Vec<RiskCoveragePoint>,
    pub selective: Vec<SelectivePoint>,
}

fn one_vs_rest(
    probs: &[Vec<f64>],
    labels: &[usize],
    k: usize,
    metric: fn(&[f64], &[bool]) -> Result<f64>,
) -> Option<f64> {
    let classes: Vec<usize> = if k == 2 { vec![1] } else { (0..k).collect() };
    let values: Vec<f64> = classes
        .iter()
        .filter_map(|&c| {
            let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            let positives: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            metric(&scores, &positives).ok()
        })
        .collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

impl EvalReport {
    /// Scores fused predictions against `labels`; the uncertainty score is the
    /// fused opinion's uncertainty mass.
    pub fn from_predictions(
        records: &[PredictionRecord],
        labels: &[usize],
        num_classes: usize,
        thresholds: &[f64],
    ) -> Result<Self> {
        check_lengths(records.len(), labels.len())?;
        let preds: Vec<usize> = records.iter().map(|r| r.predicted_class).collect();
        let probs: Vec<Vec<f64>> = records.iter().map(|r| r.fused_probs.clone()).collect();
        let unc: Vec<f64> = records.iter().map(|r| r.fused_uncertainty).collect();
        let correct: Vec<bool> = preds.iter().zip(labels).map(|(p, l)| p == l).collect();
        Ok(Self {
            num_samples: records.len(),
            num_classes,
            accuracy: accuracy(&preds, labels)?,
            f1: f1(&preds, labels, num_classes)?,
            averaging: if num_classes == 2 { "binary" } else { "macro-ovr" }.into(),
            auroc: one_vs_rest(&probs, labels, num_classes, auroc),
            auprc: one_vs_rest(&probs, labels, num_classes, auprc),
            uncertainty_auroc: uncertainty_auroc(&unc, &correct).ok(),
            risk_coverage: risk_coverage(&unc, &correct)?,
            selective: selective_sweep(&unc, &correct, thresholds)?,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `metrics.json`, `metrics.csv`, `risk_coverage.csv` and
    /// `selective.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("metrics.json", self.to_json() + "\n")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut scalars = String::from("metric,value\n");
        scalars += &format!("num_samples,{}\n", self.num_samples);
        scalars += &format!("accuracy,{}\n", self.accuracy);
        scalars += &format!("f1,{}\n", self.f1);
        scalars += &format!("auroc,{}\n", opt(self.auroc));
        scalars += &format!("auprc,{}\n", opt(self.auprc));
        scalars += &format!("uncertainty_auroc,{}\n", opt(self.uncertainty_auroc));
        write("metrics.csv", scalars)?;
        let mut rc = String::from("coverage,risk\n");
        for p in &self.risk_coverage {
            rc += &format!("{},{}\n", p.coverage, p.risk);
        }
        write("risk_coverage.csv", rc)?;
        let mut sel = String::from("threshold,misclassification_rate,rejection_rate\n");
        for p in &self.selective {
            sel += &format!("{},{},{}\n", p.threshold, p.misclassification_rate, p.rejection_rate);
        }
        write("selective.csv", sel)
    }
}
