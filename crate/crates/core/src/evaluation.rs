//! Classification and channel-selection metrics, and the paired
//! Wilcoxon signed-rank test used to compare methods across runs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{LinearModel, SensorLayout, TrialSet};
use crate::error::{check_dim, Error, Result};
use crate::synthetic::GroundTruth;

/// Number of pairs up to which the signed-rank null distribution is enumerated exactly.
pub const WILCOXON_EXACT_MAX: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub selection_rate: f64,
    pub selected_sensors: Vec<usize>,
    pub f_measure: Option<f64>,
}

/// Midranks (1-based) of `values`; tied values share the mean of their ranks.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Ranks start+1 ..= end share their mean.
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Area under the ROC curve as the Mann-Whitney statistic: the probability
/// that a positive trial outscores a negative one, ties counting one half.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_dim(scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores", "NaN score"));
    }
    let n_pos = labels.iter().filter(|&&y| y > 0.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data("AUC needs both classes".into()));
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y > 0.0)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// AUC of a model's decision values on a trial set.
pub fn model_auc(model: &LinearModel, data: &TrialSet) -> Result<f64> {
    let scores = model.decision_values(data)?;
    auc(scores.as_slice().expect("owned"), data.labels().as_slice().expect("owned"))
}

/// `2 |C & C*| / (|C| + |C*|)`; two empty sets agree perfectly.
pub fn f_measure(selected: &BTreeSet<usize>, relevant: &BTreeSet<usize>) -> f64 {
    let total = selected.len() + relevant.len();
    if total == 0 {
        return 1.0;
    }
    2.0 * selected.intersection(relevant).count() as f64 / total as f64
}

/// Selected sensors, selection rate and, with ground truth, the F-measure.
pub fn selection_metrics(
    model: &LinearModel,
    layout: &SensorLayout,
    truth: Option<&GroundTruth>,
) -> Result<(Vec<usize>, f64, Option<f64>)> {
    let selected = model.selected_sensors(layout)?;
    let rate = selected.len() as f64 / layout.p() as f64;
    let f = truth.map(|t| f_measure(&selected, &t.relevant_sensors.iter().copied().collect()));
    Ok((selected.into_iter().collect(), rate, f))
}

pub fn evaluate(model: &LinearModel, test: &TrialSet, truth: Option<&GroundTruth>) -> Result<EvalReport> {
    let auc = model_auc(model, test)?;
    let (selected_sensors, selection_rate, f_measure) = selection_metrics(model, test.layout(), truth)?;
    Ok(EvalReport {
        auc,
        selection_rate,
        selected_sensors,
        f_measure,
    })
}

/// How many models select each sensor.
pub fn selection_frequency(models: &[LinearModel], layout: &SensorLayout) -> Result<Vec<usize>> {
    let mut counts = vec![0; layout.p()];
    for model in models {
        for s in model.selected_sensors(layout)? {
            counts[s] += 1;
        }
    }
    Ok(counts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
    /// Every difference was zero.
    Degenerate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences.
    pub statistic: f64,
    pub p_value: f64,
    pub method: WilcoxonMethod,
    pub n_nonzero: usize,
}

/// Two-sided paired Wilcoxon signed-rank test of `a - b`.
///
/// Zero differences are ranked with the others and then dropped from the
/// statistic (Pratt). Tied magnitudes get midranks. Up to
/// [`WILCOXON_EXACT_MAX`] pairs the null distribution is exact; beyond that a
/// normal approximation with tie-corrected variance and continuity
/// correction is used.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    check_dim(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::Data("no pairs to compare".into()));
    }
    if a.len() < 5 {
        log::warn!("Wilcoxon test with only {} pairs has little power", a.len());
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("a, b", "non-finite difference"));
    }
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&magnitudes);
    let nonzero: Vec<(f64, bool)> = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d != 0.0)
        .map(|(d, r)| (*r, *d > 0.0))
        .collect();
    let statistic: f64 = nonzero.iter().filter(|(_, pos)| *pos).map(|(r, _)| r).sum();
    if nonzero.is_empty() {
        return Ok(WilcoxonResult {
            statistic,
            p_value: 1.0,
            method: WilcoxonMethod::Degenerate,
            n_nonzero: 0,
        });
    }

    if diffs.len() <= WILCOXON_EXACT_MAX {
        // Midranks are multiples of 1/2, so doubled ranks are exact integers.
        let doubled: Vec<usize> = nonzero.iter().map(|(r, _)| (2.0 * r) as usize).collect();
        let observed = (2.0 * statistic) as usize;
        let total: usize = doubled.iter().sum();
        let mut counts = vec![0u64; total + 1];
        counts[0] = 1;
        for &r in &doubled {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let lower: u64 = counts[..=observed].iter().sum();
        let upper: u64 = counts[observed..].iter().sum();
        let tail = lower.min(upper) as f64;
        let p_value = (2.0 * tail / (1u64 << nonzero.len()) as f64).min(1.0);
        return Ok(WilcoxonResult {
            statistic,
            p_value,
            method: WilcoxonMethod::Exact,
            n_nonzero: nonzero.len(),
        });
    }

    let mean: f64 = nonzero.iter().map(|(r, _)| r).sum::<f64>() / 2.0;
    let var: f64 = nonzero.iter().map(|(r, _)| r * r).sum::<f64>() / 4.0;
    let z = ((statistic - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let p_value = statrs::function::erf::erfc(z / std::f64::consts::SQRT_2).min(1.0);
    Ok(WilcoxonResult {
        statistic,
        p_value,
        method: WilcoxonMethod::Normal,
        n_nonzero: nonzero.len(),
    })
}
