//! Worst-group metrics and unsupervised checkpoint selection.
//!
//! Reported worst-group accuracy is always computed against ground-truth
//! groups, which exist only on the evaluation side. Checkpoint selection for
//! the adversarial runs never touches them: it scores each checkpoint by the
//! combined dev accuracy of the worst predicted groups covering an
//! alpha-fraction of the dev set.

use serde::{Deserialize, Serialize};

use crate::data::{group_accuracy_table, Example, GroupAccuracy};
use crate::error::{Error, Result};
use crate::features::{argmax, features_for_split, PretrainedAnalog};
use crate::grouper::Grouper;
use crate::matrix::Matrix;
use crate::nn::{self, NetworkParams};

/// Accuracy summary for one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub avg_accuracy: f64,
    /// Present only when ground-truth groups were supplied.
    pub per_group: Option<Vec<GroupAccuracy>>,
    /// Minimum accuracy over nonempty ground-truth groups.
    pub worst_group_accuracy: Option<f64>,
}

/// Full report for one trained model, serialized as the run's metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub avg_accuracy: f64,
    pub per_group: Vec<GroupAccuracy>,
    pub worst_group_accuracy: Option<f64>,
    pub ood_accuracy: Option<f64>,
    pub selected_checkpoint: Option<usize>,
    pub selection_score: Option<f64>,
}

/// Argmax predictions of a model over raw example inputs.
pub fn predictions_for(params: &NetworkParams, examples: &[Example]) -> Result<Vec<usize>> {
    let rows: Vec<Vec<f64>> = examples.iter().map(|e| e.x.clone()).collect();
    let inputs = Matrix::from_rows(&rows)?;
    let fwd = nn::forward(params, &inputs)?;
    Ok((0..examples.len()).map(|i| argmax(fwd.logits.row(i))).collect())
}

/// Average accuracy, plus per-group and worst-group accuracy when
/// `n_groups` is supplied.
pub fn evaluate(
    params: &NetworkParams,
    examples: &[Example],
    n_groups: Option<usize>,
) -> Result<SplitMetrics> {
    if examples.is_empty() {
        return Err(Error::config("cannot evaluate an empty split"));
    }
    let preds = predictions_for(params, examples)?;
    let correct = preds
        .iter()
        .zip(examples)
        .filter(|(p, e)| **p == e.y)
        .count();
    let avg = correct as f64 / examples.len() as f64;
    let (per_group, worst) = match n_groups {
        Some(m) => {
            let table = group_accuracy_table(&preds, examples, m)?;
            let worst = table
                .iter()
                .filter_map(|row| row.accuracy)
                .fold(f64::INFINITY, f64::min);
            let worst = if worst.is_finite() { Some(worst) } else { None };
            (Some(table), worst)
        }
        None => (None, None),
    };
    Ok(SplitMetrics {
        avg_accuracy: avg,
        per_group,
        worst_group_accuracy: worst,
    })
}

/// Combined accuracy of the lowest-accuracy groups covering at least an
/// `alpha` fraction of the examples.
///
/// Groups are ranked by ascending accuracy (ties toward the smaller id);
/// the minimal prefix whose cumulative share reaches `alpha` is pooled and
/// its plain accuracy returned. `alpha = 1` reduces to overall accuracy.
pub fn worst_prefix_score(
    correct: &[bool],
    groups: &[usize],
    n_groups: usize,
    alpha: f64,
) -> Result<f64> {
    if correct.len() != groups.len() || correct.is_empty() {
        return Err(Error::shape("worst_prefix_score needs matching nonempty inputs"));
    }
    if !(0.0 < alpha && alpha <= 1.0) {
        return Err(Error::config("alpha must be in (0, 1]"));
    }
    let n = correct.len();
    let mut counts = vec![0usize; n_groups];
    let mut hits = vec![0usize; n_groups];
    for (&c, &g) in correct.iter().zip(groups) {
        if g >= n_groups {
            return Err(Error::config(format!("group id {g} out of range")));
        }
        counts[g] += 1;
        hits[g] += usize::from(c);
    }
    let mut order: Vec<usize> = (0..n_groups).filter(|&g| counts[g] > 0).collect();
    order.sort_by(|&a, &b| {
        let acc_a = hits[a] as f64 / counts[a] as f64;
        let acc_b = hits[b] as f64 / counts[b] as f64;
        acc_a.partial_cmp(&acc_b).unwrap().then(a.cmp(&b))
    });
    let threshold = alpha * n as f64;
    let mut pooled_count = 0usize;
    let mut pooled_hits = 0usize;
    for g in order {
        pooled_count += counts[g];
        pooled_hits += hits[g];
        if pooled_count as f64 >= threshold {
            break;
        }
    }
    Ok(pooled_hits as f64 / pooled_count as f64)
}

/// How a checkpoint is scored during selection.
pub enum SelectionMode<'a> {
    /// Overall dev accuracy (the plain ERM convention).
    FullDev,
    /// Worst ground-truth-group dev accuracy. Supervised; used only for the
    /// oracle upper-bound baseline.
    OracleWorstGroup { n_groups: usize },
    /// Combined accuracy of the worst predicted groups covering an
    /// alpha-fraction of dev. Fully unsupervised.
    PredictedGroups {
        grouper: &'a Grouper,
        analog: &'a PretrainedAnalog,
        alpha: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    /// Index into the checkpoint list (epoch order). Ties in score resolve
    /// to the earliest checkpoint.
    pub index: usize,
    pub score: f64,
    pub scores: Vec<f64>,
}

/// Scores every checkpoint on the dev split and returns the argmax.
///
/// In `PredictedGroups` mode the dev features are rebuilt per checkpoint
/// from that checkpoint's own representations, then assigned to groups by
/// the (fixed) grouper.
pub fn select_checkpoint(
    checkpoints: &[NetworkParams],
    dev: &[Example],
    mode: SelectionMode<'_>,
) -> Result<SelectionOutcome> {
    if checkpoints.is_empty() {
        return Err(Error::config("no checkpoints to select from"));
    }
    if dev.is_empty() {
        return Err(Error::config("dev split is empty"));
    }
    let rows: Vec<Vec<f64>> = dev.iter().map(|e| e.x.clone()).collect();
    let dev_inputs = Matrix::from_rows(&rows)?;
    let dev_labels: Vec<usize> = dev.iter().map(|e| e.y).collect();

    let mut scores = Vec::with_capacity(checkpoints.len());
    for params in checkpoints {
        let preds = {
            let fwd = nn::forward(params, &dev_inputs)?;
            (0..dev.len()).map(|i| argmax(fwd.logits.row(i))).collect::<Vec<_>>()
        };
        let correct: Vec<bool> = preds.iter().zip(&dev_labels).map(|(p, y)| p == y).collect();
        let score = match &mode {
            SelectionMode::FullDev => {
                correct.iter().filter(|&&c| c).count() as f64 / dev.len() as f64
            }
            SelectionMode::OracleWorstGroup { n_groups } => {
                let table = group_accuracy_table(&preds, dev, *n_groups)?;
                table
                    .iter()
                    .filter_map(|r| r.accuracy)
                    .fold(f64::INFINITY, f64::min)
            }
            SelectionMode::PredictedGroups { grouper, analog, alpha } => {
                let feats = features_for_split(params, &dev_inputs, &dev_labels, analog)?;
                let assignment = grouper.group_probs(&feats.data)?;
                let hard = assignment.hard_assignment();
                worst_prefix_score(&correct, &hard, grouper.n_groups(), *alpha)?
            }
        };
        scores.push(score);
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(SelectionOutcome {
        index: best,
        score: scores[best],
        scores,
    })
}

/// Adjusted Rand index between two flat clusterings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "clusterings must have equal length");
    let n = a.len();
    if n == 0 {
        return 1.0;
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let choose2 = |v: usize| (v * v.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().flatten().map(|&v| choose2(v)).sum();
    let sum_a: f64 = table.iter().map(|row| choose2(row.iter().sum())).sum();
    let sum_b: f64 = (0..kb)
        .map(|j| choose2(table.iter().map(|row| row[j]).sum()))
        .sum();
    let total = choose2(n);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < 1e-300 {
        return 1.0;
    }
    (sum_ij - expected) / (max - expected)
}

/// Serializes a metrics report with stable key order (struct order) so
/// reruns produce byte-identical files.
pub fn write_metrics_json(path: &std::path::Path, report: &MetricsReport) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Parse(format!("metrics serialization failed: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_metrics_json(path: &std::path::Path) -> Result<MetricsReport> {
    if !path.exists() {
        return Err(Error::MissingInput(path.display().to_string()));
    }
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}
