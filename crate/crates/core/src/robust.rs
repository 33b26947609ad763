//! Robust optimization engines.
//!
//! Two training loops share one weighting rule:
//!
//! - [`gdro_train`]: online greedy worst-group optimization over *hard*
//!   group ids. Per minibatch it updates exponential moving averages of
//!   per-group losses and proportions, sorts groups by loss, takes the
//!   minimal prefix covering an `alpha` fraction of the data, up-weights
//!   that prefix by `1/alpha` and down-weights the rest to `w_min`, then
//!   descends on the weighted loss.
//! - [`agro_primary_epochs`] / [`agro_adversary_epochs`]: the alternating
//!   game over *soft* assignments. The primary round is the same greedy
//!   update with group membership replaced by probabilities from a frozen
//!   grouper. The adversary round freezes the task model and *ascends* on
//!   the weighted loss with the converse weights (`alpha` on the worst set,
//!   `w_max` elsewhere), using per-batch statistics without averaging.
//!
//! Group losses are mass-weighted sums `sum_i P[i][g] * l_i`, not
//! mass-normalized means; `normalize_group_loss` switches the *ranking*
//! statistic to the normalized variant for ablation, leaving the descent
//! objective unchanged.
//!
//! [`agro_train`] chains the whole pipeline: a short warm-up round with a
//! randomly grouped primary, K-fold feature extraction, the slice mixture,
//! KL-pretraining of the grouper, the adversary round, and a final primary
//! phase at the full training budget.

use serde::{Deserialize, Serialize};

use crate::data::TrainView;
use crate::error::{Error, Result};
use crate::features::{
    epoch_batches, extract_features_kfold, FeatureMatrix, KfoldFeatures, PretrainedAnalog,
    TrainConfig,
};
use crate::grouper::{pretrain_kl, Grouper, GrouperConfig, SoftGroupAssignment};
use crate::matrix::Matrix;
use crate::nn::{self, Batch, NetworkParams, UpdateDirection};
use crate::pca::Pca;
use crate::seeds::{derive_seed, tags};
use crate::slice::{fit_em, SliceFit, SliceModel};

/// Exponential moving average: `gamma * v_new + (1 - gamma) * v_old`.
pub fn ema(v_new: f64, v_old: f64, gamma_ema: f64) -> f64 {
    debug_assert!(
        (0.0..=1.0).contains(&gamma_ema),
        "gamma_ema out of range: {gamma_ema}"
    );
    gamma_ema * v_new + (1.0 - gamma_ema) * v_old
}

/// Historical per-group statistics carried across minibatches.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub l_hat: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub gamma_ema: f64,
}

impl GroupStats {
    pub fn zeros(m: usize, gamma_ema: f64) -> Self {
        GroupStats {
            l_hat: vec![0.0; m],
            p_hat: vec![0.0; m],
            gamma_ema,
        }
    }

    /// Folds one minibatch into the moving averages. Proportions update for
    /// every group; the loss average updates only for groups with positive
    /// batch mass, so an absent group's loss history persists untouched.
    pub fn update(&mut self, batch_group_loss: &[f64], batch_group_prop: &[f64]) {
        for g in 0..self.l_hat.len() {
            if batch_group_prop[g] > 0.0 {
                self.l_hat[g] = ema(batch_group_loss[g], self.l_hat[g], self.gamma_ema);
            }
            self.p_hat[g] = ema(batch_group_prop[g], self.p_hat[g], self.gamma_ema);
        }
    }
}

/// Which side of the game the weights serve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// Up-weight the worst set by `1/alpha`, down-weight the rest to `w_min`.
    Primary,
    /// Down-weight the worst set to `alpha`, up-weight the rest to `w_max`.
    Adversary,
}

/// Group weights plus the worst set they were derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub q: Vec<f64>,
    pub worst_set: Vec<usize>,
}

/// Greedy alpha-cover weights.
///
/// Groups are sorted by loss descending (ties toward the smaller id); the
/// worst set is the minimal prefix whose cumulative proportion reaches
/// `alpha` of the total, always including the group that crosses the
/// threshold. If all proportions are zero the worst set degenerates to the
/// single highest-loss group.
pub fn compute_group_weights(
    losses: &[f64],
    proportions: &[f64],
    alpha: f64,
    mode: WeightMode,
    w_min: f64,
    w_max: f64,
) -> Result<WeightVector> {
    let m = losses.len();
    if proportions.len() != m || m == 0 {
        return Err(Error::shape(format!(
            "{m} losses vs {} proportions",
            proportions.len()
        )));
    }
    if !(0.0 < alpha && alpha <= 1.0) {
        return Err(Error::config("alpha must be in (0, 1]"));
    }
    if proportions.iter().any(|p| *p < 0.0) {
        return Err(Error::config("proportions must be >= 0"));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        losses[b]
            .partial_cmp(&losses[a])
            .expect("finite losses")
            .then(a.cmp(&b))
    });
    let total: f64 = proportions.iter().sum();
    let threshold = alpha * total;
    let mut worst_set = Vec::new();
    let mut cumulative = 0.0;
    for &g in &order {
        worst_set.push(g);
        cumulative += proportions[g];
        if cumulative >= threshold {
            break;
        }
    }
    let (hi, lo) = match mode {
        WeightMode::Primary => (1.0 / alpha, w_min),
        WeightMode::Adversary => (alpha, w_max),
    };
    let mut q = vec![lo; m];
    for &g in &worst_set {
        q[g] = hi;
    }
    Ok(WeightVector { q, worst_set })
}

/// Configuration of the alternating optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgroConfig {
    /// Fraction of the data the worst set must cover.
    pub alpha: f64,
    /// Number of groups.
    pub m: usize,
    /// Warm-up primary epochs (round 0, random grouping).
    pub t1_epochs: usize,
    /// Adversary epochs per round.
    pub t2_epochs: usize,
    /// Number of alternating rounds.
    pub rounds: usize,
    /// Weight for groups outside the worst set in primary mode.
    pub w_min: f64,
    /// Weight for groups outside the worst set in adversary mode.
    pub w_max: f64,
    /// EMA coefficient for the primary round's historical statistics.
    pub gamma_ema: f64,
    /// Task-model learning rate in robust phases (applied to an
    /// *unnormalized* weighted-sum objective, so it lives on a smaller
    /// scale than a mean-loss ERM rate).
    pub lr_theta: f64,
    /// Grouper learning rate in adversary rounds.
    pub lr_phi: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Rank groups by mass-normalized mean loss instead of the raw
    /// mass-weighted sum (ablation; the descent objective is unchanged).
    pub normalize_group_loss: bool,
}

impl AgroConfig {
    /// Defaults for `m` groups: batch size `16 * m`.
    pub fn for_groups(m: usize, seed: u64) -> AgroConfig {
        AgroConfig {
            alpha: 0.2,
            m,
            t1_epochs: 3,
            t2_epochs: 1,
            rounds: 1,
            w_min: 0.1,
            w_max: 1.0,
            gamma_ema: 0.5,
            lr_theta: 2e-3,
            lr_phi: 0.05,
            weight_decay: 0.0,
            batch_size: 16 * m,
            seed,
            normalize_group_loss: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha && self.alpha <= 1.0) {
            return Err(Error::config("alpha must be in (0, 1]"));
        }
        if self.m < 1 {
            return Err(Error::config("m must be >= 1"));
        }
        if self.rounds < 1 {
            return Err(Error::config("rounds must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(0.0 < self.gamma_ema && self.gamma_ema < 1.0) {
            return Err(Error::config("gamma_ema must be in (0, 1)"));
        }
        if self.lr_theta <= 0.0 || self.lr_phi <= 0.0 {
            return Err(Error::config("learning rates must be > 0"));
        }
        if self.w_min < 0.0 || self.w_max < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::config("w_min, w_max, weight_decay must be >= 0"));
        }
        Ok(())
    }
}

/// One optimizer step, as persisted in the trace CSV. In adversary rounds
/// `l_hat`/`p_hat` carry the per-batch statistics (no averaging).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub round: usize,
    pub mode: &'static str,
    pub l_hat: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub q: Vec<f64>,
    /// The weighted loss the step optimized.
    pub batch_loss: f64,
}

pub fn write_trace_csv(path: &std::path::Path, traces: &[TraceRecord]) -> Result<()> {
    use std::io::Write;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let m = traces.first().map_or(0, |t| t.q.len());
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = vec!["step".to_string(), "round".into(), "mode".into()];
    header.extend((0..m).map(|g| format!("l_hat_{g}")));
    header.extend((0..m).map(|g| format!("p_hat_{g}")));
    header.extend((0..m).map(|g| format!("q_{g}")));
    header.push("batch_loss".into());
    writeln!(out, "{}", header.join(","))?;
    for t in traces {
        let mut fields = vec![t.step.to_string(), t.round.to_string(), t.mode.to_string()];
        fields.extend(t.l_hat.iter().map(|v| format!("{v}")));
        fields.extend(t.p_hat.iter().map(|v| format!("{v}")));
        fields.extend(t.q.iter().map(|v| format!("{v}")));
        fields.push(format!("{}", t.batch_loss));
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Per-example cross-entropy losses under fixed parameters.
fn per_example_losses(params: &NetworkParams, inputs: &Matrix, labels: &[usize]) -> Result<Vec<f64>> {
    let fwd = nn::forward(params, inputs)?;
    let ones = vec![1.0; labels.len()];
    let (losses, _) = nn::weighted_ce_loss(&fwd.logits, labels, &ones)?;
    Ok(losses)
}

/// Attaches the optimizer state to a numeric failure so divergence aborts
/// carry a usable snapshot.
fn diverged(err: Error, step: usize, stats: &GroupStats) -> Error {
    match err {
        Error::Numeric(msg) => Error::Numeric(format!(
            "step {step}: {msg}; l_hat {:?}, p_hat {:?}",
            stats.l_hat, stats.p_hat
        )),
        other => other,
    }
}

/// Ranking statistic per group: raw mass-weighted sum, or the normalized
/// mean when the ablation flag is set.
fn ranking_losses(group_loss: &[f64], group_mass: &[f64], normalize: bool) -> Vec<f64> {
    if !normalize {
        return group_loss.to_vec();
    }
    group_loss
        .iter()
        .zip(group_mass)
        .map(|(l, m)| if *m > 0.0 { l / m } else { 0.0 })
        .collect()
}

/// Result of a hard-group or soft-group primary run.
#[derive(Debug, Clone)]
pub struct PrimaryOutcome {
    pub checkpoints: Vec<NetworkParams>,
    pub traces: Vec<TraceRecord>,
}

/// Online greedy worst-group training over hard group ids.
///
/// `hard_groups` may come from any assignment: ground-truth groups for the
/// oracle upper bound, labels-as-groups, or mixture-model clusters.
#[allow(clippy::too_many_arguments)]
pub fn gdro_train(
    view: &TrainView,
    hard_groups: &[usize],
    theta: &mut NetworkParams,
    epochs: usize,
    config: &AgroConfig,
    stage_seed: u64,
    round: usize,
) -> Result<PrimaryOutcome> {
    config.validate()?;
    let n = view.len();
    if hard_groups.len() != n {
        return Err(Error::shape(format!(
            "{} group ids for {n} examples",
            hard_groups.len()
        )));
    }
    let m = config.m;
    if let Some(&bad) = hard_groups.iter().find(|&&g| g >= m) {
        return Err(Error::config(format!("group id {bad} out of range for m={m}")));
    }
    let mut stats = GroupStats::zeros(m, config.gamma_ema);
    let mut checkpoints = Vec::with_capacity(epochs);
    let mut traces = Vec::new();
    let mut step = 0usize;
    for epoch in 0..epochs {
        for idx in epoch_batches(n, config.batch_size, stage_seed, epoch) {
            let b = idx.len();
            let inputs = view.inputs.select_rows(&idx);
            let labels: Vec<usize> = idx.iter().map(|&i| view.labels[i]).collect();
            let losses = per_example_losses(theta, &inputs, &labels)
                .map_err(|e| diverged(e, step, &stats))?;

            let mut group_loss = vec![0.0; m];
            let mut group_count = vec![0usize; m];
            for (pos, &i) in idx.iter().enumerate() {
                group_loss[hard_groups[i]] += losses[pos];
                group_count[hard_groups[i]] += 1;
            }
            let group_prop: Vec<f64> = group_count
                .iter()
                .map(|&c| c as f64 / b as f64)
                .collect();
            let group_mass: Vec<f64> = group_count.iter().map(|&c| c as f64).collect();
            stats.update(
                &ranking_losses(&group_loss, &group_mass, config.normalize_group_loss),
                &group_prop,
            );
            let wv = compute_group_weights(
                &stats.l_hat,
                &stats.p_hat,
                config.alpha,
                WeightMode::Primary,
                config.w_min,
                config.w_max,
            )?;
            let weights: Vec<f64> = idx.iter().map(|&i| wv.q[hard_groups[i]]).collect();
            let batch = Batch::new(inputs, labels, weights)?;
            let (_, weighted, grads) = nn::loss_and_grad(theta, &batch)?;
            if !weighted.is_finite() {
                return Err(Error::numeric(format!(
                    "worst-group training diverged at step {step}: loss {weighted}, q {:?}, l_hat {:?}",
                    wv.q, stats.l_hat
                )));
            }
            nn::sgd_step(
                theta,
                &grads,
                config.lr_theta,
                config.weight_decay,
                UpdateDirection::Descend,
            )?;
            traces.push(TraceRecord {
                step,
                round,
                mode: "gdro",
                l_hat: stats.l_hat.clone(),
                p_hat: stats.p_hat.clone(),
                q: wv.q,
                batch_loss: weighted,
            });
            step += 1;
        }
        checkpoints.push(theta.clone());
    }
    Ok(PrimaryOutcome {
        checkpoints,
        traces,
    })
}

/// Primary round over a soft assignment from a frozen grouper.
///
/// `assignment` holds P for every training example (rows align with
/// `view`); statistics in `stats` carry across minibatches and epochs
/// within the round.
#[allow(clippy::too_many_arguments)]
pub fn agro_primary_epochs(
    theta: &mut NetworkParams,
    assignment: &SoftGroupAssignment,
    view: &TrainView,
    stats: &mut GroupStats,
    epochs: usize,
    config: &AgroConfig,
    stage_seed: u64,
    round: usize,
) -> Result<PrimaryOutcome> {
    config.validate()?;
    let n = view.len();
    let m = config.m;
    if assignment.0.rows() != n || assignment.0.cols() != m {
        return Err(Error::shape(format!(
            "assignment is {}x{}, expected {n}x{m}",
            assignment.0.rows(),
            assignment.0.cols()
        )));
    }
    let mut checkpoints = Vec::with_capacity(epochs);
    let mut traces = Vec::new();
    let mut step = 0usize;
    for epoch in 0..epochs {
        for idx in epoch_batches(n, config.batch_size, stage_seed, epoch) {
            let b = idx.len();
            let inputs = view.inputs.select_rows(&idx);
            let labels: Vec<usize> = idx.iter().map(|&i| view.labels[i]).collect();
            let losses = per_example_losses(theta, &inputs, &labels)
                .map_err(|e| diverged(e, step, stats))?;

            let mut group_loss = vec![0.0; m];
            let mut group_mass = vec![0.0; m];
            for (pos, &i) in idx.iter().enumerate() {
                let p = assignment.0.row(i);
                for g in 0..m {
                    group_loss[g] += p[g] * losses[pos];
                    group_mass[g] += p[g];
                }
            }
            let total_mass: f64 = group_mass.iter().sum();
            if (total_mass - b as f64).abs() > 1e-9 * b as f64 {
                return Err(Error::numeric(format!(
                    "soft assignment mass {total_mass} does not conserve batch size {b}"
                )));
            }
            let group_prop: Vec<f64> = group_mass.iter().map(|&v| v / b as f64).collect();
            stats.update(
                &ranking_losses(&group_loss, &group_mass, config.normalize_group_loss),
                &group_prop,
            );
            let wv = compute_group_weights(
                &stats.l_hat,
                &stats.p_hat,
                config.alpha,
                WeightMode::Primary,
                config.w_min,
                config.w_max,
            )?;
            let weights: Vec<f64> = idx
                .iter()
                .map(|&i| {
                    let p = assignment.0.row(i);
                    wv.q.iter().zip(p).map(|(q, pg)| q * pg).sum()
                })
                .collect();
            let batch = Batch::new(inputs, labels, weights)?;
            let (_, weighted, grads) = nn::loss_and_grad(theta, &batch)?;
            if !weighted.is_finite() {
                return Err(Error::numeric(format!(
                    "primary round diverged at step {step}: loss {weighted}, q {:?}, l_hat {:?}",
                    wv.q, stats.l_hat
                )));
            }
            nn::sgd_step(
                theta,
                &grads,
                config.lr_theta,
                config.weight_decay,
                UpdateDirection::Descend,
            )?;
            traces.push(TraceRecord {
                step,
                round,
                mode: "primary",
                l_hat: stats.l_hat.clone(),
                p_hat: stats.p_hat.clone(),
                q: wv.q,
                batch_loss: weighted,
            });
            step += 1;
        }
        checkpoints.push(theta.clone());
    }
    Ok(PrimaryOutcome {
        checkpoints,
        traces,
    })
}

/// Share threshold above which an adversary epoch counts as collapsed.
pub const COLLAPSE_SHARE: f64 = 0.98;

#[derive(Debug, Clone)]
pub struct AdversaryOutcome {
    pub grouper: Grouper,
    pub traces: Vec<TraceRecord>,
    /// Largest full-data group share at the end of each epoch.
    pub epoch_max_shares: Vec<f64>,
    /// Set when any epoch ended with a group holding more than
    /// [`COLLAPSE_SHARE`] of the data: the degenerate all-one-group
    /// assignment that random initialization drifts into.
    pub collapse_warning: bool,
}

/// Adversary round: gradient *ascent* on the grouper under a frozen task
/// model, with per-batch statistics and converse weights.
#[allow(clippy::too_many_arguments)]
pub fn agro_adversary_epochs(
    theta: &NetworkParams,
    grouper: Grouper,
    features: &Matrix,
    view: &TrainView,
    epochs: usize,
    config: &AgroConfig,
    stage_seed: u64,
    round: usize,
) -> Result<AdversaryOutcome> {
    config.validate()?;
    let n = view.len();
    let m = config.m;
    if grouper.n_groups() != m {
        return Err(Error::config(format!(
            "grouper has {} groups, config expects {m}",
            grouper.n_groups()
        )));
    }
    if features.rows() != n {
        return Err(Error::shape(format!(
            "{} feature rows for {n} examples",
            features.rows()
        )));
    }
    // The task model is frozen: per-example losses are constants of the round.
    let losses = per_example_losses(theta, &view.inputs, &view.labels)?;
    let x = grouper.standardized(features)?;

    let mut grouper = grouper;
    let mut traces = Vec::new();
    let mut epoch_max_shares = Vec::with_capacity(epochs);
    let mut collapse_warning = false;
    let mut step = 0usize;
    for epoch in 0..epochs {
        for idx in epoch_batches(n, config.batch_size, stage_seed, epoch) {
            let b = idx.len();
            let xb = x.select_rows(&idx);
            let fwd = nn::forward(&grouper.net, &xb)?;
            let probs = nn::softmax_rows(&fwd.logits);

            let mut group_loss = vec![0.0; m];
            let mut group_mass = vec![0.0; m];
            for (pos, &i) in idx.iter().enumerate() {
                let p = probs.row(pos);
                for g in 0..m {
                    group_loss[g] += p[g] * losses[i];
                    group_mass[g] += p[g];
                }
            }
            let total_mass: f64 = group_mass.iter().sum();
            if (total_mass - b as f64).abs() > 1e-9 * b as f64 {
                return Err(Error::numeric(format!(
                    "soft assignment mass {total_mass} does not conserve batch size {b}"
                )));
            }
            let group_prop: Vec<f64> = group_mass.iter().map(|&v| v / b as f64).collect();
            // The adversary always ranks by the raw mass-weighted sums. Under
            // a normalized ranking the high-mean-loss slices would sit in the
            // worst set permanently, so ascent would drain their mass and
            // erase exactly the slices the primary needs.
            let wv = compute_group_weights(
                &group_loss,
                &group_prop,
                config.alpha,
                WeightMode::Adversary,
                config.w_min,
                config.w_max,
            )?;
            let objective: f64 = wv.q.iter().zip(&group_loss).map(|(q, l)| q * l).sum();

            // dJ/dlogits[i][g] = l_i * P[i][g] * (q[g] - <q, P[i]>)
            let mut dlogits = Matrix::zeros(b, m);
            for (pos, &i) in idx.iter().enumerate() {
                let p = probs.row(pos);
                let qp: f64 = wv.q.iter().zip(p).map(|(q, pg)| q * pg).sum();
                let out = dlogits.row_mut(pos);
                for g in 0..m {
                    out[g] = losses[i] * p[g] * (wv.q[g] - qp);
                }
            }
            let grads = nn::backward_from_dlogits(&grouper.net, &xb, &dlogits)?;
            nn::sgd_step(
                &mut grouper.net,
                &grads,
                config.lr_phi,
                config.weight_decay,
                UpdateDirection::Ascend,
            )?;
            traces.push(TraceRecord {
                step,
                round,
                mode: "adversary",
                l_hat: group_loss,
                p_hat: group_prop,
                q: wv.q,
                batch_loss: objective,
            });
            step += 1;
        }
        let full = nn::forward(&grouper.net, &x)?;
        let shares = SoftGroupAssignment(nn::softmax_rows(&full.logits)).group_shares();
        let max_share = shares.iter().cloned().fold(0.0, f64::max);
        epoch_max_shares.push(max_share);
        if max_share > COLLAPSE_SHARE {
            collapse_warning = true;
        }
    }
    Ok(AdversaryOutcome {
        grouper,
        traces,
        epoch_max_shares,
        collapse_warning,
    })
}

/// Everything `agro_train` needs beyond the dataset itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgroPipelineConfig {
    /// Task network architecture.
    pub layer_sizes: Vec<usize>,
    pub agro: AgroConfig,
    /// Final primary budget, matched to the strong-ERM baseline.
    pub final_epochs: usize,
    /// ERM-scale learning rate used for fold models (mean-loss objective).
    pub erm_lr: f64,
    pub kfold: usize,
    /// Fold-model budget; weak models expose more errors.
    pub kfold_epochs: usize,
    /// Dimension of the frozen random projection; 0 disables the block.
    pub d_g: usize,
    pub grouper: GrouperConfig,
    pub slice_gamma: f64,
    pub slice_max_iters: usize,
    pub slice_tol: f64,
    /// PCA width before the mixture; `None` selects automatically
    /// (project to 32 when the embedding is wider than 32).
    pub slice_pca: Option<usize>,
    /// Skip KL-pretraining and start the adversary from a random grouper.
    /// Reproduces the degenerate-collapse failure mode; off by default.
    pub random_adversary_init: bool,
}

impl AgroPipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.agro.validate()?;
        if self.layer_sizes.len() < 2 {
            return Err(Error::config("layer_sizes needs input and output dims"));
        }
        if self.kfold < 2 {
            return Err(Error::config("kfold must be >= 2"));
        }
        if self.grouper.n_groups != self.agro.m {
            return Err(Error::config(
                "grouper group count must equal the optimizer's m",
            ));
        }
        Ok(())
    }
}

/// All artifacts of one adversarial run.
#[derive(Debug, Clone)]
pub struct AgroRun {
    pub theta: NetworkParams,
    /// Per-epoch checkpoints of the final primary phase.
    pub checkpoints: Vec<NetworkParams>,
    pub grouper: Grouper,
    pub pretrained_grouper: Grouper,
    pub slice_model: SliceModel,
    pub slice_fit: SliceFit,
    pub features: FeatureMatrix,
    pub fold_models: Vec<NetworkParams>,
    pub analog: PretrainedAnalog,
    pub traces: Vec<TraceRecord>,
    pub adversary_collapsed: bool,
    pub adversary_epoch_shares: Vec<f64>,
    pub kl_trace: Vec<f64>,
}

/// Fits the slice mixture on the feature embedding, applying PCA per the
/// configured policy first.
#[allow(clippy::too_many_arguments)]
pub fn fit_slice_model(
    features: &FeatureMatrix,
    labels: &[usize],
    k: usize,
    gamma: f64,
    max_iters: usize,
    tol: f64,
    pca_width: Option<usize>,
    seed: u64,
) -> Result<(SliceModel, SliceFit)> {
    let embedding = features.embedding();
    let width = match pca_width {
        Some(w) => Some(w.min(embedding.cols())),
        None if embedding.cols() > 32 => Some(32),
        None => None,
    };
    let (pca, z) = match width {
        Some(w) if w < embedding.cols() => {
            let pca = Pca::fit(&embedding, w)?;
            let z = pca.apply(&embedding);
            (Some(pca), z)
        }
        _ => (None, embedding),
    };
    let fit = fit_em(
        &z,
        labels,
        &features.pred_probs(),
        k,
        gamma,
        max_iters,
        tol,
        seed,
    )?;
    Ok((
        SliceModel {
            pca,
            params: fit.params.clone(),
        },
        fit,
    ))
}

/// Output of the alternating rounds (everything downstream of the feature
/// pipeline).
#[derive(Debug, Clone)]
pub struct AgroRounds {
    pub theta: NetworkParams,
    pub checkpoints: Vec<NetworkParams>,
    pub grouper: Grouper,
    pub traces: Vec<TraceRecord>,
    pub adversary_collapsed: bool,
    pub adversary_epoch_shares: Vec<f64>,
}

/// Round 0 plus the alternating adversary/primary rounds, given an already
/// extracted feature matrix and an initialized (normally KL-pretrained)
/// grouper. When `config.random_adversary_init` is set the supplied grouper
/// is ignored and the adversary starts from a fresh random one.
pub fn agro_rounds(
    view: &TrainView,
    config: &AgroPipelineConfig,
    features: &FeatureMatrix,
    pretrained: &Grouper,
) -> Result<AgroRounds> {
    config.validate()?;
    let seed = config.agro.seed;
    let m = config.agro.m;

    // Round 0: primary with a random grouping over raw inputs. With small
    // random weights the assignment is near uniform, so this is the weak-ERM
    // warm-up phase.
    let mut theta = nn::init_network(&config.layer_sizes, derive_seed(seed, tags::THETA_INIT))?;
    let random_grouper = Grouper::new_random(
        view.inputs.cols(),
        config.grouper.hidden,
        m,
        derive_seed(seed, tags::RANDOM_GROUPER),
        Some(&view.inputs),
    )?;
    let p_round0 = random_grouper.group_probs(&view.inputs)?;
    let mut stats = GroupStats::zeros(m, config.agro.gamma_ema);
    let mut traces = Vec::new();
    let warmup = agro_primary_epochs(
        &mut theta,
        &p_round0,
        view,
        &mut stats,
        config.agro.t1_epochs,
        &config.agro,
        derive_seed(seed, tags::ROBUST_BATCHES),
        0,
    )?;
    traces.extend(warmup.traces);

    let start = if config.random_adversary_init {
        Grouper::new_random(
            features.data.cols(),
            config.grouper.hidden,
            m,
            derive_seed(seed, tags::GROUPER_INIT),
            if config.grouper.standardize {
                Some(&features.data)
            } else {
                None
            },
        )?
    } else {
        pretrained.clone()
    };

    // Alternating rounds. R = 1 covers the standard setting; extra rounds
    // reuse the same features rather than re-extracting them.
    let mut grouper = start;
    let mut adversary_collapsed = false;
    let mut adversary_epoch_shares = Vec::new();
    let mut checkpoints = Vec::new();
    for round in 1..=config.agro.rounds {
        let adv = agro_adversary_epochs(
            &theta,
            grouper,
            &features.data,
            view,
            config.agro.t2_epochs,
            &config.agro,
            derive_seed(seed, tags::ADVERSARY_BATCHES + round as u64),
            round,
        )?;
        grouper = adv.grouper;
        adversary_collapsed |= adv.collapse_warning;
        adversary_epoch_shares.extend(adv.epoch_max_shares);
        traces.extend(adv.traces);

        let assignment = grouper.group_probs(&features.data)?;
        let mut stats = GroupStats::zeros(m, config.agro.gamma_ema);
        let primary = agro_primary_epochs(
            &mut theta,
            &assignment,
            view,
            &mut stats,
            config.final_epochs,
            &config.agro,
            derive_seed(seed, tags::ROBUST_BATCHES + round as u64),
            round,
        )?;
        traces.extend(primary.traces);
        checkpoints = primary.checkpoints;
    }

    Ok(AgroRounds {
        theta,
        checkpoints,
        grouper,
        traces,
        adversary_collapsed,
        adversary_epoch_shares,
    })
}

/// The full pipeline: warm-up primary, K-fold features, slice mixture,
/// grouper pretraining, adversary round, final primary phase.
///
/// Ground-truth groups never enter: everything derives from the train view.
pub fn agro_train(view: &TrainView, config: &AgroPipelineConfig) -> Result<AgroRun> {
    config.validate()?;
    let seed = config.agro.seed;
    let m = config.agro.m;

    // Feature pipeline: K-fold out-of-fold features over weak fold models.
    let analog = PretrainedAnalog::new(
        view.inputs.cols(),
        config.d_g,
        derive_seed(seed, tags::PRETRAINED_ANALOG),
    );
    let kfold_config = TrainConfig {
        epochs: config.kfold_epochs,
        batch_size: config.agro.batch_size,
        lr: config.erm_lr,
        weight_decay: config.agro.weight_decay,
        seed: derive_seed(seed, tags::KFOLD),
    };
    let KfoldFeatures {
        features,
        fold_models,
    } = extract_features_kfold(view, config.kfold, &config.layer_sizes, &kfold_config, &analog)?;

    // Slice discovery on the feature embedding.
    let (slice_model, slice_fit) = fit_slice_model(
        &features,
        &view.labels,
        m,
        config.slice_gamma,
        config.slice_max_iters,
        config.slice_tol,
        config.slice_pca,
        derive_seed(seed, tags::SLICE_MODEL),
    )?;

    // Grouper initialization: KL-pretraining to the slice responsibilities.
    let fresh = Grouper::new_random(
        features.data.cols(),
        config.grouper.hidden,
        m,
        derive_seed(seed, tags::GROUPER_INIT),
        if config.grouper.standardize {
            Some(&features.data)
        } else {
            None
        },
    )?;
    let (pretrained, kl_trace) = if config.random_adversary_init {
        (fresh, Vec::new())
    } else {
        let out = pretrain_kl(
            fresh,
            &features.data,
            &slice_fit.responsibilities,
            config.grouper.pretrain_epochs,
            config.grouper.pretrain_batch_size,
            config.grouper.pretrain_lr,
            derive_seed(seed, tags::GROUPER_PRETRAIN),
        )?;
        (out.grouper, out.kl_trace)
    };

    let rounds = agro_rounds(view, config, &features, &pretrained)?;
    Ok(AgroRun {
        theta: rounds.theta,
        checkpoints: rounds.checkpoints,
        grouper: rounds.grouper,
        pretrained_grouper: pretrained,
        slice_model,
        slice_fit,
        features,
        fold_models,
        analog,
        traces: rounds.traces,
        adversary_collapsed: rounds.adversary_collapsed,
        adversary_epoch_shares: rounds.adversary_epoch_shares,
        kl_trace,
    })
}
