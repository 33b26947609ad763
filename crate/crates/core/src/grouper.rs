//! The adversary: a 2-layer MLP mapping per-example features to a soft
//! distribution over `m` groups.
//!
//! Before the adversarial rounds the grouper is pretrained to reproduce the
//! slice responsibilities of the mixture model by minimizing the forward
//! KL divergence `KL(responsibilities || grouper output)`. Starting the
//! adversary from this initialization is what prevents the degenerate
//! all-one-group assignment that a randomly initialized grouper drifts into.
//!
//! Feature vectors are standardized per dimension (training statistics)
//! before entering the network; the transform is part of the grouper and is
//! persisted with its checkpoint.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::error::{Error, Result};
use crate::features::{epoch_batches, Standardizer};
use crate::matrix::Matrix;
use crate::nn::{self, NetworkParams, UpdateDirection};
use crate::slice::Responsibilities;

/// n x m row-stochastic soft group membership matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftGroupAssignment(pub Matrix);

impl SoftGroupAssignment {
    pub fn n_groups(&self) -> usize {
        self.0.cols()
    }

    pub fn rows_are_stochastic(&self, tol: f64) -> bool {
        (0..self.0.rows()).all(|i| {
            let row = self.0.row(i);
            row.iter().all(|&v| v >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= tol
        })
    }

    /// Mean membership per group over all rows.
    pub fn group_shares(&self) -> Vec<f64> {
        let n = self.0.rows().max(1);
        let mut shares = vec![0.0; self.0.cols()];
        for i in 0..self.0.rows() {
            for (s, p) in shares.iter_mut().zip(self.0.row(i)) {
                *s += p;
            }
        }
        for s in &mut shares {
            *s /= n as f64;
        }
        shares
    }

    /// Largest group share; 1.0 means total collapse.
    pub fn max_share(&self) -> f64 {
        self.group_shares().iter().cloned().fold(0.0, f64::max)
    }

    /// Mean per-row entropy in nats. Uniform rows give ln(m).
    pub fn mean_entropy(&self) -> f64 {
        let n = self.0.rows().max(1);
        let mut total = 0.0;
        for i in 0..self.0.rows() {
            for &p in self.0.row(i) {
                if p > 0.0 {
                    total -= p * p.ln();
                }
            }
        }
        total / n as f64
    }

    pub fn hard_assignment(&self) -> Vec<usize> {
        (0..self.0.rows())
            .map(|i| crate::features::argmax(self.0.row(i)))
            .collect()
    }
}

/// Grouper configuration knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrouperConfig {
    pub hidden: usize,
    pub n_groups: usize,
    /// Standardize features with training statistics before the MLP.
    pub standardize: bool,
    pub pretrain_epochs: usize,
    pub pretrain_batch_size: usize,
    pub pretrain_lr: f64,
}

impl Default for GrouperConfig {
    fn default() -> Self {
        GrouperConfig {
            hidden: 64,
            n_groups: 4,
            standardize: true,
            pretrain_epochs: 10,
            pretrain_batch_size: 256,
            pretrain_lr: 0.1,
        }
    }
}

/// The adversary network plus its input transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouper {
    pub net: NetworkParams,
    pub standardizer: Standardizer,
}

impl Grouper {
    /// Randomly initialized grouper. `train_features` supplies the
    /// standardization statistics (pass `None` to skip standardization).
    pub fn new_random(
        feature_dim: usize,
        hidden: usize,
        m: usize,
        seed: u64,
        train_features: Option<&Matrix>,
    ) -> Result<Grouper> {
        let net = nn::init_network(&[feature_dim, hidden, m], seed)?;
        let standardizer = match train_features {
            Some(f) => {
                if f.cols() != feature_dim {
                    return Err(Error::shape(format!(
                        "feature dim {} does not match grouper input {feature_dim}",
                        f.cols()
                    )));
                }
                Standardizer::fit(f)
            }
            None => Standardizer::identity(feature_dim),
        };
        Ok(Grouper { net, standardizer })
    }

    pub fn feature_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn n_groups(&self) -> usize {
        self.net.output_dim()
    }

    /// Standardized copy of a feature matrix, ready for the network.
    pub fn standardized(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.feature_dim() {
            return Err(Error::shape(format!(
                "feature dim {} does not match grouper input {}",
                features.cols(),
                self.feature_dim()
            )));
        }
        Ok(self.standardizer.apply(features))
    }

    /// Soft group distribution for every row of `features`.
    pub fn group_probs(&self, features: &Matrix) -> Result<SoftGroupAssignment> {
        let x = self.standardized(features)?;
        let fwd = nn::forward(&self.net, &x)?;
        Ok(SoftGroupAssignment(nn::softmax_rows(&fwd.logits)))
    }
}

/// Mean forward KL divergence `KL(target || grouper)` over all rows.
pub fn mean_kl(grouper: &Grouper, features: &Matrix, targets: &Matrix) -> Result<f64> {
    let x = grouper.standardized(features)?;
    let fwd = nn::forward(&grouper.net, &x)?;
    Ok(mean_kl_from_logits(&fwd.logits, targets))
}

fn mean_kl_from_logits(logits: &Matrix, targets: &Matrix) -> f64 {
    let n = logits.rows();
    let mut total = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for (g, &t) in targets.row(i).iter().enumerate() {
            if t > 0.0 {
                total += t * (t.ln() - (row[g] - lse));
            }
        }
    }
    total / n as f64
}

/// Pretraining result: the updated grouper and the mean-KL trace, one entry
/// before training plus one after each epoch.
#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub grouper: Grouper,
    pub kl_trace: Vec<f64>,
}

/// Fits the grouper to the slice responsibilities by minibatch gradient
/// descent on the mean forward KL divergence.
pub fn pretrain_kl(
    mut grouper: Grouper,
    features: &Matrix,
    responsibilities: &Responsibilities,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<PretrainOutcome> {
    let targets = &responsibilities.0;
    if targets.cols() != grouper.n_groups() {
        return Err(Error::config(format!(
            "slice count {} does not match grouper group count {}",
            targets.cols(),
            grouper.n_groups()
        )));
    }
    if targets.rows() != features.rows() {
        return Err(Error::shape(format!(
            "{} responsibility rows for {} feature rows",
            targets.rows(),
            features.rows()
        )));
    }
    if !responsibilities.rows_are_stochastic(1e-6) {
        return Err(Error::config("responsibilities must be row-stochastic"));
    }

    let x = grouper.standardized(features)?;
    let mut kl_trace = vec![mean_kl_from_logits(
        &nn::forward(&grouper.net, &x)?.logits,
        targets,
    )];
    for epoch in 0..epochs {
        for idx in epoch_batches(x.rows(), batch_size, seed, epoch) {
            let xb = x.select_rows(&idx);
            let tb = targets.select_rows(&idx);
            let fwd = nn::forward(&grouper.net, &xb)?;
            // d(mean KL)/d(logits_i) = (softmax_i - target_i) / |B|
            let mut dlogits = nn::softmax_rows(&fwd.logits);
            let inv_b = 1.0 / idx.len() as f64;
            for i in 0..dlogits.rows() {
                let t = tb.row(i);
                let row = dlogits.row_mut(i);
                for (v, tv) in row.iter_mut().zip(t) {
                    *v = (*v - tv) * inv_b;
                }
            }
            let grads = nn::backward_from_dlogits(&grouper.net, &xb, &dlogits)?;
            nn::sgd_step(&mut grouper.net, &grads, lr, 0.0, UpdateDirection::Descend)?;
        }
        kl_trace.push(mean_kl_from_logits(
            &nn::forward(&grouper.net, &x)?.logits,
            targets,
        ));
    }
    Ok(PretrainOutcome { grouper, kl_trace })
}

/// Persists the grouper: network checkpoint tagged `role=grouper` with the
/// standardizer statistics as extra blocks.
pub fn save_grouper(stem: &std::path::Path, grouper: &Grouper, seed: u64) -> Result<()> {
    let ckpt = Checkpoint {
        params: grouper.net.clone(),
        role: "grouper".into(),
        seed,
        extras: vec![
            ("standardizer_mean".into(), grouper.standardizer.mean.clone()),
            ("standardizer_std".into(), grouper.standardizer.std.clone()),
        ],
    };
    save_checkpoint(stem, &ckpt)
}

pub fn load_grouper(stem: &std::path::Path) -> Result<Grouper> {
    let ckpt = load_checkpoint(stem)?;
    if ckpt.role != "grouper" {
        return Err(Error::Parse(format!(
            "{}: expected role=grouper, found {}",
            stem.display(),
            ckpt.role
        )));
    }
    let mean = ckpt
        .extra("standardizer_mean")
        .ok_or_else(|| Error::Parse("grouper checkpoint missing standardizer_mean".into()))?
        .to_vec();
    let std = ckpt
        .extra("standardizer_std")
        .ok_or_else(|| Error::Parse("grouper checkpoint missing standardizer_std".into()))?
        .to_vec();
    Ok(Grouper {
        net: ckpt.params,
        standardizer: Standardizer { mean, std },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_features(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(n, d, |_, _| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn zero_weight_grouper_is_uniform() {
        let mut g = Grouper::new_random(3, 4, 5, 0, None).unwrap();
        for w in &mut g.net.weights {
            *w = Matrix::zeros(w.rows(), w.cols());
        }
        let p = g.group_probs(&random_features(6, 3, 1)).unwrap();
        for i in 0..6 {
            for &v in p.0.row(i) {
                assert!((v - 0.2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_group_is_degenerate_one() {
        let g = Grouper::new_random(3, 4, 1, 0, None).unwrap();
        let p = g.group_probs(&random_features(4, 3, 2)).unwrap();
        for i in 0..4 {
            assert_eq!(p.0.row(i), &[1.0]);
        }
    }

    #[test]
    fn rows_on_simplex_for_random_params() {
        let feats = random_features(20, 6, 3);
        let g = Grouper::new_random(6, 8, 4, 7, Some(&feats)).unwrap();
        let p = g.group_probs(&feats).unwrap();
        assert!(p.rows_are_stochastic(1e-9));
    }

    #[test]
    fn matching_targets_give_zero_kl_and_zero_update() {
        let feats = random_features(10, 4, 5);
        let g = Grouper::new_random(4, 6, 3, 1, Some(&feats)).unwrap();
        let targets = g.group_probs(&feats).unwrap();
        let before = g.net.clone();
        let out = pretrain_kl(g, &feats, &Responsibilities(targets.0), 2, 5, 0.5, 0).unwrap();
        assert!(out.kl_trace[0].abs() < 1e-12);
        // softmax(logits) == target => dlogits == 0 => params unchanged
        assert_eq!(out.grouper.net, before);
    }

    #[test]
    fn pretraining_fits_separable_one_hot_targets() {
        // Features linearly separable into 3 clusters; targets one-hot.
        let n = 90;
        let mut rows = Vec::new();
        let mut hard = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..n {
            let c = i % 3;
            let center = [(0.0, 4.0), (4.0, -4.0), (-4.0, 0.0)][c];
            rows.push(vec![
                center.0 + rng.gen_range(-0.5..0.5),
                center.1 + rng.gen_range(-0.5..0.5),
            ]);
            hard.push(c);
        }
        let feats = Matrix::from_rows(&rows).unwrap();
        let targets = Matrix::from_fn(n, 3, |i, j| if hard[i] == j { 1.0 } else { 0.0 });
        let g = Grouper::new_random(2, 16, 3, 3, Some(&feats)).unwrap();
        let out = pretrain_kl(g, &feats, &Responsibilities(targets), 30, 16, 0.5, 5).unwrap();
        let p = out.grouper.group_probs(&feats).unwrap();
        let agree = p
            .hard_assignment()
            .iter()
            .zip(&hard)
            .filter(|(a, b)| a == b)
            .count();
        assert!(agree as f64 / n as f64 >= 0.9, "agreement {agree}/{n}");
        // KL strictly decreased from the untrained state.
        assert!(out.kl_trace.last().unwrap() < &out.kl_trace[0]);
    }

    #[test]
    fn pretrain_rejects_group_count_mismatch() {
        let feats = random_features(8, 3, 0);
        let g = Grouper::new_random(3, 4, 2, 0, None).unwrap();
        let targets = Matrix::from_fn(8, 3, |_, _| 1.0 / 3.0);
        let err = pretrain_kl(g, &feats, &Responsibilities(targets), 1, 4, 0.1, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let feats = random_features(6, 4, 9);
        let g = Grouper::new_random(4, 5, 3, 2, Some(&feats)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut targets = Matrix::from_fn(6, 3, |_, _| rng.gen_range(0.05..1.0));
        for i in 0..6 {
            let s: f64 = targets.row(i).iter().sum();
            for v in targets.row_mut(i) {
                *v /= s;
            }
        }
        let x = g.standardized(&feats).unwrap();

        // analytic gradient of mean KL
        let fwd = nn::forward(&g.net, &x).unwrap();
        let mut dlogits = nn::softmax_rows(&fwd.logits);
        for i in 0..6 {
            let t = targets.row(i);
            let row = dlogits.row_mut(i);
            for (v, tv) in row.iter_mut().zip(t) {
                *v = (*v - tv) / 6.0;
            }
        }
        let analytic = nn::backward_from_dlogits(&g.net, &x, &dlogits).unwrap();

        let numeric = nn::finite_diff_generic(
            &g.net,
            |net| {
                let fwd = nn::forward(net, &x)?;
                Ok(mean_kl_from_logits(&fwd.logits, &targets))
            },
            1e-5,
        )
        .unwrap();
        let err = analytic.max_rel_error(&numeric, 1e-6);
        assert!(err < 1e-3, "max rel error {err}");
    }

    #[test]
    fn grouper_checkpoint_roundtrip() {
        let feats = random_features(12, 5, 6);
        let g = Grouper::new_random(5, 4, 3, 9, Some(&feats)).unwrap();
        let dir = std::env::temp_dir().join(format!("agro-grouper-{}", std::process::id()));
        let stem = dir.join("grouper");
        save_grouper(&stem, &g, 9).unwrap();
        let back = load_grouper(&stem).unwrap();
        assert_eq!(back, g);
        std::fs::remove_dir_all(&dir).ok();
    }
}
