//! ERM training and the K-fold feature-extraction pipeline.
//!
//! The grouper never sees raw inputs. It sees, per training example,
//!
//! ```text
//! f_i = [ g(x_i) | h(x_i) | onehot(y_i) | p(yhat | x_i) ]
//! ```
//!
//! where `g` is a frozen random projection standing in for a pretrained
//! encoder, `h` is the last hidden layer of a task model, and the prediction
//! probabilities come from a model that never trained on example `i`: the
//! train split is cut into K folds and each fold is scored by a model fitted
//! on the other K-1 folds.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TrainView;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{self, Batch, NetworkParams, UpdateDirection};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.lr <= 0.0 {
            return Err(Error::config("lr must be > 0"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("weight_decay must be >= 0"));
        }
        Ok(())
    }
}

/// Seeded minibatch index sets for one epoch: a Fisher-Yates shuffle chunked
/// into batches. Shared by every training loop in the crate so that runs
/// with equal seeds see equal batch sequences.
pub fn epoch_batches(n: usize, batch_size: usize, stage_seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(stage_seed, epoch as u64));
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
        .chunks(batch_size.max(1))
        .map(|c| c.to_vec())
        .collect()
}

/// Result of an ERM run: final parameters plus one checkpoint per epoch.
#[derive(Debug, Clone)]
pub struct ErmRun {
    pub params: NetworkParams,
    pub checkpoints: Vec<NetworkParams>,
    /// Mean training loss at the end of each epoch's pass.
    pub loss_trace: Vec<f64>,
}

/// Plain ERM: uniform example weights (1/|B| within each minibatch),
/// seeded shuffling, a checkpoint after every epoch.
pub fn train_erm(view: &TrainView, layer_sizes: &[usize], config: &TrainConfig) -> Result<ErmRun> {
    config.validate()?;
    if view.is_empty() {
        return Err(Error::config("training view is empty"));
    }
    let mut params = nn::init_network(layer_sizes, config.seed)?;
    let mut checkpoints = Vec::with_capacity(config.epochs);
    let mut loss_trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for idx in epoch_batches(view.len(), config.batch_size, config.seed, epoch) {
            let b = idx.len();
            let batch = Batch::new(
                view.inputs.select_rows(&idx),
                idx.iter().map(|&i| view.labels[i]).collect(),
                vec![1.0 / b as f64; b],
            )?;
            let (_, weighted, grads) = nn::loss_and_grad(&params, &batch)?;
            if !weighted.is_finite() {
                return Err(Error::numeric(format!(
                    "ERM diverged at epoch {epoch}: batch loss {weighted}"
                )));
            }
            nn::sgd_step(
                &mut params,
                &grads,
                config.lr,
                config.weight_decay,
                UpdateDirection::Descend,
            )?;
            epoch_loss += weighted;
            steps += 1;
        }
        loss_trace.push(epoch_loss / steps.max(1) as f64);
        checkpoints.push(params.clone());
    }
    Ok(ErmRun {
        params,
        checkpoints,
        loss_trace,
    })
}

/// Accuracy of argmax predictions on a view.
pub fn accuracy(params: &NetworkParams, view: &TrainView) -> Result<f64> {
    let preds = predict(params, &view.inputs)?;
    let correct = preds
        .iter()
        .zip(&view.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / view.len() as f64)
}

/// Argmax class predictions; ties break toward the smaller class id.
pub fn predict(params: &NetworkParams, inputs: &Matrix) -> Result<Vec<usize>> {
    let fwd = nn::forward(params, inputs)?;
    Ok((0..inputs.rows()).map(|i| argmax(fwd.logits.row(i))).collect())
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Frozen random projection standing in for a pretrained encoder. The
/// projection matrix is drawn once from its own seed and never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedAnalog {
    proj: Matrix,
}

impl PretrainedAnalog {
    /// Entries are N(0,1)/sqrt(d_in), so projected coordinates keep unit
    /// scale for unit-scale inputs. `d_g = 0` disables the block.
    pub fn new(d_in: usize, d_g: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (d_in.max(1) as f64).sqrt();
        let proj = Matrix::from_fn(d_g, d_in, |_, _| {
            let u1: f64 = 1.0 - rng.gen::<f64>();
            let u2: f64 = rng.gen();
            scale * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        });
        PretrainedAnalog { proj }
    }

    pub fn output_dim(&self) -> usize {
        self.proj.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.proj.rows())
            .map(|o| {
                self.proj
                    .row(o)
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
            })
            .collect()
    }
}

/// Column layout of the assembled feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub d_g: usize,
    pub d_h: usize,
    pub n_classes: usize,
}

impl FeatureLayout {
    pub fn total(&self) -> usize {
        self.d_g + self.d_h + 2 * self.n_classes
    }

    /// Column range of the continuous embedding blocks `[g | h]`.
    pub fn embedding_cols(&self) -> std::ops::Range<usize> {
        0..self.d_g + self.d_h
    }

    pub fn pred_cols(&self) -> std::ops::Range<usize> {
        let start = self.d_g + self.d_h + self.n_classes;
        start..start + self.n_classes
    }
}

/// Feature matrix for a split, one row per example.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Matrix,
    pub layout: FeatureLayout,
}

impl FeatureMatrix {
    /// The continuous `[g | h]` columns, used as the mixture-model embedding.
    pub fn embedding(&self) -> Matrix {
        let cols = self.layout.embedding_cols();
        Matrix::from_fn(self.data.rows(), cols.len(), |i, j| {
            self.data.get(i, cols.start + j)
        })
    }

    /// The prediction-probability block.
    pub fn pred_probs(&self) -> Matrix {
        let cols = self.layout.pred_cols();
        Matrix::from_fn(self.data.rows(), cols.len(), |i, j| {
            self.data.get(i, cols.start + j)
        })
    }
}

fn feature_row(
    layout: &FeatureLayout,
    g: &[f64],
    h: &[f64],
    y: usize,
    pred: &[f64],
) -> Vec<f64> {
    let mut row = Vec::with_capacity(layout.total());
    row.extend_from_slice(g);
    row.extend_from_slice(h);
    for c in 0..layout.n_classes {
        row.push(if c == y { 1.0 } else { 0.0 });
    }
    row.extend_from_slice(pred);
    row
}

/// Output of the K-fold extraction: the feature matrix plus the per-fold
/// models for provenance.
#[derive(Debug, Clone)]
pub struct KfoldFeatures {
    pub features: FeatureMatrix,
    pub fold_models: Vec<NetworkParams>,
}

/// K-fold out-of-fold feature extraction.
///
/// For every example in fold k, `h` and the prediction probabilities come
/// from a model trained with seed `config.seed + k` on the other folds, so
/// no example is ever scored by a model that saw it.
pub fn extract_features_kfold(
    view: &TrainView,
    k: usize,
    layer_sizes: &[usize],
    config: &TrainConfig,
    analog: &PretrainedAnalog,
) -> Result<KfoldFeatures> {
    if k < 2 {
        return Err(Error::config(format!("K-fold extraction needs K >= 2, got {k}")));
    }
    let n = view.len();
    let n_classes = *layer_sizes.last().unwrap();
    let d_h = layer_sizes[layer_sizes.len() - 2];
    let layout = FeatureLayout {
        d_g: analog.output_dim(),
        d_h,
        n_classes,
    };
    for (i, &f) in view.folds.iter().enumerate() {
        if f >= k {
            return Err(Error::config(format!(
                "example {i} has fold id {f}, but K = {k}"
            )));
        }
    }

    let mut rows: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut fold_models = Vec::with_capacity(k);
    for fold in 0..k {
        let held: Vec<usize> = (0..n).filter(|&i| view.folds[i] == fold).collect();
        if held.is_empty() {
            return Err(Error::config(format!("fold {fold} has no held-out examples")));
        }
        let train_idx: Vec<usize> = (0..n).filter(|&i| view.folds[i] != fold).collect();
        let sub = TrainView {
            inputs: view.inputs.select_rows(&train_idx),
            labels: train_idx.iter().map(|&i| view.labels[i]).collect(),
            folds: train_idx.iter().map(|&i| view.folds[i]).collect(),
        };
        let fold_config = TrainConfig {
            seed: config.seed + fold as u64,
            ..config.clone()
        };
        let run = train_erm(&sub, layer_sizes, &fold_config)?;

        let held_inputs = view.inputs.select_rows(&held);
        let fwd = nn::forward(&run.params, &held_inputs)?;
        let probs = nn::softmax_rows(&fwd.logits);
        for (r, &i) in held.iter().enumerate() {
            let g = analog.apply(view.inputs.row(i));
            rows[i] = Some(feature_row(
                &layout,
                &g,
                fwd.hidden.row(r),
                view.labels[i],
                probs.row(r),
            ));
        }
        fold_models.push(run.params);
    }

    let rows: Vec<Vec<f64>> = rows
        .into_iter()
        .map(|r| r.expect("every example belongs to exactly one fold"))
        .collect();
    Ok(KfoldFeatures {
        features: FeatureMatrix {
            data: Matrix::from_rows(&rows)?,
            layout,
        },
        fold_models,
    })
}

/// Feature matrix for an evaluation split, with `h` and prediction
/// probabilities taken from the supplied task model.
pub fn features_for_split(
    params: &NetworkParams,
    inputs: &Matrix,
    labels: &[usize],
    analog: &PretrainedAnalog,
) -> Result<FeatureMatrix> {
    let n_classes = params.output_dim();
    let layout = FeatureLayout {
        d_g: analog.output_dim(),
        d_h: params.hidden_dim(),
        n_classes,
    };
    let fwd = nn::forward(params, inputs)?;
    let probs = nn::softmax_rows(&fwd.logits);
    let rows: Vec<Vec<f64>> = (0..inputs.rows())
        .map(|i| {
            let g = analog.apply(inputs.row(i));
            feature_row(&layout, &g, fwd.hidden.row(i), labels[i], probs.row(i))
        })
        .collect();
    Ok(FeatureMatrix {
        data: Matrix::from_rows(&rows)?,
        layout,
    })
}

/// Per-dimension zero-mean/unit-variance transform fitted on training
/// features. Constant dimensions pass through unscaled.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &Matrix) -> Standardizer {
        let (n, d) = (data.rows(), data.cols());
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(data.row(i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                let c = data.get(i, j) - mean[j];
                var[j] += c * c;
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s < 1e-12 {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    /// Identity transform of the given width.
    pub fn identity(d: usize) -> Standardizer {
        Standardizer {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn apply(&self, data: &Matrix) -> Matrix {
        Matrix::from_fn(data.rows(), data.cols(), |i, j| {
            (data.get(i, j) - self.mean[j]) / self.std[j]
        })
    }
}

// ---------------------------------------------------------------------------
// Feature file persistence: row-major f64 binary + text manifest.
// ---------------------------------------------------------------------------

pub fn write_features(stem: &std::path::Path, fm: &FeatureMatrix, seed_note: &str) -> Result<()> {
    if let Some(dir) = stem.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut bytes = Vec::with_capacity(fm.data.data().len() * 8);
    for v in fm.data.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(stem.with_extension("f64"), bytes)?;
    let manifest = format!(
        "n={}\ndim={}\nd_g={}\nd_h={}\nn_classes={}\nseeds={}\n",
        fm.data.rows(),
        fm.data.cols(),
        fm.layout.d_g,
        fm.layout.d_h,
        fm.layout.n_classes,
        seed_note
    );
    std::fs::write(stem.with_extension("manifest"), manifest)?;
    Ok(())
}

pub fn read_features(stem: &std::path::Path) -> Result<FeatureMatrix> {
    let mpath = stem.with_extension("manifest");
    let fpath = stem.with_extension("f64");
    for p in [&mpath, &fpath] {
        if !p.exists() {
            return Err(Error::MissingInput(p.display().to_string()));
        }
    }
    let text = std::fs::read_to_string(&mpath)?;
    let mut kv = std::collections::BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            kv.insert(k.to_string(), v.to_string());
        }
    }
    let get = |key: &str| -> Result<usize> {
        kv.get(key)
            .ok_or_else(|| Error::Parse(format!("{}: missing `{key}`", mpath.display())))?
            .parse()
            .map_err(|_| Error::Parse(format!("{}: bad `{key}`", mpath.display())))
    };
    let (n, dim) = (get("n")?, get("dim")?);
    let layout = FeatureLayout {
        d_g: get("d_g")?,
        d_h: get("d_h")?,
        n_classes: get("n_classes")?,
    };
    if layout.total() != dim {
        return Err(Error::Parse(format!(
            "{}: block layout does not add up to dim {dim}",
            mpath.display()
        )));
    }
    let bytes = std::fs::read(&fpath)?;
    if bytes.len() != n * dim * 8 {
        return Err(Error::Parse(format!(
            "{}: expected {} bytes, found {}",
            fpath.display(),
            n * dim * 8,
            bytes.len()
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FeatureMatrix {
        data: Matrix::from_flat(n, dim, flat)?,
        layout,
    })
}

/// Debug CSV export of a feature matrix.
pub fn write_features_csv(path: &std::path::Path, fm: &FeatureMatrix) -> Result<()> {
    use std::io::Write;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let l = &fm.layout;
    let mut header: Vec<String> = (0..l.d_g).map(|j| format!("g_{j}")).collect();
    header.extend((0..l.d_h).map(|j| format!("h_{j}")));
    header.extend((0..l.n_classes).map(|c| format!("y_{c}")));
    header.extend((0..l.n_classes).map(|c| format!("p_{c}")));
    writeln!(out, "{}", header.join(","))?;
    for i in 0..fm.data.rows() {
        let row: Vec<String> = fm.data.row(i).iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::kfold_assign;

    fn separable_view(n: usize, seed: u64) -> TrainView {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = i % 2;
            let center = if y == 0 { -2.0 } else { 2.0 };
            rows.push(vec![
                center + 0.3 * rng.gen_range(-1.0..1.0),
                0.3 * rng.gen_range(-1.0..1.0),
            ]);
            labels.push(y);
        }
        TrainView {
            inputs: Matrix::from_rows(&rows).unwrap(),
            labels,
            folds: vec![0; n],
        }
    }

    fn quick_config(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 32,
            lr: 0.1,
            weight_decay: 0.0,
            seed,
        }
    }

    #[test]
    fn erm_fits_separable_data() {
        let view = separable_view(200, 0);
        let run = train_erm(&view, &[2, 8, 2], &quick_config(20, 1)).unwrap();
        assert!(accuracy(&run.params, &view).unwrap() >= 0.99);
        assert_eq!(run.checkpoints.len(), 20);
    }

    #[test]
    fn zero_epochs_returns_init() {
        let view = separable_view(20, 0);
        let run = train_erm(&view, &[2, 4, 2], &quick_config(0, 5)).unwrap();
        assert_eq!(run.params, nn::init_network(&[2, 4, 2], 5).unwrap());
        assert!(run.checkpoints.is_empty());
    }

    #[test]
    fn erm_divergence_aborts_with_numeric_error() {
        // Random labels keep some loss positive, so the oversized steps
        // compound until the forward pass overflows.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 64;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let view = TrainView {
            inputs: Matrix::from_rows(&rows).unwrap(),
            labels: (0..n).map(|_| rng.gen_range(0..2)).collect(),
            folds: vec![0; n],
        };
        let mut cfg = quick_config(5, 1);
        cfg.lr = 1e154;
        cfg.weight_decay = 1.0; // the decay term alone multiplies |p| by lr each step
        let err = train_erm(&view, &[2, 4, 2], &cfg).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "got {err:?}");
    }

    #[test]
    fn erm_is_deterministic() {
        let view = separable_view(64, 2);
        let a = train_erm(&view, &[2, 4, 2], &quick_config(5, 3)).unwrap();
        let b = train_erm(&view, &[2, 4, 2], &quick_config(5, 3)).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn epoch_batches_partition_everything() {
        let batches = epoch_batches(103, 10, 7, 2);
        let mut seen: Vec<usize> = batches.concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..103).collect::<Vec<_>>());
        assert_eq!(batches[0].len(), 10);
    }

    #[test]
    fn analog_is_deterministic_and_linear() {
        let a = PretrainedAnalog::new(5, 3, 9);
        let b = PretrainedAnalog::new(5, 3, 9);
        let x = vec![0.3, -0.7, 1.1, 0.0, 2.0];
        assert_eq!(a.apply(&x), b.apply(&x));

        let doubled: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let gx = a.apply(&x);
        let g2x = a.apply(&doubled);
        for (two, one) in g2x.iter().zip(&gx) {
            assert!((two - 2.0 * one).abs() < 1e-12);
        }
    }

    #[test]
    fn analog_zero_dim_disables_block() {
        let a = PretrainedAnalog::new(4, 0, 0);
        assert!(a.apply(&[1.0, 2.0, 3.0, 4.0]).is_empty());
        assert_eq!(a.output_dim(), 0);
    }

    fn kfold_view(n: usize, k: usize, seed: u64) -> TrainView {
        let mut view = separable_view(n, seed);
        view.folds = kfold_assign(n, k, seed).unwrap();
        view
    }

    #[test]
    fn kfold_features_shape_and_simplex() {
        let view = kfold_view(40, 4, 3);
        let analog = PretrainedAnalog::new(2, 3, 1);
        let out =
            extract_features_kfold(&view, 4, &[2, 4, 2], &quick_config(3, 11), &analog).unwrap();
        let fm = &out.features;
        assert_eq!(fm.data.rows(), 40);
        assert_eq!(fm.data.cols(), 3 + 4 + 2 + 2);
        let probs = fm.pred_probs();
        for i in 0..probs.rows() {
            let s: f64 = probs.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(probs.row(i).iter().all(|&p| p >= 0.0));
        }
        assert_eq!(out.fold_models.len(), 4);
    }

    #[test]
    fn leave_one_out_poisoning_does_not_leak() {
        // Poisoning example j's label must not change j's own out-of-fold
        // prediction, because the model scoring j never trains on j.
        let n = 6;
        let mut view = kfold_view(n, n, 21);
        let analog = PretrainedAnalog::new(2, 2, 2);
        let cfg = quick_config(4, 13);
        let clean = extract_features_kfold(&view, n, &[2, 3, 2], &cfg, &analog).unwrap();

        let j = 2;
        view.labels[j] = 1 - view.labels[j];
        let poisoned = extract_features_kfold(&view, n, &[2, 3, 2], &cfg, &analog).unwrap();

        let pc = clean.features.pred_probs();
        let pp = poisoned.features.pred_probs();
        assert_eq!(pc.row(j), pp.row(j), "out-of-fold prediction for j changed");
        let others_changed = (0..n).any(|i| i != j && pc.row(i) != pp.row(i));
        assert!(others_changed, "poisoning had no effect on other folds");
    }

    #[test]
    fn constant_inputs_give_constant_hidden() {
        let n = 12;
        let rows = vec![vec![0.5, -0.25]; n];
        let view = TrainView {
            inputs: Matrix::from_rows(&rows).unwrap(),
            labels: (0..n).map(|i| i % 2).collect(),
            folds: kfold_assign(n, 3, 0).unwrap(),
        };
        let analog = PretrainedAnalog::new(2, 2, 0);
        let out =
            extract_features_kfold(&view, 3, &[2, 4, 2], &quick_config(2, 1), &analog).unwrap();
        let emb = out.features.embedding();
        // h block is a function of x only; the g block trivially so.
        for fold in 0..3 {
            let members: Vec<usize> = (0..n).filter(|&i| view.folds[i] == fold).collect();
            let first = emb.row(members[0]);
            for &i in &members[1..] {
                for (a, b) in emb.row(i).iter().zip(first) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn fold_validation_errors() {
        let view = kfold_view(10, 2, 0);
        let analog = PretrainedAnalog::new(2, 2, 0);
        let cfg = quick_config(1, 0);
        // K larger than any assigned fold id + 1 leaves empty folds.
        let err = extract_features_kfold(&view, 4, &[2, 3, 2], &cfg, &analog).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = extract_features_kfold(&view, 1, &[2, 3, 2], &cfg, &analog).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn standardizer_zero_mean_unit_var() {
        let m = Matrix::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0], vec![5.0, 5.0]]).unwrap();
        let s = Standardizer::fit(&m);
        let t = s.apply(&m);
        for j in 0..2 {
            let mean: f64 = (0..3).map(|i| t.get(i, j)).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-12);
        }
        // constant column passes through centered but unscaled
        assert_eq!(t.get(0, 1), 0.0);
    }

    #[test]
    fn feature_file_roundtrip() {
        let view = kfold_view(12, 3, 5);
        let analog = PretrainedAnalog::new(2, 2, 3);
        let out =
            extract_features_kfold(&view, 3, &[2, 3, 2], &quick_config(2, 7), &analog).unwrap();
        let dir = std::env::temp_dir().join(format!("agro-feat-{}", std::process::id()));
        let stem = dir.join("train_features");
        write_features(&stem, &out.features, "seed=7").unwrap();
        let back = read_features(&stem).unwrap();
        assert_eq!(back, out.features);
        std::fs::remove_dir_all(&dir).ok();
    }
}
