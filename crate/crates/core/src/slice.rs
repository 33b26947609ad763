//! Error-aware mixture model over (embedding, label, prediction).
//!
//! Each of `k` slices carries a diagonal Gaussian over embeddings and two
//! categoricals over labels and model predictions, the latter raised to a
//! coherence exponent `gamma_slice`:
//!
//! ```text
//! p(z, y, yhat | slice j) = N(z; mu_j, sigma_j) * p_label[j][y]^g * p_pred[j][yhat]^g
//! ```
//!
//! Fitting maximizes the mixture log-likelihood by expectation-maximization;
//! responsibilities are always computed in log space. `gamma_slice = 0`
//! reduces the model to a plain diagonal Gaussian mixture over embeddings,
//! and `gamma_slice = 1` makes slices homogeneous in (label, prediction)
//! pattern, which is what lets them isolate coherent error slices.
//!
//! This mixture uses `gamma_slice`; the robust optimizer's moving averages
//! use an unrelated coefficient named `gamma_ema`. The two never mix.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::argmax;
use crate::matrix::Matrix;
use crate::pca::Pca;

/// Variance floor for the diagonal Gaussians.
pub const VAR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceModelParams {
    pub k: usize,
    /// Mixture prior, a k-simplex.
    pub p_s: Vec<f64>,
    /// k x d per-slice means.
    pub mu: Matrix,
    /// k x d per-slice diagonal variances, floored at [`VAR_FLOOR`].
    pub sigma: Matrix,
    /// k x C label distributions.
    pub p_label: Matrix,
    /// k x C prediction distributions.
    pub p_pred: Matrix,
    pub gamma_slice: f64,
}

/// n x k row-stochastic slice membership probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities(pub Matrix);

impl Responsibilities {
    pub fn rows_are_stochastic(&self, tol: f64) -> bool {
        (0..self.0.rows()).all(|i| {
            let row = self.0.row(i);
            row.iter().all(|&v| v >= 0.0)
                && (row.iter().sum::<f64>() - 1.0).abs() <= tol
        })
    }

    /// Hard slice ids by argmax, ties toward the smaller slice id.
    pub fn hard_assignment(&self) -> Vec<usize> {
        (0..self.0.rows()).map(|i| argmax(self.0.row(i))).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SliceFit {
    pub params: SliceModelParams,
    pub responsibilities: Responsibilities,
    /// Log-likelihood after each E-step, including the final one.
    pub loglik_trace: Vec<f64>,
    /// Number of slices re-seeded after collapsing to zero mass.
    pub reseeded: usize,
}

fn log_gaussian_diag(z: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((zv, mv), sv) in z.iter().zip(mu).zip(sigma) {
        let diff = zv - mv;
        acc += -0.5 * ((2.0 * std::f64::consts::PI * sv).ln() + diff * diff / sv);
    }
    acc
}

fn log_responsibility_row(params: &SliceModelParams, z: &[f64], y: usize, yhat: usize) -> Vec<f64> {
    let g = params.gamma_slice;
    (0..params.k)
        .map(|j| {
            params.p_s[j].ln()
                + log_gaussian_diag(z, params.mu.row(j), params.sigma.row(j))
                + g * params.p_label.get(j, y).ln()
                + g * params.p_pred.get(j, yhat).ln()
        })
        .collect()
}

fn log_sum_exp(vals: &[f64]) -> f64 {
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// k distinct seeded example indices used to place the initial means.
fn distinct_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..k {
        let j = rng.gen_range(i..n);
        order.swap(i, j);
    }
    order.truncate(k);
    order
}

fn global_variance(z: &Matrix) -> Vec<f64> {
    let (n, d) = (z.rows(), z.cols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(z.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            let c = z.get(i, j) - mean[j];
            var[j] += c * c;
        }
    }
    var.iter().map(|v| (v / n as f64).max(VAR_FLOOR)).collect()
}

fn smoothed_histogram(values: &[usize], n_classes: usize) -> Vec<f64> {
    let mut h = vec![1.0; n_classes]; // +1 smoothing
    for &v in values {
        h[v] += 1.0;
    }
    let total: f64 = h.iter().sum();
    h.iter().map(|v| v / total).collect()
}

/// Seeded initialization: means at k distinct examples, uniform prior,
/// global variances, smoothed global histograms for both categoricals.
pub fn initial_params(
    z: &Matrix,
    labels: &[usize],
    yhat: &[usize],
    n_classes: usize,
    k: usize,
    gamma_slice: f64,
    seed: u64,
) -> Result<SliceModelParams> {
    let n = z.rows();
    if k == 0 || n < k {
        return Err(Error::config(format!("cannot fit {k} slices on {n} examples")));
    }
    if gamma_slice < 0.0 {
        return Err(Error::config("gamma_slice must be >= 0"));
    }
    if !z.all_finite() {
        return Err(Error::numeric("non-finite embedding matrix"));
    }
    let var = global_variance(z);
    let seeds = distinct_indices(n, k, seed);
    let mu = Matrix::from_fn(k, z.cols(), |j, d| z.get(seeds[j], d));
    let sigma = Matrix::from_fn(k, z.cols(), |_, d| var[d]);
    let label_hist = smoothed_histogram(labels, n_classes);
    let pred_hist = smoothed_histogram(yhat, n_classes);
    Ok(SliceModelParams {
        k,
        p_s: vec![1.0 / k as f64; k],
        mu,
        sigma,
        p_label: Matrix::from_fn(k, n_classes, |_, c| label_hist[c]),
        p_pred: Matrix::from_fn(k, n_classes, |_, c| pred_hist[c]),
        gamma_slice,
    })
}

fn e_step(params: &SliceModelParams, z: &Matrix, labels: &[usize], yhat: &[usize]) -> (Matrix, Vec<f64>, f64) {
    let n = z.rows();
    let mut resp = Matrix::zeros(n, params.k);
    let mut row_loglik = Vec::with_capacity(n);
    let mut total = 0.0;
    for i in 0..n {
        let logs = log_responsibility_row(params, z.row(i), labels[i], yhat[i]);
        let lse = log_sum_exp(&logs);
        let out = resp.row_mut(i);
        if lse.is_finite() {
            for (o, l) in out.iter_mut().zip(&logs) {
                *o = (l - lse).exp();
            }
        } else {
            // Everything underflowed; fall back to uniform membership.
            for o in out.iter_mut() {
                *o = 1.0 / params.k as f64;
            }
        }
        row_loglik.push(lse);
        total += lse;
    }
    (resp, row_loglik, total)
}

#[allow(clippy::needless_range_loop)]
fn m_step(
    params: &mut SliceModelParams,
    z: &Matrix,
    labels: &[usize],
    yhat: &[usize],
    resp: &Matrix,
    row_loglik: &[f64],
) -> usize {
    let (n, d) = (z.rows(), z.cols());
    let k = params.k;
    let n_classes = params.p_label.cols();
    let mut reseeded = 0;

    let mut mass = vec![0.0; k];
    for i in 0..n {
        for (m, r) in mass.iter_mut().zip(resp.row(i)) {
            *m += r;
        }
    }

    let global_var = global_variance(z);
    for j in 0..k {
        if mass[j] > 1e-12 {
            let nj = mass[j];
            for c in 0..d {
                let mut s = 0.0;
                for i in 0..n {
                    s += resp.get(i, j) * z.get(i, c);
                }
                params.mu.set(j, c, s / nj);
            }
            for c in 0..d {
                let mu = params.mu.get(j, c);
                let mut s = 0.0;
                for i in 0..n {
                    let diff = z.get(i, c) - mu;
                    s += resp.get(i, j) * diff * diff;
                }
                params.sigma.set(j, c, (s / nj).max(VAR_FLOOR));
            }
            let mut lh = vec![0.0; n_classes];
            let mut ph = vec![0.0; n_classes];
            for i in 0..n {
                lh[labels[i]] += resp.get(i, j);
                ph[yhat[i]] += resp.get(i, j);
            }
            for c in 0..n_classes {
                params.p_label.set(j, c, lh[c] / nj);
                params.p_pred.set(j, c, ph[c] / nj);
            }
            params.p_s[j] = nj / n as f64;
        } else {
            // Collapsed slice: re-seed it at the lowest-likelihood example.
            reseeded += 1;
            let mut worst = 0;
            for (i, l) in row_loglik.iter().enumerate() {
                if *l < row_loglik[worst] {
                    worst = i;
                }
            }
            for c in 0..d {
                params.mu.set(j, c, z.get(worst, c));
                params.sigma.set(j, c, global_var[c]);
            }
            let lh = smoothed_histogram(labels, n_classes);
            let ph = smoothed_histogram(yhat, n_classes);
            for c in 0..n_classes {
                params.p_label.set(j, c, lh[c]);
                params.p_pred.set(j, c, ph[c]);
            }
            params.p_s[j] = 1.0 / n as f64;
        }
    }
    let total: f64 = params.p_s.iter().sum();
    for p in &mut params.p_s {
        *p /= total;
    }
    reseeded
}

/// Runs EM from explicit initial parameters.
///
/// Stops after `max_iters` M-steps or when the log-likelihood changes by
/// less than `tol` between consecutive E-steps. The returned
/// responsibilities are consistent with the returned parameters.
pub fn fit_em_from(
    init: SliceModelParams,
    z: &Matrix,
    labels: &[usize],
    yhat: &[usize],
    max_iters: usize,
    tol: f64,
) -> Result<SliceFit> {
    let n = z.rows();
    if labels.len() != n || yhat.len() != n {
        return Err(Error::shape(format!(
            "slice fit arity mismatch: {n} embeddings, {} labels, {} predictions",
            labels.len(),
            yhat.len()
        )));
    }
    let mut params = init;
    let mut trace: Vec<f64> = Vec::new();
    let mut reseeded = 0;
    loop {
        let (resp, row_loglik, loglik) = e_step(&params, z, labels, yhat);
        let converged = trace
            .last()
            .is_some_and(|prev| (loglik - prev).abs() < tol);
        trace.push(loglik);
        if converged || trace.len() > max_iters {
            return Ok(SliceFit {
                params,
                responsibilities: Responsibilities(resp),
                loglik_trace: trace,
                reseeded,
            });
        }
        reseeded += m_step(&mut params, z, labels, yhat, &resp, &row_loglik);
    }
}

/// Fits the mixture: seeded init followed by EM.
///
/// `yhat_probs` rows must lie on the simplex; the argmax is taken as the
/// hard prediction, ties toward the smaller class id.
#[allow(clippy::too_many_arguments)]
pub fn fit_em(
    z: &Matrix,
    labels: &[usize],
    yhat_probs: &Matrix,
    k: usize,
    gamma_slice: f64,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<SliceFit> {
    let n_classes = yhat_probs.cols();
    let yhat: Vec<usize> = (0..yhat_probs.rows()).map(|i| argmax(yhat_probs.row(i))).collect();
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::config(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    let init = initial_params(z, labels, &yhat, n_classes, k, gamma_slice, seed)?;
    fit_em_from(init, z, labels, &yhat, max_iters, tol)
}

/// Posterior slice probabilities for one example, in log space.
///
/// Returns the responsibility vector and a flag that is set when every
/// component underflowed and the uniform fallback was used.
pub fn predict_slice_probs(
    params: &SliceModelParams,
    z: &[f64],
    y: usize,
    yhat: usize,
) -> (Vec<f64>, bool) {
    let logs = log_responsibility_row(params, z, y, yhat);
    let lse = log_sum_exp(&logs);
    if lse.is_finite() {
        (logs.iter().map(|l| (l - lse).exp()).collect(), false)
    } else {
        (vec![1.0 / params.k as f64; params.k], true)
    }
}

/// Slice model plus the optional PCA applied to embeddings before it.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceModel {
    pub pca: Option<Pca>,
    pub params: SliceModelParams,
}

impl SliceModel {
    pub fn project(&self, z_raw: &[f64]) -> Vec<f64> {
        match &self.pca {
            Some(p) => p.apply_row(z_raw),
            None => z_raw.to_vec(),
        }
    }

    pub fn predict(&self, z_raw: &[f64], y: usize, yhat: usize) -> (Vec<f64>, bool) {
        predict_slice_probs(&self.params, &self.project(z_raw), y, yhat)
    }
}

/// One row of the per-slice report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SliceReportRow {
    pub slice: usize,
    pub size: usize,
    pub top_label: usize,
    pub top_pred: usize,
    pub error_rate: f64,
}

/// Per-slice summary over hard (argmax) members: size, modal (label,
/// prediction) pair, and fraction of members with `label != prediction`.
pub fn slice_report(
    fit: &SliceFit,
    labels: &[usize],
    yhat: &[usize],
    n_classes: usize,
) -> Vec<SliceReportRow> {
    let hard = fit.responsibilities.hard_assignment();
    let k = fit.params.k;
    let mut rows = Vec::with_capacity(k);
    for j in 0..k {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| hard[i] == j).collect();
        let mut pair_counts = vec![0usize; n_classes * n_classes];
        let mut errors = 0usize;
        for &i in &members {
            pair_counts[labels[i] * n_classes + yhat[i]] += 1;
            if labels[i] != yhat[i] {
                errors += 1;
            }
        }
        let top = pair_counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(idx, _)| idx)
            .unwrap_or(0);
        rows.push(SliceReportRow {
            slice: j,
            size: members.len(),
            top_label: top / n_classes,
            top_pred: top % n_classes,
            error_rate: if members.is_empty() {
                0.0
            } else {
                errors as f64 / members.len() as f64
            },
        });
    }
    rows
}

pub fn write_slice_report_csv(path: &std::path::Path, rows: &[SliceReportRow]) -> Result<()> {
    use std::io::Write;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "slice,size,top_label,top_pred,error_rate")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.slice, r.size, r.top_label, r.top_pred, r.error_rate
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Persistence: flat f64 binary + text manifest.
// ---------------------------------------------------------------------------

pub fn save_slice_model(stem: &std::path::Path, model: &SliceModel, fit_info: &str) -> Result<()> {
    if let Some(dir) = stem.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let p = &model.params;
    let mut flat: Vec<f64> = Vec::new();
    flat.extend_from_slice(&p.p_s);
    flat.extend_from_slice(p.mu.data());
    flat.extend_from_slice(p.sigma.data());
    flat.extend_from_slice(p.p_label.data());
    flat.extend_from_slice(p.p_pred.data());
    if let Some(pca) = &model.pca {
        flat.extend_from_slice(&pca.mean);
        flat.extend_from_slice(pca.components.data());
    }
    let mut bytes = Vec::with_capacity(flat.len() * 8);
    for v in &flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(stem.with_extension("bin"), bytes)?;

    let mut manifest = format!(
        "k={}\nd={}\nn_classes={}\ngamma_slice={}\n",
        p.k,
        p.mu.cols(),
        p.p_label.cols(),
        p.gamma_slice
    );
    if let Some(pca) = &model.pca {
        manifest.push_str(&format!(
            "pca_in_dim={}\npca_out_dim={}\n",
            pca.components.cols(),
            pca.output_dim()
        ));
    }
    manifest.push_str(&format!("fit={fit_info}\n"));
    std::fs::write(stem.with_extension("manifest"), manifest)?;
    Ok(())
}

pub fn load_slice_model(stem: &std::path::Path) -> Result<SliceModel> {
    let mpath = stem.with_extension("manifest");
    let bpath = stem.with_extension("bin");
    for path in [&mpath, &bpath] {
        if !path.exists() {
            return Err(Error::MissingInput(path.display().to_string()));
        }
    }
    let text = std::fs::read_to_string(&mpath)?;
    let mut kv = std::collections::BTreeMap::new();
    for line in text.lines() {
        if let Some((key, value)) = line.split_once('=') {
            kv.insert(key.to_string(), value.to_string());
        }
    }
    let get = |key: &str| -> Result<String> {
        kv.get(key)
            .cloned()
            .ok_or_else(|| Error::Parse(format!("{}: missing `{key}`", mpath.display())))
    };
    let k: usize = get("k")?.parse().map_err(|_| Error::Parse("bad k".into()))?;
    let d: usize = get("d")?.parse().map_err(|_| Error::Parse("bad d".into()))?;
    let n_classes: usize = get("n_classes")?
        .parse()
        .map_err(|_| Error::Parse("bad n_classes".into()))?;
    let gamma_slice: f64 = get("gamma_slice")?
        .parse()
        .map_err(|_| Error::Parse("bad gamma_slice".into()))?;
    let pca_dims: Option<(usize, usize)> = match (kv.get("pca_in_dim"), kv.get("pca_out_dim")) {
        (Some(i), Some(o)) => Some((
            i.parse().map_err(|_| Error::Parse("bad pca_in_dim".into()))?,
            o.parse().map_err(|_| Error::Parse("bad pca_out_dim".into()))?,
        )),
        _ => None,
    };

    let bytes = std::fs::read(&bpath)?;
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut expected = k + 2 * k * d + 2 * k * n_classes;
    if let Some((din, dout)) = pca_dims {
        expected += din + dout * din;
    }
    if flat.len() != expected {
        return Err(Error::Parse(format!(
            "{}: expected {expected} values, found {}",
            bpath.display(),
            flat.len()
        )));
    }
    let mut off = 0;
    let mut take = |len: usize| -> Vec<f64> {
        let v = flat[off..off + len].to_vec();
        off += len;
        v
    };
    let p_s = take(k);
    let mu = Matrix::from_flat(k, d, take(k * d))?;
    let sigma = Matrix::from_flat(k, d, take(k * d))?;
    let p_label = Matrix::from_flat(k, n_classes, take(k * n_classes))?;
    let p_pred = Matrix::from_flat(k, n_classes, take(k * n_classes))?;
    let pca = match pca_dims {
        Some((din, dout)) => Some(Pca {
            mean: take(din),
            components: Matrix::from_flat(dout, din, take(dout * din))?,
        }),
        None => None,
    };
    Ok(SliceModel {
        pca,
        params: SliceModelParams {
            k,
            p_s,
            mu,
            sigma,
            p_label,
            p_pred,
            gamma_slice,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two Gaussian blobs, far apart, with slice-consistent labels and
    /// predictions: blob 0 is labeled 0 and predicted 0, blob 1 is labeled 1
    /// but predicted 0 (an error slice).
    fn blobs(n_per: usize, separation: f64, seed: u64) -> (Matrix, Vec<usize>, Vec<usize>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut yhat = Vec::new();
        let mut truth = Vec::new();
        for blob in 0..2usize {
            let center = if blob == 0 { 0.0 } else { separation };
            for _ in 0..n_per {
                rows.push(vec![
                    center + rng.gen_range(-0.5..0.5),
                    center + rng.gen_range(-0.5..0.5),
                ]);
                labels.push(blob);
                yhat.push(0);
                truth.push(blob);
            }
        }
        (Matrix::from_rows(&rows).unwrap(), labels, yhat, truth)
    }

    fn uniform_probs(yhat: &[usize], n_classes: usize) -> Matrix {
        Matrix::from_fn(yhat.len(), n_classes, |i, c| if yhat[i] == c { 0.9 } else { 0.1 / (n_classes - 1) as f64 })
    }

    #[test]
    fn single_slice_recovers_global_statistics() {
        let (z, labels, yhat, _) = blobs(30, 4.0, 1);
        let probs = uniform_probs(&yhat, 2);
        let fit = fit_em(&z, &labels, &probs, 1, 1.0, 50, 1e-8, 0).unwrap();
        for i in 0..z.rows() {
            assert_eq!(fit.responsibilities.0.get(i, 0), 1.0);
        }
        // mu equals the data mean
        for c in 0..z.cols() {
            let mean: f64 = (0..z.rows()).map(|i| z.get(i, c)).sum::<f64>() / z.rows() as f64;
            assert!((fit.params.mu.get(0, c) - mean).abs() < 1e-9);
        }
        // label categorical equals the empirical histogram
        let h0 = labels.iter().filter(|&&y| y == 0).count() as f64 / labels.len() as f64;
        assert!((fit.params.p_label.get(0, 0) - h0).abs() < 1e-9);
    }

    #[test]
    fn two_blobs_recovered_with_high_ari() {
        let (z, labels, yhat, truth) = blobs(60, 10.0, 2);
        let probs = uniform_probs(&yhat, 2);
        let fit = fit_em(&z, &labels, &probs, 2, 1.0, 100, 1e-8, 3).unwrap();
        let hard = fit.responsibilities.hard_assignment();
        let ari = crate::eval::adjusted_rand_index(&hard, &truth);
        assert!(ari >= 0.99, "ARI {ari}");
    }

    #[test]
    fn loglik_nondecreasing_for_gamma_one() {
        for seed in 0..5u64 {
            let (z, labels, yhat, _) = blobs(40, 3.0, seed);
            let probs = uniform_probs(&yhat, 2);
            let fit = fit_em(&z, &labels, &probs, 3, 1.0, 60, 0.0, seed).unwrap();
            for w in fit.loglik_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-8, "loglik dropped: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn gamma_zero_matches_plain_gmm_oracle() {
        // Independent diagonal-GMM EM implemented here from scratch; with
        // gamma = 0 the slice model must produce the same loglik trace from
        // the same initialization.
        let (z, labels, yhat, _) = blobs(50, 6.0, 9);
        let n_classes = 2;
        let init = initial_params(&z, &labels, &yhat, n_classes, 2, 0.0, 7).unwrap();
        let iters = 25;
        let fit = fit_em_from(init.clone(), &z, &labels, &yhat, iters, 0.0).unwrap();

        // --- oracle: plain GMM EM on z alone ---
        let (n, d) = (z.rows(), z.cols());
        let k = 2;
        let mut pi = init.p_s.clone();
        let mut mu = init.mu.clone();
        let mut var = init.sigma.clone();
        let mut trace = Vec::new();
        loop {
            let mut resp = Matrix::zeros(n, k);
            let mut ll = 0.0;
            for i in 0..n {
                let logs: Vec<f64> = (0..k)
                    .map(|j| pi[j].ln() + log_gaussian_diag(z.row(i), mu.row(j), var.row(j)))
                    .collect();
                let lse = log_sum_exp(&logs);
                ll += lse;
                for j in 0..k {
                    resp.set(i, j, (logs[j] - lse).exp());
                }
            }
            trace.push(ll);
            if trace.len() > iters {
                break;
            }
            for j in 0..k {
                let nj: f64 = (0..n).map(|i| resp.get(i, j)).sum();
                pi[j] = nj / n as f64;
                for c in 0..d {
                    let m: f64 = (0..n).map(|i| resp.get(i, j) * z.get(i, c)).sum::<f64>() / nj;
                    mu.set(j, c, m);
                }
                for c in 0..d {
                    let m = mu.get(j, c);
                    let v: f64 = (0..n)
                        .map(|i| {
                            let diff = z.get(i, c) - m;
                            resp.get(i, j) * diff * diff
                        })
                        .sum::<f64>()
                        / nj;
                    var.set(j, c, v.max(VAR_FLOOR));
                }
            }
        }

        assert_eq!(fit.loglik_trace.len(), trace.len());
        for (a, b) in fit.loglik_trace.iter().zip(&trace) {
            assert!((a - b).abs() < 1e-6, "slice {a} vs gmm oracle {b}");
        }
    }

    #[test]
    fn predict_single_slice_is_one() {
        let (z, labels, yhat, _) = blobs(20, 2.0, 4);
        let probs = uniform_probs(&yhat, 2);
        let fit = fit_em(&z, &labels, &probs, 1, 1.0, 20, 1e-8, 0).unwrap();
        let (p, underflow) = predict_slice_probs(&fit.params, z.row(0), labels[0], yhat[0]);
        assert_eq!(p, vec![1.0]);
        assert!(!underflow);
    }

    #[test]
    fn predict_symmetric_slices_split_evenly() {
        let params = SliceModelParams {
            k: 2,
            p_s: vec![0.5, 0.5],
            mu: Matrix::from_rows(&[vec![-1.0], vec![1.0]]).unwrap(),
            sigma: Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap(),
            p_label: Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap(),
            p_pred: Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap(),
            gamma_slice: 1.0,
        };
        let (p, _) = predict_slice_probs(&params, &[0.0], 0, 0);
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert!((p[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn predict_tight_slice_at_its_mean_dominates() {
        let params = SliceModelParams {
            k: 2,
            p_s: vec![0.5, 0.5],
            mu: Matrix::from_rows(&[vec![0.0], vec![5.0]]).unwrap(),
            sigma: Matrix::from_rows(&[vec![1e-2], vec![1e-2]]).unwrap(),
            p_label: Matrix::from_rows(&[vec![0.99, 0.01], vec![0.01, 0.99]]).unwrap(),
            p_pred: Matrix::from_rows(&[vec![0.99, 0.01], vec![0.01, 0.99]]).unwrap(),
            gamma_slice: 1.0,
        };
        let (p, _) = predict_slice_probs(&params, &[0.0], 0, 0);
        assert!(p[0] > 0.999, "slice 1 probability {}", p[0]);
    }

    #[test]
    fn collapsed_slice_is_reseeded_from_the_worst_example() {
        // A slice whose mean sits absurdly far from all data draws zero
        // responsibility mass and must be re-seeded during the M-step.
        let (z, labels, yhat, _) = blobs(30, 4.0, 6);
        let mut init = initial_params(&z, &labels, &yhat, 2, 2, 1.0, 0).unwrap();
        for c in 0..z.cols() {
            init.mu.set(1, c, 1e8);
            init.sigma.set(1, c, VAR_FLOOR);
        }
        let fit = fit_em_from(init, &z, &labels, &yhat, 20, 1e-8).unwrap();
        assert!(fit.reseeded >= 1, "collapsed slice was never re-seeded");
        assert!(fit.loglik_trace.last().unwrap().is_finite());
        assert!(fit.responsibilities.rows_are_stochastic(1e-6));
    }

    #[test]
    fn predict_underflow_falls_back_to_uniform() {
        let params = SliceModelParams {
            k: 3,
            p_s: vec![1.0 / 3.0; 3],
            mu: Matrix::from_rows(&[vec![1e160], vec![-1e160], vec![5e160]]).unwrap(),
            sigma: Matrix::from_rows(&[vec![VAR_FLOOR], vec![VAR_FLOOR], vec![VAR_FLOOR]]).unwrap(),
            p_label: Matrix::from_fn(3, 2, |_, _| 0.5),
            p_pred: Matrix::from_fn(3, 2, |_, _| 0.5),
            gamma_slice: 1.0,
        };
        let (p, underflowed) = predict_slice_probs(&params, &[0.0], 0, 0);
        assert!(underflowed);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn responsibilities_always_row_stochastic() {
        for seed in 0..5u64 {
            let (z, labels, yhat, _) = blobs(30, 1.0 + seed as f64, seed);
            let probs = uniform_probs(&yhat, 2);
            let fit = fit_em(&z, &labels, &probs, 4, 1.0, 30, 1e-7, seed).unwrap();
            assert!(fit.responsibilities.rows_are_stochastic(1e-6));
        }
    }

    #[test]
    fn error_patterns_make_slices_homogeneous() {
        // Blob 1 is an error slice (label 1, predicted 0); blob 0 is clean.
        let (z, labels, yhat, _) = blobs(60, 8.0, 11);
        let probs = uniform_probs(&yhat, 2);
        let fit = fit_em(&z, &labels, &probs, 2, 1.0, 100, 1e-8, 1).unwrap();
        let hard = fit.responsibilities.hard_assignment();
        for j in 0..2 {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| hard[i] == j).collect();
            assert!(!members.is_empty());
            let mut pair_counts = std::collections::BTreeMap::new();
            for &i in &members {
                *pair_counts.entry((labels[i], yhat[i])).or_insert(0usize) += 1;
            }
            let top = pair_counts.values().max().unwrap();
            let frac = *top as f64 / members.len() as f64;
            assert!(frac >= 0.9, "slice {j} majority pair covers only {frac}");
        }
    }

    #[test]
    fn slice_model_roundtrip() {
        let (z, labels, yhat, _) = blobs(40, 5.0, 13);
        let probs = uniform_probs(&yhat, 2);
        let fit = fit_em(&z, &labels, &probs, 2, 1.0, 40, 1e-8, 0).unwrap();
        let pca = Pca::fit(&z, 2).unwrap();
        let zp = pca.apply(&z);
        let fit_p = fit_em(&zp, &labels, &probs, 2, 1.0, 40, 1e-8, 0).unwrap();
        let model = SliceModel {
            pca: Some(pca),
            params: fit_p.params.clone(),
        };
        let dir = std::env::temp_dir().join(format!("agro-slice-{}", std::process::id()));
        let stem = dir.join("slices");
        save_slice_model(&stem, &model, "iters=40").unwrap();
        let back = load_slice_model(&stem).unwrap();
        assert_eq!(back, model);

        let plain = SliceModel {
            pca: None,
            params: fit.params,
        };
        let stem2 = dir.join("plain");
        save_slice_model(&stem2, &plain, "iters=40").unwrap();
        assert_eq!(load_slice_model(&stem2).unwrap(), plain);
        std::fs::remove_dir_all(&dir).ok();
    }
}
