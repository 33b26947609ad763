//! Feed-forward ReLU classifier with hand-derived gradients.
//!
//! The network is a fixed architecture: dense layers with ReLU between
//! them and raw logits at the output. The training loss is per-example
//! weighted softmax cross-entropy,
//!
//! ```text
//! loss_i = -log softmax(logits_i)[y_i],    weighted_sum = sum_i w_i * loss_i
//! ```
//!
//! and `backward` returns the exact gradient of `weighted_sum` with respect
//! to every weight and bias. `finite_diff_grad` provides the central-difference
//! oracle used to validate it. Everything is `f64`, single-threaded, and
//! deterministic: identical inputs give bitwise-identical outputs.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Elementwise nonlinearity between layers. Fixed to ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
        }
    }
}

/// Parameters of the classifier.
///
/// `weights[l]` has shape `(layer_sizes[l+1], layer_sizes[l])`, row-major;
/// `biases[l]` has length `layer_sizes[l+1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
}

/// Gradients, shape-congruent with the originating [`NetworkParams`].
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

/// A minibatch: inputs, class labels, and one nonnegative weight per example.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub example_weights: Vec<f64>,
}

impl Batch {
    pub fn new(inputs: Matrix, labels: Vec<usize>, example_weights: Vec<f64>) -> Result<Self> {
        let n = inputs.rows();
        if n == 0 {
            return Err(Error::config("batch must contain at least one example"));
        }
        if labels.len() != n || example_weights.len() != n {
            return Err(Error::shape(format!(
                "batch size mismatch: {n} inputs, {} labels, {} weights",
                labels.len(),
                example_weights.len()
            )));
        }
        if example_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::config("example weights must be finite and >= 0"));
        }
        Ok(Batch {
            inputs,
            labels,
            example_weights,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Update direction for [`sgd_step`]: the task model descends, the
/// adversary ascends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateDirection {
    Descend,
    Ascend,
}

/// Forward outputs: raw logits and the last pre-output activation.
///
/// For a single-layer network the "hidden" representation is the input
/// itself.
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Matrix,
    pub hidden: Matrix,
}

impl NetworkParams {
    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Dimension of the representation returned as `hidden` by [`forward`].
    pub fn hidden_dim(&self) -> usize {
        self.layer_sizes[self.layer_sizes.len() - 2]
    }

    /// Total number of scalar parameters.
    pub fn n_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }

    /// Flattens all parameters in layer order, weights before biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in 0..self.n_layers() {
            out.extend_from_slice(self.weights[l].data());
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    /// Rebuilds parameters from a flat buffer produced by [`Self::to_flat`].
    pub fn from_flat(layer_sizes: &[usize], flat: &[f64], activation: Activation) -> Result<Self> {
        validate_layer_sizes(layer_sizes)?;
        let mut params = zeroed(layer_sizes, activation);
        if flat.len() != params.n_params() {
            return Err(Error::shape(format!(
                "flat buffer has {} values, layer sizes {:?} need {}",
                flat.len(),
                layer_sizes,
                params.n_params()
            )));
        }
        let mut off = 0;
        for l in 0..params.n_layers() {
            let (out_dim, in_dim) = (layer_sizes[l + 1], layer_sizes[l]);
            let wlen = out_dim * in_dim;
            params.weights[l] =
                Matrix::from_flat(out_dim, in_dim, flat[off..off + wlen].to_vec())?;
            off += wlen;
            params.biases[l].copy_from_slice(&flat[off..off + out_dim]);
            off += out_dim;
        }
        Ok(params)
    }
}

fn validate_layer_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::config(format!(
            "need at least input and output layer sizes, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::config(format!(
            "layer sizes must be >= 1, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

fn zeroed(layer_sizes: &[usize], activation: Activation) -> NetworkParams {
    let weights = layer_sizes
        .windows(2)
        .map(|w| Matrix::zeros(w[1], w[0]))
        .collect();
    let biases = layer_sizes.windows(2).map(|w| vec![0.0; w[1]]).collect();
    NetworkParams {
        layer_sizes: layer_sizes.to_vec(),
        weights,
        biases,
        activation,
    }
}

/// Initializes a network with uniform(-a, a) weights, a = sqrt(6/(fan_in+fan_out)),
/// and zero biases. Deterministic given the seed.
pub fn init_network(layer_sizes: &[usize], seed: u64) -> Result<NetworkParams> {
    validate_layer_sizes(layer_sizes)?;
    let mut params = zeroed(layer_sizes, Activation::Relu);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in 0..params.n_layers() {
        let (fan_out, fan_in) = (layer_sizes[l + 1], layer_sizes[l]);
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a);
        let w = &mut params.weights[l];
        for o in 0..fan_out {
            for i in 0..fan_in {
                w.set(o, i, dist.sample(&mut rng));
            }
        }
    }
    Ok(params)
}

fn affine(weights: &Matrix, bias: &[f64], input: &Matrix) -> Matrix {
    let n = input.rows();
    let out_dim = weights.rows();
    let mut z = Matrix::zeros(n, out_dim);
    for r in 0..n {
        let x = input.row(r);
        let zr = z.row_mut(r);
        for o in 0..out_dim {
            let mut sum = bias[o];
            let wrow = weights.row(o);
            for (wi, xi) in wrow.iter().zip(x) {
                sum += wi * xi;
            }
            zr[o] = sum;
        }
    }
    z
}

/// Per-layer post-activation outputs; the final entry holds raw logits.
fn forward_layers(params: &NetworkParams, inputs: &Matrix) -> Result<Vec<Matrix>> {
    if inputs.cols() != params.input_dim() {
        return Err(Error::shape(format!(
            "input dim {} does not match network input dim {}",
            inputs.cols(),
            params.input_dim()
        )));
    }
    let last = params.n_layers() - 1;
    let mut outs = Vec::with_capacity(params.n_layers());
    for l in 0..params.n_layers() {
        let input = if l == 0 { inputs } else { &outs[l - 1] };
        let mut z = affine(&params.weights[l], &params.biases[l], input);
        if l < last {
            for v in 0..z.rows() {
                for s in z.row_mut(v) {
                    if *s < 0.0 {
                        *s = 0.0;
                    }
                }
            }
        }
        outs.push(z);
    }
    Ok(outs)
}

/// Runs the network on a batch of inputs.
pub fn forward(params: &NetworkParams, inputs: &Matrix) -> Result<Forward> {
    let mut outs = forward_layers(params, inputs)?;
    let logits = outs.pop().expect("network has at least one layer");
    let hidden = match outs.pop() {
        Some(h) => h,
        None => inputs.clone(),
    };
    Ok(Forward { logits, hidden })
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Weighted softmax cross-entropy.
///
/// Returns the per-example losses and `sum_i w_i * loss_i`. Losses are
/// computed through log-sum-exp with max subtraction and clamped at zero
/// to absorb last-ulp rounding.
pub fn weighted_ce_loss(
    logits: &Matrix,
    labels: &[usize],
    example_weights: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let n = logits.rows();
    let c = logits.cols();
    if labels.len() != n || example_weights.len() != n {
        return Err(Error::shape(format!(
            "loss shape mismatch: {n} logit rows, {} labels, {} weights",
            labels.len(),
            example_weights.len()
        )));
    }
    if !logits.all_finite() {
        return Err(Error::numeric("non-finite logits in loss computation"));
    }
    let mut losses = Vec::with_capacity(n);
    let mut weighted_sum = 0.0;
    for i in 0..n {
        let y = labels[i];
        if y >= c {
            return Err(Error::config(format!(
                "label {y} out of range for {c} classes (example {i})"
            )));
        }
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = (lse - row[y]).max(0.0);
        losses.push(loss);
        weighted_sum += example_weights[i] * loss;
    }
    Ok((losses, weighted_sum))
}

/// Backpropagates an arbitrary gradient on the logits through the network.
///
/// This is the shared engine behind [`backward`] (cross-entropy head), the
/// grouper's KL-pretraining head, and the adversary's weighted-loss head:
/// each head only differs in how `dlogits` is formed.
pub fn backward_from_dlogits(
    params: &NetworkParams,
    inputs: &Matrix,
    dlogits: &Matrix,
) -> Result<GradientSet> {
    let outs = forward_layers(params, inputs)?;
    backprop(params, inputs, &outs, dlogits)
}

/// Backward pass over precomputed layer activations.
#[allow(clippy::needless_range_loop)]
fn backprop(
    params: &NetworkParams,
    inputs: &Matrix,
    outs: &[Matrix],
    dlogits: &Matrix,
) -> Result<GradientSet> {
    let n = inputs.rows();
    let last = params.n_layers() - 1;
    if dlogits.rows() != n || dlogits.cols() != params.output_dim() {
        return Err(Error::shape(format!(
            "dlogits is {}x{}, expected {}x{}",
            dlogits.rows(),
            dlogits.cols(),
            n,
            params.output_dim()
        )));
    }

    let mut grads = GradientSet {
        weights: params
            .layer_sizes
            .windows(2)
            .map(|w| Matrix::zeros(w[1], w[0]))
            .collect(),
        biases: params.layer_sizes.windows(2).map(|w| vec![0.0; w[1]]).collect(),
    };

    let mut delta = dlogits.clone();
    for l in (0..=last).rev() {
        let layer_input = if l == 0 { inputs } else { &outs[l - 1] };
        let (out_dim, in_dim) = (params.layer_sizes[l + 1], params.layer_sizes[l]);
        let gw = &mut grads.weights[l];
        let gb = &mut grads.biases[l];
        for r in 0..n {
            let d = delta.row(r);
            let x = layer_input.row(r);
            for o in 0..out_dim {
                let dv = d[o];
                if dv == 0.0 {
                    continue;
                }
                gb[o] += dv;
                let grow = gw.row_mut(o);
                for i in 0..in_dim {
                    grow[i] += dv * x[i];
                }
            }
        }
        if l > 0 {
            // Chain through W^T and the ReLU mask (post-activation > 0).
            let mut prev = Matrix::zeros(n, in_dim);
            let w = &params.weights[l];
            for r in 0..n {
                let d = delta.row(r);
                let act = layer_input.row(r);
                let p = prev.row_mut(r);
                for o in 0..out_dim {
                    let dv = d[o];
                    if dv == 0.0 {
                        continue;
                    }
                    let wrow = w.row(o);
                    for i in 0..in_dim {
                        p[i] += dv * wrow[i];
                    }
                }
                for i in 0..in_dim {
                    if act[i] <= 0.0 {
                        p[i] = 0.0;
                    }
                }
            }
            delta = prev;
        }
    }
    Ok(grads)
}

/// Per-example losses, weighted sum, and exact gradient in one forward pass.
pub fn loss_and_grad(params: &NetworkParams, batch: &Batch) -> Result<(Vec<f64>, f64, GradientSet)> {
    let outs = forward_layers(params, &batch.inputs)?;
    let logits = outs.last().expect("at least one layer");
    let (losses, weighted_sum) =
        weighted_ce_loss(logits, &batch.labels, &batch.example_weights)?;
    // d(weighted_sum)/d(logits_i) = w_i * (softmax(logits_i) - onehot(y_i))
    let mut dlogits = softmax_rows(logits);
    for i in 0..batch.len() {
        let w = batch.example_weights[i];
        let y = batch.labels[i];
        let row = dlogits.row_mut(i);
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v *= w;
        }
    }
    let grads = backprop(params, &batch.inputs, &outs, &dlogits)?;
    Ok((losses, weighted_sum, grads))
}

/// Exact gradient of the weighted cross-entropy sum for a batch.
pub fn backward(params: &NetworkParams, batch: &Batch) -> Result<GradientSet> {
    loss_and_grad(params, batch).map(|(_, _, g)| g)
}

/// SGD update with decoupled weight decay.
///
/// Descend: `p <- p - lr * (g + weight_decay * p)`.
/// Ascend:  `p <- p + lr * (g - weight_decay * p)`.
pub fn sgd_step(
    params: &mut NetworkParams,
    grads: &GradientSet,
    lr: f64,
    weight_decay: f64,
    direction: UpdateDirection,
) -> Result<()> {
    if grads.weights.len() != params.n_layers() {
        return Err(Error::shape(
            "gradient set does not match network layer count",
        ));
    }
    let sign = match direction {
        UpdateDirection::Descend => -1.0,
        UpdateDirection::Ascend => 1.0,
    };
    for l in 0..params.n_layers() {
        if grads.weights[l].rows() != params.weights[l].rows()
            || grads.weights[l].cols() != params.weights[l].cols()
        {
            return Err(Error::shape(format!("gradient shape mismatch at layer {l}")));
        }
        let w = &mut params.weights[l];
        let g = &grads.weights[l];
        for o in 0..w.rows() {
            let wrow = w.row_mut(o);
            let grow = g.row(o);
            for i in 0..wrow.len() {
                wrow[i] += sign * lr * (grow[i] - sign * weight_decay * wrow[i]);
            }
        }
        for (b, gb) in params.biases[l].iter_mut().zip(&grads.biases[l]) {
            *b += sign * lr * (gb - sign * weight_decay * *b);
        }
    }
    Ok(())
}

/// Weighted cross-entropy of a batch under the given parameters.
pub fn batch_loss(params: &NetworkParams, batch: &Batch) -> Result<f64> {
    let fwd = forward(params, &batch.inputs)?;
    let (_, weighted) = weighted_ce_loss(&fwd.logits, &batch.labels, &batch.example_weights)?;
    Ok(weighted)
}

/// Central-difference gradient of an arbitrary scalar function of the
/// parameters. Test oracle; also reused by the grouper's KL head checks.
pub fn finite_diff_generic(
    params: &NetworkParams,
    loss_fn: impl Fn(&NetworkParams) -> Result<f64>,
    epsilon: f64,
) -> Result<GradientSet> {
    if epsilon <= 0.0 {
        return Err(Error::config("finite-difference epsilon must be > 0"));
    }
    let mut probe = params.clone();
    let mut grads = GradientSet {
        weights: params
            .layer_sizes
            .windows(2)
            .map(|w| Matrix::zeros(w[1], w[0]))
            .collect(),
        biases: params.layer_sizes.windows(2).map(|w| vec![0.0; w[1]]).collect(),
    };
    for l in 0..params.n_layers() {
        for o in 0..params.weights[l].rows() {
            for i in 0..params.weights[l].cols() {
                let orig = params.weights[l].get(o, i);
                probe.weights[l].set(o, i, orig + epsilon);
                let plus = loss_fn(&probe)?;
                probe.weights[l].set(o, i, orig - epsilon);
                let minus = loss_fn(&probe)?;
                probe.weights[l].set(o, i, orig);
                grads.weights[l].set(o, i, (plus - minus) / (2.0 * epsilon));
            }
        }
        for o in 0..params.biases[l].len() {
            let orig = params.biases[l][o];
            probe.biases[l][o] = orig + epsilon;
            let plus = loss_fn(&probe)?;
            probe.biases[l][o] = orig - epsilon;
            let minus = loss_fn(&probe)?;
            probe.biases[l][o] = orig;
            grads.biases[l][o] = (plus - minus) / (2.0 * epsilon);
        }
    }
    Ok(grads)
}

/// Central-difference estimate of the weighted cross-entropy gradient.
pub fn finite_diff_grad(params: &NetworkParams, batch: &Batch, epsilon: f64) -> Result<GradientSet> {
    finite_diff_generic(params, |p| batch_loss(p, batch), epsilon)
}

impl GradientSet {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in 0..self.weights.len() {
            out.extend_from_slice(self.weights[l].data());
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    /// Largest relative error against a reference gradient, over
    /// coordinates where the reference magnitude exceeds `min_mag`.
    pub fn max_rel_error(&self, reference: &GradientSet, min_mag: f64) -> f64 {
        let a = self.to_flat();
        let b = reference.to_flat();
        let mut worst: f64 = 0.0;
        for (x, y) in a.iter().zip(&b) {
            if y.abs() > min_mag {
                worst = worst.max((x - y).abs() / y.abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_batch(n: usize, d: usize, c: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = Matrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));
        let labels = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let weights = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
        Batch::new(inputs, labels, weights).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_network(&[2, 2], 7).unwrap();
        let b = init_network(&[2, 2], 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_shapes_follow_layer_sizes() {
        let p = init_network(&[4, 8, 3], 0).unwrap();
        assert_eq!((p.weights[0].rows(), p.weights[0].cols()), (8, 4));
        assert_eq!((p.weights[1].rows(), p.weights[1].cols()), (3, 8));
        assert!(p.biases[0].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_rejects_bad_layer_sizes() {
        assert!(matches!(init_network(&[], 0), Err(Error::Config(_))));
        assert!(matches!(init_network(&[3], 0), Err(Error::Config(_))));
        assert!(matches!(init_network(&[3, 0, 2], 0), Err(Error::Config(_))));
    }

    #[test]
    fn forward_zero_params_gives_zero_logits() {
        let p = zeroed(&[3, 4, 2], Activation::Relu);
        let x = Matrix::from_fn(5, 3, |i, j| (i + j) as f64);
        let fwd = forward(&p, &x).unwrap();
        assert!(fwd.logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_identity_layer_passes_inputs_through() {
        let mut p = zeroed(&[3, 3], Activation::Relu);
        for i in 0..3 {
            p.weights[0].set(i, i, 1.0);
        }
        let x = Matrix::from_fn(4, 3, |i, j| i as f64 - j as f64);
        let fwd = forward(&p, &x).unwrap();
        assert_eq!(fwd.logits, x);
        // Single layer: hidden is the input itself.
        assert_eq!(fwd.hidden, x);
    }

    #[test]
    fn forward_contract_shapes_and_finiteness() {
        let p = init_network(&[4, 6, 3], 11).unwrap();
        let x = Matrix::from_fn(5, 4, |i, j| (i as f64 * 0.3) - (j as f64 * 0.7));
        let fwd = forward(&p, &x).unwrap();
        assert_eq!((fwd.logits.rows(), fwd.logits.cols()), (5, 3));
        assert_eq!((fwd.hidden.rows(), fwd.hidden.cols()), (5, 6));
        assert!(fwd.logits.all_finite());
    }

    #[test]
    fn forward_rejects_dim_mismatch() {
        let p = init_network(&[4, 2], 0).unwrap();
        let x = Matrix::zeros(3, 5);
        assert!(matches!(forward(&p, &x), Err(Error::Shape(_))));
    }

    #[test]
    fn uniform_logits_cost_ln2() {
        let logits = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let (losses, _) = weighted_ce_loss(&logits, &[0], &[1.0]).unwrap();
        assert!((losses[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logit_gives_near_zero_loss() {
        let logits = Matrix::from_rows(&[vec![20.0, 0.0]]).unwrap();
        let (losses, _) = weighted_ce_loss(&logits, &[0], &[1.0]).unwrap();
        assert!(losses[0] < 1e-8);
    }

    #[test]
    fn zero_weights_zero_weighted_sum() {
        let logits = Matrix::from_rows(&[vec![3.0, -1.0], vec![0.5, 0.5]]).unwrap();
        let (_, sum) = weighted_ce_loss(&logits, &[0, 1], &[0.0, 0.0]).unwrap();
        assert_eq!(sum, 0.0);
    }

    #[test]
    fn loss_rejects_non_finite_logits() {
        let logits = Matrix::from_rows(&[vec![f64::NAN, 0.0]]).unwrap();
        assert!(matches!(
            weighted_ce_loss(&logits, &[0], &[1.0]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn backward_zero_weights_zero_gradients() {
        let p = init_network(&[3, 4, 2], 5).unwrap();
        let mut batch = toy_batch(4, 3, 2, 9);
        batch.example_weights = vec![0.0; 4];
        let g = backward(&p, &batch).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_regression_gradient_closed_form() {
        // 1-layer net, zero params, one example: dlogits = softmax - onehot.
        let p = zeroed(&[2, 2], Activation::Relu);
        let inputs = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let batch = Batch::new(inputs, vec![0], vec![1.0]).unwrap();
        let g = backward(&p, &batch).unwrap();
        // dW[o][i] = dlogits[o] * x[i]; dlogits = [-0.5, +0.5].
        assert!((g.weights[0].get(0, 0) + 0.5).abs() < 1e-12);
        assert!((g.weights[0].get(1, 0) - 0.5).abs() < 1e-12);
        assert!((g.biases[0][0] + 0.5).abs() < 1e-12);
        assert!((g.biases[0][1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let p = init_network(&[4, 6, 3], 42).unwrap();
        let batch = toy_batch(3, 4, 3, 43);
        let analytic = backward(&p, &batch).unwrap();
        let numeric = finite_diff_grad(&p, &batch, 1e-4).unwrap();
        assert!(analytic.max_rel_error(&numeric, 1e-6) < 1e-4);
    }

    #[test]
    fn sgd_zero_grad_is_identity() {
        let mut p = init_network(&[2, 2], 1).unwrap();
        let before = p.clone();
        let g = GradientSet {
            weights: vec![Matrix::zeros(2, 2)],
            biases: vec![vec![0.0; 2]],
        };
        sgd_step(&mut p, &g, 0.5, 0.0, UpdateDirection::Descend).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn sgd_scalar_descend_and_ascend() {
        let mk = || {
            let mut p = zeroed(&[1, 1], Activation::Relu);
            p.weights[0].set(0, 0, 1.0);
            p
        };
        let g = GradientSet {
            weights: vec![Matrix::from_rows(&[vec![2.0]]).unwrap()],
            biases: vec![vec![0.0]],
        };
        let mut down = mk();
        sgd_step(&mut down, &g, 0.1, 0.0, UpdateDirection::Descend).unwrap();
        assert!((down.weights[0].get(0, 0) - 0.8).abs() < 1e-15);
        let mut up = mk();
        sgd_step(&mut up, &g, 0.1, 0.0, UpdateDirection::Ascend).unwrap();
        assert!((up.weights[0].get(0, 0) - 1.2).abs() < 1e-15);
    }

    #[test]
    fn finite_diff_rejects_zero_epsilon() {
        let p = init_network(&[2, 2], 0).unwrap();
        let batch = toy_batch(2, 2, 2, 0);
        assert!(matches!(
            finite_diff_grad(&p, &batch, 0.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn finite_diff_agrees_with_backward_on_seed_zero() {
        let p = init_network(&[3, 5, 2], 0).unwrap();
        let batch = toy_batch(4, 3, 2, 0);
        let analytic = backward(&p, &batch).unwrap();
        let numeric = finite_diff_grad(&p, &batch, 1e-4).unwrap();
        assert!(analytic.max_rel_error(&numeric, 1e-6) < 1e-4);
    }

    // Gradient correctness across random instances (n <= 8, dims <= 16).
    #[test]
    fn gradient_check_random_instances() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = rng.gen_range(1..=16);
            let h = rng.gen_range(1..=16);
            let c = rng.gen_range(2..=4);
            let n = rng.gen_range(1..=8);
            let p = init_network(&[d, h, c], seed.wrapping_add(100)).unwrap();
            let batch = toy_batch(n, d, c, seed.wrapping_add(200));
            let analytic = backward(&p, &batch).unwrap();
            let numeric = finite_diff_grad(&p, &batch, 1e-4).unwrap();
            let err = analytic.max_rel_error(&numeric, 1e-6);
            assert!(err < 1e-3, "seed {seed}: max rel error {err}");
        }
    }

    #[test]
    fn per_example_losses_nonnegative() {
        for seed in 0..10u64 {
            let p = init_network(&[3, 4, 3], seed).unwrap();
            let batch = toy_batch(6, 3, 3, seed);
            let fwd = forward(&p, &batch.inputs).unwrap();
            let (losses, _) =
                weighted_ce_loss(&fwd.logits, &batch.labels, &batch.example_weights).unwrap();
            assert!(losses.iter().all(|&l| l >= 0.0));
        }
    }

    #[test]
    fn weighted_sum_linear_in_weights() {
        let p = init_network(&[3, 4, 2], 3).unwrap();
        let batch = toy_batch(5, 3, 2, 4);
        let fwd = forward(&p, &batch.inputs).unwrap();
        let (_, base) =
            weighted_ce_loss(&fwd.logits, &batch.labels, &batch.example_weights).unwrap();
        let doubled: Vec<f64> = batch.example_weights.iter().map(|w| 2.0 * w).collect();
        let (_, twice) = weighted_ce_loss(&fwd.logits, &batch.labels, &doubled).unwrap();
        assert!((twice - 2.0 * base).abs() <= 1e-12 * base.abs().max(1.0));
    }

    #[test]
    fn losses_and_gradients_bitwise_deterministic() {
        let p = init_network(&[4, 5, 3], 17).unwrap();
        let batch = toy_batch(6, 4, 3, 18);
        let l1 = batch_loss(&p, &batch).unwrap();
        let l2 = batch_loss(&p, &batch).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        let g1 = backward(&p, &batch).unwrap().to_flat();
        let g2 = backward(&p, &batch).unwrap().to_flat();
        assert_eq!(
            g1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            g2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
