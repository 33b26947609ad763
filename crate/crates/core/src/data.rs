//! Synthetic classification datasets with planted spurious attributes.
//!
//! Each example is a concatenation of blocks:
//!
//! ```text
//! x = [ core (d_core) | spurious_1 (d_1) | ... | spurious_k (d_k) | noise (d_noise) ]
//! ```
//!
//! The core block carries the label signal: its mean is a class-dependent
//! shift of magnitude `core_signal_strength` plus unit Gaussian noise. Each
//! spurious block carries the same kind of shift keyed to an attribute value
//! that agrees with the label with probability `correlation_rate`, so a
//! classifier can exploit it exactly like an image background. The noise
//! block is pure standard Gaussian.
//!
//! Ground-truth groups are the (label x attribute-agreement) cells. They are
//! recorded on every example for evaluation but hidden from training through
//! the [`TrainView`] boundary, which carries only inputs, labels, and fold
//! ids.
//!
//! The `ood` split regenerates the data with every correlation rate replaced
//! by `1 - rate`, reversing the shortcut.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seeds::{derive_seed, tags};

/// One planted spurious attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpuriousAttr {
    /// Probability that the attribute value agrees with the label.
    pub correlation_rate: f64,
    pub dim: usize,
    pub signal_strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub n_ood: usize,
    pub n_classes: usize,
    pub d_core: usize,
    pub d_noise: usize,
    pub spurious_attrs: Vec<SpuriousAttr>,
    pub core_signal_strength: f64,
    pub label_noise: f64,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::config("n_classes must be >= 2"));
        }
        if self.d_core < 1 {
            return Err(Error::config("d_core must be >= 1"));
        }
        for (j, a) in self.spurious_attrs.iter().enumerate() {
            if !(0.0..=1.0).contains(&a.correlation_rate) {
                return Err(Error::config(format!(
                    "spurious attribute {j}: correlation_rate must be in [0,1]"
                )));
            }
            if a.dim < 1 {
                return Err(Error::config(format!(
                    "spurious attribute {j}: dim must be >= 1"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::config("label_noise must be in [0,1]"));
        }
        Ok(())
    }

    /// Total input dimension.
    pub fn input_dim(&self) -> usize {
        self.d_core + self.spurious_attrs.iter().map(|a| a.dim).sum::<usize>() + self.d_noise
    }

    /// Number of ground-truth groups: one per (label, agreement pattern) cell.
    pub fn n_groups(&self) -> usize {
        self.n_classes << self.spurious_attrs.len()
    }
}

/// A single example. `true_group` exists for evaluation only and never
/// crosses into training code; see [`TrainView`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: usize,
    pub true_group: usize,
    pub fold: usize,
}

/// Mixed-radix group code of (label, agreement bits): the label indexes the
/// outer digit, each attribute contributes one binary digit.
pub fn group_code(y: usize, agreements: &[bool]) -> usize {
    let mut code = y;
    for &a in agreements {
        code = code * 2 + usize::from(a);
    }
    code
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
    pub ood: Vec<Example>,
    pub config: GeneratorConfig,
}

/// Training-side view of a split: inputs, labels, folds. No group labels.
///
/// All training operations take this type, which is what keeps ground-truth
/// groups out of the optimization path.
#[derive(Debug, Clone)]
pub struct TrainView {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub folds: Vec<usize>,
}

impl TrainView {
    pub fn from_examples(examples: &[Example]) -> Result<TrainView> {
        if examples.is_empty() {
            return Err(Error::config("cannot build a view over an empty split"));
        }
        let rows: Vec<Vec<f64>> = examples.iter().map(|e| e.x.clone()).collect();
        Ok(TrainView {
            inputs: Matrix::from_rows(&rows)?,
            labels: examples.iter().map(|e| e.y).collect(),
            folds: examples.iter().map(|e| e.fold).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Ground-truth group ids of a split. Evaluation-only: callers that pass
/// these into training (e.g. the oracle G-DRO upper bound) are explicitly
/// opting into supervision that real runs do not have.
pub fn oracle_groups(examples: &[Example]) -> Vec<usize> {
    examples.iter().map(|e| e.true_group).collect()
}

/// Standard normal via Box-Muller; two uniform draws per sample.
fn next_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Class positions evenly spaced on [-1, 1]; the block mean for class value
/// `v` is `strength * pos(v) / sqrt(dim)` in every coordinate, so the total
/// mean shift between the extreme classes has norm `2 * strength`.
fn class_position(v: usize, n_classes: usize) -> f64 {
    if n_classes <= 1 {
        0.0
    } else {
        2.0 * v as f64 / (n_classes - 1) as f64 - 1.0
    }
}

fn push_block(x: &mut Vec<f64>, value: usize, n_classes: usize, dim: usize, strength: f64, rng: &mut ChaCha8Rng) {
    let mean = strength * class_position(value, n_classes) / (dim as f64).sqrt();
    for _ in 0..dim {
        x.push(mean + next_normal(rng));
    }
}

fn draw_other_class(y: usize, n_classes: usize, rng: &mut ChaCha8Rng) -> usize {
    (y + 1 + rng.gen_range(0..n_classes - 1)) % n_classes
}

fn generate_split(config: &GeneratorConfig, n: usize, reverse: bool, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = config.n_classes;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let y_clean = rng.gen_range(0..c);
        let mut y = y_clean;
        if config.label_noise > 0.0 && rng.gen::<f64>() < config.label_noise {
            y = draw_other_class(y_clean, c, &mut rng);
        }
        let mut x = Vec::with_capacity(config.input_dim());
        push_block(&mut x, y_clean, c, config.d_core, config.core_signal_strength, &mut rng);
        let mut agreements = Vec::with_capacity(config.spurious_attrs.len());
        for attr in &config.spurious_attrs {
            let rate = if reverse {
                1.0 - attr.correlation_rate
            } else {
                attr.correlation_rate
            };
            let attr_value = if rng.gen::<f64>() < rate {
                y_clean
            } else {
                draw_other_class(y_clean, c, &mut rng)
            };
            push_block(&mut x, attr_value, c, attr.dim, attr.signal_strength, &mut rng);
            agreements.push(attr_value == y);
        }
        for _ in 0..config.d_noise {
            x.push(next_normal(&mut rng));
        }
        out.push(Example {
            x,
            y,
            true_group: group_code(y, &agreements),
            fold: 0,
        });
    }
    out
}

/// Generates all four splits. Deterministic given `config.seed`; the ood
/// split uses `1 - correlation_rate` for every attribute.
pub fn generate(config: &GeneratorConfig) -> Result<DatasetBundle> {
    config.validate()?;
    Ok(DatasetBundle {
        train: generate_split(config, config.n_train, false, derive_seed(config.seed, tags::SPLIT_TRAIN)),
        dev: generate_split(config, config.n_dev, false, derive_seed(config.seed, tags::SPLIT_DEV)),
        test: generate_split(config, config.n_test, false, derive_seed(config.seed, tags::SPLIT_TEST)),
        ood: generate_split(config, config.n_ood, true, derive_seed(config.seed, tags::SPLIT_OOD)),
        config: config.clone(),
    })
}

/// Random fold assignment: a seeded permutation dealt round-robin, so fold
/// sizes differ by at most one.
pub fn kfold_assign(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::config(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::config(format!("cannot split {n} examples into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut folds = vec![0usize; n];
    for (pos, &idx) in order.iter().enumerate() {
        folds[idx] = pos % k;
    }
    Ok(folds)
}

/// Applies [`kfold_assign`] to a split in place.
pub fn assign_folds(examples: &mut [Example], k: usize, seed: u64) -> Result<()> {
    let folds = kfold_assign(examples.len(), k, seed)?;
    for (e, f) in examples.iter_mut().zip(folds) {
        e.fold = f;
    }
    Ok(())
}

/// Per-group accuracy row. `accuracy` is `None` for empty groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub group: usize,
    pub count: usize,
    pub accuracy: Option<f64>,
}

/// Accuracy broken out by ground-truth group.
pub fn group_accuracy_table(
    predictions: &[usize],
    examples: &[Example],
    n_groups: usize,
) -> Result<Vec<GroupAccuracy>> {
    if predictions.len() != examples.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} examples",
            predictions.len(),
            examples.len()
        )));
    }
    let mut counts = vec![0usize; n_groups];
    let mut correct = vec![0usize; n_groups];
    for (p, e) in predictions.iter().zip(examples) {
        if e.true_group >= n_groups {
            return Err(Error::config(format!(
                "example group {} out of range for {n_groups} groups",
                e.true_group
            )));
        }
        counts[e.true_group] += 1;
        if *p == e.y {
            correct[e.true_group] += 1;
        }
    }
    Ok((0..n_groups)
        .map(|g| GroupAccuracy {
            group: g,
            count: counts[g],
            accuracy: if counts[g] > 0 {
                Some(correct[g] as f64 / counts[g] as f64)
            } else {
                None
            },
        })
        .collect())
}

// ---------------------------------------------------------------------------
// CSV persistence
// ---------------------------------------------------------------------------

/// Writes one split as CSV: `x_0..x_{d-1}, y, true_group, fold`.
pub fn write_split_csv(path: &std::path::Path, examples: &[Example]) -> Result<()> {
    use std::io::Write;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let d = examples.first().map_or(0, |e| e.x.len());
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = (0..d)
        .map(|j| format!("x_{j}"))
        .chain(["y".into(), "true_group".into(), "fold".into()])
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for e in examples {
        let mut line = String::new();
        for v in &e.x {
            line.push_str(&format!("{v}"));
            line.push(',');
        }
        line.push_str(&format!("{},{},{}", e.y, e.true_group, e.fold));
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Reads a split written by [`write_split_csv`].
pub fn read_split_csv(path: &std::path::Path) -> Result<Vec<Example>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.display().to_string()));
    }
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{}: empty file", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 {
        return Err(Error::Parse(format!("{}: malformed header", path.display())));
    }
    let d = cols.len() - 3;
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse(format!(
                "{}:{}: expected {} fields, got {}",
                path.display(),
                lineno + 2,
                cols.len(),
                fields.len()
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Parse(format!("{}:{}: bad float `{s}`", path.display(), lineno + 2)))
        };
        let parse_u = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Parse(format!("{}:{}: bad integer `{s}`", path.display(), lineno + 2)))
        };
        let x: Vec<f64> = fields[..d].iter().map(|s| parse_f(s)).collect::<Result<_>>()?;
        out.push(Example {
            x,
            y: parse_u(fields[d])?,
            true_group: parse_u(fields[d + 1])?,
            fold: parse_u(fields[d + 2])?,
        });
    }
    Ok(out)
}

/// Key-value text echo of the generator config, written next to the CSVs.
pub fn config_sidecar_text(config: &GeneratorConfig) -> String {
    let mut s = String::new();
    s.push_str(&format!("n_train={}\n", config.n_train));
    s.push_str(&format!("n_dev={}\n", config.n_dev));
    s.push_str(&format!("n_test={}\n", config.n_test));
    s.push_str(&format!("n_ood={}\n", config.n_ood));
    s.push_str(&format!("n_classes={}\n", config.n_classes));
    s.push_str(&format!("d_core={}\n", config.d_core));
    s.push_str(&format!("d_noise={}\n", config.d_noise));
    s.push_str(&format!("core_signal_strength={}\n", config.core_signal_strength));
    s.push_str(&format!("label_noise={}\n", config.label_noise));
    s.push_str(&format!("seed={}\n", config.seed));
    for (j, a) in config.spurious_attrs.iter().enumerate() {
        s.push_str(&format!(
            "spurious_{j}=rate:{},dim:{},strength:{}\n",
            a.correlation_rate, a.dim, a.signal_strength
        ));
    }
    s
}
