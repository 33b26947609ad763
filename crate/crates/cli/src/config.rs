//! Experiment configuration: the standard benchmark defaults, deep-merged
//! with an optional user JSON file and command-line overrides.
//!
//! Any omitted field keeps its default, and the fully resolved config is
//! persisted verbatim into the run directory so every stage re-runs from
//! the same values.

use std::path::Path;

use agro_core::benchmark::{standard_benchmark, BenchmarkConfig};
use agro_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Checkpoint-selection rule applied when evaluating a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionRule {
    /// Overall dev accuracy.
    FullDev,
    /// Worst ground-truth-group dev accuracy (oracle baselines only).
    Oracle,
    /// Combined accuracy of the worst predicted groups covering alpha.
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub seed: u64,
    #[serde(flatten)]
    pub benchmark: BenchmarkConfig,
}

impl ExperimentConfig {
    pub fn defaults(run_id: &str, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            run_id: run_id.to_string(),
            seed,
            benchmark: standard_benchmark(seed),
        }
    }
}

fn merge_value(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge_value(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Named override targets accepted by `--override` and `sweep --param`.
pub const OVERRIDE_PARAMS: &[&str] = &["alpha", "m", "t2", "lr", "weight_decay", "hidden"];

fn apply_named_override(cfg: &mut ExperimentConfig, param: &str, value: &str) -> Result<()> {
    let bad = |what: &str| Error::Config(format!("override {param}={value}: bad {what}"));
    match param {
        "alpha" => {
            cfg.benchmark.pipeline.agro.alpha = value.parse().map_err(|_| bad("float"))?;
        }
        "m" => {
            let m: usize = value.parse().map_err(|_| bad("integer"))?;
            cfg.benchmark.pipeline.agro.m = m;
            cfg.benchmark.pipeline.agro.batch_size = 16 * m;
            cfg.benchmark.pipeline.grouper.n_groups = m;
            cfg.benchmark.erm.batch_size = 16 * m;
        }
        "t2" => {
            cfg.benchmark.pipeline.agro.t2_epochs = value.parse().map_err(|_| bad("integer"))?;
        }
        "lr" => {
            let lr: f64 = value.parse().map_err(|_| bad("float"))?;
            cfg.benchmark.pipeline.agro.lr_theta = lr;
        }
        "weight_decay" => {
            let wd: f64 = value.parse().map_err(|_| bad("float"))?;
            cfg.benchmark.pipeline.agro.weight_decay = wd;
            cfg.benchmark.erm.weight_decay = wd;
        }
        "hidden" => {
            cfg.benchmark.pipeline.grouper.hidden = value.parse().map_err(|_| bad("integer"))?;
        }
        other => {
            return Err(Error::Config(format!(
                "unknown override parameter `{other}`; expected one of {OVERRIDE_PARAMS:?}"
            )))
        }
    }
    Ok(())
}

/// Builds the resolved config: standard defaults for the seed, deep-merged
/// with the optional config file, then named overrides.
pub fn resolve_config(
    run_id: &str,
    config_file: Option<&Path>,
    seed_flag: Option<u64>,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig> {
    let file_value: Option<serde_json::Value> = match config_file {
        Some(path) => {
            if !path.exists() {
                return Err(Error::MissingInput(path.display().to_string()));
            }
            let text = std::fs::read_to_string(path)?;
            Some(
                serde_json::from_str(&text)
                    .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?,
            )
        }
        None => None,
    };
    // The seed shapes the defaults, so it resolves first: flag, then file,
    // then 0.
    let seed = seed_flag
        .or_else(|| {
            file_value
                .as_ref()
                .and_then(|v| v.get("seed"))
                .and_then(|v| v.as_u64())
        })
        .unwrap_or(0);

    let mut base = serde_json::to_value(ExperimentConfig::defaults(run_id, seed))
        .map_err(|e| Error::Parse(format!("default config serialization: {e}")))?;
    if let Some(patch) = &file_value {
        merge_value(&mut base, patch);
    }
    let mut cfg: ExperimentConfig =
        serde_json::from_value(base).map_err(|e| Error::Parse(format!("config: {e}")))?;
    cfg.run_id = run_id.to_string();
    cfg.seed = seed;
    for (param, value) in overrides {
        apply_named_override(&mut cfg, param, value)?;
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &ExperimentConfig) -> Result<()> {
    cfg.benchmark.generator.validate()?;
    cfg.benchmark.erm.validate()?;
    cfg.benchmark.pipeline.validate()?;
    Ok(())
}

pub fn write_config(path: &Path, cfg: &ExperimentConfig) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(cfg)
        .map_err(|e| Error::Parse(format!("config serialization: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    if !path.exists() {
        return Err(Error::MissingInput(path.display().to_string()));
    }
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_and_roundtrip() {
        let cfg = resolve_config("r", None, Some(7), &[]).unwrap();
        assert_eq!(cfg.seed, 7);
        let dir = std::env::temp_dir().join(format!("agro-cfg-{}", std::process::id()));
        let path = dir.join("config.json");
        write_config(&path, &cfg).unwrap();
        assert_eq!(read_config(&path).unwrap(), cfg);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn file_fields_override_defaults() {
        let dir = std::env::temp_dir().join(format!("agro-cfg2-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("partial.json");
        std::fs::write(
            &path,
            r#"{"seed": 3, "benchmark": null, "generator": {"n_train": 123}}"#,
        )
        .ok();
        // flattened layout: generator lives at the top level
        std::fs::write(&path, r#"{"seed": 3, "generator": {"n_train": 123}}"#).unwrap();
        let cfg = resolve_config("r", Some(&path), None, &[]).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.benchmark.generator.n_train, 123);
        // untouched fields keep defaults
        assert_eq!(cfg.benchmark.generator.n_classes, 2);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn named_overrides_apply() {
        let cfg = resolve_config(
            "r",
            None,
            Some(0),
            &[("alpha".into(), "0.3".into()), ("m".into(), "6".into())],
        )
        .unwrap();
        assert_eq!(cfg.benchmark.pipeline.agro.alpha, 0.3);
        assert_eq!(cfg.benchmark.pipeline.agro.m, 6);
        assert_eq!(cfg.benchmark.pipeline.agro.batch_size, 96);
        let err = resolve_config("r", None, Some(0), &[("nope".into(), "1".into())]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
