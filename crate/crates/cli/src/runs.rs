//! Run-directory layout. One experiment = one directory of flat artifacts.

use std::path::{Path, PathBuf};

use agro_core::{Error, Result};

#[derive(Debug, Clone)]
pub struct RunDir {
    pub dir: PathBuf,
}

impl RunDir {
    pub fn new(dir: PathBuf) -> RunDir {
        RunDir { dir }
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.json")
    }

    pub fn split_csv(&self, split: &str) -> PathBuf {
        self.dir.join("data").join(format!("{split}.csv"))
    }

    pub fn generator_sidecar(&self) -> PathBuf {
        self.dir.join("data").join("generator.txt")
    }

    pub fn erm_checkpoint(&self, epoch: usize) -> PathBuf {
        self.dir.join("erm").join(format!("epoch_{epoch:03}"))
    }

    pub fn features_stem(&self) -> PathBuf {
        self.dir.join("features").join("train")
    }

    pub fn fold_model(&self, fold: usize) -> PathBuf {
        self.dir.join("features").join(format!("fold_{fold}"))
    }

    pub fn slices_dir(&self, variant: &str) -> PathBuf {
        match variant {
            "gamma0" => self.dir.join("slices-gamma0"),
            _ => self.dir.join("slices"),
        }
    }

    pub fn slice_model_stem(&self, variant: &str) -> PathBuf {
        self.slices_dir(variant).join("model")
    }

    pub fn responsibilities_stem(&self, variant: &str) -> PathBuf {
        self.slices_dir(variant).join("responsibilities")
    }

    pub fn slice_report(&self, variant: &str) -> PathBuf {
        self.slices_dir(variant).join("report.csv")
    }

    pub fn grouper_pretrained(&self) -> PathBuf {
        self.dir.join("grouper").join("pretrained")
    }

    pub fn grouper_kl_trace(&self) -> PathBuf {
        self.dir.join("grouper").join("kl_trace.csv")
    }

    pub fn model_dir(&self, model: &str) -> PathBuf {
        self.dir.join(model)
    }

    pub fn model_checkpoint(&self, model: &str, epoch: usize) -> PathBuf {
        self.model_dir(model).join(format!("epoch_{epoch:03}"))
    }

    pub fn model_trace(&self, model: &str) -> PathBuf {
        self.model_dir(model).join("trace.csv")
    }

    pub fn agro_grouper(&self) -> PathBuf {
        self.dir.join("agro").join("grouper")
    }

    pub fn agro_adversary_info(&self) -> PathBuf {
        self.dir.join("agro").join("adversary.txt")
    }

    pub fn metrics(&self, model: &str) -> PathBuf {
        self.dir.join("metrics").join(format!("{model}.json"))
    }

    pub fn multiseed_metrics(&self, model: &str) -> PathBuf {
        self.dir.join("metrics").join(format!("{model}-seeds.json"))
    }

    pub fn selection(&self, model: &str) -> PathBuf {
        self.dir.join("selection").join(format!("{model}.json"))
    }

    pub fn seed_subrun(&self, seed: u64) -> RunDir {
        RunDir::new(self.dir.join(format!("seed-{seed}")))
    }

    pub fn sweep_subrun(&self, param: &str, value: &str) -> RunDir {
        RunDir::new(self.dir.join("sweep").join(format!("{param}-{value}")))
    }

    /// Lists checkpoint stems `epoch_*` for a model, in epoch order.
    pub fn model_checkpoints(&self, model: &str) -> Result<Vec<PathBuf>> {
        let dir = self.model_dir(model);
        if !dir.exists() {
            return Err(Error::MissingInput(dir.display().to_string()));
        }
        let mut stems: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.extension().is_some_and(|x| x == "params")
                    && p.file_stem()
                        .and_then(|s| s.to_str())
                        .is_some_and(|s| s.starts_with("epoch_"))
            })
            .map(|p| p.with_extension(""))
            .collect();
        stems.sort();
        if stems.is_empty() {
            return Err(Error::MissingInput(format!(
                "{}: no epoch checkpoints",
                dir.display()
            )));
        }
        Ok(stems)
    }
}

/// Fails fast with every missing input named.
pub fn require(paths: &[&Path]) -> Result<()> {
    let missing: Vec<String> = paths
        .iter()
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingInput(missing.join(", ")))
    }
}
