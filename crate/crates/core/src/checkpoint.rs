//! Checkpoint persistence.
//!
//! A checkpoint is a pair of files sharing a stem:
//!
//! - `<stem>.params`: every parameter as little-endian `f64`, layer by
//!   layer, weights before biases, followed by any named extra blocks;
//! - `<stem>.manifest`: text `key=value` sidecar recording `format_version`,
//!   `role`, `layer_sizes`, `activation`, `seed`, and the extra block layout.
//!
//! Save followed by load reproduces parameters bit for bit, so forward
//! passes of a restored model match the original exactly.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::{Activation, NetworkParams};

pub const FORMAT_VERSION: u32 = 1;

/// A network plus bookkeeping, as persisted on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    /// What the network is: `"task"` or `"grouper"`.
    pub role: String,
    pub seed: u64,
    /// Named auxiliary f64 blocks (e.g. feature standardization stats).
    pub extras: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn task(params: NetworkParams, seed: u64) -> Self {
        Checkpoint {
            params,
            role: "task".into(),
            seed,
            extras: Vec::new(),
        }
    }

    pub fn extra(&self, name: &str) -> Option<&[f64]> {
        self.extras
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }
}

fn params_path(stem: &Path) -> PathBuf {
    stem.with_extension("params")
}

fn manifest_path(stem: &Path) -> PathBuf {
    stem.with_extension("manifest")
}

/// Writes `<stem>.params` and `<stem>.manifest`.
pub fn save_checkpoint(stem: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(dir) = stem.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut flat = ckpt.params.to_flat();
    for (_, block) in &ckpt.extras {
        flat.extend_from_slice(block);
    }
    let mut bytes = Vec::with_capacity(flat.len() * 8);
    for v in &flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(params_path(stem), bytes)?;

    let sizes: Vec<String> = ckpt.params.layer_sizes.iter().map(|s| s.to_string()).collect();
    let mut manifest = String::new();
    manifest.push_str(&format!("format_version={FORMAT_VERSION}\n"));
    manifest.push_str(&format!("role={}\n", ckpt.role));
    manifest.push_str(&format!("layer_sizes={}\n", sizes.join(",")));
    manifest.push_str(&format!("activation={}\n", ckpt.params.activation.name()));
    manifest.push_str(&format!("seed={}\n", ckpt.seed));
    for (name, block) in &ckpt.extras {
        manifest.push_str(&format!("extra={name}:{}\n", block.len()));
    }
    fs::write(manifest_path(stem), manifest)?;
    Ok(())
}

fn manifest_value<'a>(lines: &'a [(&'a str, &'a str)], key: &str, stem: &Path) -> Result<&'a str> {
    lines
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::Parse(format!("{}: missing key `{key}`", stem.display())))
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(stem: &Path) -> Result<Checkpoint> {
    let mpath = manifest_path(stem);
    let ppath = params_path(stem);
    for p in [&mpath, &ppath] {
        if !p.exists() {
            return Err(Error::MissingInput(p.display().to_string()));
        }
    }
    let text = fs::read_to_string(&mpath)?;
    let lines: Vec<(&str, &str)> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| l.split_once('='))
        .collect();

    let version: u32 = manifest_value(&lines, "format_version", stem)?
        .parse()
        .map_err(|_| Error::Parse(format!("{}: bad format_version", stem.display())))?;
    if version != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "{}: unsupported checkpoint format version {version}",
            stem.display()
        )));
    }
    let role = manifest_value(&lines, "role", stem)?.to_string();
    let seed: u64 = manifest_value(&lines, "seed", stem)?
        .parse()
        .map_err(|_| Error::Parse(format!("{}: bad seed", stem.display())))?;
    let activation = match manifest_value(&lines, "activation", stem)? {
        "relu" => Activation::Relu,
        other => {
            return Err(Error::Parse(format!(
                "{}: unknown activation `{other}`",
                stem.display()
            )))
        }
    };
    let layer_sizes: Vec<usize> = manifest_value(&lines, "layer_sizes", stem)?
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("{}: bad layer_sizes", stem.display())))
        })
        .collect::<Result<_>>()?;
    let extra_specs: Vec<(String, usize)> = lines
        .iter()
        .filter(|(k, _)| *k == "extra")
        .map(|(_, v)| {
            let (name, len) = v.split_once(':').ok_or_else(|| {
                Error::Parse(format!("{}: bad extra block spec `{v}`", stem.display()))
            })?;
            let len: usize = len
                .parse()
                .map_err(|_| Error::Parse(format!("{}: bad extra block len", stem.display())))?;
            Ok((name.to_string(), len))
        })
        .collect::<Result<_>>()?;

    let bytes = fs::read(&ppath)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Parse(format!(
            "{}: parameter file length {} is not a multiple of 8",
            stem.display(),
            bytes.len()
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let n_extra: usize = extra_specs.iter().map(|(_, l)| l).sum();
    if flat.len() < n_extra {
        return Err(Error::Parse(format!(
            "{}: parameter file shorter than declared extra blocks",
            stem.display()
        )));
    }
    let split = flat.len() - n_extra;
    let params = NetworkParams::from_flat(&layer_sizes, &flat[..split], activation)?;
    let mut extras = Vec::with_capacity(extra_specs.len());
    let mut off = split;
    for (name, len) in extra_specs {
        extras.push((name, flat[off..off + len].to_vec()));
        off += len;
    }
    Ok(Checkpoint {
        params,
        role,
        seed,
        extras,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::nn::{forward, init_network};

    #[test]
    fn roundtrip_reproduces_logits_bitwise() {
        let dir = std::env::temp_dir().join(format!("agro-ckpt-{}", std::process::id()));
        let stem = dir.join("net");
        let params = init_network(&[4, 8, 3], 42).unwrap();
        let ckpt = Checkpoint::task(params.clone(), 42);
        save_checkpoint(&stem, &ckpt).unwrap();
        let loaded = load_checkpoint(&stem).unwrap();
        assert_eq!(loaded, ckpt);

        let x = Matrix::from_fn(5, 4, |i, j| (i as f64).sin() + (j as f64).cos());
        let a = forward(&params, &x).unwrap().logits;
        let b = forward(&loaded.params, &x).unwrap().logits;
        let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn extras_roundtrip() {
        let dir = std::env::temp_dir().join(format!("agro-ckpt-x-{}", std::process::id()));
        let stem = dir.join("g");
        let params = init_network(&[3, 2], 1).unwrap();
        let mut ckpt = Checkpoint::task(params, 1);
        ckpt.role = "grouper".into();
        ckpt.extras.push(("mean".into(), vec![0.5, -1.0, 2.0]));
        ckpt.extras.push(("std".into(), vec![1.0, 2.0, 3.0]));
        save_checkpoint(&stem, &ckpt).unwrap();
        let loaded = load_checkpoint(&stem).unwrap();
        assert_eq!(loaded.extra("mean").unwrap(), &[0.5, -1.0, 2.0]);
        assert_eq!(loaded.role, "grouper");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn missing_file_is_reported() {
        let err = load_checkpoint(Path::new("/nonexistent/ckpt")).unwrap_err();
        assert!(matches!(err, Error::MissingInput(_)));
    }
}
