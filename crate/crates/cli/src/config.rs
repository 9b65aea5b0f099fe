//! Per-command JSON configuration. Every field is optional; flags given on
//! the command line take precedence over the file.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use dmmix::dm::FitConfig;
use dmmix::selection::Penalty;
use dmmix::MixtureSpec;

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    let Some(p) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
    let cfg = serde_json::from_str(&text).map_err(dmmix::Error::from)?;
    Ok(cfg)
}

/// Settings shared by every command that runs a fit.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub family: Option<String>,
    pub div: Option<String>,
    pub div_param: Option<f64>,
    pub pi_update: Option<String>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub restarts: Option<usize>,
    /// Full engine settings; the fields above override it.
    pub engine: Option<FitConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitFile {
    #[serde(default)]
    pub fit: FitSection,
    pub k: Option<usize>,
    pub kernel: Option<String>,
    pub kernel_a: Option<u32>,
    pub bandwidth: Option<f64>,
    pub theta0: Option<MixtureSpec>,
    pub data: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFile {
    pub truth: Option<MixtureSpec>,
    pub n: Option<usize>,
    pub reps: Option<usize>,
    pub methods: Option<Vec<String>>,
    pub eps: Option<Vec<f64>>,
    pub value: Option<f64>,
    pub seed: Option<u64>,
    pub restarts: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectFile {
    #[serde(default)]
    pub fit: FitSection,
    pub k_max: Option<usize>,
    pub splits: Option<usize>,
    pub split_ratio: Option<f64>,
    pub penalty: Option<Penalty>,
    pub data: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub table: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferFile {
    #[serde(default)]
    pub fit: FitSection,
    pub k: Option<usize>,
    pub theta: Option<MixtureSpec>,
    pub theta_ref: Option<MixtureSpec>,
    pub grad_tol: Option<f64>,
    pub truth: Option<MixtureSpec>,
    pub n: Option<usize>,
    pub reps: Option<usize>,
    pub data: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentFile {
    #[serde(default)]
    pub fit: FitSection,
    pub k: Option<usize>,
    pub contamination: Option<f64>,
    pub contamination_mean: Option<f64>,
    pub display: Option<Vec<u8>>,
    pub image: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub recolored: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelsFile {
    pub kernel: Option<String>,
    pub kernel_a: Option<u32>,
    pub c: Option<Vec<f64>>,
    pub center_max: Option<i64>,
    pub data: Option<PathBuf>,
    pub truth: Option<MixtureSpec>,
    pub output: Option<PathBuf>,
}
