//! Experiment configuration: a JSON file merged with command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use jordan_lab::jordan::JordanSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_OUT: &str = "jordan-lab-report";
pub const DEFAULT_MAX_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Analyze,
    Perturb,
    Krylov,
    Deflate,
    Tightness,
}

impl Mode {
    fn default_trials(self) -> usize {
        match self {
            Mode::Analyze => 1,
            Mode::Deflate => 50,
            Mode::Perturb | Mode::Krylov | Mode::Tightness => 100,
        }
    }
}

/// A spec given inline as JSON or as a path to a JSON file.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum SpecSource {
    Inline(serde_json::Value),
    Path(String),
}

/// Flags shared by every subcommand. Each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON config file; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Jordan spec as inline JSON or a path to a JSON file
    #[arg(long)]
    pub spec: Option<String>,
    /// Matrix Market input
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Rank of the perturbation
    #[arg(long)]
    pub rank: Option<usize>,
    /// Number of trials (seeds per k for tightness, points for deflate)
    #[arg(long)]
    pub trials: Option<usize>,
    /// Master seed (required)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Absolute eigenvalue clustering tolerance
    #[arg(long)]
    pub cluster_tol: Option<f64>,
    /// Relative rank cutoff for rank decisions
    #[arg(long)]
    pub rank_tol: Option<f64>,
    /// GMRES relative residual tolerance
    #[arg(long)]
    pub gmres_tol: Option<f64>,
    /// Largest k for the tightness construction
    #[arg(long)]
    pub k: Option<usize>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
struct ConfigFile {
    mode: Option<Mode>,
    spec: Option<SpecSource>,
    matrix: Option<PathBuf>,
    rank: Option<usize>,
    trials: Option<usize>,
    seed: Option<u64>,
    cluster_tol: Option<f64>,
    rank_tol: Option<f64>,
    gmres_tol: Option<f64>,
    k: Option<usize>,
    out: Option<PathBuf>,
}

/// Fully resolved configuration, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub spec: Option<JordanSpec>,
    pub matrix: Option<PathBuf>,
    pub rank: Option<usize>,
    pub trials: usize,
    pub seed: u64,
    pub cluster_tol: Option<f64>,
    pub rank_tol: Option<f64>,
    pub gmres_tol: Option<f64>,
    pub k: Option<usize>,
    pub out: PathBuf,
}

fn config_error(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

fn read_spec(source: SpecSource, base: &Path) -> Result<JordanSpec, CliError> {
    let text = match source {
        SpecSource::Inline(v) if !v.is_string() => v.to_string(),
        SpecSource::Inline(v) => {
            return read_spec(
                SpecSource::Path(v.as_str().unwrap_or_default().into()),
                base,
            )
        }
        SpecSource::Path(p) if p.trim_start().starts_with('{') => p,
        SpecSource::Path(p) => {
            let path = base.join(p);
            fs::read_to_string(&path)
                .map_err(|e| config_error("spec", format!("{}: {e}", path.display())))?
        }
    };
    JordanSpec::from_json(&text).map_err(|e| config_error("spec", e.to_string()))
}

fn positive(field: &str, v: Option<f64>) -> Result<Option<f64>, CliError> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(config_error(
            field,
            format!("must be positive and finite, got {x}"),
        )),
        other => Ok(other),
    }
}

/// Merges the optional config file with `flags`; `mode` (from the
/// subcommand) wins over the file's `mode`.
pub fn resolve(mode: Option<Mode>, flags: Flags) -> Result<ExperimentConfig, CliError> {
    let (file, base) = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| config_error("config", format!("{}: {e}", path.display())))?;
            let file: ConfigFile =
                serde_json::from_str(&text).map_err(|e| config_error("config", e.to_string()))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (file, base)
        }
        None => (ConfigFile::default(), PathBuf::new()),
    };
    let mode = mode
        .or(file.mode)
        .ok_or_else(|| config_error("mode", "no subcommand and no mode in the config file"))?;

    let spec = match flags.spec {
        Some(s) => Some(read_spec(SpecSource::Path(s), Path::new(""))?),
        None => file.spec.map(|s| read_spec(s, &base)).transpose()?,
    };
    let matrix = flags.matrix.or_else(|| file.matrix.map(|m| base.join(m)));
    let seed = flags
        .seed
        .or(file.seed)
        .ok_or_else(|| config_error("seed", "a seed is required"))?;
    let trials = flags
        .trials
        .or(file.trials)
        .unwrap_or(mode.default_trials());
    if trials == 0 {
        return Err(config_error("trials", "must be at least 1"));
    }
    let rank = flags.rank.or(file.rank);
    let k = flags.k.or(file.k);

    match mode {
        Mode::Analyze => {
            if spec.is_some() == matrix.is_some() {
                return Err(config_error(
                    "matrix",
                    "analyze needs exactly one of matrix or spec",
                ));
            }
        }
        Mode::Perturb | Mode::Krylov | Mode::Deflate | Mode::Tightness => {
            if matrix.is_some() {
                return Err(config_error("matrix", "only analyze reads a matrix"));
            }
        }
    }
    if matches!(mode, Mode::Deflate | Mode::Tightness) {
        if spec.is_some() {
            return Err(config_error("spec", "this mode uses a fixed construction"));
        }
        if rank.is_some_and(|r| r != 1) {
            return Err(config_error("rank", "this mode uses rank-one updates only"));
        }
    }
    if mode == Mode::Krylov && rank.is_some_and(|r| r > 1) {
        return Err(config_error("rank", "krylov supports rank 0 or 1"));
    }
    if k.is_some() && mode != Mode::Tightness {
        return Err(config_error("k", "only tightness takes k"));
    }
    if k == Some(0) {
        return Err(config_error("k", "must be at least 1"));
    }

    Ok(ExperimentConfig {
        mode,
        spec,
        matrix,
        rank,
        trials,
        seed,
        cluster_tol: positive("clusterTol", flags.cluster_tol.or(file.cluster_tol))?,
        rank_tol: positive("rankTol", flags.rank_tol.or(file.rank_tol))?,
        gmres_tol: positive("gmresTol", flags.gmres_tol.or(file.gmres_tol))?,
        k: if mode == Mode::Tightness {
            Some(k.unwrap_or(DEFAULT_MAX_K))
        } else {
            None
        },
        out: flags
            .out
            .or(file.out)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
    })
}
