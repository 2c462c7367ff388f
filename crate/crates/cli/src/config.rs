//! Run configuration files.
//!
//! A run file is TOML with four sections. `[network]` describes the
//! architecture (dimensions the data determines may be omitted),
//! `[training]` holds every training field, `[data]` picks a dataset, and
//! `[eval]` sets evaluation defaults. Unknown keys are hard errors so a
//! typo cannot silently fall back to a default.

use std::path::Path;

use meanflow::datagen::{
    load_csv, make_checkerboard, make_gmm_ring, make_moons, sample_gmm, Dataset,
};
use meanflow::network::{NetworkConfig, TimeCondMode};
use meanflow::oracle::GmmSpec;
use meanflow::rng::Rng;
use meanflow::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::parse::parse_gmm;
use crate::CliError;

fn default_log_every() -> u64 {
    200
}

fn default_checkpoint_every() -> u64 {
    500
}

/// A parsed run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Progress lines on stderr every this many iterations; 0 silences them.
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    /// Checkpoint write cadence in iterations; 0 writes only the final one.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub training: TrainConfig,
    pub data: DataSection,
    #[serde(default)]
    pub eval: EvalSection,
}

/// Architecture knobs; `input_dim` and `num_classes` normally come from the
/// dataset and may be omitted. When present they must agree with the data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_cond_mode: Option<TimeCondMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
}

impl NetworkSection {
    /// Resolves the section against dimensions derived from the dataset.
    pub fn resolve(&self, input_dim: usize, num_classes: usize) -> Result<NetworkConfig, CliError> {
        if let Some(set) = self.input_dim {
            if set != input_dim {
                return Err(CliError::config(format!(
                    "network.input_dim = {set} but the dataset has dimension {input_dim}"
                )));
            }
        }
        if let Some(set) = self.num_classes {
            if set != num_classes {
                return Err(CliError::config(format!(
                    "network.num_classes = {set} but the dataset has {num_classes} classes"
                )));
            }
        }
        let mut config = NetworkConfig::new(input_dim);
        config.num_classes = num_classes;
        if let Some(v) = self.hidden_dim {
            config.hidden_dim = v;
        }
        if let Some(v) = self.depth {
            config.depth = v;
        }
        if let Some(v) = self.embed_dim {
            config.embed_dim = v;
        }
        if let Some(v) = self.time_cond_mode {
            config.time_cond_mode = v;
        }
        config
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        Ok(config)
    }

    /// The fully determined section a checkpoint echoes.
    pub fn resolved(config: &NetworkConfig) -> Self {
        Self {
            input_dim: Some(config.input_dim),
            hidden_dim: Some(config.hidden_dim),
            depth: Some(config.depth),
            embed_dim: Some(config.embed_dim),
            time_cond_mode: Some(config.time_cond_mode),
            num_classes: Some(config.num_classes),
        }
    }
}

fn default_data_n() -> usize {
    4096
}

/// Dataset selector. `kind` picks the generator; the other keys apply only
/// to the kinds that use them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// One of "gmm", "ring", "moons", "checkerboard", "csv".
    pub kind: String,
    /// Mixture grammar for kind = "gmm" (see [`crate::parse::parse_gmm`]).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec: Option<String>,
    /// Input file for kind = "csv".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    /// Sample count for the synthetic kinds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Whether gmm samples carry component labels.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labeled: Option<bool>,
    /// Component count for kind = "ring".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Ring radius for kind = "ring".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// Per-component variance for kind = "ring".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub var: Option<f64>,
    /// Coordinate noise for kind = "moons".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
}

impl DataSection {
    fn reject_unused(&self, kind: &str, allowed: &[&str]) -> Result<(), CliError> {
        let fields: [(&str, bool); 8] = [
            ("spec", self.spec.is_some()),
            ("path", self.path.is_some()),
            ("n", self.n.is_some()),
            ("labeled", self.labeled.is_some()),
            ("k", self.k.is_some()),
            ("radius", self.radius.is_some()),
            ("var", self.var.is_some()),
            ("noise", self.noise.is_some()),
        ];
        for (name, present) in fields {
            if present && !allowed.contains(&name) {
                return Err(CliError::config(format!(
                    "data.{name} does not apply to kind = \"{kind}\""
                )));
            }
        }
        Ok(())
    }

    /// Builds the dataset, consuming `rng` deterministically. Returns the
    /// generating mixture when the kind has one.
    pub fn resolve(&self, rng: &mut Rng) -> Result<(Dataset, Option<GmmSpec>), CliError> {
        let n = self.n.unwrap_or_else(default_data_n);
        match self.kind.as_str() {
            "gmm" => {
                self.reject_unused("gmm", &["spec", "n", "labeled"])?;
                let text = self.spec.as_deref().ok_or_else(|| {
                    CliError::config("data.kind = \"gmm\" requires data.spec")
                })?;
                let gmm = parse_gmm(text)?;
                let labeled = self.labeled.unwrap_or(false);
                let data = sample_gmm(&gmm, n, labeled, rng)?;
                Ok((data, Some(gmm)))
            }
            "ring" => {
                self.reject_unused("ring", &["n", "k", "radius", "var"])?;
                let k = self.k.unwrap_or(8);
                let radius = self.radius.unwrap_or(3.0);
                let var = self.var.unwrap_or(0.01);
                let (data, gmm) = make_gmm_ring(k, radius, var, n, rng)?;
                Ok((data, Some(gmm)))
            }
            "moons" => {
                self.reject_unused("moons", &["n", "noise"])?;
                let noise = self.noise.unwrap_or(0.05);
                Ok((make_moons(n, noise, rng)?, None))
            }
            "checkerboard" => {
                self.reject_unused("checkerboard", &["n"])?;
                Ok((make_checkerboard(n, rng)?, None))
            }
            "csv" => {
                self.reject_unused("csv", &["path"])?;
                let path = self.path.as_deref().ok_or_else(|| {
                    CliError::config("data.kind = \"csv\" requires data.path")
                })?;
                let data = load_csv(Path::new(path))
                    .map_err(|e| CliError::config(format!("{path}: {e}")))?;
                Ok((data, None))
            }
            other => Err(CliError::config(format!(
                "data.kind = \"{other}\" is not one of gmm, ring, moons, checkerboard, csv"
            ))),
        }
    }
}

fn default_eval_metric() -> String {
    "mmd".to_string()
}

fn default_eval_n() -> usize {
    4096
}

fn default_baseline_steps() -> usize {
    100
}

/// Evaluation defaults the `eval` command starts from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_eval_metric")]
    pub metric: String,
    #[serde(default = "default_eval_n")]
    pub n: usize,
    #[serde(default = "default_baseline_steps")]
    pub baseline_steps: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            metric: default_eval_metric(),
            n: default_eval_n(),
            baseline_steps: default_baseline_steps(),
        }
    }
}

impl RunConfig {
    /// Parses a run file; errors carry the configuration exit code and name
    /// the offending key when one exists.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Parses run-file text.
    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let config: RunConfig = toml::from_str(text)
            .map_err(|e| CliError::config(format!("config error: {}", e.message())))?;
        config
            .training
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        Ok(config)
    }

    /// The fully resolved text a checkpoint carries: the same config with
    /// the network section pinned to the dimensions actually used.
    pub fn resolved_text(&self, network: &NetworkConfig) -> Result<String, CliError> {
        let mut resolved = self.clone();
        resolved.network = NetworkSection::resolved(network);
        toml::to_string_pretty(&resolved)
            .map_err(|e| CliError::other(format!("serializing resolved config: {e}")))
    }
}
