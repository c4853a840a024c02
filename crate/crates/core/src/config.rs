//! Experiment configuration: TOML or JSON, unknown keys rejected.

use crate::affinity::AffinitySpec;
use crate::apps::{ExposureKind, PositivityMode};
use crate::diagnostics::{A3Mode, DiagnosticsOptions, Evaluation, SumOptions, DEFAULT_S1, DEFAULT_S2, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::models::{GraphSpec, LocationSpec, MaternParams, ModelSpec};
use crate::normality::{NormalityOptions, OmegaChoice, DEFAULT_ALPHA, DEFAULT_PROJECTIONS};
use crate::omega::DEFAULT_TOL;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Current config schema.
pub const SCHEMA_VERSION: u32 = 1;

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affinity: Option<AffinitySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normality: Option<NormalityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<EstimateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen: Option<GenConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_reps() -> usize {
    1000
}

fn default_s1() -> u64 {
    DEFAULT_S1
}

fn default_s2() -> u64 {
    DEFAULT_S2
}

fn default_bins() -> usize {
    8
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub n_grid: Vec<usize>,
    #[serde(default = "default_reps")]
    pub replications: usize,
    #[serde(default = "default_s1")]
    pub s1: u64,
    #[serde(default = "default_s2")]
    pub s2: u64,
    #[serde(default)]
    pub evaluation: Evaluation,
    #[serde(default)]
    pub a3_mode: A3Mode,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
}

impl DiagnosticsConfig {
    pub fn options(&self) -> DiagnosticsOptions {
        DiagnosticsOptions {
            replications: self.replications,
            sums: SumOptions {
                s1: self.s1,
                s2: self.s2,
                evaluation: self.evaluation,
                seed: 0,
            },
            a3_mode: self.a3_mode,
            bins: self.bins,
            tau: self.tau,
        }
    }
}

fn default_norm_reps() -> usize {
    2000
}

fn default_projections() -> usize {
    DEFAULT_PROJECTIONS
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalityConfig {
    pub n: usize,
    #[serde(default = "default_norm_reps")]
    pub replications: usize,
    #[serde(default = "default_projections")]
    pub projections: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub omega: OmegaChoice,
    #[serde(default)]
    pub pilot_replications: Option<usize>,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl NormalityConfig {
    pub fn options(&self) -> NormalityOptions {
        NormalityOptions {
            replications: self.replications,
            projections: self.projections,
            alpha: self.alpha,
            omega: self.omega,
            pilot_replications: self.pilot_replications,
            tol: self.tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ht: Option<HtConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qhat: Option<QHatConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub socio: Option<SocioConfig>,
}

fn default_exposure() -> ExposureKind {
    ExposureKind::FourLevel
}

fn default_mc() -> usize {
    20_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HtConfig {
    pub n: usize,
    pub graph: GraphSpec,
    pub treat_prob: f64,
    #[serde(default = "default_exposure")]
    pub exposure: ExposureKind,
    /// `[d_k, d_l]`.
    pub contrast: [i64; 2],
    #[serde(default)]
    pub positivity: PositivityMode,
    /// Assignments for Monte Carlo exposure probabilities when `n > 20`.
    #[serde(default = "default_mc")]
    pub mc_replications: usize,
    /// Observed treatment (0/1) per node.
    #[serde(default)]
    pub assignment: Option<Vec<u8>>,
    #[serde(default)]
    pub outcomes: Option<Vec<f64>>,
    /// CSV with columns `node,treated,outcome`, instead of inline data.
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// `label -> y_i(label)`; enables the design expectation by enumeration.
    #[serde(default)]
    pub potential_outcomes: Option<BTreeMap<String, Vec<f64>>>,
    /// CSV with columns `node,label,outcome`, instead of an inline table.
    #[serde(default)]
    pub potential_outcomes_csv: Option<PathBuf>,
}

/// Either an explicit grid or `points` evenly spaced values `k / (points + 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QGrid {
    Explicit(Vec<f64>),
    Even { points: usize },
}

impl QGrid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            QGrid::Explicit(v) => v.clone(),
            QGrid::Even { points } => (1..=*points).map(|k| k as f64 / (*points + 1) as f64).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QHatConfig {
    pub n: usize,
    pub graph: GraphSpec,
    pub seeds: Vec<usize>,
    pub periods: usize,
    /// Observed infection indicators (0/1) per node.
    #[serde(default)]
    pub outcomes: Option<Vec<u8>>,
    /// Simulate the observed outcomes at this true `q` instead.
    #[serde(default)]
    pub truth: Option<f64>,
    pub grid: QGrid,
    #[serde(default = "default_norm_reps")]
    pub replications: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SocioConfig {
    pub n: usize,
    pub locations: LocationSpec,
    pub groups: Vec<usize>,
    pub affinity: Vec<Vec<f64>>,
    pub spatial: MaternParams,
    /// Group-composition vectors whose pairwise distances are reported.
    #[serde(default)]
    pub compositions: Option<Vec<Vec<f64>>>,
    /// Builds hybrid affinity sets at this threshold when present.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Writes the dense kernel when `n` is at most this size.
    #[serde(default = "default_dense")]
    pub dense_limit: usize,
}

fn default_dense() -> usize {
    500
}

fn default_gen_reps() -> usize {
    1
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrayFormat {
    #[default]
    Csv,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub n: usize,
    #[serde(default = "default_gen_reps")]
    pub replications: usize,
    #[serde(default)]
    pub format: ArrayFormat,
    /// Also writes the affinity map when the config has one.
    #[serde(default = "yes")]
    pub write_affinity: bool,
}

fn yes() -> bool {
    true
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_dir() }
    }
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| cfg_err(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| cfg_err(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Checks everything that does not need a built model.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(cfg_err(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let wrap = |r: Result<()>| r.map_err(|e| cfg_err(e.to_string()));
        if let Some(m) = &self.model {
            wrap(m.validate())?;
        }
        if let Some(a) = &self.affinity {
            wrap(a.validate())?;
        }
        if let Some(d) = &self.diagnostics {
            wrap(crate::diagnostics::check_grid(&d.n_grid))?;
            if d.replications < 2 {
                return Err(cfg_err("diagnostics.replications must be at least 2"));
            }
            wrap(d.options().sums.validate())?;
            if !(d.tau >= 0.0) {
                return Err(cfg_err("diagnostics.tau must be nonnegative"));
            }
        }
        if let Some(nm) = &self.normality {
            if nm.replications < 100 {
                return Err(cfg_err("normality.replications must be at least 100"));
            }
            if !(nm.alpha > 0.0 && nm.alpha < 1.0) || nm.projections == 0 {
                return Err(cfg_err("normality needs alpha in (0, 1) and projections >= 1"));
            }
        }
        if let Some(e) = &self.estimate {
            if let Some(ht) = &e.ht {
                if ht.data.is_some() && (ht.assignment.is_some() || ht.outcomes.is_some()) {
                    return Err(cfg_err(
                        "estimate.ht: give data or inline assignment/outcomes, not both",
                    ));
                }
                if ht.potential_outcomes.is_some() && ht.potential_outcomes_csv.is_some() {
                    return Err(cfg_err("estimate.ht: give one potential-outcome source"));
                }
            }
            if let Some(q) = &e.qhat {
                if q.outcomes.is_some() == q.truth.is_some() {
                    return Err(cfg_err("estimate.qhat: give exactly one of outcomes and truth"));
                }
            }
        }
        if let Some(g) = &self.gen {
            if g.n == 0 || g.replications == 0 {
                return Err(cfg_err("gen needs n >= 1 and replications >= 1"));
            }
        }
        Ok(())
    }

    /// Canonical JSON used for hashing. The output section is excluded so
    /// that moving the output directory leaves the hash unchanged.
    pub fn canonical_json(&self) -> Result<String> {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        Ok(serde_json::to_string(&c)?)
    }

    /// `sha256` of the canonical JSON, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.canonical_json()?.as_bytes())))
    }

    pub fn require_model(&self) -> Result<&ModelSpec> {
        self.model.as_ref().ok_or_else(|| cfg_err("missing [model] section"))
    }

    pub fn require_affinity(&self) -> Result<&AffinitySpec> {
        self.affinity
            .as_ref()
            .ok_or_else(|| cfg_err("missing [affinity] section"))
    }
}
