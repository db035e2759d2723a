//! Experiment configuration, read from TOML.
//!
//! Unknown keys are rejected so that typos surface as errors with the
//! offending line rather than silently falling back to defaults.

use std::path::{Path, PathBuf};

use adacrit_core::{Method, TheoremId};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

pub const DEFAULT_MAX_STEPS: u64 = 100_000;
pub const ADAM_DEFAULT_XI: f64 = 1e-8;
pub const RMSPROP_DEFAULT_XI: f64 = 1e-10;
pub const ADAM_DEFAULT_BETA2: f64 = 0.999;
pub const RMSPROP_DEFAULT_BETA2: f64 = 0.9;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_MINIBATCH: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub start: StartSpec,
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<BudgetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSpec>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    /// `x^T A x / 2`; give either a full symmetric `matrix` or its `diag`.
    Quadratic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        matrix: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        diag: Option<Vec<f64>>,
        /// Half-width of the box on which `sigma` holds.
        #[serde(default = "one")]
        box_radius: f64,
    },
    /// Symmetric logistic sum over `pairs` seeded Gaussian directions of
    /// norm `scale`, or explicit `directions`.
    LogisticSum {
        dim: usize,
        #[serde(default = "default_pairs")]
        pairs: usize,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        data_seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        directions: Option<Vec<Vec<f64>>>,
    },
    PseudoHuber {
        dim: usize,
        #[serde(default = "one")]
        delta: f64,
    },
    /// Components `c_p * base` with positive `scales`, or `k` scales evenly
    /// spread over `[0.5, 1.5]`.
    ScaledSum {
        base: Box<ObjectiveSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scales: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k: Option<usize>,
    },
    /// Components `|x - c_p|^2 / 2`. Distinct centers break the sign
    /// condition between them.
    ShiftedQuadratics {
        centers: Vec<Vec<f64>>,
        #[serde(default = "one")]
        box_radius: f64,
    },
    Autoencoder {
        ell: usize,
        h: usize,
        data: DataSpec,
        /// Glorot probe points for estimating `sigma` and `L`.
        #[serde(default = "default_probes")]
        probes: usize,
        #[serde(default = "default_power_iters")]
        power_iters: usize,
        /// Training rows used for the estimates.
        #[serde(default = "default_probe_rows")]
        probe_rows: usize,
    },
}

fn one() -> f64 {
    1.0
}
fn default_pairs() -> usize {
    5
}
fn default_probes() -> usize {
    4
}
fn default_power_iters() -> usize {
    20
}
fn default_probe_rows() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Synthetic {
        side: usize,
        #[serde(default = "default_n_train")]
        n_train: usize,
        #[serde(default = "default_n_test")]
        n_test: usize,
        #[serde(default)]
        data_seed: u64,
    },
    Idx {
        train_path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_path: Option<PathBuf>,
        #[serde(default = "default_crop")]
        crop: usize,
        /// Keep only the first rows of each file.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
}

fn default_n_train() -> usize {
    5500
}
fn default_n_test() -> usize {
    1000
}
fn default_crop() -> usize {
    3
}

/// Starting point `x_1`; fixed per configuration, independent of the run
/// seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StartSpec {
    /// Uniform on the unit box for benchmarks, Glorot for autoencoders.
    Default {
        #[serde(default)]
        seed: u64,
    },
    Fixed {
        values: Vec<f64>,
    },
    Uniform {
        radius: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl Default for StartSpec {
    fn default() -> Self {
        StartSpec::Default { seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    #[default]
    Constant,
    InverseSqrt,
    BiasCorrected,
    /// Use the rule of the `[budget]` section.
    Budget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub method: Method,
    #[serde(default)]
    pub rule: RuleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
}

impl OptimizerSpec {
    pub fn mu(&self) -> f64 {
        self.mu.unwrap_or(DEFAULT_MOMENTUM)
    }

    pub fn beta1(&self) -> f64 {
        self.beta1.unwrap_or(DEFAULT_MOMENTUM)
    }

    pub fn beta2(&self) -> f64 {
        self.beta2.unwrap_or(match self.method {
            Method::Adam => ADAM_DEFAULT_BETA2,
            _ => RMSPROP_DEFAULT_BETA2,
        })
    }

    pub fn xi(&self) -> f64 {
        self.xi.unwrap_or(match self.method {
            Method::Adam => ADAM_DEFAULT_XI,
            Method::Rmsprop => RMSPROP_DEFAULT_XI,
            Method::Nag => 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    /// Stop at the first logged iterate with gradient norm at most `eps`.
    #[serde(default)]
    pub eps: f64,
    /// Track `lambda_min` every this many iterates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_stride: Option<u64>,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    /// Mini-batch size for autoencoders; full batch when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minibatch: Option<usize>,
    /// Sample one component gradient per step on finite sums.
    #[serde(default)]
    pub stochastic: bool,
}

fn default_max_steps() -> u64 {
    DEFAULT_MAX_STEPS
}
fn default_eval_every() -> u64 {
    1
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            max_steps: DEFAULT_MAX_STEPS,
            eps: 0.0,
            lambda_stride: None,
            eval_every: 1,
            minibatch: None,
            stochastic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    pub theorem: TheoremId,
    pub eps: f64,
    /// Monte-Carlo slack on `eps^2` for stochastic certificates.
    #[serde(default = "default_slack")]
    pub slack: f64,
}

fn default_slack() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Step sizes, log-spaced.
    pub alpha: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mu: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub beta1: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub beta2: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub xi: Vec<f64>,
    /// Extend the step-size axis while the best value sits on its edge.
    #[serde(default = "yes")]
    pub interior_rule: bool,
    #[serde(default = "default_extensions")]
    pub max_extensions: u32,
    /// Step cap for tuning runs; the run cap when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
}

fn yes() -> bool {
    true
}
fn default_extensions() -> u32 {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Hold all other hyperparameters fixed.
    #[default]
    Fixed,
    /// Re-tune the step size for every shift with `[grid]`.
    Tuned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub xi: Vec<f64>,
    #[serde(default)]
    pub mode: SweepMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub label: String,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
}

impl VariantSpec {
    pub fn optimizer(&self, rule: RuleKind) -> OptimizerSpec {
        OptimizerSpec {
            method: self.method,
            rule,
            alpha: self.alpha,
            mu: self.mu,
            beta1: self.beta1,
            beta2: self.beta2,
            xi: self.xi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    /// Defaults to ADAM with beta1 in {0.9, 0.99}, NAG with mu in
    /// {0.9, 0.99} and RMSProp.
    #[serde(default = "default_variants")]
    pub variants: Vec<VariantSpec>,
}

pub fn default_variants() -> Vec<VariantSpec> {
    let v = |label: &str, method, mu, beta1| VariantSpec {
        label: label.to_string(),
        method,
        alpha: None,
        mu,
        beta1,
        beta2: None,
        xi: None,
    };
    vec![
        v("ADAM b1=0.9", Method::Adam, None, Some(0.9)),
        v("ADAM b1=0.99", Method::Adam, None, Some(0.99)),
        v("NAG mu=0.9", Method::Nag, Some(0.9), None),
        v("NAG mu=0.99", Method::Nag, Some(0.99), None),
        v("RMSProp", Method::Rmsprop, None, None),
    ]
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        // A metadata sidecar replays the run it describes.
        if let Ok(side) = toml::from_str::<crate::trace_io::Sidecar>(s) {
            let mut cfg = side.config;
            cfg.seeds = vec![side.provenance.seed];
            cfg.validate()?;
            return Ok(cfg);
        }
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&s).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| "run".to_string())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.run.eval_every == 0 {
            return bad("run.eval_every must be positive".into());
        }
        if !(self.run.eps >= 0.0) {
            return bad(format!("run.eps = {} must be non-negative", self.run.eps));
        }
        if self.run.minibatch == Some(0) {
            return bad("run.minibatch must be positive".into());
        }
        if self.run.lambda_stride == Some(0) {
            return bad("run.lambda_stride must be positive".into());
        }
        match self.optimizer.rule {
            RuleKind::Budget => {
                if self.budget.is_none() {
                    return bad("optimizer.rule = \"budget\" needs a [budget] section".into());
                }
            }
            _ => {
                if self.optimizer.alpha.is_none() && self.grid.is_none() && self.compare.is_none() {
                    return bad("optimizer.alpha is required unless a [grid] or [budget] supplies it".into());
                }
            }
        }
        if let Some(b) = &self.budget {
            if !(b.eps > 0.0) {
                return bad(format!("budget.eps = {} must be positive", b.eps));
            }
            let method_ok = match b.theorem {
                TheoremId::AdamDet => self.optimizer.method == Method::Adam,
                _ => self.optimizer.method == Method::Rmsprop,
            };
            if !method_ok {
                return bad(format!("budget {} does not apply to {}", b.theorem, self.optimizer.method));
            }
            if b.theorem == TheoremId::RmsNoshift && self.optimizer.alpha.is_none() {
                return bad("budget rms_noshift needs optimizer.alpha as alpha0".into());
            }
        }
        if let Some(g) = &self.grid {
            if g.alpha.is_empty() || g.alpha.iter().any(|a| !(*a > 0.0)) {
                return bad("grid.alpha must be a non-empty list of positive step sizes".into());
            }
            if g.interior_rule && g.alpha.len() < 3 {
                return bad("grid.alpha needs at least 3 points when interior_rule is on".into());
            }
        }
        if let Some(s) = &self.sweep {
            if s.xi.is_empty() {
                return bad("sweep.xi must not be empty".into());
            }
            if self.optimizer.method == Method::Nag {
                return bad("xi sweeps apply to rmsprop and adam only".into());
            }
            if s.mode == SweepMode::Tuned && self.grid.is_none() {
                return bad("sweep.mode = \"tuned\" needs a [grid] section".into());
            }
        }
        Ok(())
    }
}
