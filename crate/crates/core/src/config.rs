//! Experiment configuration: a TOML file with one section per component.
//! Unknown keys are rejected and every error names the offending key path.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::controller::{theory_parameters, theory_parameters_unchecked, ControllerConfig};
use crate::costs::{CostFamily, CostKind, TargetShape};
use crate::error::{Error, Result};
use crate::optimism::OptimismSettings;
use crate::rng::RngStream;
use crate::sco::{
    random_transform, sco_theory_parameters, sco_theory_parameters_unchecked, DecisionSetKind, ScoInstance,
    ScoParameters,
};
use crate::system::{make_strongly_stable_system, NoiseKind, NoiseModel, SystemSpec};

/// Stream labels for randomness drawn while building instances.
pub const SYSTEM_STREAM: u64 = 21;
pub const TRANSFORM_STREAM: u64 = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ofu,
    Etc,
    Sco,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ofu => "ofu",
            Algorithm::Etc => "etc",
            Algorithm::Sco => "sco",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub system: SystemSection,
    #[serde(default)]
    pub cost: CostSection,
    pub controller: ControllerSection,
    #[serde(default)]
    pub sco: ScoSection,
    #[serde(default)]
    pub suite: SuiteSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub d_x: usize,
    pub d_u: usize,
    #[serde(default = "one")]
    pub kappa: f64,
    #[serde(default = "half")]
    pub gamma: f64,
    #[serde(default = "one")]
    pub r_b: f64,
    #[serde(default = "one")]
    pub w_bound: f64,
    #[serde(default = "default_noise")]
    pub noise: NoiseKind,
    /// Scale of the untruncated Gaussian for `truncated_gaussian` noise.
    #[serde(default = "one")]
    pub noise_sigma: f64,
    /// Explicit dynamics as row-major rows; a random certified system is
    /// generated from the top-level seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_star: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_star: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSection {
    pub kind: CostKind,
    pub shape: TargetShape,
    /// Defaults to the origin of `(x, u)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    pub radius: f64,
    pub knee: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        Self {
            kind: CostKind::NormTarget,
            shape: TargetShape::Corners,
            center: None,
            radius: 0.5,
            knee: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub horizon: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "one")]
    pub r_m: f64,
    #[serde(default = "one")]
    pub alpha_scale: f64,
    /// Memory length; the theory value `max(2, ⌈ln T / γ⌉)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<usize>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_window_factor")]
    pub window_factor: usize,
    #[serde(default = "yes")]
    pub prune: bool,
    #[serde(default = "one_usize")]
    pub parallel_width: usize,
    /// Exploration share of the explore-then-commit baseline; `T^{-1/3}` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explore_fraction: Option<f64>,
    /// Iterations of the hindsight comparator solve.
    #[serde(default = "default_hindsight_budget")]
    pub hindsight_budget: usize,
    #[serde(default = "yes")]
    pub check_preconditions: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoSection {
    pub horizon: usize,
    pub d_a: usize,
    pub d_y: usize,
    /// Diameter of the decision set.
    pub r_a: f64,
    pub r_q: f64,
    pub decision_set: DecisionSetKind,
    pub noise: NoiseKind,
    pub noise_sigma: f64,
    pub w_bound: f64,
    pub loss_kind: CostKind,
    pub loss_shape: TargetShape,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_center: Option<Vec<f64>>,
    pub loss_radius: f64,
    pub loss_knee: f64,
    pub delta: f64,
    pub alpha_scale: f64,
    pub budget: usize,
    pub window_factor: usize,
    /// Size of the frozen loss sample behind the pseudo-regret.
    pub mc_samples: usize,
    pub comparator_budget: usize,
    pub check_preconditions: bool,
}

impl Default for ScoSection {
    fn default() -> Self {
        Self {
            horizon: 1024,
            d_a: 2,
            d_y: 2,
            r_a: 2.0,
            r_q: 1.0,
            decision_set: DecisionSetKind::Ball,
            noise: NoiseKind::ScaledRademacher,
            noise_sigma: 1.0,
            w_bound: 1.0,
            loss_kind: CostKind::NormTarget,
            loss_shape: TargetShape::Corners,
            loss_center: None,
            loss_radius: 0.5,
            loss_knee: 1.0,
            delta: 0.1,
            alpha_scale: 1.0,
            budget: 500,
            window_factor: 0,
            mc_samples: 100_000,
            comparator_budget: 20_000,
            check_preconditions: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteSection {
    pub horizons: Vec<usize>,
    /// Seeds `seed, seed+1, …` from the top-level seed.
    pub seeds: usize,
    pub algorithms: Vec<Algorithm>,
    pub parallel: usize,
    /// Record wall-clock times in the summary; off by default so that
    /// summaries are reproducible byte for byte.
    pub wallclock: bool,
}

impl Default for SuiteSection {
    fn default() -> Self {
        Self {
            horizons: vec![256, 1024, 4096, 16384],
            seeds: 10,
            algorithms: vec![Algorithm::Ofu, Algorithm::Etc],
            parallel: 1,
            wallclock: false,
        }
    }
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn one_usize() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_delta() -> f64 {
    0.1
}
fn default_budget() -> usize {
    OptimismSettings::default().budget
}
fn default_window_factor() -> usize {
    OptimismSettings::default().window_factor
}
fn default_hindsight_budget() -> usize {
    300
}
fn default_noise() -> NoiseKind {
    NoiseKind::ScaledRademacher
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn config_err(key: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

/// Read, parse and validate a configuration file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| config_err("<document>", e.to_string()))?;
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        config_err(if key == "." { "<root>".to_string() } else { key }, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn to_toml(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| config_err("<document>", e.to_string()))
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_err(key, format!("must be > 0, got {v}")))
    }
}

fn at_least_one(key: &str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(config_err(key, "must be ≥ 1"))
    }
}

fn matrix(key: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(config_err(key, format!("expected a {nrows}×{ncols} array of rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl ExperimentConfig {
    /// Checks every section, then builds the instances once so that their
    /// own preconditions are reported before any run starts.
    pub fn validate(&self) -> Result<()> {
        let s = &self.system;
        at_least_one("system.d_x", s.d_x)?;
        at_least_one("system.d_u", s.d_u)?;
        if !(s.kappa >= 1.0 && s.kappa.is_finite()) {
            return Err(config_err("system.kappa", format!("κ ≥ 1 required, got {}", s.kappa)));
        }
        if !(s.gamma > 0.0 && s.gamma <= 1.0) {
            return Err(config_err("system.gamma", format!("γ must lie in (0, 1], got {}", s.gamma)));
        }
        positive("system.r_b", s.r_b)?;
        positive("system.w_bound", s.w_bound)?;
        positive("system.noise_sigma", s.noise_sigma)?;
        if s.a_star.is_some() != s.b_star.is_some() {
            return Err(config_err("system.b_star", "a_star and b_star must be given together"));
        }

        let c = &self.cost;
        if let Some(center) = &c.center {
            if center.len() != s.d_x + s.d_u {
                return Err(config_err(
                    "cost.center",
                    format!("expected length d_x + d_u = {}, got {}", s.d_x + s.d_u, center.len()),
                ));
            }
        }

        let k = &self.controller;
        at_least_one("controller.horizon", k.horizon)?;
        if !(k.delta > 0.0 && k.delta < 1.0) {
            return Err(config_err("controller.delta", format!("must lie in (0, 1), got {}", k.delta)));
        }
        positive("controller.r_m", k.r_m)?;
        if !(k.alpha_scale >= 0.0 && k.alpha_scale.is_finite()) {
            return Err(config_err("controller.alpha_scale", format!("must be ≥ 0, got {}", k.alpha_scale)));
        }
        if let Some(h) = k.h {
            if h < 2 {
                return Err(config_err("controller.h", format!("memory must be ≥ 2, got {h}")));
            }
        }
        at_least_one("controller.budget", k.budget)?;
        at_least_one("controller.parallel_width", k.parallel_width)?;
        at_least_one("controller.hindsight_budget", k.hindsight_budget)?;
        if let Some(f) = k.explore_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(config_err("controller.explore_fraction", format!("must lie in (0, 1], got {f}")));
            }
        }

        let q = &self.sco;
        at_least_one("sco.horizon", q.horizon)?;
        at_least_one("sco.d_a", q.d_a)?;
        at_least_one("sco.d_y", q.d_y)?;
        positive("sco.r_a", q.r_a)?;
        positive("sco.r_q", q.r_q)?;
        positive("sco.w_bound", q.w_bound)?;
        positive("sco.noise_sigma", q.noise_sigma)?;
        if !(q.delta > 0.0 && q.delta < 1.0) {
            return Err(config_err("sco.delta", format!("must lie in (0, 1), got {}", q.delta)));
        }
        if !(q.alpha_scale >= 0.0 && q.alpha_scale.is_finite()) {
            return Err(config_err("sco.alpha_scale", format!("must be ≥ 0, got {}", q.alpha_scale)));
        }
        at_least_one("sco.budget", q.budget)?;
        at_least_one("sco.mc_samples", q.mc_samples)?;
        at_least_one("sco.comparator_budget", q.comparator_budget)?;
        if let Some(center) = &q.loss_center {
            if center.len() != q.d_y {
                return Err(config_err(
                    "sco.loss_center",
                    format!("expected length d_y = {}, got {}", q.d_y, center.len()),
                ));
            }
        }

        let u = &self.suite;
        if u.horizons.is_empty() {
            return Err(config_err("suite.horizons", "at least one horizon is required"));
        }
        for h in &u.horizons {
            at_least_one("suite.horizons", *h)?;
        }
        at_least_one("suite.seeds", u.seeds)?;
        at_least_one("suite.parallel", u.parallel)?;
        if u.algorithms.is_empty() {
            return Err(config_err("suite.algorithms", "at least one algorithm is required"));
        }

        let sys = self.build_system()?;
        self.build_costs()?;
        self.controller_config(&sys, k.horizon)?;
        self.build_sco_instance()?;
        Ok(())
    }

    /// Preconditions of every run a suite over `algorithms` would start.
    pub fn validate_suite(&self) -> Result<()> {
        let sys = self.build_system()?;
        let inst = self.build_sco_instance()?;
        for &t in &self.suite.horizons {
            for a in &self.suite.algorithms {
                match a {
                    Algorithm::Ofu | Algorithm::Etc => {
                        self.controller_config(&sys, t)?;
                    }
                    Algorithm::Sco => {
                        self.sco_parameters(&inst, t)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn build_system(&self) -> Result<SystemSpec> {
        let s = &self.system;
        let noise = NoiseModel::new(s.noise, s.d_x, s.w_bound, s.noise_sigma)
            .map_err(|e| config_err("system.noise", e.to_string()))?;
        match (&s.a_star, &s.b_star) {
            (Some(a), Some(b)) => {
                let a = matrix("system.a_star", a, s.d_x, s.d_x)?;
                let b = matrix("system.b_star", b, s.d_x, s.d_u)?;
                SystemSpec::from_parts(a, b, s.kappa, s.gamma, s.r_b, noise)
                    .map_err(|e| config_err("system.a_star", e.to_string()))
            }
            _ => {
                let mut rng = RngStream::new(self.seed, SYSTEM_STREAM);
                make_strongly_stable_system(s.d_x, s.d_u, s.kappa, s.gamma, s.r_b, noise, &mut rng)
                    .map_err(|e| config_err("system", e.to_string()))
            }
        }
    }

    pub fn build_costs(&self) -> Result<CostFamily> {
        let c = &self.cost;
        let dim = self.system.d_x + self.system.d_u;
        let center = c.center.clone().unwrap_or_else(|| vec![0.0; dim]);
        CostFamily::new(c.kind, dim, c.shape, center, c.radius, c.knee).map_err(|e| config_err("cost", e.to_string()))
    }

    /// Controller parameters for horizon `t`: theory values, then the memory
    /// override and the configured solver settings and `alpha_scale`.
    pub fn controller_config(&self, sys: &SystemSpec, t: usize) -> Result<ControllerConfig> {
        let k = &self.controller;
        let mut cfg = if k.check_preconditions {
            theory_parameters(sys, k.r_m, t, k.delta).map_err(|e| config_err("controller.horizon", e.to_string()))?;
            theory_parameters_unchecked(sys, k.r_m, t, k.delta, k.h)
        } else {
            theory_parameters_unchecked(sys, k.r_m, t, k.delta, k.h)
        }
        .map_err(|e| config_err("controller", e.to_string()))?;
        cfg.alpha_scale = k.alpha_scale;
        cfg.optimism = OptimismSettings {
            budget: k.budget,
            window_factor: k.window_factor,
            prune: k.prune,
            parallel_width: k.parallel_width,
        };
        cfg.validate().map_err(|e| config_err("controller", e.to_string()))?;
        Ok(cfg)
    }

    pub fn explore_fraction(&self, t: usize) -> f64 {
        self.controller
            .explore_fraction
            .unwrap_or_else(|| crate::bench::default_explore_fraction(t))
    }

    pub fn build_sco_instance(&self) -> Result<ScoInstance> {
        let q = &self.sco;
        let noise = NoiseModel::new(q.noise, q.d_y, q.w_bound, q.noise_sigma)
            .map_err(|e| config_err("sco.noise", e.to_string()))?;
        let center = q.loss_center.clone().unwrap_or_else(|| vec![0.0; q.d_y]);
        let loss = CostFamily::new(q.loss_kind, q.d_y, q.loss_shape, center, q.loss_radius, q.loss_knee)
            .map_err(|e| config_err("sco.loss_kind", e.to_string()))?;
        let mut rng = RngStream::new(self.seed, TRANSFORM_STREAM);
        let q_star = random_transform(q.d_y, q.d_a, q.r_q, &mut rng);
        ScoInstance::new(q_star, q.decision_set, q.r_a, q.r_q, noise, loss).map_err(|e| config_err("sco", e.to_string()))
    }

    /// `(λ, α)` for horizon `t` with `alpha_scale` applied to `α`.
    pub fn sco_parameters(&self, inst: &ScoInstance, t: usize) -> Result<ScoParameters> {
        let q = &self.sco;
        let mut p = if q.check_preconditions {
            sco_theory_parameters(inst, t, q.delta).map_err(|e| config_err("sco.horizon", e.to_string()))?
        } else {
            sco_theory_parameters_unchecked(inst, t, q.delta).map_err(|e| config_err("sco", e.to_string()))?
        };
        p.alpha *= q.alpha_scale;
        Ok(p)
    }

    pub fn sco_settings(&self) -> OptimismSettings {
        OptimismSettings {
            budget: self.sco.budget,
            window_factor: self.sco.window_factor,
            prune: self.controller.prune,
            parallel_width: self.controller.parallel_width,
        }
    }
}
