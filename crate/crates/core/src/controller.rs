//! The optimistic controller: epoch/subepoch scheduling around system
//! identification and optimistic policy selection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::costs::{CostFamily, CostSample};
use crate::dap::{regressor_dim, DapPolicy, UnrolledModel};
use crate::error::{check_dim, Error, Result};
use crate::estimation::{estimate_noise, logdet_doubled, GramTracker, RlsState};
use crate::optimism::{solve_optimistic_min, OptimisticProblem, OptimismSettings, WindowSample};
use crate::record::{EpochSnapshot, RunRecord, RunTraces, StepRow};
use crate::rng::RngStream;
use crate::system::SystemSpec;

/// Stream labels derived from a run's [`RngStream`]. Noise and cost draws use
/// the same labels for every algorithm so runs share their randomness.
pub const NOISE_STREAM: u64 = 1;
pub const COST_STREAM: u64 = 2;
pub const EXPLORE_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub horizon: usize,
    pub h: usize,
    /// Unscaled exploration weight.
    pub alpha: f64,
    /// Multiplier applied to `alpha`.
    pub alpha_scale: f64,
    pub lambda_w: f64,
    pub lambda_psi: f64,
    pub r_m: f64,
    pub w_bound: f64,
    pub optimism: OptimismSettings,
}

impl ControllerConfig {
    pub fn effective_alpha(&self) -> f64 {
        self.alpha * self.alpha_scale
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda_w", self.lambda_w),
            ("lambda_psi", self.lambda_psi),
            ("r_m", self.r_m),
            ("w_bound", self.w_bound),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be > 0, got {v}")));
            }
        }
        for (name, v) in [("alpha", self.alpha), ("alpha_scale", self.alpha_scale)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be ≥ 0, got {v}")));
            }
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be ≥ 1"));
        }
        if self.h < 2 {
            return Err(Error::invalid("h", format!("memory must be ≥ 2, got {}", self.h)));
        }
        self.optimism.validate()
    }
}

/// Parameter values prescribed by the regret analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryValues {
    pub h: usize,
    pub lambda_w: f64,
    pub lambda_psi: f64,
    pub alpha: f64,
}

/// `H = max(2, ⌈γ⁻¹ ln T⌉)`.
pub fn theory_memory(gamma: f64, horizon: f64) -> usize {
    let raw = (horizon.ln() / gamma).ceil();
    if raw.is_finite() && raw > 2.0 {
        raw as usize
    } else {
        2
    }
}

/// Theory values for horizon `t`; `h_override` replaces the memory length
/// (the regularizers are computed with the replacement). `R_B` enters as
/// `max(1, r_b)`.
pub fn theory_values(
    sys: &SystemSpec,
    r_m: f64,
    t: f64,
    delta: f64,
    h_override: Option<usize>,
) -> Result<TheoryValues> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", format!("must lie in (0, 1), got {delta}")));
    }
    if !(r_m > 0.0 && t >= 1.0) {
        return Err(Error::invalid("r_m", "radius must be > 0 and horizon ≥ 1"));
    }
    let h = h_override.unwrap_or_else(|| theory_memory(sys.gamma, t));
    let hf = h as f64;
    let (k, w, g) = (sys.kappa, sys.w_bound, sys.gamma);
    let rb = sys.r_b.max(1.0);
    let (dx, du) = (sys.d_x() as f64, sys.d_u() as f64);
    let lambda_w = 5.0 * k * k * w * w * r_m * r_m * rb * rb * hf / g;
    let lambda_psi = 2.0 * w * w * r_m * r_m * hf * hf;
    let alpha = 30.0 * w * r_m * rb * k * k * (dx + du) * hf * hf
        * (dx * g.powi(-3) * (dx * dx * k * k + du * rb * rb) * (12.0 * t / delta).ln()).sqrt();
    Ok(TheoryValues {
        h,
        lambda_w,
        lambda_psi,
        alpha,
    })
}

/// Full controller configuration at the theory values. Fails unless
/// `T ≥ 64 R_M²` and `R_M ≥ 1`.
pub fn theory_parameters(sys: &SystemSpec, r_m: f64, horizon: usize, delta: f64) -> Result<ControllerConfig> {
    let t = horizon as f64;
    if t < 64.0 * r_m * r_m {
        return Err(Error::invalid(
            "horizon",
            format!("the regret guarantee needs T ≥ 64·R_M² = {}, got T = {horizon}", 64.0 * r_m * r_m),
        ));
    }
    if r_m < 1.0 {
        return Err(Error::invalid("r_m", format!("the regret guarantee needs R_M ≥ 1, got {r_m}")));
    }
    theory_parameters_unchecked(sys, r_m, horizon, delta, None)
}

/// Same formulas without the horizon and radius preconditions.
pub fn theory_parameters_unchecked(
    sys: &SystemSpec,
    r_m: f64,
    horizon: usize,
    delta: f64,
    h_override: Option<usize>,
) -> Result<ControllerConfig> {
    let v = theory_values(sys, r_m, horizon as f64, delta, h_override)?;
    Ok(ControllerConfig {
        horizon,
        h: v.h,
        alpha: v.alpha,
        alpha_scale: 1.0,
        lambda_w: v.lambda_w,
        lambda_psi: v.lambda_psi,
        r_m,
        w_bound: sys.w_bound,
        optimism: OptimismSettings::default(),
    })
}

/// Ceiling on `√Σ‖w_t − ŵ_t‖²` from the disturbance-estimation analysis.
pub fn disturbance_error_ceiling(sys: &SystemSpec, r_m: f64, h: usize, horizon: usize, delta: f64) -> f64 {
    let (k, w, g) = (sys.kappa, sys.w_bound, sys.gamma);
    let rb = sys.r_b.max(1.0);
    let (dx, du) = (sys.d_x() as f64, sys.d_u() as f64);
    10.0 * w * k * r_m * rb / g
        * (h as f64 * (dx + du) * (dx * dx * k * k + du * rb * rb) * (12.0 * horizon as f64 / delta).ln()).sqrt()
}

/// Online system identification shared by every learner: ridge estimate of
/// `(A, B)`, projected disturbance recovery, and the regressor Gram matrix.
#[derive(Debug, Clone)]
pub struct Identification {
    h: usize,
    d_x: usize,
    d_u: usize,
    w_bound: f64,
    rls: RlsState,
    gram: GramTracker,
    /// `Σ x_{s+1} ρ_sᵀ`.
    cross: DMatrix<f64>,
    /// `ŵ_1, …` (index 0 is `ŵ_1`).
    w_hat: Vec<DVector<f64>>,
    actions: Vec<DVector<f64>>,
    x: DVector<f64>,
    harmonic: f64,
    zero: DVector<f64>,
    zero_u: DVector<f64>,
}

/// What one identification step produced.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationStep {
    pub w_hat: DVector<f64>,
    /// `ρ_tᵀ V_t⁻¹ ρ_t`.
    pub rho_quad: f64,
    pub rho_norm_sq: f64,
}

impl Identification {
    pub fn new(d_x: usize, d_u: usize, h: usize, w_bound: f64, lambda_w: f64, lambda_psi: f64) -> Result<Self> {
        let p = regressor_dim(h, d_x, d_u);
        Ok(Self {
            h,
            d_x,
            d_u,
            w_bound,
            rls: RlsState::new(d_x + d_u, d_x, lambda_w)?,
            gram: GramTracker::new(p, lambda_psi)?,
            cross: DMatrix::zeros(d_x, p),
            w_hat: Vec::new(),
            actions: Vec::new(),
            x: DVector::zeros(d_x),
            harmonic: 0.0,
            zero: DVector::zeros(d_x),
            zero_u: DVector::zeros(d_u),
        })
    }

    /// Steps completed so far (`t − 1` while deciding `u_t`).
    pub fn steps(&self) -> usize {
        self.w_hat.len()
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn gram(&self) -> &GramTracker {
        &self.gram
    }

    pub fn harmonic_sum(&self) -> f64 {
        self.harmonic
    }

    /// `ŵ_s`, zero for `s < 1`.
    pub fn w_hat(&self, s: isize) -> &DVector<f64> {
        if s < 1 {
            &self.zero
        } else {
            &self.w_hat[(s - 1) as usize]
        }
    }

    fn action(&self, s: isize) -> &DVector<f64> {
        if s < 1 {
            &self.zero_u
        } else {
            &self.actions[(s - 1) as usize]
        }
    }

    /// `[ŵ_{end−len+1}, …, ŵ_end]`.
    pub fn noise_window(&self, end: isize, len: usize) -> Vec<DVector<f64>> {
        (0..len as isize)
            .map(|i| self.w_hat(end - len as isize + 1 + i).clone())
            .collect()
    }

    /// `ρ_t = (u_{t+1−H}, …, u_t, ŵ_{t+1−H}, …, ŵ_{t−1})`.
    fn rho(&self, t: isize) -> DVector<f64> {
        let (h, dx, du) = (self.h as isize, self.d_x, self.d_u);
        let mut rho = DVector::zeros(regressor_dim(self.h, dx, du));
        for i in 0..h {
            rho.rows_mut(i as usize * du, du).copy_from(self.action(t + 1 - h + i));
        }
        for i in 0..h - 1 {
            rho.rows_mut(h as usize * du + i as usize * dx, dx)
                .copy_from(self.w_hat(t + 1 - h + i));
        }
        rho
    }

    /// Record `u_t` and the observed `x_{t+1}`.
    pub fn observe(&mut self, u: &DVector<f64>, x_next: &DVector<f64>) -> Result<IdentificationStep> {
        check_dim("action", self.d_u, u.len())?;
        check_dim("state", self.d_x, x_next.len())?;
        let t = self.steps() + 1;
        let z: Vec<f64> = self.x.iter().chain(u.iter()).copied().collect();
        self.rls.update(&z, x_next.as_slice()).map_err(|e| at_step(e, t))?;
        self.actions.push(u.clone());

        let rho = self.rho(t as isize);
        let rho_quad = self.gram.update(rho.as_slice()).map_err(|e| at_step(e, t))?;
        self.harmonic += rho_quad;
        self.cross.ger(1.0, x_next, &rho, 1.0);

        let theta = self.rls.estimate();
        let a = theta.columns(0, self.d_x).into_owned();
        let b = theta.columns(self.d_x, self.d_u).into_owned();
        let est = estimate_noise(&a, &b, &self.x, u, x_next, self.w_bound)?;
        if !est.w_hat.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical {
                step: t,
                detail: "non-finite disturbance estimate".into(),
            });
        }
        self.w_hat.push(est.w_hat.clone());
        self.x = x_next.clone();
        Ok(IdentificationStep {
            w_hat: est.w_hat,
            rho_quad,
            rho_norm_sq: rho.norm_squared(),
        })
    }

    /// Ridge estimate of `Ψ` over all `(ρ_s, x_{s+1})` so far; its normal
    /// matrix is the current Gram matrix.
    pub fn psi_estimate(&self) -> Result<UnrolledModel> {
        let psi = self
            .gram
            .right_solve(&self.cross)
            .map_err(|e| at_step(e, self.steps()))?;
        Ok(UnrolledModel {
            psi,
            h: self.h,
            d_u: self.d_u,
        })
    }

    /// Window samples for `s ∈ [from, to]` (1-based, inclusive).
    pub fn window(&self, costs: &[CostSample], from: usize, to: usize) -> Vec<WindowSample> {
        (from..=to)
            .map(|s| WindowSample {
                cost: costs[s - 1].clone(),
                noises: self.noise_window(s as isize - 1, 2 * self.h),
            })
            .collect()
    }

    /// `u_t = Σ_h M^[h] ŵ_{t−h}` for the next step.
    pub fn dap_action(&self, policy: &DapPolicy) -> DVector<f64> {
        let t = self.steps() as isize + 1;
        let window = self.noise_window(t - 1, self.h);
        policy.action(&window).expect("window shape fixed at construction")
    }
}

fn at_step(e: Error, t: usize) -> Error {
    match e {
        Error::Numerical { detail, .. } => Error::Numerical { step: t, detail },
        other => other,
    }
}

/// Epoch and subepoch bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochState {
    pub i: usize,
    pub j: usize,
    pub tau_i: usize,
    pub tau_ij: usize,
    /// Start of the previous subepoch, `τ_{i,j−1}`.
    pub tau_prev: usize,
    pub logdet_at_epoch_start: f64,
    pub inv_sqrt_gram: DMatrix<f64>,
    pub psi_epoch: UnrolledModel,
    pub current_policy: DapPolicy,
    pub policy_switch_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerStep {
    pub w_hat: DVector<f64>,
    pub rho_quad: f64,
    pub new_epoch: bool,
    pub new_subepoch: bool,
}

/// The optimistic learner. It only sees states, its own actions and cost
/// samples; disturbances are recovered from the state sequence.
#[derive(Debug, Clone)]
pub struct OfuController {
    cfg: ControllerConfig,
    cost: CostFamily,
    ident: Identification,
    costs: Vec<CostSample>,
    epoch: EpochState,
    subepochs: Vec<usize>,
    policies: Vec<(usize, DapPolicy)>,
    snapshots: Vec<EpochSnapshot>,
}

impl OfuController {
    pub fn new(d_x: usize, d_u: usize, cost: CostFamily, cfg: ControllerConfig) -> Result<Self> {
        cfg.validate()?;
        check_dim("cost dimension (d_x + d_u)", d_x + d_u, cost.dim)?;
        let ident = Identification::new(d_x, d_u, cfg.h, cfg.w_bound, cfg.lambda_w, cfg.lambda_psi)?;
        let p = regressor_dim(cfg.h, d_x, d_u);
        let zero = DapPolicy::zeros(d_u, d_x, cfg.h, cfg.r_m);
        let psi = UnrolledModel::zeros(d_x, d_u, cfg.h);
        let epoch = EpochState {
            i: 1,
            j: 1,
            tau_i: 1,
            tau_ij: 1,
            tau_prev: 1,
            logdet_at_epoch_start: ident.gram().logdet(),
            inv_sqrt_gram: DMatrix::identity(p, p) / cfg.lambda_psi.sqrt(),
            psi_epoch: psi.clone(),
            current_policy: zero.clone(),
            policy_switch_count: 0,
        };
        Ok(Self {
            snapshots: vec![EpochSnapshot {
                start: 1,
                psi,
                gram: ident.gram().matrix().clone(),
            }],
            cfg,
            cost,
            ident,
            costs: Vec::new(),
            epoch,
            subepochs: vec![1],
            policies: vec![(1, zero)],
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn epoch_state(&self) -> &EpochState {
        &self.epoch
    }

    pub fn identification(&self) -> &Identification {
        &self.ident
    }

    pub fn subepochs(&self) -> &[usize] {
        &self.subepochs
    }

    /// `u_t` under the policy of the current subepoch.
    pub fn act(&self) -> DVector<f64> {
        self.ident.dap_action(&self.epoch.current_policy)
    }

    /// Feed back `u_t` (as played), the observed `x_{t+1}` and the cost sample of round `t`.
    pub fn observe(&mut self, u: &DVector<f64>, x_next: &DVector<f64>, cost: CostSample) -> Result<ControllerStep> {
        check_dim("cost sample", self.cost.dim, cost.z.len())?;
        let t = self.ident.steps() + 1;
        let id = self.ident.observe(u, x_next)?;
        self.costs.push(cost);
        let h = self.cfg.h;

        let mut new_epoch = false;
        let logdet = self.ident.gram().logdet();
        if logdet_doubled(logdet, self.epoch.logdet_at_epoch_start) {
            new_epoch = true;
            let psi = self.ident.psi_estimate()?;
            let e = &mut self.epoch;
            e.i += 1;
            e.j = 2;
            e.tau_i = t + 1;
            e.tau_prev = t + 1;
            e.tau_ij = t + 1 + 2 * h;
            e.logdet_at_epoch_start = logdet;
            e.inv_sqrt_gram = self.ident.gram().inv_sqrt();
            e.psi_epoch = psi.clone();
            self.subepochs.push(2);
            self.snapshots.push(EpochSnapshot {
                start: t + 1,
                psi,
                gram: self.ident.gram().matrix().clone(),
            });
            let zero = DapPolicy::zeros(u.len(), x_next.len(), h, self.cfg.r_m);
            self.set_policy(t + 1, zero);
        }

        let mut new_subepoch = false;
        let e = &self.epoch;
        if t + 1 - e.tau_i > 2 * (e.tau_ij - e.tau_i) {
            new_subepoch = true;
            let from = e.tau_ij;
            let window = self.ident.window(&self.costs, from, t);
            let prob = OptimisticProblem::control(
                &window,
                &e.psi_epoch,
                &e.inv_sqrt_gram,
                &self.cost,
                self.cfg.effective_alpha(),
                self.cfg.w_bound,
                self.cfg.r_m,
            )?;
            let x0 = e.current_policy.to_flat();
            let sol = solve_optimistic_min(&prob, &self.cfg.optimism, &x0)?;
            if !sol.value.is_finite() {
                return Err(Error::Numerical {
                    step: t,
                    detail: "optimistic objective is not finite".into(),
                });
            }
            let policy = sol.policy(&prob, self.cfg.r_m)?;
            let e = &mut self.epoch;
            e.j += 1;
            e.tau_prev = from;
            e.tau_ij = t + 1;
            *self.subepochs.last_mut().expect("at least one epoch") = e.j;
            self.set_policy(t + 1, policy);
        }
        Ok(ControllerStep {
            w_hat: id.w_hat,
            rho_quad: id.rho_quad,
            new_epoch,
            new_subepoch,
        })
    }

    fn set_policy(&mut self, from: usize, policy: DapPolicy) {
        if policy != self.epoch.current_policy {
            self.epoch.policy_switch_count += 1;
        }
        self.epoch.current_policy = policy.clone();
        self.policies.push((from, policy));
    }
}

/// Simulate the controller on `sys` for `cfg.horizon` steps.
pub fn run_controller(sys: &SystemSpec, costs: &CostFamily, cfg: &ControllerConfig, rng: &RngStream) -> Result<RunRecord> {
    let mut ctl = OfuController::new(sys.d_x(), sys.d_u(), costs.clone(), cfg.clone())?;
    let mut noise_rng = rng.derive(NOISE_STREAM);
    let mut cost_rng = rng.derive(COST_STREAM);
    let mut rec = RunRecord {
        regressor_dim: regressor_dim(cfg.h, sys.d_x(), sys.d_u()),
        ..RunRecord::default()
    };
    let mut x = DVector::zeros(sys.d_x());
    for t in 1..=cfg.horizon {
        let u = ctl.act();
        let w = sys.sample_noise(&mut noise_rng);
        let z = costs.sample(&mut cost_rng);
        let cost = costs.eval_xu(&z, x.as_slice(), u.as_slice())?;
        let x_next = sys.step(&x, &u, &w)?;
        let (epoch, subepoch, switches) = (ctl.epoch.i, ctl.epoch.j, ctl.epoch.policy_switch_count);
        let step = ctl.observe(&u, &x_next, z.clone())?;
        let err = (&w - &step.w_hat).norm();
        rec.noise_err_sum += err * err;
        rec.rows.push(StepRow {
            t,
            epoch,
            subepoch,
            cost,
            action_norm: u.norm(),
            state_norm: x.norm(),
            noise_err: err,
            logdet_v: ctl.ident.gram().logdet(),
            policy_switches: switches,
        });
        push_traces(&mut rec.traces, w, z, &x, &u);
        x = x_next;
    }
    rec.subepochs = ctl.subepochs.clone();
    rec.harmonic_sum = ctl.ident.harmonic_sum();
    rec.policies = ctl.policies.clone();
    rec.snapshots = ctl.snapshots.clone();
    Ok(rec)
}

pub(crate) fn push_traces(tr: &mut RunTraces, w: DVector<f64>, z: CostSample, x: &DVector<f64>, u: &DVector<f64>) {
    tr.noises.push(w);
    tr.costs.push(z);
    tr.states.push(x.clone());
    tr.actions.push(u.clone());
}

/// Costs of a fixed DAP on recorded noises and cost samples, with actions
/// computed from the true disturbances: `u_t = Σ_h M^[h] w_{t−h}`.
pub fn run_fixed_policy(
    sys: &SystemSpec,
    costs: &CostFamily,
    policy: &DapPolicy,
    noise_trace: &[DVector<f64>],
    cost_trace: &[CostSample],
) -> Result<Vec<f64>> {
    check_dim("cost trace length", noise_trace.len(), cost_trace.len())?;
    check_dim("policy state dimension", sys.d_x(), policy.d_x())?;
    check_dim("policy action dimension", sys.d_u(), policy.d_u())?;
    let h = policy.memory();
    let zero = DVector::zeros(sys.d_x());
    let mut x = DVector::zeros(sys.d_x());
    let mut out = Vec::with_capacity(noise_trace.len());
    let mut window: Vec<DVector<f64>> = vec![zero; h];
    for (w, z) in noise_trace.iter().zip(cost_trace) {
        let u = policy.action(&window)?;
        out.push(costs.eval_xu(z, x.as_slice(), u.as_slice())?);
        x = sys.step(&x, &u, w)?;
        window.remove(0);
        window.push(w.clone());
    }
    Ok(out)
}
