//! Stochastic convex optimisation through a hidden linear transform: play
//! `a_t`, observe `y = Q★a_t + w̄_t` and the loss `ℓ_t(q) = ℓ(q; z̄_t)`, and
//! compete with `min_a μ(Q★a)` where `μ(q) = E_z ℓ(q; z)`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::costs::{mean_stderr, CostFamily, CostSample, McEstimate};
use crate::error::{check_dim, Error, Result};
use crate::estimation::{GramTracker, RlsState};
use crate::linalg::op_norm;
use crate::optimism::{solve_optimistic_min, AffineTerm, OptimisticProblem, OptimismSettings};
use crate::rng::RngStream;
use crate::solver::{projected_subgradient, Domain};
use crate::system::NoiseModel;

pub const SCO_NOISE_STREAM: u64 = 11;
pub const SCO_COST_STREAM: u64 = 12;
pub const ORACLE_STREAM: u64 = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionSetKind {
    Ball,
    Box,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoInstance {
    pub q_star: DMatrix<f64>,
    pub set_kind: DecisionSetKind,
    /// Diameter of the decision set.
    pub r_a: f64,
    pub r_q: f64,
    pub noise: NoiseModel,
    pub loss: CostFamily,
}

impl ScoInstance {
    pub fn new(
        q_star: DMatrix<f64>,
        set_kind: DecisionSetKind,
        r_a: f64,
        r_q: f64,
        noise: NoiseModel,
        loss: CostFamily,
    ) -> Result<Self> {
        if !(r_a > 0.0 && r_a.is_finite()) {
            return Err(Error::invalid("r_a", format!("diameter must be > 0, got {r_a}")));
        }
        let qn = op_norm(&q_star);
        if qn > r_q * (1.0 + 1e-12) {
            return Err(Error::invalid("r_q", format!("‖Q★‖ = {qn} exceeds r_q = {r_q}")));
        }
        check_dim("noise dimension", q_star.nrows(), noise.dim)?;
        check_dim("loss dimension", q_star.nrows(), loss.dim)?;
        Ok(Self {
            q_star,
            set_kind,
            r_a,
            r_q,
            noise,
            loss,
        })
    }

    pub fn d_a(&self) -> usize {
        self.q_star.ncols()
    }

    pub fn d_y(&self) -> usize {
        self.q_star.nrows()
    }

    pub fn w_bound(&self) -> f64 {
        self.noise.w_bound
    }

    /// Centred ball or cube with diameter `r_a`.
    pub fn domain(&self) -> Domain {
        match self.set_kind {
            DecisionSetKind::Ball => Domain::Ball { radius: self.r_a / 2.0 },
            DecisionSetKind::Box => {
                let half = self.r_a / (2.0 * (self.d_a() as f64).sqrt());
                Domain::Box {
                    lo: vec![-half; self.d_a()],
                    hi: vec![half; self.d_a()],
                }
            }
        }
    }
}

/// Random `Q★` with Gaussian entries rescaled to operator norm `r_q`.
pub fn random_transform(d_y: usize, d_a: usize, r_q: f64, rng: &mut RngStream) -> DMatrix<f64> {
    let q = DMatrix::from_fn(d_y, d_a, |_, _| rng.normal());
    let n = op_norm(&q);
    if n > 0.0 {
        q * (r_q / n)
    } else {
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoParameters {
    pub lambda: f64,
    pub alpha: f64,
}

/// `D_q = 3R_QR_a + W d_y √(8 ln(4T/δ))`.
pub fn sco_horizon_constant(inst: &ScoInstance, t: f64, delta: f64) -> f64 {
    3.0 * inst.r_q * inst.r_a + inst.w_bound() * inst.d_y() as f64 * (8.0 * (4.0 * t / delta).ln()).sqrt()
}

/// `λ = R_a²`, `α = √d_a (W d_y √(8 ln(2T/δ)) + √2 R_a R_Q)`. Fails unless
/// `T ≥ max(σ_ℓ, 64 D_q²)`.
pub fn sco_theory_parameters(inst: &ScoInstance, t: usize, delta: f64) -> Result<ScoParameters> {
    let tf = t as f64;
    let dq = sco_horizon_constant(inst, tf, delta);
    let sigma = inst.loss.sigma_c(inst.r_q * inst.r_a);
    let need = sigma.max(64.0 * dq * dq);
    if tf < need {
        return Err(Error::invalid(
            "horizon",
            format!("the regret guarantee needs T ≥ max(σ_ℓ, 64·D_q²) = {need:.1}, got T = {t}"),
        ));
    }
    sco_theory_parameters_unchecked(inst, t, delta)
}

pub fn sco_theory_parameters_unchecked(inst: &ScoInstance, t: usize, delta: f64) -> Result<ScoParameters> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", format!("must lie in (0, 1), got {delta}")));
    }
    let (w, dy, da) = (inst.w_bound(), inst.d_y() as f64, inst.d_a() as f64);
    Ok(ScoParameters {
        lambda: inst.r_a * inst.r_a,
        alpha: da.sqrt() * (w * dy * (8.0 * (2.0 * t as f64 / delta).ln()).sqrt() + 2f64.sqrt() * inst.r_a * inst.r_q),
    })
}

/// Sufficient statistic of the observed losses: each distinct `z` with its count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    counts: BTreeMap<Vec<u64>, (Vec<f64>, usize)>,
    total: usize,
}

impl LossHistory {
    pub fn push(&mut self, z: &[f64]) {
        let key: Vec<u64> = z.iter().map(|v| v.to_bits()).collect();
        self.counts.entry(key).or_insert_with(|| (z.to_vec(), 0)).1 += 1;
        self.total += 1;
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn distinct(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.counts.values().map(|(z, n)| (z.as_slice(), *n))
    }
}

/// Learner state: Gram matrix, ridge estimate of `Q★`, and loss history.
#[derive(Debug, Clone)]
pub struct ScoState {
    pub gram: GramTracker,
    rls: RlsState,
    pub q_hat: DMatrix<f64>,
    pub history: LossHistory,
    pub last_action: Vec<f64>,
    pub harmonic_sum: f64,
}

impl ScoState {
    pub fn new(d_a: usize, d_y: usize, lambda: f64) -> Result<Self> {
        Ok(Self {
            gram: GramTracker::new(d_a, lambda)?,
            rls: RlsState::new(d_a, d_y, lambda)?,
            q_hat: DMatrix::zeros(d_y, d_a),
            history: LossHistory::default(),
            last_action: vec![0.0; d_a],
            harmonic_sum: 0.0,
        })
    }

    /// Rounds observed so far.
    pub fn rounds(&self) -> usize {
        self.history.len()
    }

    /// The optimistic objective `Σ_{s<t} ℓ_s(Q̂a) − α·max(1, t−1)·‖V^{-1/2}a‖_∞`.
    pub fn problem(&self, inst: &ScoInstance, alpha: f64) -> Result<OptimisticProblem> {
        let (da, dy) = (inst.d_a(), inst.d_y());
        let jac: Vec<f64> = (0..dy)
            .flat_map(|i| (0..da).map(move |j| (i, j)))
            .map(|ij| self.q_hat[ij])
            .collect();
        let terms = self
            .history
            .distinct()
            .map(|(z, n)| AffineTerm {
                z: z.to_vec(),
                weight: n as f64,
                jac: jac.clone(),
                offset: vec![0.0; dy],
            })
            .collect();
        let s = self.gram.inv_sqrt();
        let grads: Vec<f64> = (0..da).flat_map(|i| (0..da).map(move |j| (i, j))).map(|ij| s[ij]).collect();
        let beta = alpha * self.rounds().max(1) as f64;
        OptimisticProblem::from_parts(da, inst.loss.clone(), terms, grads, vec![0.0; da], 1, beta, inst.domain())
    }

    /// Optimistic action for the next round, warm-started at the previous one.
    pub fn act(&self, inst: &ScoInstance, alpha: f64, settings: &OptimismSettings) -> Result<Vec<f64>> {
        let prob = self.problem(inst, alpha)?;
        Ok(solve_optimistic_min(&prob, settings, &self.last_action)?.x)
    }

    /// Record `a_t`, `y_{t+1}` and the revealed loss sample.
    pub fn observe(&mut self, a: &[f64], y: &[f64], z: &[f64]) -> Result<f64> {
        let q = self.gram.update(a)?;
        self.harmonic_sum += q;
        self.rls.update(a, y)?;
        self.q_hat = self.rls.solve()?;
        self.history.push(z);
        self.last_action = a.to_vec();
        Ok(q)
    }

    /// `tr(Δ V Δᵀ)` with `Δ = Q★ − Q̂` (uses the true transform).
    pub fn confidence_width(&self, inst: &ScoInstance) -> f64 {
        let delta = &inst.q_star - &self.q_hat;
        (&delta * self.gram.matrix() * delta.transpose()).trace()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoStep {
    pub action: Vec<f64>,
    pub loss_sample: CostSample,
    pub realized_loss: f64,
    pub rho_quad: f64,
}

/// One round: choose `a_t`, draw `w̄_t` and `z̄_t`, update the state.
pub fn sco_step(
    state: &mut ScoState,
    inst: &ScoInstance,
    alpha: f64,
    settings: &OptimismSettings,
    noise_rng: &mut RngStream,
    cost_rng: &mut RngStream,
) -> Result<ScoStep> {
    let a = state.act(inst, alpha, settings)?;
    let w = inst.noise.sample(noise_rng);
    let z = inst.loss.sample(cost_rng);
    let av = DVector::from_column_slice(&a);
    let q = &inst.q_star * &av;
    let y = &q + w;
    let realized = inst.loss.value(&z.z, q.as_slice());
    let rho_quad = state.observe(&a, y.as_slice(), &z.z)?;
    Ok(ScoStep {
        action: a,
        loss_sample: z,
        realized_loss: realized,
        rho_quad,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoRun {
    pub actions: Vec<Vec<f64>>,
    pub realized_losses: Vec<f64>,
    pub harmonic_sum: f64,
    /// `max_t tr(Δ_t V_t Δ_tᵀ)` over the run.
    pub max_confidence_width: f64,
    pub alpha: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct ScoRunOutput {
    pub run: ScoRun,
    pub state: ScoState,
}

pub fn run_sco(
    inst: &ScoInstance,
    params: ScoParameters,
    horizon: usize,
    settings: &OptimismSettings,
    rng: &RngStream,
) -> Result<ScoRunOutput> {
    let mut state = ScoState::new(inst.d_a(), inst.d_y(), params.lambda)?;
    let mut noise_rng = rng.derive(SCO_NOISE_STREAM);
    let mut cost_rng = rng.derive(SCO_COST_STREAM);
    let mut run = ScoRun {
        actions: Vec::with_capacity(horizon),
        realized_losses: Vec::with_capacity(horizon),
        harmonic_sum: 0.0,
        max_confidence_width: state.confidence_width(inst),
        alpha: params.alpha,
        lambda: params.lambda,
    };
    for _ in 0..horizon {
        let step = sco_step(&mut state, inst, params.alpha, settings, &mut noise_rng, &mut cost_rng)?;
        run.actions.push(step.action);
        run.realized_losses.push(step.realized_loss);
        run.max_confidence_width = run.max_confidence_width.max(state.confidence_width(inst));
    }
    run.harmonic_sum = state.harmonic_sum;
    Ok(ScoRunOutput { run, state })
}

/// Sample-average oracle for `μ(q)` over a frozen sample of the loss randomness.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenSample {
    loss: CostFamily,
    history: LossHistory,
}

impl FrozenSample {
    pub fn draw(loss: &CostFamily, n: usize, rng: &mut RngStream) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("mc_samples", "must be ≥ 1"));
        }
        let mut history = LossHistory::default();
        for _ in 0..n {
            history.push(&loss.sample(rng).z);
        }
        Ok(Self {
            loss: loss.clone(),
            history,
        })
    }

    pub fn samples(&self) -> usize {
        self.history.len()
    }

    pub fn mean(&self, q: &[f64]) -> f64 {
        let n = self.history.len() as f64;
        self.history
            .distinct()
            .map(|(z, c)| c as f64 * self.loss.value(z, q))
            .sum::<f64>()
            / n
    }

    pub fn mean_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.history.len() as f64;
        let mut g = vec![0.0; q.len()];
        grad.fill(0.0);
        let mut total = 0.0;
        for (z, c) in self.history.distinct() {
            total += c as f64 * self.loss.value_grad(z, q, &mut g);
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += c as f64 * b / n;
            }
        }
        total / n
    }

    /// Mean and standard error of `ℓ(q; z) − ℓ(q′; z)` over the sample.
    pub fn difference(&self, q: &[f64], q2: &[f64]) -> McEstimate {
        let vals = self.history.distinct().flat_map(|(z, c)| {
            let d = self.loss.value(z, q) - self.loss.value(z, q2);
            std::iter::repeat_n(d, c)
        });
        mean_stderr(vals)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoRegret {
    pub total: f64,
    /// `μ̂(Q★a_t)` per round.
    pub per_round: Vec<f64>,
    pub comparator_value: f64,
    pub comparator: Vec<f64>,
}

/// `Σ_t μ̂(Q★a_t) − T·min_a μ̂(Q★a)` with `μ̂` a sample average over a
/// frozen sample drawn from `rng`.
pub fn sco_pseudo_regret(
    actions: &[Vec<f64>],
    inst: &ScoInstance,
    mc_samples: usize,
    rng: &RngStream,
    budget: usize,
) -> Result<PseudoRegret> {
    let sample = FrozenSample::draw(&inst.loss, mc_samples, &mut rng.derive(ORACLE_STREAM))?;
    let qs = &inst.q_star;
    let map = |a: &[f64]| -> Vec<f64> { (qs * DVector::from_column_slice(a)).as_slice().to_vec() };
    let per_round: Vec<f64> = actions.iter().map(|a| sample.mean(&map(a))).collect();

    let dy = inst.d_y();
    let mut gq = vec![0.0; dy];
    let x0 = vec![0.0; inst.d_a()];
    let sol = projected_subgradient(&inst.domain(), &x0, budget.max(1), |a, g| {
        let q = map(a);
        let v = sample.mean_grad(&q, &mut gq);
        let gv = qs.transpose() * DVector::from_column_slice(&gq);
        g.copy_from_slice(gv.as_slice());
        v
    });
    let (mut comparator, mut comparator_value) = (sol.x, sol.value);
    for (a, v) in actions.iter().zip(&per_round) {
        if *v < comparator_value {
            comparator_value = *v;
            comparator = a.clone();
        }
    }
    let total = per_round.iter().map(|v| v - comparator_value).sum();
    Ok(PseudoRegret {
        total,
        per_round,
        comparator_value,
        comparator,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichReport {
    pub confidence_holds: bool,
    pub probes: usize,
    pub lower_violations: usize,
    pub upper_violations: usize,
    /// Largest violation divided by its tolerance (≤ 1 means none).
    pub worst_ratio: f64,
}

/// Check `L̄(a) ≤ μ(Q★a) ≤ L̄(a) + 2α√(aᵀV⁻¹a)` with `L̄(a) = μ(Q̂a) − α‖V^{-1/2}a‖_∞`
/// at each probe, allowing three standard errors of Monte-Carlo slack.
pub fn sandwich_check(
    state: &ScoState,
    inst: &ScoInstance,
    alpha: f64,
    probes: &[Vec<f64>],
    mc_samples: usize,
    rng: &RngStream,
) -> Result<SandwichReport> {
    let sample = FrozenSample::draw(&inst.loss, mc_samples, &mut rng.derive(ORACLE_STREAM))?;
    let delta = &inst.q_star - &state.q_hat;
    let v_sqrt = crate::linalg::sym_sqrt(state.gram.matrix());
    let conf = (inst.d_a() as f64).sqrt() * crate::linalg::op_norm(&(&delta * v_sqrt));
    let s = state.gram.inv_sqrt();
    let mut report = SandwichReport {
        confidence_holds: conf <= alpha,
        probes: probes.len(),
        lower_violations: 0,
        upper_violations: 0,
        worst_ratio: 0.0,
    };
    for a in probes {
        check_dim("probe", inst.d_a(), a.len())?;
        let av = DVector::from_column_slice(a);
        let q_true = &inst.q_star * &av;
        let q_hat = &state.q_hat * &av;
        let bonus = alpha * (&s * &av).amax();
        let width = 2.0 * alpha * state.gram.quad_form_inv(a).sqrt();
        // μ(Q★a) − μ(Q̂a) and its standard error, from one common sample.
        let d = sample.difference(q_true.as_slice(), q_hat.as_slice());
        let tol = 3.0 * d.stderr + 1e-12;
        let lower_gap = -bonus - d.mean;
        let upper_gap = d.mean + bonus - width;
        if lower_gap > tol {
            report.lower_violations += 1;
        }
        if upper_gap > tol {
            report.upper_violations += 1;
        }
        report.worst_ratio = report.worst_ratio.max(lower_gap.max(upper_gap) / tol);
    }
    Ok(report)
}

/// `8W²d_y² ln(T/δ) + 2R_a²R_Q²`.
pub fn ridge_confidence_bound(inst: &ScoInstance, horizon: usize, delta: f64) -> f64 {
    let (w, dy) = (inst.w_bound(), inst.d_y() as f64);
    8.0 * w * w * dy * dy * (horizon as f64 / delta).ln() + 2.0 * inst.r_a * inst.r_a * inst.r_q * inst.r_q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::TargetShape;

    fn instance(kind: DecisionSetKind) -> ScoInstance {
        let loss = CostFamily::norm_target(2, TargetShape::Corners, vec![0.2, -0.1], 0.5).unwrap();
        let noise = NoiseModel::rademacher(2, 1.0).unwrap();
        let mut rng = RngStream::new(3, 0);
        ScoInstance::new(random_transform(2, 2, 1.0, &mut rng), kind, 1.0, 1.0, noise, loss).unwrap()
    }

    #[test]
    fn theory_examples() {
        let inst = instance(DecisionSetKind::Ball);
        let p = sco_theory_parameters_unchecked(&inst, 100, 0.1).unwrap();
        assert_eq!(p.lambda, 1.0);
        let expect = 2f64.sqrt() * (2.0 * (8.0 * 2000f64.ln()).sqrt() + 2f64.sqrt());
        assert!((p.alpha - expect).abs() < 1e-12);
        assert!((p.alpha - 24.06).abs() < 0.01);
        let q = sco_theory_parameters_unchecked(&inst, 100, 0.01).unwrap();
        assert!(q.alpha > p.alpha);
        assert!(sco_theory_parameters(&inst, 100, 0.1).is_err());
    }

    #[test]
    fn first_round_explores_to_an_extreme_point() {
        let inst = instance(DecisionSetKind::Box);
        let state = ScoState::new(2, 2, 1.0).unwrap();
        let a = state.act(&inst, 1.0, &OptimismSettings::default()).unwrap();
        let half = 1.0 / (2.0 * 2f64.sqrt());
        assert!(a.iter().any(|v| (v.abs() - half).abs() < 1e-9), "{a:?}");
    }

    #[test]
    fn pseudo_regret_of_the_optimum_is_zero() {
        let inst = instance(DecisionSetKind::Ball);
        let rng = RngStream::new(1, 1);
        let first = sco_pseudo_regret(&[vec![0.0, 0.0]], &inst, 1000, &rng, 4000).unwrap();
        let at_opt = vec![first.comparator.clone(); 5];
        let r = sco_pseudo_regret(&at_opt, &inst, 1000, &rng, 4000).unwrap();
        assert!(r.total.abs() < 1e-9);
    }

    #[test]
    fn exact_estimate_gives_exact_sandwich() {
        let inst = instance(DecisionSetKind::Ball);
        let mut state = ScoState::new(2, 2, 1.0).unwrap();
        state.q_hat = inst.q_star.clone();
        let probes = vec![vec![0.3, 0.1], vec![-0.2, 0.4]];
        let rep = sandwich_check(&state, &inst, 0.0, &probes, 500, &RngStream::new(0, 0)).unwrap();
        assert!(rep.confidence_holds);
        assert_eq!(rep.lower_violations + rep.upper_violations, 0);
    }

    #[test]
    fn harmonic_sum_within_bound() {
        let inst = instance(DecisionSetKind::Ball);
        let t = 200;
        let params = sco_theory_parameters_unchecked(&inst, t, 0.1).unwrap();
        let out = run_sco(&inst, params, t, &OptimismSettings::default(), &RngStream::new(4, 0)).unwrap();
        assert!(out.run.harmonic_sum <= 5.0 * 2.0 * (t as f64).ln());
    }
}
