//! Regret accounting against the best disturbance-action policy in hindsight,
//! and the explore-then-commit baseline.

use nalgebra::DVector;

use crate::controller::{
    push_traces, ControllerConfig, Identification, COST_STREAM, EXPLORE_STREAM, NOISE_STREAM,
};
use crate::costs::{CostFamily, CostSample};
use crate::dap::{regressor_dim, DapPolicy};
use crate::error::{check_dim, Error, Result};
use crate::optimism::{solve_optimistic_min, OptimisticProblem};
use crate::record::{EpochSnapshot, RunRecord, StepRow};
use crate::rng::RngStream;
use crate::solver::{projected_subgradient, Domain};
use crate::system::SystemSpec;

/// Total cost `Σ_t c_t(x_t^M, u_t^M)` of the DAP `M` (row-major flat) on the
/// recorded noises and cost samples, with its gradient in `grad`.
///
/// The state is linear in `M`, so the gradient follows from one backward
/// (adjoint) pass: `λ_t = ∂c_t/∂x_t + Aᵀλ_{t+1}`, `∂/∂u_t = ∂c_t/∂u_t + Bᵀλ_{t+1}`.
pub fn hindsight_objective(
    sys: &SystemSpec,
    costs: &CostFamily,
    h: usize,
    noises: &[DVector<f64>],
    samples: &[CostSample],
    m_flat: &[f64],
    grad: &mut [f64],
) -> f64 {
    let (dx, du) = (sys.d_x(), sys.d_u());
    let n = noises.len();
    let hd = h * dx;
    let w_at = |s: isize| -> Option<&DVector<f64>> {
        if s < 1 {
            None
        } else {
            Some(&noises[(s - 1) as usize])
        }
    };
    let mut x = DVector::zeros(dx);
    let mut total = 0.0;
    let mut p = vec![0.0; dx + du];
    let mut gp = vec![0.0; dx + du];
    let mut gx = Vec::with_capacity(n);
    let mut gu = Vec::with_capacity(n);
    for t in 1..=n {
        let mut u = DVector::zeros(du);
        for k in 1..=h {
            if let Some(w) = w_at(t as isize - k as isize) {
                for b in 0..du {
                    let row = &m_flat[b * hd + (k - 1) * dx..b * hd + k * dx];
                    u[b] += row.iter().zip(w.iter()).map(|(m, v)| m * v).sum::<f64>();
                }
            }
        }
        p[..dx].copy_from_slice(x.as_slice());
        p[dx..].copy_from_slice(u.as_slice());
        total += costs.value_grad(&samples[t - 1].z, &p, &mut gp);
        gx.push(DVector::from_column_slice(&gp[..dx]));
        gu.push(DVector::from_column_slice(&gp[dx..]));
        let x_next = &sys.a_star * &x + &sys.b_star * &u + &noises[t - 1];
        x = x_next;
    }
    grad.fill(0.0);
    let at = sys.a_star.transpose();
    let bt = sys.b_star.transpose();
    let mut lam = DVector::zeros(dx);
    for t in (1..=n).rev() {
        // lam holds λ_{t+1} here.
        let du_total = &gu[t - 1] + &bt * &lam;
        for k in 1..=h {
            if let Some(w) = w_at(t as isize - k as isize) {
                for b in 0..du {
                    let s = du_total[b];
                    if s != 0.0 {
                        let base = b * hd + (k - 1) * dx;
                        for c in 0..dx {
                            grad[base + c] += s * w[c];
                        }
                    }
                }
            }
        }
        lam = &gx[t - 1] + &at * &lam;
    }
    total
}

/// Projected subgradient minimisation of the realized total cost over
/// `‖M‖_F ≤ r_m`. Returns the best policy found and its total cost.
pub fn best_dap_in_hindsight(
    record: &RunRecord,
    sys: &SystemSpec,
    costs: &CostFamily,
    h: usize,
    r_m: f64,
    budget: usize,
) -> Result<(DapPolicy, f64)> {
    let tr = &record.traces;
    check_dim("cost trace length", tr.noises.len(), tr.costs.len())?;
    if tr.noises.is_empty() {
        return Err(Error::invalid("record", "traces are empty"));
    }
    let d = sys.d_u() * h * sys.d_x();
    let domain = Domain::ball(r_m)?;
    let sol = projected_subgradient(&domain, &vec![0.0; d], budget.max(1), |m, g| {
        hindsight_objective(sys, costs, h, &tr.noises, &tr.costs, m, g)
    });
    let policy = DapPolicy::from_flat(sys.d_u(), sys.d_x(), h, r_m, &sol.x)?;
    Ok((policy, sol.value))
}

/// Prefix sums of `cost_t − comparator_t`.
pub fn compute_regret(costs: &[f64], comparator: &[f64]) -> Result<Vec<f64>> {
    check_dim("comparator length", costs.len(), comparator.len())?;
    let mut acc = 0.0;
    Ok(costs
        .iter()
        .zip(comparator)
        .map(|(c, k)| {
            acc += c - k;
            acc
        })
        .collect())
}

/// `T^{−1/3}`: the exploration share of the classical `T^{2/3}` strategy.
pub fn default_explore_fraction(horizon: usize) -> f64 {
    (horizon as f64).powf(-1.0 / 3.0)
}

/// Random actions, uniform in the ball of radius `R_M·W·√H`, for the first
/// `⌈fraction·T⌉` steps (at least one); then a single estimate of `Ψ` and a
/// single solve of the surrogate loss over the exploration window without
/// exploration bonus, held to the end.
pub fn baseline_explore_then_commit(
    sys: &SystemSpec,
    costs: &CostFamily,
    cfg: &ControllerConfig,
    explore_fraction: f64,
    rng: &RngStream,
) -> Result<RunRecord> {
    cfg.validate()?;
    if !(explore_fraction > 0.0 && explore_fraction <= 1.0) {
        return Err(Error::invalid(
            "explore_fraction",
            format!("must lie in (0, 1], got {explore_fraction}"),
        ));
    }
    let (dx, du, h) = (sys.d_x(), sys.d_u(), cfg.h);
    let horizon = cfg.horizon;
    let explore = ((explore_fraction * horizon as f64).ceil() as usize).clamp(1, horizon);
    let mut ident = Identification::new(dx, du, h, cfg.w_bound, cfg.lambda_w, cfg.lambda_psi)?;
    let mut noise_rng = rng.derive(NOISE_STREAM);
    let mut cost_rng = rng.derive(COST_STREAM);
    let mut explore_rng = rng.derive(EXPLORE_STREAM);
    let act_radius = cfg.r_m * cfg.w_bound * (h as f64).sqrt();
    let mut rec = RunRecord {
        regressor_dim: regressor_dim(h, dx, du),
        subepochs: vec![1],
        ..RunRecord::default()
    };
    let mut policy: Option<DapPolicy> = None;
    let mut switches = 0;
    let mut x = DVector::zeros(dx);
    for t in 1..=horizon {
        let u = match &policy {
            Some(p) => ident.dap_action(p),
            None => DVector::from_vec(explore_rng.in_ball(du, act_radius)),
        };
        let w = sys.sample_noise(&mut noise_rng);
        let z = costs.sample(&mut cost_rng);
        let cost = costs.eval_xu(&z, x.as_slice(), u.as_slice())?;
        let x_next = sys.step(&x, &u, &w)?;
        let (epoch, subepoch, sw) = (1, rec.subepochs[0], switches);
        let step = ident.observe(&u, &x_next)?;
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
            logdet_v: ident.gram().logdet(),
            policy_switches: sw,
        });
        push_traces(&mut rec.traces, w, z, &x, &u);
        x = x_next;

        if t == explore {
            let psi = ident.psi_estimate()?;
            let window = ident.window(&rec.traces.costs, 1, t);
            let s = ident.gram().inv_sqrt();
            let prob = OptimisticProblem::control(&window, &psi, &s, costs, 0.0, cfg.w_bound, cfg.r_m)?;
            let sol = solve_optimistic_min(&prob, &cfg.optimism, &vec![0.0; prob.dim()])?;
            let p = sol.policy(&prob, cfg.r_m)?;
            rec.snapshots.push(EpochSnapshot {
                start: t + 1,
                psi,
                gram: ident.gram().matrix().clone(),
            });
            rec.policies.push((t + 1, p.clone()));
            rec.subepochs[0] = 2;
            switches += 1;
            policy = Some(p);
        }
    }
    rec.harmonic_sum = ident.harmonic_sum();
    Ok(rec)
}

/// Checks a controller run against the harmonic-sum, epoch-count and
/// row-ordering invariants; returns one message per violation.
pub fn run_invariant_violations(rec: &RunRecord, d_x: usize, d_u: usize, h: usize, w_bound: f64) -> Vec<String> {
    let mut out = Vec::new();
    let t = rec.horizon();
    let ln_t = (t as f64).ln();
    let p = rec.regressor_dim as f64;
    if rec.harmonic_sum > 5.0 * p * ln_t {
        out.push(format!("harmonic sum {} exceeds 5·p·ln T = {}", rec.harmonic_sum, 5.0 * p * ln_t));
    }
    let epoch_bound = 2.0 * (d_x + d_u) as f64 * h as f64 * ln_t;
    if rec.epochs() as f64 > epoch_bound {
        out.push(format!("{} epochs exceed 2(d_x+d_u)H ln T = {epoch_bound}", rec.epochs()));
    }
    for (i, n) in rec.subepochs.iter().enumerate() {
        if *n as f64 > 2.0 * ln_t {
            out.push(format!("epoch {} has {n} subepochs, above 2 ln T = {}", i + 1, 2.0 * ln_t));
        }
    }
    for (i, pair) in rec.rows.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        if b.t != a.t + 1 || (b.epoch, b.subepoch) < (a.epoch, a.subepoch) {
            out.push(format!("row order broken after row {}", i + 1));
            break;
        }
    }
    if rec.rows.iter().any(|r| !(r.noise_err <= 2.0 * w_bound + 1e-9)) {
        out.push("disturbance estimate left the noise ball".into());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::TargetShape;
    use crate::system::NoiseModel;
    use nalgebra::DMatrix;

    fn scalar_system(a: f64, b: f64) -> SystemSpec {
        SystemSpec::from_parts(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            1.0,
            1.0 - a.abs().max(1e-3),
            b.abs().max(1.0),
            NoiseModel::rademacher(1, 1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn regret_examples() {
        assert_eq!(compute_regret(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(compute_regret(&[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(compute_regret(&[1.0], &[]).is_err());
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences() {
        let sys = scalar_system(0.5, 0.8);
        let costs = CostFamily::new(
            crate::costs::CostKind::HuberQuadratic,
            2,
            TargetShape::UniformBall,
            vec![0.2, 0.0],
            0.5,
            1.0,
        )
        .unwrap();
        let mut rng = RngStream::new(2, 2);
        let noises: Vec<_> = (0..40).map(|_| sys.sample_noise(&mut rng)).collect();
        let samples: Vec<_> = (0..40).map(|_| costs.sample(&mut rng)).collect();
        let m = [0.3, -0.2, 0.1];
        let mut g = [0.0; 3];
        hindsight_objective(&sys, &costs, 3, &noises, &samples, &m, &mut g);
        for i in 0..3 {
            let mut mp = m;
            let mut mm = m;
            mp[i] += 1e-6;
            mm[i] -= 1e-6;
            let mut scratch = [0.0; 3];
            let fd = (hindsight_objective(&sys, &costs, 3, &noises, &samples, &mp, &mut scratch)
                - hindsight_objective(&sys, &costs, 3, &noises, &samples, &mm, &mut scratch))
                / 2e-6;
            assert!((fd - g[i]).abs() < 1e-5 * g[i].abs().max(1.0), "{fd} vs {}", g[i]);
        }
    }
}
