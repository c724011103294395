//! Optimistic cost minimisation.
//!
//! The objective `F(x) = Σ_s w_s c(J_s x + b_s; z_s) − β‖E(x)‖_∞` is a convex
//! cost minus the sup-norm of an affine vector map `E(x) = Gx + c`. Writing
//! `‖E‖_∞ = max_{χ,k} χ E_k` splits the minimisation into `2m` convex
//! subproblems `f(x) − βχE_k(x)`, each solved by projected subgradient
//! descent; every candidate is then re-scored under the exact `F`.
//!
//! Control problems use `x = vec(M)` (row-major) with `E(M) = V^{-1/2}P(M)`;
//! the hidden-transform problem uses `x = a` with `E(a) = V^{-1/2}a`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::{CostFamily, CostSample};
use crate::dap::{regressor_dim, DapPolicy, UnrolledModel};
use crate::error::{check_dim, Error, Result};
use crate::solver::{projected_subgradient, subgradient_lower_bound, Domain};

/// One summand `weight · c(J x + offset; z)` with `J` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTerm {
    pub z: Vec<f64>,
    pub weight: f64,
    pub jac: Vec<f64>,
    pub offset: Vec<f64>,
}

/// A cost sample together with the estimated noises `[ŵ_{s−2H}, …, ŵ_{s−1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub cost: CostSample,
    pub noises: Vec<DVector<f64>>,
}

/// Shape of a control problem, needed to turn solutions back into policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyShape {
    pub d_x: usize,
    pub d_u: usize,
    pub h: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimisticProblem {
    dim: usize,
    cost: CostFamily,
    terms: Vec<AffineTerm>,
    /// `m × dim`, row-major.
    entry_grads: Vec<f64>,
    entry_offsets: Vec<f64>,
    entry_cols: usize,
    beta: f64,
    domain: Domain,
    shape: Option<PolicyShape>,
}

/// `(χ, k)`; ordered with `χ = −1` first, then by `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubproblemIndex {
    pub chi: i8,
    pub k: usize,
}

impl SubproblemIndex {
    pub fn new(chi: i8, k: usize) -> Result<Self> {
        if chi != 1 && chi != -1 {
            return Err(Error::invalid("chi", format!("must be ±1, got {chi}")));
        }
        Ok(Self { chi, k })
    }

    fn sign(self) -> f64 {
        f64::from(self.chi)
    }
}

impl OptimisticProblem {
    /// General constructor. `entry_grads` is `m × dim` row-major; `entry_cols`
    /// is the column count used to report `k` as `(row, col)`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        dim: usize,
        cost: CostFamily,
        terms: Vec<AffineTerm>,
        entry_grads: Vec<f64>,
        entry_offsets: Vec<f64>,
        entry_cols: usize,
        beta: f64,
        domain: Domain,
    ) -> Result<Self> {
        let m = entry_offsets.len();
        check_dim("entry gradients", m * dim, entry_grads.len())?;
        if entry_cols == 0 || m % entry_cols != 0 {
            return Err(Error::invalid("entry_cols", format!("{entry_cols} does not divide {m}")));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::invalid("beta", format!("must be ≥ 0, got {beta}")));
        }
        if let Domain::Box { lo, hi } = &domain {
            check_dim("box lower corner", dim, lo.len())?;
            check_dim("box upper corner", dim, hi.len())?;
        }
        for t in &terms {
            check_dim("cost sample", cost.dim, t.z.len())?;
            check_dim("term offset", cost.dim, t.offset.len())?;
            check_dim("term Jacobian", cost.dim * dim, t.jac.len())?;
        }
        Ok(Self {
            dim,
            cost,
            terms,
            entry_grads,
            entry_offsets,
            entry_cols,
            beta,
            domain,
            shape: None,
        })
    }

    /// Control objective over the window `[τ_{i,j−1}, τ_{i,j}−1]`:
    /// `Σ_s c_s(x_s(M; Ψ, ŵ), u_s(M; ŵ)) − αW·max(1, L)·‖V^{-1/2}P(M)‖_∞`
    /// with `L` the window length.
    #[allow(clippy::too_many_arguments)]
    pub fn control(
        window: &[WindowSample],
        psi: &UnrolledModel,
        inv_sqrt_v: &DMatrix<f64>,
        cost: &CostFamily,
        alpha: f64,
        w_bound: f64,
        radius: f64,
    ) -> Result<Self> {
        let (dx, du, h) = (psi.d_x(), psi.d_u, psi.h);
        let p = regressor_dim(h, dx, du);
        check_dim("Ψ columns", p, psi.psi.ncols())?;
        check_dim("V^{-1/2} rows", p, inv_sqrt_v.nrows())?;
        check_dim("V^{-1/2} columns", p, inv_sqrt_v.ncols())?;
        check_dim("cost dimension (d_x + d_u)", dx + du, cost.dim)?;
        if !(alpha >= 0.0 && w_bound > 0.0) {
            return Err(Error::invalid("alpha", "α ≥ 0 and W > 0 required"));
        }
        let terms = window
            .iter()
            .map(|s| control_term(s, psi))
            .collect::<Result<Vec<_>>>()?;
        let (grads, offsets, cols) = bonus_entries(inv_sqrt_v, dx, du, h);
        let beta = alpha * w_bound * (window.len().max(1) as f64);
        let mut prob = Self::from_parts(
            du * h * dx,
            cost.clone(),
            terms,
            grads,
            offsets,
            cols,
            beta,
            Domain::ball(radius)?,
        )?;
        prob.shape = Some(PolicyShape { d_x: dx, d_u: du, h });
        Ok(prob)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_entries(&self) -> usize {
        self.entry_offsets.len()
    }

    pub fn num_subproblems(&self) -> usize {
        2 * self.num_entries()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn window_len(&self) -> usize {
        self.terms.len()
    }

    pub fn shape(&self) -> Option<PolicyShape> {
        self.shape
    }

    pub fn terms(&self) -> &[AffineTerm] {
        &self.terms
    }

    /// Copy with a different exploration weight `β`.
    pub fn with_beta(&self, beta: f64) -> Self {
        Self {
            beta,
            ..self.clone()
        }
    }

    /// `k ↦ (row, col)` of the bonus matrix.
    pub fn entry_position(&self, k: usize) -> (usize, usize) {
        (k / self.entry_cols, k % self.entry_cols)
    }

    fn entry_grad(&self, k: usize) -> &[f64] {
        &self.entry_grads[k * self.dim..(k + 1) * self.dim]
    }

    /// `E_k(x)`.
    pub fn entry(&self, k: usize, x: &[f64]) -> f64 {
        crate::linalg::dot(self.entry_grad(k), x) + self.entry_offsets[k]
    }

    pub fn entries_sup_norm(&self, x: &[f64]) -> f64 {
        (0..self.num_entries())
            .map(|k| self.entry(k, x).abs())
            .fold(0.0, f64::max)
    }

    /// Convex cost part `f(x)`; its subgradient is written into `grad`.
    pub fn cost_value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let q = self.cost.dim;
        let d = self.dim;
        let mut pt = vec![0.0; q];
        let mut gp = vec![0.0; q];
        grad.fill(0.0);
        let mut total = 0.0;
        for t in &self.terms {
            for a in 0..q {
                let row = &t.jac[a * d..(a + 1) * d];
                pt[a] = t.offset[a] + row.iter().zip(x).map(|(j, v)| j * v).sum::<f64>();
            }
            total += t.weight * self.cost.value_grad(&t.z, &pt, &mut gp);
            for a in 0..q {
                let s = t.weight * gp[a];
                if s != 0.0 {
                    let row = &t.jac[a * d..(a + 1) * d];
                    for (gi, j) in grad.iter_mut().zip(row) {
                        *gi += s * j;
                    }
                }
            }
        }
        total
    }

    pub fn cost_value(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim];
        self.cost_value_grad(x, &mut g)
    }

    /// The exact nonconvex objective `f(x) − β‖E(x)‖_∞`.
    pub fn full_objective(&self, x: &[f64]) -> f64 {
        self.cost_value(x) - self.beta * self.entries_sup_norm(x)
    }

    fn check_point(&self, x: &[f64], idx: Option<SubproblemIndex>) -> Result<()> {
        check_dim("decision variable", self.dim, x.len())?;
        if let Some(idx) = idx {
            if idx.k >= self.num_entries() {
                return Err(Error::invalid(
                    "k",
                    format!("entry {} out of range 0..{}", idx.k, self.num_entries()),
                ));
            }
        }
        Ok(())
    }

    fn subproblem_value_grad(&self, idx: SubproblemIndex, x: &[f64], grad: &mut [f64]) -> f64 {
        let f = self.cost_value_grad(x, grad);
        let s = self.beta * idx.sign();
        for (gi, e) in grad.iter_mut().zip(self.entry_grad(idx.k)) {
            *gi -= s * e;
        }
        f - s * self.entry(idx.k, x)
    }
}

/// `f(x) − βχE_k(x)`.
pub fn fixed_entry_objective(p: &OptimisticProblem, idx: SubproblemIndex, x: &[f64]) -> Result<f64> {
    p.check_point(x, Some(idx))?;
    let mut g = vec![0.0; p.dim];
    Ok(p.subproblem_value_grad(idx, x, &mut g))
}

pub fn fixed_entry_subgradient(
    p: &OptimisticProblem,
    idx: SubproblemIndex,
    x: &[f64],
) -> Result<Vec<f64>> {
    p.check_point(x, Some(idx))?;
    let mut g = vec![0.0; p.dim];
    p.subproblem_value_grad(idx, x, &mut g);
    Ok(g)
}

/// Solve one `(χ, k)` subproblem from `x0`. Returns the point and its
/// subproblem objective value.
pub fn solve_subproblem(
    p: &OptimisticProblem,
    idx: SubproblemIndex,
    budget: usize,
    x0: &[f64],
) -> Result<(Vec<f64>, f64)> {
    if budget == 0 {
        return Err(Error::invalid("budget", "must be ≥ 1"));
    }
    p.check_point(x0, Some(idx))?;
    let r = projected_subgradient(&p.domain, x0, budget, |x, g| p.subproblem_value_grad(idx, x, g));
    Ok((r.x, r.value))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimismSettings {
    /// Minimum number of subgradient steps per subproblem.
    pub budget: usize,
    /// Steps per window sample; the actual budget is `max(budget, window_factor·L)`.
    pub window_factor: usize,
    /// Skip subproblems whose certified lower bound exceeds the incumbent.
    pub prune: bool,
    /// Number of subproblems solved concurrently.
    pub parallel_width: usize,
}

impl Default for OptimismSettings {
    fn default() -> Self {
        Self {
            budget: 2000,
            window_factor: 4,
            prune: true,
            parallel_width: 1,
        }
    }
}

impl OptimismSettings {
    pub fn budget_for(&self, window_len: usize) -> usize {
        self.budget.max(self.window_factor.saturating_mul(window_len)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::invalid("budget", "must be ≥ 1"));
        }
        if self.parallel_width == 0 {
            return Err(Error::invalid("parallel_width", "must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SubproblemStatus {
    Solved,
    /// The entry does not depend on `x`; answered by the shared convex solve.
    Constant,
    Pruned,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubproblemDiagnostic {
    pub chi: i8,
    pub k: usize,
    pub status: SubproblemStatus,
    pub lower_bound: f64,
    /// Subproblem objective at the returned point (NaN when pruned).
    pub value: f64,
    /// Full objective at the returned point (NaN when pruned).
    pub full_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimisticSolution {
    pub x: Vec<f64>,
    /// Exact objective `f(x) − β‖E(x)‖_∞` at `x`.
    pub value: f64,
    /// Winning subproblem; `None` when the shared convex solve won outright.
    pub winner: Option<SubproblemIndex>,
    pub solved: usize,
    pub diagnostics: Vec<SubproblemDiagnostic>,
}

impl OptimisticSolution {
    pub fn policy(&self, p: &OptimisticProblem, radius: f64) -> Result<DapPolicy> {
        let s = p
            .shape
            .ok_or_else(|| Error::invalid("problem", "not a control problem"))?;
        DapPolicy::from_flat(s.d_u, s.d_x, s.h, radius, &self.x)
    }
}

struct Candidate {
    order: (u8, usize),
    x: Vec<f64>,
    value: f64,
}

/// Minimise the full optimistic objective by enumerating the `2m` subproblems,
/// warm-started at `x0`. Candidates are compared by their exact objective;
/// ties go to the smallest `(χ, k)`.
pub fn solve_optimistic_min(
    p: &OptimisticProblem,
    settings: &OptimismSettings,
    x0: &[f64],
) -> Result<OptimisticSolution> {
    settings.validate()?;
    p.check_point(x0, None)?;
    let budget = settings.budget_for(p.window_len());
    let m = p.num_entries();

    // Shared convex solve of f alone: answers constant entries and gives a
    // certified lower bound on min f for pruning.
    let base = projected_subgradient(&p.domain, x0, budget, |x, g| p.cost_value_grad(x, g));
    let mut g_base = vec![0.0; p.dim];
    let f_base = p.cost_value_grad(&base.x, &mut g_base);
    let f_lb = subgradient_lower_bound(&p.domain, &base.x, f_base, &g_base);
    let base_full = f_base - p.beta * p.entries_sup_norm(&base.x);

    let mut diagnostics = Vec::with_capacity(2 * m);
    let mut candidates = Vec::new();
    let mut pending: Vec<(f64, SubproblemIndex)> = Vec::new();
    let mut first_constant: Option<SubproblemIndex> = None;
    for chi in [-1i8, 1] {
        for k in 0..m {
            let idx = SubproblemIndex { chi, k };
            let grad = p.entry_grad(k);
            let shift = p.beta * idx.sign() * p.entry_offsets[k];
            if p.beta == 0.0 || grad.iter().all(|&v| v == 0.0) {
                if first_constant.is_none() {
                    first_constant = Some(idx);
                }
                diagnostics.push(SubproblemDiagnostic {
                    chi,
                    k,
                    status: SubproblemStatus::Constant,
                    lower_bound: f_lb - shift,
                    value: f_base - shift,
                    full_value: base_full,
                });
            } else {
                let signed: Vec<f64> = grad.iter().map(|v| v * idx.sign()).collect();
                let lb = f_lb - p.beta * p.domain.support(&signed) - shift;
                pending.push((lb, idx));
            }
        }
    }
    candidates.push(Candidate {
        order: first_constant.map_or((2, 0), order_key),
        x: base.x.clone(),
        value: base_full,
    });
    let mut best = base_full;
    pending.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut solved = 0;
    let width = settings.parallel_width.max(1);
    let mut cursor = 0;
    while cursor < pending.len() {
        if settings.prune && pending[cursor].0 > best {
            for &(lb, idx) in &pending[cursor..] {
                diagnostics.push(SubproblemDiagnostic {
                    chi: idx.chi,
                    k: idx.k,
                    status: SubproblemStatus::Pruned,
                    lower_bound: lb,
                    value: f64::NAN,
                    full_value: f64::NAN,
                });
            }
            break;
        }
        let end = (cursor + width).min(pending.len());
        let batch: Vec<(f64, SubproblemIndex)> = pending[cursor..end]
            .iter()
            .copied()
            .filter(|(lb, _)| !(settings.prune && *lb > best))
            .collect();
        let solve = |&(lb, idx): &(f64, SubproblemIndex)| {
            let r = projected_subgradient(&p.domain, x0, budget, |x, g| p.subproblem_value_grad(idx, x, g));
            let full = p.full_objective(&r.x);
            (lb, idx, r.x, r.value, full)
        };
        let results: Vec<_> = if width > 1 {
            batch.par_iter().map(solve).collect()
        } else {
            batch.iter().map(solve).collect()
        };
        for (lb, idx, x, value, full) in results {
            solved += 1;
            diagnostics.push(SubproblemDiagnostic {
                chi: idx.chi,
                k: idx.k,
                status: SubproblemStatus::Solved,
                lower_bound: lb,
                value,
                full_value: full,
            });
            best = best.min(full);
            candidates.push(Candidate {
                order: order_key(idx),
                x,
                value: full,
            });
        }
        cursor = end;
    }
    diagnostics.sort_by_key(|d| (d.chi, d.k));

    let win = candidates
        .into_iter()
        .min_by(|a, b| a.value.total_cmp(&b.value).then(a.order.cmp(&b.order)))
        .expect("base candidate always present");
    let winner = match win.order {
        (2, _) => None,
        (c, k) => Some(SubproblemIndex {
            chi: if c == 0 { -1 } else { 1 },
            k,
        }),
    };
    Ok(OptimisticSolution {
        x: win.x,
        value: win.value,
        winner,
        solved,
        diagnostics,
    })
}

fn order_key(idx: SubproblemIndex) -> (u8, usize) {
    (u8::from(idx.chi > 0), idx.k)
}

/// Affine map `vec(M) ↦ (x_s(M; Ψ, ŵ), u_s(M; ŵ))` for one window sample.
fn control_term(sample: &WindowSample, psi: &UnrolledModel) -> Result<AffineTerm> {
    let (dx, du, h) = (psi.d_x(), psi.d_u, psi.h);
    check_dim("noise window length", 2 * h, sample.noises.len())?;
    for w in &sample.noises {
        check_dim("noise vector", dx, w.len())?;
    }
    let w = &sample.noises;
    let d = du * h * dx;
    let q = dx + du;
    let mut jac = vec![0.0; q * d];
    let mut offset = vec![0.0; q];
    // x_s = Σ_i Ψ_u^(i) M ω_{s−1−H+i} + Σ_{i<H} Ψ_w^(i) ŵ_{s−1−H+i} + ŵ_{s−1},
    // with ω_r = (ŵ_{r−1}, …, ŵ_{r−H}); window index of ŵ_{s−1−H+i−k} is H−1+i−k.
    for i in 1..=h {
        let pu = psi.psi.columns((i - 1) * du, du);
        for k in 1..=h {
            let wv = &w[h - 1 + i - k];
            for a in 0..dx {
                for b in 0..du {
                    let coef = pu[(a, b)];
                    if coef == 0.0 {
                        continue;
                    }
                    let base = a * d + b * h * dx + (k - 1) * dx;
                    for c in 0..dx {
                        jac[base + c] += coef * wv[c];
                    }
                }
            }
        }
    }
    for i in 1..h {
        let pw = psi.psi.columns(h * du + (i - 1) * dx, dx);
        let v = pw * &w[h - 1 + i];
        for a in 0..dx {
            offset[a] += v[a];
        }
    }
    for a in 0..dx {
        offset[a] += w[2 * h - 1][a];
    }
    // u_s = M ω_s, window index of ŵ_{s−k} is 2H−k.
    for b in 0..du {
        for k in 1..=h {
            let wv = &w[2 * h - k];
            let base = (dx + b) * d + b * h * dx + (k - 1) * dx;
            for c in 0..dx {
                jac[base + c] = wv[c];
            }
        }
    }
    Ok(AffineTerm {
        z: sample.cost.z.clone(),
        weight: 1.0,
        jac,
        offset,
    })
}

/// Gradients and offsets of `M ↦ (S P(M))_{r,c}` for every entry, where `S`
/// is `p × p`. Returns `(grads m×D row-major, offsets, columns of S P(M))`.
fn bonus_entries(s: &DMatrix<f64>, dx: usize, du: usize, h: usize) -> (Vec<f64>, Vec<f64>, usize) {
    let p = regressor_dim(h, dx, du);
    let cols = (2 * h - 1) * dx;
    let d = du * h * dx;
    let m = p * cols;
    let mut grads = vec![0.0; m * d];
    let mut offsets = vec![0.0; m];
    for r in 0..p {
        for cb in 0..2 * h - 1 {
            for j in 0..dx {
                let k = r * cols + cb * dx + j;
                let g = &mut grads[k * d..(k + 1) * d];
                // P[rb·d_u + i, cb·d_x + j] = M^[rb+H−cb][i, j]
                for hh in 1..=h {
                    let rb = cb as isize - h as isize + hh as isize;
                    if rb < 0 || rb >= h as isize {
                        continue;
                    }
                    let rb = rb as usize;
                    for i in 0..du {
                        g[i * h * dx + (hh - 1) * dx + j] += s[(r, rb * du + i)];
                    }
                }
                if cb >= h {
                    offsets[k] = s[(r, h * du + (cb - h) * dx + j)];
                }
            }
        }
    }
    (grads, offsets, cols)
}

/// Largest entry of `|V^{-1/2} P(M)|`, computed by materialising `P(M)`.
pub fn bonus_sup_norm(inv_sqrt_v: &DMatrix<f64>, policy: &DapPolicy) -> f64 {
    (inv_sqrt_v * policy.p_matrix()).amax()
}

/// Unweighted empirical surrogate loss `Σ_s c_s(x_s(M; Ψ, ŵ), u_s(M; ŵ))`,
/// evaluated directly through the policy maps.
pub fn surrogate_loss(
    window: &[WindowSample],
    psi: &UnrolledModel,
    cost: &CostFamily,
    policy: &DapPolicy,
) -> Result<f64> {
    let h = policy.memory();
    let mut total = 0.0;
    for s in window {
        let x = policy.surrogate_state(psi, &s.noises)?;
        let u = policy.action(&s.noises[h..])?;
        total += cost.eval_xu(&s.cost, x.as_slice(), u.as_slice())?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::{CostKind, TargetShape};
    use crate::linalg::norm;
    use crate::rng::RngStream;

    fn random_control_problem(seed: u64, dx: usize, du: usize, h: usize, len: usize, alpha: f64) -> (OptimisticProblem, Vec<WindowSample>, UnrolledModel, DMatrix<f64>) {
        let mut rng = RngStream::new(seed, 0);
        let p = regressor_dim(h, dx, du);
        let psi = UnrolledModel {
            psi: DMatrix::from_fn(dx, p, |_, _| 0.5 * rng.normal()),
            h,
            d_u: du,
        };
        let a = DMatrix::from_fn(p, p, |_, _| rng.normal());
        let v = DMatrix::identity(p, p) + &a * a.transpose();
        let s = crate::linalg::sym_inv_sqrt(&v, 1e-12);
        let cost = CostFamily::norm_target(dx + du, TargetShape::UniformBall, vec![0.0; dx + du], 0.5).unwrap();
        let window: Vec<WindowSample> = (0..len)
            .map(|_| WindowSample {
                cost: cost.sample(&mut rng),
                noises: (0..2 * h)
                    .map(|_| DVector::from_iterator(dx, (0..dx).map(|_| rng.uniform_in(-1.0, 1.0))))
                    .collect(),
            })
            .collect();
        let prob = OptimisticProblem::control(&window, &psi, &s, &cost, alpha, 1.0, 1.0).unwrap();
        (prob, window, psi, s)
    }

    #[test]
    fn affine_maps_match_policy_maps() {
        for (dx, du, h) in [(1, 1, 1), (1, 1, 2), (2, 1, 3), (2, 3, 2)] {
            let (prob, window, psi, s) = random_control_problem(7, dx, du, h, 5, 0.3);
            let mut rng = RngStream::new(99, 1);
            let mut flat: Vec<f64> = (0..du * h * dx).map(|_| rng.normal()).collect();
            let n = norm(&flat);
            flat.iter_mut().for_each(|v| *v *= 0.9 / n);
            let policy = DapPolicy::from_flat(du, dx, h, 1.0, &flat).unwrap();
            let cost = CostFamily::norm_target(dx + du, TargetShape::UniformBall, vec![0.0; dx + du], 0.5).unwrap();
            let direct = surrogate_loss(&window, &psi, &cost, &policy).unwrap();
            assert!((prob.cost_value(&flat) - direct).abs() < 1e-12);
            let sp = &s * policy.p_matrix();
            for k in 0..prob.num_entries() {
                let (r, c) = prob.entry_position(k);
                assert!((prob.entry(k, &flat) - sp[(r, c)]).abs() < 1e-12);
            }
            let full = direct - prob.beta() * bonus_sup_norm(&s, &policy);
            assert!((prob.full_objective(&flat) - full).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_zero_is_plain_surrogate() {
        let (prob, ..) = random_control_problem(3, 1, 1, 2, 4, 0.0);
        let x = [0.3, -0.2];
        let idx = SubproblemIndex::new(1, 2).unwrap();
        assert_eq!(fixed_entry_objective(&prob, idx, &x).unwrap(), prob.cost_value(&x));
    }

    #[test]
    fn constant_entry_has_no_gradient() {
        // V = I makes identity-block entries of P(M) independent of M.
        let h = 2;
        let psi = UnrolledModel::zeros(1, 1, h);
        let cost = CostFamily::norm_target(2, TargetShape::Corners, vec![0.0; 2], 0.0).unwrap();
        let s = DMatrix::identity(3, 3);
        let prob = OptimisticProblem::control(&[], &psi, &s, &cost, 2.0, 1.0, 1.0).unwrap();
        // entry (2, 2) is the identity block
        let k = 2 * 3 + 2;
        let idx = SubproblemIndex::new(1, k).unwrap();
        for x in [[0.0, 0.0], [0.5, -0.5]] {
            assert_eq!(fixed_entry_objective(&prob, idx, &x).unwrap(), -2.0);
            assert_eq!(fixed_entry_subgradient(&prob, idx, &x).unwrap(), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn linear_cost_alpha_zero_gradient_is_constant() {
        let psi = UnrolledModel::zeros(1, 1, 2);
        let cost = CostFamily::new(CostKind::RandomLinear, 2, TargetShape::Corners, vec![0.3, 0.4], 0.2, 1.0).unwrap();
        let mut rng = RngStream::new(1, 1);
        let window: Vec<_> = (0..3)
            .map(|_| WindowSample {
                cost: cost.sample(&mut rng),
                noises: (0..4).map(|_| DVector::from_element(1, rng.uniform_in(-1.0, 1.0))).collect(),
            })
            .collect();
        let prob = OptimisticProblem::control(&window, &psi, &DMatrix::identity(3, 3), &cost, 0.0, 1.0, 1.0).unwrap();
        let idx = SubproblemIndex::new(-1, 0).unwrap();
        let g1 = fixed_entry_subgradient(&prob, idx, &[0.0, 0.0]).unwrap();
        let g2 = fixed_entry_subgradient(&prob, idx, &[0.7, -0.1]).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn subgradient_matches_finite_differences() {
        let (prob, ..) = random_control_problem(11, 2, 1, 2, 6, 0.4);
        let mut rng = RngStream::new(5, 5);
        for trial in 0..10 {
            let x: Vec<f64> = (0..prob.dim()).map(|_| 0.3 * rng.normal()).collect();
            let idx = SubproblemIndex::new(if trial % 2 == 0 { 1 } else { -1 }, (trial * 7) % prob.num_entries()).unwrap();
            let g = fixed_entry_subgradient(&prob, idx, &x).unwrap();
            for i in 0..prob.dim() {
                let hstep = 1e-6;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += hstep;
                xm[i] -= hstep;
                let fd = (fixed_entry_objective(&prob, idx, &xp).unwrap()
                    - fixed_entry_objective(&prob, idx, &xm).unwrap())
                    / (2.0 * hstep);
                assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0), "{fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn scalar_hidden_transform_example() {
        // Huber with knee 1 and weight 2 is q² on [−1, 1]; objective a² − |a|.
        let cost = CostFamily::new(CostKind::HuberQuadratic, 1, TargetShape::Corners, vec![0.0], 0.0, 1.0).unwrap();
        let term = AffineTerm {
            z: vec![0.0],
            weight: 2.0,
            jac: vec![1.0],
            offset: vec![0.0],
        };
        let prob = OptimisticProblem::from_parts(
            1,
            cost,
            vec![term],
            vec![1.0],
            vec![0.0],
            1,
            1.0,
            Domain::cube(1, 1.0).unwrap(),
        )
        .unwrap();
        let sol = solve_optimistic_min(&prob, &OptimismSettings::default(), &[0.0]).unwrap();
        assert!((sol.value + 0.25).abs() < 1e-6, "{}", sol.value);
        assert!((sol.x[0].abs() - 0.5).abs() < 1e-3);
    }

    #[test]
    fn alpha_zero_returns_convex_minimum() {
        let (prob, ..) = random_control_problem(21, 1, 1, 2, 8, 0.0);
        let sol = solve_optimistic_min(&prob, &OptimismSettings::default(), &[0.0, 0.0]).unwrap();
        assert_eq!(sol.solved, 0);
        let base = projected_subgradient(prob.domain(), &[0.0, 0.0], 2000, |x, g| prob.cost_value_grad(x, g));
        assert_eq!(sol.value, base.value);
    }

    #[test]
    fn pruning_preserves_the_answer() {
        for seed in 0..5 {
            let (prob, ..) = random_control_problem(seed, 1, 1, 2, 6, 0.2);
            let on = OptimismSettings::default();
            let off = OptimismSettings { prune: false, ..on.clone() };
            let a = solve_optimistic_min(&prob, &on, &[0.0, 0.0]).unwrap();
            let b = solve_optimistic_min(&prob, &off, &[0.0, 0.0]).unwrap();
            assert_eq!(a.value, b.value);
            assert_eq!(a.x, b.x);
            let wide = OptimismSettings { parallel_width: 3, ..on.clone() };
            let c = solve_optimistic_min(&prob, &wide, &[0.0, 0.0]).unwrap();
            assert_eq!(a.x, c.x);
        }
    }
}
