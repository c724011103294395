//! Projected subgradient descent over simple convex domains.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

/// Feasible set of a first-order solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    /// Euclidean (Frobenius) ball `‖x‖ ≤ radius` centred at the origin.
    Ball { radius: f64 },
    /// Axis-aligned box `lo ≤ x ≤ hi`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Domain {
    pub fn ball(radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::invalid("radius", format!("must be ≥ 0, got {radius}")));
        }
        Ok(Domain::Ball { radius })
    }

    pub fn cube(dim: usize, half_width: f64) -> Result<Self> {
        if !(half_width >= 0.0 && half_width.is_finite()) {
            return Err(Error::invalid("half_width", format!("must be ≥ 0, got {half_width}")));
        }
        Ok(Domain::Box {
            lo: vec![-half_width; dim],
            hi: vec![half_width; dim],
        })
    }

    pub fn project(&self, x: &mut [f64]) {
        match self {
            Domain::Ball { radius } => {
                let n = norm(x);
                if n > *radius {
                    let s = radius / n;
                    x.iter_mut().for_each(|v| *v *= s);
                }
            }
            Domain::Box { lo, hi } => {
                for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
                    *v = v.clamp(*l, *h);
                }
            }
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self {
            Domain::Ball { radius } => norm(x) <= radius + tol,
            Domain::Box { lo, hi } => x
                .iter()
                .zip(lo)
                .zip(hi)
                .all(|((v, l), h)| *v >= l - tol && *v <= h + tol),
        }
    }

    /// Support function `max_{x ∈ D} ⟨v, x⟩`.
    pub fn support(&self, v: &[f64]) -> f64 {
        match self {
            Domain::Ball { radius } => radius * norm(v),
            Domain::Box { lo, hi } => v
                .iter()
                .zip(lo)
                .zip(hi)
                .map(|((g, l), h)| (g * l).max(g * h))
                .sum(),
        }
    }

    /// Half the diameter: the natural step scale.
    pub fn half_diameter(&self) -> f64 {
        match self {
            Domain::Ball { radius } => *radius,
            Domain::Box { lo, hi } => {
                0.5 * lo
                    .iter()
                    .zip(hi)
                    .map(|(l, h)| (h - l) * (h - l))
                    .sum::<f64>()
                    .sqrt()
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.half_diameter()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub x: Vec<f64>,
    pub value: f64,
    /// Norm of the subgradient returned by the oracle at `x`.
    pub grad_norm: f64,
    pub evaluations: usize,
}

/// Number of radius-halving restarts after the main phase.
pub const POLISH_PHASES: usize = 4;

/// Minimise a convex function given by a value/subgradient oracle over `domain`.
///
/// The main phase spends half the budget with step `r/(G_t √n)` (with `G_t` the
/// running maximum subgradient norm) starting from `x0`; the remaining budget
/// is split over restarts from the incumbent with the radius halved each time.
/// The returned point is the best of all evaluated iterates and phase averages.
pub fn projected_subgradient<F>(domain: &Domain, x0: &[f64], budget: usize, mut oracle: F) -> SolveResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let d = x0.len();
    let mut x = x0.to_vec();
    domain.project(&mut x);
    let mut g = vec![0.0; d];
    let mut evaluations = 1;
    let f0 = oracle(&x, &mut g);
    let mut best = Incumbent {
        x: x.clone(),
        value: f0,
        grad_norm: norm(&g),
        grad: g.clone(),
    };
    if budget <= 1 || d == 0 {
        return best.finish(evaluations);
    }

    let main = if budget >= 8 { budget / 2 } else { budget - 1 };
    let rest = budget - 1 - main.min(budget - 1);
    let polish = if rest >= POLISH_PHASES { POLISH_PHASES } else { 0 };
    let mut phases = vec![(domain.half_diameter(), main)];
    for k in 1..=polish {
        let len = rest / polish + usize::from(k <= rest % polish);
        phases.push((domain.half_diameter() / f64::from(1u32 << k), len));
    }

    let mut avg = vec![0.0; d];
    for (radius, len) in phases {
        if len == 0 || best.grad_norm == 0.0 {
            continue;
        }
        x.copy_from_slice(&best.x);
        g.copy_from_slice(&best.grad);
        let mut g_max = best.grad_norm;
        let sqrt_n = (len as f64).sqrt();
        avg.fill(0.0);
        let mut count = 0usize;
        for _ in 0..len {
            let gn = norm(&g);
            if gn == 0.0 {
                break;
            }
            g_max = g_max.max(gn);
            let eta = radius / (g_max * sqrt_n);
            for (xi, gi) in x.iter_mut().zip(&g) {
                *xi -= eta * gi;
            }
            domain.project(&mut x);
            let f = oracle(&x, &mut g);
            evaluations += 1;
            count += 1;
            for (a, xi) in avg.iter_mut().zip(&x) {
                *a += (xi - *a) / count as f64;
            }
            best.offer(&x, f, &g);
        }
        if count > 1 {
            domain.project(&mut avg);
            let f = oracle(&avg, &mut g);
            evaluations += 1;
            best.offer(&avg, f, &g);
        }
    }
    best.finish(evaluations)
}

struct Incumbent {
    x: Vec<f64>,
    value: f64,
    grad_norm: f64,
    grad: Vec<f64>,
}

impl Incumbent {
    fn offer(&mut self, x: &[f64], f: f64, g: &[f64]) {
        if f < self.value {
            self.x.copy_from_slice(x);
            self.value = f;
            self.grad.copy_from_slice(g);
            self.grad_norm = norm(g);
        }
    }

    fn finish(self, evaluations: usize) -> SolveResult {
        SolveResult {
            x: self.x,
            value: self.value,
            grad_norm: self.grad_norm,
            evaluations,
        }
    }
}

/// Lower bound on `min_D f` from one subgradient `g` of a convex `f` at `x`.
pub fn subgradient_lower_bound(domain: &Domain, x: &[f64], value: f64, g: &[f64]) -> f64 {
    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
    value - dot(g, x) - domain.support(&neg)
}
