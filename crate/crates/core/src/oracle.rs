//! Brute-force verification of the optimistic minimisation: a dense grid with
//! local pattern-search refinement over low-dimensional instances, compared
//! with the convex decomposition.

use nalgebra::{DMatrix, DVector};

use crate::costs::{CostFamily, CostKind, TargetShape};
use crate::dap::{regressor_dim, UnrolledModel};
use crate::error::{Error, Result};
use crate::linalg::sym_inv_sqrt;
use crate::optimism::{solve_optimistic_min, OptimismSettings, OptimisticProblem, WindowSample};
use crate::rng::RngStream;
use crate::sco::{random_transform, DecisionSetKind, ScoInstance, ScoState};
use crate::solver::Domain;
use crate::system::NoiseModel;

/// Minimum of the full (nonconvex) objective over a `grid`-point mesh per
/// axis plus a boundary ring, refined by pattern search from the best
/// mesh points. Dimensions 1 and 2 only.
pub fn brute_force_min(p: &OptimisticProblem, grid: usize) -> Result<(Vec<f64>, f64)> {
    let d = p.dim();
    if !(1..=2).contains(&d) {
        return Err(Error::invalid("dim", format!("brute force supports dimension 1 or 2, got {d}")));
    }
    let grid = grid.max(3);
    let dom = p.domain();
    let (lo, hi): (Vec<f64>, Vec<f64>) = match dom {
        Domain::Ball { radius } => (vec![-radius; d], vec![*radius; d]),
        Domain::Box { lo, hi } => (lo.clone(), hi.clone()),
    };
    let axis = |i: usize, k: usize| lo[i] + (hi[i] - lo[i]) * k as f64 / (grid - 1) as f64;
    let mut points: Vec<Vec<f64>> = Vec::new();
    if d == 1 {
        points.extend((0..grid).map(|k| vec![axis(0, k)]));
    } else {
        for a in 0..grid {
            for b in 0..grid {
                points.push(vec![axis(0, a), axis(1, b)]);
            }
        }
        if let Domain::Ball { radius } = dom {
            points.retain(|x| dom.contains(x, 1e-12));
            let ring = 4 * grid;
            for k in 0..ring {
                let th = std::f64::consts::TAU * k as f64 / ring as f64;
                points.push(vec![radius * th.cos(), radius * th.sin()]);
            }
        }
    }
    let mut scored: Vec<(f64, Vec<f64>)> = points.into_iter().map(|x| (p.full_objective(&x), x)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let cell = (0..d).map(|i| hi[i] - lo[i]).fold(0.0, f64::max) / (grid - 1) as f64;
    let mut best = scored[0].clone();
    for (v0, x0) in scored.into_iter().take(8) {
        let (v, x) = pattern_search(p, x0, v0, cell);
        if v < best.0 {
            best = (v, x);
        }
    }
    Ok((best.1, best.0))
}

fn pattern_search(p: &OptimisticProblem, mut x: Vec<f64>, mut v: f64, mut step: f64) -> (f64, Vec<f64>) {
    let d = x.len();
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for i in 0..d {
        for s in [-1.0, 1.0] {
            let mut e = vec![0.0; d];
            e[i] = s;
            dirs.push(e);
        }
    }
    if d == 2 {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        for (a, b) in [(r, r), (r, -r), (-r, r), (-r, -r)] {
            dirs.push(vec![a, b]);
        }
    }
    while step > 1e-10 {
        let mut improved = false;
        for e in &dirs {
            let mut y: Vec<f64> = x.iter().zip(e).map(|(a, b)| a + step * b).collect();
            p.domain().project(&mut y);
            let fy = p.full_objective(&y);
            if fy < v {
                v = fy;
                x = y;
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (v, x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    Control,
    Sco,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCase {
    pub kind: OracleKind,
    pub decomposition: f64,
    pub brute_force: f64,
}

impl OracleCase {
    pub fn gap(&self) -> f64 {
        (self.decomposition - self.brute_force).abs()
    }
}

fn random_cost(dim: usize, rng: &mut RngStream) -> CostFamily {
    let center: Vec<f64> = (0..dim).map(|_| rng.uniform_in(-0.5, 0.5)).collect();
    let shape = if rng.uniform() < 0.5 { TargetShape::Corners } else { TargetShape::UniformBall };
    if rng.uniform() < 0.5 {
        CostFamily::norm_target(dim, shape, center, 0.5).expect("valid cost")
    } else {
        CostFamily::new(CostKind::HuberQuadratic, dim, shape, center, 0.5, rng.uniform_in(0.2, 1.0)).expect("valid cost")
    }
}

/// Scalar control problem with memory 2: random unrolled model, Gram
/// matrix, estimated noises and cost samples.
pub fn random_control_problem(rng: &mut RngStream) -> Result<OptimisticProblem> {
    let (dx, du, h) = (1, 1, 2);
    let p = regressor_dim(h, dx, du);
    let psi = UnrolledModel {
        psi: DMatrix::from_fn(dx, p, |_, _| rng.uniform_in(-1.0, 1.0)),
        h,
        d_u: du,
    };
    let mut v = DMatrix::identity(p, p) * rng.uniform_in(1.0, 4.0);
    for _ in 0..(1 + rng.next_u64() % 6) {
        let r = DVector::from_fn(p, |_, _| rng.uniform_in(-1.0, 1.0));
        v += &r * r.transpose();
    }
    let s = sym_inv_sqrt(&v, crate::estimation::EIG_FLOOR);
    let cost = random_cost(dx + du, rng);
    let len = 3 + (rng.next_u64() % 6) as usize;
    let window: Vec<WindowSample> = (0..len)
        .map(|_| WindowSample {
            cost: cost.sample(rng),
            noises: (0..2 * h).map(|_| DVector::from_element(dx, rng.uniform_in(-1.0, 1.0))).collect(),
        })
        .collect();
    let alpha = rng.uniform_in(0.05, 0.5);
    let radius = rng.uniform_in(0.5, 2.0);
    OptimisticProblem::control(&window, &psi, &s, &cost, alpha, 1.0, radius)
}

/// SCO problem with `d_a ≤ 2` after a few random rounds.
pub fn random_sco_problem(rng: &mut RngStream) -> Result<OptimisticProblem> {
    let d_a = 1 + (rng.next_u64() % 2) as usize;
    let d_y = 2;
    let kind = if rng.uniform() < 0.5 { DecisionSetKind::Ball } else { DecisionSetKind::Box };
    let loss = random_cost(d_y, rng);
    let q = random_transform(d_y, d_a, 1.0, rng);
    let inst = ScoInstance::new(q, kind, 2.0, 1.0, NoiseModel::rademacher(d_y, 1.0)?, loss)?;
    let mut state = ScoState::new(d_a, d_y, 4.0)?;
    for _ in 0..(2 + rng.next_u64() % 10) {
        let mut a: Vec<f64> = (0..d_a).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        inst.domain().project(&mut a);
        let y = &inst.q_star * DVector::from_column_slice(&a) + inst.noise.sample(rng);
        let z = inst.loss.sample(rng).z;
        state.observe(&a, y.as_slice(), &z)?;
    }
    state.problem(&inst, rng.uniform_in(0.1, 1.0))
}

/// Solve `n` random instances, alternating control and SCO, both ways.
pub fn relaxation_equivalence(
    n: usize,
    seed: u64,
    settings: &OptimismSettings,
    grid: usize,
) -> Result<Vec<OracleCase>> {
    let mut rng = RngStream::new(seed, 0);
    (0..n)
        .map(|i| {
            let (kind, p) = if i % 2 == 0 {
                (OracleKind::Control, random_control_problem(&mut rng)?)
            } else {
                (OracleKind::Sco, random_sco_problem(&mut rng)?)
            };
            let sol = solve_optimistic_min(&p, settings, &vec![0.0; p.dim()])?;
            let (_, brute) = brute_force_min(&p, grid)?;
            Ok(OracleCase {
                kind,
                decomposition: sol.value,
                brute_force: brute,
            })
        })
        .collect()
}
