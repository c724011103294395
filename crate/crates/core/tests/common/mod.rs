#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use ofu_control::config::{parse_config, ExperimentConfig};
use ofu_control::costs::{CostFamily, TargetShape};
use ofu_control::dap::{exact_unrolled_model, DapPolicy};
use ofu_control::rng::RngStream;
use ofu_control::system::{make_strongly_stable_system, NoiseModel, SystemSpec};

pub fn preset(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn scalar_system(a: f64, b: f64) -> SystemSpec {
    SystemSpec::from_parts(
        DMatrix::from_element(1, 1, a),
        DMatrix::from_element(1, 1, b),
        1.0,
        (1.0 - a.abs()).clamp(1e-3, 1.0),
        b.abs().max(1e-3),
        NoiseModel::rademacher(1, 1.0).unwrap(),
    )
    .unwrap()
}

pub fn norm_cost(dim: usize) -> CostFamily {
    CostFamily::norm_target(dim, TargetShape::Corners, vec![0.0; dim], 0.5).unwrap()
}

/// Random policy with `‖M‖_F` uniform in `[0, r_m]`.
pub fn random_policy(d_u: usize, d_x: usize, h: usize, r_m: f64, rng: &mut RngStream) -> DapPolicy {
    let flat = rng.in_ball(d_u * h * d_x, r_m);
    DapPolicy::from_flat(d_u, d_x, h, r_m, &flat).unwrap()
}

pub fn random_window(len: usize, d_x: usize, w: f64, rng: &mut RngStream) -> Vec<DVector<f64>> {
    (0..len).map(|_| DVector::from_vec(rng.in_ball(d_x, w))).collect()
}

/// Largest `‖x_t − x_t(M; Ψ★, w)‖ − κ(1−γ)^H max_s ‖x_s‖` along a run of
/// `steps` from rest under the DAP on the true noise (≤ 0 means the
/// truncation bound holds at every step).
pub fn truncation_excess(seed: u64, d_x: usize, d_u: usize, h: usize, steps: usize) -> f64 {
    let mut rng = RngStream::new(seed, 7);
    let noise = NoiseModel::rademacher(d_x, 1.0).unwrap();
    let kappa = 1.0 + 2.0 * rng.uniform();
    let gamma = rng.uniform_in(0.1, 0.9);
    let sys = make_strongly_stable_system(d_x, d_u, kappa, gamma, 1.0, noise, &mut rng).unwrap();
    let policy = random_policy(d_u, d_x, h, 1.0, &mut rng);
    let psi = exact_unrolled_model(&sys, h).unwrap();
    let zero = DVector::zeros(d_x);
    let mut noises: Vec<DVector<f64>> = Vec::new();
    let mut x = DVector::zeros(d_x);
    let mut max_x: f64 = 0.0;
    let mut worst = f64::NEG_INFINITY;
    let window = |noises: &Vec<DVector<f64>>, end: usize, len: usize| -> Vec<DVector<f64>> {
        // Noises w_{end−len+1..end}, zero before w_1.
        (0..len)
            .map(|i| {
                let s = end as isize - len as isize + 1 + i as isize;
                if s < 1 { zero.clone() } else { noises[(s - 1) as usize].clone() }
            })
            .collect()
    };
    for t in 1..=steps {
        // x is x_t here; compare with the surrogate built from w_{t−2H..t−1}.
        max_x = max_x.max(x.norm());
        let sur = policy.surrogate_state(&psi, &window(&noises, t - 1, 2 * h)).unwrap();
        let bound = sys.kappa * (1.0 - sys.gamma).powi(h as i32) * max_x;
        worst = worst.max((&x - sur).norm() - bound);
        let u = policy.action(&window(&noises, t - 1, h)).unwrap();
        let w = sys.sample_noise(&mut rng);
        x = sys.step(&x, &u, &w).unwrap();
        noises.push(w);
    }
    worst
}
