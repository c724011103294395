mod common;

use nalgebra::DVector;
use ofu_control::dap::{build_p_matrix, stack};
use ofu_control::rng::RngStream;
use proptest::prelude::*;

use common::{random_policy, random_window, truncation_excess};

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(256)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn regressor_equals_block_operator_product(
        seed in any::<u64>(),
        h in prop::sample::select(vec![1usize, 2, 3, 5]),
        d_x in 1usize..4,
        d_u in 1usize..3,
    ) {
        let mut rng = RngStream::new(seed, 1);
        let policy = random_policy(d_u, d_x, h, 2.0, &mut rng);
        let window = random_window(2 * h - 1, d_x, 1.0, &mut rng);
        let rho = policy.rho(&window).unwrap();
        let via_p = build_p_matrix(&policy, d_x).unwrap() * stack(&window);
        prop_assert!((rho - via_p).amax() <= 1e-12);
    }

    #[test]
    fn surrogate_state_tracks_true_state(
        seed in any::<u64>(),
        h in 2usize..5,
        d_x in 1usize..4,
        d_u in 1usize..3,
    ) {
        prop_assert!(truncation_excess(seed, d_x, d_u, h, 60) <= 1e-9);
    }

    #[test]
    fn action_and_regressor_norm_bounds(
        seed in any::<u64>(),
        h in 1usize..5,
        d_x in 1usize..4,
        d_u in 1usize..3,
    ) {
        let (w, r_m) = (1.0, 1.5);
        let mut rng = RngStream::new(seed, 2);
        let policy = random_policy(d_u, d_x, h, r_m, &mut rng);
        let window = random_window(2 * h, d_x, w, &mut rng);
        let u = policy.action(&window[h..]).unwrap();
        prop_assert!(u.norm() <= w * r_m * (h as f64).sqrt() + 1e-12);
        let rho = policy.rho(&window[..2 * h - 1]).unwrap();
        let joint = (rho.norm_squared() + window[2 * h - 1].norm_squared()).sqrt();
        prop_assert!(joint <= 2f64.sqrt() * w * r_m.max(1.0) * h as f64 + 1e-12);
    }

    #[test]
    fn action_is_lipschitz_in_noise(
        seed in any::<u64>(),
        h in 1usize..5,
        d_x in 1usize..4,
        d_u in 1usize..3,
    ) {
        let mut rng = RngStream::new(seed, 3);
        let r_m = 2.0;
        let policy = random_policy(d_u, d_x, h, r_m, &mut rng);
        let a = random_window(h, d_x, 1.0, &mut rng);
        let b = random_window(h, d_x, 1.0, &mut rng);
        let du = (policy.action(&a).unwrap() - policy.action(&b).unwrap()).norm();
        let dw = (stack(&a) - stack(&b)).norm();
        prop_assert!(du <= r_m * dw + 1e-12);
    }

    #[test]
    fn zero_window_gives_zero_regressor(seed in any::<u64>(), h in 1usize..5) {
        let mut rng = RngStream::new(seed, 4);
        let policy = random_policy(1, 2, h, 1.0, &mut rng);
        let rho = policy.rho(&vec![DVector::zeros(2); 2 * h - 1]).unwrap();
        prop_assert_eq!(rho.amax(), 0.0);
    }
}
