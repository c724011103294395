use nalgebra::{DMatrix, DVector};
use ofu_control::costs::{CostFamily, CostKind, TargetShape};
use ofu_control::estimation::{estimate_noise, GramTracker, RlsState};
use ofu_control::optimism::{fixed_entry_objective, SubproblemIndex};
use ofu_control::oracle::{random_control_problem, random_sco_problem};
use ofu_control::rng::RngStream;
use proptest::prelude::*;

fn ridge_closed_form(zs: &[Vec<f64>], ys: &[Vec<f64>], lambda: f64) -> DMatrix<f64> {
    let (n, p, q) = (zs.len(), zs[0].len(), ys[0].len());
    let z = DMatrix::from_fn(n, p, |i, j| zs[i][j]);
    let y = DMatrix::from_fn(n, q, |i, j| ys[i][j]);
    let g = z.transpose() * &z + DMatrix::identity(p, p) * lambda;
    (g.try_inverse().unwrap() * z.transpose() * y).transpose()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ridge_matches_normal_equations(seed in any::<u64>(), n in 1usize..700, p in 1usize..5, q in 1usize..3) {
        let mut rng = RngStream::new(seed, 0);
        let lambda = rng.uniform_in(0.1, 10.0);
        let zs: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.uniform_in(-2.0, 2.0)).collect()).collect();
        let ys: Vec<Vec<f64>> = (0..n).map(|_| (0..q).map(|_| rng.uniform_in(-2.0, 2.0)).collect()).collect();
        let mut rls = RlsState::new(p, q, lambda).unwrap();
        for (z, y) in zs.iter().zip(&ys) {
            rls.update(z, y).unwrap();
        }
        let want = ridge_closed_form(&zs, &ys, lambda);
        prop_assert!((rls.solve().unwrap() - &want).amax() < 1e-8);
        prop_assert!((rls.estimate() - &want).amax() < 1e-6);
    }

    #[test]
    fn gram_log_determinant_and_quadratic_form(seed in any::<u64>(), n in 1usize..300, p in 1usize..6) {
        let mut rng = RngStream::new(seed, 1);
        let lambda = rng.uniform_in(0.5, 5.0);
        let mut g = GramTracker::new(p, lambda).unwrap();
        let mut dense = DMatrix::identity(p, p) * lambda;
        for _ in 0..n {
            let r: Vec<f64> = (0..p).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let rv = DVector::from_column_slice(&r);
            let want_q = (rv.transpose() * dense.clone().try_inverse().unwrap() * &rv)[0];
            let q = g.update(&r).unwrap();
            prop_assert!((q - want_q).abs() < 1e-9 * want_q.max(1.0));
            dense += &rv * rv.transpose();
        }
        let want = dense.clone().cholesky().unwrap().determinant().ln();
        prop_assert!((g.logdet() - want).abs() < 1e-8 * want.abs().max(1.0));
        let s = g.inv_sqrt();
        prop_assert!((&s * &dense * &s - DMatrix::identity(p, p)).amax() < 1e-8);
    }

    #[test]
    fn disturbance_estimate_stays_in_ball(seed in any::<u64>(), w in 0.1f64..3.0) {
        let mut rng = RngStream::new(seed, 2);
        let a = DMatrix::from_fn(2, 2, |_, _| rng.uniform_in(-3.0, 3.0));
        let b = DMatrix::from_fn(2, 1, |_, _| rng.uniform_in(-3.0, 3.0));
        let x = DVector::from_fn(2, |_, _| rng.uniform_in(-5.0, 5.0));
        let u = DVector::from_fn(1, |_, _| rng.uniform_in(-5.0, 5.0));
        let xn = DVector::from_fn(2, |_, _| rng.uniform_in(-5.0, 5.0));
        let est = estimate_noise(&a, &b, &x, &u, &xn, w).unwrap();
        prop_assert!(est.w_hat.norm() <= w + 1e-12);
        let resid = &xn - &a * &x - &b * &u;
        if resid.norm() <= w {
            prop_assert_eq!(est.w_hat, resid);
        }
    }

    #[test]
    fn costs_are_lipschitz_and_convex(seed in any::<u64>(), kind in 0usize..3, dim in 1usize..4) {
        let mut rng = RngStream::new(seed, 3);
        let kind = [CostKind::NormTarget, CostKind::HuberQuadratic, CostKind::RandomLinear][kind];
        let (center, radius) = if kind == CostKind::RandomLinear {
            (vec![0.0; dim], 0.9)
        } else {
            ((0..dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect(), 0.5)
        };
        let c = CostFamily::new(kind, dim, TargetShape::UniformBall, center, radius, rng.uniform_in(0.1, 1.0)).unwrap();
        let z = c.sample(&mut rng);
        let p: Vec<f64> = (0..dim).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
        let q: Vec<f64> = (0..dim).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
        let mid: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
        let (fp, fq, fm) = (c.eval(&z, &p).unwrap(), c.eval(&z, &q).unwrap(), c.eval(&z, &mid).unwrap());
        let dist = p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        prop_assert!((fp - fq).abs() <= dist + 1e-12);
        prop_assert!(fm <= 0.5 * (fp + fq) + 1e-12);
    }

    #[test]
    fn subproblems_are_convex(seed in any::<u64>(), sco in any::<bool>(), chi in prop::sample::select(vec![-1i8, 1])) {
        let mut rng = RngStream::new(seed, 4);
        let p = if sco { random_sco_problem(&mut rng).unwrap() } else { random_control_problem(&mut rng).unwrap() };
        let k = (rng.next_u64() as usize) % p.num_entries();
        let idx = SubproblemIndex::new(chi, k).unwrap();
        let mut a: Vec<f64> = (0..p.dim()).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let mut b: Vec<f64> = (0..p.dim()).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        p.domain().project(&mut a);
        p.domain().project(&mut b);
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let fa = fixed_entry_objective(&p, idx, &a).unwrap();
        let fb = fixed_entry_objective(&p, idx, &b).unwrap();
        let fm = fixed_entry_objective(&p, idx, &mid).unwrap();
        prop_assert!(fm <= 0.5 * (fa + fb) + 1e-9 * (fa.abs() + fb.abs()).max(1.0));
    }
}
