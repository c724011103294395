//! Regularized least squares, disturbance recovery and Gram-matrix tracking.

use nalgebra::{DMatrix, DVector};

use crate::dap::UnrolledModel;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{cholesky_rank_one_update, forward_solve, logdet_spd, sym_inv_sqrt};

/// Eigenvalue floor used when forming `V^{-1/2}`.
pub const EIG_FLOOR: f64 = 1e-12;

const RLS_RESYNC: usize = 512;

/// Ridge regression `θ̂ = argmin Σ‖θ z − y‖² + λ‖θ‖_F²` maintained by
/// rank-1 recursive updates. The normal equations are kept alongside so
/// [`RlsState::solve`] can always return the exact solution.
#[derive(Debug, Clone)]
pub struct RlsState {
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    lambda: f64,
    gram_inv: DMatrix<f64>,
    theta: DMatrix<f64>,
    updates: usize,
}

impl RlsState {
    pub fn new(n_in: usize, n_out: usize, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid("lambda", format!("must be > 0, got {lambda}")));
        }
        Ok(Self {
            gram: DMatrix::identity(n_in, n_in) * lambda,
            cross: DMatrix::zeros(n_in, n_out),
            lambda,
            gram_inv: DMatrix::identity(n_in, n_in) / lambda,
            theta: DMatrix::zeros(n_out, n_in),
            updates: 0,
        })
    }

    pub fn n_in(&self) -> usize {
        self.gram.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.cross.ncols()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn update(&mut self, z: &[f64], y: &[f64]) -> Result<()> {
        check_dim("regressor", self.n_in(), z.len())?;
        check_dim("target", self.n_out(), y.len())?;
        let zv = DVector::from_column_slice(z);
        let yv = DVector::from_column_slice(y);
        self.gram.ger(1.0, &zv, &zv, 1.0);
        self.cross.ger(1.0, &zv, &yv, 1.0);

        // Sherman–Morrison on the inverse, then the classic RLS gain step.
        let pz = &self.gram_inv * &zv;
        let denom = 1.0 + zv.dot(&pz);
        let gain = &pz / denom;
        let resid = &yv - &self.theta * &zv;
        self.theta.ger(1.0, &resid, &gain, 1.0);
        self.gram_inv.ger(-1.0, &gain, &pz, 1.0);

        self.updates += 1;
        if self.updates % RLS_RESYNC == 0 {
            self.resync()?;
        }
        Ok(())
    }

    fn resync(&mut self) -> Result<()> {
        let chol = self.gram.clone().cholesky().ok_or_else(|| Error::Numerical {
            step: self.updates,
            detail: "ridge normal matrix lost positive definiteness".into(),
        })?;
        self.gram_inv = chol.inverse();
        self.theta = chol.solve(&self.cross).transpose();
        Ok(())
    }

    /// Current estimate from the recursive path, shape `n_out × n_in`.
    pub fn estimate(&self) -> &DMatrix<f64> {
        &self.theta
    }

    /// Exact ridge solution from the normal equations, shape `n_out × n_in`.
    pub fn solve(&self) -> Result<DMatrix<f64>> {
        let chol = self.gram.clone().cholesky().ok_or_else(|| Error::Numerical {
            step: self.updates,
            detail: "ridge normal matrix lost positive definiteness".into(),
        })?;
        Ok(chol.solve(&self.cross).transpose())
    }
}

/// Projected disturbance estimate `ŵ_t`, always inside the `W`-ball.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEstimate {
    pub w_hat: DVector<f64>,
}

/// `ŵ_t = Π_{B(W)}[x_{t+1} − A_t x_t − B_t u_t]`.
pub fn estimate_noise(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    x: &DVector<f64>,
    u: &DVector<f64>,
    x_next: &DVector<f64>,
    w_bound: f64,
) -> Result<NoiseEstimate> {
    check_dim("state", a.ncols(), x.len())?;
    check_dim("action", b.ncols(), u.len())?;
    check_dim("next state", a.nrows(), x_next.len())?;
    let r = x_next - a * x - b * u;
    Ok(NoiseEstimate {
        w_hat: project_ball(r, w_bound),
    })
}

pub fn project_ball(v: DVector<f64>, radius: f64) -> DVector<f64> {
    let n = v.norm();
    if n > radius {
        v * (radius / n)
    } else {
        v
    }
}

/// Ridge estimate of `Ψ` from `(ρ_s, x_{s+1})` pairs, solved from scratch.
pub fn estimate_psi(
    history: &[(DVector<f64>, DVector<f64>)],
    lambda_psi: f64,
    d_x: usize,
    d_u: usize,
    h: usize,
) -> Result<UnrolledModel> {
    let p = crate::dap::regressor_dim(h, d_x, d_u);
    let mut rls = RlsState::new(p, d_x, lambda_psi)?;
    let mut gram = DMatrix::identity(p, p) * lambda_psi;
    let mut cross = DMatrix::zeros(p, d_x);
    for (rho, x_next) in history {
        check_dim("ρ", p, rho.len())?;
        check_dim("next state", d_x, x_next.len())?;
        gram.ger(1.0, rho, rho, 1.0);
        cross.ger(1.0, rho, x_next, 1.0);
    }
    rls.gram = gram;
    rls.cross = cross;
    Ok(UnrolledModel {
        psi: rls.solve()?,
        h,
        d_u,
    })
}

/// `V = λI + Σ ρρᵀ` with its Cholesky factor and running `log det`.
#[derive(Debug, Clone)]
pub struct GramTracker {
    v: DMatrix<f64>,
    chol: DMatrix<f64>,
    logdet: f64,
    lambda: f64,
    updates: usize,
    resync_every: Option<usize>,
}

impl GramTracker {
    pub fn new(p: usize, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid("lambda", format!("must be > 0, got {lambda}")));
        }
        Ok(Self {
            v: DMatrix::identity(p, p) * lambda,
            chol: DMatrix::identity(p, p) * lambda.sqrt(),
            logdet: p as f64 * lambda.ln(),
            lambda,
            updates: 0,
            resync_every: Some(1000),
        })
    }

    /// Disable (`None`) or change the periodic refactorisation interval.
    pub fn with_resync(mut self, every: Option<usize>) -> Self {
        self.resync_every = every;
        self
    }

    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// `ρᵀ V⁻¹ ρ` for the current `V`.
    pub fn quad_form_inv(&self, rho: &[f64]) -> f64 {
        let y = forward_solve(&self.chol, rho);
        y.iter().map(|x| x * x).sum()
    }

    /// `log det V` recomputed from scratch.
    pub fn recomputed_logdet(&self) -> Option<f64> {
        logdet_spd(&self.v)
    }

    /// Rank-1 update `V ← V + ρρᵀ`. Returns `ρᵀ V⁻¹ ρ` evaluated before the update.
    pub fn update(&mut self, rho: &[f64]) -> Result<f64> {
        check_dim("ρ", self.dim(), rho.len())?;
        let q = self.quad_form_inv(rho);
        let rv = DVector::from_column_slice(rho);
        self.v.ger(1.0, &rv, &rv, 1.0);
        let mut work = rho.to_vec();
        let ok = cholesky_rank_one_update(&mut self.chol, &mut work);
        self.updates += 1;
        let due = self.resync_every.is_some_and(|k| self.updates % k == 0);
        if !ok || !q.is_finite() || due {
            self.refactor()?;
        } else {
            self.logdet += q.ln_1p();
        }
        Ok(q)
    }

    fn refactor(&mut self) -> Result<()> {
        let chol = self.v.clone().cholesky().ok_or_else(|| Error::Numerical {
            step: self.updates,
            detail: "Gram matrix lost positive definiteness".into(),
        })?;
        self.chol = chol.l();
        self.logdet = 2.0 * (0..self.dim()).map(|i| self.chol[(i, i)].ln()).sum::<f64>();
        Ok(())
    }

    /// Symmetric inverse square root `V^{-1/2}`.
    pub fn inv_sqrt(&self) -> DMatrix<f64> {
        sym_inv_sqrt(&self.v, EIG_FLOOR)
    }

    /// Solve `X V = B` for `X` (used for `Ψ = (Σ x ρᵀ) V⁻¹`).
    pub fn right_solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("right-hand side columns", self.dim(), b.ncols())?;
        let chol = nalgebra::Cholesky::new(self.v.clone()).ok_or_else(|| Error::Numerical {
            step: self.updates,
            detail: "Gram matrix lost positive definiteness".into(),
        })?;
        Ok(chol.solve(&b.transpose()).transpose())
    }
}

/// Strict determinant-doubling test `det V_now > 2 det V_start`.
pub fn det_doubled(now: &GramTracker, start: &GramTracker) -> bool {
    logdet_doubled(now.logdet(), start.logdet())
}

pub fn logdet_doubled(now: f64, start: f64) -> bool {
    now - start > std::f64::consts::LN_2
}

/// `V^{-1/2} P`.
pub fn whitened_bonus_matrix(g: &GramTracker, p_matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim("P(M) rows", g.dim(), p_matrix.nrows())?;
    Ok(g.inv_sqrt() * p_matrix)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rls_pure_regularizer() {
        let rls = RlsState::new(3, 2, 0.5).unwrap();
        assert_eq!(rls.solve().unwrap(), DMatrix::zeros(2, 3));
        assert_eq!(rls.estimate(), &DMatrix::zeros(2, 3));
    }

    #[test]
    fn rls_scalar_two_samples() {
        let mut rls = RlsState::new(1, 1, 1.0).unwrap();
        rls.update(&[1.0], &[2.0]).unwrap();
        rls.update(&[1.0], &[2.0]).unwrap();
        assert!((rls.solve().unwrap()[(0, 0)] - 4.0 / 3.0).abs() < 1e-15);
        assert!((rls.estimate()[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn rls_noiseless_identification() {
        let mut rls = RlsState::new(2, 1, 1e-12).unwrap();
        let data = [(1.0, 0.0), (0.3, 1.0), (-0.7, 2.0)];
        for (x, u) in data {
            rls.update(&[x, u], &[0.5 * x + u]).unwrap();
        }
        let th = rls.solve().unwrap();
        assert!((th[(0, 0)] - 0.5).abs() < 1e-6 && (th[(0, 1)] - 1.0).abs() < 1e-6);
        let rec = rls.estimate();
        assert!((rec[(0, 0)] - 0.5).abs() < 1e-6 && (rec[(0, 1)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rls_dimension_check() {
        let mut rls = RlsState::new(2, 1, 1.0).unwrap();
        assert!(rls.update(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn noise_projection() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::zeros(2, 1);
        let x = DVector::zeros(2);
        let u = DVector::zeros(1);
        let est = estimate_noise(&a, &b, &x, &u, &DVector::from_vec(vec![3.0, 4.0]), 1.0).unwrap();
        assert!((est.w_hat[0] - 0.6).abs() < 1e-15 && (est.w_hat[1] - 0.8).abs() < 1e-15);
        let est = estimate_noise(&a, &b, &x, &u, &DVector::zeros(2), 1.0).unwrap();
        assert_eq!(est.w_hat, DVector::zeros(2));
    }

    #[test]
    fn empty_history_psi_is_zero() {
        let psi = estimate_psi(&[], 2.0, 2, 1, 3).unwrap();
        assert_eq!(psi.psi, DMatrix::zeros(2, 7));
    }

    #[test]
    fn gram_examples() {
        let mut g = GramTracker::new(1, 1.0).unwrap();
        g.update(&[1.0]).unwrap();
        assert!((g.matrix()[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((g.logdet() - 2f64.ln()).abs() < 1e-15);

        let mut g = GramTracker::new(2, 1.0).unwrap();
        let before = g.logdet();
        g.update(&[0.0, 0.0]).unwrap();
        assert_eq!(g.logdet(), before);
        g.update(&[1.0, 1.0]).unwrap();
        assert!((g.logdet() - 3f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn det_doubling_is_strict() {
        let start = GramTracker::new(1, 1.0).unwrap();
        assert!(!det_doubled(&start, &start));
        let mut now = start.clone();
        now.update(&[1.0]).unwrap();
        assert!(!logdet_doubled(2f64.ln(), 0.0));
        let mut now25 = start.clone();
        now25.update(&[1.5f64.sqrt()]).unwrap();
        assert!(det_doubled(&now25, &start));
        let _ = now;
    }

    #[test]
    fn whitening_examples() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let g = GramTracker::new(2, 1.0).unwrap();
        assert!((whitened_bonus_matrix(&g, &p).unwrap() - &p).norm() < 1e-14);
        let g4 = GramTracker::new(2, 4.0).unwrap();
        assert!((whitened_bonus_matrix(&g4, &p).unwrap() - &p / 2.0).norm() < 1e-14);
        let mut gd = GramTracker::new(2, 1.0).unwrap();
        gd.update(&[0.0, 3f64.sqrt()]).unwrap();
        let w = whitened_bonus_matrix(&gd, &DMatrix::identity(2, 2)).unwrap();
        assert!((w - DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5])).norm() < 1e-14);
        assert!(whitened_bonus_matrix(&gd, &DMatrix::identity(3, 3)).is_err());
    }
}
