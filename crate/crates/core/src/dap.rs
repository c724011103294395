//! Disturbance Action Policies and their bounded-memory maps.
//!
//! A policy is a matrix `M = [M^[1] … M^[H]]` of shape `d_u × H·d_x` and plays
//! `u_t = Σ_h M^[h] w_{t−h}`. Noise windows are ordered oldest first, so the
//! last element of a window is always `w_{t−1}`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::system::SystemSpec;

const RADIUS_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DapPolicy {
    m: DMatrix<f64>,
    h: usize,
    r_m: f64,
}

impl DapPolicy {
    pub fn new(m: DMatrix<f64>, h: usize, r_m: f64) -> Result<Self> {
        if h == 0 {
            return Err(Error::invalid("h", "memory length must be ≥ 1"));
        }
        if m.ncols() % h != 0 || m.ncols() == 0 || m.nrows() == 0 {
            return Err(Error::invalid(
                "m",
                format!("shape {}×{} is not d_u × H·d_x for H = {h}", m.nrows(), m.ncols()),
            ));
        }
        let fro = m.norm();
        if fro > r_m * (1.0 + RADIUS_SLACK) + 1e-12 {
            return Err(Error::invalid(
                "m",
                format!("‖M‖_F = {fro} exceeds radius {r_m}"),
            ));
        }
        Ok(Self { m, h, r_m })
    }

    pub fn zeros(d_u: usize, d_x: usize, h: usize, r_m: f64) -> Self {
        Self {
            m: DMatrix::zeros(d_u, h * d_x),
            h,
            r_m,
        }
    }

    /// Build from the row-major flattening used by the solvers.
    pub fn from_flat(d_u: usize, d_x: usize, h: usize, r_m: f64, flat: &[f64]) -> Result<Self> {
        check_dim("flattened policy", d_u * h * d_x, flat.len())?;
        Self::new(DMatrix::from_row_slice(d_u, h * d_x, flat), h, r_m)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let (r, c) = self.m.shape();
        (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).map(|ij| self.m[ij]).collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn memory(&self) -> usize {
        self.h
    }

    pub fn radius(&self) -> f64 {
        self.r_m
    }

    pub fn d_u(&self) -> usize {
        self.m.nrows()
    }

    pub fn d_x(&self) -> usize {
        self.m.ncols() / self.h
    }

    /// Block `M^[k]` for `k ∈ 1..=H`.
    pub fn block(&self, k: usize) -> DMatrix<f64> {
        let dx = self.d_x();
        self.m.columns((k - 1) * dx, dx).into_owned()
    }

    /// Number of rows of `P(M)` (the regressor dimension `p`).
    pub fn regressor_dim(&self) -> usize {
        regressor_dim(self.h, self.d_x(), self.d_u())
    }

    fn check_window(&self, window: &[DVector<f64>], expected: usize) -> Result<()> {
        check_dim("noise window length", expected, window.len())?;
        for w in window {
            check_dim("noise vector", self.d_x(), w.len())?;
        }
        Ok(())
    }

    /// `u_t = Σ_h M^[h] w_{t−h}` from the window `[w_{t−H}, …, w_{t−1}]`.
    pub fn action(&self, window: &[DVector<f64>]) -> Result<DVector<f64>> {
        self.check_window(window, self.h)?;
        Ok(self.action_unchecked(window))
    }

    fn action_unchecked(&self, window: &[DVector<f64>]) -> DVector<f64> {
        let dx = self.d_x();
        let mut u = DVector::zeros(self.d_u());
        for k in 1..=self.h {
            let w = &window[self.h - k];
            u.gemv(1.0, &self.m.columns((k - 1) * dx, dx), w, 1.0);
        }
        u
    }

    /// `ρ_t = (u_{t+1−H}, …, u_t, w_{t+1−H}, …, w_{t−1})` from the window
    /// `[w_{t+1−2H}, …, w_{t−1}]`, computed directly from the action map.
    pub fn rho(&self, window: &[DVector<f64>]) -> Result<DVector<f64>> {
        self.check_window(window, 2 * self.h - 1)?;
        Ok(self.rho_unchecked(window))
    }

    fn rho_unchecked(&self, window: &[DVector<f64>]) -> DVector<f64> {
        let (h, dx, du) = (self.h, self.d_x(), self.d_u());
        let mut out = DVector::zeros(self.regressor_dim());
        for i in 0..h {
            let u = self.action_unchecked(&window[i..i + h]);
            out.rows_mut(i * du, du).copy_from(&u);
        }
        for i in 0..h - 1 {
            out.rows_mut(h * du + i * dx, dx).copy_from(&window[h + i]);
        }
        out
    }

    /// `x_t(M; Ψ, w) = Ψ ρ_{t−1}(M; w) + w_{t−1}` from `[w_{t−2H}, …, w_{t−1}]`.
    pub fn surrogate_state(&self, psi: &UnrolledModel, window: &[DVector<f64>]) -> Result<DVector<f64>> {
        self.check_window(window, 2 * self.h)?;
        check_dim("Ψ rows", self.d_x(), psi.psi.nrows())?;
        check_dim("Ψ columns", self.regressor_dim(), psi.psi.ncols())?;
        let rho = self.rho_unchecked(&window[..2 * self.h - 1]);
        Ok(&psi.psi * rho + &window[2 * self.h - 1])
    }

    /// The block operator `P(M)` with `ρ_t = P(M)·stack(w_{t+1−2H:t−1})`.
    pub fn p_matrix(&self) -> DMatrix<f64> {
        let (h, dx, du) = (self.h, self.d_x(), self.d_u());
        let mut p = DMatrix::zeros(self.regressor_dim(), (2 * h - 1) * dx);
        for r in 0..h {
            for k in 1..=h {
                let col_block = r + h - k;
                p.view_mut((r * du, col_block * dx), (du, dx))
                    .copy_from(&self.m.columns((k - 1) * dx, dx));
            }
        }
        for i in 0..h - 1 {
            p.view_mut((h * du + i * dx, (h + i) * dx), (dx, dx))
                .fill_with_identity();
        }
        p
    }
}

pub fn regressor_dim(h: usize, d_x: usize, d_u: usize) -> usize {
    h * d_u + (h - 1) * d_x
}

/// `P(M)` for a policy over `d_x`-dimensional noise.
pub fn build_p_matrix(policy: &DapPolicy, d_x: usize) -> Result<DMatrix<f64>> {
    check_dim("policy state dimension", d_x, policy.d_x())?;
    Ok(policy.p_matrix())
}

/// Stack a window of vectors into one column.
pub fn stack(window: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(
        window.iter().map(|w| w.len()).sum(),
        window.iter().flat_map(|w| w.iter().copied()),
    )
}

/// Unrolled model `Ψ` of shape `d_x × (H·d_u + (H−1)·d_x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnrolledModel {
    pub psi: DMatrix<f64>,
    pub h: usize,
    pub d_u: usize,
}

impl UnrolledModel {
    pub fn zeros(d_x: usize, d_u: usize, h: usize) -> Self {
        Self {
            psi: DMatrix::zeros(d_x, regressor_dim(h, d_x, d_u)),
            h,
            d_u,
        }
    }

    pub fn d_x(&self) -> usize {
        self.psi.nrows()
    }

    /// The action block multiplying `u_{t+1−H+i}` in `ρ_t`, `i ∈ 0..H`.
    pub fn action_block(&self, i: usize) -> DMatrix<f64> {
        self.psi.columns(i * self.d_u, self.d_u).into_owned()
    }
}

/// `Ψ★ = [A^{H−1}B, …, AB, B, A^{H−1}, …, A]`.
pub fn exact_unrolled_model(sys: &SystemSpec, h: usize) -> Result<UnrolledModel> {
    if h == 0 {
        return Err(Error::invalid("h", "memory length must be ≥ 1"));
    }
    let (dx, du) = (sys.d_x(), sys.d_u());
    let mut powers = vec![DMatrix::identity(dx, dx)];
    for k in 1..h {
        powers.push(&powers[k - 1] * &sys.a_star);
    }
    let mut psi = DMatrix::zeros(dx, regressor_dim(h, dx, du));
    for i in 0..h {
        psi.columns_mut(i * du, du)
            .copy_from(&(&powers[h - 1 - i] * &sys.b_star));
    }
    for i in 0..h - 1 {
        psi.columns_mut(h * du + i * dx, dx)
            .copy_from(&powers[h - 1 - i]);
    }
    Ok(UnrolledModel { psi, h, d_u: du })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::NoiseModel;

    fn s(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    fn scalar_policy(blocks: &[f64]) -> DapPolicy {
        DapPolicy::new(DMatrix::from_row_slice(1, blocks.len(), blocks), blocks.len(), 10.0).unwrap()
    }

    #[test]
    fn p_matrix_h1() {
        let p = scalar_policy(&[0.7]).p_matrix();
        assert_eq!(p.shape(), (1, 1));
        assert_eq!(p[(0, 0)], 0.7);
    }

    #[test]
    fn p_matrix_h2_by_hand() {
        let p = scalar_policy(&[0.5, 0.25]).p_matrix();
        let expected = DMatrix::from_row_slice(3, 3, &[0.25, 0.5, 0.0, 0.0, 0.25, 0.5, 0.0, 0.0, 1.0]);
        assert_eq!(p, expected);
        let z = scalar_policy(&[0.0, 0.0]).p_matrix();
        let expected = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(z, expected);
    }

    #[test]
    fn action_examples() {
        let pol = scalar_policy(&[0.5, 0.25]);
        // window = [w_{t−2}, w_{t−1}] = [2, 1]
        assert_eq!(pol.action(&[s(2.0), s(1.0)]).unwrap()[0], 1.0);
        assert_eq!(scalar_policy(&[0.0, 0.0]).action(&[s(2.0), s(1.0)]).unwrap()[0], 0.0);
        let id = DapPolicy::new(DMatrix::identity(2, 2), 1, 2.0).unwrap();
        let w = DVector::from_vec(vec![0.3, -0.4]);
        assert_eq!(id.action(&[w.clone()]).unwrap(), w);
        assert!(pol.action(&[s(1.0)]).is_err());
    }

    #[test]
    fn rho_matches_expansion() {
        let pol = scalar_policy(&[0.5, 0.25]);
        let (w3, w2, w1) = (0.3, -1.1, 0.8); // w_{t−3}, w_{t−2}, w_{t−1}
        let rho = pol.rho(&[s(w3), s(w2), s(w1)]).unwrap();
        let expected = [0.5 * w2 + 0.25 * w3, 0.5 * w1 + 0.25 * w2, w1];
        for (a, b) in rho.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let via_p = pol.p_matrix() * stack(&[s(w3), s(w2), s(w1)]);
        assert!((via_p - rho).norm() < 1e-15);
        let zero = scalar_policy(&[0.0, 0.0]).rho(&[s(w3), s(w2), s(w1)]).unwrap();
        assert_eq!(zero.as_slice(), &[0.0, 0.0, w1]);
    }

    #[test]
    fn surrogate_state_examples() {
        let pol = scalar_policy(&[0.5, 0.25]);
        let window = [s(0.1), s(0.2), s(0.3), s(0.4)];
        let zero_psi = UnrolledModel::zeros(1, 1, 2);
        assert_eq!(pol.surrogate_state(&zero_psi, &window).unwrap()[0], 0.4);
        let zeros = [s(0.0), s(0.0), s(0.0), s(0.0)];
        let psi = UnrolledModel { psi: DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]), h: 2, d_u: 1 };
        assert_eq!(pol.surrogate_state(&psi, &zeros).unwrap()[0], 0.0);

        // H = 1, Ψ = B★: x_t = B★ M^[1] w_{t−2} + w_{t−1}.
        let pol = scalar_policy(&[0.6]);
        let psi = UnrolledModel { psi: DMatrix::from_element(1, 1, 2.0), h: 1, d_u: 1 };
        let x = pol.surrogate_state(&psi, &[s(0.5), s(-0.25)]).unwrap();
        assert!((x[0] - (2.0 * 0.6 * 0.5 - 0.25)).abs() < 1e-15);
    }

    #[test]
    fn exact_model_examples() {
        let noise = NoiseModel::rademacher(1, 1.0).unwrap();
        let sys = SystemSpec::from_parts(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            1.0,
            0.5,
            1.0,
            noise.clone(),
        )
        .unwrap();
        let psi = exact_unrolled_model(&sys, 3).unwrap();
        assert_eq!(psi.psi.as_slice(), &[0.25, 0.5, 1.0, 0.25, 0.5]);
        assert_eq!(exact_unrolled_model(&sys, 1).unwrap().psi.as_slice(), &[1.0]);

        let zero_a = SystemSpec::from_parts(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 0.7),
            1.0,
            1.0,
            1.0,
            noise,
        )
        .unwrap();
        let psi = exact_unrolled_model(&zero_a, 3).unwrap();
        assert_eq!(psi.psi.as_slice(), &[0.0, 0.0, 0.7, 0.0, 0.0]);
    }

    #[test]
    fn radius_enforced() {
        assert!(DapPolicy::new(DMatrix::from_element(1, 2, 1.0), 2, 1.0).is_err());
        assert!(DapPolicy::new(DMatrix::from_element(1, 3, 0.1), 2, 1.0).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let m = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]) * 0.01;
        let pol = DapPolicy::new(m, 2, 1.0).unwrap();
        let back = DapPolicy::from_flat(2, 2, 2, 1.0, &pol.to_flat()).unwrap();
        assert_eq!(back, pol);
    }
}
