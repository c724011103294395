//! True plant: strongly stable linear dynamics driven by bounded i.i.d. noise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{norm, op_norm};
use crate::rng::RngStream;

/// Horizon used when certifying `‖A^k‖ ≤ κ(1−γ)^k`.
pub const K_CHECK: usize = 50;

const CERT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Each coordinate is `±W/√d` with independent fair signs.
    ScaledRademacher,
    /// Isotropic Gaussian conditioned on the `W`-ball (rejection, no projection).
    TruncatedGaussian,
    /// Uniform on the cube `[−W/√d, W/√d]^d`.
    ScaledUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub dim: usize,
    pub w_bound: f64,
    /// Per-coordinate scale of the untruncated Gaussian; ignored by other kinds.
    pub base_sigma: f64,
    /// `σ̲`: square root of the smallest eigenvalue of `E[w wᵀ]`.
    pub sigma_lower: f64,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, dim: usize, w_bound: f64, base_sigma: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "noise dimension must be positive"));
        }
        if !(w_bound > 0.0 && w_bound.is_finite()) {
            return Err(Error::invalid("w_bound", format!("must be > 0, got {w_bound}")));
        }
        if kind == NoiseKind::TruncatedGaussian && !(base_sigma > 0.0 && base_sigma.is_finite()) {
            return Err(Error::invalid(
                "base_sigma",
                format!("must be > 0, got {base_sigma}"),
            ));
        }
        let d = dim as f64;
        let sigma_lower = match kind {
            NoiseKind::ScaledRademacher => w_bound / d.sqrt(),
            NoiseKind::ScaledUniform => w_bound / (3.0 * d).sqrt(),
            NoiseKind::TruncatedGaussian => {
                // Isotropy gives E[wwᵀ] = (E‖w‖²/d)·I, and ‖w‖²/(2σ²) is a
                // Gamma(d/2) variable truncated at c = W²/(2σ²).
                let c = w_bound * w_bound / (2.0 * base_sigma * base_sigma);
                let k = 0.5 * d;
                let ratio = gamma_lr(k + 1.0, c) / gamma_lr(k, c);
                base_sigma * ratio.sqrt()
            }
        };
        Ok(Self {
            kind,
            dim,
            w_bound,
            base_sigma,
            sigma_lower,
        })
    }

    pub fn rademacher(dim: usize, w_bound: f64) -> Result<Self> {
        Self::new(NoiseKind::ScaledRademacher, dim, w_bound, 1.0)
    }

    pub fn sample(&self, rng: &mut RngStream) -> DVector<f64> {
        let d = self.dim;
        let scale = self.w_bound / (d as f64).sqrt();
        let v: Vec<f64> = match self.kind {
            NoiseKind::ScaledRademacher => (0..d).map(|_| scale * rng.sign()).collect(),
            NoiseKind::ScaledUniform => (0..d).map(|_| rng.uniform_in(-scale, scale)).collect(),
            NoiseKind::TruncatedGaussian => self.sample_truncated_gaussian(rng),
        };
        DVector::from_vec(v)
    }

    fn sample_truncated_gaussian(&self, rng: &mut RngStream) -> Vec<f64> {
        let d = self.dim;
        let sigma = self.base_sigma;
        let c = self.w_bound * self.w_bound / (2.0 * sigma * sigma);
        let k = 0.5 * d as f64;
        let mass = gamma_lr(k, c);
        if mass >= 0.2 {
            loop {
                let v: Vec<f64> = (0..d).map(|_| sigma * rng.normal()).collect();
                if norm(&v) <= self.w_bound {
                    return v;
                }
            }
        }
        // Low acceptance: draw the squared radius from the truncated Gamma law by
        // inverting its CDF, then an independent uniform direction. Same target
        // distribution as rejection.
        let target = rng.uniform() * mass;
        let (mut lo, mut hi) = (0.0, c);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if gamma_lr(k, mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let r = (sigma * (2.0 * 0.5 * (lo + hi)).sqrt()).min(self.w_bound);
        rng.unit_vector(d).into_iter().map(|x| x * r).collect()
    }
}

fn gamma_lr(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        statrs::function::gamma::gamma_lr(a, x)
    }
}

/// The true system `x_{t+1} = A★ x_t + B★ u_t + w_t` together with its
/// stability certificate and known bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub a_star: DMatrix<f64>,
    pub b_star: DMatrix<f64>,
    pub kappa: f64,
    pub gamma: f64,
    pub w_bound: f64,
    pub r_b: f64,
    pub noise: NoiseModel,
}

impl SystemSpec {
    /// Assemble a system from explicit matrices, checking every invariant.
    pub fn from_parts(
        a_star: DMatrix<f64>,
        b_star: DMatrix<f64>,
        kappa: f64,
        gamma: f64,
        r_b: f64,
        noise: NoiseModel,
    ) -> Result<Self> {
        check_stability_params(kappa, gamma)?;
        let dx = a_star.nrows();
        check_dim("A★ columns", dx, a_star.ncols())?;
        check_dim("B★ rows", dx, b_star.nrows())?;
        check_dim("noise dimension", dx, noise.dim)?;
        let spec = Self {
            a_star,
            b_star,
            kappa,
            gamma,
            w_bound: noise.w_bound,
            r_b,
            noise,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn d_x(&self) -> usize {
        self.a_star.nrows()
    }

    pub fn d_u(&self) -> usize {
        self.b_star.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let nb = op_norm(&self.b_star);
        if nb > self.r_b * (1.0 + CERT_SLACK) {
            return Err(Error::invalid(
                "r_b",
                format!("‖B★‖ = {nb} exceeds declared bound {}", self.r_b),
            ));
        }
        if !verify_strong_stability(&self.a_star, self.kappa, self.gamma, K_CHECK)? {
            return Err(Error::invalid(
                "a_star",
                format!(
                    "‖A★^k‖ ≤ κ(1−γ)^k fails for some k ≤ {K_CHECK} (κ={}, γ={})",
                    self.kappa, self.gamma
                ),
            ));
        }
        Ok(())
    }

    pub fn step(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_dim("state", self.d_x(), x.len())?;
        check_dim("action", self.d_u(), u.len())?;
        check_dim("noise", self.d_x(), w.len())?;
        Ok(&self.a_star * x + &self.b_star * u + w)
    }

    pub fn sample_noise(&self, rng: &mut RngStream) -> DVector<f64> {
        self.noise.sample(rng)
    }
}

fn check_stability_params(kappa: f64, gamma: f64) -> Result<()> {
    if !(kappa >= 1.0 && kappa.is_finite()) {
        return Err(Error::invalid("kappa", format!("must be ≥ 1, got {kappa}")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid("gamma", format!("must lie in (0, 1], got {gamma}")));
    }
    Ok(())
}

/// Random system with `A★ = Q L Q⁻¹`, `L` diagonal with `|L_ii| ≤ 1−γ` and
/// `cond(Q) ≤ κ`, so the stability certificate holds by construction.
/// `B★` is Gaussian rescaled to operator norm `r_b`.
pub fn make_strongly_stable_system(
    d_x: usize,
    d_u: usize,
    kappa: f64,
    gamma: f64,
    r_b: f64,
    noise: NoiseModel,
    rng: &mut RngStream,
) -> Result<SystemSpec> {
    check_stability_params(kappa, gamma)?;
    if !(r_b > 0.0 && r_b.is_finite()) {
        return Err(Error::invalid("r_b", format!("must be > 0, got {r_b}")));
    }
    if d_x == 0 || d_u == 0 {
        return Err(Error::invalid("dims", "d_x and d_u must be positive"));
    }
    check_dim("noise dimension", d_x, noise.dim)?;

    let u = random_orthogonal(d_x, rng);
    let v = random_orthogonal(d_x, rng);
    let mut sv = vec![1.0; d_x];
    if d_x > 1 {
        sv[d_x - 1] = kappa;
        for s in sv.iter_mut().take(d_x - 1).skip(1) {
            *s = rng.uniform_in(1.0, kappa);
        }
    }
    let s = DMatrix::from_diagonal(&DVector::from_vec(sv.clone()));
    let s_inv = DMatrix::from_diagonal(&DVector::from_iterator(d_x, sv.iter().map(|x| 1.0 / x)));
    let q = &u * s * v.transpose();
    let q_inv = &v * s_inv * u.transpose();

    let radius = 1.0 - gamma;
    let l = DMatrix::from_diagonal(&DVector::from_iterator(
        d_x,
        (0..d_x).map(|_| rng.uniform_in(-radius, radius)),
    ));
    let a_star = if radius == 0.0 {
        DMatrix::zeros(d_x, d_x)
    } else {
        &q * l * &q_inv
    };

    let mut b_star = DMatrix::from_fn(d_x, d_u, |_, _| rng.normal());
    let nb = op_norm(&b_star);
    if nb > 0.0 {
        b_star *= r_b / nb;
    }

    SystemSpec::from_parts(a_star, b_star, kappa, gamma, r_b, noise)
}

fn random_orthogonal(n: usize, rng: &mut RngStream) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.normal());
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Sign-fix so the distribution is Haar rather than QR-convention dependent.
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// `true` iff `‖a^k‖ ≤ κ(1−γ)^k` for every `k = 1..=k_check` (up to a
/// relative rounding slack of 1e-9).
pub fn verify_strong_stability(
    a: &DMatrix<f64>,
    kappa: f64,
    gamma: f64,
    k_check: usize,
) -> Result<bool> {
    check_dim("square matrix", a.nrows(), a.ncols())?;
    if k_check == 0 {
        return Err(Error::invalid("k_check", "must be ≥ 1"));
    }
    let mut power = a.clone();
    let mut bound = kappa;
    for k in 1..=k_check {
        if k > 1 {
            power = &power * a;
        }
        bound *= 1.0 - gamma;
        if op_norm(&power) > bound * (1.0 + CERT_SLACK) + 1e-300 {
            return Ok(false);
        }
    }
    Ok(true)
}
