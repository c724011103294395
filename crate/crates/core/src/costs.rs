//! Stochastic convex cost families `c(p; z)` over a point `p` (for control,
//! `p = (x, u)`), each convex and 1-Lipschitz in `p` for every realization `z`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, norm};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// `‖p − z‖₂` for a random target `z`.
    NormTarget,
    /// Huber function of `‖p − z‖₂` with knee `δ ≤ 1`.
    HuberQuadratic,
    /// `⟨θ_z, p⟩` with `‖θ_z‖ ≤ 1`.
    RandomLinear,
}

/// Law of the random part `z = center + radius·ξ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetShape {
    /// `ξ` uniform over the `2^d` scaled cube corners `{±1/√d}^d`.
    Corners,
    /// `ξ` uniform in the unit Euclidean ball.
    UniformBall,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostFamily {
    pub kind: CostKind,
    pub dim: usize,
    pub shape: TargetShape,
    pub center: Vec<f64>,
    pub radius: f64,
    pub knee: f64,
}

/// One realization of the cost randomness: a target point or a coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSample {
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl CostFamily {
    pub fn new(
        kind: CostKind,
        dim: usize,
        shape: TargetShape,
        center: Vec<f64>,
        radius: f64,
        knee: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "cost dimension must be positive"));
        }
        check_dim("cost center", dim, center.len())?;
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::invalid("radius", format!("must be ≥ 0, got {radius}")));
        }
        if kind == CostKind::HuberQuadratic && !(knee > 0.0 && knee <= 1.0) {
            return Err(Error::invalid(
                "knee",
                format!("Huber knee must lie in (0, 1] for 1-Lipschitzness, got {knee}"),
            ));
        }
        if kind == CostKind::RandomLinear && norm(&center) + radius > 1.0 + 1e-12 {
            return Err(Error::invalid(
                "radius",
                "linear coefficients must satisfy ‖center‖ + radius ≤ 1",
            ));
        }
        Ok(Self {
            kind,
            dim,
            shape,
            center,
            radius,
            knee,
        })
    }

    pub fn norm_target(dim: usize, shape: TargetShape, center: Vec<f64>, radius: f64) -> Result<Self> {
        Self::new(CostKind::NormTarget, dim, shape, center, radius, 1.0)
    }

    /// Conservative bound on `|c(p; z) − E c(p; z′)|` for `‖p‖ ≤ working_radius`.
    pub fn sigma_c(&self, working_radius: f64) -> f64 {
        match self.kind {
            CostKind::NormTarget => 2.0 * self.radius,
            CostKind::HuberQuadratic => 2.0 * self.knee * self.radius,
            CostKind::RandomLinear => self.radius * working_radius,
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> CostSample {
        let d = self.dim;
        let xi: Vec<f64> = match self.shape {
            TargetShape::Corners => {
                let s = 1.0 / (d as f64).sqrt();
                (0..d).map(|_| s * rng.sign()).collect()
            }
            TargetShape::UniformBall => rng.in_ball(d, 1.0),
        };
        CostSample {
            z: self
                .center
                .iter()
                .zip(&xi)
                .map(|(c, x)| c + self.radius * x)
                .collect(),
        }
    }

    pub fn eval(&self, z: &CostSample, p: &[f64]) -> Result<f64> {
        check_dim("cost point", self.dim, p.len())?;
        check_dim("cost sample", self.dim, z.z.len())?;
        Ok(self.value(&z.z, p))
    }

    pub fn eval_xu(&self, z: &CostSample, x: &[f64], u: &[f64]) -> Result<f64> {
        check_dim("cost point", self.dim, x.len() + u.len())?;
        let p: Vec<f64> = x.iter().chain(u).copied().collect();
        self.eval(z, &p)
    }

    pub fn subgradient(&self, z: &CostSample, p: &[f64]) -> Result<Vec<f64>> {
        check_dim("cost point", self.dim, p.len())?;
        check_dim("cost sample", self.dim, z.z.len())?;
        let mut g = vec![0.0; self.dim];
        self.value_grad(&z.z, p, &mut g);
        Ok(g)
    }

    /// Subgradient split into its state and action parts.
    pub fn subgradient_xu(
        &self,
        z: &CostSample,
        x: &[f64],
        u: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let p: Vec<f64> = x.iter().chain(u).copied().collect();
        let mut g = self.subgradient(z, &p)?;
        let gu = g.split_off(x.len());
        Ok((g, gu))
    }

    /// Unchecked value; hot path for the solvers.
    pub fn value(&self, z: &[f64], p: &[f64]) -> f64 {
        match self.kind {
            CostKind::RandomLinear => dot(z, p),
            CostKind::NormTarget => dist(p, z),
            CostKind::HuberQuadratic => huber(dist(p, z), self.knee),
        }
    }

    /// Unchecked value and subgradient (written into `grad`). At the kink of
    /// the norm the zero vector is returned.
    pub fn value_grad(&self, z: &[f64], p: &[f64], grad: &mut [f64]) -> f64 {
        match self.kind {
            CostKind::RandomLinear => {
                grad.copy_from_slice(z);
                dot(z, p)
            }
            CostKind::NormTarget => {
                let r = dist(p, z);
                if r > 0.0 {
                    for ((g, a), b) in grad.iter_mut().zip(p).zip(z) {
                        *g = (a - b) / r;
                    }
                } else {
                    grad.fill(0.0);
                }
                r
            }
            CostKind::HuberQuadratic => {
                let r = dist(p, z);
                let scale = if r <= self.knee { 1.0 } else { self.knee / r };
                for ((g, a), b) in grad.iter_mut().zip(p).zip(z) {
                    *g = scale * (a - b);
                }
                huber(r, self.knee)
            }
        }
    }

    /// Monte-Carlo estimate of `E_z c(x, u; z)` with its standard error.
    pub fn expected_cost_mc(
        &self,
        x: &[f64],
        u: &[f64],
        n_samples: usize,
        rng: &mut RngStream,
    ) -> Result<McEstimate> {
        if n_samples == 0 {
            return Err(Error::invalid("n_samples", "must be ≥ 1"));
        }
        check_dim("cost point", self.dim, x.len() + u.len())?;
        let p: Vec<f64> = x.iter().chain(u).copied().collect();
        let values = (0..n_samples).map(|_| {
            let z = self.sample(rng);
            self.value(&z.z, &p)
        });
        Ok(mean_stderr(values))
    }
}

/// Welford mean and standard error of the mean.
pub fn mean_stderr(values: impl Iterator<Item = f64>) -> McEstimate {
    let (mut n, mut mean, mut m2) = (0usize, 0.0f64, 0.0f64);
    for v in values {
        n += 1;
        let delta = v - mean;
        mean += delta / n as f64;
        m2 += delta * (v - mean);
    }
    let stderr = if n > 1 {
        (m2 / (n - 1) as f64 / n as f64).sqrt()
    } else {
        0.0
    };
    McEstimate {
        mean,
        stderr,
        samples: n,
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn huber(r: f64, knee: f64) -> f64 {
    if r <= knee {
        0.5 * r * r
    } else {
        knee * (r - 0.5 * knee)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed(kind: CostKind, center: Vec<f64>) -> CostFamily {
        let d = center.len();
        CostFamily::new(kind, d, TargetShape::Corners, center, 0.0, 1.0).unwrap()
    }

    #[test]
    fn norm_target_examples() {
        let f = fixed(CostKind::NormTarget, vec![0.0, 0.0]);
        let z = CostSample { z: vec![0.0, 0.0] };
        assert_eq!(f.eval_xu(&z, &[3.0], &[4.0]).unwrap(), 5.0);
        let (gx, gu) = f.subgradient_xu(&z, &[3.0], &[4.0]).unwrap();
        assert!((gx[0] - 0.6).abs() < 1e-15 && (gu[0] - 0.8).abs() < 1e-15);
        assert_eq!(f.subgradient(&z, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn linear_and_huber_examples() {
        let f = fixed(CostKind::RandomLinear, vec![0.0, 0.0, 0.0]);
        let z = CostSample { z: vec![1.0, 0.0, 0.0] };
        assert_eq!(f.eval(&z, &[2.0, 5.0, -1.0]).unwrap(), 2.0);
        assert_eq!(f.subgradient(&z, &[9.0, 9.0, 9.0]).unwrap(), vec![1.0, 0.0, 0.0]);

        let h = fixed(CostKind::HuberQuadratic, vec![0.0, 0.0]);
        let z0 = CostSample { z: vec![0.0, 0.0] };
        assert!((h.eval_xu(&z0, &[0.5], &[0.0]).unwrap() - 0.125).abs() < 1e-15);
        assert!((h.eval_xu(&z0, &[3.0], &[4.0]).unwrap() - 4.5).abs() < 1e-15);
    }

    #[test]
    fn dimension_errors() {
        let f = fixed(CostKind::NormTarget, vec![0.0, 0.0]);
        let z = CostSample { z: vec![0.0, 0.0] };
        assert!(f.eval(&z, &[1.0]).is_err());
        assert!(CostFamily::new(CostKind::HuberQuadratic, 1, TargetShape::Corners, vec![0.0], 0.0, 2.0).is_err());
        assert!(CostFamily::new(CostKind::RandomLinear, 1, TargetShape::Corners, vec![0.8], 0.5, 1.0).is_err());
    }

    #[test]
    fn deterministic_family_mc_is_exact() {
        let f = fixed(CostKind::NormTarget, vec![1.0, 2.0]);
        let mut rng = RngStream::new(1, 1);
        let est = f.expected_cost_mc(&[1.0], &[5.0], 100, &mut rng).unwrap();
        assert_eq!(est.mean, 3.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn zero_mean_linear_mc() {
        let f = CostFamily::new(CostKind::RandomLinear, 2, TargetShape::UniformBall, vec![0.0, 0.0], 1.0, 1.0)
            .unwrap();
        let mut rng = RngStream::new(2, 0);
        let est = f.expected_cost_mc(&[0.7], &[-0.3], 20_000, &mut rng).unwrap();
        assert!(est.mean.abs() <= 4.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn uniform_target_mean_abs() {
        // E|z| = 1/2 for z ~ U(−1, 1).
        let f = CostFamily::norm_target(1, TargetShape::UniformBall, vec![0.0], 1.0).unwrap();
        let mut rng = RngStream::new(3, 0);
        let est = f.expected_cost_mc(&[0.0], &[], 50_000, &mut rng).unwrap();
        assert!((est.mean - 0.5).abs() <= 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn mc_rejects_zero_samples() {
        let f = fixed(CostKind::NormTarget, vec![0.0]);
        let mut rng = RngStream::new(0, 0);
        assert!(f.expected_cost_mc(&[0.0], &[], 0, &mut rng).is_err());
    }
}
