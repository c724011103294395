//! Per-step run records shared by the controllers, baselines and writers.

use nalgebra::{DMatrix, DVector};

use crate::costs::CostSample;
use crate::dap::{DapPolicy, UnrolledModel};

#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub t: usize,
    pub epoch: usize,
    pub subepoch: usize,
    pub cost: f64,
    pub action_norm: f64,
    pub state_norm: f64,
    /// `‖w_t − ŵ_t‖`.
    pub noise_err: f64,
    /// `log det V_{t+1}`.
    pub logdet_v: f64,
    pub policy_switches: usize,
}

/// Realized randomness and trajectory, kept for comparator re-simulation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTraces {
    pub noises: Vec<DVector<f64>>,
    pub costs: Vec<CostSample>,
    pub states: Vec<DVector<f64>>,
    pub actions: Vec<DVector<f64>>,
}

/// Learner state captured at the start of an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSnapshot {
    pub start: usize,
    pub psi: UnrolledModel,
    pub gram: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunRecord {
    pub rows: Vec<StepRow>,
    pub traces: RunTraces,
    /// Number of subepochs in each epoch.
    pub subepochs: Vec<usize>,
    /// `Σ_t ρ_tᵀ V_t⁻¹ ρ_t`.
    pub harmonic_sum: f64,
    /// Regressor dimension the harmonic sum refers to.
    pub regressor_dim: usize,
    /// Policies in force, each with the step it took effect.
    pub policies: Vec<(usize, DapPolicy)>,
    pub snapshots: Vec<EpochSnapshot>,
    /// `Σ_t ‖w_t − ŵ_t‖²`.
    pub noise_err_sum: f64,
}

impl RunRecord {
    pub fn horizon(&self) -> usize {
        self.rows.len()
    }

    pub fn epochs(&self) -> usize {
        self.subepochs.len()
    }

    pub fn max_subepochs(&self) -> usize {
        self.subepochs.iter().copied().max().unwrap_or(0)
    }

    pub fn costs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.cost).collect()
    }

    pub fn policy_switches(&self) -> usize {
        self.rows.last().map_or(0, |r| r.policy_switches)
    }

    pub fn final_policy(&self) -> Option<&DapPolicy> {
        self.policies.last().map(|(_, p)| p)
    }
}
