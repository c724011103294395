//! Multi-seed experiment grid: each cell runs on `RngStream(seed, T)`, so the
//! learner and the baseline at one `(T, seed)` face the same noise and costs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::bench::{baseline_explore_then_commit, best_dap_in_hindsight, run_invariant_violations};
use crate::config::{Algorithm, ExperimentConfig};
use crate::controller::{run_controller, run_fixed_policy};
use crate::error::{Error, Result};
use crate::io::{fmt_sig, format_run_csv, run_rows, write_file, RunRow, SUMMARY_HEADER};
use crate::record::RunRecord;
use crate::rng::RngStream;
use crate::sco::{run_sco, sco_pseudo_regret, PseudoRegret, ScoRunOutput};

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub algo: Algorithm,
    pub horizon: usize,
    pub seed: u64,
    pub final_regret: f64,
    /// Total cost minus the explore-then-commit total on the same cell.
    pub regret_vs_etc_baseline: f64,
    pub epochs: Option<usize>,
    pub max_subepochs: Option<usize>,
    pub noise_err_sum: f64,
    pub harmonic_sum: f64,
    pub wallclock_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub algo: Algorithm,
    pub horizon: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentSummary {
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<CellFailure>,
    /// Invariant violations found on completed runs, one message each.
    pub violations: Vec<String>,
}

impl ExperimentSummary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SUMMARY_HEADER);
        out.push('\n');
        let opt = |v: Option<usize>| v.map_or_else(|| "nan".to_string(), |x| x.to_string());
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.algo.name(),
                r.horizon,
                r.seed,
                fmt_sig(r.final_regret),
                fmt_sig(r.regret_vs_etc_baseline),
                opt(r.epochs),
                opt(r.max_subepochs),
                fmt_sig(r.noise_err_sum),
                fmt_sig(r.harmonic_sum),
                fmt_sig(r.wallclock_ms.unwrap_or(f64::NAN)),
            );
        }
        out
    }

    /// Median final regret of `algo` at horizon `t` over successful cells.
    pub fn median_regret(&self, algo: Algorithm, t: usize) -> Option<f64> {
        let mut v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.algo == algo && r.horizon == t)
            .map(|r| r.final_regret)
            .collect();
        median(&mut v)
    }
}

pub fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Learner and baseline runs on one `(T, seed)` cell, with the hindsight comparator.
#[derive(Debug, Clone)]
pub struct ControlCell {
    pub ofu: RunRecord,
    pub etc: RunRecord,
    pub comparator_costs: Vec<f64>,
    pub ofu_ms: f64,
    pub etc_ms: f64,
}

pub fn run_control_cell(cfg: &ExperimentConfig, horizon: usize, seed: u64) -> Result<ControlCell> {
    let sys = cfg.build_system()?;
    let costs = cfg.build_costs()?;
    let ccfg = cfg.controller_config(&sys, horizon)?;
    let rng = RngStream::new(seed, horizon as u64);
    let clock = Instant::now();
    let ofu = run_controller(&sys, &costs, &ccfg, &rng)?;
    let ofu_ms = clock.elapsed().as_secs_f64() * 1e3;
    let clock = Instant::now();
    let etc = baseline_explore_then_commit(&sys, &costs, &ccfg, cfg.explore_fraction(horizon), &rng)?;
    let etc_ms = clock.elapsed().as_secs_f64() * 1e3;
    if ofu.traces.noises != etc.traces.noises || ofu.traces.costs != etc.traces.costs {
        return Err(Error::Numerical {
            step: 0,
            detail: "learner and baseline saw different randomness".into(),
        });
    }
    let (policy, _) = best_dap_in_hindsight(&ofu, &sys, &costs, ccfg.h, ccfg.r_m, cfg.controller.hindsight_budget)?;
    let comparator_costs = run_fixed_policy(&sys, &costs, &policy, &ofu.traces.noises, &ofu.traces.costs)?;
    Ok(ControlCell {
        ofu,
        etc,
        comparator_costs,
        ofu_ms,
        etc_ms,
    })
}

#[derive(Debug, Clone)]
pub struct ScoCell {
    pub output: ScoRunOutput,
    pub regret: PseudoRegret,
    pub ms: f64,
}

pub fn run_sco_cell(cfg: &ExperimentConfig, horizon: usize, seed: u64) -> Result<ScoCell> {
    let inst = cfg.build_sco_instance()?;
    let params = cfg.sco_parameters(&inst, horizon)?;
    let rng = RngStream::new(seed, horizon as u64);
    let clock = Instant::now();
    let output = run_sco(&inst, params, horizon, &cfg.sco_settings(), &rng)?;
    let ms = clock.elapsed().as_secs_f64() * 1e3;
    let regret = sco_pseudo_regret(&output.run.actions, &inst, cfg.sco.mc_samples, &rng, cfg.sco.comparator_budget)?;
    Ok(ScoCell { output, regret, ms })
}

/// Run-file rows of an SCO run: per-round expected loss against the comparator.
pub fn sco_run_rows(regret: &PseudoRegret) -> Vec<RunRow> {
    let mut acc = 0.0;
    regret
        .per_round
        .iter()
        .enumerate()
        .map(|(i, v)| {
            acc += v - regret.comparator_value;
            RunRow {
                t: i + 1,
                epoch: None,
                subepoch: None,
                cost: *v,
                comparator_cost: regret.comparator_value,
                cum_regret: acc,
                noise_err_sq: f64::NAN,
                logdet_v: f64::NAN,
                policy_switches: None,
            }
        })
        .collect()
}

pub fn run_file_name(algo: Algorithm, horizon: usize, seed: u64) -> String {
    format!("{}_T{}_seed{}.csv", algo.name(), horizon, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CellKind {
    Control,
    Sco,
}

struct CellOutput {
    rows: Vec<SummaryRow>,
    files: Vec<(String, String)>,
    failures: Vec<CellFailure>,
    violations: Vec<String>,
}

fn control_cell_output(cfg: &ExperimentConfig, t: usize, seed: u64, wallclock: bool) -> CellOutput {
    let wanted: Vec<Algorithm> = cfg
        .suite
        .algorithms
        .iter()
        .copied()
        .filter(|a| *a != Algorithm::Sco)
        .collect();
    let mut out = CellOutput {
        rows: Vec::new(),
        files: Vec::new(),
        failures: Vec::new(),
        violations: Vec::new(),
    };
    let cell = match run_control_cell(cfg, t, seed) {
        Ok(c) => c,
        Err(e) => {
            out.failures = wanted
                .iter()
                .map(|&algo| CellFailure {
                    algo,
                    horizon: t,
                    seed,
                    message: e.to_string(),
                })
                .collect();
            return out;
        }
    };
    let comparator: f64 = cell.comparator_costs.iter().sum();
    let etc_total: f64 = cell.etc.costs().iter().sum();
    let sys = cfg.build_system().expect("validated");
    let h = cfg.controller_config(&sys, t).expect("validated").h;
    for algo in wanted {
        let (rec, ms) = match algo {
            Algorithm::Ofu => (&cell.ofu, cell.ofu_ms),
            _ => (&cell.etc, cell.etc_ms),
        };
        let total: f64 = rec.costs().iter().sum();
        out.rows.push(SummaryRow {
            algo,
            horizon: t,
            seed,
            final_regret: total - comparator,
            regret_vs_etc_baseline: total - etc_total,
            epochs: Some(rec.epochs()),
            max_subepochs: Some(rec.max_subepochs()),
            noise_err_sum: rec.noise_err_sum,
            harmonic_sum: rec.harmonic_sum,
            wallclock_ms: wallclock.then_some(ms),
        });
        if algo == Algorithm::Ofu {
            for v in run_invariant_violations(rec, sys.d_x(), sys.d_u(), h, cfg.system.w_bound) {
                out.violations.push(format!("ofu T={t} seed={seed}: {v}"));
            }
        }
        match run_rows(rec, Some(&cell.comparator_costs)) {
            Ok(rows) => out.files.push((run_file_name(algo, t, seed), format_run_csv(&rows))),
            Err(e) => out.failures.push(CellFailure {
                algo,
                horizon: t,
                seed,
                message: e.to_string(),
            }),
        }
    }
    out
}

fn sco_cell_output(cfg: &ExperimentConfig, t: usize, seed: u64, wallclock: bool) -> CellOutput {
    let mut out = CellOutput {
        rows: Vec::new(),
        files: Vec::new(),
        failures: Vec::new(),
        violations: Vec::new(),
    };
    match run_sco_cell(cfg, t, seed) {
        Ok(cell) => {
            let bound = 5.0 * cfg.sco.d_a as f64 * (t as f64).ln();
            if cell.output.run.harmonic_sum > bound {
                out.violations.push(format!(
                    "sco T={t} seed={seed}: harmonic sum {} exceeds {bound}",
                    cell.output.run.harmonic_sum
                ));
            }
            out.rows.push(SummaryRow {
                algo: Algorithm::Sco,
                horizon: t,
                seed,
                final_regret: cell.regret.total,
                regret_vs_etc_baseline: f64::NAN,
                epochs: None,
                max_subepochs: None,
                noise_err_sum: f64::NAN,
                harmonic_sum: cell.output.run.harmonic_sum,
                wallclock_ms: wallclock.then_some(cell.ms),
            });
            out.files.push((
                run_file_name(Algorithm::Sco, t, seed),
                format_run_csv(&sco_run_rows(&cell.regret)),
            ));
        }
        Err(e) => out.failures.push(CellFailure {
            algo: Algorithm::Sco,
            horizon: t,
            seed,
            message: e.to_string(),
        }),
    }
    out
}

/// The seeds of the grid: `seed, seed+1, …, seed+n−1`.
pub fn suite_seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.suite.seeds as u64).map(|i| cfg.seed.wrapping_add(i)).collect()
}

/// Run every cell of the grid on a pool of `suite.parallel` workers. Rows are
/// ordered by `(T, seed, algorithm)` whatever the completion order. Run
/// files go to `<out>/runs/` and the summary to `<out>/summary.csv` when
/// `out` is given.
pub fn run_experiment_suite(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentSummary> {
    cfg.validate_suite()?;
    let mut cells = Vec::new();
    for &t in &cfg.suite.horizons {
        for seed in suite_seeds(cfg) {
            if cfg.suite.algorithms.iter().any(|a| *a != Algorithm::Sco) {
                cells.push((t, seed, CellKind::Control));
            }
            if cfg.suite.algorithms.contains(&Algorithm::Sco) {
                cells.push((t, seed, CellKind::Sco));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.suite.parallel)
        .build()
        .map_err(|e| Error::invalid("parallel", e.to_string()))?;
    let wallclock = cfg.suite.wallclock;
    let outputs: Vec<CellOutput> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(t, seed, kind)| match kind {
                CellKind::Control => control_cell_output(cfg, t, seed, wallclock),
                CellKind::Sco => sco_cell_output(cfg, t, seed, wallclock),
            })
            .collect()
    });
    let mut summary = ExperimentSummary::default();
    let mut files = Vec::new();
    for o in outputs {
        summary.rows.extend(o.rows);
        summary.failures.extend(o.failures);
        summary.violations.extend(o.violations);
        files.extend(o.files);
    }
    summary
        .rows
        .sort_by(|a, b| (a.horizon, a.seed, a.algo).cmp(&(b.horizon, b.seed, b.algo)));
    if let Some(dir) = out {
        let runs: PathBuf = dir.join("runs");
        for (name, text) in &files {
            write_file(&runs.join(name), text)?;
        }
        write_file(&dir.join("summary.csv"), &summary.to_csv())?;
        if !summary.failures.is_empty() {
            let mut text = String::new();
            for f in &summary.failures {
                let _ = writeln!(text, "{},{},{},{}", f.algo.name(), f.horizon, f.seed, f.message.replace('\n', " "));
            }
            write_file(&dir.join("failures.csv"), &text)?;
        }
    }
    Ok(summary)
}
