use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ofu_control::bench::run_invariant_violations;
use ofu_control::config::{parse_config, ExperimentConfig};
use ofu_control::io::{format_run_csv, run_rows, write_file};
use ofu_control::optimism::OptimismSettings;
use ofu_control::oracle::relaxation_equivalence;
use ofu_control::suite::{run_control_cell, run_experiment_suite, run_sco_cell, sco_run_rows};
use ofu_control::Error;

#[derive(Parser)]
#[command(name = "ofu-control", version, about = "Optimistic online control and SCO benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single controller run with the hindsight comparator and baseline.
    Run(Common),
    /// Single run of the hidden-transform SCO learner.
    Sco(Common),
    /// Grid of horizons × seeds × algorithms.
    Suite(SuiteArgs),
    /// Decomposition against brute force on random small instances.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `alpha_scale` in the controller and SCO sections.
    #[arg(long = "alpha-scale")]
    alpha_scale: Option<f64>,
}

#[derive(Args)]
struct SuiteArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    parallel: Option<usize>,
    /// Comma-separated horizons, e.g. "256,1024,4096,16384".
    #[arg(long)]
    grid: Option<String>,
    /// Record wall-clock times in the summary.
    #[arg(long)]
    wallclock: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 201)]
    grid: usize,
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
}

enum Failure {
    Config(String),
    Invariant(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical { .. } | Error::DimensionMismatch { .. } => Failure::Numerical(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let mut cfg = parse_config(&common.config)?;
    if let Some(a) = common.alpha_scale {
        cfg.controller.alpha_scale = a;
        cfg.sco.alpha_scale = a;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    Ok((cfg, out))
}

fn revalidate(cfg: &ExperimentConfig) -> Result<(), Failure> {
    cfg.validate().map_err(Failure::from)
}

fn cmd_run(common: &Common) -> Result<(), Failure> {
    let (cfg, out) = load(common)?;
    revalidate(&cfg)?;
    let t = cfg.controller.horizon;
    let cell = run_control_cell(&cfg, t, cfg.seed)?;
    let comparator: f64 = cell.comparator_costs.iter().sum();
    let ofu: f64 = cell.ofu.costs().iter().sum();
    let etc: f64 = cell.etc.costs().iter().sum();
    let path = out.join("run.csv");
    write_file(&path, &format_run_csv(&run_rows(&cell.ofu, Some(&cell.comparator_costs))?))?;
    println!("T={t} seed={} regret={:.6} etc_regret={:.6}", cfg.seed, ofu - comparator, etc - comparator);
    println!(
        "epochs={} max_subepochs={} policy_switches={} harmonic_sum={:.6} noise_err_sum={:.6}",
        cell.ofu.epochs(),
        cell.ofu.max_subepochs(),
        cell.ofu.policy_switches(),
        cell.ofu.harmonic_sum,
        cell.ofu.noise_err_sum
    );
    println!("wrote {}", path.display());
    let sys = cfg.build_system()?;
    let h = cfg.controller_config(&sys, t)?.h;
    let v = run_invariant_violations(&cell.ofu, sys.d_x(), sys.d_u(), h, sys.w_bound);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariant(v.join("; ")))
    }
}

fn cmd_sco(common: &Common) -> Result<(), Failure> {
    let (cfg, out) = load(common)?;
    revalidate(&cfg)?;
    let t = cfg.sco.horizon;
    let inst = cfg.build_sco_instance()?;
    cfg.sco_parameters(&inst, t)?;
    let cell = run_sco_cell(&cfg, t, cfg.seed)?;
    let path = out.join("sco.csv");
    write_file(&path, &format_run_csv(&sco_run_rows(&cell.regret)))?;
    println!(
        "T={t} seed={} pseudo_regret={:.6} comparator={:?} harmonic_sum={:.6}",
        cfg.seed, cell.regret.total, cell.regret.comparator, cell.output.run.harmonic_sum
    );
    println!("wrote {}", path.display());
    let bound = 5.0 * inst.d_a() as f64 * (t as f64).ln();
    if cell.output.run.harmonic_sum > bound {
        return Err(Failure::Invariant(format!(
            "harmonic sum {} exceeds 5·d_a·ln T = {bound}",
            cell.output.run.harmonic_sum
        )));
    }
    Ok(())
}

fn parse_grid(s: &str) -> Result<Vec<usize>, Failure> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<usize>()
                .map_err(|e| Failure::Config(format!("configuration error at `--grid`: `{x}`: {e}")))
        })
        .collect()
}

fn cmd_suite(args: &SuiteArgs) -> Result<(), Failure> {
    let (mut cfg, out) = load(&args.common)?;
    if let Some(n) = args.seeds {
        cfg.suite.seeds = n;
    }
    if let Some(w) = args.parallel {
        cfg.suite.parallel = w;
    }
    if let Some(g) = &args.grid {
        cfg.suite.horizons = parse_grid(g)?;
    }
    if args.wallclock {
        cfg.suite.wallclock = true;
    }
    revalidate(&cfg)?;
    let summary = run_experiment_suite(&cfg, Some(Path::new(&out)))?;
    print!("{}", summary.to_csv());
    eprintln!("wrote {}", out.join("summary.csv").display());
    for f in &summary.failures {
        eprintln!("failed: {} T={} seed={}: {}", f.algo.name(), f.horizon, f.seed, f.message);
    }
    if !summary.violations.is_empty() {
        return Err(Failure::Invariant(summary.violations.join("; ")));
    }
    if !summary.failures.is_empty() {
        return Err(Failure::Numerical(format!("{} cells failed", summary.failures.len())));
    }
    Ok(())
}

fn cmd_oracle(args: &OracleArgs) -> Result<(), Failure> {
    let cases = relaxation_equivalence(args.instances, args.seed, &OptimismSettings::default(), args.grid)?;
    let mut worst: f64 = 0.0;
    for (i, c) in cases.iter().enumerate() {
        println!(
            "{i:>3} {:?} decomposition={:.9} brute_force={:.9} gap={:.3e}",
            c.kind,
            c.decomposition,
            c.brute_force,
            c.gap()
        );
        worst = worst.max(c.gap());
    }
    println!("worst gap {worst:.3e} (tolerance {:.1e})", args.tolerance);
    if worst > args.tolerance {
        return Err(Failure::Invariant(format!("gap {worst:.3e} exceeds {:.1e}", args.tolerance)));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Sco(c) => cmd_sco(c),
        Command::Suite(a) => cmd_suite(a),
        Command::Oracle(a) => cmd_oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Invariant(m)) => {
            eprintln!("invariant violation: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(4)
        }
    }
}
