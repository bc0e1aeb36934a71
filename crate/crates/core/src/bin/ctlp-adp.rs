use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;

use ctlp_adp::bench::trial::{max_gain_error, GainTrajectory, GAIN_ERROR_GRID};
use ctlp_adp::bench::{run_table1, table1_trials, Reference, RunConfig, SystemConfig};
use ctlp_adp::data_collection::{build_data_matrices, collect, ExplorationSignal, RowPolicy};
use ctlp_adp::fourier::FourierBasis;
use ctlp_adp::io::{read_gain_schedule, write_json};
use ctlp_adp::periodic_system::{stability_report, CostSpec, CtlpSystem, StabilityReport, DEFAULT_STABILITY_TOL};
use ctlp_adp::pre_solver::{steady_periodic_solution, SteadyOptions};
use ctlp_adp::vectorize::vecs;
use ctlp_adp::vi_adp::{run_algorithm_1, AdpConfig, AdpReport};
use ctlp_adp::{Error, Result, Stage};

#[derive(Parser)]
#[command(name = "ctlp-adp", version, about = "Learn periodic LQ gains from trajectory data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Steady periodic Riccati solution of the configured model.
    SolvePre {
        #[command(flatten)]
        common: Common,
        /// Riccati integration step.
        #[arg(long)]
        step: Option<f64>,
    },
    /// Collect exploration data and build the data matrices.
    Collect {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        adp: AdpArgs,
    },
    /// Learn a periodic gain from data and check the closed loop.
    RunAdp {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        adp: AdpArgs,
    },
    /// Run the benchmark trial list.
    Table1 {
        #[command(flatten)]
        common: Common,
    },
    /// Characteristic multipliers of the plant under a saved gain.
    Stability {
        #[command(flatten)]
        common: Common,
        /// Coefficient CSV of K(t) as written by `run-adp` (w_bar_k.csv).
        /// Open loop when omitted.
        #[arg(long)]
        gain: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Load disturbance of the pendulum plant.
    #[arg(long)]
    zeta: Option<f64>,
    /// Exploration seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct AdpArgs {
    /// Fourier order N.
    #[arg(long)]
    n_fourier: Option<usize>,
    /// Number of sampling intervals M.
    #[arg(long)]
    samples: Option<usize>,
    /// Sampling interval.
    #[arg(long)]
    dt: Option<f64>,
    /// Final algorithmic time s_f.
    #[arg(long)]
    sf: Option<f64>,
    /// Value-iteration step h.
    #[arg(long)]
    step: Option<f64>,
    /// State bound that triggers a reset.
    #[arg(long)]
    beta: Option<f64>,
}

impl AdpArgs {
    fn apply(&self, cfg: &mut AdpConfig) {
        if let Some(v) = self.n_fourier {
            cfg.n_fourier = v;
        }
        if let Some(v) = self.samples {
            cfg.samples = v;
        }
        if let Some(v) = self.dt {
            cfg.dt = v;
        }
        if let Some(v) = self.sf {
            cfg.s_f = v;
        }
        if let Some(v) = self.step {
            cfg.h = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
    }
}

struct Setup {
    cfg: RunConfig,
    sys: CtlpSystem,
    cost: CostSpec,
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_json_file(p).map_err(|e| e.at(Stage::Config))?,
            None => RunConfig::default(),
        };
        if let Some(z) = self.zeta {
            match &mut cfg.system {
                SystemConfig::TriplePendulum { zeta } => *zeta = z,
                _ => {
                    return Err(Error::InvalidConfig("--zeta applies to the pendulum system only".into())
                        .at(Stage::Config))
                }
            }
        }
        if let Some(s) = self.seed {
            cfg.adp.exploration.seed = s;
        }
        Ok(cfg)
    }

    fn setup(&self) -> Result<Setup> {
        let cfg = self.load()?;
        let (sys, cost) = cfg.system.build(&cfg.cost).map_err(|e| e.at(Stage::Config))?;
        fs::create_dir_all(&self.out).map_err(|e| Error::from(e).at(Stage::Io))?;
        Ok(Setup {
            cfg,
            sys,
            cost,
            out: self.out.clone(),
        })
    }
}

fn io<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| e.at(Stage::Io))
}

fn oracle_step(cfg: &RunConfig) -> f64 {
    cfg.oracle_step.unwrap_or(SteadyOptions::default().step)
}

fn write_series_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

fn matrix_header(prefix: &str, rows: usize, cols: usize) -> Vec<String> {
    (0..rows)
        .flat_map(|i| (0..cols).map(move |j| format!("{prefix}_{}_{}", i + 1, j + 1)))
        .collect()
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect()
}

#[derive(Serialize)]
struct SolvePreSummary {
    step: f64,
    horizon_used: f64,
    last_gap: f64,
    gaps: Vec<f64>,
    optimal_closed_loop: StabilityReport,
}

fn solve_pre(common: &Common, step: Option<f64>) -> Result<()> {
    let s = common.setup()?;
    let opts = SteadyOptions {
        step: step.unwrap_or(oracle_step(&s.cfg)),
        ..SteadyOptions::default()
    };
    let st = steady_periodic_solution(&s.sys, &s.cost, &opts).map_err(|e| e.at(Stage::Oracle))?;
    let (n, m) = (s.sys.n(), s.sys.m());
    let grid = st.grid();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n * (n + 1) / 2).map(|i| format!("vecs_p_{i}")));
    io(write_series_csv(
        &s.out.join("p_star.csv"),
        &header,
        grid.iter().zip(st.values()).map(|(&t, p)| {
            let mut row = vec![t];
            row.extend(vecs(p).expect("Riccati iterates are symmetrized").entries().iter());
            row
        }),
    ))?;
    let gains: Vec<DMatrix<f64>> = grid
        .iter()
        .map(|&t| st.gain(&s.sys, &s.cost, t))
        .collect::<Result<_>>()
        .map_err(|e| e.at(Stage::Oracle))?;
    let mut header = vec!["t".to_string()];
    header.extend(matrix_header("kstar", m, n));
    io(write_series_csv(
        &s.out.join("k_star.csv"),
        &header,
        grid.iter().zip(&gains).map(|(&t, k)| {
            let mut row = vec![t];
            row.extend(row_major(k));
            row
        }),
    ))?;
    let schedule = st
        .gain_schedule(&s.sys, &s.cost, 24)
        .map_err(|e| e.at(Stage::Oracle))?;
    let optimal_closed_loop = stability_report(
        &s.sys,
        Some(&schedule),
        0.0,
        s.sys.period() / 4000.0,
        DEFAULT_STABILITY_TOL,
    );
    let summary = SolvePreSummary {
        step: st.step(),
        horizon_used: st.horizon_used(),
        last_gap: st.last_gap(),
        gaps: st.gaps().to_vec(),
        optimal_closed_loop,
    };
    io(write_json(&s.out.join("solve_pre.json"), &summary))?;
    println!(
        "steady solution: horizon {:.4}, last gap {:.3e}, optimal closed-loop max multiplier {:.4e}",
        summary.horizon_used, summary.last_gap, summary.optimal_closed_loop.max_multiplier
    );
    println!("wrote p_star.csv, k_star.csv, solve_pre.json to {}", s.out.display());
    Ok(())
}

#[derive(Serialize)]
struct CollectSummary {
    seed: u64,
    reset_count: usize,
    reset_times: Vec<f64>,
    rows: usize,
    unknowns: usize,
    sigma_scaled: f64,
    config: AdpConfig,
}

fn collect_cmd(common: &Common, adp: &AdpArgs) -> Result<()> {
    let mut s = common.setup()?;
    adp.apply(&mut s.cfg.adp);
    let cfg = &s.cfg.adp;
    cfg.validate().map_err(|e| e.at(Stage::Config))?;
    let (n, m) = (s.sys.n(), s.sys.m());
    let signal = ExplorationSignal::new(&cfg.exploration, m).map_err(|e| e.at(Stage::Collect))?;
    let log = collect(&s.sys, &signal, &cfg.collect_config(n)).map_err(|e| e.at(Stage::Collect))?;
    io(log.write_csv(&s.out.join("trajectory.csv")))?;
    let basis = FourierBasis::from_period(cfg.n_fourier, s.sys.period()).map_err(|e| e.at(Stage::Config))?;
    // data-only run: keep under-determined matrices, the summary shows rows vs unknowns
    let dm = build_data_matrices(&log, &basis, &s.cost, RowPolicy::Permit).map_err(|e| e.at(Stage::DataMatrices))?;
    io(dm.write_csv(&s.out))?;
    let summary = CollectSummary {
        seed: cfg.exploration.seed,
        reset_count: log.reset_count(),
        reset_times: log.reset_times.clone(),
        rows: dm.rows(),
        unknowns: dm.unknowns(),
        sigma_scaled: dm.sigma_scaled,
        config: cfg.clone(),
    };
    io(write_json(&s.out.join("collect.json"), &summary))?;
    println!(
        "collected {} intervals, {} resets; Θ is {}×{}, σ_min(ΘᵀΘ)/rows = {:.3e}",
        cfg.samples,
        summary.reset_count,
        summary.rows,
        summary.unknowns,
        summary.sigma_scaled
    );
    println!("wrote trajectory.csv, theta.csv, gamma.csv, collect.json to {}", s.out.display());
    Ok(())
}

#[derive(Serialize)]
struct RunSummary {
    stable: bool,
    max_gain_error: Option<f64>,
    gain_error_grid: usize,
    seed: u64,
    diagnostics: AdpReport,
    config: AdpConfig,
}

fn run_adp(common: &Common, adp: &AdpArgs) -> Result<()> {
    let mut s = common.setup()?;
    adp.apply(&mut s.cfg.adp);
    let cfg = s.cfg.adp.clone();
    let run = run_algorithm_1(&s.sys, &s.cost, &cfg)?;
    io(run.result.write_csv(&s.out))?;
    io(run.solution.write_gains_csv(&s.out.join("vi_gains.csv")))?;
    let k_bar = run.result.gain_schedule();
    // the model is only used here, to score the learned gain
    let max_err = match Reference::new(s.sys.clone(), s.cost.clone(), oracle_step(&s.cfg)) {
        Ok(reference) => {
            io(GainTrajectory::sample(&k_bar, &reference, GAIN_ERROR_GRID).write_csv(&s.out.join("gain_trajectory.csv")))?;
            Some(max_gain_error(
                |t| k_bar.eval(t),
                |t| reference.k_star(t),
                s.sys.period(),
                GAIN_ERROR_GRID,
            ))
        }
        Err(e) => {
            eprintln!("warning: no reference gain: {e}");
            None
        }
    };
    let summary = RunSummary {
        stable: run.report.stability.stable,
        max_gain_error: max_err,
        gain_error_grid: GAIN_ERROR_GRID,
        seed: cfg.exploration.seed,
        diagnostics: run.report,
        config: cfg,
    };
    io(write_json(&s.out.join("summary.json"), &summary))?;
    println!(
        "closed loop {} (max multiplier {:.4e}), resets {}, runtime {:.1} s",
        if summary.stable { "stable" } else { "UNSTABLE" },
        summary.diagnostics.stability.max_multiplier,
        summary.diagnostics.reset_count,
        summary.diagnostics.runtime_s
    );
    if let Some(e) = max_err {
        println!("max_t ‖K̄(t) − K*(t)‖_F = {e:.4}");
    }
    println!("wrote w_bar_h.csv, w_bar_k.csv, vi_gains.csv, summary.json to {}", s.out.display());
    Ok(())
}

fn table1(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    if common.zeta.is_some() {
        return Err(Error::InvalidConfig("table1 takes ζ from each trial; drop --zeta".into()).at(Stage::Config));
    }
    let mut trials = cfg.trials.clone().unwrap_or_else(table1_trials);
    if let Some(seed) = common.seed {
        for t in &mut trials {
            t.seed = seed;
        }
    }
    io(fs::create_dir_all(&common.out).map_err(Error::from))?;
    let reports = run_table1(&trials, oracle_step(&cfg), Some(&common.out))?;
    debug_assert_eq!(reports.len(), trials.len());
    print!("{}", io(fs::read_to_string(common.out.join("table1.csv")).map_err(Error::from))?);
    println!("wrote table1.csv, table1.json and per-trial gain CSVs to {}", common.out.display());
    Ok(())
}

#[derive(Serialize)]
struct StabilitySummary {
    gain: Option<PathBuf>,
    report: StabilityReport,
}

fn stability(common: &Common, gain: Option<&Path>) -> Result<()> {
    let s = common.setup()?;
    let schedule = match gain {
        Some(p) => Some(io(read_gain_schedule(p, s.sys.m(), s.sys.n(), s.sys.period()))?),
        None => None,
    };
    let report = stability_report(
        &s.sys,
        schedule.as_ref(),
        0.0,
        s.sys.period() / s.cfg.adp.stability_steps as f64,
        DEFAULT_STABILITY_TOL,
    );
    println!(
        "{}: max multiplier {:.6e}",
        if report.stable { "stable" } else { "unstable" },
        report.max_multiplier
    );
    println!(
        "multipliers: {}",
        report.multipliers.iter().map(|v| format!("{v:.6e}")).collect::<Vec<_>>().join(", ")
    );
    let summary = StabilitySummary {
        gain: gain.map(Path::to_path_buf),
        report,
    };
    io(write_json(&s.out.join("stability.json"), &summary))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::SolvePre { common, step } => solve_pre(common, *step),
        Command::Collect { common, adp } => collect_cmd(common, adp),
        Command::RunAdp { common, adp } => run_adp(common, adp),
        Command::Table1 { common } => table1(common),
        Command::Stability { common, gain } => stability(common, gain.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let e = if e.stage().is_some() { e } else { e.at(Stage::Config) };
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
