//! Benchmark trials on the triple inverted pendulum.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bench::baseline::mbplq_controller;
use crate::bench::config::CostConfig;
use crate::bench::pendulum::build_triple_pendulum;
use crate::data_collection::{ExplorationConfig, RowPolicy};
use crate::error::{Error, Result, Stage, StageExt};
use crate::io::write_json;
use crate::periodic_system::{stability_report, CostSpec, CtlpSystem, GainSchedule, DEFAULT_STABILITY_TOL};
use crate::pre_solver::{steady_periodic_solution, SteadyOptions, SteadyPeriodicSolution};
use crate::vi_adp::{run_algorithm_1, AdpConfig, AdpReport, LbarRule, DEFAULT_PERIODICITY_TOL, DEFAULT_VI_BLOWUP_BOUND};

/// Grid used for `max_t ‖K̄(t) − K*(t)‖_F` over one period.
pub const GAIN_ERROR_GRID: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// Learned from data.
    Adp,
    /// Riccati gain of the nominal (`ζ = nominal_zeta`) model.
    Mbplq,
}

/// One benchmark row. The learning fields are ignored for [`ControllerKind::Mbplq`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialConfig {
    pub name: String,
    pub controller: ControllerKind,
    pub n_fourier: usize,
    pub samples: usize,
    pub s_f: f64,
    /// Load disturbance of the plant under control.
    pub zeta: f64,
    pub dt: f64,
    pub h: f64,
    pub seed: u64,
    pub beta: f64,
    pub l_bar: LbarRule,
    pub substeps: usize,
    /// Rank threshold of the final fit; 0 reports the diagnostic without
    /// enforcing it.
    pub alpha: f64,
    pub enforce_window_bounds: bool,
    pub row_policy: RowPolicy,
    /// Disturbance assumed by the model-based baseline.
    pub nominal_zeta: f64,
    pub cost: CostConfig,
}

impl Default for TrialConfig {
    fn default() -> Self {
        let adp = AdpConfig::default();
        TrialConfig {
            name: "trial".into(),
            controller: ControllerKind::Adp,
            n_fourier: adp.n_fourier,
            samples: adp.samples,
            s_f: adp.s_f,
            zeta: 1.0,
            dt: adp.dt,
            h: adp.h,
            seed: 0,
            beta: adp.beta,
            l_bar: LbarRule::ThirdOfHorizon,
            substeps: adp.substeps,
            alpha: 0.0,
            enforce_window_bounds: false,
            row_policy: RowPolicy::Permit,
            nominal_zeta: 0.0,
            cost: CostConfig::default(),
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta >= 0.0) || !(self.nominal_zeta >= 0.0) {
            return Err(Error::InvalidConfig(format!("{}: ζ must be non-negative", self.name)));
        }
        if !(self.h > 0.0) {
            return Err(Error::InvalidConfig(format!("{}: h must be positive", self.name)));
        }
        if self.controller == ControllerKind::Adp {
            if self.samples == 0 || !(self.s_f > 0.0) || !(self.dt > 0.0) || !(self.beta > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{}: samples, s_f, dt and beta must be positive",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn adp_config(&self) -> AdpConfig {
        AdpConfig {
            n_fourier: self.n_fourier,
            dt: self.dt,
            samples: self.samples,
            s_f: self.s_f,
            h: self.h,
            l_bar: self.l_bar,
            exploration: ExplorationConfig {
                seed: self.seed,
                ..ExplorationConfig::default()
            },
            beta: self.beta,
            x_reset: None,
            substeps: self.substeps,
            alpha: self.alpha,
            blowup_bound: DEFAULT_VI_BLOWUP_BOUND,
            periodicity_tol: DEFAULT_PERIODICITY_TOL,
            row_policy: self.row_policy,
            enforce_window_bounds: self.enforce_window_bounds,
            stability_steps: AdpConfig::default().stability_steps,
        }
    }
}

/// The eight standard rows: six learned controllers varying `N`, `s_f`
/// and `M`, and the nominal baseline on light and heavy loads.
pub fn table1_trials() -> Vec<TrialConfig> {
    let adp = |name: &str, n_fourier: usize, samples: usize, s_f: f64| TrialConfig {
        name: name.into(),
        n_fourier,
        samples,
        s_f,
        ..TrialConfig::default()
    };
    let mbplq = |name: &str, zeta: f64| TrialConfig {
        name: name.into(),
        controller: ControllerKind::Mbplq,
        zeta,
        ..TrialConfig::default()
    };
    vec![
        adp("1", 6, 800, 40.0),
        adp("2", 3, 800, 40.0),
        adp("3", 1, 800, 40.0),
        adp("4", 6, 800, 12.0),
        adp("5", 6, 800, 8.0),
        adp("6", 6, 400, 40.0),
        mbplq("7", 0.1),
        mbplq("8", 1.0),
    ]
}

/// Optimal gain of the plant under control, computed from the model.
pub struct Reference {
    pub sys: CtlpSystem,
    pub cost: CostSpec,
    pub steady: SteadyPeriodicSolution,
}

impl Reference {
    pub fn new(sys: CtlpSystem, cost: CostSpec, step: f64) -> Result<Self> {
        let opts = SteadyOptions {
            step,
            ..SteadyOptions::default()
        };
        let steady = steady_periodic_solution(&sys, &cost, &opts).stage(Stage::Oracle)?;
        Ok(Reference { sys, cost, steady })
    }

    pub fn k_star(&self, t: f64) -> DMatrix<f64> {
        self.steady
            .gain(&self.sys, &self.cost, t)
            .expect("R validated positive definite")
    }
}

/// `max_t ‖K̄(t) − K*(t)‖_F` over `points` uniform samples of one period.
pub fn max_gain_error(
    learned: impl Fn(f64) -> DMatrix<f64>,
    optimal: impl Fn(f64) -> DMatrix<f64>,
    period: f64,
    points: usize,
) -> f64 {
    (0..points)
        .map(|i| {
            let t = period * i as f64 / points as f64;
            (learned(t) - optimal(t)).norm()
        })
        .fold(0.0, f64::max)
}

/// `K̄(t)` and `K*(t)` sampled over one period.
#[derive(Debug, Clone)]
pub struct GainTrajectory {
    pub times: Vec<f64>,
    pub learned: Vec<DMatrix<f64>>,
    pub optimal: Vec<DMatrix<f64>>,
}

impl GainTrajectory {
    pub fn sample(gain: &GainSchedule, reference: &Reference, points: usize) -> Self {
        let period = reference.sys.period();
        let times: Vec<f64> = (0..=points).map(|i| period * i as f64 / points as f64).collect();
        GainTrajectory {
            learned: times.iter().map(|&t| gain.eval(t)).collect(),
            optimal: times.iter().map(|&t| reference.k_star(t)).collect(),
            times,
        }
    }

    /// Columns `t, k_<i>_<j>…, kstar_<i>_<j>…` (1-based, row-major).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let (m, n) = self.learned.first().map(|k| k.shape()).unwrap_or((0, 0));
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["t".to_string()];
        for prefix in ["k", "kstar"] {
            for i in 0..m {
                for j in 0..n {
                    header.push(format!("{prefix}_{}_{}", i + 1, j + 1));
                }
            }
        }
        w.write_record(&header)?;
        for (k, &t) in self.times.iter().enumerate() {
            let mut rec = vec![format!("{t:e}")];
            for g in [&self.learned[k], &self.optimal[k]] {
                for i in 0..m {
                    for j in 0..n {
                        rec.push(format!("{:e}", g[(i, j)]));
                    }
                }
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialReport {
    pub name: String,
    pub config: TrialConfig,
    pub stable: bool,
    pub reset_count: Option<usize>,
    /// `max_t ‖K̄(t) − K*(t)‖_F`; absent for the baseline and failed runs.
    pub max_gain_error: Option<f64>,
    pub gain_error_grid: usize,
    pub max_multiplier: Option<f64>,
    pub runtime_s: f64,
    /// Stage-tagged failure message.
    pub error: Option<String>,
    pub diagnostics: Option<AdpReport>,
}

pub struct TrialOutcome {
    pub report: TrialReport,
    pub gains: Option<GainTrajectory>,
}

/// Runs one trial against a precomputed reference for the same `ζ`.
///
/// Learning failures are recorded in the report, not returned.
pub fn run_trial(cfg: &TrialConfig, reference: &Reference) -> Result<TrialOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let period = reference.sys.period();
    let mut report = TrialReport {
        name: cfg.name.clone(),
        config: cfg.clone(),
        stable: false,
        reset_count: None,
        max_gain_error: None,
        gain_error_grid: GAIN_ERROR_GRID,
        max_multiplier: None,
        runtime_s: 0.0,
        error: None,
        diagnostics: None,
    };
    let mut gains = None;
    match cfg.controller {
        ControllerKind::Adp => match run_algorithm_1(&reference.sys, &reference.cost, &cfg.adp_config()) {
            Ok(run) => {
                let k_bar = run.result.gain_schedule();
                report.stable = run.report.stability.stable;
                report.max_multiplier = Some(run.report.stability.max_multiplier);
                report.reset_count = Some(run.report.reset_count);
                report.max_gain_error = Some(max_gain_error(
                    |t| k_bar.eval(t),
                    |t| reference.k_star(t),
                    period,
                    GAIN_ERROR_GRID,
                ));
                report.diagnostics = Some(run.report);
                gains = Some(GainTrajectory::sample(&k_bar, reference, GAIN_ERROR_GRID));
            }
            Err(e) => report.error = Some(e.to_string()),
        },
        ControllerKind::Mbplq => {
            let (nominal, _) = build_triple_pendulum(cfg.nominal_zeta)?;
            let gain = mbplq_controller(&nominal, &reference.cost, cfg.h)?;
            let rep = stability_report(
                &reference.sys,
                Some(&gain),
                0.0,
                period / AdpConfig::default().stability_steps as f64,
                DEFAULT_STABILITY_TOL,
            );
            report.stable = rep.stable;
            report.max_multiplier = Some(rep.max_multiplier);
            gains = Some(GainTrajectory::sample(&gain, reference, GAIN_ERROR_GRID));
        }
    }
    report.runtime_s = started.elapsed().as_secs_f64();
    Ok(TrialOutcome { report, gains })
}

/// Fixed-format row of the summary table.
#[derive(Debug, Serialize)]
struct TableRow<'a> {
    trial: &'a str,
    controller: &'a str,
    n_fourier: String,
    samples: String,
    s_f: String,
    zeta: f64,
    resets: String,
    stable: &'a str,
    max_gain_error: String,
    runtime_s: String,
    error: String,
}

fn table_row(r: &TrialReport) -> TableRow<'_> {
    let adp = r.config.controller == ControllerKind::Adp;
    let opt = |cond: bool, s: String| if cond { s } else { String::new() };
    TableRow {
        trial: &r.name,
        controller: if adp { "ADP" } else { "MBPLQ" },
        n_fourier: opt(adp, r.config.n_fourier.to_string()),
        samples: opt(adp, r.config.samples.to_string()),
        s_f: opt(adp, r.config.s_f.to_string()),
        zeta: r.config.zeta,
        resets: r.reset_count.map(|c| c.to_string()).unwrap_or_default(),
        stable: if r.stable { "Yes" } else { "No" },
        max_gain_error: r.max_gain_error.map(|e| format!("{e:.4}")).unwrap_or_default(),
        runtime_s: format!("{:.2}", r.runtime_s),
        error: r.error.clone().unwrap_or_default(),
    }
}

/// Writes the summary table as CSV.
pub fn write_table_csv(reports: &[TrialReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        w.serialize(table_row(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every trial (in parallel) and, with `out`, writes `table1.csv`,
/// `table1.json` and `trial_<name>_gains.csv`.
///
/// References `K*` are computed once per distinct `(ζ, cost)`. A failing
/// trial is recorded in its report and the rest continue.
pub fn run_table1(trials: &[TrialConfig], oracle_step: f64, out: Option<&Path>) -> Result<Vec<TrialReport>> {
    for t in trials {
        t.validate()?;
    }
    let mut keys: Vec<(f64, CostConfig)> = Vec::new();
    for t in trials {
        if !keys.iter().any(|(z, c)| *z == t.zeta && *c == t.cost) {
            keys.push((t.zeta, t.cost.clone()));
        }
    }
    let references = keys
        .iter()
        .map(|(zeta, cost_cfg)| {
            let (sys, _) = build_triple_pendulum(*zeta)?;
            let cost = cost_cfg.build(sys.n(), sys.m(), sys.period())?;
            Reference::new(sys, cost, oracle_step)
        })
        .collect::<Result<Vec<_>>>()?;
    let reference_for = |t: &TrialConfig| {
        let idx = keys
            .iter()
            .position(|(z, c)| *z == t.zeta && *c == t.cost)
            .expect("every trial has a reference");
        &references[idx]
    };

    let outcomes: Vec<Result<TrialOutcome>> = std::thread::scope(|scope| {
        let handles: Vec<_> = trials
            .iter()
            .map(|t| scope.spawn(|| run_trial(t, reference_for(t))))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::InvalidConfig("trial thread panicked".into()))))
            .collect()
    });

    let mut reports = Vec::with_capacity(trials.len());
    for (t, outcome) in trials.iter().zip(outcomes) {
        match outcome {
            Ok(o) => {
                if let (Some(dir), Some(g)) = (out, &o.gains) {
                    g.write_csv(&dir.join(format!("trial_{}_gains.csv", t.name))).stage(Stage::Io)?;
                }
                reports.push(o.report);
            }
            Err(e) => reports.push(TrialReport {
                name: t.name.clone(),
                config: t.clone(),
                stable: false,
                reset_count: None,
                max_gain_error: None,
                gain_error_grid: GAIN_ERROR_GRID,
                max_multiplier: None,
                runtime_s: 0.0,
                error: Some(e.to_string()),
                diagnostics: None,
            }),
        }
    }
    if let Some(dir) = out {
        write_table_csv(&reports, &dir.join("table1.csv")).stage(Stage::Io)?;
        write_json(&dir.join("table1.json"), &reports).stage(Stage::Io)?;
    }
    Ok(reports)
}
