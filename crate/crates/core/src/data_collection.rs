//! Exploration, trajectory logging with state resets, and assembly of the
//! data matrices `Θ` and `Γ`.
//!
//! For a value matrix `P`, `H(t) = AᵀP + PA` and `K(t) = R⁻¹BᵀP`, every
//! sampling interval `[t_j, t_{j+1}]` of a trajectory driven by `u₀` gives
//!
//! ```text
//! (x̃(t_{j+1}) − x̃(t_j))ᵀ vecs(P) = ∫ x̃ᵀ vecs(H) dt + ∫ (xᵀ ⊗ 2u₀ᵀR) vec(K) dt
//! ```
//!
//! Expanding `vecs(H)` and `vec(K)` in the Fourier basis turns the right-hand
//! side into a row of `Θ` times the stacked coefficients; the left-hand side
//! is a row of `Γ` times `vecs(P)`. None of this needs `A` or `B`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{coefficients_by_quadrature, scaled_min_gram_eigenvalue, FourierBasis};
use crate::io::write_matrix_csv;
use crate::periodic_system::{CostSpec, CtlpSystem, Plant};
use crate::pre_solver::hk_from_p;
use crate::vectorize::{quad_vec, quad_vec_into, sym_len, vec, vecs, vecs_symmetrized};

/// Sum-of-sinusoids exploration input: component `i` is
/// `amplitude · Σ_j sin(ω_{i,j} t)` with `ω_{i,j}` uniform on `freq_range`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationConfig {
    pub amplitude: f64,
    pub num_sinusoids: usize,
    /// `[lo, hi]` in rad/s.
    pub freq_range: [f64; 2],
    pub seed: u64,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        ExplorationConfig {
            amplitude: 0.2,
            num_sinusoids: 500,
            freq_range: [-500.0, 500.0],
            seed: 0,
        }
    }
}

impl ExplorationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "exploration amplitude must be positive, got {}",
                self.amplitude
            )));
        }
        let [lo, hi] = self.freq_range;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "exploration frequency range must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        if self.num_sinusoids == 0 {
            return Err(Error::InvalidConfig("need at least one sinusoid".into()));
        }
        Ok(())
    }
}

/// An exploration input with its frequencies drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSignal {
    pub amplitude: f64,
    /// `frequencies[i][j] = ω_{i,j}`.
    pub frequencies: Vec<Vec<f64>>,
}

impl ExplorationSignal {
    /// Draws `m × num_sinusoids` frequencies from the seeded generator.
    pub fn new(cfg: &ExplorationConfig, m: usize) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let dist = Uniform::new(cfg.freq_range[0], cfg.freq_range[1])
            .map_err(|e| Error::InvalidConfig(format!("frequency range: {e}")))?;
        let frequencies = (0..m)
            .map(|_| (0..cfg.num_sinusoids).map(|_| dist.sample(&mut rng)).collect())
            .collect();
        Ok(ExplorationSignal {
            amplitude: cfg.amplitude,
            frequencies,
        })
    }

    pub fn from_frequencies(amplitude: f64, frequencies: Vec<Vec<f64>>) -> Self {
        ExplorationSignal {
            amplitude,
            frequencies,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.frequencies.len()
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.frequencies.len(),
            self.frequencies
                .iter()
                .map(|row| self.amplitude * row.iter().map(|w| (w * t).sin()).sum::<f64>()),
        )
    }

    /// `u(t0 + k·dt)` for `k = 0..count`, using a phasor recurrence anchored
    /// at `t0`. Cheaper than [`eval`](Self::eval) per sample by a factor of
    /// a few, with drift far below 1e-12 for a few thousand samples.
    pub fn sample_uniform(&self, t0: f64, dt: f64, count: usize) -> Vec<DVector<f64>> {
        let m = self.frequencies.len();
        let mut flat = vec![0.0; count * m];
        for (i, row) in self.frequencies.iter().enumerate() {
            for &w in row {
                let (mut s, mut c) = (w * t0).sin_cos();
                let (rs, rc) = (w * dt).sin_cos();
                for k in 0..count {
                    flat[k * m + i] += s;
                    let s_next = s * rc + c * rs;
                    c = c * rc - s * rs;
                    s = s_next;
                }
            }
        }
        flat.chunks(m.max(1))
            .take(count)
            .map(|chunk| DVector::from_iterator(m, chunk.iter().map(|v| self.amplitude * v)))
            .collect()
    }
}

/// Sampling, bounding and reset settings for data collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectConfig {
    /// Sampling interval `Δt`.
    pub dt: f64,
    /// Number of sampling intervals `M`.
    pub samples: usize,
    /// State-norm bound `β`; exceeding it at a sampling instant triggers a reset.
    pub beta: f64,
    /// Reset (and initial) state.
    pub x_reset: Vec<f64>,
    /// RK4 steps per sampling interval.
    pub substeps: usize,
}

/// Smallest accepted number of fine steps per sampling interval.
pub const MIN_SUBSTEPS: usize = 10;

impl CollectConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!("Δt must be positive, got {}", self.dt)));
        }
        if self.samples == 0 {
            return Err(Error::InvalidConfig("need at least one sampling interval".into()));
        }
        if self.substeps < MIN_SUBSTEPS || self.substeps % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "substeps must be even and at least {MIN_SUBSTEPS}, got {}",
                self.substeps
            )));
        }
        if self.x_reset.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "reset state has length {}, plant has {n} states",
                self.x_reset.len()
            )));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidConfig(format!("β must be positive, got {}", self.beta)));
        }
        let reset_norm = DVector::from_column_slice(&self.x_reset).norm();
        if reset_norm > self.beta {
            return Err(Error::InvalidConfig(format!(
                "reset state norm {reset_norm} exceeds β = {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// One sampling interval `[t_j, t_j + Δt]` on the fine grid.
#[derive(Debug, Clone)]
pub struct Interval {
    pub index: usize,
    pub t_start: f64,
    /// `substeps + 1` states, endpoints included.
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    /// `false` when the state left the `β` ball inside the interval.
    pub valid: bool,
}

impl Interval {
    pub fn times(&self, fine_step: f64) -> impl Iterator<Item = f64> + '_ {
        (0..self.states.len()).map(move |i| self.t_start + i as f64 * fine_step)
    }
}

/// Sampled input/state data of one exploration run.
#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    pub dt: f64,
    pub substeps: usize,
    pub beta: f64,
    pub n: usize,
    pub m: usize,
    pub intervals: Vec<Interval>,
    /// Sampling instants `t_j` at which the state was reset.
    pub reset_times: Vec<f64>,
    pub x_reset: DVector<f64>,
}

impl TrajectoryLog {
    pub fn fine_step(&self) -> f64 {
        self.dt / self.substeps as f64
    }

    pub fn reset_count(&self) -> usize {
        self.reset_times.len()
    }

    pub fn valid_intervals(&self) -> impl Iterator<Item = &Interval> {
        self.intervals.iter().filter(|iv| iv.valid)
    }

    /// Writes `t, x1..xn, u1..um, reset_flag` on the fine grid.
    ///
    /// A reset shows up as two rows at the same `t`: the pre-reset state with
    /// flag 0, then the reset state with flag 1.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.n).map(|i| format!("x{i}")));
        header.extend((1..=self.m).map(|i| format!("u{i}")));
        header.push("reset_flag".into());
        w.write_record(&header)?;
        let h = self.fine_step();
        let mut write_row = |t: f64, x: &DVector<f64>, u: &DVector<f64>, flag: u8| -> Result<()> {
            let mut rec = vec![format!("{t:e}")];
            rec.extend(x.iter().map(|v| format!("{v:e}")));
            rec.extend(u.iter().map(|v| format!("{v:e}")));
            rec.push(flag.to_string());
            w.write_record(&rec)?;
            Ok(())
        };
        let reset_at = |t: f64| self.reset_times.iter().any(|&tr| (tr - t).abs() < 1e-9 * self.dt);
        for (idx, iv) in self.intervals.iter().enumerate() {
            let starts_after_reset = idx > 0 && reset_at(iv.t_start);
            let s = iv.states.len() - 1;
            for (i, t) in iv.times(h).enumerate().take(s) {
                let flag = u8::from(i == 0 && starts_after_reset);
                write_row(t, &iv.states[i], &iv.inputs[i], flag)?;
            }
            let t_end = iv.t_start + self.dt;
            if idx + 1 == self.intervals.len() || reset_at(t_end) {
                write_row(t_end, &iv.states[s], &iv.inputs[s], 0)?;
            }
            if idx + 1 == self.intervals.len() && reset_at(t_end) {
                write_row(t_end, &self.x_reset, &iv.inputs[s], 1)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the plant under the exploration input for `M` sampling intervals,
/// resetting the state to `x_reset` whenever `|x(t_j)| > β`.
///
/// Intervals during which the state leaves the `β` ball are marked invalid
/// and never contribute data rows; in particular the interval that ends in a
/// reset is always dropped.
pub fn collect<P: Plant + ?Sized>(
    plant: &P,
    signal: &ExplorationSignal,
    cfg: &CollectConfig,
) -> Result<TrajectoryLog> {
    let n = plant.state_dim();
    let m = plant.input_dim();
    cfg.validate(n)?;
    if signal.input_dim() != m {
        return Err(Error::DimensionMismatch(format!(
            "exploration signal has {} channels, plant has {m} inputs",
            signal.input_dim()
        )));
    }
    let s = cfg.substeps;
    let fine = cfg.dt / s as f64;
    let half = 0.5 * fine;
    let x_reset = DVector::from_column_slice(&cfg.x_reset);
    let mut x = x_reset.clone();
    let mut intervals = Vec::with_capacity(cfg.samples);
    let mut reset_times = Vec::new();

    for j in 0..cfg.samples {
        let t_start = j as f64 * cfg.dt;
        let u_half = signal.sample_uniform(t_start, half, 2 * s + 1);
        let law = |t: f64, _x: &DVector<f64>| {
            let idx = ((t - t_start) / half).round() as usize;
            u_half[idx.min(2 * s)].clone()
        };
        let mut states = Vec::with_capacity(s + 1);
        let mut inputs = Vec::with_capacity(s + 1);
        states.push(x.clone());
        inputs.push(u_half[0].clone());
        let mut valid = x.norm() <= cfg.beta;
        for i in 0..s {
            let t = t_start + i as f64 * fine;
            x = plant.advance(t, &x, fine, &law);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { t: t + fine });
            }
            valid &= x.norm() <= cfg.beta;
            states.push(x.clone());
            inputs.push(u_half[2 * (i + 1)].clone());
        }
        intervals.push(Interval {
            index: j,
            t_start,
            states,
            inputs,
            valid,
        });
        if x.norm() > cfg.beta {
            x = x_reset.clone();
            reset_times.push(t_start + cfg.dt);
        }
    }

    Ok(TrajectoryLog {
        dt: cfg.dt,
        substeps: s,
        beta: cfg.beta,
        n,
        m,
        intervals,
        reset_times,
        x_reset,
    })
}

/// What to do when there are not more valid rows than unknowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RowPolicy {
    /// Fail with [`Error::TooFewRows`].
    #[default]
    Require,
    /// Build the (under-determined) matrices anyway.
    Permit,
}

/// `Θ` and `Γ` of the stacked data equation, with the excitation diagnostic.
#[derive(Debug, Clone)]
pub struct DataMatrices {
    /// `rows × (n₁+n₂)(2N+1)`.
    pub theta: DMatrix<f64>,
    /// `rows × n₁`; row `j` is `x̃(t_{j+1})ᵀ − x̃(t_j)ᵀ`.
    pub gamma: DMatrix<f64>,
    pub n: usize,
    pub m: usize,
    pub basis: FourierBasis,
    /// `σ_min(ΘᵀΘ)/rows`; zero when under-determined.
    pub sigma_scaled: f64,
    /// Index `j` of the sampling interval behind each row.
    pub source_intervals: Vec<usize>,
}

impl DataMatrices {
    pub fn n1(&self) -> usize {
        sym_len(self.n)
    }

    pub fn n2(&self) -> usize {
        self.n * self.m
    }

    pub fn rows(&self) -> usize {
        self.theta.nrows()
    }

    /// Number of unknown Fourier coefficients, `(n₁+n₂)(2N+1)`.
    pub fn unknowns(&self) -> usize {
        self.theta.ncols()
    }

    /// Writes `theta.csv` and `gamma.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_matrix_csv(&dir.join("theta.csv"), &self.theta)?;
        write_matrix_csv(&dir.join("gamma.csv"), &self.gamma)?;
        Ok(())
    }
}

/// Number of unknowns for `n` states, `m` inputs and basis order `N`.
pub fn unknown_count(n: usize, m: usize, order: usize) -> usize {
    (sym_len(n) + n * m) * (2 * order + 1)
}

/// Assembles one row of `Θ` and `Γ` from an interval, with composite
/// trapezoid quadrature on the fine grid.
/// Composite Simpson weight of node `i` out of `0..=last` (`last` even).
pub(crate) fn simpson_weight(i: usize, last: usize, step: f64) -> f64 {
    let c = if i == 0 || i == last {
        1.0
    } else if i % 2 == 1 {
        4.0
    } else {
        2.0
    };
    c * step / 3.0
}

fn interval_row(
    iv: &Interval,
    fine: f64,
    basis: &FourierBasis,
    cost: &CostSpec,
    theta_row: &mut [f64],
    gamma_row: &mut [f64],
) {
    let n = iv.states[0].len();
    let n1 = sym_len(n);
    let m = iv.inputs[0].len();
    let n2 = n * m;
    let d = basis.dim();
    let (ifx, ifxu) = theta_row.split_at_mut(n1 * d);
    ifx.fill(0.0);
    ifxu.fill(0.0);

    let mut phi = vec![0.0; d];
    let mut xq = vec![0.0; n1];
    let mut xu = vec![0.0; n2];
    let last = iv.states.len() - 1;
    for (i, (x, u)) in iv.states.iter().zip(&iv.inputs).enumerate() {
        let t = iv.t_start + i as f64 * fine;
        let w = simpson_weight(i, last, fine);
        basis.eval_into(t, &mut phi);
        quad_vec_into(x.as_slice(), &mut xq);
        let ru2 = cost.r(t) * u * 2.0;
        for (p, xp) in x.iter().enumerate() {
            for (l, rl) in ru2.iter().enumerate() {
                xu[p * m + l] = xp * rl;
            }
        }
        for k in 0..d {
            let wk = w * phi[k];
            for (dst, src) in ifx[k * n1..(k + 1) * n1].iter_mut().zip(&xq) {
                *dst += wk * src;
            }
            for (dst, src) in ifxu[k * n2..(k + 1) * n2].iter_mut().zip(&xu) {
                *dst += wk * src;
            }
        }
    }
    let start = quad_vec(&iv.states[0]);
    let end = quad_vec(&iv.states[last]);
    for (g, (e, s)) in gamma_row.iter_mut().zip(end.iter().zip(start.iter())) {
        *g = e - s;
    }
}

/// Builds `Θ`, `Γ` from every valid interval of the log.
pub fn build_data_matrices(
    log: &TrajectoryLog,
    basis: &FourierBasis,
    cost: &CostSpec,
    policy: RowPolicy,
) -> Result<DataMatrices> {
    cost.check_dims(log.n, log.m)?;
    let n1 = sym_len(log.n);
    let cols = unknown_count(log.n, log.m, basis.order);
    let valid: Vec<&Interval> = log.valid_intervals().collect();
    let rows = valid.len();
    if rows == 0 || (policy == RowPolicy::Require && rows <= cols) {
        return Err(Error::TooFewRows {
            rows,
            required: cols,
        });
    }
    let fine = log.fine_step();
    let mut theta = DMatrix::zeros(rows, cols);
    let mut gamma = DMatrix::zeros(rows, n1);
    let mut trow = vec![0.0; cols];
    let mut grow = vec![0.0; n1];
    for (r, iv) in valid.iter().enumerate() {
        interval_row(iv, fine, basis, cost, &mut trow, &mut grow);
        for (c, v) in trow.iter().enumerate() {
            theta[(r, c)] = *v;
        }
        for (c, v) in grow.iter().enumerate() {
            gamma[(r, c)] = *v;
        }
    }
    let sigma_scaled = scaled_min_gram_eigenvalue(&theta);
    Ok(DataMatrices {
        theta,
        gamma,
        n: log.n,
        m: log.m,
        basis: *basis,
        sigma_scaled,
        source_intervals: valid.iter().map(|iv| iv.index).collect(),
    })
}

/// Model-based check of the data equation: with `W^H`, `W^K` the Fourier
/// coefficients of `vecs(AᵀP + PA)` and `vec(R⁻¹BᵀP)`, returns
/// `‖Θw − Γ vecs(P)‖ / ‖Γ vecs(P)‖`. Needs the model, so it is a test and
/// diagnostics tool only.
pub fn verify_data_equation(
    dm: &DataMatrices,
    sys: &CtlpSystem,
    cost: &CostSpec,
    p: &DMatrix<f64>,
) -> Result<f64> {
    let vp = vecs(p)?;
    let quad_points = (16 * dm.basis.dim()).max(256);
    let wh = coefficients_by_quadrature(
        |t| {
            let (h, _) = hk_from_p(sys, cost, p, t).expect("R checked positive definite");
            vecs_symmetrized(&h).into_entries()
        },
        &dm.basis,
        quad_points,
    )?;
    let wk = coefficients_by_quadrature(
        |t| vec(&hk_from_p(sys, cost, p, t).expect("R checked positive definite").1),
        &dm.basis,
        quad_points,
    )?;
    let w = DVector::from_iterator(
        dm.unknowns(),
        vec(wh.coeffs()).iter().chain(vec(wk.coeffs()).iter()).copied(),
    );
    let rhs = &dm.gamma * vp.entries();
    let lhs = &dm.theta * w;
    let den = rhs.norm();
    let num = (lhs - &rhs).norm();
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(num / den)
}
