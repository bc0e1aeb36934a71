//! Off-policy value iteration from trajectory data.
//!
//! The unknowns are the Fourier coefficients `Ŵ^H(s)`, `Ŵ^K(s)` of
//! `vecs(H(s,·))` and `vec(K(s,·))`. Differentiating the stacked data
//! equation `Θ vec(W) = Γ vecs(P(s))` in the algorithmic time `s` and using
//! the Riccati flow gives
//!
//! ```text
//! d/ds vec(Ŵ) = Θ†Γ [ −Ŵ^H F_N(s) − vecs(CᵀC) + vecs(K̂ᵀ R K̂) ],  K̂ = vec⁻¹(Ŵ^K F_N(s))
//! ```
//!
//! which is integrated backward from `Ŵ(s_f) = 0`. Samples near `s = 0`
//! are then fitted by least squares to obtain periodic `H̄(t)`, `K̄(t)`.
//! Nothing here reads the plant matrices: the plant is only reachable
//! through [`Plant`] simulation.

use std::ops::{Add, Mul};
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data_collection::{
    build_data_matrices, collect, CollectConfig, DataMatrices, ExplorationConfig, ExplorationSignal,
    RowPolicy,
};
use crate::error::{Error, Result, Stage, StageExt};
use crate::io::write_matrix_csv;
use crate::fourier::{fit_rows, FitDiagnostics, FourierBasis, FourierCoefficients, DEFAULT_ALPHA};
use crate::ode::rk4_step;
use crate::periodic_system::{
    stability_report, CostSpec, GainSchedule, Plant, StabilityReport, DEFAULT_STABILITY_TOL,
};
use crate::vectorize::{pack_sym_into, sym_len, vec_inv, vecs_inv_slice};

pub const DEFAULT_VI_BLOWUP_BOUND: f64 = 1e8;
pub const DEFAULT_PERIODICITY_TOL: f64 = 0.05;

/// Coefficient blocks `(Ŵ^H, Ŵ^K)` at one algorithmic time.
#[derive(Debug, Clone, PartialEq)]
pub struct ViState {
    /// `n₁ × (2N+1)`.
    pub w_h: DMatrix<f64>,
    /// `n₂ × (2N+1)`.
    pub w_k: DMatrix<f64>,
}

impl ViState {
    pub fn zeros(n: usize, m: usize, basis: &FourierBasis) -> Self {
        ViState {
            w_h: DMatrix::zeros(sym_len(n), basis.dim()),
            w_k: DMatrix::zeros(n * m, basis.dim()),
        }
    }

    /// Frobenius norm of the stacked coefficients.
    pub fn norm(&self) -> f64 {
        (self.w_h.norm_squared() + self.w_k.norm_squared()).sqrt()
    }

    /// `[vec(Ŵ^H); vec(Ŵ^K)]`.
    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.w_h.len() + self.w_k.len(),
            self.w_h.iter().chain(self.w_k.iter()).copied(),
        )
    }

    pub fn from_stacked(v: &DVector<f64>, n: usize, m: usize, basis: &FourierBasis) -> Result<Self> {
        let d = basis.dim();
        let (n1, n2) = (sym_len(n), n * m);
        if v.len() != (n1 + n2) * d {
            return Err(Error::DimensionMismatch(format!(
                "stacked coefficients have length {}, expected {}",
                v.len(),
                (n1 + n2) * d
            )));
        }
        Ok(ViState {
            w_h: DMatrix::from_column_slice(n1, d, &v.as_slice()[..n1 * d]),
            w_k: DMatrix::from_column_slice(n2, d, &v.as_slice()[n1 * d..]),
        })
    }
}

impl Add for ViState {
    type Output = ViState;
    fn add(self, rhs: ViState) -> ViState {
        ViState {
            w_h: self.w_h + rhs.w_h,
            w_k: self.w_k + rhs.w_k,
        }
    }
}

impl Mul<f64> for ViState {
    type Output = ViState;
    fn mul(self, rhs: f64) -> ViState {
        ViState {
            w_h: self.w_h * rhs,
            w_k: self.w_k * rhs,
        }
    }
}

/// The data-driven right-hand side, holding the cached product `Θ†Γ`.
#[derive(Debug, Clone)]
pub struct DataDrivenFlow {
    /// `(n₁+n₂)(2N+1) × n₁`.
    pinv_gamma: DMatrix<f64>,
    basis: FourierBasis,
    n: usize,
    m: usize,
}

impl DataDrivenFlow {
    /// Computes `Θ†Γ` column by column from a truncated SVD of `Θ`
    /// (minimum-norm solution when `Θ` is rank deficient).
    pub fn new(dm: &DataMatrices) -> Result<Self> {
        let svd = dm.theta.clone().svd(true, true);
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let eps = smax * dm.theta.nrows().max(dm.theta.ncols()) as f64 * f64::EPSILON;
        let pinv_gamma = svd
            .solve(&dm.gamma, eps)
            .map_err(|e| Error::InvalidConfig(format!("least-squares solve failed: {e}")))?;
        Ok(DataDrivenFlow {
            pinv_gamma,
            basis: dm.basis,
            n: dm.n,
            m: dm.m,
        })
    }

    pub fn from_parts(pinv_gamma: DMatrix<f64>, basis: FourierBasis, n: usize, m: usize) -> Result<Self> {
        let rows = (sym_len(n) + n * m) * basis.dim();
        if pinv_gamma.shape() != (rows, sym_len(n)) {
            return Err(Error::DimensionMismatch(format!(
                "Θ†Γ is {}×{}, expected {rows}×{}",
                pinv_gamma.nrows(),
                pinv_gamma.ncols(),
                sym_len(n)
            )));
        }
        Ok(DataDrivenFlow {
            pinv_gamma,
            basis,
            n,
            m,
        })
    }

    pub fn pinv_gamma(&self) -> &DMatrix<f64> {
        &self.pinv_gamma
    }

    pub fn basis(&self) -> &FourierBasis {
        &self.basis
    }

    /// `dŴ/ds` at `(Ŵ, s)`.
    pub fn rhs(&self, state: &ViState, s: f64, cost: &CostSpec) -> ViState {
        let n1 = sym_len(self.n);
        let f = self.basis.eval(s);
        let h_vec = &state.w_h * &f;
        let k = vec_inv(&(&state.w_k * &f), self.m, self.n).expect("block shapes fixed by n, m");
        let quad = k.transpose() * cost.r(s) * &k - cost.state_weight(s);
        let mut bracket = DVector::zeros(n1);
        pack_sym_into(&quad, bracket.as_mut_slice());
        bracket -= h_vec;
        let d = &self.pinv_gamma * bracket;
        ViState::from_stacked(&d, self.n, self.m, &self.basis).expect("Θ†Γ shape checked")
    }

    /// Integrates backward from `Ŵ(s_f) = 0` to `s = 0`.
    pub fn solve_backward(&self, cost: &CostSpec, opts: &ViOptions) -> Result<ViSolution> {
        let (s_f, h) = (opts.s_f, opts.h);
        if !(h > 0.0) || !(s_f > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "need h > 0 and s_f > 0, got h = {h}, s_f = {s_f}"
            )));
        }
        let ratio = s_f / h;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "s_f = {s_f} is not a multiple of h = {h}"
            )));
        }
        let steps = ratio.round() as usize;
        // τ = s_f − s runs forward
        let flow = |tau: f64, w: &ViState| self.rhs(w, s_f - tau, cost) * -1.0;
        let mut w = ViState::zeros(self.n, self.m, &self.basis);
        let mut rev = Vec::with_capacity(steps + 1);
        rev.push(w.clone());
        for k in 0..steps {
            w = rk4_step(&flow, k as f64 * h, &w, h);
            let norm = w.norm();
            if !(norm <= opts.blowup_bound) {
                return Err(Error::Blowup {
                    s: s_f - (k + 1) as f64 * h,
                    norm,
                });
            }
            rev.push(w.clone());
        }
        rev.reverse();
        Ok(ViSolution {
            step: h,
            horizon: s_f,
            states: rev,
            basis: self.basis,
            n: self.n,
            m: self.m,
        })
    }
}

/// Standalone right-hand side evaluation; see [`DataDrivenFlow::rhs`].
pub fn vi_rhs(state: &ViState, s: f64, flow: &DataDrivenFlow, cost: &CostSpec) -> ViState {
    flow.rhs(state, s, cost)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViOptions {
    pub s_f: f64,
    pub h: f64,
    pub blowup_bound: f64,
}

impl ViOptions {
    pub fn new(s_f: f64, h: f64) -> Self {
        ViOptions {
            s_f,
            h,
            blowup_bound: DEFAULT_VI_BLOWUP_BOUND,
        }
    }
}

/// Solves the data-driven flow backward on `[0, s_f]`.
pub fn solve_vi_backward(dm: &DataMatrices, cost: &CostSpec, opts: &ViOptions) -> Result<ViSolution> {
    cost.check_dims(dm.n, dm.m)?;
    DataDrivenFlow::new(dm)?.solve_backward(cost, opts)
}

/// Numerical solution on `s_k = k h`, `k = 0..=L`.
#[derive(Debug, Clone)]
pub struct ViSolution {
    step: f64,
    horizon: f64,
    states: Vec<ViState>,
    basis: FourierBasis,
    n: usize,
    m: usize,
}

impl ViSolution {
    pub fn from_states(states: Vec<ViState>, step: f64, basis: FourierBasis, n: usize, m: usize) -> Self {
        let horizon = step * (states.len().saturating_sub(1)) as f64;
        ViSolution {
            step,
            horizon,
            states,
            basis,
            n,
            m,
        }
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `L`.
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn states(&self) -> &[ViState] {
        &self.states
    }

    pub fn basis(&self) -> &FourierBasis {
        &self.basis
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.states.len()).map(|k| k as f64 * self.step).collect()
    }

    /// `(Ĥ_k, K̂_k)` with `vecs(Ĥ_k) = Ŵ^H_k F_N(s_k)` and
    /// `vec(K̂_k) = Ŵ^K_k F_N(s_k)`.
    pub fn reconstruct(&self, k: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let f = self.basis.eval(k as f64 * self.step);
        let st = &self.states[k];
        let h = vecs_inv_slice((&st.w_h * &f).as_slice(), self.n).expect("n₁ rows");
        let gain = vec_inv(&(&st.w_k * &f), self.m, self.n).expect("n₂ rows");
        (h, gain)
    }
}

impl ViSolution {
    /// Columns `s, k_<i>_<j>…` (1-based, row-major) of `K̂_k` at every grid point.
    pub fn write_gains_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["s".to_string()];
        for i in 0..self.m {
            for j in 0..self.n {
                header.push(format!("k_{}_{}", i + 1, j + 1));
            }
        }
        w.write_record(&header)?;
        for k in 0..self.states.len() {
            let (_, gain) = self.reconstruct(k);
            let mut rec = vec![format!("{:e}", k as f64 * self.step)];
            for i in 0..self.m {
                for j in 0..self.n {
                    rec.push(format!("{:e}", gain[(i, j)]));
                }
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `{(Ĥ_k, K̂_k)}` at every grid point.
pub fn reconstruct_gains(sol: &ViSolution) -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
    (0..sol.states.len()).map(|k| sol.reconstruct(k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicityReport {
    pub is_periodic: bool,
    /// Algorithmic-time window `[0, T]` that was tested.
    pub window: (f64, f64),
    /// Largest `‖Ŵ_k − Ŵ_{k+p}‖ / (1 + ‖Ŵ_k‖)` in the window.
    pub worst_ratio: f64,
}

/// Checks whether `Ŵ(s)` has settled into a `T`-periodic orbit near
/// `s = 0`: `‖Ŵ(s_k) − Ŵ(s_k + T)‖ < tol·(1 + ‖Ŵ_k‖)` for all
/// `s_k ∈ [0, T]`. `Ŵ(s_k + T)` is read off the grid by cubic Lagrange
/// interpolation, since `T/h` is rarely an integer and an index shift of
/// `⌊T/h⌋` misaligns the higher harmonics.
pub fn detect_periodicity(sol: &ViSolution, period: f64, tol: f64) -> Result<PeriodicityReport> {
    let shift = (period / sol.step).floor() as usize;
    let frac = period / sol.step - shift as f64;
    let needed = 2 * shift + 2;
    if !(sol.horizon > 2.0 * period) || sol.steps() < needed {
        return Err(Error::HorizonTooShort {
            s_f: sol.horizon,
            required: (needed as f64 * sol.step).max(2.0 * period),
        });
    }
    let stacked: Vec<DVector<f64>> = sol.states[..=needed].iter().map(ViState::stacked).collect();
    let nodes = [-1.0f64, 0.0, 1.0, 2.0];
    let weights: Vec<f64> = (0..4)
        .map(|i| {
            (0..4)
                .filter(|&j| j != i)
                .map(|j| (frac - nodes[j]) / (nodes[i] - nodes[j]))
                .product()
        })
        .collect();
    let mut worst = 0.0f64;
    for k in 0..=shift {
        let mut shifted = &stacked[k + shift - 1] * weights[0];
        for (i, w) in weights.iter().enumerate().skip(1) {
            shifted.axpy(*w, &stacked[k + shift - 1 + i], 1.0);
        }
        let a = &stacked[k];
        worst = worst.max((a - shifted).norm() / (1.0 + a.norm()));
    }
    Ok(PeriodicityReport {
        is_periodic: worst < tol,
        window: (0.0, shift as f64 * sol.step),
        worst_ratio: worst,
    })
}

/// How `L̄` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LbarRule {
    /// `⌊s_f/(3h)⌋` moved into `s_L̄ > T`, `⌊L/2⌋ > L̄ > 2N + 1` when
    /// that range is non-empty.
    ThirdOfHorizonClamped,
    /// `⌊s_f/(3h)⌋` as is.
    ThirdOfHorizon,
    /// Use this index as is.
    Fixed(usize),
}

impl Default for LbarRule {
    fn default() -> Self {
        LbarRule::ThirdOfHorizonClamped
    }
}

impl LbarRule {
    pub fn index(&self, steps: usize, step: f64, period: f64, order: usize) -> usize {
        match *self {
            LbarRule::ThirdOfHorizonClamped => {
                let lo = (2 * order + 2).max((period / step).floor() as usize + 1);
                let hi = (steps / 2).saturating_sub(1);
                if lo <= hi {
                    (steps / 3).clamp(lo, hi)
                } else {
                    steps / 3
                }
            }
            LbarRule::ThirdOfHorizon => steps / 3,
            LbarRule::Fixed(l) => l,
        }
    }
}

/// Chosen fit window and whether it satisfies `s_L̄ > T` and
/// `⌊L/2⌋ > L̄ > 2N + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitWindow {
    pub l_bar: usize,
    pub admissible: bool,
}

/// Applies `rule` and validates the result, see [`check_window`].
pub fn choose_fit_window(
    rule: LbarRule,
    steps: usize,
    step: f64,
    period: f64,
    order: usize,
    enforce_bounds: bool,
) -> Result<FitWindow> {
    check_window(rule.index(steps, step, period, order), steps, step, period, order, enforce_bounds)
}

/// With `enforce_bounds`, any violation of `s_L̄ > T`, `⌊L/2⌋ > L̄ > 2N + 1`
/// is a [`Error::BadWindow`]. Otherwise only `L̄ ≤ L` and `L̄ + 1 ≥ 2N + 1`
/// (as many samples as coefficients) are required, and the violation is
/// recorded in [`FitWindow::admissible`].
pub fn check_window(
    l_bar: usize,
    steps: usize,
    step: f64,
    period: f64,
    order: usize,
    enforce_bounds: bool,
) -> Result<FitWindow> {
    if l_bar > steps {
        return Err(Error::BadWindow(format!("L̄ = {l_bar} exceeds L = {steps}")));
    }
    if l_bar < 2 * order {
        return Err(Error::BadWindow(format!(
            "L̄ + 1 = {} samples cannot determine {} coefficients",
            l_bar + 1,
            2 * order + 1
        )));
    }
    let mut violations = Vec::new();
    if l_bar <= 2 * order + 1 {
        violations.push(format!("L̄ = {l_bar} must exceed 2N+1 = {}", 2 * order + 1));
    }
    if !(l_bar as f64 * step > period) {
        violations.push(format!(
            "s_L̄ = {} must exceed the period {period}",
            l_bar as f64 * step
        ));
    }
    if l_bar >= steps / 2 {
        violations.push(format!("L̄ = {l_bar} must be below ⌊L/2⌋ = {}", steps / 2));
    }
    if enforce_bounds && !violations.is_empty() {
        return Err(Error::BadWindow(violations.join("; ")));
    }
    Ok(FitWindow {
        l_bar,
        admissible: violations.is_empty(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub alpha: f64,
    pub enforce_window_bounds: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            alpha: DEFAULT_ALPHA,
            enforce_window_bounds: true,
        }
    }
}

/// Learned periodic value-derivative and gain schedules.
#[derive(Debug, Clone)]
pub struct AdpResult {
    pub w_bar_h: FourierCoefficients,
    pub w_bar_k: FourierCoefficients,
    pub window: FitWindow,
    pub fit: FitDiagnostics,
    n: usize,
    m: usize,
}

impl AdpResult {
    /// `H̄(t) = vecs⁻¹(W̄^H F_N(t))`.
    pub fn h_bar(&self, t: f64) -> DMatrix<f64> {
        vecs_inv_slice(self.w_bar_h.eval(t).as_slice(), self.n).expect("n₁ rows")
    }

    /// `K̄(t) = vec⁻¹(W̄^K F_N(t))`.
    pub fn k_bar(&self, t: f64) -> DMatrix<f64> {
        vec_inv(&self.w_bar_k.eval(t), self.m, self.n).expect("n₂ rows")
    }

    pub fn gain_schedule(&self) -> GainSchedule {
        GainSchedule::new(self.w_bar_k.clone(), self.m, self.n).expect("n₂ rows")
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    /// `w_bar_h.csv` and `w_bar_k.csv`: one row per component of
    /// `vecs(H̄)` / `vec(K̄)`, one column per basis function.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_matrix_csv(&dir.join("w_bar_h.csv"), self.w_bar_h.coeffs())?;
        write_matrix_csv(&dir.join("w_bar_k.csv"), self.w_bar_k.coeffs())
    }
}

/// Least-squares fit of `{Ĥ_k}`, `{K̂_k}`, `k = 0..=L̄`, onto the basis.
pub fn fit_periodic_gains(sol: &ViSolution, l_bar: usize, opts: &FitOptions) -> Result<AdpResult> {
    let basis = sol.basis;
    let window = check_window(
        l_bar,
        sol.steps(),
        sol.step,
        basis.period(),
        basis.order,
        opts.enforce_window_bounds,
    )?;
    let (n, m) = (sol.n, sol.m);
    let times: Vec<f64> = (0..=l_bar).map(|k| k as f64 * sol.step).collect();
    let mut v = DMatrix::zeros(l_bar + 1, sym_len(n));
    let mut w = DMatrix::zeros(l_bar + 1, n * m);
    for (k, &s) in times.iter().enumerate() {
        let f = basis.eval(s);
        let st = &sol.states[k];
        v.row_mut(k).copy_from(&(&st.w_h * &f).transpose());
        w.row_mut(k).copy_from(&(&st.w_k * &f).transpose());
    }
    let (w_bar_h, fit) = fit_rows(&times, &v, &basis, opts.alpha)?;
    let (w_bar_k, _) = fit_rows(&times, &w, &basis, opts.alpha)?;
    Ok(AdpResult {
        w_bar_h,
        w_bar_k,
        window,
        fit,
        n,
        m,
    })
}

/// Every hyperparameter of the learning pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdpConfig {
    /// Fourier order `N`.
    pub n_fourier: usize,
    /// Sampling interval `Δt`.
    pub dt: f64,
    /// Number of sampling intervals `M`.
    pub samples: usize,
    pub s_f: f64,
    /// Value-iteration step `h`.
    pub h: f64,
    pub l_bar: LbarRule,
    pub exploration: ExplorationConfig,
    /// State bound `β` for resets.
    pub beta: f64,
    /// Reset state; zero when absent.
    pub x_reset: Option<Vec<f64>>,
    /// RK4 steps per sampling interval during data collection.
    pub substeps: usize,
    /// Lower bound for `σ_min(𝒰ᵀ𝒰)/L̄` in the final fit.
    pub alpha: f64,
    pub blowup_bound: f64,
    pub periodicity_tol: f64,
    pub row_policy: RowPolicy,
    /// Reject fit windows violating `s_L̄ > T`, `⌊L/2⌋ > L̄ > 2N + 1`.
    pub enforce_window_bounds: bool,
    /// Simulation steps per period for the closed-loop multiplier check.
    pub stability_steps: usize,
}

impl Default for AdpConfig {
    fn default() -> Self {
        AdpConfig {
            n_fourier: 6,
            dt: 0.2,
            samples: 800,
            s_f: 40.0,
            h: 0.1,
            l_bar: LbarRule::ThirdOfHorizonClamped,
            exploration: ExplorationConfig::default(),
            beta: 10.0,
            x_reset: None,
            substeps: 200,
            alpha: DEFAULT_ALPHA,
            blowup_bound: DEFAULT_VI_BLOWUP_BOUND,
            periodicity_tol: DEFAULT_PERIODICITY_TOL,
            row_policy: RowPolicy::Require,
            enforce_window_bounds: true,
            stability_steps: 4000,
        }
    }
}

impl AdpConfig {
    pub fn collect_config(&self, n: usize) -> CollectConfig {
        CollectConfig {
            dt: self.dt,
            samples: self.samples,
            beta: self.beta,
            x_reset: self.x_reset.clone().unwrap_or_else(|| vec![0.0; n]),
            substeps: self.substeps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("dt", self.dt), ("s_f", self.s_f), ("h", self.h), ("beta", self.beta)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.samples == 0 || self.stability_steps == 0 {
            return Err(Error::InvalidConfig("samples and stability_steps must be positive".into()));
        }
        self.exploration.validate()
    }
}

/// Diagnostics of one learning run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdpReport {
    pub reset_count: usize,
    pub data_rows: usize,
    pub unknowns: usize,
    /// `σ_min(ΘᵀΘ)/rows`.
    pub sigma_scaled: f64,
    pub periodicity: Option<PeriodicityReport>,
    pub window: FitWindow,
    pub fit: FitDiagnostics,
    pub stability: StabilityReport,
    pub runtime_s: f64,
    pub frequencies: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct AdpRun {
    pub result: AdpResult,
    pub report: AdpReport,
    pub solution: ViSolution,
}

/// Collect → build `Θ`, `Γ` → integrate the data-driven flow → choose `L̄`
/// → fit `K̄` → check the closed loop `u = −K̄(t)x` by simulation.
///
/// Errors carry the stage they came from.
pub fn run_algorithm_1<P: Plant + ?Sized>(plant: &P, cost: &CostSpec, cfg: &AdpConfig) -> Result<AdpRun> {
    let started = Instant::now();
    cfg.validate()?;
    let (n, m) = (plant.state_dim(), plant.input_dim());
    cost.check_dims(n, m)?;
    let period = plant.period();

    let signal = ExplorationSignal::new(&cfg.exploration, m).stage(Stage::Collect)?;
    let log = collect(plant, &signal, &cfg.collect_config(n)).stage(Stage::Collect)?;

    let basis = FourierBasis::from_period(cfg.n_fourier, period)?;
    let dm = build_data_matrices(&log, &basis, cost, cfg.row_policy).stage(Stage::DataMatrices)?;

    let opts = ViOptions {
        s_f: cfg.s_f,
        h: cfg.h,
        blowup_bound: cfg.blowup_bound,
    };
    let solution = DataDrivenFlow::new(&dm)
        .and_then(|flow| flow.solve_backward(cost, &opts))
        .stage(Stage::ValueIteration)?;
    let periodicity = detect_periodicity(&solution, period, cfg.periodicity_tol).ok();

    let window = choose_fit_window(
        cfg.l_bar,
        solution.steps(),
        cfg.h,
        period,
        cfg.n_fourier,
        cfg.enforce_window_bounds,
    )
    .stage(Stage::Fit)?;
    let fit_opts = FitOptions {
        alpha: cfg.alpha,
        enforce_window_bounds: cfg.enforce_window_bounds,
    };
    let result = fit_periodic_gains(&solution, window.l_bar, &fit_opts).stage(Stage::Fit)?;

    let gain = result.gain_schedule();
    let stability = stability_report(
        plant,
        Some(&gain),
        0.0,
        period / cfg.stability_steps as f64,
        DEFAULT_STABILITY_TOL,
    );

    let report = AdpReport {
        reset_count: log.reset_count(),
        data_rows: dm.rows(),
        unknowns: dm.unknowns(),
        sigma_scaled: dm.sigma_scaled,
        periodicity,
        window,
        fit: result.fit,
        stability,
        runtime_s: started.elapsed().as_secs_f64(),
        frequencies: signal.frequencies,
    };
    Ok(AdpRun {
        result,
        report,
        solution,
    })
}

/// Limits for the horizon/order search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneOptions {
    /// Horizon increment between attempts.
    pub horizon_step: f64,
    pub max_horizon: f64,
    /// How many times `N` may be increased by one.
    pub max_order_increase: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub n_fourier: usize,
    pub s_f: f64,
    pub attempts: usize,
}

/// Parameter search: starting from `cfg.s_f`, lengthens the horizon until
/// the solution near `s = 0` is periodic; if no horizon up to `max_horizon`
/// works, raises `N` and retries, up to the configured limit. Collects data
/// once and reuses it for every attempt.
pub fn tune_parameters<P: Plant + ?Sized>(
    plant: &P,
    cost: &CostSpec,
    cfg: &AdpConfig,
    tune: &TuneOptions,
) -> Result<TuneOutcome> {
    cfg.validate()?;
    if !(tune.horizon_step > 0.0) {
        return Err(Error::InvalidConfig("horizon_step must be positive".into()));
    }
    let (n, m) = (plant.state_dim(), plant.input_dim());
    let period = plant.period();
    let signal = ExplorationSignal::new(&cfg.exploration, m).stage(Stage::Collect)?;
    let log = collect(plant, &signal, &cfg.collect_config(n)).stage(Stage::Collect)?;
    let mut attempts = 0;
    for order in cfg.n_fourier..=cfg.n_fourier + tune.max_order_increase {
        let basis = FourierBasis::from_period(order, period)?;
        let dm = build_data_matrices(&log, &basis, cost, cfg.row_policy).stage(Stage::DataMatrices)?;
        let flow = DataDrivenFlow::new(&dm).stage(Stage::ValueIteration)?;
        let mut s_f = cfg.s_f;
        while s_f <= tune.max_horizon + 1e-9 {
            attempts += 1;
            // keep s_f on the h grid
            let s_grid = (s_f / cfg.h).round() * cfg.h;
            let opts = ViOptions {
                s_f: s_grid,
                h: cfg.h,
                blowup_bound: cfg.blowup_bound,
            };
            if let Ok(sol) = flow.solve_backward(cost, &opts) {
                if let Ok(rep) = detect_periodicity(&sol, period, cfg.periodicity_tol) {
                    if rep.is_periodic {
                        return Ok(TuneOutcome {
                            n_fourier: order,
                            s_f: s_grid,
                            attempts,
                        });
                    }
                }
            }
            s_f += tune.horizon_step;
        }
    }
    Err(Error::NoConvergence {
        horizon: tune.max_horizon,
        gap: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_collection::{collect, CollectConfig, ExplorationSignal};
    use crate::periodic_system::CtlpSystem;
    use crate::pre_solver::{solve_pre_backward, DEFAULT_BLOWUP_BOUND};
    use nalgebra::dmatrix;

    fn scalar_data(order: usize) -> (CtlpSystem, CostSpec, DataMatrices) {
        let sys = CtlpSystem::constant(dmatrix![0.0], dmatrix![1.0], 2.0).unwrap();
        let cost = CostSpec::constant(dmatrix![1.0], dmatrix![1.0], 2.0).unwrap();
        let sig = ExplorationSignal::new(
            &ExplorationConfig {
                amplitude: 0.5,
                num_sinusoids: 10,
                freq_range: [-4.0, 4.0],
                seed: 11,
            },
            1,
        )
        .unwrap();
        let cfg = CollectConfig {
            dt: 0.1,
            samples: 200,
            beta: 50.0,
            x_reset: vec![0.0],
            substeps: 50,
        };
        let log = collect(&sys, &sig, &cfg).unwrap();
        let basis = FourierBasis::from_period(order, 2.0).unwrap();
        let dm = build_data_matrices(&log, &basis, &cost, RowPolicy::Require).unwrap();
        (sys, cost, dm)
    }

    #[test]
    fn zero_state_with_zero_cost_is_a_fixed_point() {
        let (_, _, dm) = scalar_data(1);
        let zero_cost = CostSpec::constant(dmatrix![0.0], dmatrix![1.0], 2.0).unwrap();
        let flow = DataDrivenFlow::new(&dm).unwrap();
        let w0 = ViState::zeros(1, 1, flow.basis());
        let d = vi_rhs(&w0, 0.3, &flow, &zero_cost);
        assert_eq!(d.norm(), 0.0);
        let sol = flow.solve_backward(&zero_cost, &ViOptions::new(4.0, 0.1)).unwrap();
        assert!(sol.states().iter().all(|w| w.norm() == 0.0));
    }

    #[test]
    fn rhs_at_zero_is_minus_pinv_gamma_times_state_weight() {
        let (_, cost, dm) = scalar_data(1);
        let flow = DataDrivenFlow::new(&dm).unwrap();
        let w0 = ViState::zeros(1, 1, flow.basis());
        let d = flow.rhs(&w0, 0.7, &cost);
        // vecs(CᵀC) = [1]
        let want = -flow.pinv_gamma().column(0).into_owned();
        assert!((d.stacked() - want).amax() < 1e-14);
    }

    #[test]
    fn rhs_is_consistent_with_the_integrator() {
        let (_, cost, dm) = scalar_data(1);
        let flow = DataDrivenFlow::new(&dm).unwrap();
        let sol = flow.solve_backward(&cost, &ViOptions::new(2.0, 0.01)).unwrap();
        // backward difference quotient against the rhs at a grid point
        let k = 50;
        let s = k as f64 * 0.01;
        let fd = (sol.states()[k + 1].clone() + sol.states()[k].clone() * -1.0) * (1.0 / 0.01);
        let rhs = flow.rhs(&sol.states()[k], s, &cost);
        let err = (fd.stacked() - rhs.stacked()).amax();
        assert!(err < 0.05 * (1.0 + rhs.stacked().amax()), "err {err}");
    }

    #[test]
    fn scalar_flow_tracks_tanh_oracle() {
        let (sys, cost, dm) = scalar_data(0);
        let s_f = 3.0;
        let h = 0.01;
        let sol = solve_vi_backward(&dm, &cost, &ViOptions::new(s_f, h)).unwrap();
        assert_eq!(sol.states().last().unwrap().norm(), 0.0);
        let oracle = solve_pre_backward(&sys, &cost, &dmatrix![0.0], s_f, h, DEFAULT_BLOWUP_BOUND).unwrap();
        for k in 0..20 {
            let (_, khat) = sol.reconstruct(k);
            let p = oracle.values()[k][(0, 0)];
            assert!((khat[(0, 0)] - p).abs() < 2e-2, "k {k}: {} vs {p}", khat[(0, 0)]);
            assert!((p - (s_f - k as f64 * h).tanh()).abs() < 1e-8);
        }
    }

    #[test]
    fn halving_the_step_shows_fourth_order_convergence() {
        let (_, cost, dm) = scalar_data(1);
        let flow = DataDrivenFlow::new(&dm).unwrap();
        let near_zero = |h: f64| {
            let sol = flow.solve_backward(&cost, &ViOptions::new(2.0, h)).unwrap();
            sol.reconstruct(0).1[(0, 0)]
        };
        let (a, b, c) = (near_zero(0.2), near_zero(0.1), near_zero(0.05));
        let ratio = (a - b).abs() / (b - c).abs();
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn blowup_is_reported() {
        let (_, cost, dm) = scalar_data(0);
        let opts = ViOptions {
            s_f: 5.0,
            h: 0.1,
            blowup_bound: 1e-3,
        };
        assert!(matches!(solve_vi_backward(&dm, &cost, &opts), Err(Error::Blowup { .. })));
    }

    fn fabricated(states: Vec<ViState>, basis: FourierBasis, h: f64) -> ViSolution {
        ViSolution::from_states(states, h, basis, 1, 1)
    }

    #[test]
    fn reconstruct_examples() {
        let basis = FourierBasis::from_period(2, 2.0).unwrap();
        let zero = ViState::zeros(1, 1, &basis);
        let sol = fabricated(vec![zero.clone(); 5], basis, 0.1);
        assert!(reconstruct_gains(&sol)
            .iter()
            .all(|(h, k)| h.norm() == 0.0 && k.norm() == 0.0));

        let mut st = zero;
        st.w_k[(0, 1)] = 2.5;
        st.w_h[(0, 0)] = 1.0;
        let sol = fabricated(vec![st.clone(); 8], basis, 0.1);
        for (k, (hk, kk)) in reconstruct_gains(&sol).iter().enumerate() {
            let s = 0.1 * k as f64;
            assert!((kk[(0, 0)] - 2.5 * (basis.omega * s).cos()).abs() < 1e-15);
            let f = basis.eval(s);
            assert_eq!(crate::vectorize::vecs(hk).unwrap().entries()[0], (&st.w_h * &f)[0]);
        }
    }

    #[test]
    fn periodicity_detection() {
        let basis = FourierBasis::from_period(0, 1.0).unwrap();
        let constant = (0..=40)
            .map(|_| ViState {
                w_h: dmatrix![2.0],
                w_k: dmatrix![1.0],
            })
            .collect();
        let rep = detect_periodicity(&fabricated(constant, basis, 0.1), 1.0, 0.05).unwrap();
        assert!(rep.is_periodic);
        let growing = (0..=40)
            .map(|k| ViState {
                w_h: dmatrix![k as f64],
                w_k: dmatrix![0.0],
            })
            .collect();
        assert!(!detect_periodicity(&fabricated(growing, basis, 0.1), 1.0, 0.05)
            .unwrap()
            .is_periodic);
        // a sinusoid of period 1 sampled with h = 0.15 (T/h not an integer)
        let wave = (0..=40)
            .map(|k| ViState {
                w_h: dmatrix![(2.0 * std::f64::consts::PI * 0.15 * k as f64).sin()],
                w_k: dmatrix![0.0],
            })
            .collect();
        let rep = detect_periodicity(&fabricated(wave, basis, 0.15), 1.0, 0.05).unwrap();
        assert!(rep.is_periodic, "{rep:?}");
        let short = (0..=15).map(|_| ViState::zeros(1, 1, &basis)).collect();
        assert!(matches!(
            detect_periodicity(&fabricated(short, basis, 0.1), 1.0, 0.05),
            Err(Error::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn window_rules() {
        let tp = 2.0 * std::f64::consts::PI;
        // s_f = 40, h = 0.1, N = 6
        let w = choose_fit_window(LbarRule::ThirdOfHorizon, 400, 0.1, tp, 6, true).unwrap();
        assert_eq!(w, FitWindow { l_bar: 133, admissible: true });
        // s_f = 12: s_L̄ = 4 does not cover a period
        assert!(matches!(
            choose_fit_window(LbarRule::ThirdOfHorizon, 120, 0.1, tp, 6, true),
            Err(Error::BadWindow(_))
        ));
        let w = choose_fit_window(LbarRule::ThirdOfHorizon, 120, 0.1, tp, 6, false).unwrap();
        assert_eq!(w, FitWindow { l_bar: 40, admissible: false });
        // L̄ ≥ ⌊L/2⌋
        assert!(check_window(70, 120, 0.1, tp, 6, true).is_err());
        assert!(!check_window(70, 120, 0.1, tp, 6, false).unwrap().admissible);
        // s_f = 20: ⌊L/3⌋ = 66 is already admissible
        assert_eq!(LbarRule::ThirdOfHorizonClamped.index(200, 0.1, tp, 6), 66);
        // s_f = 15: ⌊L/3⌋ = 50 is raised to ⌊T/h⌋ + 1 = 63 < ⌊L/2⌋ = 75
        assert_eq!(LbarRule::ThirdOfHorizonClamped.index(150, 0.1, tp, 6), 63);
        assert!(choose_fit_window(LbarRule::ThirdOfHorizonClamped, 150, 0.1, tp, 6, true).unwrap().admissible);
        // s_f = 12: empty range, nothing to clamp into
        assert!(choose_fit_window(LbarRule::ThirdOfHorizonClamped, 120, 0.1, tp, 6, true).is_err());
        // L̄ ≤ 2N+1
        assert!(check_window(13, 400, 1.0, tp, 6, true).is_err());
        // too few samples is fatal either way
        assert!(check_window(11, 400, 1.0, tp, 6, false).is_err());
        assert!(check_window(401, 400, 0.1, tp, 6, false).is_err());
    }

    #[test]
    fn fit_recovers_exact_series() {
        let basis = FourierBasis::from_period(2, 2.0).unwrap();
        let h = 0.05;
        let l = 200;
        // Ĥ_k, K̂_k sampled from fixed degree-2 series through constant Ŵ
        let wh = DMatrix::from_fn(1, basis.dim(), |_, j| 0.3 * j as f64 - 0.2);
        let wk = DMatrix::from_fn(1, basis.dim(), |_, j| 1.0 / (1.0 + j as f64));
        let states = (0..=l)
            .map(|_| ViState {
                w_h: wh.clone(),
                w_k: wk.clone(),
            })
            .collect();
        let sol = fabricated(states, basis, h);
        let res = fit_periodic_gains(&sol, 60, &FitOptions::default()).unwrap();
        assert!((res.w_bar_h.coeffs() - &wh).amax() < 1e-8);
        assert!((res.w_bar_k.coeffs() - &wk).amax() < 1e-8);

        let zeros = (0..=l).map(|_| ViState::zeros(1, 1, &basis)).collect();
        let res = fit_periodic_gains(&fabricated(zeros, basis, h), 60, &FitOptions::default()).unwrap();
        assert_eq!(res.k_bar(0.3).norm(), 0.0);
        assert_eq!(res.h_bar(0.3).norm(), 0.0);

        let sol = fabricated((0..=l).map(|_| ViState::zeros(1, 1, &basis)).collect(), basis, h);
        assert!(matches!(
            fit_periodic_gains(&sol, 120, &FitOptions::default()),
            Err(Error::BadWindow(_))
        ));
    }

    #[test]
    fn stacked_round_trip() {
        let basis = FourierBasis::from_period(1, 1.0).unwrap();
        let st = ViState {
            w_h: DMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64),
            w_k: DMatrix::from_fn(2, 3, |i, j| -((i * 3 + j) as f64)),
        };
        let back = ViState::from_stacked(&st.stacked(), 2, 1, &basis).unwrap();
        assert_eq!(back, st);
        assert!(ViState::from_stacked(&DVector::zeros(3), 2, 1, &basis).is_err());
    }
}
