//! Continuous-time linear periodic plants, quadratic costs, feedback gain
//! schedules, fixed-step simulation and Floquet stability analysis.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fourier::{FourierBasis, FourierCoefficients};
use crate::ode::{rk4_step, uniform_steps};
use crate::vectorize::{vec, vec_inv};

/// Default margin below 1 required of the largest multiplier.
pub const DEFAULT_STABILITY_TOL: f64 = 1e-6;

type MatrixFn = dyn Fn(f64) -> DMatrix<f64> + Send + Sync;

/// A `T`-periodic, matrix-valued function of time.
#[derive(Clone)]
pub struct PeriodicMatrixFunction {
    rows: usize,
    cols: usize,
    period: f64,
    eval: Arc<MatrixFn>,
}

impl fmt::Debug for PeriodicMatrixFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicMatrixFunction")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("period", &self.period)
            .finish_non_exhaustive()
    }
}

impl PeriodicMatrixFunction {
    pub fn new<F>(rows: usize, cols: usize, period: f64, f: F) -> Result<Self>
    where
        F: Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
    {
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "period must be positive, got {period}"
            )));
        }
        let probe = f(0.0);
        if probe.shape() != (rows, cols) {
            return Err(Error::DimensionMismatch(format!(
                "evaluator returns {}×{}, declared {rows}×{cols}",
                probe.nrows(),
                probe.ncols()
            )));
        }
        Ok(PeriodicMatrixFunction {
            rows,
            cols,
            period,
            eval: Arc::new(f),
        })
    }

    pub fn constant(m: DMatrix<f64>, period: f64) -> Result<Self> {
        let (rows, cols) = m.shape();
        Self::new(rows, cols, period, move |_| m.clone())
    }

    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        (self.eval)(t)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Largest `‖f(t+T) − f(t)‖_F` over `samples` points of one period.
    pub fn periodicity_defect(&self, samples: usize) -> f64 {
        (0..samples)
            .map(|i| {
                let t = self.period * i as f64 / samples as f64;
                (self.eval(t + self.period) - self.eval(t)).norm()
            })
            .fold(0.0, f64::max)
    }
}

fn same_period(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// `ẋ = A(t) x + B(t) u` with `T`-periodic `A`, `B`.
#[derive(Debug, Clone)]
pub struct CtlpSystem {
    a: PeriodicMatrixFunction,
    b: PeriodicMatrixFunction,
}

impl CtlpSystem {
    pub fn new(a: PeriodicMatrixFunction, b: PeriodicMatrixFunction) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::DimensionMismatch(format!(
                "A must be square, got {}×{}",
                a.rows(),
                a.cols()
            )));
        }
        if b.rows() != a.rows() {
            return Err(Error::DimensionMismatch(format!(
                "B has {} rows, A is {}×{}",
                b.rows(),
                a.rows(),
                a.cols()
            )));
        }
        if !same_period(a.period(), b.period()) {
            return Err(Error::InvalidConfig(format!(
                "A and B periods differ: {} vs {}",
                a.period(),
                b.period()
            )));
        }
        Ok(CtlpSystem { a, b })
    }

    /// Time-invariant plant treated as periodic with period `period`.
    pub fn constant(a: DMatrix<f64>, b: DMatrix<f64>, period: f64) -> Result<Self> {
        Self::new(
            PeriodicMatrixFunction::constant(a, period)?,
            PeriodicMatrixFunction::constant(b, period)?,
        )
    }

    pub fn a(&self, t: f64) -> DMatrix<f64> {
        self.a.eval(t)
    }

    pub fn b(&self, t: f64) -> DMatrix<f64> {
        self.b.eval(t)
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn m(&self) -> usize {
        self.b.cols()
    }

    pub fn period(&self) -> f64 {
        self.a.period()
    }

    /// The unforced system `ẋ = (A − B K(t)) x`.
    pub fn closed_loop(&self, gain: &GainSchedule) -> Result<CtlpSystem> {
        if gain.dims() != (self.m(), self.n()) {
            return Err(Error::DimensionMismatch(format!(
                "gain is {}×{}, plant needs {}×{}",
                gain.dims().0,
                gain.dims().1,
                self.m(),
                self.n()
            )));
        }
        let a = self.a.clone();
        let b = self.b.clone();
        let k = gain.clone();
        let n = self.n();
        let a_cl = PeriodicMatrixFunction::new(n, n, self.period(), move |t| {
            a.eval(t) - b.eval(t) * k.eval(t)
        })?;
        let b_cl = PeriodicMatrixFunction::constant(DMatrix::zeros(n, 1), self.period())?;
        CtlpSystem::new(a_cl, b_cl)
    }
}

/// Quadratic cost weights: `∫ |C(t)x|² + uᵀR(t)u dt`.
#[derive(Debug, Clone)]
pub struct CostSpec {
    c: PeriodicMatrixFunction,
    r: PeriodicMatrixFunction,
}

impl CostSpec {
    pub fn new(c: PeriodicMatrixFunction, r: PeriodicMatrixFunction) -> Result<Self> {
        if r.rows() != r.cols() {
            return Err(Error::DimensionMismatch(format!(
                "R must be square, got {}×{}",
                r.rows(),
                r.cols()
            )));
        }
        if !same_period(c.period(), r.period()) {
            return Err(Error::InvalidConfig(format!(
                "C and R periods differ: {} vs {}",
                c.period(),
                r.period()
            )));
        }
        for i in 0..16 {
            let t = r.period() * i as f64 / 16.0;
            let rt = r.eval(t);
            if (&rt - rt.transpose()).norm() > 1e-10 * rt.norm() {
                return Err(Error::InvalidConfig(format!("R({t}) is not symmetric")));
            }
            let min_eig = rt.symmetric_eigenvalues().min();
            if !(min_eig > 1e-10) {
                return Err(Error::InvalidConfig(format!(
                    "R({t}) is not positive definite (min eigenvalue {min_eig:.3e})"
                )));
            }
        }
        Ok(CostSpec { c, r })
    }

    pub fn constant(c: DMatrix<f64>, r: DMatrix<f64>, period: f64) -> Result<Self> {
        Self::new(
            PeriodicMatrixFunction::constant(c, period)?,
            PeriodicMatrixFunction::constant(r, period)?,
        )
    }

    pub fn c(&self, t: f64) -> DMatrix<f64> {
        self.c.eval(t)
    }

    pub fn r(&self, t: f64) -> DMatrix<f64> {
        self.r.eval(t)
    }

    /// `Cᵀ(t) C(t)`.
    pub fn state_weight(&self, t: f64) -> DMatrix<f64> {
        let c = self.c.eval(t);
        c.transpose() * c
    }

    pub fn period(&self) -> f64 {
        self.c.period()
    }

    /// Checks that the weights fit a plant with `n` states and `m` inputs.
    pub fn check_dims(&self, n: usize, m: usize) -> Result<()> {
        if self.c.cols() != n || self.r.rows() != m {
            return Err(Error::DimensionMismatch(format!(
                "cost has C: {}×{}, R: {}×{}; plant has n = {n}, m = {m}",
                self.c.rows(),
                self.c.cols(),
                self.r.rows(),
                self.r.cols()
            )));
        }
        Ok(())
    }
}

/// Periodic feedback gain `K(t)` (`m × n`) stored as Fourier coefficients of
/// `vec(K(t))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    coeffs: FourierCoefficients,
    m: usize,
    n: usize,
}

impl GainSchedule {
    pub fn new(coeffs: FourierCoefficients, m: usize, n: usize) -> Result<Self> {
        if coeffs.outputs() != m * n {
            return Err(Error::DimensionMismatch(format!(
                "gain coefficients have {} rows, {m}×{n} gain needs {}",
                coeffs.outputs(),
                m * n
            )));
        }
        Ok(GainSchedule { coeffs, m, n })
    }

    pub fn constant(k: &DMatrix<f64>, period: f64) -> Result<Self> {
        let basis = FourierBasis::from_period(0, period)?;
        let w = DMatrix::from_column_slice(k.len(), 1, vec(k).as_slice());
        Self::new(FourierCoefficients::new(w, basis)?, k.nrows(), k.ncols())
    }

    pub fn zero(m: usize, n: usize, basis: FourierBasis) -> Self {
        GainSchedule {
            coeffs: FourierCoefficients::zeros(m * n, basis),
            m,
            n,
        }
    }

    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        vec_inv(&self.coeffs.eval(t), self.m, self.n).expect("dimensions checked at construction")
    }

    pub fn coeffs(&self) -> &FourierCoefficients {
        &self.coeffs
    }

    /// `(m, n)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn period(&self) -> f64 {
        self.coeffs.basis().period()
    }
}

/// Input law `u(t, x)` evaluated at RK4 stage times and states.
pub type InputLaw<'a> = dyn Fn(f64, &DVector<f64>) -> DVector<f64> + 'a;

/// Simulation-only access to a plant.
///
/// This is the only view of the plant the learning pipeline gets: it can
/// advance the state under a chosen input law, but never reads `A` or `B`.
pub trait Plant {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn period(&self) -> f64;
    /// One classical RK4 step of length `dt` from `(t, x)`.
    fn advance(&self, t: f64, x: &DVector<f64>, dt: f64, law: &InputLaw<'_>) -> DVector<f64>;
}

impl Plant for CtlpSystem {
    fn state_dim(&self) -> usize {
        self.n()
    }

    fn input_dim(&self) -> usize {
        self.m()
    }

    fn period(&self) -> f64 {
        CtlpSystem::period(self)
    }

    fn advance(&self, t: f64, x: &DVector<f64>, dt: f64, law: &InputLaw<'_>) -> DVector<f64> {
        let f = |t: f64, x: &DVector<f64>| {
            let u = law(t, x);
            self.a(t) * x + self.b(t) * u
        };
        rk4_step(&f, t, x, dt)
    }
}

/// Input applied during simulation.
#[derive(Clone, Copy)]
pub enum Input<'a> {
    Zero,
    OpenLoop(&'a (dyn Fn(f64) -> DVector<f64> + 'a)),
    /// `u = −K(t) x`.
    Feedback(&'a GainSchedule),
}

impl Input<'_> {
    pub fn eval(&self, t: f64, x: &DVector<f64>, m: usize) -> DVector<f64> {
        match self {
            Input::Zero => DVector::zeros(m),
            Input::OpenLoop(f) => f(t),
            Input::Feedback(k) => -(k.eval(t) * x),
        }
    }
}

/// States and inputs on a uniform time grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn last_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least one sample")
    }
}

/// Simulates the plant from `(t0, x0)` to `t1` with RK4.
///
/// The grid spacing is `step`, shortened uniformly if `t1 − t0` is not an
/// integer multiple of it.
pub fn integrate_trajectory<P: Plant + ?Sized>(
    plant: &P,
    input: Input<'_>,
    x0: &DVector<f64>,
    t0: f64,
    t1: f64,
    step: f64,
) -> Result<Trajectory> {
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(format!("step must be positive, got {step}")));
    }
    if !(t1 > t0) {
        return Err(Error::InvalidConfig(format!("need t1 > t0, got [{t0}, {t1}]")));
    }
    if x0.len() != plant.state_dim() {
        return Err(Error::DimensionMismatch(format!(
            "initial state has length {}, plant has {} states",
            x0.len(),
            plant.state_dim()
        )));
    }
    let m = plant.input_dim();
    let (count, h) = uniform_steps(t1 - t0, step);
    let law = |t: f64, x: &DVector<f64>| input.eval(t, x, m);
    let mut times = Vec::with_capacity(count + 1);
    let mut states = Vec::with_capacity(count + 1);
    let mut inputs = Vec::with_capacity(count + 1);
    let mut x = x0.clone();
    for k in 0..=count {
        let t = t0 + k as f64 * h;
        times.push(t);
        inputs.push(law(t, &x));
        if k < count {
            let next = plant.advance(t, &x, h, &law);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { t: t + h });
            }
            states.push(std::mem::replace(&mut x, next));
        }
    }
    states.push(x);
    Ok(Trajectory {
        times,
        states,
        inputs,
    })
}

fn propagate<P: Plant + ?Sized>(
    plant: &P,
    input: Input<'_>,
    x0: &DVector<f64>,
    t0: f64,
    count: usize,
    h: f64,
) -> Result<DVector<f64>> {
    let m = plant.input_dim();
    let law = |t: f64, x: &DVector<f64>| input.eval(t, x, m);
    let mut x = x0.clone();
    for k in 0..count {
        let t = t0 + k as f64 * h;
        x = plant.advance(t, &x, h, &law);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { t: t + h });
        }
    }
    Ok(x)
}

/// State transition matrix `Φ(t1, t0)` of the plant under zero input, or
/// under `u = −K(t)x` when a gain is given.
pub fn state_transition<P: Plant + ?Sized>(
    plant: &P,
    feedback: Option<&GainSchedule>,
    t0: f64,
    t1: f64,
    step: f64,
) -> Result<DMatrix<f64>> {
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(format!("step must be positive, got {step}")));
    }
    if t1 < t0 {
        return Err(Error::InvalidConfig(format!("need t1 ≥ t0, got [{t0}, {t1}]")));
    }
    let n = plant.state_dim();
    if t1 == t0 {
        return Ok(DMatrix::identity(n, n));
    }
    let input = match feedback {
        Some(k) => Input::Feedback(k),
        None => Input::Zero,
    };
    let (count, h) = uniform_steps(t1 - t0, step);
    let mut phi = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        let col = propagate(plant, input, &e, t0, count, h)?;
        phi.set_column(j, &col);
    }
    Ok(phi)
}

/// Monodromy matrix `Φ(t0 + T, t0)`.
pub fn monodromy<P: Plant + ?Sized>(
    plant: &P,
    feedback: Option<&GainSchedule>,
    t0: f64,
    step: f64,
) -> Result<DMatrix<f64>> {
    state_transition(plant, feedback, t0, t0 + plant.period(), step)
}

/// Moduli of the eigenvalues of `m`, largest first.
pub fn characteristic_multipliers(m: &DMatrix<f64>) -> Vec<f64> {
    let eig = match nalgebra::Schur::try_new(m.clone(), 1e-14, 10_000) {
        Some(schur) => schur.complex_eigenvalues(),
        None => return vec![f64::INFINITY; m.nrows()],
    };
    let mut moduli: Vec<f64> = eig.iter().map(|z| z.norm()).collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    moduli
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StabilityReport {
    /// Multiplier moduli, largest first.
    pub multipliers: Vec<f64>,
    pub max_multiplier: f64,
    pub stable: bool,
}

/// Floquet analysis of the (optionally closed-loop) plant over one period.
///
/// A state that overflows during the period counts as unstable.
pub fn stability_report<P: Plant + ?Sized>(
    plant: &P,
    feedback: Option<&GainSchedule>,
    t0: f64,
    step: f64,
    tol: f64,
) -> StabilityReport {
    let multipliers = match monodromy(plant, feedback, t0, step) {
        Ok(m) if m.iter().all(|v| v.is_finite()) => characteristic_multipliers(&m),
        _ => vec![f64::INFINITY; plant.state_dim()],
    };
    let max_multiplier = multipliers.first().copied().unwrap_or(0.0);
    StabilityReport {
        stable: max_multiplier < 1.0 - tol,
        max_multiplier,
        multipliers,
    }
}

/// `true` iff every characteristic multiplier has modulus below `1 − tol`.
pub fn is_stable<P: Plant + ?Sized>(
    plant: &P,
    feedback: Option<&GainSchedule>,
    t0: f64,
    step: f64,
    tol: f64,
) -> bool {
    stability_report(plant, feedback, t0, step, tol).stable
}
