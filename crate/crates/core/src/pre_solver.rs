//! Model-based periodic Riccati solver.
//!
//! Integrates `−Ṗ = AᵀP + PA + CᵀC − PBR⁻¹BᵀP` backward from a final value
//! and extracts the steady periodic (stabilizing) solution `P*` by pushing
//! the horizon back one period at a time until consecutive period sections
//! agree.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fourier::{fit_rows, FourierBasis, FourierCoefficients, DEFAULT_ALPHA};
use crate::ode::{rk4_step_with, uniform_steps};
use crate::periodic_system::{CostSpec, CtlpSystem, GainSchedule};
use crate::vectorize::{pack_sym_into, sym_len, vec, vecs, vecs_inv_slice};

pub const DEFAULT_BLOWUP_BOUND: f64 = 1e8;

fn symmetrize(p: DMatrix<f64>) -> DMatrix<f64> {
    (&p + p.transpose()) * 0.5
}

/// `R⁻¹(t) X` via Cholesky.
fn r_solve(cost: &CostSpec, t: f64, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = cost.r(t).cholesky().ok_or(Error::SingularR { t })?;
    Ok(chol.solve(x))
}

/// `dP/ds` of the Riccati flow at algorithmic time `s`.
pub fn riccati_derivative(
    sys: &CtlpSystem,
    cost: &CostSpec,
    s: f64,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let a = sys.a(s);
    let b = sys.b(s);
    let bt_p = b.transpose() * p;
    let k = r_solve(cost, s, &bt_p)?;
    let rhs = a.transpose() * p + p * &a + cost.state_weight(s) - bt_p.transpose() * k;
    Ok(-rhs)
}

/// `H = AᵀP + PA` and `K = R⁻¹BᵀP` at time `t`.
pub fn hk_from_p(
    sys: &CtlpSystem,
    cost: &CostSpec,
    p: &DMatrix<f64>,
    t: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let a = sys.a(t);
    let h = a.transpose() * p + p * a;
    let k = r_solve(cost, t, &(sys.b(t).transpose() * p))?;
    Ok((h, k))
}

/// Runs `steps` RK4 steps of the Riccati flow backward in `s` from
/// `(s_start, p)`, calling `visit` after each step with the new `s` and `P`.
fn integrate_backward<F>(
    sys: &CtlpSystem,
    cost: &CostSpec,
    p: DMatrix<f64>,
    s_start: f64,
    steps: usize,
    h: f64,
    blowup_bound: f64,
    mut visit: F,
) -> Result<DMatrix<f64>>
where
    F: FnMut(f64, &DMatrix<f64>),
{
    let failure: Cell<Option<Error>> = Cell::new(None);
    // τ = s_start − s runs forward; dP/dτ = −dP/ds
    let flow = |tau: f64, p: &DMatrix<f64>| match riccati_derivative(sys, cost, s_start - tau, p) {
        Ok(d) => -d,
        Err(e) => {
            failure.set(Some(e));
            DMatrix::zeros(p.nrows(), p.ncols())
        }
    };
    let mut p = p;
    for k in 0..steps {
        let tau = k as f64 * h;
        p = rk4_step_with(&flow, tau, &p, h, &symmetrize);
        if let Some(e) = failure.take() {
            return Err(e);
        }
        let s = s_start - (k + 1) as f64 * h;
        let norm = p.norm();
        if !(norm <= blowup_bound) {
            return Err(Error::RiccatiBlowup { s, norm });
        }
        visit(s, &p);
    }
    Ok(p)
}

/// Backward Riccati solution on the grid `s_k = k h`, `k = 0..L`, `L h = s_f`.
#[derive(Debug, Clone)]
pub struct PreSolution {
    step: f64,
    horizon: f64,
    final_value: DMatrix<f64>,
    /// `values[k] = P(s_k)`.
    values: Vec<DMatrix<f64>>,
}

impl PreSolution {
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn final_value(&self) -> &DMatrix<f64> {
        &self.final_value
    }

    pub fn values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.values.len()).map(|k| k as f64 * self.step).collect()
    }

    /// Smallest eigenvalue over all grid values.
    pub fn min_eigenvalue(&self) -> f64 {
        self.values
            .iter()
            .map(|p| p.symmetric_eigenvalues().min())
            .fold(f64::INFINITY, f64::min)
    }
}

fn check_final_value(g: &DMatrix<f64>, n: usize) -> Result<()> {
    if g.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "final value is {}×{}, plant has {n} states",
            g.nrows(),
            g.ncols()
        )));
    }
    vecs(g)?;
    let min_eig = symmetrize(g.clone()).symmetric_eigenvalues().min();
    if min_eig < -1e-10 * g.norm().max(1.0) {
        return Err(Error::InvalidConfig(format!(
            "final value must be positive semidefinite (min eigenvalue {min_eig:.3e})"
        )));
    }
    Ok(())
}

/// Solves the final value problem `P(s_f) = G` backward to `s = 0` with RK4
/// of step `h`, symmetrizing every stage.
pub fn solve_pre_backward(
    sys: &CtlpSystem,
    cost: &CostSpec,
    g: &DMatrix<f64>,
    s_f: f64,
    h: f64,
    blowup_bound: f64,
) -> Result<PreSolution> {
    cost.check_dims(sys.n(), sys.m())?;
    check_final_value(g, sys.n())?;
    if !(h > 0.0) || !(s_f >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "need h > 0 and s_f ≥ 0, got h = {h}, s_f = {s_f}"
        )));
    }
    let ratio = s_f / h;
    if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::InvalidConfig(format!(
            "s_f = {s_f} is not a multiple of h = {h}"
        )));
    }
    let steps = ratio.round() as usize;
    let g = symmetrize(g.clone());
    let mut rev = Vec::with_capacity(steps + 1);
    rev.push(g.clone());
    integrate_backward(sys, cost, g.clone(), s_f, steps, h, blowup_bound, |_, p| {
        rev.push(p.clone())
    })?;
    rev.reverse();
    Ok(PreSolution {
        step: h,
        horizon: s_f,
        final_value: g,
        values: rev,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct SteadyOptions {
    /// Integration step; shortened so that it divides the period.
    pub step: f64,
    /// Stop when `sup_s ‖P(s; s_f) − P(s; s_f + T)‖_F` over one period drops
    /// below this.
    pub tol: f64,
    pub max_horizon: f64,
    pub blowup_bound: f64,
    /// Fourier order used to interpolate `P*` between grid points.
    pub interp_order: usize,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        SteadyOptions {
            step: 1e-2,
            tol: 1e-6,
            max_horizon: 2000.0,
            blowup_bound: DEFAULT_BLOWUP_BOUND,
            interp_order: 24,
        }
    }
}

/// The steady periodic solution `P*` over one period `[0, T]`.
#[derive(Debug, Clone)]
pub struct SteadyPeriodicSolution {
    step: f64,
    /// `values[k] = P*(k h)`, `k = 0..=q`, `q h = T`.
    values: Vec<DMatrix<f64>>,
    horizon_used: f64,
    last_gap: f64,
    gaps: Vec<f64>,
    interp: FourierCoefficients,
    n: usize,
}

impl SteadyPeriodicSolution {
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.values.len()).map(|k| k as f64 * self.step).collect()
    }

    /// Backward horizon `s_f` at which the periodicity test passed.
    pub fn horizon_used(&self) -> f64 {
        self.horizon_used
    }

    pub fn last_gap(&self) -> f64 {
        self.last_gap
    }

    /// Period-to-period gaps in the order they were computed.
    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    /// Fourier interpolant of `vecs(P*)`.
    pub fn interpolant(&self) -> &FourierCoefficients {
        &self.interp
    }

    /// `P*(t)` for any `t`, by Fourier interpolation of the grid values.
    pub fn p(&self, t: f64) -> DMatrix<f64> {
        vecs_inv_slice(self.interp.eval(t).as_slice(), self.n).expect("interpolant has n(n+1)/2 rows")
    }

    /// `K*(t) = R⁻¹(t)Bᵀ(t)P*(t)`.
    pub fn gain(&self, sys: &CtlpSystem, cost: &CostSpec, t: f64) -> Result<DMatrix<f64>> {
        Ok(hk_from_p(sys, cost, &self.p(t), t)?.1)
    }

    /// `(H*(t), K*(t))`.
    pub fn hk(&self, sys: &CtlpSystem, cost: &CostSpec, t: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        hk_from_p(sys, cost, &self.p(t), t)
    }

    /// Fourier gain schedule fitted to `K*` at the grid points.
    pub fn gain_schedule(&self, sys: &CtlpSystem, cost: &CostSpec, order: usize) -> Result<GainSchedule> {
        let q = self.values.len() - 1;
        let times: Vec<f64> = (0..q).map(|k| k as f64 * self.step).collect();
        let (m, n) = (sys.m(), sys.n());
        let mut y = DMatrix::zeros(q, m * n);
        for (k, &t) in times.iter().enumerate() {
            let (_, gain) = hk_from_p(sys, cost, &self.values[k], t)?;
            y.row_mut(k).copy_from(&vec(&gain).transpose());
        }
        let order = order.min((q.saturating_sub(2)) / 2);
        let basis = FourierBasis::from_period(order, sys.period())?;
        let (coeffs, _) = fit_rows(&times, &y, &basis, DEFAULT_ALPHA)?;
        GainSchedule::new(coeffs, m, n)
    }
}

/// Steady periodic solution of the Riccati equation, started from `G = 0`.
pub fn steady_periodic_solution(
    sys: &CtlpSystem,
    cost: &CostSpec,
    opts: &SteadyOptions,
) -> Result<SteadyPeriodicSolution> {
    cost.check_dims(sys.n(), sys.m())?;
    if !(opts.tol > 0.0) || !(opts.step > 0.0) {
        return Err(Error::InvalidConfig("tol and step must be positive".into()));
    }
    let n = sys.n();
    let period = sys.period();
    let (q, h) = uniform_steps(period, opts.step);

    // P(s; jT, 0) on [0, T] equals P(s − jT; 0, 0) by periodicity, so the
    // flow is integrated once into negative s and cut into period sections.
    let mut p = DMatrix::zeros(n, n);
    let mut prev: Option<Vec<DMatrix<f64>>> = None;
    let mut gaps = Vec::new();
    let mut periods = 0usize;
    loop {
        periods += 1;
        let horizon = periods as f64 * period;
        if horizon > opts.max_horizon + 1e-9 {
            return Err(Error::NoConvergence {
                horizon: horizon - period,
                gap: gaps.last().copied().unwrap_or(f64::INFINITY),
            });
        }
        let s_start = -((periods - 1) as f64) * period;
        let mut rev = Vec::with_capacity(q + 1);
        rev.push(p.clone());
        p = integrate_backward(sys, cost, p, s_start, q, h, opts.blowup_bound, |_, pk| {
            rev.push(pk.clone())
        })?;
        rev.reverse();
        let section = rev;
        if let Some(prev) = prev.as_ref() {
            let gap = section
                .iter()
                .zip(prev)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            gaps.push(gap);
            if gap < opts.tol {
                let interp = interpolate(&section, h, period, n, opts.interp_order)?;
                return Ok(SteadyPeriodicSolution {
                    step: h,
                    values: section,
                    horizon_used: horizon,
                    last_gap: gap,
                    gaps,
                    interp,
                    n,
                });
            }
        }
        prev = Some(section);
    }
}

fn interpolate(
    section: &[DMatrix<f64>],
    h: f64,
    period: f64,
    n: usize,
    order: usize,
) -> Result<FourierCoefficients> {
    let q = section.len() - 1;
    let order = order.min(q.saturating_sub(2) / 2);
    let basis = FourierBasis::from_period(order, period)?;
    let times: Vec<f64> = (0..q).map(|k| k as f64 * h).collect();
    let mut y = DMatrix::zeros(q, sym_len(n));
    let mut row = DVector::zeros(sym_len(n));
    for k in 0..q {
        pack_sym_into(&section[k], row.as_mut_slice());
        y.row_mut(k).copy_from(&row.transpose());
    }
    Ok(fit_rows(&times, &y, &basis, DEFAULT_ALPHA)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn scalar() -> (CtlpSystem, CostSpec) {
        (
            CtlpSystem::constant(dmatrix![0.0], dmatrix![1.0], 1.0).unwrap(),
            CostSpec::constant(dmatrix![1.0], dmatrix![1.0], 1.0).unwrap(),
        )
    }

    #[test]
    fn scalar_tanh_oracle() {
        let (sys, cost) = scalar();
        let s_f = 3.0;
        let sol = solve_pre_backward(&sys, &cost, &dmatrix![0.0], s_f, 1e-3, DEFAULT_BLOWUP_BOUND).unwrap();
        assert_eq!(sol.values().len(), 3001);
        let err = sol
            .grid()
            .iter()
            .zip(sol.values())
            .map(|(s, p)| (p[(0, 0)] - (s_f - s).tanh()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "max error {err}");
        assert_eq!(sol.values().last().unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn scalar_stationary_point() {
        let (sys, cost) = scalar();
        let sol = solve_pre_backward(&sys, &cost, &dmatrix![1.0], 2.0, 1e-2, DEFAULT_BLOWUP_BOUND).unwrap();
        assert!(sol.values().iter().all(|p| (p[(0, 0)] - 1.0).abs() < 1e-14));
    }

    #[test]
    fn rejects_bad_inputs() {
        let (sys, cost) = scalar();
        let bad = solve_pre_backward(&sys, &cost, &dmatrix![-1.0], 1.0, 0.1, DEFAULT_BLOWUP_BOUND);
        assert!(matches!(bad, Err(Error::InvalidConfig(_))));
        let bad = solve_pre_backward(&sys, &cost, &dmatrix![0.0], 1.05, 0.1, DEFAULT_BLOWUP_BOUND);
        assert!(matches!(bad, Err(Error::InvalidConfig(_))));
        let asym = solve_pre_backward(
            &CtlpSystem::constant(DMatrix::zeros(2, 2), dmatrix![1.0; 0.0], 1.0).unwrap(),
            &CostSpec::constant(DMatrix::identity(2, 2), dmatrix![1.0], 1.0).unwrap(),
            &dmatrix![1.0, 0.5; 0.0, 1.0],
            1.0,
            0.1,
            DEFAULT_BLOWUP_BOUND,
        );
        assert!(matches!(asym, Err(Error::AsymmetricInput { .. })));
    }

    #[test]
    fn blowup_is_detected() {
        // dP/dτ = 2aP + c² with a large: grows like e^{2aτ}
        let sys = CtlpSystem::constant(dmatrix![10.0], dmatrix![0.0], 1.0).unwrap();
        let cost = CostSpec::constant(dmatrix![1.0], dmatrix![1.0], 1.0).unwrap();
        let err = solve_pre_backward(&sys, &cost, &dmatrix![0.0], 5.0, 1e-3, 1e6).unwrap_err();
        assert!(matches!(err, Error::RiccatiBlowup { .. }));
    }

    #[test]
    fn steady_scalar_solution() {
        let (sys, cost) = scalar();
        let sol = steady_periodic_solution(&sys, &cost, &SteadyOptions::default()).unwrap();
        for t in [0.0, 0.3, 0.77] {
            assert!((sol.p(t)[(0, 0)] - 1.0).abs() < 1e-6);
            assert!((sol.gain(&sys, &cost, t).unwrap()[(0, 0)] - 1.0).abs() < 1e-6);
        }
        assert!(sol.last_gap() < 1e-6);
        let k = sol.gain_schedule(&sys, &cost, 4).unwrap();
        assert!((k.eval(0.4)[(0, 0)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn steady_solution_needs_a_stabilizable_plant() {
        // unstable, uncontrollable mode: P grows without bound
        let sys = CtlpSystem::constant(dmatrix![0.5], dmatrix![0.0], 1.0).unwrap();
        let cost = CostSpec::constant(dmatrix![1.0], dmatrix![1.0], 1.0).unwrap();
        let opts = SteadyOptions {
            max_horizon: 20.0,
            ..SteadyOptions::default()
        };
        let err = steady_periodic_solution(&sys, &cost, &opts).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { .. } | Error::RiccatiBlowup { .. }));
    }

    #[test]
    fn hk_examples() {
        let (sys, cost) = scalar();
        let (h, k) = hk_from_p(&sys, &cost, &dmatrix![0.0], 0.0).unwrap();
        assert_eq!((h[(0, 0)], k[(0, 0)]), (0.0, 0.0));
        let (h, k) = hk_from_p(&sys, &cost, &dmatrix![1.0], 0.0).unwrap();
        assert_eq!((h[(0, 0)], k[(0, 0)]), (0.0, 1.0));

        let a = dmatrix![0.3, -1.0; 2.0, 0.1];
        let b = dmatrix![1.0; 0.5];
        let r = dmatrix![2.0];
        let sys = CtlpSystem::constant(a.clone(), b.clone(), 1.0).unwrap();
        let cost = CostSpec::constant(DMatrix::identity(2, 2), r, 1.0).unwrap();
        let p = dmatrix![2.0, 0.3; 0.3, 1.0];
        let (h, k) = hk_from_p(&sys, &cost, &p, 0.0).unwrap();
        let h_direct = a.transpose() * &p + &p * &a;
        let k_direct = b.transpose() * &p * 0.5;
        assert!((h - h_direct).amax() < 1e-14);
        assert!((k - k_direct).amax() < 1e-14);
    }
}
