//! Truncated Fourier basis and periodic function fitting.
//!
//! The basis of order `N` is
//! `F_N(t) = [1, cos ωt, sin ωt, cos 2ωt, sin 2ωt, …, cos Nωt, sin Nωt]`.
//! A vector-valued periodic function is represented by a coefficient matrix
//! `W` (one row per output component) and evaluated as `W · F_N(t)`; the
//! constant column therefore stores `a₀/2` directly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default lower bound on `σ_min(𝒰ᵀ𝒰)/count` for a well-posed fit.
pub const DEFAULT_ALPHA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierBasis {
    /// Truncation order `N`.
    pub order: usize,
    /// Fundamental frequency `ω = 2π/T` in rad/s.
    pub omega: f64,
}

impl FourierBasis {
    pub fn new(order: usize, omega: f64) -> Result<Self> {
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "fundamental frequency must be positive, got {omega}"
            )));
        }
        Ok(FourierBasis { order, omega })
    }

    pub fn from_period(order: usize, period: f64) -> Result<Self> {
        Self::new(order, 2.0 * std::f64::consts::PI / period)
    }

    /// `2N + 1`.
    pub fn dim(&self) -> usize {
        2 * self.order + 1
    }

    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.eval_into(t, out.as_mut_slice());
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        out[0] = 1.0;
        for k in 1..=self.order {
            let (s, c) = (k as f64 * self.omega * t).sin_cos();
            out[2 * k - 1] = c;
            out[2 * k] = s;
        }
    }
}

/// Coefficient matrix of a vector-valued truncated Fourier series.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierCoefficients {
    coeffs: DMatrix<f64>,
    basis: FourierBasis,
}

impl FourierCoefficients {
    pub fn new(coeffs: DMatrix<f64>, basis: FourierBasis) -> Result<Self> {
        if coeffs.ncols() != basis.dim() {
            return Err(Error::DimensionMismatch(format!(
                "coefficient matrix has {} columns, basis of order {} needs {}",
                coeffs.ncols(),
                basis.order,
                basis.dim()
            )));
        }
        Ok(FourierCoefficients { coeffs, basis })
    }

    pub fn zeros(outputs: usize, basis: FourierBasis) -> Self {
        FourierCoefficients {
            coeffs: DMatrix::zeros(outputs, basis.dim()),
            basis,
        }
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn basis(&self) -> &FourierBasis {
        &self.basis
    }

    /// Output dimension `d`.
    pub fn outputs(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        &self.coeffs * self.basis.eval(t)
    }
}

/// Fourier coefficients of a periodic function by the composite trapezoid
/// rule on a uniform grid over one period.
pub fn coefficients_by_quadrature<F>(
    f: F,
    basis: &FourierBasis,
    quad_points: usize,
) -> Result<FourierCoefficients>
where
    F: Fn(f64) -> DVector<f64>,
{
    let required = 8 * basis.dim();
    if quad_points < required {
        return Err(Error::InsufficientQuadrature {
            points: quad_points,
            required,
        });
    }
    let period = basis.period();
    let dt = period / quad_points as f64;
    let mut acc: Option<DMatrix<f64>> = None;
    let mut phi = DVector::zeros(basis.dim());
    for i in 0..quad_points {
        let t = i as f64 * dt;
        let y = f(t);
        basis.eval_into(t, phi.as_mut_slice());
        let term = &y * phi.transpose();
        match acc.as_mut() {
            Some(a) => *a += term,
            None => acc = Some(term),
        }
    }
    let mut w = acc.expect("quad_points > 0") / quad_points as f64;
    // (1/T)∫ f for the constant column, (2/T)∫ f·cos / f·sin otherwise
    for j in 1..basis.dim() {
        w.column_mut(j).scale_mut(2.0);
    }
    FourierCoefficients::new(w, *basis)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// `σ_min(𝒰ᵀ𝒰)/count` of the regressor matrix.
    pub sigma_min_scaled: f64,
    pub samples: usize,
}

/// Regressor matrix with rows `F_N(t_i)ᵀ`.
pub fn regressor(times: &[f64], basis: &FourierBasis) -> DMatrix<f64> {
    let mut u = DMatrix::zeros(times.len(), basis.dim());
    let mut phi = DVector::zeros(basis.dim());
    for (i, &t) in times.iter().enumerate() {
        basis.eval_into(t, phi.as_mut_slice());
        u.row_mut(i).copy_from(&phi.transpose());
    }
    u
}

/// `σ_min(𝒰ᵀ𝒰)/count`, zero when the regressor has fewer rows than columns.
pub fn scaled_min_gram_eigenvalue(u: &DMatrix<f64>) -> f64 {
    if u.nrows() < u.ncols() || u.nrows() == 0 {
        return 0.0;
    }
    let sv = u.singular_values();
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    smin * smin / u.nrows() as f64
}

/// Least-squares fit of `y_i ≈ W F_N(t_i)`, i.e. `Wᵀ = 𝒰† Y`.
///
/// Fails with [`Error::RankDeficient`] when `σ_min(𝒰ᵀ𝒰)/count < alpha`.
pub fn fit_least_squares(
    samples: &[(f64, DVector<f64>)],
    basis: &FourierBasis,
    alpha: f64,
) -> Result<(FourierCoefficients, FitDiagnostics)> {
    let times: Vec<f64> = samples.iter().map(|(t, _)| *t).collect();
    let d = samples.first().map(|(_, y)| y.len()).unwrap_or(0);
    let mut y = DMatrix::zeros(samples.len(), d);
    for (i, (_, yi)) in samples.iter().enumerate() {
        if yi.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "sample {i} has dimension {}, expected {d}",
                yi.len()
            )));
        }
        y.row_mut(i).copy_from(&yi.transpose());
    }
    fit_rows(&times, &y, basis, alpha)
}

/// Same as [`fit_least_squares`] with the samples already stacked as rows
/// of `y`.
pub fn fit_rows(
    times: &[f64],
    y: &DMatrix<f64>,
    basis: &FourierBasis,
    alpha: f64,
) -> Result<(FourierCoefficients, FitDiagnostics)> {
    let u = regressor(times, basis);
    let sigma_min_scaled = scaled_min_gram_eigenvalue(&u);
    if !(sigma_min_scaled >= alpha) {
        return Err(Error::RankDeficient {
            sigma_scaled: sigma_min_scaled,
            alpha,
        });
    }
    let svd = u.svd(true, true);
    let wt = svd
        .solve(y, 1e-14)
        .map_err(|e| Error::InvalidConfig(format!("least-squares solve failed: {e}")))?;
    let coeffs = FourierCoefficients::new(wt.transpose(), *basis)?;
    Ok((
        coeffs,
        FitDiagnostics {
            sigma_min_scaled,
            samples: times.len(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use std::f64::consts::PI;

    fn basis(order: usize) -> FourierBasis {
        FourierBasis::from_period(order, 2.0).unwrap()
    }

    #[test]
    fn basis_ordering() {
        let b = basis(2);
        let v = b.eval(0.0);
        assert_eq!(v, dvector![1.0, 1.0, 0.0, 1.0, 0.0]);
        // ωt = π/2
        let t = 0.5 * PI / b.omega;
        let v = b.eval(t);
        let want = [1.0, 0.0, 1.0, -1.0, 0.0];
        for (a, w) in v.iter().zip(want) {
            assert!((a - w).abs() < 1e-15);
        }
        let b0 = basis(0);
        assert_eq!(b0.eval(0.37), dvector![1.0]);
        assert_eq!(b0.dim(), 1);
    }

    #[test]
    fn rejects_nonpositive_frequency() {
        assert!(FourierBasis::new(2, 0.0).is_err());
        assert!(FourierBasis::new(2, -1.0).is_err());
    }

    #[test]
    fn quadrature_examples() {
        let b = basis(2);
        let w = b.omega;
        let q = 8 * b.dim();
        let c = coefficients_by_quadrature(|t| dvector![(w * t).cos()], &b, q).unwrap();
        let want = [0.0, 1.0, 0.0, 0.0, 0.0];
        for (a, e) in c.coeffs().iter().zip(want) {
            assert!((a - e).abs() < 1e-12);
        }
        let c = coefficients_by_quadrature(|_| dvector![3.5], &b, q).unwrap();
        assert!((c.coeffs()[(0, 0)] - 3.5).abs() < 1e-12);
        assert!(c.coeffs().columns(1, 4).iter().all(|x| x.abs() < 1e-12));

        // sin² = 1/2 − cos(2ωt)/2
        let c = coefficients_by_quadrature(|t| dvector![(w * t).sin().powi(2)], &b, q).unwrap();
        let want = [0.5, 0.0, 0.0, -0.5, 0.0];
        for (a, e) in c.coeffs().iter().zip(want) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn quadrature_needs_enough_points() {
        let b = basis(3);
        assert!(matches!(
            coefficients_by_quadrature(|_| dvector![1.0], &b, 8 * 7 - 1),
            Err(Error::InsufficientQuadrature { required: 56, .. })
        ));
    }

    #[test]
    fn quadrature_reconstructs_trig_polynomial() {
        let b = basis(4);
        let w0 = DMatrix::from_fn(2, b.dim(), |i, j| (i as f64 + 1.0) * (j as f64 - 3.3).sin());
        let truth = FourierCoefficients::new(w0.clone(), b).unwrap();
        let c = coefficients_by_quadrature(|t| truth.eval(t), &b, 8 * b.dim()).unwrap();
        assert!((c.coeffs() - w0).amax() < 1e-8);
    }

    #[test]
    fn fit_recovers_trig_polynomial_over_one_and_a_half_periods() {
        let b = basis(3);
        let w0 = DMatrix::from_fn(1, b.dim(), |_, j| 0.7 * j as f64 - 1.1);
        let truth = FourierCoefficients::new(w0.clone(), b).unwrap();
        let count = 4 * b.dim();
        let span = 1.5 * b.period();
        let samples: Vec<_> = (0..count)
            .map(|i| {
                let t = span * i as f64 / (count - 1) as f64;
                (t, truth.eval(t))
            })
            .collect();
        let (fit, diag) = fit_least_squares(&samples, &b, DEFAULT_ALPHA).unwrap();
        assert!((fit.coeffs() - w0).amax() < 1e-8);
        assert!(diag.sigma_min_scaled > DEFAULT_ALPHA);
        assert_eq!(diag.samples, count);
    }

    #[test]
    fn fit_constant() {
        let b = basis(2);
        let samples: Vec<_> = (0..20).map(|i| (0.1 * i as f64, dvector![5.0])).collect();
        let (fit, _) = fit_least_squares(&samples, &b, DEFAULT_ALPHA).unwrap();
        assert!((fit.coeffs()[(0, 0)] - 5.0).abs() < 1e-12);
        assert!(fit.coeffs().columns(1, 4).amax() < 1e-12);
    }

    #[test]
    fn fit_underdetermined_is_rank_deficient() {
        let b = basis(2);
        let samples: Vec<_> = (0..4).map(|i| (0.3 * i as f64, dvector![1.0])).collect();
        assert!(matches!(
            fit_least_squares(&samples, &b, DEFAULT_ALPHA),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn basis_orthogonality() {
        for order in 0..=8 {
            let b = basis(order);
            let period = b.period();
            let q = 64 * b.dim();
            let dt = period / q as f64;
            let mut gram = DMatrix::zeros(b.dim(), b.dim());
            for i in 0..q {
                let f = b.eval(i as f64 * dt);
                gram += &f * f.transpose() * dt;
            }
            let mut want = DMatrix::from_diagonal_element(b.dim(), b.dim(), period / 2.0);
            want[(0, 0)] = period;
            assert!((gram - want).amax() < 1e-8, "order {order}");
        }
    }

    #[test]
    fn smooth_function_fit_error_shrinks_as_order_doubles() {
        let period = 2.0;
        let omega = 2.0 * PI / period;
        let f = |t: f64| dvector![(omega * t).sin().exp()];
        let grid: Vec<f64> = (0..2000).map(|i| period * i as f64 / 2000.0).collect();
        let mut last = f64::INFINITY;
        for order in [1, 2, 4, 8] {
            let b = FourierBasis::new(order, omega).unwrap();
            let c = coefficients_by_quadrature(f, &b, 8 * b.dim().max(16)).unwrap();
            let err = grid
                .iter()
                .map(|&t| (c.eval(t)[0] - f(t)[0]).abs())
                .fold(0.0, f64::max);
            assert!(err <= last, "order {order}: {err} > {last}");
            last = err;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn refit_is_a_projection() {
        let b = basis(3);
        let samples: Vec<_> = (0..60)
            .map(|i| {
                let t = 0.05 * i as f64;
                (t, dvector![t.sin().exp(), (3.0 * t).cos() * t])
            })
            .collect();
        let (fit, _) = fit_least_squares(&samples, &b, DEFAULT_ALPHA).unwrap();
        let refit_samples: Vec<_> = samples.iter().map(|(t, _)| (*t, fit.eval(*t))).collect();
        let (refit, _) = fit_least_squares(&refit_samples, &b, DEFAULT_ALPHA).unwrap();
        assert!((refit.coeffs() - fit.coeffs()).amax() < 1e-10);
    }
}
