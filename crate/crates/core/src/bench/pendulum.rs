//! Linearized triple inverted pendulum with a periodically varying load.

use std::f64::consts::PI;

use nalgebra::{dmatrix, DMatrix};

use crate::error::{Error, Result};
use crate::periodic_system::{CostSpec, CtlpSystem, PeriodicMatrixFunction};

pub const PENDULUM_PERIOD: f64 = 2.0 * PI;

/// Load-dependent block `A₂₁(t)` without the disturbance, `γ = 1 + 2cos t`.
pub fn a21(t: f64) -> DMatrix<f64> {
    let g = 1.0 + 2.0 * t.cos();
    dmatrix![
        g - 3.0, 3.0 - g, -1.0;
        4.0 - g, 2.0 * (g - 3.0), 3.0 - g;
        -1.0, 4.0 - g, g - 3.0
    ]
}

pub fn a22() -> DMatrix<f64> {
    dmatrix![
        -0.5, 0.0, 0.0;
        0.5, -0.5, 0.0;
        0.0, 0.5, -0.5
    ]
}

pub fn b2() -> DMatrix<f64> {
    dmatrix![
        1.0, -1.0, 0.0;
        -1.0, 2.0, -1.0;
        0.0, -1.0, 2.0
    ]
}

/// `A(t) = [0 I; A₂₁(t) + ζ(1 + sin 3t)I  A₂₂]`.
pub fn pendulum_a(zeta: f64, t: f64) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(6, 6);
    a.view_mut((0, 3), (3, 3)).fill_with_identity();
    let lower = a21(t) + DMatrix::identity(3, 3) * (zeta * (1.0 + (3.0 * t).sin()));
    a.view_mut((3, 0), (3, 3)).copy_from(&lower);
    a.view_mut((3, 3), (3, 3)).copy_from(&a22());
    a
}

pub fn pendulum_b() -> DMatrix<f64> {
    let mut b = DMatrix::zeros(6, 3);
    b.view_mut((3, 0), (3, 3)).copy_from(&b2());
    b
}

/// The plant with disturbance magnitude `ζ` and the cost `C = I₆`, `R = I₃`.
pub fn build_triple_pendulum(zeta: f64) -> Result<(CtlpSystem, CostSpec)> {
    if !(zeta >= 0.0) || !zeta.is_finite() {
        return Err(Error::InvalidConfig(format!("ζ must be non-negative, got {zeta}")));
    }
    let a = PeriodicMatrixFunction::new(6, 6, PENDULUM_PERIOD, move |t| pendulum_a(zeta, t))?;
    let b = PeriodicMatrixFunction::constant(pendulum_b(), PENDULUM_PERIOD)?;
    let sys = CtlpSystem::new(a, b)?;
    let cost = CostSpec::constant(DMatrix::identity(6, 6), DMatrix::identity(3, 3), PENDULUM_PERIOD)?;
    Ok((sys, cost))
}
