//! Closed-loop quadratic cost by simulation.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::ode::{rk4_step, uniform_steps};
use crate::periodic_system::{stability_report, CostSpec, CtlpSystem, GainSchedule, DEFAULT_STABILITY_TOL};

/// Relative size of the neglected tail.
pub const COST_TAIL_TOL: f64 = 1e-6;
/// Upper limit on the number of periods simulated past `horizon`.
pub const MAX_EXTRA_PERIODS: usize = 100_000;

/// `J = ∫_{t0}^{∞} |C x|² + uᵀ R u dt` under `u = −K(t)x`.
///
/// The cost is integrated alongside the state with RK4 for at least
/// `horizon`, then period by period until the geometric tail implied by the
/// largest characteristic multiplier `ρ`, `c_last ρ²/(1 − ρ²)`, is below
/// `1e-6` of the accumulated cost.
pub fn evaluate_cost(
    sys: &CtlpSystem,
    cost: &CostSpec,
    gain: &GainSchedule,
    x0: &DVector<f64>,
    t0: f64,
    horizon: f64,
    step: f64,
) -> Result<f64> {
    let n = sys.n();
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "initial state has length {}, plant has {n} states",
            x0.len()
        )));
    }
    if gain.dims() != (sys.m(), n) {
        return Err(Error::DimensionMismatch("gain does not match the plant".into()));
    }
    cost.check_dims(n, sys.m())?;
    if !(step > 0.0) || !(horizon > 0.0) {
        return Err(Error::InvalidConfig("horizon and step must be positive".into()));
    }
    let period = sys.period();
    let rho = stability_report(sys, Some(gain), t0, period / 2000.0, DEFAULT_STABILITY_TOL).max_multiplier;
    if !(rho < 1.0 - DEFAULT_STABILITY_TOL) {
        return Err(Error::DivergentCost { max_multiplier: rho });
    }
    if x0.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }

    // augmented state [x; J]
    let f = |t: f64, z: &DVector<f64>| {
        let x = z.rows(0, n).into_owned();
        let u = -(gain.eval(t) * &x);
        let dx = sys.a(t) * &x + sys.b(t) * &u;
        let cx = cost.c(t) * &x;
        let dj = cx.norm_squared() + (u.transpose() * cost.r(t) * &u)[(0, 0)];
        let mut dz = DVector::zeros(n + 1);
        dz.rows_mut(0, n).copy_from(&dx);
        dz[n] = dj;
        dz
    };
    let mut z = DVector::zeros(n + 1);
    z.rows_mut(0, n).copy_from(x0);
    let mut t = t0;
    let advance = |z: &mut DVector<f64>, t: &mut f64, span: f64| -> Result<()> {
        let (count, h) = uniform_steps(span, step);
        for _ in 0..count {
            *z = rk4_step(&f, *t, z, h);
            *t += h;
        }
        if z.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::DivergentCost { max_multiplier: rho })
        }
    };
    advance(&mut z, &mut t, horizon)?;
    let decay = rho * rho / (1.0 - rho * rho);
    for _ in 0..MAX_EXTRA_PERIODS {
        let before = z[n];
        advance(&mut z, &mut t, period)?;
        let last = z[n] - before;
        if last * decay <= COST_TAIL_TOL * z[n] {
            return Ok(z[n]);
        }
    }
    Err(Error::DivergentCost { max_multiplier: rho })
}
