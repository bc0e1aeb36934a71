//! Classical fixed-step fourth-order Runge–Kutta.

use std::ops::{Add, Mul};

/// One RK4 step of `y' = f(t, y)`.
///
/// `post_stage` is applied to every intermediate stage state and to the
/// result; matrix Riccati flows use it to re-symmetrize.
pub fn rk4_step_with<S, F, G>(f: &F, t: f64, y: &S, h: f64, post_stage: &G) -> S
where
    S: Clone + Add<S, Output = S> + Mul<f64, Output = S>,
    F: Fn(f64, &S) -> S,
    G: Fn(S) -> S,
{
    let k1 = f(t, y);
    let y2 = post_stage(y.clone() + k1.clone() * (0.5 * h));
    let k2 = f(t + 0.5 * h, &y2);
    let y3 = post_stage(y.clone() + k2.clone() * (0.5 * h));
    let k3 = f(t + 0.5 * h, &y3);
    let y4 = post_stage(y.clone() + k3.clone() * h);
    let k4 = f(t + h, &y4);
    let incr = (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    post_stage(y.clone() + incr)
}

pub fn rk4_step<S, F>(f: &F, t: f64, y: &S, h: f64) -> S
where
    S: Clone + Add<S, Output = S> + Mul<f64, Output = S>,
    F: Fn(f64, &S) -> S,
{
    rk4_step_with(f, t, y, h, &|s| s)
}

/// Number of equal steps of size at most `max_step` covering `span`, and
/// the resulting step. A span that is an integer multiple of `max_step`
/// (up to rounding) keeps `max_step` exactly.
pub fn uniform_steps(span: f64, max_step: f64) -> (usize, f64) {
    if span <= 0.0 {
        return (0, max_step);
    }
    let ratio = span / max_step;
    let nearest = ratio.round();
    let count = if (ratio - nearest).abs() <= 1e-9 * ratio.max(1.0) {
        nearest.max(1.0) as usize
    } else {
        ratio.ceil() as usize
    };
    (count, span / count as f64)
}
