//! Model-based periodic LQ gain designed on a nominal model.

use crate::error::{Result, Stage, StageExt};
use crate::periodic_system::{CostSpec, CtlpSystem, GainSchedule};
use crate::pre_solver::{steady_periodic_solution, SteadyOptions};

/// Fourier order used to represent the nominal optimal gain.
pub const MBPLQ_GAIN_ORDER: usize = 24;

/// Steady periodic LQ gain of `sys_nominal`, integrated with step `h`.
///
/// Applied to a plant that differs from `sys_nominal`, this is the
/// model-mismatched baseline.
pub fn mbplq_controller(sys_nominal: &CtlpSystem, cost: &CostSpec, h: f64) -> Result<GainSchedule> {
    let opts = SteadyOptions {
        step: h,
        ..SteadyOptions::default()
    };
    let st = steady_periodic_solution(sys_nominal, cost, &opts).stage(Stage::Oracle)?;
    st.gain_schedule(sys_nominal, cost, MBPLQ_GAIN_ORDER).stage(Stage::Oracle)
}
