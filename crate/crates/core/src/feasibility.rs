//! ppO2 and equivalent-narcotic-depth windows, and the feasible-gas set at a depth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Environment, Gas, Instance};

/// Narcotic inert fraction of air, the END reference.
pub const AIR_NARCOTIC_FRACTION: f64 = 0.79;

const BOUNDARY_TOL: f64 = 1e-12;

/// Spacing (m) at which gas feasibility is sampled along a transit.
pub const TRANSIT_CHECK_SPACING: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityWindows {
    pub ppo2_min: f64,
    pub ppo2_max: f64,
    pub end_max: f64,
    /// Narcotic weight of oxygen.
    pub eta: f64,
}

impl FeasibilityWindows {
    pub fn new(ppo2_min: f64, ppo2_max: f64, end_max: f64, eta: f64) -> Result<Self> {
        let w = FeasibilityWindows {
            ppo2_min,
            ppo2_max,
            end_max,
            eta,
        };
        if !(ppo2_min > 0.0 && ppo2_min <= ppo2_max && ppo2_max.is_finite()) {
            return Err(Error::invalid(
                "windows.ppo2",
                format!("need 0 < ppo2_min <= ppo2_max, got [{ppo2_min}, {ppo2_max}]"),
            ));
        }
        if !(end_max >= 0.0 && end_max.is_finite()) {
            return Err(Error::invalid("windows.end_max", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::invalid("windows.eta", format!("must lie in [0, 1], got {eta}")));
        }
        Ok(w)
    }

    pub fn validate(&self, env: &Environment) -> Result<()> {
        FeasibilityWindows::new(self.ppo2_min, self.ppo2_max, self.end_max, self.eta)?;
        if self.end_max > env.z_max {
            return Err(Error::invalid(
                "windows.end_max",
                format!("must not exceed z_max = {}", env.z_max),
            ));
        }
        Ok(())
    }
}

pub fn ppo2(gas: &Gas, env: &Environment, z: f64) -> Result<f64> {
    env.check_depth(z)?;
    Ok(gas.f_o2 * env.inspired(z))
}

pub fn narcotic_fraction(gas: &Gas, eta: f64) -> f64 {
    gas.f_n2 + eta * gas.f_o2
}

/// Equivalent narcotic depth; negative values are legitimate.
pub fn end_depth(gas: &Gas, env: &Environment, z: f64, eta: f64) -> Result<f64> {
    env.check_depth(z)?;
    Ok(end_unchecked(gas, env, z, eta))
}

fn end_unchecked(gas: &Gas, env: &Environment, z: f64, eta: f64) -> f64 {
    let f_nar = narcotic_fraction(gas, eta);
    f_nar / AIR_NARCOTIC_FRACTION * z
        + (f_nar - AIR_NARCOTIC_FRACTION) / (AIR_NARCOTIC_FRACTION * env.gamma) * (env.p0 - env.w)
}

/// Window test at a single depth, boundaries inclusive.
pub fn gas_feasible_at(
    gas: &Gas,
    env: &Environment,
    windows: &FeasibilityWindows,
    z: f64,
) -> bool {
    let pp = gas.f_o2 * env.inspired(z);
    pp >= windows.ppo2_min - BOUNDARY_TOL
        && pp <= windows.ppo2_max + BOUNDARY_TOL
        && end_unchecked(gas, env, z, windows.eta) <= windows.end_max + BOUNDARY_TOL
}

/// Feasibility along `[z_lo, z_hi]`, sampled at both ends and every metre.
pub fn gas_feasible_on(
    gas: &Gas,
    env: &Environment,
    windows: &FeasibilityWindows,
    z_lo: f64,
    z_hi: f64,
) -> std::result::Result<(), f64> {
    for z in transit_check_depths(z_lo, z_hi) {
        if !gas_feasible_at(gas, env, windows, z) {
            return Err(z);
        }
    }
    Ok(())
}

pub(crate) fn transit_check_depths(z_lo: f64, z_hi: f64) -> impl Iterator<Item = f64> {
    let (lo, hi) = if z_lo <= z_hi { (z_lo, z_hi) } else { (z_hi, z_lo) };
    let inner = ((hi - lo) / TRANSIT_CHECK_SPACING).ceil().max(1.0) as usize;
    (0..=inner).map(move |k| {
        if k == inner {
            hi
        } else {
            lo + k as f64 * TRANSIT_CHECK_SPACING
        }
    })
}

/// Indices of gases feasible at `z`, in alphabet order.
pub fn feasible_gases(inst: &Instance, z: f64) -> Result<Vec<usize>> {
    inst.environment.check_depth(z)?;
    let set: Vec<usize> = inst
        .gases
        .iter()
        .enumerate()
        .filter(|(_, g)| gas_feasible_at(g, &inst.environment, &inst.windows, z))
        .map(|(i, _)| i)
        .collect();
    if set.is_empty() {
        Err(Error::EmptyFeasibleSet { depth: z })
    } else {
        Ok(set)
    }
}
