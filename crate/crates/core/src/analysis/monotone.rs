use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Instance;
use crate::planner::{plan_scalarized_with, FeasibilityTable, StopGrid};

pub const MONOTONE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepValue {
    pub parameter: f64,
    /// `None` when no plan exists at this parameter.
    pub j_star: Option<f64>,
    #[serde(rename = "T")]
    pub t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub lambda: f64,
    pub eta: Vec<SweepValue>,
    /// `w` sweep with gas feasibility frozen at the base instance.
    pub w_frozen: Vec<SweepValue>,
    /// `w` sweep with feasibility recomputed; reported only.
    pub w_free: Vec<SweepValue>,
    pub eta_nondecreasing: bool,
    pub w_frozen_nonincreasing: bool,
}

fn solve(inst: &Instance, grid: &StopGrid, lambda: f64, table: Option<&FeasibilityTable>) -> Result<SweepValue> {
    let owned;
    let table = match table {
        Some(t) => t,
        None => match FeasibilityTable::compute(inst, grid) {
            Ok(t) => {
                owned = t;
                &owned
            }
            Err(e) if e.is_infeasible() => {
                return Ok(SweepValue { parameter: 0.0, j_star: None, t: None });
            }
            Err(e) => return Err(e),
        },
    };
    match plan_scalarized_with(inst, grid, lambda, table) {
        Ok(p) => Ok(SweepValue {
            parameter: 0.0,
            j_star: Some(p.objective),
            t: Some(p.outcome.total_time),
        }),
        Err(e) if e.is_infeasible() => Ok(SweepValue { parameter: 0.0, j_star: None, t: None }),
        Err(e) => Err(e),
    }
}

/// Infeasible counts as `+inf`, so a later infeasible point never breaks "nondecreasing".
fn value(v: &SweepValue) -> f64 {
    v.j_star.unwrap_or(f64::INFINITY)
}

pub fn eta_w_monotonicity(
    inst: &Instance,
    grid: &StopGrid,
    lambda: f64,
    etas: &[f64],
    ws: &[f64],
) -> Result<MonotonicityReport> {
    if etas.windows(2).any(|w| w[1] < w[0]) || ws.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("sweep", "eta and w lists must be ascending"));
    }
    let mut eta = Vec::with_capacity(etas.len());
    for &e in etas {
        let mut v = inst.clone();
        v.windows.eta = e;
        v.validate()?;
        let mut r = solve(&v, grid, lambda, None)?;
        r.parameter = e;
        eta.push(r);
    }
    let base = FeasibilityTable::compute(inst, grid)?;
    let mut w_frozen = Vec::with_capacity(ws.len());
    let mut w_free = Vec::with_capacity(ws.len());
    for &w in ws {
        let mut v = inst.clone();
        v.environment.w = w;
        v.validate()?;
        let mut r = solve(&v, grid, lambda, Some(&base))?;
        r.parameter = w;
        w_frozen.push(r);
        let mut r = solve(&v, grid, lambda, None)?;
        r.parameter = w;
        w_free.push(r);
    }
    let tol = |x: f64| MONOTONE_TOL * (1.0 + x.abs());
    let eta_nondecreasing = eta
        .windows(2)
        .all(|p| value(&p[1]) == f64::INFINITY || value(&p[1]) >= value(&p[0]) - tol(value(&p[0])));
    let w_frozen_nonincreasing = w_frozen
        .windows(2)
        .all(|p| value(&p[0]) == f64::INFINITY || value(&p[1]) <= value(&p[0]) + tol(value(&p[1])));
    Ok(MonotonicityReport {
        lambda,
        eta,
        w_frozen,
        w_free,
        eta_nondecreasing,
        w_frozen_nonincreasing,
    })
}
