use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::constants::{apriori_constants, AprioriConstants};
use crate::error::{Error, Result};
use crate::model::Instance;
use crate::planner::{build_grid, plan_scalarized, MenuRule};

/// Slack for the non-increasing-gap check.
pub const CONVERGENCE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub dz: f64,
    pub delta: f64,
    pub j: f64,
    /// `J(row) - J(finest)`.
    pub gap: f64,
    /// `C1 Δz + C2 δ`.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub lambda: f64,
    pub menu_max: f64,
    pub rows: Vec<ConvergenceRow>,
    /// Smallest `c` with `gap <= c (Δz + δ)` on every row.
    pub fitted: f64,
    pub constants: AprioriConstants,
    pub monotone: bool,
    pub within_bound: bool,
}

/// Best `J_λ` on uniform grids `(Δz_i, δ_i)`; the menu at level `i` is
/// `{0, 2δ_i, 4δ_i, ..} <= menu_max`, so halving both nests the plan classes.
pub fn discretisation_convergence(
    inst: &Instance,
    lambda: f64,
    dz_list: &[f64],
    delta_list: &[f64],
    menu_max: f64,
) -> Result<ConvergenceTable> {
    if dz_list.is_empty() || dz_list.len() != delta_list.len() {
        return Err(Error::invalid("dz_list", "need equally many Δz and δ values"));
    }
    if dz_list.windows(2).any(|w| w[1] >= w[0]) || delta_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("dz_list", "Δz and δ lists must be decreasing"));
    }
    let constants = apriori_constants(inst, lambda)?;
    let js: Vec<Result<f64>> = dz_list
        .par_iter()
        .zip(delta_list.par_iter())
        .map(|(&dz, &delta)| {
            let menu = MenuRule::Uniform { step: 2.0 * delta, max: menu_max };
            let grid = build_grid(inst, dz, &menu)?;
            Ok(plan_scalarized(inst, &grid, lambda)?.objective)
        })
        .collect();
    let js: Vec<f64> = js.into_iter().collect::<Result<_>>()?;
    let finest = *js.last().unwrap();
    let rows: Vec<ConvergenceRow> = dz_list
        .iter()
        .zip(delta_list)
        .zip(&js)
        .map(|((&dz, &delta), &j)| ConvergenceRow {
            dz,
            delta,
            j,
            gap: j - finest,
            bound: constants.c1 * dz + constants.c2 * delta,
        })
        .collect();
    let monotone = rows.windows(2).all(|w| w[1].gap <= w[0].gap + CONVERGENCE_SLACK);
    let within_bound = rows.iter().all(|r| r.gap <= r.bound + CONVERGENCE_SLACK);
    let fitted = rows
        .iter()
        .map(|r| r.gap.max(0.0) / (r.dz + r.delta))
        .fold(0.0, f64::max);
    Ok(ConvergenceTable {
        lambda,
        menu_max,
        rows,
        fitted,
        constants,
        monotone,
        within_bound,
    })
}
