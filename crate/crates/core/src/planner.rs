//! Layered stop-grid planners: label-setting for `T + λR` and risk-binned DP for the
//! risk-capped problem, plus an exhaustive oracle over the same decision class.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility::{feasible_gases, gas_feasible_on};
use crate::model::{Instance, TissueState};
use crate::schedule::{
    hold_risk_unchecked, ramp_risk_unchecked, simulate_with, Outcome, Profile, SimulateOptions,
};

const DOMINANCE_TOL: f64 = 1e-12;
const VERIFY_TOL: f64 = 1e-9;
/// Relative slack before a label is cut by the incumbent bound.
const PRUNE_TOL: f64 = 1e-9;
/// Best labels per layer completed greedily to refresh the incumbent.
const INCUMBENT_PROBES: usize = 4;
/// Upper bound on the number of complete decision sequences the oracle will enumerate.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

/// Dwell menu recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MenuRule {
    /// `{0} ∪ {tau_min · 2^k <= tau_max}`.
    Exponential { tau_min: f64, tau_max: f64 },
    List { values: Vec<f64> },
    /// `{0, step, 2 step, ..} <= max`.
    Uniform { step: f64, max: f64 },
}

impl MenuRule {
    pub fn menu(&self) -> Result<Vec<f64>> {
        let mut m = vec![0.0];
        match self {
            MenuRule::Exponential { tau_min, tau_max } => {
                if !(*tau_min > 0.0 && tau_max.is_finite() && tau_max >= tau_min) {
                    return Err(Error::invalid(
                        "menu",
                        format!("exponential menu needs 0 < tau_min <= tau_max, got {tau_min}, {tau_max}"),
                    ));
                }
                let mut t = *tau_min;
                while t <= tau_max * (1.0 + 1e-12) {
                    m.push(t);
                    t *= 2.0;
                }
            }
            MenuRule::List { values } => {
                for &v in values {
                    if !(v >= 0.0 && v.is_finite()) {
                        return Err(Error::invalid("menu", format!("dwell {v} must be finite and >= 0")));
                    }
                    m.push(v);
                }
            }
            MenuRule::Uniform { step, max } => {
                if !(*step > 0.0 && max.is_finite() && *max >= 0.0) {
                    return Err(Error::invalid("menu", "uniform menu needs step > 0 and max >= 0"));
                }
                let n = (max / step + 1e-9).floor() as usize;
                m.extend((1..=n).map(|k| k as f64 * step));
            }
        }
        m.sort_by(f64::total_cmp);
        m.dedup();
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopGrid {
    /// Strictly decreasing, from `z_start` to 0.
    pub depths: Vec<f64>,
    pub dz: f64,
    /// Dwell menu per depth; each contains 0.
    pub menus: Vec<Vec<f64>>,
    /// Largest covering radius of any menu over `[0, max menu entry]`.
    pub delta: f64,
}

impl StopGrid {
    /// Grid with explicit depths and per-depth menus.
    pub fn custom(depths: Vec<f64>, menus: Vec<Vec<f64>>) -> Result<Self> {
        if depths.is_empty() || menus.len() != depths.len() {
            return Err(Error::invalid("grid", "need one menu per depth"));
        }
        if depths.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("grid.depths", "must be strictly decreasing"));
        }
        if *depths.last().unwrap() != 0.0 {
            return Err(Error::invalid("grid.depths", "must end at the surface"));
        }
        let mut clean = Vec::with_capacity(menus.len());
        for m in menus {
            clean.push(MenuRule::List { values: m }.menu()?);
        }
        let dz = depths
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(0.0, f64::max);
        let delta = clean.iter().map(|m| covering_radius(m)).fold(0.0, f64::max);
        Ok(StopGrid {
            depths,
            dz,
            menus: clean,
            delta,
        })
    }

    pub fn layers(&self) -> usize {
        self.depths.len()
    }

    /// Number of complete decision sequences under a gas alphabet of size `gases`.
    pub fn decision_count(&self, gases: usize) -> f64 {
        let g = gases as f64;
        self.menus[..self.menus.len().saturating_sub(1)]
            .iter()
            .map(|m| (1.0 + g * (m.len() as f64 - 1.0)) * g)
            .product()
    }
}

fn covering_radius(menu: &[f64]) -> f64 {
    menu.windows(2).map(|w| 0.5 * (w[1] - w[0])).fold(0.0, f64::max)
}

/// Uniform depth grid from `z_start` to the surface with a shared menu.
pub fn build_grid(inst: &Instance, dz: f64, menu: &MenuRule) -> Result<StopGrid> {
    if !(dz > 0.0 && dz.is_finite()) {
        return Err(Error::Domain {
            what: "dz",
            value: dz,
            domain: "(0, inf) m".into(),
        });
    }
    let menu = menu.menu()?;
    let z0 = inst.z_start;
    let mut depths = vec![z0];
    if z0 > 0.0 {
        // Highest grid multiple strictly shallower than z_start.
        let mut k = (z0 / dz - 1e-9).ceil() as i64 - 1;
        while k > 0 {
            depths.push(k as f64 * dz);
            k -= 1;
        }
        depths.push(0.0);
    }
    let menus = vec![menu; depths.len()];
    let delta = covering_radius(&menus[0]);
    Ok(StopGrid {
        depths,
        dz,
        menus,
        delta,
    })
}

/// Feasible hold gases per layer and transit gases per layer-to-next arc.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityTable {
    pub hold: Vec<Vec<usize>>,
    pub transit: Vec<Vec<usize>>,
}

impl FeasibilityTable {
    pub fn compute(inst: &Instance, grid: &StopGrid) -> Result<Self> {
        let n = grid.layers();
        let mut hold = Vec::with_capacity(n);
        let mut transit = Vec::with_capacity(n);
        for j in 0..n.saturating_sub(1) {
            let (z, z_next) = (grid.depths[j], grid.depths[j + 1]);
            hold.push(feasible_gases(inst, z)?);
            let t: Vec<usize> = (0..inst.gases.len())
                .filter(|&g| {
                    gas_feasible_on(&inst.gases[g], &inst.environment, &inst.windows, z_next, z)
                        .is_ok()
                })
                .collect();
            if t.is_empty() {
                return Err(Error::Infeasible(format!(
                    "no single gas is feasible along the ascent {z} m -> {z_next} m"
                )));
            }
            transit.push(t);
        }
        hold.push(Vec::new());
        transit.push(Vec::new());
        Ok(FeasibilityTable { hold, transit })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DominanceMode {
    /// Compare accumulated `T + λR (+ switch cost)`.
    Scalarized,
    /// Compare time, risk bin and exact risk.
    Capped,
    /// Compare exact risk only.
    MinRisk,
}

/// Planner search node.
#[derive(Debug, Clone, PartialEq)]
pub struct Label {
    pub layer: usize,
    pub risk_bin: u64,
    pub state: TissueState,
    pub time: f64,
    pub risk: f64,
    pub cost: f64,
    pub switches: usize,
    /// Last gas breathed on a positive-duration segment.
    pub gas: Option<usize>,
    /// Arena index of the decision that produced this label.
    pub parent: Option<usize>,
    seq: u64,
}

/// True when `a` is at least as good as `b` for every completion.
pub fn dominates(a: &Label, b: &Label, mode: DominanceMode) -> Result<bool> {
    if a.layer != b.layer {
        return Err(Error::Logic(format!(
            "dominance across layers {} and {}",
            a.layer, b.layer
        )));
    }
    Ok(dominates_unchecked(a, b, mode))
}

fn dominates_unchecked(a: &Label, b: &Label, mode: DominanceMode) -> bool {
    let t = DOMINANCE_TOL;
    let scalar = match mode {
        DominanceMode::Scalarized => a.cost <= b.cost + t,
        DominanceMode::Capped => {
            a.time <= b.time + t && a.risk_bin <= b.risk_bin && a.risk <= b.risk + t
        }
        DominanceMode::MinRisk => a.risk <= b.risk + t,
    };
    scalar && a.state.le(&b.state, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Objective {
    /// Minimise `T + λR + switch_cost · switches`.
    Scalarized { lambda: f64 },
    /// Minimise `T` subject to `ceil(R/Δr) <= ceil(ρ/Δr)`.
    Capped { rho: f64, dr: f64 },
}

/// Risk bin of an accumulated risk.
pub fn risk_bin(risk: f64, dr: f64) -> u64 {
    (risk / dr - 1e-12).ceil().max(0.0) as u64
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub labels_created: u64,
    pub labels_pruned: u64,
    pub layers: usize,
    /// Undominated labels kept per layer.
    pub labels_per_layer: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub profile: Profile,
    pub outcome: Outcome,
    /// Value of the optimised objective (`J_λ` or `T`).
    pub objective: f64,
    pub stats: SolverStats,
}

#[derive(Debug, Clone, Copy)]
struct Step {
    parent: Option<usize>,
    layer: usize,
    hold: Option<(usize, f64)>,
    transit: usize,
}

#[derive(Debug, Clone, Copy)]
enum Mode {
    Scalarized { lambda: f64 },
    Capped { dr: f64, budget: u64 },
    MinRisk,
}

impl Mode {
    fn primary(self, l: &Label) -> f64 {
        match self {
            Mode::Scalarized { .. } => l.cost,
            Mode::Capped { .. } => l.time,
            Mode::MinRisk => l.risk,
        }
    }
}

struct Search<'a> {
    inst: &'a Instance,
    grid: &'a StopGrid,
    table: &'a FeasibilityTable,
    mode: Mode,
    /// Per state entry, an upper bound on extra future risk per bar of excess pressure.
    risk_slack: Vec<f64>,
}

impl<'a> Search<'a> {
    fn new(inst: &'a Instance, grid: &'a StopGrid, table: &'a FeasibilityTable, mode: Mode) -> Self {
        // Under a shared completion a pressure gap decays like exp(-k t), and the
        // integrand moves by at most (max slope / smallest ceiling) per bar.
        let species = inst.species();
        let env = &inst.environment;
        let risk_slack = inst
            .compartments
            .iter()
            .zip(&inst.penalties)
            .flat_map(|(c, phi)| {
                let slope = phi.slopes.last().copied().unwrap_or(0.0);
                let m = c.ceiling_at(env, 0.0);
                (0..species).map(move |s| slope / (m * c.rate(s)))
            })
            .collect();
        Search {
            inst,
            grid,
            table,
            mode,
            risk_slack,
        }
    }

    /// `a` beats `b` for every completion: standard dominance, or in the
    /// scalarised and min-risk modes, a cost lead covering `a`'s excess pressure.
    fn beats(&self, a: &Label, b: &Label) -> bool {
        let (lead, weight) = match self.mode {
            Mode::Scalarized { lambda } => (b.cost - a.cost, lambda),
            Mode::MinRisk => (b.risk - a.risk, 1.0),
            Mode::Capped { .. } => return dominates_unchecked(a, b, DominanceMode::Capped),
        };
        if lead < -DOMINANCE_TOL {
            return false;
        }
        let mut excess = 0.0;
        for ((x, y), w) in a.state.as_slice().iter().zip(b.state.as_slice()).zip(&self.risk_slack) {
            if x > y {
                excess += (x - y) * w;
            }
        }
        weight * excess <= lead + DOMINANCE_TOL
    }

    fn hold_options(&self, j: usize) -> Vec<Option<(usize, f64)>> {
        let mut opts = vec![None];
        for &g in &self.table.hold[j] {
            for &tau in self.grid.menus[j].iter().filter(|&&t| t > 0.0) {
                opts.push(Some((g, tau)));
            }
        }
        opts
    }

    fn make_label(&self, parent: &Label, step: &Step, state: TissueState, dt: f64, dr: f64, seq: u64) -> Label {
        let mut switches = parent.switches;
        let mut gas = parent.gas;
        let mut visit = |g: usize| {
            if gas.is_some_and(|h| h != g) {
                switches += 1;
            }
            gas = Some(g);
        };
        if let Some((g, _)) = step.hold {
            visit(g);
        }
        visit(step.transit);
        let time = parent.time + dt;
        let risk = parent.risk + dr;
        let cost = match self.mode {
            Mode::Scalarized { lambda } => {
                time + lambda * risk + self.inst.switch_cost * switches as f64
            }
            _ => 0.0,
        };
        let risk_bin = match self.mode {
            Mode::Capped { dr, .. } => risk_bin(risk, dr),
            _ => 0,
        };
        Label {
            layer: step.layer + 1,
            risk_bin,
            state,
            time,
            risk,
            cost,
            switches,
            gas,
            parent: None,
            seq,
        }
    }

    /// All successors of `label` with their decisions.
    fn expand(&self, label: &Label, node: Option<usize>) -> Vec<(Label, Step)> {
        let j = label.layer;
        let (z, z_next) = (self.grid.depths[j], self.grid.depths[j + 1]);
        let transit_time = (z - z_next) / self.inst.environment.zdot_max;
        let mut out = Vec::new();
        for hold in self.hold_options(j) {
            let (r_hold, after_hold, tau) = match hold {
                None => (0.0, label.state.clone(), 0.0),
                Some((g, tau)) => {
                    let (r, s) = hold_risk_unchecked(&label.state, self.inst, z, g, tau);
                    (r, s, tau)
                }
            };
            for &t in &self.table.transit[j] {
                let (r_tr, end) = ramp_risk_unchecked(&after_hold, self.inst, z, z_next, t);
                let step = Step {
                    parent: node,
                    layer: j,
                    hold,
                    transit: t,
                };
                let l = self.make_label(label, &step, end, tau + transit_time, r_hold + r_tr, 0);
                out.push((l, step));
            }
        }
        out
    }

    fn run(&self) -> Result<(Label, Vec<Step>, SolverStats)> {
        let n = self.grid.layers();
        let mut stats = SolverStats {
            layers: n,
            ..SolverStats::default()
        };
        let mut arena: Vec<Step> = Vec::new();
        let root = Label {
            layer: 0,
            risk_bin: 0,
            state: self.inst.initial_state.clone(),
            time: 0.0,
            risk: 0.0,
            cost: 0.0,
            switches: 0,
            gas: None,
            parent: None,
            seq: 0,
        };
        let mut current = vec![root];
        stats.labels_created = 1;
        stats.labels_per_layer.push(1);
        let mut incumbent = f64::INFINITY;
        for j in 0..n - 1 {
            for l in current.iter().take(INCUMBENT_PROBES) {
                if let Some(done) = self.complete(l) {
                    incumbent = incumbent.min(self.mode.primary(&done));
                }
            }
            let cutoff = incumbent + PRUNE_TOL * (1.0 + incumbent.abs());
            let expanded: Vec<Vec<(Label, Step)>> = if current.len() >= 8 {
                current.par_iter().map(|l| self.expand(l, l.parent)).collect()
            } else {
                current.iter().map(|l| self.expand(l, l.parent)).collect()
            };
            let mut cands = Vec::new();
            for (l, step) in expanded.into_iter().flatten() {
                stats.labels_created += 1;
                let over_budget = match self.mode {
                    Mode::Capped { budget, .. } => l.risk_bin > budget,
                    _ => false,
                };
                if over_budget || self.bound(&l) > cutoff {
                    stats.labels_pruned += 1;
                    continue;
                }
                let mut l = l;
                l.seq = stats.labels_created;
                arena.push(step);
                l.parent = Some(arena.len() - 1);
                cands.push(l);
            }
            let before = cands.len();
            current = if j + 2 == n {
                // Surface layer: only the best label matters.
                cands.into_iter().min_by(|a, b| self.order(a, b)).into_iter().collect()
            } else {
                self.filter(cands)
            };
            stats.labels_pruned += (before - current.len()) as u64;
            stats.labels_per_layer.push(current.len());
            if current.is_empty() {
                break;
            }
        }
        let best = current
            .into_iter()
            .min_by(|a, b| self.order(a, b))
            .ok_or_else(|| Error::Infeasible("no label reaches the surface".into()))?;
        Ok((best, arena, stats))
    }

    /// Lower bound on the primary objective of any completion of `l`.
    fn bound(&self, l: &Label) -> f64 {
        match self.mode {
            Mode::Scalarized { .. } | Mode::Capped { .. } => {
                self.mode.primary(l) + self.grid.depths[l.layer] / self.inst.environment.zdot_max
            }
            Mode::MinRisk => l.risk,
        }
    }

    /// Greedy hold-free completion of `l` to the surface, if it respects the budget.
    fn complete(&self, l: &Label) -> Option<Label> {
        let mut cur = l.clone();
        let last = self.grid.layers() - 1;
        while cur.layer < last {
            let j = cur.layer;
            let (z, z_next) = (self.grid.depths[j], self.grid.depths[j + 1]);
            let dt = (z - z_next) / self.inst.environment.zdot_max;
            cur = self.table.transit[j]
                .iter()
                .map(|&t| {
                    let (r, end) = ramp_risk_unchecked(&cur.state, self.inst, z, z_next, t);
                    let step = Step { parent: None, layer: j, hold: None, transit: t };
                    self.make_label(&cur, &step, end, dt, r, 0)
                })
                .min_by(|a, b| self.order(a, b))?;
        }
        match self.mode {
            Mode::Capped { budget, .. } if cur.risk_bin > budget => None,
            _ => Some(cur),
        }
    }

    fn order(&self, a: &Label, b: &Label) -> std::cmp::Ordering {
        self.mode
            .primary(a)
            .total_cmp(&self.mode.primary(b))
            .then(a.risk.total_cmp(&b.risk))
            .then(a.gas.cmp(&b.gas))
            .then(a.seq.cmp(&b.seq))
    }

    /// Undominated subset, in canonical order.
    fn filter(&self, mut cands: Vec<Label>) -> Vec<Label> {
        cands.sort_by(|a, b| self.order(a, b));
        let keyed = self.inst.switch_cost > 0.0;
        let mut kept: Vec<Label> = Vec::new();
        for c in cands {
            let dominated = kept
                .iter()
                .any(|k| (!keyed || k.gas == c.gas) && self.beats(k, &c));
            if !dominated {
                kept.push(c);
            }
        }
        kept
    }
}

fn profile_from_steps(inst: &Instance, grid: &StopGrid, steps: &[Step]) -> Profile {
    let mut p = Profile::new(inst.z_start);
    for s in steps {
        if let Some((g, tau)) = s.hold {
            p = p.hold(g, tau);
        }
        p = p.ascend_to(grid.depths[s.layer + 1], s.transit);
    }
    p
}

fn chain(arena: &[Step], mut node: Option<usize>) -> Vec<Step> {
    let mut steps = Vec::new();
    while let Some(i) = node {
        steps.push(arena[i]);
        node = arena[i].parent;
    }
    steps.reverse();
    steps
}

fn finish(
    inst: &Instance,
    grid: &StopGrid,
    steps: &[Step],
    label_time: f64,
    label_risk: f64,
    objective: Objective,
    stats: SolverStats,
) -> Result<Plan> {
    let profile = profile_from_steps(inst, grid, steps);
    // Gas feasibility is whatever the table said; frozen tables may disagree with `inst`.
    let opts = SimulateOptions {
        check_feasibility: false,
        ..SimulateOptions::default()
    };
    let outcome = simulate_with(inst, &profile, &opts)?;
    let scale = 1.0 + label_risk.abs() + label_time.abs();
    if (outcome.total_risk - label_risk).abs() > VERIFY_TOL * scale
        || (outcome.total_time - label_time).abs() > VERIFY_TOL * scale
    {
        return Err(Error::Logic(format!(
            "re-simulation mismatch: label (T={label_time}, R={label_risk}) vs simulate (T={}, R={})",
            outcome.total_time, outcome.total_risk
        )));
    }
    let value = match objective {
        Objective::Scalarized { lambda } => outcome.objective(lambda, inst.switch_cost),
        Objective::Capped { .. } => outcome.total_time,
    };
    Ok(Plan {
        profile,
        outcome,
        objective: value,
        stats,
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Domain {
            what: "lambda",
            value: lambda,
            domain: "[0, inf)".into(),
        });
    }
    Ok(())
}

fn check_cap(rho: f64, dr: f64) -> Result<u64> {
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::Domain {
            what: "rho",
            value: rho,
            domain: "[0, inf)".into(),
        });
    }
    if !(dr > 0.0 && dr.is_finite()) {
        return Err(Error::Domain {
            what: "dr",
            value: dr,
            domain: "(0, inf)".into(),
        });
    }
    let budget = risk_bin(rho, dr);
    if budget as f64 > 1e15 {
        return Err(Error::TooLarge(format!("rho/dr = {} bins", rho / dr)));
    }
    Ok(budget)
}

fn check_grid(inst: &Instance, grid: &StopGrid) -> Result<()> {
    if (grid.depths[0] - inst.z_start).abs() > 1e-9 {
        return Err(Error::invalid(
            "grid",
            format!("first depth {} differs from z_start {}", grid.depths[0], inst.z_start),
        ));
    }
    if grid.depths[0] > inst.environment.z_max + 1e-9 {
        return Err(Error::invalid("grid", "deeper than z_max"));
    }
    Ok(())
}

/// Minimise `T + λR (+ switch cost)` over the grid's decision class.
pub fn plan_scalarized(inst: &Instance, grid: &StopGrid, lambda: f64) -> Result<Plan> {
    check_grid(inst, grid)?;
    let table = FeasibilityTable::compute(inst, grid)?;
    plan_scalarized_with(inst, grid, lambda, &table)
}

/// As [`plan_scalarized`], with a caller-supplied feasibility table.
pub fn plan_scalarized_with(
    inst: &Instance,
    grid: &StopGrid,
    lambda: f64,
    table: &FeasibilityTable,
) -> Result<Plan> {
    check_lambda(lambda)?;
    check_grid(inst, grid)?;
    let search = Search::new(inst, grid, table, Mode::Scalarized { lambda });
    let (best, arena, stats) = search.run()?;
    let steps = chain(&arena, best.parent);
    finish(inst, grid, &steps, best.time, best.risk, Objective::Scalarized { lambda }, stats)
}

/// Minimise `T` subject to the binned risk budget; the result satisfies `R <= ρ + Δr`.
pub fn plan_capped(inst: &Instance, grid: &StopGrid, rho: f64, dr: f64) -> Result<Plan> {
    check_grid(inst, grid)?;
    let table = FeasibilityTable::compute(inst, grid)?;
    plan_capped_with(inst, grid, rho, dr, &table)
}

pub fn plan_capped_with(
    inst: &Instance,
    grid: &StopGrid,
    rho: f64,
    dr: f64,
    table: &FeasibilityTable,
) -> Result<Plan> {
    let budget = check_cap(rho, dr)?;
    check_grid(inst, grid)?;
    let search = Search::new(inst, grid, table, Mode::Capped { dr, budget });
    match search.run() {
        Ok((best, arena, stats)) => {
            let steps = chain(&arena, best.parent);
            finish(inst, grid, &steps, best.time, best.risk, Objective::Capped { rho, dr }, stats)
        }
        Err(Error::Infeasible(_)) => {
            let min = min_risk(inst, grid, table)?;
            Err(Error::CapInfeasible {
                rho,
                min_binned_risk: risk_bin(min, dr) as f64 * dr,
            })
        }
        Err(e) => Err(e),
    }
}

/// Smallest achievable risk over the grid's decision class.
pub fn min_risk(inst: &Instance, grid: &StopGrid, table: &FeasibilityTable) -> Result<f64> {
    let search = Search::new(inst, grid, table, Mode::MinRisk);
    Ok(search.run()?.0.risk)
}

/// Exhaustive enumeration of every decision sequence on the grid.
pub fn brute_force_plan(inst: &Instance, grid: &StopGrid, objective: Objective) -> Result<Plan> {
    check_grid(inst, grid)?;
    let count = grid.decision_count(inst.gases.len());
    if count > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(format!(
            "{count:.3e} decision sequences exceed the oracle limit {BRUTE_FORCE_LIMIT:.0e}"
        )));
    }
    let mode = match objective {
        Objective::Scalarized { lambda } => {
            check_lambda(lambda)?;
            Mode::Scalarized { lambda }
        }
        Objective::Capped { rho, dr } => Mode::Capped {
            dr,
            budget: check_cap(rho, dr)?,
        },
    };
    let table = FeasibilityTable::compute(inst, grid)?;
    let search = Search::new(inst, grid, &table, mode);
    let root = Label {
        layer: 0,
        risk_bin: 0,
        state: inst.initial_state.clone(),
        time: 0.0,
        risk: 0.0,
        cost: 0.0,
        switches: 0,
        gas: None,
        parent: None,
        seq: 0,
    };
    let mut best: Option<(Label, Vec<Step>)> = None;
    let mut path = Vec::new();
    let mut visited = 0u64;
    dfs(&search, &root, &mut path, &mut best, &mut visited);
    let stats = SolverStats {
        labels_created: visited,
        labels_pruned: 0,
        layers: grid.layers(),
        labels_per_layer: Vec::new(),
    };
    match best {
        Some((l, steps)) => finish(inst, grid, &steps, l.time, l.risk, objective, stats),
        None => match objective {
            Objective::Capped { rho, dr } => Err(Error::CapInfeasible {
                rho,
                min_binned_risk: risk_bin(min_risk(inst, grid, &table)?, dr) as f64 * dr,
            }),
            _ => Err(Error::Infeasible("no complete profile".into())),
        },
    }
}

fn dfs(
    search: &Search<'_>,
    label: &Label,
    path: &mut Vec<Step>,
    best: &mut Option<(Label, Vec<Step>)>,
    visited: &mut u64,
) {
    *visited += 1;
    if label.layer + 1 == search.grid.layers() {
        if let Mode::Capped { budget, .. } = search.mode {
            if label.risk_bin > budget {
                return;
            }
        }
        let better = match best {
            None => true,
            Some((b, _)) => {
                let (pa, pb) = (search.mode.primary(label), search.mode.primary(b));
                pa < pb || (pa == pb && label.risk < b.risk)
            }
        };
        if better {
            *best = Some((label.clone(), path.clone()));
        }
        return;
    }
    for (child, step) in search.expand(label, None) {
        path.push(step);
        dfs(search, &child, path, best, visited);
        path.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feasibility::FeasibilityWindows;
    use crate::model::{Compartment, Environment, Gas, PenaltyPL};

    fn inst(z_start: f64, p: f64) -> Instance {
        Instance::new(
            Environment::new(1.0, 0.1, 0.0627, 60.0, 10.0).unwrap(),
            vec![Gas::air(), Gas::new("ean50", 0.5, 0.5, 0.0).unwrap()],
            FeasibilityWindows::new(0.16, 1.6, 60.0, 0.0).unwrap(),
            vec![Compartment::new(5.0, None, 0.5, 0.8).unwrap()],
            vec![PenaltyPL::linear(1.0)],
            TissueState::uniform(1, 1, p),
            z_start,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn grid_counts_and_menus() {
        let g = build_grid(&inst(30.0, 1.0), 3.0, &MenuRule::List { values: vec![1.0] }).unwrap();
        assert_eq!(g.depths.len(), 11);
        assert_eq!(g.depths[1], 27.0);
        let m = MenuRule::Exponential { tau_min: 0.5, tau_max: 8.0 }.menu().unwrap();
        assert_eq!(m, vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0]);
        let g = build_grid(&inst(30.0, 1.0), 30.0, &MenuRule::List { values: vec![] }).unwrap();
        assert_eq!(g.depths, vec![30.0, 0.0]);
        let g = build_grid(&inst(10.0, 1.0), 4.0, &MenuRule::Uniform { step: 1.0, max: 3.0 }).unwrap();
        assert_eq!(g.depths, vec![10.0, 8.0, 4.0, 0.0]);
        assert_eq!(g.menus[0], vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(g.delta, 0.5);
    }

    fn label(time: f64, risk: f64, p: f64) -> Label {
        Label {
            layer: 2,
            risk_bin: risk_bin(risk, 0.1),
            state: TissueState::uniform(2, 1, p),
            time,
            risk,
            cost: time + risk,
            switches: 0,
            gas: None,
            parent: None,
            seq: 0,
        }
    }

    #[test]
    fn dominance_cases() {
        let a = label(1.0, 0.5, 2.0);
        assert!(dominates(&a, &a.clone(), DominanceMode::Capped).unwrap());
        let b = label(1.5, 0.5, 2.0);
        assert!(dominates(&a, &b, DominanceMode::Capped).unwrap());
        assert!(!dominates(&b, &a, DominanceMode::Capped).unwrap());
        let mut c = label(1.0, 0.5, 2.0);
        let mut d = label(1.0, 0.5, 2.0);
        c.state.set(0, 0, 1.0);
        d.state.set(1, 0, 1.0);
        assert!(!dominates(&c, &d, DominanceMode::Scalarized).unwrap());
        assert!(!dominates(&d, &c, DominanceMode::Scalarized).unwrap());
        let mut e = label(1.0, 0.5, 2.0);
        e.layer = 3;
        assert!(matches!(dominates(&a, &e, DominanceMode::Capped), Err(Error::Logic(_))));
    }

    #[test]
    fn lambda_zero_is_straight_ascent() {
        let i = inst(30.0, 3.0);
        let g = build_grid(&i, 3.0, &MenuRule::Exponential { tau_min: 1.0, tau_max: 8.0 }).unwrap();
        let p = plan_scalarized(&i, &g, 0.0).unwrap();
        assert!((p.outcome.total_time - 3.0).abs() < 1e-12);
        assert!((p.objective - 3.0).abs() < 1e-12);
    }

    #[test]
    fn huge_cap_is_straight_ascent() {
        let i = inst(30.0, 3.0);
        let g = build_grid(&i, 3.0, &MenuRule::Exponential { tau_min: 1.0, tau_max: 8.0 }).unwrap();
        let p = plan_capped(&i, &g, 1e6, 0.01).unwrap();
        assert!((p.outcome.total_time - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_cap_reports_certificate_or_zero_risk_plan() {
        let i = inst(9.0, 2.2);
        let g = build_grid(&i, 3.0, &MenuRule::List { values: vec![2.0, 8.0, 30.0] }).unwrap();
        let straight = plan_scalarized(&i, &g, 0.0).unwrap();
        assert!(straight.outcome.total_risk > 0.0);
        match plan_capped(&i, &g, 0.0, 1e-3) {
            Ok(p) => {
                assert!(p.outcome.total_risk <= 1e-3);
                let oracle = brute_force_plan(&i, &g, Objective::Capped { rho: 0.0, dr: 1e-3 }).unwrap();
                assert!((oracle.objective - p.objective).abs() < 1e-9);
            }
            Err(Error::CapInfeasible { min_binned_risk, .. }) => assert!(min_binned_risk > 0.0),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn surface_start_is_empty_plan() {
        let i = inst(0.0, 0.7);
        let g = build_grid(&i, 3.0, &MenuRule::List { values: vec![1.0] }).unwrap();
        let p = plan_scalarized(&i, &g, 1.0).unwrap();
        assert!(p.profile.segments.is_empty());
        assert_eq!(p.objective, 0.0);
    }

    #[test]
    fn label_search_matches_oracle_on_small_grid() {
        let i = inst(12.0, 3.0);
        let g = build_grid(&i, 4.0, &MenuRule::List { values: vec![1.0, 4.0] }).unwrap();
        for lambda in [0.5, 2.0, 10.0] {
            let a = plan_scalarized(&i, &g, lambda).unwrap();
            let b = brute_force_plan(&i, &g, Objective::Scalarized { lambda }).unwrap();
            assert!((a.objective - b.objective).abs() < 1e-9, "{} vs {}", a.objective, b.objective);
        }
    }

    #[test]
    fn oracle_refuses_large_grids() {
        let i = inst(60.0, 3.0);
        let g = build_grid(&i, 1.0, &MenuRule::Exponential { tau_min: 1.0, tau_max: 64.0 }).unwrap();
        assert!(matches!(
            brute_force_plan(&i, &g, Objective::Scalarized { lambda: 1.0 }),
            Err(Error::TooLarge(_))
        ));
    }
}
