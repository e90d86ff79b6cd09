//! Command implementations shared by the binary and the HTTP server.

use std::path::Path;

use decoopt_core::analysis::{
    check_envelope, discretisation_convergence, frontier_csv, receding_horizon, sweep_frontier, value_probe,
    ConvergenceTable, EnvelopeReport, FrontierPoint, ProbeConfig, RolloutReport,
};
use decoopt_core::document::{to_json_12, InstanceDocument, Parameters, PlanDocument};
use decoopt_core::hardness::{
    exhaustive_equivalence, reduce, verify_reduction, ExhaustiveReport, KnapsackInstance, ReductionDocument,
    VerificationReport,
};
use decoopt_core::model::Instance;
use decoopt_core::planner::{build_grid, plan_capped, plan_scalarized, StopGrid};
use decoopt_core::polish::{polish_dwells, DwellProblem};
use decoopt_core::schedule::simulate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::menu::parse_menu;

/// Convergence tolerance for dwell polishing.
pub const POLISH_TOL: f64 = 1e-9;
/// Slack for the envelope checks reported by `sweep`.
pub const ENVELOPE_TOL: f64 = 1e-9;

pub fn read_instance(path: &Path) -> CliResult<Instance> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    parse_instance(&text)
}

pub fn parse_instance(text: &str) -> CliResult<Instance> {
    Ok(InstanceDocument::from_json(text)?.to_instance()?)
}

/// An instance given inline as a document or by fixture name.
pub fn resolve_instance(value: &serde_json::Value, instance_dir: Option<&Path>) -> CliResult<Instance> {
    match value {
        serde_json::Value::String(name) => {
            let dir = instance_dir.ok_or_else(|| CliError::validation("named instances need --instance-dir"))?;
            let valid = !name.is_empty()
                && name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
                && !name.starts_with('.');
            if !valid {
                return Err(CliError::validation(format!("invalid instance name `{name}`")));
            }
            let file = if name.ends_with(".json") { name.clone() } else { format!("{name}.json") };
            read_instance(&dir.join(file))
        }
        serde_json::Value::Object(_) => {
            let doc: InstanceDocument = serde_json::from_value(value.clone())
                .map_err(|e| CliError::validation(format!("invalid instance: {e}")))?;
            Ok(doc.to_instance()?)
        }
        _ => Err(CliError::validation("instance must be a document or a fixture name")),
    }
}

fn grid(inst: &Instance, dz: f64, menu: &str) -> CliResult<StopGrid> {
    Ok(build_grid(inst, dz, &parse_menu(menu)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanParams {
    pub lambda: f64,
    pub dz: f64,
    pub menu: String,
    #[serde(default)]
    pub polish: bool,
}

pub fn plan(inst: &Instance, p: &PlanParams) -> CliResult<PlanDocument> {
    let g = grid(inst, p.dz, &p.menu)?;
    let plan = plan_scalarized(inst, &g, p.lambda)?;
    let params = Parameters {
        mode: "scalarized".into(),
        lambda: Some(p.lambda),
        rho: None,
        dr: None,
        dz: p.dz,
        menu: p.menu.clone(),
        polish: p.polish,
    };
    if !p.polish {
        return Ok(PlanDocument::new(inst, &plan.profile, &plan.outcome, plan.stats, params, None));
    }
    let problem = DwellProblem::from_profile(inst, &plan.profile, p.lambda)?;
    let polished = polish_dwells(inst, &problem, POLISH_TOL)?;
    let profile = DwellProblem {
        tau: polished.tau.clone(),
        ..problem
    }
    .to_profile(inst);
    let outcome = simulate(inst, &profile, false)?;
    Ok(PlanDocument::new(inst, &profile, &outcome, plan.stats, params, Some(polished.report)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapParams {
    pub rho: f64,
    pub dr: f64,
    pub dz: f64,
    pub menu: String,
}

pub fn cap(inst: &Instance, p: &CapParams) -> CliResult<PlanDocument> {
    let g = grid(inst, p.dz, &p.menu)?;
    let plan = plan_capped(inst, &g, p.rho, p.dr)?;
    let params = Parameters {
        mode: "capped".into(),
        lambda: None,
        rho: Some(p.rho),
        dr: Some(p.dr),
        dz: p.dz,
        menu: p.menu.clone(),
        polish: false,
    };
    let doc = PlanDocument::new(inst, &plan.profile, &plan.outcome, plan.stats, params, None);
    if doc.cap.as_ref().is_some_and(|c| c.margin < -1e-9) {
        return Err(CliError::internal(format!(
            "capped plan violates its budget: R = {} > ρ + Δr = {}",
            plan.outcome.total_risk,
            p.rho + p.dr
        )));
    }
    Ok(doc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepParams {
    pub lambdas: Vec<f64>,
    pub dz: f64,
    pub menu: String,
}

pub fn sweep(inst: &Instance, p: &SweepParams) -> CliResult<(Vec<FrontierPoint>, EnvelopeReport)> {
    let g = grid(inst, p.dz, &p.menu)?;
    let points = sweep_frontier(inst, &g, &p.lambdas)?;
    let report = check_envelope(&points, ENVELOPE_TOL);
    Ok((points, report))
}

pub fn sweep_csv(points: &[FrontierPoint]) -> String {
    frontier_csv(points)
}

/// `count` values geometrically spaced from `lo` to `hi`.
pub fn geometric_lambdas(lo: f64, hi: f64, count: usize) -> CliResult<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) || count < 2 {
        return Err(CliError::validation("geometric λ range needs 0 < lo < hi and count >= 2"));
    }
    let ratio = (hi / lo).powf(1.0 / (count - 1) as f64);
    Ok((0..count).map(|i| lo * ratio.powi(i as i32)).collect())
}

pub fn converge(
    inst: &Instance,
    lambda: f64,
    dz: &[f64],
    delta: &[f64],
    menu_max: f64,
) -> CliResult<ConvergenceTable> {
    Ok(discretisation_convergence(inst, lambda, dz, delta, menu_max)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeStart {
    pub z: f64,
    pub p: Vec<f64>,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeDocument {
    pub lambda: f64,
    pub h: f64,
    pub dz: f64,
    pub z_layers: usize,
    pub p_nodes: usize,
    pub epsilon: f64,
    pub interpolation_modulus: f64,
    pub sweeps: usize,
    pub lower_bound_violations: usize,
    pub upper_bound_violations: usize,
    pub lipschitz_pairs: usize,
    pub lipschitz_violations: usize,
    pub start: ProbeStart,
    pub rollout: RolloutReport,
}

pub fn probe(inst: &Instance, lambda: f64, cfg: &ProbeConfig) -> CliResult<ProbeDocument> {
    let probe = value_probe(inst, lambda, cfg)?;
    let rollout = receding_horizon(inst, lambda, &probe)?;
    let p: Vec<f64> = (0..inst.n_compartments()).map(|i| inst.initial_state.total(i)).collect();
    Ok(ProbeDocument {
        lambda,
        h: probe.h,
        dz: probe.dz,
        z_layers: probe.z_layers,
        p_nodes: probe.p_nodes,
        epsilon: probe.epsilon,
        interpolation_modulus: probe.interpolation_modulus,
        sweeps: probe.sweeps,
        lower_bound_violations: probe.lower_bound_violations,
        upper_bound_violations: probe.upper_bound_violations,
        lipschitz_pairs: probe.lipschitz_pairs,
        lipschitz_violations: probe.lipschitz_violations.len(),
        start: ProbeStart {
            z: inst.z_start,
            p,
            v: rollout.v0,
        },
        rollout,
    })
}

/// Parse `v:w,v:w,..`; an empty string is the empty item list.
pub fn parse_items(text: &str) -> CliResult<Vec<(u64, u64)>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|pair| {
            let bad = || CliError::validation(format!("invalid item `{pair}`: expected value:weight"));
            let (v, w) = pair.trim().split_once(':').ok_or_else(bad)?;
            Ok((v.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
        })
        .collect()
}

pub fn hardness_gen(kp: &KnapsackInstance) -> CliResult<ReductionDocument> {
    Ok(reduce(kp)?.to_document(kp))
}

pub fn hardness_verify(kp: &KnapsackInstance) -> CliResult<VerificationReport> {
    Ok(verify_reduction(kp)?)
}

pub fn hardness_exhaustive(max_items: usize, max_vw: u64, max_wv: u64) -> CliResult<ExhaustiveReport> {
    Ok(exhaustive_equivalence(max_items, max_vw, max_wv)?)
}

/// Seeded random instances with `1..=max_items` items and `v, w <= max_vw`.
pub fn hardness_random(count: usize, max_items: usize, max_vw: u64, seed: u64) -> CliResult<Vec<VerificationReport>> {
    if max_items == 0 || max_vw == 0 {
        return Err(CliError::validation("random instances need max items and max value/weight >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let m = rng.gen_range(1..=max_items);
            let items: Vec<(u64, u64)> = (0..m)
                .map(|_| (rng.gen_range(1..=max_vw), rng.gen_range(1..=max_vw)))
                .collect();
            let sv: u64 = items.iter().map(|i| i.0).sum();
            let sw: u64 = items.iter().map(|i| i.1).sum();
            let kp = KnapsackInstance::new(items, rng.gen_range(0..=sw), rng.gen_range(0..=sv + 1))?;
            hardness_verify(&kp)
        })
        .collect()
}

/// JSON with every float rounded to 12 significant digits.
pub fn render<T: Serialize>(value: &T) -> CliResult<String> {
    Ok(to_json_12(value)?)
}
