//! Desk-scale value-function probe on a `(z, P)` grid and a greedy closed-loop rollout.
//!
//! Depth layers are spaced `zdot_max · h` apart so one max-rate ascent step of
//! length `h` moves exactly one layer. Tissue pressures live on a uniform grid over
//! `[0, P̄]` per compartment and are interpolated multilinearly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::constants::{apriori_constants, AprioriConstants};
use crate::error::{Error, Result};
use crate::feasibility::{feasible_gases, gas_feasible_on};
use crate::model::{Instance, TissueState};
use crate::schedule::{hold_risk_unchecked, ramp_risk_unchecked};

pub const MAX_PROBE_NODES: usize = 100_000;
const SWEEP_CAP: usize = 20_000;
const SWEEP_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Number of depth layers including the surface.
    pub z_layers: usize,
    /// Pressure nodes per compartment.
    pub p_nodes: usize,
    pub h: f64,
    pub lipschitz_pairs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzViolation {
    pub z: (f64, f64),
    pub p: (Vec<f64>, Vec<f64>),
    pub dv: f64,
    pub allowed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueProbe {
    pub lambda: f64,
    pub h: f64,
    pub dz: f64,
    pub z_layers: usize,
    pub p_nodes: usize,
    pub p_max: f64,
    pub compartments: usize,
    /// `values[k][node]`, node index `i_1 + p_nodes · i_2`.
    pub values: Vec<Vec<f64>>,
    /// Max one-step Bellman residual over nodes and cell centres.
    pub epsilon: f64,
    /// Largest value change across one pressure cell.
    pub interpolation_modulus: f64,
    pub sweeps: usize,
    pub lower_bound_violations: usize,
    pub upper_bound_violations: usize,
    pub lipschitz_violations: Vec<LipschitzViolation>,
    pub lipschitz_pairs: usize,
    pub constants: AprioriConstants,
}

impl ValueProbe {
    pub fn depth(&self, k: usize) -> f64 {
        k as f64 * self.dz
    }

    /// Interpolated value at layer `k`; `None` off the pressure grid.
    pub fn value(&self, k: usize, p: &[f64]) -> Option<f64> {
        let st = stencil(p, self.p_nodes, self.p_max)?;
        Some(st.iter().map(|&(i, w)| w * self.values[k][i]).sum())
    }
}

/// `(node, weight)` pairs of the multilinear stencil at `p`.
fn stencil(p: &[f64], np: usize, p_max: f64) -> Option<Vec<(usize, f64)>> {
    let step = p_max / (np - 1) as f64;
    let mut out = vec![(0usize, 1.0f64)];
    let mut stride = 1;
    for &x in p {
        if !(x >= -1e-12 && x <= p_max * (1.0 + 1e-12)) {
            return None;
        }
        let u = (x / step).clamp(0.0, (np - 1) as f64);
        let i = (u.floor() as usize).min(np - 2);
        let f = u - i as f64;
        let mut next = Vec::with_capacity(out.len() * 2);
        for &(idx, w) in &out {
            if 1.0 - f > 0.0 {
                next.push((idx + i * stride, w * (1.0 - f)));
            }
            if f > 0.0 {
                next.push((idx + (i + 1) * stride, w * f));
            }
        }
        out = next;
        stride *= np;
    }
    Some(out)
}

/// One action's per-compartment risk and end pressure at each sample pressure.
struct Move {
    risk: Vec<Vec<f64>>,
    next: Vec<Vec<f64>>,
}

struct LayerMoves {
    hold: Vec<Move>,
    ascent: Vec<Move>,
}

fn subinstances(inst: &Instance) -> Result<Vec<Instance>> {
    inst.compartments
        .iter()
        .zip(&inst.penalties)
        .map(|(c, phi)| {
            Instance::new(
                inst.environment,
                inst.gases.clone(),
                inst.windows,
                vec![c.clone()],
                vec![phi.clone()],
                TissueState::uniform(1, 1, 0.0),
                0.0,
                0.0,
            )
        })
        .collect()
}

fn moves_at(
    subs: &[Instance],
    z: f64,
    z_up: f64,
    hold_gases: &[usize],
    transit_gases: &[usize],
    samples: &[f64],
    h: f64,
) -> LayerMoves {
    let one = |gas: usize, hold: bool| {
        let mut risk = Vec::with_capacity(subs.len());
        let mut next = Vec::with_capacity(subs.len());
        for sub in subs {
            let (r, n): (Vec<f64>, Vec<f64>) = samples
                .iter()
                .map(|&p| {
                    let s = TissueState::uniform(1, 1, p);
                    let (r, e) = if hold {
                        hold_risk_unchecked(&s, sub, z, gas, h)
                    } else {
                        ramp_risk_unchecked(&s, sub, z, z_up, gas)
                    };
                    (r, e.total(0))
                })
                .unzip();
            risk.push(r);
            next.push(n);
        }
        Move { risk, next }
    };
    LayerMoves {
        hold: hold_gases.iter().map(|&g| one(g, true)).collect(),
        ascent: transit_gases.iter().map(|&g| one(g, false)).collect(),
    }
}

/// Sample-grid indices of every node (one index per compartment).
fn node_coords(flat: usize, np: usize, n: usize) -> Vec<usize> {
    let mut c = Vec::with_capacity(n);
    let mut r = flat;
    for _ in 0..n {
        c.push(r % np);
        r /= np;
    }
    c
}

fn action(mv: &Move, coords: &[usize], lambda: f64, h: f64) -> (f64, Vec<f64>) {
    let mut risk = 0.0;
    let mut next = Vec::with_capacity(coords.len());
    for (i, &c) in coords.iter().enumerate() {
        risk += mv.risk[i][c];
        next.push(mv.next[i][c]);
    }
    (h + lambda * risk, next)
}

pub fn value_probe(inst: &Instance, lambda: f64, cfg: &ProbeConfig) -> Result<ValueProbe> {
    let n = inst.n_compartments();
    if inst.species() != 1 || !(1..=2).contains(&n) {
        return Err(Error::invalid("instance", "value probe needs one species and at most two compartments"));
    }
    if cfg.z_layers < 2 || cfg.p_nodes < 2 {
        return Err(Error::invalid("probe", "need at least two depth layers and two pressure nodes"));
    }
    if !(cfg.h > 0.0 && cfg.h.is_finite()) {
        return Err(Error::invalid("probe.h", "must be positive"));
    }
    let per_layer = cfg.p_nodes.checked_pow(n as u32).unwrap_or(usize::MAX);
    if per_layer.saturating_mul(cfg.z_layers) > MAX_PROBE_NODES {
        return Err(Error::TooLarge(format!(
            "probe grid has {} x {} nodes, limit {MAX_PROBE_NODES}",
            cfg.z_layers, per_layer
        )));
    }
    let env = &inst.environment;
    let dz = env.zdot_max * cfg.h;
    if (cfg.z_layers - 1) as f64 * dz > env.z_max * (1.0 + 1e-12) {
        return Err(Error::invalid("probe", "depth layers exceed the maximum depth"));
    }
    let constants = apriori_constants(inst, lambda)?;
    let p_max = constants.p_bar;
    let np = cfg.p_nodes;
    let step = p_max / (np - 1) as f64;
    let nodes: Vec<f64> = (0..np).map(|i| i as f64 * step).collect();
    let mids: Vec<f64> = (0..np - 1).map(|i| (i as f64 + 0.5) * step).collect();
    let subs = subinstances(inst)?;

    let gas_sets: Vec<(Vec<usize>, Vec<usize>)> = (1..cfg.z_layers)
        .map(|k| {
            let z = k as f64 * dz;
            let z_up = (k - 1) as f64 * dz;
            let hold = feasible_gases(inst, z).unwrap_or_default();
            let transit: Vec<usize> = (0..inst.gases.len())
                .filter(|&g| gas_feasible_on(&inst.gases[g], env, &inst.windows, z_up, z).is_ok())
                .collect();
            if transit.is_empty() {
                return Err(Error::Infeasible(format!("no gas feasible on the ascent {z} m -> {z_up} m")));
            }
            Ok((hold, transit))
        })
        .collect::<Result<_>>()?;

    let build = |samples: &[f64]| -> Vec<LayerMoves> {
        (1..cfg.z_layers)
            .into_par_iter()
            .map(|k| {
                let (hold, transit) = &gas_sets[k - 1];
                moves_at(&subs, k as f64 * dz, (k - 1) as f64 * dz, hold, transit, samples, cfg.h)
            })
            .collect()
    };
    let at_nodes = build(&nodes);

    let mut values = vec![vec![0.0; per_layer]];
    let mut sweeps = 0;
    for k in 1..cfg.z_layers {
        let moves = &at_nodes[k - 1];
        let below = &values[k - 1];
        let coords: Vec<Vec<usize>> = (0..per_layer).map(|x| node_coords(x, np, n)).collect();
        let asc: Vec<f64> = coords
            .iter()
            .map(|c| {
                moves
                    .ascent
                    .iter()
                    .map(|mv| {
                        let (cost, next) = action(mv, c, lambda, cfg.h);
                        let st = stencil(&next, np, p_max).expect("ascent stays on the pressure grid");
                        cost + st.iter().map(|&(i, w)| w * below[i]).sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let holds: Vec<Vec<(f64, Vec<(usize, f64)>)>> = coords
            .iter()
            .map(|c| {
                moves
                    .hold
                    .iter()
                    .map(|mv| {
                        let (cost, next) = action(mv, c, lambda, cfg.h);
                        (cost, stencil(&next, np, p_max).expect("hold stays on the pressure grid"))
                    })
                    .collect()
            })
            .collect();
        let mut v = asc.clone();
        for s in 0..SWEEP_CAP {
            sweeps += 1;
            let mut change: f64 = 0.0;
            let order: Box<dyn Iterator<Item = usize>> = if s % 2 == 0 {
                Box::new(0..per_layer)
            } else {
                Box::new((0..per_layer).rev())
            };
            for x in order {
                let mut best = asc[x];
                for (cost, st) in &holds[x] {
                    let mut own = 0.0;
                    let mut rest = 0.0;
                    for &(i, w) in st {
                        if i == x {
                            own += w;
                        } else {
                            rest += w * v[i];
                        }
                    }
                    if own < 1.0 - 1e-15 {
                        best = best.min((cost + rest) / (1.0 - own));
                    }
                }
                change = change.max((v[x] - best).abs() / (1.0 + best.abs()));
                v[x] = best;
            }
            if change <= SWEEP_TOL {
                break;
            }
        }
        values.push(v);
    }

    let mut probe = ValueProbe {
        lambda,
        h: cfg.h,
        dz,
        z_layers: cfg.z_layers,
        p_nodes: np,
        p_max,
        compartments: n,
        values,
        epsilon: 0.0,
        interpolation_modulus: 0.0,
        sweeps,
        lower_bound_violations: 0,
        upper_bound_violations: 0,
        lipschitz_violations: Vec::new(),
        lipschitz_pairs: cfg.lipschitz_pairs,
        constants,
    };

    // Bellman residual at nodes and at cell centres.
    let at_mids = build(&mids);
    let mut eps: f64 = 0.0;
    for (samples, moves, m) in [(&nodes, &at_nodes, np), (&mids, &at_mids, np - 1)] {
        let count = m.pow(n as u32);
        for k in 1..cfg.z_layers {
            let mv = &moves[k - 1];
            for x in 0..count {
                let c = node_coords(x, m, n);
                let p: Vec<f64> = c.iter().map(|&i| samples[i]).collect();
                let q = min_q(&probe, k, mv, &c, lambda).0;
                let v = probe.value(k, &p).expect("sample on grid");
                eps = eps.max((q - v).abs());
            }
        }
    }
    probe.epsilon = eps;

    let mut modulus: f64 = 0.0;
    for layer in &probe.values {
        for x in 0..per_layer {
            let c = node_coords(x, np, n);
            let mut stride = 1;
            for &ci in &c {
                if ci + 1 < np {
                    modulus = modulus.max((layer[x + stride] - layer[x]).abs());
                }
                stride *= np;
            }
        }
    }
    probe.interpolation_modulus = modulus;

    let ell = probe.constants.ell_bar;
    let zdot = env.zdot_max;
    for (k, layer) in probe.values.iter().enumerate() {
        let z = k as f64 * dz;
        for &v in layer {
            let tol = 1e-9 * (1.0 + v.abs());
            if v < z / zdot - tol {
                probe.lower_bound_violations += 1;
            }
            if v > ell * z / zdot + tol {
                probe.upper_bound_violations += 1;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (c1, c2) = (probe.constants.c1, probe.constants.c2);
    for _ in 0..cfg.lipschitz_pairs {
        let (k1, k2) = (rng.gen_range(0..cfg.z_layers), rng.gen_range(0..cfg.z_layers));
        let p1: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=p_max)).collect();
        let p2: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=p_max)).collect();
        let v1 = probe.value(k1, &p1).unwrap();
        let v2 = probe.value(k2, &p2).unwrap();
        let (z1, z2) = (probe.depth(k1), probe.depth(k2));
        let dp: f64 = p1.iter().zip(&p2).map(|(a, b)| (a - b).abs()).sum();
        let allowed = c1 * (z1 - z2).abs() + c2 * dp + 2.0 * modulus;
        let dv = (v1 - v2).abs();
        if dv > allowed + 1e-12 {
            probe.lipschitz_violations.push(LipschitzViolation {
                z: (z1, z2),
                p: (p1, p2),
                dv,
                allowed,
            });
        }
    }
    Ok(probe)
}

/// Smallest one-step Q-value at a precomputed sample and the index of its action
/// (ascents first, then holds).
fn min_q(probe: &ValueProbe, k: usize, mv: &LayerMoves, c: &[usize], lambda: f64) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (a, m) in mv.ascent.iter().chain(&mv.hold).enumerate() {
        let (cost, next) = action(m, c, lambda, probe.h);
        let layer = if a < mv.ascent.len() { k - 1 } else { k };
        let q = cost + probe.value(layer, &next).unwrap_or(f64::INFINITY);
        if q < best.0 {
            best = (q, a);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub completed: bool,
    pub message: Option<String>,
    pub j_closed_loop: f64,
    pub time: f64,
    pub risk: f64,
    pub v0: f64,
    pub steps: usize,
    pub holds: usize,
    /// `ceil(T_max / h)`.
    pub step_bound: usize,
    pub epsilon: f64,
    /// Largest observed `min Q - V` along the rollout.
    pub max_step_slack: f64,
    /// `V(z0, P0) + N ε + slack`.
    pub upper: f64,
    /// `V(z0, P0) - interpolation modulus`.
    pub lower: f64,
    pub within_upper: bool,
    pub within_lower: bool,
}

pub const ROLLOUT_SLACK: f64 = 1e-9;

/// Greedy one-step rollout from the instance's start state using the probe's values.
pub fn receding_horizon(inst: &Instance, lambda: f64, probe: &ValueProbe) -> Result<RolloutReport> {
    if inst.species() != 1 || inst.n_compartments() != probe.compartments {
        return Err(Error::invalid("instance", "does not match the probe"));
    }
    let env = &inst.environment;
    let h = probe.h;
    let k0f = inst.z_start / probe.dz;
    let mut k = k0f.round() as usize;
    if (k0f - k as f64).abs() > 1e-9 || k >= probe.z_layers {
        return Err(Error::invalid("z_start", "must be a depth layer of the probe"));
    }
    let mut state = inst.initial_state.clone();
    let totals = |s: &TissueState| (0..s.compartments()).map(|i| s.total(i)).collect::<Vec<f64>>();
    let step_bound = (probe.constants.t_max / h).ceil() as usize;
    let Some(v0) = probe.value(k, &totals(&state)) else {
        return Err(Error::invalid("initial_state", "outside the probe's pressure grid"));
    };
    let mut report = RolloutReport {
        completed: false,
        message: None,
        j_closed_loop: 0.0,
        time: 0.0,
        risk: 0.0,
        v0,
        steps: 0,
        holds: 0,
        step_bound,
        epsilon: probe.epsilon,
        max_step_slack: 0.0,
        upper: 0.0,
        lower: 0.0,
        within_upper: false,
        within_lower: false,
    };
    let max_steps = step_bound + probe.z_layers;
    while k > 0 {
        if report.steps >= max_steps {
            report.message = Some(format!("no surfacing within {max_steps} steps"));
            break;
        }
        let z = probe.depth(k);
        let z_up = probe.depth(k - 1);
        let here = totals(&state);
        let v_here = probe.value(k, &here).unwrap_or(f64::NAN);
        let mut best: Option<(f64, f64, TissueState, bool)> = None;
        let transit = (0..inst.gases.len())
            .filter(|&g| gas_feasible_on(&inst.gases[g], env, &inst.windows, z_up, z).is_ok());
        for g in transit {
            let (r, next) = ramp_risk_unchecked(&state, inst, z, z_up, g);
            if let Some(v) = probe.value(k - 1, &totals(&next)) {
                let q = h + lambda * r + v;
                if best.as_ref().is_none_or(|b| q < b.0) {
                    best = Some((q, r, next, false));
                }
            }
        }
        for g in feasible_gases(inst, z).unwrap_or_default() {
            let (r, next) = hold_risk_unchecked(&state, inst, z, g, h);
            if let Some(v) = probe.value(k, &totals(&next)) {
                let q = h + lambda * r + v;
                if best.as_ref().is_none_or(|b| q < b.0) {
                    best = Some((q, r, next, true));
                }
            }
        }
        let Some((q, r, next, is_hold)) = best else {
            report.message = Some(format!("state left the probe grid at {z} m"));
            break;
        };
        report.max_step_slack = report.max_step_slack.max(q - v_here);
        report.j_closed_loop += h + lambda * r;
        report.time += h;
        report.risk += r;
        report.steps += 1;
        if is_hold {
            report.holds += 1;
        } else {
            k -= 1;
        }
        state = next;
    }
    report.completed = k == 0;
    report.upper = v0 + report.steps as f64 * probe.epsilon + ROLLOUT_SLACK;
    report.lower = v0 - probe.interpolation_modulus - ROLLOUT_SLACK;
    report.within_upper = report.completed && report.j_closed_loop <= report.upper;
    report.within_lower = report.completed && report.j_closed_loop >= report.lower;
    Ok(report)
}
