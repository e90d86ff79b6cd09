//! Continuous dwell-time polishing on a fixed stop sequence, with a first-order
//! (nonsmooth KKT) certificate built from one-sided difference quotients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility::{gas_feasible_at, gas_feasible_on};
use crate::model::{Instance, TissueState};
use crate::quad::golden_section;
use crate::schedule::{hold_risk_unchecked, ramp_risk_unchecked, Profile, Segment};

pub const DEFAULT_STEP: f64 = 1e-4;
pub const ACTIVITY_TOL: f64 = 1e-6;
pub const MAX_SWEEPS: usize = 200;
const SCAN_POINTS: usize = 64;
/// Longest extrapolation, in multiples of one sweep's displacement.
const PATTERN_MAX: f64 = 64.0;

/// One stop: hold at `z` on `hold_gas`, then ascend to the next stop on `transit_gas`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    pub z: f64,
    pub hold_gas: usize,
    pub transit_gas: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellProblem {
    pub stops: Vec<Stop>,
    pub tau: Vec<f64>,
    pub lambda: f64,
}

impl DwellProblem {
    pub fn new(inst: &Instance, stops: Vec<Stop>, tau: Vec<f64>, lambda: f64) -> Result<Self> {
        let p = DwellProblem { stops, tau, lambda };
        p.validate(inst)?;
        Ok(p)
    }

    pub fn validate(&self, inst: &Instance) -> Result<()> {
        let env = &inst.environment;
        if self.stops.len() != self.tau.len() {
            return Err(Error::invalid("tau", "need one dwell per stop"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Domain {
                what: "lambda",
                value: self.lambda,
                domain: "[0, inf)".into(),
            });
        }
        if let Some(first) = self.stops.first() {
            if (first.z - inst.z_start).abs() > 1e-9 {
                return Err(Error::invalid("stops", "first stop must be at z_start"));
            }
        }
        for (j, s) in self.stops.iter().enumerate() {
            if s.hold_gas >= inst.gases.len() || s.transit_gas >= inst.gases.len() {
                return Err(Error::invalid(format!("stops[{j}]"), "unknown gas"));
            }
            if !(self.tau[j] >= 0.0 && self.tau[j].is_finite()) {
                return Err(Error::invalid(format!("tau[{j}]"), "must be >= 0"));
            }
            let next = self.next_depth(j);
            if next >= s.z {
                return Err(Error::invalid("stops", "depths must strictly decrease"));
            }
            env.check_depth(s.z)?;
            if !gas_feasible_at(&inst.gases[s.hold_gas], env, &inst.windows, s.z) {
                return Err(Error::InfeasibleGas {
                    gas: s.hold_gas,
                    depth: s.z,
                });
            }
            if let Err(depth) = gas_feasible_on(&inst.gases[s.transit_gas], env, &inst.windows, next, s.z) {
                return Err(Error::InfeasibleGas {
                    gas: s.transit_gas,
                    depth,
                });
            }
        }
        Ok(())
    }

    fn next_depth(&self, j: usize) -> f64 {
        self.stops.get(j + 1).map_or(0.0, |s| s.z)
    }

    /// Stop sequence of a hold/ascent profile; a stop without a hold keeps its transit gas.
    pub fn from_profile(inst: &Instance, profile: &Profile, lambda: f64) -> Result<Self> {
        let mut stops = Vec::new();
        let mut tau = Vec::new();
        let mut pending: Option<(f64, usize, f64)> = None;
        for seg in &profile.segments {
            match *seg {
                Segment::Hold { z, gas, tau: t } => {
                    if let Some((pz, pg, pt)) = pending {
                        if pz != z || pg != gas {
                            return Err(Error::Profile("consecutive holds are not a stop sequence".into()));
                        }
                        pending = Some((z, gas, pt + t));
                    } else {
                        pending = Some((z, gas, t));
                    }
                }
                Segment::Ascent { z_from, gas, .. } => {
                    let (z, hg, t) = pending.take().unwrap_or((z_from, gas, 0.0));
                    stops.push(Stop {
                        z,
                        hold_gas: hg,
                        transit_gas: gas,
                    });
                    tau.push(t);
                }
                Segment::Descent { .. } => {
                    return Err(Error::Profile("re-descents cannot be polished".into()))
                }
            }
        }
        if pending.is_some() {
            return Err(Error::Profile("hold after the last ascent".into()));
        }
        DwellProblem::new(inst, stops, tau, lambda)
    }

    pub fn to_profile(&self, inst: &Instance) -> Profile {
        let mut p = Profile::new(inst.z_start);
        for (j, s) in self.stops.iter().enumerate() {
            if self.tau[j] > 0.0 {
                p = p.hold(s.hold_gas, self.tau[j]);
            }
            p = p.ascend_to(self.next_depth(j), s.transit_gas);
        }
        p
    }

    pub fn transit_time(&self, inst: &Instance) -> f64 {
        self.stops.first().map_or(0.0, |s| s.z) / inst.environment.zdot_max
    }
}

/// State entering stop `j` and risk accrued before it.
fn prefix(inst: &Instance, p: &DwellProblem, tau: &[f64], j: usize) -> (TissueState, f64) {
    let mut state = inst.initial_state.clone();
    let mut risk = 0.0;
    for k in 0..j {
        let (r, s) = stop_pass(inst, p, k, tau[k], &state);
        risk += r;
        state = s;
    }
    (state, risk)
}

fn stop_pass(inst: &Instance, p: &DwellProblem, k: usize, tau_k: f64, state: &TissueState) -> (f64, TissueState) {
    let s = &p.stops[k];
    let (r1, mid) = hold_risk_unchecked(state, inst, s.z, s.hold_gas, tau_k);
    let (r2, end) = ramp_risk_unchecked(&mid, inst, s.z, p.next_depth(k), s.transit_gas);
    (r1 + r2, end)
}

/// Risk from stop `j` onward with dwell `tau_j` there.
fn suffix_risk(inst: &Instance, p: &DwellProblem, tau: &[f64], j: usize, tau_j: f64, entry: &TissueState) -> f64 {
    let (mut risk, mut state) = stop_pass(inst, p, j, tau_j, entry);
    for k in j + 1..p.stops.len() {
        let (r, s) = stop_pass(inst, p, k, tau[k], &state);
        risk += r;
        state = s;
    }
    risk
}

fn risk_at(inst: &Instance, p: &DwellProblem, tau: &[f64]) -> f64 {
    if p.stops.is_empty() {
        return 0.0;
    }
    suffix_risk(inst, p, tau, 0, tau[0], &inst.initial_state)
}

/// Total risk `R(τ)` of the implied profile.
pub fn risk_of_dwells(inst: &Instance, problem: &DwellProblem) -> Result<f64> {
    problem.validate(inst)?;
    Ok(risk_at(inst, problem, &problem.tau))
}

/// `J_λ(τ) = Σ τ_j + transit time + λ R(τ)`.
pub fn objective(inst: &Instance, problem: &DwellProblem) -> Result<f64> {
    let r = risk_of_dwells(inst, problem)?;
    Ok(problem.tau.iter().sum::<f64>() + problem.transit_time(inst) + problem.lambda * r)
}

/// One-sided difference quotients of `R` in coordinate `j`; the minus side is absent when `τ_j < h`.
pub fn subgradient(inst: &Instance, problem: &DwellProblem, j: usize, h: f64) -> Result<(Option<f64>, f64)> {
    problem.validate(inst)?;
    if j >= problem.stops.len() {
        return Err(Error::invalid("j", "stop index out of range"));
    }
    if !(h > 0.0) {
        return Err(Error::Domain {
            what: "h",
            value: h,
            domain: "(0, inf) min".into(),
        });
    }
    Ok(subgradient_unchecked(inst, problem, &problem.tau, j, h))
}

fn subgradient_unchecked(inst: &Instance, p: &DwellProblem, tau: &[f64], j: usize, h: f64) -> (Option<f64>, f64) {
    let (entry, _) = prefix(inst, p, tau, j);
    let r0 = suffix_risk(inst, p, tau, j, tau[j], &entry);
    let rp = suffix_risk(inst, p, tau, j, tau[j] + h, &entry);
    let xm = (tau[j] >= h).then(|| (r0 - suffix_risk(inst, p, tau, j, tau[j] - h, &entry)) / h);
    (xm, (rp - r0) / h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopKkt {
    pub tau: f64,
    pub xi_minus: Option<f64>,
    pub xi_plus: f64,
    pub active: bool,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub stops: Vec<StopKkt>,
    pub max_residual: f64,
}

/// First-order residuals at `tau`.
pub fn kkt_report(inst: &Instance, problem: &DwellProblem, h: f64) -> Result<KktReport> {
    problem.validate(inst)?;
    Ok(report_at(inst, problem, &problem.tau, h))
}

fn report_at(inst: &Instance, p: &DwellProblem, tau: &[f64], h: f64) -> KktReport {
    let lambda = p.lambda;
    let stops: Vec<StopKkt> = (0..p.stops.len())
        .map(|j| {
            let (xm, xp) = subgradient_unchecked(inst, p, tau, j, h);
            let active = tau[j] > ACTIVITY_TOL;
            let residual = if active {
                let (lo, hi) = match xm {
                    Some(m) => (m.min(xp), m.max(xp)),
                    None => (xp, xp),
                };
                // Distance of 0 from 1 + λ[lo, hi].
                let (a, b) = (1.0 + lambda * lo, 1.0 + lambda * hi);
                if a > 0.0 {
                    a
                } else if b < 0.0 {
                    -b
                } else {
                    0.0
                }
            } else {
                (-(1.0 + lambda * xp)).max(0.0)
            };
            StopKkt {
                tau: tau[j],
                xi_minus: xm,
                xi_plus: xp,
                active,
                residual,
            }
        })
        .collect();
    let max_residual = stops.iter().map(|s| s.residual).fold(0.0, f64::max);
    KktReport { stops, max_residual }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolishResult {
    pub tau: Vec<f64>,
    pub objective_initial: f64,
    pub objective: f64,
    pub risk: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub report: KktReport,
}

/// Coordinate descent with a scanned golden-section line search per dwell.
pub fn polish_dwells(inst: &Instance, problem: &DwellProblem, tol: f64) -> Result<PolishResult> {
    polish_dwells_with(inst, problem, tol, DEFAULT_STEP)
}

pub fn polish_dwells_with(inst: &Instance, problem: &DwellProblem, tol: f64, h: f64) -> Result<PolishResult> {
    problem.validate(inst)?;
    if !(tol > 0.0) {
        return Err(Error::Domain {
            what: "tol",
            value: tol,
            domain: "(0, inf)".into(),
        });
    }
    let p = problem;
    let lambda = p.lambda;
    let transit = p.transit_time(inst);
    let mut tau = p.tau.clone();
    let total = |tau: &[f64], risk: f64| tau.iter().sum::<f64>() + transit + lambda * risk;
    let mut j_cur = total(&tau, risk_at(inst, p, &tau));
    let objective_initial = j_cur;

    let mut report = report_at(inst, p, &tau, h);
    let mut sweeps = 0;
    while report.max_residual > tol && sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut improved = false;
        let start = tau.clone();
        for j in 0..tau.len() {
            let (entry, pre_risk) = prefix(inst, p, &tau, j);
            let others: f64 = tau.iter().enumerate().filter(|&(k, _)| k != j).map(|(_, t)| t).sum();
            let f = |t: f64| others + t + transit + lambda * (pre_risk + suffix_risk(inst, p, &tau, j, t, &entry));
            let hi = tau[j].max(j_cur - others - transit).max(0.0);
            let (t_best, f_best) = line_search(f, hi);
            if f_best < j_cur - 1e-14 * j_cur.abs().max(1.0) {
                tau[j] = t_best;
                j_cur = f_best;
                improved = true;
            }
        }
        // Pattern move along the sweep's net displacement, clamped at zero dwell.
        let d: Vec<f64> = tau.iter().zip(&start).map(|(t, s)| t - s).collect();
        if improved && d.iter().any(|&x| x != 0.0) {
            let s_hi = d
                .iter()
                .zip(&tau)
                .filter(|(x, _)| **x < 0.0)
                .map(|(x, t)| t / -x)
                .fold(PATTERN_MAX, f64::min);
            let at = |s: f64| -> Vec<f64> { tau.iter().zip(&d).map(|(t, x)| (t + s * x).max(0.0)).collect() };
            let along = |s: f64| {
                let t = at(s);
                total(&t, risk_at(inst, p, &t))
            };
            let (s, v) = line_search(along, s_hi);
            if s > 0.0 && v < j_cur - 1e-14 * j_cur.abs().max(1.0) {
                tau = at(s);
                j_cur = v;
            }
        }
        report = report_at(inst, p, &tau, h);
        if !improved {
            break;
        }
    }
    let risk = risk_at(inst, p, &tau);
    Ok(PolishResult {
        objective: total(&tau, risk),
        tau,
        objective_initial,
        risk,
        sweeps,
        converged: report.max_residual <= tol,
        report,
    })
}

/// Global-ish minimiser of `f` on `[0, hi]`: coarse scan, then golden section around the best node.
fn line_search<F: Fn(f64) -> f64>(f: F, hi: f64) -> (f64, f64) {
    if hi <= 0.0 {
        return (0.0, f(0.0));
    }
    let step = hi / SCAN_POINTS as f64;
    let mut best = (0.0, f(0.0));
    let mut best_k = 0;
    for k in 1..=SCAN_POINTS {
        let t = k as f64 * step;
        let v = f(t);
        if v < best.1 {
            best = (t, v);
            best_k = k;
        }
    }
    let a = (best_k as f64 - 1.0).max(0.0) * step;
    let b = ((best_k + 1) as f64 * step).min(hi);
    let (t, v) = golden_section(&f, a, b, 1e-10 * hi.max(1.0));
    if v < best.1 {
        (t, v)
    } else {
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feasibility::FeasibilityWindows;
    use crate::model::{Compartment, Environment, Gas, PenaltyPL};
    use crate::schedule::simulate;

    fn inst(p: f64, z_start: f64) -> Instance {
        Instance::new(
            Environment::new(1.0, 0.1, 0.0627, 60.0, 10.0).unwrap(),
            vec![Gas::air(), Gas::new("ean50", 0.5, 0.5, 0.0).unwrap()],
            FeasibilityWindows::new(0.16, 1.6, 60.0, 0.0).unwrap(),
            vec![Compartment::new(2.0, None, 0.5, 0.8).unwrap()],
            vec![PenaltyPL::linear(1.0)],
            TissueState::uniform(1, 1, p),
            z_start,
            0.0,
        )
        .unwrap()
    }

    fn stops(zs: &[f64], gas: usize) -> Vec<Stop> {
        zs.iter()
            .map(|&z| Stop {
                z,
                hold_gas: gas,
                transit_gas: gas,
            })
            .collect()
    }

    #[test]
    fn risk_matches_simulate() {
        let i = inst(3.0, 9.0);
        let p = DwellProblem::new(&i, stops(&[9.0, 6.0, 3.0], 1), vec![1.0, 0.0, 2.5], 3.0).unwrap();
        let sim = simulate(&i, &p.to_profile(&i), false).unwrap();
        assert!((risk_of_dwells(&i, &p).unwrap() - sim.total_risk).abs() < 1e-12);
        let zero = DwellProblem::new(&i, stops(&[9.0, 6.0, 3.0], 1), vec![0.0; 3], 3.0).unwrap();
        let straight = simulate(&i, &crate::schedule::Profile::new(9.0).ascend_to(0.0, 1), false).unwrap();
        assert!((risk_of_dwells(&i, &zero).unwrap() - straight.total_risk).abs() < 1e-9);
        let rt = DwellProblem::from_profile(&i, &p.to_profile(&i), 3.0).unwrap();
        assert_eq!(rt, p);
    }

    #[test]
    fn zero_marginal_stop() {
        let i = inst(0.5, 6.0);
        let p = DwellProblem::new(&i, stops(&[6.0, 3.0], 0), vec![2.0, 2.0], 1.0).unwrap();
        let (xm, xp) = subgradient(&i, &p, 0, DEFAULT_STEP).unwrap();
        assert_eq!((xm, xp), (Some(0.0), 0.0));
    }

    #[test]
    fn subgradient_matches_hand_derivative() {
        // dR/dτ = S(τ) + (∂R_transit/∂P) · dP/dτ with dP/dτ = k (P∞ - P(τ)).
        let i = inst(3.0, 6.0);
        let p = DwellProblem::new(&i, stops(&[6.0], 1), vec![1.0], 1.0).unwrap();
        let (xm, xp) = subgradient(&i, &p, 0, 1e-6).unwrap();
        let k = std::f64::consts::LN_2 / 2.0;
        let env = &i.environment;
        let p_inf = 0.5 * env.inspired(6.0);
        let p_tau = p_inf + (3.0 - p_inf) * (-k * 1.0f64).exp();
        let m = i.compartments[0].ceiling_at(env, 6.0);
        let s = ((p_tau - m) / m).max(0.0);
        let tr = |x: f64| {
            crate::schedule::ascent_risk(&TissueState::uniform(1, 1, x), &i, 6.0, 0.0, 1)
                .unwrap()
                .0
        };
        let dx = 1e-5;
        let dtr = (tr(p_tau + dx) - tr(p_tau - dx)) / (2.0 * dx);
        let expected = s + dtr * k * (p_inf - p_tau);
        assert!((xp - expected).abs() < 1e-4, "{xp} vs {expected}");
        assert!((xm.unwrap() - expected).abs() < 1e-4);
    }

    #[test]
    fn central_difference_is_second_order() {
        let i = inst(3.0, 6.0);
        let p = DwellProblem::new(&i, stops(&[6.0, 3.0], 1), vec![0.7, 0.4], 2.0).unwrap();
        let h = 1e-3;
        let (xm, xp) = subgradient(&i, &p, 1, h).unwrap();
        let avg = 0.5 * (xm.unwrap() + xp);
        let (xm2, xp2) = subgradient(&i, &p, 1, h / 100.0).unwrap();
        let fine = 0.5 * (xm2.unwrap() + xp2);
        assert!((avg - fine).abs() < 1e-5, "{avg} vs {fine}");
    }

    #[test]
    fn kkt_point_returns_immediately() {
        let i = inst(3.0, 6.0);
        let p = DwellProblem::new(&i, stops(&[6.0, 3.0], 1), vec![0.0, 0.0], 0.0).unwrap();
        let r = polish_dwells(&i, &p, 1e-6).unwrap();
        assert_eq!(r.sweeps, 0);
        assert!(r.converged);
        assert_eq!(r.tau, vec![0.0, 0.0]);
    }

    #[test]
    fn one_dimensional_polish_matches_scan() {
        // Below the ceiling at depth: dwell only trades time for transit risk.
        let i = inst(2.0, 9.0);
        let lambda = 10.0;
        let p = DwellProblem::new(&i, stops(&[9.0], 1), vec![0.0], lambda).unwrap();
        let r = polish_dwells(&i, &p, 1e-6).unwrap();
        let j = |t: f64| {
            let q = DwellProblem::new(&i, stops(&[9.0], 1), vec![t], lambda).unwrap();
            objective(&i, &q).unwrap()
        };
        let scan = (0..=20_000).map(|k| j(k as f64 * 1e-3)).fold(f64::INFINITY, f64::min);
        assert!(r.objective <= scan + 1e-9, "{} vs {scan}", r.objective);
        assert!(r.objective <= r.objective_initial);
        assert!(r.tau[0] > 0.0);
        let active = &r.report.stops[0];
        assert!((-active.xi_plus * lambda - 1.0).abs() < 0.01);
    }
}
