use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::document::round12;
use crate::error::{Error, Result};
use crate::model::Instance;
use crate::planner::{plan_capped_with, plan_scalarized_with, FeasibilityTable, Plan, StopGrid};
use crate::schedule::Profile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub lambda: f64,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub j_star: f64,
    pub profile: Profile,
}

/// One scalarised plan per `λ`, in input order.
pub fn sweep_frontier(inst: &Instance, grid: &StopGrid, lambdas: &[f64]) -> Result<Vec<FrontierPoint>> {
    if lambdas.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
        return Err(Error::invalid("lambdas", "must be finite and >= 0"));
    }
    if lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("lambdas", "must be strictly ascending"));
    }
    let table = FeasibilityTable::compute(inst, grid)?;
    let plans: Vec<Result<Plan>> = lambdas
        .par_iter()
        .map(|&l| plan_scalarized_with(inst, grid, l, &table))
        .collect();
    lambdas
        .iter()
        .zip(plans)
        .map(|(&lambda, plan)| {
            let plan = plan?;
            Ok(FrontierPoint {
                lambda,
                t: plan.outcome.total_time,
                r: plan.outcome.total_risk,
                j_star: plan.objective,
                profile: plan.profile,
            })
        })
        .collect()
}

/// CSV with header `lambda,T,R,Jstar`, 12 significant digits.
pub fn frontier_csv(points: &[FrontierPoint]) -> String {
    let mut s = String::from("lambda,T,R,Jstar\n");
    for p in points {
        s.push_str(&format!(
            "{},{},{},{}\n",
            sig12(p.lambda),
            sig12(p.t),
            sig12(p.r),
            sig12(p.j_star)
        ));
    }
    s
}

fn sig12(x: f64) -> String {
    format!("{}", round12(x))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    /// Middle indices of triples where `λ ↦ J*` fails concavity.
    pub concavity_violations: Vec<usize>,
    /// Interior indices whose one-sided quotients leave `[R_next, R_prev]`.
    pub bracket_violations: Vec<usize>,
    pub risk_increases: Vec<usize>,
    pub time_decreases: Vec<usize>,
    /// Consecutive indices whose chord slope `ΔT/ΔR` leaves `[-λ_right, -λ_left]`.
    pub slope_violations: Vec<usize>,
}

impl EnvelopeReport {
    pub fn passed(&self) -> bool {
        self.concavity_violations.is_empty()
            && self.bracket_violations.is_empty()
            && self.risk_increases.is_empty()
            && self.time_decreases.is_empty()
            && self.slope_violations.is_empty()
    }
}

/// Envelope, Danskin-bracket, monotonicity and chord-slope checks on a sweep.
pub fn check_envelope(points: &[FrontierPoint], tol: f64) -> EnvelopeReport {
    let mut rep = EnvelopeReport::default();
    let scale = |x: f64| tol * (1.0 + x.abs());
    for i in 1..points.len().saturating_sub(1) {
        let (a, b, c) = (&points[i - 1], &points[i], &points[i + 1]);
        let theta = (b.lambda - a.lambda) / (c.lambda - a.lambda);
        let chord = a.j_star + theta * (c.j_star - a.j_star);
        if b.j_star < chord - scale(chord) {
            rep.concavity_violations.push(i);
        }
        let back = (b.j_star - a.j_star) / (b.lambda - a.lambda);
        let fwd = (c.j_star - b.j_star) / (c.lambda - b.lambda);
        let slack_b = scale(b.j_star) / (b.lambda - a.lambda);
        let slack_f = scale(b.j_star) / (c.lambda - b.lambda);
        let ok_back = back >= b.r - slack_b && back <= a.r + slack_b;
        let ok_fwd = fwd >= c.r - slack_f && fwd <= b.r + slack_f;
        if !(ok_back && ok_fwd) {
            rep.bracket_violations.push(i);
        }
    }
    for i in 1..points.len() {
        let (a, b) = (&points[i - 1], &points[i]);
        if b.r > a.r + scale(a.r) {
            rep.risk_increases.push(i);
        }
        if b.t < a.t - scale(a.t) {
            rep.time_decreases.push(i);
        }
        let dr = b.r - a.r;
        if dr.abs() > scale(a.r) {
            let slope = (b.t - a.t) / dr;
            let s = tol * (1.0 + slope.abs());
            if slope > -a.lambda + s || slope < -b.lambda - s {
                rep.slope_violations.push(i);
            }
        }
    }
    rep
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CappedPoint {
    pub rho: f64,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "R")]
    pub r: f64,
}

/// One capped plan per budget; budgets with no `Δr`-feasible plan are skipped.
pub fn sweep_capped(inst: &Instance, grid: &StopGrid, rhos: &[f64], dr: f64) -> Result<Vec<CappedPoint>> {
    let table = FeasibilityTable::compute(inst, grid)?;
    let plans: Vec<Result<Plan>> = rhos
        .par_iter()
        .map(|&rho| plan_capped_with(inst, grid, rho, dr, &table))
        .collect();
    let mut out = Vec::new();
    for (&rho, plan) in rhos.iter().zip(plans) {
        match plan {
            Ok(p) => out.push(CappedPoint {
                rho,
                t: p.outcome.total_time,
                r: p.outcome.total_risk,
            }),
            Err(Error::CapInfeasible { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonconvexGap {
    /// `(T, R)` of the left, middle and right Pareto points.
    pub left: (f64, f64),
    pub middle: (f64, f64),
    pub right: (f64, f64),
    /// Height of the middle point above the chord.
    pub excess: f64,
}

/// Pareto-minimal subset sorted by increasing `T` (strictly decreasing `R`).
pub fn pareto_filter(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        if out.last().is_none_or(|q| p.1 < q.1) {
            if out.last().is_some_and(|q| q.0 == p.0) {
                out.pop();
            }
            out.push(p);
        }
    }
    out
}

/// Middle Pareto points lying strictly above the chord of their neighbours.
pub fn convexity_probe(points: &[(f64, f64)], tol: f64) -> Vec<NonconvexGap> {
    let front = pareto_filter(points);
    front
        .windows(3)
        .filter_map(|w| {
            let (a, b, c) = (w[0], w[1], w[2]);
            let chord = a.1 + (c.1 - a.1) * (b.0 - a.0) / (c.0 - a.0);
            let excess = b.1 - chord;
            (excess > tol * (1.0 + chord.abs())).then_some(NonconvexGap {
                left: a,
                middle: b,
                right: c,
                excess,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feasibility::FeasibilityWindows;
    use crate::model::{Compartment, Environment, Gas, PenaltyPL, TissueState};
    use crate::planner::{build_grid, MenuRule};
    use crate::schedule::simulate;

    fn inst(gases: Vec<Gas>, p: f64, z_start: f64, phi: PenaltyPL) -> Instance {
        Instance::new(
            Environment::new(1.0, 0.1, 0.0627, 60.0, 10.0).unwrap(),
            gases,
            FeasibilityWindows::new(0.16, 1.6, 60.0, 0.0).unwrap(),
            vec![Compartment::new(5.0, None, 0.5, 0.8).unwrap()],
            vec![phi],
            TissueState::uniform(1, 1, p),
            z_start,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn collinear_and_dominated_points() {
        let line: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 10.0 - 2.0 * i as f64)).collect();
        assert!(convexity_probe(&line, 1e-12).is_empty());
        let pts = vec![(1.0, 5.0), (2.0, 5.0), (1.0, 6.0), (3.0, 1.0), (0.5, 9.0)];
        assert_eq!(pareto_filter(&pts), vec![(0.5, 9.0), (1.0, 5.0), (3.0, 1.0)]);
        let bump = vec![(0.0, 4.0), (1.0, 3.5), (2.0, 0.0)];
        let gaps = convexity_probe(&bump, 1e-12);
        assert_eq!(gaps.len(), 1);
        assert!((gaps[0].excess - 1.5).abs() < 1e-12);
    }

    #[test]
    fn single_gas_toy_frontier_is_convex() {
        // Below the ceiling at the stop, so dwelling only shortens the oversaturated ascent.
        let i = inst(vec![Gas::air()], 1.7, 6.0, PenaltyPL::linear(1.0));
        let pts: Vec<(f64, f64)> = (0..=40)
            .map(|k| {
                let tau = 0.5 * k as f64;
                let prof = crate::schedule::Profile::new(6.0).hold(0, tau).ascend_to(0.0, 0);
                let o = simulate(&i, &prof, false).unwrap();
                (o.total_time, o.total_risk)
            })
            .collect();
        assert!(pareto_filter(&pts).len() > 10);
        assert!(convexity_probe(&pts, 1e-9).is_empty());
    }

    #[test]
    fn sweep_envelope_and_csv() {
        let gases = vec![Gas::air(), Gas::new("ean50", 0.5, 0.5, 0.0).unwrap()];
        let i = inst(gases, 3.0, 12.0, PenaltyPL::new(vec![0.0, 0.2], vec![1.0, 3.0]).unwrap());
        let g = build_grid(&i, 3.0, &MenuRule::Exponential { tau_min: 1.0, tau_max: 8.0 }).unwrap();
        let lambdas: Vec<f64> = (0..12).map(|k| 0.05 * 2f64.powi(k)).collect();
        let pts = sweep_frontier(&i, &g, &lambdas).unwrap();
        let rep = check_envelope(&pts, 1e-9);
        assert!(rep.passed(), "{rep:?}");
        assert!((pts[0].t - 1.2).abs() < 1e-12, "small λ gives the straight ascent");
        assert!(pts.last().unwrap().t > pts[0].t);
        for p in &pts {
            assert!((p.j_star - (p.t + p.lambda * p.r)).abs() < 1e-12);
        }
        let csv = frontier_csv(&pts);
        assert!(csv.starts_with("lambda,T,R,Jstar\n"));
        assert_eq!(csv.lines().count(), 13);
        assert!(sweep_frontier(&i, &g, &[1.0, 0.5]).is_err());
    }

    #[test]
    fn envelope_check_flags_bad_sweeps() {
        let p = |lambda: f64, t: f64, r: f64| FrontierPoint {
            lambda,
            t,
            r,
            j_star: t + lambda * r,
            profile: crate::schedule::Profile::new(0.0),
        };
        let bad = vec![p(1.0, 1.0, 1.0), p(2.0, 0.5, 2.0), p(3.0, 3.0, 0.1)];
        let rep = check_envelope(&bad, 1e-9);
        assert!(!rep.passed());
        assert_eq!(rep.risk_increases, vec![1]);
        assert_eq!(rep.time_decreases, vec![1]);
    }
}
