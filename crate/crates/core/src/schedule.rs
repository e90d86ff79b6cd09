//! Profiles made of holds and constant-rate transits, their exact simulation, and
//! time/risk accounting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility::{gas_feasible_at, gas_feasible_on};
use crate::kinetics::{hold_unchecked, Ramp};
use crate::model::{oversaturation_at, Instance, TissueState};
use crate::quad::{adaptive_simpson, bisect};

const DEPTH_TOL: f64 = 1e-9;
const ASCENT_QUAD_TOL: f64 = 1e-10;
const KINK_SAMPLES: usize = 32;
/// Trajectory export resolution (min).
pub const TRAJECTORY_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Segment {
    Hold { z: f64, gas: usize, tau: f64 },
    /// Max-rate ascent.
    Ascent { z_from: f64, z_to: f64, gas: usize },
    /// Max-rate descent; only accepted when re-descents are explicitly allowed.
    Descent { z_from: f64, z_to: f64, gas: usize },
}

impl Segment {
    pub fn gas(&self) -> usize {
        match *self {
            Segment::Hold { gas, .. } | Segment::Ascent { gas, .. } | Segment::Descent { gas, .. } => {
                gas
            }
        }
    }

    pub fn start_depth(&self) -> f64 {
        match *self {
            Segment::Hold { z, .. } => z,
            Segment::Ascent { z_from, .. } | Segment::Descent { z_from, .. } => z_from,
        }
    }

    pub fn end_depth(&self) -> f64 {
        match *self {
            Segment::Hold { z, .. } => z,
            Segment::Ascent { z_to, .. } | Segment::Descent { z_to, .. } => z_to,
        }
    }

    pub fn duration(&self, zdot_max: f64) -> f64 {
        match *self {
            Segment::Hold { tau, .. } => tau,
            Segment::Ascent { z_from, z_to, .. } | Segment::Descent { z_from, z_to, .. } => {
                (z_from - z_to).abs() / zdot_max
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub z_start: f64,
    pub segments: Vec<Segment>,
}

impl Profile {
    pub fn new(z_start: f64) -> Self {
        Profile {
            z_start,
            segments: Vec::new(),
        }
    }

    pub fn current_depth(&self) -> f64 {
        self.segments.last().map_or(self.z_start, Segment::end_depth)
    }

    pub fn hold(mut self, gas: usize, tau: f64) -> Self {
        let z = self.current_depth();
        self.segments.push(Segment::Hold { z, gas, tau });
        self
    }

    pub fn ascend_to(mut self, z_to: f64, gas: usize) -> Self {
        let z_from = self.current_depth();
        self.segments.push(Segment::Ascent { z_from, z_to, gas });
        self
    }

    /// Sum of hold durations plus transit durations.
    pub fn total_time(&self, zdot_max: f64) -> f64 {
        self.segments.iter().map(|s| s.duration(zdot_max)).sum()
    }

    /// Number of gas changes between consecutive segments of positive duration.
    pub fn switch_count(&self, zdot_max: f64) -> usize {
        let mut last = None;
        let mut count = 0;
        for s in &self.segments {
            if s.duration(zdot_max) <= 0.0 {
                continue;
            }
            if let Some(g) = last {
                if g != s.gas() {
                    count += 1;
                }
            }
            last = Some(s.gas());
        }
        count
    }

    /// Structural checks: depth continuity, direction, surface end, gas indices.
    pub fn validate(&self, inst: &Instance, allow_redescent: bool) -> Result<()> {
        let env = &inst.environment;
        if (self.z_start - inst.z_start).abs() > DEPTH_TOL {
            return Err(Error::Profile(format!(
                "profile starts at {} m but the instance starts at {} m",
                self.z_start, inst.z_start
            )));
        }
        let mut z = self.z_start;
        for (k, s) in self.segments.iter().enumerate() {
            if s.gas() >= inst.gases.len() {
                return Err(Error::Profile(format!("segment {k}: unknown gas index {}", s.gas())));
            }
            if (s.start_depth() - z).abs() > DEPTH_TOL {
                return Err(Error::Profile(format!(
                    "segment {k} starts at {} m, previous segment ended at {z} m",
                    s.start_depth()
                )));
            }
            env.check_depth(s.start_depth())?;
            env.check_depth(s.end_depth())?;
            match *s {
                Segment::Hold { tau, .. } => {
                    if !(tau >= 0.0 && tau.is_finite()) {
                        return Err(Error::Profile(format!("segment {k}: dwell {tau} < 0")));
                    }
                }
                Segment::Ascent { z_from, z_to, .. } => {
                    if z_to > z_from {
                        return Err(Error::Profile(format!(
                            "segment {k}: ascent from {z_from} m to deeper {z_to} m"
                        )));
                    }
                }
                Segment::Descent { z_from, z_to, .. } => {
                    if !allow_redescent {
                        return Err(Error::Profile(format!(
                            "segment {k}: re-descent {z_from} m -> {z_to} m without allow_redescent"
                        )));
                    }
                    if z_to < z_from {
                        return Err(Error::Profile(format!(
                            "segment {k}: descent from {z_from} m to shallower {z_to} m"
                        )));
                    }
                }
            }
            z = s.end_depth();
        }
        if z.abs() > DEPTH_TOL {
            return Err(Error::Profile(format!("profile ends at {z} m, not at the surface")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub z: f64,
    /// Total inert pressure per compartment.
    pub pressure: Vec<f64>,
    pub oversaturation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub total_time: f64,
    pub total_risk: f64,
    pub per_segment_risk: Vec<f64>,
    pub switch_count: usize,
    pub final_state: TissueState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<TrajectoryPoint>>,
}

impl Outcome {
    /// `T + lambda R + switch_cost * switches`.
    pub fn objective(&self, lambda: f64, switch_cost: f64) -> f64 {
        self.total_time + lambda * self.total_risk + switch_cost * self.switch_count as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulateOptions {
    pub allow_redescent: bool,
    pub check_feasibility: bool,
    pub record_trajectory: bool,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        SimulateOptions {
            allow_redescent: false,
            check_feasibility: true,
            record_trajectory: false,
        }
    }
}

/// `∫ (c + Σ β_s e^{-k_s t})_+ dt` over `[0, tau]`.
fn integrate_positive_part(c: f64, terms: &[(f64, f64)], tau: f64) -> f64 {
    let f = |t: f64| c + terms.iter().map(|&(b, k)| b * (-k * t).exp()).sum::<f64>();
    let primitive = |a: f64, b: f64| {
        c * (b - a)
            + terms
                .iter()
                .map(|&(beta, k)| beta / k * (-k * a).exp() * -(-k * (b - a)).exp_m1())
                .sum::<f64>()
    };
    // f has at most one critical point when two exponentials have opposite signs.
    let mut cuts = vec![0.0];
    if let [(b1, k1), (b2, k2)] = *terms {
        if b1 * b2 < 0.0 && (k1 - k2).abs() > 0.0 {
            let t = (-(b2 * k2) / (b1 * k1)).ln() / (k2 - k1);
            if t > 0.0 && t < tau {
                cuts.push(t);
            }
        }
    }
    cuts.push(tau);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (fa, fb) = (f(a), f(b));
        if fa >= 0.0 && fb >= 0.0 {
            total += primitive(a, b);
        } else if fa > 0.0 || fb > 0.0 {
            let r = bisect(f, a, b);
            total += if fa > 0.0 { primitive(a, r) } else { primitive(r, b) };
        }
    }
    total.max(0.0)
}

fn check_gas(inst: &Instance, gas: usize) -> Result<()> {
    if gas >= inst.gases.len() {
        return Err(Error::invalid("gas", format!("index {gas} out of range")));
    }
    Ok(())
}

/// Exact risk accrued over a hold, together with the end state.
pub fn hold_risk(
    state: &TissueState,
    inst: &Instance,
    z: f64,
    gas: usize,
    tau: f64,
) -> Result<(f64, TissueState)> {
    check_gas(inst, gas)?;
    inst.environment.check_depth(z)?;
    if !(tau >= 0.0) {
        return Err(Error::Domain {
            what: "dwell",
            value: tau,
            domain: "[0, inf) min".into(),
        });
    }
    if !gas_feasible_at(&inst.gases[gas], &inst.environment, &inst.windows, z) {
        return Err(Error::InfeasibleGas { gas, depth: z });
    }
    Ok(hold_risk_unchecked(state, inst, z, gas, tau))
}

pub(crate) fn hold_risk_unchecked(
    state: &TissueState,
    inst: &Instance,
    z: f64,
    gas: usize,
    tau: f64,
) -> (f64, TissueState) {
    let end = hold_unchecked(inst, state, &inst.gases[gas], z, tau);
    if tau == 0.0 {
        return (0.0, end);
    }
    let g = &inst.gases[gas];
    let inspired = inst.environment.inspired(z);
    let species = state.species();
    let mut risk = 0.0;
    let mut terms = Vec::with_capacity(species);
    for (i, (c, phi)) in inst.compartments.iter().zip(&inst.penalties).enumerate() {
        let m = c.ceiling_at(&inst.environment, z);
        // Cheap exit: the pressure is monotone between its start and limit.
        let p_inf_total = g.inert_fraction() * inspired;
        if state.total(i).max(end.total(i)).max(p_inf_total) <= m && species == 1 {
            continue;
        }
        terms.clear();
        for s in 0..species {
            let p_inf = g.species_fraction(s) * inspired;
            let beta = (state.get(i, s) - p_inf) / m;
            if beta != 0.0 {
                terms.push((beta, c.rate(s)));
            }
        }
        let alpha = p_inf_total / m - 1.0;
        for (b, d) in phi.hinges() {
            risk += d * integrate_positive_part(alpha - b, &terms, tau);
        }
    }
    (risk, end)
}

/// Risk accrued over a max-rate ascent, together with the end state.
pub fn ascent_risk(
    state: &TissueState,
    inst: &Instance,
    z_from: f64,
    z_to: f64,
    gas: usize,
) -> Result<(f64, TissueState)> {
    check_gas(inst, gas)?;
    let env = &inst.environment;
    env.check_depth(z_from)?;
    env.check_depth(z_to)?;
    if z_to > z_from {
        return Err(Error::Domain {
            what: "ascent target depth",
            value: z_to,
            domain: format!("[0, {z_from}]"),
        });
    }
    if z_to == z_from {
        return Ok((0.0, state.clone()));
    }
    if let Err(depth) = gas_feasible_on(&inst.gases[gas], env, &inst.windows, z_to, z_from) {
        return Err(Error::InfeasibleGas { gas, depth });
    }
    Ok(ramp_risk_unchecked(state, inst, z_from, z_to, gas))
}

/// Risk over a max-rate transit in either direction, no feasibility check.
pub(crate) fn ramp_risk_unchecked(
    state: &TissueState,
    inst: &Instance,
    z_from: f64,
    z_to: f64,
    gas: usize,
) -> (f64, TissueState) {
    let env = &inst.environment;
    let ramp = Ramp::new(inst, state, &inst.gases[gas], z_from, z_to, env.zdot_max);
    let end = ramp.state_at(ramp.duration);
    let dur = ramp.duration;
    if dur == 0.0 {
        return (0.0, end);
    }

    let ratio = |i: usize, t: f64| ramp.total(i, t) / ramp.ceiling(i, t) - 1.0;
    let integrand = |t: f64| {
        inst.penalties
            .iter()
            .enumerate()
            .map(|(i, phi)| phi.value(ratio(i, t)))
            .sum::<f64>()
    };

    // Locate kinks of the integrand: crossings of every hinge by every compartment.
    let mut cuts = vec![0.0, dur];
    let step = dur / KINK_SAMPLES as f64;
    let mut any_positive = false;
    for (i, phi) in inst.penalties.iter().enumerate() {
        let samples: Vec<f64> = (0..=KINK_SAMPLES).map(|j| ratio(i, j as f64 * step)).collect();
        if samples.iter().all(|&u| u <= 0.0) {
            continue;
        }
        any_positive = true;
        for (b, _) in phi.hinges() {
            for j in 0..KINK_SAMPLES {
                let (u0, u1) = (samples[j] - b, samples[j + 1] - b);
                if (u0 > 0.0) != (u1 > 0.0) {
                    let t0 = j as f64 * step;
                    cuts.push(bisect(|t| ratio(i, t) - b, t0, t0 + step));
                }
            }
        }
    }
    if !any_positive {
        return (0.0, end);
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);

    let pieces = (cuts.len() - 1) as f64;
    let mut risk = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let mid = 0.5 * (a + b);
        if integrand(a) == 0.0 && integrand(mid) == 0.0 && integrand(b) == 0.0 {
            continue;
        }
        risk += adaptive_simpson(integrand, a, b, ASCENT_QUAD_TOL / pieces);
    }
    (risk.max(0.0), end)
}

/// Simulate a profile with the default options.
pub fn simulate(inst: &Instance, profile: &Profile, allow_redescent: bool) -> Result<Outcome> {
    simulate_with(
        inst,
        profile,
        &SimulateOptions {
            allow_redescent,
            ..SimulateOptions::default()
        },
    )
}

pub fn simulate_with(inst: &Instance, profile: &Profile, opts: &SimulateOptions) -> Result<Outcome> {
    profile.validate(inst, opts.allow_redescent)?;
    let env = &inst.environment;
    let mut state = inst.initial_state.clone();
    let mut per_segment_risk = Vec::with_capacity(profile.segments.len());
    let mut trajectory = opts.record_trajectory.then(Vec::new);
    let mut t0 = 0.0;
    if let Some(tr) = trajectory.as_mut() {
        tr.push(sample(inst, &state, 0.0, profile.z_start));
    }
    for seg in &profile.segments {
        let gas = seg.gas();
        if opts.check_feasibility {
            match *seg {
                Segment::Hold { z, tau, .. } if tau > 0.0 => {
                    if !gas_feasible_at(&inst.gases[gas], env, &inst.windows, z) {
                        return Err(Error::InfeasibleGas { gas, depth: z });
                    }
                }
                Segment::Ascent { z_from, z_to, .. } | Segment::Descent { z_from, z_to, .. }
                    if z_from != z_to =>
                {
                    if let Err(depth) =
                        gas_feasible_on(&inst.gases[gas], env, &inst.windows, z_from, z_to)
                    {
                        return Err(Error::InfeasibleGas { gas, depth });
                    }
                }
                _ => {}
            }
        }
        let (risk, next) = match *seg {
            Segment::Hold { z, tau, .. } => hold_risk_unchecked(&state, inst, z, gas, tau),
            Segment::Ascent { z_from, z_to, .. } | Segment::Descent { z_from, z_to, .. } => {
                ramp_risk_unchecked(&state, inst, z_from, z_to, gas)
            }
        };
        let dur = seg.duration(env.zdot_max);
        if let Some(tr) = trajectory.as_mut() {
            record_segment(inst, seg, &state, t0, dur, tr);
        }
        per_segment_risk.push(risk);
        state = next;
        t0 += dur;
    }
    Ok(Outcome {
        total_time: profile.total_time(env.zdot_max),
        total_risk: per_segment_risk.iter().sum(),
        per_segment_risk,
        switch_count: profile.switch_count(env.zdot_max),
        final_state: state,
        trajectory,
    })
}

fn sample(inst: &Instance, state: &TissueState, t: f64, z: f64) -> TrajectoryPoint {
    TrajectoryPoint {
        t,
        z,
        pressure: (0..state.compartments()).map(|i| state.total(i)).collect(),
        oversaturation: oversaturation_at(state, inst, z),
    }
}

fn record_segment(
    inst: &Instance,
    seg: &Segment,
    start: &TissueState,
    t0: f64,
    dur: f64,
    out: &mut Vec<TrajectoryPoint>,
) {
    if dur <= 0.0 {
        return;
    }
    let mut offsets = Vec::new();
    let mut k = (t0 / TRAJECTORY_STEP).floor() as i64 + 1;
    loop {
        let t = k as f64 * TRAJECTORY_STEP - t0;
        if t >= dur - 1e-12 {
            break;
        }
        if t > 1e-12 {
            offsets.push(t);
        }
        k += 1;
    }
    offsets.push(dur);
    let gas = &inst.gases[seg.gas()];
    match *seg {
        Segment::Hold { z, .. } => {
            for t in offsets {
                let s = hold_unchecked(inst, start, gas, z, t);
                out.push(sample(inst, &s, t0 + t, z));
            }
        }
        Segment::Ascent { z_from, z_to, .. } | Segment::Descent { z_from, z_to, .. } => {
            let zdot = inst.environment.zdot_max;
            let ramp = Ramp::new(inst, start, gas, z_from, z_to, zdot);
            let dir = if z_to < z_from { -1.0 } else { 1.0 };
            for t in offsets {
                let z = (z_from + dir * zdot * t).clamp(z_from.min(z_to), z_from.max(z_to));
                out.push(sample(inst, &ramp.state_at(t), t0 + t, z));
            }
        }
    }
}

/// A hold used by the exchange comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldStep {
    pub z: f64,
    pub gas: usize,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeReport {
    /// Shallower (or lower-driver) hold first.
    pub risk_shallow_first: f64,
    /// Deeper hold first.
    pub risk_deep_first: f64,
    pub applicable: bool,
    pub reason: Option<String>,
    /// `Some` only when the ordering hypotheses hold.
    pub inequality_holds: Option<bool>,
}

/// Exchange tolerance for the deep-first comparison.
pub const EXCHANGE_TOL: f64 = 1e-9;

/// Risk of the two holds in both orders, starting from `state`.
pub fn exchange_check(
    inst: &Instance,
    state: &TissueState,
    seg_a: HoldStep,
    seg_b: HoldStep,
) -> Result<ExchangeReport> {
    let env = &inst.environment;
    let driver = |h: &HoldStep| inst.gases[h.gas].inert_fraction() * env.inspired(h.z);
    for h in [&seg_a, &seg_b] {
        check_gas(inst, h.gas)?;
    }
    let (a, b) = if (seg_a.z, driver(&seg_a)) <= (seg_b.z, driver(&seg_b)) {
        (seg_a, seg_b)
    } else {
        (seg_b, seg_a)
    };
    let run = |first: &HoldStep, second: &HoldStep| -> Result<f64> {
        let (r1, mid) = hold_risk(state, inst, first.z, first.gas, first.tau)?;
        let (r2, _) = hold_risk(&mid, inst, second.z, second.gas, second.tau)?;
        Ok(r1 + r2)
    };
    let risk_shallow_first = run(&a, &b)?;
    let risk_deep_first = run(&b, &a)?;

    let mut reason = None;
    if driver(&a) > driver(&b) {
        reason = Some("deeper hold has the smaller inspired inert pressure".to_string());
    } else if inst
        .compartments
        .iter()
        .any(|c| c.ceiling_at(env, a.z) > c.ceiling_at(env, b.z))
    {
        reason = Some("deeper hold has a lower ceiling".to_string());
    } else if inst.species() > 1 {
        reason = Some("two inert species".to_string());
    }
    let applicable = reason.is_none();
    Ok(ExchangeReport {
        risk_shallow_first,
        risk_deep_first,
        applicable,
        reason,
        inequality_holds: applicable
            .then_some(risk_deep_first <= risk_shallow_first + EXCHANGE_TOL),
    })
}
