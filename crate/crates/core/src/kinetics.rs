//! Closed-form compartment kinetics for constant-depth holds and constant-rate ramps.

use crate::error::{Error, Result};
use crate::model::{Gas, Instance, TissueState};

/// Exact hold at depth `z` on `gas` for `tau` minutes.
pub fn hold_update(
    inst: &Instance,
    state: &TissueState,
    gas: &Gas,
    z: f64,
    tau: f64,
) -> Result<TissueState> {
    inst.environment.check_depth(z)?;
    if !(tau >= 0.0) {
        return Err(Error::Domain {
            what: "dwell",
            value: tau,
            domain: "[0, inf) min".into(),
        });
    }
    Ok(hold_unchecked(inst, state, gas, z, tau))
}

pub(crate) fn hold_unchecked(
    inst: &Instance,
    state: &TissueState,
    gas: &Gas,
    z: f64,
    tau: f64,
) -> TissueState {
    let mut out = state.clone();
    if tau == 0.0 {
        return out;
    }
    let inspired = inst.environment.inspired(z);
    for (i, c) in inst.compartments.iter().enumerate() {
        for s in 0..state.species() {
            let p_inf = gas.species_fraction(s) * inspired;
            let decay = (-c.rate(s) * tau).exp();
            out.set(i, s, p_inf + (state.get(i, s) - p_inf) * decay);
        }
    }
    out
}

/// Exact max-rate (or any-rate) ascent from `z_from` to `z_to <= z_from`.
pub fn ascent_update(
    inst: &Instance,
    state: &TissueState,
    gas: &Gas,
    z_from: f64,
    z_to: f64,
    rate: f64,
) -> Result<TissueState> {
    if z_to > z_from {
        return Err(Error::Domain {
            what: "ascent target depth",
            value: z_to,
            domain: format!("[0, {z_from}] (ascents only move up)"),
        });
    }
    ramp_update(inst, state, gas, z_from, z_to, rate)
}

/// Exact constant-rate transit in either direction.
pub fn ramp_update(
    inst: &Instance,
    state: &TissueState,
    gas: &Gas,
    z_from: f64,
    z_to: f64,
    rate: f64,
) -> Result<TissueState> {
    let env = &inst.environment;
    env.check_depth(z_from)?;
    env.check_depth(z_to)?;
    if !(rate > 0.0 && rate <= env.zdot_max * (1.0 + 1e-12)) {
        return Err(Error::Domain {
            what: "vertical rate",
            value: rate,
            domain: format!("(0, {}] m/min", env.zdot_max),
        });
    }
    let ramp = Ramp::new(inst, state, gas, z_from, z_to, rate);
    Ok(ramp.state_at(ramp.duration))
}

/// Precomputed coefficients of a constant-rate transit.
///
/// Per compartment and species the tissue pressure is
/// `P(t) = p0 + (pinf0 - p0)(1 - e^{-kt}) + (r/k)(kt - 1 + e^{-kt})`, written
/// without the `r/k` cancellation that slow compartments would suffer, and the
/// ceiling is `M(t) = m0 + m1 * t`.
#[derive(Debug, Clone)]
pub(crate) struct Ramp {
    pub duration: f64,
    species: usize,
    /// (p0, pinf0, r, k) per (compartment, species).
    terms: Vec<(f64, f64, f64, f64)>,
    /// (m0, m1) per compartment.
    ceilings: Vec<(f64, f64)>,
}

impl Ramp {
    pub fn new(
        inst: &Instance,
        state: &TissueState,
        gas: &Gas,
        z_from: f64,
        z_to: f64,
        rate: f64,
    ) -> Self {
        let env = &inst.environment;
        let duration = (z_from - z_to).abs() / rate;
        let dz_dt = if z_to <= z_from { -rate } else { rate };
        let inspired0 = env.inspired(z_from);
        let species = state.species();
        let mut terms = Vec::with_capacity(inst.n_compartments() * species);
        let mut ceilings = Vec::with_capacity(inst.n_compartments());
        for (i, c) in inst.compartments.iter().enumerate() {
            for s in 0..species {
                let f = gas.species_fraction(s);
                let k = c.rate(s);
                terms.push((state.get(i, s), f * inspired0, f * env.gamma * dz_dt, k));
            }
            ceilings.push((c.ceiling_at(env, z_from), c.b * env.gamma * dz_dt));
        }
        Ramp {
            duration,
            species,
            terms,
            ceilings,
        }
    }

    pub fn state_at(&self, t: f64) -> TissueState {
        let p = self
            .terms
            .iter()
            .map(|&term| pressure(term, t).max(0.0))
            .collect();
        TissueState::new(self.species, p).expect("ramp keeps pressures finite and nonnegative")
    }

    #[inline]
    pub fn total(&self, i: usize, t: f64) -> f64 {
        self.terms[i * self.species..(i + 1) * self.species]
            .iter()
            .map(|&term| pressure(term, t))
            .sum()
    }

    #[inline]
    pub fn ceiling(&self, i: usize, t: f64) -> f64 {
        let (m0, m1) = self.ceilings[i];
        m0 + m1 * t
    }
}

#[inline]
fn pressure((p0, pinf0, r, k): (f64, f64, f64, f64), t: f64) -> f64 {
    let x = k * t;
    p0 - (pinf0 - p0) * (-x).exp_m1() + r * ramp_lag(x) / k
}

/// `x - 1 + e^{-x}`, accurate for small `x`.
fn ramp_lag(x: f64) -> f64 {
    if x < 0.1 {
        // Alternating series x²/2! - x³/3! + ..; the first omitted term is below 1e-14 relative.
        let mut term = x * x / 2.0;
        let mut sum = term;
        for n in 3..=10 {
            term *= -x / n as f64;
            sum += term;
        }
        sum
    } else {
        x + (-x).exp_m1()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feasibility::FeasibilityWindows;
    use crate::model::{Compartment, Environment, PenaltyPL};

    fn single(half_time: f64, p: f64) -> Instance {
        Instance::new(
            Environment::new(1.0, 0.1, 0.0627, 60.0, 10.0).unwrap(),
            vec![Gas::air(), Gas::new("o2", 1.0, 0.0, 0.0).unwrap()],
            FeasibilityWindows::new(0.1, 2.0, 60.0, 0.0).unwrap(),
            vec![Compartment::new(half_time, None, 0.5, 0.8).unwrap()],
            vec![PenaltyPL::linear(1.0)],
            TissueState::uniform(1, 1, p),
            30.0,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn ramp_lag_branches_agree() {
        // Series and closed form agree at the switch point.
        let x = 0.1 - 1e-12;
        let (series, closed) = (ramp_lag(x), x + (-x).exp_m1());
        assert!((series - closed).abs() < 1e-17, "{series} {closed}");
        // Leading term dominates for tiny arguments.
        let x = 1e-6;
        assert!((ramp_lag(x) / (x * x / 2.0) - (1.0 - x / 3.0)).abs() < 1e-12);
        assert_eq!(ramp_lag(0.0), 0.0);
    }

    #[test]
    fn slow_compartment_ramp_is_smooth() {
        // Second differences of P(t) for a near-frozen compartment match P''(t) h².
        let inst = single(1e6, 4.0);
        let ramp = Ramp::new(&inst, &inst.initial_state, &inst.gases[0], 10.0, 0.0, 10.0);
        let k = inst.compartments[0].rate(0);
        let f = inst.gases[0].inert_fraction();
        let (drift, gap) = (-f * 0.1 * 10.0, f * inst.environment.inspired(10.0) - 4.0);
        let h = 1e-3;
        for j in 1..999 {
            let t = j as f64 * h;
            let d2 = ramp.total(0, t + h) - 2.0 * ramp.total(0, t) + ramp.total(0, t - h);
            let exact = k * (-k * t).exp() * (drift - k * gap) * h * h;
            assert!((d2 - exact).abs() < 1e-14, "{t}: {d2} vs {exact}");
        }
    }

    #[test]
    fn hold_fixed_point_and_half_time() {
        let inst = single(4.0, 1.0);
        let air = Gas::air();
        let z = 10.0;
        let p_inf = 0.79 * inst.environment.inspired(z);
        let at_eq = TissueState::uniform(1, 1, p_inf);
        let out = hold_update(&inst, &at_eq, &air, z, 17.0).unwrap();
        assert!((out.get(0, 0) - p_inf).abs() < 1e-14);

        let s = TissueState::uniform(1, 1, 3.0);
        let out = hold_update(&inst, &s, &air, z, 4.0).unwrap();
        assert!((out.get(0, 0) - 0.5 * (3.0 + p_inf)).abs() < 1e-12);
    }

    #[test]
    fn hold_two_half_times_hand_value() {
        // P_inf = 1.0 requires F_I (P_a - w) = 1 at z; pick a gas that gives it.
        let inst = single(1.0, 3.0);
        let z = 10.0;
        let f = 1.0 / inst.environment.inspired(z);
        let g = Gas::new("mix", 1.0 - f, f, 0.0).unwrap();
        let out = hold_update(&inst, &inst.initial_state, &g, z, 2.0).unwrap();
        assert!((out.get(0, 0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn hold_rejects_negative_dwell() {
        let inst = single(4.0, 1.0);
        assert!(hold_update(&inst, &inst.initial_state, &Gas::air(), 5.0, -1.0).is_err());
    }

    #[test]
    fn zero_length_ascent_is_identity() {
        let inst = single(4.0, 2.2);
        let out = ascent_update(&inst, &inst.initial_state, &Gas::air(), 12.0, 12.0, 10.0).unwrap();
        assert_eq!(out, inst.initial_state);
    }

    #[test]
    fn pure_oxygen_ascent_decays_to_zero() {
        let inst = single(4.0, 2.2);
        let o2 = &inst.gases[1];
        let out = ascent_update(&inst, &inst.initial_state, o2, 6.0, 0.0, 10.0).unwrap();
        let k = std::f64::consts::LN_2 / 4.0;
        assert!((out.get(0, 0) - 2.2 * (-k * 0.6).exp()).abs() < 1e-12);
    }

    #[test]
    fn ascent_rejects_redescent() {
        let inst = single(4.0, 2.2);
        assert!(ascent_update(&inst, &inst.initial_state, &Gas::air(), 6.0, 9.0, 10.0).is_err());
        assert!(ascent_update(&inst, &inst.initial_state, &Gas::air(), 9.0, 6.0, 11.0).is_err());
    }

    /// Classical RK4 with a fine fixed step as the time-stepping oracle.
    fn rk4_ramp(p0: f64, k: f64, f: f64, env: &Environment, z0: f64, dzdt: f64, dur: f64) -> f64 {
        let n = 20_000;
        let h = dur / n as f64;
        let rhs = |t: f64, p: f64| k * (f * (env.inspired(z0 + dzdt * t)) - p);
        let mut p = p0;
        for j in 0..n {
            let t = j as f64 * h;
            let k1 = rhs(t, p);
            let k2 = rhs(t + h / 2.0, p + h / 2.0 * k1);
            let k3 = rhs(t + h / 2.0, p + h / 2.0 * k2);
            let k4 = rhs(t + h, p + h * k3);
            p += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        p
    }

    #[test]
    fn ascent_matches_time_stepping_oracle() {
        let inst = single(3.0, 3.4);
        let out = ascent_update(&inst, &inst.initial_state, &Gas::air(), 30.0, 3.0, 7.0).unwrap();
        let k = std::f64::consts::LN_2 / 3.0;
        let oracle = rk4_ramp(3.4, k, 0.79, &inst.environment, 30.0, -7.0, 27.0 / 7.0);
        assert!((out.get(0, 0) - oracle).abs() < 1e-9, "{} vs {oracle}", out.get(0, 0));

        let down = ramp_update(&inst, &inst.initial_state, &Gas::air(), 3.0, 30.0, 10.0).unwrap();
        let oracle = rk4_ramp(3.4, k, 0.79, &inst.environment, 3.0, 10.0, 2.7);
        assert!((down.get(0, 0) - oracle).abs() < 1e-9);
    }
}
