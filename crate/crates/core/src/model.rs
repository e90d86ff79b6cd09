//! Physical model: environment, breathing gases, perfusion compartments with
//! affine ceilings, and piecewise-linear oversaturation penalties.
//!
//! Units are fixed throughout the crate: bar, metres, minutes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility::FeasibilityWindows;

/// Alveolar water-vapour pressure at body temperature (47 mmHg), in bar.
pub const DEFAULT_WATER_VAPOUR: f64 = 0.0627;

/// Species index of nitrogen in a [`TissueState`].
pub const N2: usize = 0;
/// Species index of helium in a [`TissueState`].
pub const HE: usize = 1;

const DEPTH_SLACK: f64 = 1e-9;
const FRACTION_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    /// Surface ambient pressure (bar).
    pub p0: f64,
    /// Pressure gradient (bar/m).
    pub gamma: f64,
    /// Alveolar water-vapour offset (bar).
    pub w: f64,
    /// Maximum depth (m).
    pub z_max: f64,
    /// Vertical rate cap (m/min).
    pub zdot_max: f64,
}

impl Environment {
    pub fn new(p0: f64, gamma: f64, w: f64, z_max: f64, zdot_max: f64) -> Result<Self> {
        let env = Environment {
            p0,
            gamma,
            w,
            z_max,
            zdot_max,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(field, format!("must be finite and > 0, got {v}")))
            }
        };
        pos("environment.p0", self.p0)?;
        pos("environment.gamma", self.gamma)?;
        pos("environment.z_max", self.z_max)?;
        pos("environment.zdot_max", self.zdot_max)?;
        if !(self.w.is_finite() && self.w > 0.0 && self.w < self.p0) {
            return Err(Error::invalid(
                "environment.w",
                format!("must lie in (0, p0 = {}), got {}", self.p0, self.w),
            ));
        }
        Ok(())
    }

    pub fn check_depth(&self, z: f64) -> Result<()> {
        if z.is_finite() && z >= -DEPTH_SLACK && z <= self.z_max + DEPTH_SLACK {
            Ok(())
        } else {
            Err(Error::Domain {
                what: "depth",
                value: z,
                domain: format!("[0, {}] m", self.z_max),
            })
        }
    }

    /// Ambient pressure without a domain check.
    #[inline]
    pub fn pa(&self, z: f64) -> f64 {
        self.p0 + self.gamma * z
    }

    /// Inspired (alveolar) pressure `P_a(z) - w`.
    #[inline]
    pub fn inspired(&self, z: f64) -> f64 {
        self.pa(z) - self.w
    }
}

pub fn ambient_pressure(env: &Environment, z: f64) -> Result<f64> {
    env.check_depth(z)?;
    Ok(env.pa(z))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gas {
    pub label: String,
    pub f_o2: f64,
    pub f_n2: f64,
    pub f_he: f64,
}

impl Gas {
    pub fn new(label: impl Into<String>, f_o2: f64, f_n2: f64, f_he: f64) -> Result<Self> {
        let gas = Gas {
            label: label.into(),
            f_o2,
            f_n2,
            f_he,
        };
        gas.validate()?;
        Ok(gas)
    }

    pub fn air() -> Self {
        Gas {
            label: "air".into(),
            f_o2: 0.21,
            f_n2: 0.79,
            f_he: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("f_o2", self.f_o2), ("f_n2", self.f_n2), ("f_he", self.f_he)] {
            if !(f.is_finite() && (0.0..=1.0).contains(&f)) {
                return Err(Error::invalid(
                    format!("gas '{}'.{name}", self.label),
                    format!("fraction must lie in [0, 1], got {f}"),
                ));
            }
        }
        let sum = self.f_o2 + self.f_n2 + self.f_he;
        if (sum - 1.0).abs() > FRACTION_SUM_TOL {
            return Err(Error::invalid(
                format!("gas '{}'", self.label),
                format!("fractions sum to {sum}, expected 1"),
            ));
        }
        Ok(())
    }

    /// Inert fraction `F_N2 + F_He`.
    #[inline]
    pub fn inert_fraction(&self) -> f64 {
        self.f_n2 + self.f_he
    }

    #[inline]
    pub fn species_fraction(&self, species: usize) -> f64 {
        match species {
            N2 => self.f_n2,
            HE => self.f_he,
            _ => 0.0,
        }
    }
}

/// Inspired inert pressure of one species, or of all inert gas when `species` is `None`.
pub fn inspired_inert_pressure(
    gas: &Gas,
    env: &Environment,
    z: f64,
    species: Option<usize>,
) -> Result<f64> {
    env.check_depth(z)?;
    let fraction = match species {
        Some(s) => gas.species_fraction(s),
        None => gas.inert_fraction(),
    };
    Ok(fraction * env.inspired(z))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compartment {
    pub half_time_n2: f64,
    pub half_time_he: Option<f64>,
    /// Ceiling intercept (bar).
    pub a: f64,
    /// Ceiling slope in ambient pressure.
    pub b: f64,
}

impl Compartment {
    pub fn new(half_time_n2: f64, half_time_he: Option<f64>, a: f64, b: f64) -> Result<Self> {
        let c = Compartment {
            half_time_n2,
            half_time_he,
            a,
            b,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_time_n2.is_finite() && self.half_time_n2 > 0.0) {
            return Err(Error::invalid(
                "compartment.half_time_n2",
                format!("must be > 0, got {}", self.half_time_n2),
            ));
        }
        if let Some(h) = self.half_time_he {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::invalid(
                    "compartment.half_time_he",
                    format!("must be > 0, got {h}"),
                ));
            }
        }
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(Error::invalid("compartment.a", format!("must be > 0, got {}", self.a)));
        }
        if !(self.b.is_finite() && self.b > 0.0 && self.b <= 1.0) {
            return Err(Error::invalid(
                "compartment.b",
                format!("must lie in (0, 1], got {}", self.b),
            ));
        }
        Ok(())
    }

    /// Rate constant `ln 2 / half-time` of one species.
    pub fn rate(&self, species: usize) -> f64 {
        let half = match species {
            HE => self.half_time_he.unwrap_or(self.half_time_n2),
            _ => self.half_time_n2,
        };
        std::f64::consts::LN_2 / half
    }

    #[inline]
    pub fn ceiling_at(&self, env: &Environment, z: f64) -> f64 {
        self.a + self.b * env.pa(z)
    }
}

pub fn ceiling(comp: &Compartment, env: &Environment, z: f64) -> Result<f64> {
    env.check_depth(z)?;
    Ok(comp.ceiling_at(env, z))
}

/// Convex, nondecreasing piecewise-linear penalty with `phi(0) = 0`.
///
/// Piece `j` covers `[breakpoints[j], breakpoints[j + 1])` with slope `slopes[j]`;
/// the last piece extends to infinity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyPL {
    pub breakpoints: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl PenaltyPL {
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        let p = PenaltyPL {
            breakpoints,
            slopes,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn linear(slope: f64) -> Self {
        PenaltyPL {
            breakpoints: vec![0.0],
            slopes: vec![slope],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.breakpoints.is_empty() || self.breakpoints.len() != self.slopes.len() {
            return Err(Error::invalid(
                "penalty",
                "needs one slope per breakpoint and at least one piece",
            ));
        }
        if self.breakpoints[0] != 0.0 {
            return Err(Error::invalid("penalty.breakpoints", "must start at 0"));
        }
        if self.breakpoints.iter().any(|b| !b.is_finite())
            || self.breakpoints.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::invalid(
                "penalty.breakpoints",
                "must be finite and strictly ascending",
            ));
        }
        if self.slopes.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::invalid("penalty.slopes", "must be finite and >= 0"));
        }
        if self.slopes.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid(
                "penalty.slopes",
                "must be nondecreasing (convexity)",
            ));
        }
        Ok(())
    }

    /// Evaluation without a domain check; negative input is treated as 0.
    pub fn value(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        self.hinges().map(|(b, d)| d * (s - b).max(0.0)).sum()
    }

    /// Hinge decomposition `phi(s) = sum_j d_j (s - b_j)_+` with all `d_j >= 0`.
    pub fn hinges(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.breakpoints
            .iter()
            .zip(&self.slopes)
            .enumerate()
            .map(move |(j, (&b, &slope))| {
                let prev = if j == 0 { 0.0 } else { self.slopes[j - 1] };
                (b, slope - prev)
            })
            .filter(|&(_, d)| d > 0.0)
    }

    /// Largest slope used on `[0, s_bar]`, i.e. the Lipschitz constant there.
    pub fn lipschitz_on(&self, s_bar: f64) -> f64 {
        let idx = self
            .breakpoints
            .iter()
            .rposition(|&b| b < s_bar)
            .unwrap_or(0);
        self.slopes[idx]
    }
}

pub fn penalty_eval(phi: &PenaltyPL, s: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::Domain {
            what: "oversaturation",
            value: s,
            domain: "[0, inf)".into(),
        });
    }
    Ok(phi.value(s))
}

/// Inert tissue pressures indexed by (compartment, species), stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueState {
    species: usize,
    p: Vec<f64>,
}

impl TissueState {
    pub fn new(species: usize, p: Vec<f64>) -> Result<Self> {
        if species == 0 || species > 2 || p.len() % species != 0 {
            return Err(Error::invalid(
                "tissue state",
                format!("{} entries do not fit {species} species", p.len()),
            ));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("tissue state", "entries must be finite and >= 0"));
        }
        Ok(TissueState { species, p })
    }

    /// Build from per-compartment rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let species = rows.first().map_or(1, Vec::len);
        if rows.iter().any(|r| r.len() != species) {
            return Err(Error::invalid("tissue state", "ragged rows"));
        }
        TissueState::new(species, rows.iter().flatten().copied().collect())
    }

    /// Every compartment at the same single-species pressure.
    pub fn uniform(compartments: usize, species: usize, pressure: f64) -> Self {
        TissueState {
            species,
            p: vec![pressure; compartments * species],
        }
    }

    #[inline]
    pub fn species(&self) -> usize {
        self.species
    }

    #[inline]
    pub fn compartments(&self) -> usize {
        self.p.len() / self.species
    }

    #[inline]
    pub fn get(&self, i: usize, s: usize) -> f64 {
        self.p[i * self.species + s]
    }

    #[inline]
    pub fn set(&mut self, i: usize, s: usize, v: f64) {
        self.p[i * self.species + s] = v;
    }

    /// Total inert pressure of compartment `i`.
    #[inline]
    pub fn total(&self, i: usize) -> f64 {
        self.p[i * self.species..(i + 1) * self.species].iter().sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.p.chunks(self.species).map(<[f64]>::to_vec).collect()
    }

    /// Componentwise `self <= other + tol`.
    pub fn le(&self, other: &TissueState, tol: f64) -> bool {
        self.p.iter().zip(&other.p).all(|(a, b)| *a <= *b + tol)
    }

    pub fn max_abs_diff(&self, other: &TissueState) -> f64 {
        self.p
            .iter()
            .zip(&other.p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn l1_distance(&self, other: &TissueState) -> f64 {
        self.p.iter().zip(&other.p).map(|(a, b)| (a - b).abs()).sum()
    }
}

/// The complete problem datum.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub environment: Environment,
    pub gases: Vec<Gas>,
    pub windows: FeasibilityWindows,
    pub compartments: Vec<Compartment>,
    pub penalties: Vec<PenaltyPL>,
    pub initial_state: TissueState,
    pub z_start: f64,
    pub switch_cost: f64,
}

impl Instance {
    pub fn new(
        environment: Environment,
        gases: Vec<Gas>,
        windows: FeasibilityWindows,
        compartments: Vec<Compartment>,
        penalties: Vec<PenaltyPL>,
        initial_state: TissueState,
        z_start: f64,
        switch_cost: f64,
    ) -> Result<Self> {
        let inst = Instance {
            environment,
            gases,
            windows,
            compartments,
            penalties,
            initial_state,
            z_start,
            switch_cost,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        self.environment.validate()?;
        if self.gases.is_empty() {
            return Err(Error::invalid("gases", "at least one gas is required"));
        }
        for g in &self.gases {
            g.validate()?;
        }
        self.windows.validate(&self.environment)?;
        if self.compartments.is_empty() {
            return Err(Error::invalid("compartments", "at least one compartment is required"));
        }
        for (i, c) in self.compartments.iter().enumerate() {
            c.validate()
                .map_err(|e| Error::invalid(format!("compartments[{i}]"), e.to_string()))?;
        }
        if self.penalties.len() != self.compartments.len() {
            return Err(Error::invalid(
                "penalties",
                format!(
                    "{} penalties for {} compartments",
                    self.penalties.len(),
                    self.compartments.len()
                ),
            ));
        }
        for (i, p) in self.penalties.iter().enumerate() {
            p.validate()
                .map_err(|e| Error::invalid(format!("penalties[{i}]"), e.to_string()))?;
        }
        let with_he = self
            .compartments
            .iter()
            .filter(|c| c.half_time_he.is_some())
            .count();
        if with_he != 0 && with_he != self.compartments.len() {
            return Err(Error::invalid(
                "compartments.half_time_he",
                "must be given for every compartment or for none",
            ));
        }
        let species = self.species();
        if species == 1 {
            if let Some(g) = self.gases.iter().find(|g| g.f_he > 0.0) {
                return Err(Error::invalid(
                    format!("gas '{}'.f_he", g.label),
                    "helium requires half_time_he on every compartment",
                ));
            }
        }
        if self.initial_state.species() != species
            || self.initial_state.compartments() != self.compartments.len()
        {
            return Err(Error::invalid(
                "initial_state",
                format!(
                    "expected {} compartments x {species} species",
                    self.compartments.len()
                ),
            ));
        }
        if !(self.z_start.is_finite() && self.z_start >= 0.0 && self.z_start <= self.environment.z_max)
        {
            return Err(Error::invalid(
                "z_start",
                format!("must lie in [0, {}], got {}", self.environment.z_max, self.z_start),
            ));
        }
        if !(self.switch_cost.is_finite() && self.switch_cost >= 0.0) {
            return Err(Error::invalid("switch_cost", "must be >= 0"));
        }
        Ok(())
    }

    /// 2 when helium kinetics are tracked, 1 for nitrogen only.
    pub fn species(&self) -> usize {
        if self.compartments.iter().all(|c| c.half_time_he.is_some()) {
            2
        } else {
            1
        }
    }

    pub fn n_compartments(&self) -> usize {
        self.compartments.len()
    }

    pub fn fi_max(&self) -> f64 {
        self.gases
            .iter()
            .map(Gas::inert_fraction)
            .fold(0.0, f64::max)
    }

    /// Upper bound on every reachable tissue pressure.
    pub fn p_bar(&self) -> f64 {
        self.fi_max() * self.environment.pa(self.environment.z_max)
    }

    pub fn gas_index(&self, label: &str) -> Option<usize> {
        self.gases.iter().position(|g| g.label == label)
    }

    pub fn with_initial(&self, state: TissueState, z_start: f64) -> Result<Instance> {
        let mut inst = self.clone();
        inst.initial_state = state;
        inst.z_start = z_start;
        inst.validate()?;
        Ok(inst)
    }
}

/// Normalised oversaturation `S_i = max(0, (P_i - M_i) / M_i)` for every compartment.
pub fn oversaturation(state: &TissueState, inst: &Instance, z: f64) -> Result<Vec<f64>> {
    inst.environment.check_depth(z)?;
    Ok(oversaturation_at(state, inst, z))
}

pub(crate) fn oversaturation_at(state: &TissueState, inst: &Instance, z: f64) -> Vec<f64> {
    inst.compartments
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let m = c.ceiling_at(&inst.environment, z);
            ((state.total(i) - m) / m).max(0.0)
        })
        .collect()
}

/// Instantaneous risk rate `sum_i phi_i(S_i)`.
#[cfg(test)]
pub(crate) fn risk_rate(state: &TissueState, inst: &Instance, z: f64) -> f64 {
    inst.compartments
        .iter()
        .zip(&inst.penalties)
        .enumerate()
        .map(|(i, (c, phi))| {
            let m = c.ceiling_at(&inst.environment, z);
            phi.value((state.total(i) - m) / m)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> Environment {
        Environment::new(1.0, 0.1, 0.0627, 40.0, 10.0).unwrap()
    }

    #[test]
    fn ambient_pressure_is_affine() {
        let e = env();
        assert_eq!(ambient_pressure(&e, 0.0).unwrap(), 1.0);
        assert!((ambient_pressure(&e, 30.0).unwrap() - 4.0).abs() < 1e-12);
        assert!((ambient_pressure(&e, 10.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(ambient_pressure(&e, 41.0), Err(Error::Domain { .. })));
        assert!(ambient_pressure(&e, -1.0).is_err());
    }

    #[test]
    fn inspired_pressure_values() {
        let e = env();
        let air = Gas::air();
        let p = inspired_inert_pressure(&air, &e, 0.0, None).unwrap();
        assert!((p - 0.79 * 0.9373).abs() < 1e-12);
        let p = inspired_inert_pressure(&air, &e, 10.0, None).unwrap();
        assert!((p - 0.79 * (2.0 - 0.0627)).abs() < 1e-12);
        let o2 = Gas::new("o2", 1.0, 0.0, 0.0).unwrap();
        assert_eq!(inspired_inert_pressure(&o2, &e, 25.0, None).unwrap(), 0.0);
        let tx = Gas::new("tx", 0.21, 0.44, 0.35).unwrap();
        let he = inspired_inert_pressure(&tx, &e, 10.0, Some(HE)).unwrap();
        assert!((he - 0.35 * 1.9373).abs() < 1e-12);
    }

    #[test]
    fn ceiling_values() {
        let e = env();
        let c = Compartment::new(5.0, None, 0.5, 0.8).unwrap();
        assert!((ceiling(&c, &e, 0.0).unwrap() - 1.3).abs() < 1e-12);
        assert!((ceiling(&c, &e, 10.0).unwrap() - 2.1).abs() < 1e-12);
        assert!(ceiling(&c, &e, 5.0).unwrap() < ceiling(&c, &e, 6.0).unwrap());
    }

    #[test]
    fn penalty_values() {
        let lin = PenaltyPL::linear(2.0);
        assert!((penalty_eval(&lin, 0.5).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(penalty_eval(&lin, 0.0).unwrap(), 0.0);
        let two = PenaltyPL::new(vec![0.0, 1.0], vec![1.0, 3.0]).unwrap();
        assert!((penalty_eval(&two, 2.0).unwrap() - 4.0).abs() < 1e-12);
        assert!((penalty_eval(&two, 0.5).unwrap() - 0.5).abs() < 1e-12);
        assert!(penalty_eval(&two, -0.1).is_err());
        assert_eq!(two.lipschitz_on(0.5), 1.0);
        assert_eq!(two.lipschitz_on(1.5), 3.0);
    }

    #[test]
    fn penalty_rejects_nonconvex_and_bad_start() {
        assert!(PenaltyPL::new(vec![0.0, 1.0], vec![3.0, 1.0]).is_err());
        assert!(PenaltyPL::new(vec![0.5], vec![1.0]).is_err());
        assert!(PenaltyPL::new(vec![0.0], vec![-1.0]).is_err());
    }

    #[test]
    fn gas_validation() {
        assert!(Gas::new("bad", 0.5, 0.6, 0.0).is_err());
        assert!(Gas::new("neg", -0.1, 1.1, 0.0).is_err());
        assert!((Gas::air().inert_fraction() - 0.79).abs() < 1e-15);
    }

    #[test]
    fn oversaturation_clips_and_scales() {
        let e = env();
        let c = Compartment::new(5.0, None, 0.5, 0.8).unwrap();
        let m = c.ceiling_at(&e, 0.0);
        let inst = Instance::new(
            e,
            vec![Gas::air()],
            FeasibilityWindows::new(0.16, 1.6, 40.0, 0.0).unwrap(),
            vec![c],
            vec![PenaltyPL::linear(1.0)],
            TissueState::uniform(1, 1, m),
            0.0,
            0.0,
        )
        .unwrap();
        let at = |p: f64| {
            oversaturation(&TissueState::uniform(1, 1, p), &inst, 0.0).unwrap()[0]
        };
        assert_eq!(at(m), 0.0);
        assert!((at(2.0 * m) - 1.0).abs() < 1e-12);
        assert_eq!(at(0.5 * m), 0.0);
    }

    #[test]
    fn mixed_helium_presence_is_rejected() {
        let e = env();
        let inst = Instance::new(
            e,
            vec![Gas::new("tx", 0.21, 0.44, 0.35).unwrap()],
            FeasibilityWindows::new(0.16, 1.6, 40.0, 0.0).unwrap(),
            vec![
                Compartment::new(5.0, Some(2.0), 0.5, 0.8).unwrap(),
                Compartment::new(10.0, None, 0.5, 0.8).unwrap(),
            ],
            vec![PenaltyPL::linear(1.0); 2],
            TissueState::uniform(2, 1, 0.7),
            0.0,
            0.0,
        );
        assert!(inst.is_err());
    }
}
