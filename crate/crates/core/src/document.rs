//! JSON documents for instances and plans.
//!
//! Instances round-trip at full precision. Plan documents and reports are written
//! with every number rounded to 12 significant digits.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::feasibility::FeasibilityWindows;
use crate::model::{Compartment, Environment, Gas, Instance, PenaltyPL, TissueState};
use crate::planner::SolverStats;
use crate::polish::KktReport;
use crate::schedule::{simulate, Outcome, Profile, Segment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentDoc {
    pub p0_bar: f64,
    pub gamma_bar_per_m: f64,
    pub w_bar: f64,
    pub zmax_m: f64,
    pub zdot_max_m_per_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasDoc {
    pub label: String,
    pub f_o2: f64,
    pub f_n2: f64,
    pub f_he: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowsDoc {
    pub ppo2_min_bar: f64,
    pub ppo2_max_bar: f64,
    pub end_max_m: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompartmentDoc {
    pub half_time_n2_min: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_time_he_min: Option<f64>,
    pub a_bar: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyDoc {
    pub breakpoints: Vec<f64>,
    pub slopes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateDoc {
    /// One row per compartment: `[N2]` or `[N2, He]`.
    pub p: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDocument {
    pub environment: EnvironmentDoc,
    pub gases: Vec<GasDoc>,
    pub windows: WindowsDoc,
    pub compartments: Vec<CompartmentDoc>,
    pub penalties: Vec<PenaltyDoc>,
    pub initial_state: InitialStateDoc,
    pub z_start_m: f64,
    #[serde(default)]
    pub switch_cost_min: f64,
}

fn at(field: impl Into<String>) -> impl FnOnce(Error) -> Error {
    let field = field.into();
    move |e| match e {
        Error::Invalid { field: inner, reason } => Error::Invalid {
            field: format!("{field}.{inner}"),
            reason,
        },
        other => Error::Invalid {
            field,
            reason: other.to_string(),
        },
    }
}

impl InstanceDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid("document", e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance documents always serialise")
    }

    pub fn from_instance(inst: &Instance) -> Self {
        let env = &inst.environment;
        InstanceDocument {
            environment: EnvironmentDoc {
                p0_bar: env.p0,
                gamma_bar_per_m: env.gamma,
                w_bar: env.w,
                zmax_m: env.z_max,
                zdot_max_m_per_min: env.zdot_max,
            },
            gases: inst
                .gases
                .iter()
                .map(|g| GasDoc {
                    label: g.label.clone(),
                    f_o2: g.f_o2,
                    f_n2: g.f_n2,
                    f_he: g.f_he,
                })
                .collect(),
            windows: WindowsDoc {
                ppo2_min_bar: inst.windows.ppo2_min,
                ppo2_max_bar: inst.windows.ppo2_max,
                end_max_m: inst.windows.end_max,
                eta: inst.windows.eta,
            },
            compartments: inst
                .compartments
                .iter()
                .map(|c| CompartmentDoc {
                    half_time_n2_min: c.half_time_n2,
                    half_time_he_min: c.half_time_he,
                    a_bar: c.a,
                    b: c.b,
                })
                .collect(),
            penalties: inst
                .penalties
                .iter()
                .map(|p| PenaltyDoc {
                    breakpoints: p.breakpoints.clone(),
                    slopes: p.slopes.clone(),
                })
                .collect(),
            initial_state: InitialStateDoc {
                p: inst.initial_state.rows(),
            },
            z_start_m: inst.z_start,
            switch_cost_min: inst.switch_cost,
        }
    }

    /// Build and validate the instance; errors name the offending field.
    pub fn to_instance(&self) -> Result<Instance> {
        let e = &self.environment;
        let environment = Environment::new(e.p0_bar, e.gamma_bar_per_m, e.w_bar, e.zmax_m, e.zdot_max_m_per_min)
            .map_err(at("environment"))?;
        let mut gases = Vec::with_capacity(self.gases.len());
        for (i, g) in self.gases.iter().enumerate() {
            gases.push(Gas::new(g.label.clone(), g.f_o2, g.f_n2, g.f_he).map_err(at(format!("gases[{i}]")))?);
        }
        for (i, g) in gases.iter().enumerate() {
            if gases[..i].iter().any(|h| h.label == g.label) {
                return Err(Error::invalid(format!("gases[{i}].label"), format!("duplicate label '{}'", g.label)));
            }
        }
        let w = &self.windows;
        let windows = FeasibilityWindows::new(w.ppo2_min_bar, w.ppo2_max_bar, w.end_max_m, w.eta).map_err(at("windows"))?;
        let mut compartments = Vec::with_capacity(self.compartments.len());
        for (i, c) in self.compartments.iter().enumerate() {
            compartments.push(
                Compartment::new(c.half_time_n2_min, c.half_time_he_min, c.a_bar, c.b)
                    .map_err(at(format!("compartments[{i}]")))?,
            );
        }
        let mut penalties = Vec::with_capacity(self.penalties.len());
        for (i, p) in self.penalties.iter().enumerate() {
            penalties.push(
                PenaltyPL::new(p.breakpoints.clone(), p.slopes.clone()).map_err(at(format!("penalties[{i}]")))?,
            );
        }
        let initial_state = TissueState::from_rows(&self.initial_state.p).map_err(at("initial_state.p"))?;
        Instance::new(
            environment,
            gases,
            windows,
            compartments,
            penalties,
            initial_state,
            self.z_start_m,
            self.switch_cost_min,
        )
    }
}

/// Parse and validate an instance document.
pub fn load_instance(text: &str) -> Result<Instance> {
    InstanceDocument::from_json(text)?.to_instance()
}

pub fn save_instance(inst: &Instance) -> String {
    InstanceDocument::from_instance(inst).to_json()
}

/// `x` rounded to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round12).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to 12 significant digits.
pub fn to_json_12<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value).map_err(|e| Error::Logic(e.to_string()))?;
    round_value(&mut v);
    serde_json::to_string_pretty(&v).map_err(|e| Error::Logic(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmentDoc {
    Hold { z: f64, gas_label: String, tau_min: f64 },
    Ascent { z_from: f64, z_to: f64, gas_label: String },
    Descent { z_from: f64, z_to: f64, gas_label: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDoc {
    #[serde(rename = "T_min")]
    pub t_min: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "J_lambda", default, skip_serializing_if = "Option::is_none")]
    pub j_lambda: Option<f64>,
    pub per_segment_risk: Vec<f64>,
    pub switch_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    /// `scalarized` or `capped`.
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dr: Option<f64>,
    pub dz: f64,
    pub menu: String,
    #[serde(default)]
    pub polish: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDoc {
    pub stats: SolverStats,
    pub parameters: Parameters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapDoc {
    pub rho: f64,
    pub dr: f64,
    /// `ρ + Δr − R`, nonnegative for a valid plan.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub segments: Vec<SegmentDoc>,
    pub outcome: OutcomeDoc,
    pub solver: SolverDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<CapDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kkt: Option<KktReport>,
}

impl PlanDocument {
    pub fn new(
        inst: &Instance,
        profile: &Profile,
        outcome: &Outcome,
        stats: SolverStats,
        parameters: Parameters,
        kkt: Option<KktReport>,
    ) -> Self {
        let label = |g: usize| inst.gases[g].label.clone();
        let segments = profile
            .segments
            .iter()
            .map(|s| match *s {
                Segment::Hold { z, gas, tau } => SegmentDoc::Hold {
                    z,
                    gas_label: label(gas),
                    tau_min: tau,
                },
                Segment::Ascent { z_from, z_to, gas } => SegmentDoc::Ascent {
                    z_from,
                    z_to,
                    gas_label: label(gas),
                },
                Segment::Descent { z_from, z_to, gas } => SegmentDoc::Descent {
                    z_from,
                    z_to,
                    gas_label: label(gas),
                },
            })
            .collect();
        let j_lambda = parameters
            .lambda
            .map(|l| outcome.objective(l, inst.switch_cost));
        let cap = match (parameters.rho, parameters.dr) {
            (Some(rho), Some(dr)) => Some(CapDoc {
                rho,
                dr,
                margin: rho + dr - outcome.total_risk,
            }),
            _ => None,
        };
        PlanDocument {
            segments,
            outcome: OutcomeDoc {
                t_min: outcome.total_time,
                r: outcome.total_risk,
                j_lambda,
                per_segment_risk: outcome.per_segment_risk.clone(),
                switch_count: outcome.switch_count,
            },
            solver: SolverDoc { stats, parameters },
            cap,
            kkt,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        to_json_12(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid("plan document", e.to_string()))
    }

    /// Rebuild the profile against `inst`, resolving gases by label.
    pub fn profile(&self, inst: &Instance, z_start: f64) -> Result<Profile> {
        let gas = |l: &str| {
            inst.gas_index(l)
                .ok_or_else(|| Error::invalid("segments.gas_label", format!("unknown gas '{l}'")))
        };
        let mut segments = Vec::with_capacity(self.segments.len());
        for s in &self.segments {
            segments.push(match s {
                SegmentDoc::Hold { z, gas_label, tau_min } => Segment::Hold {
                    z: *z,
                    gas: gas(gas_label)?,
                    tau: *tau_min,
                },
                SegmentDoc::Ascent { z_from, z_to, gas_label } => Segment::Ascent {
                    z_from: *z_from,
                    z_to: *z_to,
                    gas: gas(gas_label)?,
                },
                SegmentDoc::Descent { z_from, z_to, gas_label } => Segment::Descent {
                    z_from: *z_from,
                    z_to: *z_to,
                    gas: gas(gas_label)?,
                },
            });
        }
        Ok(Profile { z_start, segments })
    }

    /// Re-simulate the segments; returns the largest deviation from the recorded outcome.
    pub fn verify(&self, inst: &Instance) -> Result<f64> {
        let profile = self.profile(inst, inst.z_start)?;
        let out = simulate(inst, &profile, false)?;
        let mut dev = (out.total_time - self.outcome.t_min)
            .abs()
            .max((out.total_risk - self.outcome.r).abs());
        for (a, b) in out.per_segment_risk.iter().zip(&self.outcome.per_segment_risk) {
            dev = dev.max((a - b).abs());
        }
        Ok(dev)
    }
}
