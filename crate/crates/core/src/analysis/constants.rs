use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Instance;

/// Closed-form constants bounding the value function and its discretisation error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AprioriConstants {
    pub fi_max: f64,
    pub k_min: f64,
    pub k_max: f64,
    pub m_min: f64,
    pub m_max: f64,
    pub p_bar: f64,
    pub s_bar: f64,
    /// Per-compartment penalty Lipschitz constants on `[0, s_bar]`.
    pub l_phi: Vec<f64>,
    /// Per-compartment ceiling Lipschitz constants in depth, `b_i γ`.
    pub l_m: Vec<f64>,
    pub ell_bar: f64,
    pub c_inf: f64,
    pub l_ell: f64,
    pub t_max: f64,
    pub c1: f64,
    pub c2: f64,
}

impl AprioriConstants {
    /// Time of a no-hold ascent from `z`.
    pub fn t_nd(&self, inst: &Instance, z: f64) -> f64 {
        z / inst.environment.zdot_max
    }
}

pub fn apriori_constants(inst: &Instance, lambda: f64) -> Result<AprioriConstants> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("lambda", "must be finite and >= 0"));
    }
    inst.validate()?;
    let env = &inst.environment;
    let n = inst.n_compartments() as f64;
    let species = inst.species();
    let fi_max = inst.fi_max();
    let rates = inst
        .compartments
        .iter()
        .flat_map(|c| (0..species).map(move |s| c.rate(s)));
    let (k_min, k_max) = rates.fold((f64::INFINITY, 0.0f64), |(lo, hi), k| (lo.min(k), hi.max(k)));
    let m_min = inst
        .compartments
        .iter()
        .map(|c| c.ceiling_at(env, 0.0))
        .fold(f64::INFINITY, f64::min);
    let m_max = inst
        .compartments
        .iter()
        .map(|c| c.ceiling_at(env, env.z_max))
        .fold(0.0, f64::max);
    let p_bar = fi_max * (env.p0 + env.gamma * env.z_max);
    let s_bar = (p_bar / m_min - 1.0).max(0.0);
    let l_phi: Vec<f64> = inst.penalties.iter().map(|p| p.lipschitz_on(s_bar)).collect();
    let l_m: Vec<f64> = inst.compartments.iter().map(|c| c.b * env.gamma).collect();
    let phi_sum: f64 = inst.penalties.iter().map(|p| p.value(s_bar)).sum();
    let ell_bar = 1.0 + lambda * phi_sum;
    let c_inf = n * (k_max / k_min) * fi_max * env.gamma;
    let sum_l_phi: f64 = l_phi.iter().sum();
    let by_pressure = sum_l_phi / m_min;
    let by_depth: f64 = l_phi
        .iter()
        .zip(&l_m)
        .map(|(lp, lm)| lp * (lm / m_min + (p_bar + m_max) * lm / (m_min * m_min)))
        .sum();
    let l_ell = lambda * by_pressure.max(by_depth);
    let t_max = ell_bar * env.z_max / env.zdot_max;
    let c2 = l_ell / k_min;
    let c1 = l_ell * (1.0 + c_inf) * t_max + ell_bar / env.zdot_max;
    Ok(AprioriConstants {
        fi_max,
        k_min,
        k_max,
        m_min,
        m_max,
        p_bar,
        s_bar,
        l_phi,
        l_m,
        ell_bar,
        c_inf,
        l_ell,
        t_max,
        c1,
        c2,
    })
}
