use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::golden_section;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GasChoice {
    Low,
    High,
}

/// Single-compartment, linear-penalty hold at a fixed depth with two candidate gases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoGasExample {
    pub p1_0: f64,
    pub m1: f64,
    pub k1: f64,
    pub pinf_l: f64,
    pub pinf_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleSample {
    pub tau: f64,
    pub r_low: f64,
    pub r_high: f64,
    pub envelope: f64,
    pub best: GasChoice,
}

pub fn two_gas_example(p1_0: f64, m1: f64, k1: f64, pinf_l: f64, pinf_h: f64) -> Result<TwoGasExample> {
    if ![p1_0, m1, k1, pinf_l, pinf_h].iter().all(|x| x.is_finite()) || k1 <= 0.0 {
        return Err(Error::invalid("example", "parameters must be finite with k1 > 0"));
    }
    if !(pinf_l < pinf_h && pinf_h < m1 && m1 < p1_0) {
        return Err(Error::invalid("example", "need Pinf_L < Pinf_H < M1 < P1_0"));
    }
    Ok(TwoGasExample { p1_0, m1, k1, pinf_l, pinf_h })
}

impl TwoGasExample {
    fn driver(&self, g: GasChoice) -> f64 {
        match g {
            GasChoice::Low => self.pinf_l,
            GasChoice::High => self.pinf_h,
        }
    }

    /// Dwell after which the compartment drops to its ceiling.
    pub fn hitting_time(&self, g: GasChoice) -> f64 {
        let pinf = self.driver(g);
        ((self.p1_0 - pinf) / (self.m1 - pinf)).ln() / self.k1
    }

    /// Accumulated risk after dwelling `tau` on gas `g`; constant past the hitting time.
    pub fn risk(&self, g: GasChoice, tau: f64) -> f64 {
        let pinf = self.driver(g);
        let t = tau.clamp(0.0, self.hitting_time(g));
        (self.p1_0 - pinf) / (self.k1 * self.m1) * -(-self.k1 * t).exp_m1()
            - (self.m1 - pinf).max(0.0) / self.m1 * t
    }

    /// Lower envelope over the two gases.
    pub fn envelope(&self, tau: f64) -> (f64, GasChoice) {
        let lo = self.risk(GasChoice::Low, tau);
        let hi = self.risk(GasChoice::High, tau);
        if hi < lo {
            (hi, GasChoice::High)
        } else {
            (lo, GasChoice::Low)
        }
    }

    pub fn sample(&self, taus: &[f64]) -> Vec<ExampleSample> {
        taus.iter()
            .map(|&tau| {
                let (envelope, best) = self.envelope(tau);
                ExampleSample {
                    tau,
                    r_low: self.risk(GasChoice::Low, tau),
                    r_high: self.risk(GasChoice::High, tau),
                    envelope,
                    best,
                }
            })
            .collect()
    }

    /// `min_{0 ≤ τ ≤ tau_max} τ + λ R_g(τ)` and its minimiser.
    pub fn best_dwell(&self, g: GasChoice, lambda: f64, tau_max: f64) -> (f64, f64) {
        let j = |t: f64| t + lambda * self.risk(g, t);
        let mut best = (0.0, j(0.0));
        let n = 256;
        for i in 1..=n {
            let t = tau_max * i as f64 / n as f64;
            let v = j(t);
            if v < best.1 {
                best = (t, v);
            }
        }
        let h = tau_max / n as f64;
        let (a, b) = ((best.0 - h).max(0.0), (best.0 + h).min(tau_max));
        let (t, v) = golden_section(j, a, b, 1e-12);
        if v < best.1 {
            (t, v)
        } else {
            best
        }
    }

    /// First `λ` in the ascending list where the `J_λ`-minimising gas changes.
    pub fn switch_lambda(&self, lambdas: &[f64], tau_max: f64) -> Option<f64> {
        let pick = |l: f64| {
            let lo = self.best_dwell(GasChoice::Low, l, tau_max).1;
            let hi = self.best_dwell(GasChoice::High, l, tau_max).1;
            if hi < lo - 1e-12 {
                Some(GasChoice::High)
            } else if lo < hi - 1e-12 {
                Some(GasChoice::Low)
            } else {
                None
            }
        };
        let mut prev: Option<GasChoice> = None;
        for &l in lambdas {
            match (prev, pick(l)) {
                (Some(p), Some(c)) if p != c => return Some(l),
                (_, Some(c)) => prev = Some(c),
                _ => {}
            }
        }
        None
    }
}
