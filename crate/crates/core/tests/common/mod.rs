//! Shared fixtures, generators and oracles for the integration suites.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use decoopt_core::document::load_instance;
use decoopt_core::feasibility::FeasibilityWindows;
use decoopt_core::{Compartment, Environment, Gas, Instance, PenaltyPL, TissueState};
use rand::Rng;

pub fn fixture(name: &str) -> Instance {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(format!("{name}.json"));
    load_instance(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

pub fn environment() -> Environment {
    Environment::new(1.0, 0.1, 0.0627, 60.0, 10.0).unwrap()
}

/// Windows wide enough that every generated gas is usable everywhere it is held.
pub fn open_windows() -> FeasibilityWindows {
    FeasibilityWindows::new(0.05, 5.0, 60.0, 0.0).unwrap()
}

pub fn convex_penalty<R: Rng>(rng: &mut R) -> PenaltyPL {
    let hinges = rng.gen_range(1..=3);
    let mut breakpoints = vec![0.0];
    let mut slopes = vec![rng.gen_range(0.2..2.0)];
    for _ in 1..hinges {
        breakpoints.push(breakpoints.last().unwrap() + rng.gen_range(0.05..0.5));
        slopes.push(slopes.last().unwrap() + rng.gen_range(0.1..2.0));
    }
    PenaltyPL::new(breakpoints, slopes).unwrap()
}

pub fn compartment<R: Rng>(rng: &mut R, helium: bool) -> Compartment {
    let ht = rng.gen_range(1.0..300.0);
    let he = helium.then(|| ht / rng.gen_range(2.0..3.0));
    Compartment::new(ht, he, rng.gen_range(0.2..1.2), rng.gen_range(0.5..1.0)).unwrap()
}

pub fn nitrox<R: Rng>(rng: &mut R) -> Gas {
    let f_o2 = rng.gen_range(0.21..0.6);
    Gas::new(format!("ean{:.0}", 100.0 * f_o2), f_o2, 1.0 - f_o2, 0.0).unwrap()
}

pub fn trimix<R: Rng>(rng: &mut R) -> Gas {
    let f_o2 = rng.gen_range(0.1..0.4);
    let f_he = rng.gen_range(0.0..(0.9 - f_o2));
    Gas::new("tx", f_o2, 1.0 - f_o2 - f_he, f_he).unwrap()
}

pub struct InstanceShape {
    pub compartments: usize,
    pub helium: bool,
    pub gases: Vec<Gas>,
    pub windows: FeasibilityWindows,
    pub p_range: (f64, f64),
    pub z_start: f64,
    pub switch_cost: f64,
}

pub fn random_instance<R: Rng>(shape: InstanceShape, rng: &mut R) -> Instance {
    let species = if shape.helium { 2 } else { 1 };
    let compartments: Vec<Compartment> = (0..shape.compartments).map(|_| compartment(rng, shape.helium)).collect();
    let penalties = (0..shape.compartments).map(|_| convex_penalty(rng)).collect();
    let p = (0..shape.compartments * species)
        .map(|_| rng.gen_range(shape.p_range.0..shape.p_range.1))
        .collect();
    Instance::new(
        environment(),
        shape.gases,
        shape.windows,
        compartments,
        penalties,
        TissueState::new(species, p).unwrap(),
        shape.z_start,
        shape.switch_cost,
    )
    .unwrap()
}

/// Classical RK4 on `dP/dt = k (F (P_a(z(t)) - w) - P)` along `z(t) = z0 - rate t`.
pub fn rk4_ramp(p0: f64, k: f64, fraction: f64, env: &Environment, z0: f64, rate: f64, duration: f64, steps: usize) -> f64 {
    let f = |t: f64, p: f64| k * (fraction * env.inspired(z0 - rate * t) - p);
    let h = duration / steps as f64;
    let mut p = p0;
    for n in 0..steps {
        let t = n as f64 * h;
        let k1 = f(t, p);
        let k2 = f(t + h / 2.0, p + h / 2.0 * k1);
        let k3 = f(t + h / 2.0, p + h / 2.0 * k2);
        let k4 = f(t + h, p + h * k3);
        p += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    p
}

/// One acceptance line.
pub struct Outcome {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

pub fn check<F: FnOnce() -> (bool, String)>(name: &'static str, f: F) -> Outcome {
    let start = Instant::now();
    let (pass, detail) = match std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    let out = Outcome {
        name,
        pass,
        detail,
        elapsed: start.elapsed(),
    };
    println!(
        "{} {}: {} [{:.1} s]",
        if out.pass { "PASS" } else { "FAIL" },
        out.name,
        out.detail,
        out.elapsed.as_secs_f64()
    );
    out
}
