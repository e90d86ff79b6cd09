use decoopt_core::feasibility::{end_depth, gas_feasible_at, FeasibilityWindows};
use decoopt_core::kinetics::{ascent_update, hold_update};
use decoopt_core::schedule::simulate;
use decoopt_core::{Compartment, Environment, Gas, Instance, PenaltyPL, Profile, TissueState};
use proptest::prelude::*;

fn environment() -> Environment {
    Environment::new(1.0, 0.1, 0.0627, 60.0, 10.0).unwrap()
}

fn penalty() -> impl Strategy<Value = PenaltyPL> {
    prop::collection::vec((0.01f64..0.5, 0.1f64..3.0), 1..4).prop_map(|steps| {
        let mut breakpoints = Vec::new();
        let mut slopes = Vec::new();
        let (mut b, mut s) = (0.0, 0.0);
        for (i, (db, ds)) in steps.into_iter().enumerate() {
            if i > 0 {
                b += db;
            }
            s += ds;
            breakpoints.push(b);
            slopes.push(s);
        }
        PenaltyPL::new(breakpoints, slopes).unwrap()
    })
}

fn compartment() -> impl Strategy<Value = (Compartment, PenaltyPL)> {
    (1.0f64..400.0, 0.2f64..1.2, 0.5f64..1.0, penalty())
        .prop_map(|(ht, a, b, phi)| (Compartment::new(ht, None, a, b).unwrap(), phi))
}

prop_compose! {
    fn instance()(
        parts in prop::collection::vec(compartment(), 1..4),
        f_o2 in 0.21f64..0.5,
        p in prop::collection::vec(0.8f64..4.0, 3),
        z_start in 10.0f64..40.0,
        eta in 0.0f64..1.0,
    ) -> Instance {
        let n = parts.len();
        let (compartments, penalties): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
        let gases = vec![Gas::air(), Gas::new("nitrox", f_o2, 1.0 - f_o2, 0.0).unwrap()];
        let windows = FeasibilityWindows::new(0.16, 1.6, 60.0, eta).unwrap();
        let state = TissueState::new(1, p[..n].to_vec()).unwrap();
        Instance::new(environment(), gases, windows, compartments, penalties, state, z_start, 0.0).unwrap()
    }
}

fn close(a: &TissueState, b: &TissueState, tol: f64) -> bool {
    a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn holds_compose(inst in instance(), z in 0.0f64..60.0, t1 in 0.0f64..100.0, t2 in 0.0f64..100.0) {
        let gas = &inst.gases[0];
        let s0 = &inst.initial_state;
        let split = hold_update(&inst, &hold_update(&inst, s0, gas, z, t1).unwrap(), gas, z, t2).unwrap();
        let whole = hold_update(&inst, s0, gas, z, t1 + t2).unwrap();
        prop_assert!(close(&split, &whole, 1e-12));
    }

    #[test]
    fn ramps_compose(inst in instance(), frac in 0.0f64..1.0, rate in 1.0f64..10.0) {
        let gas = &inst.gases[0];
        let (top, mid) = (0.0, inst.z_start * frac);
        let s0 = &inst.initial_state;
        let first = ascent_update(&inst, s0, gas, inst.z_start, mid, rate).unwrap();
        let split = ascent_update(&inst, &first, gas, mid, top, rate).unwrap();
        let whole = ascent_update(&inst, s0, gas, inst.z_start, top, rate).unwrap();
        prop_assert!(close(&split, &whole, 1e-11));
    }

    #[test]
    fn penalties_are_convex(phi in penalty(), a in -1.0f64..3.0, b in -1.0f64..3.0, t in 0.0f64..1.0) {
        let mix = phi.value(t * a + (1.0 - t) * b);
        prop_assert!(mix <= t * phi.value(a) + (1.0 - t) * phi.value(b) + 1e-12);
        prop_assert!(phi.value(a.min(b)) <= phi.value(a.max(b)) + 1e-15);
    }

    #[test]
    fn pressures_stay_below_reachable_bound(
        inst in instance(),
        steps in prop::collection::vec((0.0f64..60.0, 0.0f64..200.0, 0usize..2), 1..8),
    ) {
        let bound = inst.p_bar().max(inst.initial_state.as_slice().iter().cloned().fold(0.0, f64::max));
        let mut s = inst.initial_state.clone();
        let mut z = inst.z_start;
        for (target, tau, g) in steps {
            let gas = &inst.gases[g];
            s = if target < z {
                ascent_update(&inst, &s, gas, z, target, 10.0).unwrap()
            } else {
                hold_update(&inst, &s, gas, z, tau).unwrap()
            };
            z = z.min(target);
            for &p in s.as_slice() {
                prop_assert!(p > 0.0 && p <= bound * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn loading_preserves_order(inst in instance(), lift in prop::collection::vec(0.0f64..1.0, 3), tau in 0.0f64..60.0) {
        let gas = &inst.gases[0];
        let low = inst.initial_state.clone();
        let n = low.compartments();
        let high = TissueState::new(1, low.as_slice().iter().zip(&lift[..n]).map(|(p, d)| p + d).collect()).unwrap();
        let step = |s: &TissueState| {
            let held = hold_update(&inst, s, gas, inst.z_start, tau).unwrap();
            ascent_update(&inst, &held, gas, inst.z_start, 0.0, 10.0).unwrap()
        };
        prop_assert!(step(&low).le(&step(&high), 1e-12));

        let profile = Profile::new(inst.z_start).hold(0, tau).ascend_to(0.0, 0);
        let r_low = simulate(&inst, &profile, false).unwrap().total_risk;
        let raised = inst.with_initial(high, inst.z_start).unwrap();
        let r_high = simulate(&raised, &profile, false).unwrap().total_risk;
        prop_assert!(r_low <= r_high + 1e-10);
    }

    #[test]
    fn deeper_holds_load_more(inst in instance(), z1 in 0.0f64..60.0, dz in 0.0f64..30.0, tau in 0.0f64..60.0) {
        let z2 = (z1 + dz).min(60.0);
        let gas = &inst.gases[0];
        let shallow = hold_update(&inst, &inst.initial_state, gas, z1, tau).unwrap();
        let deep = hold_update(&inst, &inst.initial_state, gas, z2, tau).unwrap();
        prop_assert!(shallow.le(&deep, 1e-12));
    }

    #[test]
    fn narcotic_weight_shrinks_feasible_sets(inst in instance(), extra in 0.0f64..1.0, z in 0.0f64..60.0) {
        let mut heavier = inst.clone();
        heavier.windows.eta = (inst.windows.eta + extra).min(1.0);
        for gas in &inst.gases {
            if gas_feasible_at(gas, &heavier.environment, &heavier.windows, z) {
                prop_assert!(gas_feasible_at(gas, &inst.environment, &inst.windows, z));
            }
            let e1 = end_depth(gas, &inst.environment, z, inst.windows.eta).unwrap();
            let e2 = end_depth(gas, &heavier.environment, z, heavier.windows.eta).unwrap();
            prop_assert!(e1 <= e2 + 1e-12);
        }
    }
}
