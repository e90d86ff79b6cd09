//! Knapsack to decompression reduction and an equivalence verifier.
//!
//! Item `j` becomes an optional air dwell of `w_j` minutes at a depth chosen so
//! that the dwell lowers the final-transit risk of one slow compartment by
//! exactly `v_j`. The compartment is slow enough that the effects of different
//! dwells add up to within a verified interaction error below `1/2 - Δr`, which
//! the half-unit margin in the risk cap absorbs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::document::InstanceDocument;
use crate::error::{Error, Result};
use crate::feasibility::FeasibilityWindows;
use crate::model::{Compartment, Environment, Gas, Instance, PenaltyPL, TissueState};
use crate::planner::{brute_force_plan, plan_capped, Objective, StopGrid};
use crate::quad::bisect;
use crate::schedule::{simulate, Profile, Segment};

/// Largest item count accepted by `reduce`.
pub const REDUCTION_GUARD: usize = 12;
/// Largest item count accepted by `knapsack_brute`.
pub const BRUTE_GUARD: usize = 20;
/// Largest item count accepted by `verify_reduction`.
pub const VERIFY_GUARD: usize = 8;
/// Risk bin width used for the capped decision.
pub const REDUCTION_DR: f64 = 1e-3;
/// Slack on the time comparison `T <= D`.
pub const TIME_TOL: f64 = 1e-9;

const P0: f64 = 1.0;
const GAMMA: f64 = 0.1;
const WATER: f64 = 0.0625;
const ZMAX: f64 = 60.0;
const ZDOT: f64 = 10.0;
const Z_START: f64 = 41.0;
/// Last stop before the surface; the only transit with risk starts here.
const Z_FINAL: f64 = 10.0;
/// Item depths live in this band, where the ceiling sits above `P_UNC`.
const Z_LO: f64 = 11.0;
const Z_HI: f64 = 40.0;
const P_UNC: f64 = 4.0;
const CEILING_B: f64 = 1.0;
/// Puts the ceiling at `P_UNC` at 10.5 m.
const CEILING_A: f64 = P_UNC - P0 - GAMMA * 10.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub value: u64,
    pub weight: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnapsackInstance {
    pub items: Vec<Item>,
    pub capacity: u64,
    pub target: u64,
}

impl KnapsackInstance {
    pub fn new(items: Vec<(u64, u64)>, capacity: u64, target: u64) -> Result<Self> {
        let kp = KnapsackInstance {
            items: items.into_iter().map(|(value, weight)| Item { value, weight }).collect(),
            capacity,
            target,
        };
        kp.validate()?;
        Ok(kp)
    }

    pub fn validate(&self) -> Result<()> {
        for (j, it) in self.items.iter().enumerate() {
            if it.value == 0 || it.weight == 0 {
                return Err(Error::invalid(format!("items[{j}]"), "value and weight must be positive"));
            }
        }
        Ok(())
    }

    pub fn total_value(&self) -> u64 {
        self.items.iter().map(|i| i.value).sum()
    }

    pub fn total_weight(&self) -> u64 {
        self.items.iter().map(|i| i.weight).sum()
    }
}

/// Exhaustive subset scan; returns a witness subset when one exists.
pub fn knapsack_witness(kp: &KnapsackInstance) -> Result<Option<Vec<usize>>> {
    kp.validate()?;
    let m = kp.items.len();
    if m > BRUTE_GUARD {
        return Err(Error::TooLarge(format!("{m} items exceed the brute-force guard {BRUTE_GUARD}")));
    }
    for mask in 0u32..(1u32 << m) {
        let (mut v, mut w) = (0u64, 0u64);
        for (j, it) in kp.items.iter().enumerate() {
            if mask >> j & 1 == 1 {
                v += it.value;
                w += it.weight;
            }
        }
        if w <= kp.capacity && v >= kp.target {
            return Ok(Some((0..m).filter(|j| mask >> j & 1 == 1).collect()));
        }
    }
    Ok(None)
}

pub fn knapsack_brute(kp: &KnapsackInstance) -> Result<bool> {
    Ok(knapsack_witness(kp)?.is_some())
}

/// Dynamic programme over capacities.
pub fn knapsack_dp(kp: &KnapsackInstance) -> Result<bool> {
    kp.validate()?;
    let cap = kp.capacity.min(kp.total_weight()) as usize;
    let mut best = vec![0u64; cap + 1];
    for it in &kp.items {
        let w = it.weight as usize;
        for c in (w..=cap).rev() {
            best[c] = best[c].max(best[c - w] + it.value);
        }
    }
    Ok(best[cap] >= kp.target)
}

/// Items sharing a value/weight ratio share a depth; its menu is their subset sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemGroup {
    pub items: Vec<usize>,
    /// `v / w` for every item in the group.
    pub ratio: f64,
    pub depth: f64,
    /// Dwell menu at `depth`, including 0.
    pub dwells: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bookkeeping {
    pub p_unc: f64,
    pub half_time: f64,
    /// Slope of the linear penalty.
    pub slope: f64,
    pub groups: Vec<ItemGroup>,
    /// Risk with no dwells.
    pub r_empty: f64,
    /// Transit time from `z_start` to the surface.
    pub t_transit: f64,
    /// Target after clamping to `Σv + 1`.
    pub target_used: u64,
    /// Simulated single-dwell risk drops, one per group (first item's weight).
    pub item_effects: Vec<f64>,
    /// Largest `|R(x) - (R_empty - v(x))|` over every dwell combination.
    pub interaction_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionArtifacts {
    pub instance: Instance,
    pub grid: StopGrid,
    /// Risk cap `R_empty - V + 1/2`.
    pub rho: f64,
    pub dr: f64,
    /// Time bound `T_transit + W`.
    pub time_bound: f64,
    pub bookkeeping: Bookkeeping,
}

/// Serialisable form of the artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionDocument {
    pub knapsack: KnapsackInstance,
    pub instance: InstanceDocument,
    pub depths: Vec<f64>,
    pub menus: Vec<Vec<f64>>,
    pub rho: f64,
    pub dr: f64,
    pub time_bound: f64,
    pub bookkeeping: Bookkeeping,
}

impl ReductionArtifacts {
    pub fn to_document(&self, kp: &KnapsackInstance) -> ReductionDocument {
        ReductionDocument {
            knapsack: kp.clone(),
            instance: InstanceDocument::from_instance(&self.instance),
            depths: self.grid.depths.clone(),
            menus: self.grid.menus.clone(),
            rho: self.rho,
            dr: self.dr,
            time_bound: self.time_bound,
            bookkeeping: self.bookkeeping.clone(),
        }
    }

    /// Point the cap at a new target; the construction itself does not depend on it.
    pub fn retarget(&mut self, target: u64, total_value: u64) {
        let used = target.min(total_value + 1);
        self.bookkeeping.target_used = used;
        self.rho = self.bookkeeping.r_empty - used as f64 + 0.5;
    }

    /// Profile dwelling `dwells[g]` at group `g`'s depth.
    pub fn profile(&self, dwells: &[f64]) -> Profile {
        let mut p = Profile::new(Z_START);
        for (g, &d) in self.bookkeeping.groups.iter().zip(dwells) {
            p = p.ascend_to(g.depth, 0);
            if d > 0.0 {
                p = p.hold(0, d);
            }
        }
        p.ascend_to(Z_FINAL, 0).ascend_to(0.0, 0)
    }

    pub fn risk_of(&self, dwells: &[f64]) -> Result<f64> {
        Ok(simulate(&self.instance, &self.profile(dwells), false)?.total_risk)
    }
}

fn instance(half_time: f64, slope: f64) -> Result<Instance> {
    Instance::new(
        Environment::new(P0, GAMMA, WATER, ZMAX, ZDOT)?,
        vec![Gas::air()],
        FeasibilityWindows::new(0.1, 1.6, ZMAX, 0.0)?,
        vec![Compartment::new(half_time, None, CEILING_A, CEILING_B)?],
        vec![PenaltyPL::linear(slope)],
        TissueState::uniform(1, 1, P_UNC),
        Z_START,
        0.0,
    )
}

/// All distinct subset sums, ascending, starting at 0.
fn subset_sums(weights: &[u64]) -> Vec<u64> {
    let mut sums = vec![0u64];
    for &w in weights {
        let shifted: Vec<u64> = sums.iter().map(|s| s + w).collect();
        sums.extend(shifted);
        sums.sort_unstable();
        sums.dedup();
    }
    sums
}

fn group_items(kp: &KnapsackInstance) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (j, it) in kp.items.iter().enumerate() {
        let same = |k: &usize| {
            let o = kp.items[*k];
            u128::from(o.value) * u128::from(it.weight) == u128::from(it.value) * u128::from(o.weight)
        };
        match groups.iter_mut().find(|g| g.first().is_some_and(same)) {
            Some(g) => g.push(j),
            None => groups.push(vec![j]),
        }
    }
    groups
}

/// Every dwell combination over the group menus, in lexicographic order.
fn combinations(menus: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for m in menus {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                m.iter().map(move |&d| {
                    let mut v = prefix.clone();
                    v.push(d);
                    v
                })
            })
            .collect();
    }
    out
}

pub fn reduce(kp: &KnapsackInstance) -> Result<ReductionArtifacts> {
    kp.validate()?;
    let m = kp.items.len();
    if m > REDUCTION_GUARD {
        return Err(Error::TooLarge(format!("{m} items exceed the reduction guard {REDUCTION_GUARD}")));
    }
    let total_v = kp.total_value() as f64;
    // Slower compartments shrink the interaction error roughly as (Σv)² k.
    let half_time = 1e4 * (total_v / 8.0).powi(2).max(1.0);
    let probe = instance(half_time, 1.0)?;
    let env = probe.environment;
    let k = probe.compartments[0].rate(0);

    // Risk per bar at the final stop; exact since the transit stays oversaturated.
    let final_risk = |p: f64| -> Result<f64> {
        let inst = probe.with_initial(TissueState::uniform(1, 1, p), Z_FINAL)?;
        Ok(simulate(&inst, &Profile::new(Z_FINAL).ascend_to(0.0, 0), false)?.total_risk)
    };
    let h = 1e-3;
    let gain = (final_risk(P_UNC + h)? - final_risk(P_UNC - h)?) / (2.0 * h);

    // A dwell of w at ratio r drops P by about k w (P_UNC - P_inf) = k w κ r.
    let drive = |z: f64| P_UNC - env.inspired(z) * Gas::air().inert_fraction();
    let (d_lo, d_hi) = (drive(Z_HI), drive(Z_LO));
    let groups_idx = group_items(kp);
    let ratios: Vec<f64> = groups_idx
        .iter()
        .map(|g| kp.items[g[0]].value as f64 / kp.items[g[0]].weight as f64)
        .collect();
    let (r_min, r_max) = ratios
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    let kappa = if ratios.is_empty() { 1.0 } else { (d_lo * d_hi / (r_min * r_max)).sqrt() };
    if !ratios.is_empty() && r_max / r_min > 0.9 * d_hi / d_lo {
        return Err(Error::Infeasible(format!(
            "value/weight ratios span {:.3}, the depth band separates at most {:.3}",
            r_max / r_min,
            0.9 * d_hi / d_lo
        )));
    }
    let slope = 1.0 / (kappa * k * gain);
    let inst = instance(half_time, slope)?;

    let empty_profile = |prefix: &[(f64, f64)]| {
        let mut p = Profile::new(Z_START);
        for &(z, d) in prefix {
            p = p.ascend_to(z, 0).hold(0, d);
        }
        p.ascend_to(Z_FINAL, 0).ascend_to(0.0, 0)
    };
    let r_empty = simulate(&inst, &empty_profile(&[]), false)?.total_risk;

    let mut groups = Vec::with_capacity(groups_idx.len());
    let mut item_effects = Vec::with_capacity(groups_idx.len());
    for (g, &r) in groups_idx.iter().zip(&ratios) {
        let first = kp.items[g[0]];
        let w = first.weight as f64;
        let target = first.value as f64;
        let effect = |z: f64| -> f64 {
            r_empty - simulate(&inst, &empty_profile(&[(z, w)]), false).map_or(f64::NAN, |o| o.total_risk)
        };
        let (e_lo, e_hi) = (effect(Z_HI), effect(Z_LO));
        if !(e_lo < target && target < e_hi) {
            return Err(Error::Infeasible(format!(
                "item {} (v={}, w={}): single-dwell effect spans [{e_lo:.4}, {e_hi:.4}] over the depth band",
                g[0], first.value, first.weight
            )));
        }
        let depth = bisect(|z| effect(z) - target, Z_LO, Z_HI);
        item_effects.push(effect(depth));
        let weights: Vec<u64> = g.iter().map(|&j| kp.items[j].weight).collect();
        groups.push(ItemGroup {
            items: g.clone(),
            ratio: r,
            depth,
            dwells: subset_sums(&weights).into_iter().map(|s| s as f64).collect(),
        });
    }
    groups.sort_by(|a, b| b.depth.total_cmp(&a.depth));
    if groups.windows(2).any(|p| p[0].depth - p[1].depth < 1e-6) {
        return Err(Error::Infeasible("two item groups landed on the same depth".into()));
    }

    let mut depths = vec![Z_START];
    let mut menus = vec![vec![0.0]];
    for g in &groups {
        depths.push(g.depth);
        menus.push(g.dwells.clone());
    }
    depths.extend([Z_FINAL, 0.0]);
    menus.extend([vec![0.0], vec![0.0]]);
    let grid = StopGrid::custom(depths, menus)?;

    let mut art = ReductionArtifacts {
        instance: inst,
        grid,
        rho: 0.0,
        dr: REDUCTION_DR,
        time_bound: Z_START / ZDOT + kp.capacity as f64,
        bookkeeping: Bookkeeping {
            p_unc: P_UNC,
            half_time,
            slope,
            groups,
            r_empty,
            t_transit: Z_START / ZDOT,
            target_used: 0,
            item_effects,
            interaction_error: 0.0,
        },
    };
    art.retarget(kp.target, kp.total_value());
    art.bookkeeping.interaction_error = interaction_error(&art)?;
    if art.bookkeeping.interaction_error >= 0.5 - art.dr {
        return Err(Error::Infeasible(format!(
            "interaction error {:.4} leaves no margin below 1/2 - dr",
            art.bookkeeping.interaction_error
        )));
    }
    if art.rho < 0.0 {
        return Err(Error::Logic(format!("negative risk cap {}", art.rho)));
    }
    Ok(art)
}

/// Largest deviation of simulated risk from the additive model over every dwell combination.
fn interaction_error(art: &ReductionArtifacts) -> Result<f64> {
    let menus: Vec<Vec<f64>> = art.bookkeeping.groups.iter().map(|g| g.dwells.clone()).collect();
    let errs: Vec<Result<f64>> = combinations(&menus)
        .par_iter()
        .map(|dw| {
            let value: f64 = art.bookkeeping.groups.iter().zip(dw).map(|(g, d)| g.ratio * d).sum();
            Ok((art.risk_of(dw)? - (art.bookkeeping.r_empty - value)).abs())
        })
        .collect();
    errs.into_iter().try_fold(0.0, |acc, e| Ok(f64::max(acc, e?)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub yes: bool,
    /// Minimum time under the risk cap, if any plan meets the cap.
    pub min_time: Option<f64>,
    pub risk: Option<f64>,
    /// Dwell per item group in the time-optimal plan.
    pub dwells: Option<Vec<f64>>,
}

fn dwells_of(art: &ReductionArtifacts, profile: &Profile) -> Vec<f64> {
    art.bookkeeping
        .groups
        .iter()
        .map(|g| {
            profile
                .segments
                .iter()
                .filter_map(|s| match *s {
                    Segment::Hold { z, tau, .. } if (z - g.depth).abs() < 1e-9 => Some(tau),
                    _ => None,
                })
                .sum()
        })
        .collect()
}

/// Decide "∃ plan with `T <= D` and binned `R <= ρ`" with the capped planner.
pub fn decide(art: &ReductionArtifacts) -> Result<Decision> {
    match plan_capped(&art.instance, &art.grid, art.rho, art.dr) {
        Ok(p) => Ok(Decision {
            yes: p.outcome.total_time <= art.time_bound + TIME_TOL,
            min_time: Some(p.outcome.total_time),
            risk: Some(p.outcome.total_risk),
            dwells: Some(dwells_of(art, &p.profile)),
        }),
        Err(Error::CapInfeasible { .. }) => Ok(Decision {
            yes: false,
            min_time: None,
            risk: None,
            dwells: None,
        }),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub knapsack: KnapsackInstance,
    pub knapsack_yes: bool,
    pub dp_yes: bool,
    pub reduction: Decision,
    /// Minimum time from the exhaustive plan oracle, when it ran.
    pub brute_force_time: Option<Option<f64>>,
    pub witness: Option<Vec<usize>>,
    pub interaction_error: f64,
    pub equivalent: bool,
}

pub fn verify_reduction(kp: &KnapsackInstance) -> Result<VerificationReport> {
    let m = kp.items.len();
    if m > VERIFY_GUARD {
        return Err(Error::TooLarge(format!("{m} items exceed the verification guard {VERIFY_GUARD}")));
    }
    let art = reduce(kp)?;
    verify_artifacts(kp, &art)
}

/// Verification against precomputed artifacts, so `time_bound` may be overridden.
pub fn verify_artifacts(kp: &KnapsackInstance, art: &ReductionArtifacts) -> Result<VerificationReport> {
    let witness = knapsack_witness(kp)?;
    let dp_yes = knapsack_dp(kp)?;
    let reduction = decide(art)?;
    let brute = match brute_force_plan(&art.instance, &art.grid, Objective::Capped { rho: art.rho, dr: art.dr }) {
        Ok(p) => Some(Some(p.outcome.total_time)),
        Err(Error::CapInfeasible { .. }) => Some(None),
        Err(Error::TooLarge(_)) => None,
        Err(e) => return Err(e),
    };
    let brute_agrees = match (&brute, reduction.min_time) {
        (None, _) => true,
        (Some(None), None) => true,
        (Some(Some(a)), Some(b)) => (a - b).abs() <= TIME_TOL,
        _ => false,
    };
    let knapsack_yes = witness.is_some();
    Ok(VerificationReport {
        knapsack: kp.clone(),
        knapsack_yes,
        dp_yes,
        equivalent: knapsack_yes == dp_yes && knapsack_yes == reduction.yes && brute_agrees,
        reduction,
        brute_force_time: brute,
        witness,
        interaction_error: art.bookkeeping.interaction_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExhaustiveReport {
    pub cases: usize,
    pub mismatches: Vec<KnapsackInstance>,
    pub max_interaction_error: f64,
}

impl ExhaustiveReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Every instance with up to `max_items` items, `v, w <= max_vw` and `W, V <= max_wv`.
///
/// One construction per item list serves every target, and the capped minimum
/// time does not depend on `W`, so one plan per (items, V) settles every capacity.
pub fn exhaustive_equivalence(max_items: usize, max_vw: u64, max_wv: u64) -> Result<ExhaustiveReport> {
    if max_items > VERIFY_GUARD {
        return Err(Error::TooLarge(format!("{max_items} items exceed the verification guard {VERIFY_GUARD}")));
    }
    let pairs: Vec<(u64, u64)> = (1..=max_vw).flat_map(|v| (1..=max_vw).map(move |w| (v, w))).collect();
    let mut item_sets: Vec<Vec<(u64, u64)>> = vec![Vec::new()];
    let mut frontier: Vec<Vec<(u64, u64)>> = vec![Vec::new()];
    for _ in 0..max_items {
        frontier = frontier
            .iter()
            .flat_map(|s| {
                pairs.iter().map(move |&p| {
                    let mut t = s.clone();
                    t.push(p);
                    t
                })
            })
            .collect();
        item_sets.extend(frontier.iter().cloned());
    }
    let results: Vec<Result<(usize, Vec<KnapsackInstance>, f64)>> = item_sets
        .par_iter()
        .map(|items| {
            let mut cases = 0;
            let mut bad = Vec::new();
            let mut art = reduce(&KnapsackInstance::new(items.clone(), 0, 0)?)?;
            let err = art.bookkeeping.interaction_error;
            for target in 0..=max_wv {
                let kp0 = KnapsackInstance::new(items.clone(), 0, target)?;
                art.retarget(target, kp0.total_value());
                let d = decide(&art)?;
                for capacity in 0..=max_wv {
                    let kp = KnapsackInstance { capacity, ..kp0.clone() };
                    let yes = d
                        .min_time
                        .is_some_and(|t| t <= art.bookkeeping.t_transit + capacity as f64 + TIME_TOL);
                    cases += 1;
                    if yes != knapsack_brute(&kp)? || yes != knapsack_dp(&kp)? {
                        bad.push(kp);
                    }
                }
            }
            Ok((cases, bad, err))
        })
        .collect();
    let mut report = ExhaustiveReport {
        cases: 0,
        mismatches: Vec::new(),
        max_interaction_error: 0.0,
    };
    for r in results {
        let (c, bad, e) = r?;
        report.cases += c;
        report.mismatches.extend(bad);
        report.max_interaction_error = report.max_interaction_error.max(e);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kp(items: &[(u64, u64)], w: u64, v: u64) -> KnapsackInstance {
        KnapsackInstance::new(items.to_vec(), w, v).unwrap()
    }

    #[test]
    fn brute_trivial_cases() {
        assert!(knapsack_brute(&kp(&[(3, 2)], 2, 3)).unwrap());
        assert!(!knapsack_brute(&kp(&[(3, 2)], 1, 1)).unwrap());
        assert!(knapsack_brute(&kp(&[], 0, 0)).unwrap());
        assert!(!knapsack_brute(&kp(&[], 5, 1)).unwrap());
        assert!(KnapsackInstance::new(vec![(0, 1)], 1, 1).is_err());
        let big = KnapsackInstance::new(vec![(1, 1); 21], 1, 1).unwrap();
        assert!(matches!(knapsack_brute(&big), Err(Error::TooLarge(_))));
    }

    #[test]
    fn dp_agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let items: Vec<(u64, u64)> = (0..10).map(|_| (rng.gen_range(1..=20), rng.gen_range(1..=20))).collect();
            let k = kp(&items, rng.gen_range(0..=100), rng.gen_range(0..=120));
            assert_eq!(knapsack_dp(&k).unwrap(), knapsack_brute(&k).unwrap(), "{k:?}");
        }
    }

    #[test]
    fn subset_sums_and_groups() {
        assert_eq!(subset_sums(&[1, 2, 2]), vec![0, 1, 2, 3, 4, 5]);
        let k = kp(&[(1, 2), (2, 4), (3, 1)], 0, 0);
        assert_eq!(group_items(&k), vec![vec![0, 1], vec![2]]);
        assert_eq!(combinations(&[vec![0.0, 1.0], vec![0.0, 2.0, 3.0]]).len(), 6);
    }

    #[test]
    fn single_item_effect_is_calibrated() {
        let k = kp(&[(1, 1)], 1, 1);
        let art = reduce(&k).unwrap();
        let b = &art.bookkeeping;
        assert!((b.item_effects[0] - 1.0).abs() < 1e-9, "{:?}", b.item_effects);
        // Re-simulating the dwell reproduces the recorded effect.
        let drop = b.r_empty - art.risk_of(&[1.0]).unwrap();
        assert!((drop - b.item_effects[0]).abs() < 1e-9);
        assert!(b.interaction_error < 1e-9);
        let rep = verify_artifacts(&k, &art).unwrap();
        assert!(rep.knapsack_yes && rep.equivalent, "{rep:?}");
        assert_eq!(rep.reduction.dwells, Some(vec![1.0]));
        assert_eq!(rep.reduction.min_time, Some(b.t_transit + 1.0));
    }

    #[test]
    fn unit_item_is_necessary() {
        let k = kp(&[(1, 1)], 0, 1);
        let rep = verify_reduction(&k).unwrap();
        assert!(!rep.knapsack_yes && !rep.reduction.yes && rep.equivalent, "{rep:?}");
    }

    #[test]
    fn trivial_targets_and_time_floor() {
        let empty = verify_reduction(&kp(&[], 0, 0)).unwrap();
        assert!(empty.reduction.yes && empty.equivalent);
        let empty = verify_reduction(&kp(&[], 3, 2)).unwrap();
        assert!(!empty.reduction.yes && empty.equivalent);
        let k = kp(&[(2, 3), (1, 1)], 0, 0);
        let rep = verify_reduction(&k).unwrap();
        assert!(rep.reduction.yes && rep.reduction.dwells == Some(vec![0.0, 0.0]));
        let mut art = reduce(&kp(&[(2, 3), (1, 1)], 4, 2)).unwrap();
        art.time_bound = art.bookkeeping.t_transit - 0.5;
        assert!(!decide(&art).unwrap().yes);
    }

    #[test]
    fn groups_share_depth_and_ratio_range_is_checked() {
        let art = reduce(&kp(&[(1, 1), (2, 2), (3, 1)], 3, 4)).unwrap();
        assert_eq!(art.bookkeeping.groups.len(), 2);
        let g = art.bookkeeping.groups.iter().find(|g| g.items.len() == 2).unwrap();
        assert_eq!(g.dwells, vec![0.0, 1.0, 2.0, 3.0]);
        assert!(matches!(reduce(&kp(&[(1, 30), (30, 1)], 1, 1)), Err(Error::Infeasible(_))));
    }

    #[test]
    fn small_exhaustive_sweep() {
        let rep = exhaustive_equivalence(2, 2, 4).unwrap();
        assert!(rep.passed(), "{:?}", rep.mismatches);
        assert_eq!(rep.cases, (1 + 4 + 16) * 25);
    }
}
