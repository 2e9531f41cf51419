use std::path::PathBuf;

use cps_core::config::RawSystem;
use cps_core::dp::{solve, Method};
use cps_core::numeric::rng_from_seed;
use cps_core::oracle::instances::{random_system, TinyParams};
use cps_core::oracle::{exact_cost, EnumerationBudget};
use cps_core::policy::RandomHistoryStrategy;
use cps_core::simulator::{cost_equality_check, monte_carlo_cost, BeliefMode};
use cps_core::{load_system, System};

fn fixture(name: &str) -> System {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name);
    load_system(&path).unwrap().system
}

#[test]
fn monte_carlo_matches_enumeration() {
    let mut rng = rng_from_seed(301);
    let budget = EnumerationBudget::default();
    let mut cases: Vec<System> = (0..3)
        .map(|i| random_system(&mut rng, &TinyParams { subsystems: 1 + i % 2, ..Default::default() }))
        .collect();
    cases.push(fixture("tiny.toml"));
    for (i, sys) in cases.iter().enumerate() {
        let g = RandomHistoryStrategy::new(sys, i as u64);
        let exact = exact_cost(sys, &g, &budget).unwrap();
        let mc = monte_carlo_cost(sys, &g, BeliefMode::Exact, 100_000, 40 + i as u64).unwrap();
        let dj = (mc.objective.mean - exact.objective).abs();
        let dh = (mc.actual.mean - exact.actual).abs();
        assert!(dj <= 3.0 * mc.objective.std_error, "case {i}: J off by {dj}");
        assert!(dh <= 3.0 * mc.actual.std_error, "case {i}: actual cost off by {dh}");
    }
}

#[test]
fn identical_systems_give_equal_costs_under_the_dp_strategy() {
    let sys = fixture("identity3.toml");
    let sol = solve(&sys, Method::alpha()).unwrap();
    let r = cost_equality_check(&sys, &sol.strategy(), 10_000, 7).unwrap();
    assert_eq!(r.stages_with_mismatch, 0);
    assert_eq!(r.max_mismatch, 0.0);
    assert_eq!(r.coincident_episodes, 10_000);
    assert_eq!(r.equal_cost_episodes, 10_000);
    assert_eq!(r.penalty_inconsistencies, 0);
    assert!(r.means_bitwise_equal);
    // The value is the expected cost of the strategy, so the estimate is
    // consistent with it.
    assert!((r.objective.mean - sol.initial_value()).abs() <= 4.0 * r.objective.std_error);
}

#[test]
fn zero_mismatch_weight_leaves_stage_costs_only() {
    let sys = fixture("identity3.toml").with_beta(0.0).unwrap();
    let g = RandomHistoryStrategy::new(&sys, 2);
    let r = cost_equality_check(&sys, &g, 2000, 9).unwrap();
    assert_eq!(r.max_mismatch, 0.0);
    assert!(r.means_bitwise_equal);
}

#[test]
fn perturbed_actual_kernel_opens_a_gap() {
    let sys = fixture("learning3.toml");
    let sol = solve(&sys, Method::alpha()).unwrap();
    let r = cost_equality_check(&sys, &sol.strategy(), 5000, 11).unwrap();
    assert!(r.stages_with_mismatch > 0);
    assert!(r.coincident_episodes < 5000);
    assert!(r.objective.mean.is_finite() && r.actual.mean.is_finite());
}

#[test]
fn quadratic_stage_cost_table_entry() {
    // c(x, u) = ½ (x² + u²) tabulated over x in 0..5 and u in 0..2.
    let mut raw = RawSystem::from_system(&fixture("identity3.toml"));
    let n = 5;
    raw.num_states = n;
    raw.initial_joint = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 / n as f64 } else { 0.0 }).collect()).collect();
    let identity: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let kernel: Vec<Vec<Vec<f64>>> = identity.iter().map(|r| vec![r.clone(), r.clone()]).collect();
    raw.model_kernel.stationary = Some(kernel.clone());
    raw.actual_kernel.stationary = Some(kernel);
    raw.observations = vec![n];
    raw.observation_kernel[0].stationary = Some(identity);
    raw.costs.terminal = vec![0.0; n];
    raw.costs.metric = None;
    raw.costs.stage.stationary = Some(
        (0..n)
            .map(|x| (0..2).map(|u| 0.5 * ((x * x + u * u) as f64)).collect())
            .collect(),
    );
    let sys = raw.validate().unwrap();
    assert_eq!(sys.stage_cost(0, 3, 1).unwrap(), 5.0);
    assert_eq!(sys.stage_cost(2, 0, 0).unwrap(), 0.0);
    assert_eq!(sys.mismatch_penalty(0, 2).unwrap(), 2.0 * 4.0);
}

#[test]
fn zero_horizon_is_rejected() {
    let mut raw = RawSystem::from_system(&fixture("tiny.toml"));
    raw.horizon = 0;
    assert!(raw.validate().is_err());
}
