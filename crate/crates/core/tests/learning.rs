use std::path::PathBuf;

use cps_core::config::RawSystem;
use cps_core::dp::{solve, Method};
use cps_core::numeric::derive_seed;
use cps_core::policy::{FirstFeasible, RandomHistoryStrategy};
use cps_core::simulator::{learn_online, LearnOptions};
use cps_core::{load_system, System};
use rayon::prelude::*;

fn fixture(name: &str) -> System {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name);
    load_system(&path).unwrap().system
}

/// The offline strategy is planned on the model alone.
fn model_only(sys: &System) -> System {
    sys.with_actual_kernel(sys.model_kernel().clone()).unwrap()
}

#[test]
fn learned_filter_converges_to_exact_filter() {
    let sys = fixture("learning3.toml");
    let g = solve(&model_only(&sys), Method::alpha()).unwrap().strategy();
    let finals: Vec<(f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|run| {
            let opts = LearnOptions {
                episodes: 10_000,
                seed: derive_seed(500, run),
                probe_seed: derive_seed(600, run),
                record_every: 1000,
                ..Default::default()
            };
            let r = learn_online(&sys, &g, &opts).unwrap();
            (r.curve[0].total_variation, r.curve.last().unwrap().total_variation)
        })
        .collect();
    let start = finals.iter().map(|f| f.0).sum::<f64>() / 20.0;
    let end = finals.iter().map(|f| f.1).sum::<f64>() / 20.0;
    assert!(end < 0.05, "mean final TV {end}");
    assert!(end < start, "TV did not decrease: {start} -> {end}");
}

#[test]
fn uniform_actual_kernel_is_recovered() {
    let sys = fixture("learning3.toml");
    let mut raw = RawSystem::from_system(&sys);
    raw.actual_kernel.stationary = Some(vec![vec![vec![1.0 / 3.0; 3]; 2]; 3]);
    let sys = raw.validate().unwrap();
    let g = RandomHistoryStrategy::new(&sys, 4);
    let opts = LearnOptions {
        episodes: 10_000,
        seed: 12,
        record_every: 10_000,
        ..Default::default()
    };
    let r = learn_online(&sys, &g, &opts).unwrap();
    for x in 0..3 {
        for u in 0..2 {
            for p in r.estimate.row(x, u) {
                assert!((p - 1.0 / 3.0).abs() < 0.05, "row ({x}, {u}): {p}");
            }
        }
    }
}

#[test]
fn deterministic_actual_kernel_is_learned_exactly() {
    let sys = fixture("learning3.toml");
    let mut raw = RawSystem::from_system(&sys);
    raw.actual_kernel.stationary = Some(vec![
        vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        vec![vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]],
        vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
    ]);
    let sys = raw.validate().unwrap();
    let g = RandomHistoryStrategy::new(&sys, 1);
    let opts = LearnOptions {
        episodes: 300,
        seed: 3,
        alpha: 0.0,
        record_every: 300,
        ..Default::default()
    };
    let r = learn_online(&sys, &g, &opts).unwrap();
    for x in 0..3 {
        for u in 0..2 {
            assert_eq!(r.estimate.row(x, u), sys.actual_kernel().at(0).row(x, u).to_vec());
        }
    }
    assert_eq!(r.curve.last().unwrap().total_variation, 0.0);
}

#[test]
fn learning_is_reproducible() {
    let sys = fixture("learning3.toml");
    let g = FirstFeasible::new(&sys);
    let opts = LearnOptions {
        episodes: 200,
        seed: 5,
        record_every: 50,
        ..Default::default()
    };
    let a = learn_online(&sys, &g, &opts).unwrap();
    let b = learn_online(&sys, &g, &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.curve.iter().map(|p| p.episode).collect::<Vec<_>>(), vec![0, 50, 100, 150, 200]);
}

#[test]
fn replanning_uses_the_estimate() {
    let sys = fixture("learning3.toml");
    let g = solve(&model_only(&sys), Method::alpha()).unwrap().strategy();
    let opts = LearnOptions {
        episodes: 400,
        seed: 8,
        record_every: 100,
        replan: Some((100, Method::alpha())),
        ..Default::default()
    };
    let r = learn_online(&sys, &g, &opts).unwrap();
    assert!(r.curve.last().unwrap().total_variation < r.curve[0].total_variation);
}
