//! Random tiny systems for brute-force comparisons.

use rand::Rng;

use crate::config::squared_index_metric;
use crate::numeric::SimRng;
use crate::system::{Coupling, CostModel, ObservationKernel, StageTable, System, SystemParts, TransitionKernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TinyParams {
    pub states: usize,
    pub subsystems: usize,
    /// Local action count of every subsystem.
    pub actions: usize,
    /// Local observation count of every subsystem.
    pub observations: usize,
    pub horizon: usize,
}

impl Default for TinyParams {
    fn default() -> Self {
        Self {
            states: 2,
            subsystems: 1,
            actions: 2,
            observations: 2,
            horizon: 2,
        }
    }
}

/// A random probability vector; about a quarter of the entries are zeroed
/// so that impossible observations and degenerate transitions show up.
pub fn random_distribution(rng: &mut SimRng, len: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..len)
        .map(|_| if rng.random_bool(0.25) { 0.0 } else { rng.random::<f64>() + 0.05 })
        .collect();
    if row.iter().all(|&v| v == 0.0) {
        row[rng.random_range(0..len)] = 1.0;
    }
    let z: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= z);
    row
}

fn random_transition(rng: &mut SimRng, n: usize, nu: usize) -> TransitionKernel {
    let rows: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|_| (0..nu).map(|_| random_distribution(rng, n)).collect())
        .collect();
    TransitionKernel::from_nested(&rows)
}

/// Draws a valid system with shared coupling, stationary kernels and
/// stage-dependent costs in `[0, 1)`.
pub fn random_system(rng: &mut SimRng, p: &TinyParams) -> System {
    let n = p.states;
    let nu = p.actions.pow(p.subsystems as u32);
    let sensors = (0..p.subsystems)
        .map(|_| {
            let rows: Vec<Vec<f64>> = (0..n).map(|_| random_distribution(rng, p.observations)).collect();
            StageTable::Stationary(ObservationKernel::from_nested(&rows))
        })
        .collect();
    let stage = (0..p.horizon)
        .map(|_| (0..n * nu).map(|_| rng.random::<f64>()).collect())
        .collect();
    let parts = SystemParts {
        num_states: n,
        actions: vec![p.actions; p.subsystems],
        observations: vec![p.observations; p.subsystems],
        horizon: p.horizon,
        model: StageTable::Stationary(random_transition(rng, n, nu)),
        actual: StageTable::Stationary(random_transition(rng, n, nu)),
        coupling: Coupling::Shared,
        sensors,
        initial_joint: random_distribution(rng, n * n),
        costs: CostModel {
            stage: StageTable::PerStage(stage),
            terminal: (0..n).map(|_| rng.random::<f64>()).collect(),
            beta: 2.0 * rng.random::<f64>(),
            metric: squared_index_metric(n),
        },
        feasible: None,
        delays: None,
    };
    System::new(parts).expect("generated system is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::rng_from_seed;

    #[test]
    fn generated_systems_have_requested_shape() {
        let mut rng = rng_from_seed(1);
        for subsystems in 1..=2 {
            let p = TinyParams { subsystems, ..Default::default() };
            let s = random_system(&mut rng, &p);
            assert_eq!(s.num_states(), 2);
            assert_eq!(s.num_joint_actions(), 2usize.pow(subsystems as u32));
            assert_eq!(s.num_joint_observations(), 2usize.pow(subsystems as u32));
            assert_eq!(s.horizon(), 2);
        }
    }

    #[test]
    fn distributions_sum_to_one() {
        let mut rng = rng_from_seed(2);
        for len in 1..6 {
            let d = random_distribution(&mut rng, len);
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
