//! Strategies: maps from realized information to a joint action.

use std::collections::HashMap;

use crate::belief::JointBelief;
use crate::numeric::derive_seed;
use crate::system::System;

/// Everything available when the stage-`t` action is chosen.
///
/// `observations` holds joint observation indices `y_0..=y_t`, `actions`
/// the joint actions `u_0..u_{t-1}` and `belief` the filtered `Π_t`.
#[derive(Debug, Clone, Copy)]
pub struct Information<'a> {
    pub stage: usize,
    pub observations: &'a [usize],
    pub actions: &'a [usize],
    pub belief: &'a JointBelief,
}

pub trait Strategy: Send + Sync {
    /// Joint action index for the given information.
    fn decide(&self, info: &Information<'_>) -> usize;

    fn label(&self) -> String {
        "strategy".to_string()
    }
}

impl<S: Strategy + ?Sized> Strategy for &S {
    fn decide(&self, info: &Information<'_>) -> usize {
        (**self).decide(info)
    }

    fn label(&self) -> String {
        (**self).label()
    }
}

impl<S: Strategy + ?Sized> Strategy for Box<S> {
    fn decide(&self, info: &Information<'_>) -> usize {
        (**self).decide(info)
    }

    fn label(&self) -> String {
        (**self).label()
    }
}

/// Always plays the first feasible joint action.
#[derive(Debug, Clone)]
pub struct FirstFeasible {
    feasible: Vec<Vec<usize>>,
}

impl FirstFeasible {
    pub fn new(sys: &System) -> Self {
        Self {
            feasible: (0..sys.horizon()).map(|t| sys.feasible_joint_actions(t).to_vec()).collect(),
        }
    }
}

impl Strategy for FirstFeasible {
    fn decide(&self, info: &Information<'_>) -> usize {
        self.feasible[info.stage][0]
    }

    fn label(&self) -> String {
        "first-feasible".into()
    }
}

/// A deterministic pseudo-random function of the observation history.
///
/// Each distinct `(t, y_0..y_t)` is hashed with the seed to pick one feasible
/// joint action, so the strategy is an arbitrary history-based map rather
/// than a belief-based one.
#[derive(Debug, Clone)]
pub struct RandomHistoryStrategy {
    seed: u64,
    feasible: Vec<Vec<usize>>,
}

impl RandomHistoryStrategy {
    pub fn new(sys: &System, seed: u64) -> Self {
        Self {
            seed,
            feasible: (0..sys.horizon()).map(|t| sys.feasible_joint_actions(t).to_vec()).collect(),
        }
    }
}

impl Strategy for RandomHistoryStrategy {
    fn decide(&self, info: &Information<'_>) -> usize {
        let mut h = derive_seed(self.seed, info.stage as u64);
        for &y in info.observations {
            h = derive_seed(h, y as u64);
        }
        let options = &self.feasible[info.stage];
        options[(h % options.len() as u64) as usize]
    }

    fn label(&self) -> String {
        format!("random-history-{}", self.seed)
    }
}

/// Lookup table keyed by `(t, y_0..y_t)`; histories absent from the table
/// fall back to `default`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TableStrategy {
    pub entries: HashMap<(usize, Vec<usize>), usize>,
    pub default: usize,
}

impl TableStrategy {
    pub fn insert(&mut self, stage: usize, observations: Vec<usize>, action: usize) {
        self.entries.insert((stage, observations), action);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Strategy for TableStrategy {
    fn decide(&self, info: &Information<'_>) -> usize {
        self.entries
            .get(&(info.stage, info.observations.to_vec()))
            .copied()
            .unwrap_or(self.default)
    }

    fn label(&self) -> String {
        "table".into()
    }
}

/// Wraps a closure as a strategy.
pub struct FnStrategy<F>(pub F);

impl<F> Strategy for FnStrategy<F>
where
    F: Fn(&Information<'_>) -> usize + Send + Sync,
{
    fn decide(&self, info: &Information<'_>) -> usize {
        (self.0)(info)
    }

    fn label(&self) -> String {
        "closure".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_history_strategy_is_a_function_of_history() {
        let sys = crate::oracle::instances::random_system(
            &mut crate::numeric::rng_from_seed(3),
            &crate::oracle::instances::TinyParams::default(),
        );
        let g = RandomHistoryStrategy::new(&sys, 11);
        let b = JointBelief::uniform(2, 1);
        let c = JointBelief::point_mass(2, 1, 0, 0);
        let i1 = Information { stage: 1, observations: &[0, 1], actions: &[0], belief: &b };
        let i2 = Information { stage: 1, observations: &[0, 1], actions: &[1], belief: &c };
        assert_eq!(g.decide(&i1), g.decide(&i2));
        let picks: std::collections::HashSet<usize> = (0..64)
            .map(|s| {
                RandomHistoryStrategy::new(&sys, s).decide(&i1)
            })
            .collect();
        assert!(picks.len() > 1);
        for p in picks {
            assert!(sys.feasible_joint_actions(1).contains(&p));
        }
    }

    #[test]
    fn table_falls_back_to_default() {
        let mut t = TableStrategy { default: 1, ..Default::default() };
        t.insert(0, vec![1], 0);
        let b = JointBelief::uniform(2, 0);
        let hit = Information { stage: 0, observations: &[1], actions: &[], belief: &b };
        let miss = Information { stage: 0, observations: &[0], actions: &[], belief: &b };
        assert_eq!(t.decide(&hit), 0);
        assert_eq!(t.decide(&miss), 1);
    }
}
