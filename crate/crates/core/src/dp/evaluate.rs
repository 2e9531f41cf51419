//! Expected objective of an arbitrary strategy.

use super::DpError;
use crate::belief::{init_belief, predict_mass, weigh_mass, JointBelief};
use crate::numeric::KahanSum;
use crate::policy::{Information, Strategy};
use crate::simulator::{monte_carlo_cost, BeliefMode};
use crate::system::System;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvaluateOptions {
    pub max_nodes: usize,
    /// `(episodes, seed)` used when the history tree is too large.
    pub monte_carlo: Option<(usize, u64)>,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        Self {
            max_nodes: 1_000_000,
            monte_carlo: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    /// Zero when `exact`.
    pub std_error: f64,
    pub exact: bool,
}

struct Tree<'a, S: ?Sized> {
    sys: &'a System,
    strategy: &'a S,
    max_nodes: usize,
    nodes: usize,
    total: KahanSum,
}

impl<S: Strategy + ?Sized> Tree<'_, S> {
    /// `mass` is the unnormalized pre-observation belief at stage `t`.
    fn walk(&mut self, t: usize, mass: Vec<f64>, obs: &mut Vec<usize>, acts: &mut Vec<usize>) -> Result<(), DpError> {
        let sys = self.sys;
        let n = sys.num_states();
        if t == sys.horizon() {
            for (s, m) in mass.iter().enumerate() {
                self.total.add(m * sys.costs().terminal[s / n]);
            }
            return Ok(());
        }
        let beta = sys.costs().beta;
        for y in 0..sys.num_joint_observations() {
            let mut w = mass.clone();
            let z = weigh_mass(sys, t, &mut w, y);
            if !(z > 0.0) {
                continue;
            }
            self.nodes += 1;
            if self.nodes > self.max_nodes {
                return Err(DpError::TreeTooLarge { limit: self.max_nodes });
            }
            let belief = JointBelief::from_parts_unchecked(n, t, w.iter().map(|m| m / z).collect());
            obs.push(y);
            let u = self.strategy.decide(&Information {
                stage: t,
                observations: obs,
                actions: acts,
                belief: &belief,
            });
            if !sys.feasible_joint_actions(t).contains(&u) {
                return Err(DpError::InfeasibleAction { stage: t, action: u });
            }
            for (s, m) in w.iter().enumerate() {
                self.total.add(m * sys.cost(t, s / n, u));
            }
            let next = predict_mass(sys, t, &w, u);
            for (s, m) in next.iter().enumerate() {
                self.total.add(m * beta * sys.metric(s / n, s % n));
            }
            acts.push(u);
            self.walk(t + 1, next, obs, acts)?;
            acts.pop();
            obs.pop();
        }
        Ok(())
    }
}

/// `J_0(g)`: stage costs, mismatch penalties and terminal cost of the model.
///
/// The history tree is walked with the filter when it has at most
/// `max_nodes` observation nodes; otherwise the Monte Carlo fallback is used
/// if configured.
pub fn evaluate_strategy<S: Strategy + ?Sized>(sys: &System, strategy: &S, opts: &EvaluateOptions) -> Result<Evaluation, DpError> {
    let mut tree = Tree {
        sys,
        strategy,
        max_nodes: opts.max_nodes,
        nodes: 0,
        total: KahanSum::new(),
    };
    let prior = init_belief(sys).mass().to_vec();
    match tree.walk(0, prior, &mut Vec::new(), &mut Vec::new()) {
        Ok(()) => Ok(Evaluation {
            objective: tree.total.total(),
            std_error: 0.0,
            exact: true,
        }),
        Err(DpError::TreeTooLarge { limit }) => {
            let Some((episodes, seed)) = opts.monte_carlo else {
                return Err(DpError::TreeTooLarge { limit });
            };
            let mc = monte_carlo_cost(sys, strategy, BeliefMode::Exact, episodes, seed)
                .map_err(|e| DpError::Simulation(e.to_string()))?;
            Ok(Evaluation {
                objective: mc.objective.mean,
                std_error: mc.objective.std_error,
                exact: false,
            })
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{solve, Method};
    use crate::numeric::rng_from_seed;
    use crate::oracle::instances::{random_system, TinyParams};
    use crate::oracle::{exact_cost, EnumerationBudget};
    use crate::policy::RandomHistoryStrategy;

    #[test]
    fn agrees_with_leaf_enumeration() {
        let mut rng = rng_from_seed(12);
        for _ in 0..4 {
            let sys = random_system(&mut rng, &TinyParams { subsystems: 2, ..Default::default() });
            for s in 0..5 {
                let g = RandomHistoryStrategy::new(&sys, s);
                let a = evaluate_strategy(&sys, &g, &EvaluateOptions::default()).unwrap();
                let b = exact_cost(&sys, &g, &EnumerationBudget::default()).unwrap();
                assert!(a.exact);
                assert!((a.objective - b.objective).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn separated_strategy_attains_initial_value() {
        let mut rng = rng_from_seed(13);
        for _ in 0..4 {
            let sys = random_system(&mut rng, &TinyParams::default());
            let sol = solve(&sys, Method::alpha()).unwrap();
            let j = evaluate_strategy(&sys, &sol.strategy(), &EvaluateOptions::default()).unwrap();
            assert!((j.objective - sol.initial_value()).abs() < 1e-9);
        }
    }

    #[test]
    fn oversized_tree_falls_back_or_fails() {
        let sys = random_system(&mut rng_from_seed(14), &TinyParams::default());
        let g = RandomHistoryStrategy::new(&sys, 0);
        let tight = EvaluateOptions {
            max_nodes: 1,
            monte_carlo: None,
        };
        assert!(matches!(evaluate_strategy(&sys, &g, &tight), Err(DpError::TreeTooLarge { .. })));
        let mc = EvaluateOptions {
            max_nodes: 1,
            monte_carlo: Some((20_000, 5)),
        };
        let est = evaluate_strategy(&sys, &g, &mc).unwrap();
        let exact = evaluate_strategy(&sys, &g, &EvaluateOptions::default()).unwrap();
        assert!(!est.exact);
        assert!((est.objective - exact.objective).abs() < 4.0 * est.std_error);
    }
}
