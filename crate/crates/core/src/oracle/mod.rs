//! Brute-force ground truth for tiny systems.
//!
//! Nothing here calls the filter or the dynamic program. Transitions are
//! enumerated directly from the disturbance: the unit interval is cut at
//! every cumulative-sum breakpoint of the two kernel rows and each segment
//! is mapped through inverse-transform sampling at its midpoint, which is
//! exactly what the simulator does with a single uniform draw.

pub mod instances;

use rayon::prelude::*;
use thiserror::Error;

use crate::belief::JointBelief;
use crate::numeric::KahanSum;
use crate::policy::{Information, Strategy, TableStrategy};
use crate::system::{sample_index, Coupling, System};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("enumeration budget exceeded: {what} > {limit}")]
    Budget { what: &'static str, limit: u128 },
    #[error("strategy chose infeasible joint action {action} at stage {stage}")]
    InfeasibleAction { stage: usize, action: usize },
    #[error("observation history has probability zero")]
    ImpossibleHistory,
    #[error("history length mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationBudget {
    pub max_tree_nodes: usize,
    pub max_strategy_count: u128,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        Self {
            max_tree_nodes: 1_000_000,
            max_strategy_count: 100_000,
        }
    }
}

/// Expected totals of one strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactCost {
    /// Model stage costs, mismatch penalties and model terminal cost.
    pub objective: f64,
    /// Actual stage costs and actual terminal cost.
    pub actual: f64,
}

#[derive(Debug, Clone)]
pub struct OptimalSearch {
    pub cost: f64,
    pub witness: TableStrategy,
    /// Reachable `(t, y_0..y_t)` nodes visited by the search.
    pub information_sets: usize,
    /// Size of the literal strategy space when it was enumerated in full.
    pub strategies_enumerated: Option<u128>,
}

/// Successor pairs of `(x, x̂)` under `u` with their probabilities, built
/// from the disturbance segments.
pub fn disturbance_outcomes(sys: &System, t: usize, x: usize, x_hat: usize, u: usize) -> Vec<(usize, usize, f64)> {
    let p = sys.model_kernel().at(t).row(x, u);
    let q = sys.actual_kernel().at(t).row(x_hat, u);
    match sys.coupling() {
        Coupling::Shared => {
            let mut cuts = vec![0.0, 1.0];
            for row in [p, q] {
                let mut acc = 0.0;
                for &v in row {
                    acc += v;
                    if acc > 0.0 && acc < 1.0 {
                        cuts.push(acc);
                    }
                }
            }
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            cuts.windows(2)
                .filter(|w| w[1] > w[0])
                .map(|w| {
                    let mid = 0.5 * (w[0] + w[1]);
                    (sample_index(p, mid), sample_index(q, mid), w[1] - w[0])
                })
                .collect()
        }
        Coupling::Independent => {
            let mut out = Vec::new();
            for (a, &pa) in p.iter().enumerate() {
                for (b, &qb) in q.iter().enumerate() {
                    if pa > 0.0 && qb > 0.0 {
                        out.push((a, b, pa * qb));
                    }
                }
            }
            out
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Leaf {
    x: usize,
    x_hat: usize,
    w: f64,
}

fn merge(n: usize, leaves: impl IntoIterator<Item = Leaf>) -> Vec<Leaf> {
    let mut dense = vec![KahanSum::new(); n * n];
    let mut seen = vec![false; n * n];
    for l in leaves {
        dense[l.x * n + l.x_hat].add(l.w);
        seen[l.x * n + l.x_hat] = true;
    }
    (0..n * n)
        .filter(|&i| seen[i])
        .map(|i| Leaf {
            x: i / n,
            x_hat: i % n,
            w: dense[i].total(),
        })
        .filter(|l| l.w > 0.0)
        .collect()
}

fn initial_leaves(sys: &System) -> Vec<Leaf> {
    let n = sys.num_states();
    sys.initial_joint()
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, &w)| Leaf {
            x: i / n,
            x_hat: i % n,
            w,
        })
        .collect()
}

fn observe_leaves(sys: &System, t: usize, leaves: &[Leaf], y: usize) -> Vec<Leaf> {
    leaves
        .iter()
        .map(|l| Leaf {
            w: l.w * sys.likelihood(t, y, l.x),
            ..*l
        })
        .filter(|l| l.w > 0.0)
        .collect()
}

fn leaves_belief(sys: &System, t: usize, leaves: &[Leaf]) -> JointBelief {
    let n = sys.num_states();
    let mut mass = vec![0.0; n * n];
    for l in leaves {
        mass[l.x * n + l.x_hat] += l.w;
    }
    let z: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|m| *m /= z);
    JointBelief::from_parts_unchecked(n, t, mass)
}

struct Walk<'a, S: ?Sized> {
    sys: &'a System,
    strategy: &'a S,
    budget: usize,
    nodes: usize,
    objective: KahanSum,
    actual: KahanSum,
}

impl<S: Strategy + ?Sized> Walk<'_, S> {
    fn visit(&mut self, t: usize, leaves: Vec<Leaf>, obs: &mut Vec<usize>, acts: &mut Vec<usize>) -> Result<(), OracleError> {
        let sys = self.sys;
        if t == sys.horizon() {
            for l in &leaves {
                self.objective.add(l.w * sys.costs().terminal[l.x]);
                self.actual.add(l.w * sys.costs().terminal[l.x_hat]);
            }
            return Ok(());
        }
        let beta = sys.costs().beta;
        for y in 0..sys.num_joint_observations() {
            let seen = observe_leaves(sys, t, &leaves, y);
            if seen.is_empty() {
                continue;
            }
            self.nodes += 1 + seen.len();
            if self.nodes > self.budget {
                return Err(OracleError::Budget {
                    what: "tree nodes",
                    limit: self.budget as u128,
                });
            }
            obs.push(y);
            let belief = leaves_belief(sys, t, &seen);
            let u = self.strategy.decide(&Information {
                stage: t,
                observations: obs,
                actions: acts,
                belief: &belief,
            });
            if !sys.feasible_joint_actions(t).contains(&u) {
                return Err(OracleError::InfeasibleAction { stage: t, action: u });
            }
            let mut next = Vec::new();
            for l in &seen {
                self.objective.add(l.w * sys.cost(t, l.x, u));
                self.actual.add(l.w * sys.cost(t, l.x_hat, u));
                for (a, b, p) in disturbance_outcomes(sys, t, l.x, l.x_hat, u) {
                    let w = l.w * p;
                    self.objective.add(w * beta * sys.metric(a, b));
                    next.push(Leaf { x: a, x_hat: b, w });
                }
            }
            acts.push(u);
            self.visit(t + 1, merge(sys.num_states(), next), obs, acts)?;
            acts.pop();
            obs.pop();
        }
        Ok(())
    }
}

/// Exact expected costs of `strategy` by walking every realization of the
/// initial pair, the sensor noise and the disturbances.
pub fn exact_cost<S: Strategy + ?Sized>(sys: &System, strategy: &S, budget: &EnumerationBudget) -> Result<ExactCost, OracleError> {
    let mut walk = Walk {
        sys,
        strategy,
        budget: budget.max_tree_nodes,
        nodes: 0,
        objective: KahanSum::new(),
        actual: KahanSum::new(),
    };
    walk.visit(0, initial_leaves(sys), &mut Vec::new(), &mut Vec::new())?;
    Ok(ExactCost {
        objective: walk.objective.total(),
        actual: walk.actual.total(),
    })
}

struct Search<'a> {
    sys: &'a System,
    budget: usize,
    nodes: usize,
    witness: TableStrategy,
}

impl Search<'_> {
    /// Minimal unnormalized cost-to-go below a history node. The minimizing
    /// choices of the subtree are appended to `chosen`; subtrees of rejected
    /// actions share history keys with the chosen one, so they must not leak.
    fn best(
        &mut self,
        t: usize,
        leaves: &[Leaf],
        obs: &mut Vec<usize>,
        chosen: &mut Vec<(usize, Vec<usize>, usize)>,
    ) -> Result<f64, OracleError> {
        let sys = self.sys;
        if t == sys.horizon() {
            return Ok(leaves.iter().map(|l| l.w * sys.costs().terminal[l.x]).collect::<KahanSum>().total());
        }
        let beta = sys.costs().beta;
        let mut total = KahanSum::new();
        for y in 0..sys.num_joint_observations() {
            let seen = observe_leaves(sys, t, leaves, y);
            if seen.is_empty() {
                continue;
            }
            self.nodes += 1 + seen.len();
            if self.nodes > self.budget {
                return Err(OracleError::Budget {
                    what: "tree nodes",
                    limit: self.budget as u128,
                });
            }
            obs.push(y);
            let mut best: Option<(f64, usize, Vec<(usize, Vec<usize>, usize)>)> = None;
            for &u in sys.feasible_joint_actions(t) {
                let mut sub = Vec::new();
                let mut acc = KahanSum::new();
                let mut next = Vec::new();
                for l in &seen {
                    acc.add(l.w * sys.cost(t, l.x, u));
                    for (a, b, p) in disturbance_outcomes(sys, t, l.x, l.x_hat, u) {
                        let w = l.w * p;
                        acc.add(w * beta * sys.metric(a, b));
                        next.push(Leaf { x: a, x_hat: b, w });
                    }
                }
                acc.add(self.best(t + 1, &merge(sys.num_states(), next), obs, &mut sub)?);
                let v = acc.total();
                if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                    best = Some((v, u, sub));
                }
            }
            let (v, u, sub) = best.expect("feasible sets are nonempty");
            chosen.push((t, obs.clone(), u));
            chosen.extend(sub);
            total.add(v);
            obs.pop();
        }
        Ok(total.total())
    }
}

/// Information sets of the literal strategy space: every observation
/// history `(t, y_0..y_t)` for `t < T`, reachable or not.
fn all_histories(sys: &System) -> Vec<(usize, Vec<usize>)> {
    let ny = sys.num_joint_observations();
    let mut out = Vec::new();
    let mut layer: Vec<Vec<usize>> = vec![vec![]];
    for t in 0..sys.horizon() {
        layer = layer
            .iter()
            .flat_map(|h| {
                (0..ny).map(move |y| {
                    let mut h = h.clone();
                    h.push(y);
                    h
                })
            })
            .collect();
        out.extend(layer.iter().map(|h| (t, h.clone())));
    }
    out
}

fn strategy_space_size(sys: &System, sets: &[(usize, Vec<usize>)]) -> Option<u128> {
    sets.iter().try_fold(1u128, |acc, (t, _)| {
        acc.checked_mul(sys.feasible_joint_actions(*t).len() as u128)
    })
}

/// Minimum exact cost over all deterministic maps from observation histories
/// to joint actions.
///
/// The search minimizes independently at every reachable history node,
/// which ranges over the whole strategy space because choices at distinct
/// histories never interact. When the literal space (one action per history
/// in `Y^{t+1}`, `t < T`) fits in the budget, every strategy is also
/// evaluated with [`exact_cost`] and the two minima are checked to agree.
pub fn exhaustive_optimal(sys: &System, budget: &EnumerationBudget) -> Result<OptimalSearch, OracleError> {
    let mut search = Search {
        sys,
        budget: budget.max_tree_nodes,
        nodes: 0,
        witness: TableStrategy {
            default: sys.feasible_joint_actions(0)[0],
            ..Default::default()
        },
    };
    let mut chosen = Vec::new();
    let cost = search.best(0, &initial_leaves(sys), &mut Vec::new(), &mut chosen)?;
    for (t, h, u) in chosen {
        search.witness.insert(t, h, u);
    }
    let information_sets = search.witness.len();

    let sets = all_histories(sys);
    let size = strategy_space_size(sys, &sets).filter(|&s| s <= budget.max_strategy_count);
    let mut strategies_enumerated = None;
    if let Some(size) = size {
        let literal = enumerate_strategies(sys, &sets, size, budget)?;
        let scale = 1.0f64.max(cost.abs());
        assert!(
            (literal - cost).abs() <= 1e-9 * scale,
            "literal enumeration {literal} disagrees with history search {cost}"
        );
        strategies_enumerated = Some(size);
    }
    Ok(OptimalSearch {
        cost,
        witness: search.witness,
        information_sets,
        strategies_enumerated,
    })
}

fn enumerate_strategies(
    sys: &System,
    sets: &[(usize, Vec<usize>)],
    size: u128,
    budget: &EnumerationBudget,
) -> Result<f64, OracleError> {
    let costs: Result<Vec<f64>, OracleError> = (0..size)
        .into_par_iter()
        .map(|mut index| {
            let mut table = TableStrategy {
                default: sys.feasible_joint_actions(0)[0],
                ..Default::default()
            };
            for (t, h) in sets {
                let options = sys.feasible_joint_actions(*t);
                let k = options.len() as u128;
                table.insert(*t, h.clone(), options[(index % k) as usize]);
                index /= k;
            }
            exact_cost(sys, &table, budget).map(|c| c.objective)
        })
        .collect();
    Ok(costs?.into_iter().fold(f64::INFINITY, f64::min))
}

/// `P(X_t, X̂_t | y_0..y_t, u_0..u_{t-1})` by summing over every state path.
pub fn brute_force_posterior(sys: &System, observations: &[usize], actions: &[usize]) -> Result<JointBelief, OracleError> {
    if observations.is_empty() || actions.len() + 1 != observations.len() || actions.len() > sys.horizon() {
        return Err(OracleError::Shape(format!(
            "{} observations, {} actions",
            observations.len(),
            actions.len()
        )));
    }
    let n = sys.num_states();
    // Each path is kept separately; merging only happens at the end.
    let mut paths: Vec<Leaf> = initial_leaves(sys)
        .into_iter()
        .map(|l| Leaf {
            w: l.w * sys.likelihood(0, observations[0], l.x),
            ..l
        })
        .collect();
    for (t, &u) in actions.iter().enumerate() {
        let mut next = Vec::new();
        for l in &paths {
            for (a, b, p) in disturbance_outcomes(sys, t, l.x, l.x_hat, u) {
                next.push(Leaf {
                    x: a,
                    x_hat: b,
                    w: l.w * p * sys.likelihood(t + 1, observations[t + 1], a),
                });
            }
        }
        paths = next;
    }
    let mut mass = vec![KahanSum::new(); n * n];
    for l in &paths {
        mass[l.x * n + l.x_hat].add(l.w);
    }
    let mass: Vec<f64> = mass.iter().map(KahanSum::total).collect();
    let z: f64 = mass.iter().copied().collect::<KahanSum>().total();
    if !(z > 0.0) {
        return Err(OracleError::ImpossibleHistory);
    }
    Ok(JointBelief::from_parts_unchecked(
        n,
        actions.len(),
        mass.into_iter().map(|m| m / z).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RawSystem;
    use crate::numeric::rng_from_seed;
    use crate::policy::{FirstFeasible, RandomHistoryStrategy};
    use instances::{random_system, TinyParams};

    const TOY: &str = r#"
num_states = 2
horizon = 1
actions = [1]
observations = [2]
initial_joint = [[0.25, 0.25], [0.25, 0.25]]
observation_kernel = [{ stationary = [[1.0, 0.0], [0.0, 1.0]] }]

[model_kernel]
stationary = [[[0.5, 0.5]], [[0.5, 0.5]]]

[actual_kernel]
stationary = [[[0.5, 0.5]], [[0.5, 0.5]]]

[costs]
beta = 0.0
terminal = [1.0, 0.0]
stage = { stationary = [[0.0], [0.0]] }
"#;

    #[test]
    fn deterministic_system_costs_one_trajectory() {
        let mut raw: RawSystem = toml::from_str(TOY).unwrap();
        raw.initial_joint = vec![vec![0.0, 1.0], vec![0.0, 0.0]];
        raw.model_kernel.stationary = Some(vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]]);
        raw.actual_kernel.stationary = Some(vec![vec![vec![1.0, 0.0]], vec![vec![1.0, 0.0]]]);
        raw.costs.stage.stationary = Some(vec![vec![2.0], vec![5.0]]);
        raw.costs.beta = 3.0;
        let sys = raw.validate().unwrap();
        // (x, x̂) = (0, 1) -> (1, 0): c_0(0) = 2, β·d(1,0) = 3, c_T(1) = 0.
        let c = exact_cost(&sys, &FirstFeasible::new(&sys), &EnumerationBudget::default()).unwrap();
        assert_eq!(c.objective, 5.0);
        // actual: c_0(x̂ = 1) = 5, c_T(x̂_T = 0) = 1.
        assert_eq!(c.actual, 6.0);
    }

    #[test]
    fn uniform_two_state_terminal_indicator() {
        // Four equally likely (x, x̂) pairs, each moves to x' uniformly:
        // P(x_T = 0) = 1/2, so E[c_T] = 1/2.
        let sys: System = crate::parse_system(TOY).unwrap();
        let c = exact_cost(&sys, &FirstFeasible::new(&sys), &EnumerationBudget::default()).unwrap();
        assert!((c.objective - 0.5).abs() < 1e-15);
        assert!((c.actual - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_action_system_has_one_strategy() {
        let sys: System = crate::parse_system(TOY).unwrap();
        let best = exhaustive_optimal(&sys, &EnumerationBudget::default()).unwrap();
        assert_eq!(best.strategies_enumerated, Some(1));
        let direct = exact_cost(&sys, &FirstFeasible::new(&sys), &EnumerationBudget::default()).unwrap();
        assert!((best.cost - direct.objective).abs() < 1e-15);
    }

    #[test]
    fn zero_cost_system_optimum_is_zero() {
        let mut raw: RawSystem = toml::from_str(TOY).unwrap();
        raw.costs.terminal = vec![0.0, 0.0];
        let sys = raw.validate().unwrap();
        assert_eq!(exhaustive_optimal(&sys, &EnumerationBudget::default()).unwrap().cost, 0.0);
    }

    #[test]
    fn optimum_bounds_every_strategy_and_witness_attains_it() {
        let mut rng = rng_from_seed(5);
        for _ in 0..5 {
            let sys = random_system(&mut rng, &TinyParams::default());
            let budget = EnumerationBudget::default();
            let best = exhaustive_optimal(&sys, &budget).unwrap();
            assert_eq!(best.strategies_enumerated, Some(64));
            let w = exact_cost(&sys, &best.witness, &budget).unwrap().objective;
            assert!((w - best.cost).abs() < 1e-12);
            for s in 0..20 {
                let g = RandomHistoryStrategy::new(&sys, s);
                assert!(exact_cost(&sys, &g, &budget).unwrap().objective >= best.cost - 1e-12);
            }
        }
    }

    #[test]
    fn shared_outcomes_match_interval_overlaps() {
        let sys = crate::parse_system(TOY).unwrap();
        let mut raw = RawSystem::from_system(&sys);
        raw.model_kernel.stationary = Some(vec![vec![vec![0.3, 0.7]], vec![vec![0.3, 0.7]]]);
        raw.actual_kernel.stationary = Some(vec![vec![vec![0.6, 0.4]], vec![vec![0.6, 0.4]]]);
        let sys = raw.validate().unwrap();
        let out = disturbance_outcomes(&sys, 0, 0, 0, 0);
        let expect = [(0, 0, 0.3), (1, 0, 0.3), (1, 1, 0.4)];
        assert_eq!(out.len(), 3);
        for ((a, b, p), (ea, eb, ep)) in out.iter().zip(expect) {
            assert_eq!((*a, *b), (ea, eb));
            assert!((p - ep).abs() < 1e-15);
        }
        let ind = disturbance_outcomes(&sys.with_coupling(Coupling::Independent), 0, 0, 0, 0);
        assert_eq!(ind.len(), 4);
    }

    #[test]
    fn budget_is_enforced() {
        let sys = random_system(&mut rng_from_seed(9), &TinyParams::default());
        let tiny = EnumerationBudget {
            max_tree_nodes: 3,
            max_strategy_count: 1,
        };
        assert!(matches!(
            exact_cost(&sys, &FirstFeasible::new(&sys), &tiny),
            Err(OracleError::Budget { .. })
        ));
        assert!(matches!(exhaustive_optimal(&sys, &tiny), Err(OracleError::Budget { .. })));
    }
}
