//! Model and actual system run side by side under one strategy.
//!
//! Random draws of one episode come from a single stream seeded by the
//! episode seed, in this order: the initial pair, then per stage the model
//! sensors (subsystem order), the actual sensors, and the disturbance (plus
//! a second draw for the actual system under independent coupling). The
//! terminal stage draws both sensor sets and no disturbance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{condition, init_belief, update, FilterError, JointBelief};
use crate::dp::{self, Method};
use crate::memory::{DelayedMemory, MemoryError};
use crate::numeric::{derive_seed, mean_and_std_error, rng_from_seed, total_variation};
use crate::policy::{Information, Strategy};
use crate::system::{StageTable, System, SystemError, TransitionKernel};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Solve(#[from] dp::DpError),
    #[error("strategy chose infeasible joint action {action} at stage {stage}")]
    InfeasibleAction { stage: usize, action: usize },
    #[error("learned-belief mode needs a kernel estimate")]
    MissingEstimate,
    #[error("at least one episode is required")]
    NoEpisodes,
}

/// Which kernel the filter uses for the actual system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BeliefMode {
    /// The true actual kernel.
    Exact,
    /// The current estimate of the actual kernel.
    Learned,
}

/// Count-based estimate of the actual kernel `P̃(x̂' | x̂, u)` with additive
/// smoothing `α`. Counts are real-valued because noisy observations
/// contribute fractional (posterior-weighted) transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelEstimate {
    states: usize,
    actions: usize,
    alpha: f64,
    counts: Vec<f64>,
}

/// One observed or inferred actual transition with its weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionEvidence {
    pub x_hat: usize,
    pub action: usize,
    pub next: usize,
    pub weight: f64,
}

impl KernelEstimate {
    /// `alpha = 0` leaves unvisited rows uniform.
    pub fn new(states: usize, actions: usize, alpha: f64) -> Self {
        assert!(alpha >= 0.0 && alpha.is_finite(), "smoothing must be finite and nonnegative");
        Self {
            states,
            actions,
            alpha,
            counts: vec![0.0; states * actions * states],
        }
    }

    pub fn for_system(sys: &System, alpha: f64) -> Self {
        Self::new(sys.num_states(), sys.num_joint_actions(), alpha)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn count(&self, x_hat: usize, u: usize, next: usize) -> f64 {
        self.counts[(x_hat * self.actions + u) * self.states + next]
    }

    pub fn total_count(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn record(&mut self, e: &TransitionEvidence) {
        self.counts[(e.x_hat * self.actions + e.action) * self.states + e.next] += e.weight;
    }

    pub fn absorb(&mut self, evidence: &[TransitionEvidence]) {
        evidence.iter().for_each(|e| self.record(e));
    }

    /// `P̃(· | x̂, u)`.
    pub fn row(&self, x_hat: usize, u: usize) -> Vec<f64> {
        let n = self.states;
        let start = (x_hat * self.actions + u) * n;
        let counts = &self.counts[start..start + n];
        let z: f64 = counts.iter().sum::<f64>() + self.alpha * n as f64;
        if z > 0.0 {
            counts.iter().map(|c| (c + self.alpha) / z).collect()
        } else {
            vec![1.0 / n as f64; n]
        }
    }

    pub fn kernel(&self) -> TransitionKernel {
        let rows: Vec<Vec<Vec<f64>>> = (0..self.states)
            .map(|x| (0..self.actions).map(|u| self.row(x, u)).collect())
            .collect();
        TransitionKernel::from_nested(&rows)
    }

    /// `sys` with its actual kernel replaced by the estimate.
    pub fn substitute(&self, sys: &System) -> Result<System, SystemError> {
        sys.with_actual_kernel(StageTable::Stationary(self.kernel()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub x: usize,
    pub x_hat: usize,
    /// Joint action index and its per-subsystem components.
    pub action: usize,
    pub u: Vec<usize>,
    /// Joint model observation index and its components.
    pub observation: usize,
    pub y: Vec<usize>,
    pub y_hat: Vec<usize>,
    /// `Π_t`, row-major over `(x, x̂)`.
    pub belief: Vec<f64>,
    pub model_cost: f64,
    pub actual_cost: f64,
    /// `β d(x_{t+1}, x̂_{t+1})`.
    pub mismatch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalRecord {
    pub stage: usize,
    pub x: usize,
    pub x_hat: usize,
    pub observation: usize,
    pub y: Vec<usize>,
    pub y_hat: Vec<usize>,
    pub model_cost: f64,
    pub actual_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    pub mode: BeliefMode,
    pub stages: Vec<StageRecord>,
    pub terminal: TerminalRecord,
    /// Delayed-sharing memory after the terminal observation.
    pub memory: DelayedMemory,
    /// Actual-kernel evidence gathered during the episode (learned mode).
    pub evidence: Vec<TransitionEvidence>,
}

impl Trajectory {
    /// Realized model objective: stage costs, mismatch penalties, terminal.
    pub fn objective(&self) -> f64 {
        let mut acc = 0.0;
        for s in &self.stages {
            acc += s.model_cost;
            acc += s.mismatch;
        }
        acc + self.terminal.model_cost
    }

    /// Realized cost of the actual system.
    pub fn actual_cost(&self) -> f64 {
        let mut acc = 0.0;
        for s in &self.stages {
            acc += s.actual_cost;
        }
        acc + self.terminal.actual_cost
    }

    /// `x_t = x̂_t` at every stage including the terminal one.
    pub fn coincides(&self) -> bool {
        self.stages.iter().all(|s| s.x == s.x_hat) && self.terminal.x == self.terminal.x_hat
    }

    /// Joint observations `y_0..=y_T`.
    pub fn observations(&self) -> Vec<usize> {
        self.stages
            .iter()
            .map(|s| s.observation)
            .chain(std::iter::once(self.terminal.observation))
            .collect()
    }

    pub fn actions(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.action).collect()
    }
}

/// The single state with positive likelihood of `y`, if there is one.
fn identified_state(sys: &System, t: usize, y: usize) -> Option<usize> {
    let mut found = None;
    for x in 0..sys.num_states() {
        if sys.likelihood(t, y, x) > 0.0 {
            if found.is_some() {
                return None;
            }
            found = Some(x);
        }
    }
    found
}

/// Posterior weights of `(x̂_t, x̂_{t+1})` given `Π_t`, `u` and `y_{t+1}`.
fn soft_transitions(filter_sys: &System, t: usize, belief: &JointBelief, u: usize, y_next: usize) -> Vec<TransitionEvidence> {
    let n = filter_sys.num_states();
    let mut pair = vec![0.0; n * n];
    for x in 0..n {
        for xh in 0..n {
            let m = belief.get(x, xh);
            if m == 0.0 {
                continue;
            }
            for (a, b, p) in filter_sys.coupled_transition(t, x, xh, u) {
                pair[xh * n + b] += m * p * filter_sys.likelihood(t + 1, y_next, a);
            }
        }
    }
    let z: f64 = pair.iter().sum();
    if !(z > 0.0) {
        return Vec::new();
    }
    pair.iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, &w)| TransitionEvidence {
            x_hat: i / n,
            action: u,
            next: i % n,
            weight: w / z,
        })
        .collect()
}

/// Runs one episode of both systems under `strategy`.
///
/// In learned mode the filter uses `estimate` for the actual kernel, and the
/// trajectory carries transition evidence for the caller to absorb between
/// episodes.
pub fn run_episode<S: Strategy + ?Sized>(
    sys: &System,
    strategy: &S,
    mode: BeliefMode,
    estimate: Option<&KernelEstimate>,
    seed: u64,
) -> Result<Trajectory, SimError> {
    let learned;
    let filter_sys = match mode {
        BeliefMode::Exact => sys,
        BeliefMode::Learned => {
            learned = estimate.ok_or(SimError::MissingEstimate)?.substitute(sys)?;
            &learned
        }
    };
    let horizon = sys.horizon();
    let mut rng = rng_from_seed(seed);
    let (mut x, mut x_hat) = sys.sample_initial(&mut rng);
    let mut memory = DelayedMemory::new(sys.delays().to_vec())?;
    let mut stages = Vec::with_capacity(horizon);
    let mut observations = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut evidence = Vec::new();
    let mut belief = init_belief(filter_sys);
    let mut y_hat_prev: Option<usize> = None;

    for t in 0..horizon {
        let y = sys.observe_all(t, x, &mut rng)?;
        let y_hat = sys.observe_all(t, x_hat, &mut rng)?;
        let yj = sys.encode_observation(&y)?;
        let yhj = sys.encode_observation(&y_hat)?;
        belief = if t == 0 {
            condition(filter_sys, &belief, yj, usize::MAX)?
        } else {
            let prev = actions[t - 1];
            if mode == BeliefMode::Learned {
                collect_evidence(sys, filter_sys, t - 1, &belief, prev, y_hat_prev, yhj, yj, &mut evidence);
            }
            update(filter_sys, &belief, prev, yj)?
        };
        observations.push(yj);
        let u = strategy.decide(&Information {
            stage: t,
            observations: &observations,
            actions: &actions,
            belief: &belief,
        });
        if !sys.feasible_joint_actions(t).contains(&u) {
            return Err(SimError::InfeasibleAction { stage: t, action: u });
        }
        let u_parts = sys.decode_action(u);
        memory = memory.push(&y, &u_parts)?;
        let model_cost = sys.stage_cost(t, x, u)?;
        let actual_cost = sys.stage_cost(t, x_hat, u)?;
        let (x_next, w) = sys.step_model(t, x, u, &mut rng)?;
        let x_hat_next = sys.step_actual(t, x_hat, u, w, &mut rng)?;
        let mismatch = sys.mismatch_penalty(x_next, x_hat_next)?;
        stages.push(StageRecord {
            stage: t,
            x,
            x_hat,
            action: u,
            u: u_parts,
            observation: yj,
            y,
            y_hat,
            belief: belief.mass().to_vec(),
            model_cost,
            actual_cost,
            mismatch,
        });
        actions.push(u);
        y_hat_prev = Some(yhj);
        x = x_next;
        x_hat = x_hat_next;
    }

    let y = sys.observe_all(horizon, x, &mut rng)?;
    let y_hat = sys.observe_all(horizon, x_hat, &mut rng)?;
    let yj = sys.encode_observation(&y)?;
    let yhj = sys.encode_observation(&y_hat)?;
    if mode == BeliefMode::Learned {
        let last = actions[horizon - 1];
        collect_evidence(sys, filter_sys, horizon - 1, &belief, last, y_hat_prev, yhj, yj, &mut evidence);
    }
    memory = memory.observe(&y)?;
    Ok(Trajectory {
        seed,
        mode,
        stages,
        terminal: TerminalRecord {
            stage: horizon,
            x,
            x_hat,
            observation: yj,
            y,
            y_hat,
            model_cost: sys.terminal_cost(x)?,
            actual_cost: sys.terminal_cost(x_hat)?,
        },
        memory,
        evidence,
    })
}

/// Hard count when the actual sensors pin down both endpoints of the
/// transition, otherwise the filter's posterior transition weights.
#[allow(clippy::too_many_arguments)]
fn collect_evidence(
    sys: &System,
    filter_sys: &System,
    t: usize,
    belief: &JointBelief,
    u: usize,
    y_hat_prev: Option<usize>,
    y_hat_next: usize,
    y_next: usize,
    out: &mut Vec<TransitionEvidence>,
) {
    let from = y_hat_prev.and_then(|y| identified_state(sys, t, y));
    let to = identified_state(sys, t + 1, y_hat_next);
    match (from, to) {
        (Some(a), Some(b)) => out.push(TransitionEvidence {
            x_hat: a,
            action: u,
            next: b,
            weight: 1.0,
        }),
        _ => out.extend(soft_transitions(filter_sys, t, belief, u, y_next)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    fn from_samples(v: &[f64]) -> Self {
        let (mean, std_error) = mean_and_std_error(v);
        Self { mean, std_error }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub episodes: usize,
    /// Model objective `J` (stage costs + mismatch + terminal).
    pub objective: Estimate,
    /// Actual-system cost `Ĵ`.
    pub actual: Estimate,
}

/// Per-episode `(J, Ĵ)` for seeds `derive_seed(base_seed, i)`.
///
/// Exact mode runs episodes in parallel; learned mode runs them in order,
/// absorbing each episode's evidence into a fresh estimate (`α = 1`)
/// before the next one starts.
pub fn episode_costs<S: Strategy + ?Sized>(
    sys: &System,
    strategy: &S,
    mode: BeliefMode,
    episodes: usize,
    base_seed: u64,
) -> Result<Vec<(f64, f64)>, SimError> {
    if episodes == 0 {
        return Err(SimError::NoEpisodes);
    }
    match mode {
        BeliefMode::Exact => (0..episodes)
            .into_par_iter()
            .map(|i| {
                let tr = run_episode(sys, strategy, mode, None, derive_seed(base_seed, i as u64))?;
                Ok((tr.objective(), tr.actual_cost()))
            })
            .collect(),
        BeliefMode::Learned => {
            let mut est = KernelEstimate::for_system(sys, 1.0);
            let mut out = Vec::with_capacity(episodes);
            for i in 0..episodes {
                let tr = run_episode(sys, strategy, mode, Some(&est), derive_seed(base_seed, i as u64))?;
                est.absorb(&tr.evidence);
                out.push((tr.objective(), tr.actual_cost()));
            }
            Ok(out)
        }
    }
}

pub fn monte_carlo_cost<S: Strategy + ?Sized>(
    sys: &System,
    strategy: &S,
    mode: BeliefMode,
    episodes: usize,
    base_seed: u64,
) -> Result<MonteCarloReport, SimError> {
    let costs = episode_costs(sys, strategy, mode, episodes, base_seed)?;
    let j: Vec<f64> = costs.iter().map(|c| c.0).collect();
    let jh: Vec<f64> = costs.iter().map(|c| c.1).collect();
    Ok(MonteCarloReport {
        episodes,
        objective: Estimate::from_samples(&j),
        actual: Estimate::from_samples(&jh),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEqualityReport {
    pub episodes: usize,
    pub objective: Estimate,
    pub actual: Estimate,
    /// Stages whose mismatch penalty was nonzero.
    pub stages_with_mismatch: usize,
    pub max_mismatch: f64,
    /// Episodes with `x_t = x̂_t` at every stage.
    pub coincident_episodes: usize,
    /// Episodes whose model objective equals the actual cost exactly.
    pub equal_cost_episodes: usize,
    /// Stages where "mismatch is zero" and "successors coincide" disagree.
    pub penalty_inconsistencies: usize,
    pub means_bitwise_equal: bool,
    pub within_three_std_errors: bool,
}

/// Runs the strategy in exact mode and compares model objective against
/// actual cost, episode by episode and on average.
pub fn cost_equality_check<S: Strategy + ?Sized>(
    sys: &System,
    strategy: &S,
    episodes: usize,
    seed: u64,
) -> Result<CostEqualityReport, SimError> {
    if episodes == 0 {
        return Err(SimError::NoEpisodes);
    }
    let trajectories: Vec<Trajectory> = (0..episodes)
        .into_par_iter()
        .map(|i| run_episode(sys, strategy, BeliefMode::Exact, None, derive_seed(seed, i as u64)))
        .collect::<Result<_, _>>()?;
    let mut stages_with_mismatch = 0;
    let mut max_mismatch: f64 = 0.0;
    let mut penalty_inconsistencies = 0;
    let mut j = Vec::with_capacity(episodes);
    let mut jh = Vec::with_capacity(episodes);
    for tr in &trajectories {
        for (i, s) in tr.stages.iter().enumerate() {
            let (nx, nxh) = match tr.stages.get(i + 1) {
                Some(n) => (n.x, n.x_hat),
                None => (tr.terminal.x, tr.terminal.x_hat),
            };
            if s.mismatch != 0.0 {
                stages_with_mismatch += 1;
            }
            max_mismatch = max_mismatch.max(s.mismatch);
            // The iff only has content when distinct states are penalized.
            let separating = sys.costs().beta > 0.0 && (nx == nxh || sys.costs().metric[nx * sys.num_states() + nxh] > 0.0);
            if separating && (s.mismatch == 0.0) != (nx == nxh) {
                penalty_inconsistencies += 1;
            }
        }
        j.push(tr.objective());
        jh.push(tr.actual_cost());
    }
    let objective = Estimate::from_samples(&j);
    let actual = Estimate::from_samples(&jh);
    let se = (objective.std_error.powi(2) + actual.std_error.powi(2)).sqrt();
    Ok(CostEqualityReport {
        episodes,
        objective,
        actual,
        stages_with_mismatch,
        max_mismatch,
        coincident_episodes: trajectories.iter().filter(|t| t.coincides()).count(),
        equal_cost_episodes: j.iter().zip(&jh).filter(|(a, b)| a.to_bits() == b.to_bits()).count(),
        penalty_inconsistencies,
        means_bitwise_equal: objective.mean.to_bits() == actual.mean.to_bits(),
        within_three_std_errors: (objective.mean - actual.mean).abs() <= 3.0 * se,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnOptions {
    pub episodes: usize,
    pub seed: u64,
    /// Smoothing pseudo-count.
    pub alpha: f64,
    /// Seed of the exact-mode episode whose `(u, y)` sequence is the probe.
    pub probe_seed: u64,
    /// Curve resolution in episodes.
    pub record_every: usize,
    /// Re-solve on the estimated system every `E` episodes with `Method`.
    pub replan: Option<(usize, Method)>,
}

impl Default for LearnOptions {
    fn default() -> Self {
        Self {
            episodes: 1000,
            seed: 0,
            alpha: 1.0,
            probe_seed: 0x5EED,
            record_every: 100,
            replan: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningPoint {
    pub episode: usize,
    pub total_variation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningReport {
    /// TV distance after 0, `record_every`, … and the final episode.
    pub curve: Vec<LearningPoint>,
    /// Estimates at the curve points.
    pub history: Vec<KernelEstimate>,
    pub estimate: KernelEstimate,
    /// `(J, Ĵ)` of every learning episode.
    pub costs: Vec<(f64, f64)>,
}

/// Mean over stages of the TV distance between the exact filter and the
/// filter with the estimated actual kernel, fed the same `(u, y)` sequence.
pub fn probe_distance(sys: &System, estimate: &KernelEstimate, observations: &[usize], actions: &[usize]) -> Result<f64, SimError> {
    let learned = estimate.substitute(sys)?;
    let mut a = condition(sys, &init_belief(sys), observations[0], usize::MAX)?;
    let mut b = condition(&learned, &init_belief(&learned), observations[0], usize::MAX)?;
    let mut total = total_variation(a.mass(), b.mass());
    for (t, &u) in actions.iter().enumerate() {
        a = update(sys, &a, u, observations[t + 1])?;
        b = update(&learned, &b, u, observations[t + 1])?;
        total += total_variation(a.mass(), b.mass());
    }
    Ok(total / observations.len() as f64)
}

/// Learned-mode episodes with the estimate updated between episodes.
///
/// The true actual kernel is only used to generate the environment's
/// transitions and the exact filter on the probe history.
pub fn learn_online<S: Strategy + ?Sized>(sys: &System, strategy: &S, opts: &LearnOptions) -> Result<LearningReport, SimError> {
    let probe = run_episode(sys, strategy, BeliefMode::Exact, None, opts.probe_seed)?;
    let (probe_y, probe_u) = (probe.observations(), probe.actions());
    let mut estimate = KernelEstimate::for_system(sys, opts.alpha);
    let mut curve = Vec::new();
    let mut history = Vec::new();
    let mut record = |episode: usize, est: &KernelEstimate| -> Result<(), SimError> {
        curve.push(LearningPoint {
            episode,
            total_variation: probe_distance(sys, est, &probe_y, &probe_u)?,
        });
        history.push(est.clone());
        Ok(())
    };
    record(0, &estimate)?;
    let mut costs = Vec::with_capacity(opts.episodes);
    let every = opts.record_every.max(1);
    let mut replanned: Option<dp::SeparatedStrategy> = None;
    for i in 0..opts.episodes {
        let tr = match &replanned {
            Some(g) => run_episode(sys, g, BeliefMode::Learned, Some(&estimate), derive_seed(opts.seed, i as u64))?,
            None => run_episode(sys, strategy, BeliefMode::Learned, Some(&estimate), derive_seed(opts.seed, i as u64))?,
        };
        estimate.absorb(&tr.evidence);
        costs.push((tr.objective(), tr.actual_cost()));
        let done = i + 1;
        if let Some((period, method)) = opts.replan {
            if period > 0 && done % period == 0 {
                replanned = Some(dp::solve(&estimate.substitute(sys)?, method)?.strategy());
            }
        }
        if done % every == 0 || done == opts.episodes {
            record(done, &estimate)?;
        }
    }
    Ok(LearningReport {
        curve,
        history,
        estimate,
        costs,
    })
}
