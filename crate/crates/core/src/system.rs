//! Finite-space paired CPS: the model system, the actual system, the shared
//! primitive randomness that drives both, sensors, and costs.
//!
//! States of the model and of the actual system live in the same finite set
//! `0..num_states`. Joint actions and joint observations are encoded with a
//! mixed radix in which subsystem 0 is the most significant digit, so joint
//! index order is lexicographic order over per-subsystem indices.
//!
//! Sampling uses inverse transforms over cumulative sums in ascending index
//! order. Under [`Coupling::Shared`] one uniform draw is inverted against both
//! the model row and the actual row, which yields the comonotone coupling of
//! the two rows; [`System::coupled_transition`] returns exactly that law.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::SimRng;

/// Tolerance applied to every "sums to one" invariant.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("{location}: row sum {sum} ≠ 1")]
    RowSum { location: String, sum: f64 },
    #[error("{location}: negative entry {value}")]
    NegativeEntry { location: String, value: f64 },
    #[error("{location}: entry is not finite")]
    NonFinite { location: String },
    #[error("{location}: expected length {expected}, found {found}")]
    Shape {
        location: String,
        expected: usize,
        found: usize,
    },
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("stage {stage} out of range (limit {limit})")]
    StageOutOfRange { stage: usize, limit: usize },
    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> SystemError {
    SystemError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// How one primitive disturbance realization drives both systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coupling {
    /// A single uniform draw per stage feeds both state equations.
    #[default]
    Shared,
    /// Model and actual transitions draw independently (ablation).
    Independent,
}

/// A per-stage table that may be declared once for all stages.
#[derive(Debug, Clone, PartialEq)]
pub enum StageTable<T> {
    Stationary(T),
    PerStage(Vec<T>),
}

impl<T> StageTable<T> {
    pub fn at(&self, t: usize) -> &T {
        match self {
            StageTable::Stationary(v) => v,
            StageTable::PerStage(v) => &v[t],
        }
    }

    pub fn is_stationary(&self) -> bool {
        matches!(self, StageTable::Stationary(_))
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> StageTable<U> {
        match self {
            StageTable::Stationary(v) => StageTable::Stationary(f(v)),
            StageTable::PerStage(v) => StageTable::PerStage(v.iter().map(f).collect()),
        }
    }

    fn entries(&self) -> Vec<(Option<usize>, &T)> {
        match self {
            StageTable::Stationary(v) => vec![(None, v)],
            StageTable::PerStage(v) => v.iter().enumerate().map(|(t, x)| (Some(t), x)).collect(),
        }
    }
}

/// Mixed-radix encoding of per-subsystem indices; subsystem 0 is most significant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixedRadix {
    sizes: Vec<usize>,
}

impl MixedRadix {
    pub fn new(sizes: Vec<usize>) -> Self {
        Self { sizes }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn count(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn encode(&self, digits: &[usize]) -> Option<usize> {
        if digits.len() != self.sizes.len() {
            return None;
        }
        let mut idx = 0;
        for (&d, &s) in digits.iter().zip(&self.sizes) {
            if d >= s {
                return None;
            }
            idx = idx * s + d;
        }
        Some(idx)
    }

    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        let mut digits = vec![0; self.sizes.len()];
        for (slot, &s) in digits.iter_mut().zip(&self.sizes).rev() {
            *slot = index % s;
            index /= s;
        }
        digits
    }
}

/// Stage transition tensor `P(x' | x, u)`, stored `[x][u][x']`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    states: usize,
    actions: usize,
    probs: Vec<f64>,
}

impl TransitionKernel {
    pub fn from_nested(rows: &[Vec<Vec<f64>>]) -> Self {
        let states = rows.len();
        let actions = rows.first().map_or(0, |r| r.len());
        let probs = rows.iter().flatten().flatten().copied().collect();
        Self {
            states,
            actions,
            probs,
        }
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.states)
            .map(|x| (0..self.actions).map(|u| self.row(x, u).to_vec()).collect())
            .collect()
    }

    pub fn row(&self, x: usize, u: usize) -> &[f64] {
        let start = (x * self.actions + u) * self.states;
        &self.probs[start..start + self.states]
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }
}

/// Stage sensor law `P(y | x)` for one subsystem, stored `[x][y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationKernel {
    observations: usize,
    probs: Vec<f64>,
}

impl ObservationKernel {
    pub fn from_nested(rows: &[Vec<f64>]) -> Self {
        let observations = rows.first().map_or(0, |r| r.len());
        Self {
            observations,
            probs: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        self.probs
            .chunks(self.observations)
            .map(|c| c.to_vec())
            .collect()
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x * self.observations..(x + 1) * self.observations]
    }
}

/// Stage and terminal costs plus the weighted model/actual mismatch metric.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    /// `c_t(x, u)` stored `[x][u]` per stage.
    pub stage: StageTable<Vec<f64>>,
    pub terminal: Vec<f64>,
    pub beta: f64,
    /// `d(x, x̂)` stored row-major.
    pub metric: Vec<f64>,
}

/// Uniform draw that realizes one stage disturbance `W_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance(pub f64);

/// One sampled stage of both systems.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointSample {
    pub x: usize,
    pub x_hat: usize,
    pub u: Vec<usize>,
    pub y: Vec<usize>,
    pub y_hat: Vec<usize>,
}

/// Validated paired CPS. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct System {
    pub(crate) num_states: usize,
    pub(crate) actions: MixedRadix,
    pub(crate) observations: MixedRadix,
    pub(crate) horizon: usize,
    pub(crate) model: StageTable<TransitionKernel>,
    pub(crate) actual: StageTable<TransitionKernel>,
    pub(crate) coupling: Coupling,
    pub(crate) sensors: Vec<StageTable<ObservationKernel>>,
    pub(crate) initial_joint: Vec<f64>,
    pub(crate) costs: CostModel,
    pub(crate) feasible: StageTable<Vec<Vec<usize>>>,
    pub(crate) delays: Vec<usize>,
    /// Joint observation likelihood per stage 0..=T, stored `[y][x]`.
    likelihood: Vec<Vec<f64>>,
    /// Feasible joint actions per decision stage, ascending.
    feasible_joint: Vec<Vec<usize>>,
}

/// Unvalidated parts of a [`System`]; [`System::new`] checks every invariant.
#[derive(Debug, Clone)]
pub struct SystemParts {
    pub num_states: usize,
    pub actions: Vec<usize>,
    pub observations: Vec<usize>,
    pub horizon: usize,
    pub model: StageTable<TransitionKernel>,
    pub actual: StageTable<TransitionKernel>,
    pub coupling: Coupling,
    pub sensors: Vec<StageTable<ObservationKernel>>,
    pub initial_joint: Vec<f64>,
    pub costs: CostModel,
    pub feasible: Option<StageTable<Vec<Vec<usize>>>>,
    pub delays: Option<Vec<usize>>,
}

pub(crate) fn check_finite_nonneg(location: &str, values: &[f64]) -> Result<(), SystemError> {
    for &v in values {
        if !v.is_finite() {
            return Err(SystemError::NonFinite {
                location: location.to_string(),
            });
        }
        if v < 0.0 {
            return Err(SystemError::NegativeEntry {
                location: location.to_string(),
                value: v,
            });
        }
    }
    Ok(())
}

pub(crate) fn check_distribution(location: &str, values: &[f64]) -> Result<(), SystemError> {
    check_finite_nonneg(location, values)?;
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(SystemError::RowSum {
            location: location.to_string(),
            sum,
        });
    }
    Ok(())
}

fn stage_label(name: &str, stage: Option<usize>) -> String {
    match stage {
        Some(t) => format!("{name} stage {t}"),
        None => format!("{name} (stationary)"),
    }
}

fn check_stage_count<T>(name: &str, table: &StageTable<T>, needed: usize) -> Result<(), SystemError> {
    if let StageTable::PerStage(v) = table {
        if v.len() != needed {
            return Err(SystemError::Shape {
                location: format!("{name} stages"),
                expected: needed,
                found: v.len(),
            });
        }
    }
    Ok(())
}

fn check_transition(
    name: &str,
    table: &StageTable<TransitionKernel>,
    n: usize,
    nu: usize,
    horizon: usize,
) -> Result<(), SystemError> {
    check_stage_count(name, table, horizon)?;
    for (stage, k) in table.entries() {
        let label = stage_label(name, stage);
        if k.states != n || k.actions != nu || k.probs.len() != n * nu * n {
            return Err(SystemError::Shape {
                location: format!("{label} [x][u][x'] tensor"),
                expected: n * nu * n,
                found: k.probs.len(),
            });
        }
        for x in 0..n {
            for u in 0..nu {
                check_distribution(&format!("{label} row (x={x}, u={u})"), k.row(x, u))?;
            }
        }
    }
    Ok(())
}

impl System {
    /// Builds a system, reporting the first violated invariant.
    pub fn new(parts: SystemParts) -> Result<Self, SystemError> {
        let SystemParts {
            num_states: n,
            actions,
            observations,
            horizon,
            model,
            actual,
            coupling,
            sensors,
            initial_joint,
            costs,
            feasible,
            delays,
        } = parts;
        if n == 0 {
            return Err(invalid("num_states", "must be positive"));
        }
        if horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        if actions.is_empty() {
            return Err(invalid("actions", "at least one subsystem is required"));
        }
        if observations.len() != actions.len() {
            return Err(SystemError::Shape {
                location: "observations (one per subsystem)".into(),
                expected: actions.len(),
                found: observations.len(),
            });
        }
        if let Some(k) = actions.iter().position(|&a| a == 0) {
            return Err(invalid(format!("actions[{k}]"), "cardinality must be positive"));
        }
        if let Some(k) = observations.iter().position(|&a| a == 0) {
            return Err(invalid(
                format!("observations[{k}]"),
                "cardinality must be positive",
            ));
        }
        let actions = MixedRadix::new(actions);
        let observations = MixedRadix::new(observations);
        let nu = actions.count();
        let k_count = actions.len();

        check_transition("model_kernel", &model, n, nu, horizon)?;
        check_transition("actual_kernel", &actual, n, nu, horizon)?;

        if sensors.len() != k_count {
            return Err(SystemError::Shape {
                location: "observation_kernel (one per subsystem)".into(),
                expected: k_count,
                found: sensors.len(),
            });
        }
        for (k, table) in sensors.iter().enumerate() {
            let name = format!("observation_kernel[{k}]");
            check_stage_count(&name, table, horizon + 1)?;
            let ny = observations.sizes()[k];
            for (stage, kern) in table.entries() {
                let label = stage_label(&name, stage);
                if kern.observations != ny || kern.probs.len() != n * ny {
                    return Err(SystemError::Shape {
                        location: format!("{label} [x][y] table"),
                        expected: n * ny,
                        found: kern.probs.len(),
                    });
                }
                for x in 0..n {
                    check_distribution(&format!("{label} row (x={x})"), kern.row(x))?;
                }
            }
        }

        if initial_joint.len() != n * n {
            return Err(SystemError::Shape {
                location: "initial_joint".into(),
                expected: n * n,
                found: initial_joint.len(),
            });
        }
        check_distribution("initial_joint", &initial_joint)?;

        if !costs.beta.is_finite() || costs.beta < 0.0 {
            return Err(invalid(
                "costs.beta",
                format!("mismatch weight must be a nonnegative finite number, got {}", costs.beta),
            ));
        }
        check_stage_count("costs.stage", &costs.stage, horizon)?;
        for (stage, table) in costs.stage.entries() {
            let label = stage_label("costs.stage", stage);
            if table.len() != n * nu {
                return Err(SystemError::Shape {
                    location: format!("{label} [x][u] table"),
                    expected: n * nu,
                    found: table.len(),
                });
            }
            if table.iter().any(|c| !c.is_finite()) {
                return Err(SystemError::NonFinite { location: label });
            }
        }
        if costs.terminal.len() != n {
            return Err(SystemError::Shape {
                location: "costs.terminal".into(),
                expected: n,
                found: costs.terminal.len(),
            });
        }
        if costs.terminal.iter().any(|c| !c.is_finite()) {
            return Err(SystemError::NonFinite {
                location: "costs.terminal".into(),
            });
        }
        if costs.metric.len() != n * n {
            return Err(SystemError::Shape {
                location: "costs.metric".into(),
                expected: n * n,
                found: costs.metric.len(),
            });
        }
        check_finite_nonneg("costs.metric", &costs.metric)?;
        for a in 0..n {
            if costs.metric[a * n + a] != 0.0 {
                return Err(invalid(
                    format!("costs.metric[{a}][{a}]"),
                    "diagonal must be zero",
                ));
            }
            for b in 0..a {
                if costs.metric[a * n + b] != costs.metric[b * n + a] {
                    return Err(invalid(
                        format!("costs.metric[{a}][{b}]"),
                        "metric must be symmetric",
                    ));
                }
            }
        }

        let feasible = match feasible {
            Some(table) => {
                check_stage_count("feasible", &table, horizon)?;
                for (stage, sets) in table.entries() {
                    let label = stage_label("feasible", stage);
                    if sets.len() != k_count {
                        return Err(SystemError::Shape {
                            location: label,
                            expected: k_count,
                            found: sets.len(),
                        });
                    }
                    for (k, set) in sets.iter().enumerate() {
                        if set.is_empty() {
                            return Err(invalid(format!("{label}[{k}]"), "feasible set is empty"));
                        }
                        if let Some(&bad) = set.iter().find(|&&a| a >= actions.sizes()[k]) {
                            return Err(SystemError::IndexOutOfRange {
                                what: "feasible action",
                                index: bad,
                                limit: actions.sizes()[k],
                            });
                        }
                    }
                }
                table.map(|sets| {
                    sets.iter()
                        .map(|s| {
                            let mut s = s.clone();
                            s.sort_unstable();
                            s.dedup();
                            s
                        })
                        .collect()
                })
            }
            None => StageTable::Stationary(actions.sizes().iter().map(|&a| (0..a).collect()).collect()),
        };

        let delays = delays.unwrap_or_else(|| vec![1; k_count]);
        if delays.len() != k_count {
            return Err(SystemError::Shape {
                location: "delays".into(),
                expected: k_count,
                found: delays.len(),
            });
        }
        if let Some(k) = delays.iter().position(|&d| d == 0) {
            return Err(invalid(format!("delays[{k}]"), "delay must be at least 1"));
        }

        let mut sys = System {
            num_states: n,
            actions,
            observations,
            horizon,
            model,
            actual,
            coupling,
            sensors,
            initial_joint,
            costs,
            feasible,
            delays,
            likelihood: Vec::new(),
            feasible_joint: Vec::new(),
        };
        sys.rebuild_caches();
        Ok(sys)
    }

    fn rebuild_caches(&mut self) {
        let n = self.num_states;
        let ny = self.observations.count();
        self.likelihood = (0..=self.horizon)
            .map(|t| {
                let mut table = vec![0.0; ny * n];
                for y in 0..ny {
                    let digits = self.observations.decode(y);
                    for x in 0..n {
                        table[y * n + x] = digits
                            .iter()
                            .enumerate()
                            .map(|(k, &yk)| self.sensors[k].at(t).row(x)[yk])
                            .product();
                    }
                }
                table
            })
            .collect();
        self.feasible_joint = (0..self.horizon)
            .map(|t| {
                let sets = self.feasible.at(t);
                (0..self.actions.count())
                    .filter(|&u| {
                        self.actions
                            .decode(u)
                            .iter()
                            .zip(sets)
                            .all(|(a, set)| set.binary_search(a).is_ok())
                    })
                    .collect()
            })
            .collect();
    }

    /// Same system with the actual kernel replaced (re-validated).
    pub fn with_actual_kernel(&self, actual: StageTable<TransitionKernel>) -> Result<Self, SystemError> {
        check_transition(
            "actual_kernel",
            &actual,
            self.num_states,
            self.actions.count(),
            self.horizon,
        )?;
        let mut sys = self.clone();
        sys.actual = actual;
        Ok(sys)
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self, SystemError> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(invalid(
                "costs.beta",
                format!("mismatch weight must be a nonnegative finite number, got {beta}"),
            ));
        }
        let mut sys = self.clone();
        sys.costs.beta = beta;
        Ok(sys)
    }

    pub fn with_coupling(&self, coupling: Coupling) -> Self {
        let mut sys = self.clone();
        sys.coupling = coupling;
        sys
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_subsystems(&self) -> usize {
        self.actions.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn coupling(&self) -> Coupling {
        self.coupling
    }

    pub fn action_space(&self) -> &MixedRadix {
        &self.actions
    }

    pub fn observation_space(&self) -> &MixedRadix {
        &self.observations
    }

    pub fn num_joint_actions(&self) -> usize {
        self.actions.count()
    }

    pub fn num_joint_observations(&self) -> usize {
        self.observations.count()
    }

    pub fn initial_joint(&self) -> &[f64] {
        &self.initial_joint
    }

    pub fn costs(&self) -> &CostModel {
        &self.costs
    }

    pub fn delays(&self) -> &[usize] {
        &self.delays
    }

    pub fn model_kernel(&self) -> &StageTable<TransitionKernel> {
        &self.model
    }

    pub fn actual_kernel(&self) -> &StageTable<TransitionKernel> {
        &self.actual
    }

    pub fn sensor(&self, k: usize) -> &StageTable<ObservationKernel> {
        &self.sensors[k]
    }

    /// Feasible joint actions at decision stage `t`, ascending.
    pub fn feasible_joint_actions(&self, t: usize) -> &[usize] {
        &self.feasible_joint[t]
    }

    pub fn feasible_actions(&self, t: usize, k: usize) -> &[usize] {
        &self.feasible.at(t)[k]
    }

    pub fn encode_action(&self, u: &[usize]) -> Result<usize, SystemError> {
        self.actions.encode(u).ok_or(SystemError::IndexOutOfRange {
            what: "joint action",
            index: u.iter().copied().max().unwrap_or(0),
            limit: self.actions.count(),
        })
    }

    pub fn decode_action(&self, u: usize) -> Vec<usize> {
        self.actions.decode(u)
    }

    pub fn encode_observation(&self, y: &[usize]) -> Result<usize, SystemError> {
        self.observations.encode(y).ok_or(SystemError::IndexOutOfRange {
            what: "joint observation",
            index: y.iter().copied().max().unwrap_or(0),
            limit: self.observations.count(),
        })
    }

    pub fn decode_observation(&self, y: usize) -> Vec<usize> {
        self.observations.decode(y)
    }

    /// `p(y^{1:K} | x)` at stage `t` for a joint observation index.
    #[inline]
    pub fn likelihood(&self, t: usize, y: usize, x: usize) -> f64 {
        self.likelihood[t][y * self.num_states + x]
    }

    pub(crate) fn likelihood_row(&self, t: usize, y: usize) -> &[f64] {
        let n = self.num_states;
        &self.likelihood[t][y * n..(y + 1) * n]
    }

    #[inline]
    pub(crate) fn cost(&self, t: usize, x: usize, u: usize) -> f64 {
        self.costs.stage.at(t)[x * self.actions.count() + u]
    }

    #[inline]
    pub(crate) fn metric(&self, x: usize, x_hat: usize) -> f64 {
        self.costs.metric[x * self.num_states + x_hat]
    }

    fn check_stage(&self, t: usize, limit: usize) -> Result<(), SystemError> {
        if t >= limit {
            Err(SystemError::StageOutOfRange { stage: t, limit })
        } else {
            Ok(())
        }
    }

    fn check_state(&self, x: usize) -> Result<(), SystemError> {
        if x >= self.num_states {
            Err(SystemError::IndexOutOfRange {
                what: "state",
                index: x,
                limit: self.num_states,
            })
        } else {
            Ok(())
        }
    }

    fn check_action(&self, u: usize) -> Result<(), SystemError> {
        if u >= self.actions.count() {
            Err(SystemError::IndexOutOfRange {
                what: "joint action",
                index: u,
                limit: self.actions.count(),
            })
        } else {
            Ok(())
        }
    }

    /// Samples `x' ~ P(· | x, u)` for the model; returns the draw used.
    pub fn step_model(
        &self,
        t: usize,
        x: usize,
        u: usize,
        rng: &mut SimRng,
    ) -> Result<(usize, Disturbance), SystemError> {
        self.check_stage(t, self.horizon)?;
        self.check_state(x)?;
        self.check_action(u)?;
        let w: f64 = rng.random();
        Ok((sample_index(self.model.at(t).row(x, u), w), Disturbance(w)))
    }

    /// Samples the actual successor. Under shared coupling the model's draw
    /// is reused; under independent coupling a fresh draw is taken.
    pub fn step_actual(
        &self,
        t: usize,
        x_hat: usize,
        u: usize,
        tag: Disturbance,
        rng: &mut SimRng,
    ) -> Result<usize, SystemError> {
        self.check_stage(t, self.horizon)?;
        self.check_state(x_hat)?;
        self.check_action(u)?;
        let w = match self.coupling {
            Coupling::Shared => tag.0,
            Coupling::Independent => rng.random(),
        };
        Ok(sample_index(self.actual.at(t).row(x_hat, u), w))
    }

    /// Samples `y^k ~ h_t^k(· | x)`. Serves both model and actual sensors.
    pub fn observe(&self, t: usize, k: usize, x: usize, rng: &mut SimRng) -> Result<usize, SystemError> {
        self.check_stage(t, self.horizon + 1)?;
        self.check_state(x)?;
        if k >= self.num_subsystems() {
            return Err(SystemError::IndexOutOfRange {
                what: "subsystem",
                index: k,
                limit: self.num_subsystems(),
            });
        }
        let w: f64 = rng.random();
        Ok(sample_index(self.sensors[k].at(t).row(x), w))
    }

    /// Observations of every subsystem, drawn in subsystem order.
    pub fn observe_all(&self, t: usize, x: usize, rng: &mut SimRng) -> Result<Vec<usize>, SystemError> {
        (0..self.num_subsystems())
            .map(|k| self.observe(t, k, x, rng))
            .collect()
    }

    /// Samples `(X_0, X̂_0)` from the initial joint law.
    pub fn sample_initial(&self, rng: &mut SimRng) -> (usize, usize) {
        let w: f64 = rng.random();
        let idx = sample_index(&self.initial_joint, w);
        (idx / self.num_states, idx % self.num_states)
    }

    pub fn stage_cost(&self, t: usize, x: usize, u: usize) -> Result<f64, SystemError> {
        self.check_stage(t, self.horizon)?;
        self.check_state(x)?;
        self.check_action(u)?;
        Ok(self.cost(t, x, u))
    }

    pub fn terminal_cost(&self, x: usize) -> Result<f64, SystemError> {
        self.check_state(x)?;
        Ok(self.costs.terminal[x])
    }

    /// `β · d(x', x̂')`: the delta-selected squared discrepancy at the realized pair.
    pub fn mismatch_penalty(&self, x_next: usize, x_hat_next: usize) -> Result<f64, SystemError> {
        self.check_state(x_next)?;
        self.check_state(x_hat_next)?;
        Ok(self.costs.beta * self.metric(x_next, x_hat_next))
    }

    /// Law of `(X_{t+1}, X̂_{t+1})` given `(x, x̂, u)` as sparse triples.
    pub fn coupled_transition(&self, t: usize, x: usize, x_hat: usize, u: usize) -> Vec<(usize, usize, f64)> {
        let p = self.model.at(t).row(x, u);
        let q = self.actual.at(t).row(x_hat, u);
        match self.coupling {
            Coupling::Shared => comonotone_coupling(p, q),
            Coupling::Independent => {
                let mut out = Vec::new();
                for (a, &pa) in p.iter().enumerate() {
                    if pa == 0.0 {
                        continue;
                    }
                    for (b, &qb) in q.iter().enumerate() {
                        if qb > 0.0 {
                            out.push((a, b, pa * qb));
                        }
                    }
                }
                out
            }
        }
    }
}

/// Right endpoints of the inverse-transform intervals of `row`.
///
/// Interval `i` is `[end[i-1], end[i])`; the last positive entry's endpoint
/// is pinned to 1 so every draw in `[0, 1)` maps to a positive-mass index.
pub(crate) fn interval_ends(row: &[f64]) -> Vec<f64> {
    let mut ends = Vec::with_capacity(row.len());
    let mut acc = 0.0;
    for &p in row {
        acc += p;
        ends.push(acc);
    }
    if let Some(last) = row.iter().rposition(|&p| p > 0.0) {
        for e in &mut ends[last..] {
            *e = 1.0;
        }
    }
    ends
}

/// Inverse-transform sample: first index whose interval contains `w`.
pub fn sample_index(row: &[f64], w: f64) -> usize {
    let mut acc = 0.0;
    let last = row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1);
    for (i, &p) in row.iter().enumerate().take(last) {
        acc += p;
        if w < acc {
            return i;
        }
    }
    last
}

/// Law of the pair obtained by inverting one uniform draw against both rows.
pub fn comonotone_coupling(p: &[f64], q: &[f64]) -> Vec<(usize, usize, f64)> {
    let ep = interval_ends(p);
    let eq = interval_ends(q);
    let mut out = Vec::new();
    let (mut i, mut j, mut lo) = (0, 0, 0.0);
    while i < ep.len() && j < eq.len() {
        let hi = ep[i].min(eq[j]);
        if hi > lo {
            out.push((i, j, hi - lo));
            lo = hi;
        }
        if ep[i] <= hi {
            i += 1;
        }
        if eq[j] <= hi {
            j += 1;
        }
    }
    out
}
