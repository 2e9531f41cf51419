//! Dynamic program over joint beliefs.
//!
//! ```text
//! V_T(π) = Σ π(x, x̂) c_T(x)
//! V_t(π) = min_u  Σ π(x, x̂) c_t(x, u)
//!               + Σ π⁺(x', x̂') β d(x', x̂')
//!               + Σ_y P(y | π, u) V_{t+1}(φ_t(π, y, u))
//! ```
//!
//! Two representations are offered: exact alpha vectors and a simplex mesh
//! with piecewise-linear interpolation. Strategies are extracted by one-step
//! lookahead against the stored `V_{t+1}`, so they read the belief and
//! nothing else.

pub mod alpha;
pub mod artifact;
mod concavity;
mod evaluate;
pub mod grid;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{init_belief, predict_mass, weigh_mass, JointBelief};
use crate::policy::{Information, Strategy};
use crate::system::System;

pub use alpha::AlphaVector;
pub use concavity::{check_concavity, grid_tolerance, value_span_bounds, ConcavityReport};
pub use evaluate::{evaluate_strategy, Evaluation, EvaluateOptions};
pub use grid::Mesh;

/// Actions whose lookahead values differ by less than this are tied; the
/// smallest joint index wins.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("stage {stage}: value function representation does not match")]
    RepresentationMismatch { stage: usize },
    #[error("stage {found} supplied where stage {expected} was expected")]
    StageMismatch { expected: usize, found: usize },
    #[error("stage {stage}: {count} alpha vectors exceed the limit {limit}")]
    TooManyVectors { stage: usize, count: usize, limit: usize },
    #[error("mesh of resolution {resolution} over {dim} coordinates exceeds {limit} nodes")]
    MeshTooLarge { dim: usize, resolution: usize, limit: usize },
    #[error("history tree exceeds {limit} nodes")]
    TreeTooLarge { limit: usize },
    #[error("strategy chose infeasible joint action {action} at stage {stage}")]
    InfeasibleAction { stage: usize, action: usize },
    #[error("{0}")]
    Simulation(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridValues {
    pub resolution: usize,
    pub values: Vec<f64>,
    /// Greedy joint action at each node; `None` at the terminal stage.
    pub actions: Vec<Option<usize>>,
    #[serde(skip)]
    mesh: Option<Mesh>,
}

impl GridValues {
    /// Node values on `mesh` with no recorded actions.
    pub fn with_mesh(mesh: Mesh, values: Vec<f64>) -> Self {
        Self {
            resolution: mesh.resolution(),
            actions: vec![None; values.len()],
            values,
            mesh: Some(mesh),
        }
    }

    fn mesh(&self, dim: usize) -> Mesh {
        match &self.mesh {
            Some(m) => m.clone(),
            None => Mesh::new(dim, self.resolution, usize::MAX).expect("mesh size was checked when built"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Representation {
    Alpha { vectors: Vec<AlphaVector> },
    Grid(GridValues),
}

/// `V_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub stage: usize,
    pub representation: Representation,
}

impl ValueFunction {
    /// Value at a probability vector over `X × X`.
    pub fn value(&self, belief: &[f64]) -> f64 {
        match &self.representation {
            Representation::Alpha { vectors } => vectors
                .iter()
                .map(|a| a.dot(belief))
                .fold(f64::INFINITY, f64::min),
            Representation::Grid(g) => {
                let mesh = g.mesh.as_ref().expect("mesh attached");
                mesh.interpolate(belief, &g.values)
            }
        }
    }

    /// `z · V(w / z)` for an unnormalized mass `w` with total `z`.
    pub fn value_scaled(&self, mass: &[f64]) -> f64 {
        match &self.representation {
            Representation::Alpha { vectors } => vectors
                .iter()
                .map(|a| a.dot(mass))
                .fold(f64::INFINITY, f64::min),
            Representation::Grid(_) => {
                let z: f64 = mass.iter().sum();
                if z > 0.0 {
                    let b: Vec<f64> = mass.iter().map(|m| m / z).collect();
                    z * self.value(&b)
                } else {
                    0.0
                }
            }
        }
    }

    /// Value at `λ p + (1 − λ) q`.
    ///
    /// Alpha vectors are evaluated on the chord through linearity of each
    /// vector, so the result is exactly the minimum of the mixed inner
    /// products; grids interpolate the mixed belief.
    pub fn value_at_mixture(&self, p: &[f64], q: &[f64], lambda: f64) -> f64 {
        match &self.representation {
            Representation::Alpha { vectors } => vectors
                .iter()
                .map(|a| lambda * a.dot(p) + (1.0 - lambda) * a.dot(q))
                .fold(f64::INFINITY, f64::min),
            Representation::Grid(_) => {
                let mix: Vec<f64> = p.iter().zip(q).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
                self.value(&mix)
            }
        }
    }

    /// Number of belief coordinates, `|X|²`.
    pub fn dim(&self) -> usize {
        match &self.representation {
            Representation::Alpha { vectors } => vectors.first().map_or(0, |a| a.values.len()),
            Representation::Grid(g) => g.mesh.as_ref().map_or(0, Mesh::dim),
        }
    }

    pub fn is_alpha(&self) -> bool {
        matches!(self.representation, Representation::Alpha { .. })
    }

    /// Re-attaches the interpolation mesh after deserialization.
    pub(crate) fn attach(&mut self, dim: usize) {
        if let Representation::Grid(g) = &mut self.representation {
            if g.mesh.is_none() {
                g.mesh = Some(g.mesh(dim));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Method {
    Alpha { max_vectors: usize },
    Grid { resolution: usize },
}

impl Method {
    pub fn alpha() -> Self {
        Method::Alpha { max_vectors: 200_000 }
    }

    /// Finest mesh with at most [`grid::DEFAULT_MAX_NODES`] nodes.
    pub fn default_grid(sys: &System) -> Self {
        let dim = sys.num_states() * sys.num_states();
        Method::Grid {
            resolution: grid::default_resolution(dim, grid::DEFAULT_MAX_NODES),
        }
    }
}

/// Expected stage cost plus mismatch penalty plus expected continuation of
/// playing `u` at belief `π` (stage `t`).
pub fn q_value(sys: &System, t: usize, belief: &[f64], u: usize, next: &ValueFunction) -> f64 {
    let n = sys.num_states();
    let beta = sys.costs().beta;
    let mut q = 0.0;
    for (s, &p) in belief.iter().enumerate() {
        if p != 0.0 {
            q += p * sys.cost(t, s / n, u);
        }
    }
    let pred = predict_mass(sys, t, belief, u);
    if beta != 0.0 {
        q += pred
            .iter()
            .enumerate()
            .map(|(s, &p)| p * beta * sys.metric(s / n, s % n))
            .sum::<f64>();
    }
    for y in 0..sys.num_joint_observations() {
        let mut w = pred.clone();
        let z = weigh_mass(sys, t + 1, &mut w, y);
        if z > 0.0 {
            q += next.value_scaled(&w);
        }
    }
    q
}

/// Lookahead argmin over feasible joint actions, ties to the smallest index.
pub fn greedy_action(sys: &System, t: usize, belief: &[f64], next: &ValueFunction) -> (usize, f64) {
    let mut best: Option<(usize, f64)> = None;
    for &u in sys.feasible_joint_actions(t) {
        let q = q_value(sys, t, belief, u, next);
        if best.is_none_or(|(_, b)| q < b - TIE_TOL) {
            best = Some((u, q));
        }
    }
    best.expect("feasible sets are nonempty")
}

/// `V_T` in the representation selected by `method`.
pub fn terminal_value(sys: &System, method: Method) -> Result<ValueFunction, DpError> {
    let t = sys.horizon();
    let representation = match method {
        Method::Alpha { .. } => Representation::Alpha {
            vectors: alpha::terminal(sys),
        },
        Method::Grid { resolution } => {
            let mesh = build_mesh(sys, resolution)?;
            let n = sys.num_states();
            let values = (0..mesh.len())
                .map(|i| {
                    mesh.node_belief(i)
                        .iter()
                        .enumerate()
                        .map(|(s, p)| p * sys.costs().terminal[s / n])
                        .sum()
                })
                .collect();
            Representation::Grid(GridValues {
                resolution,
                values,
                actions: vec![None; mesh.len()],
                mesh: Some(mesh),
            })
        }
    };
    Ok(ValueFunction { stage: t, representation })
}

fn build_mesh(sys: &System, resolution: usize) -> Result<Mesh, DpError> {
    let dim = sys.num_states() * sys.num_states();
    Mesh::new(dim, resolution, grid::DEFAULT_MAX_NODES.max(1_000_000)).ok_or(DpError::MeshTooLarge {
        dim,
        resolution,
        limit: grid::DEFAULT_MAX_NODES.max(1_000_000),
    })
}

/// One backward step `V_{t+1} ↦ V_t` in the representation of `next`.
pub fn backup(sys: &System, next: &ValueFunction, t: usize, method: Method) -> Result<ValueFunction, DpError> {
    if next.stage != t + 1 {
        return Err(DpError::StageMismatch {
            expected: t + 1,
            found: next.stage,
        });
    }
    let representation = match (method, &next.representation) {
        (Method::Alpha { max_vectors }, Representation::Alpha { vectors }) => {
            let vectors = alpha::backup(sys, t, vectors, max_vectors).map_err(|e| DpError::TooManyVectors {
                stage: t,
                count: e.0,
                limit: max_vectors,
            })?;
            Representation::Alpha { vectors }
        }
        (Method::Grid { resolution }, Representation::Grid(g)) if g.resolution == resolution => {
            let mesh = build_mesh(sys, resolution)?;
            let solved: Vec<(f64, usize)> = (0..mesh.len())
                .into_par_iter()
                .map(|i| {
                    let (u, q) = greedy_action(sys, t, &mesh.node_belief(i), next);
                    (q, u)
                })
                .collect();
            Representation::Grid(GridValues {
                resolution,
                values: solved.iter().map(|s| s.0).collect(),
                actions: solved.iter().map(|s| Some(s.1)).collect(),
                mesh: Some(mesh),
            })
        }
        _ => return Err(DpError::RepresentationMismatch { stage: t }),
    };
    Ok(ValueFunction { stage: t, representation })
}

/// Value functions `V_0..=V_T` and the system they were solved for.
#[derive(Debug, Clone)]
pub struct Solution {
    system: Arc<System>,
    values: Arc<Vec<ValueFunction>>,
    method: Method,
}

impl Solution {
    pub(crate) fn from_parts(system: Arc<System>, values: Vec<ValueFunction>, method: Method) -> Self {
        Self {
            system,
            values: Arc::new(values),
            method,
        }
    }

    pub fn system(&self) -> &System {
        &self.system
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn values(&self) -> &[ValueFunction] {
        &self.values
    }

    pub fn value(&self, t: usize, belief: &JointBelief) -> f64 {
        self.values[t].value(belief.mass())
    }

    /// `E[V_0(Π_0)]`: `V_0` averaged over the stage-0 observation.
    pub fn initial_value(&self) -> f64 {
        let sys = &*self.system;
        let prior = init_belief(sys);
        (0..sys.num_joint_observations())
            .map(|y| {
                let mut w = prior.mass().to_vec();
                if weigh_mass(sys, 0, &mut w, y) > 0.0 {
                    self.values[0].value_scaled(&w)
                } else {
                    0.0
                }
            })
            .sum()
    }

    pub fn strategy(&self) -> SeparatedStrategy {
        SeparatedStrategy {
            system: Arc::clone(&self.system),
            values: Arc::clone(&self.values),
        }
    }
}

/// Backward recursion from `V_T`.
pub fn solve(sys: &System, method: Method) -> Result<Solution, DpError> {
    let mut values = vec![terminal_value(sys, method)?];
    for t in (0..sys.horizon()).rev() {
        let v = backup(sys, values.last().expect("nonempty"), t, method)?;
        values.push(v);
    }
    values.reverse();
    Ok(Solution::from_parts(Arc::new(sys.clone()), values, method))
}

/// Maps beliefs to joint actions by lookahead against the solved values.
/// There is no way to pass it anything but a belief.
#[derive(Debug, Clone)]
pub struct SeparatedStrategy {
    system: Arc<System>,
    values: Arc<Vec<ValueFunction>>,
}

impl SeparatedStrategy {
    /// `g_t(π)`.
    pub fn action(&self, t: usize, belief: &JointBelief) -> usize {
        greedy_action(&self.system, t, belief.mass(), &self.values[t + 1]).0
    }

    /// `g_t^k(π)`: the subsystem-`k` component of the joint action.
    pub fn subsystem_action(&self, t: usize, k: usize, belief: &JointBelief) -> usize {
        self.system.decode_action(self.action(t, belief))[k]
    }
}

impl Strategy for SeparatedStrategy {
    fn decide(&self, info: &Information<'_>) -> usize {
        self.action(info.stage, info.belief)
    }

    fn label(&self) -> String {
        "separated".into()
    }
}
