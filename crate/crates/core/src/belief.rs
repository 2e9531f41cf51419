//! Joint information state over (model state, actual state) and its
//! strategy-independent recursive update.
//!
//! ```text
//! π⁺(x', x̂')  = Σ_{x, x̂} P(x', x̂' | x, x̂, u) π(x, x̂)
//! π'(x', x̂') ∝ p(y | x') π⁺(x', x̂')
//! ```
//!
//! `P(x', x̂' | x, x̂, u)` is the coupled kernel of [`System::coupled_transition`].
//! The likelihood only reads the model component `x'`. None of these functions
//! accepts a strategy: the update is a function of `(π, u, y)` alone.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::system::System;

/// Normalization tolerance for beliefs.
pub const BELIEF_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("impossible observation under current belief (stage {stage}, action {action}, observation {observation})")]
    ImpossibleObservation {
        stage: usize,
        action: usize,
        observation: usize,
    },
    #[error("stage {stage} has no transition (horizon {horizon})")]
    StageOutOfRange { stage: usize, horizon: usize },
    #[error("invalid belief: {0}")]
    Invalid(String),
}

/// `Π_t`: a probability mass over `X × X`, row-major `[x][x̂]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointBelief {
    states: usize,
    stage: usize,
    mass: Vec<f64>,
}

impl JointBelief {
    pub fn new(states: usize, stage: usize, mass: Vec<f64>) -> Result<Self, FilterError> {
        if mass.len() != states * states {
            return Err(FilterError::Invalid(format!(
                "expected {} entries, found {}",
                states * states,
                mass.len()
            )));
        }
        if mass.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(FilterError::Invalid("entries must be finite and nonnegative".into()));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > BELIEF_TOL {
            return Err(FilterError::Invalid(format!("total mass {total} ≠ 1")));
        }
        Ok(Self { states, stage, mass })
    }

    pub(crate) fn from_parts_unchecked(states: usize, stage: usize, mass: Vec<f64>) -> Self {
        Self { states, stage, mass }
    }

    pub fn point_mass(states: usize, stage: usize, x: usize, x_hat: usize) -> Self {
        let mut mass = vec![0.0; states * states];
        mass[x * states + x_hat] = 1.0;
        Self { states, stage, mass }
    }

    pub fn uniform(states: usize, stage: usize) -> Self {
        let m = 1.0 / (states * states) as f64;
        Self {
            states,
            stage,
            mass: vec![m; states * states],
        }
    }

    /// Product law `p ⊗ q`.
    pub fn product(p: &[f64], q: &[f64], stage: usize) -> Result<Self, FilterError> {
        if p.len() != q.len() {
            return Err(FilterError::Invalid("marginals differ in length".into()));
        }
        let mass = p.iter().flat_map(|a| q.iter().map(move |b| a * b)).collect();
        Self::new(p.len(), stage, mass)
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn get(&self, x: usize, x_hat: usize) -> f64 {
        self.mass[x * self.states + x_hat]
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// (model marginal, actual marginal).
    pub fn marginals(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.states;
        let mut model = vec![0.0; n];
        let mut actual = vec![0.0; n];
        for x in 0..n {
            for xh in 0..n {
                let m = self.mass[x * n + xh];
                model[x] += m;
                actual[xh] += m;
            }
        }
        (model, actual)
    }
}

/// `Π_0`: the initial joint law of `(X_0, X̂_0)`.
pub fn init_belief(sys: &System) -> JointBelief {
    JointBelief::from_parts_unchecked(sys.num_states(), 0, sys.initial_joint().to_vec())
}

pub(crate) fn predict_mass(sys: &System, t: usize, mass: &[f64], u: usize) -> Vec<f64> {
    let n = sys.num_states();
    let mut out = vec![0.0; n * n];
    for x in 0..n {
        for xh in 0..n {
            let m = mass[x * n + xh];
            if m == 0.0 {
                continue;
            }
            for (a, b, p) in sys.coupled_transition(t, x, xh, u) {
                out[a * n + b] += m * p;
            }
        }
    }
    out
}

/// Multiplies by `p(y | x)` at stage `t`; returns the normalizer.
pub(crate) fn weigh_mass(sys: &System, t: usize, mass: &mut [f64], y: usize) -> f64 {
    let n = sys.num_states();
    let lik = sys.likelihood_row(t, y);
    let mut z = 0.0;
    for x in 0..n {
        for xh in 0..n {
            let v = &mut mass[x * n + xh];
            *v *= lik[x];
            z += *v;
        }
    }
    z
}

/// Pre-observation pushforward `π⁺` (stage advances by one).
pub fn predict(sys: &System, belief: &JointBelief, u: usize) -> Result<JointBelief, FilterError> {
    let t = belief.stage;
    if t >= sys.horizon() {
        return Err(FilterError::StageOutOfRange {
            stage: t,
            horizon: sys.horizon(),
        });
    }
    let mass = predict_mass(sys, t, &belief.mass, u);
    Ok(JointBelief::from_parts_unchecked(belief.states, t + 1, mass))
}

/// Bayes correction by the joint observation `y` at the belief's own stage.
pub fn condition(sys: &System, belief: &JointBelief, y: usize, action: usize) -> Result<JointBelief, FilterError> {
    let mut mass = belief.mass.clone();
    let z = weigh_mass(sys, belief.stage, &mut mass, y);
    if !(z > 0.0) {
        return Err(FilterError::ImpossibleObservation {
            stage: belief.stage,
            action,
            observation: y,
        });
    }
    mass.iter_mut().for_each(|m| *m /= z);
    Ok(JointBelief::from_parts_unchecked(belief.states, belief.stage, mass))
}

/// Conditions the initial belief on the stage-0 joint observation.
pub fn condition_initial(sys: &System, y: usize) -> Result<JointBelief, FilterError> {
    condition(sys, &init_belief(sys), y, usize::MAX)
}

/// `φ_t(π, y_{t+1}, u_t)`: predict then correct.
pub fn update(sys: &System, belief: &JointBelief, u: usize, y: usize) -> Result<JointBelief, FilterError> {
    let pred = predict(sys, belief, u)?;
    let mut mass = pred.mass;
    let z = weigh_mass(sys, pred.stage, &mut mass, y);
    if !(z > 0.0) {
        return Err(FilterError::ImpossibleObservation {
            stage: belief.stage,
            action: u,
            observation: y,
        });
    }
    mass.iter_mut().for_each(|m| *m /= z);
    Ok(JointBelief::from_parts_unchecked(belief.states, pred.stage, mass))
}

/// `P(y | π)` for a belief at the stage the observation is taken.
pub fn observation_probability(sys: &System, belief: &JointBelief, y: usize) -> f64 {
    let n = sys.num_states();
    let lik = sys.likelihood_row(belief.stage, y);
    (0..n)
        .map(|x| lik[x] * belief.mass[x * n..(x + 1) * n].iter().sum::<f64>())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RawSystem;
    use crate::numeric::rng_from_seed;
    use crate::system::{Coupling, CostModel, ObservationKernel, StageTable, SystemParts, TransitionKernel};
    use proptest::prelude::*;
    use rand::Rng;

    fn sys2(model: [[f64; 2]; 2], actual: [[f64; 2]; 2], sensor: [[f64; 2]; 2]) -> System {
        let kern = |r: [[f64; 2]; 2]| {
            StageTable::Stationary(TransitionKernel::from_nested(&[vec![r[0].to_vec()], vec![r[1].to_vec()]]))
        };
        System::new(SystemParts {
            num_states: 2,
            actions: vec![1],
            observations: vec![2],
            horizon: 3,
            model: kern(model),
            actual: kern(actual),
            coupling: Coupling::Shared,
            sensors: vec![StageTable::Stationary(ObservationKernel::from_nested(&[
                sensor[0].to_vec(),
                sensor[1].to_vec(),
            ]))],
            initial_joint: vec![0.25; 4],
            costs: CostModel {
                stage: StageTable::Stationary(vec![0.0, 0.0]),
                terminal: vec![0.0, 0.0],
                beta: 0.0,
                metric: vec![0.0, 1.0, 1.0, 0.0],
            },
            feasible: None,
            delays: None,
        })
        .unwrap()
    }

    #[test]
    fn init_matches_initial_joint() {
        let s = sys2([[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(init_belief(&s), JointBelief::uniform(2, 0));
        let mut raw = RawSystem::from_system(&s);
        raw.initial_joint = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        let s = raw.validate().unwrap();
        assert_eq!(init_belief(&s), JointBelief::point_mass(2, 0, 0, 0));
        let prod = JointBelief::product(&[0.2, 0.8], &[0.5, 0.5], 0).unwrap();
        assert_eq!(prod.mass(), &[0.1, 0.1, 0.4, 0.4]);
    }

    #[test]
    fn identity_kernels_leave_belief_unchanged() {
        let s = sys2([[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]], [[0.5, 0.5], [0.5, 0.5]]);
        let b = JointBelief::new(2, 0, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(predict(&s, &b, 0).unwrap().mass(), b.mass());
    }

    #[test]
    fn point_mass_moves_to_images() {
        let s = sys2([[0.0, 1.0], [1.0, 0.0]], [[1.0, 0.0], [1.0, 0.0]], [[0.5, 0.5], [0.5, 0.5]]);
        let b = JointBelief::point_mass(2, 0, 0, 1);
        assert_eq!(predict(&s, &b, 0).unwrap(), JointBelief::point_mass(2, 1, 1, 0));
    }

    #[test]
    fn predict_matches_hand_enumeration() {
        // model rows p0=(0.3,0.7), p1=(0.6,0.4); actual rows q0=(0.5,0.5), q1=(0.9,0.1)
        // comonotone couplings (interval intersections of one uniform):
        //  (0,0): p0 vs q0 -> (0,0)0.3 (1,0)0.2 (1,1)0.5
        //  (0,1): p0 vs q1 -> (0,0)0.3 (1,0)0.6 (1,1)0.1
        //  (1,0): p1 vs q0 -> (0,0)0.5 (0,1)0.1 (1,1)0.4
        //  (1,1): p1 vs q1 -> (0,0)0.6 (1,0)0.3 (1,1)0.1
        // uniform prior 1/4 each.
        let expected = [
            (0.3 + 0.3 + 0.5 + 0.6) / 4.0,
            0.1 / 4.0,
            (0.2 + 0.6 + 0.3) / 4.0,
            (0.5 + 0.1 + 0.4 + 0.1) / 4.0,
        ];
        let s = sys2([[0.3, 0.7], [0.6, 0.4]], [[0.5, 0.5], [0.9, 0.1]], [[0.9, 0.1], [0.1, 0.9]]);
        let pred = predict(&s, &init_belief(&s), 0).unwrap();
        for i in 0..4 {
            assert!((pred.mass()[i] - expected[i]).abs() < 1e-15, "{i}");
        }

        // posterior for y=1 with sensor (0.9,0.1)/(0.1,0.9): likelihood on x' only
        let lik = [0.1, 0.1, 0.9, 0.9];
        let unnorm: Vec<f64> = (0..4).map(|i| expected[i] * lik[i]).collect();
        let z: f64 = unnorm.iter().sum();
        let post = update(&s, &init_belief(&s), 0, 1).unwrap();
        for i in 0..4 {
            assert!((post.mass()[i] - unnorm[i] / z).abs() < 1e-15);
        }
    }

    #[test]
    fn noiseless_observation_selects_row() {
        let s = sys2([[0.3, 0.7], [0.6, 0.4]], [[0.5, 0.5], [0.9, 0.1]], [[1.0, 0.0], [0.0, 1.0]]);
        let post = update(&s, &init_belief(&s), 0, 1).unwrap();
        assert_eq!(post.get(0, 0), 0.0);
        assert_eq!(post.get(0, 1), 0.0);
        assert!((post.get(1, 0) + post.get(1, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uninformative_sensor_update_equals_predict() {
        let s = sys2([[0.3, 0.7], [0.6, 0.4]], [[0.5, 0.5], [0.9, 0.1]], [[0.5, 0.5], [0.5, 0.5]]);
        let b = init_belief(&s);
        let p = predict(&s, &b, 0).unwrap();
        let u = update(&s, &b, 0, 0).unwrap();
        for (a, c) in p.mass().iter().zip(u.mass()) {
            assert!((a - c).abs() < 1e-15);
        }
    }

    #[test]
    fn impossible_observation_is_an_error() {
        let s = sys2([[1.0, 0.0], [1.0, 0.0]], [[1.0, 0.0], [1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]]);
        let err = update(&s, &init_belief(&s), 0, 1).unwrap_err();
        assert_eq!(
            err,
            FilterError::ImpossibleObservation {
                stage: 0,
                action: 0,
                observation: 1
            }
        );
    }

    #[test]
    fn predict_past_horizon_fails() {
        let s = sys2([[1.0, 0.0], [1.0, 0.0]], [[1.0, 0.0], [1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]]);
        let b = JointBelief::uniform(2, 3);
        assert!(matches!(predict(&s, &b, 0), Err(FilterError::StageOutOfRange { .. })));
    }

    #[test]
    fn marginals_of_product_diagonal_and_point() {
        let p = [0.2, 0.8];
        let q = [0.6, 0.4];
        let (a, b) = JointBelief::product(&p, &q, 0).unwrap().marginals();
        for i in 0..2 {
            assert!((a[i] - p[i]).abs() < 1e-15 && (b[i] - q[i]).abs() < 1e-15);
        }
        let (a, b) = JointBelief::point_mass(3, 0, 2, 1).marginals();
        assert_eq!(a, vec![0.0, 0.0, 1.0]);
        assert_eq!(b, vec![0.0, 1.0, 0.0]);
        let diag = JointBelief::new(2, 0, vec![0.3, 0.0, 0.0, 0.7]).unwrap();
        let (a, b) = diag.marginals();
        assert_eq!(a, b);
    }

    #[test]
    fn likelihood_ignores_actual_component() {
        // Changing the actual kernel changes π⁺ but not P(y | π).
        let a = sys2([[0.3, 0.7], [0.6, 0.4]], [[0.5, 0.5], [0.9, 0.1]], [[0.8, 0.2], [0.3, 0.7]]);
        let b = sys2([[0.3, 0.7], [0.6, 0.4]], [[0.1, 0.9], [0.2, 0.8]], [[0.8, 0.2], [0.3, 0.7]]);
        let pa = predict(&a, &init_belief(&a), 0).unwrap();
        let pb = predict(&b, &init_belief(&b), 0).unwrap();
        assert_ne!(pa.mass(), pb.mass());
        for y in 0..2 {
            let d = observation_probability(&a, &pa, y) - observation_probability(&b, &pb, y);
            assert!(d.abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn predict_and_update_stay_normalized(seed in any::<u64>()) {
            let mut rng = rng_from_seed(seed);
            let sys = crate::oracle::instances::random_system(&mut rng, &crate::oracle::instances::TinyParams {
                states: 3, subsystems: 2, actions: 2, observations: 2, horizon: 2,
            });
            let mut mass: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
            let z: f64 = mass.iter().sum();
            mass.iter_mut().for_each(|m| *m /= z);
            let b = JointBelief::new(3, 0, mass).unwrap();
            let u = rng.random_range(0..sys.num_joint_actions());
            let p = predict(&sys, &b, u).unwrap();
            prop_assert!((p.total() - 1.0).abs() < BELIEF_TOL);
            for y in 0..sys.num_joint_observations() {
                match update(&sys, &b, u, y) {
                    Ok(post) => prop_assert!((post.total() - 1.0).abs() < BELIEF_TOL),
                    Err(FilterError::ImpossibleObservation { .. }) => {
                        prop_assert_eq!(observation_probability(&sys, &p, y), 0.0)
                    }
                    Err(e) => return Err(TestCaseError::fail(e.to_string())),
                }
            }
        }
    }
}
