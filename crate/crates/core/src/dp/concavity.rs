//! Empirical concavity check of a value function.
//!
//! Grid tolerance. For a true value function with alpha entries in
//! `[lo_s, hi_s]`, `|V_s(π) − V_s(π')| ≤ ½ (hi_s − lo_s) ‖π − π'‖₁`, and any
//! two vertices of a mesh cell are at most `D / m` apart in `ℓ₁` (`D = |X|²`).
//! Interpolation therefore perturbs `V_s` by at most `½ span_s · D / m`, the
//! backup is nonexpansive in the sup norm, and the errors add up over the
//! remaining stages: `|V_t^grid − V_t| ≤ e_t = Σ_{s=t}^{T−1} ½ span_s · D / m`.
//! A function within `e_t` of a concave one violates the chord inequality by
//! at most `2 e_t`, which is the tolerance used.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::ValueFunction;
use crate::numeric::SimRng;
use crate::system::System;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcavityReport {
    pub trials: usize,
    pub violations: usize,
    /// Largest observed `λV(π₁) + (1−λ)V(π₂) − V(λπ₁ + (1−λ)π₂)`; negative
    /// or zero when no chord lies above the function.
    pub max_defect: f64,
    pub tolerance: f64,
}

/// `hi_t − lo_t` for `t = 0..=T`, where `[lo_t, hi_t]` contains every
/// expected cost-to-go from stage `t`.
pub fn value_span_bounds(sys: &System) -> Vec<f64> {
    let n = sys.num_states();
    let nu = sys.num_joint_actions();
    let t_max = sys.horizon();
    let terminal = &sys.costs().terminal;
    let tmin = terminal.iter().copied().fold(f64::INFINITY, f64::min);
    let tmax = terminal.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let dmax = sys.costs().metric.iter().copied().fold(0.0, f64::max);
    let mut lo = tmin;
    let mut hi = tmax;
    let mut spans = vec![hi - lo];
    for t in (0..t_max).rev() {
        let stage: Vec<f64> = (0..n)
            .flat_map(|x| (0..nu).map(move |u| (x, u)))
            .map(|(x, u)| sys.cost(t, x, u))
            .collect();
        lo += stage.iter().copied().fold(f64::INFINITY, f64::min);
        hi += stage.iter().copied().fold(f64::NEG_INFINITY, f64::max) + sys.costs().beta * dmax;
        spans.push(hi - lo);
    }
    spans.reverse();
    spans
}

/// Chord-inequality tolerance for the stage-`t` grid value function.
pub fn grid_tolerance(sys: &System, t: usize, resolution: usize) -> f64 {
    let d = (sys.num_states() * sys.num_states()) as f64;
    let spans = value_span_bounds(sys);
    (t..sys.horizon()).map(|s| spans[s] * d / resolution as f64).sum()
}

fn random_belief(rng: &mut SimRng, dim: usize) -> Vec<f64> {
    loop {
        let sparse = rng.random_bool(0.2);
        let mut v: Vec<f64> = (0..dim)
            .map(|_| {
                if sparse && rng.random_bool(0.5) {
                    0.0
                } else {
                    Exp1.sample(rng)
                }
            })
            .collect();
        let z: f64 = v.iter().sum();
        if z > 0.0 {
            v.iter_mut().for_each(|x| *x /= z);
            return v;
        }
    }
}

/// Relative allowance for floating-point rounding in the chord comparison.
pub const ROUNDING_SLACK: f64 = 1e-12;

/// Samples `(π₁, π₂, λ)` with Dirichlet(1) beliefs (occasionally on a face)
/// and counts chord violations beyond `tolerance` plus rounding slack.
pub fn check_concavity(v: &ValueFunction, trials: usize, rng: &mut SimRng, tolerance: f64) -> ConcavityReport {
    let dim = v.dim();
    let mut violations = 0;
    let mut max_defect = f64::NEG_INFINITY;
    for _ in 0..trials {
        let p = random_belief(rng, dim);
        let q = random_belief(rng, dim);
        let lambda: f64 = rng.random();
        let chord = lambda * v.value(&p) + (1.0 - lambda) * v.value(&q);
        let defect = chord - v.value_at_mixture(&p, &q, lambda);
        max_defect = max_defect.max(defect);
        if defect > tolerance + ROUNDING_SLACK * chord.abs().max(1.0) {
            violations += 1;
        }
    }
    ConcavityReport {
        trials,
        violations,
        max_defect,
        tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{solve, AlphaVector, Method, Representation};
    use crate::numeric::rng_from_seed;
    use crate::oracle::instances::{random_system, TinyParams};

    #[test]
    fn linear_function_has_zero_defect() {
        let v = ValueFunction {
            stage: 0,
            representation: Representation::Alpha {
                vectors: vec![AlphaVector {
                    action: None,
                    values: vec![0.3, -1.0, 2.5, 0.0],
                }],
            },
        };
        let r = check_concavity(&v, 2000, &mut rng_from_seed(1), 0.0);
        assert_eq!(r.violations, 0);
        assert!(r.max_defect.abs() < 1e-12);
    }

    #[test]
    fn alpha_values_never_violate() {
        let mut rng = rng_from_seed(8);
        let sys = random_system(&mut rng, &TinyParams::default());
        let sol = solve(&sys, Method::alpha()).unwrap();
        for v in sol.values() {
            assert_eq!(check_concavity(v, 2000, &mut rng, 0.0).violations, 0);
        }
    }

    #[test]
    fn spans_grow_backward() {
        let sys = random_system(&mut rng_from_seed(3), &TinyParams::default());
        let s = value_span_bounds(&sys);
        assert_eq!(s.len(), 3);
        assert!(s[0] >= s[1] && s[1] >= s[2] && s[2] >= 0.0);
        assert_eq!(grid_tolerance(&sys, 2, 10), 0.0);
    }

    #[test]
    fn convex_function_is_flagged() {
        // A grid interpolating the convex function Σ π² violates concavity.
        let mesh = crate::dp::Mesh::new(4, 4, 1000).unwrap();
        let values = (0..mesh.len())
            .map(|i| mesh.node_belief(i).iter().map(|p| p * p).sum())
            .collect();
        let v = ValueFunction {
            stage: 0,
            representation: Representation::Grid(crate::dp::GridValues::with_mesh(mesh, values)),
        };
        let r = check_concavity(&v, 500, &mut rng_from_seed(2), 0.0);
        assert!(r.violations > 0);
    }
}
