//! Exact backup of piecewise-linear concave value functions.
//!
//! For each joint action the stage value is `r_u ⊕ (⊕_y G_{u,y})` where
//! `r_u` collects the expected stage cost and mismatch penalty and
//! `G_{u,y}` back-projects the next-stage vectors through the coupled kernel
//! and the likelihood of `y`. Cross sums are pruned after every step
//! (incremental pruning) by pairwise dominance.

use serde::{Deserialize, Serialize};

use crate::system::System;

/// Two vectors closer than this in every coordinate are treated as equal.
pub const DOMINANCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaVector {
    /// Joint action that generated the vector; `None` for the terminal stage.
    pub action: Option<usize>,
    /// Entries over `X × X`, row-major `[x][x̂]`.
    pub values: Vec<f64>,
}

impl AlphaVector {
    pub fn dot(&self, mass: &[f64]) -> f64 {
        self.values.iter().zip(mass).map(|(a, p)| a * p).sum()
    }
}

/// Removes vectors dominated (componentwise `≥` up to tolerance) by another.
/// The first of two near-equal vectors is kept.
pub fn prune(vectors: Vec<AlphaVector>) -> Vec<AlphaVector> {
    let mut kept: Vec<AlphaVector> = Vec::with_capacity(vectors.len());
    for c in vectors {
        let dominated = kept
            .iter()
            .any(|k| k.values.iter().zip(&c.values).all(|(a, b)| *a <= b + DOMINANCE_TOL));
        if dominated {
            continue;
        }
        kept.retain(|k| !c.values.iter().zip(&k.values).all(|(a, b)| *a <= b + DOMINANCE_TOL));
        kept.push(c);
    }
    kept
}

pub(crate) fn terminal(sys: &System) -> Vec<AlphaVector> {
    let n = sys.num_states();
    let values = (0..n * n).map(|i| sys.costs().terminal[i / n]).collect();
    vec![AlphaVector { action: None, values }]
}

/// Error raised when a cross sum would exceed the vector limit.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Overflow(pub usize);

pub(crate) fn backup(sys: &System, t: usize, next: &[AlphaVector], limit: usize) -> Result<Vec<AlphaVector>, Overflow> {
    let n = sys.num_states();
    let n2 = n * n;
    let beta = sys.costs().beta;
    let mut all = Vec::new();
    for &u in sys.feasible_joint_actions(t) {
        let transitions: Vec<Vec<(usize, usize, f64)>> = (0..n2)
            .map(|s| sys.coupled_transition(t, s / n, s % n, u))
            .collect();
        let reward: Vec<f64> = (0..n2)
            .map(|s| {
                sys.cost(t, s / n, u)
                    + transitions[s]
                        .iter()
                        .map(|&(a, b, p)| p * beta * sys.metric(a, b))
                        .sum::<f64>()
            })
            .collect();
        let mut acc = vec![AlphaVector {
            action: Some(u),
            values: reward,
        }];
        for y in 0..sys.num_joint_observations() {
            let lik = sys.likelihood_row(t + 1, y);
            let projected: Vec<AlphaVector> = next
                .iter()
                .map(|alpha| AlphaVector {
                    action: Some(u),
                    values: (0..n2)
                        .map(|s| {
                            transitions[s]
                                .iter()
                                .map(|&(a, b, p)| p * lik[a] * alpha.values[a * n + b])
                                .sum()
                        })
                        .collect(),
                })
                .collect();
            let projected = prune(projected);
            if acc.len().saturating_mul(projected.len()) > limit {
                return Err(Overflow(acc.len() * projected.len()));
            }
            let mut sums = Vec::with_capacity(acc.len() * projected.len());
            for a in &acc {
                for g in &projected {
                    sums.push(AlphaVector {
                        action: Some(u),
                        values: a.values.iter().zip(&g.values).map(|(x, y)| x + y).collect(),
                    });
                }
            }
            acc = prune(sums);
        }
        all.extend(acc);
    }
    let all = prune(all);
    if all.len() > limit {
        return Err(Overflow(all.len()));
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(values: &[f64]) -> AlphaVector {
        AlphaVector {
            action: None,
            values: values.to_vec(),
        }
    }

    #[test]
    fn prune_drops_dominated_and_duplicates() {
        let out = prune(vec![v(&[1.0, 2.0]), v(&[0.5, 2.0]), v(&[0.5, 2.0]), v(&[2.0, 0.0]), v(&[3.0, 3.0])]);
        assert_eq!(out, vec![v(&[0.5, 2.0]), v(&[2.0, 0.0])]);
    }

    #[test]
    fn prune_keeps_crossing_vectors() {
        let out = prune(vec![v(&[0.0, 1.0]), v(&[1.0, 0.0]), v(&[0.6, 0.6])]);
        assert_eq!(out.len(), 3);
    }
}
