//! Versioned JSON artifact for solved value functions and a CSV view of the
//! greedy strategy on a mesh.
//!
//! ```json
//! {
//!   "format": "cps-solution",
//!   "version": 1,
//!   "config_hash": "…16 hex digits…",
//!   "seed": 0,
//!   "num_states": 2,
//!   "horizon": 2,
//!   "method": { "method": "alpha", "max_vectors": 200000 },
//!   "initial_value": 1.25,
//!   "values": [
//!     { "stage": 0, "representation": { "kind": "alpha", "vectors": [ { "action": 1, "values": [..] } ] } },
//!     { "stage": 1, "representation": { "kind": "grid", "resolution": 8, "values": [..], "actions": [..] } }
//!   ]
//! }
//! ```
//!
//! Grid values are listed in lexicographic order of the node compositions.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{greedy_action, grid, Method, Representation, Solution, ValueFunction};
use crate::numeric::fmt_sig;
use crate::system::System;

pub const FORMAT: &str = "cps-solution";
pub const VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArtifactError {
    #[error("malformed artifact: {0}")]
    Json(String),
    #[error("unsupported artifact {format} version {version}")]
    Format { format: String, version: u32 },
    #[error("artifact was solved for config {found}, expected {expected}")]
    HashMismatch { expected: String, found: String },
    #[error("artifact does not fit the system: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionArtifact {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    /// Seed of the run that produced the artifact; solving itself is
    /// deterministic.
    #[serde(default)]
    pub seed: u64,
    pub num_states: usize,
    pub horizon: usize,
    pub method: Method,
    pub initial_value: f64,
    pub values: Vec<ValueFunction>,
}

impl Solution {
    pub fn to_artifact(&self, config_hash: &str, seed: u64) -> SolutionArtifact {
        SolutionArtifact {
            format: FORMAT.to_string(),
            version: VERSION,
            config_hash: config_hash.to_string(),
            seed,
            num_states: self.system().num_states(),
            horizon: self.system().horizon(),
            method: self.method(),
            initial_value: self.initial_value(),
            values: self.values().to_vec(),
        }
    }

    pub fn to_json(&self, config_hash: &str, seed: u64) -> String {
        serde_json::to_string_pretty(&self.to_artifact(config_hash, seed)).expect("artifact serializes")
    }

    /// Rebuilds a solution for `sys`; `expected_hash` guards against loading
    /// values solved for another configuration.
    pub fn from_json(text: &str, sys: &System, expected_hash: Option<&str>) -> Result<Solution, ArtifactError> {
        let art: SolutionArtifact = serde_json::from_str(text).map_err(|e| ArtifactError::Json(e.to_string()))?;
        if art.format != FORMAT || art.version != VERSION {
            return Err(ArtifactError::Format {
                format: art.format,
                version: art.version,
            });
        }
        if let Some(h) = expected_hash {
            if h != art.config_hash {
                return Err(ArtifactError::HashMismatch {
                    expected: h.to_string(),
                    found: art.config_hash,
                });
            }
        }
        let n = sys.num_states();
        if art.num_states != n || art.horizon != sys.horizon() || art.values.len() != sys.horizon() + 1 {
            return Err(ArtifactError::Shape(format!(
                "{} states, horizon {}, {} stages",
                art.num_states,
                art.horizon,
                art.values.len()
            )));
        }
        let mut values = art.values;
        for (t, v) in values.iter_mut().enumerate() {
            if v.stage != t {
                return Err(ArtifactError::Shape(format!("stage {} at position {t}", v.stage)));
            }
            match &v.representation {
                Representation::Alpha { vectors } => {
                    if vectors.is_empty() || vectors.iter().any(|a| a.values.len() != n * n) {
                        return Err(ArtifactError::Shape(format!("stage {t}: alpha vector length")));
                    }
                }
                Representation::Grid(g) => {
                    let size = grid::mesh_size(n * n, g.resolution);
                    if size != Some(g.values.len() as u128) || g.actions.len() != g.values.len() {
                        return Err(ArtifactError::Shape(format!("stage {t}: grid node count")));
                    }
                }
            }
            v.attach(n * n);
        }
        Ok(Solution::from_parts(Arc::new(sys.clone()), values, art.method))
    }
}

/// One row per node of a tabulation mesh of `resolution` and per stage: the
/// node, `V_t` there and the greedy joint action (empty at the terminal
/// stage). The tabulation mesh is independent of a grid solution's own mesh,
/// which keeps the table small.
pub fn node_table_csv(solution: &Solution, resolution: usize) -> String {
    let sys = solution.system();
    let n = sys.num_states();
    let mesh = grid::Mesh::new(n * n, resolution, usize::MAX).expect("mesh fits");
    let mut out = String::from("stage,node");
    for x in 0..n {
        for xh in 0..n {
            let _ = write!(out, ",b_{x}_{xh}");
        }
    }
    out.push_str(",value,action\n");
    for (t, v) in solution.values().iter().enumerate() {
        for i in 0..mesh.len() {
            let b = mesh.node_belief(i);
            let action = if t < sys.horizon() {
                greedy_action(sys, t, &b, &solution.values()[t + 1]).0.to_string()
            } else {
                String::new()
            };
            let _ = write!(out, "{t},{i}");
            for p in &b {
                let _ = write!(out, ",{}", fmt_sig(*p));
            }
            let _ = writeln!(out, ",{},{action}", fmt_sig(v.value(&b)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::JointBelief;
    use crate::dp::solve;
    use crate::numeric::rng_from_seed;
    use crate::oracle::instances::{random_system, TinyParams};

    #[test]
    fn round_trip_preserves_values_and_strategy() {
        let sys = random_system(&mut rng_from_seed(21), &TinyParams::default());
        for method in [Method::alpha(), Method::Grid { resolution: 5 }] {
            let sol = solve(&sys, method).unwrap();
            let json = sol.to_json("abc", 0);
            let back = Solution::from_json(&json, &sys, Some("abc")).unwrap();
            assert_eq!(back.values(), sol.values());
            let b = JointBelief::new(2, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
            assert_eq!(back.strategy().action(1, &b), sol.strategy().action(1, &b));
            assert_eq!(back.initial_value(), sol.initial_value());
            assert!(matches!(
                Solution::from_json(&json, &sys, Some("other")),
                Err(ArtifactError::HashMismatch { .. })
            ));
        }
    }

    #[test]
    fn rejects_wrong_format_and_shape() {
        let sys = random_system(&mut rng_from_seed(22), &TinyParams::default());
        let sol = solve(&sys, Method::alpha()).unwrap();
        let json = sol.to_json("h", 0).replace("cps-solution", "other");
        assert!(matches!(Solution::from_json(&json, &sys, None), Err(ArtifactError::Format { .. })));
        let longer = random_system(&mut rng_from_seed(22), &TinyParams { horizon: 3, ..Default::default() });
        assert!(matches!(
            Solution::from_json(&sol.to_json("h", 0), &longer, None),
            Err(ArtifactError::Shape(_))
        ));
        assert!(matches!(Solution::from_json("{", &sys, None), Err(ArtifactError::Json(_))));
    }

    #[test]
    fn csv_has_one_row_per_node_and_stage() {
        let sys = random_system(&mut rng_from_seed(23), &TinyParams::default());
        let sol = solve(&sys, Method::alpha()).unwrap();
        let csv = node_table_csv(&sol, 2);
        // 10 nodes for 4 coordinates at resolution 2, stages 0..=2
        assert_eq!(csv.lines().count(), 1 + 3 * 10);
        assert!(csv.starts_with("stage,node,b_0_0,b_0_1,b_1_0,b_1_1,value,action"));
        assert!(csv.lines().last().unwrap().ends_with(','));
    }
}
