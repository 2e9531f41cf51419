//! TOML system description files.
//!
//! ```toml
//! num_states = 2
//! horizon = 2
//! actions = [2]            # |U^k| per subsystem
//! observations = [2]       # |Y^k| per subsystem
//! coupling = "shared"      # or "independent"; default "shared"
//! delays = [1]             # optional, sharing delay per subsystem (default 1)
//! initial_joint = [[0.25, 0.25], [0.25, 0.25]]   # [x][x_hat]
//!
//! [model_kernel]           # [x][u][x'], u = joint action index
//! stationary = [[[0.9, 0.1], [0.2, 0.8]], [[0.3, 0.7], [0.5, 0.5]]]
//!
//! [actual_kernel]
//! stages = [ ... ]         # one [x][u][x'] tensor per stage 0..T-1
//!
//! [[observation_kernel]]   # one table per subsystem, [x][y]
//! stationary = [[0.9, 0.1], [0.1, 0.9]]
//!
//! [costs]
//! beta = 1.0
//! terminal = [0.0, 1.0]
//! metric = [[0.0, 1.0], [1.0, 0.0]]   # optional, default (i - j)^2
//! stage = { stationary = [[0.0, 0.5], [1.0, 1.5]] }   # [x][u]
//!
//! [feasible]               # optional, [k] -> allowed actions
//! stationary = [[0, 1]]
//! ```
//!
//! Every table is either `stationary` (one for all stages) or `stages`
//! (explicit list). Observation tables cover stages 0..=T, all others 0..T-1.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::system::{
    CostModel, Coupling, ObservationKernel, StageTable, System, SystemError, SystemParts,
    TransitionKernel,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(#[from] SystemError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawStaged<T> {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stationary: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<Vec<T>>,
}

impl<T: Clone> RawStaged<T> {
    fn resolve(&self, field: &str) -> Result<StageTable<T>, SystemError> {
        match (&self.stationary, &self.stages) {
            (Some(v), None) => Ok(StageTable::Stationary(v.clone())),
            (None, Some(v)) => Ok(StageTable::PerStage(v.clone())),
            _ => Err(SystemError::Invalid {
                field: field.to_string(),
                reason: "exactly one of `stationary` or `stages` must be given".into(),
            }),
        }
    }

    fn from_table<S>(table: &StageTable<S>, f: impl Fn(&S) -> T) -> Self {
        match table {
            StageTable::Stationary(v) => Self {
                stationary: Some(f(v)),
                stages: None,
            },
            StageTable::PerStage(v) => Self {
                stationary: None,
                stages: Some(v.iter().map(f).collect()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawCosts {
    pub beta: f64,
    pub terminal: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Vec<Vec<f64>>>,
    pub stage: RawStaged<Vec<Vec<f64>>>,
}

/// Serialized form of a [`System`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSystem {
    pub num_states: usize,
    pub horizon: usize,
    pub actions: Vec<usize>,
    pub observations: Vec<usize>,
    #[serde(default)]
    pub coupling: Coupling,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delays: Option<Vec<usize>>,
    pub initial_joint: Vec<Vec<f64>>,
    pub model_kernel: RawStaged<Vec<Vec<Vec<f64>>>>,
    pub actual_kernel: RawStaged<Vec<Vec<Vec<f64>>>>,
    pub observation_kernel: Vec<RawStaged<Vec<Vec<f64>>>>,
    pub costs: RawCosts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasible: Option<RawStaged<Vec<Vec<usize>>>>,
}

fn check_rect<T>(location: &str, rows: &[Vec<T>], width: usize) -> Result<(), SystemError> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(SystemError::Shape {
                location: format!("{location}[{i}]"),
                expected: width,
                found: r.len(),
            });
        }
    }
    Ok(())
}

fn transition(
    name: &str,
    raw: &RawStaged<Vec<Vec<Vec<f64>>>>,
    n: usize,
    nu: usize,
) -> Result<StageTable<TransitionKernel>, SystemError> {
    let table = raw.resolve(name)?;
    for (t, tensor) in stage_iter(&table) {
        let loc = stage_loc(name, t);
        if tensor.len() != n {
            return Err(SystemError::Shape {
                location: loc,
                expected: n,
                found: tensor.len(),
            });
        }
        check_rect(&loc, tensor, nu)?;
        for (x, per_u) in tensor.iter().enumerate() {
            check_rect(&format!("{loc}[{x}]"), per_u, n)?;
        }
    }
    Ok(table.map(|t| TransitionKernel::from_nested(t)))
}

fn stage_iter<T>(table: &StageTable<T>) -> Vec<(Option<usize>, &T)> {
    match table {
        StageTable::Stationary(v) => vec![(None, v)],
        StageTable::PerStage(v) => v.iter().enumerate().map(|(t, x)| (Some(t), x)).collect(),
    }
}

fn stage_loc(name: &str, t: Option<usize>) -> String {
    match t {
        Some(t) => format!("{name}.stages[{t}]"),
        None => format!("{name}.stationary"),
    }
}

impl RawSystem {
    /// Checks every invariant and builds the [`System`].
    pub fn validate(&self) -> Result<System, SystemError> {
        let n = self.num_states;
        let nu: usize = self.actions.iter().product();
        if self.initial_joint.len() != n {
            return Err(SystemError::Shape {
                location: "initial_joint".into(),
                expected: n,
                found: self.initial_joint.len(),
            });
        }
        check_rect("initial_joint", &self.initial_joint, n)?;
        let model = transition("model_kernel", &self.model_kernel, n, nu)?;
        let actual = transition("actual_kernel", &self.actual_kernel, n, nu)?;

        let mut sensors = Vec::with_capacity(self.observation_kernel.len());
        for (k, raw) in self.observation_kernel.iter().enumerate() {
            let name = format!("observation_kernel[{k}]");
            let table = raw.resolve(&name)?;
            let ny = self.observations.get(k).copied().unwrap_or(0);
            for (t, rows) in stage_iter(&table) {
                let loc = stage_loc(&name, t);
                if rows.len() != n {
                    return Err(SystemError::Shape {
                        location: loc,
                        expected: n,
                        found: rows.len(),
                    });
                }
                check_rect(&loc, rows, ny)?;
            }
            sensors.push(table.map(|rows| ObservationKernel::from_nested(rows)));
        }

        let stage = self.costs.stage.resolve("costs.stage")?;
        for (t, rows) in stage_iter(&stage) {
            let loc = stage_loc("costs.stage", t);
            if rows.len() != n {
                return Err(SystemError::Shape {
                    location: loc,
                    expected: n,
                    found: rows.len(),
                });
            }
            check_rect(&loc, rows, nu)?;
        }
        let metric = match &self.costs.metric {
            Some(rows) => {
                if rows.len() != n {
                    return Err(SystemError::Shape {
                        location: "costs.metric".into(),
                        expected: n,
                        found: rows.len(),
                    });
                }
                check_rect("costs.metric", rows, n)?;
                rows.iter().flatten().copied().collect()
            }
            None => squared_index_metric(n),
        };
        let feasible = match &self.feasible {
            Some(raw) => Some(raw.resolve("feasible")?),
            None => None,
        };

        System::new(SystemParts {
            num_states: n,
            actions: self.actions.clone(),
            observations: self.observations.clone(),
            horizon: self.horizon,
            model,
            actual,
            coupling: self.coupling,
            sensors,
            initial_joint: self.initial_joint.iter().flatten().copied().collect(),
            costs: CostModel {
                stage: stage.map(|rows| rows.iter().flatten().copied().collect()),
                terminal: self.costs.terminal.clone(),
                beta: self.costs.beta,
                metric,
            },
            feasible,
            delays: self.delays.clone(),
        })
    }

    pub fn from_system(sys: &System) -> Self {
        let n = sys.num_states;
        let nu = sys.actions.count();
        RawSystem {
            num_states: n,
            horizon: sys.horizon,
            actions: sys.actions.sizes().to_vec(),
            observations: sys.observations.sizes().to_vec(),
            coupling: sys.coupling,
            delays: Some(sys.delays.clone()),
            initial_joint: sys.initial_joint.chunks(n).map(|c| c.to_vec()).collect(),
            model_kernel: RawStaged::from_table(&sys.model, |k| k.to_nested()),
            actual_kernel: RawStaged::from_table(&sys.actual, |k| k.to_nested()),
            observation_kernel: sys
                .sensors
                .iter()
                .map(|s| RawStaged::from_table(s, |k| k.to_nested()))
                .collect(),
            costs: RawCosts {
                beta: sys.costs.beta,
                terminal: sys.costs.terminal.clone(),
                metric: Some(sys.costs.metric.chunks(n).map(|c| c.to_vec()).collect()),
                stage: RawStaged::from_table(&sys.costs.stage, |c| {
                    c.chunks(nu).map(|r| r.to_vec()).collect()
                }),
            },
            feasible: Some(RawStaged::from_table(&sys.feasible, |f| f.clone())),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("raw system serializes")
    }
}

/// Default metric `d(i, j) = (i - j)^2` over state indices.
pub fn squared_index_metric(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d = i as f64 - j as f64;
            m[i * n + j] = d * d;
        }
    }
    m
}

/// Short stable digest of configuration bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}

pub fn parse_system(text: &str) -> Result<System, ConfigError> {
    let raw: RawSystem = toml::from_str(text).map_err(|e| ConfigError::Parse(one_line(&e.to_string())))?;
    Ok(raw.validate()?)
}

/// A system loaded from disk together with the digest of its source bytes.
#[derive(Debug, Clone)]
pub struct LoadedSystem {
    pub system: System,
    pub hash: String,
}

pub fn load_system(path: &Path) -> Result<LoadedSystem, ConfigError> {
    let bytes = std::fs::read(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| ConfigError::Parse(e.to_string()))?;
    Ok(LoadedSystem {
        system: parse_system(&text)?,
        hash: config_hash(&bytes),
    })
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
