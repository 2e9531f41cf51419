//! Delayed-sharing information structure.
//!
//! At stage `t` subsystem `k` (sharing delay `n_k`) holds the common record
//! `Δ_t`, containing every subsystem's observations and actions of stages
//! `s ≤ t − n_j` (delay of the owning subsystem `j`), and its private window
//! `Λ_t^k = (y^k_{t−n_k+1..t}, u^k_{t−n_k+1..t−1})`.
//!
//! The memory is a persistent value: `observe`, `act` and `push` return a new
//! memory and leave the receiver untouched. After `observe(y_t)` the memory
//! is at stage `t`; the action of the current stage is stored by `act` but
//! never exposed until the next observation advances the stage.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MemoryError {
    #[error("sharing delay of subsystem {subsystem} must be at least 1")]
    ZeroDelay { subsystem: usize },
    #[error("at least one subsystem is required")]
    NoSubsystems,
    #[error("{what}: expected {expected} entries (one per subsystem), found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("stage {stage} action not yet recorded")]
    ActionPending { stage: usize },
    #[error("no observed stage awaiting an action")]
    NoPendingStage,
    #[error("subsystem {0} out of range")]
    SubsystemOutOfRange(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StageRecord {
    observations: Vec<usize>,
    actions: Option<Vec<usize>>,
}

/// One subsystem's stage data released into the common record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedRecord {
    pub stage: usize,
    pub subsystem: usize,
    pub observation: usize,
    pub action: usize,
}

/// Snapshot of `Δ_t`, ordered by release stage and then subsystem.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SharedView {
    pub records: Vec<SharedRecord>,
}

impl SharedView {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct stages present in the record.
    pub fn stages(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.records.iter().map(|r| r.stage).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn observations(&self) -> Vec<(usize, usize, usize)> {
        self.records
            .iter()
            .map(|r| (r.stage, r.subsystem, r.observation))
            .collect()
    }
}

/// Snapshot of `Λ_t^k`: `(stage, value)` pairs in stage order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PrivateView {
    pub subsystem: usize,
    pub observations: Vec<(usize, usize)>,
    pub actions: Vec<(usize, usize)>,
}

impl PrivateView {
    pub fn is_empty(&self) -> bool {
        self.observations.is_empty() && self.actions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayedMemory {
    delays: Vec<usize>,
    records: Vec<StageRecord>,
}

impl DelayedMemory {
    /// Empty memory before any observation.
    pub fn new(delays: Vec<usize>) -> Result<Self, MemoryError> {
        if delays.is_empty() {
            return Err(MemoryError::NoSubsystems);
        }
        if let Some(k) = delays.iter().position(|&d| d == 0) {
            return Err(MemoryError::ZeroDelay { subsystem: k });
        }
        Ok(Self {
            delays,
            records: Vec::new(),
        })
    }

    pub fn symmetric(delay: usize, subsystems: usize) -> Result<Self, MemoryError> {
        Self::new(vec![delay; subsystems])
    }

    pub fn delays(&self) -> &[usize] {
        &self.delays
    }

    pub fn num_subsystems(&self) -> usize {
        self.delays.len()
    }

    /// Current stage, `None` before the first observation.
    pub fn now(&self) -> Option<usize> {
        self.records.len().checked_sub(1)
    }

    fn check_len(&self, what: &'static str, v: &[usize]) -> Result<(), MemoryError> {
        if v.len() != self.delays.len() {
            return Err(MemoryError::DimensionMismatch {
                what,
                expected: self.delays.len(),
                found: v.len(),
            });
        }
        Ok(())
    }

    /// Records `y_t` and advances to stage `t`.
    pub fn observe(&self, y: &[usize]) -> Result<Self, MemoryError> {
        self.check_len("observations", y)?;
        if let Some(last) = self.records.last() {
            if last.actions.is_none() {
                return Err(MemoryError::ActionPending {
                    stage: self.records.len() - 1,
                });
            }
        }
        let mut next = self.clone();
        next.records.push(StageRecord {
            observations: y.to_vec(),
            actions: None,
        });
        Ok(next)
    }

    /// Records `u_t` for the current stage.
    pub fn act(&self, u: &[usize]) -> Result<Self, MemoryError> {
        self.check_len("actions", u)?;
        match self.records.last() {
            Some(rec) if rec.actions.is_none() => {
                let mut next = self.clone();
                next.records.last_mut().expect("nonempty").actions = Some(u.to_vec());
                Ok(next)
            }
            _ => Err(MemoryError::NoPendingStage),
        }
    }

    /// `observe(y)` followed by `act(u)`.
    pub fn push(&self, y: &[usize], u: &[usize]) -> Result<Self, MemoryError> {
        self.check_len("actions", u)?;
        self.observe(y)?.act(u)
    }

    /// `Δ_t`.
    pub fn shared_view(&self) -> SharedView {
        let Some(t) = self.now() else {
            return SharedView::default();
        };
        let mut records = Vec::new();
        for release in 0..=t {
            for (k, &n) in self.delays.iter().enumerate() {
                let Some(stage) = release.checked_sub(n) else {
                    continue;
                };
                let rec = &self.records[stage];
                let action = rec
                    .actions
                    .as_ref()
                    .expect("stages before the current one always carry actions")[k];
                records.push(SharedRecord {
                    stage,
                    subsystem: k,
                    observation: rec.observations[k],
                    action,
                });
            }
        }
        SharedView { records }
    }

    /// `Λ_t^k`.
    pub fn private_view(&self, k: usize) -> Result<PrivateView, MemoryError> {
        let n = *self.delays.get(k).ok_or(MemoryError::SubsystemOutOfRange(k))?;
        let mut view = PrivateView {
            subsystem: k,
            ..PrivateView::default()
        };
        let Some(t) = self.now() else {
            return Ok(view);
        };
        let first = (t + 1).saturating_sub(n);
        for s in first..=t {
            view.observations.push((s, self.records[s].observations[k]));
            if s < t {
                let u = self.records[s].actions.as_ref().expect("past stage acted")[k];
                view.actions.push((s, u));
            }
        }
        Ok(view)
    }

    /// Per-stage joint observations `y_0..y_t` reassembled from `Δ_t` and all
    /// `Λ_t^k` together (the joint information of all subsystems).
    pub fn joint_observation_history(&self) -> Vec<Vec<usize>> {
        let Some(t) = self.now() else {
            return Vec::new();
        };
        let k_count = self.delays.len();
        let mut hist = vec![vec![usize::MAX; k_count]; t + 1];
        for r in self.shared_view().records {
            hist[r.stage][r.subsystem] = r.observation;
        }
        for k in 0..k_count {
            for (s, y) in self.private_view(k).expect("valid k").observations {
                hist[s][k] = y;
            }
        }
        hist
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_at_start() {
        let m = DelayedMemory::symmetric(2, 2).unwrap();
        assert_eq!(m.now(), None);
        assert!(m.shared_view().is_empty());
        assert!(m.private_view(0).unwrap().is_empty());
        assert!(m.private_view(1).unwrap().is_empty());
    }

    #[test]
    fn zero_delay_rejected() {
        assert_eq!(
            DelayedMemory::new(vec![1, 0]),
            Err(MemoryError::ZeroDelay { subsystem: 1 })
        );
    }

    #[test]
    fn one_step_delay_moves_to_shared_next_stage() {
        let m = DelayedMemory::symmetric(1, 1).unwrap();
        let m0 = m.push(&[4], &[0]).unwrap();
        assert!(m0.shared_view().is_empty());
        assert_eq!(m0.private_view(0).unwrap().observations, vec![(0, 4)]);
        let m1 = m0.push(&[5], &[1]).unwrap();
        assert_eq!(m1.shared_view().observations(), vec![(0, 0, 4)]);
        assert_eq!(m1.private_view(0).unwrap().observations, vec![(1, 5)]);
        // receiver untouched
        assert_eq!(m0.now(), Some(0));
    }

    #[test]
    fn asymmetric_window_lengths() {
        let mut m = DelayedMemory::new(vec![1, 3]).unwrap();
        for t in 0..5 {
            m = m.push(&[t, 10 + t], &[0, 0]).unwrap();
        }
        assert_eq!(m.private_view(0).unwrap().observations.len(), 1);
        assert_eq!(m.private_view(1).unwrap().observations.len(), 3);
        assert_eq!(m.private_view(1).unwrap().actions.len(), 2);
    }

    #[test]
    fn delay_two_after_four_stages() {
        // y_t^k = 10k + t for readability
        let mut m = DelayedMemory::symmetric(2, 2).unwrap();
        for t in 0..4 {
            m = m.push(&[t, 10 + t], &[0, 0]).unwrap();
        }
        assert_eq!(m.now(), Some(3));
        assert_eq!(
            m.shared_view().observations(),
            vec![(0, 0, 0), (0, 1, 10), (1, 0, 1), (1, 1, 11)]
        );
    }

    #[test]
    fn delay_beyond_horizon_keeps_shared_empty() {
        let mut m = DelayedMemory::symmetric(10, 1).unwrap();
        for t in 0..5 {
            m = m.push(&[t], &[0]).unwrap();
            assert!(m.shared_view().is_empty());
        }
    }

    #[test]
    fn private_window_holds_only_own_last_n() {
        let m = DelayedMemory::symmetric(2, 2)
            .unwrap()
            .push(&[1, 2], &[0, 1])
            .unwrap()
            .push(&[3, 4], &[1, 0])
            .unwrap();
        let p = m.private_view(1).unwrap();
        assert_eq!(p.observations, vec![(0, 2), (1, 4)]);
        assert_eq!(p.actions, vec![(0, 1)]);
    }

    #[test]
    fn full_horizon_with_unit_delay() {
        let mut m = DelayedMemory::symmetric(1, 1).unwrap();
        for t in 0..=4 {
            m = m.push(&[t], &[0]).unwrap();
        }
        assert_eq!(m.shared_view().stages(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn dimension_mismatch_and_ordering_errors() {
        let m = DelayedMemory::symmetric(1, 2).unwrap();
        assert!(matches!(m.push(&[0], &[0, 0]), Err(MemoryError::DimensionMismatch { .. })));
        assert_eq!(m.act(&[0, 0]), Err(MemoryError::NoPendingStage));
        let o = m.observe(&[0, 0]).unwrap();
        assert_eq!(o.observe(&[0, 0]), Err(MemoryError::ActionPending { stage: 0 }));
        assert!(m.private_view(2).is_err());
    }

    #[test]
    fn pending_action_is_hidden() {
        let m = DelayedMemory::symmetric(2, 1).unwrap().push(&[0], &[1]).unwrap().observe(&[1]).unwrap();
        let before = m.private_view(0).unwrap();
        let after = m.act(&[0]).unwrap().private_view(0).unwrap();
        assert_eq!(before, after);
        assert_eq!(before.actions, vec![(0, 1)]);
    }

    proptest! {
        #[test]
        fn history_is_conserved_and_shared_grows_by_prefix(
            delays in prop::collection::vec(1usize..4, 1..4),
            steps in 1usize..9,
            seed in any::<u64>(),
        ) {
            let k = delays.len();
            let mut m = DelayedMemory::new(delays.clone()).unwrap();
            let mut pushed = Vec::new();
            let mut prev_shared = SharedView::default();
            for t in 0..steps {
                let y: Vec<usize> = (0..k).map(|j| ((seed >> ((t * 3 + j) % 60)) & 7) as usize).collect();
                let u: Vec<usize> = (0..k).map(|j| (t + j) % 3).collect();
                m = m.push(&y, &u).unwrap();
                for (j, &yj) in y.iter().enumerate() {
                    pushed.push((t, j, yj));
                }

                let shared = m.shared_view();
                prop_assert!(shared.records.starts_with(&prev_shared.records));
                prev_shared = shared.clone();

                let mut seen = shared.observations();
                for j in 0..k {
                    let p = m.private_view(j).unwrap();
                    prop_assert_eq!(p.observations.len(), delays[j].min(t + 1));
                    prop_assert_eq!(p.actions.len(), (delays[j] - 1).min(t));
                    seen.extend(p.observations.iter().map(|&(s, y)| (s, j, y)));
                }
                seen.sort_unstable();
                let mut expected = pushed.clone();
                expected.sort_unstable();
                prop_assert_eq!(seen, expected);

                if delays.iter().all(|&d| d == delays[0]) && t + 1 >= delays[0] {
                    prop_assert_eq!(shared.stages().len(), t + 1 - delays[0]);
                }
                let hist = m.joint_observation_history();
                prop_assert_eq!(hist.len(), t + 1);
                prop_assert_eq!(&hist[t], &y);
            }
        }
    }
}
