//! Paged optimizer simulator.
//!
//! Parameter groups move between a bounded fast pool and an unbounded slow
//! pool. A group evicted to the slow pool is serialized to bytes and read
//! back on restore, so round-trip fidelity is exercised for real. Eviction
//! is least-recently-used. A group enters the fast pool for the first time
//! with an `Allocate` event.

use std::collections::VecDeque;

use serde::Serialize;

use crate::codec::{Reader, Writer};

use super::optim::{state_bytes, ParamState};
use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Allocate,
    Offload,
    Restore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ResidencyEvent {
    pub step: usize,
    pub group: usize,
    pub kind: EventKind,
    pub bytes: usize,
}

/// Fast-pool capacity, usage and the movement log.
#[derive(Debug, Clone, Default)]
pub struct MemoryBudget {
    capacity: Option<usize>,
    usage: usize,
    peak: usize,
    window_peak: usize,
    offloads: usize,
    lru: VecDeque<usize>,
    events: Vec<ResidencyEvent>,
}

impl MemoryBudget {
    pub fn unbounded() -> Self {
        Self::default()
    }

    pub fn with_capacity(bytes: usize) -> Self {
        Self {
            capacity: Some(bytes),
            ..Self::default()
        }
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn usage(&self) -> usize {
        self.usage
    }

    /// Highest usage since creation.
    pub fn peak(&self) -> usize {
        self.peak
    }

    /// Highest usage since the last call, then restarts the window at the
    /// current usage.
    pub fn take_window_peak(&mut self) -> usize {
        std::mem::replace(&mut self.window_peak, self.usage)
    }

    pub fn events(&self) -> &[ResidencyEvent] {
        &self.events
    }

    pub fn offload_count(&self) -> usize {
        self.offloads
    }

    /// Groups in the fast pool, least recently used first.
    pub fn resident(&self) -> impl Iterator<Item = usize> + '_ {
        self.lru.iter().copied()
    }

    fn log(&mut self, step: usize, group: usize, kind: EventKind, bytes: usize) {
        if kind == EventKind::Offload {
            self.offloads += 1;
        }
        self.events.push(ResidencyEvent {
            step,
            group,
            kind,
            bytes,
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Slot {
    Unallocated(Vec<ParamState>),
    Fast(Vec<ParamState>),
    Slow(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
struct Group {
    bytes: usize,
    slot: Slot,
}

/// Optimizer state split into parameter groups, each either in the fast
/// or in the slow pool.
#[derive(Debug, Clone, PartialEq)]
pub struct PagedState {
    groups: Vec<Group>,
}

impl PagedState {
    /// One group per entry of `shapes`, each holding one state per
    /// parameter matrix. A group is charged for its parameters, their
    /// gradients and the optimizer state.
    pub fn new(shapes: &[Vec<(usize, usize)>], eight_bit: bool) -> Self {
        let groups = shapes
            .iter()
            .map(|g| {
                let n: usize = g.iter().map(|(r, c)| r * c).sum();
                Group {
                    bytes: 16 * n + g.iter().map(|(r, c)| state_bytes(r * c, eight_bit)).sum::<usize>(),
                    slot: Slot::Unallocated(
                        g.iter().map(|&(r, c)| ParamState::new(r, c, eight_bit)).collect(),
                    ),
                }
            })
            .collect();
        Self { groups }
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group_bytes(&self, group: usize) -> usize {
        self.groups[group].bytes
    }

    pub fn largest_group_bytes(&self) -> usize {
        self.groups.iter().map(|g| g.bytes).max().unwrap_or(0)
    }

    pub fn total_bytes(&self) -> usize {
        self.groups.iter().map(|g| g.bytes).sum()
    }

    pub fn is_resident(&self, group: usize) -> bool {
        matches!(self.groups[group].slot, Slot::Fast(_))
    }

    /// States of a resident group.
    pub fn states_mut(&mut self, group: usize) -> Option<&mut [ParamState]> {
        match &mut self.groups[group].slot {
            Slot::Fast(s) => Some(s),
            _ => None,
        }
    }
}

fn serialize(states: &[ParamState]) -> Vec<u8> {
    let mut w = Writer::new();
    w.u64(states.len() as u64);
    for s in states {
        s.encode(&mut w);
    }
    w.finish()
}

fn deserialize(bytes: &[u8]) -> Result<Vec<ParamState>, TrainError> {
    let mut r = Reader::new(bytes);
    let n = r.usize()?;
    let states = (0..n)
        .map(|_| ParamState::decode(&mut r))
        .collect::<Result<Vec<_>, _>>()?;
    r.expect_end()?;
    Ok(states)
}

/// Makes `group` resident, evicting least-recently-used groups until it
/// fits, and marks it most recently used.
pub fn manage_residency(
    state: &mut PagedState,
    budget: &mut MemoryBudget,
    group: usize,
    step: usize,
) -> Result<(), TrainError> {
    let bytes = state.groups[group].bytes;
    if state.is_resident(group) {
        budget.lru.retain(|&g| g != group);
        budget.lru.push_back(group);
        return Ok(());
    }
    if let Some(cap) = budget.capacity {
        if bytes > cap {
            return Err(TrainError::GroupTooLarge {
                group,
                bytes,
                capacity: cap,
            });
        }
        while budget.usage + bytes > cap {
            let victim = budget.lru.pop_front().expect("usage implies a resident group");
            let g = &mut state.groups[victim];
            let Slot::Fast(states) = &g.slot else {
                unreachable!("lru holds only resident groups")
            };
            g.slot = Slot::Slow(serialize(states));
            budget.usage -= g.bytes;
            budget.log(step, victim, EventKind::Offload, g.bytes);
        }
    }
    let g = &mut state.groups[group];
    let (states, kind) = match std::mem::replace(&mut g.slot, Slot::Slow(Vec::new())) {
        Slot::Unallocated(s) => (s, EventKind::Allocate),
        Slot::Slow(b) => (deserialize(&b)?, EventKind::Restore),
        Slot::Fast(_) => unreachable!("handled above"),
    };
    g.slot = Slot::Fast(states);
    budget.usage += bytes;
    budget.peak = budget.peak.max(budget.usage);
    budget.window_peak = budget.window_peak.max(budget.usage);
    budget.lru.push_back(group);
    budget.log(step, group, kind, bytes);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;
    use crate::trainer::optim::{adamw_step, AdamW};

    fn two_groups() -> PagedState {
        PagedState::new(&[vec![(2, 3)], vec![(3, 3), (1, 2)]], false)
    }

    fn touch(state: &mut PagedState, budget: &mut MemoryBudget, order: &[usize], step: usize) {
        for &g in order {
            manage_residency(state, budget, g, step).unwrap();
            assert!(budget.usage() <= budget.capacity().unwrap_or(usize::MAX));
        }
    }

    #[test]
    fn group_bytes_count_params_grads_and_state() {
        let s = two_groups();
        assert_eq!(s.group_bytes(0), 6 * 8 * 4);
        assert_eq!(s.group_bytes(1), 11 * 8 * 4);
        assert_eq!(s.largest_group_bytes(), 352);
    }

    #[test]
    fn ample_capacity_never_offloads() {
        let mut s = two_groups();
        let mut b = MemoryBudget::with_capacity(s.total_bytes());
        for step in 0..10 {
            touch(&mut s, &mut b, &[0, 1, 1, 0], step);
        }
        assert_eq!(b.offload_count(), 0);
        assert_eq!(b.events().len(), 2);
        assert!(b.events().iter().all(|e| e.kind == EventKind::Allocate));
        assert_eq!(b.peak(), s.total_bytes());
    }

    #[test]
    fn tight_capacity_restores_each_group_once_per_pass() {
        // Forward 0,1 then backward 1,0 with room for one group: after
        // warm-up every pass offloads and restores each group exactly once.
        let mut s = two_groups();
        let mut b = MemoryBudget::with_capacity(s.largest_group_bytes());
        touch(&mut s, &mut b, &[0, 1, 1, 0], 0);
        let warm = b.events().len();
        for step in 1..6 {
            touch(&mut s, &mut b, &[0, 1, 1, 0], step);
        }
        let later = &b.events()[warm..];
        assert_eq!(later.len(), 5 * 4);
        for step in 1..6 {
            let ev: Vec<_> = later.iter().filter(|e| e.step == step).map(|e| (e.kind, e.group)).collect();
            assert_eq!(
                ev,
                vec![
                    (EventKind::Offload, 0),
                    (EventKind::Restore, 1),
                    (EventKind::Offload, 1),
                    (EventKind::Restore, 0),
                ]
            );
        }
    }

    #[test]
    fn oversize_group_rejected_with_sizes() {
        let mut s = two_groups();
        let mut b = MemoryBudget::with_capacity(200);
        let err = manage_residency(&mut s, &mut b, 1, 0).unwrap_err();
        assert!(matches!(
            err,
            TrainError::GroupTooLarge {
                group: 1,
                bytes: 352,
                capacity: 200
            }
        ));
        assert!(err.to_string().contains("352") && err.to_string().contains("200"));
    }

    #[test]
    fn paging_preserves_state_bits() {
        for eight_bit in [false, true] {
            let mut s = PagedState::new(&[vec![(4, 70)], vec![(4, 70)]], eight_bit);
            let mut b = MemoryBudget::with_capacity(s.largest_group_bytes());
            let mut p = Matrix::zeros(4, 70);
            manage_residency(&mut s, &mut b, 0, 0).unwrap();
            let g = Matrix::from_vec(4, 70, (0..280).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
            adamw_step(&mut s.states_mut(0).unwrap()[0], &mut p, &g, &AdamW::default()).unwrap();
            let snapshot = s.states_mut(0).unwrap()[0].clone();
            manage_residency(&mut s, &mut b, 1, 0).unwrap();
            assert!(!s.is_resident(0) && s.states_mut(0).is_none());
            manage_residency(&mut s, &mut b, 0, 0).unwrap();
            assert_eq!(s.states_mut(0).unwrap()[0], snapshot);
        }
    }

    #[test]
    fn window_peak_resets() {
        let mut s = two_groups();
        let mut b = MemoryBudget::unbounded();
        touch(&mut s, &mut b, &[0, 1], 0);
        assert_eq!(b.take_window_peak(), s.total_bytes());
        assert_eq!(b.take_window_peak(), s.total_bytes());
        assert_eq!(b.resident().collect::<Vec<_>>(), vec![0, 1]);
    }
}
