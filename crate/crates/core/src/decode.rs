//! Successive interference cancellation over a frame.
//!
//! Decoders see the frame only through [`Receiver`]: per-slot idle /
//! singleton / collision observations, the replica pointers carried in a
//! decoded packet's header, and cancellation attempts that either succeed or
//! are rejected. Device indices are local to the trace (positions in
//! `FrameTrace::devices`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::FrameTrace;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotObservation {
    Idle,
    Singleton(u32),
    Collision,
}

/// Classifies a residual replica set.
pub fn observe_slot(residual: &[u32]) -> SlotObservation {
    match residual {
        [] => SlotObservation::Idle,
        [d] => SlotObservation::Singleton(*d),
        _ => SlotObservation::Collision,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderOptions {
    /// Slots with more candidates than this are not searched. `None` means
    /// no limit.
    pub candidate_cap: Option<usize>,
    /// Maximum number of decoding passes. `None` runs to the fixpoint.
    pub max_iter: Option<usize>,
}

impl DecoderOptions {
    fn pass_limit(&self) -> usize {
        self.max_iter.unwrap_or(usize::MAX)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeResult {
    /// Local device indices in decoding order.
    pub decoded: Vec<u32>,
    pub iterations: usize,
    pub subset_attempts: u64,
    /// Replicas left in each slot when decoding stopped.
    pub residual_sizes: Vec<u32>,
}

impl DecodeResult {
    pub fn decoded_set(&self) -> Vec<u32> {
        let mut set = self.decoded.clone();
        set.sort_unstable();
        set
    }

    /// Global device ids of the decoded packets.
    pub fn decoded_devices(&self, trace: &FrameTrace) -> Vec<u32> {
        self.decoded
            .iter()
            .map(|&local| trace.devices[local as usize].device)
            .collect()
    }
}

/// The receiver's view of a frame.
pub struct Receiver<'a> {
    trace: &'a FrameTrace,
    residual: Vec<Vec<u32>>,
}

impl<'a> Receiver<'a> {
    pub fn new(trace: &'a FrameTrace) -> Self {
        Self {
            trace,
            residual: trace.slots.clone(),
        }
    }

    pub fn num_slots(&self) -> usize {
        self.residual.len()
    }

    pub fn observe(&self, slot: usize) -> SlotObservation {
        observe_slot(&self.residual[slot])
    }

    /// Slots of the intended replicas, read from a decoded packet's header.
    pub fn intended_slots(&self, device: u32) -> &'a [u32] {
        &self.trace.devices[device as usize].intended
    }

    /// Cancels a replica whose presence the receiver has confirmed.
    fn cancel(&mut self, slot: usize, device: u32) {
        let list = &mut self.residual[slot];
        let pos = list.iter().position(|&d| d == device);
        debug_assert!(pos.is_some(), "cancelling an absent replica");
        if let Some(pos) = pos {
            list.swap_remove(pos);
        }
    }

    /// Tentatively subtracts the replicas of `subset` from `slot`. The
    /// attempt succeeds iff every member actually transmitted there and the
    /// result is a singleton; it is then committed and the remaining device
    /// returned. Failed attempts leave the state unchanged.
    pub fn try_remove(&mut self, slot: usize, subset: &[u32]) -> Option<u32> {
        let list = &self.residual[slot];
        if list.len() != subset.len() + 1 || !subset.iter().all(|d| list.contains(d)) {
            return None;
        }
        let remaining = *list.iter().find(|d| !subset.contains(d))?;
        self.residual[slot] = vec![remaining];
        Some(remaining)
    }

    fn residual_sizes(&self) -> Vec<u32> {
        self.residual.iter().map(|r| r.len() as u32).collect()
    }

    /// Ground truth, only available to the genie-aided decoder.
    fn genie_transmitted(&self, device: u32) -> impl Iterator<Item = u32> + 'a {
        self.trace.devices[device as usize].transmitted()
    }
}

/// Peeling in snapshot passes: every singleton present at the start of a
/// pass is decoded, then all replicas of the newly decoded packets are
/// cancelled.
fn peel<F>(trace: &FrameTrace, options: &DecoderOptions, mut replicas: F) -> DecodeResult
where
    F: FnMut(&Receiver, u32) -> Vec<u32>,
{
    let mut rx = Receiver::new(trace);
    let mut decoded = vec![false; trace.devices.len()];
    let mut order = Vec::new();
    let mut iterations = 0;
    while iterations < options.pass_limit() {
        let mut fresh = Vec::new();
        for slot in 0..rx.num_slots() {
            if let SlotObservation::Singleton(d) = rx.observe(slot) {
                if !decoded[d as usize] {
                    decoded[d as usize] = true;
                    fresh.push(d);
                }
            }
        }
        if fresh.is_empty() {
            break;
        }
        iterations += 1;
        for d in fresh {
            for slot in replicas(&rx, d) {
                rx.cancel(slot as usize, d);
            }
            order.push(d);
        }
    }
    DecodeResult {
        decoded: order,
        iterations,
        subset_attempts: 0,
        residual_sizes: rx.residual_sizes(),
    }
}

/// Classic IRSA peeling: a decoded packet's replicas are cancelled in every
/// intended slot. Only valid when no replica was dropped.
pub fn sic_conventional(trace: &FrameTrace, options: &DecoderOptions) -> Result<DecodeResult> {
    if trace.has_drops() {
        return Err(Error::TraceHasDrops);
    }
    Ok(peel(trace, options, |rx, d| rx.intended_slots(d).to_vec()))
}

/// Peeling that knows which replicas were dropped.
pub fn sic_genie(trace: &FrameTrace, options: &DecoderOptions) -> DecodeResult {
    peel(trace, options, |rx, d| rx.genie_transmitted(d).collect())
}

/// Candidate-list SIC that locates dropped replicas by trial cancellation.
///
/// Each pass first decodes the singletons present at its start. A decoded
/// device becomes a candidate in every other slot its header points to.
/// Then every slot whose state changed is searched: subsets of its pending
/// candidates are tried smallest first, and each success cancels the subset,
/// decodes the revealed packet and restarts the search in that slot.
pub fn sic_identify(trace: &FrameTrace, options: &DecoderOptions) -> DecodeResult {
    let mut state = Identify::new(trace);
    let cap = options.candidate_cap.unwrap_or(usize::MAX);
    let mut iterations = 0;
    while iterations < options.pass_limit() {
        let before = state.order.len() + state.confirmed;
        let singletons: Vec<(usize, u32)> = (0..state.rx.num_slots())
            .filter_map(|slot| match state.rx.observe(slot) {
                SlotObservation::Singleton(d) => Some((slot, d)),
                _ => None,
            })
            .collect();
        for (slot, d) in singletons {
            // An earlier cancellation in this pass may have touched the slot.
            if state.rx.observe(slot) == SlotObservation::Singleton(d) {
                state.resolve(slot, d);
            }
        }
        for slot in 0..state.rx.num_slots() {
            if state.dirty[slot] {
                state.search(slot, cap);
            }
        }
        iterations += 1;
        if state.order.len() + state.confirmed == before {
            break;
        }
    }
    DecodeResult {
        decoded: state.order,
        iterations,
        subset_attempts: state.attempts,
        residual_sizes: state.rx.residual_sizes(),
    }
}

struct Identify<'a> {
    rx: Receiver<'a>,
    decoded: Vec<bool>,
    order: Vec<u32>,
    /// Per slot, decoded devices pointing at it (the candidate list).
    candidates: Vec<Vec<u32>>,
    /// Per slot, candidates whose replica there is not yet cancelled.
    pending: Vec<Vec<u32>>,
    dirty: Vec<bool>,
    attempts: u64,
    confirmed: usize,
}

impl<'a> Identify<'a> {
    fn new(trace: &'a FrameTrace) -> Self {
        let m = trace.slots.len();
        Self {
            rx: Receiver::new(trace),
            decoded: vec![false; trace.devices.len()],
            order: Vec::new(),
            candidates: vec![Vec::new(); m],
            pending: vec![Vec::new(); m],
            dirty: vec![false; m],
            attempts: 0,
            confirmed: 0,
        }
    }

    /// Handles a singleton of `d` in `slot` (already isolated there).
    fn resolve(&mut self, slot: usize, d: u32) {
        self.rx.cancel(slot, d);
        self.dirty[slot] = true;
        if let Some(pos) = self.pending[slot].iter().position(|&c| c == d) {
            // A replica of an already decoded packet, now confirmed.
            self.pending[slot].swap_remove(pos);
            self.confirmed += 1;
            return;
        }
        if self.decoded[d as usize] {
            return;
        }
        self.decoded[d as usize] = true;
        self.order.push(d);
        for &other in self.rx.intended_slots(d) {
            let other = other as usize;
            if other != slot {
                self.candidates[other].push(d);
                self.pending[other].push(d);
                self.dirty[other] = true;
            }
        }
    }

    fn search(&mut self, slot: usize, cap: usize) {
        self.dirty[slot] = false;
        loop {
            let k = self.pending[slot].len();
            if k == 0 || self.candidates[slot].len() > cap || self.rx.observe(slot) == SlotObservation::Idle {
                return;
            }
            match self.enumerate(slot) {
                Some((subset, revealed)) => {
                    for d in subset {
                        let pos = self.pending[slot].iter().position(|&c| c == d).unwrap();
                        self.pending[slot].swap_remove(pos);
                        self.confirmed += 1;
                    }
                    // The revealed singleton is then decoded (or confirmed).
                    self.resolve(slot, revealed);
                    self.dirty[slot] = false;
                }
                None => return,
            }
        }
    }

    /// Tries the subsets of the pending candidates in increasing size, and
    /// in lexicographic order within a size. Returns the first success.
    fn enumerate(&mut self, slot: usize) -> Option<(Vec<u32>, u32)> {
        let pool = self.pending[slot].clone();
        let k = pool.len();
        let mut subset = Vec::with_capacity(k);
        for size in 0..=k {
            let mut idx: Vec<usize> = (0..size).collect();
            loop {
                subset.clear();
                subset.extend(idx.iter().map(|&i| pool[i]));
                self.attempts += 1;
                if let Some(revealed) = self.rx.try_remove(slot, &subset) {
                    return Some((subset, revealed));
                }
                if !next_combination(&mut idx, k) {
                    break;
                }
            }
        }
        None
    }
}

/// Advances `idx` to the next `idx.len()`-combination of `0..n` in
/// lexicographic order. Returns false after the last one.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let r = idx.len();
    let Some(i) = (0..r).rev().find(|&i| idx[i] < n - r + i) else {
        return false;
    };
    idx[i] += 1;
    for j in i + 1..r {
        idx[j] = idx[j - 1] + 1;
    }
    true
}
