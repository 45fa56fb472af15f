//! Multi-objective label setting.
//!
//! A label is a partial route: a node, an accumulated resource vector
//! (elapsed time, battery consumed) and a visitation mask with one bit per
//! target node (1 = still unvisited). Labels are extracted in lexicographic
//! order (time, then battery, then mask, then insertion order), made
//! permanent, and extended along every admissible edge. Extensions that
//! overrun a node's time window or battery ceiling are rejected; early
//! arrivals are clamped up to the window start (waiting), and overcharge is
//! clamped at zero consumption. A route is complete when its mask is zero.

use crate::graph::{EdgeEval, NodeId};
use serde::Serialize;
use smallvec::SmallVec;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Absolute tolerance for window comparisons (seconds / battery units).
pub const TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Visitation mask

/// Fixed-length bit vector, one bit per target node; bit = 1 means the node
/// is still unvisited. Packed so that word-wise comparison orders masks as
/// big-endian unsigned integers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitMask {
    words: SmallVec<[u64; 2]>,
    len: usize,
}

impl VisitMask {
    pub fn all_ones(len: usize) -> Self {
        let mut m = VisitMask { words: SmallVec::new(), len: 0 };
        for _ in 0..len {
            m.push_one();
        }
        m
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn slot(i: usize) -> (usize, u64) {
        (i / 64, 1u64 << (63 - (i % 64)))
    }

    pub fn bit(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        let (w, b) = Self::slot(i);
        self.words[w] & b != 0
    }

    pub fn clear(&mut self, i: usize) {
        debug_assert!(i < self.len);
        let (w, b) = Self::slot(i);
        self.words[w] &= !b;
    }

    /// Append one trailing dimension set to 1 (a new unvisited node).
    pub fn push_one(&mut self) {
        let (w, b) = Self::slot(self.len);
        if w == self.words.len() {
            self.words.push(0);
        }
        self.words[w] |= b;
        self.len += 1;
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Componentwise `self_i <= other_i`: wherever self is unvisited, other
    /// is too.
    pub fn leq(&self, other: &VisitMask) -> bool {
        debug_assert_eq!(self.len, other.len);
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    /// Big-endian unsigned comparison; shorter masks compare as if padded
    /// with trailing zeros.
    pub fn cmp_bits(&self, other: &VisitMask) -> Ordering {
        let n = self.words.len().max(other.words.len());
        for i in 0..n {
            let a = self.words.get(i).copied().unwrap_or(0);
            let b = other.words.get(i).copied().unwrap_or(0);
            match a.cmp(&b) {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        Ordering::Equal
    }
}

// ---------------------------------------------------------------------------
// Labels

pub type LabelId = u32;

#[derive(Debug, Clone)]
pub struct Label {
    pub node: NodeId,
    /// Elapsed time since the planning epoch, after window clamping.
    pub time: f64,
    /// Battery consumed, after the zero floor.
    pub consumed: f64,
    pub mask: VisitMask,
    pub pred: Option<LabelId>,
    /// Waiting inserted by the clamp at this node.
    pub wait: f64,
}

/// Pareto dominance over (time, consumed, mask): componentwise <= and not
/// equal.
pub fn dominates(a: &Label, b: &Label) -> bool {
    debug_assert_eq!(a.mask.len(), b.mask.len(), "mask length mismatch");
    if a.time > b.time || a.consumed > b.consumed || !a.mask.leq(&b.mask) {
        return false;
    }
    a.time != b.time || a.consumed != b.consumed || a.mask != b.mask
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Place {
    Temp,
    Perm,
    Dead,
}

#[derive(Debug, Clone)]
struct HeapKey {
    time: f64,
    consumed: f64,
    mask: VisitMask,
    seq: u64,
    id: LabelId,
}

impl PartialEq for HeapKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapKey {}

impl PartialOrd for HeapKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapKey {
    // reversed so that BinaryHeap pops the lexicographic minimum
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then_with(|| self.consumed.total_cmp(&other.consumed))
            .then_with(|| self.mask.cmp_bits(&other.mask))
            .then_with(|| self.seq.cmp(&other.seq))
            .reverse()
    }
}

/// Label arena plus per-node permanent/temporary sets and the global
/// extraction ordering. Carried across incremental admissions.
#[derive(Debug, Clone)]
pub struct LabelState {
    arena: Vec<Label>,
    place: Vec<Place>,
    temp_by_node: Vec<Vec<LabelId>>,
    perm_by_node: Vec<Vec<LabelId>>,
    heap: BinaryHeap<HeapKey>,
    seq: u64,
}

impl LabelState {
    pub fn new(num_nodes: usize) -> Self {
        LabelState {
            arena: Vec::new(),
            place: Vec::new(),
            temp_by_node: vec![Vec::new(); num_nodes],
            perm_by_node: vec![Vec::new(); num_nodes],
            heap: BinaryHeap::new(),
            seq: 0,
        }
    }

    pub fn label(&self, id: LabelId) -> &Label {
        &self.arena[id as usize]
    }

    /// Seed the origin label: at the robot node, zero elapsed time, with the
    /// battery already consumed before the epoch.
    pub fn seed(&mut self, node: NodeId, consumed0: f64, n_bits: usize) -> LabelId {
        let l = Label {
            node,
            time: 0.0,
            consumed: consumed0,
            mask: VisitMask::all_ones(n_bits),
            pred: None,
            wait: 0.0,
        };
        self.insert_raw(l)
    }

    fn insert_raw(&mut self, l: Label) -> LabelId {
        let id = self.arena.len() as LabelId;
        self.heap.push(HeapKey {
            time: l.time,
            consumed: l.consumed,
            mask: l.mask.clone(),
            seq: self.seq,
            id,
        });
        self.seq += 1;
        self.temp_by_node[l.node].push(id);
        self.arena.push(l);
        self.place.push(Place::Temp);
        id
    }

    pub fn live_label_count(&self) -> usize {
        self.place.iter().filter(|p| !matches!(p, Place::Dead)).count()
    }

    pub fn permanent_ids(&self) -> Vec<LabelId> {
        (0..self.arena.len() as LabelId)
            .filter(|&id| self.place[id as usize] == Place::Perm)
            .collect()
    }

    pub fn permanent_at(&self, node: NodeId) -> &[LabelId] {
        &self.perm_by_node[node]
    }

    pub fn temporary_at(&self, node: NodeId) -> &[LabelId] {
        &self.temp_by_node[node]
    }

    pub fn has_temporaries(&self) -> bool {
        self.heap
            .iter()
            .any(|k| self.place[k.id as usize] == Place::Temp)
    }

    /// Append one unvisited dimension to every live label and rebuild the
    /// extraction ordering. Existing dominance relations are unchanged.
    pub fn extend_dimension(&mut self) {
        for (i, l) in self.arena.iter_mut().enumerate() {
            if self.place[i] != Place::Dead {
                l.mask.push_one();
            }
        }
        self.rebuild_heap();
    }

    fn rebuild_heap(&mut self) {
        let mut heap = BinaryHeap::new();
        let mut seq = 0u64;
        for (i, l) in self.arena.iter().enumerate() {
            if self.place[i] == Place::Temp {
                heap.push(HeapKey {
                    time: l.time,
                    consumed: l.consumed,
                    mask: l.mask.clone(),
                    seq,
                    id: i as LabelId,
                });
                seq += 1;
            }
        }
        self.heap = heap;
        self.seq = seq;
    }

    /// Insert a candidate label unless an existing label at its node
    /// dominates it; temporaries it dominates are removed. Permanent labels
    /// are never removed. Returns the new id if inserted.
    pub fn insert_if_nondominated(&mut self, cand: Label) -> Option<LabelId> {
        let node = cand.node;
        for &id in self.perm_by_node[node].iter().chain(&self.temp_by_node[node]) {
            if dominates(&self.arena[id as usize], &cand) {
                return None;
            }
        }
        let temp = std::mem::take(&mut self.temp_by_node[node]);
        let (dominated, kept): (Vec<_>, Vec<_>) = temp
            .into_iter()
            .partition(|&id| dominates(&cand, &self.arena[id as usize]));
        for id in dominated {
            self.place[id as usize] = Place::Dead;
        }
        self.temp_by_node[node] = kept;
        Some(self.insert_raw(cand))
    }

    fn make_permanent(&mut self, id: LabelId) {
        let node = self.arena[id as usize].node;
        self.temp_by_node[node].retain(|&x| x != id);
        self.perm_by_node[node].push(id);
        self.place[id as usize] = Place::Perm;
    }
}

// ---------------------------------------------------------------------------
// The graph interface the search runs on

pub trait PlanningGraph {
    fn num_nodes(&self) -> usize;
    fn heads(&self, tail: NodeId) -> Vec<NodeId>;
    fn time_window(&self, node: NodeId) -> [f64; 2];
    /// Edge evaluated at the label's departure time (cost vector, arrival
    /// position, head battery ceiling).
    fn edge(&self, tail: NodeId, head: NodeId, departure: f64) -> EdgeEval;
    /// Visitation-mask index of a target node.
    fn bit_of(&self, node: NodeId) -> Option<usize>;
    fn n_bits(&self) -> usize;
}

// ---------------------------------------------------------------------------
// Propagation

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum TraceEvent {
    Extracted { node: NodeId, time: f64, consumed: f64 },
    Propagated { from: NodeId, to: NodeId, time: f64, consumed: f64 },
    Rejected { from: NodeId, to: NodeId, reason: &'static str },
}

#[derive(Debug, Default, Clone, Serialize)]
pub struct MpStats {
    pub extracted: usize,
    pub propagated: usize,
    pub rejected: usize,
    /// Live (non-dominated) labels at termination.
    pub live_labels: usize,
    #[serde(skip)]
    pub trace: Option<Vec<TraceEvent>>,
}

impl MpStats {
    fn log(&mut self, make: impl FnOnce() -> TraceEvent) {
        if let Some(tr) = self.trace.as_mut() {
            tr.push(make());
        }
    }
}

/// Extend `label` along `tail -> head`. Returns the candidate label, or the
/// rejection reason.
pub fn propagate<G: PlanningGraph>(
    graph: &G,
    state: &LabelState,
    id: LabelId,
    head: NodeId,
) -> Result<Label, &'static str> {
    let l = state.label(id);
    let e = graph.edge(l.node, head, l.time);
    let mut time = l.time + e.time;
    let mut consumed = l.consumed + e.battery;
    let mut mask = l.mask.clone();
    if let Some(bit) = graph.bit_of(head) {
        if !mask.bit(bit) {
            return Err("revisit");
        }
        mask.clear(bit);
    }
    let window = graph.time_window(head);
    if time > window[1] + TOL {
        return Err("window");
    }
    if consumed > e.ceiling + TOL {
        return Err("battery");
    }
    let wait = (window[0] - time).max(0.0);
    time = time.max(window[0]);
    consumed = consumed.max(0.0);
    Ok(Label { node: head, time, consumed, mask, pred: Some(id), wait })
}

/// Outcome of one label-setting run.
pub type TaskSequence = Vec<SeqStep>;

#[derive(Debug, Clone, Serialize)]
pub struct SeqStep {
    pub node: NodeId,
    /// Scheduled arrival (after waiting), relative to the planning epoch.
    pub time: f64,
    pub consumed: f64,
    pub wait: f64,
}

/// Run label setting until a complete route (mask all zero) is extracted;
/// the completed route is returned and the label sets are left intact for
/// further incremental growth. Returns None when the temporaries exhaust.
pub fn martins_process<G: PlanningGraph>(
    graph: &G,
    state: &mut LabelState,
    stats: &mut MpStats,
) -> Option<TaskSequence> {
    loop {
        // peek the lexicographic minimum among live temporaries
        let top = loop {
            match state.heap.peek() {
                None => {
                    stats.live_labels = state.live_label_count();
                    return None;
                }
                Some(k) if state.place[k.id as usize] != Place::Temp => {
                    state.heap.pop();
                }
                Some(k) => break k.id,
            }
        };
        let id = top;
        if state.label(id).mask.is_zero() {
            // early termination: leave the label temporary so the search can
            // resume after the graph grows
            stats.live_labels = state.live_label_count();
            return Some(backtrack(state, id));
        }
        state.heap.pop();
        state.make_permanent(id);
        stats.extracted += 1;
        {
            let l = state.label(id);
            let (node, time, consumed) = (l.node, l.time, l.consumed);
            stats.log(|| TraceEvent::Extracted { node, time, consumed });
        }
        let tail = state.label(id).node;
        for head in graph.heads(tail) {
            match propagate(graph, state, id, head) {
                Ok(cand) => {
                    let (t, c) = (cand.time, cand.consumed);
                    if state.insert_if_nondominated(cand).is_some() {
                        stats.propagated += 1;
                        stats.log(|| TraceEvent::Propagated {
                            from: tail,
                            to: head,
                            time: t,
                            consumed: c,
                        });
                    } else {
                        stats.rejected += 1;
                        stats.log(|| TraceEvent::Rejected { from: tail, to: head, reason: "dominated" });
                    }
                }
                Err(reason) => {
                    stats.rejected += 1;
                    stats.log(|| TraceEvent::Rejected { from: tail, to: head, reason });
                }
            }
        }
    }
}

/// Reverse a label's predecessor chain into a task sequence.
pub fn backtrack(state: &LabelState, id: LabelId) -> TaskSequence {
    let mut steps = Vec::new();
    let mut cur = Some(id);
    while let Some(i) = cur {
        let l = state.label(i);
        steps.push(SeqStep { node: l.node, time: l.time, consumed: l.consumed, wait: l.wait });
        cur = l.pred;
    }
    steps.reverse();
    steps
}
