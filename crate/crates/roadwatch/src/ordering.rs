//! Best-first search over partial robot orderings.
//!
//! Each search node is a robot prefix with the assignment obtained by the
//! greedy sequence walk. Children append one unused robot (interchangeable
//! robots are expanded once), the frontier is selected by makespan, and a
//! feasible node covers every pooled target. Branch-and-bound pruning
//! compares a subtree bound against the incumbent; the budget is a
//! deterministic expansion count, optionally capped by wall time.

use crate::assign::{extend_with, walk_sequence, Assignment, RobotCandidate};
use crate::graph::{interception_time, NodeId, Tvnn};
use crate::routing::TargetUnit;
use crate::world::RobotId;
use serde::Serialize;
use std::cmp::Ordering as CmpOrdering;
use std::collections::{BinaryHeap, HashSet};
use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub struct SearchConfig {
    /// Deterministic budget: frontier nodes expanded.
    pub max_expansions: usize,
    /// Optional wall-clock cap; introduces machine-dependent cutoff, off by
    /// default.
    pub wall_budget: Option<Duration>,
    pub kappa_weights: [f64; 2],
    pub monitor_duration: f64,
    pub collect_trace: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            max_expansions: 2000,
            wall_budget: None,
            kappa_weights: [1.0, 1.0],
            monitor_duration: 2.0,
            collect_trace: false,
        }
    }
}

/// Lexicographic node cost: active robots, then makespan, then gross
/// battery drawn.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CostVec {
    pub active: usize,
    pub makespan: f64,
    pub delta_b: f64,
}

impl CostVec {
    pub fn lex_cmp(&self, other: &CostVec) -> CmpOrdering {
        self.active
            .cmp(&other.active)
            .then(self.makespan.total_cmp(&other.makespan))
            .then(self.delta_b.total_cmp(&other.delta_b))
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum SearchTraceEvent {
    Expanded { prefix: Vec<RobotId>, makespan: f64 },
    Pruned { prefix: Vec<RobotId>, lb_active: usize, lb_makespan: f64 },
    Incumbent { prefix: Vec<RobotId>, active: usize, makespan: f64 },
}

#[derive(Debug, Clone)]
pub struct OrderOutcome {
    pub prefix: Vec<RobotId>,
    pub assignment: Assignment,
    pub cost: CostVec,
}

#[derive(Debug)]
pub struct SearchOutput {
    /// Best node that assigned every pooled target, by (active, makespan,
    /// battery).
    pub best: Option<OrderOutcome>,
    /// The most-covering node seen, for best-effort dispatch when nothing
    /// is feasible.
    pub best_partial: OrderOutcome,
    pub expansions: usize,
    pub trace: Option<Vec<SearchTraceEvent>>,
}

struct SearchNode {
    prefix: Vec<usize>, // candidate indices
    assignment: Assignment,
    cost: CostVec,
}

struct FrontierKey {
    makespan: f64,
    active: usize,
    delta_b: f64,
    prefix: Vec<usize>,
    slot: usize,
}

impl PartialEq for FrontierKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == CmpOrdering::Equal
    }
}
impl Eq for FrontierKey {}
impl PartialOrd for FrontierKey {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}
impl Ord for FrontierKey {
    fn cmp(&self, other: &Self) -> CmpOrdering {
        self.makespan
            .total_cmp(&other.makespan)
            .then(self.active.cmp(&other.active))
            .then(self.delta_b.total_cmp(&other.delta_b))
            .then(self.prefix.cmp(&other.prefix))
            .reverse()
    }
}

/// Search for the robot ordering whose greedy assignment covers the pool
/// with the lexicographically best (active, makespan, battery) cost.
pub fn search_ordering(
    tvnn: &Tvnn,
    candidates: &[RobotCandidate],
    pool: &[TargetUnit],
    cfg: &SearchConfig,
) -> SearchOutput {
    let started = Instant::now();
    let mut trace = cfg.collect_trace.then(Vec::new);
    // candidates carrying targets stay active whether or not they are
    // popped; count them into every node's cost so prefixes compare fairly
    let carried_idx: Vec<usize> = (0..candidates.len())
        .filter(|&i| !candidates[i].carried.is_empty())
        .collect();

    let cost_of = |prefix: &[usize], a: &Assignment| -> CostVec {
        let unpopped_carrying =
            carried_idx.iter().filter(|i| !prefix.contains(i)).count();
        CostVec {
            active: a.active.len() + unpopped_carrying,
            makespan: a.makespan(tvnn, cfg.monitor_duration),
            delta_b: a.total_battery(),
        }
    };

    // earliest-completion matrix for the makespan lower bound
    let node_ids: Vec<NodeId> = pool.iter().flat_map(|u| u.nodes.iter().copied()).collect();
    let earliest: Vec<Vec<f64>> = candidates
        .iter()
        .map(|c| {
            node_ids
                .iter()
                .map(|&n| {
                    let node = tvnn.node(n);
                    let tau = interception_time(c.pos, &node.traj, c.params.max_speed, 0.0);
                    tau.max(node.time_window[0]) + cfg.monitor_duration
                })
                .collect()
        })
        .collect();

    // greedy incumbent: robots ordered by distance to the pool
    let greedy_order = greedy_order(tvnn, candidates, pool);
    let greedy_refs: Vec<&RobotCandidate> = greedy_order.iter().map(|&i| &candidates[i]).collect();
    let greedy_assignment = walk_sequence(tvnn, &greedy_refs, pool, cfg.kappa_weights);
    let greedy_prefix: Vec<usize> = greedy_order
        .iter()
        .copied()
        .filter(|&i| greedy_assignment.active.contains(&candidates[i].id) || !candidates[i].carried.is_empty())
        .collect();
    let greedy_cost = cost_of(&greedy_prefix, &greedy_assignment);
    let greedy_node = SearchNode {
        prefix: greedy_prefix,
        assignment: greedy_assignment,
        cost: greedy_cost,
    };

    let mut incumbent: Option<SearchNode> = greedy_node.assignment.feasible().then(|| SearchNode {
        prefix: greedy_node.prefix.clone(),
        assignment: greedy_node.assignment.clone(),
        cost: greedy_node.cost,
    });
    let mut best_partial = greedy_node;

    // root
    let root = SearchNode {
        prefix: Vec::new(),
        assignment: Assignment { leftover: pool.to_vec(), ..Default::default() },
        cost: CostVec { active: carried_idx.len(), makespan: 0.0, delta_b: 0.0 },
    };
    if root.assignment.feasible() && incumbent.as_ref().map_or(true, |inc| root.cost.lex_cmp(&inc.cost) == CmpOrdering::Less) {
        incumbent = Some(SearchNode {
            prefix: Vec::new(),
            assignment: root.assignment.clone(),
            cost: root.cost,
        });
    }

    let mut arena: Vec<SearchNode> = vec![root];
    let mut frontier: BinaryHeap<FrontierKey> = BinaryHeap::new();
    if !arena[0].assignment.feasible() {
        frontier.push(FrontierKey {
            makespan: 0.0,
            active: arena[0].cost.active,
            delta_b: 0.0,
            prefix: Vec::new(),
            slot: 0,
        });
    }

    let mut expansions = 0usize;
    while let Some(key) = frontier.pop() {
        if expansions >= cfg.max_expansions {
            break;
        }
        if let Some(budget) = cfg.wall_budget {
            if started.elapsed() > budget {
                break;
            }
        }
        let parent_slot = key.slot;
        expansions += 1;
        if let Some(tr) = trace.as_mut() {
            tr.push(SearchTraceEvent::Expanded {
                prefix: arena[parent_slot].prefix.iter().map(|&i| candidates[i].id).collect(),
                makespan: arena[parent_slot].cost.makespan,
            });
        }

        // one child per equivalence class of unused robots
        let mut seen_classes = HashSet::new();
        let unused: Vec<usize> = (0..candidates.len())
            .filter(|i| !arena[parent_slot].prefix.contains(i))
            .filter(|&i| seen_classes.insert(candidates[i].equivalence_key()))
            .collect();

        for i in unused {
            let mut assignment = arena[parent_slot].assignment.clone();
            extend_with(tvnn, &mut assignment, &candidates[i], cfg.kappa_weights);
            let mut prefix = arena[parent_slot].prefix.clone();
            prefix.push(i);
            let cost = cost_of(&prefix, &assignment);
            let child = SearchNode { prefix, assignment, cost };

            if child.assignment.feasible() {
                let better = incumbent
                    .as_ref()
                    .map_or(true, |inc| child.cost.lex_cmp(&inc.cost) == CmpOrdering::Less);
                if better {
                    if let Some(tr) = trace.as_mut() {
                        tr.push(SearchTraceEvent::Incumbent {
                            prefix: child.prefix.iter().map(|&i| candidates[i].id).collect(),
                            active: child.cost.active,
                            makespan: child.cost.makespan,
                        });
                    }
                    incumbent = Some(child);
                }
                continue; // feasible nodes gain nothing from more robots
            }

            // track the best partial for best-effort dispatch
            let more_covered = child.assignment.leftover.len() < best_partial.assignment.leftover.len()
                || (child.assignment.leftover.len() == best_partial.assignment.leftover.len()
                    && child.cost.lex_cmp(&best_partial.cost) == CmpOrdering::Less);
            if more_covered {
                best_partial = SearchNode {
                    prefix: child.prefix.clone(),
                    assignment: child.assignment.clone(),
                    cost: child.cost,
                };
            }

            let any_unused_left = child.prefix.len() < candidates.len();
            if !any_unused_left {
                continue; // dead branch: uncovered targets, no robots left
            }

            // subtree bounds
            let unused_after: Vec<usize> =
                (0..candidates.len()).filter(|i| !child.prefix.contains(i)).collect();
            let lb_makespan = subtree_makespan_lb(
                &child.assignment,
                child.cost.makespan,
                &unused_after,
                pool,
                &node_ids,
                &earliest,
            );
            let lb_active = child.cost.active
                + usize::from(!unused_after.iter().any(|&i| !candidates[i].carried.is_empty()));
            if let Some(inc) = &incumbent {
                let worse = lb_active > inc.cost.active
                    || (lb_active == inc.cost.active && lb_makespan > inc.cost.makespan + 1e-12);
                if worse {
                    if let Some(tr) = trace.as_mut() {
                        tr.push(SearchTraceEvent::Pruned {
                            prefix: child.prefix.iter().map(|&i| candidates[i].id).collect(),
                            lb_active,
                            lb_makespan,
                        });
                    }
                    continue;
                }
            }

            let slot = arena.len();
            frontier.push(FrontierKey {
                makespan: child.cost.makespan,
                active: child.cost.active,
                delta_b: child.cost.delta_b,
                prefix: child.prefix.clone(),
                slot,
            });
            arena.push(child);
        }
    }

    let to_outcome = |n: SearchNode| OrderOutcome {
        prefix: n.prefix.iter().map(|&i| candidates[i].id).collect(),
        assignment: n.assignment,
        cost: n.cost,
    };
    SearchOutput {
        best: incumbent.map(to_outcome),
        best_partial: to_outcome(best_partial),
        expansions,
        trace,
    }
}

/// Robots ordered by distance to the nearest pooled node (the one-step
/// greedy heuristic providing the anytime floor / upper bound).
fn greedy_order(tvnn: &Tvnn, candidates: &[RobotCandidate], pool: &[TargetUnit]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    let dist_to_pool = |i: usize| -> f64 {
        pool.iter()
            .flat_map(|u| u.nodes.iter())
            .map(|&n| {
                crate::geometry::dist(candidates[i].pos, tvnn.node(n).traj.pos_at(0.0))
            })
            .fold(f64::INFINITY, f64::min)
    };
    order.sort_by(|&a, &b| {
        let da = if candidates[a].carried.is_empty() { dist_to_pool(a) } else { -1.0 };
        let db = if candidates[b].carried.is_empty() { dist_to_pool(b) } else { -1.0 };
        da.total_cmp(&db).then(candidates[a].id.cmp(&candidates[b].id))
    });
    order
}

/// Admissible-at-desk-scale makespan bound for every completion reachable
/// below this node: committed plans persist, and every leftover node costs
/// at least the best unused robot's direct interception plus the dwell.
fn subtree_makespan_lb(
    assignment: &Assignment,
    committed_makespan: f64,
    unused: &[usize],
    pool: &[TargetUnit],
    node_ids: &[NodeId],
    earliest: &[Vec<f64>],
) -> f64 {
    let mut lb = committed_makespan;
    for unit in &assignment.leftover {
        let _ = pool;
        for &n in &unit.nodes {
            if let Some(col) = node_ids.iter().position(|&m| m == n) {
                let best = unused
                    .iter()
                    .map(|&i| earliest[i][col])
                    .fold(f64::INFINITY, f64::min);
                if best.is_finite() {
                    lb = lb.max(best);
                }
            }
        }
    }
    lb
}
