//! Walks an ordered robot sequence, routing each robot against the
//! shrinking pool of unassigned targets, and collects the active set and
//! plans. Assignment is greedy in the sequence order; optimizing the
//! order itself is the job of the `ordering` module.

use crate::graph::Tvnn;
use crate::labeling::TaskSequence;
use crate::routing::{incremental_route, RouteInput, RouteOutcome, RouteStats, TargetUnit};
use crate::scenario::RobotParams;
use crate::world::RobotId;
use crate::geometry::Vec2;
use std::collections::BTreeMap;
use std::time::Instant;

/// A robot available to the planner at this round.
#[derive(Debug, Clone)]
pub struct RobotCandidate {
    pub id: RobotId,
    pub pos: Vec2,
    pub battery: f64,
    pub params: RobotParams,
    /// Targets this robot must keep from its previous plan.
    pub carried: Vec<TargetUnit>,
}

impl RobotCandidate {
    /// Robots with identical state are interchangeable in an ordering.
    pub fn equivalence_key(&self) -> (u64, u64, u64, Vec<usize>) {
        (
            self.pos.x.to_bits() ^ self.pos.y.to_bits().rotate_left(1),
            self.battery.to_bits(),
            self.params.battery_capacity.to_bits() ^ (self.params.capacity as u64),
            self.carried.iter().map(|u| u.target).collect(),
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct Assignment {
    /// Robots that received a nonempty plan, in pop order.
    pub active: Vec<RobotId>,
    pub plans: BTreeMap<RobotId, TaskSequence>,
    pub stats: BTreeMap<RobotId, RouteStats>,
    /// Units nobody took.
    pub leftover: Vec<TargetUnit>,
    /// Carried targets that could not be kept by their robot and found no
    /// other taker.
    pub dropped: Vec<usize>,
}

impl Assignment {
    pub fn feasible(&self) -> bool {
        self.leftover.is_empty() && self.dropped.is_empty()
    }

    /// Scheduled completion time of a robot's plan (its last step, plus the
    /// monitoring dwell when the last step is a target visit).
    pub fn completion(seq: &TaskSequence, tvnn: &Tvnn, monitor_duration: f64) -> f64 {
        seq.last()
            .map(|s| {
                let dwell = if tvnn.node(s.node).kind.is_target() {
                    monitor_duration
                } else {
                    0.0
                };
                s.time + dwell
            })
            .unwrap_or(0.0)
    }

    pub fn makespan(&self, tvnn: &Tvnn, monitor_duration: f64) -> f64 {
        self.plans
            .values()
            .map(|p| Self::completion(p, tvnn, monitor_duration))
            .fold(0.0, f64::max)
    }

    /// Gross battery drawn across all plans (positive consumption deltas).
    pub fn total_battery(&self) -> f64 {
        self.plans
            .values()
            .map(|p| {
                p.windows(2)
                    .map(|w| (w[1].consumed - w[0].consumed).max(0.0))
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Pop robots from `sequence` in order, route each against the remaining
/// pool, and stop once everything is assigned. Robots whose routing keeps
/// carried targets but admits nothing from the pool still become active.
/// Carried targets a robot had to drop are put back into the pool for
/// later robots; any still unassigned at the end are reported in `dropped`.
pub fn walk_sequence(
    tvnn: &Tvnn,
    sequence: &[&RobotCandidate],
    pool: &[TargetUnit],
    kappa_weights: [f64; 2],
) -> Assignment {
    let mut out = Assignment { leftover: pool.to_vec(), ..Default::default() };
    for cand in sequence {
        if out.leftover.is_empty() && cand.carried.is_empty() {
            continue;
        }
        extend_with(tvnn, &mut out, cand, kappa_weights);
    }
    out
}

/// Route one more robot against an existing partial assignment (used by the
/// ordering search to evaluate a child node incrementally).
pub fn extend_with(
    tvnn: &Tvnn,
    partial: &mut Assignment,
    cand: &RobotCandidate,
    kappa_weights: [f64; 2],
) {
    let input = RouteInput {
        tvnn,
        robot: cand.id,
        params: cand.params,
        pos: cand.pos,
        battery: cand.battery,
        kappa_weights,
    };
    let started = Instant::now();
    let (outcome, remaining) = incremental_route(&input, &partial.leftover, &cand.carried);
    let RouteOutcome { admitted, sequence, dropped_carried, mut stats } = outcome;
    stats.wall_s = started.elapsed().as_secs_f64();
    partial.leftover = remaining;
    // bounced carried targets go back to the pool for later robots
    for t in dropped_carried {
        let unit = crate::routing::units_for(tvnn, &[t]);
        partial.leftover.extend(unit);
        if !partial.dropped.contains(&t) {
            partial.dropped.push(t);
        }
    }
    if !admitted.is_empty() {
        // a taken dropped-target is no longer dropped
        partial.dropped.retain(|t| !admitted.iter().any(|u| u.target == *t));
        partial.active.push(cand.id);
        partial.plans.insert(cand.id, sequence);
        partial.stats.insert(cand.id, stats);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_tvnn;
    use crate::routing::units_for;
    use crate::scenario::parse_scenario_str;
    use crate::world::{snapshot_planner_view, WorldState};

    const TOML: &str = r#"
[workspace]
min = [0.0, 0.0]
max = [60.0, 60.0]

[roads]
intersections = [[0,30],[30,30],[60,30],[30,0],[30,60]]
segments = [[0,1],[1,2],[2,3],[1,4],[0,3]]

[[stations]]
position = [30.0, 28.0]
charge_rate = 0.2
num_charge_levels = 5

[robots]
count = 3
max_speed = 1.5
battery_capacity = 10.0
drain_rate = 0.2
sensor_range = 3.0
capacity = 6
home = [30.0, 28.0]

[targets]
list = [
  { road = 0, arc_pos = 0.3 },
  { road = 0, arc_pos = 0.7 },
  { road = 1, arc_pos = 0.3 },
  { road = 1, arc_pos = 0.7 },
  { road = 3, arc_pos = 0.5 },
  { road = 4, arc_pos = 0.5 },
]
speed = 0.2
interval_bound = 80.0

[constants]
monitor_duration = 2.0
sample_time = 0.5
replanning_horizon = 30.0
"#;

    fn candidates(s: &crate::scenario::Scenario, w: &WorldState) -> Vec<RobotCandidate> {
        w.robots
            .iter()
            .map(|r| RobotCandidate {
                id: r.id,
                pos: r.pos,
                battery: r.battery,
                params: s.robots[r.id],
                carried: Vec::new(),
            })
            .collect()
    }

    #[test]
    fn greedy_walk_covers_everything_with_prefix() {
        let s = parse_scenario_str(TOML, false).unwrap();
        let w = WorldState::new(&s);
        let view = snapshot_planner_view(&w, &s);
        let g = build_tvnn(&view, &s, s.planning_horizon());
        let pool = units_for(&g, &(0..6).collect::<Vec<_>>());
        let cands = candidates(&s, &w);
        let refs: Vec<&RobotCandidate> = cands.iter().collect();
        let out = walk_sequence(&g, &refs, &pool, [1.0, 1.0]);
        assert!(out.feasible(), "leftover: {:?}", out.leftover.len());
        // disjointness and exact union
        let mut seen = std::collections::BTreeSet::new();
        for (r, stats) in &out.stats {
            let _ = stats;
            for step in &out.plans[r] {
                if let Some(t) = g.node(step.node).kind.target_id() {
                    seen.insert((t, step.node));
                }
            }
        }
        let all_nodes: usize = pool.iter().map(|u| u.nodes.len()).sum();
        assert_eq!(seen.len(), all_nodes);
        // the active set is the prefix of robots with plans
        assert!(!out.active.is_empty());
        for r in &out.active {
            assert!(!out.plans[r].is_empty());
        }
    }

    #[test]
    fn empty_pool_assigns_nothing() {
        let s = parse_scenario_str(TOML, false).unwrap();
        let w = WorldState::new(&s);
        let view = snapshot_planner_view(&w, &s);
        let g = build_tvnn(&view, &s, s.planning_horizon());
        let cands = candidates(&s, &w);
        let refs: Vec<&RobotCandidate> = cands.iter().collect();
        let out = walk_sequence(&g, &refs, &[], [1.0, 1.0]);
        assert!(out.active.is_empty());
        assert!(out.plans.is_empty());
        assert!(out.feasible());
    }

    #[test]
    fn rerun_on_leftover_never_reassigns_covered_nodes() {
        let s = parse_scenario_str(TOML, false).unwrap();
        let w = WorldState::new(&s);
        let view = snapshot_planner_view(&w, &s);
        let g = build_tvnn(&view, &s, s.planning_horizon());
        let pool = units_for(&g, &(0..6).collect::<Vec<_>>());
        let cands = candidates(&s, &w);
        // only the first robot walks; leftovers remain
        let refs: Vec<&RobotCandidate> = cands.iter().take(1).collect();
        let first = walk_sequence(&g, &refs, &pool, [1.0, 1.0]);
        let covered: Vec<usize> = first
            .plans
            .values()
            .flatten()
            .filter_map(|st| g.node(st.node).kind.target_id())
            .collect();
        // second pass with remaining robots on the leftover
        let refs2: Vec<&RobotCandidate> = cands.iter().skip(1).collect();
        let second = walk_sequence(&g, &refs2, &first.leftover, [1.0, 1.0]);
        for step in second.plans.values().flatten() {
            if let Some(t) = g.node(step.node).kind.target_id() {
                assert!(!covered.contains(&t), "target {t} reassigned");
            }
        }
    }
}
