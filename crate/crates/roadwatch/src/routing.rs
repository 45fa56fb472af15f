//! Per-robot route construction: grow a sub-graph one target at a time in
//! priority order, keep the label sets between admissions, and roll back
//! the last admission when the search can no longer cover everything.

use crate::graph::{EdgeEval, NodeId, NodeKind, Tvnn};
use crate::labeling::{
    martins_process, propagate, LabelState, MpStats, PlanningGraph, TaskSequence,
};
use crate::scenario::RobotParams;
use crate::world::{RobotId, StationId, TargetId};
use crate::geometry::{dist, Vec2};
use serde::Serialize;
use smallvec::SmallVec;

/// One target's node bundle: its tracking node and/or intersection node.
/// Admission moves the whole bundle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetUnit {
    pub target: TargetId,
    pub nodes: SmallVec<[NodeId; 2]>,
}

/// Group the graph's target nodes into per-target units, restricted to
/// `targets` (in ascending target order).
pub fn units_for(tvnn: &Tvnn, targets: &[TargetId]) -> Vec<TargetUnit> {
    let mut sorted: Vec<TargetId> = targets.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    sorted
        .into_iter()
        .filter_map(|target| {
            let nodes: SmallVec<[NodeId; 2]> = tvnn
                .nodes
                .iter()
                .enumerate()
                .filter(|(_, n)| n.kind.target_id() == Some(target))
                .map(|(i, _)| i)
                .collect();
            if nodes.is_empty() {
                None
            } else {
                Some(TargetUnit { target, nodes })
            }
        })
        .collect()
}

/// Per-robot view over the shared graph: a membership filter plus the
/// visitation-bit assignment. Grows as targets are admitted.
#[derive(Clone)]
pub struct SubGraph<'a> {
    pub tvnn: &'a Tvnn,
    pub robot: RobotId,
    pub params: RobotParams,
    pub robot_node: NodeId,
    member: Vec<bool>,
    bit_of_node: Vec<Option<usize>>,
    bits: Vec<NodeId>,
    stations: Vec<StationId>,
}

impl<'a> SubGraph<'a> {
    pub fn new(tvnn: &'a Tvnn, robot: RobotId, params: RobotParams) -> Self {
        let robot_node = tvnn.robot_node(robot);
        let mut member = vec![false; tvnn.nodes.len()];
        member[robot_node] = true;
        SubGraph {
            tvnn,
            robot,
            params,
            robot_node,
            member,
            bit_of_node: vec![None; tvnn.nodes.len()],
            bits: Vec::new(),
            stations: Vec::new(),
        }
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.member[node]
    }

    /// Number of nodes currently in the sub-graph.
    pub fn node_count(&self) -> usize {
        self.member.iter().filter(|&&m| m).count()
    }

    pub fn station_count(&self) -> usize {
        self.stations.len()
    }

    /// Admit one target node, assigning it the next visitation bit.
    /// Returns the new node's bit index.
    fn admit_target_node(&mut self, node: NodeId) -> usize {
        debug_assert!(!self.member[node]);
        self.member[node] = true;
        let bit = self.bits.len();
        self.bit_of_node[node] = Some(bit);
        self.bits.push(node);
        bit
    }

    /// Admit a station unit (dock plus charge nodes) if not present.
    fn admit_station(&mut self, station: StationId) {
        if self.stations.contains(&station) {
            return;
        }
        self.stations.push(station);
        for (i, n) in self.tvnn.nodes.iter().enumerate() {
            match n.kind {
                NodeKind::Dock { station: s } | NodeKind::Charge { station: s, .. }
                    if s == station =>
                {
                    self.member[i] = true;
                }
                _ => {}
            }
        }
    }
}

impl PlanningGraph for SubGraph<'_> {
    fn num_nodes(&self) -> usize {
        self.tvnn.nodes.len()
    }

    fn heads(&self, tail: NodeId) -> Vec<NodeId> {
        (0..self.tvnn.nodes.len())
            .filter(|&h| self.member[h] && self.tvnn.edge_allowed(tail, h))
            .collect()
    }

    fn time_window(&self, node: NodeId) -> [f64; 2] {
        self.tvnn.node(node).time_window
    }

    fn edge(&self, tail: NodeId, head: NodeId, departure: f64) -> EdgeEval {
        self.tvnn.edge_cost(tail, head, &self.params, departure)
    }

    fn bit_of(&self, node: NodeId) -> Option<usize> {
        self.bit_of_node[node]
    }

    fn n_bits(&self) -> usize {
        self.bits.len()
    }
}

/// Target priority: travel time from the robot plus the node's deadline;
/// smaller is more urgent. A unit scores at its most urgent node.
pub fn kappa(tvnn: &Tvnn, node: NodeId, robot_pos: Vec2, params: &RobotParams, weights: [f64; 2]) -> f64 {
    let n = tvnn.node(node);
    let d = dist(n.traj.pos_at(0.0), robot_pos);
    weights[0] * d / params.max_speed + weights[1] * n.time_window[1]
}

fn unit_kappa(tvnn: &Tvnn, unit: &TargetUnit, robot_pos: Vec2, params: &RobotParams, weights: [f64; 2]) -> (f64, NodeId) {
    unit.nodes
        .iter()
        .map(|&n| (kappa(tvnn, n, robot_pos, params, weights), n))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("unit has nodes")
}

fn nearest_station(tvnn: &Tvnn, pos: Vec2) -> StationId {
    tvnn.dock_nodes
        .iter()
        .map(|&(sid, node)| (sid, dist(tvnn.node(node).traj.pos_at(0.0), pos)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .expect("at least one station")
        .0
}

#[derive(Debug, Default, Clone, Serialize)]
pub struct RouteStats {
    pub admitted_targets: usize,
    pub mp_calls: usize,
    /// Live labels after the final successful search.
    pub live_labels: usize,
    /// Final sub-graph size.
    pub nodes: usize,
    pub extracted: usize,
    pub propagated: usize,
    pub rejected: usize,
    /// Planner wall time, filled by the caller; excluded from deterministic
    /// outputs.
    #[serde(skip)]
    pub wall_s: f64,
}

#[derive(Debug, Clone)]
pub struct RouteOutcome {
    /// Admitted units, in admission order.
    pub admitted: Vec<TargetUnit>,
    /// The route over the final sub-graph; empty when no target fit.
    pub sequence: TaskSequence,
    /// Carried targets that could not be kept.
    pub dropped_carried: Vec<TargetId>,
    pub stats: RouteStats,
}

pub struct RouteInput<'a> {
    pub tvnn: &'a Tvnn,
    pub robot: RobotId,
    pub params: RobotParams,
    pub pos: Vec2,
    pub battery: f64,
    pub kappa_weights: [f64; 2],
}

/// Incremental route construction for one robot.
///
/// Carried units are admitted first (a failing carried unit is dropped and
/// reported, not fatal); then unassigned units are admitted in priority
/// order until one fails, capacity is reached, or the pool empties. Label
/// sets persist across admissions: new nodes get a fresh visitation
/// dimension, permanent labels are re-propagated to them, and the search
/// resumes.
pub fn incremental_route(
    input: &RouteInput,
    pool: &[TargetUnit],
    carried: &[TargetUnit],
) -> (RouteOutcome, Vec<TargetUnit>) {
    let tvnn = input.tvnn;
    let mut sub = SubGraph::new(tvnn, input.robot, input.params);
    let mut labels = LabelState::new(tvnn.nodes.len());
    labels.seed(
        sub.robot_node,
        input.params.battery_capacity - input.battery,
        0,
    );
    let mut stats = RouteStats::default();
    let mut admitted: Vec<TargetUnit> = Vec::new();
    let mut sequence: TaskSequence = Vec::new();
    let mut dropped_carried = Vec::new();
    let mut remaining: Vec<TargetUnit> = pool.to_vec();

    // carried first
    for unit in carried {
        let snapshot = (sub.clone(), labels.clone());
        if let Some(seq) = try_admit(&mut sub, &mut labels, tvnn, input, unit, &mut stats) {
            sequence = seq;
            admitted.push(unit.clone());
        } else {
            (sub, labels) = snapshot;
            dropped_carried.push(unit.target);
        }
    }

    // then the unassigned pool, most urgent first
    while admitted.len() < input.params.capacity && !remaining.is_empty() {
        let (best_idx, _) = remaining
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let (k, _) = unit_kappa(tvnn, u, input.pos, &input.params, input.kappa_weights);
                (i, (k, u.target))
            })
            .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.1 .1.cmp(&b.1 .1)))
            .expect("nonempty pool");
        let unit = remaining.remove(best_idx);
        let snapshot = (sub.clone(), labels.clone());
        if let Some(seq) = try_admit(&mut sub, &mut labels, tvnn, input, &unit, &mut stats) {
            sequence = seq;
            admitted.push(unit);
        } else {
            // revert the failed admission and stop growing
            (sub, labels) = snapshot;
            remaining.push(unit);
            break;
        }
    }

    stats.admitted_targets = admitted.len();
    stats.live_labels = labels.live_label_count();
    stats.nodes = sub.node_count();
    if admitted.is_empty() {
        sequence.clear();
    }
    (
        RouteOutcome { admitted, sequence, dropped_carried, stats },
        remaining,
    )
}

/// Admit one unit plus its nearest station, extend dimensions, re-propagate
/// permanents to the new nodes, and resume the search.
fn try_admit(
    sub: &mut SubGraph,
    labels: &mut LabelState,
    tvnn: &Tvnn,
    input: &RouteInput,
    unit: &TargetUnit,
    stats: &mut RouteStats,
) -> Option<TaskSequence> {
    let (_, urgent_node) = unit_kappa(tvnn, unit, input.pos, &input.params, input.kappa_weights);
    let station = nearest_station(tvnn, tvnn.node(urgent_node).traj.pos_at(0.0));
    let mut new_nodes: Vec<NodeId> = Vec::new();
    for &n in &unit.nodes {
        sub.admit_target_node(n);
        labels.extend_dimension();
        new_nodes.push(n);
    }
    let had_station = sub.stations.contains(&station);
    sub.admit_station(station);
    if !had_station {
        for (i, n) in tvnn.nodes.iter().enumerate() {
            match n.kind {
                NodeKind::Dock { station: s } if s == station => new_nodes.push(i),
                _ => {}
            }
        }
    }

    // re-propagate permanents to the newly reachable nodes
    for id in labels.permanent_ids() {
        let tail = labels.label(id).node;
        for &head in &new_nodes {
            if !tvnn.edge_allowed(tail, head) {
                continue;
            }
            if let Ok(cand) = propagate(sub, labels, id, head) {
                labels.insert_if_nondominated(cand);
            }
        }
    }

    let mut mp_stats = MpStats::default();
    let out = martins_process(sub, labels, &mut mp_stats);
    stats.mp_calls += 1;
    stats.extracted += mp_stats.extracted;
    stats.propagated += mp_stats.propagated;
    stats.rejected += mp_stats.rejected;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_tvnn;
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
count = 2
max_speed = 1.5
battery_capacity = 10.0
drain_rate = 0.2
sensor_range = 3.0
capacity = 6
home = [30.0, 28.0]

[targets]
list = [
  { road = 0, arc_pos = 0.5 },
  { road = 1, arc_pos = 0.4 },
  { road = 3, arc_pos = 0.6 },
]
speed = 0.2
interval_bound = 80.0

[constants]
monitor_duration = 2.0
sample_time = 0.5
replanning_horizon = 30.0
"#;

    fn setup() -> (crate::scenario::Scenario, crate::world::WorldState) {
        let s = parse_scenario_str(TOML, false).unwrap();
        let w = WorldState::new(&s);
        (s, w)
    }

    #[test]
    fn kappa_values() {
        let (s, w) = setup();
        let view = snapshot_planner_view(&w, &s);
        let g = build_tvnn(&view, &s, s.planning_horizon());
        // build an artificial check: distance 15, window upper 40
        // kappa = 15/1.5 + 40 = 50 with unit weights
        let node = g
            .target_nodes()
            .into_iter()
            .next()
            .expect("has target nodes");
        let n = g.node(node);
        let d = crate::geometry::dist(n.traj.pos_at(0.0), view.robots[0].pos);
        let k = kappa(&g, node, view.robots[0].pos, &s.robots[0], [1.0, 1.0]);
        assert!((k - (d / 1.5 + n.time_window[1])).abs() < 1e-9);
        // degenerate weights: pure deadline ordering
        let k0 = kappa(&g, node, view.robots[0].pos, &s.robots[0], [0.0, 1.0]);
        assert!((k0 - n.time_window[1]).abs() < 1e-12);
    }

    #[test]
    fn urgent_window_selected_first() {
        // two targets at equal distance; the tighter window wins
        let (s, mut w) = setup();
        // symmetric positions around the robot/hub at (30,28)
        w.targets[0].pos = crate::geometry::Vec2::new(15.0, 30.0);
        w.targets[1].pos = crate::geometry::Vec2::new(45.0, 30.0);
        w.targets[0].clock = 0.0;
        w.targets[1].clock = 40.0; // much tighter slack
        let view = snapshot_planner_view(&w, &s);
        let g = build_tvnn(&view, &s, s.planning_horizon());
        let units = units_for(&g, &[0, 1]);
        let input = RouteInput {
            tvnn: &g,
            robot: 0,
            params: s.robots[0],
            pos: view.robots[0].pos,
            battery: 10.0,
            kappa_weights: [1.0, 1.0],
        };
        let (k0, _) = units
            .iter()
            .find(|u| u.target == 0)
            .map(|u| super::unit_kappa(&g, u, input.pos, &input.params, input.kappa_weights))
            .unwrap();
        let (k1, _) = units
            .iter()
            .find(|u| u.target == 1)
            .map(|u| super::unit_kappa(&g, u, input.pos, &input.params, input.kappa_weights))
            .unwrap();
        assert!(k1 < k0, "tighter deadline scores more urgent: {k1} vs {k0}");
    }

    #[test]
    fn three_feasible_targets_all_admitted() {
        let (s, w) = setup();
        let view = snapshot_planner_view(&w, &s);
        let g = build_tvnn(&view, &s, s.planning_horizon());
        let units = units_for(&g, &[0, 1, 2]);
        assert_eq!(units.len(), 3);
        let input = RouteInput {
            tvnn: &g,
            robot: 0,
            params: s.robots[0],
            pos: view.robots[0].pos,
            battery: 10.0,
            kappa_weights: s.constants.kappa_weights,
        };
        let (out, leftover) = incremental_route(&input, &units, &[]);
        assert_eq!(out.admitted.len(), 3, "all three targets fit");
        assert!(leftover.is_empty());
        assert!(!out.sequence.is_empty());
        // every admitted node appears exactly once in the sequence
        for u in &out.admitted {
            for &n in &u.nodes {
                assert_eq!(out.sequence.iter().filter(|st| st.node == n).count(), 1);
            }
        }
        // times are non-decreasing along the route
        for w2 in out.sequence.windows(2) {
            assert!(w2[0].time <= w2[1].time + 1e-9);
        }
    }

    #[test]
    fn empty_pool_gives_empty_outcome() {
        let (s, w) = setup();
        let view = snapshot_planner_view(&w, &s);
        let g = build_tvnn(&view, &s, s.planning_horizon());
        let input = RouteInput {
            tvnn: &g,
            robot: 0,
            params: s.robots[0],
            pos: view.robots[0].pos,
            battery: 10.0,
            kappa_weights: s.constants.kappa_weights,
        };
        let (out, leftover) = incremental_route(&input, &[], &[]);
        assert!(out.admitted.is_empty());
        assert!(out.sequence.is_empty());
        assert!(leftover.is_empty());
    }

    #[test]
    fn infeasible_second_target_rolls_back() {
        let (s, mut w) = setup();
        // target 1 has an impossible deadline: clock nearly at the bound
        w.targets[1].clock = 79.9;
        // keep it far so travel cannot make it; target 0 near the robot
        w.targets[0].pos = crate::geometry::Vec2::new(30.0, 24.0);
        w.targets[1].pos = crate::geometry::Vec2::new(0.5, 30.0);
        let view = snapshot_planner_view(&w, &s);
        let g = build_tvnn(&view, &s, s.planning_horizon());
        let units = units_for(&g, &[0, 1]);
        let input = RouteInput {
            tvnn: &g,
            robot: 0,
            params: s.robots[0],
            pos: view.robots[0].pos,
            battery: 10.0,
            kappa_weights: s.constants.kappa_weights,
        };
        let (out, leftover) = incremental_route(&input, &units, &[]);
        // the infeasible unit bounced; exactly one target admitted
        assert_eq!(out.admitted.len(), 1, "admitted: {:?}", out.admitted);
        assert_eq!(leftover.len(), 1);
        assert!(!out.sequence.is_empty());
    }

    #[test]
    fn capacity_caps_distinct_targets() {
        let (s, w) = setup();
        let view = snapshot_planner_view(&w, &s);
        let g = build_tvnn(&view, &s, s.planning_horizon());
        let units = units_for(&g, &[0, 1, 2]);
        let mut params = s.robots[0];
        params.capacity = 2;
        let input = RouteInput {
            tvnn: &g,
            robot: 0,
            params,
            pos: view.robots[0].pos,
            battery: 10.0,
            kappa_weights: s.constants.kappa_weights,
        };
        let (out, leftover) = incremental_route(&input, &units, &[]);
        assert!(out.admitted.len() <= 2);
        assert_eq!(out.admitted.len() + leftover.len(), 3);
    }

    #[test]
    fn monotone_growth_and_incremental_matches_oneshot() {
        // the incremental result must replay cleanly and match a one-shot
        // search on the same final sub-graph
        let (s, w) = setup();
        let view = snapshot_planner_view(&w, &s);
        let g = build_tvnn(&view, &s, s.planning_horizon());
        let units = units_for(&g, &[0, 1, 2]);
        let input = RouteInput {
            tvnn: &g,
            robot: 0,
            params: s.robots[0],
            pos: view.robots[0].pos,
            battery: 10.0,
            kappa_weights: s.constants.kappa_weights,
        };
        let (out, _) = incremental_route(&input, &units, &[]);
        assert!(!out.sequence.is_empty());

        // one-shot: admit the same units in the same order with fresh labels
        let mut sub = SubGraph::new(&g, 0, s.robots[0]);
        for u in &out.admitted {
            for &n in &u.nodes {
                sub.admit_target_node(n);
            }
            let (_, urgent) = super::unit_kappa(&g, u, input.pos, &input.params, input.kappa_weights);
            sub.admit_station(super::nearest_station(&g, g.node(urgent).traj.pos_at(0.0)));
        }
        let mut labels = LabelState::new(g.nodes.len());
        labels.seed(sub.robot_node, 0.0, sub.n_bits());
        let mut stats = MpStats::default();
        let oneshot = martins_process(&sub, &mut labels, &mut stats).expect("feasible");
        let last_inc = out.sequence.last().unwrap();
        let last_one = oneshot.last().unwrap();
        assert!(
            (last_inc.time - last_one.time).abs() < 1e-9,
            "incremental {} vs one-shot {}",
            last_inc.time,
            last_one.time
        );
        assert!((last_inc.consumed - last_one.consumed).abs() < 1e-9);
    }
}
