//! The time-varying planning graph.
//!
//! Robots, targets and stations become typed nodes. Each target may
//! contribute a tracking node (visit the target wherever it is) and an
//! intersection node (meet it at its next hub, inside a hard window of
//! width equal to the monitor dwell). Stations decompose into a docking
//! node plus one node per discrete charge amount, which turns charging
//! duration into an ordinary routing choice. Edge costs are 2-vectors
//! (time, battery); battery cost is proportional to time on travel edges
//! and negative on charge edges.

use crate::geometry::{dist, Vec2};
use crate::scenario::{RobotParams, Scenario};
use crate::world::{PlannerView, StationId, TargetId, TrajPrediction};
use serde::Serialize;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeKind {
    /// A robot's start position at the planning epoch.
    Robot { robot: usize },
    /// Track the target along its predicted path.
    Target { target: TargetId },
    /// Meet the target at its next intersection.
    InterTarget { target: TargetId },
    /// Station entry point.
    Dock { station: StationId },
    /// Receive `level`/`num_levels` of a full battery at the station.
    Charge { station: StationId, level: u32 },
}

impl NodeKind {
    pub fn is_target(&self) -> bool {
        matches!(self, NodeKind::Target { .. } | NodeKind::InterTarget { .. })
    }

    pub fn target_id(&self) -> Option<TargetId> {
        match self {
            NodeKind::Target { target } | NodeKind::InterTarget { target } => Some(*target),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub kind: NodeKind,
    pub traj: Traj,
    /// Arrival-time window; `[0, +inf)` for robot and station nodes.
    pub time_window: [f64; 2],
}

#[derive(Debug, Clone, Copy)]
pub enum Traj {
    Static(Vec2),
    Moving(TrajPrediction),
}

impl Traj {
    pub fn pos_at(&self, t: f64) -> Vec2 {
        match self {
            Traj::Static(p) => *p,
            Traj::Moving(pred) => pred.pos_at(t),
        }
    }

    fn speed(&self) -> f64 {
        match self {
            Traj::Static(_) => 0.0,
            Traj::Moving(pred) => pred.speed,
        }
    }
}

/// Planning graph for one replanning round. Immutable once built; robots
/// grow per-robot sub-views over it.
#[derive(Debug, Clone)]
pub struct Tvnn {
    pub nodes: Vec<Node>,
    /// Planning epoch in simulation time; all node windows and label times
    /// are relative to it.
    pub epoch: f64,
    pub horizon: f64,
    pub robot_nodes: Vec<(usize, NodeId)>,
    pub dock_nodes: Vec<(StationId, NodeId)>,
    station_positions: Vec<Vec2>,
    charge_rates: Vec<f64>,
    num_levels: Vec<u32>,
    monitor_duration: f64,
}

/// Node inclusion rules for a target: the tracking node is unnecessary when
/// meeting the target at its next intersection already happens within the
/// interval slack; the intersection node is unnecessary when the crossing
/// lies beyond the planning horizon.
pub fn target_node_plan(eta_inter: f64, slack: f64, horizon: f64) -> (bool, bool) {
    let want_tracking = eta_inter >= slack;
    let want_inter = eta_inter <= horizon;
    (want_tracking, want_inter)
}

pub fn build_tvnn(view: &PlannerView, scenario: &Scenario, horizon: f64) -> Tvnn {
    assert!(horizon > 0.0, "planning horizon must be positive");
    let t0 = scenario.constants.monitor_duration;
    let mut nodes = Vec::new();
    let mut robot_nodes = Vec::new();
    let mut dock_nodes = Vec::new();

    for r in &view.robots {
        robot_nodes.push((r.id, nodes.len()));
        nodes.push(Node {
            kind: NodeKind::Robot { robot: r.id },
            traj: Traj::Static(r.pos),
            time_window: [0.0, f64::INFINITY],
        });
    }

    for tv in &view.targets {
        let slack = tv.interval_bound - tv.clock;
        let (want_tracking, want_inter) = target_node_plan(tv.eta_inter, slack, horizon);
        if want_tracking {
            // The clock resets when a dwell completes, so the arrival
            // deadline leads the interval bound by the dwell duration.
            let upper = (slack - t0).max(0.0);
            nodes.push(Node {
                kind: NodeKind::Target { target: tv.id },
                traj: Traj::Moving(tv.prediction()),
                time_window: [0.0, upper],
            });
        }
        if want_inter {
            nodes.push(Node {
                kind: NodeKind::InterTarget { target: tv.id },
                traj: Traj::Static(tv.next_intersection),
                time_window: [tv.eta_inter - t0, tv.eta_inter],
            });
        }
    }

    for (sid, st) in scenario.stations.iter().enumerate() {
        dock_nodes.push((sid, nodes.len()));
        nodes.push(Node {
            kind: NodeKind::Dock { station: sid },
            traj: Traj::Static(st.position),
            time_window: [0.0, f64::INFINITY],
        });
        for level in 1..=st.num_charge_levels {
            nodes.push(Node {
                kind: NodeKind::Charge { station: sid, level },
                traj: Traj::Static(st.position),
                time_window: [0.0, f64::INFINITY],
            });
        }
    }

    Tvnn {
        nodes,
        epoch: view.t,
        horizon,
        robot_nodes,
        dock_nodes,
        station_positions: scenario.stations.iter().map(|s| s.position).collect(),
        charge_rates: scenario.stations.iter().map(|s| s.charge_rate).collect(),
        num_levels: scenario.stations.iter().map(|s| s.num_charge_levels).collect(),
        monitor_duration: scenario.constants.monitor_duration,
    }
}

impl Tvnn {
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn robot_node(&self, robot: usize) -> NodeId {
        self.robot_nodes
            .iter()
            .find(|(r, _)| *r == robot)
            .map(|(_, n)| *n)
            .expect("robot node exists")
    }

    /// All target nodes (tracking and intersection), in graph order.
    pub fn target_nodes(&self) -> Vec<NodeId> {
        (0..self.nodes.len())
            .filter(|&n| self.nodes[n].kind.is_target())
            .collect()
    }

    fn dist_to_nearest_station(&self, p: Vec2) -> f64 {
        self.station_positions
            .iter()
            .map(|&s| dist(p, s))
            .fold(f64::INFINITY, f64::min)
    }

    /// Connectivity rule: may an edge `tail -> head` exist?
    ///
    /// Robot nodes and target nodes reach targets and docks (a target node
    /// never reaches itself); a dock reaches only its own charge nodes;
    /// charge nodes reach targets and docks. Charge nodes are enterable
    /// only through their dock, and nothing re-enters robot nodes.
    pub fn edge_allowed(&self, tail: NodeId, head: NodeId) -> bool {
        if tail == head {
            return false;
        }
        let th = &self.nodes[head].kind;
        match (&self.nodes[tail].kind, th) {
            (NodeKind::Robot { .. }, NodeKind::Target { .. })
            | (NodeKind::Robot { .. }, NodeKind::InterTarget { .. })
            | (NodeKind::Robot { .. }, NodeKind::Dock { .. }) => true,
            (NodeKind::Target { .. } | NodeKind::InterTarget { .. }, k) => {
                matches!(k, NodeKind::Target { .. } | NodeKind::InterTarget { .. } | NodeKind::Dock { .. })
            }
            (NodeKind::Dock { station }, NodeKind::Charge { station: s2, .. }) => station == s2,
            (NodeKind::Charge { .. }, k) => {
                matches!(k, NodeKind::Target { .. } | NodeKind::InterTarget { .. } | NodeKind::Dock { .. })
            }
            _ => false,
        }
    }

    /// All heads reachable from `tail` within this graph.
    pub fn reachable_set(&self, tail: NodeId) -> Vec<NodeId> {
        (0..self.nodes.len())
            .filter(|&head| self.edge_allowed(tail, head))
            .collect()
    }

    /// Evaluate the edge `tail -> head` for a robot departing the tail node
    /// at `departure` (time relative to the epoch, before any dwell at the
    /// tail). Returns the 2-vector cost, the head's predicted position at
    /// arrival, and the battery ceiling at the head for this robot.
    pub fn edge_cost(
        &self,
        tail: NodeId,
        head: NodeId,
        robot: &RobotParams,
        departure: f64,
    ) -> EdgeEval {
        let tail_node = &self.nodes[tail];
        let head_node = &self.nodes[head];
        if let (NodeKind::Dock { station }, NodeKind::Charge { level, .. }) =
            (&tail_node.kind, &head_node.kind)
        {
            let st_pos = self.station_positions[*station];
            let amount = robot.battery_capacity * (*level as f64)
                / self.num_levels_of(*station) as f64;
            let rate = self.charge_rate_of(*station);
            return EdgeEval {
                time: amount / rate,
                battery: -amount,
                arrival_pos: st_pos,
                ceiling: robot.battery_capacity,
            };
        }
        let dwell = if tail_node.kind.is_target() {
            self.monitor_duration
        } else {
            0.0
        };
        let start_time = departure + dwell;
        let start_pos = tail_node.traj.pos_at(start_time);
        let tau = interception_time(start_pos, &head_node.traj, robot.max_speed, start_time);
        let time = dwell + tau;
        let arrival_pos = head_node.traj.pos_at(start_time + tau);
        let ceiling = if head_node.kind.is_target() {
            robot.battery_capacity
                - robot.drain_rate * self.dist_to_nearest_station(arrival_pos) / robot.max_speed
        } else {
            robot.battery_capacity
        };
        EdgeEval {
            time,
            battery: robot.drain_rate * time,
            arrival_pos,
            ceiling,
        }
    }

    fn num_levels_of(&self, station: StationId) -> u32 {
        self.num_levels[station]
    }

    fn charge_rate_of(&self, station: StationId) -> f64 {
        self.charge_rates[station]
    }

    /// Debug dump of nodes and windows as JSON.
    pub fn dump_json(&self) -> String {
        #[derive(Serialize)]
        struct NodeDump<'a> {
            id: usize,
            #[serde(flatten)]
            kind: &'a NodeKind,
            pos_now: [f64; 2],
            time_window: [f64; 2],
        }
        let dump: Vec<NodeDump> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, n)| {
                let p = n.traj.pos_at(0.0);
                NodeDump { id, kind: &n.kind, pos_now: [p.x, p.y], time_window: n.time_window }
            })
            .collect();
        serde_json::to_string_pretty(&dump).expect("dump serializes")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EdgeEval {
    /// Time cost: dwell at the tail (if it is a target node) plus travel.
    pub time: f64,
    /// Battery cost; negative on charge edges.
    pub battery: f64,
    /// Head position at arrival.
    pub arrival_pos: Vec2,
    /// Battery-consumed ceiling at the head for this robot (reserves the
    /// return leg to the nearest station at target nodes).
    pub ceiling: f64,
}

/// Smallest tau >= 0 with dist(start, traj(t0+tau)) <= speed*tau, by
/// fixed-point iteration; contracts because targets are slower than robots.
/// Falls back to the conservative closing-speed bound on non-convergence.
pub fn interception_time(start: Vec2, traj: &Traj, speed: f64, t0: f64) -> f64 {
    let mut tau = dist(start, traj.pos_at(t0)) / speed;
    for _ in 0..100 {
        let next = dist(start, traj.pos_at(t0 + tau)) / speed;
        if (next - tau).abs() <= 1e-3 {
            return next;
        }
        tau = next;
    }
    let closing = speed - traj.speed();
    dist(start, traj.pos_at(t0)) / closing
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario_str;
    use crate::world::{snapshot_planner_view, WorldState};

    const TOML: &str = r#"
[workspace]
min = [0.0, 0.0]
max = [50.0, 50.0]

[roads]
intersections = [[0,25],[25,25],[50,25]]
segments = [[0,1],[1,2]]

[[stations]]
position = [25.0, 20.0]
charge_rate = 0.2
num_charge_levels = 5

[robots]
count = 1
max_speed = 1.5
battery_capacity = 10.0
drain_rate = 0.2
sensor_range = 3.0
capacity = 6
home = [25.0, 25.0]

[targets]
list = [{ road = 0, arc_pos = 0.5 }]
speed = 0.2
interval_bound = 80.0

[constants]
monitor_duration = 2.0
sample_time = 0.5
replanning_horizon = 30.0
"#;

    fn setup() -> (Scenario, Tvnn) {
        let s = parse_scenario_str(TOML, false).unwrap();
        let w = WorldState::new(&s);
        let view = snapshot_planner_view(&w, &s);
        let horizon = s.planning_horizon();
        let g = build_tvnn(&view, &s, horizon);
        (s, g)
    }

    #[test]
    fn node_inclusion_rules() {
        // only the intersection node when the crossing is sooner than the slack
        assert_eq!(target_node_plan(5.0, 10.0, 80.0), (false, true));
        // only the tracking node when the crossing is beyond the horizon
        assert_eq!(target_node_plan(500.0, 80.0, 80.0), (true, false));
        // both otherwise
        assert_eq!(target_node_plan(40.0, 30.0, 80.0), (true, true));
    }

    #[test]
    fn station_decomposition_count() {
        let (s, g) = setup();
        let docks = g.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Dock { .. })).count();
        let charges = g.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Charge { .. })).count();
        assert_eq!(docks, 1);
        assert_eq!(charges, s.stations[0].num_charge_levels as usize);
    }

    #[test]
    fn node_count_identity() {
        let (s, g) = setup();
        let n_tar = g.target_nodes().len();
        let station_nodes: usize =
            s.stations.iter().map(|st| 1 + st.num_charge_levels as usize).sum();
        assert_eq!(g.nodes.len(), s.robots.len() + n_tar + station_nodes);
        assert!(n_tar <= 2 * s.targets.len());
    }

    #[test]
    fn dock_reaches_exactly_its_charge_nodes() {
        let (_, g) = setup();
        let dock = g.dock_nodes[0].1;
        let heads = g.reachable_set(dock);
        assert_eq!(heads.len(), 5);
        assert!(heads
            .iter()
            .all(|&h| matches!(g.node(h).kind, NodeKind::Charge { station: 0, .. })));
    }

    #[test]
    fn charge_node_reaches_targets_and_docks_only() {
        let (_, g) = setup();
        let charge = g
            .nodes
            .iter()
            .position(|n| matches!(n.kind, NodeKind::Charge { .. }))
            .unwrap();
        let heads = g.reachable_set(charge);
        assert!(!heads.is_empty());
        for h in heads {
            let k = &g.node(h).kind;
            assert!(
                !matches!(k, NodeKind::Charge { .. } | NodeKind::Robot { .. }),
                "charge node must not reach {k:?}"
            );
        }
    }

    #[test]
    fn target_excludes_itself() {
        let (_, g) = setup();
        let tgt = g.target_nodes()[0];
        assert!(!g.reachable_set(tgt).contains(&tgt));
        // and never reaches robot nodes
        assert!(g
            .reachable_set(tgt)
            .iter()
            .all(|&h| !matches!(g.node(h).kind, NodeKind::Robot { .. })));
    }

    #[test]
    fn travel_edge_cost_examples() {
        let (s, g) = setup();
        let robot = &s.robots[0];
        // robot at (25,25) to dock at (25,20): d = 5, v = 1.5
        let rn = g.robot_node(0);
        let dock = g.dock_nodes[0].1;
        let e = g.edge_cost(rn, dock, robot, 0.0);
        assert!((e.time - 5.0 / 1.5).abs() < 1e-9);
        assert!((e.battery - 0.2 * 5.0 / 1.5).abs() < 1e-9);
        assert!((e.battery - robot.drain_rate * e.time).abs() < 1e-12);
    }

    #[test]
    fn target_tail_adds_dwell() {
        let (s, mut g) = setup();
        let robot = &s.robots[0];
        // a static target tail 5 m from the dock: pin the tracking node
        let tgt = g.target_nodes()[0];
        g.nodes[tgt].traj = Traj::Static(Vec2::new(25.0, 15.0));
        let dock = g.dock_nodes[0].1;
        let e = g.edge_cost(tgt, dock, robot, 0.0);
        assert!((e.time - (5.0 / 1.5 + 2.0)).abs() < 1e-9);
        assert!((e.battery - 0.2 * (5.0 / 1.5 + 2.0)).abs() < 1e-9);
    }

    #[test]
    fn charge_edge_cost() {
        let (s, g) = setup();
        let robot = &s.robots[0];
        let dock = g.dock_nodes[0].1;
        let charge2 = g
            .nodes
            .iter()
            .position(|n| matches!(n.kind, NodeKind::Charge { level: 2, .. }))
            .unwrap();
        let e = g.edge_cost(dock, charge2, robot, 12.3);
        assert!((e.battery - (-4.0)).abs() < 1e-12);
        assert!((e.time - 20.0).abs() < 1e-12);
        // identity: C1 * beta = -C2 exactly
        assert_eq!(e.time * s.stations[0].charge_rate, -e.battery);
    }

    #[test]
    fn interception_examples() {
        // stationary target 6 m away at speed 1.5
        let tau = interception_time(
            Vec2::new(0.0, 0.0),
            &Traj::Static(Vec2::new(6.0, 0.0)),
            1.5,
            0.0,
        );
        assert!((tau - 4.0).abs() < 1e-9);

        // target receding collinearly at 0.2 from d=6: closed form 6/1.3
        let pred = TrajPrediction {
            start: Vec2::new(6.0, 0.0),
            dir: Vec2::new(1.0, 0.0),
            speed: 0.2,
            stop_after: f64::INFINITY,
        };
        let tau = interception_time(Vec2::new(0.0, 0.0), &Traj::Moving(pred), 1.5, 0.0);
        assert!((tau - 6.0 / 1.3).abs() < 2e-3, "tau={tau}");

        // already on top of the target
        let tau = interception_time(
            Vec2::new(2.0, 2.0),
            &Traj::Static(Vec2::new(2.0, 2.0)),
            1.5,
            0.0,
        );
        assert_eq!(tau, 0.0);
    }

    #[test]
    fn interception_bounds_hold() {
        for i in 0..50 {
            let d = 1.0 + i as f64;
            let pred = TrajPrediction {
                start: Vec2::new(d, 0.0),
                dir: Vec2::new(0.6, 0.8),
                speed: 0.4,
                stop_after: 1e6,
            };
            let tau = interception_time(Vec2::ZERO, &Traj::Moving(pred), 1.5, 0.0);
            assert!(tau >= d / 1.5 - 1e-3);
            assert!(tau <= d / (1.5 - 0.4) + 1e-3);
        }
    }

    #[test]
    fn inter_target_window_width_is_dwell() {
        let (s, g) = setup();
        for n in &g.nodes {
            if matches!(n.kind, NodeKind::InterTarget { .. }) {
                let w = n.time_window;
                assert!((w[1] - w[0] - s.constants.monitor_duration).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dump_is_valid_json() {
        let (_, g) = setup();
        let v: serde_json::Value = serde_json::from_str(&g.dump_json()).unwrap();
        assert!(v.as_array().unwrap().len() == g.nodes.len());
    }
}
