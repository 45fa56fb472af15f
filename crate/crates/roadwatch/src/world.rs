//! Ground-truth discrete-time simulation: target motion with random
//! branching at intersections, robot kinematics and battery, monitoring
//! bookkeeping, and the event log.

use crate::geometry::{dist, Vec2};
use crate::scenario::{Scenario, TargetInit};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type RobotId = usize;
pub type TargetId = usize;
pub type StationId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activity {
    Active,
    Inactive,
    Failed,
}

/// What a robot is physically doing this tick. The plan executor decides
/// which action to issue; this module integrates it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    /// Fly straight toward a goal point at max speed.
    Travel { goal: Vec2 },
    /// Track a target: match its velocity, keeping the current offset.
    Monitor { target: TargetId },
    /// Docked at a station, receiving charge.
    Charge { station: StationId },
    /// Docked (home pad or station) without charging.
    Docked,
}

#[derive(Debug, Clone)]
pub struct TargetState {
    pub id: TargetId,
    pub pos: Vec2,
    pub road: usize,
    /// Intersection index the target is heading toward.
    pub heading_to: usize,
    pub speed: f64,
    pub interval_bound: f64,
    /// Seconds since the last completed monitoring.
    pub clock: f64,
    pub in_workspace: bool,
}

impl TargetState {
    pub fn from_init(id: TargetId, init: &TargetInit, scenario: &Scenario) -> Self {
        let (a, b) = scenario.network.roads[init.road];
        let heading_to = if init.forward { b } else { a };
        TargetState {
            id,
            pos: scenario.network.point_on_road(init.road, init.arc_pos),
            road: init.road,
            heading_to,
            speed: init.speed,
            interval_bound: init.interval_bound,
            clock: 0.0,
            in_workspace: true,
        }
    }

    /// Seconds until the next intersection at current speed.
    pub fn eta_next_intersection(&self, scenario: &Scenario) -> f64 {
        dist(self.pos, scenario.network.intersections[self.heading_to]) / self.speed
    }

    pub fn velocity(&self, scenario: &Scenario) -> Vec2 {
        (scenario.network.intersections[self.heading_to] - self.pos).normalized() * self.speed
    }
}

#[derive(Debug, Clone)]
pub struct RobotState {
    pub id: RobotId,
    pub pos: Vec2,
    pub vel: Vec2,
    pub battery: f64,
    pub activity: Activity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    MonitorComplete { t: f64, robot: RobotId, target: TargetId, at_intersection: bool },
    MonitorAborted { t: f64, robot: RobotId, target: TargetId },
    BatteryFault { t: f64, robot: RobotId },
    IntervalViolation { t: f64, target: TargetId, clock: f64 },
    ReplanTriggered { t: f64, reasons: Vec<String> },
    ReplanApplied { t: f64, robots: Vec<RobotId>, assigned_targets: usize },
    ReplanInfeasible { t: f64, uncovered: Vec<TargetId> },
    RobotFailed { t: f64, robot: RobotId },
    RobotRetired { t: f64, robot: RobotId },
    PlanCompleted { t: f64, robot: RobotId },
    TargetEntered { t: f64, target: TargetId },
    TargetExited { t: f64, target: TargetId },
}

impl Event {
    pub fn time(&self) -> f64 {
        match self {
            Event::MonitorComplete { t, .. }
            | Event::MonitorAborted { t, .. }
            | Event::BatteryFault { t, .. }
            | Event::IntervalViolation { t, .. }
            | Event::ReplanTriggered { t, .. }
            | Event::ReplanApplied { t, .. }
            | Event::ReplanInfeasible { t, .. }
            | Event::RobotFailed { t, .. }
            | Event::RobotRetired { t, .. }
            | Event::PlanCompleted { t, .. }
            | Event::TargetEntered { t, .. }
            | Event::TargetExited { t, .. } => *t,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Violation {
    pub t: f64,
    pub what: ViolationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Battery,
    Interval,
    InfeasibleReplan,
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub t: f64,
    pub tick: u64,
    pub robots: Vec<RobotState>,
    pub targets: Vec<TargetState>,
    pub events: Vec<Event>,
    pub first_violation: Option<Violation>,
}

impl WorldState {
    pub fn new(scenario: &Scenario) -> Self {
        let robots = scenario
            .robots
            .iter()
            .enumerate()
            .map(|(id, p)| RobotState {
                id,
                pos: p.home,
                vel: Vec2::ZERO,
                battery: p.battery_capacity,
                activity: Activity::Inactive,
            })
            .collect();
        let targets = scenario
            .targets
            .iter()
            .enumerate()
            .map(|(id, init)| TargetState::from_init(id, init, scenario))
            .collect();
        WorldState {
            t: 0.0,
            tick: 0,
            robots,
            targets,
            events: Vec::new(),
            first_violation: None,
        }
    }

    pub fn record_violation(&mut self, what: ViolationKind) {
        if self.first_violation.is_none() {
            self.first_violation = Some(Violation { t: self.t, what });
        }
    }
}

/// Advance every in-workspace target by one tick.
///
/// A target reaching an intersection picks the next road uniformly at
/// random among the incident roads, excluding an immediate reversal unless
/// the intersection is a dead end (or reversal is enabled in the scenario).
pub fn step_targets(world: &mut WorldState, scenario: &Scenario, rng: &mut ChaCha8Rng) {
    let h = scenario.constants.sample_time;
    for target in &mut world.targets {
        if !target.in_workspace {
            continue;
        }
        let mut remaining = target.speed * h;
        while remaining > 1e-12 {
            let goal = scenario.network.intersections[target.heading_to];
            let d = dist(target.pos, goal);
            if d > remaining {
                let dir = (goal - target.pos).normalized();
                target.pos = target.pos + dir * remaining;
                remaining = 0.0;
            } else {
                remaining -= d;
                target.pos = goal;
                let hub = target.heading_to;
                let incident = scenario.network.incident_roads(hub);
                let mut options: Vec<usize> = incident
                    .iter()
                    .copied()
                    .filter(|&r| scenario.constants.uniform_with_reversal || r != target.road)
                    .collect();
                if options.is_empty() {
                    // dead end: reverse
                    options.push(target.road);
                }
                let pick = options[rng.gen_range(0..options.len())];
                target.road = pick;
                target.heading_to = scenario.network.other_end(pick, hub);
            }
        }
        target.clock += h;
    }
}

/// Integrate one robot for one tick under `action`: motion plus the
/// two-case battery recursion (charge with ceiling, otherwise drain with
/// floor at zero). Reaching zero while undocked is a fault.
pub fn step_robot(
    robot: &mut RobotState,
    action: Action,
    scenario: &Scenario,
    targets: &[TargetState],
    events: &mut Vec<Event>,
    t: f64,
) -> Result<(), ()> {
    let params = &scenario.robots[robot.id];
    let h = scenario.constants.sample_time;
    match action {
        Action::Travel { goal } => {
            let step = params.max_speed * h;
            let d = dist(robot.pos, goal);
            let dir = (goal - robot.pos).normalized();
            if d <= step {
                robot.pos = goal;
            } else {
                robot.pos = robot.pos + dir * step;
            }
            robot.vel = dir * params.max_speed;
            drain(robot, params.drain_rate * h, events, t)?;
        }
        Action::Monitor { target } => {
            let tgt = &targets[target];
            let v = tgt.velocity(scenario);
            robot.pos = robot.pos + v * h;
            robot.vel = v;
            drain(robot, params.drain_rate * h, events, t)?;
        }
        Action::Charge { station } => {
            let st = &scenario.stations[station];
            robot.pos = st.position;
            robot.vel = Vec2::ZERO;
            robot.battery = (robot.battery + st.charge_rate * h).min(params.battery_capacity);
        }
        Action::Docked => {
            robot.vel = Vec2::ZERO;
        }
    }
    Ok(())
}

fn drain(robot: &mut RobotState, amount: f64, events: &mut Vec<Event>, t: f64) -> Result<(), ()> {
    let next = robot.battery - amount;
    if next < -1e-12 {
        robot.battery = 0.0;
        events.push(Event::BatteryFault { t, robot: robot.id });
        return Err(());
    }
    robot.battery = next.max(0.0);
    Ok(())
}

/// Reset a target's monitoring clock after a completed dwell.
pub fn complete_monitoring(
    world: &mut WorldState,
    robot: RobotId,
    target: TargetId,
    at_intersection: bool,
) {
    let t = world.t;
    world.targets[target].clock = 0.0;
    world.events.push(Event::MonitorComplete { t, robot, target, at_intersection });
}

// ---------------------------------------------------------------------------
// Planner view and motion prediction

/// The planner's information set: exact current state of every entity, but
/// no knowledge of future branching — predictions follow the current road
/// and hold position at the next intersection.
#[derive(Debug, Clone)]
pub struct PlannerView {
    pub t: f64,
    pub robots: Vec<RobotView>,
    pub targets: Vec<TargetView>,
}

#[derive(Debug, Clone, Copy)]
pub struct RobotView {
    pub id: RobotId,
    pub pos: Vec2,
    pub battery: f64,
    pub activity: Activity,
}

#[derive(Debug, Clone, Copy)]
pub struct TargetView {
    pub id: TargetId,
    pub pos: Vec2,
    pub speed: f64,
    pub interval_bound: f64,
    pub clock: f64,
    /// Seconds until the next intersection.
    pub eta_inter: f64,
    pub next_intersection: Vec2,
}

/// Predicted motion: straight along the current road, clamped at the next
/// intersection.
#[derive(Debug, Clone, Copy)]
pub struct TrajPrediction {
    pub start: Vec2,
    pub dir: Vec2,
    pub speed: f64,
    /// Seconds of motion before the prediction holds position.
    pub stop_after: f64,
}

impl TrajPrediction {
    pub fn pos_at(&self, dt: f64) -> Vec2 {
        let travel = dt.max(0.0).min(self.stop_after);
        self.start + self.dir * (self.speed * travel)
    }
}

impl TargetView {
    pub fn prediction(&self) -> TrajPrediction {
        TrajPrediction {
            start: self.pos,
            dir: (self.next_intersection - self.pos).normalized(),
            speed: self.speed,
            stop_after: self.eta_inter,
        }
    }
}

pub fn snapshot_planner_view(world: &WorldState, scenario: &Scenario) -> PlannerView {
    PlannerView {
        t: world.t,
        robots: world
            .robots
            .iter()
            .map(|r| RobotView {
                id: r.id,
                pos: r.pos,
                battery: r.battery,
                activity: r.activity,
            })
            .collect(),
        targets: world
            .targets
            .iter()
            .filter(|t| t.in_workspace)
            .map(|t| TargetView {
                id: t.id,
                pos: t.pos,
                speed: t.speed,
                interval_bound: t.interval_bound,
                clock: t.clock,
                eta_inter: t.eta_next_intersection(scenario),
                next_intersection: scenario.network.intersections[t.heading_to],
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario_str;
    use rand::SeedableRng;

    const GRID: &str = r#"
[workspace]
min = [0.0, 0.0]
max = [50.0, 50.0]

[roads]
intersections = [[0,25],[25,25],[50,25],[25,0],[25,50]]
segments = [[0,1],[1,2],[1,3],[1,4]]

[[stations]]
position = [25.0, 25.0]
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
sample_time = 1.0
replanning_horizon = 30.0
"#;

    fn world() -> (Scenario, WorldState) {
        let s = parse_scenario_str(GRID, false).unwrap();
        let w = WorldState::new(&s);
        (s, w)
    }

    #[test]
    fn target_advances_linearly() {
        let (s, mut w) = world();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let eta0 = w.targets[0].eta_next_intersection(&s);
        let p0 = w.targets[0].pos;
        step_targets(&mut w, &s, &mut rng);
        let moved = dist(w.targets[0].pos, p0);
        assert!((moved - 0.2).abs() < 1e-9);
        let eta1 = w.targets[0].eta_next_intersection(&s);
        assert!((eta0 - eta1 - 1.0).abs() < 1e-9);
        assert!((w.targets[0].clock - 1.0).abs() < 1e-12);
    }

    #[test]
    fn branching_is_uniform_over_non_reversal_roads() {
        // target heading into the 4-way hub from road 0; non-reversal
        // options are roads 1, 2, 3
        let s = parse_scenario_str(GRID, false).unwrap();
        let mut counts = [0usize; 4];
        let trials = 10_000;
        for seed in 0..trials {
            let mut w = WorldState::new(&s);
            // start right before the hub
            w.targets[0].pos = Vec2::new(24.9, 25.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            step_targets(&mut w, &s, &mut rng);
            counts[w.targets[0].road] += 1;
        }
        assert_eq!(counts[0], 0, "immediate reversal must be excluded");
        for road in 1..4 {
            let freq = counts[road] as f64 / trials as f64;
            assert!((freq - 1.0 / 3.0).abs() < 0.05, "road {road} freq {freq}");
        }
    }

    #[test]
    fn dead_end_reverses() {
        let (s, mut w) = world();
        // heading to intersection 0 (degree 1)
        w.targets[0].heading_to = 0;
        w.targets[0].pos = Vec2::new(0.1, 25.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        step_targets(&mut w, &s, &mut rng);
        assert_eq!(w.targets[0].road, 0);
        assert_eq!(w.targets[0].heading_to, 1);
    }

    #[test]
    fn charge_step_and_clamp() {
        let (s, mut w) = world();
        let mut ev = Vec::new();
        w.robots[0].battery = 5.0;
        step_robot(&mut w.robots[0], Action::Charge { station: 0 }, &s, &w.targets, &mut ev, 0.0)
            .unwrap();
        assert!((w.robots[0].battery - 5.2).abs() < 1e-12);
        w.robots[0].battery = 10.0;
        step_robot(&mut w.robots[0], Action::Charge { station: 0 }, &s, &w.targets, &mut ev, 0.0)
            .unwrap();
        assert_eq!(w.robots[0].battery, 10.0);
    }

    #[test]
    fn battery_fault_when_drained_undocked() {
        let (s, mut w) = world();
        let mut ev = Vec::new();
        w.robots[0].battery = 0.15;
        let r = step_robot(
            &mut w.robots[0],
            Action::Travel { goal: Vec2::new(0.0, 0.0) },
            &s,
            &w.targets,
            &mut ev,
            7.0,
        );
        assert!(r.is_err());
        assert_eq!(w.robots[0].battery, 0.0);
        assert!(matches!(ev[0], Event::BatteryFault { t, robot: 0 } if t == 7.0));
    }

    #[test]
    fn monitoring_completion_zeroes_clock() {
        let (s, mut w) = world();
        let _ = &s;
        w.targets[0].clock = 54.0;
        w.t = 54.0;
        complete_monitoring(&mut w, 0, 0, false);
        assert_eq!(w.targets[0].clock, 0.0);
        // second completion is idempotent on the clock
        complete_monitoring(&mut w, 0, 0, false);
        assert_eq!(w.targets[0].clock, 0.0);
        assert_eq!(w.events.len(), 2);
    }

    #[test]
    fn prediction_clamps_at_intersection() {
        let (s, mut w) = world();
        // 4 m before intersection 1 at 0.2 m/s
        w.targets[0].pos = Vec2::new(21.0, 25.0);
        let view = snapshot_planner_view(&w, &s);
        let pred = view.targets[0].prediction();
        let p = pred.pos_at(30.0);
        assert!(dist(p, Vec2::new(25.0, 25.0)) < 1e-9, "reached at +20 s and held");
        let q = pred.pos_at(10.0);
        assert!(dist(q, Vec2::new(23.0, 25.0)) < 1e-9);
    }

    #[test]
    fn initial_snapshot_matches_scenario() {
        let (s, w) = world();
        let view = snapshot_planner_view(&w, &s);
        assert_eq!(view.targets.len(), s.targets.len());
        assert_eq!(view.robots.len(), s.robots.len());
        assert!(dist(view.targets[0].pos, s.network.point_on_road(0, 0.5)) < 1e-12);
        assert_eq!(view.robots[0].battery, 10.0);
    }

    #[test]
    fn failed_robot_is_visible_as_failed() {
        let (s, mut w) = world();
        w.robots[0].activity = Activity::Failed;
        let view = snapshot_planner_view(&w, &s);
        assert_eq!(view.robots[0].activity, Activity::Failed);
    }

    #[test]
    fn path_continuity_under_stepping() {
        let s = parse_scenario_str(GRID, false).unwrap();
        let mut w = WorldState::new(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut prev = w.targets[0].pos;
        for _ in 0..500 {
            step_targets(&mut w, &s, &mut rng);
            let p = w.targets[0].pos;
            assert!(dist(p, prev) <= 0.2 * s.constants.sample_time + 1e-9);
            prev = p;
            // on-network check: distance to the segment it claims to be on
            let (a, b) = s.network.roads[w.targets[0].road];
            let pa = s.network.intersections[a];
            let pb = s.network.intersections[b];
            let ab = pb - pa;
            let len2 = ab.x * ab.x + ab.y * ab.y;
            let t = (((p - pa).x * ab.x + (p - pa).y * ab.y) / len2).clamp(0.0, 1.0);
            let proj = pa + ab * t;
            assert!(dist(p, proj) < 1e-6);
        }
    }
}
