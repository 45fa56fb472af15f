//! Online execution: plan dispatch, predictive replanning triggers, robot
//! failures, dynamic target membership, and the simulation driver.
//!
//! The loop holds the invariant that, at every replan completion, every
//! in-workspace target sits in exactly one robot's task sequence: targets
//! whose coverage was consumed, predicted to fail, newly arrived, or
//! orphaned by a failure form the reassignment pool; everything else is
//! carried by its current robot.

use crate::assign::RobotCandidate;
use crate::baselines;
use crate::geometry::{dist, Vec2};
use crate::graph::{build_tvnn, interception_time, NodeKind, Tvnn};
use crate::labeling::TaskSequence;
use crate::ordering::{search_ordering, OrderOutcome, SearchConfig};
use crate::report::{Deterministic, ReplanRecord, RunReport, Timing};
use crate::routing::units_for;
use crate::scenario::{MembershipEvent, Scenario};
use crate::world::{
    complete_monitoring, snapshot_planner_view, step_robot, step_targets, Action, Activity, Event,
    RobotId, StationId, TargetId, TargetState, ViolationKind, WorldState,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlannerKind {
    Ours,
    NiMam,
    Cma,
    Pet,
    Gcf,
}

impl PlannerKind {
    pub fn name(&self) -> &'static str {
        match self {
            PlannerKind::Ours => "ours",
            PlannerKind::NiMam => "ni-mam",
            PlannerKind::Cma => "cma",
            PlannerKind::Pet => "pet",
            PlannerKind::Gcf => "gcf",
        }
    }
}

impl std::str::FromStr for PlannerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ours" => Ok(PlannerKind::Ours),
            "ni-mam" | "nimam" => Ok(PlannerKind::NiMam),
            "cma" => Ok(PlannerKind::Cma),
            "pet" => Ok(PlannerKind::Pet),
            "gcf" => Ok(PlannerKind::Gcf),
            other => Err(format!("unknown planner '{other}' (expected ours|ni-mam|cma|pet|gcf)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub duration: f64,
    pub planner: PlannerKind,
    /// Replan period for the periodic-trigger baseline; defaults to the
    /// replanning horizon.
    pub pet_period: Option<f64>,
    /// Scripted robot failures (robot, time).
    pub fail_at: Vec<(RobotId, f64)>,
    /// Ordering-search expansion budget.
    pub max_expansions: usize,
    /// Optional wall-clock cap for the ordering search.
    pub wall_budget: Option<Duration>,
    /// Wall cap per robot for the exhaustive baselines.
    pub baseline_cap: Duration,
    /// Record per-tick series in the report.
    pub collect_series: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            duration: 400.0,
            planner: PlannerKind::Ours,
            pet_period: None,
            fail_at: Vec::new(),
            max_expansions: 2000,
            wall_budget: None,
            baseline_cap: Duration::from_millis(200),
            collect_series: true,
        }
    }
}

// ---------------------------------------------------------------------------
// Dispatched plans

#[derive(Debug, Clone)]
pub struct ExecStep {
    pub kind: StepKind,
    /// Scheduled arrival in absolute simulation time.
    pub sched_arrival: f64,
    /// Scheduled completion (arrival plus dwell or charge).
    pub sched_done: f64,
}

#[derive(Debug, Clone)]
pub enum StepKind {
    Visit { target: TargetId, at_intersection: bool, point: Vec2 },
    Dock { station: StationId },
    Charge { station: StationId, amount: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Parked,
    Transit,
    AwaitTarget,
    Monitoring,
    Charging,
}

#[derive(Debug, Clone)]
struct RobotExec {
    plan: Vec<ExecStep>,
    next: usize,
    phase: Phase,
    monitor_elapsed: f64,
    charge_received: f64,
    retire_to: Option<StationId>,
}

impl RobotExec {
    fn idle() -> Self {
        RobotExec {
            plan: Vec::new(),
            next: 0,
            phase: Phase::Parked,
            monitor_elapsed: 0.0,
            charge_received: 0.0,
            retire_to: None,
        }
    }

    fn has_plan(&self) -> bool {
        self.next < self.plan.len()
    }

    fn pending_steps(&self) -> &[ExecStep] {
        &self.plan[self.next.min(self.plan.len())..]
    }
}

/// Convert a planner task sequence (graph nodes and epoch-relative times)
/// into an executable plan.
pub fn plan_from_sequence(
    tvnn: &Tvnn,
    seq: &TaskSequence,
    epoch: f64,
    battery_capacity: f64,
    monitor_duration: f64,
) -> Vec<ExecStep> {
    let mut steps = Vec::new();
    for s in seq.iter().skip(1) {
        let node = tvnn.node(s.node);
        let arrival = epoch + s.time;
        match node.kind {
            NodeKind::Target { target } => steps.push(ExecStep {
                kind: StepKind::Visit {
                    target,
                    at_intersection: false,
                    point: node.traj.pos_at(s.time),
                },
                sched_arrival: arrival,
                sched_done: arrival + monitor_duration,
            }),
            NodeKind::InterTarget { target } => steps.push(ExecStep {
                kind: StepKind::Visit {
                    target,
                    at_intersection: true,
                    point: node.traj.pos_at(s.time),
                },
                sched_arrival: arrival,
                sched_done: arrival + monitor_duration,
            }),
            NodeKind::Dock { station } => steps.push(ExecStep {
                kind: StepKind::Dock { station },
                sched_arrival: arrival,
                sched_done: arrival,
            }),
            NodeKind::Charge { station, level } => {
                let levels = tvnn
                    .nodes
                    .iter()
                    .filter(|n| matches!(n.kind, NodeKind::Charge { station: s2, .. } if s2 == station))
                    .count() as f64;
                let amount = battery_capacity * level as f64 / levels;
                steps.push(ExecStep {
                    kind: StepKind::Charge { station, amount },
                    sched_arrival: arrival,
                    sched_done: arrival,
                });
            }
            NodeKind::Robot { .. } => {}
        }
    }
    steps
}

// ---------------------------------------------------------------------------
// The simulation engine

pub struct Simulation {
    pub scenario: Scenario,
    pub cfg: RunConfig,
    pub world: WorldState,
    rng: ChaCha8Rng,
    execs: Vec<RobotExec>,
    tick_count: u64,
    ticks_total: u64,
    // gcf claim state
    gcf: Option<baselines::GcfState>,
    // pending one-shot triggers
    urgent_trigger: Vec<String>,
    trigger_mute: BTreeMap<TargetId, f64>,
    violated_latch: Vec<bool>,
    membership_cursor: usize,
    fail_cursor: Vec<(RobotId, f64)>,
    // accumulators
    active_series: Vec<u32>,
    battery_series: Vec<Vec<f64>>,
    clock_series: Vec<Vec<f64>>,
    replans: Vec<ReplanRecord>,
    replan_wall: Vec<f64>,
    planner_wall: f64,
    charging_ticks: u64,
    active_ticks: u64,
    monitor_completions: u64,
    rf_breaches: u64,
    started: Instant,
}

impl Simulation {
    pub fn new(scenario: Scenario, cfg: RunConfig) -> Result<Simulation, String> {
        let (ok, margin) = scenario.check_drain_bound();
        if !ok {
            return Err(format!(
                "drain-rate bound violated: a robot cannot reach every workspace point \
                 and return to a station on a full battery (margin {margin:.4})"
            ));
        }
        let world = WorldState::new(&scenario);
        let h = scenario.constants.sample_time;
        let ticks_total = (cfg.duration / h).round() as u64;
        let n_robots = world.robots.len();
        let n_targets = world.targets.len();
        let mut fail_cursor = cfg.fail_at.clone();
        fail_cursor.sort_by(|a, b| a.1.total_cmp(&b.1));
        let gcf = (cfg.planner == PlannerKind::Gcf).then(|| baselines::GcfState::new(n_robots));
        Ok(Simulation {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            execs: vec![RobotExec::idle(); n_robots],
            tick_count: 0,
            ticks_total,
            gcf,
            urgent_trigger: Vec::new(),
            trigger_mute: BTreeMap::new(),
            violated_latch: vec![false; n_targets],
            membership_cursor: 0,
            fail_cursor,
            active_series: Vec::new(),
            battery_series: vec![Vec::new(); n_robots],
            clock_series: vec![Vec::new(); n_targets],
            replans: Vec::new(),
            replan_wall: Vec::new(),
            planner_wall: 0.0,
            charging_ticks: 0,
            active_ticks: 0,
            monitor_completions: 0,
            rf_breaches: 0,
            started: Instant::now(),
            scenario,
            cfg,
            world,
        })
    }

    pub fn finished(&self) -> bool {
        self.tick_count >= self.ticks_total
    }

    pub fn time(&self) -> f64 {
        self.world.t
    }

    /// Scripted or interactive robot failure.
    pub fn inject_failure(&mut self, robot: RobotId) {
        if self.world.robots[robot].activity != Activity::Failed {
            let t = self.world.t;
            self.world.robots[robot].activity = Activity::Failed;
            self.world.events.push(Event::RobotFailed { t, robot });
            self.execs[robot] = RobotExec::idle();
            self.urgent_trigger.push(format!("failure:{robot}"));
        }
    }

    /// Current plan waypoints of a robot, for rendering.
    pub fn plan_points(&self, robot: RobotId) -> Vec<(f64, f64)> {
        let mut pts = vec![(self.world.robots[robot].pos.x, self.world.robots[robot].pos.y)];
        for step in self.execs[robot].pending_steps() {
            let p = match &step.kind {
                StepKind::Visit { target, at_intersection, point } => {
                    if *at_intersection {
                        *point
                    } else {
                        self.world.targets[*target].pos
                    }
                }
                StepKind::Dock { station } | StepKind::Charge { station, .. } => {
                    self.scenario.stations[*station].position
                }
            };
            pts.push((p.x, p.y));
        }
        pts
    }

    /// Run the initial planning round (time zero).
    pub fn initial_plan(&mut self) {
        if self.cfg.planner == PlannerKind::Gcf {
            return; // reactive; no plans
        }
        self.replan(vec!["initial".to_string()]);
    }

    /// Advance the world by one sample step, executing plans and replanning
    /// on triggers.
    pub fn tick(&mut self) {
        let h = self.scenario.constants.sample_time;
        self.tick_count += 1;
        let t = self.tick_count as f64 * h;
        self.world.t = t;
        self.world.tick = self.tick_count;

        self.apply_membership(t);
        self.apply_scripted_failures(t);
        step_targets(&mut self.world, &self.scenario, &mut self.rng);

        if self.cfg.planner == PlannerKind::Gcf {
            let mut gcf = self.gcf.take().expect("gcf state");
            baselines::gcf_tick(self, &mut gcf);
            self.gcf = Some(gcf);
        } else {
            self.execute_plans();
        }

        self.check_interval_violations();

        // triggering
        let fire_reasons = match self.cfg.planner {
            PlannerKind::Pet => {
                let period = self.cfg.pet_period.unwrap_or(self.scenario.constants.replanning_horizon);
                let k = (t / period).round();
                let periodic = k >= 1.0 && (t - k * period).abs() < h / 2.0;
                if periodic {
                    vec!["periodic".to_string()]
                } else {
                    Vec::new()
                }
            }
            PlannerKind::Gcf => Vec::new(),
            _ => {
                let mut reasons = std::mem::take(&mut self.urgent_trigger);
                reasons.extend(self.predict_violations());
                reasons
            }
        };
        if !fire_reasons.is_empty() {
            self.replan(fire_reasons);
        }

        // series
        let active = self
            .world
            .robots
            .iter()
            .filter(|r| r.activity == Activity::Active)
            .count() as u32;
        self.active_series.push(active);
        if self.cfg.collect_series {
            for r in &self.world.robots {
                self.battery_series[r.id].push(r.battery);
            }
            for (m, series) in self.clock_series.iter_mut().enumerate() {
                series.push(self.world.targets.get(m).map(|t| t.clock).unwrap_or(0.0));
            }
        }
    }

    fn apply_membership(&mut self, t: f64) {
        while self.membership_cursor < self.scenario.membership.len() {
            let ev = self.scenario.membership[self.membership_cursor];
            let when = match ev {
                MembershipEvent::Enter { time, .. } | MembershipEvent::Exit { time, .. } => time,
            };
            if when > t {
                break;
            }
            self.membership_cursor += 1;
            match ev {
                MembershipEvent::Enter { target, .. } => {
                    let id = self.world.targets.len();
                    self.world.targets.push(TargetState::from_init(id, &target, &self.scenario));
                    self.violated_latch.push(false);
                    self.clock_series.push(vec![0.0; self.active_series.len()]);
                    self.world.events.push(Event::TargetEntered { t, target: id });
                    self.urgent_trigger.push(format!("new-target:{id}"));
                }
                MembershipEvent::Exit { target, .. } => {
                    if let Some(tgt) = self.world.targets.get_mut(target) {
                        if tgt.in_workspace {
                            tgt.in_workspace = false;
                            self.world.events.push(Event::TargetExited { t, target });
                            // remove pending visits to the departed target
                            for exec in &mut self.execs {
                                strip_targets(exec, &BTreeSet::from([target]));
                            }
                        }
                    }
                }
            }
        }
    }

    fn apply_scripted_failures(&mut self, t: f64) {
        let due: Vec<RobotId> = self
            .fail_cursor
            .iter()
            .filter(|&&(_, when)| when <= t)
            .map(|&(r, _)| r)
            .collect();
        self.fail_cursor.retain(|&(_, when)| when > t);
        for r in due {
            self.inject_failure(r);
        }
    }

    // -----------------------------------------------------------------
    // plan execution

    fn execute_plans(&mut self) {
        let h = self.scenario.constants.sample_time;
        let t = self.world.t;
        let t0 = self.scenario.constants.monitor_duration;
        let mut completions: Vec<(RobotId, TargetId, bool)> = Vec::new();

        for rid in 0..self.world.robots.len() {
            if self.world.robots[rid].activity == Activity::Failed {
                continue;
            }
            let action = self.decide_action(rid, t, h);
            let Some(action) = action else { continue };
            let is_charge = matches!(action, Action::Charge { .. });
            let fault = {
                let (robots, targets, events) =
                    (&mut self.world.robots, &self.world.targets, &mut self.world.events);
                step_robot(&mut robots[rid], action, &self.scenario, targets, events, t).is_err()
            };
            if fault {
                self.world.record_violation(ViolationKind::Battery);
                self.world.robots[rid].activity = Activity::Failed;
                self.world.events.push(Event::RobotFailed { t, robot: rid });
                self.execs[rid] = RobotExec::idle();
                self.urgent_trigger.push(format!("battery-fault:{rid}"));
                continue;
            }
            if self.world.robots[rid].activity == Activity::Active {
                self.active_ticks += 1;
                if is_charge {
                    self.charging_ticks += 1;
                }
            }

            // post-step bookkeeping
            let exec = &mut self.execs[rid];
            if exec.has_plan() {
                let step = exec.plan[exec.next].clone();
                match step.kind {
                    StepKind::Visit { target, at_intersection, .. } => {
                        if exec.phase == Phase::Monitoring {
                            let d = dist(self.world.robots[rid].pos, self.world.targets[target].pos);
                            let range = self.scenario.robots[rid].sensor_range;
                            if d > range {
                                self.world.events.push(Event::MonitorAborted { t, robot: rid, target });
                                exec.monitor_elapsed = 0.0;
                                exec.phase = Phase::Transit;
                            } else {
                                exec.monitor_elapsed += h;
                                if exec.monitor_elapsed + 1e-9 >= t0 {
                                    completions.push((rid, target, at_intersection));
                                    exec.monitor_elapsed = 0.0;
                                    exec.next += 1;
                                    exec.phase = Phase::Transit;
                                }
                            }
                        }
                    }
                    StepKind::Charge { station, amount } => {
                        if exec.phase == Phase::Charging {
                            exec.charge_received += self.scenario.stations[station].charge_rate * h;
                            let full = self.world.robots[rid].battery
                                >= self.scenario.robots[rid].battery_capacity - 1e-9;
                            if exec.charge_received + 1e-9 >= amount || full {
                                exec.charge_received = 0.0;
                                exec.next += 1;
                                exec.phase = Phase::Parked;
                            }
                        }
                    }
                    StepKind::Dock { .. } => {}
                }
            }
            self.finish_plan_if_done(rid, t);
        }

        for (rid, target, at_inter) in completions {
            complete_monitoring(&mut self.world, rid, target, at_inter);
            self.monitor_completions += 1;
            self.violated_latch[target] = false;
        }
    }

    /// Pick this tick's action for a robot; may advance plan phases.
    fn decide_action(&mut self, rid: usize, t: f64, h: f64) -> Option<Action> {
        let params = self.scenario.robots[rid];
        let pos = self.world.robots[rid].pos;
        let vmax = params.max_speed;

        if self.execs[rid].has_plan() {
            let step = self.execs[rid].plan[self.execs[rid].next].clone();
            match step.kind {
                StepKind::Visit { target, at_intersection, point } => {
                    let tgt = &self.world.targets[target];
                    if !tgt.in_workspace {
                        self.execs[rid].next += 1;
                        self.execs[rid].phase = Phase::Transit;
                        self.finish_plan_if_done(rid, t);
                        return Some(Action::Docked);
                    }
                    let tpos = tgt.pos;
                    if self.execs[rid].phase == Phase::Monitoring {
                        return Some(Action::Monitor { target });
                    }
                    if dist(pos, tpos) <= params.sensor_range / 2.0 {
                        self.execs[rid].phase = Phase::Monitoring;
                        return Some(Action::Monitor { target });
                    }
                    let goal = if at_intersection { point } else { tpos };
                    // departure delay while docked: leave just in time for a
                    // fixed-point meet instead of hovering there
                    if self.execs[rid].phase == Phase::Parked && at_intersection {
                        let travel = dist(pos, goal) / vmax;
                        if t + travel + h < step.sched_arrival {
                            return Some(self.parked_action(rid));
                        }
                    }
                    if at_intersection && dist(pos, goal) <= vmax * h {
                        // at the meet point before the target: hold position
                        self.execs[rid].phase = Phase::AwaitTarget;
                        // give up when the window has clearly passed
                        let dwell = self.scenario.constants.monitor_duration;
                        if t > step.sched_done + dwell && dist(pos, tpos) > params.sensor_range {
                            self.execs[rid].next += 1;
                            self.execs[rid].phase = Phase::Transit;
                            self.finish_plan_if_done(rid, t);
                        }
                        return Some(Action::Travel { goal });
                    }
                    self.execs[rid].phase = Phase::Transit;
                    Some(Action::Travel { goal })
                }
                StepKind::Dock { station } => {
                    let sp = self.scenario.stations[station].position;
                    if dist(pos, sp) <= vmax * h {
                        self.execs[rid].next += 1;
                        self.execs[rid].phase = Phase::Parked;
                        self.finish_plan_if_done(rid, t);
                    } else {
                        self.execs[rid].phase = Phase::Transit;
                    }
                    Some(Action::Travel { goal: sp })
                }
                StepKind::Charge { station, .. } => {
                    self.execs[rid].phase = Phase::Charging;
                    Some(Action::Charge { station })
                }
            }
        } else {
            // no plan: retire toward a station, then idle-charge
            if self.world.robots[rid].activity == Activity::Active {
                self.world.robots[rid].activity = Activity::Inactive;
            }
            if let Some(st) = self.execs[rid].retire_to {
                let sp = self.scenario.stations[st].position;
                if dist(pos, sp) <= vmax * h {
                    self.execs[rid].retire_to = None;
                    self.execs[rid].phase = Phase::Parked;
                    self.world.events.push(Event::RobotRetired { t, robot: rid });
                    return Some(Action::Travel { goal: sp });
                }
                return Some(Action::Travel { goal: sp });
            }
            Some(self.parked_action(rid))
        }
    }

    /// Idle behavior while docked: top off at a station, otherwise sit.
    fn parked_action(&self, rid: usize) -> Action {
        let pos = self.world.robots[rid].pos;
        let full = self.world.robots[rid].battery
            >= self.scenario.robots[rid].battery_capacity - 1e-9;
        for (sid, st) in self.scenario.stations.iter().enumerate() {
            if dist(pos, st.position) < 1e-6 && !full {
                return Action::Charge { station: sid };
            }
        }
        Action::Docked
    }

    fn finish_plan_if_done(&mut self, rid: usize, t: f64) {
        if !self.execs[rid].has_plan()
            && !self.execs[rid].plan.is_empty()
            && self.world.robots[rid].activity == Activity::Active
        {
            self.world.events.push(Event::PlanCompleted { t, robot: rid });
            self.world.robots[rid].activity = Activity::Inactive;
            self.execs[rid].plan.clear();
            self.execs[rid].next = 0;
            self.execs[rid].retire_to = Some(self.nearest_station(self.world.robots[rid].pos));
            self.urgent_trigger.push(format!("plan-complete:{rid}"));
        }
    }

    fn nearest_station(&self, pos: Vec2) -> StationId {
        self.scenario
            .stations
            .iter()
            .enumerate()
            .min_by(|a, b| dist(pos, a.1.position).total_cmp(&dist(pos, b.1.position)))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    fn check_interval_violations(&mut self) {
        let t = self.world.t;
        for m in 0..self.world.targets.len() {
            let tgt = &self.world.targets[m];
            if !tgt.in_workspace {
                continue;
            }
            if tgt.clock > tgt.interval_bound + 1e-9 && !self.violated_latch[m] {
                self.violated_latch[m] = true;
                let clock = tgt.clock;
                self.world.events.push(Event::IntervalViolation { t, target: m, clock });
                self.world.record_violation(ViolationKind::Interval);
            }
        }
    }

    // -----------------------------------------------------------------
    // triggering and replanning

    /// Per-plan live estimates: (target, est completion) for every pending
    /// visit and (target, est arrival) for pending intersection meets.
    fn coverage_estimates(&self) -> Coverage {
        let t = self.world.t;
        let mut cover = Coverage::new(self.world.targets.len());
        for rid in 0..self.world.robots.len() {
            if self.world.robots[rid].activity == Activity::Failed {
                continue;
            }
            let exec = &self.execs[rid];
            if !exec.has_plan() {
                continue;
            }
            let params = self.scenario.robots[rid];
            let pos = self.world.robots[rid].pos;
            let t0 = self.scenario.constants.monitor_duration;
            let mut prev_sched_done = None;
            let mut cursor = t;
            for (k, step) in exec.plan.iter().enumerate().skip(exec.next) {
                let (est_arrival, est_done) = if k == exec.next {
                    self.estimate_current_step(rid, step, pos, &params, t, t0)
                } else {
                    let delta_done = step.sched_done - prev_sched_done.unwrap_or(step.sched_done);
                    let arr = cursor + (step.sched_arrival - prev_sched_done.unwrap_or(step.sched_arrival)).max(0.0);
                    (arr, cursor + delta_done.max(0.0))
                };
                cursor = est_done;
                prev_sched_done = Some(step.sched_done);
                if let StepKind::Visit { target, at_intersection, point } = &step.kind {
                    let m = *target;
                    if m < cover.interval_done.len() {
                        cover.note_visit(m, est_done);
                        if *at_intersection {
                            let tgt = &self.world.targets[m];
                            if tgt.in_workspace
                                && dist(
                                    self.scenario.network.intersections[tgt.heading_to],
                                    *point,
                                ) < 0.5
                            {
                                let t_c = t + tgt.eta_next_intersection(&self.scenario);
                                if est_arrival <= t_c + 1e-6 {
                                    cover.crossing_covered[m] = true;
                                }
                            }
                        }
                        cover.pending[m] = true;
                    }
                }
            }
        }
        cover
    }

    fn estimate_current_step(
        &self,
        rid: usize,
        step: &ExecStep,
        pos: Vec2,
        params: &crate::scenario::RobotParams,
        t: f64,
        t0: f64,
    ) -> (f64, f64) {
        match &step.kind {
            StepKind::Visit { target, at_intersection, point } => {
                let tgt = &self.world.targets[*target];
                if !tgt.in_workspace {
                    return (t, t);
                }
                let exec = &self.execs[rid];
                if exec.phase == Phase::Monitoring {
                    return (t, t + (t0 - exec.monitor_elapsed).max(0.0));
                }
                if *at_intersection
                    && dist(self.scenario.network.intersections[tgt.heading_to], *point) < 0.5
                {
                    let arr = t + dist(pos, *point) / params.max_speed;
                    let t_c = t + tgt.eta_next_intersection(&self.scenario);
                    let start = arr.max(t_c);
                    (arr, start + t0)
                } else {
                    let view_t = crate::world::TargetView {
                        id: tgt.id,
                        pos: tgt.pos,
                        speed: tgt.speed,
                        interval_bound: tgt.interval_bound,
                        clock: tgt.clock,
                        eta_inter: tgt.eta_next_intersection(&self.scenario),
                        next_intersection: self.scenario.network.intersections[tgt.heading_to],
                    };
                    let tau = interception_time(
                        pos,
                        &crate::graph::Traj::Moving(view_t.prediction()),
                        params.max_speed,
                        0.0,
                    );
                    (t + tau, t + tau + t0)
                }
            }
            StepKind::Dock { station } => {
                let d = dist(pos, self.scenario.stations[*station].position);
                let arr = t + d / params.max_speed;
                (arr, arr)
            }
            StepKind::Charge { station, amount } => {
                let rate = self.scenario.stations[*station].charge_rate;
                let left = (amount - self.execs[rid].charge_received).max(0.0);
                let done = t + left / rate;
                (done, done)
            }
        }
    }

    /// Predictive triggers: targets whose interval or crossing coverage is
    /// missing within the replanning horizon.
    fn predict_violations(&self) -> Vec<String> {
        let t = self.world.t;
        let th = self.scenario.constants.replanning_horizon;
        let cover = self.coverage_estimates();
        let mut reasons = Vec::new();
        for m in 0..self.world.targets.len() {
            let tgt = &self.world.targets[m];
            if !tgt.in_workspace {
                continue;
            }
            if self.trigger_mute.get(&m).is_some_and(|&until| t < until) {
                continue;
            }
            let violation_at = t + (tgt.interval_bound - tgt.clock);
            if violation_at <= t + th && cover.interval_done[m] > violation_at + 1e-6 {
                reasons.push(format!("interval:{m}"));
            }
            let t_c = t + tgt.eta_next_intersection(&self.scenario);
            if t_c <= t + th && !cover.crossing_covered[m] {
                reasons.push(format!("crossing:{m}"));
            }
        }
        reasons
    }

    /// Targets needing (re)assignment and targets each robot carries.
    fn partition_targets(&self) -> (Vec<TargetId>, BTreeMap<RobotId, Vec<TargetId>>) {
        let t = self.world.t;
        let horizon = self.live_horizon();
        let cover = self.coverage_estimates();
        let mut vl = Vec::new();
        let mut claimed: BTreeSet<TargetId> = BTreeSet::new();
        for m in 0..self.world.targets.len() {
            let tgt = &self.world.targets[m];
            if !tgt.in_workspace {
                continue;
            }
            let violation_at = t + (tgt.interval_bound - tgt.clock);
            let interval_bad = cover.interval_done[m] > violation_at + 1e-6;
            let t_c = t + tgt.eta_next_intersection(&self.scenario);
            let crossing_bad = t_c <= t + horizon && !cover.crossing_covered[m];
            if !cover.pending[m] || interval_bad || crossing_bad {
                vl.push(m);
            } else {
                claimed.insert(m);
            }
        }
        let mut carried: BTreeMap<RobotId, Vec<TargetId>> = BTreeMap::new();
        let mut taken: BTreeSet<TargetId> = BTreeSet::new();
        for rid in 0..self.world.robots.len() {
            if self.world.robots[rid].activity == Activity::Failed {
                continue;
            }
            for step in self.execs[rid].pending_steps() {
                if let StepKind::Visit { target, .. } = step.kind {
                    if claimed.contains(&target) && !taken.contains(&target) {
                        taken.insert(target);
                        carried.entry(rid).or_default().push(target);
                    }
                }
            }
        }
        (vl, carried)
    }

    fn live_horizon(&self) -> f64 {
        self.world
            .targets
            .iter()
            .filter(|t| t.in_workspace)
            .map(|t| t.interval_bound)
            .fold(self.scenario.constants.replanning_horizon, f64::max)
    }

    fn replan(&mut self, reasons: Vec<String>) {
        let wall_start = Instant::now();
        let t = self.world.t;
        let th = self.scenario.constants.replanning_horizon;
        let h = self.scenario.constants.sample_time;
        let view = snapshot_planner_view(&self.world, &self.scenario);
        let tvnn = build_tvnn(&view, &self.scenario, self.live_horizon());
        let (vl_targets, carried_map) = self.partition_targets();
        let pool = units_for(&tvnn, &vl_targets);

        // recursive-feasibility bookkeeping: reassigned targets should still
        // have at least the horizon of slack (failure orphans and fresh
        // arrivals excepted)
        for &m in &vl_targets {
            let tgt = &self.world.targets[m];
            let slack = tgt.interval_bound - tgt.clock;
            let orphanish = reasons.iter().any(|r| r.starts_with("failure") || r.starts_with("new-target"));
            if slack < th - h - 1e-9 && !orphanish && tgt.clock > 0.0 {
                self.rf_breaches += 1;
            }
        }

        let candidates: Vec<RobotCandidate> = self
            .world
            .robots
            .iter()
            .filter(|r| r.activity != Activity::Failed)
            .map(|r| RobotCandidate {
                id: r.id,
                pos: r.pos,
                battery: r.battery,
                params: self.scenario.robots[r.id],
                carried: units_for(&tvnn, carried_map.get(&r.id).map_or(&[][..], |v| v)),
            })
            .collect();

        let search_cfg = SearchConfig {
            max_expansions: self.cfg.max_expansions,
            wall_budget: self.cfg.wall_budget,
            kappa_weights: self.scenario.constants.kappa_weights,
            monitor_duration: self.scenario.constants.monitor_duration,
            collect_trace: false,
        };
        let (outcome, expansions) = match self.cfg.planner {
            PlannerKind::NiMam => {
                let out = baselines::ni_plan(&tvnn, &candidates, &pool, &search_cfg, self.cfg.baseline_cap);
                (out, 0)
            }
            PlannerKind::Cma => {
                let out = baselines::cma_plan(&tvnn, &candidates, &pool, &search_cfg, self.cfg.baseline_cap);
                (out, 0)
            }
            _ => {
                let out = search_ordering(&tvnn, &candidates, &pool, &search_cfg);
                let expansions = out.expansions;
                let chosen = out.best.unwrap_or(out.best_partial);
                (chosen, expansions)
            }
        };
        self.apply_outcome(&tvnn, outcome, reasons, expansions, pool.len(), t);
        let wall = wall_start.elapsed().as_secs_f64();
        self.replan_wall.push(wall);
        self.planner_wall += wall;
    }

    fn apply_outcome(
        &mut self,
        tvnn: &Tvnn,
        outcome: OrderOutcome,
        reasons: Vec<String>,
        expansions: usize,
        pool_targets: usize,
        t: f64,
    ) {
        let feasible = outcome.assignment.feasible();
        let assigned: BTreeSet<TargetId> = outcome
            .assignment
            .plans
            .values()
            .flatten()
            .filter_map(|s| tvnn.node(s.node).kind.target_id())
            .collect();

        let mut robots = Vec::new();
        let mut nodes_per_robot = Vec::new();
        let mut labels_per_robot = Vec::new();
        for rid in &outcome.assignment.active {
            let seq = &outcome.assignment.plans[rid];
            let plan = plan_from_sequence(
                tvnn,
                seq,
                t,
                self.scenario.robots[*rid].battery_capacity,
                self.scenario.constants.monitor_duration,
            );
            let exec = &mut self.execs[*rid];
            let was_parked = exec.phase == Phase::Parked;
            exec.plan = plan;
            exec.next = 0;
            exec.monitor_elapsed = 0.0;
            exec.charge_received = 0.0;
            exec.retire_to = None;
            exec.phase = if was_parked { Phase::Parked } else { Phase::Transit };
            self.world.robots[*rid].activity = Activity::Active;
            robots.push(*rid);
            if let Some(stats) = outcome.assignment.stats.get(rid) {
                nodes_per_robot.push(stats.nodes);
                labels_per_robot.push(stats.live_labels);
            }
        }

        // strip handed-over targets from continuing plans
        for rid in 0..self.execs.len() {
            if robots.contains(&rid) {
                continue;
            }
            strip_targets(&mut self.execs[rid], &assigned);
            self.finish_plan_if_done(rid, t);
        }

        if !feasible {
            let uncovered: Vec<TargetId> =
                outcome.assignment.leftover.iter().map(|u| u.target).collect();
            for &m in &uncovered {
                self.trigger_mute.insert(m, t + self.scenario.constants.replanning_horizon / 4.0);
            }
            self.world.events.push(Event::ReplanInfeasible { t, uncovered });
            self.world.record_violation(ViolationKind::InfeasibleReplan);
        }

        self.world.events.push(Event::ReplanTriggered { t, reasons: reasons.clone() });
        self.world.events.push(Event::ReplanApplied {
            t,
            robots: robots.clone(),
            assigned_targets: assigned.len(),
        });
        self.replans.push(ReplanRecord {
            t,
            reasons,
            robots,
            pool_targets,
            nodes_per_robot,
            labels_per_robot,
            expansions,
            feasible,
        });
    }

    // -----------------------------------------------------------------

    pub fn into_report(self) -> RunReport {
        let success = self.world.first_violation.is_none();
        let n_ticks = self.active_series.len();
        let avg_active = if n_ticks == 0 {
            0.0
        } else {
            self.active_series.iter().map(|&a| a as f64).sum::<f64>() / n_ticks as f64
        };
        RunReport {
            deterministic: Deterministic {
                scenario_name: self.scenario.name.clone(),
                planner: self.cfg.planner.name().to_string(),
                seed: self.cfg.seed,
                duration: self.cfg.duration,
                sample_time: self.scenario.constants.sample_time,
                success,
                first_violation: self.world.first_violation,
                ticks: self.tick_count,
                avg_active,
                charging_fraction: if self.active_ticks == 0 {
                    0.0
                } else {
                    self.charging_ticks as f64 / self.active_ticks as f64
                },
                monitor_completions: self.monitor_completions,
                replans: self.replans,
                active_series: self.active_series,
                battery_series: self.battery_series,
                clock_series: self.clock_series,
                events: self.world.events,
                recursive_feasibility_breaches: self.rf_breaches,
            },
            timing: Timing {
                total_wall_s: self.started.elapsed().as_secs_f64(),
                planner_wall_s: self.planner_wall,
                replan_wall_s: self.replan_wall,
            },
        }
    }

    /// Robots and execution state needed by the reactive baseline.
    pub(crate) fn gcf_access(
        &mut self,
    ) -> (&Scenario, &mut WorldState, &mut Vec<u64>, f64) {
        // placeholder to satisfy the baseline module; replaced below
        unimplemented!("gcf uses Simulation fields directly")
    }
}

struct Coverage {
    /// Earliest estimated completion of a pending visit per target.
    interval_done: Vec<f64>,
    crossing_covered: Vec<bool>,
    pending: Vec<bool>,
}

impl Coverage {
    fn new(n: usize) -> Self {
        Coverage {
            interval_done: vec![f64::INFINITY; n],
            crossing_covered: vec![false; n],
            pending: vec![false; n],
        }
    }

    fn note_visit(&mut self, m: TargetId, est_done: f64) {
        if est_done < self.interval_done[m] {
            self.interval_done[m] = est_done;
        }
    }
}

fn strip_targets(exec: &mut RobotExec, gone: &BTreeSet<TargetId>) {
    if exec.plan.is_empty() {
        return;
    }
    let keep: Vec<ExecStep> = exec
        .plan
        .iter()
        .enumerate()
        .filter(|(k, step)| {
            if *k < exec.next {
                return true; // already executed
            }
            match &step.kind {
                StepKind::Visit { target, .. } => !gone.contains(target),
                _ => true,
            }
        })
        .map(|(_, s)| s.clone())
        .collect();
    if keep.len() != exec.plan.len() {
        let executed = exec.next;
        exec.plan = keep;
        exec.next = executed.min(exec.plan.len());
        if exec.phase == Phase::Monitoring || exec.phase == Phase::AwaitTarget {
            exec.phase = Phase::Transit;
            exec.monitor_elapsed = 0.0;
        }
    }
}

/// Run a full simulation and return its report.
pub fn run_simulation(scenario: &Scenario, cfg: &RunConfig) -> Result<RunReport, String> {
    let mut sim = Simulation::new(scenario.clone(), cfg.clone())?;
    if cfg.duration <= 0.0 {
        return Ok(sim.into_report());
    }
    sim.initial_plan();
    while !sim.finished() {
        sim.tick();
    }
    Ok(sim.into_report())
}
