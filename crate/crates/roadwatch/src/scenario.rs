//! Static world description: road network, charging stations, robot and
//! target parameter sets, and the scenario file format.
//!
//! Scenario files are TOML with sections `[workspace]`, `[roads]`,
//! `[[stations]]`, `[robots]`, `[targets]`, `[constants]`; a JSON file with
//! the same structure is accepted interchangeably (detected by extension or
//! a leading `{`). See the repository README for the documented format.

use crate::geometry::{dist, Rect, Vec2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Road network: straight segments between intersections, inside a
/// rectangular workspace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub intersections: Vec<Vec2>,
    /// Unordered intersection-index pairs.
    pub roads: Vec<(usize, usize)>,
    pub bounds: Rect,
}

impl RoadNetwork {
    pub fn road_length(&self, road: usize) -> f64 {
        let (a, b) = self.roads[road];
        dist(self.intersections[a], self.intersections[b])
    }

    /// Roads incident to an intersection.
    pub fn incident_roads(&self, intersection: usize) -> Vec<usize> {
        self.roads
            .iter()
            .enumerate()
            .filter(|(_, &(a, b))| a == intersection || b == intersection)
            .map(|(i, _)| i)
            .collect()
    }

    /// The endpoint of `road` that is not `intersection`.
    pub fn other_end(&self, road: usize, intersection: usize) -> usize {
        let (a, b) = self.roads[road];
        if a == intersection {
            b
        } else {
            a
        }
    }

    /// Position at arc position `s` in [0,1] measured from the road's first
    /// endpoint.
    pub fn point_on_road(&self, road: usize, s: f64) -> Vec2 {
        let (a, b) = self.roads[road];
        let pa = self.intersections[a];
        let pb = self.intersections[b];
        pa + (pb - pa) * s
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let n = self.intersections.len();
        if n == 0 {
            return Err(ScenarioError::Invalid("no intersections".into()));
        }
        for (i, &(a, b)) in self.roads.iter().enumerate() {
            if a >= n || b >= n {
                return Err(ScenarioError::Invalid(format!(
                    "road {i} references intersection index {} of {}",
                    a.max(b),
                    n
                )));
            }
            if self.road_length(i) <= 0.0 {
                return Err(ScenarioError::Invalid(format!("road {i} has zero length")));
            }
        }
        for (i, &p) in self.intersections.iter().enumerate() {
            if !self.bounds.contains(p, 1e-9) {
                return Err(ScenarioError::Invalid(format!(
                    "intersection {i} lies outside the workspace bounds"
                )));
            }
        }
        // connectivity over intersections touched by roads
        if !self.roads.is_empty() {
            let mut seen = vec![false; n];
            let start = self.roads[0].0;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(v) = stack.pop() {
                for &(a, b) in &self.roads {
                    for (u, w) in [(a, b), (b, a)] {
                        if u == v && !seen[w] {
                            seen[w] = true;
                            stack.push(w);
                        }
                    }
                }
            }
            if !seen.iter().all(|&s| s) {
                return Err(ScenarioError::Invalid("road network is not connected".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Station {
    pub position: Vec2,
    /// Battery units per second while docked and charging.
    pub charge_rate: f64,
    /// Number of discrete charge-amount options the planner may pick.
    pub num_charge_levels: u32,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RobotParams {
    pub max_speed: f64,
    pub battery_capacity: f64,
    /// Battery units per second whenever not docked.
    pub drain_rate: f64,
    pub sensor_range: f64,
    /// Maximum number of distinct targets in one plan.
    pub capacity: usize,
    /// Spawn/retirement pad.
    pub home: Vec2,
}

/// Initial condition for one target.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TargetInit {
    pub speed: f64,
    /// Upper bound on the time between two completed monitorings.
    pub interval_bound: f64,
    pub road: usize,
    /// Arc position in [0,1] from the road's first endpoint.
    pub arc_pos: f64,
    /// Heading toward the road's second endpoint when true.
    #[serde(default = "default_true")]
    pub forward: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Constants {
    /// Required continuous monitoring dwell per visit, seconds.
    pub monitor_duration: f64,
    /// Simulation step, seconds.
    pub sample_time: f64,
    /// Look-ahead within which predicted violations trigger a replan.
    pub replanning_horizon: f64,
    /// Weights of the target-priority score (travel term, deadline term).
    #[serde(default = "default_kappa")]
    pub kappa_weights: [f64; 2],
    /// Allow targets to reverse onto the road they came from at any hub
    /// (default: reversal only at dead ends).
    #[serde(default)]
    pub uniform_with_reversal: bool,
}

fn default_kappa() -> [f64; 2] {
    [1.0, 1.0]
}

/// A scripted change of target membership during a run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MembershipEvent {
    Enter {
        time: f64,
        #[serde(flatten)]
        target: TargetInit,
    },
    Exit {
        time: f64,
        target: usize,
    },
}

/// Immutable, validated world description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub network: RoadNetwork,
    pub stations: Vec<Station>,
    pub robots: Vec<RobotParams>,
    pub targets: Vec<TargetInit>,
    pub constants: Constants,
    #[serde(default)]
    pub membership: Vec<MembershipEvent>,
}

// ---------------------------------------------------------------------------
// File format

#[derive(Debug, Deserialize)]
struct FileWorkspace {
    min: [f64; 2],
    max: [f64; 2],
}

#[derive(Debug, Deserialize)]
struct FileRoads {
    intersections: Vec<[f64; 2]>,
    segments: Vec<[usize; 2]>,
}

#[derive(Debug, Deserialize)]
struct FileStation {
    position: [f64; 2],
    charge_rate: f64,
    num_charge_levels: u32,
}

#[derive(Debug, Deserialize)]
struct FileRobots {
    count: usize,
    max_speed: f64,
    battery_capacity: f64,
    drain_rate: f64,
    sensor_range: f64,
    capacity: usize,
    home: [f64; 2],
}

#[derive(Debug, Deserialize)]
struct FileTargetEntry {
    road: usize,
    arc_pos: f64,
    #[serde(default)]
    speed: Option<f64>,
    #[serde(default)]
    interval_bound: Option<f64>,
    #[serde(default = "default_true")]
    forward: bool,
}

#[derive(Debug, Deserialize)]
struct FileTargets {
    #[serde(default)]
    count: Option<usize>,
    #[serde(default)]
    speed: Option<f64>,
    #[serde(default)]
    interval_bound: Option<f64>,
    #[serde(default)]
    placement_seed: Option<u64>,
    #[serde(default)]
    list: Vec<FileTargetEntry>,
}

#[derive(Debug, Deserialize)]
struct FileConstants {
    monitor_duration: f64,
    sample_time: f64,
    replanning_horizon: f64,
    #[serde(default = "default_kappa")]
    kappa_weights: [f64; 2],
    #[serde(default)]
    uniform_with_reversal: bool,
}

#[derive(Debug, Deserialize)]
struct ScenarioFile {
    #[serde(default)]
    name: Option<String>,
    workspace: FileWorkspace,
    roads: FileRoads,
    stations: Vec<FileStation>,
    robots: FileRobots,
    targets: FileTargets,
    constants: FileConstants,
    #[serde(default)]
    membership: Vec<MembershipEvent>,
}

/// Load and validate a scenario from a TOML or JSON file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let json = path.extension().map(|e| e == "json").unwrap_or(false)
        || text.trim_start().starts_with('{');
    parse_scenario_str(&text, json).map_err(|e| match e {
        ScenarioError::Parse { detail, .. } => ScenarioError::Parse {
            path: path.display().to_string(),
            detail,
        },
        other => other,
    })
}

/// Parse a scenario from text. `json` selects the JSON mirror of the format.
pub fn parse_scenario_str(text: &str, json: bool) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = if json {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            path: "<input>".into(),
            detail: e.to_string(),
        })?
    } else {
        toml::from_str(text).map_err(|e| ScenarioError::Parse {
            path: "<input>".into(),
            detail: e.to_string(),
        })?
    };
    build_scenario(file)
}

fn build_scenario(file: ScenarioFile) -> Result<Scenario, ScenarioError> {
    let bounds = Rect::new(
        Vec2::new(file.workspace.min[0], file.workspace.min[1]),
        Vec2::new(file.workspace.max[0], file.workspace.max[1]),
    );
    if bounds.width() <= 0.0 || bounds.height() <= 0.0 {
        return Err(ScenarioError::Invalid("workspace has non-positive extent".into()));
    }
    let network = RoadNetwork {
        intersections: file
            .roads
            .intersections
            .iter()
            .map(|p| Vec2::new(p[0], p[1]))
            .collect(),
        roads: file.roads.segments.iter().map(|s| (s[0], s[1])).collect(),
        bounds,
    };
    network.validate()?;

    let stations: Vec<Station> = file
        .stations
        .iter()
        .map(|s| Station {
            position: Vec2::new(s.position[0], s.position[1]),
            charge_rate: s.charge_rate,
            num_charge_levels: s.num_charge_levels,
        })
        .collect();
    if stations.is_empty() {
        return Err(ScenarioError::Invalid("at least one station is required".into()));
    }
    for (i, s) in stations.iter().enumerate() {
        if s.charge_rate <= 0.0 {
            return Err(ScenarioError::Invalid(format!(
                "station {i}: charge_rate must be positive"
            )));
        }
        if s.num_charge_levels < 1 {
            return Err(ScenarioError::Invalid(format!(
                "station {i}: num_charge_levels must be at least 1"
            )));
        }
        if !bounds.contains(s.position, 1e-9) {
            return Err(ScenarioError::Invalid(format!(
                "station {i}: position outside workspace bounds"
            )));
        }
    }

    let r = &file.robots;
    for (name, v) in [
        ("max_speed", r.max_speed),
        ("battery_capacity", r.battery_capacity),
        ("drain_rate", r.drain_rate),
        ("sensor_range", r.sensor_range),
    ] {
        if v <= 0.0 {
            return Err(ScenarioError::Invalid(format!("robots: {name} must be positive")));
        }
    }
    if r.count == 0 || r.capacity == 0 {
        return Err(ScenarioError::Invalid(
            "robots: count and capacity must be positive".into(),
        ));
    }
    let params = RobotParams {
        max_speed: r.max_speed,
        battery_capacity: r.battery_capacity,
        drain_rate: r.drain_rate,
        sensor_range: r.sensor_range,
        capacity: r.capacity,
        home: Vec2::new(r.home[0], r.home[1]),
    };
    if !bounds.contains(params.home, 1e-9) {
        return Err(ScenarioError::Invalid("robots: home outside workspace bounds".into()));
    }
    let robots = vec![params; r.count];

    let t = &file.targets;
    let targets: Vec<TargetInit> = if !t.list.is_empty() {
        let speed_d = t.speed;
        let bound_d = t.interval_bound;
        t.list
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let speed = e.speed.or(speed_d).ok_or_else(|| {
                    ScenarioError::Invalid(format!("targets.list[{i}]: missing speed"))
                })?;
                let interval_bound = e.interval_bound.or(bound_d).ok_or_else(|| {
                    ScenarioError::Invalid(format!("targets.list[{i}]: missing interval_bound"))
                })?;
                Ok(TargetInit {
                    speed,
                    interval_bound,
                    road: e.road,
                    arc_pos: e.arc_pos,
                    forward: e.forward,
                })
            })
            .collect::<Result<_, ScenarioError>>()?
    } else {
        let count = t.count.ok_or_else(|| {
            ScenarioError::Invalid("targets: either a list or a count is required".into())
        })?;
        let speed = t
            .speed
            .ok_or_else(|| ScenarioError::Invalid("targets: missing speed".into()))?;
        let interval_bound = t
            .interval_bound
            .ok_or_else(|| ScenarioError::Invalid("targets: missing interval_bound".into()))?;
        place_targets(
            &network,
            count,
            speed,
            interval_bound,
            t.placement_seed.unwrap_or(0),
        )
    };
    for (i, tg) in targets.iter().enumerate() {
        if tg.road >= network.roads.len() {
            return Err(ScenarioError::Invalid(format!(
                "target {i}: road index {} of {}",
                tg.road,
                network.roads.len()
            )));
        }
        if tg.speed <= 0.0 {
            return Err(ScenarioError::Invalid(format!("target {i}: speed must be positive")));
        }
        if tg.speed >= r.max_speed {
            return Err(ScenarioError::Invalid(format!(
                "target {i}: speed {} must be below every robot max_speed {}",
                tg.speed, r.max_speed
            )));
        }
        if !(0.0..=1.0).contains(&tg.arc_pos) {
            return Err(ScenarioError::Invalid(format!(
                "target {i}: arc_pos must lie in [0,1]"
            )));
        }
        if tg.interval_bound <= file.constants.monitor_duration {
            return Err(ScenarioError::Invalid(format!(
                "target {i}: interval_bound must exceed monitor_duration"
            )));
        }
    }

    let c = &file.constants;
    for (name, v) in [
        ("monitor_duration", c.monitor_duration),
        ("sample_time", c.sample_time),
        ("replanning_horizon", c.replanning_horizon),
    ] {
        if v <= 0.0 {
            return Err(ScenarioError::Invalid(format!("constants: {name} must be positive")));
        }
    }

    Ok(Scenario {
        name: file.name.unwrap_or_default(),
        network,
        stations,
        robots,
        targets: targets.to_vec(),
        constants: Constants {
            monitor_duration: c.monitor_duration,
            sample_time: c.sample_time,
            replanning_horizon: c.replanning_horizon,
            kappa_weights: c.kappa_weights,
            uniform_with_reversal: c.uniform_with_reversal,
        },
        membership: file.membership,
    })
}

/// Scatter `count` targets uniformly over the network's total road length.
pub fn place_targets(
    network: &RoadNetwork,
    count: usize,
    speed: f64,
    interval_bound: f64,
    seed: u64,
) -> Vec<TargetInit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7061_6463);
    let lengths: Vec<f64> = (0..network.roads.len())
        .map(|r| network.road_length(r))
        .collect();
    let total: f64 = lengths.iter().sum();
    (0..count)
        .map(|_| {
            let mut pick = rng.gen_range(0.0..total);
            let mut road = 0;
            for (i, &len) in lengths.iter().enumerate() {
                if pick <= len {
                    road = i;
                    break;
                }
                pick -= len;
            }
            TargetInit {
                speed,
                interval_bound,
                road,
                arc_pos: rng.gen_range(0.05..0.95),
                forward: *[true, false].choose(&mut rng).unwrap(),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Derived queries

impl Scenario {
    /// Distance from `p` to the nearest charging station.
    pub fn dist_to_nearest_station(&self, p: Vec2) -> f64 {
        self.stations
            .iter()
            .map(|s| dist(p, s.position))
            .fold(f64::INFINITY, f64::min)
    }

    /// Supremum of the nearest-station distance over the workspace,
    /// evaluated on a grid of pitch <= 1 m plus the rectangle corners.
    /// Grid sampling is an approximation adequate at this scale.
    pub fn sup_station_distance(&self) -> f64 {
        let b = self.network.bounds;
        let nx = (b.width().ceil() as usize).max(1);
        let ny = (b.height().ceil() as usize).max(1);
        let mut sup: f64 = 0.0;
        for i in 0..=nx {
            for j in 0..=ny {
                let p = Vec2::new(
                    b.min.x + b.width() * i as f64 / nx as f64,
                    b.min.y + b.height() * j as f64 / ny as f64,
                );
                sup = sup.max(self.dist_to_nearest_station(p));
            }
        }
        for c in b.corners() {
            sup = sup.max(self.dist_to_nearest_station(c));
        }
        sup
    }

    /// True when every robot's drain rate allows it to reach any workspace
    /// point and return to a station on a full battery; also returns the
    /// slack margin of the tightest robot.
    pub fn check_drain_bound(&self) -> (bool, f64) {
        let sup = self.sup_station_distance();
        let mut margin = f64::INFINITY;
        for r in &self.robots {
            let bound = r.battery_capacity * r.max_speed / (2.0 * sup);
            margin = margin.min(bound - r.drain_rate);
        }
        (margin >= 0.0, margin)
    }

    /// Planning horizon: the largest monitoring interval bound among
    /// current targets.
    pub fn planning_horizon(&self) -> f64 {
        self.targets
            .iter()
            .map(|t| t.interval_bound)
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const NOMINAL_TOML: &str = r#"
name = "unit-nominal"

[workspace]
min = [0.0, 0.0]
max = [50.0, 50.0]

[roads]
intersections = [[0,0],[50,0],[50,50],[0,50]]
segments = [[0,1],[1,2],[2,3],[3,0]]

[[stations]]
position = [25.0, 25.0]
charge_rate = 0.2
num_charge_levels = 5

[robots]
count = 2
max_speed = 1.5
battery_capacity = 10.0
drain_rate = 0.2
sensor_range = 3.0
capacity = 6
home = [25.0, 25.0]

[targets]
count = 3
speed = 0.2
interval_bound = 80.0
placement_seed = 7

[constants]
monitor_duration = 2.0
sample_time = 0.5
replanning_horizon = 30.0
"#;

    fn nominal() -> Scenario {
        parse_scenario_str(NOMINAL_TOML, false).unwrap()
    }

    #[test]
    fn loads_nominal_parameters() {
        let s = nominal();
        assert_eq!(s.robots.len(), 2);
        assert_eq!(s.robots[0].battery_capacity, 10.0);
        assert_eq!(s.robots[0].max_speed, 1.5);
        assert_eq!(s.robots[0].drain_rate, 0.2);
        assert_eq!(s.stations[0].charge_rate, 0.2);
        assert_eq!(s.robots[0].sensor_range, 3.0);
        assert_eq!(s.robots[0].capacity, 6);
        assert_eq!(s.targets.len(), 3);
        assert_eq!(s.targets[0].interval_bound, 80.0);
        assert_eq!(s.constants.monitor_duration, 2.0);
        assert_eq!(s.stations[0].num_charge_levels, 5);
        assert_eq!(s.constants.replanning_horizon, 30.0);
    }

    #[test]
    fn bad_road_index_names_the_road() {
        let text = NOMINAL_TOML.replace("segments = [[0,1],[1,2],[2,3],[3,0]]", "segments = [[0,99]]");
        let err = parse_scenario_str(&text, false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("road 0"), "got: {msg}");
        assert!(msg.contains("99"), "got: {msg}");
    }

    #[test]
    fn zero_charge_rate_rejected() {
        let text = NOMINAL_TOML.replace("charge_rate = 0.2", "charge_rate = 0.0");
        let err = parse_scenario_str(&text, false).unwrap_err();
        assert!(err.to_string().contains("charge_rate must be positive"));
    }

    #[test]
    fn json_mirror_accepted() {
        let s = nominal();
        let json = s.to_json();
        // the canonical struct serialization is itself a valid scenario document
        let back: Scenario = serde_json::from_str(&json).unwrap();
        assert_eq!(back.targets.len(), s.targets.len());
        assert_eq!(back.to_json(), json);
    }

    #[test]
    fn nearest_station_examples() {
        let mut s = nominal();
        assert_eq!(s.dist_to_nearest_station(s.stations[0].position), 0.0);
        s.stations = vec![
            Station { position: Vec2::new(0.0, 0.0), charge_rate: 0.2, num_charge_levels: 5 },
            Station { position: Vec2::new(10.0, 0.0), charge_rate: 0.2, num_charge_levels: 5 },
        ];
        assert_eq!(s.dist_to_nearest_station(Vec2::new(6.0, 0.0)), 4.0);
    }

    #[test]
    fn nearest_station_is_min_over_stations() {
        let s = nominal();
        for i in 0..20 {
            let p = Vec2::new(2.5 * i as f64, 50.0 - 2.5 * i as f64);
            for st in &s.stations {
                assert!(s.dist_to_nearest_station(p) <= dist(p, st.position) + 1e-12);
            }
        }
    }

    #[test]
    fn drain_bound_central_station() {
        // single central station in 50x50: sup d_S is the corner distance
        let s = nominal();
        let sup = s.sup_station_distance();
        assert!((sup - (2f64 * 25.0 * 25.0).sqrt()).abs() < 1e-6, "sup={sup}");
        let (ok, margin) = s.check_drain_bound();
        assert!(ok);
        assert!((margin - (15.0 / (2.0 * sup) - 0.2)).abs() < 1e-9);
        assert!((margin - 0.0121).abs() < 1e-4);
    }

    #[test]
    fn drain_bound_fails_for_hungry_robot() {
        let mut s = nominal();
        for r in &mut s.robots {
            r.drain_rate = 0.3;
        }
        let (ok, margin) = s.check_drain_bound();
        assert!(!ok);
        assert!(margin < 0.0);
    }

    #[test]
    fn drain_bound_grows_with_corner_stations() {
        let mut s = nominal();
        s.stations = s
            .network
            .bounds
            .corners()
            .iter()
            .map(|&c| Station { position: c, charge_rate: 0.2, num_charge_levels: 1 })
            .collect();
        let (ok, margin) = s.check_drain_bound();
        assert!(ok);
        assert!(margin > 0.1);
    }

    #[test]
    fn toml_roundtrip_via_json() {
        let s = nominal();
        let again: Scenario = serde_json::from_str(&s.to_json()).unwrap();
        assert_eq!(s.to_json(), again.to_json());
    }
}
