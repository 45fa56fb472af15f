//! Run report: the deterministic record of a simulation (series, events,
//! replan rows) plus wall-clock timings kept in a separate section so that
//! determinism checks can exclude them.

use crate::world::{Event, RobotId, Violation};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub deterministic: Deterministic,
    pub timing: Timing,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Deterministic {
    pub scenario_name: String,
    pub planner: String,
    pub seed: u64,
    pub duration: f64,
    pub sample_time: f64,
    pub success: bool,
    pub first_violation: Option<Violation>,
    pub ticks: u64,
    /// Time-averaged number of active robots.
    pub avg_active: f64,
    /// Fraction of active robot-ticks spent charging.
    pub charging_fraction: f64,
    pub monitor_completions: u64,
    pub replans: Vec<ReplanRecord>,
    pub active_series: Vec<u32>,
    /// Battery per robot per tick.
    pub battery_series: Vec<Vec<f64>>,
    /// Monitoring clock per target per tick.
    pub clock_series: Vec<Vec<f64>>,
    pub events: Vec<Event>,
    /// Replans where an unassigned target had less slack than the horizon
    /// (excluding failure orphans and new arrivals).
    pub recursive_feasibility_breaches: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplanRecord {
    pub t: f64,
    pub reasons: Vec<String>,
    /// Robots given fresh plans, in assignment order.
    pub robots: Vec<RobotId>,
    /// Targets that were up for (re)assignment.
    pub pool_targets: usize,
    pub nodes_per_robot: Vec<usize>,
    pub labels_per_robot: Vec<usize>,
    pub expansions: usize,
    pub feasible: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timing {
    pub total_wall_s: f64,
    pub planner_wall_s: f64,
    pub replan_wall_s: Vec<f64>,
}

impl RunReport {
    /// The byte-stable serialization used by determinism checks.
    pub fn deterministic_json(&self) -> String {
        serde_json::to_string_pretty(&self.deterministic).expect("report serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Event log as JSON lines.
    pub fn events_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.deterministic.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    /// Per-tick series as CSV: tick, time, active count, per-robot battery,
    /// per-target clock.
    pub fn series_csv(&self) -> String {
        let d = &self.deterministic;
        let mut out = String::from("tick,t,active");
        for r in 0..d.battery_series.len() {
            out.push_str(&format!(",battery_{r}"));
        }
        for m in 0..d.clock_series.len() {
            out.push_str(&format!(",clock_{m}"));
        }
        out.push('\n');
        for k in 0..d.active_series.len() {
            out.push_str(&format!("{},{},{}", k, k as f64 * d.sample_time, d.active_series[k]));
            for series in &d.battery_series {
                out.push_str(&format!(",{:.6}", series[k]));
            }
            for series in &d.clock_series {
                out.push_str(&format!(",{:.6}", series[k]));
            }
            out.push('\n');
        }
        out
    }

    /// Per-replan rows as CSV.
    pub fn replans_csv(&self) -> String {
        let mut out =
            String::from("t,reasons,robots,pool_targets,avg_nodes,avg_labels,expansions,feasible,wall_s\n");
        for (i, r) in self.deterministic.replans.iter().enumerate() {
            let avg_nodes = mean(&r.nodes_per_robot);
            let avg_labels = mean(&r.labels_per_robot);
            let wall = self.timing.replan_wall_s.get(i).copied().unwrap_or(0.0);
            out.push_str(&format!(
                "{},{},{},{},{:.3},{:.3},{},{},{:.6}\n",
                r.t,
                r.reasons.join("|"),
                r.robots.len(),
                r.pool_targets,
                avg_nodes,
                avg_labels,
                r.expansions,
                r.feasible,
                wall,
            ));
        }
        out
    }
}

pub(crate) fn mean(xs: &[usize]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<usize>() as f64 / xs.len() as f64
    }
}
