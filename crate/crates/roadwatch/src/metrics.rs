//! Summary statistics over run reports: success rate, time-averaged active
//! robots, replan cadence, per-replan means, charging fraction and fleet
//! efficiency, plus the CSV tables used for comparisons and sweeps.

use crate::report::RunReport;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub success_rate: f64,
    /// Mean over runs of the time-averaged active-robot count.
    pub avg_active: f64,
    pub avg_active_sd: f64,
    pub avg_replan_interval: f64,
    pub avg_robots_per_replan: f64,
    pub avg_nodes_per_robot: f64,
    pub avg_labels_per_robot: f64,
    pub avg_compute_per_replan_s: f64,
    pub total_planner_wall_s: f64,
    pub charging_fraction: f64,
    /// Targets per average active robot.
    pub fleet_efficiency: f64,
    pub targets: usize,
}

/// Aggregate a batch of reports for the same configuration.
pub fn summarize(reports: &[RunReport], targets: usize) -> Summary {
    assert!(!reports.is_empty(), "empty batch");
    let runs = reports.len();
    let successes = reports.iter().filter(|r| r.deterministic.success).count();
    let actives: Vec<f64> = reports.iter().map(|r| r.deterministic.avg_active).collect();
    let avg_active = mean(&actives);
    let avg_active_sd = sd(&actives, avg_active);

    let mut intervals = Vec::new();
    let mut robots_per_replan = Vec::new();
    let mut nodes = Vec::new();
    let mut labels = Vec::new();
    let mut walls = Vec::new();
    for r in reports {
        let replans = &r.deterministic.replans;
        for pair in replans.windows(2) {
            intervals.push(pair[1].t - pair[0].t);
        }
        for rec in replans {
            robots_per_replan.push(rec.robots.len() as f64);
            nodes.extend(rec.nodes_per_robot.iter().map(|&n| n as f64));
            labels.extend(rec.labels_per_robot.iter().map(|&n| n as f64));
        }
        walls.extend(r.timing.replan_wall_s.iter().copied());
    }

    let avg_active_for_eta = if avg_active > 0.0 { avg_active } else { f64::INFINITY };
    Summary {
        runs,
        success_rate: successes as f64 / runs as f64,
        avg_active,
        avg_active_sd,
        avg_replan_interval: mean(&intervals),
        avg_robots_per_replan: mean(&robots_per_replan),
        avg_nodes_per_robot: mean(&nodes),
        avg_labels_per_robot: mean(&labels),
        avg_compute_per_replan_s: mean(&walls),
        total_planner_wall_s: reports.iter().map(|r| r.timing.planner_wall_s).sum(),
        charging_fraction: mean(
            &reports.iter().map(|r| r.deterministic.charging_fraction).collect::<Vec<_>>(),
        ),
        fleet_efficiency: targets as f64 / avg_active_for_eta,
        targets,
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn sd(xs: &[f64], mean: f64) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    var.sqrt()
}

/// Standard error of the mean of the per-run active averages.
pub fn pooled_standard_error(reports: &[RunReport]) -> f64 {
    let xs: Vec<f64> = reports.iter().map(|r| r.deterministic.avg_active).collect();
    let m = mean(&xs);
    sd(&xs, m) / (xs.len() as f64).sqrt()
}

/// Comparison-table CSV over several labeled batches.
pub fn comparison_csv(rows: &[(String, Summary)]) -> String {
    let mut out = String::from(
        "method,success_rate_pct,avg_active,avg_nodes,avg_compute_s,fleet_efficiency,runs\n",
    );
    for (name, s) in rows {
        out.push_str(&format!(
            "{},{:.1},{:.2},{:.2},{:.4},{:.2},{}\n",
            name,
            100.0 * s.success_rate,
            s.avg_active,
            s.avg_nodes_per_robot,
            s.avg_compute_per_replan_s,
            s.fleet_efficiency,
            s.runs
        ));
    }
    out
}

/// Long-form sweep CSV: one row per (axis value, metric) with mean and a
/// 95% normal confidence halfwidth over seeds.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("axis,value,metric,mean,ci95,n\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{}\n",
            r.axis, r.value, r.metric, r.mean, r.ci95, r.n
        ));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub metric: String,
    pub mean: f64,
    pub ci95: f64,
    pub n: usize,
}

/// Build sweep rows for a metric from per-run values.
pub fn sweep_rows(axis: &str, value: f64, metric: &str, values: &[f64]) -> SweepRow {
    let m = mean(values);
    let s = sd(values, m);
    SweepRow {
        axis: axis.to_string(),
        value,
        metric: metric.to_string(),
        mean: m,
        ci95: 1.96 * s / (values.len().max(1) as f64).sqrt(),
        n: values.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::{Deterministic, RunReport, Timing};

    fn report(success: bool, avg_active: f64) -> RunReport {
        RunReport {
            deterministic: Deterministic {
                scenario_name: "t".into(),
                planner: "ours".into(),
                seed: 0,
                duration: 4.0,
                sample_time: 1.0,
                success,
                first_violation: None,
                ticks: 4,
                avg_active,
                charging_fraction: 0.5,
                monitor_completions: 0,
                replans: vec![],
                active_series: vec![3, 3, 4, 4],
                battery_series: vec![],
                clock_series: vec![],
                events: vec![],
                recursive_feasibility_breaches: 0,
            },
            timing: Timing::default(),
        }
    }

    #[test]
    fn mean_active_series() {
        let r = report(true, 3.5);
        let s = summarize(&[r], 10);
        assert!((s.avg_active - 3.5).abs() < 1e-12);
        assert!((s.fleet_efficiency - 10.0 / 3.5).abs() < 1e-12);
    }

    #[test]
    fn success_ratio() {
        let reports: Vec<RunReport> =
            (0..5).map(|i| report(i != 0, 3.0)).collect();
        let s = summarize(&reports, 8);
        assert!((s.success_rate - 0.8).abs() < 1e-12);
    }

    #[test]
    fn summaries_are_pure() {
        let reports: Vec<RunReport> = (0..3).map(|_| report(true, 2.0)).collect();
        let a = serde_json::to_string(&summarize(&reports, 8)).unwrap();
        let b = serde_json::to_string(&summarize(&reports, 8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    #[should_panic(expected = "empty batch")]
    fn empty_batch_panics() {
        summarize(&[], 1);
    }
}
