//! Aggregating trial reports across seeds.

use crate::experiment::{TrialReport, REPORT_FILE};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Mean and sample standard deviation; constant inputs (including a single value) give exactly 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.iter().all(|v| *v == values[0]) {
        return (values[0], 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub arm: String,
    pub label: String,
    pub trials: usize,
    pub failed: usize,
    pub test_error_mean: f64,
    pub test_error_std: f64,
    pub params_mean: f64,
    pub params_std: f64,
    pub skip_fraction_mean: f64,
    pub skip_fraction_std: f64,
    pub wall_seconds_mean: f64,
}

/// One row per arm, in order of first appearance. Failed trials are counted
/// but excluded from the statistics.
pub fn aggregate(reports: &[TrialReport]) -> Vec<AggregateRow> {
    let mut arms: Vec<(&str, &str)> = Vec::new();
    for r in reports {
        if !arms.iter().any(|(a, _)| *a == r.arm) {
            arms.push((&r.arm, &r.label));
        }
    }
    arms.into_iter()
        .map(|(arm, label)| {
            let all: Vec<&TrialReport> = reports.iter().filter(|r| r.arm == arm).collect();
            let ok: Vec<&TrialReport> = all.iter().copied().filter(|r| r.ok).collect();
            let stat = |f: fn(&TrialReport) -> f64| mean_std(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (te, tes) = stat(|r| r.test_error);
            let (pm, ps) = stat(|r| r.param_count as f64);
            let (sm, ss) = stat(|r| r.skip_fraction);
            let (wm, _) = stat(|r| r.wall_seconds);
            AggregateRow {
                arm: arm.to_string(),
                label: label.to_string(),
                trials: all.len(),
                failed: all.len() - ok.len(),
                test_error_mean: te,
                test_error_std: tes,
                params_mean: pm,
                params_std: ps,
                skip_fraction_mean: sm,
                skip_fraction_std: ss,
                wall_seconds_mean: wm,
            }
        })
        .collect()
}

pub const AGGREGATE_HEADER: &str = "arm,label,trials,failed,test_error_mean,test_error_std,params_mean,params_std,skip_fraction_mean,skip_fraction_std,wall_seconds_mean";

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from(AGGREGATE_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.arm,
            r.label,
            r.trials,
            r.failed,
            r.test_error_mean,
            r.test_error_std,
            r.params_mean,
            r.params_std,
            r.skip_fraction_mean,
            r.skip_fraction_std,
            r.wall_seconds_mean
        );
    }
    s
}

/// Fixed-width table with mean ± std columns; errors in percent.
pub fn aggregate_text(rows: &[AggregateRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<18} {:>6} {:>18} {:>20} {:>14} {:>10}", "Arm", "Trials", "Test error (%)", "Params", "Skip frac", "Time (s)");
    for r in rows {
        let trials = if r.failed > 0 { format!("{}/{}", r.trials - r.failed, r.trials) } else { r.trials.to_string() };
        let _ = writeln!(
            s,
            "{:<18} {:>6} {:>18} {:>20} {:>14} {:>10.1}",
            r.label,
            trials,
            format!("{:.2} ± {:.2}", 100.0 * r.test_error_mean, 100.0 * r.test_error_std),
            format!("{:.0} ± {:.0}", r.params_mean, r.params_std),
            format!("{:.2} ± {:.2}", r.skip_fraction_mean, r.skip_fraction_std),
            r.wall_seconds_mean
        );
    }
    s
}

pub fn write_aggregate(dir: &Path, rows: &[AggregateRow]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("aggregate.csv"), aggregate_csv(rows))?;
    std::fs::write(dir.join("aggregate.txt"), aggregate_text(rows))
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == REPORT_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

/// Every `report.json` below `dir`, sorted by path.
pub fn load_reports(dir: &Path) -> anyhow::Result<Vec<TrialReport>> {
    let mut paths = Vec::new();
    collect(dir, &mut paths)?;
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))
        })
        .collect()
}
