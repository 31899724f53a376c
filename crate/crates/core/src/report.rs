//! Serialized outputs: metrics JSON, curve CSVs and training logs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::Task;
use crate::objectives::LossBreakdown;
use crate::retrieval::{CodeStats, PrPoint, RetrievalResult};
use crate::trainer::{EpochMetrics, StepLog};

pub const METRICS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrecAtK {
    pub k: usize,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskReport {
    pub task: Task,
    pub n_query: usize,
    pub n_database: usize,
    pub k: usize,
    pub map_at_k: f64,
    pub prec_at_k: Vec<PrecAtK>,
    pub pr_curve: Vec<PrPoint>,
}

impl TaskReport {
    pub fn new(task: Task, n_query: usize, n_database: usize, r: &RetrievalResult) -> Self {
        TaskReport {
            task,
            n_query,
            n_database,
            k: r.k,
            map_at_k: r.map_at_k,
            prec_at_k: r
                .prec_at_k
                .iter()
                .map(|&(k, precision)| PrecAtK { k, precision })
                .collect(),
            pr_curve: r.pr_curve.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub version: u32,
    pub tasks: Vec<TaskReport>,
    pub query_code_stats: Option<CodeStats>,
    pub database_code_stats: Option<CodeStats>,
    pub random_baseline_map: Option<f64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: MetricsReport = serde_json::from_str(text).map_err(|e| Error::Format(format!("metrics JSON: {e}")))?;
        if r.version != METRICS_VERSION {
            return Err(Error::Format(format!(
                "metrics version {}, expected {METRICS_VERSION}",
                r.version
            )));
        }
        Ok(r)
    }
}

pub fn pr_curve_csv(points: &[PrPoint]) -> String {
    let mut out = String::from("radius,precision,recall\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.radius, p.precision, p.recall);
    }
    out
}

pub fn prec_at_k_csv(points: &[PrecAtK]) -> String {
    let mut out = String::from("k,precision\n");
    for p in points {
        let _ = writeln!(out, "{},{}", p.k, p.precision);
    }
    out
}

pub fn loss_csv(log: &[StepLog]) -> String {
    let mut out = String::from(LossBreakdown::CSV_HEADER);
    out.push('\n');
    for s in log {
        out.push_str(&s.breakdown.csv_row(s.step));
        out.push('\n');
    }
    out
}

pub const EPOCH_CSV_HEADER: &str =
    "epoch,steps,recon_i,recon_t,js_mi,skl,tc_i,tc_t,bal,total,js_mi_critic,tc_bce_i,tc_bce_t";

pub fn epoch_csv(epochs: &[EpochMetrics]) -> String {
    let mut out = String::from(EPOCH_CSV_HEADER);
    out.push('\n');
    for e in epochs {
        let b = &e.breakdown;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            e.epoch,
            e.steps,
            b.recon_i,
            b.recon_t,
            b.js_mi,
            b.skl,
            b.tc_i,
            b.tc_t,
            b.bal,
            b.total,
            e.js_mi_critic,
            e.tc_bce_i,
            e.tc_bce_t
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MetricsReport {
        MetricsReport {
            version: METRICS_VERSION,
            tasks: vec![TaskReport {
                task: Task::ImgToTxt,
                n_query: 2,
                n_database: 3,
                k: 3,
                map_at_k: 0.75,
                prec_at_k: vec![PrecAtK { k: 1, precision: 1.0 }],
                pr_curve: vec![PrPoint {
                    radius: 0,
                    precision: 1.0,
                    recall: 0.5,
                }],
            }],
            query_code_stats: None,
            database_code_stats: None,
            random_baseline_map: Some(0.1),
        }
    }

    #[test]
    fn metrics_json_round_trips() {
        let r = sample();
        assert_eq!(MetricsReport::from_json(&r.to_json().unwrap()).unwrap(), r);
        let bad = r.to_json().unwrap().replace("\"version\": 1", "\"version\": 9");
        assert!(MetricsReport::from_json(&bad).is_err());
    }

    #[test]
    fn csv_shapes() {
        let r = sample();
        assert_eq!(pr_curve_csv(&r.tasks[0].pr_curve), "radius,precision,recall\n0,1,0.5\n");
        assert_eq!(prec_at_k_csv(&r.tasks[0].prec_at_k), "k,precision\n1,1\n");
        assert_eq!(loss_csv(&[]).lines().count(), 1);
    }
}
