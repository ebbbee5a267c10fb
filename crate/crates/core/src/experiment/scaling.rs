//! Statistical error of clustered EM as `m n` grows.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::report::{Cell, Table};
use super::{clustered_trace, replicate, ExperimentConfig, GridPoint};
use crate::stats::{log_log_slope, median};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Clustered,
    Decoupled,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Clustered => "clustered",
            Method::Decoupled => "decoupled",
        })
    }
}

/// One replication. `final_error` is the smallest error over the trace;
/// both it and `iters_used` are absent when the replication failed.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub m: usize,
    pub n: usize,
    pub mn: usize,
    pub rep: usize,
    pub final_error: Option<f64>,
    pub iters_used: Option<usize>,
    pub method: Method,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingSummary {
    pub point: GridPoint,
    pub median_error: f64,
    pub epsilon_ell: f64,
    pub reps_ok: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingResult {
    pub rows: Vec<ScalingRow>,
    pub summary: Vec<ScalingSummary>,
    /// Least-squares slope of `ln(median error)` on `ln(m n)`.
    pub slope: f64,
}

/// For every grid point and replication: fresh dataset and initialization,
/// clustered EM, and the minimum error over the trace.
pub fn run_scaling(cfg: &ExperimentConfig) -> Result<ScalingResult> {
    cfg.require_distinct_mn(3)?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &p in &cfg.grid {
        let outcomes = replicate(cfg, p, |spec| {
            let trace = clustered_trace(cfg, p, spec)?;
            Ok((trace.plateau(), trace.iterations()))
        })?;
        let mut errors = Vec::new();
        for (rep, o) in outcomes.into_iter().enumerate() {
            let (final_error, iters_used, failure) = match o {
                Ok((e, it)) => {
                    errors.push(e);
                    (Some(e), Some(it), None)
                }
                Err(msg) => (None, None, Some(msg)),
            };
            rows.push(ScalingRow {
                m: p.m,
                n: p.n,
                mn: p.mn(),
                rep,
                final_error,
                iters_used,
                method: Method::Clustered,
                failure,
            });
        }
        summary.push(ScalingSummary {
            point: p,
            median_error: median(&errors),
            epsilon_ell: cfg.epsilon_ell(p),
            reps_ok: errors.len(),
        });
    }
    let slope = summary_slope(&summary);
    Ok(ScalingResult { rows, summary, slope })
}

fn summary_slope(summary: &[ScalingSummary]) -> f64 {
    let (x, y): (Vec<f64>, Vec<f64>) = summary
        .iter()
        .filter(|s| s.median_error > 0.0)
        .map(|s| (s.point.mn() as f64, s.median_error))
        .unzip();
    if x.len() < 2 {
        f64::NAN
    } else {
        log_log_slope(&x, &y)
    }
}

impl ScalingResult {
    pub fn table(&self) -> Table {
        let mut t = Table::new(["m", "n", "mn", "rep", "method", "final_error", "iters_used", "failure"]);
        for r in &self.rows {
            t.push(vec![
                r.m.into(),
                r.n.into(),
                r.mn.into(),
                r.rep.into(),
                r.method.to_string().into(),
                r.final_error.into(),
                r.iters_used.into(),
                r.failure.clone().into(),
            ]);
        }
        t
    }

    /// Long format: one row per `(m, n, statistic)`.
    pub fn summary_table(&self) -> Table {
        let mut t = long_table();
        for s in &self.summary {
            let p = s.point;
            push_long(&mut t, Method::Clustered, p, "median_error", s.median_error);
            push_long(&mut t, Method::Clustered, p, "epsilon_ell", s.epsilon_ell);
            push_long(&mut t, Method::Clustered, p, "reps_ok", s.reps_ok as f64);
        }
        t
    }
}

pub(crate) fn long_table() -> Table {
    Table::new(["method", "m", "n", "mn", "statistic", "value"])
}

pub(crate) fn push_long(t: &mut Table, method: Method, p: GridPoint, statistic: &str, value: f64) {
    t.push(vec![
        method.to_string().into(),
        p.m.into(),
        p.n.into(),
        p.mn().into(),
        Cell::from(statistic),
        value.into(),
    ]);
}
