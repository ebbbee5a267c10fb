//! Replicated experiments over a grid of `(m, n)` and their reports.
//!
//! Replications run in parallel; each owns the stream
//! [`ExperimentConfig::rep_spec`], and results are ordered by grid point, then
//! replication, whatever order they finish in. A replication that fails
//! numerically is recorded and skipped; more than 10% failures at one grid
//! point abort the experiment.

pub mod bounds;
pub mod compare;
pub mod config;
pub mod gap;
pub mod report;
pub mod scaling;

use rayon::prelude::*;

pub use bounds::{run_bound_suite, BoundRow, BoundSuite, SuiteOptions};
pub use compare::{run_iteration_comparison, ComparisonResult, ComparisonRow};
pub use config::{ExperimentConfig, GridPoint, RawConfig};
pub use gap::{run_generalization_gap, GapResult, GapRow};
pub use report::{emit_report, write_table, Cell, Format, Metadata, Table};
pub use scaling::{run_scaling, Method, ScalingResult, ScalingRow};

use crate::datagen::{sample_clustered_dataset, sample_init};
use crate::em::{run_em, EmProblem};
use crate::{ClusteredDataset, EmTrace, Error, Result, RngSpec};

/// Target accuracy `sqrt(|theta*|^2 + sigma^2) sqrt((d + ln(1/delta)) / (m n))`.
pub fn epsilon_ell(signal_norm: f64, sigma: f64, d: usize, delta: f64, mn: usize) -> f64 {
    (signal_norm * signal_norm + sigma * sigma).sqrt() * ((d as f64 + (1.0 / delta).ln()) / mn as f64).sqrt()
}

impl ExperimentConfig {
    pub fn epsilon_ell(&self, p: GridPoint) -> f64 {
        epsilon_ell(self.model.signal_norm(), self.model.sigma(), self.model.d(), self.delta, p.mn())
    }
}

/// Fraction of failed replications above which a grid point is fatal.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

/// Outcome of one replication: its value, or the message of a numerical failure.
pub type RepOutcome<T> = std::result::Result<T, String>;

/// Runs `f` for every replication at `p`. Numerical errors are collected;
/// any other error aborts.
pub(crate) fn replicate<T, F>(cfg: &ExperimentConfig, p: GridPoint, f: F) -> Result<Vec<RepOutcome<T>>>
where
    T: Send,
    F: Fn(&RngSpec) -> Result<T> + Sync,
{
    let outcomes: Vec<Result<RepOutcome<T>>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| match f(&cfg.rep_spec(p, rep)) {
            Ok(v) => Ok(Ok(v)),
            Err(e) if e.is_numerical() => Ok(Err(e.to_string())),
            Err(e) => Err(e),
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let failed = outcomes.iter().filter(|o| o.is_err()).count();
    if failed as f64 > MAX_FAILURE_FRACTION * cfg.reps as f64 {
        let first = outcomes
            .iter()
            .find_map(|o| o.as_ref().err().cloned())
            .unwrap_or_default();
        return Err(Error::TooManyFailures {
            m: p.m,
            n: p.n,
            failed,
            reps: cfg.reps,
            first,
        });
    }
    Ok(outcomes)
}

/// Dataset of replication 0 at the single grid point.
pub fn generate_dataset(cfg: &ExperimentConfig) -> Result<ClusteredDataset> {
    let p = cfg.single_point()?;
    sample_clustered_dataset(&cfg.model, p.m, p.n, &cfg.rep_spec(p, 0).child("data"))
}

/// One clustered EM run on replication 0 at the single grid point.
pub fn run_single(cfg: &ExperimentConfig) -> Result<EmTrace> {
    let p = cfg.single_point()?;
    clustered_trace(cfg, p, &cfg.rep_spec(p, 0))
}

/// Table form of a trace: `iter, theta_k, error, wall_ms, stop_reason`.
pub fn trace_table(trace: &EmTrace) -> Table {
    let d = trace.iterates[0].len();
    let mut cols = vec!["iter".to_string()];
    cols.extend((0..d).map(|k| format!("theta_{k}")));
    cols.extend(["error", "wall_ms", "stop_reason"].map(String::from));
    let mut t = Table::new(cols);
    let last = trace.iterations();
    for (i, theta) in trace.iterates.iter().enumerate() {
        let mut row: Vec<Cell> = vec![i.into()];
        row.extend(theta.iter().map(|&v| Cell::Float(v)));
        row.push(trace.errors[i].into());
        row.push(match i {
            0 => Cell::Missing,
            _ => Cell::Float(trace.wall_times[i - 1].as_secs_f64() * 1e3),
        });
        row.push(if i == last { trace.stop_reason.to_string().into() } else { Cell::Missing });
        t.push(row);
    }
    t
}

/// Dataset, initialization and clustered EM trace for one replication stream.
pub(crate) fn clustered_trace(cfg: &ExperimentConfig, p: GridPoint, spec: &RngSpec) -> Result<EmTrace> {
    let data = sample_clustered_dataset(&cfg.model, p.m, p.n, &spec.child("data"))?;
    let theta0 = sample_init(&cfg.model, cfg.init_radius_frac, &mut spec.child("init").stream())?;
    let problem = EmProblem::clustered(&data.observations())?;
    run_em(&problem, theta0.view(), cfg.model.sigma(), &cfg.em, cfg.model.theta_star().view())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(reps: usize, grid: Vec<(usize, usize)>) -> ExperimentConfig {
        RawConfig {
            d: Some(2),
            snr: Some(4.0),
            grid: Some(grid),
            seed: Some(1),
            reps: Some(reps),
            ..RawConfig::default()
        }
        .resolve()
        .unwrap()
    }

    #[test]
    fn epsilon_ell_hand_value() {
        let v = epsilon_ell(1.0, 0.25, 2, (-2f64).exp(), 10_000);
        assert!((v - 1.0625f64.sqrt() * 0.02).abs() < 1e-9);
        assert!((v - 0.020_615_528).abs() < 1e-9);
    }

    #[test]
    fn replicate_keeps_order_and_tolerates_few_failures() {
        let c = cfg(20, vec![(10, 10)]);
        let p = c.grid[0];
        let out = replicate(&c, p, |spec| {
            let rep: usize = spec.stream_labels.last().unwrap()[4..].parse().unwrap();
            if rep == 7 {
                Err(Error::Divergence { iteration: 1 })
            } else {
                Ok(rep)
            }
        })
        .unwrap();
        assert_eq!(out.len(), 20);
        assert_eq!(out[3], Ok(3));
        assert!(out[7].is_err());
    }

    #[test]
    fn replicate_aborts_on_many_failures() {
        let c = cfg(10, vec![(10, 10)]);
        let err = replicate(&c, c.grid[0], |_| -> Result<()> { Err(Error::SingularCovariance { pivot: 0.0 }) })
            .unwrap_err();
        assert!(matches!(err, Error::TooManyFailures { failed: 10, reps: 10, .. }), "{err}");
        let invalid = replicate(&c, c.grid[0], |_| -> Result<()> { Err(Error::invalid("x", "bad")) }).unwrap_err();
        assert!(matches!(invalid, Error::InvalidParameter { .. }));
    }

    #[test]
    fn single_point_helpers() {
        let c = cfg(1, vec![(20, 10)]);
        let data = generate_dataset(&c).unwrap();
        assert_eq!((data.m(), data.n()), (20, 10));
        let trace = run_single(&c).unwrap();
        assert_eq!(trace.iterations(), 25);
        assert_eq!(trace_table(&trace).len(), 26);
        assert!(generate_dataset(&cfg(1, vec![(1, 1), (2, 2)])).is_err());
    }
}
