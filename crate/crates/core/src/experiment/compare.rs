//! Iterations needed by clustered EM and by EM on the decoupled data.
//!
//! Each replication draws one dataset and one initialization. Clustered EM
//! runs on the dataset, i.i.d. EM on its decoupled transform, both from the
//! same start. The plateau is the smallest error a trace attains within the
//! iteration budget; the count recorded is the first iteration within twice
//! the plateau.

use sha2::{Digest, Sha256};

use super::report::Table;
use super::scaling::{long_table, push_long, Method};
use super::{replicate, ExperimentConfig, GridPoint};
use crate::datagen::{decouple, sample_clustered_dataset, sample_init, write_dataset};
use crate::em::{run_em, EmProblem};
use crate::stats::median;
use crate::{ClusteredDataset, Result};

/// Plateau multiple that counts as converged.
pub const PLATEAU_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub m: usize,
    pub n: usize,
    pub mn: usize,
    pub rep: usize,
    pub method: Method,
    pub plateau: Option<f64>,
    pub iters_to_plateau: Option<usize>,
    /// Shared by both methods of a replication.
    pub dataset_hash: Option<String>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSummary {
    pub point: GridPoint,
    pub method: Method,
    pub median_iters: f64,
    pub median_plateau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonResult {
    pub rows: Vec<ComparisonRow>,
    pub summary: Vec<ComparisonSummary>,
}

/// First 16 hex digits of the SHA-256 of the dataset's file encoding.
pub fn dataset_hash(data: &ClusteredDataset) -> Result<String> {
    let mut buf = Vec::new();
    write_dataset(data, &mut buf)?;
    let digest = Sha256::digest(&buf);
    Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
}

struct Paired {
    hash: String,
    clustered: (f64, usize),
    decoupled: (f64, usize),
}

pub fn run_iteration_comparison(cfg: &ExperimentConfig) -> Result<ComparisonResult> {
    cfg.require_distinct_mn(3)?;
    let sigma = cfg.model.sigma();
    let star = cfg.model.theta_star().view();
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &p in &cfg.grid {
        let outcomes = replicate(cfg, p, |spec| {
            let data = sample_clustered_dataset(&cfg.model, p.m, p.n, &spec.child("data"))?;
            let theta0 = sample_init(&cfg.model, cfg.init_radius_frac, &mut spec.child("init").stream())?;
            let flat = decouple(&data, &mut spec.child("decouple").stream());
            let clustered = run_em(&EmProblem::clustered(&data.observations())?, theta0.view(), sigma, &cfg.em, star)?;
            let decoupled = run_em(&EmProblem::iid(&flat)?, theta0.view(), sigma, &cfg.em, star)?;
            let summarize = |t: &crate::EmTrace| (t.plateau(), t.iterations_to_within(PLATEAU_FACTOR));
            Ok(Paired {
                hash: dataset_hash(&data)?,
                clustered: summarize(&clustered),
                decoupled: summarize(&decoupled),
            })
        })?;
        for method in [Method::Clustered, Method::Decoupled] {
            let mut iters = Vec::new();
            let mut plateaus = Vec::new();
            for (rep, o) in outcomes.iter().enumerate() {
                let mut row = ComparisonRow {
                    m: p.m,
                    n: p.n,
                    mn: p.mn(),
                    rep,
                    method,
                    plateau: None,
                    iters_to_plateau: None,
                    dataset_hash: None,
                    failure: None,
                };
                match o {
                    Ok(paired) => {
                        let (plateau, it) = match method {
                            Method::Clustered => paired.clustered,
                            Method::Decoupled => paired.decoupled,
                        };
                        iters.push(it as f64);
                        plateaus.push(plateau);
                        row.plateau = Some(plateau);
                        row.iters_to_plateau = Some(it);
                        row.dataset_hash = Some(paired.hash.clone());
                    }
                    Err(msg) => row.failure = Some(msg.clone()),
                }
                rows.push(row);
            }
            summary.push(ComparisonSummary {
                point: p,
                method,
                median_iters: median(&iters),
                median_plateau: median(&plateaus),
            });
        }
    }
    Ok(ComparisonResult { rows, summary })
}

impl ComparisonResult {
    pub fn median_iters(&self, method: Method) -> Vec<(GridPoint, f64)> {
        self.summary
            .iter()
            .filter(|s| s.method == method)
            .map(|s| (s.point, s.median_iters))
            .collect()
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new([
            "m",
            "n",
            "mn",
            "rep",
            "method",
            "plateau",
            "iters_to_plateau",
            "dataset_hash",
            "failure",
        ]);
        for r in &self.rows {
            t.push(vec![
                r.m.into(),
                r.n.into(),
                r.mn.into(),
                r.rep.into(),
                r.method.to_string().into(),
                r.plateau.into(),
                r.iters_to_plateau.into(),
                r.dataset_hash.clone().into(),
                r.failure.clone().into(),
            ]);
        }
        t
    }

    pub fn summary_table(&self) -> Table {
        let mut t = long_table();
        for s in &self.summary {
            push_long(&mut t, s.method, s.point, "median_iters_to_plateau", s.median_iters);
            push_long(&mut t, s.method, s.point, "median_plateau", s.median_plateau);
        }
        t
    }
}
