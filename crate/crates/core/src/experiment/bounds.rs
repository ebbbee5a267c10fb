//! The standard battery of tail-bound checks, one row per lemma and parameter point.

use ndarray::Array1;

use super::report::Table;
use super::ExperimentConfig;
use crate::concentration::{
    admissible_lambda_grid, check_covariance_opnorm, check_events, check_noise_sum, check_signal_sum,
    check_subexp_mgf, check_tanh_slope, covariance_min_rows, halton_pairs, BoundReport, MgfKind, Verdict,
};
use crate::datagen::unit_vector;
use crate::{Result, RngSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOptions {
    /// Relative radii `|theta - theta*| / |theta*|`.
    pub alphas: Vec<f64>,
    pub ns: Vec<usize>,
    pub trials: usize,
    pub covariance_trials: usize,
    pub tanh_pairs: usize,
    pub mgf_samples: usize,
    pub mgf_points: usize,
    /// Also test the noise-product MGF parameters, which the check refutes.
    pub include_noise_mgf: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            alphas: vec![0.0, 1.0 / 14.0],
            ns: vec![32, 64, 128],
            trials: 100_000,
            covariance_trials: 200,
            tanh_pairs: 10_000,
            mgf_samples: 100_000,
            mgf_points: 11,
            include_noise_mgf: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub lemma: String,
    pub params: String,
    pub report: BoundReport,
    /// Set when a failure rate rises with `n` by more than two standard errors.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundSuite {
    pub rows: Vec<BoundRow>,
}

impl BoundSuite {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.report.verdict() != Verdict::Fail)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new([
            "lemma_id",
            "params",
            "trials",
            "failures",
            "empirical_rate",
            "analytic_bound",
            "stderr",
            "verdict",
            "note",
        ]);
        for r in &self.rows {
            let rep = &r.report;
            t.push(vec![
                r.lemma.clone().into(),
                r.params.clone().into(),
                rep.trials.into(),
                rep.failures.into(),
                rep.empirical_rate.into(),
                rep.analytic_bound.into(),
                rep.stderr.into(),
                rep.verdict().to_string().into(),
                r.note.clone().into(),
            ]);
        }
        t
    }
}

fn row(lemma: &str, params: String, report: BoundReport) -> BoundRow {
    BoundRow { lemma: lemma.to_string(), params, report, note: None }
}

fn basis(d: usize, k: usize) -> Array1<f64> {
    let mut e = Array1::zeros(d);
    e[k] = 1.0;
    e
}

pub fn run_bound_suite(cfg: &ExperimentConfig, opts: &SuiteOptions) -> Result<BoundSuite> {
    let model = &cfg.model;
    let star = model.theta_star();
    let d = model.d();
    let root = cfg.root_spec().child("bounds");
    let stream = |lemma: &str, params: &str| -> RngSpec { root.child(lemma).child(params) };
    let direction = unit_vector(d, &mut root.child("direction").stream());
    let mut rows = Vec::new();

    for &alpha in &opts.alphas {
        let theta = star + &(&direction * (alpha * model.signal_norm()));
        let mut events: Vec<Vec<BoundRow>> = vec![Vec::new(); 3];
        for &n in &opts.ns {
            let params = format!("alpha={alpha};n={n};snr={}", model.snr());
            rows.push(row(
                "signal_sum",
                params.clone(),
                check_signal_sum(theta.view(), star.view(), n, opts.trials, &stream("signal_sum", &params))?,
            ));
            rows.push(row(
                "noise_sum",
                params.clone(),
                check_noise_sum(theta.view(), star.view(), model.sigma(), n, opts.trials, &stream("noise_sum", &params))?,
            ));
            let reports = check_events(theta.view(), model, n, opts.trials, &stream("events", &params))?;
            for (k, rep) in reports.into_iter().enumerate() {
                events[k].push(row(&format!("event_e{}", k + 1), params.clone(), rep));
            }
        }
        for mut series in events {
            flag_inversions(&mut series);
            rows.extend(series);
        }
    }

    let rows_needed = covariance_min_rows(d, cfg.delta);
    let params = format!("N={rows_needed};d={d};delta={}", cfg.delta);
    rows.push(row(
        "covariance_opnorm",
        params.clone(),
        check_covariance_opnorm(rows_needed, d, cfg.delta, opts.covariance_trials, &stream("covariance", &params))?,
    ));

    let pairs = halton_pairs(opts.tanh_pairs, 20.0);
    let mut tanh_failures = 0;
    for p in &pairs {
        tanh_failures += usize::from(!check_tanh_slope(std::slice::from_ref(p))?);
    }
    rows.push(row(
        "tanh_slope",
        format!("pairs={};range=[0,20]", pairs.len()),
        BoundReport::new(pairs.len(), tanh_failures, 0.0),
    ));

    let mut mgf_cases = Vec::new();
    if d >= 2 {
        mgf_cases.push(("mgf_product_uv_orthogonal", MgfKind::ProductUv { u: basis(d, 0), v: basis(d, 1) }, 1.0));
    }
    mgf_cases.push(("mgf_product_uv_square", MgfKind::ProductUv { u: basis(d, 0), v: basis(d, 0) }, 1.0));
    if opts.include_noise_mgf {
        // Beyond |lambda| = 0.5 / b the estimator of this MGF has infinite variance.
        mgf_cases.push(("mgf_product_ueps", MgfKind::ProductUeps { u: basis(d, 0), sigma: model.sigma() }, 0.5));
    }
    for (lemma, kind, shrink) in mgf_cases {
        let grid: Vec<f64> = admissible_lambda_grid(&kind, opts.mgf_points).iter().map(|l| l * shrink).collect();
        let (tau2, b) = kind.parameters();
        let params = format!("tau2={tau2};b={b};lambda_max={}", grid.iter().fold(0.0f64, |a, l| a.max(l.abs())));
        let rep = check_subexp_mgf(&kind, &grid, opts.mgf_samples, &stream(lemma, &params))?;
        rows.push(row(lemma, params, rep.report));
    }
    Ok(BoundSuite { rows })
}

/// Marks rows whose failure rate exceeds the previous `n` by more than two
/// combined standard errors. Flagged rows keep their verdict.
fn flag_inversions(series: &mut [BoundRow]) {
    for k in 1..series.len() {
        let (a, b) = (&series[k - 1].report, &series[k].report);
        let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        if b.empirical_rate > a.empirical_rate + 2.0 * se {
            series[k].note = Some("rate_increases_with_n".to_string());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::RawConfig;

    fn cfg() -> ExperimentConfig {
        RawConfig {
            d: Some(2),
            snr: Some(4.0),
            grid: Some(vec![(1, 1)]),
            seed: Some(11),
            ..RawConfig::default()
        }
        .resolve()
        .unwrap()
    }

    fn small() -> SuiteOptions {
        SuiteOptions {
            ns: vec![32, 64],
            trials: 4000,
            covariance_trials: 2,
            tanh_pairs: 500,
            mgf_samples: 20_000,
            ..SuiteOptions::default()
        }
    }

    #[test]
    fn suite_covers_every_lemma() {
        let suite = run_bound_suite(&cfg(), &small()).unwrap();
        // 2 alphas x 2 n x (signal, noise, 3 events) + covariance + tanh + 2 MGF cases.
        assert_eq!(suite.rows.len(), 24);
        assert!(suite.passed(), "{:#?}", suite.rows.iter().filter(|r| !r.report.passed()).collect::<Vec<_>>());
        assert_eq!(suite.table().len(), 24);
        let lemmas: std::collections::BTreeSet<_> = suite.rows.iter().map(|r| r.lemma.as_str()).collect();
        assert!(lemmas.contains("event_e3") && lemmas.contains("tanh_slope"));
    }

    #[test]
    fn noise_mgf_row_is_optional_and_fails() {
        let opts = SuiteOptions {
            alphas: vec![],
            include_noise_mgf: true,
            mgf_samples: 200_000,
            ..small()
        };
        let suite = run_bound_suite(&cfg(), &opts).unwrap();
        let last = suite.rows.last().unwrap();
        assert_eq!(last.lemma, "mgf_product_ueps");
        assert_eq!(last.report.verdict(), Verdict::Fail);
        assert!(!suite.passed());
    }

    #[test]
    fn inversions_are_flagged_not_failed() {
        let mut series = vec![
            row("e", "n=1".into(), BoundReport::new(10_000, 10, 0.5)),
            row("e", "n=2".into(), BoundReport::new(10_000, 100, 0.5)),
            row("e", "n=3".into(), BoundReport::new(10_000, 99, 0.5)),
        ];
        flag_inversions(&mut series);
        assert_eq!(series[0].note, None);
        assert!(series[1].note.is_some());
        assert_eq!(series[2].note, None);
        assert!(series[1].report.passed());
    }
}
