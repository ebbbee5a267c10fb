//! Uniform deviation of the empirical EM operator from the population one
//! over the shell `eps <= |theta - theta*| <= r`.
//!
//! Shell points are drawn once (radius log-uniform in `[eps, r]`, direction
//! uniform) and shared by every grid point and replication. The population
//! operator is estimated once per distinct `n`, together with a second,
//! independent estimate. Their largest discrepancy divided by `sqrt 2` is the
//! Monte-Carlo noise floor, subtracted from the median gap before the
//! corrected slope is fitted.

use std::collections::BTreeMap;

use ndarray::Array1;
use rand::Rng;

use super::report::Table;
use super::scaling::{long_table, push_long, Method};
use super::{replicate, ExperimentConfig, GridPoint};
use crate::datagen::{sample_clustered_dataset, unit_vector};
use crate::em::EmProblem;
use crate::model::l2_norm;
use crate::population::{population_em_steps, McDesign, PopulationEstimate};
use crate::stats::{log_log_slope, median};
use crate::{Result, RngSpec};

/// Draws `count` points with `|theta - theta*|` log-uniform in `[eps, r]`.
pub fn sample_shell(theta_star: &Array1<f64>, eps: f64, r: f64, count: usize, spec: &RngSpec) -> Vec<Array1<f64>> {
    let mut rng = spec.stream();
    let log_ratio = (r / eps).ln();
    (0..count)
        .map(|_| {
            let u: f64 = rng.random();
            let radius = eps * (u * log_ratio).exp();
            theta_star + &(unit_vector(theta_star.len(), &mut rng) * radius)
        })
        .collect()
}

/// Monte-Carlo calibration of the population operator at one batch size.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseFloor {
    pub n: usize,
    /// `max_theta |M_a(theta) - M_b(theta)| / sqrt 2` for two independent estimates.
    pub floor: f64,
    /// Shell points where the two estimates differ by more than four combined standard errors.
    pub self_gap_violations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub m: usize,
    pub n: usize,
    pub mn: usize,
    pub rep: usize,
    /// `max_theta |M_m(theta) - M(theta)|` over the shell points.
    pub max_gap: Option<f64>,
    pub epsilon_ell: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapSummary {
    pub point: GridPoint,
    pub median_gap: f64,
    pub noise_floor: f64,
    /// `median_gap - noise_floor`, or `NaN` when not positive.
    pub corrected_gap: f64,
    pub epsilon_ell: f64,
    /// `median_gap / epsilon_ell`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapResult {
    pub thetas: Vec<Array1<f64>>,
    pub floors: Vec<NoiseFloor>,
    pub rows: Vec<GapRow>,
    pub summary: Vec<GapSummary>,
    pub raw_slope: f64,
    pub corrected_slope: f64,
}

fn calibrate(
    cfg: &ExperimentConfig,
    n: usize,
    thetas: &[Array1<f64>],
) -> Result<(Vec<PopulationEstimate>, NoiseFloor)> {
    let root = cfg.root_spec();
    let design = McDesign::new(cfg.model.clone(), n, cfg.num_mc, root.child(format!("gap/population/n{n}")))?;
    let main = population_em_steps(thetas, &design)?;
    let check = population_em_steps(thetas, &design.with_spec(root.child(format!("gap/population-check/n{n}"))))?;
    let mut floor = 0.0f64;
    let mut violations = 0;
    for (a, b) in main.iter().zip(&check) {
        let diff = l2_norm((&a.value - &b.value).view());
        let combined = (a.stderr.dot(&a.stderr) + b.stderr.dot(&b.stderr)).sqrt();
        floor = floor.max(diff / 2f64.sqrt());
        violations += usize::from(diff > 4.0 * combined);
    }
    Ok((main, NoiseFloor { n, floor, self_gap_violations: violations }))
}

pub fn run_generalization_gap(cfg: &ExperimentConfig, shell_eps: f64, num_thetas: usize) -> Result<GapResult> {
    cfg.require_distinct_mn(2)?;
    let r = cfg.init_radius_frac * cfg.model.signal_norm();
    if !(shell_eps > 0.0 && shell_eps < r) {
        return Err(crate::Error::invalid("shell_eps", format!("must lie in (0, {r}), got {shell_eps}")));
    }
    if num_thetas == 0 {
        return Err(crate::Error::invalid("num_thetas", "must be at least 1"));
    }
    let thetas = sample_shell(cfg.model.theta_star(), shell_eps, r, num_thetas, &cfg.root_spec().child("gap/shell"));
    let mut population = BTreeMap::new();
    let mut floors = Vec::new();
    for p in &cfg.grid {
        if !population.contains_key(&p.n) {
            let (est, floor) = calibrate(cfg, p.n, &thetas)?;
            population.insert(p.n, est);
            floors.push(floor);
        }
    }
    let sigma = cfg.model.sigma();
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &p in &cfg.grid {
        let pop = &population[&p.n];
        let outcomes = replicate(cfg, p, |spec| {
            let data = sample_clustered_dataset(&cfg.model, p.m, p.n, &spec.child("data"))?;
            let problem = EmProblem::clustered(&data.observations())?;
            let mut worst = 0.0f64;
            for (theta, m) in thetas.iter().zip(pop) {
                let step = problem.step(theta.view(), sigma)?;
                worst = worst.max(l2_norm((&step - &m.value).view()));
            }
            Ok(worst)
        })?;
        let eps_ell = cfg.epsilon_ell(p);
        let mut gaps = Vec::new();
        for (rep, o) in outcomes.into_iter().enumerate() {
            let (max_gap, failure) = match o {
                Ok(g) => {
                    gaps.push(g);
                    (Some(g), None)
                }
                Err(msg) => (None, Some(msg)),
            };
            rows.push(GapRow { m: p.m, n: p.n, mn: p.mn(), rep, max_gap, epsilon_ell: eps_ell, failure });
        }
        let median_gap = median(&gaps);
        let noise_floor = floors.iter().find(|f| f.n == p.n).expect("calibrated above").floor;
        let corrected = median_gap - noise_floor;
        summary.push(GapSummary {
            point: p,
            median_gap,
            noise_floor,
            corrected_gap: if corrected > 0.0 { corrected } else { f64::NAN },
            epsilon_ell: eps_ell,
            ratio: median_gap / eps_ell,
        });
    }
    let slope = |pick: fn(&GapSummary) -> f64| {
        let (x, y): (Vec<f64>, Vec<f64>) = summary
            .iter()
            .filter(|s| pick(s) > 0.0)
            .map(|s| (s.point.mn() as f64, pick(s)))
            .unzip();
        if x.len() < 2 { f64::NAN } else { log_log_slope(&x, &y) }
    };
    let raw_slope = slope(|s| s.median_gap);
    let corrected_slope = slope(|s| s.corrected_gap);
    Ok(GapResult { thetas, floors, rows, summary, raw_slope, corrected_slope })
}

impl GapResult {
    pub fn table(&self) -> Table {
        let mut t = Table::new(["m", "n", "mn", "rep", "max_gap", "epsilon_ell", "failure"]);
        for r in &self.rows {
            t.push(vec![
                r.m.into(),
                r.n.into(),
                r.mn.into(),
                r.rep.into(),
                r.max_gap.into(),
                r.epsilon_ell.into(),
                r.failure.clone().into(),
            ]);
        }
        t
    }

    pub fn summary_table(&self) -> Table {
        let mut t = long_table();
        for s in &self.summary {
            let p = s.point;
            push_long(&mut t, Method::Clustered, p, "median_max_gap", s.median_gap);
            push_long(&mut t, Method::Clustered, p, "noise_floor", s.noise_floor);
            push_long(&mut t, Method::Clustered, p, "corrected_gap", s.corrected_gap);
            push_long(&mut t, Method::Clustered, p, "epsilon_ell", s.epsilon_ell);
            push_long(&mut t, Method::Clustered, p, "gap_over_epsilon_ell", s.ratio);
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::RawConfig;

    #[test]
    fn shell_points_respect_radii() {
        let star = Array1::from(vec![1.0, 0.0, 0.0]);
        let pts = sample_shell(&star, 0.01, 0.07, 500, &RngSpec::new(2));
        let radii: Vec<f64> = pts.iter().map(|t| l2_norm((t - &star).view())).collect();
        assert!(radii.iter().all(|&r| (0.01 - 1e-15..=0.07 + 1e-15).contains(&r)));
        let below_mid = radii.iter().filter(|&&r| r < (0.01f64 * 0.07).sqrt()).count();
        assert!((200..300).contains(&below_mid), "{below_mid}");
    }

    #[test]
    fn small_run_is_consistent() {
        let cfg = RawConfig {
            d: Some(2),
            snr: Some(4.0),
            grid: Some(vec![(10, 20), (100, 20)]),
            seed: Some(5),
            reps: Some(4),
            num_mc: Some(2000),
            ..RawConfig::default()
        }
        .resolve()
        .unwrap();
        let res = run_generalization_gap(&cfg, 0.01, 8).unwrap();
        assert_eq!(res.thetas.len(), 8);
        assert_eq!(res.floors.len(), 1);
        assert_eq!(res.floors[0].self_gap_violations, 0);
        assert_eq!(res.rows.len(), 8);
        assert!(res.summary[1].median_gap < res.summary[0].median_gap);
        assert!(res.raw_slope < 0.0);
        assert!(run_generalization_gap(&cfg, 0.2, 8).is_err());
        assert_eq!(run_generalization_gap(&cfg, 0.01, 8).unwrap(), res);
    }
}
