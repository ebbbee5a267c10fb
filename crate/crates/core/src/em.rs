//! Empirical EM updates and the iteration driver.
//!
//! Both updates have the form
//!
//! ```text
//! theta' = Sigma^-1 (1/N) sum_g Z_g tanh(<Z_g, theta> / sigma^2),   Z_g = sum_{i in g} x_i y_i
//! ```
//!
//! where the groups `g` are the batches for the clustered update and single
//! samples for the i.i.d. update. `Z_g` and the Cholesky factor of the sample
//! covariance `Sigma` do not depend on `theta`, so [`EmProblem`] computes them
//! once and each step costs one pass over the groups.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::linalg::{gram_mean, Cholesky};
use crate::model::{check_len, l2_norm};
use crate::{sign_resolved_error, BatchView, EmTrace, Error, FlatDataset, Result, StopReason};

/// `(1/N) sum_i x_i x_i^T`, exactly symmetric.
pub fn sample_covariance(x_all: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x_all.nrows() == 0 {
        return Err(Error::invalid("x_all", "need at least one row"));
    }
    Ok(gram_mean(x_all))
}

/// Which update rule to iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    /// One tanh weight per batch.
    Clustered,
    /// One tanh weight per sample.
    Iid,
}

/// Precomputed per-group statistics and covariance factor for one dataset.
#[derive(Debug, Clone)]
pub struct EmProblem {
    /// Row `g` is `Z_g`.
    z: Array2<f64>,
    total: usize,
    chol: Cholesky,
    kind: StepKind,
}

impl EmProblem {
    /// Statistics for the clustered update over the observable batches.
    pub fn clustered(batches: &[BatchView<'_>]) -> Result<Self> {
        let first = batches
            .first()
            .ok_or_else(|| Error::invalid("batches", "need at least one batch"))?;
        let d = first.d();
        let mut z = Array2::zeros((batches.len(), d));
        let mut gram = Array2::<f64>::zeros((d, d));
        let mut total = 0;
        for (j, b) in batches.iter().enumerate() {
            check_len(d, b.d())?;
            check_len(b.x.nrows(), b.y.len())?;
            let mut zj = z.row_mut(j);
            for (row, &y) in b.x.rows().into_iter().zip(b.y.iter()) {
                for k in 0..d {
                    zj[k] += row[k] * y;
                    for l in 0..=k {
                        gram[[k, l]] += row[k] * row[l];
                    }
                }
            }
            total += b.n();
        }
        Self::finish(StepKind::Clustered, z, gram, total)
    }

    /// Statistics for the i.i.d. update: every sample is its own group.
    pub fn iid(flat: &FlatDataset) -> Result<Self> {
        let x = flat.x();
        let d = flat.d();
        let mut z = Array2::zeros((flat.len(), d));
        let mut gram = Array2::<f64>::zeros((d, d));
        for (i, (row, &y)) in x.rows().into_iter().zip(flat.y().iter()).enumerate() {
            for k in 0..d {
                z[[i, k]] = row[k] * y;
                for l in 0..=k {
                    gram[[k, l]] += row[k] * row[l];
                }
            }
        }
        Self::finish(StepKind::Iid, z, gram, flat.len())
    }

    fn finish(kind: StepKind, z: Array2<f64>, mut gram: Array2<f64>, total: usize) -> Result<Self> {
        let d = gram.nrows();
        let inv = 1.0 / total as f64;
        for k in 0..d {
            for l in 0..=k {
                let v = gram[[k, l]] * inv;
                gram[[k, l]] = v;
                gram[[l, k]] = v;
            }
        }
        let chol = Cholesky::factor(gram.view())?;
        Ok(Self { z, total, chol, kind })
    }

    pub fn d(&self) -> usize {
        self.z.ncols()
    }

    /// Factor of the sample covariance.
    pub fn covariance_factor(&self) -> &Cholesky {
        &self.chol
    }

    /// Number of groups (batches, or samples for the i.i.d. problem).
    pub fn groups(&self) -> usize {
        self.z.nrows()
    }

    /// Total sample count `N`.
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn kind(&self) -> StepKind {
        self.kind
    }

    /// Row `g` holds `Z_g`.
    pub fn group_statistics(&self) -> &Array2<f64> {
        &self.z
    }

    /// One EM update from `theta`.
    pub fn step(&self, theta: ArrayView1<f64>, sigma: f64) -> Result<Array1<f64>> {
        check_len(self.d(), theta.len())?;
        let inv_var = 1.0 / (sigma * sigma);
        let d = self.d();
        let mut v = Array1::<f64>::zeros(d);
        for zg in self.z.rows() {
            // f64::tanh saturates to +-1 for large arguments.
            let w = (zg.dot(&theta) * inv_var).tanh();
            for k in 0..d {
                v[k] += zg[k] * w;
            }
        }
        v /= self.total as f64;
        self.chol.solve(v.view())
    }
}

/// Clustered update: `Sigma^-1 (1/mn) sum_j sum_i x_i^j y_i^j tanh(sum_i <x_i^j, theta> y_i^j / sigma^2)`.
pub fn clustered_em_step(
    batches: &[BatchView<'_>],
    theta: ArrayView1<f64>,
    sigma: f64,
) -> Result<Array1<f64>> {
    EmProblem::clustered(batches)?.step(theta, sigma)
}

/// I.i.d. update: `Sigma^-1 (1/N) sum_i x_i y_i tanh(<x_i, theta> y_i / sigma^2)`.
pub fn iid_em_step(flat: &FlatDataset, theta: ArrayView1<f64>, sigma: f64) -> Result<Array1<f64>> {
    EmProblem::iid(flat)?.step(theta, sigma)
}

/// When to stop iterating. `max_iters` always applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub max_iters: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_change_tol: Option<f64>,
}

impl StoppingRule {
    pub fn fixed(max_iters: usize) -> Self {
        Self {
            max_iters,
            target_error: None,
            rel_change_tol: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be at least 1"));
        }
        if let Some(v) = self.target_error.filter(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("target_error", format!("must be nonnegative, got {v}")));
        }
        if let Some(v) = self.rel_change_tol.filter(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("rel_change_tol", format!("must be nonnegative, got {v}")));
        }
        Ok(())
    }
}

/// Runs EM from `theta0`, recording every iterate, its sign-resolved error and
/// the time each update took.
pub fn run_em(
    problem: &EmProblem,
    theta0: ArrayView1<f64>,
    sigma: f64,
    stop: &StoppingRule,
    theta_star: ArrayView1<f64>,
) -> Result<EmTrace> {
    stop.validate()?;
    check_len(problem.d(), theta0.len())?;
    if theta0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("theta0", "must be finite"));
    }
    let mut iterates = vec![theta0.to_owned()];
    let mut errors = vec![sign_resolved_error(theta0, theta_star)?];
    let mut wall_times = Vec::new();
    let mut stop_reason = StopReason::MaxIters;
    for t in 1..=stop.max_iters {
        let started = Instant::now();
        let next = problem.step(iterates[t - 1].view(), sigma)?;
        wall_times.push(started.elapsed());
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iteration: t });
        }
        let err = sign_resolved_error(next.view(), theta_star)?;
        let prev = &iterates[t - 1];
        let change = l2_norm((&next - prev).view()) / l2_norm(prev.view()).max(1e-12);
        iterates.push(next);
        errors.push(err);
        if stop.target_error.is_some_and(|target| err <= target) {
            stop_reason = StopReason::TargetError;
            break;
        }
        if stop.rel_change_tol.is_some_and(|tol| change <= tol) {
            stop_reason = StopReason::RelChange;
            break;
        }
    }
    Ok(EmTrace {
        iterates,
        errors,
        wall_times,
        stop_reason,
    })
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;
    use crate::datagen::{decouple, sample_clustered_dataset, sample_init};
    use crate::{ModelConfig, RngSpec};

    #[test]
    fn covariance_of_single_row() {
        let x = array![[1.0, 0.0]];
        assert_eq!(sample_covariance(x.view()).unwrap(), array![[1.0, 0.0], [0.0, 0.0]]);
        let rep = array![[0.5, -2.0], [0.5, -2.0], [0.5, -2.0]];
        let single = array![[0.5, -2.0]];
        assert_eq!(
            sample_covariance(rep.view()).unwrap(),
            sample_covariance(single.view()).unwrap()
        );
        assert!(sample_covariance(Array2::<f64>::zeros((0, 2)).view()).is_err());
    }

    #[test]
    fn covariance_concentrates() {
        let cfg = ModelConfig::along_first_axis(3, 1.0, 1.0).unwrap();
        let ds = sample_clustered_dataset(&cfg, 1000, 100, &RngSpec::new(17)).unwrap();
        let flat = decouple(&ds, &mut RngSpec::new(0).stream());
        let cov = sample_covariance(flat.x().view()).unwrap();
        let dev = crate::linalg::symmetric_op_norm((cov - Array2::<f64>::eye(3)).view());
        assert!(dev < 0.1, "{dev}");
    }

    #[test]
    fn too_few_samples_is_singular() {
        let cfg = ModelConfig::along_first_axis(4, 1.0, 4.0).unwrap();
        let ds = sample_clustered_dataset(&cfg, 1, 3, &RngSpec::new(1)).unwrap();
        let err = EmProblem::clustered(&ds.observations()).unwrap_err();
        assert!(matches!(err, Error::SingularCovariance { .. }), "{err}");
        assert!(err.is_numerical());
    }

    #[test]
    fn step_is_odd_in_theta() {
        let cfg = ModelConfig::new(array![1.0, 0.5], 0.4).unwrap();
        let ds = sample_clustered_dataset(&cfg, 30, 5, &RngSpec::new(2)).unwrap();
        let obs = ds.observations();
        let theta = array![0.3, -0.8];
        let a = clustered_em_step(&obs, theta.view(), 0.4).unwrap();
        let b = clustered_em_step(&obs, (-&theta).view(), 0.4).unwrap();
        assert_eq!(a, -b);
        let flat = decouple(&ds, &mut RngSpec::new(3).stream());
        let a = iid_em_step(&flat, theta.view(), 0.4).unwrap();
        let b = iid_em_step(&flat, (-&theta).view(), 0.4).unwrap();
        assert_eq!(a, -b);
    }

    #[test]
    fn saturated_step_is_sign_corrected_least_squares() {
        let cfg = ModelConfig::new(array![1.0, -2.0, 0.5], 1e-6).unwrap();
        let ds = sample_clustered_dataset(&cfg, 40, 10, &RngSpec::new(4)).unwrap();
        let step = clustered_em_step(&ds.observations(), cfg.theta_star().view(), 1e-6).unwrap();
        // Independent route: nalgebra SVD least squares on (x, xi * y).
        let rows = ds.m() * ds.n();
        let mut a = nalgebra::DMatrix::zeros(rows, 3);
        let mut rhs = nalgebra::DVector::zeros(rows);
        for (j, b) in ds.batches().iter().enumerate() {
            for i in 0..ds.n() {
                for k in 0..3 {
                    a[(j * ds.n() + i, k)] = b.x()[[i, k]];
                }
                rhs[j * ds.n() + i] = b.xi().value() * b.y()[i];
            }
        }
        let ls = a.svd(true, true).solve(&rhs, 1e-14).expect("full rank");
        for k in 0..3 {
            assert!((step[k] - ls[k]).abs() < 1e-12, "{} vs {}", step[k], ls[k]);
        }
    }

    #[test]
    fn single_sample_batches_reduce_to_iid_step() {
        let cfg = ModelConfig::new(array![0.7, 0.2], 0.5).unwrap();
        let ds = sample_clustered_dataset(&cfg, 25, 4, &RngSpec::new(6)).unwrap();
        let flat = decouple(&ds, &mut RngSpec::new(6).stream());
        let theta = array![0.4, 0.1];
        let iid = iid_em_step(&flat, theta.view(), 0.5).unwrap();
        let clustered = clustered_em_step(&flat.as_singleton_batches(), theta.view(), 0.5).unwrap();
        for k in 0..2 {
            assert!((iid[k] - clustered[k]).abs() <= 1e-14 * iid[k].abs().max(1.0));
        }
    }

    #[test]
    fn run_em_bookkeeping() {
        let cfg = ModelConfig::new(array![1.0, 0.0], 0.25).unwrap();
        let ds = sample_clustered_dataset(&cfg, 50, 20, &RngSpec::new(8)).unwrap();
        let problem = EmProblem::clustered(&ds.observations()).unwrap();
        let theta0 = array![1.05, 0.02];
        let star = cfg.theta_star().view();
        let trace = run_em(&problem, theta0.view(), 0.25, &StoppingRule::fixed(1), star).unwrap();
        assert_eq!(trace.iterates.len(), 2);
        assert_eq!(trace.errors.len(), 2);
        assert_eq!(trace.wall_times.len(), 1);
        assert_eq!(trace.stop_reason, StopReason::MaxIters);
        for (t, e) in trace.iterates.iter().zip(&trace.errors) {
            assert_eq!(*e, sign_resolved_error(t.view(), star).unwrap());
        }
        assert!(run_em(&problem, theta0.view(), 0.25, &StoppingRule::fixed(0), star).is_err());
        let nan = array![f64::NAN, 0.0];
        assert!(run_em(&problem, nan.view(), 0.25, &StoppingRule::fixed(3), star).is_err());
    }

    #[test]
    fn optional_stops_fire() {
        let cfg = ModelConfig::new(array![1.0, 0.0], 0.25).unwrap();
        let ds = sample_clustered_dataset(&cfg, 50, 20, &RngSpec::new(8)).unwrap();
        let problem = EmProblem::clustered(&ds.observations()).unwrap();
        let star = cfg.theta_star().view();
        let theta0 = array![1.05, 0.02];
        let rule = StoppingRule { max_iters: 50, target_error: Some(1.0), rel_change_tol: None };
        let t = run_em(&problem, theta0.view(), 0.25, &rule, star).unwrap();
        assert_eq!((t.iterations(), t.stop_reason), (1, StopReason::TargetError));
        let rule = StoppingRule { max_iters: 50, target_error: None, rel_change_tol: Some(1e-10) };
        let t = run_em(&problem, theta0.view(), 0.25, &rule, star).unwrap();
        assert_eq!(t.stop_reason, StopReason::RelChange);
        assert!(t.iterations() < 50);
    }

    #[test]
    fn divergent_iterate_is_reported() {
        // sigma so small that 1/sigma^2 overflows: tanh(inf * 0) is NaN.
        let cfg = ModelConfig::new(array![1.0], 0.5).unwrap();
        let ds = sample_clustered_dataset(&cfg, 10, 5, &RngSpec::new(1)).unwrap();
        let problem = EmProblem::clustered(&ds.observations()).unwrap();
        let theta0 = array![0.0];
        let err = run_em(&problem, theta0.view(), 1e-200, &StoppingRule::fixed(3), cfg.theta_star().view())
            .unwrap_err();
        assert!(matches!(err, Error::Divergence { iteration: 1 }), "{err}");
    }

    #[test]
    fn clustered_em_converges_in_one_step() {
        let cfg = ModelConfig::along_first_axis(4, 1.0, 4.0).unwrap();
        let spec = RngSpec::new(2024);
        let ds = sample_clustered_dataset(&cfg, 200, 100, &spec.child("data")).unwrap();
        let theta0 = sample_init(&cfg, 1.0 / 14.0, &mut spec.child("init").stream()).unwrap();
        let problem = EmProblem::clustered(&ds.observations()).unwrap();
        let trace = run_em(
            &problem,
            theta0.view(),
            cfg.sigma(),
            &StoppingRule::fixed(25),
            cfg.theta_star().view(),
        )
        .unwrap();
        assert!(trace.errors[1] < 2.0 * trace.plateau(), "{:?}", trace.errors);
        let mut csv = Vec::new();
        trace.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("iter,theta_0,theta_1,theta_2,theta_3,error,wall_ms,stop_reason\n"));
        assert!(text.trim_end().ends_with(",max_iters"));
        assert_eq!(text.lines().count(), 27);
    }
}
