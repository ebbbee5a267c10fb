//! Empirical checks of the tail bounds behind the convergence analysis.
//!
//! Each check simulates the event a lemma bounds, counts how often it fails,
//! and compares the frequency with the analytic bound. A report passes when
//! `empirical_rate <= analytic_bound + 4 * stderr`, with
//! `stderr = sqrt(rate (1 - rate) / trials)`. Bounds of at least one hold
//! trivially and are reported as vacuous passes.
//!
//! Trials run in chunks of [`TRIAL_CHUNK`], chunk `c` drawing from the stream
//! `chunk/{c}`; per-chunk tallies are summed in chunk order.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::symmetric_op_norm;
use crate::model::{check_len, l2_norm};
use crate::{Error, ModelConfig, Result, RngSpec, Stream};

pub const TRIAL_CHUNK: usize = 4096;

/// Multiples of the binomial standard error tolerated above the bound.
pub const STDERR_MULTIPLE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Vacuous,
    Fail,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Vacuous => "vacuous",
            Verdict::Fail => "fail",
        })
    }
}

/// Observed failure frequency of an event against its analytic bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub trials: usize,
    pub failures: usize,
    pub empirical_rate: f64,
    pub analytic_bound: f64,
    pub stderr: f64,
    /// `analytic_bound + 4 stderr - empirical_rate`.
    pub slack: f64,
}

impl BoundReport {
    pub fn new(trials: usize, failures: usize, analytic_bound: f64) -> Self {
        let rate = failures as f64 / trials as f64;
        let stderr = (rate * (1.0 - rate) / trials as f64).sqrt();
        Self::with_stderr(trials, failures, analytic_bound, stderr)
    }

    fn with_stderr(trials: usize, failures: usize, analytic_bound: f64, stderr: f64) -> Self {
        let rate = failures as f64 / trials as f64;
        Self {
            trials,
            failures,
            empirical_rate: rate,
            analytic_bound,
            stderr,
            slack: analytic_bound + STDERR_MULTIPLE * stderr - rate,
        }
    }

    pub fn passed(&self) -> bool {
        self.slack >= 0.0
    }

    pub fn verdict(&self) -> Verdict {
        if !self.passed() {
            Verdict::Fail
        } else if self.analytic_bound >= 1.0 {
            Verdict::Vacuous
        } else {
            Verdict::Pass
        }
    }
}

/// Runs `trials` independent trials and counts those where `fails` is true.
fn count_failures<F>(trials: usize, spec: &RngSpec, fails: F) -> usize
where
    F: Fn(&mut Stream) -> bool + Sync,
{
    let chunks = trials.div_ceil(TRIAL_CHUNK);
    let tallies: Vec<usize> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = TRIAL_CHUNK.min(trials - c * TRIAL_CHUNK);
            let mut rng = spec.child(format!("chunk/{c}")).stream();
            (0..count).filter(|_| fails(&mut rng)).count()
        })
        .collect();
    tallies.iter().sum()
}

fn require_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    Ok(())
}

fn gaussian_vec(rng: &mut Stream, out: &mut [f64]) {
    for v in out {
        *v = rng.sample(StandardNormal);
    }
}

/// Relative radius `alpha = |theta - theta*| / |theta*|`, required to be below one.
pub fn relative_radius(theta: ArrayView1<f64>, theta_star: ArrayView1<f64>) -> Result<f64> {
    check_len(theta_star.len(), theta.len())?;
    let alpha = l2_norm((&theta - &theta_star).view()) / l2_norm(theta_star);
    if !(alpha < 1.0) {
        return Err(Error::invalid("theta", format!("need |theta - theta*| < |theta*|, alpha = {alpha}")));
    }
    Ok(alpha)
}

/// Checks `(tanh x2 - tanh x1) / (x2 - x1) <= max(sech^2 x1, sech^2 x2)` on every pair.
pub fn check_tanh_slope(grid: &[(f64, f64)]) -> Result<bool> {
    if grid.is_empty() {
        return Err(Error::invalid("grid", "empty"));
    }
    let mut all = true;
    for &(x1, x2) in grid {
        if !(x1 >= 0.0 && x2 >= 0.0) {
            return Err(Error::invalid("grid", format!("negative point ({x1}, {x2})")));
        }
        if x1 == x2 {
            return Err(Error::invalid("grid", format!("degenerate pair ({x1}, {x2})")));
        }
        let slope = (x2.tanh() - x1.tanh()) / (x2 - x1);
        let sech2 = |x: f64| 1.0 - x.tanh().powi(2);
        all &= slope <= sech2(x1).max(sech2(x2)) + 1e-12;
    }
    Ok(all)
}

/// `count` pairs in `[0, upper]^2` from the 2-D Halton sequence (bases 2 and 3).
pub fn halton_pairs(count: usize, upper: f64) -> Vec<(f64, f64)> {
    fn radical_inverse(mut i: usize, base: usize) -> f64 {
        let mut f = 1.0;
        let mut r = 0.0;
        while i > 0 {
            f /= base as f64;
            r += f * (i % base) as f64;
            i /= base;
        }
        r
    }
    (1..=count)
        .map(|i| (upper * radical_inverse(i, 2), upper * radical_inverse(i, 3)))
        .collect()
}

/// Bound on `P(|sum_i <X_i, theta><X_i, theta*> - n <theta, theta*>| > n <theta, theta*> / 2)`.
pub fn signal_sum_bound(n: usize, alpha: f64) -> f64 {
    let c = (1.0 - alpha) / (1.0 + alpha);
    2.0 * (-(n as f64) / 32.0 * c * c).exp()
}

/// Bound on `P(|sum_i <X_i, theta> eps_i| > n <theta, theta*> / 4)`.
pub fn noise_sum_bound(n: usize, alpha: f64, snr: f64) -> f64 {
    let c = (1.0 - alpha) / (1.0 + alpha);
    let rate = (c * c * snr * snr / 16.0).min(c * snr / 8.0);
    2.0 * (-(n as f64) * rate).exp()
}

fn positive_alignment(theta: ArrayView1<f64>, theta_star: ArrayView1<f64>) -> Result<f64> {
    let inner = theta.dot(&theta_star);
    if !(inner > 0.0) {
        return Err(Error::invalid("theta", "need <theta, theta*> > 0"));
    }
    Ok(inner)
}

/// Frequency of `|sum_i <X_i, theta><X_i, theta*> - n <theta, theta*>| > (n/2) <theta, theta*>`.
pub fn check_signal_sum(
    theta: ArrayView1<f64>,
    theta_star: ArrayView1<f64>,
    n: usize,
    trials: usize,
    spec: &RngSpec,
) -> Result<BoundReport> {
    require_trials(trials)?;
    let alpha = relative_radius(theta, theta_star)?;
    let inner = positive_alignment(theta, theta_star)?;
    let d = theta.len();
    let nf = n as f64;
    let failures = count_failures(trials, spec, |rng| {
        let mut x = vec![0.0; d];
        let mut sum = 0.0;
        for _ in 0..n {
            gaussian_vec(rng, &mut x);
            let xv = ArrayView1::from(&x[..]);
            sum += xv.dot(&theta) * xv.dot(&theta_star);
        }
        (sum - nf * inner).abs() > 0.5 * nf * inner
    });
    Ok(BoundReport::new(trials, failures, signal_sum_bound(n, alpha)))
}

/// Frequency of `|sum_i <X_i, theta> eps_i| > (n/4) <theta, theta*>` with `eps ~ N(0, sigma^2)`.
pub fn check_noise_sum(
    theta: ArrayView1<f64>,
    theta_star: ArrayView1<f64>,
    sigma: f64,
    n: usize,
    trials: usize,
    spec: &RngSpec,
) -> Result<BoundReport> {
    require_trials(trials)?;
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma", "must be positive"));
    }
    let alpha = relative_radius(theta, theta_star)?;
    let inner = positive_alignment(theta, theta_star)?;
    let snr = l2_norm(theta_star) / sigma;
    let d = theta.len();
    let threshold = n as f64 / 4.0 * inner;
    let failures = count_failures(trials, spec, |rng| {
        let mut x = vec![0.0; d];
        let mut sum = 0.0;
        for _ in 0..n {
            gaussian_vec(rng, &mut x);
            let eps: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
            sum += ArrayView1::from(&x[..]).dot(&theta) * eps;
        }
        sum.abs() > threshold
    });
    Ok(BoundReport::new(trials, failures, noise_sum_bound(n, alpha, snr)))
}

/// Complement bounds for the three high-probability events on `Z = sum_i X_i Y_i`.
pub fn event_bounds(n: usize, alpha: f64, snr: f64) -> [f64; 3] {
    let nf = n as f64;
    let two_exp = |rate: f64| 2.0 * (-nf * rate).exp();
    let c = (1.0 - alpha) / (1.0 + alpha);
    [
        two_exp(c * c / 32.0) + two_exp((c * c * snr * snr / 16.0).min(c * snr / 8.0)),
        two_exp(1.0 / 32.0) + two_exp((snr * snr / 16.0).min(snr / 8.0)),
        two_exp(1.0 / 8.0) + two_exp((snr * snr).min(snr / 2.0)),
    ]
}

/// Failure frequencies of
///
/// * E1: `<Z, theta> >= (n/4)(1 - alpha) |theta*|^2`
/// * E2: `<Z, theta*> >= (n/4) |theta*|^2`
/// * E3: `|<Z, theta> - <Z, theta*>| <= 3 n |theta*| |theta - theta*|`
///
/// with `Y_i = <X_i, theta*> + eps_i`. One simulated `Z` per trial drives all three.
pub fn check_events(
    theta: ArrayView1<f64>,
    config: &ModelConfig,
    n: usize,
    trials: usize,
    spec: &RngSpec,
) -> Result<[BoundReport; 3]> {
    require_trials(trials)?;
    let star = config.theta_star().view();
    let alpha = relative_radius(theta, star)?;
    let d = config.d();
    let nf = n as f64;
    let norm2 = star.dot(&star);
    let dist = l2_norm((&theta - &star).view());
    let sigma = config.sigma();
    let thresholds = [
        nf / 4.0 * (1.0 - alpha) * norm2,
        nf / 4.0 * norm2,
        3.0 * nf * norm2.sqrt() * dist,
    ];
    let chunks = trials.div_ceil(TRIAL_CHUNK);
    let tallies: Vec<[usize; 3]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = TRIAL_CHUNK.min(trials - c * TRIAL_CHUNK);
            let mut rng = spec.child(format!("chunk/{c}")).stream();
            let mut x = vec![0.0; d];
            let mut z = Array1::<f64>::zeros(d);
            let mut fails = [0usize; 3];
            for _ in 0..count {
                z.fill(0.0);
                for _ in 0..n {
                    gaussian_vec(&mut rng, &mut x);
                    let xv = ArrayView1::from(&x[..]);
                    let y = xv.dot(&star) + sigma * rng.sample::<f64, _>(StandardNormal);
                    z.scaled_add(y, &xv);
                }
                let (zt, zs) = (z.dot(&theta), z.dot(&star));
                fails[0] += usize::from(zt < thresholds[0]);
                fails[1] += usize::from(zs < thresholds[1]);
                fails[2] += usize::from((zt - zs).abs() > thresholds[2]);
            }
            fails
        })
        .collect();
    let mut totals = [0usize; 3];
    for t in &tallies {
        for k in 0..3 {
            totals[k] += t[k];
        }
    }
    let bounds = event_bounds(n, alpha, config.snr());
    Ok([0, 1, 2].map(|k| BoundReport::new(trials, totals[k], bounds[k])))
}

/// `96 sqrt((d + ln(2/delta)) / N)`.
pub fn covariance_deviation_bound(num_rows: usize, d: usize, delta: f64) -> f64 {
    96.0 * ((d as f64 + (2.0 / delta).ln()) / num_rows as f64).sqrt()
}

/// Smallest `N` for which the covariance concentration bound is claimed.
pub fn covariance_min_rows(d: usize, delta: f64) -> usize {
    (192.0f64.powi(2) * (d as f64 + (2.0 / delta).ln())).ceil() as usize
}

/// `|Sigma_N - I|_op` for the rows of `x`.
pub fn covariance_deviation(x: ArrayView2<f64>) -> f64 {
    let d = x.ncols();
    let cov = crate::linalg::gram_mean(x);
    symmetric_op_norm((cov - Array2::<f64>::eye(d)).view())
}

/// Frequency of `|Sigma_N - I_d|_op > 96 sqrt((d + ln(2/delta)) / N)` against `delta`.
pub fn check_covariance_opnorm(
    num_rows: usize,
    d: usize,
    delta: f64,
    trials: usize,
    spec: &RngSpec,
) -> Result<BoundReport> {
    require_trials(trials)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", format!("must lie in (0, 1), got {delta}")));
    }
    if d == 0 {
        return Err(Error::invalid("d", "must be at least 1"));
    }
    let min_rows = covariance_min_rows(d, delta);
    if num_rows < min_rows {
        return Err(Error::invalid("N", format!("need at least {min_rows} rows, got {num_rows}")));
    }
    let threshold = covariance_deviation_bound(num_rows, d, delta);
    let failures = count_failures(trials, spec, |rng| {
        let mut x = vec![0.0; d];
        let mut gram = Array2::<f64>::zeros((d, d));
        for _ in 0..num_rows {
            gaussian_vec(rng, &mut x);
            for i in 0..d {
                for j in 0..=i {
                    gram[[i, j]] += x[i] * x[j];
                }
            }
        }
        let inv = 1.0 / num_rows as f64;
        for i in 0..d {
            for j in 0..=i {
                let v = gram[[i, j]] * inv - if i == j { 1.0 } else { 0.0 };
                gram[[i, j]] = v;
                gram[[j, i]] = v;
            }
        }
        symmetric_op_norm(gram.view()) > threshold
    });
    Ok(BoundReport::new(trials, failures, delta))
}

/// Which product's moment generating function to test.
#[derive(Debug, Clone, PartialEq)]
pub enum MgfKind {
    /// `<X, u><X, v>`, claimed `SubE(4 |u|^2 |v|^2, 4 |u| |v|)`.
    ProductUv { u: Array1<f64>, v: Array1<f64> },
    /// `<X, u> eps` with `eps ~ N(0, sigma^2)`, claimed `SubE(|u|^2 sigma^2 / 2, |u| sigma)`.
    ProductUeps { u: Array1<f64>, sigma: f64 },
}

impl MgfKind {
    pub fn label(&self) -> &'static str {
        match self {
            MgfKind::ProductUv { .. } => "product_uv",
            MgfKind::ProductUeps { .. } => "product_ueps",
        }
    }

    /// Claimed sub-exponential parameters `(tau^2, b)`.
    pub fn parameters(&self) -> (f64, f64) {
        match self {
            MgfKind::ProductUv { u, v } => {
                let (a, b) = (l2_norm(u.view()), l2_norm(v.view()));
                (4.0 * a * a * b * b, 4.0 * a * b)
            }
            MgfKind::ProductUeps { u, sigma } => {
                let a = l2_norm(u.view());
                (a * a * sigma * sigma / 2.0, a * sigma)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            MgfKind::ProductUv { u, v } => u.dot(v),
            MgfKind::ProductUeps { .. } => 0.0,
        }
    }

    fn sample(&self, rng: &mut Stream, x: &mut [f64]) -> f64 {
        gaussian_vec(rng, x);
        let xv = ArrayView1::from(&x[..]);
        match self {
            MgfKind::ProductUv { u, v } => xv.dot(u) * xv.dot(v),
            MgfKind::ProductUeps { u, sigma } => {
                xv.dot(u) * sigma * rng.sample::<f64, _>(StandardNormal)
            }
        }
    }

    fn dim(&self) -> usize {
        match self {
            MgfKind::ProductUv { u, .. } | MgfKind::ProductUeps { u, .. } => u.len(),
        }
    }
}

/// Largest admissible `|lambda|` as a fraction of `1/b`.
pub const MGF_LAMBDA_FRACTION: f64 = 0.9;

/// Multiples of the relative Monte-Carlo error tolerated above the MGF bound.
pub const MGF_STDERR_MULTIPLE: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgfPoint {
    pub lambda: f64,
    /// Monte-Carlo `E[exp(lambda (S - mu))]`.
    pub empirical: f64,
    /// Relative standard error of `empirical`.
    pub rel_stderr: f64,
    /// `exp(lambda^2 tau^2 / 2)`.
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MgfReport {
    pub points: Vec<MgfPoint>,
    /// One trial per grid point; a point fails when
    /// `empirical > bound (1 + 5 rel_stderr)`, and the report passes only
    /// with zero failures.
    pub report: BoundReport,
}

/// Empirical centered MGF of the product against `exp(lambda^2 tau^2 / 2)` on a
/// grid of `lambda` with `|lambda| <= 0.9 / b`. All grid points share one set
/// of samples.
pub fn check_subexp_mgf(
    kind: &MgfKind,
    lambda_grid: &[f64],
    trials: usize,
    spec: &RngSpec,
) -> Result<MgfReport> {
    require_trials(trials)?;
    if trials < 2 {
        return Err(Error::invalid("trials", "need at least 2 samples"));
    }
    if lambda_grid.is_empty() {
        return Err(Error::invalid("lambda_grid", "empty"));
    }
    if let MgfKind::ProductUv { u, v } = kind {
        check_len(u.len(), v.len())?;
    }
    let (tau2, b) = kind.parameters();
    if !(b > 0.0) {
        return Err(Error::invalid("kind", "u, v and sigma must be nonzero"));
    }
    let limit = MGF_LAMBDA_FRACTION / b;
    if let Some(&bad) = lambda_grid.iter().find(|l| !(l.abs() <= limit)) {
        return Err(Error::invalid("lambda_grid", format!("|{bad}| exceeds {limit} = 0.9 / b")));
    }
    let mu = kind.mean();
    let d = kind.dim();
    let g = lambda_grid.len();
    let chunks = trials.div_ceil(TRIAL_CHUNK);
    let partials: Vec<crate::stats::MeanAccumulator> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = TRIAL_CHUNK.min(trials - c * TRIAL_CHUNK);
            let mut rng = spec.child(format!("chunk/{c}")).stream();
            let mut x = vec![0.0; d];
            let mut out = Array1::<f64>::zeros(g);
            let mut acc = crate::stats::MeanAccumulator::new(g);
            for _ in 0..count {
                let centered = kind.sample(&mut rng, &mut x) - mu;
                for (o, &l) in out.iter_mut().zip(lambda_grid) {
                    *o = (l * centered).exp();
                }
                acc.push(out.view());
            }
            acc
        })
        .collect();
    let mut acc = crate::stats::MeanAccumulator::new(g);
    for p in &partials {
        acc.merge(p);
    }
    let se = acc.stderr();
    let points: Vec<MgfPoint> = lambda_grid
        .iter()
        .enumerate()
        .map(|(k, &lambda)| {
            let empirical = acc.mean()[k];
            let rel_stderr = se[k] / empirical;
            let bound = (lambda * lambda * tau2 / 2.0).exp();
            MgfPoint {
                lambda,
                empirical,
                rel_stderr,
                bound,
                holds: empirical <= bound * (1.0 + MGF_STDERR_MULTIPLE * rel_stderr),
            }
        })
        .collect();
    let failures = points.iter().filter(|p| !p.holds).count();
    Ok(MgfReport {
        report: BoundReport::with_stderr(points.len(), failures, 0.0, 0.0),
        points,
    })
}

/// `count` evenly spaced values in `[-0.9/b, 0.9/b]`, including zero when `count` is odd.
pub fn admissible_lambda_grid(kind: &MgfKind, count: usize) -> Vec<f64> {
    let (_, b) = kind.parameters();
    let limit = MGF_LAMBDA_FRACTION / b;
    if count == 1 {
        return vec![0.0];
    }
    (0..count)
        .map(|k| -limit + 2.0 * limit * k as f64 / (count - 1) as f64)
        .map(|l: f64| l.clamp(-limit, limit))
        .collect()
}

#[cfg(test)]
mod tests {
    use ndarray::array;
    use rand_distr::{ChiSquared, Distribution};

    use super::*;

    #[test]
    fn report_arithmetic() {
        let r = BoundReport::new(100, 10, 0.05);
        assert_eq!(r.empirical_rate, 0.1);
        assert!((r.stderr - 0.03).abs() < 1e-15);
        assert!((r.slack - (0.05 + 0.12 - 0.1)).abs() < 1e-15);
        assert_eq!(r.verdict(), Verdict::Pass);
        assert_eq!(BoundReport::new(100, 100, 0.0).verdict(), Verdict::Fail);
        assert_eq!(BoundReport::new(100, 30, 1.4).verdict(), Verdict::Vacuous);
        assert_eq!(BoundReport::new(10, 0, 0.0).verdict(), Verdict::Pass);
    }

    #[test]
    fn tanh_slope_examples() {
        assert!(check_tanh_slope(&[(0.0, 1.0)]).unwrap());
        assert!(check_tanh_slope(&[(3.0, 3.0 + 1e-9)]).unwrap());
        assert!(check_tanh_slope(&halton_pairs(10_000, 20.0)).unwrap());
        assert!(check_tanh_slope(&[(-1.0, 1.0)]).is_err());
        assert!(check_tanh_slope(&[(1.0, 1.0)]).is_err());
        assert!(check_tanh_slope(&[]).is_err());
    }

    #[test]
    fn halton_pairs_fill_the_square() {
        let pts = halton_pairs(1000, 20.0);
        assert_eq!(pts[0].0, 10.0);
        assert!((pts[0].1 - 20.0 / 3.0).abs() < 1e-14);
        let quadrant = pts.iter().filter(|(a, b)| *a < 10.0 && *b < 10.0).count();
        assert!((200..300).contains(&quadrant));
    }

    #[test]
    fn bound_formulas() {
        assert!((signal_sum_bound(32, 0.0) - 2.0 * (-1f64).exp()).abs() < 1e-15);
        assert!((signal_sum_bound(320, 0.0) - 9.08e-5).abs() < 1e-7);
        assert!((noise_sum_bound(64, 0.0, 4.0) - 2.0 * (-32f64).exp()).abs() < 1e-25);
        assert!(noise_sum_bound(16, 0.0, 0.1) > 1.0);
        let [e1, e2, _] = event_bounds(50, 0.0, 4.0);
        assert_eq!(e1, e2);
    }

    #[test]
    fn preconditions() {
        let star = array![1.0, 0.0];
        let far = array![2.5, 0.0];
        let spec = RngSpec::new(0);
        assert!(check_signal_sum(far.view(), star.view(), 10, 10, &spec).is_err());
        assert!(check_noise_sum(far.view(), star.view(), 0.2, 10, 10, &spec).is_err());
        let cfg = ModelConfig::new(star.clone(), 0.25).unwrap();
        assert!(check_events(far.view(), &cfg, 10, 10, &spec).is_err());
        assert!(check_covariance_opnorm(1000, 2, 0.5, 10, &spec).is_err());
        let kind = MgfKind::ProductUv { u: array![1.0, 0.0], v: array![0.0, 1.0] };
        assert!(check_subexp_mgf(&kind, &[0.3], 100, &spec).is_err());
        assert!(check_subexp_mgf(&kind, &[0.2], 100, &spec).is_ok());
    }

    #[test]
    fn signal_sum_at_large_n() {
        let star = array![1.0, 0.5];
        let rep = check_signal_sum(star.view(), star.view(), 320, 100_000, &RngSpec::new(3)).unwrap();
        assert!((rep.analytic_bound - 2.0 * (-10f64).exp()).abs() < 1e-12);
        assert!(rep.passed(), "{rep:?}");
        let small = check_signal_sum(star.view(), star.view(), 32, 10_000, &RngSpec::new(3)).unwrap();
        assert!(small.passed());
    }

    #[test]
    fn signal_sum_matches_chi_square_oracle() {
        // d = 1, theta = theta* = 1: the sum is chi^2_n; the event |chi^2_n - n| > n/2.
        let one = array![1.0];
        let n = 8;
        let trials = 200_000;
        let rep = check_signal_sum(one.view(), one.view(), n, trials, &RngSpec::new(5)).unwrap();
        let chi = ChiSquared::new(n as f64).unwrap();
        let mut rng = RngSpec::new(6).stream();
        let direct = (0..trials)
            .filter(|_| (chi.sample(&mut rng) - n as f64).abs() > n as f64 / 2.0)
            .count() as f64
            / trials as f64;
        let p = 0.5 * (rep.empirical_rate + direct);
        let se = (2.0 * p * (1.0 - p) / trials as f64).sqrt();
        assert!((rep.empirical_rate - direct).abs() < 4.0 * se, "{} vs {direct}", rep.empirical_rate);
    }

    #[test]
    fn noise_sum_cases() {
        let star = array![1.0, 0.0];
        let rep = check_noise_sum(star.view(), star.view(), 0.25, 64, 100_000, &RngSpec::new(2)).unwrap();
        assert_eq!(rep.failures, 0);
        assert!(rep.passed());
        let loose = check_noise_sum(star.view(), star.view(), 10.0, 16, 20_000, &RngSpec::new(2)).unwrap();
        assert_eq!(loose.verdict(), Verdict::Vacuous);
    }

    #[test]
    fn noise_sum_is_dimension_free() {
        // At snr = 1 and n = 4 the event is common enough to compare rates.
        let (small, large) = (array![1.0, 0.0], {
            let mut v = Array1::zeros(8);
            v[0] = 1.0;
            v
        });
        let trials = 100_000;
        let a = check_noise_sum(small.view(), small.view(), 1.0, 4, trials, &RngSpec::new(1)).unwrap();
        let b = check_noise_sum(large.view(), large.view(), 1.0, 4, trials, &RngSpec::new(2)).unwrap();
        let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        assert!(a.empirical_rate > 0.01);
        assert!((a.empirical_rate - b.empirical_rate).abs() < 4.0 * se);
    }

    #[test]
    fn events_degenerate_at_truth() {
        let cfg = ModelConfig::new(array![1.0, 0.0], 0.25).unwrap();
        let star = cfg.theta_star().clone();
        let [e1, e2, e3] = check_events(star.view(), &cfg, 4, 50_000, &RngSpec::new(4)).unwrap();
        assert!(e1.failures > 0);
        assert_eq!(e1.failures, e2.failures);
        assert_eq!(e3.failures, 0);
    }

    #[test]
    fn events_hold_near_truth() {
        let cfg = ModelConfig::new(array![1.0, 0.0], 0.25).unwrap();
        let theta = array![1.0 + 0.6 / 14.0, 0.8 / 14.0];
        let reports = check_events(theta.view(), &cfg, 100, 100_000, &RngSpec::new(9)).unwrap();
        for r in &reports {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn covariance_identity_rows_never_fail() {
        // Rows +-sqrt(d) e_k in balanced pairs give Sigma = I exactly.
        let d = 3;
        let mut x = Array2::zeros((2 * d, d));
        for k in 0..d {
            x[[2 * k, k]] = (d as f64).sqrt();
            x[[2 * k + 1, k]] = -(d as f64).sqrt();
        }
        assert!(covariance_deviation(x.view()) < 1e-15);
    }

    #[test]
    fn covariance_deviation_in_one_dimension_is_chi_square() {
        // Compare mean |chi^2_N / N - 1| from rows and from direct chi-square draws.
        let num_rows = 500;
        let reps = 4000;
        let mut rng = RngSpec::new(31).stream();
        let from_rows: Vec<f64> = (0..reps)
            .map(|_| {
                let x = Array2::from_shape_simple_fn((num_rows, 1), || rng.sample(StandardNormal));
                covariance_deviation(x.view())
            })
            .collect();
        let chi = ChiSquared::new(num_rows as f64).unwrap();
        let mut rng = RngSpec::new(32).stream();
        let direct: Vec<f64> = (0..reps)
            .map(|_| (chi.sample(&mut rng) / num_rows as f64 - 1.0).abs())
            .collect();
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            (m, var / v.len() as f64)
        };
        let ((ma, va), (mb, vb)) = (stats(&from_rows), stats(&direct));
        assert!((ma - mb).abs() < 4.0 * (va + vb).sqrt(), "{ma} vs {mb}");
    }

    #[test]
    fn mgf_at_zero_is_one() {
        let kind = MgfKind::ProductUv { u: array![1.0, 2.0], v: array![0.5, -1.0] };
        let rep = check_subexp_mgf(&kind, &[0.0], 1000, &RngSpec::new(0)).unwrap();
        assert_eq!(rep.points[0].empirical, 1.0);
        assert_eq!(rep.points[0].bound, 1.0);
        assert!(rep.report.passed());
    }

    fn assert_matches_oracle(rep: &MgfReport, oracle: impl Fn(f64) -> f64) {
        for p in &rep.points {
            let exact = oracle(p.lambda);
            let tol = 5.0 * p.rel_stderr * exact + 1e-12;
            assert!((p.empirical - exact).abs() <= tol, "lambda {}: {} vs {exact}", p.lambda, p.empirical);
        }
    }

    #[test]
    fn mgf_orthogonal_product_matches_oracle() {
        // <X,u><X,v> with orthonormal u, v is a product of independent normals.
        let kind = MgfKind::ProductUv { u: array![1.0, 0.0, 0.0], v: array![0.0, 1.0, 0.0] };
        let grid = admissible_lambda_grid(&kind, 11);
        let rep = check_subexp_mgf(&kind, &grid, 200_000, &RngSpec::new(41)).unwrap();
        assert_matches_oracle(&rep, |l| 1.0 / (1.0 - l * l).sqrt());
        for &l in &grid {
            assert!(1.0 / (1.0 - l * l).sqrt() <= (2.0 * l * l).exp());
        }
        assert_eq!(rep.report.verdict(), Verdict::Pass);
    }

    #[test]
    fn mgf_square_matches_oracle() {
        // u = v: S = |u|^2 chi^2_1 with mean |u|^2.
        let u = array![0.6, 0.8];
        let a = 1.0;
        let kind = MgfKind::ProductUv { u: u.clone(), v: u };
        let (tau2, _) = kind.parameters();
        let grid = admissible_lambda_grid(&kind, 11);
        let rep = check_subexp_mgf(&kind, &grid, 200_000, &RngSpec::new(42)).unwrap();
        let oracle = |l: f64| (-l * a).exp() / (1.0 - 2.0 * l * a).sqrt();
        assert_matches_oracle(&rep, oracle);
        for &l in &grid {
            assert!(oracle(l) <= (l * l * tau2 / 2.0).exp());
        }
        assert_eq!(rep.report.verdict(), Verdict::Pass);
    }

    #[test]
    fn mgf_noise_product_exceeds_claimed_parameters() {
        // <X,u> eps has MGF 1/sqrt(1 - lambda^2 |u|^2 sigma^2), which is not
        // bounded by exp(lambda^2 |u|^2 sigma^2 / 4) near |lambda| = 1/(|u| sigma).
        // The grid stops at 0.45 / b so the estimator keeps a finite variance.
        let kind = MgfKind::ProductUeps { u: array![2.0, 0.0], sigma: 0.5 };
        let grid: Vec<f64> = (0..7).map(|k| -0.45 + 0.15 * k as f64).collect();
        let rep = check_subexp_mgf(&kind, &grid, 400_000, &RngSpec::new(43)).unwrap();
        assert_matches_oracle(&rep, |l| 1.0 / (1.0 - l * l).sqrt());
        let edge = &rep.points[0];
        assert!(!edge.holds, "{edge:?}");
        assert_eq!(rep.report.verdict(), Verdict::Fail);
    }

    #[test]
    fn lambda_grid_is_admissible() {
        let kind = MgfKind::ProductUv { u: array![1.0, 0.0], v: array![0.0, 2.0] };
        let grid = admissible_lambda_grid(&kind, 9);
        assert_eq!(grid.len(), 9);
        assert_eq!(grid[4], 0.0);
        assert!(grid.iter().all(|l| l.abs() <= 0.9 / 8.0));
    }
}
