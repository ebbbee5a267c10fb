//! Monte-Carlo estimates of population EM quantities.
//!
//! Every quantity here is an expectation over one batch of `n` pairs. Because
//! the two mixture components are mirror images and `tanh` is odd, the batch
//! sign can be fixed to `+1`: `X_i ~ N(0, I_d)`, `Y_i = <X_i, theta*> + eps_i`.
//! Everything depends on the batch only through `Z = sum_i X_i Y_i`, and the
//! `n` terms are exchangeable, so `X_1 Y_1` is replaced by `Z / n`.
//!
//! `E[Z / n] = theta*` exactly, which gives a control variate: with
//! `s = sign(<theta, theta*>)`,
//!
//! ```text
//! M(theta) = s theta* + E[(Z / n) (tanh(<Z, theta> / sigma^2) - s)]
//! ```
//!
//! The residual `tanh - s` vanishes whenever the weight saturates, so the
//! estimator is exact in the saturated regime and its standard error reflects
//! only the unsaturated batches. The identity is exactly odd in `theta`.
//!
//! Batches are simulated in fixed-size chunks. Chunk `c` draws from the
//! stream `chunk/{c}` under the design's [`RngSpec`], and chunk summaries are
//! merged in chunk order, so a design always reproduces the same samples
//! (common random numbers) independent of thread count.

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::model::{check_len, l2_norm};
use crate::stats::MeanAccumulator;
use crate::{Error, ModelConfig, Result, RngSpec};

/// Simulated batches per chunk (one random stream each).
pub const CHUNK_SIZE: usize = 1024;

/// Monte-Carlo value of a population vector with per-coordinate standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationEstimate {
    pub value: Array1<f64>,
    pub stderr: Array1<f64>,
    pub num_mc: usize,
}

/// Sampling plan for population expectations: the model, the batch size `n`,
/// the number of simulated batches, and where their randomness comes from.
///
/// Two calls with the same design see identical batches.
#[derive(Debug, Clone)]
pub struct McDesign {
    config: ModelConfig,
    n: usize,
    num_mc: usize,
    spec: RngSpec,
}

impl McDesign {
    pub fn new(config: ModelConfig, n: usize, num_mc: usize, spec: RngSpec) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "must be at least 1"));
        }
        if num_mc < 2 {
            return Err(Error::invalid("num_mc", format!("need at least 2 batches, got {num_mc}")));
        }
        Ok(Self {
            config,
            n,
            num_mc,
            spec,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_mc(&self) -> usize {
        self.num_mc
    }

    pub fn spec(&self) -> &RngSpec {
        &self.spec
    }

    /// Same plan on an independent stream.
    pub fn with_spec(&self, spec: RngSpec) -> Self {
        Self { spec, ..self.clone() }
    }

    pub fn with_num_mc(&self, num_mc: usize) -> Result<Self> {
        Self::new(self.config.clone(), self.n, num_mc, self.spec.clone())
    }

    /// Strong-concavity constant of the population Q-function, `n / sigma^2`.
    pub fn lambda(&self) -> f64 {
        self.n as f64 / (self.config.sigma() * self.config.sigma())
    }

    /// Averages `f(Z, out)` over all simulated batch statistics `Z`.
    pub fn average<F>(&self, dim: usize, f: F) -> MeanAccumulator
    where
        F: Fn(ArrayView1<f64>, &mut [f64]) + Sync,
    {
        let chunks = self.num_mc.div_ceil(CHUNK_SIZE);
        let partials: Vec<MeanAccumulator> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let count = CHUNK_SIZE.min(self.num_mc - c * CHUNK_SIZE);
                let mut rng = self.spec.child(format!("chunk/{c}")).stream();
                let d = self.config.d();
                let theta_star = self.config.theta_star();
                let sigma = self.config.sigma();
                let mut x = vec![0.0; d];
                let mut z = Array1::<f64>::zeros(d);
                let mut out = Array1::<f64>::zeros(dim);
                let mut acc = MeanAccumulator::new(dim);
                for _ in 0..count {
                    z.fill(0.0);
                    for _ in 0..self.n {
                        let mut signal = 0.0;
                        for (xk, &tk) in x.iter_mut().zip(theta_star.iter()) {
                            *xk = rng.sample(StandardNormal);
                            signal += *xk * tk;
                        }
                        let y = signal + sigma * rng.sample::<f64, _>(StandardNormal);
                        for (zk, &xk) in z.iter_mut().zip(&x) {
                            *zk += xk * y;
                        }
                    }
                    out.fill(0.0);
                    f(z.view(), out.as_slice_mut().expect("contiguous"));
                    acc.push(out.view());
                }
                acc
            })
            .collect();
        let mut total = MeanAccumulator::new(dim);
        for p in &partials {
            total.merge(p);
        }
        total
    }
}

/// `tanh(a) - 1` without cancellation.
fn tanh_minus_one(a: f64) -> f64 {
    if a >= 0.0 {
        let e = (-2.0 * a).exp();
        -2.0 * e / (1.0 + e)
    } else {
        -2.0 / (1.0 + (2.0 * a).exp())
    }
}

/// `tanh(a) - s` for `s` in {-1, 0, 1}; odd under `(a, s) -> (-a, -s)`.
fn tanh_residual(a: f64, s: f64) -> f64 {
    if s > 0.0 {
        tanh_minus_one(a)
    } else if s < 0.0 {
        -tanh_minus_one(-a)
    } else {
        a.tanh()
    }
}

/// `tanh(a) - tanh(b)`, accurate when both are close to the same saturation level.
fn tanh_difference(a: f64, b: f64) -> f64 {
    if a >= 0.0 && b >= 0.0 {
        tanh_minus_one(a) - tanh_minus_one(b)
    } else if a < 0.0 && b < 0.0 {
        tanh_minus_one(-b) - tanh_minus_one(-a)
    } else {
        a.tanh() - b.tanh()
    }
}

fn control_sign(theta: ArrayView1<f64>, theta_star: ArrayView1<f64>) -> f64 {
    let c = theta.dot(&theta_star);
    if c > 0.0 {
        1.0
    } else if c < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Population EM operator `M(theta) = E[X_1 Y_1 tanh(sum_i <X_i, theta> Y_i / sigma^2)]`.
pub fn population_em_step(theta: ArrayView1<f64>, design: &McDesign) -> Result<PopulationEstimate> {
    let mut all = population_em_steps(&[theta.to_owned()], design)?;
    Ok(all.pop().expect("one estimate per theta"))
}

/// [`population_em_step`] for several parameters over one shared set of batches.
pub fn population_em_steps(
    thetas: &[Array1<f64>],
    design: &McDesign,
) -> Result<Vec<PopulationEstimate>> {
    let cfg = design.config();
    let d = cfg.d();
    for t in thetas {
        check_len(d, t.len())?;
    }
    let star = cfg.theta_star().view();
    let signs: Vec<f64> = thetas.iter().map(|t| control_sign(t.view(), star)).collect();
    let inv_var = 1.0 / (cfg.sigma() * cfg.sigma());
    let inv_n = 1.0 / design.n() as f64;
    let acc = design.average(d * thetas.len(), |z, out| {
        for (p, (theta, &s)) in thetas.iter().zip(&signs).enumerate() {
            let r = tanh_residual(z.dot(theta) * inv_var, s);
            for k in 0..d {
                out[p * d + k] = z[k] * inv_n * r;
            }
        }
    });
    let mean = acc.mean();
    let se = acc.stderr();
    Ok(signs
        .iter()
        .enumerate()
        .map(|(p, &s)| {
            let block = p * d..(p + 1) * d;
            PopulationEstimate {
                value: star.mapv(|v| s * v) + &mean.slice(ndarray::s![block.clone()]),
                stderr: se.slice(ndarray::s![block]).to_owned(),
                num_mc: design.num_mc(),
            }
        })
        .collect())
}

/// Monte-Carlo mean of `Z = sum_i X_i Y_i`; its expectation is `n theta*`.
pub fn mean_batch_statistic(design: &McDesign) -> PopulationEstimate {
    let acc = design.average(design.config().d(), |z, out| {
        out.copy_from_slice(z.as_slice().expect("contiguous"));
    });
    PopulationEstimate {
        value: acc.mean().clone(),
        stderr: acc.stderr(),
        num_mc: design.num_mc(),
    }
}

/// The population Q-function around a fixed `theta`, as a function of `theta'`.
///
/// `grad Q(theta' | theta) = -lambda theta' + lambda M(theta)` with `lambda = n / sigma^2`.
#[derive(Debug, Clone)]
pub struct QEstimate {
    maximizer: PopulationEstimate,
    lambda: f64,
}

impl QEstimate {
    pub fn new(theta: ArrayView1<f64>, design: &McDesign) -> Result<Self> {
        Ok(Self {
            maximizer: population_em_step(theta, design)?,
            lambda: design.lambda(),
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// The root of the gradient, i.e. the population EM step.
    pub fn maximizer(&self) -> &PopulationEstimate {
        &self.maximizer
    }

    /// `E[sum_i X_i Y_i tanh(...)] / sigma^2`, the data-dependent gradient term.
    pub fn expectation_term(&self) -> Array1<f64> {
        &self.maximizer.value * self.lambda
    }

    pub fn gradient(&self, theta_prime: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_len(self.maximizer.value.len(), theta_prime.len())?;
        Ok(self.expectation_term() - &(&theta_prime * self.lambda))
    }

    /// The part of `Q(theta' | theta)` that depends on `theta'`:
    /// `-(n / 2 sigma^2) |theta'|^2 + <theta', E[Z tanh(...)]> / sigma^2`.
    pub fn objective(&self, theta_prime: ArrayView1<f64>) -> Result<f64> {
        check_len(self.maximizer.value.len(), theta_prime.len())?;
        Ok(-0.5 * self.lambda * theta_prime.dot(&theta_prime)
            + theta_prime.dot(&self.expectation_term()))
    }
}

/// Monte-Carlo estimate of `grad_{theta'} Q(theta' | theta)`.
pub fn q_gradient(
    theta_prime: ArrayView1<f64>,
    theta: ArrayView1<f64>,
    design: &McDesign,
) -> Result<PopulationEstimate> {
    let q = QEstimate::new(theta, design)?;
    let value = q.gradient(theta_prime)?;
    Ok(PopulationEstimate {
        value,
        stderr: &q.maximizer.stderr * q.lambda,
        num_mc: design.num_mc(),
    })
}

/// First-order (delta-method) standard error of `|v|` given per-coordinate errors.
fn norm_stderr(v: ArrayView1<f64>, se: ArrayView1<f64>) -> f64 {
    let norm = l2_norm(v);
    if norm == 0.0 {
        return l2_norm(se);
    }
    v.iter()
        .zip(se.iter())
        .map(|(a, s)| (a * s).powi(2))
        .sum::<f64>()
        .sqrt()
        / norm
}

fn distance_to_truth(theta: ArrayView1<f64>, config: &ModelConfig) -> Result<f64> {
    check_len(config.d(), theta.len())?;
    let dist = l2_norm((&theta - config.theta_star()).view());
    if dist == 0.0 {
        return Err(Error::ZeroDistance);
    }
    Ok(dist)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionEstimate {
    /// `|M(theta) - theta*| / |theta - theta*|`.
    pub kappa: f64,
    pub stderr: f64,
    pub step: PopulationEstimate,
}

/// Empirical contraction factor of the population operator at `theta`.
pub fn contraction_factor(theta: ArrayView1<f64>, design: &McDesign) -> Result<ContractionEstimate> {
    let dist = distance_to_truth(theta, design.config())?;
    let step = population_em_step(theta, design)?;
    let diff = &step.value - design.config().theta_star();
    Ok(ContractionEstimate {
        kappa: l2_norm(diff.view()) / dist,
        stderr: norm_stderr(diff.view(), step.stderr.view()) / dist,
        step,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FosGap {
    /// `|grad Q(M(theta) | theta*) - grad Q(M(theta) | theta)|`.
    pub gap: f64,
    pub gap_stderr: f64,
    /// `gap / |theta - theta*|`, the empirical stability constant gamma.
    pub ratio: f64,
    pub ratio_stderr: f64,
    /// Strong-concavity constant `n / sigma^2` to compare `ratio` against.
    pub lambda: f64,
}

/// First-order stability gap at `theta`.
///
/// The `theta'` terms of the two gradients cancel, leaving
/// `E[Z (tanh(<Z, theta*> / sigma^2) - tanh(<Z, theta> / sigma^2))] / sigma^2`,
/// which is estimated on a single set of batches.
pub fn fos_gap(theta: ArrayView1<f64>, design: &McDesign) -> Result<FosGap> {
    let cfg = design.config();
    let dist = distance_to_truth(theta, cfg)?;
    let d = cfg.d();
    let star = cfg.theta_star().view();
    let inv_var = 1.0 / (cfg.sigma() * cfg.sigma());
    let acc = design.average(d, |z, out| {
        let w = tanh_difference(z.dot(&star) * inv_var, z.dot(&theta) * inv_var) * inv_var;
        for k in 0..d {
            out[k] = z[k] * w;
        }
    });
    let gap = l2_norm(acc.mean().view());
    let gap_stderr = norm_stderr(acc.mean().view(), acc.stderr().view());
    Ok(FosGap {
        gap,
        gap_stderr,
        ratio: gap / dist,
        ratio_stderr: gap_stderr / dist,
        lambda: design.lambda(),
    })
}
