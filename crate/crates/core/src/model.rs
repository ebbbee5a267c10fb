//! Domain types shared by every module.

use std::fmt;
use std::time::Duration;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Ground truth of the generative model: dimension, regressor and noise level.
///
/// `sigma` is treated as known everywhere; there is no M-step for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    theta_star: Array1<f64>,
    sigma: f64,
}

impl ModelConfig {
    pub fn new(theta_star: Array1<f64>, sigma: f64) -> Result<Self> {
        if theta_star.is_empty() {
            return Err(Error::invalid("theta_star", "dimension must be at least 1"));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid("sigma", format!("must be positive and finite, got {sigma}")));
        }
        if theta_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("theta_star", "entries must be finite"));
        }
        let norm = l2_norm(theta_star.view());
        if !(norm > 0.0) {
            return Err(Error::invalid("theta_star", "must be nonzero"));
        }
        let snr = norm / sigma;
        if !snr.is_finite() {
            return Err(Error::invalid("sigma", "signal-to-noise ratio overflows"));
        }
        Ok(Self { theta_star, sigma })
    }

    /// `theta* = signal_norm * e_1` in `d` dimensions with `sigma = signal_norm / snr`.
    pub fn along_first_axis(d: usize, signal_norm: f64, snr: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("d", "must be at least 1"));
        }
        if !(snr > 0.0) {
            return Err(Error::invalid("snr", format!("must be positive, got {snr}")));
        }
        let mut theta = Array1::zeros(d);
        theta[0] = signal_norm;
        Self::new(theta, signal_norm / snr)
    }

    pub fn d(&self) -> usize {
        self.theta_star.len()
    }

    pub fn theta_star(&self) -> &Array1<f64> {
        &self.theta_star
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn signal_norm(&self) -> f64 {
        l2_norm(self.theta_star.view())
    }

    pub fn snr(&self) -> f64 {
        self.signal_norm() / self.sigma
    }
}

/// Hidden mixture sign of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Minus,
    Plus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Minus => -1.0,
            Sign::Plus => 1.0,
        }
    }

    pub fn from_value(v: f64) -> Option<Self> {
        if v == 1.0 {
            Some(Sign::Plus)
        } else if v == -1.0 {
            Some(Sign::Minus)
        } else {
            None
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value() as i8)
    }
}

/// One node's observations: `n` covariate rows, `n` responses and the hidden sign.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    x: Array2<f64>,
    y: Array1<f64>,
    xi: Sign,
}

impl Batch {
    pub fn new(x: Array2<f64>, y: Array1<f64>, xi: Sign) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::invalid("x", "a batch needs at least one row"));
        }
        if x.nrows() != y.len() {
            return Err(Error::Dimension {
                expected: x.nrows(),
                actual: y.len(),
            });
        }
        Ok(Self { x, y, xi })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    /// The latent sign. Diagnostics only; the EM updates never see it.
    pub fn xi(&self) -> Sign {
        self.xi
    }

    /// The observable part of the batch.
    pub fn view(&self) -> BatchView<'_> {
        BatchView {
            x: self.x.view(),
            y: self.y.view(),
        }
    }
}

/// Covariates and responses of one batch without the latent sign.
#[derive(Debug, Clone, Copy)]
pub struct BatchView<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: ArrayView1<'a, f64>,
}

impl<'a> BatchView<'a> {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }
}

/// `m` batches of equal shape together with the model that generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredDataset {
    batches: Vec<Batch>,
    config: ModelConfig,
}

impl ClusteredDataset {
    pub fn new(batches: Vec<Batch>, config: ModelConfig) -> Result<Self> {
        let first = batches
            .first()
            .ok_or_else(|| Error::invalid("batches", "need at least one batch"))?;
        let (n, d) = (first.n(), first.d());
        if d != config.d() {
            return Err(Error::Dimension {
                expected: config.d(),
                actual: d,
            });
        }
        for b in &batches {
            if b.n() != n {
                return Err(Error::Dimension { expected: n, actual: b.n() });
            }
            if b.d() != d {
                return Err(Error::Dimension { expected: d, actual: b.d() });
            }
        }
        Ok(Self { batches, config })
    }

    pub fn m(&self) -> usize {
        self.batches.len()
    }

    pub fn n(&self) -> usize {
        self.batches[0].n()
    }

    pub fn d(&self) -> usize {
        self.config.d()
    }

    pub fn batches(&self) -> &[Batch] {
        &self.batches
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Observable views of every batch, in order.
    pub fn observations(&self) -> Vec<BatchView<'_>> {
        self.batches.iter().map(Batch::view).collect()
    }
}

/// Pooled samples after decoupling; no batch structure left.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatDataset {
    x: Array2<f64>,
    y: Array1<f64>,
}

impl FlatDataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension {
                expected: x.nrows(),
                actual: y.len(),
            });
        }
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::invalid("x", "empty design matrix"));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    /// Each sample as its own size-one batch.
    pub fn as_singleton_batches(&self) -> Vec<BatchView<'_>> {
        (0..self.len())
            .map(|i| BatchView {
                x: self.x.slice_axis(Axis(0), (i..i + 1).into()),
                y: self.y.slice_axis(Axis(0), (i..i + 1).into()),
            })
            .collect()
    }
}

/// Why an EM run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    TargetError,
    RelChange,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::MaxIters => "max_iters",
            StopReason::TargetError => "target_error",
            StopReason::RelChange => "rel_change",
        })
    }
}

/// Iterates `theta_0..theta_T` of one EM run.
///
/// `errors[t]` is the sign-resolved distance of `iterates[t]` to `theta*`;
/// `wall_times[t]` is the time spent computing `iterates[t + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmTrace {
    pub iterates: Vec<Array1<f64>>,
    pub errors: Vec<f64>,
    pub wall_times: Vec<Duration>,
    pub stop_reason: StopReason,
}

impl EmTrace {
    pub fn iterations(&self) -> usize {
        self.iterates.len() - 1
    }

    pub fn last(&self) -> &Array1<f64> {
        self.iterates.last().expect("trace always holds theta_0")
    }

    pub fn final_error(&self) -> f64 {
        *self.errors.last().expect("trace always holds theta_0")
    }

    /// Smallest error attained anywhere in the trace.
    pub fn plateau(&self) -> f64 {
        self.errors.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// First iteration whose error is within `factor` times the plateau.
    pub fn iterations_to_within(&self, factor: f64) -> usize {
        let target = factor * self.plateau();
        self.errors
            .iter()
            .position(|&e| e <= target)
            .unwrap_or(self.errors.len() - 1)
    }

    /// Writes the trace as CSV: `iter, theta_0..theta_{d-1}, error, wall_ms, stop_reason`.
    ///
    /// `wall_ms` is empty for the initial iterate and `stop_reason` is only
    /// filled on the last row.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let d = self.iterates[0].len();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["iter".to_string()];
        header.extend((0..d).map(|k| format!("theta_{k}")));
        header.extend(["error", "wall_ms", "stop_reason"].map(String::from));
        w.write_record(&header)?;
        let last = self.iterates.len() - 1;
        for (t, theta) in self.iterates.iter().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(theta.iter().map(|&v| crate::stats::format_f64(v)));
            rec.push(crate::stats::format_f64(self.errors[t]));
            rec.push(match t {
                0 => String::new(),
                _ => crate::stats::format_f64(self.wall_times[t - 1].as_secs_f64() * 1e3),
            });
            rec.push(if t == last { self.stop_reason.to_string() } else { String::new() });
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn l2_norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension { expected, actual })
    }
}

/// `min(|theta - theta*|, |theta + theta*|)`: the distance modulo the global sign flip.
pub fn sign_resolved_error(theta: ArrayView1<f64>, theta_star: ArrayView1<f64>) -> Result<f64> {
    check_len(theta_star.len(), theta.len())?;
    let (mut minus, mut plus) = (0.0, 0.0);
    for (&a, &b) in theta.iter().zip(theta_star.iter()) {
        minus += (a - b) * (a - b);
        plus += (a + b) * (a + b);
    }
    Ok(minus.min(plus).sqrt())
}
