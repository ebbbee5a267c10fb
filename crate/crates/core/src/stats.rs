//! Small statistics helpers shared by the experiments.

use ndarray::{Array1, ArrayView1};

/// Median of the finite entries; `NaN` when there are none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    ols_slope(&lx, &ly)
}

/// Running per-coordinate mean and sum of squared deviations (Welford), with
/// Chan's pairwise merge so chunk results combine in a fixed order.
#[derive(Debug, Clone)]
pub struct MeanAccumulator {
    count: usize,
    mean: Array1<f64>,
    m2: Array1<f64>,
}

impl MeanAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: Array1::zeros(dim),
            m2: Array1::zeros(dim),
        }
    }

    pub fn push(&mut self, sample: ArrayView1<f64>) {
        self.count += 1;
        let k = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample.iter()) {
            let delta = v - *m;
            *m += delta / k;
            *s += delta * (v - *m);
        }
    }

    pub fn merge(&mut self, other: &MeanAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for k in 0..self.mean.len() {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * nb / n;
            self.m2[k] += other.m2[k] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    /// Standard error of the mean, per coordinate.
    pub fn stderr(&self) -> Array1<f64> {
        if self.count < 2 {
            return Array1::from_elem(self.mean.len(), f64::INFINITY);
        }
        let n = self.count as f64;
        self.m2.mapv(|s| (s / (n - 1.0) / n).sqrt())
    }
}

/// Shortest decimal that parses back to the same `f64`, switching to
/// exponent notation for very large or very small magnitudes.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
        assert_eq!(median(&[f64::NAN, 5.0]), 5.0);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1e3, 1e4, 1e5];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((log_log_slope(&x, &y) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn merged_accumulators_match_single_pass() {
        let data: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64 * 0.7 - 2.0).collect();
        let mut whole = MeanAccumulator::new(1);
        let mut a = MeanAccumulator::new(1);
        let mut b = MeanAccumulator::new(1);
        for (i, &v) in data.iter().enumerate() {
            whole.push(array![v].view());
            if i < 37 { a.push(array![v].view()) } else { b.push(array![v].view()) }
        }
        a.merge(&b);
        let mean = data.iter().sum::<f64>() / 100.0;
        let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 99.0;
        assert!((a.mean()[0] - mean).abs() < 1e-12);
        assert!((a.stderr()[0] - (var / 100.0).sqrt()).abs() < 1e-12);
        assert!((whole.stderr()[0] - a.stderr()[0]).abs() < 1e-12);
    }

    #[test]
    fn formatting_round_trips() {
        for v in [0.1, -1e-300, 1.0 / 3.0, 123456.789, 1e17, -0.0, 5e-324, f64::MAX] {
            let s = format_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }
}
