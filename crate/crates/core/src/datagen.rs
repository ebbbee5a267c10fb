//! Synthetic C-MLR data, initial iterates and the decoupled i.i.d. baseline.
//!
//! Draw order inside [`sample_batch`] is fixed: the sign `xi` first, then the
//! covariates row by row, then one noise draw per row.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::model::l2_norm;
use crate::stats::format_f64;
use crate::{Batch, ClusteredDataset, Error, FlatDataset, ModelConfig, Result, RngSpec, Sign};

fn random_sign<R: Rng + ?Sized>(rng: &mut R) -> Sign {
    if rng.random::<bool>() {
        Sign::Plus
    } else {
        Sign::Minus
    }
}

/// `y_i = xi <x_i, theta*> + eps_i` for `n` rows sharing one uniform sign `xi`.
pub fn sample_batch<R: Rng + ?Sized>(config: &ModelConfig, n: usize, rng: &mut R) -> Result<Batch> {
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    let d = config.d();
    let xi = random_sign(rng);
    let x = Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
    let signal = x.dot(config.theta_star());
    let sigma = config.sigma();
    let s = xi.value();
    let y = signal.mapv(|v| s * v + sigma * rng.sample::<f64, _>(StandardNormal));
    Batch::new(x, y, xi)
}

/// `m` independent batches; batch `j` draws from the stream labelled `batch/{j}`.
pub fn sample_clustered_dataset(
    config: &ModelConfig,
    m: usize,
    n: usize,
    spec: &RngSpec,
) -> Result<ClusteredDataset> {
    if m == 0 {
        return Err(Error::invalid("m", "must be at least 1"));
    }
    let batches = (0..m)
        .into_par_iter()
        .map(|j| sample_batch(config, n, &mut spec.child(format!("batch/{j}")).stream()))
        .collect::<Result<Vec<_>>>()?;
    ClusteredDataset::new(batches, config.clone())
}

/// Flattens the batches and multiplies every response by an independent
/// uniform sign. Output order is batch-major.
pub fn decouple<R: Rng + ?Sized>(dataset: &ClusteredDataset, rng: &mut R) -> FlatDataset {
    let (m, n, d) = (dataset.m(), dataset.n(), dataset.d());
    let mut x = Array2::zeros((m * n, d));
    let mut y = Array1::zeros(m * n);
    for (j, b) in dataset.batches().iter().enumerate() {
        let rows = j * n..(j + 1) * n;
        x.slice_mut(ndarray::s![rows.clone(), ..]).assign(b.x());
        for (i, &v) in b.y().iter().enumerate() {
            y[j * n + i] = random_sign(rng).value() * v;
        }
    }
    FlatDataset::new(x, y).expect("shapes come from a valid dataset")
}

/// `theta* + r u` with `r = radius_frac * |theta*|` and `u` uniform on the unit
/// sphere, i.e. a point on the boundary of the initialization ball.
pub fn sample_init<R: Rng + ?Sized>(
    config: &ModelConfig,
    radius_frac: f64,
    rng: &mut R,
) -> Result<Array1<f64>> {
    if !(radius_frac > 0.0 && radius_frac < 1.0) {
        return Err(Error::invalid(
            "radius_frac",
            format!("must lie in (0, 1), got {radius_frac}"),
        ));
    }
    let r = radius_frac * config.signal_norm();
    let u = unit_vector(config.d(), rng);
    Ok(config.theta_star() + &(u * r))
}

/// Uniform direction on the unit sphere in `d` dimensions.
pub fn unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Array1<f64> {
    loop {
        let g = Array1::from_shape_simple_fn(d, || rng.sample::<f64, _>(StandardNormal));
        let norm = l2_norm(g.view());
        if norm > 1e-300 {
            return g / norm;
        }
    }
}

// Dataset files
//
// line 1: m,n,d,sigma,theta_0..theta_{d-1}     (header)
// line 2: the values
// line 3: batch,xi,x_0..x_{d-1},y               (header)
// then one record per observation, batch-major.

const DATASET_MAGIC: &str = "m";

/// Writes the dataset as CSV with shortest round-trip float formatting.
pub fn write_dataset<W: Write>(dataset: &ClusteredDataset, out: W) -> Result<()> {
    let d = dataset.d();
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    let fmt_err = |e: csv::Error| Error::Format(e.to_string());

    let mut header: Vec<String> = ["m", "n", "d", "sigma"].map(String::from).to_vec();
    header.extend((0..d).map(|k| format!("theta_{k}")));
    w.write_record(&header).map_err(fmt_err)?;
    let cfg = dataset.config();
    let mut values = vec![dataset.m().to_string(), dataset.n().to_string(), d.to_string()];
    values.push(format_f64(cfg.sigma()));
    values.extend(cfg.theta_star().iter().map(|&v| format_f64(v)));
    w.write_record(&values).map_err(fmt_err)?;

    let mut cols: Vec<String> = vec!["batch".into(), "xi".into()];
    cols.extend((0..d).map(|k| format!("x_{k}")));
    cols.push("y".into());
    w.write_record(&cols).map_err(fmt_err)?;
    for (j, b) in dataset.batches().iter().enumerate() {
        for (row, &y) in b.x().rows().into_iter().zip(b.y().iter()) {
            let mut rec = vec![j.to_string(), b.xi().to_string()];
            rec.extend(row.iter().map(|&v| format_f64(v)));
            rec.push(format_f64(y));
            w.write_record(&rec).map_err(fmt_err)?;
        }
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<ClusteredDataset> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = r.records();
    let mut next = |what: &str| -> Result<csv::StringRecord> {
        records
            .next()
            .ok_or_else(|| Error::Format(format!("missing {what}")))?
            .map_err(|e| Error::Format(e.to_string()))
    };
    let header = next("header")?;
    if header.get(0) != Some(DATASET_MAGIC) {
        return Err(Error::Format("first header field must be `m`".into()));
    }
    let values = next("model line")?;
    let int = |rec: &csv::StringRecord, i: usize| -> Result<usize> {
        rec.get(i)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("field {i} is not an integer")))
    };
    let float = |rec: &csv::StringRecord, i: usize| -> Result<f64> {
        rec.get(i)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("field {i} is not a number")))
    };
    let (m, n, d) = (int(&values, 0)?, int(&values, 1)?, int(&values, 2)?);
    if values.len() != 4 + d {
        return Err(Error::Format(format!("expected {} model fields", 4 + d)));
    }
    let sigma = float(&values, 3)?;
    let theta = (0..d).map(|k| float(&values, 4 + k)).collect::<Result<Array1<f64>>>()?;
    let config = ModelConfig::new(theta, sigma)?;
    next("observation header")?;

    let mut batches = Vec::with_capacity(m);
    for j in 0..m {
        let mut x = Array2::zeros((n, d));
        let mut y = Array1::zeros(n);
        let mut xi = None;
        for i in 0..n {
            let rec = next("observation")?;
            if rec.len() != d + 3 {
                return Err(Error::Format(format!("observation record has {} fields", rec.len())));
            }
            if int(&rec, 0)? != j {
                return Err(Error::Format(format!("expected batch {j}")));
            }
            let s = Sign::from_value(float(&rec, 1)?)
                .ok_or_else(|| Error::Format("xi must be -1 or 1".into()))?;
            if xi.is_some_and(|prev| prev != s) {
                return Err(Error::Format(format!("batch {j} mixes signs")));
            }
            xi = Some(s);
            for k in 0..d {
                x[[i, k]] = float(&rec, 2 + k)?;
            }
            y[i] = float(&rec, 2 + d)?;
        }
        batches.push(Batch::new(x, y, xi.expect("n >= 1"))?);
    }
    if next("end of file").is_ok() {
        return Err(Error::Format("trailing records".into()));
    }
    ClusteredDataset::new(batches, config)
}
