//! Experiment configuration: a flat JSON object, optionally overridden field by
//! field, resolved into a validated [`ExperimentConfig`].

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::datagen::unit_vector;
use crate::em::StoppingRule;
use crate::{Error, ModelConfig, Result, RngSpec};

pub const DEFAULT_REPS: usize = 100;
pub const DEFAULT_INIT_RADIUS_FRAC: f64 = 1.0 / 14.0;
pub const DEFAULT_MAX_ITERS: usize = 25;
pub const DEFAULT_NUM_MC: usize = 100_000;
pub const DEFAULT_DELTA: f64 = 0.05;
pub const DEFAULT_SIGNAL_NORM: f64 = 1.0;
pub const DEFAULT_NUM_THETAS: usize = 32;
pub const DEFAULT_OUT_DIR: &str = "results";

/// Configuration as written in a file or assembled from flags. Every field is
/// optional here; [`RawConfig::resolve`] fills defaults and validates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub d: Option<usize>,
    /// Norm of `theta*` when no explicit vector is given.
    pub theta_star_norm: Option<f64>,
    pub theta_star: Option<Vec<f64>>,
    /// Draw the direction of `theta*` at random instead of using `e_1`.
    pub random_direction: Option<bool>,
    pub sigma: Option<f64>,
    pub snr: Option<f64>,
    /// `(m, n)` pairs.
    pub grid: Option<Vec<(usize, usize)>>,
    pub reps: Option<usize>,
    pub init_radius_frac: Option<f64>,
    pub max_iters: Option<usize>,
    pub target_error: Option<f64>,
    pub rel_change_tol: Option<f64>,
    pub num_mc: Option<usize>,
    pub delta: Option<f64>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub shell_eps: Option<f64>,
    pub num_thetas: Option<usize>,
}

macro_rules! overlay {
    ($base:ident, $over:ident, $($field:ident),* $(,)?) => {
        $( if $over.$field.is_some() { $base.$field = $over.$field; } )*
    };
}

impl RawConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.starts_with("unknown field") || msg.starts_with("missing field"))
                .unwrap_or("<file>")
                .to_string();
            Error::config(field, msg)
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Fields set in `over` replace those in `self`. Setting `sigma` clears a
    /// file-level `snr` and vice versa, so a flag can switch the noise spec.
    pub fn merge(mut self, over: RawConfig) -> Self {
        if over.sigma.is_some() && over.snr.is_none() {
            self.snr = None;
        }
        if over.snr.is_some() && over.sigma.is_none() {
            self.sigma = None;
        }
        if over.theta_star.is_some() {
            self.theta_star_norm = None;
        }
        overlay!(
            self, over, d, theta_star_norm, theta_star, random_direction, sigma, snr, grid, reps,
            init_radius_frac, max_iters, target_error, rel_change_tol, num_mc, delta, seed,
            out_dir, shell_eps, num_thetas,
        );
        self
    }

    /// Replaces the grid by the product `ms x ns`. A missing list is taken from
    /// the distinct values in the current grid.
    pub fn override_grid(&mut self, ms: Option<&[usize]>, ns: Option<&[usize]>) -> Result<()> {
        if ms.is_none() && ns.is_none() {
            return Ok(());
        }
        let current = self.grid.clone().unwrap_or_default();
        let distinct = |pick: fn(&(usize, usize)) -> usize| -> Vec<usize> {
            let mut seen = Vec::new();
            for p in &current {
                if !seen.contains(&pick(p)) {
                    seen.push(pick(p));
                }
            }
            seen
        };
        let ms = ms.map(<[usize]>::to_vec).unwrap_or_else(|| distinct(|p| p.0));
        let ns = ns.map(<[usize]>::to_vec).unwrap_or_else(|| distinct(|p| p.1));
        if ms.is_empty() || ns.is_empty() {
            return Err(Error::config("grid", "give both --m and --n, or a grid in the config file"));
        }
        self.grid = Some(ms.iter().flat_map(|&m| ns.iter().map(move |&n| (m, n))).collect());
        Ok(())
    }

    pub fn resolve(&self) -> Result<ExperimentConfig> {
        self.resolve_inner(true)
    }

    /// As [`RawConfig::resolve`], but an absent grid resolves to an empty one.
    /// For runs that never sample datasets, such as the bound suite.
    pub fn resolve_gridless(&self) -> Result<ExperimentConfig> {
        self.resolve_inner(false)
    }

    fn resolve_inner(&self, require_grid: bool) -> Result<ExperimentConfig> {
        let seed = self.seed.ok_or_else(|| Error::config("seed", "required"))?;
        let theta_star = self.resolve_theta_star(seed)?;
        let norm = theta_star.dot(&theta_star).sqrt();
        let sigma = match (self.sigma, self.snr) {
            (Some(_), Some(_)) => {
                return Err(Error::config("sigma", "give exactly one of `sigma` and `snr`, not both"))
            }
            (None, None) => return Err(Error::config("snr", "give exactly one of `sigma` and `snr`")),
            (Some(s), None) => positive("sigma", s)?,
            (None, Some(snr)) => norm / positive("snr", snr)?,
        };
        let model = ModelConfig::new(theta_star, sigma).map_err(|e| Error::config("theta_star", e.to_string()))?;

        let grid = match (&self.grid, require_grid) {
            (Some(g), _) => g.clone(),
            (None, true) => return Err(Error::config("grid", "required")),
            (None, false) => Vec::new(),
        };
        if grid.is_empty() && require_grid {
            return Err(Error::config("grid", "must contain at least one (m, n) pair"));
        }
        if let Some(&(m, n)) = grid.iter().find(|(m, n)| *m == 0 || *n == 0) {
            return Err(Error::config("grid", format!("m and n must be positive, got ({m}, {n})")));
        }
        let grid = grid.into_iter().map(|(m, n)| GridPoint { m, n }).collect();

        let reps = self.reps.unwrap_or(DEFAULT_REPS);
        if reps == 0 {
            return Err(Error::config("reps", "must be at least 1"));
        }
        let init_radius_frac = self.init_radius_frac.unwrap_or(DEFAULT_INIT_RADIUS_FRAC);
        if !(init_radius_frac > 0.0 && init_radius_frac < 1.0) {
            return Err(Error::config("init_radius_frac", format!("must lie in (0, 1), got {init_radius_frac}")));
        }
        let em = StoppingRule {
            max_iters: self.max_iters.unwrap_or(DEFAULT_MAX_ITERS),
            target_error: self.target_error,
            rel_change_tol: self.rel_change_tol,
        };
        em.validate().map_err(|e| match e {
            Error::InvalidParameter { name, reason } => Error::config(name, reason),
            other => other,
        })?;
        let num_mc = self.num_mc.unwrap_or(DEFAULT_NUM_MC);
        if num_mc < 2 {
            return Err(Error::config("num_mc", "must be at least 2"));
        }
        let delta = self.delta.unwrap_or(DEFAULT_DELTA);
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::config("delta", format!("must lie in (0, 1), got {delta}")));
        }
        let num_thetas = self.num_thetas.unwrap_or(DEFAULT_NUM_THETAS);
        if num_thetas == 0 {
            return Err(Error::config("num_thetas", "must be at least 1"));
        }
        let shell_outer = init_radius_frac * model.signal_norm();
        let shell_eps = self.shell_eps.unwrap_or(shell_outer / 10.0);
        if !(shell_eps > 0.0 && shell_eps < shell_outer) {
            return Err(Error::config(
                "shell_eps",
                format!("must lie in (0, {shell_outer}), the initialization radius; got {shell_eps}"),
            ));
        }
        Ok(ExperimentConfig {
            model,
            grid,
            reps,
            init_radius_frac,
            em,
            num_mc,
            delta,
            seed,
            out_dir: self.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
            shell_eps,
            num_thetas,
        })
    }

    fn resolve_theta_star(&self, seed: u64) -> Result<Array1<f64>> {
        if let Some(v) = &self.theta_star {
            if self.theta_star_norm.is_some() {
                return Err(Error::config("theta_star_norm", "conflicts with an explicit `theta_star`"));
            }
            if self.random_direction == Some(true) {
                return Err(Error::config("random_direction", "conflicts with an explicit `theta_star`"));
            }
            if let Some(d) = self.d.filter(|&d| d != v.len()) {
                return Err(Error::config("d", format!("{d} disagrees with `theta_star` of length {}", v.len())));
            }
            return Ok(Array1::from(v.clone()));
        }
        let d = self.d.ok_or_else(|| Error::config("d", "required unless `theta_star` is given"))?;
        if d == 0 {
            return Err(Error::config("d", "must be at least 1"));
        }
        let norm = positive("theta_star_norm", self.theta_star_norm.unwrap_or(DEFAULT_SIGNAL_NORM))?;
        let direction = if self.random_direction.unwrap_or(false) {
            unit_vector(d, &mut RngSpec::new(seed).child("theta_star").stream())
        } else {
            let mut e1 = Array1::zeros(d);
            e1[0] = 1.0;
            e1
        };
        Ok(direction * norm)
    }
}

fn positive(field: &'static str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::config(field, format!("must be positive and finite, got {v}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPoint {
    pub m: usize,
    pub n: usize,
}

impl GridPoint {
    pub fn mn(&self) -> usize {
        self.m * self.n
    }
}

/// Validated configuration shared by every experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub grid: Vec<GridPoint>,
    pub reps: usize,
    pub init_radius_frac: f64,
    pub em: StoppingRule,
    pub num_mc: usize,
    pub delta: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub shell_eps: f64,
    pub num_thetas: usize,
}

impl ExperimentConfig {
    pub fn root_spec(&self) -> RngSpec {
        RngSpec::new(self.seed)
    }

    /// Stream for replication `rep` at grid point `p`. Keyed by `(m, n)` rather
    /// than grid position, so every experiment sees the same datasets.
    pub fn rep_spec(&self, p: GridPoint, rep: usize) -> RngSpec {
        self.root_spec().child(format!("m{}/n{}", p.m, p.n)).child(format!("rep/{rep}"))
    }

    pub fn distinct_mn(&self) -> usize {
        self.grid.iter().map(GridPoint::mn).collect::<BTreeSet<_>>().len()
    }

    pub fn require_distinct_mn(&self, at_least: usize) -> Result<()> {
        let have = self.distinct_mn();
        if have < at_least {
            return Err(Error::config(
                "grid",
                format!("needs at least {at_least} distinct values of m*n, found {have}"),
            ));
        }
        Ok(())
    }

    pub fn single_point(&self) -> Result<GridPoint> {
        match self.grid.as_slice() {
            [p] => Ok(*p),
            _ => Err(Error::config("grid", format!("expected exactly one (m, n) pair, found {}", self.grid.len()))),
        }
    }

    /// Compact JSON of the resolved configuration, including the derived `snr`.
    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v["snr"] = serde_json::json!(self.model.snr());
        serde_json::to_string(&v).expect("json value serializes")
    }
}
