//! `cmlr`: experiments for EM on clustered mixtures of linear regressions.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 numerical failure,
//! 3 a bound check failed in `verify-bounds`.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use cmlr_core::datagen::write_dataset;
use cmlr_core::experiment::{
    emit_report, generate_dataset, run_bound_suite, run_generalization_gap, run_iteration_comparison,
    run_scaling, run_single, trace_table, ExperimentConfig, Format, Metadata, RawConfig, SuiteOptions,
};
use cmlr_core::Error;

#[derive(Parser)]
#[command(name = "cmlr", version, about = "EM for clustered mixtures of linear regressions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample one dataset at the single grid point and write it as CSV.
    Generate(Common),
    /// Run clustered EM once and write the trace.
    Run(Common),
    /// Statistical error against m*n.
    Scaling(Common),
    /// Iterations to plateau, clustered EM against EM on decoupled data.
    Compare(Common),
    /// Empirical against population EM operator over a shell around theta*.
    Gap {
        #[command(flatten)]
        common: Common,
        /// Inner shell radius; defaults to a tenth of the initialization radius.
        #[arg(long)]
        shell_eps: Option<f64>,
        /// Shell points per dataset.
        #[arg(long)]
        num_thetas: Option<usize>,
    },
    /// Simulate the tail bounds and compare with their analytic values.
    VerifyBounds {
        #[command(flatten)]
        common: Common,
        /// Trials per sum and event check.
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        /// Add the noise-product MGF check.
        #[arg(long)]
        include_noise_mgf: bool,
    },
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Batch counts, comma separated. Combined with the n values into a grid.
    #[arg(long, value_delimiter = ',')]
    m: Option<Vec<usize>>,
    /// Batch sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    init_radius_frac: Option<f64>,
    /// Monte-Carlo batches for population estimates.
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    /// csv or json.
    #[arg(long, default_value = "csv")]
    format: String,
}

impl Common {
    fn resolve(&self, extra: RawConfig) -> cmlr_core::Result<(ExperimentConfig, Format)> {
        self.resolve_with(extra, true)
    }

    fn resolve_with(&self, extra: RawConfig, needs_grid: bool) -> cmlr_core::Result<(ExperimentConfig, Format)> {
        let format: Format = self.format.parse()?;
        let base = match &self.config {
            Some(path) => RawConfig::from_path(path)?,
            None => RawConfig::default(),
        };
        let flags = RawConfig {
            seed: self.seed,
            out_dir: self.out.clone(),
            reps: self.reps,
            d: self.d,
            snr: self.snr,
            sigma: self.sigma,
            max_iters: self.max_iters,
            init_radius_frac: self.init_radius_frac,
            num_mc: self.mc_samples,
            delta: self.delta,
            ..extra
        };
        let mut raw = base.merge(flags);
        raw.override_grid(self.m.as_deref(), self.n.as_deref())?;
        if let Some(t) = self.threads {
            if t == 0 {
                return Err(Error::Config { field: "threads".into(), reason: "must be at least 1".into() });
            }
            // Fails only if a pool already exists, in which case it is kept.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
        }
        let cfg = if needs_grid { raw.resolve()? } else { raw.resolve_gridless()? };
        Ok((cfg, format))
    }
}

enum Outcome {
    Done,
    BoundsFailed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::BoundsFailed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e.downcast_ref::<Error>().is_some_and(Error::is_numerical);
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}

fn report(
    name: &str,
    table: &cmlr_core::experiment::Table,
    meta: &Metadata,
    format: Format,
    cfg: &ExperimentConfig,
) -> anyhow::Result<()> {
    let path = emit_report(name, table, meta, format, &cfg.out_dir)?;
    println!("{}", path.display());
    Ok(())
}

fn execute(command: Command) -> anyhow::Result<Outcome> {
    match command {
        Command::Generate(common) => {
            let (cfg, _) = common.resolve(RawConfig::default())?;
            let data = generate_dataset(&cfg)?;
            std::fs::create_dir_all(&cfg.out_dir).with_context(|| cfg.out_dir.display().to_string())?;
            let path = cfg.out_dir.join("dataset.csv");
            let file = File::create(&path).with_context(|| path.display().to_string())?;
            write_dataset(&data, BufWriter::new(file))?;
            println!("{}", path.display());
        }
        Command::Run(common) => {
            let (cfg, format) = common.resolve(RawConfig::default())?;
            let trace = run_single(&cfg)?;
            let meta = Metadata::for_run(&cfg, "run")
                .with("final_error", trace.final_error())
                .with("stop_reason", trace.stop_reason);
            report("trace", &trace_table(&trace), &meta, format, &cfg)?;
        }
        Command::Scaling(common) => {
            let (cfg, format) = common.resolve(RawConfig::default())?;
            let res = run_scaling(&cfg)?;
            let meta = Metadata::for_run(&cfg, "scaling");
            report("scaling", &res.table(), &meta, format, &cfg)?;
            report("scaling_summary", &res.summary_table(), &meta.with("slope", res.slope), format, &cfg)?;
            eprintln!("log-log slope of median error against mn: {:.4}", res.slope);
        }
        Command::Compare(common) => {
            let (cfg, format) = common.resolve(RawConfig::default())?;
            let res = run_iteration_comparison(&cfg)?;
            let meta = Metadata::for_run(&cfg, "compare");
            report("compare", &res.table(), &meta, format, &cfg)?;
            report("compare_summary", &res.summary_table(), &meta, format, &cfg)?;
            for s in &res.summary {
                eprintln!(
                    "m={} n={} {}: median iterations {}",
                    s.point.m, s.point.n, s.method, s.median_iters
                );
            }
        }
        Command::Gap { common, shell_eps, num_thetas } => {
            let extra = RawConfig { shell_eps, num_thetas, ..RawConfig::default() };
            let (cfg, format) = common.resolve(extra)?;
            let res = run_generalization_gap(&cfg, cfg.shell_eps, cfg.num_thetas)?;
            let mut meta = Metadata::for_run(&cfg, "gap");
            report("gap", &res.table(), &meta, format, &cfg)?;
            meta = meta.with("raw_slope", res.raw_slope).with("corrected_slope", res.corrected_slope);
            for f in &res.floors {
                meta = meta
                    .with(&format!("noise_floor_n{}", f.n), f.floor)
                    .with(&format!("self_gap_violations_n{}", f.n), f.self_gap_violations);
            }
            report("gap_summary", &res.summary_table(), &meta, format, &cfg)?;
            eprintln!("slope raw {:.4}, after noise floor {:.4}", res.raw_slope, res.corrected_slope);
        }
        Command::VerifyBounds { common, trials, include_noise_mgf } => {
            let (cfg, format) = common.resolve_with(RawConfig::default(), false)?;
            let opts = SuiteOptions { trials, include_noise_mgf, ..SuiteOptions::default() };
            let suite = run_bound_suite(&cfg, &opts)?;
            let meta = Metadata::for_run(&cfg, "verify-bounds").with("trials", trials);
            report("bounds", &suite.table(), &meta, format, &cfg)?;
            for r in suite.rows.iter().filter(|r| !r.report.passed()) {
                eprintln!("FAIL {} [{}]: rate {} > bound {}", r.lemma, r.params, r.report.empirical_rate, r.report.analytic_bound);
            }
            if !suite.passed() {
                return Ok(Outcome::BoundsFailed);
            }
        }
    }
    Ok(Outcome::Done)
}
