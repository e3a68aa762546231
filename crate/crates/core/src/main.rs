use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use monohom::cli::report::{RunReport, Status};
use monohom::cli::runner::{self, finish, resolve_threads, Threads};
use monohom::cli::verify::{verify_dimensions, VerifyOptions};
use monohom::cli::ExperimentConfig;
use monohom::Error;

#[derive(Parser)]
#[command(name = "monohom", version, about = "Homogenization of monotone p-growth operators on periodic tori")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the study described by a JSON config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the invariant suite on small grids.
    Verify {
        /// Fewer Monte-Carlo samples.
        #[arg(long)]
        fast: bool,
        /// Dimensions to check; all of 1, 2, 3 by default.
        #[arg(long = "dim", value_parser = clap::value_parser!(u8).range(1..=3))]
        dims: Vec<u8>,
        #[arg(long, default_value = "out/verify")]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Sample coefficient fields and write them under `fields/`.
    SampleField {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; overrides the config and MONOHOM_THREADS.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

impl Common {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.samples {
            cfg.params.sample_count = n;
        }
        if let Some(t) = self.tol {
            cfg.solver.tol = t;
        }
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.output.clone())
            .unwrap_or_else(|| Path::new("out").join(cfg.study.name()))
    }
}

fn config_failure(e: Error) -> ExitCode {
    eprintln!("monohom: {e}");
    ExitCode::from(Status::ConfigError.exit_code() as u8)
}

fn load(path: &Path, common: &Common) -> Result<(ExperimentConfig, PathBuf, Threads), Error> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    common.apply(&mut cfg);
    let threads = resolve_threads(common.threads, cfg.threads)?;
    let out = common.out_dir(&cfg);
    Ok((cfg, out, threads))
}

fn summarize(report: &RunReport, out: &Path) -> ExitCode {
    for c in &report.checks {
        let mark = if c.fails() { "FAIL" } else if c.informational { "info" } else { "ok" };
        println!("{mark:>4}  {:<40} {:e}  {}", c.id, c.value, c.detail);
    }
    if let Some(e) = &report.error {
        eprintln!("monohom: {e}");
    }
    println!(
        "{}: {:?} in {:.1}s on {} threads ({}), output in {}",
        report.study,
        report.status,
        report.wall_time_s,
        report.threads,
        report.thread_source,
        out.display()
    );
    ExitCode::from(report.status.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, common } => match load(&config, &common) {
            Ok((cfg, out, threads)) => {
                let report = runner::run(&cfg, &out, threads);
                summarize(&report, &out)
            }
            Err(e) => config_failure(e),
        },
        Command::SampleField { config, common } => match load(&config, &common) {
            Ok((cfg, out, threads)) => {
                let report = runner::sample_field(&cfg, &out, threads);
                summarize(&report, &out)
            }
            Err(e) => config_failure(e),
        },
        Command::Verify { fast, dims, out, threads, seed, tol } => {
            let threads = match resolve_threads(threads, None) {
                Ok(t) => t,
                Err(e) => return config_failure(e),
            };
            let mut opts = VerifyOptions { fast, ..VerifyOptions::default() };
            if let Some(s) = seed {
                opts.seed = s;
            }
            if let Some(t) = tol {
                if !(t > 0.0 && t < 1.0) {
                    return config_failure(Error::Config(format!("tolerance must lie in (0, 1), got {t}")));
                }
                opts.tol = t;
            }
            let dims: Vec<usize> = if dims.is_empty() { vec![1, 2, 3] } else { dims.into_iter().map(usize::from).collect() };
            let start = std::time::Instant::now();
            let mut report = RunReport::new("verify", None, threads.count, threads.source);
            let result = runner::in_pool(threads.count, || verify_dimensions(&dims, opts)).and_then(|r| r).map(|(checks, times)| {
                report.checks = checks;
                for (d, t) in times {
                    report.summary.insert(format!("d{d}_wall_time_s"), json!(t));
                }
                report.summary.insert("fast".into(), json!(fast));
                report.summary.insert("tol".into(), json!(opts.tol));
                report.summary.insert("seed".into(), json!(opts.seed));
            });
            report.wall_time_s = start.elapsed().as_secs_f64();
            if let Err(e) = finish(&mut report, &out, result) {
                eprintln!("monohom: could not write the report: {e}");
            }
            summarize(&report, &out)
        }
    }
}
