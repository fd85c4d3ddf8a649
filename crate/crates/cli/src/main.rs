use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use bp_mud::approx_bp::run_abp;
use bp_mud::bp::{run_bp, BpConfig, BpRunReport};
use bp_mud::fixedpoint::FixedPointReport;
use bp_mud::harness::{run_experiment, summarize, write_outputs, write_summary_csv, Detector, ExperimentConfig};
use bp_mud::spectral::{mmse_solve, spectral_survey, SurveyConfig};
use bp_mud::sysmodel::{generate_instance, matched_filter, SignatureDistribution, SystemInstance};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

/// Belief-propagation multiuser detection experiments.
#[derive(Parser)]
#[command(name = "bp-mud", version)]
struct Cli {
    /// Worker threads for parallel trials.
    #[arg(long, global = true, env = "BP_MUD_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dist {
    Binary,
    Gaussian,
}

impl From<Dist> for SignatureDistribution {
    fn from(d: Dist) -> Self {
        match d {
            Dist::Binary => SignatureDistribution::Binary,
            Dist::Gaussian => SignatureDistribution::StandardGaussian,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one detector on one instance.
    Detect {
        #[arg(long, default_value = "bp")]
        detector: Detector,
        #[arg(long, required_unless_present = "load_instance")]
        users: Option<usize>,
        #[arg(long, required_unless_present = "load_instance")]
        chips: Option<usize>,
        #[arg(long, required_unless_present = "load_instance")]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = bp_mud::bp::DEFAULT_TOL)]
        tol: f64,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long, value_enum, default_value = "binary")]
        distribution: Dist,
        /// Per-iteration CSV: iter, mse, dist_to_mmse.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Write the generated instance as JSON.
        #[arg(long)]
        dump_instance: Option<PathBuf>,
        /// Read the instance from JSON instead of generating it.
        #[arg(long)]
        load_instance: Option<PathBuf>,
    },
    /// Run a detector sweep described by a JSON config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `output_path` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-(detector, sigma) aggregates here.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Tabulate the large-system fixed point and convergence time.
    Tstar {
        /// Comma-separated loads.
        #[arg(long, value_delimiter = ',', required_unless_present = "grid")]
        alpha: Vec<f64>,
        /// Comma-separated noise levels.
        #[arg(long, value_delimiter = ',', required_unless_present = "grid")]
        sigma: Vec<f64>,
        /// CSV with `alpha,sigma` columns; replaces the cartesian grid.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Per-instance spectral and variance diagnostics.
    Spectral {
        #[arg(long)]
        users: usize,
        #[arg(long)]
        chips: usize,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Power `t` for the trace ratio.
        #[arg(long, default_value_t = 2)]
        power: usize,
        #[arg(long, default_value_t = 200)]
        growth_iters: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct HistoryRow {
    iter: usize,
    mse: f64,
    dist_to_mmse: Option<f64>,
}

#[derive(Serialize)]
struct DetectSummary {
    detector: &'static str,
    users: usize,
    chips: usize,
    sigma: f64,
    seed: u64,
    iterations: usize,
    converged: bool,
    mse: f64,
    dist_to_mmse: f64,
}

#[derive(Deserialize)]
struct GridPoint {
    alpha: f64,
    sigma: f64,
}

#[derive(Serialize)]
struct TstarRow {
    alpha: f64,
    sigma: f64,
    #[serde(rename = "Lambda")]
    lambda: f64,
    t_star: Option<f64>,
    asymptotic_mse: f64,
}

fn output(path: Option<&PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn rms(a: &[f64], b: &[f64]) -> f64 {
    let k = a.len() as f64;
    (a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / k).sqrt()
}

fn detect(
    detector: Detector,
    instance: &SystemInstance<f64>,
    tol: f64,
    max_iters: Option<usize>,
    history: Option<PathBuf>,
) -> anyhow::Result<()> {
    let sigma = instance.noise_std();
    let oracle = mmse_solve(instance)?;
    let reference = oracle.mean.as_slice().expect("contiguous");
    let mut cfg = BpConfig::for_system(instance.alpha(), sigma);
    cfg.tol = tol;
    if let Some(m) = max_iters {
        cfg.max_iters = m;
    }
    let report: BpRunReport<f64> = match detector {
        Detector::Bp => run_bp(instance, &cfg, Some(&oracle.mean))?,
        Detector::Abp => run_abp(instance, cfg.tol, cfg.max_iters, Some(&oracle.mean))?,
        Detector::Mmse | Detector::Matched => {
            let est = if detector == Detector::Mmse {
                oracle.mean.clone()
            } else {
                let k = instance.users() as f64;
                let n = instance.chips() as f64;
                matched_filter(instance) / (1.0 + sigma * sigma + (k - 1.0) / n)
            };
            let summary = DetectSummary {
                detector: detector.name(),
                users: instance.users(),
                chips: instance.chips(),
                sigma,
                seed: instance.seed(),
                iterations: 0,
                converged: true,
                mse: instance.mse(est.view()),
                dist_to_mmse: rms(est.as_slice().expect("contiguous"), reference),
            };
            if history.is_some() {
                eprintln!("note: --history ignored for direct detector {}", detector.name());
            }
            println!("{}", serde_json::to_string(&summary)?);
            return Ok(());
        }
    };
    if let Some(path) = history {
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
        for h in &report.history {
            w.serialize(HistoryRow {
                iter: h.iter,
                mse: h.mse,
                dist_to_mmse: h.dist_to_reference,
            })?;
        }
        w.flush()?;
    }
    let x_hat = report.estimate.x_hat();
    let summary = DetectSummary {
        detector: detector.name(),
        users: instance.users(),
        chips: instance.chips(),
        sigma,
        seed: instance.seed(),
        iterations: report.iterations_used,
        converged: report.converged,
        mse: instance.mse(x_hat.view()),
        dist_to_mmse: rms(x_hat.as_slice().expect("contiguous"), reference),
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn tstar(alpha: Vec<f64>, sigma: Vec<f64>, grid: Option<PathBuf>) -> anyhow::Result<()> {
    let points: Vec<(f64, f64)> = match grid {
        Some(path) => {
            let mut r = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
            r.deserialize::<GridPoint>()
                .map(|p| p.map(|p| (p.alpha, p.sigma)))
                .collect::<Result<_, _>>()?
        }
        None => alpha
            .iter()
            .flat_map(|&a| sigma.iter().map(move |&s| (a, s)))
            .collect(),
    };
    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
    for (a, s) in points {
        let rep = FixedPointReport::<f64>::new(a, s).with_context(|| format!("alpha={a}, sigma={s}"))?;
        w.serialize(TstarRow {
            alpha: a,
            sigma: s,
            lambda: rep.Lambda,
            t_star: rep.t_star,
            asymptotic_mse: rep.asymptotic_mse,
        })?;
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Detect {
            detector,
            users,
            chips,
            sigma,
            seed,
            tol,
            max_iters,
            distribution,
            history,
            dump_instance,
            load_instance,
        } => {
            let instance = match load_instance {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    SystemInstance::<f64>::from_json(&text)?
                }
                None => generate_instance(
                    users.expect("required by clap"),
                    chips.expect("required by clap"),
                    distribution.into(),
                    sigma.expect("required by clap"),
                    seed,
                )?,
            };
            if let Some(p) = dump_instance {
                std::fs::write(&p, instance.to_json()?).with_context(|| format!("writing {}", p.display()))?;
            }
            detect(detector, &instance, tol, max_iters, history)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, out, summary } => {
            let mut cfg = match ExperimentConfig::from_json_file(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: config {}: {e}", config.display());
                    return Ok(ExitCode::from(1));
                }
            };
            if let Some(o) = out {
                cfg.output_path = Some(o);
            }
            let Some(path) = cfg.output_path.clone() else {
                eprintln!("error: no output path (use --out or output_path)");
                return Ok(ExitCode::from(1));
            };
            let result = run_experiment(&cfg)?;
            write_outputs(&result, &cfg, &path)?;
            if let Some(p) = summary {
                write_summary_csv(&summarize(&result), output(Some(&p))?)?;
            }
            let errors = result.error_rows();
            if errors > 0 {
                eprintln!("{errors} detector error rows");
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Tstar { alpha, sigma, grid } => {
            tstar(alpha, sigma, grid)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Spectral {
            users,
            chips,
            sigma,
            trials,
            seed,
            power,
            growth_iters,
            out,
        } => {
            if trials == 0 {
                bail!("trials must be >= 1");
            }
            let rows = spectral_survey(&SurveyConfig {
                users,
                chips,
                sigma,
                trials,
                seed,
                power,
                growth_iters,
            })?;
            let mut w = csv::Writer::from_writer(output(out.as_ref())?);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not set thread count: {e}");
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
