use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rasched::appointment::HeavyTrafficConfig;
use rasched::cli::{
    self, parse_list, Algorithm, BenchmarkConfig, GenerateSpec, ModelSettings, SolutionFile,
};
use rasched::lns::{AcceptVariant, Budget, LnsParams, DEFAULT_ITERATIONS};
use rasched::phasetype::FitConfig;
use rasched::{Error, Regime, Result, Schedule, Tour};

#[derive(Parser)]
#[command(name = "rasched", version, about = "Routing and appointment scheduling with stochastic times")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a batch of random instances and a manifest.
    Generate {
        /// Client counts, comma separated.
        #[arg(long, default_value = "6")]
        n: String,
        /// Service-variability regimes: low, high (comma separated).
        #[arg(long, default_value = "low")]
        regime: String,
        /// Travel weights, comma separated.
        #[arg(long = "omega-t", default_value = "1")]
        omega_t: String,
        /// Instances per (n, regime, travel weight) combination.
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve one instance and write a solution file.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        /// lns, tsp, mtsp, msvf or enum.
        #[arg(long, default_value = "lns")]
        algorithm: Algorithm,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: Search,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact evaluation of a tour and schedule.
    Evaluate {
        #[arg(long)]
        instance: PathBuf,
        #[command(flatten)]
        input: SolutionInput,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo estimate for a tour and schedule.
    Simulate {
        #[arg(long)]
        instance: PathBuf,
        #[command(flatten)]
        input: SolutionInput,
        #[arg(long, default_value_t = 1_000_000)]
        reps: u64,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run algorithms over a manifest and write per-run and summary CSVs.
    Benchmark {
        #[arg(long)]
        manifest: PathBuf,
        /// Comma separated algorithm list.
        #[arg(long, default_value = "lns,tsp,mtsp,msvf,enum")]
        algorithms: String,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: Search,
        /// Per-run CSV.
        #[arg(long)]
        out: PathBuf,
        /// Aggregate CSV; defaults to the per-run path with `.summary.csv`.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Compare exact and simulated idle/wait expectations; fails if any |z| > 4.
    Verify {
        #[arg(long)]
        instance: PathBuf,
        #[command(flatten)]
        input: SolutionInput,
        #[arg(long, default_value_t = 1_000_000)]
        reps: u64,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Variance decay of the heavy-traffic schedule.
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    /// Largest phase-type dimension of a single fitted requirement.
    #[arg(long, default_value_t = 1000)]
    max_phase_dim: usize,
    /// Multiply mean travel times by this factor after loading.
    #[arg(long)]
    travel_scale: Option<f64>,
}

#[derive(Args)]
struct Search {
    /// Iteration budget for LNS (default when no time limit is given).
    #[arg(long, conflicts_with = "time_limit")]
    iters: Option<u64>,
    /// Wall-clock budget for LNS in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long, default_value = "paper")]
    accept_variant: AcceptVariant,
    /// Most clients removed per LNS iteration.
    #[arg(long, default_value_t = 6)]
    max_removed: usize,
    /// Acceptance threshold as a fraction of the initial objective.
    #[arg(long, default_value_t = 0.05)]
    h_init: f64,
}

#[derive(Args)]
struct SolutionInput {
    /// Solution file written by `solve`.
    #[arg(long, conflicts_with_all = ["tour", "x"])]
    solution: Option<PathBuf>,
    /// Comma separated client order.
    #[arg(long, requires = "x")]
    tour: Option<String>,
    /// Comma separated inter-appointment times.
    #[arg(long, requires = "tour", allow_hyphen_values = true)]
    x: Option<String>,
}

impl Common {
    fn model(&self) -> ModelSettings {
        ModelSettings {
            fit: FitConfig {
                max_phase_dim: self.max_phase_dim,
                ..FitConfig::default()
            },
            heavy_traffic: HeavyTrafficConfig { beta: self.beta },
            travel_scale: self.travel_scale,
        }
    }
}

impl Search {
    fn lns(&self, seed: u64) -> Result<LnsParams> {
        let budget = match (self.iters, self.time_limit) {
            (_, Some(secs)) => Budget::TimeLimit(
                Duration::try_from_secs_f64(secs).map_err(|e| Error::Config(format!("time limit: {e}")))?,
            ),
            (Some(k), None) => Budget::Iterations(k),
            (None, None) => Budget::Iterations(DEFAULT_ITERATIONS),
        };
        let params = LnsParams {
            max_removed: self.max_removed,
            accept_fraction: self.h_init,
            budget,
            seed,
            accept: self.accept_variant,
            ..LnsParams::default()
        };
        params.validate()?;
        Ok(params)
    }
}

impl SolutionInput {
    /// Tour, schedule and recorded objective.
    fn read(&self) -> Result<(Tour, Schedule, Option<f64>)> {
        match (&self.solution, &self.tour, &self.x) {
            (Some(path), _, _) => {
                let s = SolutionFile::load(path)?;
                Ok((s.tour, s.x, Some(s.objective)))
            }
            (None, Some(t), Some(x)) => Ok((
                Tour::new(parse_list(t)?)?,
                Schedule::new(parse_list(x)?)?,
                None,
            )),
            _ => Err(Error::Config("give either --solution or both --tour and --x".into())),
        }
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("output serializes") + "\n";
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate {
            n,
            regime,
            omega_t,
            count,
            seed,
            out,
        } => {
            let spec = GenerateSpec {
                sizes: parse_list(&n)?,
                regimes: parse_list::<Regime>(&regime)?,
                weights_travel: parse_list(&omega_t)?,
                count,
                seed,
            };
            let manifest = cli::generate(&spec, &out)?;
            eprintln!(
                "wrote {} instances and {}",
                manifest.instances.len(),
                out.join(cli::MANIFEST_FILE).display()
            );
        }
        Command::Solve {
            instance,
            algorithm,
            common,
            search,
            out,
        } => {
            let p = common.model().load(&instance)?;
            let sol = cli::solve(&p, algorithm, &search.lns(common.seed)?)?;
            if let Some(o) = &sol.orientation {
                eprintln!(
                    "tsp orientation: chosen hybrid {} , reversed hybrid {}",
                    o.chosen_hybrid, o.reversed_hybrid
                );
            }
            if !sol.converged {
                eprintln!("warning: schedule optimization stopped before reaching its stationarity target");
            }
            match out {
                Some(path) => sol.save(&path)?,
                None => emit(&sol, None)?,
            }
        }
        Command::Evaluate {
            instance,
            input,
            common,
            out,
        } => {
            let p = common.model().load(&instance)?;
            let (tour, x, recorded) = input.read()?;
            let report = cli::evaluate(&p, &tour, &x, recorded)?;
            emit(&report, out.as_deref())?;
            if report.matches == Some(false) {
                eprintln!("recorded objective does not match the re-evaluation");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Simulate {
            instance,
            input,
            reps,
            common,
            out,
        } => {
            let p = common.model().load(&instance)?;
            let (tour, x, _) = input.read()?;
            emit(&cli::simulate(&p, &tour, &x, reps, common.seed)?, out.as_deref())?;
        }
        Command::Benchmark {
            manifest,
            algorithms,
            common,
            search,
            out,
            summary,
        } => {
            let cfg = BenchmarkConfig {
                algorithms: parse_list(&algorithms)?,
                lns: search.lns(common.seed)?,
                seed: common.seed,
                model: common.model(),
            };
            let records = cli::benchmark(&manifest, &cfg)?;
            cli::write_records(&records, &out)?;
            let summary = summary.unwrap_or_else(|| out.with_extension("summary.csv"));
            cli::write_summary(&cli::summarize(&records), &summary)?;
            let failed = records.iter().filter(|r| r.status.starts_with("error")).count();
            eprintln!(
                "wrote {} rows to {} ({failed} failed) and {}",
                records.len(),
                out.display(),
                summary.display()
            );
        }
        Command::Verify {
            instance,
            input,
            reps,
            common,
            out,
        } => {
            let p = common.model().load(&instance)?;
            let (tour, x, _) = input.read()?;
            let report = cli::verify(&p, &tour, &x, reps, common.seed)?;
            emit(&report, out.as_deref())?;
            if !report.pass {
                eprintln!("max |z| = {} exceeds 4", report.max_abs_z);
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
