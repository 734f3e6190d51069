use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use geodreg::regression::{fit, FitResult};
use geodreg::rnormal::RiemannianNormal;
use geodreg::shapes::{load_shapes, run_shape_study, synthetic_shapes, ShapeStudyConfig};
use geodreg::sim::{
    run_efficiency_experiment, run_mse_experiment, standard_noise, ExperimentSpec, EFFICIENCY_SIGMAS, SCHEMA_VERSION,
};
use geodreg::tuning::{are_l1, solve_cutoff, xi};
use geodreg::{Dataset, GeodesicModel, LossKind, Manifold, Observation, SolverConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "geodreg", version, about = "Robust geodesic regression on spheres, hyperbolic and shape spaces")]
struct Cli {
    /// Seed for every random draw; overrides the seed in a config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run simulations at full scale (1024 trials, N up to 256, all σ).
    #[arg(long, global = true)]
    full: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print ξ, the Huber and Tukey cutoffs and the L1 efficiency as JSON.
    Tune {
        #[arg(long)]
        dim: usize,
        #[arg(long, value_enum, default_value_t = Estimator::All)]
        estimator: Estimator,
        #[arg(long, default_value_t = 0.95)]
        target: f64,
    },
    /// Draw from the Riemannian normal law centred at the base point e0.
    Sample {
        #[arg(long, value_enum)]
        manifold: Family,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        n_samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a geodesic model to a CSV file and write the result as JSON.
    Fit {
        /// Manifold tag such as sphere:2; optional when the file declares it.
        #[arg(long)]
        manifold: Option<Manifold>,
        #[arg(long, default_value = "l2")]
        loss: LossKind,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Efficiency target for the Huber and Tukey cutoffs.
        #[arg(long, default_value_t = 0.95)]
        efficiency: f64,
        #[arg(long)]
        max_iter: Option<usize>,
        /// Leave the covariates uncentred.
        #[arg(long)]
        no_center: bool,
    },
    /// Monte Carlo studies.
    Simulate {
        #[command(subcommand)]
        study: Study,
    },
    /// Shape regression on age with reflected outliers.
    Shapes {
        #[command(subcommand)]
        action: ShapeAction,
    },
}

#[derive(Subcommand)]
enum Study {
    /// MSE of the estimates against sample size.
    Mse(MseArgs),
    /// Relative efficiency of the robust location estimators.
    Efficiency {
        #[arg(long)]
        manifold: Manifold,
        /// Comma-separated σ values; defaults to the standard grid.
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct MseArgs {
    /// Experiment spec as JSON; otherwise the standard design is used.
    #[arg(long, conflicts_with_all = ["manifold", "noise"])]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    manifold: Option<Manifold>,
    /// N, T, C or none.
    #[arg(long, required_unless_present = "config")]
    noise: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to list failed trials.
    #[arg(long)]
    failures: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ShapeAction {
    /// Fit each loss to clean and reflected data and compare with least squares.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated subjects to reflect; a random 20/88 share otherwise.
        #[arg(long, value_delimiter = ',')]
        tamper_indices: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',', default_value = "l2,l1,tukey")]
        losses: Vec<LossKind>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic landmark file that follows a geodesic in age.
    Synthetic {
        #[arg(long, default_value_t = 50)]
        landmarks: usize,
        #[arg(long, default_value_t = 88)]
        subjects: usize,
        #[arg(long, default_value_t = 0.004)]
        rate: f64,
        #[arg(long, default_value_t = 0.004)]
        sigma: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Estimator {
    Huber,
    Tukey,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Sphere,
    Hyperbolic,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct FitReport<'a> {
    schema_version: u32,
    /// The model with covariates in their original units.
    uncentered_model: GeodesicModel,
    #[serde(flatten)]
    fit: &'a FitResult,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Tune { dim, estimator, target } => {
            let mut out = json!({
                "schema_version": SCHEMA_VERSION,
                "n": dim,
                "target": target,
                "xi": xi(dim)?,
                "are_l1": are_l1(dim)?,
            });
            if matches!(estimator, Estimator::Huber | Estimator::All) {
                // Out of reach when L1 is already more efficient than the target.
                out["c_huber"] = match solve_cutoff(LossKind::Huber, dim, target) {
                    Ok(c) => json!(c),
                    Err(geodreg::Error::Unattainable { .. }) if matches!(estimator, Estimator::All) => json!(null),
                    Err(e) => return Err(e.into()),
                };
            }
            if matches!(estimator, Estimator::Tukey | Estimator::All) {
                out["c_tukey"] = json!(solve_cutoff(LossKind::Tukey, dim, target)?);
            }
            write_json(None, &out)
        }
        Command::Sample { manifold, dim, sigma, n_samples, out } => {
            let m = match manifold {
                Family::Sphere => Manifold::Sphere(dim),
                Family::Hyperbolic => Manifold::Hyperbolic(dim),
            };
            let law = RiemannianNormal::new(m, sigma)?;
            let mu = m.origin();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let obs = (0..n_samples)
                .map(|_| Ok(Observation { x: vec![], y: law.sample(&mu, &mut rng)? }))
                .collect::<geodreg::Result<Vec<_>>>()?;
            let mut w = output(out.as_deref())?;
            Dataset::new(m, obs)?.write_csv(&mut w)?;
            w.flush()?;
            Ok(())
        }
        Command::Fit { manifold, loss, data, out, efficiency, max_iter, no_center } => {
            let ds = Dataset::load(&data, manifold).with_context(|| format!("reading {}", data.display()))?;
            let mut cfg = SolverConfig { loss, efficiency, center_x: !no_center, ..SolverConfig::default() };
            if let Some(n) = max_iter {
                cfg.max_iter = n;
            }
            let f = fit(&ds, &cfg)?;
            let report = FitReport { schema_version: SCHEMA_VERSION, uncentered_model: f.uncentered_model()?, fit: &f };
            write_json(out.as_deref(), &report)
        }
        Command::Simulate { study: Study::Mse(args) } => {
            let mut spec = match &args.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    let mut spec: ExperimentSpec = serde_json::from_str(&text).context("parsing experiment spec")?;
                    if let Some(s) = cli.seed {
                        spec.seed = s;
                    }
                    spec
                }
                None => {
                    let m = args.manifold.expect("required by clap");
                    let noise = standard_noise(args.noise.as_deref().expect("required by clap"))?;
                    let (h_max, trials) = if cli.full { (8, 1024) } else { (6, 64) };
                    ExperimentSpec::standard(m, noise, h_max, trials, seed)
                }
            };
            if let Some(t) = args.trials {
                spec.trials = t;
            }
            let table = run_mse_experiment(&spec)?;
            let mut w = output(args.out.as_deref())?;
            table.write_csv(&mut w)?;
            w.flush()?;
            if let Some(path) = &args.failures {
                table.write_failures_csv(File::create(path)?)?;
            }
            if !table.failures.is_empty() {
                eprintln!("{} fits failed; see the failures file", table.failures.len());
            }
            Ok(())
        }
        Command::Simulate { study: Study::Efficiency { manifold, sigmas, n, trials, out } } => {
            if matches!(manifold, Manifold::Kendall(_)) {
                bail!("the efficiency study needs a sphere, hyperbolic or flat space");
            }
            let sigmas = sigmas.unwrap_or_else(|| {
                if cli.full {
                    EFFICIENCY_SIGMAS.to_vec()
                } else {
                    EFFICIENCY_SIGMAS[..3].to_vec()
                }
            });
            let trials = trials.unwrap_or(if cli.full { 1024 } else { 256 });
            let table = run_efficiency_experiment(manifold, &sigmas, n, trials, seed)?;
            let mut w = output(out.as_deref())?;
            table.write_csv(&mut w)?;
            w.flush()?;
            Ok(())
        }
        Command::Shapes { action: ShapeAction::Fit { data, tamper_indices, losses, out } } => {
            let ds = load_shapes(&data).with_context(|| format!("reading {}", data.display()))?;
            let cfg = ShapeStudyConfig { losses, tamper_indices, seed, ..ShapeStudyConfig::default() };
            let study = run_shape_study(&ds, &cfg)?;
            write_json(out.as_deref(), &study)
        }
        Command::Shapes { action: ShapeAction::Synthetic { landmarks, subjects, rate, sigma, out } } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (ds, _) = synthetic_shapes(landmarks, subjects, rate, sigma, &mut rng)?;
            let mut w = output(out.as_deref())?;
            ds.write_csv(&mut w)?;
            w.flush()?;
            Ok(())
        }
    }
}
