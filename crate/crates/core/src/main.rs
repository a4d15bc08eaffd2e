use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use spsr_core::cli::{self, Query, RunConfig, Session, Settings, Sweep};
use spsr_core::queries::CollisionMode;
use spsr_core::{Error, Result};

/// Stochastic Poisson surface reconstruction from oriented point clouds.
#[derive(Parser)]
#[command(name = "spsr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Posterior mean field and its zero-level mesh.
    Reconstruct {
        #[command(flatten)]
        shared: Shared,
    },
    /// Meshes of independent posterior samples.
    Sample {
        #[command(flatten)]
        shared: Shared,
        #[arg(long, default_value_t = 4)]
        n_samples: usize,
        /// Also write each sample's field grid.
        #[arg(long)]
        write_grids: bool,
    },
    /// Statistical queries written as JSON.
    Query {
        #[command(flatten)]
        shared: Shared,
        kind: QueryKind,
        /// Probe points, one "x y z" per line.
        #[arg(long)]
        probes: Option<PathBuf>,
        /// Rays, one "ox oy oz dx dy dz t_max step" per line.
        #[arg(long)]
        rays: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Any)]
        mode: Mode,
        #[arg(long, default_value_t = 64)]
        n_samples: usize,
        /// Box "x0,y0,z0,x1,y1,z1"; defaults to the whole margin box.
        #[arg(long, value_delimiter = ',', num_args = 6)]
        region: Option<Vec<f64>>,
        #[arg(long, default_value_t = 10000)]
        n_points: usize,
    },
    /// Mesh of the conservative hitbox `mean + eta * std`.
    Hitbox {
        #[command(flatten)]
        shared: Shared,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
    },
    /// Rank candidate rays by how uncertain the surface is along them.
    NextView {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        rays: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        #[arg(long, default_value_t = 64)]
        n_samples: usize,
    },
    /// Timing and accuracy sweeps written as CSV.
    Bench {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        sweep: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum QueryKind {
    Occupancy,
    Collision,
    Transmittance,
    TotalUncertainty,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Any,
    All,
}

#[derive(Args)]
struct Shared {
    /// key=value settings file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<String>,
    /// ply or xyz (inferred from the extension otherwise).
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    nu: Option<String>,
    /// One length scale, or three comma-separated.
    #[arg(long)]
    kappa: Option<String>,
    #[arg(long)]
    sigma2: Option<String>,
    #[arg(long)]
    noise2: Option<String>,
    #[arg(long)]
    f_cross: Option<String>,
    #[arg(long)]
    f_prior: Option<String>,
    /// Nodes per axis, or "off".
    #[arg(long)]
    amortize_grid: Option<String>,
    /// exact or sgd.
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    sgd_iters: Option<String>,
    #[arg(long)]
    sgd_step: Option<String>,
    #[arg(long)]
    sgd_batch: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    margin: Option<String>,
    /// Contouring grid nodes per axis.
    #[arg(long)]
    grid: Option<String>,
    /// raw or torus coordinates for inputs and outputs.
    #[arg(long)]
    coords: Option<String>,
    /// Log progress to stderr.
    #[arg(short, long)]
    verbose: bool,
}

impl Shared {
    fn config(&self) -> Result<RunConfig> {
        let mut s = match &self.config {
            Some(p) => cli::load_settings(p)?,
            None => Settings::new(),
        };
        let flags = [
            ("input", &self.input),
            ("format", &self.format),
            ("nu", &self.nu),
            ("kappa", &self.kappa),
            ("sigma2", &self.sigma2),
            ("noise2", &self.noise2),
            ("f-cross", &self.f_cross),
            ("f-prior", &self.f_prior),
            ("amortize-grid", &self.amortize_grid),
            ("solver", &self.solver),
            ("sgd-iters", &self.sgd_iters),
            ("sgd-step", &self.sgd_step),
            ("sgd-batch", &self.sgd_batch),
            ("seed", &self.seed),
            ("out", &self.out),
            ("margin", &self.margin),
            ("grid", &self.grid),
            ("coords", &self.coords),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                s.insert(k.to_string(), v.clone());
            }
        }
        RunConfig::from_settings(&s)
    }
}

fn run(command: Command) -> Result<Vec<PathBuf>> {
    match command {
        Command::Reconstruct { shared } => Session::open(shared.config()?)?.reconstruct(),
        Command::Sample {
            shared,
            n_samples,
            write_grids,
        } => {
            let config = shared.config()?;
            if n_samples == 0 {
                return Err(Error::Config("n-samples must be >= 1".into()));
            }
            Session::open(config)?.sample(n_samples, write_grids)
        }
        Command::Query {
            shared,
            kind,
            probes,
            rays,
            mode,
            n_samples,
            region,
            n_points,
        } => {
            let config = shared.config()?;
            let need = |p: Option<PathBuf>, flag: &str| p.ok_or_else(|| Error::Config(format!("this query needs --{flag}")));
            let mode = match mode {
                Mode::Any => CollisionMode::Any,
                Mode::All => CollisionMode::All,
            };
            let query = match kind {
                QueryKind::Occupancy => Query::Occupancy {
                    probes: need(probes, "probes")?,
                },
                QueryKind::Collision => Query::Collision {
                    probes: need(probes, "probes")?,
                    mode,
                    n_samples,
                },
                QueryKind::Transmittance => Query::Transmittance {
                    rays: need(rays, "rays")?,
                    n_samples,
                },
                QueryKind::TotalUncertainty => Query::TotalUncertainty {
                    region: region.map(|r| std::array::from_fn(|k| r[k])),
                    n_points,
                },
            };
            Ok(vec![Session::open(config)?.query(&query)?])
        }
        Command::Hitbox { shared, eta } => {
            let config = shared.config()?;
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(Error::Config(format!("eta must be >= 0, got {eta}")));
            }
            Session::open(config)?.hitbox(eta)
        }
        Command::NextView {
            shared,
            rays,
            eps,
            n_samples,
        } => {
            let config = shared.config()?;
            if !(eps > 0.0 && eps < 0.5) {
                return Err(Error::Config(format!("eps must lie in (0, 1/2), got {eps}")));
            }
            Ok(vec![Session::open(config)?.next_view(&rays, eps, n_samples)?])
        }
        Command::Bench { shared, sweep } => {
            let config = shared.config()?;
            let sweep: Sweep = sweep.parse()?;
            Ok(vec![cli::bench(&config, sweep)?])
        }
    }
}

fn verbose(command: &Command) -> bool {
    match command {
        Command::Reconstruct { shared }
        | Command::Sample { shared, .. }
        | Command::Query { shared, .. }
        | Command::Hitbox { shared, .. }
        | Command::NextView { shared, .. }
        | Command::Bench { shared, .. } => shared.verbose,
    }
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let level = if verbose(&args.command) { "info" } else { "warn" };
    env_logger::Builder::new().parse_filters(level).init();
    match run(args.command) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("spsr: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
