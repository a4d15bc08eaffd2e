//! Configuration and command implementations behind the `spsr` binary.
//!
//! Settings are `key=value` pairs. A config file supplies a base set and
//! command-line flags override individual keys; nothing is read from the
//! environment. Every command writes fixed file names into the output
//! directory and is deterministic given the settings (benchmark timings
//! excepted).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::contour::{marching_cubes, sample_field, GridSpec, Hitbox, ScalarFieldGrid, TriangleMesh};
use crate::error::{Error, Result};
use crate::io::{self, CloudFormat, Transform};
use crate::kernels::Hyperparameters;
use crate::points::PointSet;
use crate::posterior::{EvalPath, PosteriorConfig, PosteriorModel, SolverChoice};
use crate::queries::{self, Aabb, CollisionMode, QueryEstimate, Ray, SamplePool};
use crate::solver::{ObservationSystem, SgdConfig};
use crate::spectral::{AmortizationTable, CrossCovariance, FrequencySet};

pub type Settings = BTreeMap<String, String>;

const KEYS: &[&str] = &[
    "input",
    "format",
    "nu",
    "kappa",
    "sigma2",
    "noise2",
    "f-cross",
    "f-prior",
    "amortize-grid",
    "solver",
    "sgd-iters",
    "sgd-step",
    "sgd-batch",
    "seed",
    "out",
    "margin",
    "grid",
    "coords",
];

/// Reads `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_settings(text: &str, origin: &Path) -> Result<Settings> {
    let mut out = Settings::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let (k, v) = t.split_once('=').ok_or_else(|| Error::Data {
            path: origin.into(),
            line: i + 1,
            message: format!("expected key=value, got {t:?}"),
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn load_settings(path: &Path) -> Result<Settings> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Config(format!("config file {} does not exist", path.display())),
        _ => Error::io(path, e),
    })?;
    parse_settings(&text, path)
}

/// Coordinates used for written geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coords {
    Raw,
    Torus,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: PathBuf,
    pub format: CloudFormat,
    pub hyperparameters: Hyperparameters,
    pub posterior: PosteriorConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub margin: f64,
    /// Contouring grid nodes per axis.
    pub grid: usize,
    pub coords: Coords,
}

fn parse_num<T: std::str::FromStr>(s: &Settings, key: &str) -> Result<Option<T>> {
    s.get(key)
        .map(|v| {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
        })
        .transpose()
}

impl RunConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        if let Some(k) = s.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown setting {k:?}")));
        }
        let input = PathBuf::from(s.get("input").ok_or_else(|| Error::Config("missing input path".into()))?);
        if !input.is_file() {
            return Err(Error::Input(format!("input {} does not exist", input.display())));
        }
        let format = match s.get("format") {
            Some(f) => f.parse()?,
            None => CloudFormat::from_path(&input).ok_or_else(|| {
                Error::Config(format!("cannot infer format of {}; pass --format", input.display()))
            })?,
        };

        let nu = parse_num(s, "nu")?.unwrap_or(1.5);
        let kappa: Vec<f64> = match s.get("kappa") {
            Some(v) => v
                .split(',')
                .map(|t| t.trim().parse().map_err(|_| Error::Config(format!("invalid kappa {v:?}"))))
                .collect::<Result<_>>()?,
            None => vec![0.04],
        };
        let kappa = match kappa.len() {
            1 => vec![kappa[0]; 3],
            3 => kappa,
            n => return Err(Error::Config(format!("kappa takes 1 or 3 values, got {n}"))),
        };
        let sigma2 = parse_num(s, "sigma2")?.unwrap_or(1.0);
        let noise2 = parse_num(s, "noise2")?.unwrap_or(1e-4 * sigma2);
        let hyperparameters = Hyperparameters::new(nu, kappa, sigma2, noise2)?;
        if hyperparameters.nu.nu() < 1.5 {
            log::warn!("nu = 1/2 gives a non-differentiable prior; reconstructions expect nu >= 3/2");
        }

        let seed = parse_num(s, "seed")?.unwrap_or(0);
        let solver = match s.get("solver").map(String::as_str) {
            None | Some("exact") => SolverChoice::Exact,
            Some("sgd") => {
                let mut c = SgdConfig {
                    seed,
                    ..SgdConfig::default()
                };
                if let Some(n) = parse_num(s, "sgd-iters")? {
                    c.iterations = n;
                }
                if let Some(v) = parse_num(s, "sgd-step")? {
                    c.step_size = v;
                }
                if let Some(v) = parse_num(s, "sgd-batch")? {
                    c.batch_size = v;
                }
                SolverChoice::Sgd(c)
            }
            Some(other) => return Err(Error::Config(format!("unknown solver {other:?} (expected exact or sgd)"))),
        };
        let amortize_grid = match s.get("amortize-grid").map(String::as_str) {
            Some("off") | Some("none") => None,
            Some(_) => parse_num(s, "amortize-grid")?,
            None => Some(50),
        };
        let posterior = PosteriorConfig {
            f_cross: parse_num(s, "f-cross")?.unwrap_or(50),
            f_prior: parse_num(s, "f-prior")?.unwrap_or(20),
            amortize_grid,
            solver,
            path: None,
        };
        posterior.validate()?;

        let margin = parse_num(s, "margin")?.unwrap_or(io::DEFAULT_MARGIN);
        if !(margin > 0.0 && margin < 0.5) {
            return Err(Error::Config(format!("margin must lie in (0, 1/2), got {margin}")));
        }
        let grid = parse_num(s, "grid")?.unwrap_or(64);
        if grid < 2 {
            return Err(Error::Config(format!("grid must be >= 2, got {grid}")));
        }
        let coords = match s.get("coords").map(String::as_str) {
            None | Some("raw") => Coords::Raw,
            Some("torus") => Coords::Torus,
            Some(other) => return Err(Error::Config(format!("unknown coords {other:?} (expected raw or torus)"))),
        };
        Ok(Self {
            input,
            format,
            hyperparameters,
            posterior,
            seed,
            out: PathBuf::from(s.get("out").map(String::as_str).unwrap_or("out")),
            margin,
            grid,
            coords,
        })
    }
}

/// A fitted model and the map from raw to torus coordinates.
pub struct Session {
    pub config: RunConfig,
    pub model: PosteriorModel,
    pub transform: Transform,
}

impl Session {
    pub fn open(config: RunConfig) -> Result<Self> {
        let cloud = io::load_cloud(&config.input, config.format)?;
        let cloud = io::normalize_to_torus(&cloud, config.margin)?;
        log::info!("loaded {} oriented points from {}", cloud.len(), config.input.display());
        let system = ObservationSystem::new(
            cloud.torus_point_set(),
            cloud.normal_set(),
            config.hyperparameters.clone(),
        )?;
        let t0 = Instant::now();
        let model = PosteriorModel::build(system, config.posterior.clone())?;
        let path = match model.default_path() {
            EvalPath::Direct => "direct",
            EvalPath::Amortized => "amortized",
        };
        log::info!("posterior built in {:.2}s; scattered queries use the {path} path", t0.elapsed().as_secs_f64());
        Ok(Self {
            transform: cloud.transform,
            config,
            model,
        })
    }

    fn out_path(&self, name: &str) -> Result<PathBuf> {
        let dir = &self.config.out;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(dir.join(name))
    }

    fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::cube(0.0, 1.0, self.config.grid)
    }

    fn export_mesh(&self, mut mesh: TriangleMesh) -> TriangleMesh {
        if self.config.coords == Coords::Raw {
            let t = self.transform;
            mesh.map_vertices(|v| t.invert(v));
        }
        mesh
    }

    fn export_grid(&self, grid: ScalarFieldGrid) -> Result<ScalarFieldGrid> {
        if self.config.coords == Coords::Torus {
            return Ok(grid);
        }
        let s = grid.spec();
        let t = self.transform;
        let spec = GridSpec {
            origin: t.invert(s.origin),
            spacing: std::array::from_fn(|a| s.spacing[a] / t.scale),
            dims: s.dims,
        };
        ScalarFieldGrid::new(spec, grid.values().to_vec())
    }

    fn write_mesh(&self, mesh: TriangleMesh, name: &str) -> Result<PathBuf> {
        let path = self.out_path(name)?;
        self.export_mesh(mesh).save_obj(&path)?;
        Ok(path)
    }

    fn write_grid(&self, grid: ScalarFieldGrid, name: &str) -> Result<PathBuf> {
        let path = self.out_path(name)?;
        io::save_grid(&self.export_grid(grid)?, &path)?;
        Ok(path)
    }

    fn to_torus(&self, p: [f64; 3]) -> [f64; 3] {
        match self.config.coords {
            Coords::Raw => self.transform.apply(p),
            Coords::Torus => p,
        }
    }

    fn length_scale(&self) -> f64 {
        match self.config.coords {
            Coords::Raw => self.transform.scale,
            Coords::Torus => 1.0,
        }
    }

    /// Posterior mean grid and its zero-level mesh.
    pub fn reconstruct(&self) -> Result<Vec<PathBuf>> {
        let grid = sample_field(&self.model, &self.grid_spec()?)?;
        let mesh = marching_cubes(&grid, 0.0);
        log::info!("mean mesh: {} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len());
        Ok(vec![self.write_grid(grid, "mean.grid")?, self.write_mesh(mesh, "mesh.obj")?])
    }

    /// One mesh (and optionally one grid) per posterior sample.
    pub fn sample(&self, n_samples: usize, write_grids: bool) -> Result<Vec<PathBuf>> {
        let pool = SamplePool::draw(&self.model, n_samples, self.config.seed)?;
        let spec = self.grid_spec()?;
        let mut written = Vec::new();
        for (k, s) in pool.samples().iter().enumerate() {
            let grid = sample_field(s, &spec)?;
            written.push(self.write_mesh(marching_cubes(&grid, 0.0), &format!("sample_{k:03}.obj"))?);
            if write_grids {
                written.push(self.write_grid(grid, &format!("sample_{k:03}.grid"))?);
            }
        }
        Ok(written)
    }

    pub fn hitbox(&self, eta: f64) -> Result<Vec<PathBuf>> {
        let grid = sample_field(
            &Hitbox {
                model: &self.model,
                eta,
            },
            &self.grid_spec()?,
        )?;
        Ok(vec![self.write_mesh(marching_cubes(&grid, 0.0), "hitbox.obj")?])
    }

    pub fn query(&self, query: &Query) -> Result<PathBuf> {
        let result = match query {
            Query::Occupancy { probes } => {
                let raw = read_rows::<3>(probes)?;
                let ps = PointSet::from_points3(&raw.iter().map(|&p| self.to_torus(p)).collect::<Vec<_>>());
                let est = queries::occupancy_many(&self.model, &ps)?;
                QueryOutput::Occupancy {
                    probes: raw.into_iter().zip(est).map(|(point, estimate)| PointEstimate { point, estimate }).collect(),
                }
            }
            Query::Collision { probes, mode, n_samples } => {
                let raw = read_rows::<3>(probes)?;
                let ps = PointSet::from_points3(&raw.iter().map(|&p| self.to_torus(p)).collect::<Vec<_>>());
                let estimate = queries::collision_probability(&self.model, &ps, *mode, *n_samples, self.config.seed)?;
                QueryOutput::Collision { mode: *mode, estimate }
            }
            Query::Transmittance { rays, n_samples } => {
                let rays = self.read_rays(rays)?;
                let pool = SamplePool::draw(&self.model, *n_samples, self.config.seed)?;
                let mut out = Vec::new();
                for ray in &rays {
                    let curve = queries::transmittance_with_pool(&pool, ray)?;
                    let scale = self.length_scale();
                    out.push(
                        curve
                            .into_iter()
                            .map(|(t, tr)| TransmittancePoint {
                                t: t / scale,
                                transmittance: tr,
                            })
                            .collect(),
                    );
                }
                QueryOutput::Transmittance {
                    n_samples: *n_samples,
                    rays: out,
                }
            }
            Query::TotalUncertainty { region, n_points } => {
                let region = match region {
                    Some(r) => Aabb {
                        lo: self.to_torus([r[0], r[1], r[2]]).to_vec(),
                        hi: self.to_torus([r[3], r[4], r[5]]).to_vec(),
                    },
                    None => Aabb {
                        lo: vec![self.config.margin; 3],
                        hi: vec![1.0 - self.config.margin; 3],
                    },
                };
                let mut estimate = queries::total_uncertainty(&self.model, &region, *n_points, self.config.seed)?;
                let vol = self.length_scale().powi(3);
                estimate.value /= vol;
                estimate.std_error /= vol;
                QueryOutput::TotalUncertainty { estimate }
            }
        };
        let path = self.out_path("query.json")?;
        write_json(&path, &result)?;
        Ok(path)
    }

    /// Rays ranked by decreasing score: the most uncertain view comes first.
    pub fn next_view(&self, rays: &Path, eps: f64, n_samples: usize) -> Result<PathBuf> {
        let rays = self.read_rays(rays)?;
        let pool = SamplePool::draw(&self.model, n_samples, self.config.seed)?;
        let scale = self.length_scale();
        let mut ranked = Vec::with_capacity(rays.len());
        for (index, ray) in rays.iter().enumerate() {
            let mut e = queries::next_view_with_pool(&pool, ray, eps)?;
            e.value /= scale;
            e.std_error /= scale;
            ranked.push(RankedRay { index, score: e });
        }
        ranked.sort_by(|a, b| b.score.value.total_cmp(&a.score.value).then(a.index.cmp(&b.index)));
        let path = self.out_path("next_view.json")?;
        write_json(&path, &NextViewOutput { eps, ranked })?;
        Ok(path)
    }

    fn read_rays(&self, path: &Path) -> Result<Vec<Ray>> {
        let scale = self.length_scale();
        read_rows::<8>(path)?
            .into_iter()
            .map(|r| {
                Ray::new(
                    self.to_torus([r[0], r[1], r[2]]).to_vec(),
                    vec![r[3], r[4], r[5]],
                    r[6] * scale,
                    r[7] * scale,
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub enum Query {
    Occupancy { probes: PathBuf },
    Collision { probes: PathBuf, mode: CollisionMode, n_samples: usize },
    Transmittance { rays: PathBuf, n_samples: usize },
    TotalUncertainty { region: Option<[f64; 6]>, n_points: usize },
}

#[derive(Serialize)]
struct PointEstimate {
    point: [f64; 3],
    #[serde(flatten)]
    estimate: QueryEstimate,
}

#[derive(Serialize)]
struct TransmittancePoint {
    t: f64,
    transmittance: f64,
}

#[derive(Serialize)]
#[serde(tag = "query", rename_all = "kebab-case")]
enum QueryOutput {
    Occupancy { probes: Vec<PointEstimate> },
    Collision { mode: CollisionMode, estimate: QueryEstimate },
    Transmittance { n_samples: usize, rays: Vec<Vec<TransmittancePoint>> },
    TotalUncertainty { estimate: QueryEstimate },
}

#[derive(Serialize)]
struct RankedRay {
    index: usize,
    score: QueryEstimate,
}

#[derive(Serialize)]
struct NextViewOutput {
    eps: f64,
    ranked: Vec<RankedRay>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Whitespace-separated rows of exactly `K` numbers; `#` starts a comment line.
pub fn read_rows<const K: usize>(path: &Path) -> Result<Vec<[f64; K]>> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Input(format!("{} does not exist", path.display())),
        _ => Error::io(path, e),
    })?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Data {
            path: path.into(),
            line: i + 1,
            message,
        };
        let vals: Vec<f64> = t
            .split_whitespace()
            .map(|w| w.parse::<f64>().map_err(|_| err(format!("invalid number {w:?}"))))
            .collect::<Result<_>>()?;
        if vals.len() != K || vals.iter().any(|v| !v.is_finite()) {
            return Err(err(format!("expected {K} finite values, found {}", vals.len())));
        }
        rows.push(std::array::from_fn(|k| vals[k]));
    }
    if rows.is_empty() {
        return Err(Error::Input(format!("{} contains no rows", path.display())));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    OutputSize,
    Lengthscale,
    Amortization,
}

impl std::str::FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "output-size" => Ok(Self::OutputSize),
            "lengthscale" => Ok(Self::Lengthscale),
            "amortization" => Ok(Self::Amortization),
            _ => Err(Error::Config(format!(
                "unknown sweep {s:?} (expected output-size, lengthscale or amortization)"
            ))),
        }
    }
}

fn random_points(n: usize, seed: u64, lo: f64, hi: f64) -> PointSet {
    use rand::{Rng, SeedableRng};
    let mut g = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let coords = (0..3 * n).map(|_| g.random_range(lo..hi)).collect();
    PointSet::new(3, coords).expect("coordinate count is a multiple of 3")
}

/// Timing and accuracy sweeps written as CSV (`sweep,parameter,seconds,value`).
///
/// `value` is deterministic (a checksum or an error); `seconds` is wall time.
pub fn bench(config: &RunConfig, sweep: Sweep) -> Result<PathBuf> {
    let mut csv = String::from("sweep,parameter,seconds,value\n");
    let probe_box = (config.margin, 1.0 - config.margin);
    match sweep {
        Sweep::OutputSize => {
            let session = Session::open(config.clone())?;
            for m in [10usize, 100, 1000, 10000] {
                let x = random_points(m, config.seed, probe_box.0, probe_box.1);
                let t0 = Instant::now();
                let mean = session.model.mean(&x)?;
                let secs = t0.elapsed().as_secs_f64();
                let _ = writeln!(csv, "output-size,{m},{secs:.6},{:e}", mean.iter().sum::<f64>());
            }
        }
        Sweep::Lengthscale => {
            let x = random_points(1000, config.seed, probe_box.0, probe_box.1);
            for kappa in [0.04, 0.03, 0.02, 0.01] {
                let mut c = config.clone();
                c.hyperparameters.kappa = vec![kappa; 3];
                let t0 = Instant::now();
                let session = Session::open(c)?;
                let mean = session.model.mean(&x)?;
                let secs = t0.elapsed().as_secs_f64();
                let _ = writeln!(csv, "lengthscale,{kappa},{secs:.6},{:e}", mean.iter().sum::<f64>());
            }
        }
        Sweep::Amortization => {
            let hp = &config.hyperparameters;
            let freqs = FrequencySet::new(config.posterior.f_cross as i64, 3, true)?;
            let direct = CrossCovariance::new(hp, &freqs)?;
            let offsets = random_points(2000, config.seed, -0.5, 0.5);
            let mut want = vec![vec![0.0; 3]; offsets.len()];
            let mut scale = 0.0f64;
            for (w, d) in want.iter_mut().zip(offsets.iter()) {
                direct.values_at_offset(d, w);
                scale = w.iter().fold(scale, |s, v| s.max(v.abs()));
            }
            for grid_n in [5usize, 10, 20, 40] {
                let t0 = Instant::now();
                let table = AmortizationTable::build(hp, &freqs, grid_n)?;
                let secs = t0.elapsed().as_secs_f64();
                let mut got = vec![0.0; 3];
                let mut err = 0.0f64;
                for (w, d) in want.iter().zip(offsets.iter()) {
                    table.lookup(d, &mut got);
                    err = got.iter().zip(w).fold(err, |e, (g, v)| e.max((g - v).abs()));
                }
                let _ = writeln!(csv, "amortization,{grid_n},{secs:.6},{:e}", err / scale);
            }
        }
    }
    std::fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
    let path = config.out.join("bench.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
