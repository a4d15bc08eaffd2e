//! Posterior of the implicit function given an oriented point cloud.
//!
//! With representer weights `alpha = (K + noise2 I)^-1 v`, the posterior mean
//! is `mu(x) = sum_{a,i} k_{f,v_i}(x, x_a) alpha_{a,i} - c`, the covariance is
//! `k_f(x, y) - K_{f(x) v} (K + noise2 I)^-1 K_{v f(y)}`, and posterior samples
//! are drawn pathwise: `f(x) + K_{f(x) v} (K + noise2 I)^-1 (v - v_prior(X) - eps) - c`
//! for a joint prior draw `(f, v_prior)` and noise `eps`. Here `v` is the
//! inward normal field (the negated input normals), which puts `f > 0` inside.
//!
//! Direct evaluation folds the weights into one Fourier coefficient array
//! `c(n) = sum_i w_i(n) sum_a alpha_{a,i} e^{-2 pi i <n, x_a>}`, so the mean at
//! any point is a single series `Im sum_n c(n) e^{2 pi i <n, x>}`. Amortized
//! evaluation instead interpolates the cross-covariance from a table, costing
//! `O(N)` per query point.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::instrument;
use crate::kernels::Hyperparameters;
use crate::points::PointSet;
use crate::rng;
use crate::solver::{
    assemble_gram, ExactSolver, ObservationSystem, RepresenterWeights, SgdConfig, SgdSolver,
};
use crate::spectral::series::{adjoint_points, eval_grid, eval_points, point_phases};
use crate::spectral::{
    AmortizationTable, CrossCovariance, FrequencySet, PriorCoefficients, PriorDraw, PriorFKernel,
    Spectrum,
};

/// How the cross-covariance between query points and data is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPath {
    /// Truncated Fourier series, exact up to truncation.
    Direct,
    /// Multilinear interpolation in the amortization table.
    Amortized,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolverChoice {
    Exact,
    Sgd(SgdConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorConfig {
    /// Per-axis truncation of the cross-covariance and prior kernel of `f`.
    pub f_cross: usize,
    /// Per-axis truncation of prior draws.
    pub f_prior: usize,
    /// Build an amortization table with this many nodes per axis.
    pub amortize_grid: Option<usize>,
    pub solver: SolverChoice,
    /// Path for scattered evaluations; `None` picks one (see [`PosteriorModel::default_path`]).
    pub path: Option<EvalPath>,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        Self {
            f_cross: 50,
            f_prior: 20,
            amortize_grid: Some(50),
            solver: SolverChoice::Exact,
            path: None,
        }
    }
}

impl PosteriorConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(g) = self.amortize_grid {
            if g < 2 {
                return Err(Error::Config(format!("amortization grid must be >= 2, got {g}")));
            }
        }
        if self.f_cross == 0 || self.f_prior == 0 {
            return Err(Error::Config("frequency bounds must be >= 1".into()));
        }
        if let SolverChoice::Sgd(cfg) = &self.solver {
            cfg.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug)]
enum LinearSolver {
    Exact(ExactSolver),
    Sgd(SgdSolver),
}

impl LinearSolver {
    fn solve(&self, rhs: &[Vec<f64>], seed: u64) -> Result<RepresenterWeights> {
        match self {
            LinearSolver::Exact(s) => Ok(s.solve(rhs)),
            LinearSolver::Sgd(s) => {
                let seed = seed.wrapping_add(s.config().seed);
                Ok(s.solve_seeded(rhs, seed)?.weights)
            }
        }
    }

    /// `rows_x^T A^-1 rows_y` where the columns of `rows_*` are right-hand sides.
    fn schur(&self, rows_x: &DMatrix<f64>, rows_y: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
        match self {
            LinearSolver::Exact(s) => {
                let l = s.factor_l();
                let zx = l.solve_lower_triangular(rows_x).expect("nonsingular factor");
                Ok(match rows_y {
                    None => zx.tr_mul(&zx),
                    Some(ry) => {
                        let zy = l.solve_lower_triangular(ry).expect("nonsingular factor");
                        zx.tr_mul(&zy)
                    }
                })
            }
            LinearSolver::Sgd(s) => {
                let cols: Vec<Vec<f64>> = rows_x.column_iter().map(|c| c.iter().copied().collect()).collect();
                let sol = s.solve(&cols)?.weights.alpha;
                let ax = DMatrix::from_fn(rows_x.nrows(), rows_x.ncols(), |r, c| sol[c][r]);
                let ry = rows_y.unwrap_or(rows_x);
                Ok(ry.tr_mul(&ax).transpose())
            }
        }
    }
}

/// Cross-covariance rows `K_{f(X) v}` for fixed query points.
///
/// Entry `(m, a, i)` is `k_{f, v_i}(x_m, x_a)`.
#[derive(Debug, Clone)]
pub struct CrossRows {
    m: usize,
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl CrossRows {
    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn get(&self, m: usize, a: usize, i: usize) -> f64 {
        self.data[(m * self.n + a) * self.dim + i]
    }

    /// `sum_{a,i} K[m, a, i] alpha_i[a]` for every row.
    pub fn apply(&self, weights: &RepresenterWeights) -> Vec<f64> {
        let stride = self.n * self.dim;
        self.data
            .chunks_exact(stride.max(1))
            .take(self.m)
            .map(|row| {
                let mut s = 0.0;
                for a in 0..self.n {
                    for i in 0..self.dim {
                        s += row[a * self.dim + i] * weights.alpha[i][a];
                    }
                }
                s
            })
            .collect()
    }

    /// Component `i` as an `N x M` matrix (one column per query point).
    fn component(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.m, |a, m| self.get(m, a, i))
    }
}

/// Query points with their cross-covariance rows, for evaluating many samples
/// at the same locations.
#[derive(Debug, Clone)]
pub struct Probes {
    points: PointSet,
    rows: CrossRows,
}

impl Probes {
    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn rows(&self) -> &CrossRows {
        &self.rows
    }
}

#[derive(Debug)]
struct Inner {
    system: ObservationSystem,
    config: PosteriorConfig,
    cross: CrossCovariance,
    prior_f: PriorFKernel,
    prior_spectrum: Spectrum,
    solver: LinearSolver,
    weights_mean: RepresenterWeights,
    mean_coeffs: Vec<Complex64>,
    table: Option<AmortizationTable>,
    isovalue: f64,
}

/// Immutable posterior; cheap to clone (shared internally).
#[derive(Debug, Clone)]
pub struct PosteriorModel {
    inner: Arc<Inner>,
}

/// Fold representer weights into the Fourier coefficients of `K_{f(.) v} alpha`.
fn fold_weights(cross: &CrossCovariance, points: &PointSet, alpha: &[Vec<f64>]) -> Vec<Complex64> {
    let dim = cross.dim();
    let amps: Vec<&[f64]> = alpha.iter().map(Vec::as_slice).collect();
    let sums = adjoint_points(&amps, dim, cross.bound(), points.coords());
    let weights = cross.weights();
    let mut c = vec![Complex64::new(0.0, 0.0); sums[0].len()];
    for (s, w) in sums.iter().zip(weights) {
        for ((ci, si), wi) in c.iter_mut().zip(s).zip(w) {
            *ci += si * wi;
        }
    }
    c
}

/// `e^{2 pi i <n, x>}` over the full box from per-axis phases.
fn box_phases(axis: &[Complex64], dim: usize, bound: usize) -> Vec<Complex64> {
    let w = 2 * bound + 1;
    let mut out = vec![Complex64::new(1.0, 0.0)];
    for j in 0..dim {
        let p = &axis[j * w..(j + 1) * w];
        out = out.iter().flat_map(|a| p.iter().map(move |b| a * b)).collect();
    }
    out
}

/// Observed normals point outward. With `lap f = div v`, the gradient of `f`
/// follows `v`, so conditioning on the inward field makes `f` positive inside.
fn inward(normals: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    normals
        .into_iter()
        .map(|b| b.into_iter().map(|x| -x).collect())
        .collect()
}

/// Imaginary part of a series at many points.
fn series_im(coeffs: &[Complex64], dim: usize, bound: usize, x: &PointSet) -> Vec<f64> {
    eval_points(&[coeffs], dim, bound, x.coords())
        .swap_remove(0)
        .into_iter()
        .map(|z| z.im)
        .collect()
}

impl PosteriorModel {
    /// Perform the mean solve and, if configured, build the amortization table.
    pub fn build(system: ObservationSystem, config: PosteriorConfig) -> Result<Self> {
        config.validate()?;
        let table = match config.amortize_grid {
            Some(g) => {
                let freqs = FrequencySet::new(config.f_cross as i64, system.dim(), true)?;
                Some(AmortizationTable::build(system.hyperparameters(), &freqs, g)?)
            }
            None => None,
        };
        Self::assemble(system, config, table)
    }

    /// Like [`build`](Self::build) with a previously built or loaded table.
    pub fn with_table(
        system: ObservationSystem,
        config: PosteriorConfig,
        table: AmortizationTable,
    ) -> Result<Self> {
        config.validate()?;
        if table.hyperparameters() != system.hyperparameters() || table.f_cross() != config.f_cross {
            return Err(Error::Config(
                "amortization table was built for different hyperparameters or truncation".into(),
            ));
        }
        Self::assemble(system, config, Some(table))
    }

    fn assemble(
        system: ObservationSystem,
        config: PosteriorConfig,
        table: Option<AmortizationTable>,
    ) -> Result<Self> {
        let hp = system.hyperparameters().clone();
        let spectrum = Spectrum::new(&hp, config.f_cross);
        let cross = CrossCovariance::from_spectrum(&spectrum);
        let prior_f = PriorFKernel::from_spectrum(&spectrum);
        let prior_spectrum = Spectrum::new(&hp, config.f_prior);
        let gram = assemble_gram(&system);
        let solver = match &config.solver {
            SolverChoice::Exact => LinearSolver::Exact(ExactSolver::new(&system, &gram)?),
            SolverChoice::Sgd(cfg) => LinearSolver::Sgd(SgdSolver::new(&system, &gram, cfg)?),
        };
        let weights_mean = solver.solve(&inward(system.rhs()), 0)?;
        log::info!(
            "mean solve: N = {}, relative residual {:.2e}",
            system.len(),
            weights_mean.residual_norm
        );
        let mean_coeffs = fold_weights(&cross, system.points(), &weights_mean.alpha);
        let raw = series_im(&mean_coeffs, hp.dim(), config.f_cross, system.points());
        let isovalue = raw.iter().sum::<f64>() / raw.len() as f64;
        Ok(Self {
            inner: Arc::new(Inner {
                system,
                config,
                cross,
                prior_f,
                prior_spectrum,
                solver,
                weights_mean,
                mean_coeffs,
                table,
                isovalue,
            }),
        })
    }

    pub fn system(&self) -> &ObservationSystem {
        &self.inner.system
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        self.inner.system.hyperparameters()
    }

    pub fn config(&self) -> &PosteriorConfig {
        &self.inner.config
    }

    pub fn dim(&self) -> usize {
        self.inner.system.dim()
    }

    pub fn weights_mean(&self) -> &RepresenterWeights {
        &self.inner.weights_mean
    }

    pub fn table(&self) -> Option<&AmortizationTable> {
        self.inner.table.as_ref()
    }

    /// Constant subtracted from the raw mean: its average over the data points.
    pub fn isovalue(&self) -> f64 {
        self.inner.isovalue
    }

    pub fn freqs_cross(&self) -> FrequencySet {
        FrequencySet::new(self.inner.config.f_cross as i64, self.dim(), true).expect("valid")
    }

    pub fn freqs_prior(&self) -> FrequencySet {
        FrequencySet::new(self.inner.config.f_prior as i64, self.dim(), true).expect("valid")
    }

    /// Truncated prior variance of `f`.
    pub fn prior_variance(&self) -> f64 {
        self.inner.prior_f.variance()
    }

    /// Path used for scattered evaluations when none is requested.
    ///
    /// Direct evaluation costs `O(L)` per query point and amortized
    /// evaluation `O(2^d d N)`; the table is used when it exists and the
    /// latter is smaller.
    pub fn default_path(&self) -> EvalPath {
        if let Some(p) = self.inner.config.path {
            return p;
        }
        let d = self.dim();
        let lookup_cost = (1usize << d) * d * self.inner.system.len();
        let direct_cost = (2 * self.inner.config.f_cross + 1).pow(d as u32);
        if self.inner.table.is_some() && lookup_cost < direct_cost {
            EvalPath::Amortized
        } else {
            EvalPath::Direct
        }
    }

    fn check_points(&self, x: &PointSet) -> Result<()> {
        x.check_dim(self.dim())
    }

    fn require_table(&self) -> Result<&AmortizationTable> {
        self.inner.table.as_ref().ok_or_else(|| {
            Error::Config("amortized evaluation requested but no table was built".into())
        })
    }

    /// `sum_{a,i} T(x_m - x_a)_i alpha_i[a]` through the table.
    fn amortized_apply(&self, table: &AmortizationTable, x: &PointSet, alpha: &[Vec<f64>]) -> Vec<f64> {
        let d = self.dim();
        let data = self.inner.system.points();
        x.iter()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|xm| {
                let mut off = vec![0.0; d];
                let mut vals = vec![0.0; d];
                let mut s = 0.0;
                for (a, xa) in data.iter().enumerate() {
                    for j in 0..d {
                        off[j] = xm[j] - xa[j];
                    }
                    table.lookup(&off, &mut vals);
                    for i in 0..d {
                        s += vals[i] * alpha[i][a];
                    }
                }
                s
            })
            .collect()
    }

    /// Posterior mean at `x` on the default path.
    pub fn mean(&self, x: &PointSet) -> Result<Vec<f64>> {
        self.mean_with(x, self.default_path())
    }

    pub fn mean_with(&self, x: &PointSet, path: EvalPath) -> Result<Vec<f64>> {
        self.check_points(x)?;
        instrument::record_point_evals(x.len());
        let c = self.inner.isovalue;
        let raw = match path {
            EvalPath::Direct => series_im(&self.inner.mean_coeffs, self.dim(), self.inner.config.f_cross, x),
            EvalPath::Amortized => {
                let table = self.require_table()?;
                self.amortized_apply(table, x, &self.inner.weights_mean.alpha)
            }
        };
        Ok(raw.into_iter().map(|v| v - c).collect())
    }

    /// Posterior mean on the Cartesian product of `axis_nodes` (axis 0 fastest).
    pub fn mean_grid(&self, axis_nodes: &[Vec<f64>]) -> Result<Vec<f64>> {
        if axis_nodes.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: axis_nodes.len(),
            });
        }
        let count: usize = axis_nodes.iter().map(Vec::len).product();
        instrument::record_point_evals(count);
        let c = self.inner.isovalue;
        Ok(eval_grid(&self.inner.mean_coeffs, self.dim(), self.inner.config.f_cross, axis_nodes)
            .into_iter()
            .map(|z| z.im - c)
            .collect())
    }

    /// Cross-covariance rows between `x` and the data.
    pub fn cross_rows(&self, x: &PointSet, path: EvalPath) -> Result<CrossRows> {
        self.check_points(x)?;
        let d = self.dim();
        let data = self.inner.system.points();
        let n = data.len();
        let rows: Vec<Vec<f64>> = match path {
            EvalPath::Direct => {
                // k_{f,v_i}(x_m, x_a) = Im sum_n [-w_i(n) e^{-2 pi i <n, x_m>}] e^{2 pi i <n, x_a>}
                let bound = self.inner.config.f_cross;
                let weights = self.inner.cross.weights();
                x.iter()
                    .map(|xm| {
                        let mut px = Vec::new();
                        point_phases(bound, xm, &mut px);
                        let phase = box_phases(&px, d, bound);
                        let coeffs: Vec<Vec<Complex64>> = weights
                            .iter()
                            .map(|w| w.iter().zip(&phase).map(|(wi, p)| -wi * p.conj()).collect())
                            .collect();
                        let refs: Vec<&[Complex64]> = coeffs.iter().map(Vec::as_slice).collect();
                        let vals = eval_points(&refs, d, bound, data.coords());
                        let mut row = vec![0.0; n * d];
                        for (i, v) in vals.iter().enumerate() {
                            for a in 0..n {
                                row[a * d + i] = v[a].im;
                            }
                        }
                        row
                    })
                    .collect()
            }
            EvalPath::Amortized => {
                let table = self.require_table()?;
                x.iter()
                    .collect::<Vec<_>>()
                    .par_iter()
                    .map(|xm| {
                        let mut off = vec![0.0; d];
                        let mut row = vec![0.0; n * d];
                        for (a, xa) in data.iter().enumerate() {
                            for j in 0..d {
                                off[j] = xm[j] - xa[j];
                            }
                            table.lookup(&off, &mut row[a * d..(a + 1) * d]);
                        }
                        row
                    })
                    .collect()
            }
        };
        Ok(CrossRows {
            m: x.len(),
            n,
            dim: d,
            data: rows.concat(),
        })
    }

    pub fn probes(&self, x: &PointSet, path: EvalPath) -> Result<Probes> {
        Ok(Probes {
            rows: self.cross_rows(x, path)?,
            points: x.clone(),
        })
    }

    /// `sum_i R_x,i^T A^-1 R_y,i`.
    fn schur(&self, rx: &CrossRows, ry: Option<&CrossRows>) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let mut total = DMatrix::zeros(rx.m, ry.map_or(rx.m, |r| r.m));
        for i in 0..d {
            let cx = rx.component(i);
            let part = match ry {
                None => self.inner.solver.schur(&cx, None)?,
                Some(r) => self.inner.solver.schur(&cx, Some(&r.component(i)))?,
            };
            total += part;
        }
        Ok(total)
    }

    /// Posterior covariance `k_{f|v}(x_m, y_k)`, evaluated directly.
    pub fn covariance(&self, x: &PointSet, y: &PointSet) -> Result<DMatrix<f64>> {
        self.check_points(x)?;
        self.check_points(y)?;
        let same = x == y;
        let rx = self.cross_rows(x, EvalPath::Direct)?;
        let ry = if same { None } else { Some(self.cross_rows(y, EvalPath::Direct)?) };
        let s = self.schur(&rx, ry.as_ref())?;
        let prior = &self.inner.prior_f;
        let mut cov = DMatrix::from_fn(x.len(), y.len(), |m, k| {
            prior.value(x.point(m), y.point(k)).expect("checked dimension") - s[(m, k)]
        });
        if same {
            for m in 0..x.len() {
                for k in 0..m {
                    let v = 0.5 * (cov[(m, k)] + cov[(k, m)]);
                    cov[(m, k)] = v;
                    cov[(k, m)] = v;
                }
                cov[(m, m)] = self.check_variance(cov[(m, m)], EvalPath::Direct)?;
            }
        }
        Ok(cov)
    }

    /// Tolerance below zero accepted for a variance before clamping.
    ///
    /// Direct evaluation yields a true Schur complement and only suffers
    /// rounding. Interpolated rows are not exactly consistent with the
    /// kernel matrix, so the amortized path allows a small fraction of the
    /// prior variance.
    pub fn variance_tolerance(&self, path: EvalPath) -> f64 {
        match path {
            EvalPath::Direct => 1e-10 * self.prior_variance().max(1.0),
            EvalPath::Amortized => 1e-2 * self.prior_variance(),
        }
    }

    fn check_variance(&self, v: f64, path: EvalPath) -> Result<f64> {
        let tol = self.variance_tolerance(path);
        if v < -tol || !v.is_finite() {
            return Err(Error::NegativeVariance { value: v, tolerance: tol });
        }
        Ok(v.clamp(0.0, self.prior_variance()))
    }

    /// Posterior variance at `x` on the default path.
    pub fn variance(&self, x: &PointSet) -> Result<Vec<f64>> {
        self.variance_with(x, self.default_path())
    }

    pub fn variance_with(&self, x: &PointSet, path: EvalPath) -> Result<Vec<f64>> {
        let rows = self.cross_rows(x, path)?;
        self.variance_from_rows(&rows, path)
    }

    pub fn variance_from_rows(&self, rows: &CrossRows, path: EvalPath) -> Result<Vec<f64>> {
        instrument::record_point_evals(rows.m);
        let d = self.dim();
        let k0 = self.prior_variance();
        let mut q = vec![0.0; rows.m];
        // process in column blocks to bound memory
        let block = 256;
        for start in (0..rows.m).step_by(block) {
            let cnt = block.min(rows.m - start);
            let sub = CrossRows {
                m: cnt,
                n: rows.n,
                dim: d,
                data: rows.data[start * rows.n * d..(start + cnt) * rows.n * d].to_vec(),
            };
            for i in 0..d {
                let c = sub.component(i);
                match &self.inner.solver {
                    LinearSolver::Exact(s) => {
                        let z = s.factor_l().solve_lower_triangular(&c).expect("nonsingular factor");
                        for (k, col) in z.column_iter().enumerate() {
                            q[start + k] += col.norm_squared();
                        }
                    }
                    LinearSolver::Sgd(_) => {
                        let s = self.inner.solver.schur(&c, None)?;
                        for k in 0..cnt {
                            q[start + k] += s[(k, k)];
                        }
                    }
                }
            }
        }
        q.into_iter().map(|qi| self.check_variance(k0 - qi, path)).collect()
    }

    /// Draw a posterior function sample: one prior draw and one linear solve.
    pub fn sample(&self, seed: u64) -> Result<PosteriorSample> {
        let inner = &self.inner;
        let d = self.dim();
        let n = inner.system.len();
        let hp = inner.system.hyperparameters();
        let coeffs = PriorCoefficients::generate(seed, d, inner.config.f_prior);
        let prior = PriorDraw::from_spectrum(&coeffs, &inner.prior_spectrum, false);
        let vc: Vec<&[Complex64]> = prior.v_coeffs().iter().map(Vec::as_slice).collect();
        let v_prior = eval_points(&vc, d, inner.config.f_prior, inner.system.points().coords());
        let mut eps = vec![0.0; n * d];
        rng::fill_normals(&mut rng::stream(seed, rng::STREAM_NOISE), &mut eps);
        let sd = hp.noise2.sqrt();
        let observed = inner.system.normals();
        let rhs: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                (0..n)
                    .map(|a| -observed.point(a)[i] - v_prior[i][a].re - sd * eps[a * d + i])
                    .collect()
            })
            .collect();
        let weights = inner.solver.solve(&rhs, seed)?;
        Ok(PosteriorSample {
            model: self.clone(),
            seed,
            prior,
            weights,
            coeffs: OnceLock::new(),
        })
    }

    /// Samples for several seeds, drawn in parallel.
    pub fn samples(&self, seeds: &[u64]) -> Result<Vec<PosteriorSample>> {
        seeds.par_iter().map(|&s| self.sample(s)).collect()
    }
}

/// One posterior function sample, evaluable anywhere.
#[derive(Debug)]
pub struct PosteriorSample {
    model: PosteriorModel,
    seed: u64,
    prior: PriorDraw,
    weights: RepresenterWeights,
    coeffs: OnceLock<Vec<Complex64>>,
}

impl PosteriorSample {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &RepresenterWeights {
        &self.weights
    }

    pub fn model(&self) -> &PosteriorModel {
        &self.model
    }

    fn correction_coeffs(&self) -> &[Complex64] {
        self.coeffs.get_or_init(|| {
            let inner = &self.model.inner;
            fold_weights(&inner.cross, inner.system.points(), &self.weights.alpha)
        })
    }

    fn prior_f(&self, x: &PointSet) -> Vec<f64> {
        series_im(self.prior.f_coeffs(), self.prior.dim(), self.prior.bound(), x)
    }

    pub fn evaluate(&self, x: &PointSet) -> Result<Vec<f64>> {
        self.evaluate_with(x, self.model.default_path())
    }

    pub fn evaluate_with(&self, x: &PointSet, path: EvalPath) -> Result<Vec<f64>> {
        let model = &self.model;
        model.check_points(x)?;
        instrument::record_point_evals(x.len());
        let correction = match path {
            EvalPath::Direct => series_im(self.correction_coeffs(), model.dim(), model.inner.config.f_cross, x),
            EvalPath::Amortized => {
                let table = model.require_table()?;
                model.amortized_apply(table, x, &self.weights.alpha)
            }
        };
        let c = model.inner.isovalue;
        Ok(self
            .prior_f(x)
            .into_iter()
            .zip(correction)
            .map(|(f, k)| f + k - c)
            .collect())
    }

    /// Values at precomputed probes.
    pub fn evaluate_probes(&self, probes: &Probes) -> Vec<f64> {
        instrument::record_point_evals(probes.points.len());
        let c = self.model.inner.isovalue;
        self.prior_f(&probes.points)
            .into_iter()
            .zip(probes.rows.apply(&self.weights))
            .map(|(f, k)| f + k - c)
            .collect()
    }

    /// Values on the Cartesian product of `axis_nodes` (axis 0 fastest).
    pub fn evaluate_grid(&self, axis_nodes: &[Vec<f64>]) -> Result<Vec<f64>> {
        let model = &self.model;
        if axis_nodes.len() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                got: axis_nodes.len(),
            });
        }
        instrument::record_point_evals(axis_nodes.iter().map(Vec::len).product());
        let prior = eval_grid(self.prior.f_coeffs(), model.dim(), self.prior.bound(), axis_nodes);
        let corr = eval_grid(self.correction_coeffs(), model.dim(), model.inner.config.f_cross, axis_nodes);
        let c = model.inner.isovalue;
        Ok(prior.iter().zip(&corr).map(|(p, k)| p.im + k.im - c).collect())
    }
}
