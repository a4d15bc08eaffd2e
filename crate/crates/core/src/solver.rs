//! The single kernel linear system `(K + noise2 I) alpha = b`.
//!
//! Every component of the normal field shares one kernel, so the `dN x dN`
//! system splits into `d` independent `N x N` systems with the same matrix.
//! The matrix is assembled and factorized once and reused for every
//! right-hand side, including those of posterior samples.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{Hyperparameters, ProductKernel};
use crate::points::PointSet;
use crate::rng;

/// Oriented observations `(x_a, v_a)` together with the kernel hyperparameters.
#[derive(Debug, Clone)]
pub struct ObservationSystem {
    points: PointSet,
    normals: PointSet,
    hp: Hyperparameters,
}

impl ObservationSystem {
    /// Points are reduced into `[0, 1)^d`.
    pub fn new(points: PointSet, normals: PointSet, hp: Hyperparameters) -> Result<Self> {
        hp.validate()?;
        points.check_dim(hp.dim())?;
        normals.check_dim(hp.dim())?;
        if points.is_empty() {
            return Err(Error::Input("observation system needs at least one point".into()));
        }
        if points.len() != normals.len() {
            return Err(Error::Input(format!(
                "{} points but {} normals",
                points.len(),
                normals.len()
            )));
        }
        Ok(Self {
            points: points.wrapped(),
            normals,
            hp,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.hp.dim()
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn normals(&self) -> &PointSet {
        &self.normals
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    /// Observed normals as `d` blocks of `N` values.
    pub fn rhs(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.normals.iter().map(|v| v[i]).collect())
            .collect()
    }

    pub(crate) fn check_rhs(&self, rhs: &[Vec<f64>]) -> Result<()> {
        if rhs.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: rhs.len(),
            });
        }
        if let Some(b) = rhs.iter().find(|b| b.len() != self.len()) {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: b.len(),
            });
        }
        Ok(())
    }
}

/// Kernel Gram matrix shared by every component block.
#[derive(Debug, Clone)]
pub struct Gram {
    matrix: DMatrix<f64>,
    dim: usize,
}

impl Gram {
    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn blocks(&self) -> usize {
        self.dim
    }

    /// Matrix of component `i`; every component returns the same storage.
    pub fn block(&self, i: usize) -> &DMatrix<f64> {
        assert!(i < self.dim, "component {i} out of range");
        &self.matrix
    }

    pub fn shared(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

pub fn assemble_gram(system: &ObservationSystem) -> Gram {
    let n = system.len();
    let kernel = ProductKernel::new(&system.hp);
    let pts = &system.points;
    let mut data = vec![0.0; n * n];
    // column-major: column j holds k(x_i, x_j) for i <= j
    data.par_chunks_mut(n).enumerate().for_each(|(j, col)| {
        let xj = pts.point(j);
        for (i, c) in col.iter_mut().enumerate().take(j + 1) {
            *c = kernel.value(pts.point(i), xj);
        }
    });
    let mut matrix = DMatrix::from_vec(n, n, data);
    for j in 0..n {
        for i in j + 1..n {
            matrix[(i, j)] = matrix[(j, i)];
        }
    }
    Gram {
        matrix,
        dim: system.dim(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverTag {
    Exact,
    Iterative,
}

/// Solution of the system for `d` right-hand-side blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresenterWeights {
    pub alpha: Vec<Vec<f64>>,
    /// Largest relative residual `|A alpha - b| / |b|` over the blocks.
    pub residual_norm: f64,
    pub solver: SolverTag,
}

impl RepresenterWeights {
    pub fn zeros(dim: usize, n: usize, solver: SolverTag) -> Self {
        Self {
            alpha: vec![vec![0.0; n]; dim],
            residual_norm: 0.0,
            solver,
        }
    }
}

fn relative_residual(a: &DMatrix<f64>, alpha: &[f64], b: &[f64]) -> f64 {
    let bn = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if bn == 0.0 {
        return alpha.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    let r = a * DVector::from_column_slice(alpha) - DVector::from_column_slice(b);
    r.norm() / bn
}

/// Dense Cholesky factorization of `K + (noise2 + jitter) I`.
#[derive(Debug, Clone)]
pub struct ExactSolver {
    system_matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
    dim: usize,
}

/// Jitter multiples of `sigma2` tried after a plain factorization fails.
pub const JITTER_LADDER: [f64; 3] = [1e-10, 1e-8, 1e-6];

impl ExactSolver {
    pub fn new(system: &ObservationSystem, gram: &Gram) -> Result<Self> {
        let n = gram.size();
        let base = gram.shared() + DMatrix::identity(n, n) * system.hp.noise2;
        let mut tried = Vec::new();
        for jitter in std::iter::once(0.0).chain(JITTER_LADDER.iter().map(|j| j * system.hp.sigma2)) {
            let m = if jitter > 0.0 {
                tried.push(jitter);
                &base + DMatrix::identity(n, n) * jitter
            } else {
                base.clone()
            };
            if let Some(chol) = Cholesky::new(m.clone()) {
                if jitter > 0.0 {
                    log::warn!("gram factorization needed jitter {jitter:.1e}");
                }
                return Ok(Self {
                    system_matrix: m,
                    chol,
                    jitter,
                    dim: gram.blocks(),
                });
            }
        }
        Err(Error::Factorization {
            block: 0,
            jitters: tried,
        })
    }

    /// Jitter added on top of the noise to obtain a factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.system_matrix
    }

    /// Lower Cholesky factor; entries above the diagonal are unspecified.
    pub(crate) fn factor_l(&self) -> &DMatrix<f64> {
        self.chol.l_dirty()
    }

    pub fn solve_block(&self, b: &[f64]) -> Vec<f64> {
        self.chol
            .solve(&DVector::from_column_slice(b))
            .as_slice()
            .to_vec()
    }

    /// Solve with a matrix of right-hand sides (one per column).
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve(&self, rhs: &[Vec<f64>]) -> RepresenterWeights {
        debug_assert_eq!(rhs.len(), self.dim);
        let alpha: Vec<Vec<f64>> = rhs.iter().map(|b| self.solve_block(b)).collect();
        let residual_norm = alpha
            .iter()
            .zip(rhs)
            .map(|(a, b)| relative_residual(&self.system_matrix, a, b))
            .fold(0.0, f64::max);
        RepresenterWeights {
            alpha,
            residual_norm,
            solver: SolverTag::Exact,
        }
    }
}

pub fn solve_exact(system: &ObservationSystem, rhs: &[Vec<f64>]) -> Result<RepresenterWeights> {
    system.check_rhs(rhs)?;
    let gram = assemble_gram(system);
    Ok(ExactSolver::new(system, &gram)?.solve(rhs))
}

/// Settings of the minibatch stochastic-gradient solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    /// Multiplier on the block-preconditioned gradient step, in `(0, 2)`.
    pub step_size: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Stop early once the relative residual of the current iterate is below this.
    pub tolerance: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            step_size: 1.0,
            batch_size: 64,
            iterations: 5000,
            seed: 0,
            tolerance: 1e-6,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size < 2.0) {
            return Err(Error::Config(format!(
                "sgd step size must lie in (0, 2), got {}",
                self.step_size
            )));
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(Error::Config(
                "sgd batch size and iteration budget must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Result of [`SgdSolver::solve`] with its residual trace.
#[derive(Debug, Clone)]
pub struct SgdReport {
    pub weights: RepresenterWeights,
    /// `(iteration, residual of current iterate, residual of averaged iterate)`.
    pub history: Vec<(usize, f64, f64)>,
    pub iterations: usize,
}

/// Minibatch stochastic gradient descent on `1/2 a^T A a - a^T b`.
///
/// Each step draws a batch `B` of rows without replacement and moves the
/// batch coordinates along the stochastic gradient `r_B = b_B - (A a)_B`,
/// preconditioned by the inverse of the batch block `A_BB`. The residual is
/// maintained exactly by a rank-`|B|` update. Iterates after the first tenth of
/// the budget are Polyak-averaged.
#[derive(Debug, Clone)]
pub struct SgdSolver {
    matrix: DMatrix<f64>,
    config: SgdConfig,
}

impl SgdSolver {
    pub fn new(system: &ObservationSystem, gram: &Gram, config: &SgdConfig) -> Result<Self> {
        config.validate()?;
        let n = gram.size();
        Ok(Self {
            matrix: gram.shared() + DMatrix::identity(n, n) * system.hp.noise2,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    pub fn solve(&self, rhs: &[Vec<f64>]) -> Result<SgdReport> {
        self.solve_seeded(rhs, self.config.seed)
    }

    /// Same as [`solve`](Self::solve) with the batch sequence drawn from `seed`.
    pub fn solve_seeded(&self, rhs: &[Vec<f64>], seed: u64) -> Result<SgdReport> {
        let cfg = &self.config;
        let n = self.matrix.nrows();
        let d = rhs.len();
        let a = &self.matrix;
        let b = DMatrix::from_fn(n, d, |r, c| rhs[c][r]);
        let bnorm: Vec<f64> = (0..d).map(|c| b.column(c).norm()).collect();
        let rel = |r: &DMatrix<f64>| -> f64 {
            (0..d)
                .map(|c| {
                    let rn = r.column(c).norm();
                    if bnorm[c] > 0.0 {
                        rn / bnorm[c]
                    } else {
                        rn
                    }
                })
                .fold(0.0, f64::max)
        };
        let batch = cfg.batch_size.min(n);
        let mut alpha = DMatrix::<f64>::zeros(n, d);
        let mut resid = b.clone();
        let mut avg = DMatrix::<f64>::zeros(n, d);
        let mut avg_count = 0usize;
        let avg_start = cfg.iterations / 10;
        let every = (cfg.iterations / 100).max(1);
        let mut history = Vec::new();
        let mut best = rel(&resid);
        let mut g = rng::stream(seed, rng::STREAM_SGD);
        let mut done = cfg.iterations;
        if best == 0.0 {
            done = 0;
        }
        for t in 0..done {
            let rows = index::sample(&mut g, n, batch).into_vec();
            let block = DMatrix::from_fn(batch, batch, |p, q| a[(rows[p], rows[q])]);
            let rb = DMatrix::from_fn(batch, d, |p, c| resid[(rows[p], c)]);
            let delta = match Cholesky::new(block) {
                Some(ch) => ch.solve(&rb) * cfg.step_size,
                None => return Err(Error::Numerical("minibatch block is not positive definite".into())),
            };
            for (p, &row) in rows.iter().enumerate() {
                for c in 0..d {
                    alpha[(row, c)] += delta[(p, c)];
                }
            }
            // r -= A[:, B] delta
            for (p, &row) in rows.iter().enumerate() {
                let col = a.column(row);
                for c in 0..d {
                    let dv = delta[(p, c)];
                    if dv != 0.0 {
                        resid.column_mut(c).axpy(-dv, &col, 1.0);
                    }
                }
            }
            if t >= avg_start {
                avg_count += 1;
                let w = 1.0 / avg_count as f64;
                avg = &avg * (1.0 - w) + &alpha * w;
            }
            if (t + 1) % every == 0 || t + 1 == done {
                // refresh to keep the incremental residual from drifting
                resid = &b - a * &alpha;
                let current = rel(&resid);
                if !current.is_finite() || current > 10.0 * best.max(f64::MIN_POSITIVE) && t > 0 {
                    return Err(Error::Divergence {
                        iteration: t + 1,
                        residual: current,
                        best,
                    });
                }
                best = best.min(current);
                let averaged = if avg_count > 0 {
                    rel(&(&b - a * &avg))
                } else {
                    current
                };
                history.push((t + 1, current, averaged));
                if current <= cfg.tolerance {
                    done = t + 1;
                    break;
                }
            }
        }
        let current_res = rel(&(&b - a * &alpha));
        let (final_alpha, residual_norm) = if avg_count > 0 {
            let avg_res = rel(&(&b - a * &avg));
            if avg_res < current_res {
                (avg, avg_res)
            } else {
                (alpha, current_res)
            }
        } else {
            (alpha, current_res)
        };
        Ok(SgdReport {
            weights: RepresenterWeights {
                alpha: (0..d).map(|c| final_alpha.column(c).iter().copied().collect()).collect(),
                residual_norm,
                solver: SolverTag::Iterative,
            },
            history,
            iterations: done,
        })
    }
}

pub fn solve_sgd(
    system: &ObservationSystem,
    rhs: &[Vec<f64>],
    config: &SgdConfig,
) -> Result<RepresenterWeights> {
    system.check_rhs(rhs)?;
    let gram = assemble_gram(system);
    Ok(SgdSolver::new(system, &gram, config)?.solve(rhs)?.weights)
}
