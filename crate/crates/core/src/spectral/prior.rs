use num_complex::Complex64;

use super::series::{eval_complex, point_phases};
use super::{FrequencySet, Spectrum};
use crate::error::{Error, Result};
use crate::kernels::Hyperparameters;
use crate::rng;

/// Rank of `n` in the shell enumeration used by [`FrequencySet::shell_ranks`].
fn shell_rank(n: &[i32]) -> u64 {
    let dim = n.len() as u32;
    let r = n.iter().map(|c| c.unsigned_abs() as u64).max().unwrap_or(0);
    if r == 0 {
        return 0;
    }
    let full = 2 * r + 1;
    let hollow = 2 * r - 1;
    let mut rank = hollow.pow(dim);
    let mut hit = false;
    for (j, &nj) in n.iter().enumerate() {
        let rest = dim - 1 - j as u32;
        for m in -(r as i64)..nj as i64 {
            let at_max = m.unsigned_abs() == r;
            rank += if hit || at_max {
                full.pow(rest)
            } else {
                full.pow(rest) - hollow.pow(rest)
            };
        }
        hit |= nj.unsigned_abs() as u64 == r;
    }
    rank
}

/// Standard-normal coefficients `xi_{i,n,j}` of one joint prior draw.
///
/// Coefficient `(i, n)` is the Box-Muller pair produced at word position
/// `4 (rank(n) dim + i)` of the seed's prior stream, where `rank` enumerates
/// frequencies shell by shell. A frequency therefore receives the same
/// coefficients for every truncation bound and can be addressed directly.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorCoefficients {
    seed: Option<u64>,
    dim: usize,
    bound: usize,
    /// `[(pos * dim + i) * 2 + j]` over the full frequency box.
    xi: Vec<f64>,
}

impl PriorCoefficients {
    pub fn generate(seed: u64, dim: usize, bound: usize) -> Self {
        let set = FrequencySet::new(bound as i64, dim, false).expect("valid bound");
        let ranks = set.shell_ranks();
        let total = set.box_len() * dim;
        let mut by_rank = vec![0.0; 2 * total];
        let mut g = rng::stream(seed, rng::STREAM_PRIOR);
        for pair in by_rank.chunks_exact_mut(2) {
            let (a, b) = rng::normal_pair(&mut g);
            pair[0] = a;
            pair[1] = b;
        }
        let mut xi = vec![0.0; 2 * total];
        for (pos, &rank) in ranks.iter().enumerate() {
            let src = 2 * rank as usize * dim;
            xi[2 * pos * dim..2 * (pos + 1) * dim].copy_from_slice(&by_rank[src..src + 2 * dim]);
        }
        Self {
            seed: Some(seed),
            dim,
            bound,
            xi,
        }
    }

    /// Generate the single coefficient pair for `(i, n)` without its predecessors.
    pub fn addressed(seed: u64, n: &[i32], i: usize) -> [f64; 2] {
        let mut g = rng::stream(seed, rng::STREAM_PRIOR);
        let word = 4 * (shell_rank(n) as u128 * n.len() as u128 + i as u128);
        g.set_word_pos(word);
        let (a, b) = rng::normal_pair(&mut g);
        [a, b]
    }

    /// Coefficients supplied by the caller, in the layout of [`as_slice`](Self::as_slice).
    pub fn from_values(dim: usize, bound: usize, xi: Vec<f64>) -> Result<Self> {
        let want = 2 * dim * (2 * bound + 1).pow(dim as u32);
        if xi.len() != want {
            return Err(Error::Input(format!(
                "expected {want} prior coefficients, got {}",
                xi.len()
            )));
        }
        Ok(Self {
            seed: None,
            dim,
            bound,
            xi,
        })
    }

    pub fn zeros(dim: usize, bound: usize) -> Self {
        Self {
            seed: None,
            dim,
            bound,
            xi: vec![0.0; 2 * dim * (2 * bound + 1).pow(dim as u32)],
        }
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bound(&self) -> usize {
        self.bound
    }

    /// Flat layout `[(pos * dim + i) * 2 + j]`, `pos` indexing the full box.
    pub fn as_slice(&self) -> &[f64] {
        &self.xi
    }

    pub fn get(&self, n: &[i32], i: usize) -> Option<[f64; 2]> {
        if n.len() != self.dim || i >= self.dim {
            return None;
        }
        let w = 2 * self.bound + 1;
        let mut pos = 0usize;
        for &c in n {
            if c.unsigned_abs() as usize > self.bound {
                return None;
            }
            pos = pos * w + (c + self.bound as i32) as usize;
        }
        let k = 2 * (pos * self.dim + i);
        Some([self.xi[k], self.xi[k + 1]])
    }

    fn check_covers(&self, freqs: &FrequencySet) -> Result<()> {
        if freqs.dim() != self.dim || freqs.bound() > self.bound {
            return Err(Error::Input(format!(
                "prior coefficients (dim {}, bound {}) do not cover frequency set (dim {}, bound {})",
                self.dim,
                self.bound,
                freqs.dim(),
                freqs.bound()
            )));
        }
        Ok(())
    }

    /// `zeta = xi_1 - i xi_2` for component `i` on the box of `bound`.
    fn zeta(&self, i: usize, bound: usize) -> Vec<Complex64> {
        let set = FrequencySet::new(bound as i64, self.dim, false).expect("valid bound");
        set.box_iter()
            .map(|n| {
                let [a, b] = self.get(&n, i).expect("covered");
                Complex64::new(a, -b)
            })
            .collect()
    }
}

/// A joint prior draw of `(v, f)` ready for evaluation.
///
/// With `zeta = xi_1 - i xi_2`, the fields are
/// `v_i(x) = Re sum_n sqrt(rho(n)) zeta_{i,n} e^{2 pi i <n,x>}` and
/// `f(x) = Im sum_n (sum_i c_i(n) zeta_{i,n}) e^{2 pi i <n,x>}`.
#[derive(Debug, Clone)]
pub struct PriorDraw {
    dim: usize,
    bound: usize,
    v: Vec<Vec<Complex64>>,
    f: Vec<Complex64>,
}

impl PriorDraw {
    pub fn new(coeffs: &PriorCoefficients, hp: &Hyperparameters, freqs: &FrequencySet) -> Result<Self> {
        hp.validate()?;
        if hp.dim() != coeffs.dim {
            return Err(Error::DimensionMismatch {
                expected: hp.dim(),
                got: coeffs.dim,
            });
        }
        coeffs.check_covers(freqs)?;
        Ok(Self::from_spectrum(
            coeffs,
            &Spectrum::new(hp, freqs.bound()),
            freqs.excludes_zero(),
        ))
    }

    /// Build from precomputed spectral weights; `coeffs` must cover `spectrum.bound()`.
    pub(crate) fn from_spectrum(
        coeffs: &PriorCoefficients,
        spectrum: &Spectrum,
        exclude_zero: bool,
    ) -> Self {
        let bound = spectrum.bound();
        let dim = spectrum.dim();
        let centre = spectrum.len() / 2;
        let sqrt_rho: Vec<f64> = spectrum.rho().iter().map(|r| r.sqrt()).collect();
        let mut v = Vec::with_capacity(dim);
        let mut f = vec![Complex64::new(0.0, 0.0); spectrum.len()];
        for i in 0..dim {
            let zeta = coeffs.zeta(i, bound);
            let c = spectrum.f_weights(i);
            for ((acc, z), ci) in f.iter_mut().zip(&zeta).zip(&c) {
                *acc += z * ci;
            }
            let mut vi: Vec<Complex64> = zeta.iter().zip(&sqrt_rho).map(|(z, s)| z * s).collect();
            if exclude_zero {
                vi[centre] = Complex64::new(0.0, 0.0);
            }
            v.push(vi);
        }
        Self { dim, bound, v, f }
    }

    pub(crate) fn v_coeffs(&self) -> &[Vec<Complex64>] {
        &self.v
    }

    pub(crate) fn f_coeffs(&self) -> &[Complex64] {
        &self.f
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bound(&self) -> usize {
        self.bound
    }

    pub(crate) fn eval_f_phases(&self, phases: &[Complex64]) -> f64 {
        eval_complex(&self.f, self.dim, self.bound, phases).im
    }

    pub(crate) fn eval_v_phases(&self, phases: &[Complex64], out: &mut [f64]) {
        for (o, vi) in out.iter_mut().zip(&self.v) {
            *o = eval_complex(vi, self.dim, self.bound, phases).re;
        }
    }

    pub fn f(&self, x: &[f64]) -> f64 {
        let mut ph = Vec::new();
        point_phases(self.bound, x, &mut ph);
        self.eval_f_phases(&ph)
    }

    pub fn v(&self, x: &[f64]) -> Vec<f64> {
        let mut ph = Vec::new();
        point_phases(self.bound, x, &mut ph);
        let mut out = vec![0.0; self.dim];
        self.eval_v_phases(&ph, &mut out);
        out
    }
}

fn check_point(hp: &Hyperparameters, x: &[f64]) -> Result<()> {
    if x.len() != hp.dim() {
        return Err(Error::DimensionMismatch {
            expected: hp.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Evaluate the truncated prior draw of `v` at `x`.
pub fn sample_prior_v(
    coeffs: &PriorCoefficients,
    hp: &Hyperparameters,
    freqs: &FrequencySet,
    x: &[f64],
) -> Result<Vec<f64>> {
    check_point(hp, x)?;
    Ok(PriorDraw::new(coeffs, hp, freqs)?.v(x))
}

/// Evaluate the truncated prior draw of `f` at `x`; `freqs` must exclude zero.
pub fn sample_prior_f(
    coeffs: &PriorCoefficients,
    hp: &Hyperparameters,
    freqs: &FrequencySet,
    x: &[f64],
) -> Result<f64> {
    if !freqs.excludes_zero() && !freqs.is_empty() {
        return Err(Error::Input(
            "the implicit-function series is undefined at n = 0; use a frequency set excluding zero".into(),
        ));
    }
    check_point(hp, x)?;
    Ok(PriorDraw::new(coeffs, hp, freqs)?.f(x))
}

/// Row vector `r` with `f(x) = r . xi` for the flat coefficient layout of
/// [`PriorCoefficients::as_slice`] with bound `freqs.bound()`.
///
/// Lets many draws be evaluated at fixed points as one matrix product.
pub fn f_functional(hp: &Hyperparameters, freqs: &FrequencySet, x: &[f64]) -> Result<Vec<f64>> {
    check_point(hp, x)?;
    let spectrum = Spectrum::new(hp, freqs.bound());
    let dim = hp.dim();
    let c: Vec<Vec<f64>> = (0..dim).map(|i| spectrum.f_weights(i)).collect();
    let mut row = vec![0.0; 2 * dim * spectrum.len()];
    for (pos, n) in freqs.with_zero().iter().enumerate() {
        let t: f64 = n.iter().zip(x).map(|(&a, &b)| a as f64 * b).sum();
        let (s, co) = (std::f64::consts::TAU * t).sin_cos();
        for i in 0..dim {
            row[2 * (pos * dim + i)] = c[i][pos] * s;
            row[2 * (pos * dim + i) + 1] = -c[i][pos] * co;
        }
    }
    Ok(row)
}

/// Row vector `r` with `v_i(x) = r . xi`; see [`f_functional`].
pub fn v_functional(
    hp: &Hyperparameters,
    freqs: &FrequencySet,
    i: usize,
    x: &[f64],
) -> Result<Vec<f64>> {
    check_point(hp, x)?;
    let dim = hp.dim();
    if i >= dim {
        return Err(Error::Input(format!("component {i} out of range for dimension {dim}")));
    }
    let spectrum = Spectrum::new(hp, freqs.bound());
    let mut row = vec![0.0; 2 * dim * spectrum.len()];
    for (pos, n) in freqs.with_zero().iter().enumerate() {
        if freqs.excludes_zero() && n.iter().all(|&c| c == 0) {
            continue;
        }
        let t: f64 = n.iter().zip(x).map(|(&a, &b)| a as f64 * b).sum();
        let (s, co) = (std::f64::consts::TAU * t).sin_cos();
        let r = spectrum.rho()[pos].sqrt();
        row[2 * (pos * dim + i)] = r * co;
        row[2 * (pos * dim + i) + 1] = r * s;
    }
    Ok(row)
}
