//! Fourier-domain machinery: frequency sets, joint prior draws of the normal
//! field `v` and implicit function `f`, the prior kernel of `f`, the
//! cross-covariance `k_{f, v_i}` and its amortized lookup table.
//!
//! With a separable kernel of spectral weight `rho(n)` on every component of
//! `v`, the Poisson equation `lap f = div v` on the unit torus couples the
//! two fields frequency by frequency:
//!
//! ```text
//! v_i(x) = sum_n sqrt(rho(n)) (xi_{i,n,1} cos 2pi<n,x> + xi_{i,n,2} sin 2pi<n,x>)
//! f(x)   = sum_{n != 0} sum_i n_i sqrt(rho(n)) / (2 pi |n|^2)
//!                           (xi_{i,n,1} sin 2pi<n,x> - xi_{i,n,2} cos 2pi<n,x>)
//! ```
//!
//! The `1 / (2 pi)` comes from differentiating on a unit-period chart. Taking
//! expectations of products of these series gives the cross-covariance
//! `sum_{n != 0} n_i rho(n) / (2 pi |n|^2) sin 2pi<n, x - x'>` (linear in `rho`)
//! and the prior kernel of `f` with weights `phi(n) = sum_i n_i^2 rho(n) / (4 pi^2 |n|^4)`.

mod amortize;
mod cross;
mod frequency;
mod prior;
pub(crate) mod series;

use std::f64::consts::TAU;

pub use amortize::{AmortizationTable, TableHeader};
pub use cross::{cross_covariance, prior_f_kernel, CrossCovariance, PriorFKernel};
pub use frequency::FrequencySet;
pub use prior::{
    f_functional, sample_prior_f, sample_prior_v, v_functional, PriorCoefficients, PriorDraw,
};

use crate::kernels::{Hyperparameters, ProductKernel};

/// Spectral weights of the product kernel over a full frequency box.
#[derive(Debug, Clone)]
pub struct Spectrum {
    dim: usize,
    bound: usize,
    /// `sigma2 * prod_j rho_j(n_j)` in box layout.
    rho: Vec<f64>,
    /// `1 / (2 pi |n|^2)`, zero at `n = 0`.
    inv_lap: Vec<f64>,
    freqs: Vec<i32>,
}

impl Spectrum {
    pub fn new(hp: &Hyperparameters, bound: usize) -> Self {
        let dim = hp.dim();
        let set = FrequencySet::new(bound as i64, dim, false).expect("valid bound");
        let tables = ProductKernel::new(hp).weight_tables(bound);
        let len = set.box_len();
        let mut rho = Vec::with_capacity(len);
        let mut inv_lap = Vec::with_capacity(len);
        let mut freqs = Vec::with_capacity(len * dim);
        for n in set.box_iter() {
            let mut r = hp.sigma2;
            let mut norm2 = 0.0;
            for (j, &nj) in n.iter().enumerate() {
                r *= tables[j][(nj + bound as i32) as usize];
                norm2 += (nj as f64) * (nj as f64);
            }
            rho.push(r);
            inv_lap.push(if norm2 > 0.0 { 1.0 / (TAU * norm2) } else { 0.0 });
            freqs.extend_from_slice(&n);
        }
        Self {
            dim,
            bound,
            rho,
            inv_lap,
            freqs,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bound(&self) -> usize {
        self.bound
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    fn n(&self, pos: usize, i: usize) -> f64 {
        self.freqs[pos * self.dim + i] as f64
    }

    /// Cross-covariance weights `n_i rho(n) / (2 pi |n|^2)` for component `i`.
    pub fn cross_weights(&self, i: usize) -> Vec<f64> {
        (0..self.len())
            .map(|p| self.n(p, i) * self.rho[p] * self.inv_lap[p])
            .collect()
    }

    /// Coefficients `n_i sqrt(rho(n)) / (2 pi |n|^2)` of `f` on `xi_{i,n,.}`.
    pub fn f_weights(&self, i: usize) -> Vec<f64> {
        (0..self.len())
            .map(|p| self.n(p, i) * self.rho[p].sqrt() * self.inv_lap[p])
            .collect()
    }

    /// Prior spectral weights `phi(n)` of the implicit function.
    pub fn phi(&self) -> Vec<f64> {
        (0..self.len())
            .map(|p| {
                let s: f64 = (0..self.dim)
                    .map(|i| {
                        let c = self.n(p, i) * self.inv_lap[p];
                        c * c
                    })
                    .sum();
                s * self.rho[p]
            })
            .collect()
    }

    /// Truncated prior variance of `f`, `sum_{n != 0} phi(n)`.
    pub fn f_variance(&self) -> f64 {
        self.phi().iter().sum()
    }

    /// Truncated prior variance of each `v_i`, `sum_n rho(n)`.
    pub fn v_variance(&self, include_zero: bool) -> f64 {
        let total: f64 = self.rho.iter().sum();
        if include_zero {
            total
        } else {
            total - self.rho[self.len() / 2]
        }
    }
}
