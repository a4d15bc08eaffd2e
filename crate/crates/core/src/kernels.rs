//! Periodic Matérn kernels on the unit circle and their products on the torus.
//!
//! The torus has unit period. A one-dimensional kernel with smoothness `nu`
//! and length scale `kappa` has the Fourier (Mercer) representation
//!
//! ```text
//! k(x, x') = sigma2 * sum_n rho(n) cos(2 pi n (x - x')),
//! rho(n)   ∝ (2 nu / kappa^2 + 4 pi^2 n^2)^-(nu + 1/2),   sum_n rho(n) = 1
//! ```
//!
//! and a closed form obtained by summing the series. The closed form is
//! evaluated after dividing numerator and denominator by `cosh(a/2)`, which
//! keeps every intermediate bounded for length scales down to `1e-3` and
//! below.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supported Matérn smoothness values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub enum Smoothness {
    /// nu = 1/2 (exponential kernel). Used for tests and oracles.
    Half,
    /// nu = 3/2, the reconstruction default.
    ThreeHalves,
}

impl Smoothness {
    pub fn nu(self) -> f64 {
        match self {
            Smoothness::Half => 0.5,
            Smoothness::ThreeHalves => 1.5,
        }
    }

    /// Exponent `nu + 1/2` of the spectral density.
    fn power(self) -> i32 {
        match self {
            Smoothness::Half => 1,
            Smoothness::ThreeHalves => 2,
        }
    }
}

impl TryFrom<f64> for Smoothness {
    type Error = Error;

    fn try_from(nu: f64) -> Result<Self> {
        if nu == 0.5 {
            Ok(Smoothness::Half)
        } else if nu == 1.5 {
            Ok(Smoothness::ThreeHalves)
        } else {
            Err(Error::Config(format!(
                "unsupported smoothness nu = {nu}; expected 0.5 or 1.5"
            )))
        }
    }
}

impl From<Smoothness> for f64 {
    fn from(s: Smoothness) -> f64 {
        s.nu()
    }
}

/// Kernel hyperparameters. The spatial dimension is `kappa.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub nu: Smoothness,
    /// Per-axis length scale on the unit-period torus.
    pub kappa: Vec<f64>,
    /// Kernel amplitude: `k(x, x) = sigma2`.
    pub sigma2: f64,
    /// Observation noise variance.
    pub noise2: f64,
}

impl Hyperparameters {
    pub fn new(nu: f64, kappa: Vec<f64>, sigma2: f64, noise2: f64) -> Result<Self> {
        let hp = Self {
            nu: Smoothness::try_from(nu)?,
            kappa,
            sigma2,
            noise2,
        };
        hp.validate()?;
        Ok(hp)
    }

    /// Same length scale on every axis; noise defaults to `1e-4 * sigma2`.
    pub fn isotropic(nu: f64, kappa: f64, dim: usize) -> Result<Self> {
        Self::new(nu, vec![kappa; dim], 1.0, 1e-4)
    }

    pub fn with_noise(mut self, noise2: f64) -> Result<Self> {
        self.noise2 = noise2;
        self.validate()?;
        Ok(self)
    }

    pub fn with_sigma2(mut self, sigma2: f64) -> Result<Self> {
        self.sigma2 = sigma2;
        self.validate()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.kappa.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kappa.is_empty() {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        if let Some(k) = self.kappa.iter().find(|k| !(k.is_finite() && **k > 0.0)) {
            return Err(Error::Config(format!("length scale must be > 0, got {k}")));
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(Error::Config(format!(
                "amplitude sigma2 must be > 0, got {}",
                self.sigma2
            )));
        }
        if !(self.noise2.is_finite() && self.noise2 >= 0.0) {
            return Err(Error::Config(format!(
                "noise2 must be >= 0, got {}",
                self.noise2
            )));
        }
        Ok(())
    }

    fn axis(&self, axis: usize) -> Result<AxisKernel> {
        let kappa = *self.kappa.get(axis).ok_or(Error::DimensionMismatch {
            expected: self.dim(),
            got: axis + 1,
        })?;
        Ok(AxisKernel::new(self.nu, kappa))
    }
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            nu: Smoothness::ThreeHalves,
            kappa: vec![0.04; 3],
            sigma2: 1.0,
            noise2: 1e-4,
        }
    }
}

/// Unit-variance periodic Matérn kernel on one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisKernel {
    nu: Smoothness,
    kappa: f64,
    /// `sqrt(2 nu) / kappa`
    a: f64,
    /// `sum_n (a^2 + 4 pi^2 n^2)^-(nu + 1/2)`
    norm: f64,
}

impl AxisKernel {
    pub fn new(nu: Smoothness, kappa: f64) -> Self {
        let a = (2.0 * nu.nu()).sqrt() / kappa;
        let half = 0.5 * a;
        let coth = 1.0 / half.tanh();
        let norm = match nu {
            Smoothness::Half => coth / (2.0 * a),
            Smoothness::ThreeHalves => {
                let sh = half.sinh();
                coth / (4.0 * a * a * a) + 1.0 / (8.0 * a * a * sh * sh)
            }
        };
        Self { nu, kappa, a, norm }
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Normalized spectral weight; the weights over all of Z sum to one.
    pub fn weight(&self, n: i64) -> f64 {
        let q = self.a * self.a + 4.0 * PI * PI * (n as f64) * (n as f64);
        q.powi(-self.nu.power()) / self.norm
    }

    /// Closed-form correlation at the given lag (any real; reduced mod 1).
    pub fn correlation(&self, lag: f64) -> f64 {
        let r = lag - lag.floor();
        let s = (r - 0.5).abs();
        let a = self.a;
        // cosh(a s) / cosh(a / 2), written with decaying exponentials only
        let ratio = ((a * (s - 0.5)).exp() + (-a * (s + 0.5)).exp()) / (1.0 + (-a).exp());
        match self.nu {
            Smoothness::Half => ratio,
            Smoothness::ThreeHalves => {
                let b = 2.0 + a / (0.5 * a).tanh();
                let num = b - 2.0 * a * s * (a * s).tanh();
                let den = b - a * (0.5 * a).tanh();
                ratio * num / den
            }
        }
    }
}

/// Separable kernel `sigma2 * prod_j k_j(x_j - x'_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductKernel {
    sigma2: f64,
    axes: Vec<AxisKernel>,
}

impl ProductKernel {
    pub fn new(hp: &Hyperparameters) -> Self {
        Self {
            sigma2: hp.sigma2,
            axes: hp.kappa.iter().map(|&k| AxisKernel::new(hp.nu, k)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn axes(&self) -> &[AxisKernel] {
        &self.axes
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let mut v = self.sigma2;
        for ((ax, a), b) in self.axes.iter().zip(x).zip(y) {
            v *= ax.correlation(a - b);
        }
        v
    }

    /// d-dimensional spectral weight `sigma2 * prod_j rho_j(n_j)`.
    pub fn spectral_weight(&self, n: &[i32]) -> f64 {
        let mut w = self.sigma2;
        for (ax, &nj) in self.axes.iter().zip(n) {
            w *= ax.weight(nj as i64);
        }
        w
    }

    /// Per-axis weight tables for `n = -bound..=bound`, axis-major.
    pub(crate) fn weight_tables(&self, bound: usize) -> Vec<Vec<f64>> {
        let b = bound as i64;
        self.axes
            .iter()
            .map(|ax| (-b..=b).map(|n| ax.weight(n)).collect())
            .collect()
    }
}

/// Spectral weight `rho(n)` of the one-dimensional kernel on `axis`
/// (including the amplitude, so the weights sum to `sigma2`).
pub fn spectral_weight(hp: &Hyperparameters, axis: usize, n: i64) -> Result<f64> {
    hp.validate()?;
    Ok(hp.sigma2 * hp.axis(axis)?.weight(n))
}

/// One-dimensional kernel on `axis`; `k(x, x) = sigma2`.
pub fn kernel_value_1d(hp: &Hyperparameters, axis: usize, x: f64, y: f64) -> Result<f64> {
    hp.validate()?;
    Ok(hp.sigma2 * hp.axis(axis)?.correlation(x - y))
}

/// Product kernel on the torus; `k(x, x) = sigma2`.
pub fn product_kernel_value(hp: &Hyperparameters, x: &[f64], y: &[f64]) -> Result<f64> {
    hp.validate()?;
    for p in [x, y] {
        if p.len() != hp.dim() {
            return Err(Error::DimensionMismatch {
                expected: hp.dim(),
                got: p.len(),
            });
        }
    }
    Ok(ProductKernel::new(hp).value(x, y))
}
