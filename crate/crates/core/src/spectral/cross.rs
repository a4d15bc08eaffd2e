use num_complex::Complex64;

use super::series::{eval_real_multi, point_phases};
use super::{FrequencySet, Spectrum};
use crate::error::{Error, Result};
use crate::kernels::Hyperparameters;

fn check_point(dim: usize, p: &[f64]) -> Result<()> {
    if p.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: p.len(),
        });
    }
    Ok(())
}

fn check_set(hp: &Hyperparameters, freqs: &FrequencySet) -> Result<()> {
    hp.validate()?;
    if freqs.dim() != hp.dim() {
        return Err(Error::DimensionMismatch {
            expected: hp.dim(),
            got: freqs.dim(),
        });
    }
    Ok(())
}

/// Truncated cross-covariance `Cov(f(x), v_i(x'))` for all components.
#[derive(Debug, Clone)]
pub struct CrossCovariance {
    dim: usize,
    bound: usize,
    weights: Vec<Vec<f64>>,
}

impl CrossCovariance {
    pub fn new(hp: &Hyperparameters, freqs: &FrequencySet) -> Result<Self> {
        check_set(hp, freqs)?;
        Ok(Self::from_spectrum(&Spectrum::new(hp, freqs.bound())))
    }

    pub fn from_spectrum(spectrum: &Spectrum) -> Self {
        Self {
            dim: spectrum.dim(),
            bound: spectrum.bound(),
            weights: (0..spectrum.dim())
                .map(|i| spectrum.cross_weights(i))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bound(&self) -> usize {
        self.bound
    }

    pub(crate) fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    /// All components at the offset whose per-axis phases are `phases`.
    pub(crate) fn eval_phases(&self, phases: &[Complex64], out: &mut [f64]) {
        let refs: Vec<&[f64]> = self.weights.iter().map(Vec::as_slice).collect();
        let mut z = vec![Complex64::new(0.0, 0.0); self.dim];
        eval_real_multi(&refs, self.dim, self.bound, phases, &mut z);
        for (o, v) in out.iter_mut().zip(&z) {
            *o = v.im;
        }
    }

    /// All components of `k_{f, v}(x, y)`, which depends only on `x - y`.
    pub fn values(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<()> {
        check_point(self.dim, x)?;
        check_point(self.dim, y)?;
        let delta: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        self.values_at_offset(&delta, out);
        Ok(())
    }

    pub fn values_at_offset(&self, delta: &[f64], out: &mut [f64]) {
        let mut ph = Vec::new();
        point_phases(self.bound, delta, &mut ph);
        self.eval_phases(&ph, out);
    }

    pub fn value(&self, i: usize, x: &[f64], y: &[f64]) -> Result<f64> {
        if i >= self.dim {
            return Err(Error::Input(format!(
                "component {i} out of range for dimension {}",
                self.dim
            )));
        }
        let mut out = vec![0.0; self.dim];
        self.values(x, y, &mut out)?;
        Ok(out[i])
    }
}

/// `Cov(f(x), v_i(x'))` under the truncation `freqs`.
pub fn cross_covariance(
    hp: &Hyperparameters,
    freqs: &FrequencySet,
    i: usize,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    CrossCovariance::new(hp, freqs)?.value(i, x, y)
}

/// Truncated prior kernel of the implicit function, `sum_{n != 0} phi(n) cos 2pi<n, x - x'>`.
#[derive(Debug, Clone)]
pub struct PriorFKernel {
    dim: usize,
    bound: usize,
    phi: Vec<f64>,
    variance: f64,
}

impl PriorFKernel {
    pub fn new(hp: &Hyperparameters, freqs: &FrequencySet) -> Result<Self> {
        check_set(hp, freqs)?;
        Ok(Self::from_spectrum(&Spectrum::new(hp, freqs.bound())))
    }

    pub fn from_spectrum(spectrum: &Spectrum) -> Self {
        let phi = spectrum.phi();
        let variance = phi.iter().sum();
        Self {
            dim: spectrum.dim(),
            bound: spectrum.bound(),
            phi,
            variance,
        }
    }

    /// Zero-lag value.
    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub(crate) fn eval_phases(&self, phases: &[Complex64]) -> f64 {
        let mut z = [Complex64::new(0.0, 0.0)];
        eval_real_multi(&[&self.phi], self.dim, self.bound, phases, &mut z);
        z[0].re
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_point(self.dim, x)?;
        check_point(self.dim, y)?;
        let delta: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let mut ph = Vec::new();
        point_phases(self.bound, &delta, &mut ph);
        Ok(self.eval_phases(&ph))
    }
}

pub fn prior_f_kernel(
    hp: &Hyperparameters,
    freqs: &FrequencySet,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    PriorFKernel::new(hp, freqs)?.value(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn brute_cross(hp: &Hyperparameters, bound: i64, i: usize, x: &[f64], y: &[f64]) -> f64 {
        let set = FrequencySet::new(bound, hp.dim(), true).unwrap();
        let k = crate::kernels::ProductKernel::new(hp);
        set.iter()
            .map(|n| {
                let n2: f64 = n.iter().map(|&c| (c * c) as f64).sum();
                let t: f64 = n.iter().zip(x.iter().zip(y)).map(|(&c, (a, b))| c as f64 * (a - b)).sum();
                n[i] as f64 * k.spectral_weight(n) / (TAU * n2) * (TAU * t).sin()
            })
            .sum()
    }

    #[test]
    fn matches_term_by_term_sum() {
        let hp = Hyperparameters::new(1.5, vec![0.1, 0.15, 0.2], 1.3, 0.0).unwrap();
        let freqs = FrequencySet::new(4, 3, true).unwrap();
        let cc = CrossCovariance::new(&hp, &freqs).unwrap();
        let x = [0.12, 0.56, 0.91];
        let y = [0.77, 0.05, 0.33];
        for i in 0..3 {
            let got = cc.value(i, &x, &y).unwrap();
            let want = brute_cross(&hp, 4, i, &x, &y);
            assert!((got - want).abs() < 1e-14, "{got} {want}");
        }
    }

    #[test]
    fn zero_at_coincident_points_and_antisymmetric() {
        let hp = Hyperparameters::isotropic(1.5, 0.05, 3).unwrap();
        let freqs = FrequencySet::new(6, 3, true).unwrap();
        let cc = CrossCovariance::new(&hp, &freqs).unwrap();
        let x = [0.3, 0.2, 0.9];
        let y = [0.6, 0.25, 0.1];
        for i in 0..3 {
            assert_eq!(cc.value(i, &x, &x).unwrap(), 0.0);
            let a = cc.value(i, &x, &y).unwrap();
            let b = cc.value(i, &y, &x).unwrap();
            assert_eq!(a, -b);
        }
        assert!(cc.value(3, &x, &y).is_err());
    }

    #[test]
    fn two_term_toy_spectrum() {
        // d = 1 with only n = +-1: 2 * (rho_1 / 2pi) sin(2pi (x - x'))
        let hp = Hyperparameters::isotropic(1.5, 0.3, 1).unwrap();
        let freqs = FrequencySet::new(1, 1, true).unwrap();
        let rho1 = crate::kernels::spectral_weight(&hp, 0, 1).unwrap();
        let (x, y) = (0.4, 0.15);
        let got = cross_covariance(&hp, &freqs, 0, &[x], &[y]).unwrap();
        let want = 2.0 * rho1 / TAU * (TAU * (x - y)).sin();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn prior_kernel_zero_lag_and_symmetry() {
        let hp = Hyperparameters::isotropic(1.5, 0.1, 3).unwrap();
        let freqs = FrequencySet::new(5, 3, true).unwrap();
        let k = PriorFKernel::new(&hp, &freqs).unwrap();
        let x = [0.1, 0.2, 0.3];
        let y = [0.5, 0.9, 0.05];
        assert!((k.value(&x, &x).unwrap() - k.variance()).abs() < 1e-15);
        assert_eq!(k.value(&x, &y).unwrap(), k.value(&y, &x).unwrap());
        assert!(k.value(&x, &y).unwrap() < k.variance());
    }
}
