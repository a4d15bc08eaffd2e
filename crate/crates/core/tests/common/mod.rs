#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spsr_core::kernels::Hyperparameters;
use spsr_core::points::PointSet;
use spsr_core::posterior::{PosteriorConfig, PosteriorModel};
use spsr_core::solver::ObservationSystem;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_points(g: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| g.random::<f64>()).collect()).collect()
}

/// Fibonacci sphere with outward normals.
pub fn sphere_cloud(n: usize, centre: [f64; 3], radius: f64) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut pts = Vec::with_capacity(n);
    let mut nrm = Vec::with_capacity(n);
    for k in 0..n {
        let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
        let r = (1.0 - z * z).sqrt();
        let t = golden * k as f64;
        let d = [r * t.cos(), r * t.sin(), z];
        pts.push(std::array::from_fn(|j| centre[j] + radius * d[j]));
        nrm.push(d);
    }
    (pts, nrm)
}

pub fn sphere_system(n: usize, radius: f64, hp: Hyperparameters) -> ObservationSystem {
    let (p, nrm) = sphere_cloud(n, [0.5; 3], radius);
    ObservationSystem::new(PointSet::from_points3(&p), PointSet::from_points3(&nrm), hp).unwrap()
}

pub fn sphere_model(n: usize, radius: f64, hp: Hyperparameters, config: PosteriorConfig) -> PosteriorModel {
    PosteriorModel::build(sphere_system(n, radius, hp), config).unwrap()
}

pub fn small_config(f: usize, amortize: Option<usize>) -> PosteriorConfig {
    PosteriorConfig {
        f_cross: f,
        f_prior: f,
        amortize_grid: amortize,
        ..PosteriorConfig::default()
    }
}
