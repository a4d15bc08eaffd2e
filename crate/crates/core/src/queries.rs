//! Statistical queries against a posterior: occupancy, collision, ray
//! transmittance, next-view scores, total uncertainty and hitbox fields.
//!
//! "Inside" means `f >= 0` for collision events and `f > 0` for ray hits;
//! a ray has not hit the surface while `f <= 0` along its whole path.
//! Monte Carlo queries run on a [`SamplePool`] so that several queries can
//! share one batch of posterior samples (common random numbers).

use rand::RngCore;
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::points::PointSet;
use crate::posterior::{PosteriorModel, PosteriorSample};
use crate::rng;

/// A discretized ray `origin + t direction`, `t = 0, step, 2 step, ... <= t_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ray {
    origin: Vec<f64>,
    direction: Vec<f64>,
    t_max: f64,
    step: f64,
}

impl Ray {
    /// `direction` is normalized; its norm must be positive.
    pub fn new(origin: Vec<f64>, direction: Vec<f64>, t_max: f64, step: f64) -> Result<Self> {
        if origin.len() != direction.len() || origin.is_empty() {
            return Err(Error::Input("ray origin and direction must have equal dimension".into()));
        }
        let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) || origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Input("ray direction must be finite and nonzero".into()));
        }
        if !(step > 0.0 && step <= t_max && t_max.is_finite()) {
            return Err(Error::Input(format!(
                "ray needs 0 < step <= t_max, got step {step}, t_max {t_max}"
            )));
        }
        Ok(Self {
            origin,
            direction: direction.iter().map(|d| d / norm).collect(),
            t_max,
            step,
        })
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Travel distances of the ray samples.
    pub fn distances(&self) -> Vec<f64> {
        let count = (self.t_max / self.step * (1.0 + 1e-12)).floor() as usize + 1;
        (0..count).map(|k| k as f64 * self.step).collect()
    }

    pub fn points(&self) -> PointSet {
        let mut ps = PointSet::empty(self.origin.len());
        let mut p = vec![0.0; self.origin.len()];
        for t in self.distances() {
            for ((pj, o), d) in p.iter_mut().zip(&self.origin).zip(&self.direction) {
                *pj = o + t * d;
            }
            ps.push(&p);
        }
        ps
    }
}

/// A Monte Carlo or analytic estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QueryEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl QueryEstimate {
    fn proportion(hits: usize, n: usize) -> Self {
        let p = hits as f64 / n as f64;
        Self {
            value: p,
            std_error: (p * (1.0 - p) / n as f64).sqrt(),
            n_samples: n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CollisionMode {
    /// At least one probe inside.
    Any,
    /// Every probe inside.
    All,
}

/// Posterior samples shared between queries.
#[derive(Debug)]
pub struct SamplePool {
    model: PosteriorModel,
    samples: Vec<PosteriorSample>,
}

impl SamplePool {
    /// `n` samples with seeds derived from `seed`.
    pub fn draw(model: &PosteriorModel, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Input("sample count must be >= 1".into()));
        }
        let mut g = rng::stream(seed, rng::STREAM_POOL);
        let seeds: Vec<u64> = (0..n).map(|_| g.next_u64()).collect();
        Ok(Self {
            model: model.clone(),
            samples: model.samples(&seeds)?,
        })
    }

    pub fn model(&self) -> &PosteriorModel {
        &self.model
    }

    pub fn samples(&self) -> &[PosteriorSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample values at `x`, one row per sample.
    pub fn values(&self, x: &PointSet) -> Result<Vec<Vec<f64>>> {
        self.samples.iter().map(|s| s.evaluate(x)).collect()
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn occupancy_from(mean: f64, var: f64) -> f64 {
    let sd = var.max(0.0).sqrt();
    if sd == 0.0 {
        if mean > 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        normal_cdf(mean / sd)
    }
}

/// `P(f(x) > 0)` from the Gaussian marginal.
pub fn occupancy_probability(model: &PosteriorModel, x: &[f64]) -> Result<QueryEstimate> {
    let ps = PointSet::new(x.len(), x.to_vec())?;
    Ok(occupancy_many(model, &ps)?[0])
}

pub fn occupancy_many(model: &PosteriorModel, x: &PointSet) -> Result<Vec<QueryEstimate>> {
    let mean = model.mean(x)?;
    let var = model.variance(x)?;
    Ok(mean
        .iter()
        .zip(&var)
        .map(|(&m, &v)| QueryEstimate {
            value: occupancy_from(m, v),
            std_error: 0.0,
            n_samples: 0,
        })
        .collect())
}

fn collision_from_values(values: &[Vec<f64>], mode: CollisionMode) -> QueryEstimate {
    let hits = values
        .iter()
        .filter(|row| match mode {
            CollisionMode::Any => row.iter().any(|&f| f >= 0.0),
            CollisionMode::All => row.iter().all(|&f| f >= 0.0),
        })
        .count();
    QueryEstimate::proportion(hits, values.len())
}

/// Probability that some (`Any`) or every (`All`) probe lies inside.
pub fn collision_probability(
    model: &PosteriorModel,
    probes: &PointSet,
    mode: CollisionMode,
    n_samples: usize,
    seed: u64,
) -> Result<QueryEstimate> {
    if probes.is_empty() {
        return Err(Error::Input("collision query needs at least one probe".into()));
    }
    collision_with_pool(&SamplePool::draw(model, n_samples, seed)?, probes, mode)
}

pub fn collision_with_pool(
    pool: &SamplePool,
    probes: &PointSet,
    mode: CollisionMode,
) -> Result<QueryEstimate> {
    if probes.is_empty() {
        return Err(Error::Input("collision query needs at least one probe".into()));
    }
    Ok(collision_from_values(&pool.values(probes)?, mode))
}

/// Index of the first ray sample with `f > 0`, or `len` if none.
fn first_hit(row: &[f64]) -> usize {
    row.iter().position(|&f| f > 0.0).unwrap_or(row.len())
}

fn transmittance_from_hits(hits: &[usize], len: usize) -> Vec<f64> {
    let n = hits.len() as f64;
    // T(t_k) = fraction of samples whose first hit lies beyond k
    let mut count_at = vec![0usize; len + 1];
    for &h in hits {
        count_at[h] += 1;
    }
    let mut alive = hits.len();
    (0..len)
        .map(|k| {
            alive -= count_at[k];
            alive as f64 / n
        })
        .collect()
}

/// Running transmittance `T(t) = P(f <= 0 along the ray up to t)`.
pub fn transmittance(
    model: &PosteriorModel,
    ray: &Ray,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    transmittance_with_pool(&SamplePool::draw(model, n_samples, seed)?, ray)
}

pub fn transmittance_with_pool(pool: &SamplePool, ray: &Ray) -> Result<Vec<(f64, f64)>> {
    let values = pool.values(&ray.points())?;
    let t = ray.distances();
    let hits: Vec<usize> = values.iter().map(|r| first_hit(r)).collect();
    Ok(t.into_iter().zip(transmittance_from_hits(&hits, values[0].len())).collect())
}

fn score_from_hits(hits: &[usize], len: usize, step: f64, eps: f64) -> f64 {
    transmittance_from_hits(hits, len)
        .into_iter()
        .filter(|&t| t >= eps && t <= 1.0 - eps)
        .count() as f64
        * step
}

fn next_view_from_hits(hits: &[usize], len: usize, step: f64, eps: f64) -> QueryEstimate {
    let n = hits.len();
    let value = score_from_hits(hits, len, step, eps);
    // jackknife over samples
    let std_error = if n > 1 {
        let mut loo = Vec::with_capacity(n);
        let mut rest: Vec<usize> = hits[1..].to_vec();
        for i in 0..n {
            if i > 0 {
                rest[i - 1] = hits[i - 1];
            }
            loo.push(score_from_hits(&rest, len, step, eps));
        }
        let mean = loo.iter().sum::<f64>() / n as f64;
        let ss: f64 = loo.iter().map(|s| (s - mean).powi(2)).sum();
        ((n - 1) as f64 / n as f64 * ss).sqrt()
    } else {
        0.0
    };
    QueryEstimate {
        value,
        std_error,
        n_samples: n,
    }
}

/// Length of ray over which the transmittance is neither near 0 nor near 1.
/// Lower means the surface location along the ray is better determined.
pub fn next_view_score(
    model: &PosteriorModel,
    ray: &Ray,
    eps: f64,
    n_samples: usize,
    seed: u64,
) -> Result<QueryEstimate> {
    check_eps(eps)?;
    next_view_with_pool(&SamplePool::draw(model, n_samples, seed)?, ray, eps)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::Input(format!("next-view threshold must lie in (0, 1/2), got {eps}")));
    }
    Ok(())
}

pub fn next_view_with_pool(pool: &SamplePool, ray: &Ray, eps: f64) -> Result<QueryEstimate> {
    check_eps(eps)?;
    let values = pool.values(&ray.points())?;
    let len = values[0].len();
    let hits: Vec<usize> = values.iter().map(|r| first_hit(r)).collect();
    Ok(next_view_from_hits(&hits, len, ray.step(), eps))
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Aabb {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Aabb {
    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }
}

/// Monte Carlo estimate of `int_B (1/2 - |P(x in Omega) - 1/2|) dx`.
pub fn total_uncertainty(
    model: &PosteriorModel,
    region: &Aabb,
    n_points: usize,
    seed: u64,
) -> Result<QueryEstimate> {
    let d = model.dim();
    if region.lo.len() != d || region.hi.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: region.lo.len(),
        });
    }
    if region.lo.iter().zip(&region.hi).any(|(l, h)| !(h > l)) || n_points == 0 {
        return Err(Error::Input("total uncertainty needs a nondegenerate box and >= 1 point".into()));
    }
    let mut g = rng::stream(seed, rng::STREAM_QUERY);
    let mut ps = PointSet::empty(d);
    let mut p = vec![0.0; d];
    for _ in 0..n_points {
        for ((pj, l), h) in p.iter_mut().zip(&region.lo).zip(&region.hi) {
            *pj = l + (h - l) * rng::uniform(&mut g);
        }
        ps.push(&p);
    }
    let occ = occupancy_many(model, &ps)?;
    let vals: Vec<f64> = occ.iter().map(|o| 0.5 - (o.value - 0.5).abs()).collect();
    let n = n_points as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = if n_points > 1 {
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let vol = region.volume();
    Ok(QueryEstimate {
        value: vol * mean,
        std_error: vol * (var / n).sqrt(),
        n_samples: n_points,
    })
}

/// Conservative hitbox field `g(x) = mu(x) + eta sigma(x)`.
///
/// With `f > 0` inside, `{g > 0}` contains every point whose upper
/// `eta`-sigma bound is inside, so the hitbox grows with `eta`.
pub fn hitbox_field(model: &PosteriorModel, eta: f64, x: &PointSet) -> Result<Vec<f64>> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::Input(format!("hitbox eta must be >= 0, got {eta}")));
    }
    let mean = model.mean(x)?;
    if eta == 0.0 {
        return Ok(mean);
    }
    let var = model.variance(x)?;
    Ok(mean.iter().zip(&var).map(|(m, v)| m + eta * v.sqrt()).collect())
}

/// Hitbox field on a Cartesian grid (axis 0 fastest).
pub(crate) fn hitbox_grid(model: &PosteriorModel, eta: f64, axis_nodes: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut ps = PointSet::empty(axis_nodes.len());
    let dims: Vec<usize> = axis_nodes.iter().map(Vec::len).collect();
    let total: usize = dims.iter().product();
    let mut idx = vec![0usize; dims.len()];
    let mut p = vec![0.0; dims.len()];
    for _ in 0..total {
        for (j, pj) in p.iter_mut().enumerate() {
            *pj = axis_nodes[j][idx[j]];
        }
        ps.push(&p);
        for j in 0..dims.len() {
            idx[j] += 1;
            if idx[j] < dims[j] {
                break;
            }
            idx[j] = 0;
        }
    }
    hitbox_field(model, eta, &ps)
}
