//! Precomputed cross-covariance on a warped lattice of offsets.
//!
//! Per axis, `grid_n` values `u_j` sampled evenly from `[-1, 1]` are mapped to
//! offsets `t_j = u_j^5 / 2`, which crowds nodes near zero lag where the
//! cross-covariance varies fastest. An odd `grid_n` samples the closed
//! interval (so `u = 0` and `u = +-1` are nodes). An even `grid_n` samples the
//! half-open interval `[-1, 1)` with spacing `2 / grid_n`, which also hits
//! zero; the missing `+1/2` node is the periodic image of `-1/2`. Either way
//! there are exactly `grid_n` nodes per axis and zero lag is a node.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::series::eval_grid;
use super::{FrequencySet, Spectrum};
use crate::error::{Error, Result};
use crate::kernels::Hyperparameters;
use crate::points::wrap_offset;

/// JSON header line of a serialized table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableHeader {
    pub hp: Hyperparameters,
    pub f_cross: usize,
    pub grid_n: usize,
    pub components: usize,
    pub endianness: String,
    pub dtype: String,
}

#[derive(Debug, Clone)]
pub struct AmortizationTable {
    hp: Hyperparameters,
    f_cross: usize,
    grid_n: usize,
    dim: usize,
    /// Node offsets, identical on every axis, increasing.
    nodes: Vec<f64>,
    /// Whether the node list closes at `+1/2` itself (odd `grid_n`).
    closed: bool,
    /// `values[node * dim + i]`, node index with axis 0 fastest.
    values: Vec<f64>,
    /// For each of `BINS` uniform bins of `[-1/2, 1/2)`, the last node at or
    /// below the bin's left edge.
    bins: Vec<u32>,
}

const BINS: usize = 4096;

fn bin_starts(nodes: &[f64]) -> Vec<u32> {
    let mut j = 0usize;
    (0..BINS)
        .map(|b| {
            let left = -0.5 + b as f64 / BINS as f64;
            while j + 1 < nodes.len() && nodes[j + 1] <= left {
                j += 1;
            }
            j as u32
        })
        .collect()
}

fn warp(u: f64) -> f64 {
    0.5 * u.powi(5)
}

pub(crate) fn warped_nodes(grid_n: usize) -> Vec<f64> {
    let g = grid_n as f64;
    if grid_n % 2 == 1 {
        (0..grid_n)
            .map(|j| {
                let u = (2.0 * j as f64 - (g - 1.0)) / (g - 1.0);
                warp(u)
            })
            .collect()
    } else {
        (0..grid_n)
            .map(|j| warp((2.0 * j as f64 - g) / g))
            .collect()
    }
}

impl AmortizationTable {
    pub fn build(hp: &Hyperparameters, freqs: &FrequencySet, grid_n: usize) -> Result<Self> {
        hp.validate()?;
        if grid_n < 2 {
            return Err(Error::Input(format!("amortization grid_n must be >= 2, got {grid_n}")));
        }
        if freqs.dim() != hp.dim() {
            return Err(Error::DimensionMismatch {
                expected: hp.dim(),
                got: freqs.dim(),
            });
        }
        let dim = hp.dim();
        if dim > 8 {
            return Err(Error::Input(format!("amortization supports up to 8 dimensions, got {dim}")));
        }
        let bound = freqs.bound();
        let spectrum = Spectrum::new(hp, bound);
        let nodes = warped_nodes(grid_n);
        let axis_nodes = vec![nodes.clone(); dim];
        let count = grid_n.pow(dim as u32);
        let mut values = vec![0.0; count * dim];
        for i in 0..dim {
            let coeffs: Vec<Complex64> = spectrum
                .cross_weights(i)
                .into_iter()
                .map(|w| Complex64::new(w, 0.0))
                .collect();
            let grid = eval_grid(&coeffs, dim, bound, &axis_nodes);
            for (node, z) in grid.iter().enumerate() {
                values[node * dim + i] = z.im;
            }
        }
        Ok(Self {
            hp: hp.clone(),
            f_cross: bound,
            grid_n,
            dim,
            bins: bin_starts(&nodes),
            nodes,
            closed: grid_n % 2 == 1,
            values,
        })
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn f_cross(&self) -> usize {
        self.f_cross
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    /// Per-axis node offsets.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.values.len() / self.dim
    }

    /// Stored values at a node given by per-axis node indices.
    pub fn node_values(&self, index: &[usize]) -> &[f64] {
        let mut flat = 0;
        for &j in index.iter().rev() {
            flat = flat * self.grid_n + j;
        }
        &self.values[flat * self.dim..(flat + 1) * self.dim]
    }

    /// Interval containing `t` in `[-1/2, 1/2)`: node index, next node index
    /// (possibly wrapped) and interpolation weight of the next node.
    fn locate(&self, t: f64) -> (usize, usize, f64) {
        let g = self.grid_n;
        let last = if self.closed { g - 2 } else { g - 1 };
        let b = (((t + 0.5) * BINS as f64) as usize).min(BINS - 1);
        let mut j = (self.bins[b] as usize).min(last);
        while j < last && self.nodes[j + 1] <= t {
            j += 1;
        }
        let (lo, hi, next) = if !self.closed && j == g - 1 {
            (self.nodes[j], 0.5, 0)
        } else {
            (self.nodes[j], self.nodes[j + 1], j + 1)
        };
        let w = if hi > lo { ((t - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
        (j, next, w)
    }

    /// All components at `offset`, wrapped periodically, by d-linear interpolation.
    pub fn lookup(&self, offset: &[f64], out: &mut [f64]) {
        debug_assert_eq!(offset.len(), self.dim);
        let mut cell = [(0usize, 0usize, 0.0f64); 8];
        for (c, &t) in cell.iter_mut().zip(offset) {
            *c = self.locate(wrap_offset(t));
        }
        for o in out.iter_mut() {
            *o = 0.0;
        }
        let dim = self.dim;
        for corner in 0..1usize << dim {
            let mut weight = 1.0;
            let mut flat = 0usize;
            for axis in (0..dim).rev() {
                let (lo, hi, w) = cell[axis];
                let upper = corner >> axis & 1 == 1;
                weight *= if upper { w } else { 1.0 - w };
                flat = flat * self.grid_n + if upper { hi } else { lo };
            }
            if weight == 0.0 {
                continue;
            }
            let v = &self.values[flat * dim..(flat + 1) * dim];
            for (o, x) in out.iter_mut().zip(v) {
                *o += weight * x;
            }
        }
    }

    /// Interpolated `Cov(f(x), v_i(y))`.
    pub fn cross_covariance(&self, i: usize, x: &[f64], y: &[f64]) -> Result<f64> {
        if i >= self.dim {
            return Err(Error::Input(format!(
                "component {i} out of range for dimension {}",
                self.dim
            )));
        }
        for p in [x, y] {
            if p.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: p.len(),
                });
            }
        }
        let delta: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let mut out = vec![0.0; self.dim];
        self.lookup(&delta, &mut out);
        Ok(out[i])
    }

    pub fn header(&self) -> TableHeader {
        TableHeader {
            hp: self.hp.clone(),
            f_cross: self.f_cross,
            grid_n: self.grid_n,
            components: self.dim,
            endianness: "little".into(),
            dtype: "f32".into(),
        }
    }

    /// JSON header line followed by little-endian `f32` values, node-major
    /// and component-minor.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let header = serde_json::to_string(&self.header()).map_err(std::io::Error::other)?;
        writeln!(w, "{header}")?;
        let mut buf = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_from(r: impl Read, path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(r);
        let mut line = String::new();
        reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        let header: TableHeader = serde_json::from_str(line.trim_end()).map_err(|e| Error::Parse {
            path: path.into(),
            offset: e.column().saturating_sub(1),
            message: e.to_string(),
        })?;
        let bad = |message: String| Error::Format {
            path: path.into(),
            message,
        };
        if header.endianness != "little" || header.dtype != "f32" {
            return Err(bad(format!(
                "unsupported payload {} {}",
                header.endianness, header.dtype
            )));
        }
        header.hp.validate()?;
        if header.components != header.hp.dim() || header.grid_n < 2 {
            return Err(bad("inconsistent table header".into()));
        }
        let count = header.grid_n.pow(header.components as u32) * header.components;
        let mut payload = Vec::new();
        reader.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
        if payload.len() != 4 * count {
            return Err(bad(format!(
                "expected {} payload bytes, found {}",
                4 * count,
                payload.len()
            )));
        }
        let values = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let nodes = warped_nodes(header.grid_n);
        Ok(Self {
            dim: header.components,
            bins: bin_starts(&nodes),
            nodes,
            closed: header.grid_n % 2 == 1,
            hp: header.hp,
            f_cross: header.f_cross,
            grid_n: header.grid_n,
            values,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file, path)
    }
}
