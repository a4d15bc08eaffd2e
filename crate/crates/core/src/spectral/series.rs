//! Evaluation of truncated Fourier series on the unit torus.
//!
//! A series is a coefficient array laid out over the full frequency box
//! `|n_j| <= bound` (see [`FrequencySet`](super::FrequencySet)). Evaluating
//! `sum_n c(n) exp(2 pi i <n, x>)` at a point contracts one axis at a time
//! against that axis' phase vector, so each partial sum runs over at most
//! `2 bound + 1` terms in a fixed order. Results are deterministic and do not
//! depend on thread scheduling.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use num_complex::Complex64;

/// `exp(2 pi i n x)` for `n = -bound..=bound`, written into `out`.
///
/// Negative frequencies are exact conjugates of positive ones.
pub(crate) fn axis_phases(bound: usize, x: f64, out: &mut [Complex64]) {
    debug_assert_eq!(out.len(), 2 * bound + 1);
    out[bound] = Complex64::new(1.0, 0.0);
    for n in 1..=bound {
        let (s, c) = (TAU * n as f64 * x).sin_cos();
        out[bound + n] = Complex64::new(c, s);
        out[bound - n] = Complex64::new(c, -s);
    }
}

/// Phase tables for every axis of a point, axis-major.
pub(crate) fn point_phases(bound: usize, x: &[f64], out: &mut Vec<Complex64>) {
    let w = 2 * bound + 1;
    out.clear();
    out.resize(w * x.len(), Complex64::new(0.0, 0.0));
    for (j, &xj) in x.iter().enumerate() {
        axis_phases(bound, xj, &mut out[j * w..(j + 1) * w]);
    }
}

/// Reduce the tensor `data` of shape `w^(dim)` along its trailing axes using
/// the per-axis phases. `data` holds the already-contracted last axis, i.e.
/// it has `w^(dim-1)` entries on entry.
fn contract_rest(
    mut data: Vec<Complex64>,
    dim: usize,
    w: usize,
    phases: &[Complex64],
) -> Complex64 {
    for axis in (0..dim - 1).rev() {
        let p = &phases[axis * w..(axis + 1) * w];
        let blocks = data.len() / w;
        for b in 0..blocks {
            let mut s = Complex64::new(0.0, 0.0);
            for (c, e) in data[b * w..(b + 1) * w].iter().zip(p) {
                s += c * e;
            }
            data[b] = s;
        }
        data.truncate(blocks);
    }
    data[0]
}

/// `sum_n c(n) exp(2 pi i <n, x>)` for complex coefficients.
pub(crate) fn eval_complex(
    coeffs: &[Complex64],
    dim: usize,
    bound: usize,
    phases: &[Complex64],
) -> Complex64 {
    let w = 2 * bound + 1;
    debug_assert_eq!(coeffs.len(), w.pow(dim as u32));
    let last = &phases[(dim - 1) * w..dim * w];
    let mut partial = Vec::with_capacity(coeffs.len() / w);
    for block in coeffs.chunks_exact(w) {
        let mut s = Complex64::new(0.0, 0.0);
        for (c, e) in block.iter().zip(last) {
            s += c * e;
        }
        partial.push(s);
    }
    contract_rest(partial, dim, w, phases)
}

/// `sum_n c_k(n) exp(2 pi i <n, x>)` for several real coefficient arrays
/// sharing one frequency box; results are written to `out[k]`.
pub(crate) fn eval_real_multi(
    coeffs: &[&[f64]],
    dim: usize,
    bound: usize,
    phases: &[Complex64],
    out: &mut [Complex64],
) {
    let w = 2 * bound + 1;
    let last = &phases[(dim - 1) * w..dim * w];
    let (re, im): (Vec<f64>, Vec<f64>) = last.iter().map(|z| (z.re, z.im)).unzip();
    for (k, c) in coeffs.iter().enumerate() {
        let mut partial = Vec::with_capacity(c.len() / w);
        for block in c.chunks_exact(w) {
            let mut sr = 0.0;
            let mut si = 0.0;
            for ((&v, &er), &ei) in block.iter().zip(&re).zip(&im) {
                sr += v * er;
                si += v * ei;
            }
            partial.push(Complex64::new(sr, si));
        }
        out[k] = contract_rest(partial, dim, w, phases);
    }
}

/// Evaluate a complex series on a Cartesian grid.
///
/// `axis_nodes[j]` are the coordinates along axis `j`; the result is ordered
/// with axis 0 varying fastest. Cost is `sum_j w^(dim-j) * prod_{k>=j} G_k`
/// rather than `w^dim * prod_k G_k`.
pub(crate) fn eval_grid(
    coeffs: &[Complex64],
    dim: usize,
    bound: usize,
    axis_nodes: &[Vec<f64>],
) -> Vec<Complex64> {
    let w = 2 * bound + 1;
    debug_assert_eq!(axis_nodes.len(), dim);
    let mut data = coeffs.to_vec();
    // shape: (outer = w^axis, current axis, inner = prod of converted axes)
    let mut inner = 1usize;
    let mut phases = vec![Complex64::new(0.0, 0.0); w];
    for axis in (0..dim).rev() {
        let nodes = &axis_nodes[axis];
        let g = nodes.len();
        let outer = w.pow(axis as u32);
        let mut table = Vec::with_capacity(g * w);
        for &x in nodes {
            axis_phases(bound, x, &mut phases);
            table.extend_from_slice(&phases);
        }
        let mut next = vec![Complex64::new(0.0, 0.0); outer * g * inner];
        for o in 0..outer {
            let src = &data[o * w * inner..(o + 1) * w * inner];
            let dst = &mut next[o * g * inner..(o + 1) * g * inner];
            for (gi, row) in table.chunks_exact(w).enumerate() {
                let d = &mut dst[gi * inner..(gi + 1) * inner];
                for (k, e) in row.iter().enumerate() {
                    let s = &src[k * inner..(k + 1) * inner];
                    for (acc, c) in d.iter_mut().zip(s) {
                        *acc += c * e;
                    }
                }
            }
        }
        data = next;
        inner *= g;
    }
    // data is ordered with the last axis fastest; reorder to axis 0 fastest
    let dims: Vec<usize> = axis_nodes.iter().map(Vec::len).collect();
    let total: usize = dims.iter().product();
    let mut out = vec![Complex64::new(0.0, 0.0); total];
    let mut idx = vec![0usize; dim];
    for value in data.iter() {
        let mut flat = 0usize;
        for j in (0..dim).rev() {
            flat = flat * dims[j] + idx[j];
        }
        out[flat] = *value;
        for j in (0..dim).rev() {
            idx[j] += 1;
            if idx[j] < dims[j] {
                break;
            }
            idx[j] = 0;
        }
    }
    out
}

/// Add `sum_k weights_k(n) * amp_k * exp(-2 pi i <n, x>)` into `acc` for
/// every box frequency `n`. This is the adjoint of point evaluation.
#[cfg(test)]
pub(crate) fn accumulate_conj(
    acc: &mut [Complex64],
    weights: &[&[f64]],
    amps: &[f64],
    dim: usize,
    bound: usize,
    phases: &[Complex64],
) {
    let w = 2 * bound + 1;
    let blocks = acc.len() / w;
    let last = &phases[(dim - 1) * w..dim * w];
    let mut idx = vec![0usize; dim.saturating_sub(1)];
    for b in 0..blocks {
        let mut prefix = Complex64::new(1.0, 0.0);
        for (j, &k) in idx.iter().enumerate() {
            prefix *= phases[j * w + k].conj();
        }
        let base = b * w;
        for (k, e) in last.iter().enumerate() {
            let p = prefix * e.conj();
            let mut s = 0.0;
            for (wk, &a) in weights.iter().zip(amps) {
                s += wk[base + k] * a;
            }
            acc[base + k] += p * s;
        }
        for j in (0..idx.len()).rev() {
            idx[j] += 1;
            if idx[j] < w {
                break;
            }
            idx[j] = 0;
        }
    }
}

/// Per-axis phase tables of many points: `tables[j][a * w + k]`.
fn phase_tables(bound: usize, dim: usize, points: &[f64]) -> Vec<Vec<Complex64>> {
    let w = 2 * bound + 1;
    let n = points.len() / dim;
    let mut tables = vec![vec![Complex64::new(0.0, 0.0); n * w]; dim];
    for (j, table) in tables.iter_mut().enumerate() {
        for a in 0..n {
            axis_phases(bound, points[a * dim + j], &mut table[a * w..(a + 1) * w]);
        }
    }
    tables
}

/// Digits of prefix index `p` over the leading `dim - 1` axes, axis 0 most significant.
fn prefix_digits(p: usize, dim: usize, w: usize, out: &mut [usize]) {
    let mut r = p;
    for j in (0..dim - 1).rev() {
        out[j] = r % w;
        r /= w;
    }
}

/// `sum_n c_k(n) exp(2 pi i <n, x_a>)` for every coefficient array `k` and
/// every point `a` of the flat buffer `points`; returns `out[k][a]`.
///
/// The last axis is contracted for a block of points at once as a dense
/// matrix product; the remaining axes are applied per point.
pub(crate) fn eval_points(
    coeffs: &[&[Complex64]],
    dim: usize,
    bound: usize,
    points: &[f64],
) -> Vec<Vec<Complex64>> {
    let w = 2 * bound + 1;
    let n = points.len() / dim;
    let prefixes = w.pow(dim as u32 - 1);
    let mut out = vec![vec![Complex64::new(0.0, 0.0); n]; coeffs.len()];
    if n == 0 {
        return out;
    }
    let split: Vec<(DMatrix<f64>, DMatrix<f64>)> = coeffs
        .iter()
        .map(|c| {
            (
                DMatrix::from_iterator(w, prefixes, c.iter().map(|z| z.re)),
                DMatrix::from_iterator(w, prefixes, c.iter().map(|z| z.im)),
            )
        })
        .collect();
    let mut digits = vec![0usize; dim.max(1)];
    let mut prefix = vec![Complex64::new(0.0, 0.0); prefixes];
    let block = 64usize;
    for start in (0..n).step_by(block) {
        let cnt = block.min(n - start);
        let chunk = &points[start * dim..(start + cnt) * dim];
        let tables = phase_tables(bound, dim, chunk);
        let last = &tables[dim - 1];
        let er = DMatrix::from_fn(cnt, w, |a, k| last[a * w + k].re);
        let ei = DMatrix::from_fn(cnt, w, |a, k| last[a * w + k].im);
        let partial: Vec<(DMatrix<f64>, DMatrix<f64>)> = split
            .iter()
            .map(|(cr, ci)| (&er * cr - &ei * ci, &er * ci + &ei * cr))
            .collect();
        for a in 0..cnt {
            for (p, slot) in prefix.iter_mut().enumerate() {
                prefix_digits(p, dim, w, &mut digits);
                let mut z = Complex64::new(1.0, 0.0);
                for (j, &dj) in digits.iter().enumerate().take(dim - 1) {
                    z *= tables[j][a * w + dj];
                }
                *slot = z;
            }
            for (k, (tr, ti)) in partial.iter().enumerate() {
                let mut s = Complex64::new(0.0, 0.0);
                for (p, z) in prefix.iter().enumerate() {
                    s += z * Complex64::new(tr[(a, p)], ti[(a, p)]);
                }
                out[k][start + a] = s;
            }
        }
    }
    out
}

/// `S_k(n) = sum_a amps_k[a] exp(-2 pi i <n, x_a>)` over the full frequency
/// box for real amplitudes; returns `out[k]` in box layout.
///
/// Only half of the box is computed (as a dense matrix product over points);
/// the other half follows from `S(-n) = conj S(n)`.
pub(crate) fn adjoint_points(
    amps: &[&[f64]],
    dim: usize,
    bound: usize,
    points: &[f64],
) -> Vec<Vec<Complex64>> {
    let w = 2 * bound + 1;
    let h = bound + 1;
    let n = points.len() / dim;
    let kk = amps.len();
    let prefixes = w.pow(dim as u32 - 1);
    let box_len = prefixes * w;
    let mut out = vec![vec![Complex64::new(0.0, 0.0); box_len]; kk];
    if n == 0 || kk == 0 {
        return out;
    }
    let tables = phase_tables(bound, dim, points);
    let last = &tables[dim - 1];
    let er = DMatrix::from_fn(n, h, |a, k| last[a * w + bound + k].re);
    let ei = DMatrix::from_fn(n, h, |a, k| last[a * w + bound + k].im);
    let chunk = (512 / kk).max(1).min(prefixes);
    let mut digits = vec![0usize; dim.max(1)];
    for start in (0..prefixes).step_by(chunk) {
        let cnt = chunk.min(prefixes - start);
        let mut qr = DMatrix::<f64>::zeros(n, cnt * kk);
        let mut qi = DMatrix::<f64>::zeros(n, cnt * kk);
        for q in 0..cnt {
            prefix_digits(start + q, dim, w, &mut digits);
            for a in 0..n {
                let mut z = Complex64::new(1.0, 0.0);
                for (j, &dj) in digits.iter().enumerate().take(dim - 1) {
                    z *= tables[j][a * w + dj].conj();
                }
                for (k, amp) in amps.iter().enumerate() {
                    qr[(a, q * kk + k)] = amp[a] * z.re;
                    qi[(a, q * kk + k)] = amp[a] * z.im;
                }
            }
        }
        // Q^T conj(E)
        let re = qr.tr_mul(&er) + qi.tr_mul(&ei);
        let im = qi.tr_mul(&er) - qr.tr_mul(&ei);
        for q in 0..cnt {
            let base = (start + q) * w + bound;
            for (k, o) in out.iter_mut().enumerate() {
                for m in 0..h {
                    o[base + m] = Complex64::new(re[(q * kk + k, m)], im[(q * kk + k, m)]);
                }
            }
        }
    }
    for o in out.iter_mut() {
        for pos in 0..box_len {
            if pos % w < bound {
                o[pos] = o[box_len - 1 - pos].conj();
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::FrequencySet;

    fn brute(coeffs: &[Complex64], set: &FrequencySet, x: &[f64]) -> Complex64 {
        set.box_iter()
            .zip(coeffs)
            .map(|(n, c)| {
                let t: f64 = n.iter().zip(x).map(|(&a, &b)| a as f64 * b).sum();
                c * Complex64::new(0.0, TAU * t).exp()
            })
            .sum()
    }

    fn coeffs(len: usize) -> Vec<Complex64> {
        (0..len)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect()
    }

    #[test]
    fn point_evaluation_matches_brute_force() {
        for dim in 1..=3 {
            let set = FrequencySet::new(3, dim, false).unwrap();
            let c = coeffs(set.box_len());
            let x: Vec<f64> = (0..dim).map(|j| 0.13 + 0.29 * j as f64).collect();
            let mut ph = Vec::new();
            point_phases(3, &x, &mut ph);
            let got = eval_complex(&c, dim, 3, &ph);
            let want = brute(&c, &set, &x);
            assert!((got - want).norm() < 1e-12, "dim {dim}");

            let re: Vec<f64> = c.iter().map(|z| z.re).collect();
            let mut out = [Complex64::new(0.0, 0.0)];
            eval_real_multi(&[&re], dim, 3, &ph, &mut out);
            let want_re = brute(
                &re.iter().map(|&r| Complex64::new(r, 0.0)).collect::<Vec<_>>(),
                &set,
                &x,
            );
            assert!((out[0] - want_re).norm() < 1e-12);
        }
    }

    #[test]
    fn grid_evaluation_matches_points() {
        let set = FrequencySet::new(2, 3, false).unwrap();
        let c = coeffs(set.box_len());
        let nodes = vec![vec![0.0, 0.3], vec![0.1, 0.5, 0.9], vec![0.25]];
        let grid = eval_grid(&c, 3, 2, &nodes);
        let mut ph = Vec::new();
        for (i2, &z) in nodes[2].iter().enumerate() {
            for (i1, &y) in nodes[1].iter().enumerate() {
                for (i0, &x) in nodes[0].iter().enumerate() {
                    point_phases(2, &[x, y, z], &mut ph);
                    let want = eval_complex(&c, 3, 2, &ph);
                    let got = grid[i0 + 2 * (i1 + 3 * i2)];
                    assert!((got - want).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn adjoint_matches_brute_force() {
        let set = FrequencySet::new(2, 3, false).unwrap();
        let wts: Vec<f64> = (0..set.box_len()).map(|i| (i as f64).cos()).collect();
        let x = [0.2, 0.7, 0.45];
        let mut ph = Vec::new();
        point_phases(2, &x, &mut ph);
        let mut acc = vec![Complex64::new(0.0, 0.0); set.box_len()];
        accumulate_conj(&mut acc, &[&wts], &[1.5], 3, 2, &ph);
        for ((n, a), wt) in set.box_iter().zip(&acc).zip(&wts) {
            let t: f64 = n.iter().zip(&x).map(|(&a, &b)| a as f64 * b).sum();
            let want = Complex64::new(0.0, -TAU * t).exp() * 1.5 * wt;
            assert!((a - want).norm() < 1e-13);
        }
    }
    #[test]
    fn batched_point_evaluation_matches_single() {
        for dim in 1..=3 {
            let set = FrequencySet::new(3, dim, false).unwrap();
            let c1 = coeffs(set.box_len());
            let c2: Vec<Complex64> = c1.iter().map(|z| z * Complex64::new(0.3, -1.1)).collect();
            let pts: Vec<f64> = (0..70 * dim).map(|k| ((k as f64) * 0.7548).fract()).collect();
            let got = eval_points(&[&c1, &c2], dim, 3, &pts);
            let mut ph = Vec::new();
            for a in 0..70 {
                point_phases(3, &pts[a * dim..(a + 1) * dim], &mut ph);
                assert!((got[0][a] - eval_complex(&c1, dim, 3, &ph)).norm() < 1e-12);
                assert!((got[1][a] - eval_complex(&c2, dim, 3, &ph)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn batched_adjoint_matches_single() {
        for dim in 1..=3 {
            let set = FrequencySet::new(2, dim, false).unwrap();
            let pts: Vec<f64> = (0..9 * dim).map(|k| ((k as f64) * 0.5698).fract()).collect();
            let a1: Vec<f64> = (0..9).map(|k| (k as f64 * 0.3).sin()).collect();
            let a2: Vec<f64> = (0..9).map(|k| (k as f64 * 0.9).cos()).collect();
            let got = adjoint_points(&[&a1, &a2], dim, 2, &pts);
            let ones = vec![1.0; set.box_len()];
            for (k, amp) in [&a1, &a2].iter().enumerate() {
                let mut acc = vec![Complex64::new(0.0, 0.0); set.box_len()];
                let mut ph = Vec::new();
                for a in 0..9 {
                    point_phases(2, &pts[a * dim..(a + 1) * dim], &mut ph);
                    accumulate_conj(&mut acc, &[&ones], &[amp[a]], dim, 2, &ph);
                }
                for (x, y) in got[k].iter().zip(&acc) {
                    assert!((x - y).norm() < 1e-12, "dim {dim}");
                }
            }
        }
    }
}
