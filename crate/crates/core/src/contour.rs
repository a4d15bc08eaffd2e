//! Field grids and marching cubes.
//!
//! The 256-entry case table is generated rather than transcribed. Each cube
//! face contributes directed iso-segments; segments chain into closed loops
//! which are fan-triangulated. A face with two diagonal corners above the
//! level is ambiguous: the diagonal through the face's minimum corner is the
//! connected one. Both cells sharing a face agree on that corner, so meshes
//! are crack-free, but saddle cells may open or close tunnels differently
//! from an asymptotic decider.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::instrument;
use crate::posterior::{PosteriorModel, PosteriorSample};
use crate::queries::hitbox_grid;

/// Node layout of a regular 3-d grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub dims: [usize; 3],
}

impl GridSpec {
    /// `n^3` nodes spanning `[lo, hi]^3` inclusive.
    pub fn cube(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(hi > lo) {
            return Err(Error::Input(format!("grid needs n >= 2 and hi > lo, got n={n}, [{lo}, {hi}]")));
        }
        let h = (hi - lo) / (n - 1) as f64;
        let spec = Self {
            origin: [lo; 3],
            spacing: [h; 3],
            dims: [n; 3],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&n| n < 2) {
            return Err(Error::Input(format!("grid dims must be >= 2 per axis, got {:?}", self.dims)));
        }
        if self.spacing.iter().any(|&h| !(h > 0.0 && h.is_finite())) || self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Input("grid spacing must be positive and origin finite".into()));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn axis_nodes(&self) -> Vec<Vec<f64>> {
        (0..3)
            .map(|a| (0..self.dims[a]).map(|i| self.origin[a] + i as f64 * self.spacing[a]).collect())
            .collect()
    }
}

/// Field values on a regular grid, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarFieldGrid {
    spec: GridSpec,
    values: Vec<f64>,
}

impl ScalarFieldGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.node_count() {
            return Err(Error::Input(format!(
                "grid has {} nodes but {} values",
                spec.node_count(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite grid value at node {i}")));
        }
        instrument::record_grid_alloc();
        Ok(Self { spec, values })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dims(&self) -> [usize; 3] {
        self.spec.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let [nx, ny, _] = self.spec.dims;
        (k * ny + j) * nx + i
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let s = &self.spec;
        [
            s.origin[0] + i as f64 * s.spacing[0],
            s.origin[1] + j as f64 * s.spacing[1],
            s.origin[2] + k as f64 * s.spacing[2],
        ]
    }

    /// Same grid with `f` applied to every value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.spec, self.values.iter().map(|&v| f(v)).collect())
    }
}

/// Anything that can be evaluated on the nodes of a Cartesian grid.
pub trait FieldSource {
    /// Values on the product of `axis_nodes`, axis 0 fastest.
    fn eval_grid(&self, axis_nodes: &[Vec<f64>]) -> Result<Vec<f64>>;
}

/// Posterior mean.
impl FieldSource for PosteriorModel {
    fn eval_grid(&self, axis_nodes: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.mean_grid(axis_nodes)
    }
}

impl FieldSource for PosteriorSample {
    fn eval_grid(&self, axis_nodes: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.evaluate_grid(axis_nodes)
    }
}

/// The conservative field `mu + eta sigma`.
#[derive(Debug, Clone)]
pub struct Hitbox<'a> {
    pub model: &'a PosteriorModel,
    pub eta: f64,
}

impl FieldSource for Hitbox<'_> {
    fn eval_grid(&self, axis_nodes: &[Vec<f64>]) -> Result<Vec<f64>> {
        hitbox_grid(self.model, self.eta, axis_nodes)
    }
}

/// Wraps a plain function of position.
pub struct FnField<F>(pub F);

impl<F: Fn([f64; 3]) -> f64 + Sync> FieldSource for FnField<F> {
    fn eval_grid(&self, axis_nodes: &[Vec<f64>]) -> Result<Vec<f64>> {
        if axis_nodes.len() != 3 {
            return Err(Error::DimensionMismatch {
                expected: 3,
                got: axis_nodes.len(),
            });
        }
        let (xs, ys, zs) = (&axis_nodes[0], &axis_nodes[1], &axis_nodes[2]);
        Ok(zs
            .par_iter()
            .flat_map_iter(|&z| ys.iter().flat_map(move |&y| xs.iter().map(move |&x| (self.0)([x, y, z]))))
            .collect())
    }
}

/// Evaluates `source` at every node of `spec`.
pub fn sample_field<S: FieldSource + ?Sized>(source: &S, spec: &GridSpec) -> Result<ScalarFieldGrid> {
    spec.validate()?;
    let values = source.eval_grid(&spec.axis_nodes())?;
    ScalarFieldGrid::new(*spec, values)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Every undirected edge is used by exactly two triangles, once in each direction.
    pub fn is_watertight(&self) -> bool {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                *directed.entry((t[e], t[(e + 1) % 3])).or_default() += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &c)| c == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// `V - E + F` over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut verts = std::collections::HashSet::new();
        let mut edges = std::collections::HashSet::new();
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                verts.insert(a);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        verts.len() as i64 - edges.len() as i64 + self.triangles.len() as i64
    }

    /// Unnormalized face normal (twice the area vector).
    pub fn face_normal(&self, t: usize) -> [f64; 3] {
        let [a, b, c] = self.triangles[t];
        cross(sub(self.vertices[b], self.vertices[a]), sub(self.vertices[c], self.vertices[a]))
    }

    /// Applies `f` to every vertex.
    pub fn map_vertices(&mut self, f: impl Fn([f64; 3]) -> [f64; 3]) {
        for v in &mut self.vertices {
            *v = f(*v);
        }
    }

    pub fn write_obj<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for v in &self.vertices {
            writeln!(w, "v {} {} {}", v[0], v[1], v[2])?;
        }
        for t in &self.triangles {
            writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        Ok(())
    }

    pub fn save_obj(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_obj(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

fn corner_at(c: [usize; 3]) -> usize {
    CORNERS.iter().position(|&k| k == c).unwrap()
}

fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|&[p, q]| (p, q) == (a, b) || (p, q) == (b, a))
        .unwrap()
}

/// Faces `(axis, side)` containing edge `e`.
fn edge_faces(e: usize) -> [(usize, usize); 2] {
    let [p, q] = EDGES[e];
    let (a, b) = (CORNERS[p], CORNERS[q]);
    let mut out = [(0, 0); 2];
    let mut k = 0;
    for axis in 0..3 {
        if a[axis] == b[axis] {
            out[k] = (axis, a[axis]);
            k += 1;
        }
    }
    out
}

fn share_face(e: usize, f: usize) -> bool {
    let (a, b) = (edge_faces(e), edge_faces(f));
    a.iter().any(|x| b.contains(x))
}

/// Triangles of one case. Ids below 12 are cube edges; id `12 + l` is the
/// centre of loop `centres[l]`.
#[derive(Debug, Default)]
struct CaseEntry {
    tris: Vec<[u8; 3]>,
    centres: Vec<Vec<u8>>,
}

type CaseTable = Vec<CaseEntry>;

fn case_triangles(case: usize) -> CaseEntry {
    let inside = |c: usize| case >> c & 1 == 1;
    // directed segments start edge -> end edge
    let mut next: [Option<usize>; 12] = [None; 12];
    for axis in 0..3 {
        let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2 {
            let mut cycle: Vec<usize> = [(0, 0), (1, 0), (1, 1), (0, 1)]
                .iter()
                .map(|&(u, v)| {
                    let mut p = [0; 3];
                    p[axis] = side;
                    p[b] = u;
                    p[c] = v;
                    corner_at(p)
                })
                .collect();
            let min_corner = cycle[0];
            // counter-clockwise seen from outside the cube
            if side == 0 {
                cycle.reverse();
            }
            // (is_exit, edge) in cyclic order
            let mut crossings = Vec::new();
            for k in 0..4 {
                let (p, q) = (cycle[k], cycle[(k + 1) % 4]);
                if inside(p) != inside(q) {
                    crossings.push((inside(p), edge_between(p, q)));
                }
            }
            match crossings.len() {
                0 => {}
                2 => {
                    let (a, bb) = if crossings[0].0 {
                        (crossings[0].1, crossings[1].1)
                    } else {
                        (crossings[1].1, crossings[0].1)
                    };
                    next[a] = Some(bb);
                }
                4 => {
                    let join_inside = inside(min_corner);
                    for k in 0..4 {
                        if crossings[k].0 {
                            let partner = if join_inside { (k + 1) % 4 } else { (k + 3) % 4 };
                            next[crossings[k].1] = Some(crossings[partner].1);
                        }
                    }
                }
                _ => unreachable!("a square has an even number of sign changes"),
            }
        }
    }
    let mut entry = CaseEntry::default();
    let mut used = [false; 12];
    for start in 0..12 {
        if used[start] || next[start].is_none() {
            continue;
        }
        let mut lp = vec![start];
        used[start] = true;
        let mut e = next[start].unwrap();
        while e != start {
            used[e] = true;
            lp.push(e);
            e = next[e].expect("segments form closed loops");
        }
        // Fan from an apex whose chords avoid cube faces. A chord lying on an
        // ambiguous face could also be produced by the neighbouring cell,
        // which would glue the two sheets along it; if every apex has such a
        // chord, fan from a vertex at the loop centre instead.
        let len = lp.len();
        let on_face = |s: usize| (2..len.saturating_sub(1)).filter(|&k| share_face(lp[s], lp[(s + k) % len])).count();
        let apex = (0..len).min_by_key(|&s| (on_face(s), lp[s])).unwrap();
        if on_face(apex) == 0 {
            let at = |k: usize| lp[(apex + k) % len] as u8;
            for k in 1..len - 1 {
                entry.tris.push([at(0), at(k + 1), at(k)]);
            }
        } else {
            let c = 12 + entry.centres.len() as u8;
            for k in 0..len {
                entry.tris.push([c, lp[(k + 1) % len] as u8, lp[k] as u8]);
            }
            // sorted so the centre does not depend on loop orientation
            let mut members: Vec<u8> = lp.iter().map(|&e| e as u8).collect();
            members.sort_unstable();
            entry.centres.push(members);
        }
    }
    entry
}

fn case_table() -> &'static CaseTable {
    static TABLE: OnceLock<CaseTable> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(case_triangles).collect())
}

const MIN_AREA: f64 = 1e-12;

/// Triangulates the level set `{f = iso}`; nodes with `f > iso` are inside and
/// face normals point toward decreasing `f`.
pub fn marching_cubes(grid: &ScalarFieldGrid, iso: f64) -> TriangleMesh {
    let [nx, ny, nz] = grid.dims();
    let table = case_table();
    // per z-slab: crossing edges (global id, position) and triangles in global ids
    let slabs: Vec<(Vec<(usize, [f64; 3])>, Vec<[usize; 3]>)> = (0..nz - 1)
        .into_par_iter()
        .map(|k| {
            let mut verts = Vec::new();
            let mut tris = Vec::new();
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    let base = [i, j, k];
                    let mut case = 0usize;
                    let mut vals = [0.0; 8];
                    for (c, off) in CORNERS.iter().enumerate() {
                        let v = grid.value(i + off[0], j + off[1], k + off[2]);
                        vals[c] = v;
                        if v > iso {
                            case |= 1 << c;
                        }
                    }
                    let cell = &table[case];
                    if cell.tris.is_empty() {
                        continue;
                    }
                    let mut ids = [usize::MAX; 16];
                    let mut at = [[0.0; 3]; 12];
                    for (e, &[p, q]) in EDGES.iter().enumerate() {
                        if (vals[p] > iso) == (vals[q] > iso) {
                            continue;
                        }
                        // lower endpoint and axis give a global edge id
                        let (lo, hi) = if CORNERS[p] < CORNERS[q] { (p, q) } else { (q, p) };
                        let axis = (0..3).find(|&a| CORNERS[lo][a] != CORNERS[hi][a]).unwrap();
                        let c = [base[0] + CORNERS[lo][0], base[1] + CORNERS[lo][1], base[2] + CORNERS[lo][2]];
                        let id = grid.index(c[0], c[1], c[2]) * 3 + axis;
                        let (fl, fh) = (vals[lo], vals[hi]);
                        let t = (iso - fl) / (fh - fl);
                        let mut pos = grid.node(c[0], c[1], c[2]);
                        pos[axis] += t * grid.spec.spacing[axis];
                        verts.push((id, pos));
                        ids[e] = id;
                        at[e] = pos;
                    }
                    for (l, lp) in cell.centres.iter().enumerate() {
                        let mut c = [0.0; 3];
                        for &e in lp {
                            (0..3).for_each(|a| c[a] += at[e as usize][a] / lp.len() as f64);
                        }
                        let id = 3 * grid.values.len() + 4 * grid.index(i, j, k) + l;
                        verts.push((id, c));
                        ids[12 + l] = id;
                    }
                    for t in &cell.tris {
                        tris.push([ids[t[0] as usize], ids[t[1] as usize], ids[t[2] as usize]]);
                    }
                }
            }
            (verts, tris)
        })
        .collect();

    let mut mesh = TriangleMesh::default();
    let mut index: HashMap<usize, usize> = HashMap::new();
    for (verts, tris) in slabs {
        for (id, pos) in verts {
            index.entry(id).or_insert_with(|| {
                mesh.vertices.push(pos);
                mesh.vertices.len() - 1
            });
        }
        for t in tris {
            mesh.triangles.push([index[&t[0]], index[&t[1]], index[&t[2]]]);
        }
    }
    collapse_degenerate(mesh)
}

fn area(v: &[[f64; 3]], t: [usize; 3]) -> f64 {
    let n = cross(sub(v[t[1]], v[t[0]]), sub(v[t[2]], v[t[0]]));
    0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Removes near-zero-area triangles without opening holes.
///
/// Crossings that land on or next to a grid node produce slivers. Dropping
/// them would leave gaps, so the shortest edge of each sliver is collapsed
/// instead (the lower vertex index survives), which removes the sliver and
/// its neighbour across that edge while keeping every other edge paired.
fn collapse_degenerate(mesh: TriangleMesh) -> TriangleMesh {
    let TriangleMesh { vertices, mut triangles } = mesh;
    let mut parent: Vec<usize> = (0..vertices.len()).collect();
    fn find(parent: &mut [usize], mut a: usize) -> usize {
        while parent[a] != a {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        a
    }
    loop {
        let mut merged = false;
        for t in &mut triangles {
            let r = t.map(|a| find(&mut parent, a));
            *t = r;
            if r[0] == r[1] || r[1] == r[2] || r[0] == r[2] || area(&vertices, r) > MIN_AREA {
                continue;
            }
            let e = (0..3)
                .min_by(|&a, &b| {
                    let da = dist2(vertices[r[a]], vertices[r[(a + 1) % 3]]);
                    let db = dist2(vertices[r[b]], vertices[r[(b + 1) % 3]]);
                    da.total_cmp(&db)
                })
                .unwrap();
            let (p, q) = (r[e], r[(e + 1) % 3]);
            parent[p.max(q)] = p.min(q);
            merged = true;
        }
        if !merged {
            break;
        }
    }
    let mut touched = Vec::with_capacity(triangles.len());
    let mut kept: Vec<[usize; 3]> = Vec::with_capacity(triangles.len());
    for t in triangles {
        let r = t.map(|a| find(&mut parent, a));
        if r[0] != r[1] && r[1] != r[2] && r[0] != r[2] {
            touched.push(r != t || t.iter().any(|&a| a != parent[a]));
            kept.push(r);
        }
    }
    // a collapse can fold two faces onto each other with opposite orientation;
    // untouched coincident pairs are genuine (two cells sharing a face chord)
    let key = |t: &[usize; 3]| {
        let mut k = *t;
        k.sort_unstable();
        k
    };
    let mut by_key: HashMap<[usize; 3], Vec<usize>> = HashMap::new();
    for (i, t) in kept.iter().enumerate() {
        if touched[i] {
            by_key.entry(key(t)).or_default().push(i);
        }
    }
    let mut drop = vec![false; kept.len()];
    for idx in by_key.values().filter(|v| v.len() > 1) {
        let even = |t: &[usize; 3]| (t[0] < t[1]) as u8 + (t[1] < t[2]) as u8 + (t[2] < t[0]) as u8 == 2;
        let (pos, neg): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| even(&kept[i]));
        for (&a, &b) in pos.iter().zip(&neg) {
            drop[a] = true;
            drop[b] = true;
        }
    }
    let mut keep_iter = drop.iter();
    kept.retain(|_| !keep_iter.next().unwrap());
    // compact, preserving first-appearance order of the original vertices
    let mut remap = vec![usize::MAX; vertices.len()];
    let mut out = TriangleMesh::default();
    for (i, v) in vertices.iter().enumerate() {
        if parent[i] == i {
            remap[i] = out.vertices.len();
            out.vertices.push(*v);
        }
    }
    let mut used = vec![false; out.vertices.len()];
    out.triangles = kept
        .into_iter()
        .map(|t| {
            let r = t.map(|a| remap[a]);
            r.iter().for_each(|&a| used[a] = true);
            r
        })
        .collect();
    if used.iter().all(|&u| u) {
        return out;
    }
    let mut second = vec![usize::MAX; used.len()];
    let mut verts = Vec::new();
    for (i, v) in out.vertices.iter().enumerate() {
        if used[i] {
            second[i] = verts.len();
            verts.push(*v);
        }
    }
    out.triangles.iter_mut().for_each(|t| *t = t.map(|a| second[a]));
    out.vertices = verts;
    out
}
