//! C ABI for `spsr-core`.
//!
//! Every function returns an [`SpsrStatus`]. On failure a message is
//! available from [`spsr_last_error`] on the same thread until the next call.
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `_free` function. Arrays of points are flat `x y z` triples.
//! Coordinates are raw (pre-normalization) when the model was built with
//! `normalize != 0`, torus coordinates otherwise.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use spsr_core::contour::{marching_cubes, sample_field, GridSpec, Hitbox, TriangleMesh};
use spsr_core::io::{normalize_to_torus, OrientedPointCloud, Transform};
use spsr_core::kernels::Hyperparameters;
use spsr_core::points::PointSet;
use spsr_core::posterior::{PosteriorConfig, PosteriorModel, SolverChoice};
use spsr_core::queries::{self, CollisionMode, Ray};
use spsr_core::solver::{ObservationSystem, SgdConfig};
use spsr_core::{Error, ErrorCategory};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpsrStatus {
    Ok = 0,
    /// Null pointer, bad enum value or undersized buffer.
    InvalidArgument = 1,
    Input = 2,
    Numerical = 3,
    Io = 4,
    /// A bug: the library panicked.
    Internal = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpsrSolver {
    Exact = 0,
    Sgd = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpsrCollisionMode {
    Any = 0,
    All = 1,
}

/// Which field to contour.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpsrField {
    Mean = 0,
    /// `mean + eta * std`; uses `eta`.
    Hitbox = 1,
    /// One posterior sample; uses `seed`.
    Sample = 2,
}

/// Model settings. Fill with [`spsr_params_default`] and adjust.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SpsrParams {
    pub nu: f64,
    pub kappa: [f64; 3],
    pub sigma2: f64,
    pub noise2: f64,
    pub f_cross: u32,
    pub f_prior: u32,
    /// Amortization table nodes per axis; 0 disables the table.
    pub amortize_grid: u32,
    /// An [`SpsrSolver`] value.
    pub solver: u32,
    pub sgd_iterations: u32,
    pub seed: u64,
    /// Nonzero: map the input into the torus with `margin` and keep raw coordinates at the API.
    pub normalize: u8,
    pub margin: f64,
}

pub struct SpsrModel {
    model: PosteriorModel,
    transform: Transform,
}

pub struct SpsrMesh {
    mesh: TriangleMesh,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SpsrStatus {
    match e.category() {
        ErrorCategory::Input => SpsrStatus::Input,
        ErrorCategory::Numerical => SpsrStatus::Numerical,
        ErrorCategory::Io => SpsrStatus::Io,
    }
}

enum Failure {
    Arg(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type FfiResult = std::result::Result<(), Failure>;

fn guard(f: impl FnOnce() -> FfiResult) -> SpsrStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpsrStatus::Ok,
        Ok(Err(Failure::Arg(m))) => {
            set_error(m);
            SpsrStatus::InvalidArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            SpsrStatus::Internal
        }
    }
}

fn arg<T>(what: &str) -> std::result::Result<T, Failure> {
    Err(Failure::Arg(format!("{what} must not be null")))
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> std::result::Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return arg(what);
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or valid for `len` writes.
unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> std::result::Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return arg(what);
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

/// # Safety
/// `ptr` must be null or point to a live value.
unsafe fn deref<'a, T>(ptr: *const T, what: &str) -> std::result::Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| Failure::Arg(format!("{what} must not be null")))
}

fn triples(flat: &[f64]) -> Vec<[f64; 3]> {
    flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

impl SpsrModel {
    fn torus_points(&self, flat: &[f64]) -> PointSet {
        PointSet::from_points3(&triples(flat).into_iter().map(|p| self.transform.apply(p)).collect::<Vec<_>>())
    }
}

/// Message for the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn spsr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn spsr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// # Safety
/// `params` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn spsr_params_default(params: *mut SpsrParams) -> SpsrStatus {
    guard(|| {
        let p = params.as_mut().ok_or_else(|| Failure::Arg("params must not be null".into()))?;
        *p = SpsrParams {
            nu: 1.5,
            kappa: [0.04; 3],
            sigma2: 1.0,
            noise2: 1e-4,
            f_cross: 50,
            f_prior: 20,
            amortize_grid: 50,
            solver: SpsrSolver::Exact as u32,
            sgd_iterations: 5000,
            seed: 0,
            normalize: 1,
            margin: spsr_core::io::DEFAULT_MARGIN,
        };
        Ok(())
    })
}

/// Fits a posterior to `n` oriented points.
///
/// # Safety
/// `points` and `normals` must hold `3 n` doubles; `params` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn spsr_model_build(
    points: *const f64,
    normals: *const f64,
    n: usize,
    params: *const SpsrParams,
    out: *mut *mut SpsrModel,
) -> SpsrStatus {
    guard(|| {
        let p = *deref(params, "params")?;
        if out.is_null() {
            return arg("out");
        }
        *out = std::ptr::null_mut();
        let pts = slice(points, 3 * n, "points")?;
        let nrm = slice(normals, 3 * n, "normals")?;
        let cloud = OrientedPointCloud::new(triples(pts), triples(nrm))?;
        let cloud = if p.normalize != 0 {
            normalize_to_torus(&cloud, p.margin)?
        } else {
            cloud
        };
        let hp = Hyperparameters::new(p.nu, p.kappa.to_vec(), p.sigma2, p.noise2)?;
        let solver = match p.solver {
            0 => SolverChoice::Exact,
            1 => SolverChoice::Sgd(SgdConfig {
                iterations: p.sgd_iterations as usize,
                seed: p.seed,
                ..SgdConfig::default()
            }),
            v => return Err(Failure::Arg(format!("unknown solver {v}"))),
        };
        let config = PosteriorConfig {
            f_cross: p.f_cross as usize,
            f_prior: p.f_prior as usize,
            amortize_grid: (p.amortize_grid > 0).then_some(p.amortize_grid as usize),
            solver,
            path: None,
        };
        config.validate()?;
        let system = ObservationSystem::new(cloud.torus_point_set(), cloud.normal_set(), hp)?;
        let model = PosteriorModel::build(system, config)?;
        *out = Box::into_raw(Box::new(SpsrModel {
            model,
            transform: cloud.transform,
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`spsr_model_build`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spsr_model_free(model: *mut SpsrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Posterior mean at `m` points.
///
/// # Safety
/// `x` holds `3 m` doubles, `out` room for `m`.
#[no_mangle]
pub unsafe extern "C" fn spsr_model_mean(
    model: *const SpsrModel,
    x: *const f64,
    m: usize,
    out: *mut f64,
) -> SpsrStatus {
    guard(|| {
        let h = deref(model, "model")?;
        let ps = h.torus_points(slice(x, 3 * m, "x")?);
        let out = slice_mut(out, m, "out")?;
        out.copy_from_slice(&h.model.mean(&ps)?);
        Ok(())
    })
}

/// Posterior variance at `m` points.
///
/// # Safety
/// As [`spsr_model_mean`].
#[no_mangle]
pub unsafe extern "C" fn spsr_model_variance(
    model: *const SpsrModel,
    x: *const f64,
    m: usize,
    out: *mut f64,
) -> SpsrStatus {
    guard(|| {
        let h = deref(model, "model")?;
        let ps = h.torus_points(slice(x, 3 * m, "x")?);
        let out = slice_mut(out, m, "out")?;
        out.copy_from_slice(&h.model.variance(&ps)?);
        Ok(())
    })
}

/// `P(f > 0)` at `m` points.
///
/// # Safety
/// As [`spsr_model_mean`].
#[no_mangle]
pub unsafe extern "C" fn spsr_model_occupancy(
    model: *const SpsrModel,
    x: *const f64,
    m: usize,
    out: *mut f64,
) -> SpsrStatus {
    guard(|| {
        let h = deref(model, "model")?;
        let ps = h.torus_points(slice(x, 3 * m, "x")?);
        let out = slice_mut(out, m, "out")?;
        for (o, e) in out.iter_mut().zip(queries::occupancy_many(&h.model, &ps)?) {
            *o = e.value;
        }
        Ok(())
    })
}

/// Probability that any or all (an [`SpsrCollisionMode`]) of `m` probes are
/// inside, with its standard error.
///
/// # Safety
/// `probes` holds `3 m` doubles; `value` and `std_error` are valid.
#[no_mangle]
pub unsafe extern "C" fn spsr_model_collision(
    model: *const SpsrModel,
    probes: *const f64,
    m: usize,
    mode: u32,
    n_samples: usize,
    seed: u64,
    value: *mut f64,
    std_error: *mut f64,
) -> SpsrStatus {
    guard(|| {
        let h = deref(model, "model")?;
        if value.is_null() || std_error.is_null() {
            return arg("value and std_error");
        }
        let ps = h.torus_points(slice(probes, 3 * m, "probes")?);
        let mode = match mode {
            0 => CollisionMode::Any,
            1 => CollisionMode::All,
            v => return Err(Failure::Arg(format!("unknown collision mode {v}"))),
        };
        let e = queries::collision_probability(&h.model, &ps, mode, n_samples, seed)?;
        *value = e.value;
        *std_error = e.std_error;
        Ok(())
    })
}

/// Transmittance along a ray sampled every `step` up to `t_max`.
/// Writes at most `capacity` values and the full count to `written`.
///
/// # Safety
/// `origin` and `direction` hold 3 doubles; `out` room for `capacity`; `written` valid.
#[no_mangle]
pub unsafe extern "C" fn spsr_model_transmittance(
    model: *const SpsrModel,
    origin: *const f64,
    direction: *const f64,
    t_max: f64,
    step: f64,
    n_samples: usize,
    seed: u64,
    out: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> SpsrStatus {
    guard(|| {
        let h = deref(model, "model")?;
        let o = slice(origin, 3, "origin")?;
        let d = slice(direction, 3, "direction")?;
        if written.is_null() {
            return arg("written");
        }
        let s = h.transform.scale;
        let ray = Ray::new(
            h.transform.apply([o[0], o[1], o[2]]).to_vec(),
            d.to_vec(),
            t_max * s,
            step * s,
        )?;
        let curve = queries::transmittance(&h.model, &ray, n_samples, seed)?;
        *written = curve.len();
        if capacity < curve.len() {
            return Err(Failure::Arg(format!("out needs room for {} values", curve.len())));
        }
        let out = slice_mut(out, curve.len(), "out")?;
        for (o, (_, t)) in out.iter_mut().zip(curve) {
            *o = t;
        }
        Ok(())
    })
}

/// Contours a field (an [`SpsrField`]) on a `grid_n^3` grid over the torus chart.
///
/// # Safety
/// `model` is a live handle; `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn spsr_model_extract_mesh(
    model: *const SpsrModel,
    field: u32,
    eta: f64,
    seed: u64,
    grid_n: usize,
    out: *mut *mut SpsrMesh,
) -> SpsrStatus {
    guard(|| {
        let h = deref(model, "model")?;
        if out.is_null() {
            return arg("out");
        }
        *out = std::ptr::null_mut();
        let spec = GridSpec::cube(0.0, 1.0, grid_n)?;
        let grid = match field {
            0 => sample_field(&h.model, &spec)?,
            1 => sample_field(
                &Hitbox {
                    model: &h.model,
                    eta,
                },
                &spec,
            )?,
            2 => sample_field(&h.model.sample(seed)?, &spec)?,
            v => return Err(Failure::Arg(format!("unknown field {v}"))),
        };
        let mut mesh = marching_cubes(&grid, 0.0);
        let t = h.transform;
        mesh.map_vertices(|v| t.invert(v));
        *out = Box::into_raw(Box::new(SpsrMesh { mesh }));
        Ok(())
    })
}

/// # Safety
/// `mesh` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn spsr_mesh_vertex_count(mesh: *const SpsrMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.mesh.vertices.len())
}

/// # Safety
/// `mesh` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn spsr_mesh_triangle_count(mesh: *const SpsrMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.mesh.triangles.len())
}

/// Copies `3 V` vertex coordinates.
///
/// # Safety
/// `out` has room for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn spsr_mesh_vertices(mesh: *const SpsrMesh, out: *mut f64, capacity: usize) -> SpsrStatus {
    guard(|| {
        let m = deref(mesh, "mesh")?;
        let need = 3 * m.mesh.vertices.len();
        if capacity < need {
            return Err(Failure::Arg(format!("out needs room for {need} doubles")));
        }
        let out = slice_mut(out, need, "out")?;
        for (o, v) in out.chunks_exact_mut(3).zip(&m.mesh.vertices) {
            o.copy_from_slice(v);
        }
        Ok(())
    })
}

/// Copies `3 T` zero-based vertex indices.
///
/// # Safety
/// `out` has room for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn spsr_mesh_triangles(mesh: *const SpsrMesh, out: *mut u32, capacity: usize) -> SpsrStatus {
    guard(|| {
        let m = deref(mesh, "mesh")?;
        let need = 3 * m.mesh.triangles.len();
        if capacity < need {
            return Err(Failure::Arg(format!("out needs room for {need} indices")));
        }
        let out = slice_mut(out, need, "out")?;
        for (o, t) in out.chunks_exact_mut(3).zip(&m.mesh.triangles) {
            for k in 0..3 {
                o[k] = u32::try_from(t[k]).map_err(|_| Failure::Arg("mesh too large for 32-bit indices".into()))?;
            }
        }
        Ok(())
    })
}

/// Writes the mesh as ASCII OBJ.
///
/// # Safety
/// `path` is a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn spsr_mesh_save_obj(mesh: *const SpsrMesh, path: *const c_char) -> SpsrStatus {
    guard(|| {
        let m = deref(mesh, "mesh")?;
        if path.is_null() {
            return arg("path");
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure::Arg("path is not UTF-8".into()))?;
        m.mesh.save_obj(Path::new(p))?;
        Ok(())
    })
}

/// # Safety
/// `mesh` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spsr_mesh_free(mesh: *mut SpsrMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}
