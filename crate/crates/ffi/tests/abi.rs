use std::ffi::{CStr, CString};
use std::mem::MaybeUninit;
use std::ptr;

use spsr_ffi::*;

fn sphere(n: usize) -> (Vec<f64>, Vec<f64>) {
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    let (mut p, mut v) = (Vec::new(), Vec::new());
    for i in 0..n {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let r = (1.0 - z * z).sqrt();
        let t = std::f64::consts::TAU * i as f64 / golden;
        let u = [r * t.cos(), r * t.sin(), z];
        p.extend(u.iter().map(|c| 3.0 * c + 1.0));
        v.extend(u);
    }
    (p, v)
}

fn params() -> SpsrParams {
    let mut p = MaybeUninit::uninit();
    assert_eq!(unsafe { spsr_params_default(p.as_mut_ptr()) }, SpsrStatus::Ok);
    let mut p = unsafe { p.assume_init() };
    p.kappa = [0.15; 3];
    p.f_cross = 8;
    p.f_prior = 6;
    p.amortize_grid = 0;
    p
}

fn last_error() -> String {
    let e = spsr_last_error();
    assert!(!e.is_null());
    unsafe { CStr::from_ptr(e) }.to_string_lossy().into_owned()
}

struct Model(*mut SpsrModel);

impl Drop for Model {
    fn drop(&mut self) {
        unsafe { spsr_model_free(self.0) }
    }
}

fn build() -> Model {
    let (p, v) = sphere(150);
    let mut m = ptr::null_mut();
    let s = unsafe { spsr_model_build(p.as_ptr(), v.as_ptr(), 150, &params(), &mut m) };
    assert_eq!(s, SpsrStatus::Ok);
    assert!(spsr_last_error().is_null());
    Model(m)
}

#[test]
fn mean_variance_and_occupancy_in_raw_coordinates() {
    let m = build();
    // the last probe lies in the margin, away from the wrapped copy of the sphere
    let x = [1.0, 1.0, 1.0, 3.9, 1.0, 1.0, 5.0, 1.0, 1.0];
    let (mut mean, mut var, mut occ) = ([0.0; 3], [0.0; 3], [0.0; 3]);
    unsafe {
        assert_eq!(spsr_model_mean(m.0, x.as_ptr(), 3, mean.as_mut_ptr()), SpsrStatus::Ok);
        assert_eq!(spsr_model_variance(m.0, x.as_ptr(), 3, var.as_mut_ptr()), SpsrStatus::Ok);
        assert_eq!(spsr_model_occupancy(m.0, x.as_ptr(), 3, occ.as_mut_ptr()), SpsrStatus::Ok);
    }
    assert!(mean[0] > 0.0 && mean[2] < 0.0, "{mean:?}");
    assert!(var.iter().all(|&v| v >= 0.0));
    assert!(occ.iter().all(|&o| (0.0..=1.0).contains(&o)));
    assert!(occ[0] > occ[2]);
}

#[test]
fn errors_carry_status_and_message() {
    let mut m = ptr::null_mut();
    let s = unsafe { spsr_model_build(ptr::null(), ptr::null(), 4, &params(), &mut m) };
    assert_eq!(s, SpsrStatus::InvalidArgument);
    assert!(last_error().contains("points"));
    assert!(m.is_null());

    let p = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    let v = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
    let s = unsafe { spsr_model_build(p.as_ptr(), v.as_ptr(), 2, &params(), &mut m) };
    assert_eq!(s, SpsrStatus::Input);
    assert!(last_error().contains("zero length"));

    let mut bad = params();
    bad.kappa[1] = -1.0;
    let v = [0.0, 0.0, 1.0, 0.0, 1.0, 0.0];
    assert_eq!(unsafe { spsr_model_build(p.as_ptr(), v.as_ptr(), 2, &bad, &mut m) }, SpsrStatus::Input);
    let mut bad = params();
    bad.solver = 9;
    assert_eq!(unsafe { spsr_model_build(p.as_ptr(), v.as_ptr(), 2, &bad, &mut m) }, SpsrStatus::InvalidArgument);

    let mut out = [0.0];
    assert_eq!(unsafe { spsr_model_mean(ptr::null(), p.as_ptr(), 1, out.as_mut_ptr()) }, SpsrStatus::InvalidArgument);
    unsafe { spsr_model_free(ptr::null_mut()) };
}

#[test]
fn monte_carlo_queries() {
    let m = build();
    let probes = [1.0, 1.0, 1.0, 9.0, 9.0, 9.0];
    let (mut any, mut all, mut se) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(spsr_model_collision(m.0, probes.as_ptr(), 2, 0, 32, 1, &mut any, &mut se), SpsrStatus::Ok);
        assert_eq!(spsr_model_collision(m.0, probes.as_ptr(), 2, 1, 32, 1, &mut all, &mut se), SpsrStatus::Ok);
        assert_eq!(
            spsr_model_collision(m.0, probes.as_ptr(), 2, 7, 32, 1, &mut all, &mut se),
            SpsrStatus::InvalidArgument
        );
    }
    assert!(any >= all);

    let (o, d) = ([-3.0, 1.0, 1.0], [1.0, 0.0, 0.0]);
    let mut written = 0usize;
    let mut small = [0.0; 2];
    let s = unsafe {
        spsr_model_transmittance(m.0, o.as_ptr(), d.as_ptr(), 8.0, 0.2, 16, 3, small.as_mut_ptr(), 2, &mut written)
    };
    assert_eq!(s, SpsrStatus::InvalidArgument);
    assert_eq!(written, 41);
    let mut t = vec![0.0; written];
    let s = unsafe {
        spsr_model_transmittance(m.0, o.as_ptr(), d.as_ptr(), 8.0, 0.2, 16, 3, t.as_mut_ptr(), t.len(), &mut written)
    };
    assert_eq!(s, SpsrStatus::Ok);
    assert!(t.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(*t.last().unwrap(), 0.0);
}

#[test]
fn mesh_extraction_and_export() {
    let m = build();
    let mut mesh = ptr::null_mut();
    assert_eq!(unsafe { spsr_model_extract_mesh(m.0, 0, 0.0, 0, 20, &mut mesh) }, SpsrStatus::Ok);
    let (nv, nt) = unsafe { (spsr_mesh_vertex_count(mesh), spsr_mesh_triangle_count(mesh)) };
    assert!(nv > 0 && nt > 0);
    let mut verts = vec![0.0; 3 * nv];
    let mut tris = vec![0u32; 3 * nt];
    unsafe {
        assert_eq!(spsr_mesh_vertices(mesh, verts.as_mut_ptr(), verts.len()), SpsrStatus::Ok);
        assert_eq!(spsr_mesh_triangles(mesh, tris.as_mut_ptr(), tris.len()), SpsrStatus::Ok);
        assert_eq!(spsr_mesh_triangles(mesh, tris.as_mut_ptr(), 3), SpsrStatus::InvalidArgument);
    }
    assert!(tris.iter().all(|&i| (i as usize) < nv));
    // raw coordinates: the sphere of radius 3 around (1, 1, 1)
    let r = ((verts[0] - 1.0).powi(2) + (verts[1] - 1.0).powi(2) + (verts[2] - 1.0).powi(2)).sqrt();
    assert!((r - 3.0).abs() < 1.0, "{r}");

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.obj").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { spsr_mesh_save_obj(mesh, path.as_ptr()) }, SpsrStatus::Ok);
    let text = std::fs::read_to_string(dir.path().join("m.obj")).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), nt);
    let missing = CString::new("/nonexistent-dir/m.obj").unwrap();
    assert_eq!(unsafe { spsr_mesh_save_obj(mesh, missing.as_ptr()) }, SpsrStatus::Io);
    unsafe { spsr_mesh_free(mesh) };
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(spsr_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/spsr.h");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("t.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{header}\"\nint main(void) {{ SpsrParams p; return spsr_params_default(&p) == SPSR_STATUS_OK ? 0 : 1; }}\n"
        ),
    )
    .unwrap();
    match std::process::Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).status() {
        Ok(s) => assert!(s.success(), "generated header does not compile"),
        Err(_) => eprintln!("no C compiler found; skipping header check"),
    }
}
