mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spsr_core::cli::{self, Query, RunConfig, Session};
use spsr_core::instrument;
use spsr_core::io::{format_cloud, CloudFormat, OrientedPointCloud};
use spsr_core::queries::CollisionMode;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let (p, n) = common::sphere_cloud(120, [1.0, 2.0, 3.0], 2.0);
        let cloud = OrientedPointCloud::new(p, n).unwrap();
        std::fs::write(dir.path().join("sphere.xyz"), format_cloud(CloudFormat::Xyz, &cloud)).unwrap();
        std::fs::write(dir.path().join("probes.txt"), "1 2 3\n# far away\n4.5 2 3\n1 2 4.9\n").unwrap();
        std::fs::write(
            dir.path().join("rays.txt"),
            "-2 2 3 1 0 0 6 0.1\n1 -2 3 0 1 0 6 0.1\n1 2 -1.5 0 0 1 2 0.1\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("run.cfg"),
            "# small model\nkappa = 0.15\nf-cross = 8\nf-prior = 8\namortize-grid = 16\ngrid = 12\nseed = 7\n",
        )
        .unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str], out: &str) -> Output {
        let out = self.path(out);
        Command::new(env!("CARGO_BIN_EXE_spsr"))
            .args(args)
            .arg("--config")
            .arg(self.path("run.cfg"))
            .arg("--input")
            .arg(self.path("sphere.xyz"))
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap()
    }

    fn config(&self, out: &str) -> RunConfig {
        let mut s = cli::load_settings(&self.path("run.cfg")).unwrap();
        s.insert("input".into(), self.path("sphere.xyz").display().to_string());
        s.insert("out".into(), self.path(out).display().to_string());
        RunConfig::from_settings(&s).unwrap()
    }
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

/// Runs a command twice into fresh directories and checks the outputs match byte for byte.
fn deterministic(fx: &Fixture, args: &[&str], expect: &[&str]) {
    let a = fx.run(args, "a");
    ok(&a);
    let b = fx.run(args, "b");
    ok(&b);
    let fa = files(&fx.path("a"));
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, expect);
    assert!(fa.iter().all(|(_, bytes)| !bytes.is_empty()));
    assert_eq!(fa, files(&fx.path("b")), "{args:?} is not deterministic");
    std::fs::remove_dir_all(fx.path("a")).unwrap();
    std::fs::remove_dir_all(fx.path("b")).unwrap();
}

#[test]
fn reconstruct_writes_mean_grid_and_mesh() {
    let fx = Fixture::new();
    deterministic(&fx, &["reconstruct"], &["mean.grid", "mesh.obj"]);
    ok(&fx.run(&["reconstruct"], "r"));
    let obj = std::fs::read_to_string(fx.path("r/mesh.obj")).unwrap();
    // raw coordinates: the sphere has radius 2 around (1, 2, 3)
    let radii: Vec<f64> = obj
        .lines()
        .filter_map(|l| l.strip_prefix("v "))
        .map(|l| {
            let v: Vec<f64> = l.split_whitespace().map(|w| w.parse().unwrap()).collect();
            ((v[0] - 1.0).powi(2) + (v[1] - 2.0).powi(2) + (v[2] - 3.0).powi(2)).sqrt()
        })
        .collect();
    assert!(!radii.is_empty());
    let mean = radii.iter().sum::<f64>() / radii.len() as f64;
    assert!((mean - 2.0).abs() < 0.3, "{mean}");
}

#[test]
fn sample_writes_one_mesh_per_sample() {
    let fx = Fixture::new();
    deterministic(
        &fx,
        &["sample", "--n-samples", "2", "--write-grids"],
        &["sample_000.grid", "sample_000.obj", "sample_001.grid", "sample_001.obj"],
    );
}

#[test]
fn queries_write_json() {
    let fx = Fixture::new();
    let probes = fx.path("probes.txt").display().to_string();
    let rays = fx.path("rays.txt").display().to_string();
    for args in [
        vec!["query", "occupancy", "--probes", &probes],
        vec!["query", "collision", "--probes", &probes, "--mode", "all", "--n-samples", "16"],
        vec!["query", "transmittance", "--rays", &rays, "--n-samples", "16"],
        vec!["query", "total-uncertainty", "--n-points", "300"],
    ] {
        deterministic(&fx, &args, &["query.json"]);
    }
    ok(&fx.run(&["query", "occupancy", "--probes", &probes], "q"));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(fx.path("q/query.json")).unwrap()).unwrap();
    assert_eq!(v["query"], "occupancy");
    let p: Vec<f64> = v["probes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["value"].as_f64().unwrap())
        .collect();
    assert_eq!(p.len(), 3);
    assert!(p[0] > 0.9 && p[1] < 0.5, "{p:?}");
}

#[test]
fn hitbox_and_next_view() {
    let fx = Fixture::new();
    deterministic(&fx, &["hitbox", "--eta", "1.5"], &["hitbox.obj"]);
    let rays = fx.path("rays.txt").display().to_string();
    deterministic(&fx, &["next-view", "--rays", &rays, "--n-samples", "16"], &["next_view.json"]);
}

#[test]
fn bench_writes_csv() {
    let fx = Fixture::new();
    let o = fx.run(&["bench", "--sweep", "amortization"], "bench");
    ok(&o);
    let csv = std::fs::read_to_string(fx.path("bench/bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "sweep,parameter,seconds,value");
    assert_eq!(lines.len(), 5);
    let errs: Vec<f64> = lines[1..].iter().map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
}

#[test]
fn invalid_input_exits_with_input_code() {
    let fx = Fixture::new();
    let missing = Command::new(env!("CARGO_BIN_EXE_spsr"))
        .args(["reconstruct", "--input"])
        .arg(fx.path("nope.xyz"))
        .arg("--out")
        .arg(fx.path("x"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("spsr: "));
    for args in [
        vec!["reconstruct", "--kappa", "-1"],
        vec!["reconstruct", "--nu", "2.5"],
        vec!["hitbox", "--eta", "-1"],
        vec!["sample", "--n-samples", "0"],
        vec!["query", "occupancy"],
        vec!["next-view", "--rays", "/nonexistent/rays.txt"],
        vec!["bench", "--sweep", "everything"],
    ] {
        let o = fx.run(&args, "x");
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    std::fs::write(fx.path("bad.cfg"), "kappa = 0.1\ncolour = blue\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_spsr"))
        .args(["reconstruct", "--config"])
        .arg(fx.path("bad.cfg"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(fx.path("bad.xyz"), "0 0 0 0 0\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_spsr"))
        .args(["reconstruct", "--input"])
        .arg(fx.path("bad.xyz"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_with_io_code() {
    let fx = Fixture::new();
    std::fs::write(fx.path("file"), "").unwrap();
    let o = fx.run(&["reconstruct"], "file/sub");
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn queries_never_build_volumetric_grids() {
    let fx = Fixture::new();
    let session = Session::open(fx.config("inst")).unwrap();
    let queries = [
        Query::Occupancy { probes: fx.path("probes.txt") },
        Query::Collision {
            probes: fx.path("probes.txt"),
            mode: CollisionMode::Any,
            n_samples: 8,
        },
        Query::Transmittance {
            rays: fx.path("rays.txt"),
            n_samples: 8,
        },
        Query::TotalUncertainty {
            region: None,
            n_points: 100,
        },
    ];
    for q in &queries {
        instrument::reset();
        session.query(q).unwrap();
        let c = instrument::snapshot();
        assert_eq!(c.grid_allocs, 0, "{q:?}");
        assert!(c.point_evals > 0);
    }
    instrument::reset();
    session.next_view(&fx.path("rays.txt"), 0.05, 8).unwrap();
    assert_eq!(instrument::snapshot().grid_allocs, 0);
    // grid output is the only thing that builds one
    instrument::reset();
    session.reconstruct().unwrap();
    assert!(instrument::snapshot().grid_allocs >= 1);
}
