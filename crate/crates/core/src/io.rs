//! Oriented point clouds (ASCII PLY and XYZ), torus normalization and
//! field-grid files.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::contour::{GridSpec, ScalarFieldGrid};
use crate::error::{Error, Result};
use crate::points::PointSet;

pub const DEFAULT_MARGIN: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    PlyAscii,
    Xyz,
}

impl CloudFormat {
    /// Guesses from the file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ply" => Some(Self::PlyAscii),
            "xyz" | "txt" => Some(Self::Xyz),
            _ => None,
        }
    }
}

impl std::str::FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ply" | "ply-ascii" => Ok(Self::PlyAscii),
            "xyz" => Ok(Self::Xyz),
            _ => Err(Error::Config(format!("unknown point cloud format {s:?} (expected ply or xyz)"))),
        }
    }
}

/// Uniform scale plus translation, `y = scale x + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub scale: f64,
    pub translation: [f64; 3],
}

impl Transform {
    pub const IDENTITY: Self = Self {
        scale: 1.0,
        translation: [0.0; 3],
    };

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.scale * p[a] + self.translation[a])
    }

    pub fn invert(&self, q: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (q[a] - self.translation[a]) / self.scale)
    }

    pub fn compose(&self, inner: &Transform) -> Transform {
        Transform {
            scale: self.scale * inner.scale,
            translation: std::array::from_fn(|a| self.scale * inner.translation[a] + self.translation[a]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientedPointCloud {
    /// Raw positions as loaded.
    pub points: Vec<[f64; 3]>,
    /// Unit normals.
    pub normals: Vec<[f64; 3]>,
    /// Raw to torus coordinates.
    pub transform: Transform,
}

impl OrientedPointCloud {
    pub fn new(points: Vec<[f64; 3]>, normals: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() || points.len() != normals.len() {
            return Err(Error::Input(format!(
                "cloud needs N >= 1 points with one normal each, got {} points and {} normals",
                points.len(),
                normals.len()
            )));
        }
        let mut unit = Vec::with_capacity(normals.len());
        for (i, (p, n)) in points.iter().zip(&normals).enumerate() {
            if p.iter().chain(n).any(|c| !c.is_finite()) {
                return Err(Error::Input(format!("point {i} has non-finite coordinates")));
            }
            unit.push(unit_normal(*n).ok_or_else(|| Error::Input(format!("normal {i} has zero length")))?);
        }
        Ok(Self {
            points,
            normals: unit,
            transform: Transform::IDENTITY,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn torus_points(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|&p| self.transform.apply(p)).collect()
    }

    /// Positions in torus coordinates as a point set.
    pub fn torus_point_set(&self) -> PointSet {
        PointSet::from_points3(&self.torus_points())
    }

    pub fn normal_set(&self) -> PointSet {
        PointSet::from_points3(&self.normals)
    }
}

/// Unit vector along `n`; vectors already unit to 1e-12 are kept bit-exact.
fn unit_normal(n: [f64; 3]) -> Option<[f64; 3]> {
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if !(len > 0.0) {
        return None;
    }
    if (len - 1.0).abs() <= 1e-12 {
        return Some(n);
    }
    Some([n[0] / len, n[1] / len, n[2] / len])
}

/// Records the map taking the bounding box to `[m, 1 - m]^3`, centered, with
/// the longest axis spanning the full interval.
pub fn normalize_to_torus(cloud: &OrientedPointCloud, margin: f64) -> Result<OrientedPointCloud> {
    if !(margin > 0.0 && margin < 0.5) {
        return Err(Error::Config(format!("margin must lie in (0, 1/2), got {margin}")));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &cloud.points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    if !(extent > 0.0) {
        return Err(Error::Input("all points coincide; cannot normalize".into()));
    }
    let scale = (1.0 - 2.0 * margin) / extent;
    let translation = std::array::from_fn(|a| 0.5 - scale * 0.5 * (lo[a] + hi[a]));
    Ok(OrientedPointCloud {
        points: cloud.points.clone(),
        normals: cloud.normals.clone(),
        transform: Transform { scale, translation },
    })
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<OrientedPointCloud> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_cloud(std::io::BufReader::new(f), format, path)
}

/// `path` is used only in error messages.
pub fn read_cloud<R: BufRead>(reader: R, format: CloudFormat, path: &Path) -> Result<OrientedPointCloud> {
    let (points, normals) = match format {
        CloudFormat::PlyAscii => read_ply(reader, path)?,
        CloudFormat::Xyz => read_xyz(reader, path)?,
    };
    if points.is_empty() {
        return Err(Error::Data {
            path: path.into(),
            line: 0,
            message: "no points".into(),
        });
    }
    Ok(OrientedPointCloud {
        points,
        normals,
        transform: Transform::IDENTITY,
    })
}

type Columns = (Vec<[f64; 3]>, Vec<[f64; 3]>);

fn parse_row(values: [f64; 6], line: usize, path: &Path, out: &mut Columns) -> Result<()> {
    let data_err = |message: String| Error::Data {
        path: path.into(),
        line,
        message,
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(data_err("non-finite value".into()));
    }
    let n = unit_normal([values[3], values[4], values[5]]).ok_or_else(|| data_err("zero-length normal".into()))?;
    out.0.push([values[0], values[1], values[2]]);
    out.1.push(n);
    Ok(())
}

fn read_xyz<R: BufRead>(reader: R, path: &Path) -> Result<Columns> {
    let mut out = (Vec::new(), Vec::new());
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = t.split_whitespace().collect();
        let data_err = |message: String| Error::Data {
            path: path.into(),
            line: i + 1,
            message,
        };
        if fields.len() != 6 {
            return Err(data_err(format!("expected 6 values, found {}", fields.len())));
        }
        let mut v = [0.0; 6];
        for (slot, s) in v.iter_mut().zip(&fields) {
            *slot = s.parse().map_err(|_| data_err(format!("invalid number {s:?}")))?;
        }
        parse_row(v, i + 1, path, &mut out)?;
    }
    Ok(out)
}

fn read_ply<R: BufRead>(mut reader: R, path: &Path) -> Result<Columns> {
    let parse_err = |offset: usize, message: String| Error::Parse {
        path: path.into(),
        offset,
        message,
    };
    let mut offset = 0usize;
    let mut line_no = 0usize;
    let mut line = String::new();
    let next_line = |reader: &mut R, line: &mut String, offset: &mut usize, line_no: &mut usize| -> Result<bool> {
        line.clear();
        let n = reader.read_line(line).map_err(|e| Error::io(path, e))?;
        *offset += n;
        *line_no += 1;
        Ok(n > 0)
    };

    // header
    let mut start = offset;
    if !next_line(&mut reader, &mut line, &mut offset, &mut line_no)? || line.trim_end() != "ply" {
        return Err(parse_err(start, "missing 'ply' magic".into()));
    }
    let mut vertex_count: Option<usize> = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    let mut ascii = false;
    loop {
        start = offset;
        if !next_line(&mut reader, &mut line, &mut offset, &mut line_no)? {
            return Err(parse_err(start, "header ended without end_header".into()));
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", "1.0"] => ascii = true,
            ["format", other, ..] => {
                return Err(Error::Format {
                    path: path.into(),
                    message: format!("unsupported PLY format {other:?}, only ascii is read"),
                })
            }
            ["element", name, count] => {
                let count: usize = count
                    .parse()
                    .map_err(|_| parse_err(start, format!("invalid element count {count:?}")))?;
                in_vertex = *name == "vertex";
                if in_vertex {
                    if vertex_count.is_some() {
                        return Err(parse_err(start, "duplicate vertex element".into()));
                    }
                    if !props.is_empty() {
                        return Err(Error::Format {
                            path: path.into(),
                            message: "vertex element must come first".into(),
                        });
                    }
                    vertex_count = Some(count);
                }
            }
            ["property", "list", ..] => {
                if in_vertex {
                    return Err(Error::Format {
                        path: path.into(),
                        message: "list properties on vertices are not supported".into(),
                    });
                }
            }
            ["property", _ty, name] => {
                if in_vertex {
                    props.push(name.to_string());
                }
            }
            _ => return Err(parse_err(start, format!("unrecognized header line {:?}", line.trim_end()))),
        }
    }
    if !ascii {
        return Err(parse_err(0, "missing format line".into()));
    }
    let count = vertex_count.ok_or_else(|| Error::Format {
        path: path.into(),
        message: "no vertex element".into(),
    })?;
    let mut cols = [0usize; 6];
    for (slot, name) in cols.iter_mut().zip(["x", "y", "z", "nx", "ny", "nz"]) {
        *slot = props.iter().position(|p| p == name).ok_or_else(|| Error::Format {
            path: path.into(),
            message: format!("vertex element lacks property {name}"),
        })?;
    }

    let mut out = (Vec::with_capacity(count), Vec::with_capacity(count));
    let mut read = 0;
    while read < count {
        if !next_line(&mut reader, &mut line, &mut offset, &mut line_no)? {
            return Err(Error::Data {
                path: path.into(),
                line: line_no,
                message: format!("expected {count} vertices, found {read}"),
            });
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let data_err = |message: String| Error::Data {
            path: path.into(),
            line: line_no,
            message,
        };
        if fields.len() != props.len() {
            return Err(data_err(format!("expected {} values, found {}", props.len(), fields.len())));
        }
        let mut v = [0.0; 6];
        for (slot, &c) in v.iter_mut().zip(&cols) {
            *slot = fields[c]
                .parse()
                .map_err(|_| data_err(format!("invalid number {:?}", fields[c])))?;
        }
        parse_row(v, line_no, path, &mut out)?;
        read += 1;
    }
    Ok(out)
}

pub fn write_cloud(path: &Path, format: CloudFormat, cloud: &OrientedPointCloud) -> Result<()> {
    std::fs::write(path, format_cloud(format, cloud)).map_err(|e| Error::io(path, e))
}

/// Raw positions and normals, formatted so that reading back is exact.
pub fn format_cloud(format: CloudFormat, cloud: &OrientedPointCloud) -> String {
    let mut s = String::new();
    if format == CloudFormat::PlyAscii {
        s.push_str("ply\nformat ascii 1.0\n");
        let _ = writeln!(s, "element vertex {}", cloud.len());
        for p in ["x", "y", "z", "nx", "ny", "nz"] {
            let _ = writeln!(s, "property double {p}");
        }
        s.push_str("end_header\n");
    }
    for (p, n) in cloud.points.iter().zip(&cloud.normals) {
        let _ = writeln!(s, "{} {} {} {} {} {}", p[0], p[1], p[2], n[0], n[1], n[2]);
    }
    s
}

#[derive(Debug, Serialize, Deserialize)]
struct GridHeader {
    origin: [f64; 3],
    spacing: [f64; 3],
    dims: [usize; 3],
    dtype: String,
    endianness: String,
}

/// One JSON header line, then little-endian f32 values with x fastest.
pub fn write_grid<W: Write>(grid: &ScalarFieldGrid, mut w: W) -> std::io::Result<()> {
    let spec = grid.spec();
    let header = GridHeader {
        origin: spec.origin,
        spacing: spec.spacing,
        dims: spec.dims,
        dtype: "f32".into(),
        endianness: "little".into(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(4 * grid.values().len());
    for &v in grid.values() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn save_grid(grid: &ScalarFieldGrid, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_grid(grid, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_grid<R: BufRead>(mut r: R, path: &Path) -> Result<ScalarFieldGrid> {
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: GridHeader = serde_json::from_str(&line).map_err(|e| Error::Parse {
        path: PathBuf::from(path),
        offset: e.column().saturating_sub(1),
        message: e.to_string(),
    })?;
    if header.dtype != "f32" || header.endianness != "little" {
        return Err(Error::Format {
            path: path.into(),
            message: "only little-endian f32 grids are supported".into(),
        });
    }
    let spec = GridSpec {
        origin: header.origin,
        spacing: header.spacing,
        dims: header.dims,
    };
    spec.validate()?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 4 * spec.node_count() {
        return Err(Error::Format {
            path: path.into(),
            message: format!("expected {} payload bytes, found {}", 4 * spec.node_count(), bytes.len()),
        });
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    ScalarFieldGrid::new(spec, values)
}

pub fn load_grid(path: &Path) -> Result<ScalarFieldGrid> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_grid(std::io::BufReader::new(f), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str, format: CloudFormat) -> Result<OrientedPointCloud> {
        read_cloud(s.as_bytes(), format, Path::new("mem"))
    }

    const PLY1: &str = "ply\nformat ascii 1.0\ncomment one point\nelement vertex 1\n\
        property float x\nproperty float y\nproperty float z\n\
        property float nx\nproperty float ny\nproperty float nz\nend_header\n1 2 3 0 0 2\n";

    #[test]
    fn single_vertex_ply() {
        let c = parse(PLY1, CloudFormat::PlyAscii).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.points[0], [1.0, 2.0, 3.0]);
        assert_eq!(c.normals[0], [0.0, 0.0, 1.0]);
    }

    #[test]
    fn xyz_line() {
        let c = parse("0 0 0 0 0 1\n", CloudFormat::Xyz).unwrap();
        assert_eq!(c.points, vec![[0.0; 3]]);
        assert_eq!(c.normals, vec![[0.0, 0.0, 1.0]]);
    }

    #[test]
    fn ply_without_nx_is_format_error() {
        let s = PLY1.replace("property float nx\n", "");
        let e = parse(&s, CloudFormat::PlyAscii).unwrap_err();
        assert!(matches!(e, Error::Format { .. }), "{e}");
    }

    #[test]
    fn zero_normal_names_line() {
        let e = parse("0 0 0 0 0 1\n1 1 1 0 0 0\n", CloudFormat::Xyz).unwrap_err();
        assert!(matches!(e, Error::Data { line: 2, .. }), "{e}");
        let s = PLY1.replace("1 2 3 0 0 2", "1 2 3 0 0 0");
        let e = parse(&s, CloudFormat::PlyAscii).unwrap_err();
        assert!(matches!(e, Error::Data { line: 12, .. }), "{e}");
    }

    #[test]
    fn malformed_header_reports_offset() {
        let e = parse("ply\nformat ascii 1.0\nbogus line\n", CloudFormat::PlyAscii).unwrap_err();
        match e {
            Error::Parse { offset, .. } => assert_eq!(offset, 21),
            other => panic!("{other}"),
        }
        assert!(matches!(parse("ply", CloudFormat::PlyAscii).unwrap_err(), Error::Parse { offset: 3, .. }));
        assert!(matches!(parse("xyz\n", CloudFormat::PlyAscii).unwrap_err(), Error::Parse { offset: 0, .. }));
    }

    #[test]
    fn extra_properties_and_elements() {
        let s = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float nx\nproperty float ny\n\
            property float nz\nproperty uchar red\nproperty float x\nproperty float y\nproperty float z\n\
            element face 0\nproperty list uchar int vertex_indices\nend_header\n\
            1 0 0 255 0.5 0.5 0.5\n0 1 0 12 0.25 0.5 0.5\n";
        let c = parse(s, CloudFormat::PlyAscii).unwrap();
        assert_eq!(c.points[1], [0.25, 0.5, 0.5]);
        assert_eq!(c.normals[1], [0.0, 1.0, 0.0]);
    }

    #[test]
    fn normalization() {
        let pts: Vec<[f64; 3]> = (0..8).map(|i| [(i & 1) as f64, (i >> 1 & 1) as f64, (i >> 2) as f64]).collect();
        let c = OrientedPointCloud::new(pts, vec![[0.0, 0.0, 1.0]; 8]).unwrap();
        let t = normalize_to_torus(&c, 0.15).unwrap();
        for p in t.torus_points() {
            for x in p {
                assert!((0.15 - 1e-15..=0.85 + 1e-15).contains(&x));
            }
        }
        // already in the margin box
        let inner = OrientedPointCloud::new(t.torus_points(), t.normals.clone()).unwrap();
        let id = normalize_to_torus(&inner, 0.15).unwrap().transform;
        assert!((id.scale - 1.0).abs() < 1e-12);
        assert!(id.translation.iter().all(|x| x.abs() < 1e-12));
        let same = OrientedPointCloud::new(vec![[1.0; 3]; 3], vec![[1.0, 0.0, 0.0]; 3]).unwrap();
        assert!(matches!(normalize_to_torus(&same, 0.15), Err(Error::Input(_))));
        assert!(normalize_to_torus(&c, 0.5).is_err());
    }

    #[test]
    fn grid_file_round_trip() {
        let spec = GridSpec::cube(0.0, 1.0, 3).unwrap();
        let g = ScalarFieldGrid::new(spec, (0..27).map(|i| i as f64 * 0.5).collect()).unwrap();
        let mut buf = Vec::new();
        write_grid(&g, &mut buf).unwrap();
        let nl = buf.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(buf.len() - nl - 1, 27 * 4);
        assert_eq!(&buf[nl + 1 + 4..nl + 1 + 8], &0.5f32.to_le_bytes());
        let back = read_grid(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back, g);
    }
}
