//! Text formats: XYZ and ASCII PLY clouds, OFF meshes, and small CSV tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::curvature::CurvatureField;
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::metrics::TriangleMesh;
use crate::training::Difficulty;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    Ply,
}

impl CloudFormat {
    /// From the file extension (`.xyz`, `.txt`, `.ply`).
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "xyz" | "txt" => Ok(CloudFormat::Xyz),
            "ply" => Ok(CloudFormat::Ply),
            _ => Err(Error::UnsupportedFormat(format!(
                "{}: expected a .xyz or .ply extension",
                path.display()
            ))),
        }
    }
}

/// Shortest decimal with `digits` significant digits, `%g` style.
pub fn format_sig(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        return format!("{mantissa}e{exp}");
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

const DIGITS: usize = 9;

fn fmt_point(out: &mut String, p: Point3) {
    let _ = writeln!(
        out,
        "{} {} {}",
        format_sig(p.x, DIGITS),
        format_sig(p.y, DIGITS),
        format_sig(p.z, DIGITS)
    );
}

pub fn cloud_to_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 40);
    for &p in cloud.iter() {
        fmt_point(&mut out, p);
    }
    out
}

pub fn cloud_to_ply(cloud: &PointCloud) -> String {
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    );
    for &p in cloud.iter() {
        fmt_point(&mut out, p);
    }
    out
}

fn parse_coord(tok: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::Malformed {
        path: path.to_path_buf(),
        line,
        msg: format!("`{tok}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            line,
            msg: format!("non-finite coordinate `{tok}`"),
        });
    }
    Ok(v)
}

/// One point per non-blank line, exactly three columns. `path` only labels errors.
pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let cols: Vec<&str> = raw.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 3 {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line,
                msg: format!("expected 3 columns (x y z), found {}", cols.len()),
            });
        }
        points.push(Point3::new(
            parse_coord(cols[0], path, line)?,
            parse_coord(cols[1], path, line)?,
            parse_coord(cols[2], path, line)?,
        ));
    }
    Ok(PointCloud::new(points))
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
    has_list: bool,
}

/// ASCII PLY; reads `x y z` of the vertex element and ignores every other
/// property and element.
pub fn parse_ply(text: &str, path: &Path) -> Result<PointCloud> {
    let malformed = |line: usize, msg: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(malformed(1, "missing `ply` magic line".into())),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    let mut header_done = false;
    for (line, raw) in lines.by_ref() {
        let toks: Vec<&str> = raw.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", "1.0"] => saw_format = true,
            ["format", other, ..] => {
                return Err(Error::UnsupportedFormat(format!(
                    "{}: PLY format `{other}` (only ascii 1.0 is supported)",
                    path.display()
                )))
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| malformed(line, format!("bad element count `{count}`")))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                    has_list: false,
                });
            }
            ["property", "list", _, _, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| malformed(line, "property before any element".into()))?;
                el.properties.push(name.to_string());
                el.has_list = true;
            }
            ["property", _, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| malformed(line, "property before any element".into()))?;
                el.properties.push(name.to_string());
            }
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(malformed(line, format!("unrecognised header line `{raw}`"))),
        }
    }
    if !header_done {
        return Err(malformed(text.lines().count(), "missing `end_header`".into()));
    }
    if !saw_format {
        return Err(malformed(2, "missing `format ascii 1.0`".into()));
    }
    let Some(vertex_pos) = elements.iter().position(|e| e.name == "vertex") else {
        return Err(malformed(1, "no vertex element".into()));
    };
    let vertex = &elements[vertex_pos];
    if vertex.has_list {
        return Err(Error::UnsupportedFormat(format!(
            "{}: list properties on vertices",
            path.display()
        )));
    }
    let axis = |name: &str| {
        vertex
            .properties
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| malformed(1, format!("vertex element has no `{name}` property")))
    };
    let (ix, iy, iz) = (axis("x")?, axis("y")?, axis("z")?);
    let width = vertex.properties.len();

    let mut points = Vec::with_capacity(vertex.count);
    for (e, el) in elements.iter().enumerate() {
        for _ in 0..el.count {
            let (line, raw) = loop {
                match lines.next() {
                    Some((_, l)) if l.trim().is_empty() => continue,
                    Some(x) => break x,
                    None => {
                        return Err(malformed(
                            text.lines().count(),
                            format!("file ends before {} `{}` rows were read", el.count, el.name),
                        ))
                    }
                }
            };
            if e != vertex_pos {
                continue;
            }
            let cols: Vec<&str> = raw.split_whitespace().collect();
            if cols.len() != width {
                return Err(malformed(line, format!("expected {width} vertex values, found {}", cols.len())));
            }
            points.push(Point3::new(
                parse_coord(cols[ix], path, line)?,
                parse_coord(cols[iy], path, line)?,
                parse_coord(cols[iz], path, line)?,
            ));
        }
        if e == vertex_pos {
            break;
        }
    }
    Ok(PointCloud::new(points))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let format = CloudFormat::from_path(path)?;
    let text = read_text(path)?;
    match format {
        CloudFormat::Xyz => parse_xyz(&text, path),
        CloudFormat::Ply => parse_ply(&text, path),
    }
}

pub fn write_cloud(cloud: &PointCloud, path: impl AsRef<Path>, format: CloudFormat) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        CloudFormat::Xyz => cloud_to_xyz(cloud),
        CloudFormat::Ply => cloud_to_ply(cloud),
    };
    write_text(path, &text)
}

/// Format chosen by extension.
pub fn save_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_cloud(cloud, path, CloudFormat::from_path(path)?)
}

/// ASCII OFF; polygons are fan-triangulated.
pub fn parse_off(text: &str, path: &Path) -> Result<TriangleMesh> {
    let malformed = |line: usize, msg: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut rows = text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    });
    let (line, first) = rows.next().ok_or_else(|| malformed(1, "empty file".into()))?;
    let counts_row = if first == "OFF" {
        rows.next().ok_or_else(|| malformed(line, "missing counts line".into()))?
    } else if let Some(rest) = first.strip_prefix("OFF") {
        (line, rest.trim())
    } else {
        return Err(malformed(line, "missing `OFF` header".into()));
    };
    let counts: Vec<usize> = counts_row
        .1
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| malformed(counts_row.0, format!("bad count `{t}`"))))
        .collect::<Result<_>>()?;
    if counts.len() < 2 {
        return Err(malformed(counts_row.0, "expected vertex and face counts".into()));
    }
    let (nv, nf) = (counts[0], counts[1]);
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (line, l) = rows.next().ok_or_else(|| malformed(counts_row.0, "file ends inside the vertex list".into()))?;
        let cols: Vec<&str> = l.split_whitespace().collect();
        if cols.len() < 3 {
            return Err(malformed(line, format!("expected 3 vertex coordinates, found {}", cols.len())));
        }
        vertices.push(Point3::new(
            parse_coord(cols[0], path, line)?,
            parse_coord(cols[1], path, line)?,
            parse_coord(cols[2], path, line)?,
        ));
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (line, l) = rows.next().ok_or_else(|| malformed(counts_row.0, "file ends inside the face list".into()))?;
        let nums: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| malformed(line, format!("bad face index `{t}`"))))
            .collect::<Result<_>>()?;
        let Some((&n, idx)) = nums.split_first() else {
            return Err(malformed(line, "empty face".into()));
        };
        if n < 3 || idx.len() < n {
            return Err(malformed(line, format!("face declares {n} vertices, has {}", idx.len())));
        }
        for j in 1..n - 1 {
            triangles.push([idx[0], idx[j], idx[j + 1]]);
        }
    }
    TriangleMesh::new(vertices, triangles)
}

pub fn read_off(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    parse_off(&read_text(path)?, path)
}

/// `index,c` table.
pub fn curvature_csv(field: &CurvatureField) -> String {
    let mut out = String::from("index,c\n");
    for (i, c) in field.values.iter().enumerate() {
        let _ = writeln!(out, "{i},{}", format_sig(*c, 12));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub difficulty: Difficulty,
    pub global_curvature: f64,
    pub sparse: PathBuf,
    pub dense: PathBuf,
}

/// `difficulty,gcv,sparse,dense`; paths may not contain commas.
pub fn manifest_csv(entries: &[ManifestEntry]) -> String {
    let mut out = String::from("difficulty,gcv,sparse,dense\n");
    for e in entries {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            e.difficulty,
            format_sig(e.global_curvature, 12),
            e.sparse.display(),
            e.dense.display()
        );
    }
    out
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ManifestEntry>> {
    let malformed = |line: usize, msg: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, h)) if h.trim() == "difficulty,gcv,sparse,dense" => {}
        _ => return Err(malformed(1, "expected header `difficulty,gcv,sparse,dense`".into())),
    }
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (line, raw) in lines {
        if raw.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(malformed(line, format!("expected 4 columns, found {}", cols.len())));
        }
        let difficulty = match cols[0] {
            "easy" => Difficulty::Easy,
            "hard" => Difficulty::Hard,
            other => return Err(malformed(line, format!("difficulty must be easy or hard, got `{other}`"))),
        };
        let global_curvature = parse_coord(cols[1], path, line)?;
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_relative() {
                base.join(p)
            } else {
                p
            }
        };
        out.push(ManifestEntry {
            difficulty,
            global_curvature,
            sparse: resolve(cols[2]),
            dense: resolve(cols[3]),
        });
    }
    Ok(out)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    parse_manifest(&read_text(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p() -> &'static Path {
        Path::new("mem.xyz")
    }

    #[test]
    fn sig_formatting() {
        assert_eq!(format_sig(0.0, 9), "0");
        assert_eq!(format_sig(1.0, 9), "1");
        assert_eq!(format_sig(-0.5, 9), "-0.5");
        assert_eq!(format_sig(1.0 / 3.0, 9), "0.333333333");
        assert_eq!(format_sig(123456789.0, 9), "123456789");
        assert_eq!(format_sig(1.5e10, 9), "1.5e10");
        assert_eq!(format_sig(2.5e-7, 9), "2.5e-7");
        assert_eq!(format_sig(0.000123456789123, 9), "0.000123456789");
    }

    #[test]
    fn xyz_and_ply_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cloud: PointCloud = (0..1000)
            .map(|_| Point3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
            .collect();
        for text in [cloud_to_xyz(&cloud), cloud_to_ply(&cloud)] {
            let back = if text.starts_with("ply") {
                parse_ply(&text, p()).unwrap()
            } else {
                parse_xyz(&text, p()).unwrap()
            };
            assert_eq!(back.len(), 1000);
            let err = cloud
                .iter()
                .zip(back.iter())
                .flat_map(|(a, b)| [(a.x - b.x).abs(), (a.y - b.y).abs(), (a.z - b.z).abs()])
                .fold(0.0, f64::max);
            assert!(err < 1e-8, "{err}");
        }
    }

    #[test]
    fn xyz_errors_name_the_line() {
        let e = parse_xyz("0 0 0\n1.0 2.0\n", p()).unwrap_err();
        assert!(matches!(e, Error::Malformed { line: 2, .. }), "{e}");
        let e = parse_xyz("0 0 0 7\n", p()).unwrap_err();
        assert!(e.to_string().contains("found 4"), "{e}");
        let e = parse_xyz("\n\n0 x 0\n", p()).unwrap_err();
        assert!(matches!(e, Error::Malformed { line: 3, .. }));
        assert!(matches!(parse_xyz("nan 0 0", p()), Err(Error::Malformed { line: 1, .. })));
    }

    #[test]
    fn ply_extra_properties_and_elements() {
        let text = "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty float nx\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n9 1 2 3 255\n9 4 5 6 0\n3 0 1 1\n";
        let c = parse_ply(text, p()).unwrap();
        assert_eq!(c.points, vec![Point3::new(1.0, 2.0, 3.0), Point3::new(4.0, 5.0, 6.0)]);
        let bin = text.replace("format ascii 1.0", "format binary_little_endian 1.0");
        assert!(matches!(parse_ply(&bin, p()), Err(Error::UnsupportedFormat(_))));
        let short = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        assert!(matches!(parse_ply(short, p()), Err(Error::Malformed { .. })));
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(CloudFormat::from_path(Path::new("a.XYZ")).unwrap(), CloudFormat::Xyz);
        assert_eq!(CloudFormat::from_path(Path::new("a.ply")).unwrap(), CloudFormat::Ply);
        assert!(matches!(CloudFormat::from_path(Path::new("a.las")), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn off_square_fan() {
        let text = "OFF\n# unit square\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let mesh = parse_off(text, Path::new("sq.off")).unwrap();
        assert_eq!(mesh.triangles, vec![[0, 1, 2], [0, 2, 3]]);
        assert!((mesh.distance(Point3::new(0.5, 0.5, 1.0)) - 1.0).abs() < 1e-12);
        let bad = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n";
        assert!(matches!(parse_off(bad, Path::new("b.off")), Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn manifest_round_trip() {
        let entries = vec![
            ManifestEntry {
                difficulty: Difficulty::Easy,
                global_curvature: 0.125,
                sparse: PathBuf::from("/d/a_sparse.xyz"),
                dense: PathBuf::from("/d/a_dense.xyz"),
            },
            ManifestEntry {
                difficulty: Difficulty::Hard,
                global_curvature: 0.75,
                sparse: PathBuf::from("/d/b_sparse.xyz"),
                dense: PathBuf::from("/d/b_dense.xyz"),
            },
        ];
        let text = manifest_csv(&entries);
        assert_eq!(parse_manifest(&text, Path::new("/d/m.csv")).unwrap(), entries);
        let rel = "difficulty,gcv,sparse,dense\neasy,0.1,s.xyz,d.xyz\n";
        let got = parse_manifest(rel, Path::new("/data/m.csv")).unwrap();
        assert_eq!(got[0].sparse, PathBuf::from("/data/s.xyz"));
        let bad = "difficulty,gcv,sparse,dense\nmedium,0.1,s,d\n";
        assert!(matches!(parse_manifest(bad, Path::new("m.csv")), Err(Error::Malformed { line: 2, .. })));
    }

    #[test]
    fn curvature_table() {
        let f = CurvatureField {
            values: vec![0.0, 0.5],
            k: 4,
        };
        assert_eq!(curvature_csv(&f), "index,c\n0,0\n1,0.5\n");
    }
}
