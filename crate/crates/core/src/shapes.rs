//! Analytic surfaces with exact unsigned distance, surface samplers and the
//! synthetic sparse/dense patch dataset built from them.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::curvature::fps;
use crate::error::{Error, Result};
use crate::geometry::{normalization_for, NeighborIndex, NormalizationTransform, Point3, PointCloud, Rotation3};

/// Half-size of the square a plane is sampled over (the distance itself is
/// to the infinite plane).
pub const PLANE_SAMPLE_HALF_EXTENT: f64 = 1.0;

/// Surface pool size per shape, in multiples of a patch's dense size.
pub const PATCH_POOL_FACTOR: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ShapeKind {
    Sphere { radius: f64 },
    /// Axis-aligned box surface centred at the origin.
    Box { half_extents: [f64; 3] },
    /// Ring around the z axis: `major` to the tube centre, `minor` tube radius.
    Torus { major: f64, minor: f64 },
    /// `{x : normal · x = offset}` with a unit normal.
    Plane { normal: Point3, offset: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Rotation3,
    pub translation: Point3,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        rotation: Rotation3::IDENTITY,
        translation: Point3::ORIGIN,
    };

    pub fn to_world(&self, p: Point3) -> Point3 {
        self.rotation.apply(p) + self.translation
    }

    pub fn to_local(&self, q: Point3) -> Point3 {
        self.rotation.transpose().apply(q - self.translation)
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::IDENTITY
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeOracle {
    pub kind: ShapeKind,
    pub pose: Pose,
}

/// Distance plus, away from the medial axis and the surface itself, the unit
/// direction of steepest increase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UdfSample {
    pub distance: f64,
    pub gradient: Option<Point3>,
}

impl ShapeOracle {
    pub fn new(kind: ShapeKind, pose: Pose) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidShape(msg));
        let kind = match kind {
            ShapeKind::Sphere { radius } if !(radius > 0.0 && radius.is_finite()) => {
                return bad(format!("sphere radius must be positive, got {radius}"))
            }
            ShapeKind::Box { half_extents } if !half_extents.iter().all(|h| *h > 0.0 && h.is_finite()) => {
                return bad(format!("box half extents must be positive, got {half_extents:?}"))
            }
            ShapeKind::Torus { major, minor } if !(minor > 0.0 && major > minor && major.is_finite()) => {
                return bad(format!("torus needs 0 < r < R, got R={major}, r={minor}"))
            }
            ShapeKind::Plane { normal, offset } => {
                let n = normal.norm();
                if !(n > 0.0 && n.is_finite() && offset.is_finite()) {
                    return bad("plane needs a non-zero normal and finite offset".into());
                }
                ShapeKind::Plane {
                    normal: normal * (1.0 / n),
                    offset,
                }
            }
            k => k,
        };
        if pose.rotation.orthonormality_error() > 1e-12 || !pose.translation.is_finite() {
            return bad("pose rotation must be orthonormal".into());
        }
        Ok(ShapeOracle { kind, pose })
    }

    pub fn unposed(kind: ShapeKind) -> Result<Self> {
        ShapeOracle::new(kind, Pose::IDENTITY)
    }

    pub fn sphere(radius: f64) -> Result<Self> {
        ShapeOracle::unposed(ShapeKind::Sphere { radius })
    }

    pub fn torus(major: f64, minor: f64) -> Result<Self> {
        ShapeOracle::unposed(ShapeKind::Torus { major, minor })
    }

    pub fn cuboid(half_extents: [f64; 3]) -> Result<Self> {
        ShapeOracle::unposed(ShapeKind::Box { half_extents })
    }

    pub fn plane(normal: Point3, offset: f64) -> Result<Self> {
        ShapeOracle::unposed(ShapeKind::Plane { normal, offset })
    }

    pub fn with_pose(mut self, pose: Pose) -> Result<Self> {
        self.pose = pose;
        ShapeOracle::new(self.kind, self.pose)
    }

    /// Exact unsigned distance from `q` to the surface, with gradient.
    pub fn udf(&self, q: Point3) -> UdfSample {
        let local = local_udf(&self.kind, self.pose.to_local(q));
        UdfSample {
            distance: local.distance,
            gradient: local.gradient.map(|g| self.pose.rotation.apply(g)),
        }
    }

    pub fn distance(&self, q: Point3) -> f64 {
        self.udf(q).distance
    }

    /// `n` area-uniform surface samples, deterministic per seed.
    pub fn sample_surface(&self, n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| self.pose.to_world(sample_local(&self.kind, &mut rng)))
            .collect()
    }
}

fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn local_udf(kind: &ShapeKind, q: Point3) -> UdfSample {
    match *kind {
        ShapeKind::Sphere { radius } => {
            let r = q.norm();
            let distance = (r - radius).abs();
            let gradient = (r > 0.0 && distance > 0.0).then(|| q * (sign(r - radius) / r));
            UdfSample { distance, gradient }
        }
        ShapeKind::Plane { normal, offset } => {
            let s = normal.dot(q) - offset;
            UdfSample {
                distance: s.abs(),
                gradient: (s != 0.0).then(|| normal * sign(s)),
            }
        }
        ShapeKind::Torus { major, minor } => {
            let rho = (q.x * q.x + q.y * q.y).sqrt();
            let dr = rho - major;
            let s = (dr * dr + q.z * q.z).sqrt();
            let distance = (s - minor).abs();
            let gradient = (rho > 0.0 && s > 0.0 && distance > 0.0).then(|| {
                let ring = Point3::new(q.x / rho, q.y / rho, 0.0) * major;
                (q - ring) * (sign(s - minor) / s)
            });
            UdfSample { distance, gradient }
        }
        ShapeKind::Box { half_extents } => {
            let a = q.to_array();
            let excess: Vec<f64> = (0..3).map(|i| a[i].abs() - half_extents[i]).collect();
            if excess.iter().any(|&e| e > 0.0) {
                let v: Vec<f64> = excess.iter().map(|e| e.max(0.0)).collect();
                let distance = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                let g = Point3::new(sign(a[0]) * v[0], sign(a[1]) * v[1], sign(a[2]) * v[2]) * (1.0 / distance);
                UdfSample {
                    distance,
                    gradient: Some(g),
                }
            } else {
                // Inside or on the surface: distance to the nearest face.
                let gaps: Vec<f64> = excess.iter().map(|e| -e).collect();
                let distance = gaps.iter().copied().fold(f64::INFINITY, f64::min);
                let nearest: Vec<usize> = (0..3).filter(|&i| gaps[i] == distance).collect();
                let gradient = (nearest.len() == 1 && distance > 0.0).then(|| {
                    let i = nearest[0];
                    let mut g = [0.0; 3];
                    g[i] = -sign(a[i]);
                    Point3::from_array(g)
                });
                UdfSample { distance, gradient }
            }
        }
    }
}

fn sample_local(kind: &ShapeKind, rng: &mut ChaCha8Rng) -> Point3 {
    match *kind {
        ShapeKind::Sphere { radius } => loop {
            let g = Point3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            let n = g.norm();
            if n > 1e-12 {
                break g * (radius / n);
            }
        },
        ShapeKind::Plane { normal, offset } => {
            let (t1, t2) = tangent_basis(normal);
            let h = PLANE_SAMPLE_HALF_EXTENT;
            let u = rng.random_range(-h..h);
            let v = rng.random_range(-h..h);
            normal * offset + t1 * u + t2 * v
        }
        ShapeKind::Torus { major, minor } => {
            let phi = rng.random_range(0.0..TAU);
            // Area element is proportional to (R + r cos θ).
            let theta = loop {
                let t = rng.random_range(0.0..TAU);
                let u: f64 = rng.random();
                if u * (major + minor) < major + minor * t.cos() {
                    break t;
                }
            };
            let ring = major + minor * theta.cos();
            Point3::new(ring * phi.cos(), ring * phi.sin(), minor * theta.sin())
        }
        ShapeKind::Box { half_extents: h } => {
            let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
            let total = areas[0] + areas[1] + areas[2];
            let mut pick = rng.random_range(0.0..total);
            let mut axis = 2;
            for (i, a) in areas.iter().enumerate() {
                if pick < *a {
                    axis = i;
                    break;
                }
                pick -= a;
            }
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let mut p = [0.0; 3];
            for i in 0..3 {
                p[i] = if i == axis {
                    side * h[i]
                } else {
                    rng.random_range(-h[i]..h[i])
                };
            }
            Point3::from_array(p)
        }
    }
}

fn tangent_basis(n: Point3) -> (Point3, Point3) {
    let a = n.to_array();
    let mut least = 0;
    for i in 1..3 {
        if a[i].abs() < a[least].abs() {
            least = i;
        }
    }
    let mut e = [0.0; 3];
    e[least] = 1.0;
    let t1 = n.cross(Point3::from_array(e));
    let t1 = t1 * (1.0 / t1.norm());
    (t1, n.cross(t1))
}

impl fmt::Display for ShapeOracle {
    /// The CLI spec grammar, e.g. `torus:R=2,r=0.5`. Pose is not encoded.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ShapeKind::Sphere { radius } => write!(f, "sphere:r={radius}"),
            ShapeKind::Box { half_extents: h } => write!(f, "box:hx={},hy={},hz={}", h[0], h[1], h[2]),
            ShapeKind::Torus { major, minor } => write!(f, "torus:R={major},r={minor}"),
            ShapeKind::Plane { normal: n, offset } => {
                write!(f, "plane:nx={},ny={},nz={},off={offset}", n.x, n.y, n.z)
            }
        }
    }
}

impl FromStr for ShapeOracle {
    type Err = Error;

    /// Parses `sphere:r=1`, `torus:R=2,r=0.5`, `box:hx=1,hy=1,hz=1` or
    /// `plane:nz=1,off=0`. Omitted parameters take those defaults.
    fn from_str(spec: &str) -> Result<Self> {
        let (name, params) = spec.split_once(':').unwrap_or((spec, ""));
        let mut values: Vec<(String, f64)> = Vec::new();
        for item in params.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidShape(format!("expected key=value, got `{item}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidShape(format!("`{k}` is not a number: `{v}`")))?;
            values.push((k.trim().to_string(), v));
        }
        let allowed: &[&str] = match name.trim() {
            "sphere" => &["r"],
            "torus" => &["R", "r"],
            "box" => &["hx", "hy", "hz"],
            "plane" => &["nx", "ny", "nz", "off"],
            other => return Err(Error::InvalidShape(format!("unknown shape `{other}`"))),
        };
        if let Some((k, _)) = values.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            return Err(Error::InvalidShape(format!("`{k}` is not a parameter of {name}")));
        }
        let get = |key: &str, default: f64| {
            values
                .iter()
                .rev()
                .find(|(k, _)| k == key)
                .map_or(default, |(_, v)| *v)
        };
        let kind = match name.trim() {
            "sphere" => ShapeKind::Sphere { radius: get("r", 1.0) },
            "torus" => ShapeKind::Torus {
                major: get("R", 2.0),
                minor: get("r", 0.5),
            },
            "box" => ShapeKind::Box {
                half_extents: [get("hx", 1.0), get("hy", 1.0), get("hz", 1.0)],
            },
            _ => {
                let explicit = values.iter().any(|(k, _)| k.starts_with('n'));
                let normal = if explicit {
                    Point3::new(get("nx", 0.0), get("ny", 0.0), get("nz", 0.0))
                } else {
                    Point3::new(0.0, 0.0, 1.0)
                };
                ShapeKind::Plane {
                    normal,
                    offset: get("off", 0.0),
                }
            }
        };
        ShapeOracle::unposed(kind)
    }
}

/// A sparse input patch and its dense ground truth, in one normalised frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub sparse: PointCloud,
    pub dense: PointCloud,
    pub source: Option<ShapeOracle>,
    /// Maps the source (world) frame into the patch frame.
    pub transform: NormalizationTransform,
}

impl PatchPair {
    pub fn rate(&self) -> usize {
        self.dense.len() / self.sparse.len().max(1)
    }

    /// Exact distance from a patch-frame point to the source surface, in
    /// patch-frame units.
    pub fn surface_distance(&self, q: Point3) -> Option<f64> {
        self.source
            .as_ref()
            .map(|o| o.distance(self.transform.invert(q)) / self.transform.scale)
    }
}

/// Cuts one patch out of a dense surface sample: the `rate · sparse_n` pool
/// points nearest `center` form the dense cloud, FPS from the point nearest
/// the centre gives the sparse cloud, and both share the dense cloud's
/// normalisation.
pub fn extract_patch(
    pool: &NeighborIndex,
    center: Point3,
    sparse_n: usize,
    rate: usize,
    source: Option<ShapeOracle>,
) -> Result<PatchPair> {
    let dense_n = sparse_n * rate;
    let dense: PointCloud = pool
        .knn(center, dense_n)?
        .iter()
        .map(|n| pool.point(n.index))
        .collect();
    let sparse = fps(&dense, sparse_n, 0)?;
    let transform = normalization_for(&dense)?;
    Ok(PatchPair {
        sparse: transform.apply_cloud(&sparse),
        dense: transform.apply_cloud(&dense),
        source,
        transform,
    })
}

pub fn make_patch_dataset(
    oracles: &[ShapeOracle],
    patches_per_shape: usize,
    sparse_n: usize,
    rate: usize,
    seed: u64,
) -> Result<Vec<PatchPair>> {
    if rate < 2 {
        return Err(Error::InvalidParameter(format!("rate must be at least 2, got {rate}")));
    }
    if sparse_n < 32 {
        return Err(Error::InvalidParameter(format!(
            "sparse patch size must be at least 32, got {sparse_n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool_n = PATCH_POOL_FACTOR * sparse_n * rate;
    let mut patches = Vec::with_capacity(oracles.len() * patches_per_shape);
    for oracle in oracles {
        let pool = oracle.sample_surface(pool_n, rng.random());
        let index = NeighborIndex::build(&pool)?;
        for _ in 0..patches_per_shape {
            let center = pool[rng.random_range(0..pool.len())];
            patches.push(extract_patch(&index, center, sparse_n, rate, Some(oracle.clone()))?);
        }
    }
    Ok(patches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_shapes() -> Vec<ShapeOracle> {
        vec![
            ShapeOracle::sphere(1.0).unwrap(),
            ShapeOracle::cuboid([1.0, 0.5, 0.75]).unwrap(),
            ShapeOracle::torus(2.0, 0.5).unwrap(),
            ShapeOracle::plane(Point3::new(1.0, 2.0, 2.0), 0.3).unwrap(),
        ]
    }

    #[test]
    fn udf_examples() {
        let s = ShapeOracle::sphere(1.0).unwrap().udf(Point3::new(2.0, 0.0, 0.0));
        assert_eq!(s.distance, 1.0);
        assert_eq!(s.gradient, Some(Point3::new(1.0, 0.0, 0.0)));

        let t = ShapeOracle::torus(2.0, 0.5).unwrap().udf(Point3::new(2.0, 0.0, 0.0));
        assert_eq!(t.distance, 0.5);
        assert_eq!(t.gradient, None);

        let b = ShapeOracle::cuboid([1.0; 3]).unwrap().udf(Point3::new(2.0, 2.0, 0.0));
        assert!((b.distance - 2f64.sqrt()).abs() < 1e-15);

        // Box centre is on the medial axis.
        let c = ShapeOracle::cuboid([1.0; 3]).unwrap().udf(Point3::ORIGIN);
        assert_eq!(c.distance, 1.0);
        assert_eq!(c.gradient, None);
        let inside = ShapeOracle::cuboid([1.0; 3]).unwrap().udf(Point3::new(0.8, 0.1, 0.0));
        assert!((inside.distance - 0.2).abs() < 1e-15);
        assert_eq!(inside.gradient, Some(Point3::new(-1.0, 0.0, 0.0)));
    }

    #[test]
    fn invalid_shapes() {
        assert!(ShapeOracle::sphere(0.0).is_err());
        assert!(ShapeOracle::torus(0.5, 0.5).is_err());
        assert!(ShapeOracle::cuboid([1.0, -1.0, 1.0]).is_err());
        assert!(ShapeOracle::plane(Point3::ORIGIN, 0.0).is_err());
        let skew = Pose {
            rotation: Rotation3 {
                m: [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            },
            translation: Point3::ORIGIN,
        };
        assert!(ShapeOracle::new(ShapeKind::Sphere { radius: 1.0 }, skew).is_err());
    }

    #[test]
    fn eikonal_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for shape in all_shapes() {
            for _ in 0..10_000 {
                let q = Point3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                );
                let u = shape.udf(q);
                assert!(u.distance >= 0.0);
                if let Some(g) = u.gradient {
                    assert!((g.norm() - 1.0).abs() < 1e-9, "{shape}: {g:?}");
                    // Direction of increase: a small step raises the distance.
                    let h = 1e-7;
                    let up = shape.distance(q + g * h);
                    assert!(up - u.distance > 0.5 * h);
                }
            }
        }
    }

    #[test]
    fn samples_lie_on_surface() {
        for (i, shape) in all_shapes().into_iter().enumerate() {
            let cloud = shape.sample_surface(2000, i as u64);
            assert_eq!(cloud.len(), 2000);
            assert!(cloud.iter().all(|&p| shape.distance(p) < 1e-9), "{shape}");
            assert_eq!(cloud, shape.sample_surface(2000, i as u64));
        }
        let sphere = ShapeOracle::sphere(1.0).unwrap().sample_surface(1024, 0);
        assert!(sphere.iter().all(|p| (p.norm() - 1.0).abs() < 1e-9));
    }

    #[test]
    fn sphere_octants_are_balanced() {
        let n = 100_000;
        let cloud = ShapeOracle::sphere(1.0).unwrap().sample_surface(n, 99);
        let mut counts = [0usize; 8];
        for p in cloud.iter() {
            let o = (p.x > 0.0) as usize | ((p.y > 0.0) as usize) << 1 | ((p.z > 0.0) as usize) << 2;
            counts[o] += 1;
        }
        let expect = n as f64 / 8.0;
        let sigma = (n as f64 * (1.0 / 8.0) * (7.0 / 8.0)).sqrt();
        for c in counts {
            assert!((c as f64 - expect).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn pose_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for shape in all_shapes() {
            let pose = Pose {
                rotation: Rotation3::random(&mut rng),
                translation: Point3::new(0.3, -1.2, 2.0),
            };
            let posed = shape.clone().with_pose(pose).unwrap();
            for _ in 0..1000 {
                let q = Point3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                );
                let a = posed.distance(q);
                let b = shape.distance(pose.to_local(q));
                assert!((a - b).abs() < 1e-12);
            }
            let samples = posed.sample_surface(500, 3);
            assert!(samples.iter().all(|&p| posed.distance(p) < 1e-9));
        }
    }

    #[test]
    fn spec_grammar() {
        let s: ShapeOracle = "sphere:r=1".parse().unwrap();
        assert_eq!(s.kind, ShapeKind::Sphere { radius: 1.0 });
        let t: ShapeOracle = "torus:R=2,r=0.5".parse().unwrap();
        assert_eq!(t.kind, ShapeKind::Torus { major: 2.0, minor: 0.5 });
        let b: ShapeOracle = "box:hx=1,hy=2,hz=3".parse().unwrap();
        assert_eq!(b.kind, ShapeKind::Box { half_extents: [1.0, 2.0, 3.0] });
        let p: ShapeOracle = "plane:nz=1,off=0".parse().unwrap();
        assert_eq!(
            p.kind,
            ShapeKind::Plane {
                normal: Point3::new(0.0, 0.0, 1.0),
                offset: 0.0
            }
        );
        for shape in all_shapes() {
            let back: ShapeOracle = shape.to_string().parse().unwrap();
            assert_eq!(back, shape);
        }
        assert!("cone:r=1".parse::<ShapeOracle>().is_err());
        assert!("sphere:R=1".parse::<ShapeOracle>().is_err());
        assert!("sphere:r=abc".parse::<ShapeOracle>().is_err());
        assert!("sphere:r".parse::<ShapeOracle>().is_err());
    }

    #[test]
    fn patch_dataset_contract() {
        let shapes = vec![ShapeOracle::sphere(1.0).unwrap(), ShapeOracle::torus(2.0, 0.5).unwrap()];
        let data = make_patch_dataset(&shapes, 2, 64, 4, 17).unwrap();
        assert_eq!(data.len(), 4);
        for patch in &data {
            assert_eq!(patch.sparse.len(), 64);
            assert_eq!(patch.dense.len(), 256);
            for p in patch.sparse.iter() {
                assert!(patch.dense.points.contains(p));
            }
            let max_r = patch.dense.iter().map(|p| p.norm()).fold(0.0, f64::max);
            assert!((max_r - 1.0).abs() < 1e-12);
            assert!(patch.dense.iter().all(|&p| patch.surface_distance(p).unwrap() < 1e-8));
        }
        assert_eq!(data, make_patch_dataset(&shapes, 2, 64, 4, 17).unwrap());
        assert!(make_patch_dataset(&shapes, 1, 16, 4, 0).is_err());
        assert!(make_patch_dataset(&shapes, 1, 64, 1, 0).is_err());
    }

    #[test]
    fn rate_four_dense_size() {
        let shapes = vec![ShapeOracle::sphere(1.0).unwrap()];
        let data = make_patch_dataset(&shapes, 1, 256, 4, 1).unwrap();
        assert_eq!(data[0].dense.len(), 1024);
        assert_eq!(data[0].rate(), 4);
    }
}
