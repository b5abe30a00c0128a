//! Chamfer, Hausdorff and point-to-surface distances, plus Gaussian noise for
//! robustness runs.
//!
//! Stored values are raw; the conventional ×10³ scaling happens only in
//! [`MetricReport::to_csv`].

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{NeighborIndex, Point3, PointCloud};
use crate::shapes::ShapeOracle;

pub const DISPLAY_SCALE: f64 = 1e3;

/// For each point of `from`, the distance to its nearest point in `to`.
pub fn directed_distances(from: &PointCloud, to: &PointCloud) -> Result<Vec<f64>> {
    if from.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let index = NeighborIndex::build(to)?;
    Ok(exec::map_indexed(from.len(), |i| index.nearest_distance(from[i])))
}

fn mean(v: &[f64]) -> f64 {
    exec::ordered_sum(v.iter().copied()) / v.len() as f64
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// Symmetric Chamfer distance with first-power Euclidean terms:
/// `½ (mean_a min_b ‖a−b‖ + mean_b min_a ‖a−b‖)`.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    let ab = directed_distances(a, b)?;
    let ba = directed_distances(b, a)?;
    Ok(0.5 * (mean(&ab) + mean(&ba)))
}

pub fn hausdorff(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    let ab = directed_distances(a, b)?;
    let ba = directed_distances(b, a)?;
    Ok(max(&ab).max(max(&ba)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Validates indices and rejects triangles with area ≤ 1e-12.
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::EmptyMesh);
        }
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&i) = tri.iter().find(|&&i| i >= vertices.len()) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} references vertex {i} of {}",
                    vertices.len()
                )));
            }
            let [a, b, c] = tri.map(|i| vertices[i]);
            let area = 0.5 * (b - a).cross(c - a).norm();
            if !(area > 1e-12) {
                return Err(Error::InvalidMesh(format!("triangle {t} is degenerate (area {area:e})")));
            }
        }
        if !vertices.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidMesh("non-finite vertex".into()));
        }
        Ok(TriangleMesh { vertices, triangles })
    }

    pub fn distance(&self, p: Point3) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i]);
                point_triangle_distance(p, a, b, c)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Closest point on triangle `abc` to `p`, by Voronoi-region case analysis.
pub fn closest_point_on_triangle(p: Point3, a: Point3, b: Point3, c: Point3) -> Point3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

pub fn point_triangle_distance(p: Point3, a: Point3, b: Point3, c: Point3) -> f64 {
    p.distance(closest_point_on_triangle(p, a, b, c))
}

#[derive(Clone, Debug)]
pub enum SurfaceRef {
    Mesh(TriangleMesh),
    Oracle(ShapeOracle),
}

impl SurfaceRef {
    pub fn distance(&self, p: Point3) -> f64 {
        match self {
            SurfaceRef::Mesh(m) => m.distance(p),
            SurfaceRef::Oracle(o) => o.distance(p),
        }
    }
}

/// Mean exact point-to-surface distance.
pub fn p2f(pred: &PointCloud, surface: &SurfaceRef) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let d = exec::map_indexed(pred.len(), |i| surface.distance(pred[i]));
    Ok(mean(&d))
}

/// Adds independent `N(0, τ²)` noise to every coordinate.
pub fn add_noise<R: Rng + ?Sized>(cloud: &PointCloud, tau: f64, rng: &mut R) -> Result<PointCloud> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise level must be >= 0, got {tau}")));
    }
    if tau == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = Normal::new(0.0, tau).expect("tau is finite and positive");
    Ok(cloud
        .iter()
        .map(|&p| p + Point3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng)))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub cd: f64,
    pub hd: f64,
    pub p2f: Option<f64>,
}

impl MetricReport {
    pub fn evaluate(pred: &PointCloud, gt: &PointCloud, surface: Option<&SurfaceRef>) -> Result<Self> {
        Ok(MetricReport {
            cd: chamfer(pred, gt)?,
            hd: hausdorff(pred, gt)?,
            p2f: surface.map(|s| p2f(pred, s)).transpose()?,
        })
    }

    /// `metric,value_raw,value_x1e3`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value_raw,value_x1e3\n");
        let mut row = |name: &str, v: f64| {
            writeln!(out, "{name},{v:e},{:.3}", v * DISPLAY_SCALE).expect("write to String");
        };
        row("cd", self.cd);
        row("hd", self.hd);
        if let Some(p) = self.p2f {
            row("p2f", p);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        (0..n)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect()
    }

    fn brute_directed(a: &PointCloud, b: &PointCloud) -> Vec<f64> {
        a.iter()
            .map(|p| b.iter().map(|q| p.distance(*q)).fold(f64::INFINITY, f64::min))
            .collect()
    }

    #[test]
    fn examples() {
        let o = PointCloud::new(vec![Point3::ORIGIN]);
        let x = PointCloud::new(vec![Point3::new(1.0, 0.0, 0.0)]);
        assert_eq!(chamfer(&o, &x).unwrap(), 1.0);
        let two = PointCloud::new(vec![Point3::ORIGIN, Point3::new(3.0, 0.0, 0.0)]);
        assert_eq!(hausdorff(&two, &o).unwrap(), 3.0);
        assert_eq!(chamfer(&two, &two).unwrap(), 0.0);
        assert_eq!(hausdorff(&two, &two).unwrap(), 0.0);
        assert!(matches!(chamfer(&PointCloud::default(), &o), Err(Error::EmptyCloud)));
        assert!(matches!(hausdorff(&o, &PointCloud::default()), Err(Error::EmptyCloud)));
    }

    #[test]
    fn match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = random_cloud(&mut rng, 64);
            let b = random_cloud(&mut rng, 80);
            let ab = brute_directed(&a, &b);
            let ba = brute_directed(&b, &a);
            let cd = 0.5 * (ab.iter().sum::<f64>() / 64.0 + ba.iter().sum::<f64>() / 80.0);
            let hd = ab.iter().chain(&ba).copied().fold(0.0, f64::max);
            assert!((chamfer(&a, &b).unwrap() - cd).abs() < 1e-12);
            assert_eq!(hausdorff(&a, &b).unwrap(), hd);
            assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
            assert!(chamfer(&a, &b).unwrap() <= hausdorff(&a, &b).unwrap());
        }
    }

    fn unit_square() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Point3::ORIGIN,
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(1.0, 1.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn p2f_examples() {
        let mesh = SurfaceRef::Mesh(unit_square());
        let above = PointCloud::new(vec![Point3::new(0.5, 0.5, 1.0)]);
        assert_eq!(p2f(&above, &mesh).unwrap(), 1.0);
        let on = PointCloud::new(vec![Point3::new(0.2, 0.7, 0.0), Point3::new(1.0, 0.3, 0.0)]);
        assert!(p2f(&on, &mesh).unwrap() < 1e-9);
        let corner = PointCloud::new(vec![Point3::new(2.0, 2.0, 0.0)]);
        assert!((p2f(&corner, &mesh).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let sphere = SurfaceRef::Oracle(ShapeOracle::sphere(1.0).unwrap());
        assert_eq!(p2f(&PointCloud::new(vec![Point3::new(0.0, 3.0, 0.0)]), &sphere).unwrap(), 2.0);
        assert!(p2f(&PointCloud::default(), &sphere).is_err());
    }

    #[test]
    fn mesh_validation() {
        let v = vec![Point3::ORIGIN, Point3::new(1.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)];
        assert!(matches!(TriangleMesh::new(v.clone(), vec![]), Err(Error::EmptyMesh)));
        assert!(matches!(TriangleMesh::new(v.clone(), vec![[0, 1, 2]]), Err(Error::InvalidMesh(_))));
        assert!(matches!(TriangleMesh::new(v, vec![[0, 1, 3]]), Err(Error::InvalidMesh(_))));
    }

    /// Minimises squared distance over the triangle by nested ternary search
    /// on barycentric coordinates (the objective is convex).
    fn ternary_oracle(p: Point3, a: Point3, b: Point3, c: Point3) -> f64 {
        let at = |u: f64, v: f64| (a + (b - a) * u + (c - a) * v).distance_squared(p);
        let inner = |u: f64| {
            let (mut lo, mut hi) = (0.0, 1.0 - u);
            for _ in 0..200 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if at(u, m1) < at(u, m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            at(u, 0.5 * (lo + hi))
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if inner(m1) < inner(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        inner(0.5 * (lo + hi)).sqrt()
    }

    #[test]
    fn triangle_distance_matches_search_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let t: Vec<Point3> = (0..4)
                .map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let p = t[3] * 2.0;
            let exact = point_triangle_distance(p, t[0], t[1], t[2]);
            let oracle = ternary_oracle(p, t[0], t[1], t[2]);
            assert!((exact - oracle).abs() < 1e-9, "{exact} vs {oracle}");
        }
    }

    #[test]
    fn triangle_distance_matches_dense_sampling() {
        // 10^6 barycentric grid samples bound the exact distance from above.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t: Vec<Point3> = (0..3)
            .map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let p = Point3::new(0.1, 0.9, -0.4);
        let exact = point_triangle_distance(p, t[0], t[1], t[2]);
        let n = 1413; // n(n+1)/2 ≈ 10^6
        let mut best = f64::INFINITY;
        for i in 0..=n {
            for j in 0..=(n - i) {
                let (u, v) = (i as f64 / n as f64, j as f64 / n as f64);
                let q = t[0] + (t[1] - t[0]) * u + (t[2] - t[0]) * v;
                best = best.min(q.distance(p));
            }
        }
        assert!(exact <= best + 1e-12);
        // Grid spacing bounds how far the sampled minimum can sit above the truth.
        let edge = (t[1] - t[0]).norm() + (t[2] - t[0]).norm();
        assert!(best - exact <= edge / n as f64, "{best} vs {exact}");
    }

    #[test]
    fn noise_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cloud = PointCloud::new(vec![Point3::new(1.0, 2.0, 3.0); 100_000]);
        assert_eq!(add_noise(&cloud, 0.0, &mut rng).unwrap(), cloud);
        let noisy = add_noise(&cloud, 0.01, &mut rng).unwrap();
        for axis in 0..3 {
            let d: Vec<f64> = noisy.iter().zip(cloud.iter()).map(|(a, b)| a.coord(axis) - b.coord(axis)).collect();
            let m = d.iter().sum::<f64>() / d.len() as f64;
            let sd = (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
            assert!((sd - 0.01).abs() < 0.05 * 0.01, "axis {axis}: {sd}");
        }
        let a = add_noise(&cloud, 0.02, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = add_noise(&cloud, 0.02, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(add_noise(&cloud, -1.0, &mut rng).is_err());
    }

    #[test]
    fn report_csv() {
        let r = MetricReport {
            cd: 0.0,
            hd: 0.0012345,
            p2f: None,
        };
        let csv = r.to_csv();
        assert_eq!(csv.lines().next(), Some("metric,value_raw,value_x1e3"));
        assert!(csv.contains("cd,0e0,0.000"));
        assert!(csv.contains("hd,1.2345e-3,1.234") || csv.contains("hd,1.2345e-3,1.235"));
        assert_eq!(csv.lines().count(), 3);
    }
}
