//! Normals, umbrella curvature, curvature-ranked sampling ladders and FPS.

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{NeighborIndex, Point3, PointCloud};

pub const DEFAULT_NORMALS_K: usize = 16;
pub const DEFAULT_CURVATURE_K: usize = 16;

/// One unit normal per point. Orientation is canonical, not geometric: the
/// component of largest magnitude is made positive.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalField {
    pub normals: Vec<Point3>,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureField {
    pub values: Vec<f64>,
    pub k: usize,
}

impl CurvatureField {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Local PCA normals over each point's `k` nearest neighbours (the point included).
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<NormalField> {
    if k < 3 {
        return Err(Error::InvalidParameter(format!(
            "normal neighbourhood must be at least 3, got {k}"
        )));
    }
    if cloud.len() < k {
        return Err(Error::TooFewPoints {
            needed: k,
            got: cloud.len(),
        });
    }
    let index = NeighborIndex::build(cloud)?;
    let normals = exec::try_map_indexed(cloud.len(), |i| {
        let hood = index.knn(cloud[i], k)?;
        Ok(pca_normal(hood.iter().map(|n| cloud[n.index])))
    })?;
    Ok(NormalField { normals, k })
}

fn pca_normal(points: impl Iterator<Item = Point3> + Clone) -> Point3 {
    let n = points.clone().count() as f64;
    let mean = points.clone().fold(Point3::ORIGIN, |a, p| a + p) * (1.0 / n);
    let mut cov = Matrix3::<f64>::zeros();
    for p in points {
        let d = (p - mean).to_array();
        for r in 0..3 {
            for c in 0..3 {
                cov[(r, c)] += d[r] * d[c];
            }
        }
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut smallest = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[smallest] {
            smallest = i;
        }
    }
    let v = eig.eigenvectors.column(smallest);
    let mut normal = Point3::new(v[0], v[1], v[2]);
    normal = normal * (1.0 / normal.norm());
    canonical_sign(normal)
}

fn canonical_sign(n: Point3) -> Point3 {
    let a = n.to_array();
    let mut big = 0;
    for i in 1..3 {
        if a[i].abs() > a[big].abs() {
            big = i;
        }
    }
    if a[big] < 0.0 {
        -n
    } else {
        n
    }
}

/// Umbrella curvature per point: the mean over its `k` nearest other points of
/// `|unit(p_i − p) · n_p|`. A coincident neighbour contributes 0.
pub fn curvature_values(cloud: &PointCloud, normals: &NormalField, k: usize) -> Result<CurvatureField> {
    if k == 0 {
        return Err(Error::ZeroK);
    }
    if cloud.len() <= k {
        return Err(Error::TooFewPoints {
            needed: k + 1,
            got: cloud.len(),
        });
    }
    if normals.normals.len() != cloud.len() {
        return Err(Error::InvalidParameter(format!(
            "{} normals for {} points",
            normals.normals.len(),
            cloud.len()
        )));
    }
    let index = NeighborIndex::build(cloud)?;
    let values = exec::try_map_indexed(cloud.len(), |i| {
        let p = cloud[i];
        let n = normals.normals[i];
        let hood = index.knn(p, k + 1)?;
        let sum = exec::ordered_sum(
            hood.iter()
                .filter(|nb| nb.index != i)
                .take(k)
                .map(|nb| {
                    let x = cloud[nb.index] - p;
                    let len = x.norm();
                    if len == 0.0 {
                        0.0
                    } else {
                        (x.dot(n) / len).abs().min(1.0)
                    }
                }),
        );
        Ok(sum / k as f64)
    })?;
    Ok(CurvatureField { values, k })
}

/// Normals followed by curvature, with the given neighbourhood sizes.
pub fn analyze(cloud: &PointCloud, normals_k: usize, k: usize) -> Result<CurvatureField> {
    let normals = estimate_normals(cloud, normals_k)?;
    curvature_values(cloud, &normals, k)
}

/// Mean curvature over the cloud.
pub fn global_curvature(field: &CurvatureField) -> Result<f64> {
    if field.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(exec::ordered_sum(field.values.iter().copied()) / field.len() as f64)
}

/// Sample skewness of the curvature distribution (diagnostic only).
pub fn curvature_skewness(field: &CurvatureField) -> Result<f64> {
    let mean = global_curvature(field)?;
    let n = field.len() as f64;
    let m2 = exec::ordered_sum(field.values.iter().map(|v| (v - mean).powi(2))) / n;
    let m3 = exec::ordered_sum(field.values.iter().map(|v| (v - mean).powi(3))) / n;
    if m2 == 0.0 {
        return Ok(0.0);
    }
    Ok(m3 / m2.powf(1.5))
}

/// Progressive curvature-ranked subsets of one cloud.
///
/// Level 0 is the whole cloud in its original order. Level `s >= 1` holds the
/// `⌊N / 2^s⌋` highest-curvature points, ranked by descending curvature with
/// ties broken by ascending index.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingLadder {
    pub indices: Vec<Vec<usize>>,
    pub clouds: Vec<PointCloud>,
}

impl SamplingLadder {
    pub fn num_levels(&self) -> usize {
        self.clouds.len()
    }

    pub fn steps(&self) -> usize {
        self.clouds.len() - 1
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clouds.iter().map(PointCloud::len).collect()
    }

    /// The same ladder with every point mapped through `f`.
    pub fn transformed(&self, f: impl Fn(Point3) -> Point3) -> SamplingLadder {
        SamplingLadder {
            indices: self.indices.clone(),
            clouds: self.clouds.iter().map(|c| c.map(&f)).collect(),
        }
    }
}

/// Point indices ordered by descending curvature, ties by ascending index.
pub fn curvature_rank(field: &CurvatureField) -> Vec<usize> {
    let c = &field.values;
    let mut rank: Vec<usize> = (0..c.len()).collect();
    rank.sort_by(|&a, &b| c[b].total_cmp(&c[a]).then(a.cmp(&b)));
    rank
}

pub fn curvature_sample(cloud: &PointCloud, field: &CurvatureField, steps: usize) -> Result<SamplingLadder> {
    if field.len() != cloud.len() {
        return Err(Error::InvalidParameter(format!(
            "{} curvature values for {} points",
            field.len(),
            cloud.len()
        )));
    }
    let n = cloud.len();
    if steps >= usize::BITS as usize || n >> steps == 0 {
        return Err(Error::TooManySteps { steps, count: n });
    }
    let rank = curvature_rank(field);
    let mut indices = vec![(0..n).collect::<Vec<_>>()];
    for s in 1..=steps {
        indices.push(rank[..n >> s].to_vec());
    }
    let clouds = indices.iter().map(|ix| cloud.subset(ix)).collect();
    Ok(SamplingLadder { indices, clouds })
}

/// Greedy farthest-point selection; returns indices in selection order.
pub fn fps_indices(cloud: &PointCloud, m: usize, start: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if m == 0 || m > n || start >= n {
        return Err(Error::BadCount { m, count: n, start });
    }
    let mut selected = vec![false; n];
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut order = Vec::with_capacity(m);
    let mut current = start;
    loop {
        selected[current] = true;
        order.push(current);
        if order.len() == m {
            break;
        }
        let c = cloud[current];
        let mut best: Option<usize> = None;
        for i in 0..n {
            let d2 = cloud[i].distance_squared(c);
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            if !selected[i] && best.is_none_or(|b| min_d2[i] > min_d2[b]) {
                best = Some(i);
            }
        }
        current = best.expect("m <= n leaves an unselected point");
    }
    Ok(order)
}

pub fn fps(cloud: &PointCloud, m: usize, start: usize) -> Result<PointCloud> {
    Ok(cloud.subset(&fps_indices(cloud, m, start)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        (0..n)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect()
    }

    fn plane_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        (0..n)
            .map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0))
            .collect()
    }

    #[test]
    fn plane_normals_are_vertical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cloud = plane_cloud(&mut rng, 100);
        let normals = estimate_normals(&cloud, 16).unwrap();
        for n in &normals.normals {
            assert!((n.norm() - 1.0).abs() < 1e-9);
            // Angle to the z axis (sign-agnostic).
            let angle = n.z.abs().min(1.0).acos();
            assert!(angle < 1e-6, "angle {angle}");
        }
        let field = curvature_values(&cloud, &normals, 16).unwrap();
        assert!(field.values.iter().all(|&c| c < 1e-6));
    }

    #[test]
    fn too_few_points() {
        let cloud = PointCloud::new(vec![Point3::ORIGIN, Point3::new(1.0, 0.0, 0.0)]);
        assert!(matches!(
            estimate_normals(&cloud, 3),
            Err(Error::TooFewPoints { needed: 3, got: 2 })
        ));
        let normals = NormalField {
            normals: vec![Point3::new(0.0, 0.0, 1.0); 2],
            k: 3,
        };
        assert!(matches!(
            curvature_values(&cloud, &normals, 2),
            Err(Error::TooFewPoints { .. })
        ));
    }

    #[test]
    fn sphere_normals_are_radial() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cloud: PointCloud = (0..2000)
            .map(|_| loop {
                let p = Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let n = p.norm();
                if n > 1e-3 && n <= 1.0 {
                    break p * (1.0 / n);
                }
            })
            .collect();
        let normals = estimate_normals(&cloud, 16).unwrap();
        let good = cloud
            .iter()
            .zip(&normals.normals)
            .filter(|(p, n)| p.dot(**n).abs() > 0.99)
            .count();
        assert!(good as f64 >= 0.99 * cloud.len() as f64, "{good}");
    }

    #[test]
    fn sphere_curvature_follows_chord_relation() {
        // Exact radial normals: |unit(chord)·n| = d / (2r).
        let cloud = fibonacci_sphere(1000, 2.0);
        let normals = NormalField {
            normals: cloud.iter().map(|p| *p * 0.5).collect(),
            k: 0,
        };
        let field = curvature_values(&cloud, &normals, 8).unwrap();
        let index = NeighborIndex::build(&cloud).unwrap();
        for (i, p) in cloud.iter().enumerate() {
            let hood = index.knn(*p, 9).unwrap();
            let expect: f64 = hood[1..].iter().map(|n| n.distance / 4.0).sum::<f64>() / 8.0;
            assert!((field.values[i] - expect).abs() < 1e-12);
        }
    }

    fn fibonacci_sphere(n: usize, r: f64) -> PointCloud {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..n)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let rho = (1.0 - z * z).sqrt();
                let t = golden * i as f64;
                Point3::new(rho * t.cos(), rho * t.sin(), z) * r
            })
            .collect()
    }

    #[test]
    fn coincident_neighbour_contributes_zero() {
        let cloud = PointCloud::new(vec![
            Point3::ORIGIN,
            Point3::ORIGIN,
            Point3::new(0.0, 0.0, 1.0),
        ]);
        let normals = NormalField {
            normals: vec![Point3::new(0.0, 0.0, 1.0); 3],
            k: 3,
        };
        let field = curvature_values(&cloud, &normals, 2).unwrap();
        // Point 0: neighbours are point 1 (coincident, 0) and point 2 (|1|).
        assert_eq!(field.values[0], 0.5);
    }

    #[test]
    fn global_curvature_examples() {
        let f = |v: Vec<f64>| CurvatureField { values: v, k: 1 };
        assert_eq!(global_curvature(&f(vec![0.0; 5])).unwrap(), 0.0);
        assert!((global_curvature(&f(vec![0.2, 0.4])).unwrap() - 0.3).abs() < 1e-15);
        assert!(matches!(global_curvature(&f(vec![])), Err(Error::EmptyCloud)));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vals: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        let mut s = 0.0;
        for v in &vals {
            s += v;
        }
        assert!((global_curvature(&f(vals)).unwrap() - s / 1000.0).abs() < 1e-12);
    }

    #[test]
    fn skewness_sign() {
        let f = CurvatureField {
            values: vec![0.0, 0.0, 0.0, 0.0, 1.0],
            k: 1,
        };
        assert!(curvature_skewness(&f).unwrap() > 0.0);
        let flat = CurvatureField { values: vec![0.3; 4], k: 1 };
        assert_eq!(curvature_skewness(&flat).unwrap(), 0.0);
    }

    #[test]
    fn ladder_sizes_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cloud = random_cloud(&mut rng, 256);
        let field = CurvatureField {
            values: (0..256).map(|_| rng.random()).collect(),
            k: 16,
        };
        let ladder = curvature_sample(&cloud, &field, 4).unwrap();
        assert_eq!(ladder.sizes(), vec![256, 128, 64, 32, 16]);
        let ladder = curvature_sample(&cloud, &field, 0).unwrap();
        assert_eq!(ladder.clouds, vec![cloud.clone()]);
        assert!(curvature_sample(&cloud, &field, 8).is_ok());
        assert!(matches!(
            curvature_sample(&cloud, &field, 9),
            Err(Error::TooManySteps { steps: 9, count: 256 })
        ));
    }

    #[test]
    fn ladder_is_nested_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cloud = random_cloud(&mut rng, 100);
        // Quantised values force many ties.
        let field = CurvatureField {
            values: (0..100).map(|_| (rng.random_range(0..5) as f64) / 4.0).collect(),
            k: 16,
        };
        let ladder = curvature_sample(&cloud, &field, 5).unwrap();
        for s in 1..ladder.num_levels() {
            let prev: std::collections::HashSet<_> = ladder.indices[s - 1].iter().collect();
            assert!(ladder.indices[s].iter().all(|i| prev.contains(i)));
            let kept: std::collections::HashSet<_> = ladder.indices[s].iter().copied().collect();
            let min_kept = ladder.indices[s]
                .iter()
                .map(|&i| field.values[i])
                .fold(f64::INFINITY, f64::min);
            let max_dropped = ladder.indices[s - 1]
                .iter()
                .filter(|i| !kept.contains(i))
                .map(|&i| field.values[i])
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(min_kept >= max_dropped);
        }
    }

    fn fps_oracle(cloud: &PointCloud, m: usize, start: usize) -> Vec<usize> {
        // Recomputes every min-distance from scratch each round.
        let mut chosen = vec![start];
        while chosen.len() < m {
            let mut best = usize::MAX;
            let mut best_d = f64::NEG_INFINITY;
            for i in 0..cloud.len() {
                if chosen.contains(&i) {
                    continue;
                }
                let d = chosen
                    .iter()
                    .map(|&j| {
                        let (a, b) = (cloud[i], cloud[j]);
                        let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
                        dx * dx + dy * dy + dz * dz
                    })
                    .fold(f64::INFINITY, f64::min);
                if d > best_d {
                    best_d = d;
                    best = i;
                }
            }
            chosen.push(best);
        }
        chosen
    }

    #[test]
    fn fps_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cloud = random_cloud(&mut rng, 128);
        assert_eq!(fps_indices(&cloud, 16, 0).unwrap(), fps_oracle(&cloud, 16, 0));
        assert_eq!(fps_indices(&cloud, 16, 77).unwrap(), fps_oracle(&cloud, 16, 77));
        let mut all = fps_indices(&cloud, 128, 3).unwrap();
        all.sort();
        assert_eq!(all, (0..128).collect::<Vec<_>>());
        let two = PointCloud::new(vec![Point3::ORIGIN, Point3::new(1.0, 0.0, 0.0)]);
        assert_eq!(fps(&two, 2, 0).unwrap().len(), 2);
        assert!(matches!(fps(&two, 3, 0), Err(Error::BadCount { .. })));
        assert!(matches!(fps(&two, 0, 0), Err(Error::BadCount { .. })));
        assert!(matches!(fps(&two, 1, 2), Err(Error::BadCount { .. })));
    }

    #[test]
    fn fps_with_duplicates_never_repeats() {
        let cloud = PointCloud::new(vec![Point3::ORIGIN; 5]);
        let mut got = fps_indices(&cloud, 5, 2).unwrap();
        assert_eq!(got, vec![2, 0, 1, 3, 4]);
        got.sort();
        assert_eq!(got, vec![0, 1, 2, 3, 4]);
    }
}
