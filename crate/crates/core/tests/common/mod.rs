//! Brute-force oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::Rng;
use curvup::{Point3, PointCloud};

pub fn random_point<R: Rng + ?Sized>(rng: &mut R, half: f64) -> Point3 {
    Point3::new(
        rng.random_range(-half..half),
        rng.random_range(-half..half),
        rng.random_range(-half..half),
    )
}

pub fn random_cloud<R: Rng + ?Sized>(rng: &mut R, n: usize) -> PointCloud {
    (0..n).map(|_| random_point(rng, 1.0)).collect()
}

/// Points on a coarse integer grid, so exact distance ties are common.
pub fn grid_cloud<R: Rng + ?Sized>(rng: &mut R, n: usize) -> PointCloud {
    (0..n)
        .map(|_| {
            Point3::new(
                rng.random_range(0..4) as f64,
                rng.random_range(0..4) as f64,
                rng.random_range(0..4) as f64,
            )
        })
        .collect()
}

pub fn fibonacci_sphere(n: usize, r: f64) -> PointCloud {
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

/// All `(index, distance)` pairs sorted by distance, then index.
pub fn brute_sorted(cloud: &PointCloud, q: Point3) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64, f64)> = cloud
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p.distance_squared(q), p.distance(q)))
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.into_iter().map(|(i, _, d)| (i, d)).collect()
}

pub fn brute_nearest(cloud: &PointCloud, q: Point3) -> f64 {
    cloud.iter().map(|p| p.distance(q)).fold(f64::INFINITY, f64::min)
}

pub fn brute_chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    let ab: f64 = a.iter().map(|p| brute_nearest(b, *p)).sum::<f64>() / a.len() as f64;
    let ba: f64 = b.iter().map(|p| brute_nearest(a, *p)).sum::<f64>() / b.len() as f64;
    0.5 * (ab + ba)
}

pub fn brute_hausdorff(a: &PointCloud, b: &PointCloud) -> f64 {
    let ab = a.iter().map(|p| brute_nearest(b, *p)).fold(0.0, f64::max);
    let ba = b.iter().map(|p| brute_nearest(a, *p)).fold(0.0, f64::max);
    ab.max(ba)
}

fn segment_distance(p: Point3, a: Point3, b: Point3) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.norm_squared()).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

/// Distance to a triangle: the plane distance when the foot lies inside,
/// otherwise the nearest edge.
pub fn brute_triangle_distance(p: Point3, a: Point3, b: Point3, c: Point3) -> f64 {
    let n = (b - a).cross(c - a);
    let n = n * (1.0 / n.norm());
    let h = (p - a).dot(n);
    let foot = p - n * h;
    let inside = [(a, b), (b, c), (c, a)]
        .iter()
        .all(|&(u, v)| (v - u).cross(foot - u).dot(n) >= 0.0);
    let edges = segment_distance(p, a, b).min(segment_distance(p, b, c)).min(segment_distance(p, c, a));
    if inside {
        h.abs().min(edges)
    } else {
        edges
    }
}

/// Greedy farthest-point selection recomputing every min-distance from scratch.
pub fn brute_fps(cloud: &PointCloud, m: usize, start: usize) -> Vec<usize> {
    let mut order = vec![start];
    while order.len() < m {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..cloud.len() {
            if order.contains(&i) {
                continue;
            }
            let d = order
                .iter()
                .map(|&j| cloud[i].distance_squared(cloud[j]))
                .fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        order.push(best.unwrap().0);
    }
    order
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_curvup"))
}

pub fn run_cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

/// Runs the CLI and panics with its stderr on failure.
pub fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = run_cli(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

/// Central-difference derivative of `f` at 0 with Ridders' Richardson
/// extrapolation over shrinking steps starting at `h0`.
pub fn ridders(mut f: impl FnMut(f64) -> f64, h0: f64) -> f64 {
    const SHRINK: f64 = 1.4;
    const SHRINK2: f64 = SHRINK * SHRINK;
    const N: usize = 10;
    let mut a = [[0.0f64; N]; N];
    let mut h = h0;
    a[0][0] = (f(h) - f(-h)) / (2.0 * h);
    let (mut err, mut best) = (f64::INFINITY, a[0][0]);
    for i in 1..N {
        h /= SHRINK;
        a[0][i] = (f(h) - f(-h)) / (2.0 * h);
        let mut fac = SHRINK2;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= SHRINK2;
            let e = (a[j][i] - a[j - 1][i]).abs().max((a[j][i] - a[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = a[j][i];
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= 2.0 * err {
            break;
        }
    }
    best
}
