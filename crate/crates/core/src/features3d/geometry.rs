//! Normal estimation and RANSAC plane fitting.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kdtree::KdTree;
use crate::data::types::PointCloud;
use crate::error::{Error, Result};

/// Plane `normal · x + offset = 0` with a unit normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneModel {
    pub normal: [f64; 3],
    pub offset: f64,
    pub threshold: f64,
    pub inliers: usize,
}

impl PlaneModel {
    pub fn new(normal: [f64; 3], point: [f64; 3], threshold: f64) -> Result<Self> {
        let n = Vector3::from(normal);
        let len = n.norm();
        if !(len > 0.0 && len.is_finite()) {
            return Err(Error::InvalidData("plane normal must be non-zero".into()));
        }
        let n = n / len;
        Ok(PlaneModel { normal: n.into(), offset: -n.dot(&Vector3::from(point)), threshold, inliers: 0 })
    }

    #[inline]
    pub fn signed_distance(&self, p: &[f64; 3]) -> f64 {
        self.normal[0] * p[0] + self.normal[1] * p[1] + self.normal[2] * p[2] + self.offset
    }

    pub fn flipped(self) -> Self {
        PlaneModel { normal: self.normal.map(|v| -v), offset: -self.offset, ..self }
    }

    pub fn count_inliers(&self, points: &[[f64; 3]]) -> usize {
        points.iter().filter(|p| self.signed_distance(p).abs() <= self.threshold).count()
    }
}

/// Sign convention: non-negative dot with +z; on a tie +y, then +x.
pub fn orient(n: [f64; 3]) -> [f64; 3] {
    const TIE: f64 = 1e-9;
    let flip = if n[2].abs() > TIE {
        n[2] < 0.0
    } else if n[1].abs() > TIE {
        n[1] < 0.0
    } else {
        n[0] < 0.0
    };
    if flip {
        n.map(|v| -v)
    } else {
        n
    }
}

fn covariance(points: &[[f64; 3]], idx: impl Iterator<Item = usize> + Clone) -> (Vector3<f64>, Matrix3<f64>) {
    let mut mean = Vector3::zeros();
    let mut count = 0.0;
    for i in idx.clone() {
        mean += Vector3::from(points[i]);
        count += 1.0;
    }
    mean /= count;
    let mut cov = Matrix3::zeros();
    for i in idx {
        let d = Vector3::from(points[i]) - mean;
        cov += d * d.transpose();
    }
    (mean, cov / count)
}

/// Eigenvector of the smallest eigenvalue, plus whether the spread has rank < 2.
fn smallest_eigenvector(cov: Matrix3<f64>) -> ([f64; 3], bool) {
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[order[2]].max(0.0);
    let middle = eig.eigenvalues[order[1]].max(0.0);
    let degenerate = largest <= 1e-300 || middle <= 1e-12 * largest;
    let v = eig.eigenvectors.column(order[0]);
    ([v[0], v[1], v[2]], degenerate)
}

/// Per-point normal from the covariance of its `k` nearest neighbours (itself
/// included). Returns the cloud with normals and the indices of points whose
/// neighbourhood was degenerate; those get `+z`.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<(PointCloud, Vec<usize>)> {
    let n = cloud.len();
    if k < 3 || n <= k {
        return Err(Error::TooFewPoints { n, k });
    }
    let tree = KdTree::build(&cloud.points);
    let mut normals = Vec::with_capacity(n);
    let mut degenerate = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let nn = tree.knn(p, k);
        let (_, cov) = covariance(&cloud.points, nn.iter().map(|&(_, j)| j));
        let (v, bad) = smallest_eigenvector(cov);
        if bad {
            degenerate.push(i);
            normals.push([0.0, 0.0, 1.0]);
        } else {
            normals.push(orient(v));
        }
    }
    if !degenerate.is_empty() {
        log::warn!("{} of {n} points have degenerate neighbourhoods; normals set to +z", degenerate.len());
    }
    Ok((cloud.clone().with_normals(normals)?, degenerate))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig { iterations: 500, threshold: 0.05, seed: 0 }
    }
}

/// Plane with the most inliers over random 3-point hypotheses, refined by a
/// least-squares fit to its inliers. The normal is oriented by [`orient`].
pub fn ransac_plane(points: &[[f64; 3]], cfg: &RansacConfig) -> Result<PlaneModel> {
    let n = points.len();
    if n < 3 {
        return Err(Error::InsufficientPoints(format!("{n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<PlaneModel> = None;
    for _ in 0..cfg.iterations {
        let a = rng.gen_range(0..n);
        let mut b = rng.gen_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let mut c = rng.gen_range(0..n - 2);
        for m in [a.min(b), a.max(b)] {
            if c >= m {
                c += 1;
            }
        }
        let (pa, pb, pc) = (Vector3::from(points[a]), Vector3::from(points[b]), Vector3::from(points[c]));
        let cross = (pb - pa).cross(&(pc - pa));
        let scale = (pb - pa).norm() * (pc - pa).norm();
        if !(cross.norm() > 1e-9 * scale) || scale == 0.0 {
            continue;
        }
        let mut plane = PlaneModel::new(cross.into(), points[a], cfg.threshold)?;
        plane.inliers = plane.count_inliers(points);
        if best.is_none_or(|b| plane.inliers > b.inliers) {
            best = Some(plane);
        }
    }
    let coarse = best.ok_or_else(|| {
        Error::InsufficientPoints(format!("all {} samples were degenerate", cfg.iterations))
    })?;
    let inl: Vec<usize> = (0..n).filter(|&i| coarse.signed_distance(&points[i]).abs() <= cfg.threshold).collect();
    let (mean, cov) = covariance(points, inl.iter().copied());
    let (normal, degenerate) = smallest_eigenvector(cov);
    let mut refined = if degenerate {
        coarse
    } else {
        PlaneModel::new(normal, mean.into(), cfg.threshold)?
    };
    refined.inliers = refined.count_inliers(points);
    if refined.inliers < coarse.inliers {
        refined = coarse;
    }
    if orient(refined.normal) != refined.normal {
        refined = refined.flipped();
    }
    Ok(refined)
}

/// Ground and facade planes of a gravity-aligned (`-z` down) facade scan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenePlanes {
    /// Normal points up.
    pub ground: PlaneModel,
    /// Normal points toward the street.
    pub facade: PlaneModel,
}

/// Ground: RANSAC on the lowest `ground_fraction` of points by height.
/// Facade: RANSAC on the points that are not ground inliers, oriented so the
/// ground inliers (the street) lie on its positive side.
pub fn estimate_scene_planes(cloud: &PointCloud, cfg: &RansacConfig, ground_fraction: f64) -> Result<ScenePlanes> {
    let mut by_z: Vec<usize> = (0..cloud.len()).collect();
    by_z.sort_by(|&a, &b| cloud.points[a][2].total_cmp(&cloud.points[b][2]).then(a.cmp(&b)));
    let low = ((cloud.len() as f64 * ground_fraction).ceil() as usize).clamp(3.min(cloud.len()), cloud.len());
    let low_pts: Vec<[f64; 3]> = by_z[..low].iter().map(|&i| cloud.points[i]).collect();
    let mut ground = ransac_plane(&low_pts, cfg)?;
    if ground.normal[2] < 0.0 {
        ground = ground.flipped();
    }
    ground.inliers = ground.count_inliers(&cloud.points);

    let (on_ground, rest): (Vec<[f64; 3]>, Vec<[f64; 3]>) =
        cloud.points.iter().partition(|p| ground.signed_distance(p).abs() <= ground.threshold);
    let facade_cfg = RansacConfig { seed: cfg.seed.wrapping_add(1), ..*cfg };
    let mut facade = ransac_plane(&rest, &facade_cfg)?;
    let street: f64 = on_ground.iter().map(|p| facade.signed_distance(p)).sum();
    if street < 0.0 {
        facade = facade.flipped();
    }
    Ok(ScenePlanes { ground, facade })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn cloud(points: Vec<[f64; 3]>) -> PointCloud {
        let colors = vec![[0, 0, 0]; points.len()];
        PointCloud::new(points, colors).unwrap()
    }

    fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
        let d = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).abs().min(1.0);
        d.acos().to_degrees()
    }

    #[test]
    fn planar_normals_point_up() {
        let pts: Vec<[f64; 3]> = (0..100).map(|i| [(i % 10) as f64 * 0.1, (i / 10) as f64 * 0.13, 0.0]).collect();
        let (c, bad) = estimate_normals(&cloud(pts), 8).unwrap();
        assert!(bad.is_empty());
        for n in c.normals.unwrap() {
            assert!((n[0]).abs() < 1e-6 && n[1].abs() < 1e-6 && (n[2] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn vertical_plane_normals_use_x_tie_rule() {
        let pts: Vec<[f64; 3]> = (0..100).map(|i| [5.0, (i % 10) as f64 * 0.1, (i / 10) as f64 * 0.17]).collect();
        let (c, _) = estimate_normals(&cloud(pts), 8).unwrap();
        for n in c.normals.unwrap() {
            assert!((n[0] - 1.0).abs() < 1e-6, "{n:?}");
        }
    }

    #[test]
    fn noisy_plane_normals_are_accurate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let pts: Vec<[f64; 3]> =
            (0..300).map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), noise.sample(&mut rng)]).collect();
        let (c, _) = estimate_normals(&cloud(pts), 16).unwrap();
        let normals = c.normals.unwrap();
        let mean: f64 = normals.iter().map(|&n| angle_deg(n, [0.0, 0.0, 1.0])).sum::<f64>() / normals.len() as f64;
        assert!(mean < 5.0, "mean angular error {mean}");
    }

    #[test]
    fn too_few_points_for_k() {
        let pts = vec![[0.0, 0.0, 0.0]; 5];
        assert!(matches!(estimate_normals(&cloud(pts), 8), Err(Error::TooFewPoints { .. })));
    }

    #[test]
    fn exact_plane_is_recovered_with_all_inliers() {
        let pts: Vec<[f64; 3]> = (0..100)
            .map(|i| {
                let (u, v) = ((i % 10) as f64, (i / 10) as f64);
                [u, v, 0.5 * u - 0.25 * v + 2.0]
            })
            .collect();
        let p = ransac_plane(&pts, &RansacConfig::default()).unwrap();
        assert_eq!(p.inliers, 100);
        let truth = Vector3::new(-0.5, 0.25, 1.0).normalize();
        assert!(angle_deg(p.normal, truth.into()) < 1e-6);
        assert!(pts.iter().all(|q| p.signed_distance(q).abs() < 1e-9));
    }

    #[test]
    fn plane_with_outliers_within_two_degrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut pts: Vec<[f64; 3]> = (0..900)
            .map(|_| {
                let (u, v): (f64, f64) = (rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0));
                [u, 0.3 * u + noise.sample(&mut rng), v]
            })
            .collect();
        pts.extend((0..100).map(|_| [rng.gen_range(0.0..4.0), rng.gen_range(-2.0..3.0), rng.gen_range(0.0..4.0)]));
        let p = ransac_plane(&pts, &RansacConfig::default()).unwrap();
        let truth = Vector3::new(-0.3, 1.0, 0.0).normalize();
        assert!(angle_deg(p.normal, truth.into()) < 2.0);
    }

    #[test]
    fn collinear_points_are_insufficient() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0]];
        assert!(matches!(ransac_plane(&pts, &RansacConfig::default()), Err(Error::InsufficientPoints(_))));
    }

    #[test]
    fn ransac_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<[f64; 3]> = (0..200).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let cfg = RansacConfig { seed: 42, ..Default::default() };
        assert_eq!(ransac_plane(&pts, &cfg).unwrap(), ransac_plane(&pts, &cfg).unwrap());
    }
}
