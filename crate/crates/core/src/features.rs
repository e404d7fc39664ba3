//! Surface features from point clouds: PCA normals, quadric-fit principal
//! curvatures and the oriented frames built from them.

use std::num::NonZero;
use std::path::Path;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::{Matrix2, Matrix3, SMatrix, SVector, SymmetricEigen, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{any_orthogonal, Pose};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub view_origin: Option<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self { points, view_origin: None }
    }

    pub fn with_view_origin(mut self, origin: Vector3<f64>) -> Self {
        self.view_origin = Some(origin);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let n = self.points.len().max(1) as f64;
        self.points.iter().sum::<Vector3<f64>>() / n
    }

    /// Cloud with every point (and the view origin) mapped through `pose`.
    pub fn transformed(&self, pose: &Pose) -> Self {
        Self {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
            view_origin: self.view_origin.map(|o| pose.transform_point(&o)),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            points: self.points.iter().map(|p| p * s).collect(),
            view_origin: self.view_origin.map(|o| o * s),
        }
    }

    fn check_finite(&self) -> Result<()> {
        if self.points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::DegenerateCloud("non-finite coordinate".into()));
        }
        Ok(())
    }

    /// Reads an ASCII PLY file; only the vertex x, y, z properties are used.
    pub fn read_ply(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_ply(&std::fs::read_to_string(path)?)
    }

    pub fn parse_ply(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("ply") {
            return Err(Error::Parse("missing ply magic".into()));
        }
        let mut vertex_count = None;
        let mut in_vertex = false;
        let mut props: Vec<String> = Vec::new();
        // elements declared before the vertex block would shift the data
        let mut preceding_rows = 0usize;
        let mut seen_vertex = false;
        for line in lines.by_ref() {
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.as_slice() {
                ["format", fmt, ..] if *fmt != "ascii" => {
                    return Err(Error::Parse(format!("unsupported ply format '{fmt}'")));
                }
                ["element", "vertex", n] => {
                    vertex_count = Some(n.parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?);
                    in_vertex = true;
                    seen_vertex = true;
                }
                ["element", _, n] => {
                    in_vertex = false;
                    if !seen_vertex {
                        preceding_rows += n.parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?;
                    }
                }
                ["property", .., name] if in_vertex => props.push(name.to_string()),
                ["end_header"] => break,
                _ => {}
            }
        }
        let count = vertex_count.ok_or_else(|| Error::Parse("ply has no vertex element".into()))?;
        let idx = |name: &str| {
            props
                .iter()
                .position(|p| p == name)
                .ok_or_else(|| Error::Parse(format!("ply vertex has no '{name}' property")))
        };
        let (ix, iy, iz) = (idx("x")?, idx("y")?, idx("z")?);
        let mut points = Vec::with_capacity(count);
        for line in lines.filter(|l| !l.trim().is_empty()).skip(preceding_rows).take(count) {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("{e}: '{t}'"))))
                .collect::<Result<_>>()?;
            let get = |i: usize| vals.get(i).copied().ok_or_else(|| Error::Parse("short ply row".into()));
            points.push(Vector3::new(get(ix)?, get(iy)?, get(iz)?));
        }
        if points.len() != count {
            return Err(Error::Parse(format!("ply declares {count} vertices, found {}", points.len())));
        }
        let cloud = Self::new(points);
        cloud.check_finite()?;
        Ok(cloud)
    }

    /// Reads one `x,y,z` row per point. A non-numeric first row is treated as
    /// a header; blank lines and `#` comments are skipped.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_csv(&std::fs::read_to_string(path)?)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse::<f64>()).collect();
            match parsed {
                Ok(v) if v.len() >= 3 => points.push(Vector3::new(v[0], v[1], v[2])),
                Ok(_) => return Err(Error::Parse(format!("line {}: expected x,y,z", lineno + 1))),
                Err(_) if points.is_empty() && lineno == 0 => continue,
                Err(e) => return Err(Error::Parse(format!("line {}: {e}", lineno + 1))),
            }
        }
        let cloud = Self::new(points);
        cloud.check_finite()?;
        Ok(cloud)
    }

    pub fn to_ply(&self) -> String {
        let mut out = format!(
            "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
            self.points.len()
        );
        for p in &self.points {
            out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
        }
        out
    }

    pub fn write_ply(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_ply())?;
        Ok(())
    }
}

/// An oriented surface point: frame `pose` (x = k1, y = n × k1, z = n) and
/// principal curvatures `r = (r1, r2)`, `r1 ≥ r2`, convex positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceFeature {
    pub pose: Pose,
    pub r: Vector2<f64>,
}

impl SurfaceFeature {
    pub fn normal(&self) -> Vector3<f64> {
        self.pose.axis(2)
    }

    pub fn position(&self) -> &Vector3<f64> {
        self.pose.p()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Neighbourhood size.
    pub k: usize,
    /// Reference direction for orienting k1 when curvature is isotropic.
    pub up: Vector3<f64>,
    /// Below this `r1 − r2` (1/m) the principal direction is considered
    /// undefined and k1 falls back to the horizontal tangent `up × n`.
    pub anisotropy_threshold: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { k: 20, up: Vector3::z(), anisotropy_threshold: 1.0 }
    }
}

impl FeatureConfig {
    pub fn with_k(k: usize) -> Self {
        Self { k, ..Self::default() }
    }
}

/// k-nearest-neighbour index over a cloud.
pub struct NeighborIndex {
    tree: ImmutableKdTree<f64, 3>,
    len: usize,
}

impl NeighborIndex {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        Self { tree: ImmutableKdTree::new_from_slice(&raw), len: points.len() }
    }

    /// Indices of the `k` nearest points, closest first, ties by index.
    pub fn nearest(&self, query: &Vector3<f64>, k: usize) -> Vec<usize> {
        let k = k.min(self.len);
        let Some(k) = NonZero::new(k) else { return Vec::new() };
        let mut found = self.tree.nearest_n::<SquaredEuclidean>(&[query.x, query.y, query.z], k);
        found.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.item.cmp(&b.item)));
        found.into_iter().map(|n| n.item as usize).collect()
    }

    /// Squared distance to the closest point.
    pub fn nearest_distance2(&self, query: &Vector3<f64>) -> f64 {
        self.tree.nearest_one::<SquaredEuclidean>(&[query.x, query.y, query.z]).distance
    }
}

fn check_size(cloud: &PointCloud, k: usize) -> Result<()> {
    if k < 3 {
        return Err(Error::Config(format!("neighbour count must be at least 3, got {k}")));
    }
    let need = k.max(4);
    if cloud.len() < need {
        return Err(Error::TooFewPoints { got: cloud.len(), need });
    }
    cloud.check_finite()
}

fn normal_at(cloud: &PointCloud, index: &NeighborIndex, centroid: &Vector3<f64>, i: usize, k: usize) -> Result<Vector3<f64>> {
    let p = cloud.points[i];
    let nbrs = index.nearest(&p, k);
    let mean = nbrs.iter().map(|j| cloud.points[*j]).sum::<Vector3<f64>>() / nbrs.len() as f64;
    let mut cov = Matrix3::zeros();
    for j in &nbrs {
        let d = cloud.points[*j] - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
    let (l1, l2) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(l2 > 0.0) || l1 <= 1e-12 * l2 {
        return Err(Error::DegenerateNeighborhood(i));
    }
    let mut n: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned().normalize();
    let reference = match cloud.view_origin {
        Some(o) => o - p,
        None => p - centroid,
    };
    let s = n.dot(&reference);
    let flip = if s.abs() > 1e-12 * reference.norm().max(1e-12) {
        s < 0.0
    } else {
        // on a plane through the reference point: prefer up, then the first non-zero component
        if n.z.abs() > 1e-12 {
            n.z < 0.0
        } else {
            n.iter().find(|c| c.abs() > 1e-12).is_some_and(|c| *c < 0.0)
        }
    };
    if flip {
        n = -n;
    }
    Ok(n)
}

/// Unit normals from the smallest-eigenvalue eigenvector of each point's
/// k-neighbourhood covariance, oriented toward the view origin if present,
/// otherwise away from the cloud centroid.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<Vec<Vector3<f64>>> {
    check_size(cloud, k)?;
    let index = NeighborIndex::new(&cloud.points);
    let centroid = cloud.centroid();
    (0..cloud.len())
        .into_par_iter()
        .map(|i| normal_at(cloud, &index, &centroid, i, k))
        .collect()
}

/// Fits `w = a u² + b uv + c v² + d u + e v` in the tangent frame and returns
/// the principal directions and curvatures (convex positive, `r1 ≥ r2`).
fn curvature_at(
    cloud: &PointCloud,
    index: &NeighborIndex,
    normal: &Vector3<f64>,
    i: usize,
    cfg: &FeatureConfig,
) -> Result<(Vector3<f64>, Vector2<f64>)> {
    let p = cloud.points[i];
    let e1 = any_orthogonal(normal);
    let e2 = normal.cross(&e1);
    let mut ata = SMatrix::<f64, 5, 5>::zeros();
    let mut atb = SVector::<f64, 5>::zeros();
    let mut used = 0;
    let mut scale2: f64 = 0.0;
    for j in index.nearest(&p, cfg.k + 1) {
        if j == i {
            continue;
        }
        let d = cloud.points[j] - p;
        let (u, v, w) = (d.dot(&e1), d.dot(&e2), d.dot(normal));
        scale2 = scale2.max(u * u + v * v);
        let row = SVector::<f64, 5>::new(u * u, u * v, v * v, u, v);
        ata += row * row.transpose();
        atb += row * w;
        used += 1;
    }
    if used < 5 || !(scale2 > 0.0) {
        return Err(Error::DegenerateNeighborhood(i));
    }
    // column scaling keeps the normal equations well conditioned at any cloud scale
    let s = [scale2, scale2, scale2, scale2.sqrt(), scale2.sqrt()];
    let dscale = SMatrix::<f64, 5, 5>::from_diagonal(&SVector::from(s.map(|x| 1.0 / x)));
    let scaled = dscale * ata * dscale;
    let eig = SymmetricEigen::new(scaled);
    let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), x| (lo.min(*x), hi.max(*x)));
    if !(lo > 1e-10 * hi) {
        return Err(Error::DegenerateNeighborhood(i));
    }
    let coef = dscale * scaled.try_inverse().ok_or(Error::DegenerateNeighborhood(i))? * (dscale * atb);
    let (a, b, c, d, e) = (coef[0], coef[1], coef[2], coef[3], coef[4]);

    // first and second fundamental forms of the Monge patch at the origin
    let first = Matrix2::new(1.0 + d * d, d * e, d * e, 1.0 + e * e);
    let den = (1.0 + d * d + e * e).sqrt();
    let second = Matrix2::new(2.0 * a, b, b, 2.0 * c) / den;
    let (ee, ff, gg) = (first[(0, 0)], first[(0, 1)], first[(1, 1)]);
    let (ll, mm, nn) = (second[(0, 0)], second[(0, 1)], second[(1, 1)]);
    // (EG − F²)κ² − (LG + NE − 2MF)κ + (LN − M²) = 0
    let qa = ee * gg - ff * ff;
    let qb = -(ll * gg + nn * ee - 2.0 * mm * ff);
    let qc = ll * nn - mm * mm;
    let disc = (qb * qb - 4.0 * qa * qc).max(0.0).sqrt();
    let kappa_hi = (-qb + disc) / (2.0 * qa);
    let kappa_lo = (-qb - disc) / (2.0 * qa);
    // the fitted normal points outward, so a convex surface bends toward −w
    let (r1, r2) = (-kappa_lo, -kappa_hi);

    let k1 = if r1 - r2 < cfg.anisotropy_threshold {
        fallback_direction(normal, &cfg.up)
    } else {
        // principal direction for eigenvalue κ of I⁻¹II: (II − κI)·t = 0
        let m = second - first * kappa_lo;
        let t = if m[(0, 1)].abs() + m[(0, 0)].abs() >= m[(1, 0)].abs() + m[(1, 1)].abs() {
            Vector2::new(-m[(0, 1)], m[(0, 0)])
        } else {
            Vector2::new(-m[(1, 1)], m[(1, 0)])
        };
        let tangent = e1 * t.x + e2 * t.y + normal * (d * t.x + e * t.y);
        let tangent = tangent - normal * normal.dot(&tangent);
        if tangent.norm() < 1e-12 {
            fallback_direction(normal, &cfg.up)
        } else {
            orient_k1(tangent.normalize(), normal, &cfg.up)
        }
    };
    Ok((k1, Vector2::new(r1, r2)))
}

/// Horizontal tangent for isotropic patches, matching the circumferential k1
/// of vertical cylinders and edges; falls back to world x on level patches.
fn fallback_direction(normal: &Vector3<f64>, up: &Vector3<f64>) -> Vector3<f64> {
    let t = up.cross(normal);
    if t.norm() > 1e-6 {
        return orient_k1(t.normalize(), normal, up);
    }
    let x = Vector3::x();
    let t = x - normal * normal.dot(&x);
    if t.norm() > 1e-6 {
        t.normalize()
    } else {
        any_orthogonal(normal)
    }
}

/// Resolves the k1/−k1 ambiguity relative to gravity so that the rule commutes
/// with rotations about the vertical: k1 or k2 = n × k1 (whichever is more
/// vertical) points up. Only when both are horizontal does the first non-zero
/// component decide.
fn orient_k1(k1: Vector3<f64>, normal: &Vector3<f64>, up: &Vector3<f64>) -> Vector3<f64> {
    let a = k1.dot(up);
    let b = normal.cross(&k1).dot(up);
    let sign = if a.abs().max(b.abs()) > 1e-9 {
        if a.abs() >= b.abs() {
            a.signum()
        } else {
            b.signum()
        }
    } else {
        k1.iter().find(|c| c.abs() > 1e-12).map_or(1.0, |c| c.signum())
    };
    k1 * sign
}

/// Per-point principal direction k1 and curvatures `r = (r1, r2)`.
pub fn estimate_curvatures(cloud: &PointCloud, normals: &[Vector3<f64>], k: usize) -> Result<Vec<(Vector3<f64>, Vector2<f64>)>> {
    estimate_curvatures_with(cloud, normals, &FeatureConfig::with_k(k))
}

pub fn estimate_curvatures_with(
    cloud: &PointCloud,
    normals: &[Vector3<f64>],
    cfg: &FeatureConfig,
) -> Result<Vec<(Vector3<f64>, Vector2<f64>)>> {
    if cfg.k < 5 {
        return Err(Error::Config(format!("curvature fit needs k ≥ 5, got {}", cfg.k)));
    }
    check_size(cloud, cfg.k)?;
    if normals.len() != cloud.len() {
        return Err(Error::Config("one normal per point required".into()));
    }
    let index = NeighborIndex::new(&cloud.points);
    (0..cloud.len())
        .into_par_iter()
        .map(|i| curvature_at(cloud, &index, &normals[i], i, cfg))
        .collect()
}

fn frame(p: Vector3<f64>, n: &Vector3<f64>, k1: &Vector3<f64>) -> Pose {
    let y = n.cross(k1);
    Pose::from_axes(p, k1, &y, n)
}

pub fn build_features(cloud: &PointCloud, k: usize) -> Result<Vec<SurfaceFeature>> {
    build_features_with(cloud, &FeatureConfig::with_k(k))
}

/// One feature per point; points whose neighbourhood is degenerate are
/// skipped. Fails only when no point yields a feature.
pub fn build_features_with(cloud: &PointCloud, cfg: &FeatureConfig) -> Result<Vec<SurfaceFeature>> {
    check_size(cloud, cfg.k)?;
    if cfg.k < 5 {
        return Err(Error::Config(format!("curvature fit needs k ≥ 5, got {}", cfg.k)));
    }
    let index = NeighborIndex::new(&cloud.points);
    let centroid = cloud.centroid();
    let per_point: Vec<Result<SurfaceFeature>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let n = normal_at(cloud, &index, &centroid, i, cfg.k)?;
            let (k1, r) = curvature_at(cloud, &index, &n, i, cfg)?;
            Ok(SurfaceFeature { pose: frame(cloud.points[i], &n, &k1), r })
        })
        .collect();
    let mut first_err = None;
    let mut out = Vec::with_capacity(per_point.len());
    for f in per_point {
        match f {
            Ok(f) => out.push(f),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if out.is_empty() {
        return Err(first_err.unwrap_or(Error::EmptyFeatures));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::yaw_rotation;
    use nalgebra::UnitQuaternion;
    use std::f64::consts::PI;

    fn grid_plane(n: usize, spacing: f64) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(Vector3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
            }
        }
        PointCloud::new(pts)
    }

    fn fibonacci_sphere(radius: f64, n: usize) -> PointCloud {
        let golden = PI * (3.0 - 5f64.sqrt());
        let pts = (0..n)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let th = golden * i as f64;
                Vector3::new(r * th.cos(), r * th.sin(), z) * radius
            })
            .collect();
        PointCloud::new(pts)
    }

    fn cylinder_wall(radius: f64, height: f64, spacing: f64) -> PointCloud {
        let na = (2.0 * PI * radius / spacing).round() as usize;
        let nz = (height / spacing).round() as usize + 1;
        let mut pts = Vec::new();
        for iz in 0..nz {
            for ia in 0..na {
                let a = 2.0 * PI * ia as f64 / na as f64;
                pts.push(Vector3::new(radius * a.cos(), radius * a.sin(), iz as f64 * spacing));
            }
        }
        PointCloud::new(pts)
    }

    #[test]
    fn plane_normals_and_identity_frames() {
        let cloud = grid_plane(12, 0.01);
        for n in estimate_normals(&cloud, 10).unwrap() {
            assert!((n.z.abs() - 1.0).abs() < 1e-6);
        }
        let feats = build_features(&cloud, 10).unwrap();
        assert_eq!(feats.len(), cloud.len());
        for f in &feats {
            assert!(f.r.norm() < 0.05 / 0.11);
            assert!(f.pose.q().angle() < 1e-6, "{:?}", f.pose.q());
        }
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let cloud = PointCloud::new((0..3).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect());
        assert!(matches!(estimate_normals(&cloud, 3), Err(Error::TooFewPoints { .. })));
        let cloud = PointCloud::new((0..4).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect());
        assert!(matches!(estimate_normals(&cloud, 3), Err(Error::DegenerateNeighborhood(_))));
        let cloud = PointCloud::new(vec![Vector3::zeros(); 2]);
        assert!(matches!(estimate_normals(&cloud, 3), Err(Error::TooFewPoints { got: 2, .. })));
    }

    #[test]
    fn sphere_normals_and_curvature() {
        let radius = 0.1;
        // about 1.3·10⁴ points per square meter
        let cloud = fibonacci_sphere(radius, 1600);
        let normals = estimate_normals(&cloud, 20).unwrap();
        for (p, n) in cloud.points.iter().zip(&normals) {
            let radial = p.normalize();
            assert!(n.dot(&radial).clamp(-1.0, 1.0).acos() < 2f64.to_radians());
        }
        let curv = estimate_curvatures(&cloud, &normals, 20).unwrap();
        for (_, r) in curv {
            assert!((r.x - 10.0).abs() < 0.5 && (r.y - 10.0).abs() < 0.5, "{r:?}");
        }
    }

    #[test]
    fn cylinder_wall_curvature_and_direction() {
        let cloud = cylinder_wall(0.1, 0.2, 0.008);
        let feats = build_features(&cloud, 20).unwrap();
        let mut checked = 0;
        for f in &feats {
            let z = f.pose.p().z;
            if !(0.04..=0.16).contains(&z) {
                continue;
            }
            checked += 1;
            assert!((f.r.x - 10.0).abs() < 0.5 && f.r.y.abs() < 0.5, "{:?}", f.r);
            // k1 runs around the circumference, k2 = n × k1 points up
            let k1 = f.pose.axis(0);
            assert!(k1.z.abs() < 0.05);
            assert!(f.pose.axis(1).z > 0.95);
        }
        assert!(checked > 100);
    }

    #[test]
    fn frames_are_orthonormal_and_r_ordered() {
        let cloud = fibonacci_sphere(0.3, 800);
        for f in build_features(&cloud, 15).unwrap() {
            let (x, y, z) = (f.pose.axis(0), f.pose.axis(1), f.pose.axis(2));
            assert!(x.dot(&y).abs() < 1e-6 && y.dot(&z).abs() < 1e-6 && x.dot(&z).abs() < 1e-6);
            assert!(f.r.x >= f.r.y);
        }
    }

    fn random_cylinder(radius: f64, height: f64, n: usize) -> PointCloud {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let pts = (0..n)
            .map(|_| {
                let a = rng.random::<f64>() * 2.0 * PI;
                Vector3::new(radius * a.cos(), radius * a.sin(), height * rng.random::<f64>())
            })
            .collect();
        PointCloud::new(pts)
    }

    #[test]
    fn yaw_rotation_equivariance() {
        // random sampling: lattices and spirals tie at the k-th neighbour
        let cloud = random_cylinder(0.1, 0.2, 1500);
        let pose = Pose::new(Vector3::new(0.3, -0.2, 0.0), yaw_rotation(0.7));
        let a = build_features(&cloud, 20).unwrap();
        let b = build_features(&cloud.transformed(&pose), 20).unwrap();
        assert_eq!(a.len(), b.len());
        // rim points have near-tied neighbour sets that rounding can reorder
        for (fa, fb) in a.iter().zip(&b).filter(|(f, _)| (0.03..0.17).contains(&f.pose.p().z)) {
            let moved = pose.compose(&fa.pose);
            assert!((moved.p() - fb.pose.p()).norm() < 1e-9);
            assert!(moved.approx_eq(&fb.pose, 1e-6), "{moved:?} vs {:?}", fb.pose);
            assert!((fa.r - fb.r).norm() < 1e-6);
        }
    }

    #[test]
    fn general_rotation_preserves_curvature() {
        let cloud = fibonacci_sphere(0.15, 1000);
        let rot = Pose::new(Vector3::new(1.0, 2.0, 3.0), UnitQuaternion::from_euler_angles(0.3, -0.8, 1.9));
        let a = build_features(&cloud, 20).unwrap();
        let b = build_features(&cloud.transformed(&rot), 20).unwrap();
        for (fa, fb) in a.iter().zip(&b) {
            assert!((fa.r - fb.r).norm() < 1e-6);
            assert!((rot.q() * fa.normal() - fb.normal()).norm() < 1e-6);
        }
    }

    #[test]
    fn scale_covariance() {
        let cloud = fibonacci_sphere(0.1, 1200);
        let a = build_features(&cloud, 20).unwrap();
        let b = build_features(&cloud.scaled(2.0), 20).unwrap();
        for (fa, fb) in a.iter().zip(&b) {
            assert!((fa.r / 2.0 - fb.r).norm() < 1e-6 * fa.r.norm().max(1.0));
        }
    }

    #[test]
    fn view_origin_orients_normals() {
        let cloud = grid_plane(8, 0.01).with_view_origin(Vector3::new(0.0, 0.0, -1.0));
        for n in estimate_normals(&cloud, 8).unwrap() {
            assert!(n.z < -0.999);
        }
    }

    #[test]
    fn ply_and_csv_round_trip() {
        let cloud = fibonacci_sphere(0.1, 50);
        let back = PointCloud::parse_ply(&cloud.to_ply()).unwrap();
        assert_eq!(back.points, cloud.points);
        let csv = "x,y,z\n1,2,3\n# c\n\n4.5,-1,0\n";
        let c = PointCloud::parse_csv(csv).unwrap();
        assert_eq!(c.points, vec![Vector3::new(1.0, 2.0, 3.0), Vector3::new(4.5, -1.0, 0.0)]);
        assert!(matches!(PointCloud::parse_csv("1,2,3\n1,x,3\n"), Err(Error::Parse(_))));
        let ply = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float z\nproperty float y\nproperty float x\nproperty uchar red\nend_header\n3 2 1 255\n6 5 4 0\n";
        let c = PointCloud::parse_ply(ply).unwrap();
        assert_eq!(c.points[1], Vector3::new(4.0, 5.0, 6.0));
        assert!(PointCloud::parse_ply("ply\nformat binary_little_endian 1.0\nend_header\n").is_err());
    }
}
