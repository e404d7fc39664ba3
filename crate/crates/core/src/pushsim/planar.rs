//! Convex polygon geometry in the ground plane: separating axes, contact
//! manifolds and distances.

use nalgebra::{Rotation2, Vector2};

/// Planar rigid transform: translation plus heading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Planar {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Planar {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn origin(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn rotation(&self) -> Rotation2<f64> {
        Rotation2::new(self.theta)
    }

    pub fn apply(&self, p: &Vector2<f64>) -> Vector2<f64> {
        self.rotation() * p + self.origin()
    }

    /// `self ∘ exp(twist·dt)` for a body-frame twist `(vx, vy, ω)`.
    pub fn integrate_body(&self, v: &Vector2<f64>, omega: f64, dt: f64) -> Planar {
        let th = omega * dt;
        let local = if th.abs() < 1e-12 {
            v * dt
        } else {
            let (s, c) = th.sin_cos();
            Vector2::new(v.x * s - v.y * (1.0 - c), v.x * (1.0 - c) + v.y * s) / omega
        };
        let w = self.rotation() * local;
        Planar::new(self.x + w.x, self.y + w.y, self.theta + th)
    }
}

pub fn transform(poly: &[Vector2<f64>], pose: &Planar) -> Vec<Vector2<f64>> {
    poly.iter().map(|p| pose.apply(p)).collect()
}

fn edge_normal(poly: &[Vector2<f64>], i: usize) -> Vector2<f64> {
    let e = poly[(i + 1) % poly.len()] - poly[i];
    Vector2::new(e.y, -e.x).normalize()
}

pub fn cross(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Largest separation of `b` from any edge of `a` (CCW), and that edge.
/// Negative values are penetration depths.
pub fn max_separation(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for i in 0..a.len() {
        let n = edge_normal(a, i);
        let s = b.iter().map(|v| n.dot(&(v - a[i]))).fold(f64::INFINITY, f64::min);
        if s > best.0 {
            best = (s, i);
        }
    }
    best
}

/// Separating-axis distance between convex polygons: positive when apart
/// (a lower bound on the true distance), negative by the penetration depth.
pub fn separation(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> f64 {
    max_separation(a, b).0.max(max_separation(b, a).0)
}

fn point_segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let e = b - a;
    let t = ((p - a).dot(&e) / e.norm_squared()).clamp(0.0, 1.0);
    (p - (a + e * t)).norm()
}

/// Euclidean distance between convex polygons, 0 when they overlap.
pub fn distance(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> f64 {
    if separation(a, b) <= 0.0 {
        return 0.0;
    }
    let mut d = f64::INFINITY;
    for (p, q) in [(a, b), (b, a)] {
        for v in p {
            for i in 0..q.len() {
                d = d.min(point_segment_distance(v, &q[i], &q[(i + 1) % q.len()]));
            }
        }
    }
    d
}

/// A contact between a pusher and an object polygon: the point lies on the
/// object boundary; the normal points from the pusher into the object.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactPoint {
    pub point: Vector2<f64>,
    pub normal: Vector2<f64>,
}

/// Contact manifold (at most two points) by reference-face clipping.
/// Returns the separation and the contacts whose gap is at most `tol`.
pub fn contact_manifold(pusher: &[Vector2<f64>], object: &[Vector2<f64>], tol: f64) -> (f64, Vec<ContactPoint>) {
    let (sa, ea) = max_separation(pusher, object);
    let (sb, eb) = max_separation(object, pusher);
    let sep = sa.max(sb);
    if sep > tol {
        return (sep, Vec::new());
    }
    // prefer the pusher face unless the object face is clearly better
    let object_ref = sb > sa + 1e-9;
    let (rp, ip, ei) = if object_ref { (object, pusher, eb) } else { (pusher, object, ea) };
    let v1 = rp[ei];
    let v2 = rp[(ei + 1) % rp.len()];
    let n = edge_normal(rp, ei);
    let t = (v2 - v1).normalize();
    let inc = (0..ip.len())
        .min_by(|i, j| edge_normal(ip, *i).dot(&n).total_cmp(&edge_normal(ip, *j).dot(&n)))
        .unwrap_or(0);
    let mut seg = [ip[inc], ip[(inc + 1) % ip.len()]];
    let lo = t.dot(&v1);
    let hi = t.dot(&v2);
    if !clip(&mut seg, &t, lo, hi) {
        return (sep, Vec::new());
    }
    let mut out: Vec<ContactPoint> = Vec::with_capacity(2);
    for p in seg {
        let s = n.dot(&(p - v1));
        if s > tol {
            continue;
        }
        let c = if object_ref {
            ContactPoint { point: p - n * s, normal: -n }
        } else {
            ContactPoint { point: p, normal: n }
        };
        if out.iter().all(|o| (o.point - c.point).norm() > 1e-9) {
            out.push(c);
        }
    }
    (sep, out)
}

/// Clips a segment to `lo ≤ t·p ≤ hi`; false when nothing remains.
fn clip(seg: &mut [Vector2<f64>; 2], t: &Vector2<f64>, lo: f64, hi: f64) -> bool {
    for (bound, sign) in [(lo, 1.0), (hi, -1.0)] {
        let d0 = sign * (t.dot(&seg[0]) - bound);
        let d1 = sign * (t.dot(&seg[1]) - bound);
        if d0 < 0.0 && d1 < 0.0 {
            return false;
        }
        if d0 < 0.0 || d1 < 0.0 {
            let p = seg[0] + (seg[1] - seg[0]) * (d0 / (d0 - d1));
            if d0 < 0.0 {
                seg[0] = p;
            } else {
                seg[1] = p;
            }
        }
    }
    true
}

/// Minimum translation that moves `object` out of `pusher` (zero when apart).
pub fn push_out(pusher: &[Vector2<f64>], object: &[Vector2<f64>]) -> Vector2<f64> {
    let (sa, ea) = max_separation(pusher, object);
    let (sb, eb) = max_separation(object, pusher);
    if sa.max(sb) >= 0.0 {
        return Vector2::zeros();
    }
    if sa >= sb {
        edge_normal(pusher, ea) * (-sa)
    } else {
        -edge_normal(object, eb) * (-sb)
    }
}

/// Clips a convex polygon to the strip `|t·(p − c)| ≤ half` and returns the
/// smallest `n·(p − c)` over what remains; `None` when the strip misses it.
/// Used to slide a flat pusher along its normal until it touches.
pub fn strip_min_offset(
    poly: &[Vector2<f64>],
    c: &Vector2<f64>,
    n: &Vector2<f64>,
    t: &Vector2<f64>,
    half: f64,
) -> Option<f64> {
    let mut pts: Vec<Vector2<f64>> = poly.to_vec();
    for (sign, bound) in [(1.0, -half), (-1.0, -half)] {
        // keep sign·t·(p − c) ≥ bound
        let f = |p: &Vector2<f64>| sign * t.dot(&(p - c)) - bound;
        let mut next = Vec::new();
        for i in 0..pts.len() {
            let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
            let (fa, fb) = (f(&a), f(&b));
            if fa >= 0.0 {
                next.push(a);
            }
            if (fa >= 0.0) != (fb >= 0.0) {
                next.push(a + (b - a) * (fa / (fa - fb)));
            }
        }
        pts = next;
        if pts.is_empty() {
            return None;
        }
    }
    pts.iter().map(|p| n.dot(&(p - c))).min_by(f64::total_cmp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(cx: f64, cy: f64, h: f64) -> Vec<Vector2<f64>> {
        vec![
            Vector2::new(cx - h, cy - h),
            Vector2::new(cx + h, cy - h),
            Vector2::new(cx + h, cy + h),
            Vector2::new(cx - h, cy + h),
        ]
    }

    #[test]
    fn separated_and_overlapping() {
        let a = square(0.0, 0.0, 1.0);
        let b = square(3.0, 0.0, 1.0);
        assert!((separation(&a, &b) - 1.0).abs() < 1e-12);
        assert!((distance(&a, &b) - 1.0).abs() < 1e-12);
        let c = square(1.5, 0.0, 1.0);
        assert!((separation(&a, &c) + 0.5).abs() < 1e-12);
        assert_eq!(distance(&a, &c), 0.0);
        let d = square(3.0, 3.0, 1.0);
        assert!((distance(&a, &d) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn face_contact_has_two_points() {
        let pusher = square(-1.0, 0.0, 1.0);
        let object = square(1.0, 0.0, 0.5).iter().map(|p| p + Vector2::new(-0.5, 0.0)).collect::<Vec<_>>();
        let (sep, cs) = contact_manifold(&pusher, &object, 1e-6);
        assert!(sep.abs() < 1e-12);
        assert_eq!(cs.len(), 2);
        for c in cs {
            assert!((c.normal - Vector2::x()).norm() < 1e-12);
            assert!(c.point.x.abs() < 1e-12 && c.point.y.abs() <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn corner_contact_has_one_point() {
        let pusher = square(-1.0, 0.0, 1.0);
        let r = Rotation2::new(0.3);
        let object: Vec<_> = square(0.0, 0.0, 0.5).iter().map(|p| r * p).collect();
        let minx = object.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let object: Vec<_> = object.iter().map(|p| p - Vector2::new(minx, 0.0)).collect();
        let (_, cs) = contact_manifold(&pusher, &object, 1e-6);
        assert_eq!(cs.len(), 1);
        assert!(cs[0].point.x.abs() < 1e-12);
    }

    #[test]
    fn push_out_resolves_overlap() {
        let pusher = square(0.0, 0.0, 1.0);
        let object = square(1.8, 0.1, 1.0);
        let mtv = push_out(&pusher, &object);
        assert!((mtv - Vector2::new(0.2, 0.0)).norm() < 1e-12);
        let moved: Vec<_> = object.iter().map(|p| p + mtv).collect();
        assert!(separation(&pusher, &moved).abs() < 1e-12);
    }

    #[test]
    fn strip_offset_for_flat_pusher() {
        let object = square(1.0, 0.0, 0.5);
        let off = strip_min_offset(&object, &Vector2::zeros(), &Vector2::x(), &Vector2::y(), 0.2).unwrap();
        assert!((off - 0.5).abs() < 1e-12);
        assert!(strip_min_offset(&object, &Vector2::new(0.0, 2.0), &Vector2::x(), &Vector2::y(), 0.2).is_none());
    }

    #[test]
    fn integrate_body_circle() {
        // a quarter turn at unit speed on a unit circle
        let p = Planar::new(0.0, 0.0, 0.0).integrate_body(&Vector2::new(1.0, 0.0), 1.0, std::f64::consts::FRAC_PI_2);
        assert!((p.x - 1.0).abs() < 1e-12 && (p.y - 1.0).abs() < 1e-12);
    }
}
