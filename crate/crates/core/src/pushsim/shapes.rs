//! Vertical prisms with convex profiles: analytic surface sampling for point
//! clouds, polygonal footprints for the simulator.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::features::PointCloud;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Cube,
    Cuboid,
    TriangularPrism,
    RoundedPrism,
    Cylinder,
    /// Alias of `Cuboid`.
    Box,
}

impl ShapeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ShapeKind::Cube => "cube",
            ShapeKind::Cuboid => "cuboid",
            ShapeKind::TriangularPrism => "triangular-prism",
            ShapeKind::RoundedPrism => "rounded-prism",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Box => "box",
        }
    }

    fn dim_names(&self) -> &'static [&'static str] {
        match self {
            ShapeKind::Cube => &["side"],
            ShapeKind::Cuboid | ShapeKind::Box => &["length", "width", "height"],
            ShapeKind::TriangularPrism => &["side", "height"],
            ShapeKind::RoundedPrism => &["length", "width", "height", "fillet"],
            ShapeKind::Cylinder => &["radius", "height"],
        }
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "cube" => ShapeKind::Cube,
            "cuboid" => ShapeKind::Cuboid,
            "box" => ShapeKind::Box,
            "triangular-prism" | "triangle" => ShapeKind::TriangularPrism,
            "rounded-prism" | "rounded" => ShapeKind::RoundedPrism,
            "cylinder" => ShapeKind::Cylinder,
            other => return Err(Error::UnknownShape(other.to_string())),
        })
    }
}

/// Shape parameters. Dimensions depend on the kind:
/// cube `[side]`, cuboid/box `[length, width, height]`, triangular prism
/// `[side, height]` (equilateral profile), rounded prism
/// `[length, width, height, fillet]`, cylinder `[radius, height]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub dims: Vec<f64>,
    /// kg; irrelevant to the quasi-static simulator but kept for scene export.
    pub mass: f64,
    /// Surface sampling density, points per square meter.
    pub density: f64,
}

pub const DEFAULT_DENSITY: f64 = 10_000.0;

impl ShapeSpec {
    pub fn new(kind: ShapeKind, dims: Vec<f64>) -> Result<Self> {
        let spec = Self { kind, dims, mass: 0.5, density: DEFAULT_DENSITY };
        spec.validate()?;
        Ok(spec)
    }

    pub fn cube(side: f64) -> Self {
        Self::new(ShapeKind::Cube, vec![side]).expect("valid cube")
    }

    pub fn cuboid(length: f64, width: f64, height: f64) -> Self {
        Self::new(ShapeKind::Cuboid, vec![length, width, height]).expect("valid cuboid")
    }

    pub fn triangular_prism(side: f64, height: f64) -> Self {
        Self::new(ShapeKind::TriangularPrism, vec![side, height]).expect("valid prism")
    }

    pub fn rounded_prism(length: f64, width: f64, height: f64, fillet: f64) -> Self {
        Self::new(ShapeKind::RoundedPrism, vec![length, width, height, fillet]).expect("valid rounded prism")
    }

    pub fn cylinder(radius: f64, height: f64) -> Self {
        Self::new(ShapeKind::Cylinder, vec![radius, height]).expect("valid cylinder")
    }

    pub fn with_density(mut self, density: f64) -> Self {
        self.density = density;
        self
    }

    pub fn with_mass(mut self, mass: f64) -> Self {
        self.mass = mass;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let names = self.kind.dim_names();
        if self.dims.len() != names.len() {
            return Err(Error::Config(format!(
                "{} needs {} dimensions ({}), got {}",
                self.kind.as_str(),
                names.len(),
                names.join(", "),
                self.dims.len()
            )));
        }
        if self.dims.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::Config(format!("{}: dimensions must be positive", self.kind.as_str())));
        }
        if !(self.mass > 0.0) || !(self.density > 0.0) {
            return Err(Error::Config("mass and sampling density must be positive".into()));
        }
        if self.kind == ShapeKind::RoundedPrism && self.dims[3] >= 0.5 * self.dims[0].min(self.dims[1]) {
            return Err(Error::Config("fillet radius must be below half the smaller side".into()));
        }
        Ok(())
    }

    pub fn height(&self) -> f64 {
        match self.kind {
            ShapeKind::Cube => self.dims[0],
            ShapeKind::Cuboid | ShapeKind::Box | ShapeKind::RoundedPrism => self.dims[2],
            ShapeKind::TriangularPrism | ShapeKind::Cylinder => self.dims[1],
        }
    }

    /// Short identifier, e.g. `cube-0.2`.
    pub fn label(&self) -> String {
        let dims: Vec<String> = self.dims.iter().map(|d| format!("{d}")).collect();
        format!("{}-{}", self.kind.as_str(), dims.join("x"))
    }

    /// Profile boundary as line and arc segments, counter-clockwise, centred
    /// on the profile centroid.
    pub fn profile(&self) -> Vec<ProfileSegment> {
        let line = |a: (f64, f64), b: (f64, f64)| ProfileSegment::Line {
            a: Vector2::new(a.0, a.1),
            b: Vector2::new(b.0, b.1),
        };
        match self.kind {
            ShapeKind::Cube | ShapeKind::Cuboid | ShapeKind::Box => {
                let (hx, hy) = match self.kind {
                    ShapeKind::Cube => (self.dims[0] / 2.0, self.dims[0] / 2.0),
                    _ => (self.dims[0] / 2.0, self.dims[1] / 2.0),
                };
                vec![
                    line((-hx, -hy), (hx, -hy)),
                    line((hx, -hy), (hx, hy)),
                    line((hx, hy), (-hx, hy)),
                    line((-hx, hy), (-hx, -hy)),
                ]
            }
            ShapeKind::TriangularPrism => {
                let circ = self.dims[0] / 3f64.sqrt();
                let v: Vec<(f64, f64)> =
                    (0..3).map(|i| TAU * i as f64 / 3.0).map(|a| (circ * a.cos(), circ * a.sin())).collect();
                vec![line(v[0], v[1]), line(v[1], v[2]), line(v[2], v[0])]
            }
            ShapeKind::RoundedPrism => {
                let (hx, hy, f) = (self.dims[0] / 2.0, self.dims[1] / 2.0, self.dims[3]);
                let arc = |cx: f64, cy: f64, a0: f64| ProfileSegment::Arc {
                    center: Vector2::new(cx, cy),
                    radius: f,
                    start: a0,
                    sweep: FRAC_PI_2,
                };
                vec![
                    line((-hx + f, -hy), (hx - f, -hy)),
                    arc(hx - f, -hy + f, -FRAC_PI_2),
                    line((hx, -hy + f), (hx, hy - f)),
                    arc(hx - f, hy - f, 0.0),
                    line((hx - f, hy), (-hx + f, hy)),
                    arc(-hx + f, hy - f, FRAC_PI_2),
                    line((-hx, hy - f), (-hx, -hy + f)),
                    arc(-hx + f, -hy + f, PI),
                ]
            }
            ShapeKind::Cylinder => vec![ProfileSegment::Arc {
                center: Vector2::zeros(),
                radius: self.dims[0],
                start: 0.0,
                sweep: TAU,
            }],
        }
    }

    /// Convex footprint polygon (CCW); arcs become `arc_segments` chords per
    /// full turn.
    pub fn footprint(&self, arc_segments: usize) -> Vec<Vector2<f64>> {
        let mut pts = Vec::new();
        for seg in self.profile() {
            match seg {
                ProfileSegment::Line { a, .. } => pts.push(a),
                ProfileSegment::Arc { center, radius, start, sweep } => {
                    // each segment contributes its start point only
                    let n = ((arc_segments as f64) * sweep / TAU).ceil().max(1.0) as usize;
                    for i in 0..n {
                        let a = start + sweep * i as f64 / n as f64;
                        pts.push(center + radius * Vector2::new(a.cos(), a.sin()));
                    }
                }
            }
        }
        pts
    }

    fn cap_area(&self) -> f64 {
        match self.kind {
            ShapeKind::Cube => self.dims[0] * self.dims[0],
            ShapeKind::Cuboid | ShapeKind::Box => self.dims[0] * self.dims[1],
            ShapeKind::TriangularPrism => 3f64.sqrt() / 4.0 * self.dims[0] * self.dims[0],
            ShapeKind::RoundedPrism => {
                let f = self.dims[3];
                self.dims[0] * self.dims[1] - (4.0 - PI) * f * f
            }
            ShapeKind::Cylinder => PI * self.dims[0] * self.dims[0],
        }
    }

    pub fn surface_area(&self) -> f64 {
        let perimeter: f64 = self.profile().iter().map(ProfileSegment::length).sum();
        perimeter * self.height() + 2.0 * self.cap_area()
    }

    fn inside_profile(&self, p: &Vector2<f64>) -> bool {
        match self.kind {
            ShapeKind::Cylinder => p.norm() <= self.dims[0],
            ShapeKind::RoundedPrism => {
                let (hx, hy, f) = (self.dims[0] / 2.0, self.dims[1] / 2.0, self.dims[3]);
                let q = Vector2::new((p.x.abs() - (hx - f)).max(0.0), (p.y.abs() - (hy - f)).max(0.0));
                p.x.abs() <= hx && p.y.abs() <= hy && q.norm() <= f
            }
            _ => {
                let poly = self.footprint(4);
                point_in_convex(&poly, p)
            }
        }
    }

    /// Samples the surface uniformly at `density` points/m², in the object
    /// frame (origin at the centroid, z up). Every point carries its analytic
    /// outward normal and principal curvatures.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ShapeSample> {
        self.validate()?;
        let h = self.height();
        let profile = self.profile();
        let lengths: Vec<f64> = profile.iter().map(ProfileSegment::length).collect();
        let perimeter: f64 = lengths.iter().sum();
        let n_side = (self.density * perimeter * h).round() as usize;
        let n_cap = (self.density * self.cap_area()).round() as usize;
        let mut out = ShapeSample::default();
        for _ in 0..n_side {
            let mut s = rng.random::<f64>() * perimeter;
            let mut idx = 0;
            while idx + 1 < profile.len() && s > lengths[idx] {
                s -= lengths[idx];
                idx += 1;
            }
            let t = (s / lengths[idx]).clamp(0.0, 1.0);
            let (xy, n, k) = profile[idx].point(t);
            let z = (rng.random::<f64>() - 0.5) * h;
            out.push(Vector3::new(xy.x, xy.y, z), Vector3::new(n.x, n.y, 0.0), Vector2::new(k, 0.0));
        }
        let (lo, hi) = bounding_box(&self.footprint(64));
        for sign in [1.0, -1.0] {
            let mut placed = 0;
            while placed < n_cap {
                let p = Vector2::new(
                    lo.x + rng.random::<f64>() * (hi.x - lo.x),
                    lo.y + rng.random::<f64>() * (hi.y - lo.y),
                );
                if self.inside_profile(&p) {
                    out.push(Vector3::new(p.x, p.y, sign * h / 2.0), Vector3::new(0.0, 0.0, sign), Vector2::zeros());
                    placed += 1;
                }
            }
        }
        Ok(out)
    }

    /// One shape per `shape = kind dims...` line; `density` and `mass` apply
    /// to every shape.
    pub fn parse_config(text: &str) -> Result<Vec<ShapeSpec>> {
        let kv = KeyValues::parse(text)?;
        kv.check_known(&["shape", "density", "mass"])?;
        let density = kv.parse_value::<f64>("density")?.unwrap_or(DEFAULT_DENSITY);
        let mass = kv.parse_value::<f64>("mass")?.unwrap_or(0.5);
        let shapes = kv
            .get_all("shape")
            .into_iter()
            .map(|s| s.parse::<ShapeSpec>().map(|sp| sp.with_density(density).with_mass(mass)))
            .collect::<Result<Vec<_>>>()?;
        for s in &shapes {
            s.validate()?;
        }
        Ok(shapes)
    }
}

impl FromStr for ShapeSpec {
    type Err = Error;

    /// `kind dim dim ...`, whitespace separated, e.g. `cylinder 0.1 0.2`.
    fn from_str(s: &str) -> Result<Self> {
        let mut toks = s.split_whitespace();
        let kind: ShapeKind = toks.next().ok_or_else(|| Error::UnknownShape(String::new()))?.parse()?;
        let dims = toks
            .map(|t| t.parse::<f64>().map_err(|e| Error::Config(format!("shape dimension '{t}': {e}"))))
            .collect::<Result<Vec<_>>>()?;
        ShapeSpec::new(kind, dims)
    }
}

impl fmt::Display for ShapeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind.as_str())?;
        for d in &self.dims {
            write!(f, " {d}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProfileSegment {
    Line { a: Vector2<f64>, b: Vector2<f64> },
    Arc { center: Vector2<f64>, radius: f64, start: f64, sweep: f64 },
}

impl ProfileSegment {
    pub fn length(&self) -> f64 {
        match self {
            ProfileSegment::Line { a, b } => (b - a).norm(),
            ProfileSegment::Arc { radius, sweep, .. } => radius * sweep,
        }
    }

    /// Point, outward normal and curvature at parameter `t ∈ [0, 1]`.
    fn point(&self, t: f64) -> (Vector2<f64>, Vector2<f64>, f64) {
        match self {
            ProfileSegment::Line { a, b } => {
                let d = (b - a).normalize();
                (a + (b - a) * t, Vector2::new(d.y, -d.x), 0.0)
            }
            ProfileSegment::Arc { center, radius, start, sweep } => {
                let ang = start + sweep * t;
                let n = Vector2::new(ang.cos(), ang.sin());
                (center + n * *radius, n, 1.0 / radius)
            }
        }
    }
}

/// Sampled surface in the object frame with per-point analytic normals and
/// principal curvatures `(r1, r2)`.
#[derive(Clone, Debug, Default)]
pub struct ShapeSample {
    pub cloud: PointCloud,
    pub normals: Vec<Vector3<f64>>,
    pub curvatures: Vec<Vector2<f64>>,
}

impl ShapeSample {
    fn push(&mut self, p: Vector3<f64>, n: Vector3<f64>, r: Vector2<f64>) {
        self.cloud.points.push(p);
        self.normals.push(n);
        self.curvatures.push(r);
    }

    /// Keeps only points facing `origin` (single depth-camera view).
    pub fn cull_to_view(&self, origin: &Vector3<f64>) -> ShapeSample {
        let mut out = ShapeSample::default();
        for i in 0..self.cloud.len() {
            let p = self.cloud.points[i];
            if self.normals[i].dot(&(origin - p)) > 0.0 {
                out.push(p, self.normals[i], self.curvatures[i]);
            }
        }
        out.cloud.view_origin = Some(*origin);
        out
    }
}

pub fn bounding_box(poly: &[Vector2<f64>]) -> (Vector2<f64>, Vector2<f64>) {
    let mut lo = Vector2::repeat(f64::INFINITY);
    let mut hi = Vector2::repeat(f64::NEG_INFINITY);
    for p in poly {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

pub fn point_in_convex(poly: &[Vector2<f64>], p: &Vector2<f64>) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let e = b - a;
        e.x * (p.y - a.y) - e.y * (p.x - a.x) >= -1e-12
    })
}

/// Mean distance from the origin over the polygon's area (uniform pressure),
/// the torque radius of an ellipsoidal limit surface.
pub fn mean_radius(poly: &[Vector2<f64>]) -> f64 {
    // exact per-triangle quadrature is awkward for |r|; a fine grid is plenty
    let (lo, hi) = bounding_box(poly);
    let n = 400;
    let (dx, dy) = ((hi.x - lo.x) / n as f64, (hi.y - lo.y) / n as f64);
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..n {
        for j in 0..n {
            let p = Vector2::new(lo.x + (i as f64 + 0.5) * dx, lo.y + (j as f64 + 0.5) * dy);
            if point_in_convex(poly, &p) {
                sum += p.norm();
                count += 1;
            }
        }
    }
    sum / count.max(1) as f64
}
