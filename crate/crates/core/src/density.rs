//! Kernel density estimation over poses, surface descriptors and motions.
//!
//! Every density is a weighted set of particles with one kernel per particle.
//! Kernels are products of an isotropic Gaussian on positions (and on surface
//! descriptors) and an antipodally symmetric von Mises-Fisher pair on unit
//! quaternions. All evaluation happens in log space so that products of many
//! kernels stay representable.

use std::f64::consts::{LN_2, PI};

use nalgebra::{Quaternion, UnitQuaternion, Vector3, Vector4};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SurfaceFeature;
use crate::geom::{canonical, Pose, RigidMotion};

/// Kernel bandwidths.
///
/// `sigma_q` and `motion_q` are von Mises-Fisher concentrations, not angles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths {
    /// Position standard deviation, meters.
    pub sigma_p: f64,
    /// Orientation concentration.
    pub sigma_q: f64,
    /// Curvature-descriptor standard deviation, 1/m.
    pub sigma_r: f64,
    /// Motion translation standard deviation, meters.
    pub motion_p: f64,
    /// Motion rotation concentration.
    pub motion_q: f64,
}

impl Default for Bandwidths {
    fn default() -> Self {
        Self { sigma_p: 0.01, sigma_q: 100.0, sigma_r: 10.0, motion_p: 0.02, motion_q: 200.0 }
    }
}

impl Bandwidths {
    pub fn validate(&self) -> Result<()> {
        for v in [self.sigma_p, self.sigma_q, self.sigma_r, self.motion_p, self.motion_q] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::NonPositiveBandwidth(v));
            }
        }
        Ok(())
    }

    /// Scales the contact (feature) and motion bandwidths. Concentrations are
    /// divided so that a factor above one always widens the kernel.
    pub fn scaled(&self, contact: f64, motion: f64) -> Self {
        Self {
            sigma_p: self.sigma_p * contact,
            sigma_q: self.sigma_q / (contact * contact),
            sigma_r: self.sigma_r * contact,
            motion_p: self.motion_p * motion,
            motion_q: self.motion_q / (motion * motion),
        }
    }
}

/// `ln Σ exp(x_i)`, `-inf` for an empty input. Single pass, no allocation.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut m = f64::NEG_INFINITY;
    let mut s = 0.0;
    for x in values {
        if x.is_nan() {
            return f64::NAN;
        }
        if x <= m {
            s += (x - m).exp();
        } else if x == f64::INFINITY {
            return x;
        } else {
            s = s * (m - x).exp() + 1.0;
            m = x;
        }
    }
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + s.ln()
}

/// Log of an isotropic n-variate Gaussian with per-axis standard deviation `sigma`.
pub fn log_gaussian(x: &[f64], mu: &[f64], sigma: f64) -> f64 {
    debug_assert_eq!(x.len(), mu.len());
    let d2: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
    let n = x.len() as f64;
    -0.5 * n * (2.0 * PI * sigma * sigma).ln() - d2 / (2.0 * sigma * sigma)
}

pub fn eval_gaussian(x: &[f64], mu: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::NonPositiveBandwidth(sigma));
    }
    Ok(log_gaussian(x, mu, sigma).exp())
}

/// `ln I₁(x)`, the modified Bessel function of the first kind of order one.
///
/// Power series below 30, Hankel asymptotic expansion above.
pub fn log_bessel_i1(x: f64) -> f64 {
    assert!(x > 0.0, "log_bessel_i1 needs a positive argument");
    if x < 30.0 {
        let h = 0.5 * x;
        let h2 = h * h;
        let mut term = h;
        let mut sum = h;
        for k in 1..200 {
            let k = k as f64;
            term *= h2 / (k * (k + 1.0));
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
        }
        sum.ln()
    } else {
        // I_ν(x) ~ eˣ/√(2πx) Σ (−1)ᵏ a_k(ν)/xᵏ with μ = 4ν² = 4
        let mut coeff = 1.0;
        let mut sum = 1.0;
        for k in 1..30 {
            let kf = k as f64;
            let odd = 2.0 * kf - 1.0;
            coeff *= -(4.0 - odd * odd) / (kf * 8.0 * x);
            let next = sum + coeff;
            if coeff.abs() < 1e-17 * next.abs() {
                sum = next;
                break;
            }
            sum = next;
        }
        x - 0.5 * (2.0 * PI * x).ln() + sum.ln()
    }
}

/// `ln C(κ)` for the von Mises-Fisher density on S³,
/// `C(κ) = κ / (4π² I₁(κ))`, with respect to the surface measure (area 2π²).
pub fn vmf_log_normalizer(kappa: f64) -> f64 {
    kappa.ln() - (4.0 * PI * PI).ln() - log_bessel_i1(kappa)
}

/// Log of the antipodal vMF pair `C(κ)·(e^{κ d} + e^{−κ d})/2` with `d = μ·q`.
pub fn log_theta(q: &UnitQuaternion<f64>, mu: &UnitQuaternion<f64>, kappa: f64) -> f64 {
    let d = q.coords.dot(&mu.coords).abs().min(1.0);
    vmf_log_normalizer(kappa) + kappa * d + (-2.0 * kappa * d).exp().ln_1p() - LN_2
}

fn check_unit(q: &Quaternion<f64>) -> Result<UnitQuaternion<f64>> {
    let n = q.norm();
    if (n - 1.0).abs() > 1e-6 || !n.is_finite() {
        return Err(Error::NonUnitQuaternion(n));
    }
    Ok(UnitQuaternion::new_unchecked(*q))
}

pub fn eval_theta(q: &Quaternion<f64>, mu: &Quaternion<f64>, kappa: f64) -> Result<f64> {
    if !(kappa > 0.0) {
        return Err(Error::NonPositiveBandwidth(kappa));
    }
    let (q, mu) = (check_unit(q)?, check_unit(mu)?);
    Ok(log_theta(&q, &mu, kappa).exp())
}

/// Pose kernel with its normalizing constants precomputed, for hot loops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseKernel {
    inv_two_var: f64,
    kappa: f64,
    constant: f64,
}

impl PoseKernel {
    pub fn new(sigma_p: f64, kappa: f64) -> Self {
        Self {
            inv_two_var: 1.0 / (2.0 * sigma_p * sigma_p),
            kappa,
            constant: -1.5 * (2.0 * PI * sigma_p * sigma_p).ln() + vmf_log_normalizer(kappa) - LN_2,
        }
    }

    /// Same value as [`log_pose_kernel`].
    #[inline]
    pub fn log(&self, x: &Pose, mu: &Pose) -> f64 {
        let d2 = (x.p() - mu.p()).norm_squared();
        let d = x.q().coords.dot(&mu.q().coords).abs().min(1.0);
        self.constant - d2 * self.inv_two_var + self.kappa * d + (-2.0 * self.kappa * d).exp().ln_1p()
    }
}

/// Log kernel on a pose: N₃ on position times Θ on orientation.
pub fn log_pose_kernel(x: &Pose, mu: &Pose, sigma_p: f64, kappa: f64) -> f64 {
    log_gaussian(x.p().as_slice(), mu.p().as_slice(), sigma_p) + log_theta(x.q(), mu.q(), kappa)
}

pub fn log_feature_kernel(x: &SurfaceFeature, mu: &SurfaceFeature, bw: &Bandwidths) -> f64 {
    log_pose_kernel(&x.pose, &mu.pose, bw.sigma_p, bw.sigma_q)
        + log_gaussian(x.r.as_slice(), mu.r.as_slice(), bw.sigma_r)
}

/// `K(x | μ, σ) = N₃(p) Θ(q) N₂(r)`.
pub fn eval_feature_kernel(x: &SurfaceFeature, mu: &SurfaceFeature, bw: &Bandwidths) -> Result<f64> {
    bw.validate()?;
    Ok(log_feature_kernel(x, mu, bw).exp())
}

pub fn log_motion_kernel(m: &RigidMotion, mu: &RigidMotion, bw: &Bandwidths) -> f64 {
    log_gaussian(m.p().as_slice(), mu.p().as_slice(), bw.motion_p) + log_theta(m.q(), mu.q(), bw.motion_q)
}

/// `M(m | μ, σ) = N₃(p) Θ(q)` with the motion bandwidths.
pub fn eval_motion_kernel(m: &RigidMotion, mu: &RigidMotion, bw: &Bandwidths) -> Result<f64> {
    bw.validate()?;
    Ok(log_motion_kernel(m, mu, bw).exp())
}

/// Draws from vMF(identity, κ) on S³ (Wood's rejection sampler), returned as
/// a quaternion with the scalar part on the mean axis.
pub fn sample_vmf_identity<R: Rng + ?Sized>(kappa: f64, rng: &mut R) -> UnitQuaternion<f64> {
    let dim_m1 = 3.0;
    // b written in the cancellation-free form
    let b = dim_m1 / (2.0 * kappa + (4.0 * kappa * kappa + dim_m1 * dim_m1).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + dim_m1 * (1.0 - x0 * x0).ln();
    let beta = Beta::new(1.5, 1.5).expect("valid beta parameters");
    let w = loop {
        let z: f64 = beta.sample(rng);
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u: f64 = rng.random::<f64>();
        if kappa * w + dim_m1 * (1.0 - x0 * w).ln() - c >= u.ln() {
            break w;
        }
    };
    let v = sample_unit_vector(rng);
    let s = (1.0 - w * w).max(0.0).sqrt();
    UnitQuaternion::new_normalize(Quaternion::from(Vector4::new(s * v.x, s * v.y, s * v.z, w)))
}

/// Draws from the antipodal vMF pair centred at `mu`.
pub fn sample_theta<R: Rng + ?Sized>(mu: &UnitQuaternion<f64>, kappa: f64, rng: &mut R) -> UnitQuaternion<f64> {
    // μ⊗δ has density ∝ exp(κ μ·(μ⊗δ)) = exp(κ δ_w); the sign of the pair is
    // absorbed by canonicalization
    canonical(mu * sample_vmf_identity(kappa, rng))
}

pub fn sample_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = sample_gaussian3(1.0, rng);
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

pub fn sample_gaussian3<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> Vector3<f64> {
    Vector3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    ) * sigma
}

pub fn perturb_pose<R: Rng + ?Sized>(mu: &Pose, sigma_p: f64, kappa: f64, rng: &mut R) -> Pose {
    Pose::new(mu.p() + sample_gaussian3(sigma_p, rng), sample_theta(mu.q(), kappa, rng))
}

/// Which space a density lives on; stored in serialized documents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityKind {
    /// Surface features or contact relations: SE(3) × R².
    Feature,
    /// Rigid motions: SE(3).
    Motion,
    /// Contact condition paired with a motion: SE(3) × R² × SE(3).
    Joint,
    /// Pairs of world poses (link pose, feature frame) from a query density.
    PosePair,
}

impl DensityKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DensityKind::Feature => "feature",
            DensityKind::Motion => "motion",
            DensityKind::Joint => "joint",
            DensityKind::PosePair => "pose-pair",
        }
    }
}

/// A point that can carry a kernel.
pub trait KernelPoint: Clone + Serialize + DeserializeOwned {
    const KIND: DensityKind;
    fn log_kernel(x: &Self, mu: &Self, bw: &Bandwidths) -> f64;
    fn perturb<R: Rng + ?Sized>(mu: &Self, bw: &Bandwidths, rng: &mut R) -> Self;
}

impl KernelPoint for SurfaceFeature {
    const KIND: DensityKind = DensityKind::Feature;

    fn log_kernel(x: &Self, mu: &Self, bw: &Bandwidths) -> f64 {
        log_feature_kernel(x, mu, bw)
    }

    fn perturb<R: Rng + ?Sized>(mu: &Self, bw: &Bandwidths, rng: &mut R) -> Self {
        let dr = sample_gaussian3(bw.sigma_r, rng);
        SurfaceFeature {
            pose: perturb_pose(&mu.pose, bw.sigma_p, bw.sigma_q, rng),
            r: mu.r + dr.xy(),
        }
    }
}

impl KernelPoint for RigidMotion {
    const KIND: DensityKind = DensityKind::Motion;

    fn log_kernel(x: &Self, mu: &Self, bw: &Bandwidths) -> f64 {
        log_motion_kernel(x, mu, bw)
    }

    fn perturb<R: Rng + ?Sized>(mu: &Self, bw: &Bandwidths, rng: &mut R) -> Self {
        RigidMotion::from_pose(&perturb_pose(&mu.as_pose(), bw.motion_p, bw.motion_q, rng))
    }
}

/// Weighted particle set with a shared kernel bandwidth.
///
/// Weights are normalized on construction and never empty.
#[derive(Clone, Debug)]
pub struct ParticleDensity<P> {
    particles: Vec<P>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
    bandwidths: Bandwidths,
}

#[derive(Serialize, Deserialize)]
struct WeightedParticle<P> {
    weight: f64,
    point: P,
}

#[derive(Serialize, Deserialize)]
struct DensityDocument<P> {
    format: String,
    version: u32,
    kind: DensityKind,
    bandwidths: Bandwidths,
    particles: Vec<WeightedParticle<P>>,
}

pub const DENSITY_FORMAT: &str = "pushxfer-density";
pub const DENSITY_VERSION: u32 = 1;

impl<P: KernelPoint> ParticleDensity<P> {
    pub fn new(particles: Vec<P>, weights: Vec<f64>, bandwidths: Bandwidths) -> Result<Self> {
        bandwidths.validate()?;
        if particles.is_empty() {
            return Err(Error::EmptyDensity);
        }
        if particles.len() != weights.len() {
            return Err(Error::InvalidWeights(format!(
                "{} particles but {} weights",
                particles.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidWeights("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidWeights("weights sum to zero".into()));
        }
        // weights that already sum to one (e.g. read back from disk) are kept
        // bit-exact
        let weights: Vec<f64> =
            if (total - 1.0).abs() <= 1e-12 { weights } else { weights.iter().map(|w| w / total).collect() };
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(Self { particles, weights, cumulative, bandwidths })
    }

    pub fn uniform(particles: Vec<P>, bandwidths: Bandwidths) -> Result<Self> {
        let n = particles.len();
        Self::new(particles, vec![1.0; n], bandwidths)
    }

    /// Builds from unnormalized log weights; robust to tiny likelihoods.
    pub fn from_log_weights(particles: Vec<P>, log_weights: &[f64], bandwidths: Bandwidths) -> Result<Self> {
        let m = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::InvalidWeights("all log weights are -inf".into()));
        }
        let w = log_weights.iter().map(|l| (l - m).exp()).collect();
        Self::new(particles, w, bandwidths)
    }

    pub fn particles(&self) -> &[P] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bandwidths(&self) -> &Bandwidths {
        &self.bandwidths
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&P, f64)> {
        self.particles.iter().zip(self.weights.iter().copied())
    }

    /// `P(x) = Σ w_j K(x | x_j, σ)`.
    pub fn eval(&self, x: &P) -> f64 {
        self.iter().map(|(mu, w)| w * P::log_kernel(x, mu, &self.bandwidths).exp()).sum()
    }

    pub fn log_eval(&self, x: &P) -> f64 {
        log_sum_exp(self.iter().map(|(mu, w)| w.ln() + P::log_kernel(x, mu, &self.bandwidths)))
    }

    /// Index of a particle drawn with probability equal to its weight.
    pub fn select_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>();
        let i = self.cumulative.partition_point(|c| *c <= u);
        i.min(self.particles.len() - 1)
    }

    /// Weighted particle draw followed by a kernel perturbation.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> P {
        let i = self.select_index(rng);
        P::perturb(&self.particles[i], &self.bandwidths, rng)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = DensityDocument {
            format: DENSITY_FORMAT.to_string(),
            version: DENSITY_VERSION,
            kind: P::KIND,
            bandwidths: self.bandwidths,
            particles: self
                .iter()
                .map(|(p, w)| WeightedParticle { weight: w, point: p.clone() })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        Self::from_value(value)
    }

    pub fn to_value(&self) -> Result<serde_json::Value> {
        Ok(serde_json::from_str(&self.to_json()?)?)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        let found = value
            .get("kind")
            .and_then(|k| k.as_str())
            .ok_or_else(|| Error::Parse("density document has no kind".into()))?;
        if found != P::KIND.as_str() {
            return Err(Error::KindMismatch { expected: P::KIND.as_str().into(), found: found.into() });
        }
        let doc: DensityDocument<P> = serde_json::from_value(value)?;
        if doc.format != DENSITY_FORMAT || doc.version != DENSITY_VERSION {
            return Err(Error::Parse(format!("unsupported density format {} v{}", doc.format, doc.version)));
        }
        let (points, weights) = doc.particles.into_iter().map(|p| (p.point, p.weight)).unzip();
        Self::new(points, weights, doc.bandwidths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::yaw_rotation;
    use nalgebra::Vector2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn feature(p: [f64; 3], yaw: f64, r: [f64; 2]) -> SurfaceFeature {
        SurfaceFeature { pose: Pose::new(Vector3::from(p), yaw_rotation(yaw)), r: Vector2::from(r) }
    }

    fn random_feature(rng: &mut ChaCha8Rng) -> SurfaceFeature {
        let q = UnitQuaternion::new_normalize(Quaternion::from(Vector4::new(
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
        )));
        SurfaceFeature {
            pose: Pose::new(sample_gaussian3(0.02, rng), q),
            r: Vector2::new(rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0),
        }
    }

    #[test]
    fn gaussian_examples() {
        let v = eval_gaussian(&[0.0], &[0.0], 1.0).unwrap();
        assert!((v - 0.3989422804014327).abs() < 1e-15);
        let peak = eval_gaussian(&[1.0, 2.0], &[1.0, 2.0], 0.3).unwrap();
        let off = eval_gaussian(&[1.3, 2.0], &[1.0, 2.0], 0.3).unwrap();
        assert!((off / peak - (-0.5f64).exp()).abs() < 1e-12);
        let a = eval_gaussian(&[0.1, 0.4, -0.2], &[0.0, 0.3, 0.0], 0.5).unwrap();
        let b = eval_gaussian(&[0.0, 0.3, 0.0], &[0.1, 0.4, -0.2], 0.5).unwrap();
        assert_eq!(a, b);
        assert!(matches!(eval_gaussian(&[0.0], &[0.0], 0.0), Err(Error::NonPositiveBandwidth(_))));
    }

    #[test]
    fn bessel_matches_reference_values() {
        // ln I₁(x) reference values from scipy.special.i1e
        let refs = [
            (0.5, -1.3552054470253343),
            (1.0, -0.570647987490831),
            (5.0, 3.1919420305456754),
            (10.0, 7.890203834104212),
            (50.0, 47.11747361658713),
            (100.0, 96.77470745759145),
            (200.0, 196.4300230753805),
            (700.0, 695.8049852018556),
            (2000.0, 1995.2804226901287),
        ];
        for (x, want) in refs {
            let got = log_bessel_i1(x);
            assert!((got - want).abs() < 1e-11 * want.abs().max(1.0), "x={x}: {got} vs {want}");
        }
        // continuity across the series/asymptotic switch
        assert!((log_bessel_i1(29.999999) - log_bessel_i1(30.000001)).abs() < 1e-5);
    }

    #[test]
    fn theta_antipodal_and_peak() {
        let mu = Quaternion::new(0.5, 0.5, -0.5, 0.5);
        let q = UnitQuaternion::new_normalize(Quaternion::new(0.2, 0.7, 0.1, -0.3)).into_inner();
        let a = eval_theta(&q, &mu, 7.0).unwrap();
        let b = eval_theta(&-q, &mu, 7.0).unwrap();
        assert!((a - b).abs() < 1e-15 * a);
        let peak = eval_theta(&mu, &mu, 7.0).unwrap();
        assert!((eval_theta(&-mu, &mu, 7.0).unwrap() - peak).abs() < 1e-12 * peak);
        assert!(a < peak);
        assert!(matches!(
            eval_theta(&Quaternion::new(2.0, 0.0, 0.0, 0.0), &mu, 1.0),
            Err(Error::NonUnitQuaternion(_))
        ));
    }

    #[test]
    fn theta_monte_carlo_normalization() {
        // uniform S³ has density 1/(2π²); E[Θ]·2π² must be 1
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mu = UnitQuaternion::new_normalize(Quaternion::new(0.3, -0.2, 0.9, 0.1));
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let g = Vector4::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            );
            let q = UnitQuaternion::new_normalize(Quaternion::from(g));
            acc += log_theta(&q, &mu, 5.0).exp();
        }
        let integral = acc / n as f64 * 2.0 * PI * PI;
        assert!((integral - 1.0).abs() < 0.02, "integral {integral}");
    }

    #[test]
    fn feature_kernel_factorizes() {
        let bw = Bandwidths::default();
        let mu = feature([0.1, 0.0, 0.05], 0.3, [2.0, 1.0]);
        let x = feature([0.11, 0.005, 0.05], 0.35, [3.0, 0.0]);
        let k = eval_feature_kernel(&x, &mu, &bw).unwrap();
        let product = eval_gaussian(x.pose.p().as_slice(), mu.pose.p().as_slice(), bw.sigma_p).unwrap()
            * eval_theta(x.pose.q(), mu.pose.q(), bw.sigma_q).unwrap()
            * eval_gaussian(x.r.as_slice(), mu.r.as_slice(), bw.sigma_r).unwrap();
        assert!((k - product).abs() <= 1e-12 * product);
        let peak = eval_feature_kernel(&mu, &mu, &bw).unwrap();
        assert!(k < peak);
        let mut flipped = x;
        flipped.pose = Pose::new(*x.pose.p(), UnitQuaternion::new_unchecked(-x.pose.q().into_inner()));
        assert!((eval_feature_kernel(&flipped, &mu, &bw).unwrap() - k).abs() <= 1e-12 * k);
    }

    #[test]
    fn motion_kernel_translation_ratio() {
        let bw = Bandwidths::default();
        let mu = RigidMotion::new(Vector3::new(0.3, 0.05, 0.0), yaw_rotation(0.2));
        let d = 0.013;
        let m = RigidMotion::new(mu.p() + Vector3::new(0.0, d, 0.0), *mu.q());
        let ratio = eval_motion_kernel(&m, &mu, &bw).unwrap() / eval_motion_kernel(&mu, &mu, &bw).unwrap();
        let want = (-d * d / (2.0 * bw.motion_p * bw.motion_p)).exp();
        assert!((ratio - want).abs() < 1e-12);
        let anti = RigidMotion::new(*mu.p(), UnitQuaternion::new_unchecked(-mu.q().into_inner()));
        assert_eq!(anti, mu);
    }

    #[test]
    fn density_matches_brute_force_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bw = Bandwidths { sigma_p: 0.02, sigma_q: 20.0, sigma_r: 4.0, ..Default::default() };
        let particles: Vec<_> = (0..100).map(|_| random_feature(&mut rng)).collect();
        let raw: Vec<f64> = (0..100).map(|_| rng.random::<f64>() + 0.01).collect();
        let density = ParticleDensity::new(particles.clone(), raw.clone(), bw).unwrap();
        let total: f64 = raw.iter().sum();
        for _ in 0..20 {
            let x = random_feature(&mut rng);
            let mut brute = 0.0;
            for (p, w) in particles.iter().zip(&raw) {
                let n3 = eval_gaussian(x.pose.p().as_slice(), p.pose.p().as_slice(), bw.sigma_p).unwrap();
                let th = eval_theta(x.pose.q(), p.pose.q(), bw.sigma_q).unwrap();
                let n2 = eval_gaussian(x.r.as_slice(), p.r.as_slice(), bw.sigma_r).unwrap();
                brute += w / total * n3 * th * n2;
            }
            let got = density.eval(&x);
            assert!((got - brute).abs() <= 1e-12 * brute.max(1e-300), "{got} vs {brute}");
            assert!((density.log_eval(&x) - brute.ln()).abs() < 1e-9);
        }
        let s: f64 = density.weights().iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn density_single_and_duplicate_particles() {
        let bw = Bandwidths::default();
        let f = feature([0.0, 0.1, 0.2], 1.0, [1.0, 0.0]);
        let one = ParticleDensity::uniform(vec![f], bw).unwrap();
        let peak = eval_feature_kernel(&f, &f, &bw).unwrap();
        assert!((one.eval(&f) - peak).abs() < 1e-12 * peak);
        let two = ParticleDensity::uniform(vec![f, f], bw).unwrap();
        let x = feature([0.005, 0.1, 0.2], 1.1, [1.5, 0.0]);
        assert!((one.eval(&x) - two.eval(&x)).abs() < 1e-12 * one.eval(&x));
    }

    #[test]
    fn density_linear_in_weights() {
        let bw = Bandwidths::default();
        let a = feature([0.0, 0.0, 0.0], 0.0, [0.0, 0.0]);
        let b = feature([0.01, 0.0, 0.0], 0.1, [1.0, 0.0]);
        let x = feature([0.005, 0.0, 0.0], 0.05, [0.5, 0.0]);
        let da = ParticleDensity::uniform(vec![a], bw).unwrap();
        let db = ParticleDensity::uniform(vec![b], bw).unwrap();
        let alpha = 0.3;
        let mix = ParticleDensity::new(vec![a, b], vec![alpha, 1.0 - alpha], bw).unwrap();
        let want = alpha * da.eval(&x) + (1.0 - alpha) * db.eval(&x);
        assert!((mix.eval(&x) - want).abs() < 1e-12 * want);
    }

    #[test]
    fn sampling_frequencies_and_determinism() {
        let bw = Bandwidths::default();
        let parts: Vec<_> = (0..4).map(|i| feature([i as f64, 0.0, 0.0], 0.0, [0.0, 0.0])).collect();
        let w = [0.1, 0.2, 0.3, 0.4];
        let d = ParticleDensity::new(parts, w.to_vec(), bw).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[d.select_index(&mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(w) {
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - n as f64 * p).abs() < 3.0 * sd, "{counts:?}");
        }
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5).map(|_| d.sample(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn tiny_bandwidth_samples_hit_centres() {
        let bw = Bandwidths { sigma_p: 1e-12, sigma_q: 1e12, sigma_r: 1e-12, motion_p: 1e-12, motion_q: 1e12 };
        let f = feature([0.3, -0.1, 0.2], 0.7, [4.0, 1.0]);
        let d = ParticleDensity::uniform(vec![f], bw).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let s = d.sample(&mut rng);
            assert!(s.pose.approx_eq(&f.pose, 1e-5));
            assert!((s.r - f.r).norm() < 1e-9);
        }
    }

    #[test]
    fn vmf_sample_mean_dot_matches_kappa() {
        // E[δ_w] for vMF on S³ is I₂(κ)/I₁(κ) = coth-like; check against quadrature
        let kappa = 20.0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 40_000;
        let mean: f64 = (0..n).map(|_| sample_vmf_identity(kappa, &mut rng).w).sum::<f64>() / n as f64;
        // density of w on [-1,1] ∝ exp(κw)·sqrt(1-w²); integrate numerically
        let steps = 200_000;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..steps {
            let w = -1.0 + (i as f64 + 0.5) * 2.0 / steps as f64;
            let f = (kappa * (w - 1.0)).exp() * (1.0 - w * w).sqrt();
            num += w * f;
            den += f;
        }
        assert!((mean - num / den).abs() < 3e-3, "{mean} vs {}", num / den);
    }

    #[test]
    fn json_round_trip_and_kind_mismatch() {
        let bw = Bandwidths::default();
        let d = ParticleDensity::new(
            vec![feature([0.0, 0.0, 0.0], 0.0, [1.0, 0.5]), feature([0.1, 0.0, 0.0], 0.4, [0.0, 0.0])],
            vec![1.0, 3.0],
            bw,
        )
        .unwrap();
        let text = d.to_json().unwrap();
        let back = ParticleDensity::<SurfaceFeature>::from_json(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert!((back.weights()[1] - 0.75).abs() < 1e-15);
        assert!(back.particles()[1].pose.approx_eq(&d.particles()[1].pose, 1e-15));
        assert!(matches!(
            ParticleDensity::<RigidMotion>::from_json(&text),
            Err(Error::KindMismatch { .. })
        ));
    }

    #[test]
    fn construction_errors() {
        let bw = Bandwidths::default();
        assert!(matches!(ParticleDensity::<RigidMotion>::uniform(vec![], bw), Err(Error::EmptyDensity)));
        assert!(matches!(
            ParticleDensity::new(vec![RigidMotion::identity()], vec![0.0], bw),
            Err(Error::InvalidWeights(_))
        ));
        let bad = Bandwidths { sigma_p: -1.0, ..bw };
        assert!(matches!(
            ParticleDensity::uniform(vec![RigidMotion::identity()], bad),
            Err(Error::NonPositiveBandwidth(_))
        ));
    }
}
