//! Constant-curvature ambient geometry.
//!
//! Points of the hyperbolic space of curvature `delta < 0` live on the upper
//! sheet of the hyperboloid `<x, x> = 1/delta` in Minkowski space with
//! signature `(-, +, ..., +)`. Euclidean space (`delta = 0`) is a first-class
//! ambient with plain coordinates. Tangent vectors are stored in the same
//! coordinates as points, so exp/log and isometries are linear algebra.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance below which `log` switches to a series expansion.
const SERIES_CUTOFF: f64 = 1e-6;

/// Upper bound `delta <= 0` on the sectional curvature of the ambient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Delta(f64);

impl Delta {
    pub fn new(delta: f64) -> Result<Self> {
        if !delta.is_finite() {
            return Err(Error::InvalidDelta {
                delta,
                reason: "must be finite",
            });
        }
        if delta > 0.0 {
            return Err(Error::InvalidDelta {
                delta,
                reason: "only nonpositive curvature is supported",
            });
        }
        Ok(Delta(delta))
    }

    /// Like [`Delta::new`] but rejects the Euclidean case.
    pub fn hyperbolic(delta: f64) -> Result<Self> {
        let d = Self::new(delta)?;
        if d.is_euclidean() {
            return Err(Error::InvalidDelta {
                delta,
                reason: "a hyperbolic ambient (delta < 0) is required",
            });
        }
        Ok(d)
    }

    pub const EUCLIDEAN: Delta = Delta(0.0);

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn is_euclidean(self) -> bool {
        self.0 == 0.0
    }

    /// `sqrt(-delta)`, the inverse curvature radius.
    #[inline]
    pub fn sqrt_neg(self) -> f64 {
        (-self.0).sqrt()
    }
}

impl TryFrom<f64> for Delta {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Delta::new(v)
    }
}

impl From<Delta> for f64 {
    fn from(d: Delta) -> f64 {
        d.0
    }
}

/// The delta-adapted trigonometric triple `(sd, cd, Th)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaTrig {
    pub sd: f64,
    pub cd: f64,
    pub th: f64,
}

/// `sd(y) = sinh(k y)/k`, `cd = sd'`, `Th = sd/cd` with `k = sqrt(-delta)`;
/// at `delta = 0` these are `(y, 1, y)`.
pub fn delta_trig(y: f64, delta: Delta) -> DeltaTrig {
    if delta.is_euclidean() {
        return DeltaTrig {
            sd: y,
            cd: 1.0,
            th: y,
        };
    }
    let k = delta.sqrt_neg();
    let ky = k * y;
    DeltaTrig {
        sd: ky.sinh() / k,
        cd: ky.cosh(),
        th: ky.tanh() / k,
    }
}

/// Derivative of `Th`, i.e. `1/cd^2`.
pub fn th_prime(y: f64, delta: Delta) -> f64 {
    let cd = delta_trig(y, delta).cd;
    1.0 / (cd * cd)
}

/// Inverse of `sd`.
pub fn arsinh_delta(s: f64, delta: Delta) -> Result<f64> {
    if delta.is_euclidean() {
        return Err(Error::InvalidDelta {
            delta: 0.0,
            reason: "arsinh_delta is the identity at delta = 0; handle it at the call site",
        });
    }
    if s < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "arsinh_delta needs s >= 0, got {s}"
        )));
    }
    let k = delta.sqrt_neg();
    Ok((k * s).asinh() / k)
}

/// `(1/(2 sqrt(-delta))) arcosh(sqrt 2)`: the largest ball radius for which
/// the small-ball alternative to the trace condition applies.
pub fn small_ball_radius(delta: Delta) -> Result<f64> {
    if delta.is_euclidean() {
        return Err(Error::InvalidDelta {
            delta: 0.0,
            reason: "small-ball radius needs delta < 0",
        });
    }
    Ok(std::f64::consts::SQRT_2.acosh() / (2.0 * delta.sqrt_neg()))
}

/// A point of the ambient, validated at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct AmbientPoint {
    coords: DVector<f64>,
}

impl AmbientPoint {
    #[inline]
    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.coords.iter().copied().collect()
    }
}

/// A tangent vector together with its base point.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    pub base: AmbientPoint,
    pub components: DVector<f64>,
}

/// `H^n(delta)` in the hyperboloid model, or `R^n` when `delta = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ambient {
    delta: Delta,
    dim: usize,
}

impl Ambient {
    pub fn new(delta: Delta, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidParameter(format!(
                "ambient dimension must be >= 2, got {dim}"
            )));
        }
        Ok(Ambient { delta, dim })
    }

    pub fn hyperbolic(delta: f64, dim: usize) -> Result<Self> {
        Self::new(Delta::hyperbolic(delta)?, dim)
    }

    pub fn euclidean(dim: usize) -> Result<Self> {
        Self::new(Delta::EUCLIDEAN, dim)
    }

    #[inline]
    pub fn delta(&self) -> Delta {
        self.delta
    }

    /// Intrinsic dimension `n`.
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn is_euclidean(&self) -> bool {
        self.delta.is_euclidean()
    }

    /// Number of stored coordinates: `n + 1` on the hyperboloid, `n` otherwise.
    #[inline]
    pub fn coord_len(&self) -> usize {
        if self.is_euclidean() {
            self.dim
        } else {
            self.dim + 1
        }
    }

    /// Curvature radius `1/sqrt(-delta)`; infinite for Euclidean space.
    fn radius(&self) -> f64 {
        1.0 / self.delta.sqrt_neg()
    }

    /// Minkowski (or Euclidean) inner product.
    #[inline]
    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        if self.is_euclidean() {
            a.dot(b)
        } else {
            let mut s = -a[0] * b[0];
            for i in 1..a.len() {
                s += a[i] * b[i];
            }
            s
        }
    }

    #[inline]
    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        self.inner(v, v).max(0.0).sqrt()
    }

    pub fn origin(&self) -> AmbientPoint {
        let mut coords = DVector::zeros(self.coord_len());
        if !self.is_euclidean() {
            coords[0] = self.radius();
        }
        AmbientPoint { coords }
    }

    /// Validates raw coordinates as a point of this ambient.
    pub fn point(&self, coords: DVector<f64>) -> Result<AmbientPoint> {
        if coords.len() != self.coord_len() {
            return Err(Error::DimensionMismatch {
                expected: self.coord_len(),
                found: coords.len(),
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidPoint("non-finite coordinate".into()));
        }
        if !self.is_euclidean() {
            if coords[0] <= 0.0 {
                return Err(Error::InvalidPoint(format!(
                    "time-like coordinate {} is not positive",
                    coords[0]
                )));
            }
            let d = self.delta.value();
            let q = self.inner(&coords, &coords);
            let scale = 1.0f64.max(-d * coords.norm_squared());
            let dev = (d * q - 1.0).abs();
            if dev > 1e-12 * scale {
                return Err(Error::InvalidPoint(format!(
                    "hyperboloid constraint violated: delta<x,x> - 1 = {:.3e}",
                    d * q - 1.0
                )));
            }
        }
        Ok(AmbientPoint { coords })
    }

    pub fn point_from_slice(&self, coords: &[f64]) -> Result<AmbientPoint> {
        self.point(DVector::from_column_slice(coords))
    }

    /// Lifts spatial coordinates onto the hyperboloid (time coordinate solved
    /// for). In Euclidean space this is the identity.
    pub fn lift(&self, spatial: &[f64]) -> Result<AmbientPoint> {
        if spatial.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: spatial.len(),
            });
        }
        if self.is_euclidean() {
            return self.point_from_slice(spatial);
        }
        let r = self.radius();
        let s2: f64 = spatial.iter().map(|x| x * x).sum();
        let mut c = DVector::zeros(self.dim + 1);
        c[0] = (r * r + s2).sqrt();
        for (i, x) in spatial.iter().enumerate() {
            c[i + 1] = *x;
        }
        self.point(c)
    }

    /// Pulls coordinates back onto the model after rounding drift.
    fn renormalize(&self, mut coords: DVector<f64>) -> AmbientPoint {
        if !self.is_euclidean() {
            let r = self.radius();
            let s2: f64 = coords.iter().skip(1).map(|x| x * x).sum();
            coords[0] = (r * r + s2).sqrt();
        }
        AmbientPoint { coords }
    }

    /// Geodesic distance. For `delta < 0` this uses
    /// `d = 2R asinh(|p - q|_L / 2R)`, which has no cancellation for nearby
    /// points, where `R = 1/sqrt(-delta)`.
    pub fn distance(&self, p: &AmbientPoint, q: &AmbientPoint) -> f64 {
        let diff = &q.coords - &p.coords;
        if self.is_euclidean() {
            return diff.norm();
        }
        let r = self.radius();
        let chord = self.norm(&diff);
        2.0 * r * (chord / (2.0 * r)).asinh()
    }

    /// Orthogonal projection of `v` onto `T_p`.
    pub fn tangent_project(&self, p: &AmbientPoint, v: &DVector<f64>) -> DVector<f64> {
        if self.is_euclidean() {
            return v.clone();
        }
        let pp = self.inner(&p.coords, &p.coords);
        v - &p.coords * (self.inner(&p.coords, v) / pp)
    }

    pub fn exp(&self, p: &AmbientPoint, v: &DVector<f64>) -> AmbientPoint {
        if self.is_euclidean() {
            return AmbientPoint {
                coords: &p.coords + v,
            };
        }
        let k = self.delta.sqrt_neg();
        let t = k * self.norm(v);
        let sinhc = if t < 1e-8 {
            1.0 + t * t / 6.0
        } else {
            t.sinh() / t
        };
        let coords = &p.coords * t.cosh() + v * sinhc;
        self.renormalize(coords)
    }

    pub fn log(&self, p: &AmbientPoint, q: &AmbientPoint) -> DVector<f64> {
        let diff = &q.coords - &p.coords;
        if self.is_euclidean() {
            return diff;
        }
        let k = self.delta.sqrt_neg();
        let d = self.distance(p, q);
        let kd = k * d;
        // q - cosh(kd) p, written to avoid subtracting nearly equal numbers.
        let half = (0.5 * kd).sinh();
        let proj = diff - &p.coords * (2.0 * half * half);
        let factor = if d < SERIES_CUTOFF {
            1.0 - kd * kd / 6.0
        } else {
            kd / kd.sinh()
        };
        proj * factor
    }

    pub fn log_tangent(&self, p: &AmbientPoint, q: &AmbientPoint) -> TangentVector {
        TangentVector {
            base: p.clone(),
            components: self.log(p, q),
        }
    }

    pub fn exp_tangent(&self, v: &TangentVector) -> AmbientPoint {
        self.exp(&v.base, &v.components)
    }

    /// Parallel transport of `v in T_p` to `T_q` along the connecting geodesic.
    pub fn transport(&self, p: &AmbientPoint, q: &AmbientPoint, v: &DVector<f64>) -> DVector<f64> {
        if self.is_euclidean() {
            return v.clone();
        }
        let r2 = self.radius().powi(2);
        let c = self.inner(&q.coords, v) / (r2 - self.inner(&p.coords, &q.coords));
        v + (&p.coords + &q.coords) * c
    }

    /// Standard coordinate basis at the origin, parallel transported to `p`.
    /// This frame field is continuous on the whole ambient.
    pub fn standard_frame(&self, p: &AmbientPoint) -> Vec<DVector<f64>> {
        let o = self.origin();
        let shift = usize::from(!self.is_euclidean());
        (0..self.dim)
            .map(|i| {
                let mut e = DVector::zeros(self.coord_len());
                e[i + shift] = 1.0;
                self.transport(&o, p, &e)
            })
            .collect()
    }

    /// Largest deviation of the Gram matrix of `frame` from the identity,
    /// including the tangency defect against `p`.
    pub fn frame_deviation(&self, p: &AmbientPoint, frame: &[DVector<f64>]) -> f64 {
        let mut dev = 0.0f64;
        let scale = if self.is_euclidean() {
            1.0
        } else {
            self.radius()
        };
        for (i, a) in frame.iter().enumerate() {
            if !self.is_euclidean() {
                dev = dev.max((self.inner(a, &p.coords) / scale).abs());
            }
            for (j, b) in frame.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((self.inner(a, b) - target).abs());
            }
        }
        dev
    }

    /// Components of `v` in an orthonormal frame (no validation).
    pub fn frame_coords(&self, frame: &[DVector<f64>], v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(frame.len(), frame.iter().map(|e| self.inner(e, v)))
    }

    /// Inverse of [`Ambient::frame_coords`].
    pub fn from_frame(&self, frame: &[DVector<f64>], x: &[f64]) -> DVector<f64> {
        let mut v = DVector::zeros(self.coord_len());
        for (e, c) in frame.iter().zip(x) {
            v.axpy(*c, e, 1.0);
        }
        v
    }

    /// Normal coordinates of `q` centred at `q0` in the given frame.
    pub fn normal_coords(
        &self,
        q0: &AmbientPoint,
        frame: &[DVector<f64>],
        q: &AmbientPoint,
    ) -> Result<DVector<f64>> {
        if frame.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: frame.len(),
            });
        }
        let deviation = self.frame_deviation(q0, frame);
        if deviation > 1e-10 {
            return Err(Error::FrameNotOrthonormal { deviation });
        }
        Ok(self.frame_coords(frame, &self.log(q0, q)))
    }

    /// The ambient with curvature `c^2 delta`; pair with [`Ambient::scale_point`],
    /// which divides every length by `c`.
    pub fn scaled(&self, c: f64) -> Result<Ambient> {
        Ambient::new(Delta::new(c * c * self.delta.value())?, self.dim)
    }

    pub fn scale_point(&self, p: &AmbientPoint, c: f64) -> AmbientPoint {
        AmbientPoint {
            coords: &p.coords / c,
        }
    }
}

/// Karcher mean of a weighted point set by fixed-point iteration of
/// `q <- exp_q(sum w_i log_q(p_i) / sum w_i)`.
pub fn karcher_mean(
    ambient: &Ambient,
    points: &[AmbientPoint],
    weights: Option<&[f64]>,
) -> AmbientPoint {
    assert!(!points.is_empty(), "karcher mean of an empty set");
    let total: f64 = weights.map_or(points.len() as f64, |w| w.iter().sum());
    let mut q = points[0].clone();
    for _ in 0..200 {
        let mut step = DVector::zeros(ambient.coord_len());
        for (i, p) in points.iter().enumerate() {
            let w = weights.map_or(1.0, |w| w[i]);
            step.axpy(w / total, &ambient.log(&q, p), 1.0);
        }
        let len = ambient.norm(&step);
        q = ambient.exp(&q, &step);
        if len < 1e-15 * (1.0 + ambient.norm(&ambient.log(&ambient.origin(), &q))) {
            break;
        }
    }
    q
}

/// Center of a small enclosing ball of a point set. Runs the geodesic
/// Badoiu-Clarkson iteration (step toward the farthest point with step size
/// `1/(i+1)`) and keeps the better of that and the Karcher mean. The returned
/// radius is an upper bound of the minimal one, so tests against a threshold
/// stay conservative.
pub fn enclosing_ball(ambient: &Ambient, points: &[AmbientPoint]) -> (AmbientPoint, f64) {
    let radius_from = |c: &AmbientPoint| -> (usize, f64) {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, ambient.distance(c, p)))
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a })
    };
    let mean = karcher_mean(ambient, points, None);
    let mut best = (mean.clone(), radius_from(&mean).1);
    let mut c = mean;
    for i in 1..=1000 {
        let (far, r) = radius_from(&c);
        if r < best.1 {
            best = (c.clone(), r);
        }
        let v = ambient.log(&c, &points[far]) / (i as f64 + 1.0);
        c = ambient.exp(&c, &v);
    }
    let r = radius_from(&c).1;
    if r < best.1 {
        best = (c, r);
    }
    best
}

/// An ambient isometry `x -> L x + t` (Lorentz transformation on the
/// hyperboloid, rigid motion in Euclidean space).
#[derive(Clone, Debug, PartialEq)]
pub struct Isometry {
    linear: DMatrix<f64>,
    translation: DVector<f64>,
}

impl Isometry {
    pub fn identity(ambient: &Ambient) -> Self {
        let n = ambient.coord_len();
        Isometry {
            linear: DMatrix::identity(n, n),
            translation: DVector::zeros(n),
        }
    }

    /// Translation by distance `t` along spatial axis `axis`.
    pub fn boost(ambient: &Ambient, axis: usize, t: f64) -> Self {
        let mut iso = Self::identity(ambient);
        if ambient.is_euclidean() {
            iso.translation[axis] = t;
        } else {
            let s = t * ambient.delta().sqrt_neg();
            let a = axis + 1;
            iso.linear[(0, 0)] = s.cosh();
            iso.linear[(a, a)] = s.cosh();
            iso.linear[(0, a)] = s.sinh();
            iso.linear[(a, 0)] = s.sinh();
        }
        iso
    }

    /// Rotation by `theta` in the plane of spatial axes `i`, `j`.
    pub fn rotation(ambient: &Ambient, i: usize, j: usize, theta: f64) -> Self {
        let mut iso = Self::identity(ambient);
        let shift = usize::from(!ambient.is_euclidean());
        let (a, b) = (i + shift, j + shift);
        let (s, c) = theta.sin_cos();
        iso.linear[(a, a)] = c;
        iso.linear[(b, b)] = c;
        iso.linear[(a, b)] = -s;
        iso.linear[(b, a)] = s;
        iso
    }

    /// The pure boost (or translation) taking the origin to `q`.
    pub fn boost_to(ambient: &Ambient, q: &AmbientPoint) -> Self {
        let mut iso = Self::identity(ambient);
        if ambient.is_euclidean() {
            iso.translation = q.coords.clone();
            return iso;
        }
        let r = ambient.radius();
        let n = ambient.dim();
        let gamma = q.coords[0] / r;
        let u = q.coords.rows(1, n) / r;
        iso.linear[(0, 0)] = gamma;
        for i in 0..n {
            iso.linear[(0, i + 1)] = u[i];
            iso.linear[(i + 1, 0)] = u[i];
            for j in 0..n {
                let delta_ij = if i == j { 1.0 } else { 0.0 };
                iso.linear[(i + 1, j + 1)] = delta_ij + u[i] * u[j] / (gamma + 1.0);
            }
        }
        iso
    }

    /// `self` after `other`.
    pub fn compose(&self, other: &Isometry) -> Isometry {
        Isometry {
            linear: &self.linear * &other.linear,
            translation: &self.linear * &other.translation + &self.translation,
        }
    }

    pub fn inverse(&self, ambient: &Ambient) -> Isometry {
        // Lorentz and orthogonal matrices invert through the metric: G L^T G.
        let n = ambient.coord_len();
        let mut g = DMatrix::identity(n, n);
        if !ambient.is_euclidean() {
            g[(0, 0)] = -1.0;
        }
        let linear = &g * self.linear.transpose() * &g;
        let translation = -(&linear * &self.translation);
        Isometry {
            linear,
            translation,
        }
    }

    pub fn apply_point(&self, ambient: &Ambient, p: &AmbientPoint) -> AmbientPoint {
        ambient.renormalize(&self.linear * &p.coords + &self.translation)
    }

    pub fn apply_vector(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.linear * v
    }
}
