//! Extrinsic geometry of immersed meshes: second fundamental form, mean
//! curvature vector, the generalized vector `H_T`, tensor fields and their
//! hypothesis checks.
//!
//! Conventions. `A^a` is the second fundamental form along the unit normal
//! `n_a`, stored in an orthonormal tangent frame. The mean curvature vector is
//! the averaged trace `H = (1/m) sum_a tr(A^a) n_a` with `m = 2`, so a geodesic
//! sphere of radius `rho` has `|H| = cd(rho)/sd(rho)`. `H_T = sum_a tr(A^a T) n_a`
//! is not averaged, hence `H_I = 2 H`.

use log::debug;
use nalgebra::{DMatrix, DVector, Matrix2, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::hypgeo::{delta_trig, enclosing_ball, small_ball_radius, Ambient, AmbientPoint};
use crate::linalg::{polar_orthogonal, sorted_symmetric_eigen, sym2_eigenvalues};
use crate::mesh::{ImmersedMesh, IntrinsicMetric, TensorEntry};

/// Re-tilting passes of the local quadratic fit.
const FIT_PASSES: usize = 5;
/// Smallest singular value of the frame overlap before frames count as
/// describing different planes.
const FRAME_OVERLAP_MIN: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "scale", rename_all = "snake_case")]
pub enum TensorKind {
    /// `c I`; divergence free by definition and handled exactly.
    ScaledIdentity(f64),
    General,
}

/// Symmetric (1,1)-tensor per vertex, stored as a 2x2 matrix in an
/// orthonormal tangent frame (two ambient tangent vectors).
#[derive(Clone, Debug, PartialEq)]
pub struct TensorField {
    kind: TensorKind,
    frames: Vec<[DVector<f64>; 2]>,
    values: Vec<Matrix2<f64>>,
}

impl TensorField {
    pub fn scaled_identity(mesh: &ImmersedMesh, c: f64) -> Self {
        let n = mesh.n_vertices();
        TensorField {
            kind: TensorKind::ScaledIdentity(c),
            frames: (0..n).map(|v| mesh.edge_frame(v)).collect(),
            values: vec![Matrix2::identity() * c; n],
        }
    }

    pub fn identity(mesh: &ImmersedMesh) -> Self {
        Self::scaled_identity(mesh, 1.0)
    }

    /// A general field. Values must be symmetric to rounding and are
    /// symmetrized exactly; frames must be orthonormal and tangent to the
    /// ambient at their vertex.
    pub fn new(
        mesh: &ImmersedMesh,
        frames: Vec<[DVector<f64>; 2]>,
        values: Vec<Matrix2<f64>>,
    ) -> Result<Self> {
        let n = mesh.n_vertices();
        for len in [frames.len(), values.len()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
        let amb = mesh.ambient();
        for (v, f) in frames.iter().enumerate() {
            let deviation = amb.frame_deviation(mesh.vertex(v), f);
            if deviation > 1e-8 {
                return Err(Error::FrameNotOrthonormal { deviation });
            }
        }
        let mut vals = values;
        for (v, t) in vals.iter_mut().enumerate() {
            let asym = (t[(0, 1)] - t[(1, 0)]).abs();
            if asym > 1e-12 * t.amax().max(1e-300) || !t.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "tensor at vertex {v} is not symmetric"
                )));
            }
            let s = 0.5 * (t[(0, 1)] + t[(1, 0)]);
            t[(0, 1)] = s;
            t[(1, 0)] = s;
        }
        let field = TensorField {
            kind: TensorKind::General,
            frames,
            values: vals,
        };
        field.check_spd()?;
        Ok(field)
    }

    #[inline]
    pub fn kind(&self) -> TensorKind {
        self.kind
    }

    #[inline]
    pub fn frame(&self, v: usize) -> &[DVector<f64>; 2] {
        &self.frames[v]
    }

    #[inline]
    pub fn value(&self, v: usize) -> Matrix2<f64> {
        self.values[v]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn trace(&self) -> Vec<f64> {
        self.values.iter().map(|t| t.trace()).collect()
    }

    pub fn min_eigenvalues(&self) -> Vec<f64> {
        self.values.iter().map(|t| sym2_eigenvalues(t).0).collect()
    }

    /// Largest eigenvalue per vertex.
    pub fn max_eigenvalues(&self) -> Vec<f64> {
        self.values.iter().map(|t| sym2_eigenvalues(t).1).collect()
    }

    pub fn check_spd(&self) -> Result<()> {
        for (v, t) in self.values.iter().enumerate() {
            let min_eigenvalue = sym2_eigenvalues(t).0;
            if !(min_eigenvalue > 0.0) {
                return Err(Error::NonSpdTensor {
                    vertex: v,
                    min_eigenvalue,
                });
            }
        }
        Ok(())
    }

    pub fn scale(&self, c: f64) -> Self {
        let kind = match self.kind {
            TensorKind::ScaledIdentity(s) => TensorKind::ScaledIdentity(s * c),
            TensorKind::General => TensorKind::General,
        };
        TensorField {
            kind,
            frames: self.frames.clone(),
            values: self.values.iter().map(|t| t * c).collect(),
        }
    }

    /// `a self + b other`; both fields must share their frames.
    pub fn combine(&self, a: f64, other: &TensorField, b: f64) -> Result<Self> {
        if self.frames != other.frames {
            return Err(Error::InvalidParameter(
                "tensor fields use different frames".into(),
            ));
        }
        let kind = match (self.kind, other.kind) {
            (TensorKind::ScaledIdentity(x), TensorKind::ScaledIdentity(y)) => {
                TensorKind::ScaledIdentity(a * x + b * y)
            }
            _ => TensorKind::General,
        };
        let field = TensorField {
            kind,
            frames: self.frames.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(s, t)| s * a + t * b)
                .collect(),
        };
        field.check_spd()?;
        Ok(field)
    }

    /// The same operator expressed in frames rotated by `angles[v]`.
    pub fn with_rotated_frames(&self, angles: &[f64]) -> Self {
        let mut out = self.clone();
        for (v, &th) in angles.iter().enumerate() {
            let (s, c) = th.sin_cos();
            let r = Matrix2::new(c, -s, s, c);
            let [f1, f2] = &self.frames[v];
            out.frames[v] = [f1 * c + f2 * s, f2 * c - f1 * s];
            out.values[v] = r.transpose() * self.values[v] * r;
        }
        out
    }

    pub fn to_entries(&self) -> Vec<TensorEntry> {
        self.frames
            .iter()
            .zip(&self.values)
            .map(|(f, t)| TensorEntry {
                frame: [
                    f[0].iter().copied().collect(),
                    f[1].iter().copied().collect(),
                ],
                value: [[t[(0, 0)], t[(0, 1)]], [t[(1, 0)], t[(1, 1)]]],
            })
            .collect()
    }

    /// Reads serialized entries; a field that is exactly `c I` everywhere is
    /// recognised as a scaled identity.
    pub fn from_entries(mesh: &ImmersedMesh, entries: &[TensorEntry]) -> Result<Self> {
        let frames: Vec<[DVector<f64>; 2]> = entries
            .iter()
            .map(|e| {
                [
                    DVector::from_column_slice(&e.frame[0]),
                    DVector::from_column_slice(&e.frame[1]),
                ]
            })
            .collect();
        for f in &frames {
            for x in f {
                if x.len() != mesh.ambient().coord_len() {
                    return Err(Error::DimensionMismatch {
                        expected: mesh.ambient().coord_len(),
                        found: x.len(),
                    });
                }
            }
        }
        let values: Vec<Matrix2<f64>> = entries
            .iter()
            .map(|e| Matrix2::new(e.value[0][0], e.value[0][1], e.value[1][0], e.value[1][1]))
            .collect();
        let mut field = TensorField::new(mesh, frames, values)?;
        if let Some(first) = field.values.first() {
            let c = first[(0, 0)];
            if field.values.iter().all(|t| *t == Matrix2::identity() * c) {
                field.kind = TensorKind::ScaledIdentity(c);
            }
        }
        Ok(field)
    }
}

/// Extrinsic data at one vertex.
#[derive(Clone, Debug)]
pub struct VertexCurvature {
    /// Orthonormal tangent frame of the fitted surface.
    pub tangent: [DVector<f64>; 2],
    pub normals: Vec<DVector<f64>>,
    /// `A^a` in the tangent frame, one per normal.
    pub second_form: Vec<Matrix2<f64>>,
    pub mean_curvature: DVector<f64>,
}

impl VertexCurvature {
    /// `sum_a |A^a|^2`.
    pub fn second_form_norm_sq(&self) -> f64 {
        self.second_form.iter().map(|a| a.norm_squared()).sum()
    }
}

#[derive(Clone, Debug)]
pub struct CurvatureData {
    pub vertices: Vec<VertexCurvature>,
    /// True when normals of a hypersurface were oriented consistently.
    pub oriented: bool,
    ambient: Ambient,
}

impl CurvatureData {
    pub fn mean_curvature_sq(&self) -> Vec<f64> {
        self.vertices
            .iter()
            .map(|c| self.ambient.inner(&c.mean_curvature, &c.mean_curvature))
            .collect()
    }

    pub fn second_form_norm_sq(&self) -> Vec<f64> {
        self.vertices
            .iter()
            .map(|c| c.second_form_norm_sq())
            .collect()
    }

    pub fn ambient(&self) -> &Ambient {
        &self.ambient
    }

    /// `T` at vertex `v` rewritten in the curvature tangent frame.
    pub fn tensor_in_frame(&self, t: &TensorField, v: usize) -> Result<Matrix2<f64>> {
        if let TensorKind::ScaledIdentity(c) = t.kind() {
            return Ok(Matrix2::identity() * c);
        }
        let cv = &self.vertices[v];
        let s = t.frame(v);
        let r = DMatrix::from_fn(2, 2, |i, j| self.ambient.inner(&cv.tangent[i], &s[j]));
        if r.singular_values().min() < FRAME_OVERLAP_MIN {
            return Err(Error::FrameMismatch { vertex: v });
        }
        let q = polar_orthogonal(&r);
        let q = Matrix2::new(q[(0, 0)], q[(0, 1)], q[(1, 0)], q[(1, 1)]);
        Ok(q * t.value(v) * q.transpose())
    }

    /// Tangential part of an ambient vector at `v` in the curvature frame.
    pub fn tangent_components(&self, v: usize, x: &DVector<f64>) -> [f64; 2] {
        let t = &self.vertices[v].tangent;
        [self.ambient.inner(&t[0], x), self.ambient.inner(&t[1], x)]
    }
}

/// Fits `A` at every vertex from its two-ring in ambient normal coordinates.
pub fn second_fundamental_form(mesh: &ImmersedMesh) -> Result<CurvatureData> {
    let amb = *mesh.ambient();
    let n = amb.dim();
    let mut vertices = Vec::with_capacity(mesh.n_vertices());
    for v in 0..mesh.n_vertices() {
        vertices.push(fit_vertex(mesh, v)?);
    }
    let mut oriented = false;
    if n == 3 {
        orient_hypersurface(mesh, &mut vertices);
        oriented = true;
    }
    debug!("fitted curvature at {} vertices", vertices.len());
    Ok(CurvatureData {
        vertices,
        oriented,
        ambient: amb,
    })
}

fn fit_vertex(mesh: &ImmersedMesh, v: usize) -> Result<VertexCurvature> {
    let amb = mesh.ambient();
    let n = amb.dim();
    let p = mesh.vertex(v);
    let frame = amb.standard_frame(p);
    let ring = mesh.k_ring(v, 2);
    if ring.len() < 5 {
        return Err(Error::UnderdeterminedFit {
            vertex: v,
            points: ring.len(),
        });
    }
    let ys: Vec<DVector<f64>> = ring
        .iter()
        .map(|&w| amb.frame_coords(&frame, &amb.log(p, mesh.vertex(w))))
        .collect();
    let scale = ys.iter().map(|y| y.norm()).fold(0.0, f64::max);

    // Initial plane from the uncentered covariance of the one-ring.
    let mut cov = DMatrix::zeros(n, n);
    for &w in mesh.neighbors(v) {
        let y = amb.frame_coords(&frame, &amb.log(p, mesh.vertex(w)));
        cov += &y * y.transpose();
    }
    let (_, vecs) = sorted_symmetric_eigen(cov);
    let mut t1: DVector<f64> = vecs.column(n - 1).into_owned();
    let mut t2: DVector<f64> = vecs.column(n - 2).into_owned();

    let mut coeffs = DMatrix::zeros(5, n - 2);
    let mut normals = Vec::new();
    for pass in 0..FIT_PASSES {
        normals = complement(&t1, &t2);
        let mut a = DMatrix::zeros(ys.len(), 5);
        let mut b = DMatrix::zeros(ys.len(), n - 2);
        for (i, y) in ys.iter().enumerate() {
            let u1 = t1.dot(y) / scale;
            let u2 = t2.dot(y) / scale;
            a.row_mut(i)
                .copy_from_slice(&[u1, u2, u1 * u1, u1 * u2, u2 * u2]);
            for (k, nk) in normals.iter().enumerate() {
                b[(i, k)] = nk.dot(y) / scale;
            }
        }
        coeffs = a
            .svd(true, true)
            .solve(&b, 1e-14)
            .map_err(|e| Error::InvalidMesh(format!("curvature fit failed at vertex {v}: {e}")))?;
        let tilt: f64 = (0..n - 2)
            .map(|k| coeffs[(0, k)].abs() + coeffs[(1, k)].abs())
            .sum();
        // The frame must match the coefficients, so the last pass keeps it.
        if tilt < 1e-13 || pass + 1 == FIT_PASSES {
            break;
        }
        let mut new1 = t1.clone();
        let mut new2 = t2.clone();
        for (k, nk) in normals.iter().enumerate() {
            new1 += nk * coeffs[(0, k)];
            new2 += nk * coeffs[(1, k)];
        }
        t1 = new1.normalize();
        t2 = (&new2 - &t1 * t1.dot(&new2)).normalize();
    }
    // Height coefficients were fitted in units of `scale`; second derivatives
    // pick up a factor 1/scale.
    let second_form: Vec<Matrix2<f64>> = (0..n - 2)
        .map(|k| {
            let (a, b, c) = (coeffs[(2, k)], coeffs[(3, k)], coeffs[(4, k)]);
            Matrix2::new(2.0 * a, b, b, 2.0 * c) / scale
        })
        .collect();
    let to_ambient = |x: &DVector<f64>| amb.from_frame(&frame, x.as_slice());
    let normals_amb: Vec<DVector<f64>> = normals.iter().map(to_ambient).collect();
    let mut h = DVector::zeros(amb.coord_len());
    for (a, nk) in second_form.iter().zip(&normals_amb) {
        h.axpy(a.trace(), nk, 1.0);
    }
    Ok(VertexCurvature {
        tangent: [to_ambient(&t1), to_ambient(&t2)],
        normals: normals_amb,
        second_form,
        mean_curvature: h * 0.5,
    })
}

/// Orthonormal basis of the complement of `span(t1, t2)` in `R^n`.
fn complement(t1: &DVector<f64>, t2: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = t1.len();
    let mut basis = vec![t1.clone(), t2.clone()];
    let mut cands: Vec<DVector<f64>> = (0..n)
        .map(|i| {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            e
        })
        .collect();
    let mut out = Vec::new();
    while out.len() < n - 2 {
        let mut best: Option<DVector<f64>> = None;
        for e in &cands {
            let mut r = e.clone();
            for b in &basis {
                r -= b * b.dot(&r);
            }
            if best.as_ref().is_none_or(|b| r.norm() > b.norm()) {
                best = Some(r);
            }
        }
        let mut r = best.unwrap();
        for b in &basis {
            r -= b * b.dot(&r);
        }
        let r = r.normalize();
        basis.push(r.clone());
        out.push(r);
        cands.retain(|e| e.dot(basis.last().unwrap()).abs() < 1.0 - 1e-12);
    }
    out
}

/// Orients the unit normal of a hypersurface by face winding and flips the
/// global sign so that `sum tr(A) area > 0`.
fn orient_hypersurface(mesh: &ImmersedMesh, vertices: &mut [VertexCurvature]) {
    let amb = mesh.ambient();
    let mut total = 0.0;
    for (v, vc) in vertices.iter_mut().enumerate() {
        let p = mesh.vertex(v);
        let frame = amb.standard_frame(p);
        let mut winding = Vector3::zeros();
        for &f in mesh.vertex_faces(v) {
            let face = mesh.faces()[f];
            let k = face.iter().position(|&i| i == v).unwrap();
            let a = amb.frame_coords(&frame, &amb.log(p, mesh.vertex(face[(k + 1) % 3])));
            let b = amb.frame_coords(&frame, &amb.log(p, mesh.vertex(face[(k + 2) % 3])));
            let a = Vector3::new(a[0], a[1], a[2]);
            let b = Vector3::new(b[0], b[1], b[2]);
            winding += a.cross(&b);
        }
        let nc = amb.frame_coords(&frame, &vc.normals[0]);
        if Vector3::new(nc[0], nc[1], nc[2]).dot(&winding) < 0.0 {
            vc.normals[0] = -&vc.normals[0];
            vc.second_form[0] = -vc.second_form[0];
        }
        total += vc.second_form[0].trace() * winding.norm();
    }
    if total < 0.0 {
        for vc in vertices.iter_mut() {
            vc.normals[0] = -&vc.normals[0];
            vc.second_form[0] = -vc.second_form[0];
        }
    }
}

/// `H_T = sum_a tr(A^a T) n_a` at every vertex.
pub fn h_t(curv: &CurvatureData, t: &TensorField) -> Result<Vec<DVector<f64>>> {
    if t.len() != curv.vertices.len() {
        return Err(Error::DimensionMismatch {
            expected: curv.vertices.len(),
            found: t.len(),
        });
    }
    if let TensorKind::ScaledIdentity(c) = t.kind() {
        // Exactly c * m * H with m = 2.
        return Ok(curv
            .vertices
            .iter()
            .map(|vc| &vc.mean_curvature * (2.0 * c))
            .collect());
    }
    (0..curv.vertices.len())
        .map(|v| {
            let tv = curv.tensor_in_frame(t, v)?;
            let vc = &curv.vertices[v];
            let mut out = DVector::zeros(curv.ambient.coord_len());
            for (a, nk) in vc.second_form.iter().zip(&vc.normals) {
                out.axpy((a * tv).trace(), nk, 1.0);
            }
            Ok(out)
        })
        .collect()
}

/// First Newton tensor `T_1 = tr(A) I - A` of a hypersurface, in the
/// curvature frames. Divergence free in constant curvature (Codazzi).
pub fn newton_tensor(mesh: &ImmersedMesh, curv: &CurvatureData) -> Result<TensorField> {
    if mesh.ambient().dim() != 3 || !curv.oriented {
        return Err(Error::InvalidParameter(
            "Newton tensors need an oriented hypersurface in a three-dimensional ambient".into(),
        ));
    }
    let mut frames = Vec::with_capacity(mesh.n_vertices());
    let mut values = Vec::with_capacity(mesh.n_vertices());
    for (v, vc) in curv.vertices.iter().enumerate() {
        let a = vc.second_form[0];
        let t1 = Matrix2::identity() * a.trace() - a;
        if !(sym2_eigenvalues(&t1).0 > 0.0) {
            return Err(Error::NonConvex { vertex: v });
        }
        frames.push(vc.tangent.clone());
        values.push(t1);
    }
    TensorField::new(mesh, frames, values)
}

/// Discrete divergence of a tensor field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    /// `|div T|_{L2}`.
    pub residual: f64,
    /// `residual / (|T|_{L2} kappa)`, scale free.
    pub normalized: f64,
    /// `calibration * h * kappa`.
    pub tolerance: f64,
    pub mesh_size: f64,
    pub curvature_scale: f64,
    pub pass: bool,
    /// True when the field is `c I` and the divergence vanishes identically.
    pub exact: bool,
}

/// Per-face divergence `sum_d (d/de_d T) e_d` of the vertex tensors carried to
/// the first corner by ambient parallel transport, differentiated along the
/// linear interpolant and projected to the face plane.
pub fn tensor_divergence(
    mesh: &ImmersedMesh,
    metric: &IntrinsicMetric,
    curv: &CurvatureData,
    t: &TensorField,
    calibration: f64,
) -> DivergenceReport {
    let vol = metric.total_area();
    let a2: f64 = curv
        .second_form_norm_sq()
        .iter()
        .zip(&metric.vertex_areas)
        .map(|(x, a)| x * a)
        .sum();
    let kappa = (a2 / vol).sqrt().max(1.0 / vol.sqrt());
    let h = metric.max_edge;
    let tolerance = calibration * h * kappa;
    if let TensorKind::ScaledIdentity(_) = t.kind() {
        return DivergenceReport {
            residual: 0.0,
            normalized: 0.0,
            tolerance,
            mesh_size: h,
            curvature_scale: kappa,
            pass: true,
            exact: true,
        };
    }
    let amb = mesh.ambient();
    let mut sum = 0.0;
    for (fi, f) in mesh.faces().iter().enumerate() {
        let p0 = mesh.vertex(f[0]);
        let l1 = amb.log(p0, mesh.vertex(f[1]));
        let l2 = amb.log(p0, mesh.vertex(f[2]));
        let e1 = &l1 / amb.norm(&l1);
        let r2 = &l2 - &e1 * amb.inner(&e1, &l2);
        let e2 = &r2 / amb.norm(&r2);
        let e = [e1, e2];
        let grads = &metric.layouts[fi].grads;
        let mut div = DVector::zeros(amb.coord_len());
        for k in 0..3 {
            let pk = mesh.vertex(f[k]);
            let s: Vec<DVector<f64>> = t
                .frame(f[k])
                .iter()
                .map(|x| amb.transport(pk, p0, x))
                .collect();
            let tk = t.value(f[k]);
            for d in 0..2 {
                let g = grads[k][d];
                if g == 0.0 {
                    continue;
                }
                // (T_k e_d) = sum_ab T_ab s_a <s_b, e_d>
                for b in 0..2 {
                    let sb = amb.inner(&s[b], &e[d]);
                    for a in 0..2 {
                        div.axpy(g * tk[(a, b)] * sb, &s[a], 1.0);
                    }
                }
            }
        }
        let c1 = amb.inner(&e[0], &div);
        let c2 = amb.inner(&e[1], &div);
        sum += (c1 * c1 + c2 * c2) * metric.layouts[fi].area;
    }
    let residual = sum.sqrt();
    let tnorm = (0..mesh.n_vertices())
        .map(|v| t.value(v).norm_squared() * metric.vertex_areas[v])
        .sum::<f64>()
        .sqrt();
    let normalized = residual / (tnorm * kappa);
    DivergenceReport {
        residual,
        normalized,
        tolerance,
        mesh_size: h,
        curvature_scale: kappa,
        pass: normalized <= tolerance,
        exact: false,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceCondition {
    pub pass: bool,
    /// `min_v lambda_min((tr T) I - 2T) / tr T`.
    pub margin: f64,
    pub failing_vertices: usize,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallBallCondition {
    pub pass: bool,
    pub radius: f64,
    pub threshold: f64,
    pub margin: f64,
    /// Center of the enclosing ball, ambient coordinates.
    pub center: Vec<f64>,
    /// `max cd^2(r)` with `r` measured from `q0`; bounded by 2 when the ball
    /// condition holds and `q0` is inside the ball.
    pub max_cd_sq: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorReport {
    pub kind: TensorKind,
    pub spd_margin: f64,
    pub divergence: DivergenceReport,
    pub trace_condition: TraceCondition,
    pub small_ball: Option<SmallBallCondition>,
    /// `max_v (Lambda_T - tr T / 2) / tr T` with `Lambda_T` the largest
    /// eigenvalue; nonpositive exactly when the trace condition holds.
    pub max_eigen_excess: f64,
}

impl TensorReport {
    /// Positive definite, divergence free to tolerance, and one of the two
    /// alternative conditions.
    pub fn admissible(&self) -> bool {
        self.spd_margin > 0.0
            && self.divergence.pass
            && (self.trace_condition.pass || self.small_ball.as_ref().is_some_and(|b| b.pass))
    }

    /// Named hypothesis results `(name, pass, margin)`.
    pub fn hypotheses(&self, prefix: &str) -> Vec<(String, bool, f64)> {
        let mut out = vec![
            (
                format!("{prefix}positive_definite"),
                self.spd_margin > 0.0,
                self.spd_margin,
            ),
            (
                format!("{prefix}divergence_free"),
                self.divergence.pass,
                self.divergence.tolerance - self.divergence.normalized,
            ),
        ];
        let ball = self
            .small_ball
            .as_ref()
            .map_or((false, f64::NEG_INFINITY), |b| (b.pass, b.margin));
        let trace = (
            self.trace_condition.pass,
            self.trace_condition.margin + self.trace_condition.tolerance,
        );
        out.push((
            format!("{prefix}trace_condition_or_small_ball"),
            trace.0 || ball.0,
            trace.1.max(ball.1),
        ));
        out
    }
}

/// Hypothesis report for a tensor field. `q0` is the base point used for the
/// `cd^2(r) <= 2` diagnostic.
pub fn check_tensor(
    mesh: &ImmersedMesh,
    metric: &IntrinsicMetric,
    curv: &CurvatureData,
    t: &TensorField,
    q0: Option<&AmbientPoint>,
    config: &Config,
) -> TensorReport {
    let tr = t.trace();
    let lmin = t.min_eigenvalues();
    let lmax = t.max_eigenvalues();
    let spd_margin = lmin.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = config.audit.trace_condition_rel;
    let mut margin = f64::INFINITY;
    let mut failing = 0;
    let mut excess = f64::NEG_INFINITY;
    for v in 0..tr.len() {
        // lambda_min((tr T) I - 2T) = lmin - lmax
        let m = (lmin[v] - lmax[v]) / tr[v];
        if m < -tol {
            failing += 1;
        }
        margin = margin.min(m);
        excess = excess.max((lmax[v] - 0.5 * tr[v]) / tr[v]);
    }
    let small_ball = (!mesh.delta().is_euclidean()).then(|| {
        let amb = mesh.ambient();
        let (c, radius) = enclosing_ball(amb, mesh.vertices());
        let threshold = small_ball_radius(mesh.delta()).expect("hyperbolic ambient");
        let base = q0.cloned().unwrap_or_else(|| c.clone());
        let max_cd_sq = mesh
            .vertices()
            .iter()
            .map(|v| delta_trig(amb.distance(&base, v), mesh.delta()).cd.powi(2))
            .fold(0.0, f64::max);
        SmallBallCondition {
            pass: radius <= threshold,
            radius,
            threshold,
            margin: (threshold - radius) / threshold,
            center: c.to_vec(),
            max_cd_sq,
        }
    });
    TensorReport {
        kind: t.kind(),
        spd_margin,
        divergence: tensor_divergence(mesh, metric, curv, t, config.divergence.calibration),
        trace_condition: TraceCondition {
            pass: failing == 0,
            margin,
            failing_vertices: failing,
            tolerance: tol,
        },
        small_ball,
        max_eigen_excess: excess,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MeshQuality;
    use crate::mesh::build_intrinsic_metric;
    use crate::scenes;

    fn mean_h(mesh: &ImmersedMesh) -> (f64, f64) {
        let c = second_fundamental_form(mesh).unwrap();
        let h: Vec<f64> = c.mean_curvature_sq().iter().map(|x| x.sqrt()).collect();
        let lo = h.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = h.iter().copied().fold(0.0, f64::max);
        (lo, hi)
    }

    #[test]
    fn geodesic_sphere_mean_curvature() {
        let mesh = scenes::geodesic_sphere(-1.0, 1.0, 4).unwrap();
        let (lo, hi) = mean_h(&mesh);
        let exact = 1.0 / 1f64.tanh();
        assert!(
            (lo - exact).abs() / exact < 0.02 && (hi - exact).abs() / exact < 0.02,
            "{lo} {hi}"
        );
    }

    #[test]
    fn euclidean_sphere_mean_curvature() {
        let mesh = scenes::euclidean_sphere(2.0, 4).unwrap();
        let (lo, hi) = mean_h(&mesh);
        assert!(
            (lo - 0.5).abs() < 0.01 && (hi - 0.5).abs() < 0.01,
            "{lo} {hi}"
        );
    }

    #[test]
    fn flat_patch_has_no_curvature() {
        let mesh = scenes::flat_disk(1.0, 1).unwrap();
        let c = second_fundamental_form(&mesh).unwrap();
        assert!(c.second_form_norm_sq().iter().all(|&a| a < 1e-20));
    }

    #[test]
    fn mean_curvature_converges() {
        let exact = 1.0 / 1f64.tanh();
        let errs: Vec<f64> = (2..5)
            .map(|l| {
                let (lo, hi) = mean_h(&scenes::geodesic_sphere(-1.0, 1.0, l).unwrap());
                (lo - exact).abs().max((hi - exact).abs())
            })
            .collect();
        for w in errs.windows(2) {
            assert!(w[0] / w[1] >= 1.7, "{errs:?}");
        }
    }

    #[test]
    fn mean_curvature_is_normal() {
        let mesh = scenes::tube_torus(-1.0, 1.0, 0.3, 4, 0).unwrap();
        let c = second_fundamental_form(&mesh).unwrap();
        assert!(!c.oriented);
        for (v, vc) in c.vertices.iter().enumerate() {
            let [a, b] = c.tangent_components(v, &vc.mean_curvature);
            assert!(a.abs() < 1e-12 && b.abs() < 1e-12, "{a} {b}");
            assert_eq!(vc.normals.len(), 2);
        }
    }

    #[test]
    fn h_t_identity_and_linearity() {
        let mesh = scenes::perturbed_sphere(-1.0, 1.0, 0.1, 2, 3).unwrap();
        let c = second_fundamental_form(&mesh).unwrap();
        let id = TensorField::identity(&mesh);
        let ht = h_t(&c, &id).unwrap();
        for (h, vc) in ht.iter().zip(&c.vertices) {
            assert_eq!(*h, &vc.mean_curvature * 2.0);
        }
        let h3 = h_t(&c, &TensorField::scaled_identity(&mesh, 3.0)).unwrap();
        for (a, b) in h3.iter().zip(&ht) {
            assert!((a - b * 3.0).amax() < 1e-14);
        }
        let t1 = newton_tensor(&mesh, &c).unwrap();
        let frames = (0..mesh.n_vertices())
            .map(|v| t1.frame(v).clone())
            .collect();
        let t2 = TensorField::new(
            &mesh,
            frames,
            vec![Matrix2::new(2.0, 0.3, 0.3, 1.0); mesh.n_vertices()],
        )
        .unwrap();
        let combo = t1.combine(0.7, &t2, 1.3).unwrap();
        let (a, b, ab) = (
            h_t(&c, &t1).unwrap(),
            h_t(&c, &t2).unwrap(),
            h_t(&c, &combo).unwrap(),
        );
        for v in 0..mesh.n_vertices() {
            let expect = &a[v] * 0.7 + &b[v] * 1.3;
            assert!((&ab[v] - expect).amax() < 1e-12);
        }
    }

    #[test]
    fn newton_tensor_on_sphere() {
        let mesh = scenes::geodesic_sphere(-1.0, 1.0, 4).unwrap();
        let c = second_fundamental_form(&mesh).unwrap();
        let t = newton_tensor(&mesh, &c).unwrap();
        let coth = 1.0 / 1f64.tanh();
        for v in 0..mesh.n_vertices() {
            assert!((t.value(v) - Matrix2::identity() * coth).amax() < 0.02 * coth);
        }
        // |H_T| = tr T / Th(rho) on the umbilic sphere.
        let ht = h_t(&c, &t).unwrap();
        let tr = t.trace();
        for v in 0..mesh.n_vertices() {
            let expect = tr[v] / 1f64.tanh();
            let got = mesh.ambient().norm(&ht[v]);
            assert!((got - expect).abs() < 0.03 * expect);
        }
    }

    #[test]
    fn non_convex_surface_is_rejected() {
        let mesh = scenes::tube_torus(-1.0, 1.0, 0.3, 3, 0).unwrap();
        let c = second_fundamental_form(&mesh).unwrap();
        assert!(matches!(
            newton_tensor(&mesh, &c),
            Err(Error::NonConvex { .. })
        ));
    }

    #[test]
    fn newton_divergence_decreases_under_refinement() {
        let cfg = Config::default();
        let norms: Vec<f64> = (2..5)
            .map(|l| {
                let mesh = scenes::geodesic_sphere(-1.0, 1.0, l).unwrap();
                let m = build_intrinsic_metric(&mesh, &MeshQuality::default()).unwrap();
                let c = second_fundamental_form(&mesh).unwrap();
                let t = newton_tensor(&mesh, &c).unwrap();
                let r = tensor_divergence(&mesh, &m, &c, &t, cfg.divergence.calibration);
                assert!(r.pass, "{r:?}");
                r.residual
            })
            .collect();
        for w in norms.windows(2) {
            assert!(w[0] / w[1] >= 1.7, "{norms:?}");
        }
    }

    #[test]
    fn trace_condition_examples() {
        let mesh = scenes::geodesic_sphere(-1.0, 0.4, 2).unwrap();
        let m = build_intrinsic_metric(&mesh, &MeshQuality::default()).unwrap();
        let c = second_fundamental_form(&mesh).unwrap();
        let cfg = Config::default();
        let id = TensorField::identity(&mesh);
        let r = check_tensor(&mesh, &m, &c, &id, None, &cfg);
        assert!(r.trace_condition.pass);
        assert_eq!(r.trace_condition.margin, 0.0);
        assert!(r.admissible());
        let frames = (0..mesh.n_vertices()).map(|v| mesh.edge_frame(v)).collect();
        let aniso = TensorField::new(
            &mesh,
            frames,
            vec![Matrix2::new(3.0, 0.0, 0.0, 1.0); mesh.n_vertices()],
        )
        .unwrap();
        let r = check_tensor(&mesh, &m, &c, &aniso, None, &cfg);
        assert!(!r.trace_condition.pass);
        assert!((r.trace_condition.margin - (-0.5)).abs() < 1e-15);
        let ball = r.small_ball.unwrap();
        assert!(ball.pass);
        assert!((ball.radius - 0.4).abs() < 1e-6);
        assert!(ball.max_cd_sq <= 2.0);
    }

    #[test]
    fn rotated_frames_leave_reports_unchanged() {
        let mesh = scenes::perturbed_sphere(-1.0, 0.4, 0.2, 2, 3).unwrap();
        let m = build_intrinsic_metric(&mesh, &MeshQuality::default()).unwrap();
        let c = second_fundamental_form(&mesh).unwrap();
        let t = newton_tensor(&mesh, &c).unwrap();
        let angles: Vec<f64> = (0..mesh.n_vertices()).map(|v| 0.37 * v as f64).collect();
        let r = t.with_rotated_frames(&angles);
        let (a, b) = (h_t(&c, &t).unwrap(), h_t(&c, &r).unwrap());
        for v in 0..mesh.n_vertices() {
            let amb = mesh.ambient();
            assert!((amb.norm(&a[v]) - amb.norm(&b[v])).abs() < 1e-12);
        }
        for (x, y) in t.trace().iter().zip(r.trace()) {
            assert!((x - y).abs() < 1e-12);
        }
        let cfg = Config::default();
        let ra = check_tensor(&mesh, &m, &c, &t, None, &cfg);
        let rb = check_tensor(&mesh, &m, &c, &r, None, &cfg);
        assert!((ra.trace_condition.margin - rb.trace_condition.margin).abs() < 1e-12);
        assert!((ra.spd_margin - rb.spd_margin).abs() < 1e-12);
        assert!((ra.divergence.residual - rb.divergence.residual).abs() < 1e-12);
    }

    #[test]
    fn frame_mismatch_is_detected() {
        let mesh = scenes::geodesic_sphere(-1.0, 1.0, 1).unwrap();
        let c = second_fundamental_form(&mesh).unwrap();
        // Frames built from the normal direction cannot be aligned.
        let frames: Vec<_> = c
            .vertices
            .iter()
            .map(|vc| [vc.normals[0].clone(), vc.tangent[0].clone()])
            .collect();
        let t = TensorField::new(
            &mesh,
            frames,
            vec![Matrix2::new(2.0, 0.0, 0.0, 1.0); mesh.n_vertices()],
        )
        .unwrap();
        assert!(matches!(h_t(&c, &t), Err(Error::FrameMismatch { .. })));
    }

    #[test]
    fn underdetermined_fit() {
        let amb = Ambient::euclidean(3).unwrap();
        let pts = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [1.0, 1.0, 0.2],
        ]
        .iter()
        .map(|c| amb.point_from_slice(c).unwrap())
        .collect();
        let mesh = ImmersedMesh::new(amb, pts, vec![[0, 1, 2], [1, 3, 2]]).unwrap();
        assert!(matches!(
            second_fundamental_form(&mesh),
            Err(Error::UnderdeterminedFit { .. })
        ));
    }

    #[test]
    fn prolate_scene_needs_the_small_ball() {
        // Newton tensor of a strongly prolate, still convex, sphere: the trace
        // condition fails somewhere but the scene is small enough for the
        // ball alternative.
        let mesh = scenes::perturbed_sphere(-1.0, 0.3, 0.3, 2, 3).unwrap();
        let m = build_intrinsic_metric(&mesh, &MeshQuality::default()).unwrap();
        let c = second_fundamental_form(&mesh).unwrap();
        let t = newton_tensor(&mesh, &c).unwrap();
        let cfg = Config::default();
        let r = check_tensor(&mesh, &m, &c, &t, None, &cfg);
        assert!(!r.trace_condition.pass);
        assert!(r.small_ball.as_ref().unwrap().pass);
        // Dense per-vertex eigensolve of (tr T) I - 2T as an independent check.
        let mut worst = f64::INFINITY;
        for v in 0..mesh.n_vertices() {
            let tv = t.value(v);
            let mat = DMatrix::from_fn(2, 2, |i, j| {
                let id = if i == j { tv.trace() } else { 0.0 };
                id - 2.0 * tv[(i, j)]
            });
            let e = mat.symmetric_eigenvalues().min() / tv.trace();
            worst = worst.min(e);
        }
        assert!((worst - r.trace_condition.margin).abs() < 1e-12);
    }
}
