//! Base points at which the test-function moment map vanishes.
//!
//! For a base point `q` let `x` be normal coordinates at `q` in the standard
//! frame and `r = |x|`. The moment vector has components
//!
//! * p-moment: `Y_i = sum_v w_v |y_i|^{p-2} y_i` with `y = Th(r)/r x`,
//! * linear: `Y_i = sum_v w_v y_i`,
//! * weighted interior / boundary (`delta = 0`): `Y_i = sum w_v x_i` with
//!   `w` the `e^{-f}`-weighted interior or boundary masses.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::CenterConfig;
use crate::error::{Error, Result};
use crate::hypgeo::{delta_trig, karcher_mean, Ambient, AmbientPoint, Delta, Isometry};
use crate::mesh::{ImmersedMesh, IntrinsicMetric};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum CenterMode {
    PMoment { p: f64 },
    Linear,
    WeightedInterior,
    WeightedBoundary,
}

impl CenterMode {
    fn exponent(&self) -> f64 {
        match *self {
            CenterMode::PMoment { p } => p,
            _ => 2.0,
        }
    }

    fn uses_th(&self) -> bool {
        matches!(self, CenterMode::PMoment { .. } | CenterMode::Linear)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CenterResult {
    #[serde(serialize_with = "point_coords")]
    pub q0: AmbientPoint,
    /// `|Y| / sum_v w_v |y_v|^{p-1}`.
    pub residual: f64,
    pub iterations: usize,
    pub mode: CenterMode,
    pub converged: bool,
    pub initializer: String,
    /// Whether finite-difference Newton steps were used.
    pub newton_steps: usize,
}

fn point_coords<S: serde::Serializer>(
    p: &AmbientPoint,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(p.coords().iter())
}

/// Sample vertices and weights for a mode.
fn samples(
    mesh: &ImmersedMesh,
    metric: &IntrinsicMetric,
    mode: CenterMode,
) -> Result<(Vec<usize>, Vec<f64>)> {
    match mode {
        CenterMode::PMoment { p } if p <= 1.0 || !p.is_finite() => Err(Error::InvalidParameter(
            format!("p-moment center needs p > 1, got {p}"),
        )),
        CenterMode::PMoment { .. } | CenterMode::Linear => Ok((
            (0..mesh.n_vertices()).collect(),
            metric.vertex_areas.clone(),
        )),
        CenterMode::WeightedInterior => {
            require_flat(mesh)?;
            let w = mesh.vertex_weights();
            Ok((
                (0..mesh.n_vertices()).collect(),
                metric
                    .vertex_areas
                    .iter()
                    .zip(&w)
                    .map(|(a, b)| a * b)
                    .collect(),
            ))
        }
        CenterMode::WeightedBoundary => {
            require_flat(mesh)?;
            if mesh.is_closed() {
                return Err(Error::InvalidMesh(
                    "boundary center on a closed mesh".into(),
                ));
            }
            let verts = mesh.boundary_vertices();
            let w = mesh.vertex_weights();
            let mut mass = vec![0.0; mesh.n_vertices()];
            for (a, b) in mesh.boundary_edges() {
                let l = mesh.ambient().distance(mesh.vertex(a), mesh.vertex(b));
                mass[a] += 0.5 * l * w[a];
                mass[b] += 0.5 * l * w[b];
            }
            let m = verts.iter().map(|&v| mass[v]).collect();
            Ok((verts, m))
        }
    }
}

fn require_flat(mesh: &ImmersedMesh) -> Result<()> {
    if mesh.ambient().is_euclidean() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(
            "weighted centers are defined for delta = 0".into(),
        ))
    }
}

/// `Th(r)/r`, equal to 1 at `r = 0`.
fn th_over_r(r: f64, delta: Delta) -> f64 {
    if r < 1e-8 {
        // Th(r)/r = 1 + delta r^2 / 3 + O(r^4)
        1.0 + delta.value() * r * r / 3.0
    } else {
        delta_trig(r, delta).th / r
    }
}

/// Moment integrand from normal coordinates. Returns `(Y, scale)` with
/// `scale = sum w |y|^{p-1}`.
struct Moment {
    y: DVector<f64>,
    scale: f64,
    /// Jacobi preconditioner `(p-1) sum w |y_i|^{p-2}` per component.
    diag: DVector<f64>,
}

fn accumulate(coords: &[DVector<f64>], weights: &[f64], mode: CenterMode, delta: Delta) -> Moment {
    let n = coords[0].len();
    let p = mode.exponent();
    let ys: Vec<DVector<f64>> = coords
        .iter()
        .map(|x| {
            if mode.uses_th() {
                x * th_over_r(x.norm(), delta)
            } else {
                x.clone()
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let mean_abs = ys
        .iter()
        .zip(weights)
        .map(|(y, w)| w * y.norm())
        .sum::<f64>()
        / total;
    let floor = 1e-8 * mean_abs.max(f64::MIN_POSITIVE);
    let mut out = DVector::zeros(n);
    let mut diag = DVector::zeros(n);
    let mut scale = 0.0;
    for (y, &w) in ys.iter().zip(weights) {
        scale += w * y.norm().powf(p - 1.0);
        for i in 0..n {
            let a = y[i].abs();
            if a > 0.0 {
                out[i] += w * a.powf(p - 1.0) * y[i].signum();
            }
            diag[i] += w * (p - 1.0) * a.max(floor).powf(p - 2.0);
        }
    }
    Moment {
        y: out,
        scale,
        diag,
    }
}

fn moment_at(
    amb: &Ambient,
    mesh: &ImmersedMesh,
    verts: &[usize],
    weights: &[f64],
    q: &AmbientPoint,
    mode: CenterMode,
) -> Moment {
    let frame = amb.standard_frame(q);
    let coords: Vec<DVector<f64>> = verts
        .iter()
        .map(|&v| amb.frame_coords(&frame, &amb.log(q, mesh.vertex(v))))
        .collect();
    accumulate(&coords, weights, mode, amb.delta())
}

/// Moment vector at `q` in an arbitrary orthonormal frame at `q`. For
/// `p != 2` the p-moment depends on the frame, so equivariance under an
/// isometry `g` holds with the frame carried along by `g`.
pub fn moment_in_frame(
    mesh: &ImmersedMesh,
    metric: &IntrinsicMetric,
    q: &AmbientPoint,
    frame: &[DVector<f64>],
    mode: CenterMode,
) -> Result<(DVector<f64>, f64)> {
    let (verts, w) = samples(mesh, metric, mode)?;
    let amb = mesh.ambient();
    let coords: Vec<DVector<f64>> = verts
        .iter()
        .map(|&v| amb.normal_coords(q, frame, mesh.vertex(v)))
        .collect::<Result<_>>()?;
    let m = accumulate(&coords, &w, mode, amb.delta());
    let res = m.y.norm() / m.scale;
    Ok((m.y, res))
}

/// Moment vector at `q` in the standard frame, and its residual.
pub fn moment_vector(
    mesh: &ImmersedMesh,
    metric: &IntrinsicMetric,
    q: &AmbientPoint,
    mode: CenterMode,
) -> Result<(DVector<f64>, f64)> {
    let (verts, w) = samples(mesh, metric, mode)?;
    let m = moment_at(mesh.ambient(), mesh, &verts, &w, q, mode);
    let res = m.y.norm() / m.scale;
    Ok((m.y, res))
}

/// The same moment vector computed by moving `q` to the origin with the
/// inverse boost and reading normal coordinates off the spatial part there.
/// Shares no geometry code with [`moment_vector`] beyond the isometry.
pub fn moment_vector_reintegrated(
    mesh: &ImmersedMesh,
    metric: &IntrinsicMetric,
    q: &AmbientPoint,
    mode: CenterMode,
) -> Result<(DVector<f64>, f64)> {
    let (verts, w) = samples(mesh, metric, mode)?;
    let amb = mesh.ambient();
    let back = Isometry::boost_to(amb, q).inverse(amb);
    let coords: Vec<DVector<f64>> = verts
        .iter()
        .map(|&v| {
            let x = back.apply_point(amb, mesh.vertex(v));
            if amb.is_euclidean() {
                return x.coords().clone();
            }
            let k = amb.delta().sqrt_neg();
            let s = x.coords().rows(1, amb.dim()).into_owned();
            let rho = s.norm();
            if rho == 0.0 {
                return s;
            }
            // |spatial| = sinh(k d)/k at distance d from the origin.
            let d = (k * rho).asinh() / k;
            s * (d / rho)
        })
        .collect();
    let m = accumulate(&coords, &w, mode, amb.delta());
    let res = m.y.norm() / m.scale;
    Ok((m.y, res))
}

/// Finds a zero of the moment map by a Jacobi-scaled fixed-point iteration
/// `q <- exp_q(tau Y / diag)` with step halving, switching to Newton steps
/// with a finite-difference Jacobian once the residual is small or the
/// fixed-point iteration stops improving.
pub fn find_center(
    mesh: &ImmersedMesh,
    metric: &IntrinsicMetric,
    mode: CenterMode,
    cfg: &CenterConfig,
) -> Result<CenterResult> {
    let (verts, w) = samples(mesh, metric, mode)?;
    let amb = *mesh.ambient();
    let n = amb.dim();
    let pts: Vec<AmbientPoint> = verts.iter().map(|&v| mesh.vertex(v).clone()).collect();
    let mut q = karcher_mean(&amb, &pts, Some(&w));
    let size = pts
        .iter()
        .map(|p| amb.distance(&q, p))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let eval = |q: &AmbientPoint| moment_at(&amb, mesh, &verts, &w, q, mode);
    let residual = |m: &Moment| m.y.norm() / m.scale;
    let step_to = |q: &AmbientPoint, s: &DVector<f64>| {
        amb.exp(q, &amb.from_frame(&amb.standard_frame(q), s.as_slice()))
    };

    let newton_dir = |q: &AmbientPoint, m: &Moment| -> DVector<f64> {
        let h = cfg.fd_step * size;
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = h;
            let plus = eval(&step_to(q, &e)).y;
            let minus = eval(&step_to(q, &(-&e))).y;
            jac.set_column(j, &((plus - minus) / (2.0 * h)));
        }
        match jac.lu().solve(&m.y) {
            Some(s) => -s,
            None => m.y.component_div(&m.diag),
        }
    };
    let mut m = eval(&q);
    let mut res = residual(&m);
    let mut tau = cfg.initial_step;
    let mut newton_steps = 0;
    let mut iterations = 0;
    let mut stagnant = 0;
    let mut converged = res <= cfg.tol;
    // Past the tolerance a few more steps push the point to rounding level,
    // so equivariance holds well below the residual tolerance.
    let mut polish = 0;
    while iterations < cfg.max_iter && polish < 5 {
        if converged {
            polish += 1;
        }
        iterations += 1;
        let use_newton = converged || res < 1e-3 || stagnant >= 3;
        let dir = if use_newton && newton_steps < cfg.newton_iter + 5 {
            newton_steps += 1;
            newton_dir(&q, &m)
        } else {
            m.y.component_div(&m.diag)
        };
        let mut accepted = false;
        let mut t = if use_newton { 1.0 } else { tau };
        for _ in 0..60 {
            let qn = step_to(&q, &(&dir * t));
            let mn = eval(&qn);
            let rn = residual(&mn);
            if rn < res {
                stagnant = if rn < 0.5 * res { 0 } else { stagnant + 1 };
                q = qn;
                m = mn;
                res = rn;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        if !use_newton {
            tau = (2.0 * t).min(cfg.initial_step);
        }
        converged = res <= cfg.tol;
    }
    if converged {
        debug!("center ({mode:?}): residual {res:.2e} after {iterations} iterations");
    } else {
        warn!("center ({mode:?}) not converged: residual {res:.2e} after {iterations} iterations");
    }
    Ok(CenterResult {
        q0: q,
        residual: res,
        iterations,
        mode,
        converged,
        initializer: "weighted Karcher mean of the samples".into(),
        newton_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MeshQuality;
    use crate::mesh::build_intrinsic_metric;
    use crate::scenes::{euclidean_ellipsoid, flat_disk, geodesic_sphere, perturbed_sphere};

    fn metric(mesh: &ImmersedMesh) -> IntrinsicMetric {
        build_intrinsic_metric(mesh, &MeshQuality::default()).unwrap()
    }

    #[test]
    fn sphere_center_is_found() {
        let mesh = geodesic_sphere(-1.0, 1.0, 3).unwrap();
        let off = Isometry::boost(mesh.ambient(), 0, 0.4);
        let mesh = mesh.transformed(&off);
        let target = off.apply_point(mesh.ambient(), &mesh.ambient().origin());
        let mt = metric(&mesh);
        for mode in [
            CenterMode::PMoment { p: 1.5 },
            CenterMode::PMoment { p: 2.0 },
            CenterMode::PMoment { p: 3.0 },
            CenterMode::PMoment { p: 4.0 },
            CenterMode::Linear,
        ] {
            let c = find_center(&mesh, &mt, mode, &CenterConfig::default()).unwrap();
            // For p < 2 the moment is only Holder continuous at vertices on a
            // coordinate plane of the frame, which caps the reachable residual.
            let tol = if mode.exponent() < 2.0 { 1e-9 } else { 1e-10 };
            assert!(c.converged && c.residual <= tol, "{mode:?}: {}", c.residual);
            assert!(mesh.ambient().distance(&c.q0, &target) < 1e-9, "{mode:?}");
        }
    }

    #[test]
    fn perturbed_sphere_converges_quickly() {
        let mesh = perturbed_sphere(-1.0, 1.0, 0.05, 2, 3).unwrap();
        let mt = metric(&mesh);
        let c = find_center(
            &mesh,
            &mt,
            CenterMode::PMoment { p: 2.0 },
            &CenterConfig::default(),
        )
        .unwrap();
        assert!(
            c.converged && c.residual <= 1e-9 && c.iterations <= 60,
            "{c:?}"
        );
        let (y, res) = moment_vector_reintegrated(&mesh, &mt, &c.q0, c.mode).unwrap();
        assert!(res <= 1e-9, "{y}");
    }

    #[test]
    fn reintegration_matches_direct_moment() {
        let mesh = perturbed_sphere(-1.0, 1.0, 0.2, 3, 2).unwrap();
        let mt = metric(&mesh);
        let q = mesh.ambient().lift(&[0.2, -0.1, 0.3]).unwrap();
        for mode in [CenterMode::PMoment { p: 1.7 }, CenterMode::Linear] {
            let (a, _) = moment_vector(&mesh, &mt, &q, mode).unwrap();
            let (b, _) = moment_vector_reintegrated(&mesh, &mt, &q, mode).unwrap();
            assert!((&a - &b).amax() < 1e-11 * a.amax(), "{a} {b}");
        }
    }

    #[test]
    fn isometry_equivariance() {
        let mesh = perturbed_sphere(-1.0, 0.8, 0.2, 3, 2).unwrap();
        let amb = *mesh.ambient();
        let g = Isometry::boost(&amb, 1, 0.7).compose(&Isometry::rotation(&amb, 0, 2, 0.9));
        let moved = mesh.transformed(&g);
        let (m0, m1) = (metric(&mesh), metric(&moved));
        let cfg = CenterConfig::default();
        let a = find_center(&mesh, &m0, CenterMode::Linear, &cfg).unwrap();
        let b = find_center(&moved, &m1, CenterMode::Linear, &cfg).unwrap();
        let ga = g.apply_point(&amb, &a.q0);
        assert!(
            amb.distance(&ga, &b.q0) < 1e-9,
            "{}",
            amb.distance(&ga, &b.q0)
        );
        // p != 2: the moved center is a zero of the moment in the moved frame.
        let mode = CenterMode::PMoment { p: 3.0 };
        let a = find_center(&mesh, &m0, mode, &cfg).unwrap();
        let frame: Vec<DVector<f64>> = amb
            .standard_frame(&a.q0)
            .iter()
            .map(|e| g.apply_vector(e))
            .collect();
        let (_, res) =
            moment_in_frame(&moved, &m1, &g.apply_point(&amb, &a.q0), &frame, mode).unwrap();
        assert!(res < 1e-9, "{res}");
    }

    #[test]
    fn p_two_moment_is_the_linear_center() {
        let mesh = perturbed_sphere(-1.0, 1.0, 0.3, 2, 2).unwrap();
        let mt = metric(&mesh);
        let cfg = CenterConfig::default();
        let a = find_center(&mesh, &mt, CenterMode::PMoment { p: 2.0 }, &cfg).unwrap();
        let b = find_center(&mesh, &mt, CenterMode::Linear, &cfg).unwrap();
        assert!(mesh.ambient().distance(&a.q0, &b.q0) < 1e-9);
    }

    #[test]
    fn moment_points_inward_from_far_away() {
        let mesh = perturbed_sphere(-1.0, 0.5, 0.2, 3, 2).unwrap();
        let mt = metric(&mesh);
        let amb = *mesh.ambient();
        let o = amb.origin();
        for (axis, t) in [(0, 4.0), (1, 5.0), (2, -6.0)] {
            let q = Isometry::boost(&amb, axis, t).apply_point(&amb, &o);
            for mode in [CenterMode::PMoment { p: 1.5 }, CenterMode::Linear] {
                let (y, _) = moment_vector(&mesh, &mt, &q, mode).unwrap();
                let to_center = amb.frame_coords(&amb.standard_frame(&q), &amb.log(&q, &o));
                assert!(y.dot(&to_center) > 0.0, "{axis} {mode:?} {y} {to_center}");
            }
        }
    }

    #[test]
    fn weighted_centers_in_flat_space() {
        let mesh = euclidean_ellipsoid([1.0, 1.3, 0.7], 2).unwrap();
        let shift = Isometry::boost_to(
            mesh.ambient(),
            &mesh.ambient().point_from_slice(&[0.3, -0.2, 0.5]).unwrap(),
        );
        let mesh = mesh.transformed(&shift);
        let mt = metric(&mesh);
        let c = find_center(
            &mesh,
            &mt,
            CenterMode::WeightedInterior,
            &CenterConfig::default(),
        )
        .unwrap();
        assert!(c.converged);
        let disk = flat_disk(1.0, 1).unwrap();
        let c = find_center(
            &disk,
            &metric(&disk),
            CenterMode::WeightedBoundary,
            &CenterConfig::default(),
        )
        .unwrap();
        assert!(c.converged && c.q0.coords().norm() < 1e-12);
        let hyp = geodesic_sphere(-1.0, 1.0, 1).unwrap();
        assert!(find_center(
            &hyp,
            &metric(&hyp),
            CenterMode::WeightedInterior,
            &CenterConfig::default()
        )
        .is_err());
    }

    #[test]
    fn rejects_p_at_most_one() {
        let mesh = geodesic_sphere(-1.0, 1.0, 1).unwrap();
        assert!(find_center(
            &mesh,
            &metric(&mesh),
            CenterMode::PMoment { p: 1.0 },
            &CenterConfig::default()
        )
        .is_err());
    }
}
