//! Property checks shared by the proptest suite and the acceptance harness.
//! Each returns `Err` with a readable message instead of panicking.
#![allow(dead_code)]

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reilly_core::center::{find_center, moment_in_frame, moment_vector, moment_vector_reintegrated, CenterMode};
use reilly_core::config::{CenterConfig, LinearSolverConfig, MeshQuality};
use reilly_core::curvature::{newton_tensor, second_fundamental_form};
use reilly_core::hypgeo::{delta_trig, th_prime, Delta, Isometry};
use reilly_core::mesh::{assemble, build_intrinsic_metric, AssemblyOptions, IntrinsicMetric};
use reilly_core::spectra::{lambda1_linear, PLaplacian};
use reilly_core::ImmersedMesh;

pub type Check = Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn metric(mesh: &ImmersedMesh) -> IntrinsicMetric {
    build_intrinsic_metric(mesh, &MeshQuality::default()).expect("valid mesh")
}

/// `cd^2 + delta sd^2 = 1`, `Th = sd/cd`, `Th' = 1 + delta Th^2`.
pub fn trig_identities(y: f64, delta: f64) -> Check {
    let d = Delta::new(delta).map_err(|e| e.to_string())?;
    let t = delta_trig(y, d);
    let scale = t.cd * t.cd;
    ensure((t.cd * t.cd + delta * t.sd * t.sd - 1.0).abs() <= 1e-12 * scale, || {
        format!("cd^2 + delta sd^2 != 1 at y={y}, delta={delta}")
    })?;
    ensure((t.th - t.sd / t.cd).abs() <= 1e-12 * t.th.abs().max(1.0), || {
        format!("Th != sd/cd at y={y}, delta={delta}")
    })?;
    let tp = th_prime(y, d);
    ensure((tp - (1.0 + delta * t.th * t.th)).abs() <= 1e-12, || {
        format!("Th' != 1 + delta Th^2 at y={y}, delta={delta}: {tp}")
    })
}

/// Constants in the kernel of the stiffness matrix and symmetry, for the
/// Laplacian and, for hypersurfaces, the Newton tensor operator.
pub fn stiffness_kernel_and_symmetry(mesh: &ImmersedMesh) -> Check {
    let m = metric(mesh);
    let curv = second_fundamental_form(mesh).map_err(|e| e.to_string())?;
    let t = if mesh.ambient().dim() == 3 {
        Some(newton_tensor(mesh, &curv).map_err(|e| e.to_string())?)
    } else {
        None
    };
    let mut cases = vec![("laplace", None)];
    if let Some(t) = &t {
        cases.push(("newton", Some(t)));
    }
    for (name, tensor) in cases {
        let ops = assemble(
            mesh,
            &m,
            AssemblyOptions {
                tensor,
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let k = &ops.stiffness;
        let scale = k.max_abs();
        let row = k.row_sums().into_iter().map(f64::abs).fold(0.0, f64::max);
        ensure(row <= 1e-12 * scale, || format!("{name}: K 1 has entry {row:e} (scale {scale:e})"))?;
        let asym = k.asymmetry();
        ensure(asym <= 1e-12 * scale, || format!("{name}: asymmetry {asym:e}"))?;
    }
    Ok(())
}

/// Analytic gradient of the p-Rayleigh quotient against central differences
/// at a random field, relative to the gradient's sup norm.
pub fn plap_gradient(mesh: &ImmersedMesh, p: f64, seed: u64) -> Check {
    let m = metric(mesh);
    let pl = PLaplacian::new(mesh, &m, p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = mesh
        .vertices()
        .iter()
        .map(|x| x.coords()[1] + 0.3 * x.coords()[2].powi(2) + 0.05 * rng.random_range(-1.0..1.0))
        .collect();
    let (_, g) = pl.value_and_gradient(&u);
    let gmax = g.iter().copied().map(f64::abs).fold(0.0, f64::max);
    for _ in 0..6 {
        let i = rng.random_range(0..u.len());
        let h = 1e-5 * u.iter().copied().map(f64::abs).fold(0.0, f64::max);
        let mut up = u.clone();
        up[i] += h;
        let mut um = u.clone();
        um[i] -= h;
        let fd = (pl.quotient(&up) - pl.quotient(&um)) / (2.0 * h);
        ensure((fd - g[i]).abs() <= 1e-6 * gmax, || {
            format!("p={p} vertex {i}: analytic {} vs finite difference {fd}", g[i])
        })?;
    }
    Ok(())
}

/// The converged center's moment, recomputed through the inverse boost.
pub fn center_reintegration(mesh: &ImmersedMesh, mode: CenterMode) -> Check {
    let m = metric(mesh);
    let c = find_center(mesh, &m, mode, &CenterConfig::default()).map_err(|e| e.to_string())?;
    let (_, direct) = moment_vector(mesh, &m, &c.q0, mode).map_err(|e| e.to_string())?;
    let (_, re) = moment_vector_reintegrated(mesh, &m, &c.q0, mode).map_err(|e| e.to_string())?;
    ensure(c.converged && re <= 1e-9, || {
        format!("{mode:?}: converged={} direct residual {direct:e}, re-integrated {re:e}", c.converged)
    })
}

/// Edge lengths, first eigenvalue and moments (frame carried along) are
/// unchanged by an ambient isometry. For `p < 2` the moment is only
/// Holder-(p-1) in the coordinates, so rounding of size `eps` in a coordinate
/// near zero moves it by up to `eps^(p-1)`; that is the bound used there.
pub fn isometry_equivariance(mesh: &ImmersedMesh, boost: f64, angle: f64) -> Check {
    let amb = *mesh.ambient();
    let g = Isometry::boost(&amb, 1, boost).compose(&Isometry::rotation(&amb, 0, 2, angle));
    let moved = mesh.transformed(&g);
    let (m0, m1) = (metric(mesh), metric(&moved));
    for (a, b) in m0.lengths.iter().zip(&m1.lengths) {
        for k in 0..3 {
            ensure((a[k] - b[k]).abs() <= 1e-12 * a[k], || format!("edge length {} vs {}", a[k], b[k]))?;
        }
    }
    let lam = |mesh: &ImmersedMesh, m: &IntrinsicMetric| {
        let ops = assemble(mesh, m, AssemblyOptions::default()).map_err(|e| e.to_string())?;
        lambda1_linear(&ops, &LinearSolverConfig::default(), 1).map(|r| r.eigenvalue).map_err(|e| e.to_string())
    };
    let (l0, l1) = (lam(mesh, &m0)?, lam(&moved, &m1)?);
    ensure((l0 - l1).abs() <= 1e-12 * l0, || format!("lambda_1 {l0} vs {l1}"))?;
    let q = Isometry::boost(&amb, 0, 0.2).apply_point(&amb, &amb.origin());
    let frame = amb.standard_frame(&q);
    let gframe: Vec<DVector<f64>> = frame.iter().map(|e| g.apply_vector(e)).collect();
    for mode in [CenterMode::Linear, CenterMode::PMoment { p: 3.0 }, CenterMode::PMoment { p: 1.5 }] {
        let (y0, _) = moment_in_frame(mesh, &m0, &q, &frame, mode).map_err(|e| e.to_string())?;
        let (y1, _) = moment_in_frame(&moved, &m1, &g.apply_point(&amb, &q), &gframe, mode).map_err(|e| e.to_string())?;
        let err = (&y0 - &y1).amax();
        let tol = match mode {
            CenterMode::PMoment { p } if p < 2.0 => 1e4 * f64::EPSILON.powf(p - 1.0),
            _ => 1e-12,
        };
        ensure(err <= tol * y0.amax().max(1.0), || format!("{mode:?}: moment differs by {err:e}"))?;
    }
    Ok(())
}

/// `lambda_1(c^2 delta, L/c) = c^2 lambda_1(delta, L)`.
pub fn scaling_covariance(mesh: &ImmersedMesh, c: f64) -> Check {
    let scaled = mesh.scaled(c).map_err(|e| e.to_string())?;
    let lam = |mesh: &ImmersedMesh| {
        let ops = assemble(mesh, &metric(mesh), AssemblyOptions::default()).map_err(|e| e.to_string())?;
        lambda1_linear(&ops, &LinearSolverConfig::default(), 1).map(|r| r.eigenvalue).map_err(|e| e.to_string())
    };
    let (l0, l1) = (lam(mesh)?, lam(&scaled)?);
    ensure((l1 - c * c * l0).abs() <= 1e-6 * c * c * l0, || {
        format!("c={c}: lambda_1 {l1} vs c^2 lambda_1 {}", c * c * l0)
    })
}
