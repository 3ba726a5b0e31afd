//! Analytic test surfaces.
//!
//! Spheres are subdivided icosahedra (level `l` has `10 * 4^l + 2` vertices;
//! every level keeps the previous level's vertices at the same indices), tori
//! are structured grids, and the flat disk is built from concentric rings.

use std::collections::HashMap;
use std::f64::consts::PI;

use log::warn;
use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypgeo::{Ambient, AmbientPoint, Delta};
use crate::mesh::ImmersedMesh;

/// Unit icosphere by repeated midpoint subdivision.
pub fn icosphere(level: usize) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|c| Vector3::new(c[0], c[1], c[2]).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(4 * faces.len());
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        for f in &faces {
            let ab = midpoint(f[0], f[1], &mut verts);
            let bc = midpoint(f[1], f[2], &mut verts);
            let ca = midpoint(f[2], f[0], &mut verts);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    (verts, faces)
}

/// Radial graph over the unit sphere: vertex `u` goes to
/// `exp_center(radius(u) * u)` in the standard frame at `center`.
pub fn radial_surface(
    ambient: Ambient,
    center: &AmbientPoint,
    level: usize,
    radius: impl Fn(&Vector3<f64>) -> f64,
) -> Result<ImmersedMesh> {
    if ambient.dim() < 3 {
        return Err(Error::InvalidParameter(
            "radial surfaces need ambient dimension >= 3".into(),
        ));
    }
    let (dirs, faces) = icosphere(level);
    let frame = ambient.standard_frame(center);
    let verts = dirs
        .iter()
        .map(|u| {
            let r = radius(u);
            let v = ambient.from_frame(&frame, &[r * u.x, r * u.y, r * u.z]);
            ambient.exp(center, &v)
        })
        .collect();
    ImmersedMesh::new(ambient, verts, faces)
}

fn ambient_for(delta: f64, dim: usize) -> Result<Ambient> {
    Ambient::new(Delta::new(delta)?, dim)
}

/// Geodesic sphere of radius `rho` about the origin of `H^3(delta)`.
pub fn geodesic_sphere(delta: f64, rho: f64, level: usize) -> Result<ImmersedMesh> {
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sphere radius must be positive, got {rho}"
        )));
    }
    let amb = Ambient::hyperbolic(delta, 3)?;
    radial_surface(amb, &amb.origin(), level, |_| rho)
}

/// Legendre polynomial `P_l(x)` by the three-term recurrence.
pub fn legendre(l: usize, x: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, x);
    if l == 0 {
        return p0;
    }
    for k in 1..l {
        let k = k as f64;
        let p2 = ((2.0 * k + 1.0) * x * p1 - k * p0) / (k + 1.0);
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Sphere with radial profile `rho (1 + amplitude P_mode(u_z))`. The relative
/// amplitude must stay below 1/2 for the profile to stay well inside the
/// star-shaped regime; larger values up to 1 only warn.
pub fn perturbed_sphere(
    delta: f64,
    rho: f64,
    amplitude: f64,
    mode: usize,
    level: usize,
) -> Result<ImmersedMesh> {
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sphere radius must be positive, got {rho}"
        )));
    }
    if !(amplitude.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "relative amplitude {amplitude} makes the radial profile vanish"
        )));
    }
    if amplitude.abs() >= 0.5 {
        warn!(
            "relative amplitude {amplitude} is outside the validated range; the surface may fold"
        );
    }
    let amb = ambient_for(delta, 3)?;
    radial_surface(amb, &amb.origin(), level, |u| {
        rho * (1.0 + amplitude * legendre(mode, u.z))
    })
}

/// Euclidean round sphere of the given radius about the origin of `R^3`.
pub fn euclidean_sphere(radius: f64, level: usize) -> Result<ImmersedMesh> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let amb = Ambient::euclidean(3)?;
    radial_surface(amb, &amb.origin(), level, |_| radius)
}

/// Ellipsoid `x^2/a^2 + y^2/b^2 + z^2/c^2 = 1` in `R^3`.
pub fn euclidean_ellipsoid(axes: [f64; 3], level: usize) -> Result<ImmersedMesh> {
    if axes.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "ellipsoid axes must be positive, got {axes:?}"
        )));
    }
    let amb = Ambient::euclidean(3)?;
    let (dirs, faces) = icosphere(level);
    let verts = dirs
        .iter()
        .map(|u| amb.point_from_slice(&[axes[0] * u.x, axes[1] * u.y, axes[2] * u.z]))
        .collect::<Result<_>>()?;
    ImmersedMesh::new(amb, verts, faces)
}

/// Tube of radius `tube_radius` around the circle of radius `circle_radius`
/// in the `(e1, e2)` plane through the origin. In `H^3` the tube's second
/// normal direction is the transported `e3`; in four dimensions it rotates
/// once around the circle, `cos(t) e3 + sin(t) e4`, which makes the torus a
/// genuinely codimension-two surface.
pub fn tube_torus(
    delta: f64,
    circle_radius: f64,
    tube_radius: f64,
    ambient_dim: usize,
    level: usize,
) -> Result<ImmersedMesh> {
    if !(3..=4).contains(&ambient_dim) {
        return Err(Error::InvalidParameter(format!(
            "tube torus supports ambient dimension 3 or 4, got {ambient_dim}"
        )));
    }
    if !(circle_radius > 0.0 && tube_radius > 0.0) {
        return Err(Error::InvalidParameter(
            "torus radii must be positive".into(),
        ));
    }
    if tube_radius >= circle_radius {
        warn!("tube radius {tube_radius} reaches the focal distance of the core circle; the tube may self-intersect");
    }
    let amb = ambient_for(delta, ambient_dim)?;
    let o = amb.origin();
    let n_theta = 32usize << level;
    let n_phi = 8usize << level;
    let o_frame = amb.standard_frame(&o);
    let mut verts = Vec::with_capacity(n_theta * n_phi);
    for i in 0..n_theta {
        let t = 2.0 * PI * i as f64 / n_theta as f64;
        let (st, ct) = t.sin_cos();
        let c = amb.exp(
            &o,
            &amb.from_frame(&o_frame, &[circle_radius * ct, circle_radius * st]),
        );
        let f = amb.standard_frame(&c);
        let normal: DVector<f64> = &f[0] * ct + &f[1] * st;
        let binormal: DVector<f64> = if ambient_dim == 3 {
            f[2].clone()
        } else {
            &f[2] * ct + &f[3] * st
        };
        for j in 0..n_phi {
            let p = 2.0 * PI * j as f64 / n_phi as f64;
            let v = (&normal * p.cos() + &binormal * p.sin()) * tube_radius;
            verts.push(amb.exp(&c, &v));
        }
    }
    let idx = |i: usize, j: usize| (i % n_theta) * n_phi + (j % n_phi);
    let mut faces = Vec::with_capacity(2 * n_theta * n_phi);
    for i in 0..n_theta {
        for j in 0..n_phi {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    ImmersedMesh::new(amb, verts, faces)
}

/// Flat disk of the given radius in the plane `z = 0` of `R^3`, built from
/// `4 * 2^level` concentric rings; ring `k` carries `6k` vertices.
pub fn flat_disk(radius: f64, level: usize) -> Result<ImmersedMesh> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let amb = Ambient::euclidean(3)?;
    let rings = 4usize << level;
    let mut pts: Vec<[f64; 2]> = vec![[0.0, 0.0]];
    let mut start = vec![0usize];
    for k in 1..=rings {
        start.push(pts.len());
        let r = radius * k as f64 / rings as f64;
        for j in 0..6 * k {
            let a = 2.0 * PI * j as f64 / (6 * k) as f64;
            pts.push([r * a.cos(), r * a.sin()]);
        }
    }
    let mut faces = Vec::with_capacity(6 * rings * rings);
    for j in 0..6 {
        faces.push([0, start[1] + j, start[1] + (j + 1) % 6]);
    }
    for k in 2..=rings {
        let (n_in, n_out) = (6 * (k - 1), 6 * k);
        let inner = |i: usize| start[k - 1] + i % n_in;
        let outer = |j: usize| start[k] + j % n_out;
        let (mut ti, mut tj) = (0usize, 0usize);
        while ti < n_in || tj < n_out {
            let next_in = (ti + 1) as f64 / n_in as f64;
            let next_out = (tj + 1) as f64 / n_out as f64;
            if tj < n_out && (ti == n_in || next_out <= next_in) {
                faces.push([inner(ti), outer(tj), outer(tj + 1)]);
                tj += 1;
            } else {
                faces.push([inner(ti), outer(tj), inner(ti + 1)]);
                ti += 1;
            }
        }
    }
    let verts = pts
        .iter()
        .map(|p| amb.point_from_slice(&[p[0], p[1], 0.0]))
        .collect::<Result<_>>()?;
    ImmersedMesh::new(amb, verts, faces)
}

/// Density `f` attached to a scene, giving the measure `e^{-f} dv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Constant {
        value: f64,
    },
    /// `f = scale * d(o, x)^2 / 2` about the ambient origin.
    Gaussian {
        scale: f64,
    },
}

impl DensitySpec {
    pub fn evaluate(&self, mesh: &ImmersedMesh) -> Vec<f64> {
        match *self {
            DensitySpec::Constant { value } => vec![value; mesh.n_vertices()],
            DensitySpec::Gaussian { scale } => {
                let o = mesh.ambient().origin();
                mesh.distance_field(&o)
                    .iter()
                    .map(|r| 0.5 * scale * r * r)
                    .collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneKind {
    GeodesicSphere {
        delta: f64,
        rho: f64,
    },
    PerturbedSphere {
        delta: f64,
        rho: f64,
        amplitude: f64,
        mode: usize,
    },
    TubeTorus {
        delta: f64,
        circle_radius: f64,
        tube_radius: f64,
        ambient_dim: usize,
    },
    EuclideanSphere {
        radius: f64,
    },
    EuclideanEllipsoid {
        axes: [f64; 3],
    },
    FlatDisk {
        radius: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SceneSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub kind: SceneKind,
    pub level: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensitySpec>,
    /// Recorded for reproducibility; the generators themselves are
    /// deterministic and do not draw random numbers.
    #[serde(default)]
    pub seed: u64,
}

// serde cannot combine `flatten` with `deny_unknown_fields`, so the common
// keys are split off by hand and the rest goes to the tagged kind.
impl<'de> Deserialize<'de> for SceneSpec {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let mut map = serde_json::Map::<String, serde_json::Value>::deserialize(de)?;
        let mut take = |k: &str| map.remove(k);
        let name = take("name")
            .map(serde_json::from_value)
            .transpose()
            .map_err(D::Error::custom)?;
        let level = take("level")
            .ok_or_else(|| D::Error::missing_field("level"))
            .and_then(|v| serde_json::from_value(v).map_err(D::Error::custom))?;
        let density = take("density")
            .map(serde_json::from_value)
            .transpose()
            .map_err(D::Error::custom)?;
        let seed = take("seed")
            .map(serde_json::from_value)
            .transpose()
            .map_err(D::Error::custom)?
            .unwrap_or(0);
        let kind =
            serde_json::from_value(serde_json::Value::Object(map)).map_err(D::Error::custom)?;
        Ok(SceneSpec {
            name,
            kind,
            level,
            density,
            seed,
        })
    }
}

impl SceneSpec {
    pub fn new(kind: SceneKind, level: usize) -> Self {
        SceneSpec {
            name: None,
            kind,
            level,
            density: None,
            seed: 0,
        }
    }

    pub fn with_density(mut self, density: DensitySpec) -> Self {
        self.density = Some(density);
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    /// A short label, the explicit name when given.
    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let base = match &self.kind {
            SceneKind::GeodesicSphere { delta, rho } => {
                format!("geodesic_sphere(d={delta},rho={rho})")
            }
            SceneKind::PerturbedSphere {
                delta,
                rho,
                amplitude,
                mode,
            } => format!("perturbed_sphere(d={delta},rho={rho},a={amplitude},l={mode})"),
            SceneKind::TubeTorus {
                delta,
                circle_radius,
                tube_radius,
                ambient_dim,
            } => {
                format!("tube_torus(d={delta},R={circle_radius},eps={tube_radius},n={ambient_dim})")
            }
            SceneKind::EuclideanSphere { radius } => format!("euclidean_sphere(R={radius})"),
            SceneKind::EuclideanEllipsoid { axes } => {
                format!("euclidean_ellipsoid({},{},{})", axes[0], axes[1], axes[2])
            }
            SceneKind::FlatDisk { radius } => format!("flat_disk(R={radius})"),
        };
        format!("{base}@{}", self.level)
    }

    pub fn build(&self) -> Result<ImmersedMesh> {
        let l = self.level;
        let mesh = match self.kind {
            SceneKind::GeodesicSphere { delta, rho } => geodesic_sphere(delta, rho, l),
            SceneKind::PerturbedSphere {
                delta,
                rho,
                amplitude,
                mode,
            } => perturbed_sphere(delta, rho, amplitude, mode, l),
            SceneKind::TubeTorus {
                delta,
                circle_radius,
                tube_radius,
                ambient_dim,
            } => tube_torus(delta, circle_radius, tube_radius, ambient_dim, l),
            SceneKind::EuclideanSphere { radius } => euclidean_sphere(radius, l),
            SceneKind::EuclideanEllipsoid { axes } => euclidean_ellipsoid(axes, l),
            SceneKind::FlatDisk { radius } => flat_disk(radius, l),
        }?;
        match &self.density {
            Some(d) => {
                let f = d.evaluate(&mesh);
                mesh.with_density(f)
            }
            None => Ok(mesh),
        }
    }
}
