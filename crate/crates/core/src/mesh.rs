//! Immersed triangle meshes, their intrinsic flat metric, quadrature and
//! finite element operators.
//!
//! Each face is replaced by the flat triangle whose side lengths are the
//! ambient geodesic distances between its corners. Everything downstream
//! (areas, gradients, stiffness and mass) lives on those flat triangles, so no
//! chart of the ambient is ever needed.

use std::collections::HashMap;
use std::path::Path;

use log::warn;
use nalgebra::{DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::config::MeshQuality;
use crate::curvature::{TensorField, TensorKind};
use crate::error::{Error, Result};
use crate::hypgeo::{Ambient, AmbientPoint, Delta, Isometry};
use crate::sparse::CsrMatrix;

/// Per-vertex values on a mesh.
pub type ScalarField = Vec<f64>;

#[derive(Clone, Debug)]
pub struct ImmersedMesh {
    ambient: Ambient,
    vertices: Vec<AmbientPoint>,
    faces: Vec<[usize; 3]>,
    density: Vec<f64>,
    boundary: Vec<Vec<usize>>,
    vertex_faces: Vec<Vec<usize>>,
    neighbors: Vec<Vec<usize>>,
}

impl ImmersedMesh {
    /// Validates combinatorics (manifold edges, consistent orientation,
    /// connectivity, no isolated vertices) and extracts boundary loops.
    pub fn new(
        ambient: Ambient,
        vertices: Vec<AmbientPoint>,
        faces: Vec<[usize; 3]>,
    ) -> Result<Self> {
        let nv = vertices.len();
        if faces.is_empty() {
            return Err(Error::InvalidMesh("mesh has no faces".into()));
        }
        for v in &vertices {
            if v.coords().len() != ambient.coord_len() {
                return Err(Error::DimensionMismatch {
                    expected: ambient.coord_len(),
                    found: v.coords().len(),
                });
            }
        }
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= nv) {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} references a missing vertex"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::DegenerateFace {
                    face: fi,
                    reason: "repeated vertex index".into(),
                });
            }
            for k in 0..3 {
                let e = (f[k], f[(k + 1) % 3]);
                if directed.insert(e, fi).is_some() {
                    return Err(Error::InvalidMesh(format!(
                        "edge ({}, {}) is used twice with the same orientation (non-manifold or inconsistently oriented)",
                        e.0, e.1
                    )));
                }
            }
        }

        let mut vertex_faces = vec![Vec::new(); nv];
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                vertex_faces[v].push(fi);
            }
        }
        if let Some(v) = vertex_faces.iter().position(|f| f.is_empty()) {
            return Err(Error::InvalidMesh(format!("vertex {v} belongs to no face")));
        }
        let mut neighbors = vec![Vec::new(); nv];
        for &(a, b) in directed.keys() {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
            n.dedup();
        }

        let components = count_components(nv, &faces);
        if components > 1 {
            return Err(Error::DisconnectedMesh { components });
        }

        // Boundary edges are directed edges whose reverse is missing.
        let mut next: HashMap<usize, usize> = HashMap::new();
        for &(a, b) in directed.keys() {
            if !directed.contains_key(&(b, a)) && next.insert(a, b).is_some() {
                return Err(Error::InvalidMesh(format!(
                    "vertex {a} is a non-manifold boundary vertex"
                )));
            }
        }
        let mut starts: Vec<usize> = next.keys().copied().collect();
        starts.sort_unstable();
        let mut seen = vec![false; nv];
        let mut boundary = Vec::new();
        for s in starts {
            if seen[s] {
                continue;
            }
            let mut lp = vec![s];
            seen[s] = true;
            let mut cur = next[&s];
            while cur != s {
                if seen[cur] {
                    return Err(Error::InvalidMesh("boundary loops intersect".into()));
                }
                seen[cur] = true;
                lp.push(cur);
                cur = *next
                    .get(&cur)
                    .ok_or_else(|| Error::InvalidMesh("open boundary chain".into()))?;
            }
            boundary.push(lp);
        }

        Ok(ImmersedMesh {
            ambient,
            density: vec![0.0; nv],
            vertices,
            faces,
            boundary,
            vertex_faces,
            neighbors,
        })
    }

    pub fn with_density(mut self, f: ScalarField) -> Result<Self> {
        if f.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch {
                expected: self.vertices.len(),
                found: f.len(),
            });
        }
        if f.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("density must be finite".into()));
        }
        self.density = f;
        Ok(self)
    }

    #[inline]
    pub fn ambient(&self) -> &Ambient {
        &self.ambient
    }

    #[inline]
    pub fn delta(&self) -> Delta {
        self.ambient.delta()
    }

    #[inline]
    pub fn vertices(&self) -> &[AmbientPoint] {
        &self.vertices
    }

    #[inline]
    pub fn vertex(&self, i: usize) -> &AmbientPoint {
        &self.vertices[i]
    }

    #[inline]
    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    #[inline]
    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn has_density(&self) -> bool {
        self.density.iter().any(|&f| f != 0.0)
    }

    #[inline]
    pub fn boundary(&self) -> &[Vec<usize>] {
        &self.boundary
    }

    pub fn is_closed(&self) -> bool {
        self.boundary.is_empty()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn vertex_faces(&self, v: usize) -> &[usize] {
        &self.vertex_faces[v]
    }

    /// Sorted one-ring neighbours.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    /// Vertices within `k` edges of `v`, excluding `v`, in BFS order.
    pub fn k_ring(&self, v: usize, k: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut seen = HashMap::new();
        seen.insert(v, 0usize);
        let mut frontier = vec![v];
        for depth in 1..=k {
            let mut next = Vec::new();
            for &u in &frontier {
                for &w in &self.neighbors[u] {
                    if let std::collections::hash_map::Entry::Vacant(e) = seen.entry(w) {
                        e.insert(depth);
                        next.push(w);
                        out.push(w);
                    }
                }
            }
            frontier = next;
        }
        out
    }

    /// Boundary vertices in loop order.
    pub fn boundary_vertices(&self) -> Vec<usize> {
        self.boundary.iter().flatten().copied().collect()
    }

    /// Boundary edges `(a, b)` following the loops.
    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for lp in &self.boundary {
            for i in 0..lp.len() {
                out.push((lp[i], lp[(i + 1) % lp.len()]));
            }
        }
        out
    }

    /// Applies an ambient isometry to every vertex.
    pub fn transformed(&self, iso: &Isometry) -> Self {
        let mut out = self.clone();
        out.vertices = self
            .vertices
            .iter()
            .map(|p| iso.apply_point(&self.ambient, p))
            .collect();
        out
    }

    /// The same surface seen through the model map `(delta, L) -> (c^2 delta, L/c)`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let ambient = self.ambient.scaled(c)?;
        let mut out = self.clone();
        out.vertices = self
            .vertices
            .iter()
            .map(|p| ambient.point(self.ambient.scale_point(p, c).coords().clone()))
            .collect::<Result<_>>()?;
        out.ambient = ambient;
        Ok(out)
    }

    /// `max_v d(q0, v)`; a geodesic ball of that radius about `q0` contains the
    /// mesh vertices, and such balls are convex in the ambients we support.
    pub fn enclosing_radius(&self, q0: &AmbientPoint) -> f64 {
        self.vertices
            .iter()
            .map(|v| self.ambient.distance(q0, v))
            .fold(0.0, f64::max)
    }

    /// Tangent frame from Gram-Schmidt on two incident edge directions. Only
    /// pointwise contractions may rely on these frames; they are not
    /// consistent between neighbouring vertices.
    pub fn edge_frame(&self, v: usize) -> [DVector<f64>; 2] {
        let f = self.faces[self.vertex_faces[v][0]];
        let k = f.iter().position(|&i| i == v).unwrap();
        let (a, b) = (f[(k + 1) % 3], f[(k + 2) % 3]);
        let amb = &self.ambient;
        let p = &self.vertices[v];
        let ea = amb.log(p, &self.vertices[a]);
        let eb = amb.log(p, &self.vertices[b]);
        let t1 = &ea / amb.norm(&ea);
        let e2 = &eb - &t1 * amb.inner(&t1, &eb);
        let t2 = &e2 / amb.norm(&e2);
        [t1, t2]
    }

    /// Unit distance field `r(v) = d(q0, v)`.
    pub fn distance_field(&self, q0: &AmbientPoint) -> ScalarField {
        self.vertices
            .iter()
            .map(|v| self.ambient.distance(q0, v))
            .collect()
    }

    /// Weights `e^{-f}` at the vertices.
    pub fn vertex_weights(&self) -> Vec<f64> {
        self.density.iter().map(|f| (-f).exp()).collect()
    }

    pub fn to_file(&self, tensor: Option<&TensorField>) -> MeshFile {
        MeshFile {
            delta: self.delta().value(),
            ambient_dim: self.ambient.dim(),
            vertices: self.vertices.iter().map(|v| v.to_vec()).collect(),
            faces: self.faces.clone(),
            density: self.has_density().then(|| self.density.clone()),
            tensor: tensor.map(|t| t.to_entries()),
            boundary: (!self.boundary.is_empty()).then(|| self.boundary.clone()),
        }
    }

    pub fn save(&self, path: &Path, tensor: Option<&TensorField>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), &self.to_file(tensor))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Option<TensorField>)> {
        let text = std::fs::read_to_string(path)?;
        let file: MeshFile = serde_json::from_str(&text)?;
        file.into_mesh()
    }
}

fn count_components(nv: usize, faces: &[[usize; 3]]) -> usize {
    let mut parent: Vec<usize> = (0..nv).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for f in faces {
        for k in 1..3 {
            let (a, b) = (find(&mut parent, f[0]), find(&mut parent, f[k]));
            if a != b {
                parent[a] = b;
            }
        }
    }
    (0..nv).filter(|&i| find(&mut parent, i) == i).count()
}

/// Serialized tensor at one vertex: the 2x2 matrix in the stored frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub frame: [Vec<f64>; 2],
    pub value: [[f64; 2]; 2],
}

/// On-disk mesh format. Vertices are ambient coordinates, never chart
/// coordinates, so files are portable across curvature values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshFile {
    pub delta: f64,
    pub ambient_dim: usize,
    pub vertices: Vec<Vec<f64>>,
    pub faces: Vec<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tensor: Option<Vec<TensorEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<Vec<Vec<usize>>>,
}

impl MeshFile {
    pub fn into_mesh(self) -> Result<(ImmersedMesh, Option<TensorField>)> {
        let ambient = Ambient::new(Delta::new(self.delta)?, self.ambient_dim)?;
        let vertices = self
            .vertices
            .iter()
            .enumerate()
            .map(|(i, c)| {
                ambient.point_from_slice(c).map_err(|e| match e {
                    Error::InvalidPoint(msg) => Error::InvalidPoint(format!("vertex {i}: {msg}")),
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut mesh = ImmersedMesh::new(ambient, vertices, self.faces)?;
        if let Some(d) = self.density {
            mesh = mesh.with_density(d)?;
        }
        if let Some(b) = self.boundary {
            if b != mesh.boundary {
                return Err(Error::InvalidMesh(
                    "declared boundary loops do not match the mesh boundary".into(),
                ));
            }
        }
        let tensor = self
            .tensor
            .map(|entries| TensorField::from_entries(&mesh, &entries))
            .transpose()?;
        Ok((mesh, tensor))
    }
}

/// A face laid out in the plane: corners and gradients of the hat functions.
#[derive(Clone, Copy, Debug)]
pub struct FaceLayout {
    pub corners: [Vector2<f64>; 3],
    pub grads: [Vector2<f64>; 3],
    pub area: f64,
}

/// Intrinsic flat metric: edge lengths, areas and layouts for every face.
#[derive(Clone, Debug)]
pub struct IntrinsicMetric {
    /// `lengths[f][k]` is the length of the edge opposite corner `k`.
    pub lengths: Vec<[f64; 3]>,
    pub layouts: Vec<FaceLayout>,
    pub vertex_areas: Vec<f64>,
    pub min_angle_deg: f64,
    /// Longest edge, the mesh size `h`.
    pub max_edge: f64,
    pub mean_edge: f64,
}

impl IntrinsicMetric {
    pub fn areas(&self) -> impl Iterator<Item = f64> + '_ {
        self.layouts.iter().map(|l| l.area)
    }

    pub fn total_area(&self) -> f64 {
        self.areas().sum()
    }
}

/// Area of a triangle with side lengths `a, b, c`, stable for needles.
/// Returns `None` when the triangle inequality fails.
pub fn kahan_area(a: f64, b: f64, c: f64) -> Option<f64> {
    let mut s = [a, b, c];
    s.sort_by(|x, y| y.total_cmp(x));
    let [a, b, c] = s;
    let t = c - (a - b);
    if t < 0.0 {
        return None;
    }
    let prod = (a + (b + c)) * t * (c + (a - b)) * (a + (b - c));
    Some(0.25 * prod.max(0.0).sqrt())
}

pub fn build_intrinsic_metric(
    mesh: &ImmersedMesh,
    quality: &MeshQuality,
) -> Result<IntrinsicMetric> {
    let amb = mesh.ambient();
    let mut lengths = Vec::with_capacity(mesh.n_faces());
    let mut layouts = Vec::with_capacity(mesh.n_faces());
    let mut vertex_areas = vec![0.0; mesh.n_vertices()];
    let mut min_angle = f64::INFINITY;
    let mut max_edge = 0.0f64;
    let mut edge_sum = 0.0;
    let mut warned = 0usize;
    for (fi, f) in mesh.faces().iter().enumerate() {
        let [v0, v1, v2] = f.map(|i| mesh.vertex(i));
        let l = [
            amb.distance(v1, v2),
            amb.distance(v0, v2),
            amb.distance(v0, v1),
        ];
        let area = kahan_area(l[0], l[1], l[2]).ok_or_else(|| Error::DegenerateFace {
            face: fi,
            reason: format!("edge lengths {l:?} violate the triangle inequality"),
        })?;
        if !(area > quality.min_area) {
            return Err(Error::DegenerateFace {
                face: fi,
                reason: format!(
                    "intrinsic area {area:.3e} is below {:.1e}",
                    quality.min_area
                ),
            });
        }
        let angle = min_angle_deg(&l);
        if angle < quality.error_angle_deg {
            return Err(Error::DegenerateFace {
                face: fi,
                reason: format!("minimum angle {angle:.3} deg"),
            });
        }
        if angle < quality.warn_angle_deg {
            warned += 1;
        }
        min_angle = min_angle.min(angle);
        max_edge = max_edge.max(l[0].max(l[1]).max(l[2]));
        edge_sum += l[0] + l[1] + l[2];
        let layout = layout_face(&l, area);
        for &v in f {
            vertex_areas[v] += area / 3.0;
        }
        lengths.push(l);
        layouts.push(layout);
    }
    if warned > 0 {
        warn!(
            "{warned} faces have a minimum angle below {} deg (worst {min_angle:.2})",
            quality.warn_angle_deg
        );
    }
    Ok(IntrinsicMetric {
        lengths,
        layouts,
        vertex_areas,
        min_angle_deg: min_angle,
        max_edge,
        mean_edge: edge_sum / (3 * mesh.n_faces()) as f64,
    })
}

fn min_angle_deg(l: &[f64; 3]) -> f64 {
    (0..3)
        .map(|k| {
            let (a, b, c) = (l[k], l[(k + 1) % 3], l[(k + 2) % 3]);
            let cos = ((b * b + c * c - a * a) / (2.0 * b * c)).clamp(-1.0, 1.0);
            cos.acos().to_degrees()
        })
        .fold(f64::INFINITY, f64::min)
}

fn layout_face(l: &[f64; 3], area: f64) -> FaceLayout {
    // Corner 0 at the origin, corner 1 on the x axis.
    let l01 = l[2];
    let l02 = l[1];
    let l12 = l[0];
    let x = (l01 * l01 + l02 * l02 - l12 * l12) / (2.0 * l01);
    let y = 2.0 * area / l01;
    let corners = [Vector2::zeros(), Vector2::new(l01, 0.0), Vector2::new(x, y)];
    // grad phi_k solves E^T g = e_k with E = [c1 - c0, c2 - c0].
    let e = Matrix2::new(l01, x, 0.0, y);
    let inv_t = e.transpose().try_inverse().expect("nondegenerate face");
    let g1 = inv_t * Vector2::new(1.0, 0.0);
    let g2 = inv_t * Vector2::new(0.0, 1.0);
    FaceLayout {
        corners,
        grads: [-(g1 + g2), g1, g2],
        area,
    }
}

/// Integral of a vertex field with lumped quadrature, optionally against
/// `e^{-f} dv`.
pub fn integrate(
    mesh: &ImmersedMesh,
    metric: &IntrinsicMetric,
    field: &[f64],
    weighted: bool,
) -> f64 {
    assert_eq!(
        field.len(),
        mesh.n_vertices(),
        "field length must match vertex count"
    );
    let mut s = 0.0;
    for (v, (&x, &a)) in field.iter().zip(&metric.vertex_areas).enumerate() {
        let w = if weighted {
            (-mesh.density()[v]).exp()
        } else {
            1.0
        };
        s += x * a * w;
    }
    s
}

/// Operators on the boundary of a mesh, indexed by position in
/// [`ImmersedMesh::boundary_vertices`].
#[derive(Clone, Debug)]
pub struct BoundaryOperators {
    pub vertices: Vec<usize>,
    /// Lumped boundary mass (half the adjacent boundary edge lengths),
    /// weighted by `e^{-f}` when requested.
    pub mass: Vec<f64>,
    /// Unweighted 1D stiffness of the boundary curve.
    pub stiffness: CsrMatrix,
    pub length: f64,
}

#[derive(Clone, Debug)]
pub struct AssembledOperators {
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
    /// Diagonal of the lumped mass, available even when `mass` is consistent.
    pub lumped_mass: Vec<f64>,
    pub boundary: Option<BoundaryOperators>,
    pub weighted: bool,
    pub consistent_mass: bool,
}

/// Options for [`assemble`].
#[derive(Clone, Copy, Debug, Default)]
pub struct AssemblyOptions<'a> {
    pub tensor: Option<&'a TensorField>,
    pub weighted: bool,
    pub consistent_mass: bool,
}

/// Linear finite element stiffness `int <T grad u, grad u> e^{-f}` and mass
/// `int u^2 e^{-f}` on the intrinsic triangles. `T` is averaged onto faces.
pub fn assemble(
    mesh: &ImmersedMesh,
    metric: &IntrinsicMetric,
    opts: AssemblyOptions<'_>,
) -> Result<AssembledOperators> {
    let n = mesh.n_vertices();
    let w = if opts.weighted {
        mesh.vertex_weights()
    } else {
        vec![1.0; n]
    };
    let face_t = match opts.tensor {
        Some(t) => {
            t.check_spd()?;
            Some(t.face_tensors(mesh, metric))
        }
        None => None,
    };
    let mut kt = Vec::with_capacity(9 * mesh.n_faces());
    let mut mt = Vec::with_capacity(9 * mesh.n_faces());
    let mut lumped = vec![0.0; n];
    for (fi, f) in mesh.faces().iter().enumerate() {
        let lay = &metric.layouts[fi];
        let wf = (w[f[0]] + w[f[1]] + w[f[2]]) / 3.0;
        let tf = face_t.as_ref().map(|ft| ft[fi]);
        for i in 0..3 {
            let tg = match tf {
                Some(FaceTensor::Scaled(c)) => lay.grads[i] * c,
                Some(FaceTensor::General(m)) => m * lay.grads[i],
                None => lay.grads[i],
            };
            for j in 0..3 {
                kt.push((f[i], f[j], lay.area * wf * tg.dot(&lay.grads[j])));
                if opts.consistent_mass {
                    let c = if i == j { 2.0 } else { 1.0 };
                    mt.push((f[i], f[j], lay.area * wf * c / 12.0));
                }
            }
        }
    }
    for v in 0..n {
        lumped[v] = metric.vertex_areas[v] * w[v];
    }
    let stiffness = CsrMatrix::from_triplets(n, n, &kt);
    let mass = if opts.consistent_mass {
        CsrMatrix::from_triplets(n, n, &mt)
    } else {
        CsrMatrix::from_diagonal(&lumped)
    };
    let boundary = (!mesh.is_closed()).then(|| assemble_boundary(mesh, &w));
    Ok(AssembledOperators {
        stiffness,
        mass,
        lumped_mass: lumped,
        boundary,
        weighted: opts.weighted,
        consistent_mass: opts.consistent_mass,
    })
}

fn assemble_boundary(mesh: &ImmersedMesh, w: &[f64]) -> BoundaryOperators {
    let verts = mesh.boundary_vertices();
    let mut index = HashMap::new();
    for (i, &v) in verts.iter().enumerate() {
        index.insert(v, i);
    }
    let nb = verts.len();
    let mut mass = vec![0.0; nb];
    let mut t = Vec::new();
    let mut length = 0.0;
    for (a, b) in mesh.boundary_edges() {
        let l = mesh.ambient().distance(mesh.vertex(a), mesh.vertex(b));
        length += l;
        let (ia, ib) = (index[&a], index[&b]);
        mass[ia] += 0.5 * l * w[a];
        mass[ib] += 0.5 * l * w[b];
        t.push((ia, ia, 1.0 / l));
        t.push((ib, ib, 1.0 / l));
        t.push((ia, ib, -1.0 / l));
        t.push((ib, ia, -1.0 / l));
    }
    BoundaryOperators {
        vertices: verts,
        mass,
        stiffness: CsrMatrix::from_triplets(nb, nb, &t),
        length,
    }
}

/// A tensor averaged onto one face, in the face layout coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FaceTensor {
    Scaled(f64),
    General(Matrix2<f64>),
}

impl FaceTensor {
    pub fn matrix(&self) -> Matrix2<f64> {
        match *self {
            FaceTensor::Scaled(c) => Matrix2::identity() * c,
            FaceTensor::General(m) => m,
        }
    }
}

impl TensorField {
    /// Face averages of the tensor in each face's layout coordinates. Each
    /// vertex tensor is carried into the layout by the orthogonal polar factor
    /// of the map from layout edges to the vertex frame.
    pub fn face_tensors(&self, mesh: &ImmersedMesh, metric: &IntrinsicMetric) -> Vec<FaceTensor> {
        if let TensorKind::ScaledIdentity(c) = self.kind() {
            return vec![FaceTensor::Scaled(c); mesh.n_faces()];
        }
        let amb = mesh.ambient();
        mesh.faces()
            .iter()
            .enumerate()
            .map(|(fi, f)| {
                let lay = &metric.layouts[fi];
                let mut acc = Matrix2::zeros();
                for k in 0..3 {
                    let (a, b) = ((k + 1) % 3, (k + 2) % 3);
                    let p = mesh.vertex(f[k]);
                    let frame = self.frame(f[k]);
                    let la = amb.log(p, mesh.vertex(f[a]));
                    let lb = amb.log(p, mesh.vertex(f[b]));
                    let fm = Matrix2::new(
                        amb.inner(&frame[0], &la),
                        amb.inner(&frame[0], &lb),
                        amb.inner(&frame[1], &la),
                        amb.inner(&frame[1], &lb),
                    );
                    let ea = lay.corners[a] - lay.corners[k];
                    let eb = lay.corners[b] - lay.corners[k];
                    let em = Matrix2::from_columns(&[ea, eb]);
                    let r = crate::linalg::polar2(
                        &(fm * em.try_inverse().expect("nondegenerate face")),
                    );
                    acc += r.transpose() * self.value(f[k]) * r;
                }
                let m = acc / 3.0;
                FaceTensor::General(0.5 * (m + m.transpose()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes;
    use approx::assert_relative_eq;

    fn equilateral(delta: f64, side: f64) -> ImmersedMesh {
        // Geodesic equilateral triangle around the origin of H^2(delta).
        let amb = if delta == 0.0 {
            Ambient::euclidean(2).unwrap()
        } else {
            Ambient::hyperbolic(delta, 2).unwrap()
        };
        let o = amb.origin();
        let frame = amb.standard_frame(&o);
        // Circumradius R solves the law of cosines for the given side.
        let circum = if delta == 0.0 {
            side / 3f64.sqrt()
        } else {
            let k = (-delta).sqrt();
            // cosh(k s) = cosh^2(k R) - sinh^2(k R) cos(120 deg)
            let c = (k * side).cosh();
            // cosh^2 x (1 + 1/2) - 1/2 = c  =>  cosh^2 x = (c + 0.5)/1.5
            (((c + 0.5) / 1.5).sqrt()).acosh() / k
        };
        let verts = (0..3)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / 3.0;
                amb.exp(
                    &o,
                    &amb.from_frame(&frame, &[circum * t.cos(), circum * t.sin()]),
                )
            })
            .collect();
        ImmersedMesh::new(amb, verts, vec![[0, 1, 2]]).unwrap()
    }

    #[test]
    fn equilateral_geodesic_triangle() {
        let mesh = equilateral(-1.0, 0.2);
        let m = build_intrinsic_metric(&mesh, &MeshQuality::default()).unwrap();
        for &l in &m.lengths[0] {
            assert!((l - 0.2).abs() < 1e-12);
        }
        assert_eq!(mesh.boundary().len(), 1);
    }

    #[test]
    fn equilateral_element_matrix() {
        let mesh = equilateral(0.0, 1.0);
        let m = build_intrinsic_metric(&mesh, &MeshQuality::default()).unwrap();
        let ops = assemble(&mesh, &m, AssemblyOptions::default()).unwrap();
        // Cotangent weights: off-diagonal -cot(60)/2, diagonal cot(60).
        let cot = 1.0 / 3f64.sqrt();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { cot } else { -0.5 * cot };
                assert_relative_eq!(ops.stiffness.get(i, j), expect, epsilon = 1e-14);
            }
        }
        let area = 3f64.sqrt() / 4.0;
        assert_relative_eq!(ops.lumped_mass.iter().sum::<f64>(), area, epsilon = 1e-15);
    }

    #[test]
    fn geodesic_sphere_area() {
        let mesh = scenes::geodesic_sphere(-1.0, 1.0, 5).unwrap();
        let m = build_intrinsic_metric(&mesh, &MeshQuality::default()).unwrap();
        let exact = 4.0 * std::f64::consts::PI * 1f64.sinh().powi(2);
        assert!((m.total_area() - exact).abs() / exact < 5e-3);
    }

    #[test]
    fn area_error_shrinks_fourfold() {
        let exact = 4.0 * std::f64::consts::PI * 1f64.sinh().powi(2);
        let errs: Vec<f64> = (2..5)
            .map(|l| {
                let mesh = scenes::geodesic_sphere(-1.0, 1.0, l).unwrap();
                let m = build_intrinsic_metric(&mesh, &MeshQuality::default()).unwrap();
                (m.total_area() - exact).abs()
            })
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn integrate_examples() {
        let mesh = scenes::geodesic_sphere(-1.0, 1.0, 4).unwrap();
        let m = build_intrinsic_metric(&mesh, &MeshQuality::default()).unwrap();
        let ones = vec![1.0; mesh.n_vertices()];
        let vol = m.total_area();
        assert_relative_eq!(
            integrate(&mesh, &m, &ones, false),
            vol,
            max_relative = 1e-12
        );
        let half = mesh
            .clone()
            .with_density(vec![2f64.ln(); mesh.n_vertices()])
            .unwrap();
        assert_relative_eq!(
            integrate(&half, &m, &ones, true),
            0.5 * vol,
            max_relative = 1e-12
        );
        let center = mesh.ambient().origin();
        let d = mesh.delta();
        let th2: Vec<f64> = mesh
            .distance_field(&center)
            .iter()
            .map(|&r| crate::hypgeo::delta_trig(r, d).th.powi(2))
            .collect();
        let expect = vol * 1f64.tanh().powi(2);
        assert!((integrate(&mesh, &m, &th2, false) - expect).abs() / expect < 0.01);
    }

    #[test]
    fn stiffness_properties() {
        use rand::{Rng, SeedableRng};
        let mesh = scenes::perturbed_sphere(-1.0, 1.0, 0.2, 3, 3).unwrap();
        let m = build_intrinsic_metric(&mesh, &MeshQuality::default()).unwrap();
        let ops = assemble(&mesh, &m, AssemblyOptions::default()).unwrap();
        let k = &ops.stiffness;
        let ones = vec![1.0; mesh.n_vertices()];
        let k1 = k.mul_vec(&ones);
        assert!(k1.iter().fold(0.0f64, |a, b| a.max(b.abs())) <= 1e-10 * k.max_abs());
        assert!(k.asymmetry() <= 1e-14 * k.max_abs());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let u: Vec<f64> = (0..mesh.n_vertices())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            assert!(k.quad_form(&u) > 0.0);
        }
        let row = ops.mass.row_sums();
        for (a, b) in row.iter().zip(&m.vertex_areas) {
            assert_relative_eq!(a, b, max_relative = 1e-14);
        }
        let two = TensorField::scaled_identity(&mesh, 2.0);
        let ops2 = assemble(
            &mesh,
            &m,
            AssemblyOptions {
                tensor: Some(&two),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(ops2.stiffness, ops.stiffness.scale(2.0));
        let id = TensorField::identity(&mesh);
        let ops1 = assemble(
            &mesh,
            &m,
            AssemblyOptions {
                tensor: Some(&id),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(ops1.stiffness, ops.stiffness);
    }

    #[test]
    fn general_identity_tensor_matches_laplacian() {
        // An identity tensor stored as a general field goes through the frame
        // alignment; the polar factor must make it agree to rounding.
        let mesh = scenes::perturbed_sphere(-1.0, 0.8, 0.1, 2, 2).unwrap();
        let m = build_intrinsic_metric(&mesh, &MeshQuality::default()).unwrap();
        let frames: Vec<_> = (0..mesh.n_vertices()).map(|v| mesh.edge_frame(v)).collect();
        let values = vec![Matrix2::identity(); mesh.n_vertices()];
        let t = TensorField::new(&mesh, frames, values).unwrap();
        let a = assemble(
            &mesh,
            &m,
            AssemblyOptions {
                tensor: Some(&t),
                ..Default::default()
            },
        )
        .unwrap();
        let b = assemble(&mesh, &m, AssemblyOptions::default()).unwrap();
        let diff = a.stiffness.add_scaled(&b.stiffness, -1.0).max_abs();
        assert!(diff < 1e-12 * b.stiffness.max_abs());
    }

    #[test]
    fn isometry_invariance() {
        let mesh = scenes::perturbed_sphere(-1.0, 1.0, 0.1, 2, 2).unwrap();
        let amb = *mesh.ambient();
        let g = Isometry::boost(&amb, 1, 0.7).compose(&Isometry::rotation(&amb, 0, 2, 1.1));
        let moved = mesh.transformed(&g);
        let q = MeshQuality::default();
        let a = assemble(
            &mesh,
            &build_intrinsic_metric(&mesh, &q).unwrap(),
            AssemblyOptions::default(),
        )
        .unwrap();
        let b = assemble(
            &moved,
            &build_intrinsic_metric(&moved, &q).unwrap(),
            AssemblyOptions::default(),
        )
        .unwrap();
        assert!(a.stiffness.add_scaled(&b.stiffness, -1.0).max_abs() < 1e-12);
        assert!(a.mass.add_scaled(&b.mass, -1.0).max_abs() < 1e-12);
    }

    #[test]
    fn scaling_covariance() {
        let mesh = scenes::perturbed_sphere(-1.0, 1.0, 0.1, 2, 2).unwrap();
        let scaled = mesh.scaled(2.0).unwrap();
        assert_eq!(scaled.delta().value(), -4.0);
        let q = MeshQuality::default();
        let a = assemble(
            &mesh,
            &build_intrinsic_metric(&mesh, &q).unwrap(),
            AssemblyOptions::default(),
        )
        .unwrap();
        let b = assemble(
            &scaled,
            &build_intrinsic_metric(&scaled, &q).unwrap(),
            AssemblyOptions::default(),
        )
        .unwrap();
        assert!(
            a.stiffness.add_scaled(&b.stiffness, -1.0).max_abs() < 1e-12 * a.stiffness.max_abs()
        );
        assert!(a.mass.scale(0.25).add_scaled(&b.mass, -1.0).max_abs() < 1e-12 * a.mass.max_abs());
    }

    #[test]
    fn enclosing_radius_examples() {
        let mesh = scenes::geodesic_sphere(-1.0, 0.7, 2).unwrap();
        let o = mesh.ambient().origin();
        assert!((mesh.enclosing_radius(&o) - 0.7).abs() < 1e-12);
        let other = mesh.ambient().lift(&[0.2, -0.1, 0.3]).unwrap();
        let d = mesh.ambient().distance(&o, &other);
        assert!(mesh.enclosing_radius(&other) >= 0.7 - d - 1e-12);
    }

    #[test]
    fn rejects_bad_meshes() {
        let amb = Ambient::euclidean(3).unwrap();
        let pts: Vec<_> = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [5.0, 5.0, 5.0],
        ]
        .iter()
        .map(|c| amb.point_from_slice(c).unwrap())
        .collect();
        assert!(matches!(
            ImmersedMesh::new(amb, pts[..3].to_vec(), vec![[0, 1, 2], [0, 1, 2]]),
            Err(Error::InvalidMesh(_))
        ));
        assert!(ImmersedMesh::new(amb, pts.clone(), vec![[0, 1, 2]]).is_err());
        let collinear: Vec<_> = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]
            .iter()
            .map(|c| amb.point_from_slice(c).unwrap())
            .collect();
        let mesh = ImmersedMesh::new(amb, collinear, vec![[0, 1, 2]]).unwrap();
        assert!(matches!(
            build_intrinsic_metric(&mesh, &MeshQuality::default()),
            Err(Error::DegenerateFace { .. })
        ));
        let sliver: Vec<_> = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 0.01, 0.0]]
            .iter()
            .map(|c| amb.point_from_slice(c).unwrap())
            .collect();
        let mesh = ImmersedMesh::new(amb, sliver, vec![[0, 1, 2]]).unwrap();
        assert!(build_intrinsic_metric(&mesh, &MeshQuality::default()).is_err());
    }

    #[test]
    fn json_round_trip() {
        let mesh = scenes::flat_disk(1.0, 1).unwrap();
        let mesh = mesh
            .clone()
            .with_density(vec![0.25; mesh.n_vertices()])
            .unwrap();
        let file = mesh.to_file(None);
        let text = serde_json::to_string(&file).unwrap();
        let back: MeshFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, file);
        let (m2, t) = back.into_mesh().unwrap();
        assert!(t.is_none());
        assert_eq!(m2.faces(), mesh.faces());
        assert_eq!(m2.boundary(), mesh.boundary());
        assert_eq!(m2.density(), mesh.density());
        for (a, b) in m2.vertices().iter().zip(mesh.vertices()) {
            assert_eq!(a.coords(), b.coords());
        }
    }

    #[test]
    fn corrupted_vertex_is_reported() {
        let mesh = scenes::geodesic_sphere(-1.0, 1.0, 0).unwrap();
        let mut file = mesh.to_file(None);
        file.vertices[3][0] += 0.1;
        let err = file.into_mesh().unwrap_err();
        assert!(matches!(err, Error::InvalidPoint(ref m) if m.contains("vertex 3")));
    }
}
