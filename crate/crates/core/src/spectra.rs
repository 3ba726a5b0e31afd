//! First nonzero eigenvalues: `div(T grad u)` with optional density,
//! the p-Laplacian, and the Steklov and Steklov-Wentzell problems.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{LinearSolverConfig, PLapConfig, SteklovConfig};
use crate::error::{Error, Result};
use crate::linalg::{complement_basis, sorted_symmetric_eigen};
use crate::mesh::{AssembledOperators, ImmersedMesh, IntrinsicMetric};
use crate::sparse::{Cholesky, CsrMatrix};

/// Problems at or below this size are solved densely.
const DENSE_LIMIT: usize = 300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Certificate {
    /// Eigenpair of the discrete linear problem to the declared tolerance.
    LinearSolve,
    /// Value of the Rayleigh quotient at a feasible field; an upper bound of
    /// the discrete minimum whether or not the descent converged.
    CertifiedUpperBound,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralResult {
    pub eigenvalue: f64,
    #[serde(skip)]
    pub eigenfunction: Vec<f64>,
    pub residual: f64,
    pub certificate: Certificate,
    pub iterations: usize,
    pub restarts_used: usize,
    pub converged: bool,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// `x <- x - (1^T M x / 1^T M 1) 1` for every column.
fn deflate_constants(x: &mut DMatrix<f64>, mass_row_sums: &[f64]) {
    let total: f64 = mass_row_sums.iter().sum();
    for mut col in x.column_iter_mut() {
        let c: f64 = col
            .iter()
            .zip(mass_row_sums)
            .map(|(a, m)| a * m)
            .sum::<f64>()
            / total;
        col.add_scalar_mut(-c);
    }
}

fn random_block(n: usize, b: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, b, |_, _| StandardNormal.sample(&mut rng))
}

/// Ritz pairs of `(K, M)` on the span of the columns of `y`, ascending;
/// returned vectors are M-orthonormal.
fn rayleigh_ritz(
    k: &CsrMatrix,
    m: &CsrMatrix,
    y: &DMatrix<f64>,
) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let ky = k.mul_mat(y);
    let my = m.mul_mat(y);
    let kr = y.transpose() * ky;
    let mr = y.transpose() * my;
    let kr = (&kr + kr.transpose()) * 0.5;
    let mr = (&mr + mr.transpose()) * 0.5;
    // Whiten with an eigen-decomposition of the small mass matrix so nearly
    // dependent columns are dropped instead of failing a Cholesky.
    let (mv, mvec) = sorted_symmetric_eigen(mr);
    let keep: Vec<usize> = (0..mv.len())
        .filter(|&i| mv[i] > 1e-13 * mv[mv.len() - 1])
        .collect();
    if keep.is_empty() {
        return None;
    }
    let w = DMatrix::from_fn(mv.len(), keep.len(), |i, j| {
        mvec[(i, keep[j])] / mv[keep[j]].sqrt()
    });
    let c = w.transpose() * kr * &w;
    let c = (&c + c.transpose()) * 0.5;
    let (vals, vecs) = sorted_symmetric_eigen(c);
    Some((vals, y * (w * vecs)))
}

/// Relative residual `|K x - theta M x|_{M^-1} / (theta |x|_M)`.
fn relative_residual(
    k: &CsrMatrix,
    m_diag: &[f64],
    mass: &CsrMatrix,
    x: &[f64],
    theta: f64,
) -> f64 {
    let kx = k.mul_vec(x);
    let mx = mass.mul_vec(x);
    let num: f64 = kx
        .iter()
        .zip(&mx)
        .zip(m_diag)
        .map(|((a, b), d)| (a - theta * b).powi(2) / d)
        .sum::<f64>()
        .sqrt();
    let xm: f64 = x.iter().zip(&mx).map(|(a, b)| a * b).sum::<f64>().sqrt();
    num / (theta.abs().max(f64::MIN_POSITIVE) * xm)
}

/// Lowest nonzero eigenpairs of `K u = lambda M u` from one block solve.
#[derive(Clone, Debug)]
pub struct Modes {
    /// Ascending Ritz values of the converged block.
    pub values: DVector<f64>,
    /// M-orthonormal Ritz vectors, one per column.
    pub vectors: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub seed: u64,
}

impl Modes {
    pub fn first(&self) -> SpectralResult {
        SpectralResult {
            eigenvalue: self.values[0],
            eigenfunction: self.vectors.column(0).iter().copied().collect(),
            residual: self.residual,
            certificate: Certificate::LinearSolve,
            iterations: self.iterations,
            restarts_used: 0,
            converged: self.converged,
            seed: self.seed,
            notes: Vec::new(),
        }
    }
}

/// Smallest nonzero eigenvalue of `K u = lambda M u` on a connected mesh,
/// with the constant mode removed by explicit projection. Covers the
/// Laplacian, `div(T grad u)` and their weighted versions, depending on how
/// the operators were assembled.
pub fn lambda1_linear(
    ops: &AssembledOperators,
    cfg: &LinearSolverConfig,
    seed: u64,
) -> Result<SpectralResult> {
    Ok(lowest_modes(ops, cfg, seed)?.first())
}

/// Shift-invert block subspace iteration with Rayleigh-Ritz. Small problems
/// go to a dense solver. A second (near) zero eigenvalue means the operator
/// has more than one constant mode, i.e. the mesh is disconnected.
pub fn lowest_modes(
    ops: &AssembledOperators,
    cfg: &LinearSolverConfig,
    seed: u64,
) -> Result<Modes> {
    let k = &ops.stiffness;
    let m = &ops.mass;
    let n = k.nrows();
    if n < 3 {
        return Err(Error::InvalidMesh(
            "too few vertices for an eigenproblem".into(),
        ));
    }
    let row_sums = m.row_sums();
    let m_diag = m.diagonal();
    let scale = k.trace() / m.trace();
    let zero_tol = 1e-9 * scale;
    if n <= DENSE_LIMIT {
        let (vals, vecs) = dense_generalized(k, m)?;
        // vals[0] belongs to the constant mode.
        if vals[1] < zero_tol {
            return Err(Error::DisconnectedMesh {
                components: vals.iter().filter(|&&v| v < zero_tol).count(),
            });
        }
        let nv = (vals.len() - 1).min(cfg.block_size.max(2));
        let values = vals.rows(1, nv).into_owned();
        let vectors = vecs.columns(1, nv).into_owned();
        let residual = relative_residual(k, &m_diag, m, vectors.column(0).as_slice(), values[0]);
        return Ok(Modes {
            values,
            vectors,
            iterations: 0,
            residual,
            converged: true,
            seed,
        });
    }
    let b = cfg.block_size.max(2).min(n - 1);
    let shift = cfg.shift_scale * scale;
    let chol = Cholesky::new(&k.add_scaled(m, shift))?;
    let mut x = random_block(n, b, seed);
    deflate_constants(&mut x, &row_sums);
    let mut residual = f64::INFINITY;
    let mut best_residual = f64::INFINITY;
    let mut stagnant = 0;
    for it in 1..=cfg.max_iter {
        let mx = m.mul_mat(&x);
        let mut y = chol.solve_mat(&mx);
        deflate_constants(&mut y, &row_sums);
        let (vals, vecs) = rayleigh_ritz(k, m, &y).ok_or(Error::NoConvergence {
            what: "subspace iteration",
            iterations: it,
            residual,
        })?;
        if vals[0] < zero_tol {
            return Err(Error::DisconnectedMesh { components: 2 });
        }
        residual = relative_residual(k, &m_diag, m, vecs.column(0).as_slice(), vals[0]);
        x = vecs;
        let done = residual < cfg.tol;
        // Rounding floors the residual on large meshes; stop once it no
        // longer improves and is already tiny.
        if residual < 0.9 * best_residual {
            best_residual = residual;
            stagnant = 0;
        } else {
            stagnant += 1;
        }
        let stalled = stagnant >= 20 && residual < 1e3 * cfg.tol;
        if done || stalled {
            if stalled && !done {
                warn!("subspace iteration stagnated at residual {residual:.2e}");
            }
            debug!("subspace iteration: {it} iterations, residual {residual:.2e}");
            return Ok(Modes {
                values: vals,
                vectors: x,
                iterations: it,
                residual,
                converged: done,
                seed,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "subspace iteration",
        iterations: cfg.max_iter,
        residual,
    })
}

/// Dense generalized symmetric eigensolve, ascending, M-orthonormal vectors.
pub fn dense_generalized(k: &CsrMatrix, m: &CsrMatrix) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let kd = k.to_dense();
    let md = m.to_dense();
    let l = md
        .cholesky()
        .ok_or_else(|| Error::Factorization("mass matrix is not positive definite".into()))?;
    let linv = l
        .l()
        .try_inverse()
        .ok_or_else(|| Error::Factorization("singular mass factor".into()))?;
    let c = &linv * kd * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let (vals, vecs) = sorted_symmetric_eigen(c);
    Ok((vals, linv.transpose() * vecs))
}

/// Discrete p-Rayleigh quotient `F(u) = sum_f area |grad u|^p / sum_v a_v |u - c|^p`
/// with `c` the root of `sum_v a_v |u_v - c|^{p-2} (u_v - c) = 0`.
/// `F` is invariant under adding constants and scaling.
pub struct PLaplacian {
    p: f64,
    /// Per face `area * G G^T` with `G` the hat-function gradients.
    face_stiffness: Vec<[[f64; 3]; 3]>,
    faces: Vec<[usize; 3]>,
    face_areas: Vec<f64>,
    vertex_areas: Vec<f64>,
}

impl PLaplacian {
    pub fn new(mesh: &ImmersedMesh, metric: &IntrinsicMetric, p: f64) -> Self {
        let face_stiffness = metric
            .layouts
            .iter()
            .map(|lay| {
                let mut s = [[0.0; 3]; 3];
                for (i, row) in s.iter_mut().enumerate() {
                    for (j, e) in row.iter_mut().enumerate() {
                        *e = lay.area * lay.grads[i].dot(&lay.grads[j]);
                    }
                }
                s
            })
            .collect();
        Self {
            p,
            face_stiffness,
            faces: mesh.faces().to_vec(),
            face_areas: metric.areas().collect(),
            vertex_areas: metric.vertex_areas.clone(),
        }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// `|grad u|^2` on face `fi` together with `S_f u`.
    fn face_grad(&self, fi: usize, u: &[f64]) -> (f64, [f64; 3]) {
        let f = self.faces[fi];
        let s = &self.face_stiffness[fi];
        let mut su = [0.0; 3];
        for (i, r) in su.iter_mut().enumerate() {
            *r = s[i][0] * u[f[0]] + s[i][1] * u[f[1]] + s[i][2] * u[f[2]];
        }
        let q = (u[f[0]] * su[0] + u[f[1]] * su[1] + u[f[2]] * su[2]) / self.face_areas[fi];
        (q.max(0.0), su)
    }

    pub fn numerator(&self, u: &[f64]) -> f64 {
        let hp = 0.5 * self.p;
        (0..self.faces.len())
            .map(|fi| self.face_areas[fi] * self.face_grad(fi, u).0.powf(hp))
            .sum()
    }

    fn denominator(&self, w: &[f64]) -> f64 {
        w.iter()
            .zip(&self.vertex_areas)
            .map(|(x, a)| a * x.abs().powf(self.p))
            .sum()
    }

    /// Root `c` of `g(c) = sum a |u - c|^{p-2} (u - c)`, which is strictly
    /// decreasing in `c`. Bisection guarded Newton.
    pub fn recenter(&self, u: &[f64]) -> f64 {
        let p = self.p;
        let g = |c: f64| -> (f64, f64) {
            let mut val = 0.0;
            let mut der = 0.0;
            for (x, a) in u.iter().zip(&self.vertex_areas) {
                let w = x - c;
                let aw = w.abs();
                if aw > 0.0 {
                    val += a * aw.powf(p - 1.0) * w.signum();
                    der += a * (p - 1.0) * aw.powf(p - 2.0);
                }
            }
            (val, der)
        };
        let (mut lo, mut hi) = u
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                (a.min(x), b.max(x))
            });
        if hi - lo <= 0.0 {
            return lo;
        }
        let tol = 1e-14 * (hi - lo).max(lo.abs().max(hi.abs()));
        let total: f64 = self.vertex_areas.iter().sum();
        let mut c = u
            .iter()
            .zip(&self.vertex_areas)
            .map(|(x, a)| x * a)
            .sum::<f64>()
            / total;
        for _ in 0..200 {
            let (val, der) = g(c);
            if val == 0.0 {
                return c;
            }
            if val > 0.0 {
                lo = c;
            } else {
                hi = c;
            }
            if hi - lo < tol {
                break;
            }
            // Near a data value with p < 2 the slope blows up and a tiny Newton
            // step says nothing about the distance to the root; only accept it
            // when the sign changes across it.
            if der > 0.0 && (val / der).abs() < tol {
                let (a, b) = (g(c - tol).0, g(c + tol).0);
                if a >= 0.0 && b <= 0.0 {
                    break;
                }
            }
            let newton = if der > 0.0 { c + val / der } else { f64::NAN };
            c = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        c
    }

    fn centered(&self, u: &[f64]) -> Vec<f64> {
        let c = self.recenter(u);
        u.iter().map(|x| x - c).collect()
    }

    /// Value of the quotient.
    pub fn quotient(&self, u: &[f64]) -> f64 {
        let w = self.centered(u);
        self.numerator(u) / self.denominator(&w)
    }

    /// Value and gradient. The gradient is orthogonal to constants since the
    /// centering condition kills the constant direction of `grad D`.
    pub fn value_and_gradient(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let p = self.p;
        let mut gn = vec![0.0; u.len()];
        let mut num = 0.0;
        for fi in 0..self.faces.len() {
            let (q, su) = self.face_grad(fi, u);
            num += self.face_areas[fi] * q.powf(0.5 * p);
            if q > 0.0 {
                let c = p * q.powf(0.5 * p - 1.0);
                for (k, &v) in self.faces[fi].iter().enumerate() {
                    gn[v] += c * su[k];
                }
            }
        }
        let w = self.centered(u);
        let den = self.denominator(&w);
        let f = num / den;
        let grad = gn
            .iter()
            .zip(&w)
            .zip(&self.vertex_areas)
            .map(|((g, x), a)| (g - f * p * a * x.abs().powf(p - 2.0) * x) / den)
            .collect();
        (f, grad)
    }

    /// Recentre and scale so the denominator is one. Returns the scale used.
    fn normalize(&self, u: &mut [f64]) -> f64 {
        let c = self.recenter(u);
        u.iter_mut().for_each(|x| *x -= c);
        let s = self.denominator(u).powf(-1.0 / self.p);
        u.iter_mut().for_each(|x| *x *= s);
        s
    }
}

/// Discrete p-Rayleigh quotient of `u`. Any nonconstant field gives an upper
/// bound of the discrete first p-eigenvalue.
pub fn p_rayleigh_quotient(
    mesh: &ImmersedMesh,
    metric: &IntrinsicMetric,
    p: f64,
    u: &[f64],
) -> f64 {
    PLaplacian::new(mesh, metric, p).quotient(u)
}

struct Descent {
    value: f64,
    u: Vec<f64>,
    iterations: usize,
    converged: bool,
    stalled: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned nonlinear conjugate gradients (Polak-Ribiere+) with an
/// Armijo backtracking line search. The preconditioner is a Sobolev inner
/// product `(K + s M)^{-1}`.
fn descend(
    pl: &PLaplacian,
    u0: &[f64],
    pre: &Cholesky,
    cfg: &PLapConfig,
    max_iter: usize,
) -> Descent {
    let mut u = u0.to_vec();
    pl.normalize(&mut u);
    let (mut f, mut g) = pl.value_and_gradient(&u);
    let mut z = pre.solve(&g);
    let mut d: Vec<f64> = z.iter().map(|x| -x).collect();
    let mut gz = dot(&g, &z);
    let mut t = 1.0;
    let mut it = 0;
    let mut converged = false;
    let mut stalled = false;
    while it < max_iter {
        it += 1;
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            d = z.iter().map(|x| -x).collect();
            slope = -gz;
        }
        if slope == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = None;
        let mut step = t;
        for _ in 0..cfg.max_backtracks {
            let trial: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            let ft = pl.quotient(&trial);
            if ft.is_finite() && ft <= f + cfg.armijo * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((mut un, fn_)) = accepted else {
            stalled = true;
            break;
        };
        let s = pl.normalize(&mut un);
        let rel = (f - fn_).abs() / fn_.abs().max(f64::MIN_POSITIVE);
        u = un;
        let (fv, gn) = pl.value_and_gradient(&u);
        f = fv;
        let zn = pre.solve(&gn);
        let gzn = dot(&gn, &zn);
        let beta = ((gzn - dot(&zn, &g)) / gz).max(0.0);
        d = zn.iter().zip(&d).map(|(a, b)| -a + beta * s * b).collect();
        g = gn;
        z = zn;
        gz = gzn;
        t = (2.0 * step).min(1e3);
        if rel < cfg.rel_change {
            converged = true;
            break;
        }
    }
    Descent {
        value: f,
        u,
        iterations: it,
        converged,
        stalled,
    }
}

/// First nonzero eigenvalue of the p-Laplacian, by minimizing the discrete
/// p-Rayleigh quotient. The first Laplace eigenfunction and random
/// combinations of the linear Ritz block are used as starts; each start gets
/// a short budget and the best one is continued to convergence. The reported
/// value is always the quotient of the returned field.
pub fn lambda1_p(
    mesh: &ImmersedMesh,
    metric: &IntrinsicMetric,
    ops: &AssembledOperators,
    modes: &Modes,
    p: f64,
    cfg: &PLapConfig,
    seed: u64,
) -> Result<SpectralResult> {
    if !(cfg.p_min..=cfg.p_max).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "p = {p} outside the supported range [{}, {}]",
            cfg.p_min, cfg.p_max
        )));
    }
    if ops.weighted {
        return Err(Error::InvalidParameter(
            "the p-Laplacian uses unweighted operators".into(),
        ));
    }
    let pl = PLaplacian::new(mesh, metric, p);
    let k = &ops.stiffness;
    let m = CsrMatrix::from_diagonal(&ops.lumped_mass);
    let shift = modes.values[0].max(1e-4 * k.trace() / m.trace());
    let pre = Cholesky::new(&k.add_scaled(&m, shift))?;

    let n = mesh.n_vertices();
    let b = modes.vectors.ncols();
    let mut starts: Vec<Vec<f64>> = vec![modes.vectors.column(0).iter().copied().collect()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cfg.restarts {
        let coef: Vec<f64> = (0..b).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut u = vec![0.0; n];
        for (j, c) in coef.iter().enumerate() {
            for (i, x) in u.iter_mut().enumerate() {
                *x += c * modes.vectors[(i, j)];
            }
        }
        starts.push(u);
    }
    let mut best: Option<Descent> = None;
    let mut total_iter = 0;
    for s in &starts {
        let run = descend(&pl, s, &pre, cfg, cfg.restart_iter);
        total_iter += run.iterations;
        if best.as_ref().is_none_or(|b| run.value < b.value) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one start");
    let run = if best.converged {
        best
    } else {
        let cont = descend(&pl, &best.u, &pre, cfg, cfg.max_iter);
        total_iter += cont.iterations;
        cont
    };
    let value = pl.quotient(&run.u);
    let mut notes = Vec::new();
    if run.stalled {
        notes.push("line search stalled; value is the quotient of the last iterate".into());
    } else if !run.converged {
        notes.push(format!("iteration budget {} exhausted", cfg.max_iter));
    }
    debug!("p = {p}: lambda = {value:.10}, {total_iter} iterations");
    let (_, g) = pl.value_and_gradient(&run.u);
    let z = pre.solve(&g);
    let residual = dot(&g, &z).max(0.0).sqrt() / value;
    Ok(SpectralResult {
        eigenvalue: value,
        eigenfunction: run.u,
        residual,
        certificate: Certificate::CertifiedUpperBound,
        iterations: total_iter,
        restarts_used: cfg.restarts,
        converged: run.converged,
        seed,
        notes,
    })
}

/// Harmonic extension data: interior/boundary split and the Schur
/// complement of the stiffness onto the boundary.
struct Schur {
    boundary: Vec<usize>,
    interior: Vec<usize>,
    dtn: DMatrix<f64>,
    kii: Cholesky,
    kib: CsrMatrix,
}

fn schur(ops: &AssembledOperators, n: usize) -> Result<Schur> {
    let bops = ops
        .boundary
        .as_ref()
        .ok_or_else(|| Error::InvalidMesh("the mesh has no boundary".into()))?;
    let boundary = bops.vertices.clone();
    let mut is_b = vec![false; n];
    boundary.iter().for_each(|&v| is_b[v] = true);
    let interior: Vec<usize> = (0..n).filter(|&v| !is_b[v]).collect();
    if interior.is_empty() {
        return Err(Error::SingularInterior);
    }
    let k = &ops.stiffness;
    let kii =
        Cholesky::new(&k.submatrix(&interior, &interior)).map_err(|_| Error::SingularInterior)?;
    let kib = k.submatrix(&interior, &boundary);
    let kbb = k.submatrix(&boundary, &boundary).to_dense();
    let x = kii.solve_mat(&kib.to_dense());
    let dtn = kbb - kib.transpose().to_dense() * x;
    Ok(Schur {
        boundary,
        interior,
        dtn: (&dtn + dtn.transpose()) * 0.5,
        kii,
        kib,
    })
}

/// Smallest nonzero eigenpair of `A x = mu diag(m) x` for symmetric `A` with
/// the constants in its kernel.
fn boundary_eigen(a: &DMatrix<f64>, m: &[f64], symmetry_tol: f64) -> Result<(f64, DVector<f64>)> {
    let asym = a
        .iter()
        .zip(a.transpose().iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    if asym > symmetry_tol * a.amax().max(1.0) {
        return Err(Error::Factorization(format!(
            "boundary operator asymmetric by {asym:.2e}"
        )));
    }
    let nb = m.len();
    let sq: Vec<f64> = m.iter().map(|x| x.sqrt()).collect();
    let c = DMatrix::from_fn(nb, nb, |i, j| a[(i, j)] / (sq[i] * sq[j]));
    // The constant mode becomes M^{1/2} 1 after scaling.
    let q = complement_basis(&DVector::from_column_slice(&sq));
    let r = q.transpose() * c * &q;
    let (vals, vecs) = sorted_symmetric_eigen((&r + r.transpose()) * 0.5);
    let y = &q * vecs.column(0);
    let x = DVector::from_fn(nb, |i, _| y[i] / sq[i]);
    Ok((vals[0], x))
}

fn harmonic_extension(s: &Schur, n: usize, xb: &DVector<f64>) -> Vec<f64> {
    let rhs = s.kib.mul_vec(xb.as_slice());
    let xi = s.kii.solve(&rhs);
    let mut u = vec![0.0; n];
    for (k, &v) in s.boundary.iter().enumerate() {
        u[v] = xb[k];
    }
    for (k, &v) in s.interior.iter().enumerate() {
        u[v] = -xi[k];
    }
    u
}

fn boundary_result(value: f64, u: Vec<f64>, residual: f64, seed: u64) -> SpectralResult {
    SpectralResult {
        eigenvalue: value,
        eigenfunction: u,
        residual,
        certificate: Certificate::LinearSolve,
        iterations: 0,
        restarts_used: 0,
        converged: true,
        seed,
        notes: Vec::new(),
    }
}

/// First nonzero Steklov eigenvalue: harmonic (for the assembled operator)
/// in the interior, conormal derivative equal to `sigma u` on the boundary.
/// The eigenfunction is the harmonic extension of the boundary mode.
pub fn steklov_sigma1(ops: &AssembledOperators, cfg: &SteklovConfig) -> Result<SpectralResult> {
    let n = ops.stiffness.nrows();
    let s = schur(ops, n)?;
    let bm = &ops.boundary.as_ref().expect("checked in schur").mass;
    let (val, xb) = boundary_eigen(&s.dtn, bm, cfg.symmetry_tol)?;
    let res = eigen_residual(&s.dtn, bm, &xb, val);
    Ok(boundary_result(val, harmonic_extension(&s, n, &xb), res, 0))
}

/// First nonzero eigenvalue of the Steklov-Wentzell problem
/// `-b Delta_boundary u + d_nu u = alpha u`, harmonic inside, `b >= 0`.
pub fn wentzell_alpha1(
    ops: &AssembledOperators,
    b: f64,
    cfg: &SteklovConfig,
) -> Result<SpectralResult> {
    if !(b >= 0.0 && b.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "Wentzell coefficient b = {b} must be >= 0"
        )));
    }
    let n = ops.stiffness.nrows();
    let s = schur(ops, n)?;
    let bops = ops.boundary.as_ref().expect("checked in schur");
    let a = &s.dtn + bops.stiffness.to_dense() * b;
    let (val, xb) = boundary_eigen(&a, &bops.mass, cfg.symmetry_tol)?;
    let res = eigen_residual(&a, &bops.mass, &xb, val);
    Ok(boundary_result(val, harmonic_extension(&s, n, &xb), res, 0))
}

fn eigen_residual(a: &DMatrix<f64>, m: &[f64], x: &DVector<f64>, val: f64) -> f64 {
    let ax = a * x;
    let r: f64 = (0..m.len())
        .map(|i| (ax[i] - val * m[i] * x[i]).powi(2) / m[i])
        .sum::<f64>()
        .sqrt();
    let xm: f64 = (0..m.len()).map(|i| m[i] * x[i] * x[i]).sum::<f64>().sqrt();
    r / (val.abs().max(f64::MIN_POSITIVE) * xm)
}
