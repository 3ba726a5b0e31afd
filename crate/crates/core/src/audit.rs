//! Both sides of every audited inequality, hypothesis checks and the
//! tolerance model.
//!
//! Conventions: `m = 2`, `n` is the ambient dimension, `H` is the normalized
//! mean curvature vector and `H_T = sum_a tr(A^a T) n_a` (so `H_I = m H`).
//! Suprema and infima are taken over vertex values.

use std::cell::{OnceCell, RefCell};
use std::collections::{BTreeMap, HashMap};

use log::debug;
use nalgebra::{DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::center::{find_center, CenterMode, CenterResult};
use crate::config::Config;
use crate::curvature::{
    check_tensor, h_t, second_fundamental_form, CurvatureData, TensorField, TensorReport,
};
use crate::error::{Error, Result};
use crate::hypgeo::{arsinh_delta, delta_trig, th_prime, AmbientPoint};
use crate::mesh::{
    assemble, build_intrinsic_metric, AssembledOperators, AssemblyOptions, ImmersedMesh,
    IntrinsicMetric,
};
use crate::spectra::{
    lambda1_p, lowest_modes, steklov_sigma1, wentzell_alpha1, Modes, SpectralResult,
};

const M: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditStatus {
    Pass,
    Violation,
    HypothesesNotMet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub name: String,
    pub pass: bool,
    pub margin: f64,
}

impl Hypothesis {
    pub fn new(name: impl Into<String>, pass: bool, margin: f64) -> Self {
        Hypothesis {
            name: name.into(),
            pass,
            margin,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceUsed {
    pub tol_abs: f64,
    pub tol_rel: f64,
    /// `max(tol_abs, tol_rel |rhs|)`.
    pub threshold: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditInputs {
    pub scene: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tensors: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<Phi>,
}

/// One inequality `lhs <= rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub theorem_id: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub hypotheses: Vec<Hypothesis>,
    pub status: AuditStatus,
    pub tolerances: ToleranceUsed,
    pub inputs: AuditInputs,
    /// Raw integrals and scalars from which both sides were formed.
    pub integrals: BTreeMap<String, f64>,
    /// Set on stages whose continuum form is an identity in constant
    /// curvature: `|slack| / |rhs|`, to be compared with the equality tolerance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub equality_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl AuditRecord {
    pub fn new(
        theorem_id: impl Into<String>,
        lhs: f64,
        rhs: f64,
        hypotheses: Vec<Hypothesis>,
        config: &Config,
        inputs: AuditInputs,
    ) -> Self {
        let tol_abs = config.audit.tol_abs;
        let tol_rel = config.audit.tol_rel;
        let threshold = tol_abs.max(tol_rel * rhs.abs());
        let slack = rhs - lhs;
        let status = if !hypotheses.iter().all(|h| h.pass) {
            AuditStatus::HypothesesNotMet
        } else if slack >= -threshold {
            AuditStatus::Pass
        } else {
            AuditStatus::Violation
        };
        AuditRecord {
            theorem_id: theorem_id.into(),
            lhs,
            rhs,
            slack,
            hypotheses,
            status,
            tolerances: ToleranceUsed {
                tol_abs,
                tol_rel,
                threshold,
            },
            inputs,
            integrals: BTreeMap::new(),
            equality_gap: None,
            notes: Vec::new(),
        }
    }

    /// A record for an audit that could not be evaluated.
    pub fn failed(
        theorem_id: impl Into<String>,
        reason: &str,
        config: &Config,
        inputs: AuditInputs,
    ) -> Self {
        let mut r = AuditRecord::new(
            theorem_id,
            f64::NAN,
            f64::NAN,
            vec![Hypothesis::new("evaluation", false, f64::NAN)],
            config,
            inputs,
        );
        r.notes.push(reason.to_string());
        r
    }

    fn with(mut self, key: &str, value: f64) -> Self {
        self.integrals.insert(key.into(), value);
        self
    }

    fn with_all(mut self, values: &[(&str, f64)]) -> Self {
        for (k, v) in values {
            self.integrals.insert((*k).into(), *v);
        }
        self
    }

    fn expect_equality(mut self) -> Self {
        self.equality_gap = Some(self.slack.abs() / self.rhs.abs().max(f64::MIN_POSITIVE));
        self
    }

    /// `slack / |rhs|`.
    pub fn relative_slack(&self) -> f64 {
        self.slack / self.rhs.abs().max(f64::MIN_POSITIVE)
    }
}

/// A tensor field with the identifier used in reports.
#[derive(Clone, Debug)]
pub struct NamedTensor {
    pub id: String,
    pub field: TensorField,
}

impl NamedTensor {
    pub fn new(id: impl Into<String>, field: TensorField) -> Self {
        NamedTensor {
            id: id.into(),
            field,
        }
    }

    pub fn identity(mesh: &ImmersedMesh) -> Self {
        NamedTensor::new("identity", TensorField::identity(mesh))
    }
}

/// Radial test function profile `phi` in the proof-chain stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phi {
    Th,
    Sd,
    R,
}

impl Phi {
    /// `(phi, phi')` at `r`.
    fn eval(self, r: f64, delta: crate::hypgeo::Delta) -> (f64, f64) {
        let t = delta_trig(r, delta);
        match self {
            Phi::Th => (t.th, th_prime(r, delta)),
            Phi::Sd => (t.sd, t.cd),
            Phi::R => (r, 1.0),
        }
    }
}

/// Everything computed once per mesh: metric, curvature, Laplace operators
/// and modes, centers, p-eigenvalues.
pub struct Analysis<'a> {
    pub mesh: &'a ImmersedMesh,
    pub metric: IntrinsicMetric,
    pub curv: CurvatureData,
    pub config: &'a Config,
    pub scene: String,
    laplace: OnceCell<(AssembledOperators, Modes)>,
    plap: RefCell<HashMap<u64, SpectralResult>>,
    centers: RefCell<Vec<CenterResult>>,
}

impl<'a> Analysis<'a> {
    pub fn new(
        mesh: &'a ImmersedMesh,
        config: &'a Config,
        scene: impl Into<String>,
    ) -> Result<Self> {
        let metric = build_intrinsic_metric(mesh, &config.mesh)?;
        let curv = second_fundamental_form(mesh)?;
        Ok(Analysis {
            mesh,
            metric,
            curv,
            config,
            scene: scene.into(),
            laplace: OnceCell::new(),
            plap: RefCell::new(HashMap::new()),
            centers: RefCell::new(Vec::new()),
        })
    }

    fn inputs(&self) -> AuditInputs {
        AuditInputs {
            scene: self.scene.clone(),
            ..Default::default()
        }
    }

    pub fn areas(&self) -> &[f64] {
        &self.metric.vertex_areas
    }

    pub fn volume(&self) -> f64 {
        self.metric.total_area()
    }

    /// Lumped integral of a vertex field.
    pub fn integral(&self, field: impl IntoIterator<Item = f64>) -> f64 {
        field
            .into_iter()
            .zip(self.areas())
            .map(|(x, a)| x * a)
            .sum()
    }

    fn weighted_integral(&self, field: impl IntoIterator<Item = f64>) -> f64 {
        let w = self.mesh.vertex_weights();
        field
            .into_iter()
            .zip(self.areas())
            .zip(&w)
            .map(|((x, a), e)| x * a * e)
            .sum()
    }

    fn assembly(&self, tensor: Option<&TensorField>, weighted: bool) -> Result<AssembledOperators> {
        assemble(
            self.mesh,
            &self.metric,
            AssemblyOptions {
                tensor,
                weighted,
                consistent_mass: self.config.linear.consistent_mass,
            },
        )
    }

    /// Unweighted Laplace operators and lowest modes, computed once.
    pub fn laplace(&self) -> Result<&(AssembledOperators, Modes)> {
        if let Some(l) = self.laplace.get() {
            return Ok(l);
        }
        let ops = self.assembly(None, false)?;
        let modes = lowest_modes(&ops, &self.config.linear, self.config.seed)?;
        Ok(self.laplace.get_or_init(|| (ops, modes)))
    }

    /// First nonzero eigenvalue of the Laplacian.
    pub fn lambda_laplace(&self) -> Result<SpectralResult> {
        Ok(self.laplace()?.1.first())
    }

    /// First nonzero eigenvalue of the p-Laplacian. At `p = 2` this is the
    /// linear eigenpair, so the p = 2 records coincide with the Laplace ones.
    pub fn lambda_p(&self, p: f64) -> Result<SpectralResult> {
        if p == 2.0 {
            return self.lambda_laplace();
        }
        if let Some(r) = self.plap.borrow().get(&p.to_bits()) {
            return Ok(r.clone());
        }
        let (ops, modes) = self.laplace()?;
        // The p-Laplacian quotient uses lumped masses; reuse the lumped
        // operators even when the linear solves use consistent mass.
        let lumped;
        let ops = if ops.consistent_mass {
            lumped = assemble(self.mesh, &self.metric, AssemblyOptions::default())?;
            &lumped
        } else {
            ops
        };
        let r = lambda1_p(
            self.mesh,
            &self.metric,
            ops,
            modes,
            p,
            &self.config.plap,
            self.config.seed,
        )?;
        self.plap.borrow_mut().insert(p.to_bits(), r.clone());
        Ok(r)
    }

    /// First nonzero eigenvalue of `L_T` (weighted by `e^{-f}` if requested).
    pub fn lambda_t(&self, t: &TensorField, weighted: bool) -> Result<SpectralResult> {
        let ops = self.assembly(Some(t), weighted)?;
        Ok(lowest_modes(&ops, &self.config.linear, self.config.seed)?.first())
    }

    pub fn center(&self, mode: CenterMode) -> Result<CenterResult> {
        if let Some(c) = self.centers.borrow().iter().find(|c| c.mode == mode) {
            return Ok(c.clone());
        }
        let c = find_center(self.mesh, &self.metric, mode, &self.config.center)?;
        self.centers.borrow_mut().push(c.clone());
        Ok(c)
    }

    pub fn tensor_report(&self, t: &TensorField, q0: Option<&AmbientPoint>) -> TensorReport {
        check_tensor(self.mesh, &self.metric, &self.curv, t, q0, self.config)
    }

    /// Distances from `q0` to every vertex.
    pub fn radii(&self, q0: &AmbientPoint) -> Vec<f64> {
        self.mesh.distance_field(q0)
    }

    /// Unit radial direction `grad^N r` at every vertex (zero at `q0`).
    fn radial_directions(&self, q0: &AmbientPoint) -> Vec<DVector<f64>> {
        let amb = self.mesh.ambient();
        self.mesh
            .vertices()
            .iter()
            .map(|v| {
                let l = amb.log(v, q0);
                let n = amb.norm(&l);
                if n > 0.0 {
                    -l / n
                } else {
                    l
                }
            })
            .collect()
    }

    /// Raw integrals stored on every record: `vol`, `int_h_sq`, `int_th_sq`
    /// (from `q0`, or the linear center when it converges) and, for a tensor,
    /// `int_tr`, `int_ht_sq_over_tr`, `sup_tr`, `q_t`.
    fn raw_integrals(
        &self,
        t: Option<&TensorField>,
        q0: Option<&AmbientPoint>,
    ) -> Vec<(&'static str, f64)> {
        let mut out = vec![
            ("vol", self.volume()),
            ("int_h_sq", self.integral(self.curv.mean_curvature_sq())),
        ];
        let center;
        let q0 = match q0 {
            Some(q) => Some(q),
            None => {
                center = self.center(CenterMode::Linear).ok().filter(|c| c.converged);
                center.as_ref().map(|c| &c.q0)
            }
        };
        if let Some(q) = q0 {
            let delta = self.mesh.delta();
            out.push((
                "int_th_sq",
                self.integral(
                    self.radii(q)
                        .into_iter()
                        .map(|r| delta_trig(r, delta).th.powi(2)),
                ),
            ));
        }
        if let Some(ti) = t.and_then(|t| tensor_integrals(self, t).ok()) {
            out.extend([
                ("int_tr", ti.int_tr),
                ("int_ht_sq_over_tr", ti.int_ht_sq_over_tr),
                ("sup_tr", ti.sup_tr),
                ("q_t", ti.q),
            ]);
        }
        out
    }

    /// Tangential gradient of the density in the curvature frame, by least
    /// squares over the one-ring.
    fn density_gradient(&self) -> Vec<Vector2<f64>> {
        let amb = self.mesh.ambient();
        let f = self.mesh.density();
        (0..self.mesh.n_vertices())
            .map(|v| {
                let p = self.mesh.vertex(v);
                let mut ata = Matrix2::zeros();
                let mut atb = Vector2::zeros();
                for &w in self.mesh.neighbors(v) {
                    let l = amb.log(p, self.mesh.vertex(w));
                    let c = self.curv.tangent_components(v, &l);
                    let c = Vector2::new(c[0], c[1]);
                    ata += c * c.transpose();
                    atb += c * (f[w] - f[v]);
                }
                ata.try_inverse().map_or(Vector2::zeros(), |inv| inv * atb)
            })
            .collect()
    }

    /// `|H_T - T grad f|^2` per vertex; the two parts are orthogonal.
    fn weighted_ht_sq(&self, t: &TensorField) -> Result<Vec<f64>> {
        let ht = h_t(&self.curv, t)?;
        let amb = self.mesh.ambient();
        let grad = self.density_gradient();
        (0..self.mesh.n_vertices())
            .map(|v| {
                let tv = self.curv.tensor_in_frame(t, v)?;
                let tg = tv * grad[v];
                Ok(amb.inner(&ht[v], &ht[v]) + tg.norm_squared())
            })
            .collect()
    }
}

/// Integrals entering the bounds for one tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorIntegrals {
    pub vol: f64,
    pub int_tr: f64,
    pub sup_tr: f64,
    pub inf_tr: f64,
    /// `int |H_T|^2 / tr T`.
    pub int_ht_sq_over_tr: f64,
    /// `vol sup tr T / (int tr T)^2 * int |H_T|^2 / tr T`.
    pub q: f64,
}

pub fn tensor_integrals(an: &Analysis<'_>, t: &TensorField) -> Result<TensorIntegrals> {
    let tr = t.trace();
    let ht = h_t(&an.curv, t)?;
    let amb = an.mesh.ambient();
    let vol = an.volume();
    let int_tr = an.integral(tr.iter().copied());
    let sup_tr = tr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let inf_tr = tr.iter().copied().fold(f64::INFINITY, f64::min);
    let int_ht_sq_over_tr = an.integral(ht.iter().zip(&tr).map(|(h, t)| amb.inner(h, h) / t));
    let q = vol * sup_tr / (int_tr * int_tr) * int_ht_sq_over_tr;
    Ok(TensorIntegrals {
        vol,
        int_tr,
        sup_tr,
        inf_tr,
        int_ht_sq_over_tr,
        q,
    })
}

fn closed_hyp(mesh: &ImmersedMesh) -> Hypothesis {
    Hypothesis::new(
        "closed",
        mesh.is_closed(),
        if mesh.is_closed() { 0.0 } else { -1.0 },
    )
}

fn delta_negative_hyp(mesh: &ImmersedMesh) -> Hypothesis {
    let d = mesh.delta().value();
    Hypothesis::new("delta_negative", d < 0.0, -d)
}

fn delta_zero_hyp(mesh: &ImmersedMesh) -> Hypothesis {
    let d = mesh.delta().value();
    Hypothesis::new("delta_zero", d == 0.0, -d.abs())
}

fn with_boundary_hyp(mesh: &ImmersedMesh) -> Hypothesis {
    Hypothesis::new(
        "has_boundary",
        !mesh.is_closed(),
        if mesh.is_closed() { -1.0 } else { 0.0 },
    )
}

fn hyps_from(report: &TensorReport, prefix: &str) -> Vec<Hypothesis> {
    report
        .hypotheses(prefix)
        .into_iter()
        .map(|(n, p, m)| Hypothesis::new(n, p, m))
        .collect()
}

fn nfac(n: usize, p: f64) -> f64 {
    (n as f64).powf((p - 2.0).abs() / 2.0)
}

/// Right-hand side of the p-Laplacian bound as a function of
/// `Q = (1/vol) int |H|^2` (or `Q(T)`).
fn plap_rhs(n: usize, p: f64, delta: f64, q: f64) -> f64 {
    let c = nfac(n, p) * M.powf(p / 2.0);
    if p >= 2.0 {
        c * q.powf(p / 2.0 - 1.0) * (delta + q)
    } else {
        c * (-delta).powf(p / 2.0 - 1.0) * (p / 2.0 * delta + q)
    }
}

fn plap_checks(an: &Analysis<'_>, p: f64) -> Vec<Hypothesis> {
    let range = &an.config.plap;
    vec![
        closed_hyp(an.mesh),
        delta_negative_hyp(an.mesh),
        Hypothesis::new(
            "p_in_range",
            p > 1.0 && p >= range.p_min && p <= range.p_max,
            p - 1.0,
        ),
    ]
}

/// p-Laplacian bound with the mean curvature (`reilly_plap`).
pub fn audit_reilly_plap(an: &Analysis<'_>, p: f64) -> AuditRecord {
    let id = "reilly_plap";
    let mut inputs = an.inputs();
    inputs.p = Some(p);
    let hyps = plap_checks(an, p);
    if !hyps.iter().all(|h| h.pass) {
        return AuditRecord::new(id, f64::NAN, f64::NAN, hyps, an.config, inputs);
    }
    let lam = match an.lambda_p(p) {
        Ok(l) => l,
        Err(e) => return AuditRecord::failed(id, &e.to_string(), an.config, inputs),
    };
    let delta = an.mesh.delta().value();
    let n = an.mesh.ambient().dim();
    let vol = an.volume();
    let h2 = an.integral(an.curv.mean_curvature_sq());
    let int_dh = an.integral(an.curv.mean_curvature_sq().into_iter().map(|h| delta + h));
    // Written exactly as stated for each branch.
    let rhs = if p >= 2.0 {
        nfac(n, p) * (M / vol).powf(p / 2.0) * h2.powf(p / 2.0 - 1.0) * int_dh
    } else {
        let int_pdh = an.integral(
            an.curv
                .mean_curvature_sq()
                .into_iter()
                .map(|h| p / 2.0 * delta + h),
        );
        nfac(n, p) * M.powf(p / 2.0) * (-delta).powf(p / 2.0 - 1.0) / vol * int_pdh
    };
    let mut rec = AuditRecord::new(id, lam.eigenvalue, rhs, hyps, an.config, inputs)
        .with_all(&an.raw_integrals(None, None))
        .with_all(&[
            ("lambda", lam.eigenvalue),
            ("vol", vol),
            ("int_h_sq", h2),
            ("q", h2 / vol),
            ("solver_residual", lam.residual),
        ]);
    if p == 2.0 {
        if let Ok(r) = arsinh_delta((M / lam.eigenvalue).sqrt(), an.mesh.delta()) {
            rec = rec.with("equality_radius", r);
        }
    }
    if !lam.converged {
        rec.notes
            .push("p-Laplacian descent did not converge; lhs is a certified upper bound".into());
    }
    rec.notes.extend(lam.notes);
    rec
}

/// p-Laplacian bound with `H_T` (`reilly_plap_tensor`).
pub fn audit_reilly_plap_tensor(an: &Analysis<'_>, p: f64, t: &NamedTensor) -> AuditRecord {
    let id = "reilly_plap_tensor";
    let mut inputs = an.inputs();
    inputs.p = Some(p);
    inputs.tensors = vec![t.id.clone()];
    let mut hyps = plap_checks(an, p);
    let report = an.tensor_report(&t.field, None);
    hyps.extend(hyps_from(&report, "t_"));
    if !hyps.iter().all(|h| h.pass) {
        return AuditRecord::new(id, f64::NAN, f64::NAN, hyps, an.config, inputs);
    }
    let (lam, ti) = match (an.lambda_p(p), tensor_integrals(an, &t.field)) {
        (Ok(l), Ok(ti)) => (l, ti),
        (Err(e), _) | (_, Err(e)) => {
            return AuditRecord::failed(id, &e.to_string(), an.config, inputs)
        }
    };
    let delta = an.mesh.delta().value();
    let rhs = plap_rhs(an.mesh.ambient().dim(), p, delta, ti.q);
    AuditRecord::new(id, lam.eigenvalue, rhs, hyps, an.config, inputs)
        .with_all(&an.raw_integrals(Some(&t.field), None))
        .with_all(&[
            ("lambda", lam.eigenvalue),
            ("vol", ti.vol),
            ("int_tr", ti.int_tr),
            ("sup_tr", ti.sup_tr),
            ("int_ht_sq_over_tr", ti.int_ht_sq_over_tr),
            ("q", ti.q),
            ("divergence_normalized", report.divergence.normalized),
        ])
}

/// `L_T` bound (`lt_bound`).
pub fn audit_lt(an: &Analysis<'_>, t: &NamedTensor) -> AuditRecord {
    let id = "lt_bound";
    let mut inputs = an.inputs();
    inputs.tensors = vec![t.id.clone()];
    let mut hyps = vec![closed_hyp(an.mesh), delta_negative_hyp(an.mesh)];
    let report = an.tensor_report(&t.field, None);
    hyps.extend(hyps_from(&report, "t_"));
    if !hyps.iter().all(|h| h.pass) {
        return AuditRecord::new(id, f64::NAN, f64::NAN, hyps, an.config, inputs);
    }
    let (lam, ti) = match (an.lambda_t(&t.field, false), tensor_integrals(an, &t.field)) {
        (Ok(l), Ok(ti)) => (l, ti),
        (Err(e), _) | (_, Err(e)) => {
            return AuditRecord::failed(id, &e.to_string(), an.config, inputs)
        }
    };
    let delta = an.mesh.delta().value();
    let rhs = ti.sup_tr / ti.int_tr * (delta * ti.int_tr + ti.int_ht_sq_over_tr);
    AuditRecord::new(id, lam.eigenvalue, rhs, hyps, an.config, inputs)
        .with_all(&an.raw_integrals(Some(&t.field), None))
        .with_all(&[
            ("lambda", lam.eigenvalue),
            ("vol", ti.vol),
            ("int_tr", ti.int_tr),
            ("sup_tr", ti.sup_tr),
            ("mean_tr", ti.int_tr / ti.vol),
            ("int_ht_sq_over_tr", ti.int_ht_sq_over_tr),
        ])
}

/// The two `(T, S)` bounds (`lt_bound_ts1`, `lt_bound_ts2`). The alternative
/// hypotheses are required of `S`; `T` must be positive definite and
/// divergence free.
pub fn audit_ts(an: &Analysis<'_>, t: &NamedTensor, s: &NamedTensor) -> [AuditRecord; 2] {
    let mut inputs = an.inputs();
    inputs.tensors = vec![t.id.clone(), s.id.clone()];
    let mut hyps = vec![closed_hyp(an.mesh), delta_negative_hyp(an.mesh)];
    let rt = an.tensor_report(&t.field, None);
    let rs = an.tensor_report(&s.field, None);
    hyps.extend(hyps_from(&rt, "t_").into_iter().take(2));
    hyps.extend(hyps_from(&rs, "s_"));
    if !hyps.iter().all(|h| h.pass) {
        return [
            AuditRecord::new(
                "lt_bound_ts1",
                f64::NAN,
                f64::NAN,
                hyps.clone(),
                an.config,
                inputs.clone(),
            ),
            AuditRecord::new("lt_bound_ts2", f64::NAN, f64::NAN, hyps, an.config, inputs),
        ];
    }
    let res = (|| -> Result<(SpectralResult, TensorIntegrals, TensorIntegrals, f64)> {
        let lam = an.lambda_t(&t.field, false)?;
        let ti = tensor_integrals(an, &t.field)?;
        let si = tensor_integrals(an, &s.field)?;
        let ratio = t
            .field
            .trace()
            .iter()
            .zip(s.field.trace())
            .map(|(a, b)| a / b)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok((lam, ti, si, ratio))
    })();
    let (lam, ti, si, sup_ratio) = match res {
        Ok(x) => x,
        Err(e) => {
            return [
                AuditRecord::failed("lt_bound_ts1", &e.to_string(), an.config, inputs.clone()),
                AuditRecord::failed("lt_bound_ts2", &e.to_string(), an.config, inputs),
            ]
        }
    };
    let delta = an.mesh.delta().value();
    let rhs1 = sup_ratio * si.sup_tr * (delta + si.int_ht_sq_over_tr / si.int_tr);
    let rhs2 = ti.sup_tr * (delta + si.q);
    let vals = [
        ("lambda", lam.eigenvalue),
        ("vol", ti.vol),
        ("sup_tr_t", ti.sup_tr),
        ("sup_tr_s", si.sup_tr),
        ("sup_tr_ratio", sup_ratio),
        ("int_tr_s", si.int_tr),
        ("int_hs_sq_over_tr_s", si.int_ht_sq_over_tr),
        ("q_s", si.q),
    ];
    [
        AuditRecord::new(
            "lt_bound_ts1",
            lam.eigenvalue,
            rhs1,
            hyps.clone(),
            an.config,
            inputs.clone(),
        )
        .with_all(&an.raw_integrals(Some(&t.field), None))
        .with_all(&vals),
        AuditRecord::new(
            "lt_bound_ts2",
            lam.eigenvalue,
            rhs2,
            hyps,
            an.config,
            inputs,
        )
        .with_all(&an.raw_integrals(Some(&t.field), None))
        .with_all(&vals),
    ]
}

/// `L^2` lower bound of the mean curvature (`l2_lower_mean`, `t = None`) or of
/// `H_T` (`l2_lower_tensor`), from the base point `q0`. Recorded as
/// `lhs = (int tr T)^2 <= rhs = int |H_T|^2/tr T * int tr T Th^2(r)`.
pub fn audit_l2_lower(
    an: &Analysis<'_>,
    t: Option<&NamedTensor>,
    q0: &AmbientPoint,
) -> AuditRecord {
    let id = if t.is_some() {
        "l2_lower_tensor"
    } else {
        "l2_lower_mean"
    };
    let mut inputs = an.inputs();
    inputs.tensors = t.iter().map(|t| t.id.clone()).collect();
    let mut hyps = vec![closed_hyp(an.mesh), delta_negative_hyp(an.mesh)];
    if let Some(t) = t {
        hyps.extend(hyps_from(&an.tensor_report(&t.field, Some(q0)), "t_"));
    }
    // No solver involved: both sides are evaluated even when a hypothesis
    // fails, and the status still says so.
    let delta = an.mesh.delta();
    let th2: Vec<f64> = an
        .radii(q0)
        .iter()
        .map(|&r| delta_trig(r, delta).th.powi(2))
        .collect();
    let (lhs, a, b) = match t {
        None => {
            let vol = an.volume();
            (
                vol * vol,
                an.integral(an.curv.mean_curvature_sq()),
                an.integral(th2.iter().copied()),
            )
        }
        Some(t) => {
            let ti = match tensor_integrals(an, &t.field) {
                Ok(ti) => ti,
                Err(e) => return AuditRecord::failed(id, &e.to_string(), an.config, inputs),
            };
            let tr = t.field.trace();
            let b = an.integral(tr.iter().zip(&th2).map(|(x, y)| x * y));
            (ti.int_tr * ti.int_tr, ti.int_ht_sq_over_tr, b)
        }
    };
    let rhs = a * b;
    AuditRecord::new(id, lhs, rhs, hyps, an.config, inputs)
        .with_all(&an.raw_integrals(t.map(|t| &t.field), Some(q0)))
        .with_all(&[
            ("curvature_integral", a),
            ("th_sq_integral", b),
            ("ratio", rhs / lhs),
        ])
}

/// Normal coordinates at `q0` (standard frame) of every vertex.
fn normal_coords(an: &Analysis<'_>, q0: &AmbientPoint) -> Vec<DVector<f64>> {
    let amb = an.mesh.ambient();
    let frame = amb.standard_frame(q0);
    an.mesh
        .vertices()
        .iter()
        .map(|v| amb.frame_coords(&frame, &amb.log(q0, v)))
        .collect()
}

/// `<T grad r, grad r>` per vertex, with `grad r` the tangential part of the
/// ambient radial direction.
fn t_radial(an: &Analysis<'_>, t: &TensorField, q0: &AmbientPoint) -> Result<Vec<f64>> {
    let dirs = an.radial_directions(q0);
    (0..an.mesh.n_vertices())
        .map(|v| {
            let c = an.curv.tangent_components(v, &dirs[v]);
            let g = Vector2::new(c[0], c[1]);
            let tv = an.curv.tensor_in_frame(t, v)?;
            Ok(g.dot(&(tv * g)))
        })
        .collect()
}

/// Integrated gradient identity (`gradient_identity`): the FEM energy of the
/// radial test functions against the closed form, an equality in constant
/// curvature.
pub fn audit_gradient_identity(
    an: &Analysis<'_>,
    t: &NamedTensor,
    q0: &AmbientPoint,
    phi: Phi,
) -> AuditRecord {
    let id = "gradient_identity";
    let mut inputs = an.inputs();
    inputs.tensors = vec![t.id.clone()];
    inputs.phi = Some(phi);
    let res = (|| -> Result<(f64, f64)> {
        let delta = an.mesh.delta();
        let ops = an.assembly(Some(&t.field), false)?;
        let xs = normal_coords(an, q0);
        let n = an.mesh.ambient().dim();
        let mut energy = 0.0;
        for i in 0..n {
            let u: Vec<f64> = xs
                .iter()
                .map(|x| {
                    let r = x.norm();
                    if r == 0.0 {
                        0.0
                    } else {
                        phi.eval(r, delta).0 / r * x[i]
                    }
                })
                .collect();
            energy += ops.stiffness.quad_form(&u);
        }
        let trad = t_radial(an, &t.field, q0)?;
        let tr = t.field.trace();
        let radii = an.radii(q0);
        let closed = an.integral((0..radii.len()).map(|v| {
            let r = radii[v];
            let sd = delta_trig(r, delta).sd;
            let (f, fp) = phi.eval(r, delta);
            let q = if r == 0.0 { 1.0 } else { f * f / (sd * sd) };
            tr[v] * q + (fp * fp - q) * trad[v]
        }));
        Ok((energy, closed))
    })();
    match res {
        Ok((lhs, rhs)) => AuditRecord::new(id, lhs, rhs, vec![], an.config, inputs)
            .with_all(&[("energy", lhs), ("closed_form", rhs)])
            .expect_equality(),
        Err(e) => AuditRecord::failed(id, &e.to_string(), an.config, inputs),
    }
}

/// Integrated radial divergence inequality (`radial_divergence`):
/// `int [tr T phi/Th + (phi' - phi/Th) <T grad r, grad r>] <= -int <Z, H_T>`
/// with `Z = phi(r) grad^N r`.
pub fn audit_radial_divergence(
    an: &Analysis<'_>,
    t: &NamedTensor,
    q0: &AmbientPoint,
    phi: Phi,
) -> AuditRecord {
    let id = "radial_divergence";
    let mut inputs = an.inputs();
    inputs.tensors = vec![t.id.clone()];
    inputs.phi = Some(phi);
    let hyps = vec![closed_hyp(an.mesh)];
    let res = (|| -> Result<(f64, f64)> {
        let delta = an.mesh.delta();
        let amb = an.mesh.ambient();
        let trad = t_radial(an, &t.field, q0)?;
        let tr = t.field.trace();
        let ht = h_t(&an.curv, &t.field)?;
        let dirs = an.radial_directions(q0);
        let radii = an.radii(q0);
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for v in 0..radii.len() {
            let r = radii[v];
            let (f, fp) = phi.eval(r, delta);
            let th = delta_trig(r, delta).th;
            let ratio = if r == 0.0 { 1.0 } else { f / th };
            lhs += an.areas()[v] * (tr[v] * ratio + (fp - ratio) * trad[v]);
            rhs -= an.areas()[v] * f * amb.inner(&dirs[v], &ht[v]);
        }
        Ok((lhs, rhs))
    })();
    match res {
        Ok((lhs, rhs)) => AuditRecord::new(id, lhs, rhs, hyps, an.config, inputs),
        Err(e) => AuditRecord::failed(id, &e.to_string(), an.config, inputs),
    }
}

/// Test-function estimate (`test_function_bound`):
/// `lambda_{1,p} int Th^p <= n^{|p-2|/2} m^{p/2} int (1 + delta Th^2)^{p/2}` with
/// `r` measured from the p-moment center.
pub fn audit_test_function_bound(an: &Analysis<'_>, p: f64) -> AuditRecord {
    let id = "test_function_bound";
    let mut inputs = an.inputs();
    inputs.p = Some(p);
    let mut hyps = plap_checks(an, p);
    hyps.retain(|h| h.name != "delta_negative");
    if !hyps.iter().all(|h| h.pass) {
        return AuditRecord::new(id, f64::NAN, f64::NAN, hyps, an.config, inputs);
    }
    let mode = if p == 2.0 {
        CenterMode::Linear
    } else {
        CenterMode::PMoment { p }
    };
    let (lam, center) = match (an.lambda_p(p), an.center(mode)) {
        (Ok(l), Ok(c)) => (l, c),
        (Err(e), _) | (_, Err(e)) => {
            return AuditRecord::failed(id, &e.to_string(), an.config, inputs)
        }
    };
    inputs.center_residual = Some(center.residual);
    hyps.push(Hypothesis::new(
        "center_converged",
        center.converged,
        an.config.center.tol - center.residual,
    ));
    let delta = an.mesh.delta();
    let th: Vec<f64> = an
        .radii(&center.q0)
        .iter()
        .map(|&r| delta_trig(r, delta).th)
        .collect();
    let int_thp = an.integral(th.iter().map(|t| t.powf(p)));
    let int_rhs = an.integral(
        th.iter()
            .map(|t| (1.0 + delta.value() * t * t).powf(p / 2.0)),
    );
    let n = an.mesh.ambient().dim();
    let rhs = nfac(n, p) * M.powf(p / 2.0) * int_rhs;
    AuditRecord::new(id, lam.eigenvalue * int_thp, rhs, hyps, an.config, inputs).with_all(&[
        ("lambda", lam.eigenvalue),
        ("int_th_p", int_thp),
        ("int_rhs", int_rhs),
    ])
}

/// Position-vector estimate in flat space (`position_vector_bound`):
/// `int tr T mu_f <= int |H_T - T grad f| r mu_f`, from the weighted center.
pub fn audit_position_vector(an: &Analysis<'_>, t: &NamedTensor) -> AuditRecord {
    let id = "position_vector_bound";
    let mut inputs = an.inputs();
    inputs.tensors = vec![t.id.clone()];
    let hyps = vec![closed_hyp(an.mesh), delta_zero_hyp(an.mesh)];
    if !hyps.iter().all(|h| h.pass) {
        return AuditRecord::new(id, f64::NAN, f64::NAN, hyps, an.config, inputs);
    }
    let res = (|| -> Result<(f64, f64, f64)> {
        let c = an.center(CenterMode::WeightedInterior)?;
        let r = an.radii(&c.q0);
        let w = an.weighted_ht_sq(&t.field)?;
        let lhs = an.weighted_integral(t.field.trace());
        let rhs = an.weighted_integral(w.iter().zip(&r).map(|(a, r)| a.sqrt() * r));
        Ok((lhs, rhs, c.residual))
    })();
    match res {
        Ok((lhs, rhs, cres)) => {
            inputs.center_residual = Some(cres);
            AuditRecord::new(id, lhs, rhs, hyps, an.config, inputs)
        }
        Err(e) => AuditRecord::failed(id, &e.to_string(), an.config, inputs),
    }
}

/// Proof-chain stages: gradient identity, radial divergence, the
/// test-function estimate and, in flat space, the position-vector estimate.
pub fn audit_proof_chain(
    an: &Analysis<'_>,
    p: f64,
    t: Option<&NamedTensor>,
    q0: &AmbientPoint,
    phi: Phi,
) -> Vec<AuditRecord> {
    let id = NamedTensor::identity(an.mesh);
    let t = t.unwrap_or(&id);
    let mut out = vec![
        audit_gradient_identity(an, t, q0, phi),
        audit_radial_divergence(an, t, q0, phi),
    ];
    if !an.mesh.delta().is_euclidean() {
        out.push(audit_test_function_bound(an, p));
    } else {
        out.push(audit_position_vector(an, t));
    }
    out
}

/// Weighted `L_{T,f}` bound in flat space (`weighted_lt_bound`):
/// `lambda_1 (int tr S mu_f)^2 <= int tr T mu_f int |H_S - S grad f|^2 mu_f`.
pub fn audit_weighted(an: &Analysis<'_>, t: &NamedTensor, s: &NamedTensor) -> AuditRecord {
    let id = "weighted_lt_bound";
    let mut inputs = an.inputs();
    inputs.tensors = vec![t.id.clone(), s.id.clone()];
    let mut hyps = vec![closed_hyp(an.mesh), delta_zero_hyp(an.mesh)];
    let rt = an.tensor_report(&t.field, None);
    let rs = an.tensor_report(&s.field, None);
    hyps.extend(hyps_from(&rt, "t_").into_iter().take(2));
    hyps.extend(hyps_from(&rs, "s_").into_iter().take(2));
    if !hyps.iter().all(|h| h.pass) {
        return AuditRecord::new(id, f64::NAN, f64::NAN, hyps, an.config, inputs);
    }
    let res = (|| -> Result<(f64, f64, f64, f64, f64)> {
        let lam = an.lambda_t(&t.field, true)?.eigenvalue;
        let int_s = an.weighted_integral(s.field.trace());
        let int_t = an.weighted_integral(t.field.trace());
        let int_h = an.weighted_integral(an.weighted_ht_sq(&s.field)?);
        Ok((lam, int_s, int_t, int_h, lam * int_s * int_s))
    })();
    match res {
        Ok((lam, int_s, int_t, int_h, lhs)) => {
            AuditRecord::new(id, lhs, int_t * int_h, hyps, an.config, inputs).with_all(&[
                ("lambda", lam),
                ("int_tr_s", int_s),
                ("int_tr_t", int_t),
                ("int_hs_minus_s_grad_f_sq", int_h),
            ])
        }
        Err(e) => AuditRecord::failed(id, &e.to_string(), an.config, inputs),
    }
}

/// Boundary data in flat space: per boundary vertex the curvature vector of
/// the boundary curve, the arc-length derivative of `f`, and the lumped
/// boundary length.
struct BoundaryCurve {
    vertices: Vec<usize>,
    kappa_sq: Vec<f64>,
    df_ds: Vec<f64>,
    length: Vec<f64>,
}

fn boundary_curve(mesh: &ImmersedMesh) -> BoundaryCurve {
    let mut out = BoundaryCurve {
        vertices: Vec::new(),
        kappa_sq: Vec::new(),
        df_ds: Vec::new(),
        length: Vec::new(),
    };
    let f = mesh.density();
    for lp in mesh.boundary() {
        let k = lp.len();
        for i in 0..k {
            let (a, b, c) = (lp[(i + k - 1) % k], lp[i], lp[(i + 1) % k]);
            let pa = mesh.vertex(a).coords();
            let pb = mesh.vertex(b).coords();
            let pc = mesh.vertex(c).coords();
            let u = pa - pb;
            let w = pc - pb;
            let (lu, lw) = (u.norm(), w.norm());
            // Circle through the three points: kappa = 2 sin(angle at b') / |a - c|.
            let chord = (pa - pc).norm();
            let cos = (u.dot(&w) / (lu * lw)).clamp(-1.0, 1.0);
            let kappa = 2.0 * (1.0 - cos * cos).sqrt() / chord;
            out.vertices.push(b);
            out.kappa_sq.push(kappa * kappa);
            out.df_ds.push((f[c] - f[a]) / (lu + lw));
            out.length.push(0.5 * (lu + lw));
        }
    }
    out
}

/// Weighted Steklov (`weighted_steklov_bound`) and Steklov-Wentzell
/// (`steklov_wentzell_bound`) bounds in flat space. `s` is the scalar tensor of
/// the boundary curve per boundary vertex (in [`ImmersedMesh::boundary_vertices`]
/// order); `None` means the identity.
pub fn audit_boundary(
    an: &Analysis<'_>,
    t: &NamedTensor,
    s: Option<&[f64]>,
    b: f64,
) -> [AuditRecord; 2] {
    let mut inputs = an.inputs();
    inputs.tensors = vec![
        t.id.clone(),
        if s.is_some() {
            "boundary_scalar"
        } else {
            "boundary_identity"
        }
        .into(),
    ];
    inputs.b = Some(b);
    let mut hyps = vec![with_boundary_hyp(an.mesh), delta_zero_hyp(an.mesh)];
    let rt = an.tensor_report(&t.field, None);
    hyps.extend(hyps_from(&rt, "t_").into_iter().take(2));
    hyps.push(Hypothesis::new("b_positive", b > 0.0, b));
    if !hyps.iter().all(|h| h.pass) {
        return [
            AuditRecord::new(
                "weighted_steklov_bound",
                f64::NAN,
                f64::NAN,
                hyps.clone(),
                an.config,
                inputs.clone(),
            ),
            AuditRecord::new(
                "steklov_wentzell_bound",
                f64::NAN,
                f64::NAN,
                hyps,
                an.config,
                inputs,
            ),
        ];
    }
    let curve = boundary_curve(an.mesh);
    let bverts = an.mesh.boundary_vertices();
    let pos: HashMap<usize, usize> = bverts.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let sval = |v: usize| s.map_or(1.0, |s| s[pos[&v]]);
    if let Some(s) = s {
        let smin = s.iter().copied().fold(f64::INFINITY, f64::min);
        hyps.push(Hypothesis::new(
            "s_positive_definite",
            s.len() == bverts.len() && smin > 0.0,
            smin,
        ));
    }
    let w = an.mesh.vertex_weights();
    let mut int_s_f = 0.0;
    let mut int_h_f = 0.0;
    let mut int_s = 0.0;
    let mut int_h = 0.0;
    let mut len = 0.0;
    for i in 0..curve.vertices.len() {
        let v = curve.vertices[i];
        let sv = sval(v);
        let l = curve.length[i];
        int_s_f += sv * l * w[v];
        int_h_f += sv * sv * (curve.kappa_sq[i] + curve.df_ds[i].powi(2)) * l * w[v];
        int_s += sv * l;
        int_h += sv * sv * curve.kappa_sq[i] * l;
        len += l;
    }
    let steklov = (|| -> Result<(f64, f64)> {
        let ops = an.assembly(Some(&t.field), true)?;
        let sigma = steklov_sigma1(&ops, &an.config.steklov)?.eigenvalue;
        Ok((sigma, an.weighted_integral(t.field.trace())))
    })();
    let wentzell = (|| -> Result<f64> {
        let ops = an.assembly(None, false)?;
        Ok(wentzell_alpha1(&ops, b, &an.config.steklov)?.eigenvalue)
    })();
    let rec1 = match steklov {
        Ok((sigma, int_t)) => AuditRecord::new(
            "weighted_steklov_bound",
            sigma * int_s_f * int_s_f,
            int_t * int_h_f,
            hyps.clone(),
            an.config,
            inputs.clone(),
        )
        .with_all(&[
            ("sigma", sigma),
            ("int_tr_t", int_t),
            ("boundary_int_tr_s", int_s_f),
            ("boundary_int_hs_sq", int_h_f),
        ]),
        Err(e) => AuditRecord::failed(
            "weighted_steklov_bound",
            &e.to_string(),
            an.config,
            inputs.clone(),
        ),
    };
    let vol = an.volume();
    let mut rec2 = match wentzell {
        Ok(alpha) => AuditRecord::new(
            "steklov_wentzell_bound",
            alpha * int_s * int_s,
            (M * vol + b * (M - 1.0) * len) * int_h,
            hyps,
            an.config,
            inputs,
        )
        .with_all(&[
            ("alpha", alpha),
            ("vol", vol),
            ("boundary_length", len),
            ("boundary_int_tr_s", int_s),
            ("boundary_int_hs_sq", int_h),
        ]),
        Err(e) => AuditRecord::failed("steklov_wentzell_bound", &e.to_string(), an.config, inputs),
    };
    rec2.notes
        .push("denominator on the boundary; alpha = b k^2 + k convention".into());
    if an.mesh.has_density() {
        rec2.notes
            .push("density ignored: the Steklov-Wentzell bound is unweighted".into());
    }
    [rec1, rec2]
}

/// Equality-case diagnosis of a near-sharp record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub theorem_id: String,
    /// `|slack| <= diagnostics_rel * |rhs|`.
    pub near_equality: bool,
    /// Area-weighted variance of `Th(r)` divided by its squared mean.
    pub th_relative_variance: f64,
    pub predicted_radius: Option<f64>,
    /// Area-weighted mean distance from the base point.
    pub fitted_radius: f64,
    /// `|H_T - <H_T, d_r> d_r|_{L2} / |H_T|_{L2}`.
    pub tangential_ratio: f64,
    pub verdict: String,
}

/// Diagnoses how close the mesh is to the equality configuration of a
/// record: a (T-)minimal surface in a geodesic sphere about `q0`. The radius
/// is predicted from `lambda` in the record, with `m` for Laplace-type
/// records and the mean of `tr T` for `L_T`-type ones.
pub fn equality_diagnostics(
    record: &AuditRecord,
    an: &Analysis<'_>,
    q0: &AmbientPoint,
    t: Option<&TensorField>,
) -> Result<Diagnosis> {
    let delta = an.mesh.delta();
    let radii = an.radii(q0);
    let vol = an.volume();
    let th: Vec<f64> = radii.iter().map(|&r| delta_trig(r, delta).th).collect();
    let mean = an.integral(th.iter().copied()) / vol;
    let var = an.integral(th.iter().map(|x| (x - mean).powi(2))) / vol;
    let fitted = an.integral(radii.iter().copied()) / vol;
    let ident = TensorField::identity(an.mesh);
    let tt = t.unwrap_or(&ident);
    let ht = h_t(&an.curv, tt)?;
    let amb = an.mesh.ambient();
    let dirs = an.radial_directions(q0);
    let mut tang = 0.0;
    let mut total = 0.0;
    for v in 0..radii.len() {
        let h = &ht[v];
        let along = amb.inner(h, &dirs[v]);
        let rest = h - &dirs[v] * along;
        tang += amb.inner(&rest, &rest) * an.areas()[v];
        total += amb.inner(h, h) * an.areas()[v];
    }
    let tangential_ratio = if total > 0.0 {
        (tang / total).sqrt()
    } else {
        0.0
    };
    let predicted_radius = record.integrals.get("lambda").and_then(|&lam| {
        let c = match t {
            Some(t) => {
                t.trace()
                    .iter()
                    .zip(an.areas())
                    .map(|(x, a)| x * a)
                    .sum::<f64>()
                    / vol
            }
            None => M,
        };
        if delta.is_euclidean() {
            Some((c / lam).sqrt())
        } else {
            arsinh_delta((c / lam).sqrt(), delta).ok()
        }
    });
    let near_equality = record.slack.abs() <= an.config.audit.diagnostics_rel * record.rhs.abs();
    let th_relative_variance = var / (mean * mean);
    let sphere = th_relative_variance < 1e-4 && tangential_ratio < 0.05;
    let verdict = match (sphere, predicted_radius) {
        (true, Some(r)) => {
            format!("consistent with a geodesic sphere of radius {fitted:.6} (predicted {r:.6})")
        }
        (true, None) => format!("consistent with a geodesic sphere of radius {fitted:.6}"),
        (false, _) => "not a geodesic sphere".to_string(),
    };
    debug!("{}: {verdict}", record.theorem_id);
    Ok(Diagnosis {
        theorem_id: record.theorem_id.clone(),
        near_equality,
        th_relative_variance,
        predicted_radius,
        fitted_radius: fitted,
        tangential_ratio,
        verdict,
    })
}

/// Checks that two records agree on both sides to a relative tolerance.
pub fn records_agree(a: &AuditRecord, b: &AuditRecord, rel: f64) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= rel * x.abs().max(y.abs()).max(f64::MIN_POSITIVE);
    close(a.lhs, b.lhs) && close(a.rhs, b.rhs)
}

/// Fails loudly on a record that should always evaluate.
pub fn require_evaluated(r: &AuditRecord) -> Result<()> {
    if r.lhs.is_finite() && r.rhs.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{} was not evaluated: {:?}",
            r.theorem_id, r.notes
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::newton_tensor;
    use crate::hypgeo::Isometry;
    use crate::scenes::{euclidean_sphere, flat_disk, geodesic_sphere, perturbed_sphere};

    fn cfg() -> Config {
        let mut c = Config::default();
        c.plap.restarts = 4;
        c
    }

    #[test]
    fn status_logic() {
        let c = Config::default();
        let ok = AuditRecord::new("x", 1.0, 1.02, vec![], &c, AuditInputs::default());
        assert_eq!(ok.status, AuditStatus::Pass);
        let tol = AuditRecord::new("x", 1.04, 1.0, vec![], &c, AuditInputs::default());
        assert_eq!(tol.status, AuditStatus::Pass);
        let bad = AuditRecord::new("x", 1.2, 1.0, vec![], &c, AuditInputs::default());
        assert_eq!(bad.status, AuditStatus::Violation);
        let hyp = AuditRecord::new(
            "x",
            1.2,
            1.0,
            vec![Hypothesis::new("h", false, -1.0)],
            &c,
            AuditInputs::default(),
        );
        assert_eq!(hyp.status, AuditStatus::HypothesesNotMet);
        let tiny = AuditRecord::new("x", 1e-10, 0.0, vec![], &c, AuditInputs::default());
        assert_eq!(tiny.status, AuditStatus::Pass);
    }

    #[test]
    fn sphere_p2_is_near_equality() {
        let mesh = geodesic_sphere(-1.0, 1.0, 5).unwrap();
        let c = cfg();
        let an = Analysis::new(&mesh, &c, "sphere").unwrap();
        let r = audit_reilly_plap(&an, 2.0);
        let exact = 2.0 / 1f64.sinh().powi(2);
        assert_eq!(r.status, AuditStatus::Pass);
        assert!(
            (r.lhs - exact).abs() < 0.03 * exact && (r.rhs - exact).abs() < 0.03 * exact,
            "{r:?}"
        );
        assert!((r.integrals["equality_radius"] - 1.0).abs() < 0.02);
    }

    #[test]
    fn identity_tensor_reproduces_mean_curvature_bound() {
        let mesh = perturbed_sphere(-1.0, 1.0, 0.1, 2, 3).unwrap();
        let c = cfg();
        let an = Analysis::new(&mesh, &c, "perturbed").unwrap();
        for p in [1.5, 2.0, 3.0] {
            let a = audit_reilly_plap(&an, p);
            let b = audit_reilly_plap_tensor(&an, p, &NamedTensor::identity(&mesh));
            let s = audit_reilly_plap_tensor(
                &an,
                p,
                &NamedTensor::new("3I", TensorField::scaled_identity(&mesh, 3.0)),
            );
            assert_eq!(a.status, AuditStatus::Pass, "{a:?}");
            assert!(records_agree(&a, &b, 1e-10), "p={p}: {a:?} {b:?}");
            assert!(records_agree(&b, &s, 1e-12));
        }
    }

    #[test]
    fn ts_reductions() {
        // Small enough for the ball alternative, so the Newton tensor is admissible.
        let mesh = perturbed_sphere(-1.0, 0.3, 0.1, 2, 3).unwrap();
        let c = cfg();
        let an = Analysis::new(&mesh, &c, "perturbed").unwrap();
        let t = NamedTensor::new("newton", newton_tensor(&mesh, &an.curv).unwrap());
        let lt = audit_lt(&an, &t);
        assert_eq!(lt.status, AuditStatus::Pass, "{lt:?}");
        let [ts1, _] = audit_ts(&an, &t, &t);
        assert!(records_agree(&lt, &ts1, 1e-12), "{lt:?} {ts1:?}");
        let id = NamedTensor::identity(&mesh);
        let [a, b] = audit_ts(&an, &t, &id);
        assert!(records_agree(&a, &b, 1e-12));
        // T = I in the second estimate is the p = 2 tensor bound for S.
        let [_, b] = audit_ts(&an, &id, &t);
        let cor = audit_reilly_plap_tensor(&an, 2.0, &t);
        assert!(records_agree(&b, &cor, 1e-10), "{b:?} {cor:?}");
    }

    #[test]
    fn l2_lower_bound_on_sphere() {
        let mesh = geodesic_sphere(-1.0, 1.0, 5).unwrap();
        let c = cfg();
        let an = Analysis::new(&mesh, &c, "sphere").unwrap();
        let o = mesh.ambient().origin();
        let r = audit_l2_lower(&an, None, &o);
        assert!((r.integrals["ratio"] - 1.0).abs() < 0.02, "{r:?}");
        let off = Isometry::boost(mesh.ambient(), 0, 0.3).apply_point(mesh.ambient(), &o);
        let r = audit_l2_lower(&an, None, &off);
        // Continuum value of mean Th^2(r) / tanh^2(1) for a base point 0.3 off center.
        assert!((r.integrals["ratio"] - 1.02714).abs() < 0.01, "{r:?}");
        let t1 = audit_l2_lower(&an, Some(&NamedTensor::identity(&mesh)), &off);
        let t3 = audit_l2_lower(
            &an,
            Some(&NamedTensor::new(
                "3I",
                TensorField::scaled_identity(&mesh, 3.0),
            )),
            &off,
        );
        assert!(
            (t1.integrals["ratio"] - t3.integrals["ratio"]).abs() < 1e-12 * t1.integrals["ratio"]
        );
    }

    #[test]
    fn proof_chain_on_sphere() {
        let mesh = geodesic_sphere(-1.0, 1.0, 4).unwrap();
        let c = cfg();
        let an = Analysis::new(&mesh, &c, "sphere").unwrap();
        let o = mesh.ambient().origin();
        let recs = audit_proof_chain(&an, 2.0, None, &o, Phi::Th);
        assert_eq!(recs.len(), 3);
        assert!(recs[0].equality_gap.unwrap() < 0.02, "{:?}", recs[0]);
        for r in &recs {
            assert_eq!(r.status, AuditStatus::Pass, "{r:?}");
        }
    }

    #[test]
    fn weighted_bound_on_unit_sphere() {
        let mesh = euclidean_sphere(1.0, 4).unwrap();
        let c = cfg();
        let an = Analysis::new(&mesh, &c, "unit sphere").unwrap();
        let id = NamedTensor::identity(&mesh);
        let r = audit_weighted(&an, &id, &id);
        assert_eq!(r.status, AuditStatus::Pass, "{r:?}");
        assert!((r.integrals["lambda"] - 2.0).abs() < 0.02);
        assert!(r.rhs / r.lhs >= 0.97);
        let pv = audit_position_vector(&an, &id);
        assert_eq!(pv.status, AuditStatus::Pass, "{pv:?}");
    }

    #[test]
    fn disk_boundary_bounds() {
        let mesh = flat_disk(1.0, 3).unwrap();
        let c = cfg();
        let an = Analysis::new(&mesh, &c, "disk").unwrap();
        let [st, sw] = audit_boundary(&an, &NamedTensor::identity(&mesh), None, 0.5);
        assert_eq!(st.status, AuditStatus::Pass, "{st:?}");
        assert_eq!(sw.status, AuditStatus::Pass, "{sw:?}");
        let four_pi_sq = 4.0 * std::f64::consts::PI.powi(2);
        assert!((st.lhs - four_pi_sq).abs() < 0.02 * four_pi_sq);
        assert!((sw.integrals["alpha"] - 1.5).abs() < 0.03);
    }

    #[test]
    fn hypotheses_gate_status() {
        let mesh = euclidean_sphere(1.0, 2).unwrap();
        let c = cfg();
        let an = Analysis::new(&mesh, &c, "flat").unwrap();
        let r = audit_reilly_plap(&an, 2.0);
        assert_eq!(r.status, AuditStatus::HypothesesNotMet);
        let disk = flat_disk(1.0, 1).unwrap();
        let an = Analysis::new(&disk, &c, "disk").unwrap();
        assert_eq!(
            audit_lt(&an, &NamedTensor::identity(&disk)).status,
            AuditStatus::HypothesesNotMet
        );
    }

    #[test]
    fn diagnostics_on_sphere() {
        let mesh = geodesic_sphere(-1.0, 1.0, 4).unwrap();
        let c = cfg();
        let an = Analysis::new(&mesh, &c, "sphere").unwrap();
        let r = audit_reilly_plap(&an, 2.0);
        let d = equality_diagnostics(&r, &an, &mesh.ambient().origin(), None).unwrap();
        assert!(d.near_equality);
        assert!((d.predicted_radius.unwrap() - 1.0).abs() < 0.02, "{d:?}");
        assert!(d.verdict.starts_with("consistent"));
        let bumpy = perturbed_sphere(-1.0, 1.0, 0.2, 2, 3).unwrap();
        let an = Analysis::new(&bumpy, &c, "bumpy").unwrap();
        let q = an.center(CenterMode::Linear).unwrap().q0;
        let r = audit_reilly_plap(&an, 2.0);
        let d = equality_diagnostics(&r, &an, &q, None).unwrap();
        assert!(d.th_relative_variance > 0.0);
        assert_eq!(d.verdict, "not a geodesic sphere");
    }
}
