//! Run configuration, the scene -> solve -> audit pipeline and report output
//! behind the `reilly` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use reilly_core::audit::*;
use reilly_core::center::CenterMode;
use reilly_core::curvature::{newton_tensor, TensorField};
use reilly_core::scenes::{DensitySpec, SceneKind, SceneSpec};
use reilly_core::{Config, ImmersedMesh};

/// Theorem ids accepted in a run config, in report order.
pub const THEOREMS: &[&str] = &[
    "reilly_plap",
    "reilly_plap_tensor",
    "lt_bound",
    "lt_bound_ts1",
    "lt_bound_ts2",
    "l2_lower_mean",
    "l2_lower_tensor",
    "gradient_identity",
    "radial_divergence",
    "test_function_bound",
    "position_vector_bound",
    "weighted_lt_bound",
    "weighted_steklov_bound",
    "steklov_wentzell_bound",
];

pub const P_RANGE: (f64, f64) = (1.1, 10.0);

/// How a tensor field is obtained for a scene.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorChoice {
    Identity,
    ScaledIdentity(f64),
    Newton,
    /// The tensor stored alongside a mesh file.
    FromMesh,
}

impl TensorChoice {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "identity" => TensorChoice::Identity,
            "newton" => TensorChoice::Newton,
            "mesh" => TensorChoice::FromMesh,
            _ => match s.strip_prefix("scaled_identity:") {
                Some(c) => {
                    let c: f64 = c.parse().with_context(|| format!("bad scale in tensor choice {s:?}"))?;
                    if !(c > 0.0) {
                        bail!("tensor choice {s:?}: scale must be positive");
                    }
                    TensorChoice::ScaledIdentity(c)
                }
                None => bail!("unknown tensor choice {s:?} (identity, newton, scaled_identity:<c>, mesh)"),
            },
        })
    }

    pub fn id(&self) -> String {
        match self {
            TensorChoice::Identity => "identity".into(),
            TensorChoice::ScaledIdentity(c) => format!("scaled_identity:{c}"),
            TensorChoice::Newton => "newton".into(),
            TensorChoice::FromMesh => "mesh".into(),
        }
    }

    fn resolve(&self, an: &Analysis<'_>, stored: Option<&TensorField>) -> Result<NamedTensor, String> {
        let field = match self {
            TensorChoice::Identity => TensorField::identity(an.mesh),
            TensorChoice::ScaledIdentity(c) => TensorField::scaled_identity(an.mesh, *c),
            TensorChoice::Newton => newton_tensor(an.mesh, &an.curv).map_err(|e| e.to_string())?,
            TensorChoice::FromMesh => stored.cloned().ok_or("mesh file carries no tensor")?,
        };
        Ok(NamedTensor::new(self.id(), field))
    }
}

/// One scene of a run: generated from a spec or loaded from a mesh file.
#[derive(Clone, Debug)]
pub struct SceneEntry {
    pub name: String,
    pub source: SceneSource,
    /// Overrides the run-wide tensor list.
    pub tensors: Option<Vec<TensorChoice>>,
}

#[derive(Clone, Debug)]
pub enum SceneSource {
    Spec(SceneSpec),
    File(PathBuf),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub json: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

/// Validated run configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub scenes: Vec<SceneEntry>,
    pub theorems: Vec<String>,
    pub p: Vec<f64>,
    pub tensors: Vec<TensorChoice>,
    pub config: Config,
    pub b: f64,
    pub phi: Phi,
    pub output: OutputPaths,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunConfig {
    #[serde(default)]
    scenes: Vec<Value>,
    #[serde(default)]
    theorems: Vec<String>,
    #[serde(default = "default_p")]
    p: Vec<f64>,
    #[serde(default = "default_tensors")]
    tensors: Vec<String>,
    /// Partial [`Config`]; omitted fields keep their defaults.
    #[serde(default)]
    config: Option<Value>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default = "default_b")]
    b: f64,
    #[serde(default = "default_phi")]
    phi: Phi,
    #[serde(default)]
    output: OutputPaths,
}

fn default_p() -> Vec<f64> {
    vec![1.5, 2.0, 3.0]
}

fn default_tensors() -> Vec<String> {
    vec!["identity".into()]
}

fn default_b() -> f64 {
    0.5
}

fn default_phi() -> Phi {
    Phi::Th
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies a partial config object over the defaults; unknown keys are errors.
pub fn config_with_overrides(patch: Option<Value>) -> Result<Config> {
    let mut base = serde_json::to_value(Config::default())?;
    if let Some(p) = patch {
        merge(&mut base, p);
    }
    serde_json::from_value(base).context("config")
}

fn parse_scene(i: usize, v: Value, base: &Path) -> Result<SceneEntry> {
    let ctx = || format!("scenes[{i}]");
    let Value::Object(mut map) = v else {
        bail!("{}: expected an object", ctx());
    };
    let tensors = match map.remove("tensors") {
        Some(t) => {
            let list: Vec<String> = serde_json::from_value(t).with_context(|| format!("{}.tensors", ctx()))?;
            Some(
                list.iter()
                    .map(|s| TensorChoice::parse(s))
                    .collect::<Result<Vec<_>>>()
                    .with_context(|| format!("{}.tensors", ctx()))?,
            )
        }
        None => None,
    };
    if let Some(mesh) = map.remove("mesh") {
        let name = map.remove("name").and_then(|n| n.as_str().map(String::from));
        if let Some(k) = map.keys().next() {
            bail!("{}: unknown field {k:?} next to \"mesh\"", ctx());
        }
        let path = mesh.as_str().ok_or_else(|| anyhow!("{}.mesh: expected a path", ctx()))?;
        let path = base.join(path);
        if !path.exists() {
            bail!("{}.mesh: file {} does not exist", ctx(), path.display());
        }
        let name = name.unwrap_or_else(|| path.file_stem().map_or(format!("scene{i}"), |s| s.to_string_lossy().into()));
        return Ok(SceneEntry {
            name,
            source: SceneSource::File(path),
            tensors,
        });
    }
    let spec: SceneSpec = serde_json::from_value(Value::Object(map)).with_context(ctx)?;
    Ok(SceneEntry {
        name: spec.label(),
        source: SceneSource::Spec(spec),
        tensors,
    })
}

impl RunConfig {
    /// Parses a run config. Relative mesh paths are taken relative to `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let raw: RawRunConfig = serde_json::from_str(text).context("run config")?;
        let mut config = config_with_overrides(raw.config)?;
        if let Some(s) = raw.seed {
            config.seed = s;
        }
        for t in &raw.theorems {
            if !THEOREMS.contains(&t.as_str()) {
                bail!("theorems: unknown id {t:?}; known ids are {}", THEOREMS.join(", "));
            }
        }
        for (i, p) in raw.p.iter().enumerate() {
            if !(P_RANGE.0..=P_RANGE.1).contains(p) {
                bail!("p[{i}] = {p} is outside [{}, {}]", P_RANGE.0, P_RANGE.1);
            }
        }
        if !(raw.b > 0.0) {
            bail!("b = {} must be positive", raw.b);
        }
        let tensors = raw
            .tensors
            .iter()
            .map(|s| TensorChoice::parse(s))
            .collect::<Result<Vec<_>>>()
            .context("tensors")?;
        let scenes = raw
            .scenes
            .into_iter()
            .enumerate()
            .map(|(i, v)| parse_scene(i, v, base))
            .collect::<Result<Vec<_>>>()?;
        Ok(RunConfig {
            scenes,
            theorems: raw.theorems,
            p: raw.p,
            tensors,
            config,
            b: raw.b,
            phi: raw.phi,
            output: raw.output,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::from_json(&text, base).with_context(|| format!("in {}", path.display()))
    }

    /// The hyperbolic corpus with the identity tensor: every hypothesis holds,
    /// so every record is expected to pass.
    pub fn default_corpus() -> Self {
        let mut scenes = vec![SceneSpec::new(SceneKind::GeodesicSphere { delta: -1.0, rho: 1.0 }, 4)];
        for a in [0.05, 0.2] {
            scenes.push(SceneSpec::new(
                SceneKind::PerturbedSphere {
                    delta: -1.0,
                    rho: 1.0,
                    amplitude: a,
                    mode: 2,
                },
                4,
            ));
        }
        for n in [3, 4] {
            scenes.push(SceneSpec::new(
                SceneKind::TubeTorus {
                    delta: -1.0,
                    circle_radius: 1.0,
                    tube_radius: 0.3,
                    ambient_dim: n,
                },
                1,
            ));
        }
        RunConfig {
            scenes: scenes
                .into_iter()
                .map(|s| SceneEntry {
                    name: s.label(),
                    source: SceneSource::Spec(s),
                    tensors: None,
                })
                .collect(),
            theorems: [
                "reilly_plap",
                "reilly_plap_tensor",
                "lt_bound",
                "lt_bound_ts1",
                "lt_bound_ts2",
                "l2_lower_mean",
                "l2_lower_tensor",
                "gradient_identity",
                "radial_divergence",
                "test_function_bound",
            ]
            .map(String::from)
            .to_vec(),
            p: default_p(),
            tensors: vec![TensorChoice::Identity, TensorChoice::ScaledIdentity(2.0)],
            config: Config::default(),
            b: default_b(),
            phi: Phi::Th,
            output: OutputPaths::default(),
        }
    }
}

/// Builds or loads a scene mesh.
pub fn load_scene(entry: &SceneEntry) -> Result<(ImmersedMesh, Option<TensorField>)> {
    match &entry.source {
        SceneSource::Spec(spec) => Ok((spec.build().with_context(|| format!("scene {}", entry.name))?, None)),
        SceneSource::File(path) => {
            ImmersedMesh::load(path).with_context(|| format!("scene {}: loading {}", entry.name, path.display()))
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SceneMeta {
    pub scene: String,
    pub n_vertices: usize,
    pub n_faces: usize,
    pub delta: f64,
    pub ambient_dim: usize,
    pub max_edge: f64,
    pub min_angle_deg: f64,
    pub lambda1: Option<Value>,
    pub plap: Vec<Value>,
    pub center: Option<Value>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub version: &'static str,
    pub generated_at: String,
    pub seed: u64,
    pub conventions: BTreeMap<&'static str, &'static str>,
    pub config: Config,
    pub records: Vec<AuditRecord>,
    pub solver_meta: Vec<SceneMeta>,
}

pub fn conventions() -> BTreeMap<&'static str, &'static str> {
    BTreeMap::from([
        ("mean_curvature", "averaged"),
        ("wentzell_sign", "positive-spectrum"),
        ("h_t", "unnormalized"),
        ("mass", "lumped"),
    ])
}

fn failed(theorem: &str, reason: &str, cfg: &Config, scene: &str, tensors: Vec<String>, p: Option<f64>) -> AuditRecord {
    AuditRecord::failed(
        theorem,
        reason,
        cfg,
        AuditInputs {
            scene: scene.into(),
            p,
            tensors,
            ..Default::default()
        },
    )
}

fn audit_scene(entry: &SceneEntry, mesh: &ImmersedMesh, stored: Option<&TensorField>, rc: &RunConfig) -> Result<(Vec<AuditRecord>, SceneMeta)> {
    let cfg = &rc.config;
    let an = Analysis::new(mesh, cfg, entry.name.clone()).with_context(|| format!("scene {}", entry.name))?;
    let choices = entry.tensors.as_ref().unwrap_or(&rc.tensors);
    let tensors: Vec<(String, Result<NamedTensor, String>)> = choices.iter().map(|c| (c.id(), c.resolve(&an, stored))).collect();
    let center = an.center(CenterMode::Linear).map_err(|e| e.to_string());
    let name = entry.name.as_str();
    let mut recs = Vec::new();
    let with_tensor = |recs: &mut Vec<AuditRecord>, theorem: &str, p: Option<f64>, f: &dyn Fn(&NamedTensor) -> AuditRecord| {
        for (id, t) in &tensors {
            match t {
                Ok(t) => recs.push(f(t)),
                Err(e) => recs.push(failed(theorem, e, cfg, name, vec![id.clone()], p)),
            }
        }
    };
    let pairs = |recs: &mut Vec<AuditRecord>, theorem: &str, f: &dyn Fn(&NamedTensor, &NamedTensor) -> Vec<AuditRecord>| {
        for (ti, t) in &tensors {
            for (si, s) in &tensors {
                match (t, s) {
                    (Ok(t), Ok(s)) => recs.extend(f(t, s).into_iter().filter(|r| r.theorem_id == theorem)),
                    (Err(e), _) | (_, Err(e)) => recs.push(failed(theorem, e, cfg, name, vec![ti.clone(), si.clone()], None)),
                }
            }
        }
    };
    for theorem in &rc.theorems {
        let th = theorem.as_str();
        match th {
            "reilly_plap" => rc.p.iter().for_each(|&p| recs.push(audit_reilly_plap(&an, p))),
            "reilly_plap_tensor" => {
                for &p in &rc.p {
                    with_tensor(&mut recs, th, Some(p), &|t| audit_reilly_plap_tensor(&an, p, t));
                }
            }
            "lt_bound" => with_tensor(&mut recs, th, None, &|t| audit_lt(&an, t)),
            "lt_bound_ts1" | "lt_bound_ts2" => pairs(&mut recs, th, &|t, s| audit_ts(&an, t, s).to_vec()),
            "weighted_lt_bound" => pairs(&mut recs, th, &|t, s| vec![audit_weighted(&an, t, s)]),
            "test_function_bound" => rc.p.iter().for_each(|&p| recs.push(audit_test_function_bound(&an, p))),
            "position_vector_bound" => with_tensor(&mut recs, th, None, &|t| audit_position_vector(&an, t)),
            "weighted_steklov_bound" | "steklov_wentzell_bound" => with_tensor(&mut recs, th, None, &|t| {
                audit_boundary(&an, t, None, rc.b).into_iter().find(|r| r.theorem_id == th).expect("both records")
            }),
            "l2_lower_mean" | "l2_lower_tensor" | "gradient_identity" | "radial_divergence" => {
                let q0 = match &center {
                    Ok(c) => &c.q0,
                    Err(e) => {
                        recs.push(failed(th, &format!("base point: {e}"), cfg, name, vec![], None));
                        continue;
                    }
                };
                match th {
                    "l2_lower_mean" => recs.push(audit_l2_lower(&an, None, q0)),
                    "l2_lower_tensor" => with_tensor(&mut recs, th, None, &|t| audit_l2_lower(&an, Some(t), q0)),
                    "gradient_identity" => with_tensor(&mut recs, th, None, &|t| audit_gradient_identity(&an, t, q0, rc.phi)),
                    _ => with_tensor(&mut recs, th, None, &|t| audit_radial_divergence(&an, t, q0, rc.phi)),
                }
            }
            _ => bail!("unknown theorem id {th:?}"),
        }
    }
    for r in &mut recs {
        if r.inputs.center_residual.is_none() && matches!(r.theorem_id.as_str(), "l2_lower_mean" | "l2_lower_tensor" | "gradient_identity" | "radial_divergence") {
            r.inputs.center_residual = center.as_ref().ok().map(|c| c.residual);
        }
    }
    let uses_plap = rc.theorems.iter().any(|t| matches!(t.as_str(), "reilly_plap" | "reilly_plap_tensor" | "test_function_bound"));
    let lambda1 = an.lambda_laplace().ok().map(|l| serde_json::to_value(l).expect("serializable"));
    let plap = if uses_plap && mesh.is_closed() {
        rc.p.iter()
            .filter_map(|&p| an.lambda_p(p).ok().map(|r| json!({ "p": p, "result": r })))
            .collect()
    } else {
        Vec::new()
    };
    let meta = SceneMeta {
        scene: entry.name.clone(),
        n_vertices: mesh.n_vertices(),
        n_faces: mesh.n_faces(),
        delta: mesh.delta().value(),
        ambient_dim: mesh.ambient().dim(),
        max_edge: an.metric.max_edge,
        min_angle_deg: an.metric.min_angle_deg,
        lambda1,
        plap,
        center: center.as_ref().ok().map(|c| serde_json::to_value(c).expect("serializable")),
    };
    Ok((recs, meta))
}

/// Runs every scene (in parallel on `jobs` threads) and merges the records in
/// config order.
pub fn run_suite(rc: &RunConfig, jobs: usize) -> Result<Report> {
    // Load everything first so bad inputs fail before any solve.
    let meshes = rc
        .scenes
        .iter()
        .map(|e| load_scene(e).map(|m| (e, m)))
        .collect::<Result<Vec<_>>>()?;
    for (e, (_, stored)) in &meshes {
        let choices = e.tensors.as_ref().unwrap_or(&rc.tensors);
        if choices.contains(&TensorChoice::FromMesh) && stored.is_none() {
            bail!("scene {}: tensor choice \"mesh\" but the scene carries no tensor", e.name);
        }
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let results: Vec<Result<(Vec<AuditRecord>, SceneMeta)>> = pool.install(|| {
        meshes
            .par_iter()
            .map(|(e, (mesh, stored))| {
                info!("scene {}: {} vertices", e.name, mesh.n_vertices());
                audit_scene(e, mesh, stored.as_ref(), rc)
            })
            .collect()
    });
    let mut records = Vec::new();
    let mut solver_meta = Vec::new();
    for r in results {
        let (recs, meta) = r?;
        records.extend(recs);
        solver_meta.push(meta);
    }
    let report = Report {
        version: env!("CARGO_PKG_VERSION"),
        generated_at: timestamp(),
        seed: rc.config.seed,
        conventions: conventions(),
        config: rc.config.clone(),
        records,
        solver_meta,
    };
    validate_report(&serde_json::to_value(&report)?)?;
    Ok(report)
}

fn timestamp() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    format!("{secs}")
}

const RECORD_FIELDS: &[&str] = &["theorem_id", "lhs", "rhs", "slack", "hypotheses", "status", "tolerances", "inputs", "integrals"];
const REPORT_FIELDS: &[&str] = &["version", "generated_at", "seed", "conventions", "config", "records", "solver_meta"];

/// Checks the report shape before it is written.
pub fn validate_report(v: &Value) -> Result<()> {
    let obj = v.as_object().ok_or_else(|| anyhow!("report is not an object"))?;
    for f in REPORT_FIELDS {
        if !obj.contains_key(*f) {
            bail!("report is missing field {f:?}");
        }
    }
    for key in ["mean_curvature", "wentzell_sign"] {
        if v["conventions"].get(key).is_none() {
            bail!("report conventions missing {key:?}");
        }
    }
    let records = obj["records"].as_array().ok_or_else(|| anyhow!("records is not an array"))?;
    for (i, r) in records.iter().enumerate() {
        for f in RECORD_FIELDS {
            if r.get(*f).is_none() {
                bail!("records[{i}] is missing field {f:?}");
            }
        }
        let status = r["status"].as_str().unwrap_or_default();
        if !["pass", "violation", "hypotheses-not-met"].contains(&status) {
            bail!("records[{i}] has invalid status {status:?}");
        }
        if status != "hypotheses-not-met" && !(r["lhs"].is_number() && r["rhs"].is_number()) {
            bail!("records[{i}] ({}) has status {status} without finite sides", r["theorem_id"]);
        }
        for h in r["hypotheses"].as_array().into_iter().flatten() {
            if h.get("name").is_none() || h.get("pass").is_none() {
                bail!("records[{i}] has a malformed hypothesis entry");
            }
        }
    }
    Ok(())
}

/// 0 all pass, 2 any violation, 3 hypotheses-not-met but no violation.
pub fn exit_code(records: &[AuditRecord]) -> i32 {
    if records.iter().any(|r| r.status == AuditStatus::Violation) {
        2
    } else if records.iter().any(|r| r.status == AuditStatus::HypothesesNotMet) {
        3
    } else {
        0
    }
}

pub fn write_json(report: &Report, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn write_csv(records: &[AuditRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["scene", "theorem", "p", "tensors", "lhs", "rhs", "slack", "status"])?;
    for r in records {
        let status = serde_json::to_value(r.status)?;
        w.write_record([
            r.inputs.scene.clone(),
            r.theorem_id.clone(),
            r.inputs.p.map_or(String::new(), |p| p.to_string()),
            r.inputs.tensors.join("+"),
            r.lhs.to_string(),
            r.rhs.to_string(),
            r.slack.to_string(),
            status.as_str().unwrap_or_default().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Scene spec from `scene` subcommand flags.
#[allow(clippy::too_many_arguments)]
pub fn scene_from_flags(
    kind: &str,
    delta: f64,
    rho: f64,
    amplitude: f64,
    mode: usize,
    circle_radius: f64,
    tube_radius: f64,
    ambient_dim: usize,
    radius: f64,
    axes: Option<[f64; 3]>,
    level: usize,
    gaussian: Option<f64>,
) -> Result<SceneSpec> {
    let k = match kind {
        "geodesic_sphere" => SceneKind::GeodesicSphere { delta, rho },
        "perturbed_sphere" => SceneKind::PerturbedSphere {
            delta,
            rho,
            amplitude,
            mode,
        },
        "tube_torus" => SceneKind::TubeTorus {
            delta,
            circle_radius,
            tube_radius,
            ambient_dim,
        },
        "euclidean_sphere" => SceneKind::EuclideanSphere { radius },
        "euclidean_ellipsoid" => SceneKind::EuclideanEllipsoid {
            axes: axes.ok_or_else(|| anyhow!("--axes is required for euclidean_ellipsoid"))?,
        },
        "flat_disk" => SceneKind::FlatDisk { radius },
        _ => bail!("unknown scene kind {kind:?}"),
    };
    let mut spec = SceneSpec::new(k, level);
    if let Some(s) = gaussian {
        spec = spec.with_density(DensitySpec::Gaussian { scale: s });
    }
    Ok(spec)
}
