use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use reilly_cli::*;
use reilly_core::center::{find_center, CenterMode};
use reilly_core::hypgeo::delta_trig;
use reilly_core::mesh::{assemble, AssemblyOptions};
use reilly_core::scenes::SceneSpec;
use reilly_core::spectra::{lambda1_p, lowest_modes, steklov_sigma1, wentzell_alpha1, SpectralResult};
use reilly_core::{Config, ImmersedMesh};

#[derive(Parser)]
#[command(name = "reilly", version, about = "Eigenvalue bounds on discrete immersed surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an audit suite; exit 0 all pass, 2 violation, 3 hypotheses not met, 1 error.
    Run(RunArgs),
    /// Generate a scene mesh and write it as JSON.
    Scene(SceneArgs),
    /// Print one eigenvalue result as JSON.
    Spectrum(SpectrumArgs),
    /// Write per-vertex fields as CSV, or re-save a mesh.
    Convert(ConvertArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run config (JSON).
    config: Option<PathBuf>,
    /// Run the built-in hyperbolic corpus instead of a config file.
    #[arg(long, conflicts_with = "config")]
    corpus: bool,
    /// Report path; overrides `output.json` in the config.
    #[arg(long)]
    json: Option<PathBuf>,
    /// CSV summary path; overrides `output.csv` in the config.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Scenes solved in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SceneArgs {
    /// Scene spec file; replaces the shape flags.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value = "geodesic_sphere")]
    kind: String,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    amplitude: f64,
    #[arg(long, default_value_t = 2)]
    mode: usize,
    #[arg(long, default_value_t = 1.0)]
    circle_radius: f64,
    #[arg(long, default_value_t = 0.3)]
    tube_radius: f64,
    #[arg(long, default_value_t = 3)]
    ambient_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// Ellipsoid semi-axes, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    axes: Option<Vec<f64>>,
    #[arg(long, default_value_t = 3)]
    level: usize,
    /// Gaussian density `f = s d(o,x)^2 / 2`.
    #[arg(long)]
    gaussian: Option<f64>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long)]
    mesh: PathBuf,
    /// p-Laplacian eigenvalue (solved by descent even at p = 2).
    #[arg(long, conflicts_with_all = ["linear", "steklov", "wentzell"])]
    p: Option<f64>,
    /// Linear eigenvalue (the default).
    #[arg(long)]
    linear: bool,
    #[arg(long, conflicts_with = "wentzell")]
    steklov: bool,
    /// Steklov-Wentzell eigenvalue with parameter b.
    #[arg(long)]
    wentzell: Option<f64>,
    /// Tensor for `div(T grad u)`: identity, newton, scaled_identity:<c>, mesh.
    #[arg(long)]
    tensor: Option<String>,
    /// Use the density `e^{-f}` stored on the mesh.
    #[arg(long)]
    weighted: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    mesh: PathBuf,
    /// Per-vertex CSV: vertex, r, th, h_sq, tr_t, eigenfunction.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Re-save the mesh (and any stored tensor) as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, default_value = "identity")]
    tensor: String,
    /// Base point for r: `linear` or `p=<p>` for the p-moment center.
    #[arg(long, default_value = "linear")]
    center: String,
}

fn seed_override(flag: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("REILLY_SEED") {
        Ok(s) => Ok(Some(s.trim().parse().with_context(|| format!("REILLY_SEED={s:?} is not an integer"))?)),
        Err(_) => Ok(None),
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn run(args: RunArgs) -> Result<i32> {
    let mut rc = match (&args.config, args.corpus) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, true) => RunConfig::default_corpus(),
        (None, false) => bail!("give a run config file or --corpus"),
    };
    if let Some(s) = seed_override(args.seed)? {
        rc.config.seed = s;
    }
    let report = run_suite(&rc, args.jobs)?;
    let json = args.json.or(rc.output.json.clone());
    let csv = args.csv.or(rc.output.csv.clone());
    match &json {
        Some(p) => write_json(&report, p)?,
        None => emit(&serde_json::to_string_pretty(&report)?)?,
    }
    if let Some(p) = &csv {
        write_csv(&report.records, p)?;
    }
    let code = exit_code(&report.records);
    eprintln!(
        "{} records: {} pass, {} violation, {} hypotheses-not-met",
        report.records.len(),
        report.records.iter().filter(|r| r.status == reilly_core::audit::AuditStatus::Pass).count(),
        report.records.iter().filter(|r| r.status == reilly_core::audit::AuditStatus::Violation).count(),
        report.records.iter().filter(|r| r.status == reilly_core::audit::AuditStatus::HypothesesNotMet).count(),
    );
    Ok(code)
}

fn scene(a: SceneArgs) -> Result<i32> {
    let spec: SceneSpec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("scene spec {}", p.display()))?
        }
        None => {
            let axes = a.axes.map(|v| [v[0], v[1], v[2]]);
            scene_from_flags(
                &a.kind,
                a.delta,
                a.rho,
                a.amplitude,
                a.mode,
                a.circle_radius,
                a.tube_radius,
                a.ambient_dim,
                a.radius,
                axes,
                a.level,
                a.gaussian,
            )?
        }
    };
    let mesh = spec.build()?;
    mesh.save(&a.out, None)?;
    eprintln!("{}: {} vertices, {} faces -> {}", spec.label(), mesh.n_vertices(), mesh.n_faces(), a.out.display());
    Ok(0)
}

fn load(path: &Path) -> Result<(ImmersedMesh, Option<reilly_core::curvature::TensorField>)> {
    ImmersedMesh::load(path).with_context(|| format!("loading {}", path.display()))
}

fn spectrum(a: SpectrumArgs) -> Result<i32> {
    let mut cfg = Config::default();
    if let Some(s) = seed_override(a.seed)? {
        cfg.seed = s;
    }
    let (mesh, stored) = load(&a.mesh)?;
    let metric = reilly_core::mesh::build_intrinsic_metric(&mesh, &cfg.mesh)?;
    let tensor = match &a.tensor {
        Some(t) => {
            let choice = TensorChoice::parse(t)?;
            let curv = reilly_core::curvature::second_fundamental_form(&mesh)?;
            Some(match choice {
                TensorChoice::Identity => reilly_core::curvature::TensorField::identity(&mesh),
                TensorChoice::ScaledIdentity(c) => reilly_core::curvature::TensorField::scaled_identity(&mesh, c),
                TensorChoice::Newton => reilly_core::curvature::newton_tensor(&mesh, &curv)?,
                TensorChoice::FromMesh => stored.clone().context("mesh file carries no tensor")?,
            })
        }
        None => None,
    };
    let ops = assemble(
        &mesh,
        &metric,
        AssemblyOptions {
            tensor: tensor.as_ref(),
            weighted: a.weighted,
            consistent_mass: cfg.linear.consistent_mass,
        },
    )?;
    let result: SpectralResult = if a.steklov {
        steklov_sigma1(&ops, &cfg.steklov)?
    } else if let Some(b) = a.wentzell {
        wentzell_alpha1(&ops, b, &cfg.steklov)?
    } else if let Some(p) = a.p {
        if tensor.is_some() || a.weighted {
            bail!("--p does not combine with --tensor or --weighted");
        }
        let modes = lowest_modes(&ops, &cfg.linear, cfg.seed)?;
        lambda1_p(&mesh, &metric, &ops, &modes, p, &cfg.plap, cfg.seed)?
    } else {
        lowest_modes(&ops, &cfg.linear, cfg.seed)?.first()
    };
    emit(&serde_json::to_string_pretty(&result)?)?;
    Ok(0)
}

fn convert(a: ConvertArgs) -> Result<i32> {
    let cfg = Config::default();
    let (mesh, stored) = load(&a.mesh)?;
    if let Some(out) = &a.json {
        mesh.save(out, stored.as_ref())?;
    }
    if let Some(out) = &a.csv {
        let metric = reilly_core::mesh::build_intrinsic_metric(&mesh, &cfg.mesh)?;
        let curv = reilly_core::curvature::second_fundamental_form(&mesh)?;
        let tensor = match TensorChoice::parse(&a.tensor)? {
            TensorChoice::Identity => reilly_core::curvature::TensorField::identity(&mesh),
            TensorChoice::ScaledIdentity(c) => reilly_core::curvature::TensorField::scaled_identity(&mesh, c),
            TensorChoice::Newton => reilly_core::curvature::newton_tensor(&mesh, &curv)?,
            TensorChoice::FromMesh => stored.clone().context("mesh file carries no tensor")?,
        };
        let mode = match a.center.as_str() {
            "linear" => CenterMode::Linear,
            s => match s.strip_prefix("p=").map(str::parse::<f64>) {
                Some(Ok(p)) => CenterMode::PMoment { p },
                _ => bail!("--center must be `linear` or `p=<p>`, got {s:?}"),
            },
        };
        let center = find_center(&mesh, &metric, mode, &cfg.center)?;
        let r = mesh.distance_field(&center.q0);
        let h_sq = curv.mean_curvature_sq();
        let tr = tensor.trace();
        let ops = assemble(&mesh, &metric, AssemblyOptions::default())?;
        let eig = if mesh.n_vertices() > 3 {
            lowest_modes(&ops, &cfg.linear, cfg.seed)?.first().eigenfunction
        } else {
            vec![0.0; mesh.n_vertices()]
        };
        let mut w = csv::Writer::from_path(out).with_context(|| format!("writing {}", out.display()))?;
        w.write_record(["vertex", "r", "th", "h_sq", "tr_t", "eigenfunction"])?;
        for v in 0..mesh.n_vertices() {
            let th = delta_trig(r[v], mesh.delta()).th;
            w.write_record([
                v.to_string(),
                r[v].to_string(),
                th.to_string(),
                h_sq[v].to_string(),
                tr[v].to_string(),
                eig[v].to_string(),
            ])?;
        }
        w.flush()?;
    }
    if a.json.is_none() && a.csv.is_none() {
        bail!("nothing to do: give --csv and/or --json");
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let out = match cli.command {
        Command::Run(a) => run(a),
        Command::Scene(a) => scene(a),
        Command::Spectrum(a) => spectrum(a),
        Command::Convert(a) => convert(a),
    };
    match out {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
