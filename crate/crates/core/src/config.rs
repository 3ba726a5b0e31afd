//! Every numeric default used by solvers and audits.
//!
//! Nothing numeric that influences a result should live anywhere else. The
//! whole struct deserializes from the `tolerances`/`solver` sections of a run
//! config, and any omitted field falls back to the value documented here.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub audit: AuditTolerances,
    pub linear: LinearSolverConfig,
    pub plap: PLapConfig,
    pub center: CenterConfig,
    pub steklov: SteklovConfig,
    pub mesh: MeshQuality,
    pub divergence: DivergenceConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 20240611,
            audit: AuditTolerances::default(),
            linear: LinearSolverConfig::default(),
            plap: PLapConfig::default(),
            center: CenterConfig::default(),
            steklov: SteklovConfig::default(),
            mesh: MeshQuality::default(),
            divergence: DivergenceConfig::default(),
        }
    }
}

/// Tolerance model for audit status.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditTolerances {
    /// A record passes when `slack >= -max(tol_abs, tol_rel * |rhs|)`.
    pub tol_abs: f64,
    pub tol_rel: f64,
    /// Relative tolerance on the smallest eigenvalue of `(tr T) I - 2T`,
    /// measured against `tr T`. Fitted tensors that are exactly `c I` in the
    /// continuum carry O(h) anisotropy noise, which this absorbs.
    pub trace_condition_rel: f64,
    /// Relative slack below which a record counts as an equality case.
    pub equality_rel: f64,
    /// Relative slack below which equality diagnostics are produced.
    pub diagnostics_rel: f64,
}

impl Default for AuditTolerances {
    fn default() -> Self {
        AuditTolerances {
            tol_abs: 1e-9,
            tol_rel: 0.05,
            trace_condition_rel: 1e-2,
            equality_rel: 0.03,
            diagnostics_rel: 0.05,
        }
    }
}

/// Shift-invert block subspace iteration for `K u = lambda M u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearSolverConfig {
    pub block_size: usize,
    /// Relative residual `|K u - lambda M u| / (lambda |M u|)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Shift is `shift_scale * tr(K) / tr(M)`.
    pub shift_scale: f64,
    /// Use the consistent instead of the lumped mass matrix.
    pub consistent_mass: bool,
}

impl Default for LinearSolverConfig {
    fn default() -> Self {
        LinearSolverConfig {
            block_size: 8,
            tol: 1e-10,
            max_iter: 1000,
            shift_scale: 1e-4,
            consistent_mass: false,
        }
    }
}

/// Constrained Rayleigh minimization for the p-Laplacian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PLapConfig {
    pub p_min: f64,
    pub p_max: f64,
    /// Random restarts in addition to the eigenfunction-seeded start.
    pub restarts: usize,
    pub rel_change: f64,
    pub max_iter: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Backtracking halvings before a line search counts as stalled.
    pub max_backtracks: usize,
    /// Random restarts only get this many iterations; the best one is then
    /// continued with the full budget.
    pub restart_iter: usize,
}

impl Default for PLapConfig {
    fn default() -> Self {
        PLapConfig {
            p_min: 1.1,
            p_max: 10.0,
            restarts: 20,
            rel_change: 1e-10,
            max_iter: 5000,
            armijo: 1e-4,
            max_backtracks: 60,
            restart_iter: 200,
        }
    }
}

/// Fixed-point search for the base point `q0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CenterConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub initial_step: f64,
    /// Newton polish iterations after the fixed-point loop stalls.
    pub newton_iter: usize,
    /// Finite-difference step for the Newton polish, relative to the scene size.
    pub fd_step: f64,
}

impl Default for CenterConfig {
    fn default() -> Self {
        CenterConfig {
            tol: 1e-9,
            max_iter: 200,
            initial_step: 1.0,
            newton_iter: 20,
            fd_step: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteklovConfig {
    /// Largest tolerated relative asymmetry of the Dirichlet-to-Neumann matrix.
    pub symmetry_tol: f64,
}

impl Default for SteklovConfig {
    fn default() -> Self {
        SteklovConfig {
            symmetry_tol: 1e-12,
        }
    }
}

/// Mesh quality gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshQuality {
    pub warn_angle_deg: f64,
    pub error_angle_deg: f64,
    pub min_area: f64,
}

impl Default for MeshQuality {
    fn default() -> Self {
        MeshQuality {
            warn_angle_deg: 10.0,
            error_angle_deg: 2.0,
            min_area: 1e-14,
        }
    }
}

/// Tolerance for the discrete divergence of a tensor field,
/// `tol_div = calibration * h`, applied to the scale-free residual
/// `|div T|_{L2} / (|T|_{L2} kappa)` where `kappa` is the curvature scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DivergenceConfig {
    pub calibration: f64,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        DivergenceConfig { calibration: 3.0 }
    }
}
