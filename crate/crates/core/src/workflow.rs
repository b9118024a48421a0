//! Round trips between survival curves and barriers, as run by the CLI.

use serde::Serialize;

use crate::boundary::{check_b0, B0Report, Boundary};
use crate::config::RunConfig;
use crate::direct::{direct_lattice, refine_direct, solve_direct_landmark, DirectDiagnostics};
use crate::error::{domain, Result};
use crate::inverse::{inverse_lattice, solve_inverse, InverseSummary, ObstacleSolveReport};
use crate::mc::{estimate_survival, CrossingEstimate};
use crate::survival::SurvivalCurve;

/// Times used when the configuration lists none: ten equally spaced points
/// ending at the horizon.
pub fn default_output_times(horizon: f64) -> Vec<f64> {
    (1..=10).map(|k| horizon * k as f64 / 10.0).collect()
}

fn output_times(cfg: &RunConfig, horizon: f64) -> Result<Vec<f64>> {
    let ts = if cfg.tolerances.output_times.is_empty() {
        default_output_times(horizon)
    } else {
        cfg.tolerances.output_times.clone()
    };
    if let Some(bad) = ts.iter().find(|&&t| !(t > 0.0 && t <= horizon)) {
        return domain(format!("output time {bad} is outside (0, {horizon}]"));
    }
    Ok(ts)
}

#[derive(Debug, Clone, Serialize)]
pub struct SurvivalGap {
    pub t: f64,
    pub target: f64,
    pub mc: f64,
    pub ci_half_width: f64,
    /// `|mc - target|`.
    pub gap: f64,
    /// `max(tolerance, 3 * ci_half_width)`.
    pub allowed: f64,
    /// Direct solve on the recovered barrier, for comparison.
    pub direct: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundTripPbReport {
    pub config: RunConfig,
    pub config_hash: String,
    pub gaps: Vec<SurvivalGap>,
    pub sup_gap: f64,
    pub sup_direct_gap: f64,
    pub mc_disagreements: u64,
    pub inverse: InverseSummary,
    pub direct: DirectDiagnostics,
    pub pass: bool,
}

pub struct RoundTripPb {
    pub report: RoundTripPbReport,
    pub inverse: ObstacleSolveReport,
    pub mc: CrossingEstimate,
}

/// Survival curve to barrier and back: obstacle solve, barrier extraction,
/// then Monte Carlo (and a direct solve) on the recovered barrier.
pub fn roundtrip_pb(cfg: &RunConfig, p: &SurvivalCurve) -> Result<RoundTripPb> {
    let (spec, init) = cfg.diffusion.build()?;
    let horizon = p.horizon();
    let times = output_times(cfg, horizon)?;
    let g = &cfg.grid;

    let lat = inverse_lattice(&spec, &init, horizon, g.dx, g.dt, g.warmup)?;
    let inv = solve_inverse(&spec, &init, p, &lat, &cfg.inverse.options())?;
    let b_hat = &inv.b_hat;

    let mc = estimate_survival(&spec, &init, b_hat, &cfg.mc.options(horizon))?;
    let dlat = direct_lattice(&spec, &init, b_hat, cfg.direct.level, g.dx, g.dt, g.warmup)?;
    let dsol = solve_direct_landmark(&spec, &init, b_hat, cfg.direct.level, &dlat, &cfg.direct.options())?;

    let mut gaps = Vec::with_capacity(times.len());
    for &t in &times {
        let i = mc.index_of(t);
        let target = p.eval(t)?;
        let ci = mc.ci_half_width[i];
        gaps.push(SurvivalGap {
            t,
            target,
            mc: mc.p_hat[i],
            ci_half_width: ci,
            gap: (mc.p_hat[i] - target).abs(),
            allowed: cfg.tolerances.survival_gap.max(3.0 * ci),
            direct: dsol.survival.eval(t)?,
        });
    }
    let sup_gap = gaps.iter().map(|g| g.gap).fold(0.0, f64::max);
    let sup_direct_gap = gaps.iter().map(|g| (g.direct - g.target).abs()).fold(0.0, f64::max);
    let pass = gaps.iter().all(|g| g.gap <= g.allowed);
    let report = RoundTripPbReport {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        gaps,
        sup_gap,
        sup_direct_gap,
        mc_disagreements: mc.disagreements,
        inverse: inv.summary.clone(),
        direct: dsol.diagnostics,
        pass,
    };
    Ok(RoundTripPb {
        report,
        inverse: inv,
        mc,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundTripBpReport {
    pub config: RunConfig,
    pub config_hash: String,
    pub b0: B0Report,
    pub levels: Vec<u32>,
    pub max_chain_violation: f64,
    /// Largest adjustment made to restore monotonicity of the extrapolated
    /// survival curve before the inverse solve.
    pub survival_repair: f64,
    pub t_min: f64,
    pub sup_gap: f64,
    pub sup_gap_at: f64,
    pub tolerance: f64,
    pub inverse: InverseSummary,
    /// One entry per refinement level, coarsest first.
    pub direct: Vec<DirectDiagnostics>,
    pub pass: bool,
}

pub struct RoundTripBp {
    pub report: RoundTripBpReport,
    pub survival: SurvivalCurve,
    pub inverse: ObstacleSolveReport,
}

/// `|a - b|` with `-inf` treated as a point: equal infinities are at
/// distance zero, an infinite and a finite value are infinitely apart.
pub fn barrier_distance(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs()
    }
}

/// Barrier to survival curve and back: refined direct solve with
/// extrapolation, then the obstacle solve on the extrapolated curve.
pub fn roundtrip_bp(cfg: &RunConfig, b: &Boundary) -> Result<RoundTripBp> {
    let (spec, init) = cfg.diffusion.build()?;
    let horizon = b.horizon();
    let g = &cfg.grid;
    let b0 = check_b0(b, &spec, &init);

    let d = &cfg.direct;
    let dlat = direct_lattice(&spec, &init, b, d.level, g.dx, g.dt, g.warmup)?;
    let refined = refine_direct(&spec, &init, b, d.min_level, d.level, &dlat, &d.options())?;
    let (p, repair) = refined.extrapolated.isotonic_repair();

    let lat = inverse_lattice(&spec, &init, horizon, g.dx, g.dt, g.warmup)?;
    let t_min = cfg.tolerances.boundary_t_min;
    let inv = solve_inverse(&spec, &init, &p, &lat, &cfg.inverse.options())?;

    let mut sup_gap = 0.0f64;
    let mut sup_gap_at = t_min;
    for (&t, &bh) in inv.times.iter().zip(&inv.b_rows) {
        if t < t_min {
            continue;
        }
        let gap = barrier_distance(bh, b.value(t)?);
        if gap > sup_gap || gap.is_nan() {
            sup_gap = gap;
            sup_gap_at = t;
        }
    }
    let tolerance = cfg.tolerances.boundary_gap;
    let report = RoundTripBpReport {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        b0,
        levels: refined.levels.clone(),
        max_chain_violation: refined.max_chain_violation,
        survival_repair: repair,
        t_min,
        sup_gap,
        sup_gap_at,
        tolerance,
        inverse: inv.summary.clone(),
        direct: refined.level_diagnostics.clone(),
        pass: sup_gap <= tolerance,
    };
    Ok(RoundTripBp {
        report,
        survival: p,
        inverse: inv,
    })
}
