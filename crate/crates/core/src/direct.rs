//! Direct problem: survival curve of a given barrier.
//!
//! The sub-probability density `U` of surviving paths is marched with the
//! forward equation `L1 U = 0` and restricted to `{x > b*(t)}` at the
//! landmark times of level `n`. Levels are nested, so `p_n` decreases in
//! `n` towards `p`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::Boundary;
use crate::diffusion::{DiffusionSpec, InitialDistribution, InitialKind};
use crate::error::{domain, Error, Result};
use crate::grid::{truncated_space, DensityField, Field, Lattice, OperatorCache, SpaceGrid, ThetaStepper};
use crate::survival::SurvivalCurve;

/// Density values below this are a scheme failure.
pub const NEGATIVE_DENSITY_TOLERANCE: f64 = -1e-12;
/// Allowed violation of `p_n >= p_{n+1}`.
pub const CHAIN_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KillRule {
    /// The cell `[x_k - dx/2, x_k + dx/2]` keeps the fraction lying above
    /// the barrier.
    #[default]
    Fractional,
    /// Whole nodes with `x_k < b` are removed.
    Strict,
    /// Whole nodes with `x_k <= b` are removed.
    NonStrict,
}

impl KillRule {
    #[inline]
    pub fn keep(self, x: f64, dx: f64, b: f64) -> f64 {
        if b == f64::NEG_INFINITY {
            return 1.0;
        }
        match self {
            KillRule::Fractional => ((x + 0.5 * dx - b) / dx).clamp(0.0, 1.0),
            KillRule::Strict => {
                if x < b {
                    0.0
                } else {
                    1.0
                }
            }
            KillRule::NonStrict => {
                if x <= b {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DirectOptions {
    /// Crank-Nicolson weight between restarts.
    pub theta: f64,
    pub kill_rule: KillRule,
    /// Keep the full density field.
    pub store_fields: bool,
    /// March the unkilled density alongside and check the field
    /// invariants against it.
    pub track_unkilled: bool,
}

impl Default for DirectOptions {
    fn default() -> Self {
        Self {
            theta: 0.5,
            kill_rule: KillRule::Fractional,
            store_fields: false,
            track_unkilled: false,
        }
    }
}

/// Field invariants measured during a solve. All are worst cases over
/// the lattice.
#[derive(Debug, Clone, Serialize, Default)]
pub struct DirectDiagnostics {
    pub min_density: f64,
    /// `max(U - rho0)`, with `rho0` the unkilled density on the same lattice.
    pub max_excess_over_unkilled: f64,
    /// Largest increase of `w` in `x`.
    pub w_monotonicity_violation: f64,
    /// `max |p - w(x_min)|`.
    pub p_consistency: f64,
    /// Largest negative part of `1 - (w + p0)`.
    pub sandwich_lower_violation: f64,
    /// Largest excess of `1 - (w + p0)` over `1 - p`.
    pub sandwich_upper_violation: f64,
    /// Largest increase of `p` between consecutive rows.
    pub mass_increase: f64,
    pub killed_mass: f64,
    pub kill_count: usize,
}

#[derive(Debug, Clone)]
pub struct DirectSolution {
    pub level: Option<u32>,
    /// `p` on `[0, T]`; when the lattice starts after 0 the point `(0, 1)`
    /// is prepended.
    pub survival: SurvivalCurve,
    /// `p` at the lattice times.
    pub lattice_survival: Vec<f64>,
    pub density: Option<DensityField>,
    pub kill_times: Vec<f64>,
    pub diagnostics: DirectDiagnostics,
}

impl DirectSolution {
    pub fn survival_field(&self) -> Option<crate::grid::SurvivalField> {
        self.density.as_ref().map(|d| d.survival_field())
    }
}

/// Lattice for direct solves up to landmark level `max_level`: truncated
/// space with `dx`, uniform steps `dt`, and every landmark time of that
/// level inserted exactly.
pub fn direct_lattice(
    spec: &DiffusionSpec,
    init: &InitialDistribution,
    b: &Boundary,
    max_level: u32,
    dx: f64,
    dt: f64,
    warmup: f64,
) -> Result<Lattice> {
    let horizon = b.horizon();
    let space = truncated_space(spec, init, Some(b), horizon, dx)?;
    let t_start = start_time(init, warmup);
    let lm = b.landmarks(max_level);
    let times: Vec<f64> = lm.times();
    Lattice::with_inserted_times(space, t_start, horizon, dt, &times)
}

fn start_time(init: &InitialDistribution, warmup: f64) -> f64 {
    if init.kind() == InitialKind::PointMass {
        warmup
    } else {
        0.0
    }
}

fn initial_row(spec: &DiffusionSpec, init: &InitialDistribution, lattice: &Lattice) -> Result<Vec<f64>> {
    let t0 = lattice.t_start();
    if init.kind() != InitialKind::PointMass && t0 != 0.0 {
        return domain(format!(
            "lattice starts at {t0} but the initial law is given at t = 0"
        ));
    }
    if init.kind() == InitialKind::PointMass && !(t0 > 0.0) {
        return domain("a point-mass start needs a lattice starting after t = 0");
    }
    let start = init.regularized(spec, t0)?;
    let space = lattice.space;
    // Cell averages through the distribution function keep the mass exact
    // even when the warm-up Gaussian is narrower than a cell.
    let h = 0.5 * space.dx;
    let mut u: Vec<f64> = space
        .xs()
        .iter()
        .map(|&x| ((start.cdf)(x + h) - (start.cdf)(x - h)) / space.dx)
        .collect();
    if u.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Input("initial density is negative or non-finite".into()));
    }
    u[0] = 0.0;
    let n = u.len();
    u[n - 1] = 0.0;
    Ok(u)
}

/// One step from `t0` to `t1`: two implicit Euler half steps when
/// `damped`, otherwise a theta step.
#[allow(clippy::too_many_arguments)]
fn advance(
    cache: &mut OperatorCache,
    stepper: &mut ThetaStepper,
    u: &mut [f64],
    t0: f64,
    t1: f64,
    damped: bool,
    theta: f64,
    fixed: &[bool],
) -> Result<()> {
    let h = t1 - t0;
    if damped {
        let tm = t0 + 0.5 * h;
        cache.with_pair(tm, tm, |_, a| stepper.step(a, a, u, 0.5 * h, 1.0, 0.0, 0.0, fixed))??;
        cache.with_pair(t1, t1, |_, a| stepper.step(a, a, u, 0.5 * h, 1.0, 0.0, 0.0, fixed))??;
    } else {
        cache.with_pair(t0, t1, |a, c| stepper.step(a, c, u, h, theta, 0.0, 0.0, fixed))??;
    }
    Ok(())
}

fn apply_kill(u: &mut [f64], space: &SpaceGrid, b: f64, rule: KillRule) -> f64 {
    let mut removed = 0.0;
    if b == f64::NEG_INFINITY {
        return 0.0;
    }
    for (k, v) in u.iter_mut().enumerate() {
        let x = space.x(k);
        if x - space.dx > b {
            break;
        }
        let f = rule.keep(x, space.dx, b);
        removed += *v * (1.0 - f);
        *v *= f;
    }
    removed * space.dx
}

struct InvariantTracker {
    rho: Vec<f64>,
    tail_u: Vec<f64>,
    tail_rho: Vec<f64>,
}

impl InvariantTracker {
    fn observe(&mut self, space: &SpaceGrid, u: &[f64], p: f64, d: &mut DirectDiagnostics) {
        space.tail_integral(u, &mut self.tail_u);
        space.tail_integral(&self.rho, &mut self.tail_rho);
        for k in 0..u.len() {
            d.max_excess_over_unkilled = d.max_excess_over_unkilled.max(u[k] - self.rho[k]);
            let gap = self.tail_rho[k] - self.tail_u[k];
            d.sandwich_lower_violation = d.sandwich_lower_violation.max(-gap);
            d.sandwich_upper_violation = d.sandwich_upper_violation.max(gap - (1.0 - p));
            if k > 0 {
                d.w_monotonicity_violation =
                    d.w_monotonicity_violation.max(self.tail_u[k] - self.tail_u[k - 1]);
            }
        }
        d.p_consistency = d.p_consistency.max((self.tail_u[0] - p).abs());
    }
}

/// `(p_n, w_n, U_n)` for landmark level `level`.
///
/// At each landmark time `t` the density is cut to `{x > b*(t)}`; the
/// reported `p_n(t)` is the mass after the cut. Landmarks at or before
/// the lattice start are applied once at the start with the largest
/// envelope value among them.
pub fn solve_direct_landmark(
    spec: &DiffusionSpec,
    init: &InitialDistribution,
    b: &Boundary,
    level: u32,
    lattice: &Lattice,
    opts: &DirectOptions,
) -> Result<DirectSolution> {
    let lm = b.landmarks(level);
    let t_start = lattice.t_start();
    let mut kills: Vec<(usize, f64)> = Vec::new();
    let mut pre: Option<f64> = None;
    for (t, bstar) in lm.distinct() {
        if t <= t_start {
            pre = Some(pre.map_or(bstar, |v: f64| v.max(bstar)));
        } else if t <= lattice.horizon() {
            let j = lattice.index_of(t).ok_or_else(|| {
                Error::Config(format!("landmark time {t} is missing from the lattice"))
            })?;
            kills.push((j, bstar));
        }
    }
    if let Some(v) = pre {
        kills.insert(0, (0, v));
    }
    march(spec, init, lattice, opts, Some(level), |j, _| {
        kills
            .binary_search_by(|probe| probe.0.cmp(&j))
            .ok()
            .map(|i| kills[i].1)
    }, None)
}

/// Continuous-monitoring limit: `U = 0` is imposed inside every implicit
/// solve at nodes `x_k <= b(t)`. Used for flux diagnostics.
pub fn solve_direct_absorbing(
    spec: &DiffusionSpec,
    init: &InitialDistribution,
    b: &Boundary,
    lattice: &Lattice,
    opts: &DirectOptions,
) -> Result<DirectSolution> {
    march(spec, init, lattice, opts, None, |_, _| None, Some(b))
}

fn march(
    spec: &DiffusionSpec,
    init: &InitialDistribution,
    lattice: &Lattice,
    opts: &DirectOptions,
    level: Option<u32>,
    kill_at: impl Fn(usize, f64) -> Option<f64>,
    absorbing: Option<&Boundary>,
) -> Result<DirectSolution> {
    let space = lattice.space;
    let times = lattice.times();
    let mut u = initial_row(spec, init, lattice)?;
    let mut diag = DirectDiagnostics {
        min_density: f64::INFINITY,
        ..Default::default()
    };
    let mut tracker = if opts.track_unkilled {
        Some(InvariantTracker {
            rho: u.clone(),
            tail_u: Vec::new(),
            tail_rho: Vec::new(),
        })
    } else {
        None
    };
    let mut kill_times = Vec::new();
    let mut fixed = vec![false; if absorbing.is_some() { space.nx } else { 0 }];
    let set_fixed = |fixed: &mut Vec<bool>, u: &mut [f64], t: f64| -> Result<()> {
        if let Some(b) = absorbing {
            let bv = b.value(t.min(b.horizon()))?;
            for k in 0..space.nx {
                fixed[k] = space.x(k) <= bv;
                if fixed[k] {
                    u[k] = 0.0;
                }
            }
        }
        Ok(())
    };
    set_fixed(&mut fixed, &mut u, times[0])?;
    if let Some(bv) = kill_at(0, times[0]) {
        diag.killed_mass += apply_kill(&mut u, &space, bv, opts.kill_rule);
        diag.kill_count += 1;
        kill_times.push(times[0]);
    }

    let mut cache = OperatorCache::forward(spec, space);
    let mut stepper = ThetaStepper::new();
    let mut rho_stepper = ThetaStepper::new();
    let mut field = if opts.store_fields {
        Some(Field::new(space))
    } else {
        None
    };
    let mut ps = Vec::with_capacity(times.len());
    let p0 = space.integrate(&u);
    ps.push(p0);
    if let Some(tr) = tracker.as_mut() {
        tr.observe(&space, &u, p0, &mut diag);
    }
    diag.min_density = diag.min_density.min(u.iter().cloned().fold(f64::INFINITY, f64::min));
    if let Some(f) = field.as_mut() {
        f.push(times[0], u.clone());
    }

    for j in 0..times.len() - 1 {
        let (t0, t1) = (times[j], times[j + 1]);
        let damped = lattice.restart(j);
        if absorbing.is_some() {
            set_fixed(&mut fixed, &mut u, t1)?;
        }
        advance(&mut cache, &mut stepper, &mut u, t0, t1, damped, opts.theta, &fixed)?;
        if let Some(tr) = tracker.as_mut() {
            advance(&mut cache, &mut rho_stepper, &mut tr.rho, t0, t1, damped, opts.theta, &[])?;
        }
        if let Some(bv) = kill_at(j + 1, t1) {
            diag.killed_mass += apply_kill(&mut u, &space, bv, opts.kill_rule);
            diag.kill_count += 1;
            kill_times.push(t1);
        }
        let row_min = u.iter().cloned().fold(f64::INFINITY, f64::min);
        if row_min < NEGATIVE_DENSITY_TOLERANCE {
            return Err(Error::Scheme(format!(
                "density reached {row_min:e} at t = {t1}; the time step is too large for this grid"
            )));
        }
        diag.min_density = diag.min_density.min(row_min);
        let p = space.integrate(&u);
        diag.mass_increase = diag.mass_increase.max(p - ps[j]);
        ps.push(p);
        if let Some(tr) = tracker.as_mut() {
            tr.observe(&space, &u, p, &mut diag);
        }
        if let Some(f) = field.as_mut() {
            f.push(t1, u.clone());
        }
    }

    let (mut ts, mut vs) = (Vec::with_capacity(times.len() + 1), Vec::with_capacity(times.len() + 1));
    if times[0] > 0.0 {
        ts.push(0.0);
        vs.push(1.0);
    }
    ts.extend_from_slice(times);
    vs.extend_from_slice(&ps);
    Ok(DirectSolution {
        level,
        survival: SurvivalCurve::new(ts, vs)?,
        lattice_survival: ps,
        density: field.map(DensityField),
        kill_times,
        diagnostics: diag,
    })
}

#[derive(Debug, Clone)]
pub struct Refinement {
    pub levels: Vec<u32>,
    /// `p_n` at the lattice times, one vector per level.
    pub lattice_curves: Vec<Vec<f64>>,
    /// Diagnostics of every level, coarsest first.
    pub level_diagnostics: Vec<DirectDiagnostics>,
    pub finest: DirectSolution,
    /// Two-term extrapolation in `sqrt(2^-n)` from the last three levels,
    /// sampled at the landmark times of the coarsest level and interpolated
    /// linearly in between.
    pub extrapolated: SurvivalCurve,
    /// Largest `p_{n+1} - p_n` over consecutive levels and lattice times.
    pub max_chain_violation: f64,
}

/// Combines `p` at levels `n-2, n-1, n` (or fewer) assuming an error
/// expansion `c1 sqrt(h) + c2 h` in the landmark spacing `h = 2^-n`.
pub fn extrapolate(curves: &[&[f64]]) -> Vec<f64> {
    let r = std::f64::consts::SQRT_2;
    let one = |coarse: &[f64], fine: &[f64]| -> Vec<f64> {
        coarse
            .iter()
            .zip(fine)
            .map(|(c, f)| (r * f - c) / (r - 1.0))
            .collect()
    };
    match curves.len() {
        0 => Vec::new(),
        1 => curves[0].to_vec(),
        2 => one(curves[0], curves[1]),
        n => {
            let e0 = one(curves[n - 3], curves[n - 2]);
            let e1 = one(curves[n - 2], curves[n - 1]);
            e0.iter().zip(&e1).map(|(a, b)| 2.0 * b - a).collect()
        }
    }
}

/// Solves levels `min_level..=max_level` on one lattice (which must carry
/// the landmark times of `max_level`) and checks `p_n >= p_{n+1}`.
pub fn refine_direct(
    spec: &DiffusionSpec,
    init: &InitialDistribution,
    b: &Boundary,
    min_level: u32,
    max_level: u32,
    lattice: &Lattice,
    opts: &DirectOptions,
) -> Result<Refinement> {
    if max_level < 2 || min_level > max_level {
        return domain(format!("invalid level range {min_level}..={max_level}"));
    }
    let levels: Vec<u32> = (min_level..=max_level).collect();
    let coarse_opts = DirectOptions {
        store_fields: false,
        ..opts.clone()
    };
    let mut solved: Vec<Result<DirectSolution>> = levels
        .par_iter()
        .map(|&n| {
            let o = if n == max_level { opts } else { &coarse_opts };
            solve_direct_landmark(spec, init, b, n, lattice, o)
        })
        .collect();
    let finest = solved.pop().unwrap()?;
    let mut lattice_curves: Vec<Vec<f64>> = Vec::with_capacity(levels.len());
    let mut level_diagnostics = Vec::with_capacity(levels.len());
    for s in solved {
        let s = s?;
        lattice_curves.push(s.lattice_survival);
        level_diagnostics.push(s.diagnostics);
    }
    lattice_curves.push(finest.lattice_survival.clone());
    level_diagnostics.push(finest.diagnostics.clone());

    let mut worst = 0.0f64;
    for w in lattice_curves.windows(2) {
        for (a, c) in w[0].iter().zip(&w[1]) {
            worst = worst.max(c - a);
        }
    }
    if worst > CHAIN_TOLERANCE {
        return Err(Error::Scheme(format!(
            "refinement chain violated by {worst:e}; killing times are not nested on the lattice"
        )));
    }
    let refs: Vec<&[f64]> = lattice_curves.iter().map(|c| c.as_slice()).collect();
    let limit = extrapolate(&refs);
    // Each p_n only moves at its own kill times, so the expansion in h holds
    // just after a kill shared by every level: the landmarks of the coarsest
    // level, plus the start and the horizon.
    let times = lattice.times();
    let mut rows = vec![0];
    for (t, _) in b.landmarks(min_level).distinct() {
        if t > lattice.t_start() && t < lattice.horizon() {
            if let Some(j) = lattice.index_of(t) {
                rows.push(j);
            }
        }
    }
    rows.push(times.len() - 1);
    rows.dedup();
    let mut ts = Vec::with_capacity(rows.len() + 1);
    let mut vs = Vec::with_capacity(rows.len() + 1);
    if lattice.t_start() > 0.0 {
        ts.push(0.0);
        vs.push(1.0);
    }
    for j in rows {
        ts.push(times[j]);
        vs.push(limit[j].clamp(0.0, 1.0));
    }
    Ok(Refinement {
        levels,
        lattice_curves,
        level_diagnostics,
        finest,
        extrapolated: SurvivalCurve::new(ts, vs)?,
        max_chain_violation: worst.max(0.0),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FluxResidual {
    pub times: Vec<f64>,
    pub p_dot: Vec<f64>,
    pub residual: Vec<f64>,
    /// False where the barrier sits too close to the lattice edge for the
    /// one-sided stencil.
    pub reliable: Vec<bool>,
}

/// `r(t) = p'(t) + (1/2) d/dx(sigma^2 U)(b(t)+, t)`, with a centred
/// difference for `p'` and a one-sided quadratic fit through the first
/// three nodes at or above the barrier.
pub fn flux_residual(
    p: &SurvivalCurve,
    u: &DensityField,
    b: &Boundary,
    spec: &DiffusionSpec,
) -> Result<FluxResidual> {
    let f = u.field();
    let space = f.space;
    let mut out = FluxResidual {
        times: Vec::new(),
        p_dot: Vec::new(),
        residual: Vec::new(),
        reliable: Vec::new(),
    };
    for j in 1..f.rows().saturating_sub(1) {
        let (ta, t, tb) = (f.times[j - 1], f.times[j], f.times[j + 1]);
        if t > b.horizon() {
            break;
        }
        let p_dot = (p.eval(tb)? - p.eval(ta)?) / (tb - ta);
        let bv = b.value(t)?;
        let (r, ok) = if bv == f64::NEG_INFINITY {
            (p_dot, true)
        } else {
            let s = (bv - space.x_min) / space.dx;
            let mut k = s.ceil().max(0.0) as usize;
            if space.x(k) < bv {
                k += 1;
            }
            if k == 0 || k + 3 >= space.nx {
                (f64::NAN, false)
            } else {
                let g = |i: usize| {
                    let x = space.x(i);
                    let sg = spec.vol(x, t);
                    sg * sg * f.values[j][i]
                };
                let h = space.dx;
                let s = (bv - space.x(k)) / h;
                let d = ((-3.0 + 2.0 * s) * g(k) + (4.0 - 4.0 * s) * g(k + 1) + (-1.0 + 2.0 * s) * g(k + 2))
                    / (2.0 * h);
                (p_dot + 0.5 * d, true)
            }
        };
        out.times.push(t);
        out.p_dot.push(p_dot);
        out.residual.push(r);
        out.reliable.push(ok);
    }
    Ok(out)
}
