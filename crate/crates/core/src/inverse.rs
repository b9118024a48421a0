//! Inverse problem: given `p`, solve the obstacle problem
//! `max(L w, w - p) = 0`, `w(., 0) = 1 - p0(., 0)` by projected SOR and read
//! the barrier off the contact set: `b(t) = inf { x : w(x, t) < p(t) }`.

use serde::Serialize;

use crate::boundary::Boundary;
use crate::diffusion::{DiffusionSpec, InitialDistribution, InitialKind};
use crate::error::{domain, Error, Result};
use crate::grid::{truncated_space, Field, Lattice, OperatorCache, SpaceGrid, SurvivalField, ThetaStepper, Tridiag};
use crate::survival::SurvivalCurve;

/// Row monotonicity violations above this are errors; smaller ones are
/// clamped.
pub const ISOTONIC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct InverseOptions {
    pub theta: f64,
    pub omega: f64,
    pub tol: f64,
    pub max_sweeps: usize,
    /// Number of initial steps taken as two implicit Euler half steps.
    pub damped_steps: usize,
    /// Relative contact threshold: `eps_w = eps_w_rel * p(t)`.
    pub eps_w_rel: f64,
    /// Boundary rows before this time are excluded from diagnostics;
    /// defaults to ten time steps after the start.
    pub t_min: Option<f64>,
    pub store_w: bool,
}

impl Default for InverseOptions {
    fn default() -> Self {
        Self {
            theta: 0.5,
            omega: 1.5,
            tol: 1e-10,
            max_sweeps: 10_000,
            damped_steps: 4,
            eps_w_rel: 1e-8,
            t_min: None,
            store_w: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ObstacleSolveReport {
    pub w: Option<SurvivalField>,
    pub times: Vec<f64>,
    /// Extracted barrier per lattice row (`-inf` where there is no contact
    /// boundary).
    pub b_rows: Vec<f64>,
    pub b_hat: Boundary,
    pub summary: InverseSummary,
}

/// Scalar diagnostics of an inverse solve.
#[derive(Debug, Clone, Serialize)]
pub struct InverseSummary {
    pub dx: f64,
    pub dt: f64,
    pub nx: usize,
    pub rows: usize,
    pub t_min: f64,
    /// `max over rows t >= t_min of min(|L_h w|, p - w)`, with `L_h` a
    /// centred-in-time stencil independent of the marching scheme.
    pub complementarity_residual: f64,
    /// `max (w - p)+`.
    pub constraint_violation: f64,
    /// Largest row-monotonicity correction applied.
    pub isotonic_repair: f64,
    pub psor_max_sweeps: usize,
    pub psor_mean_sweeps: f64,
    /// Largest negative part of `1 - (w + p0)`.
    pub sandwich_lower_violation: f64,
    /// Largest excess of `1 - (w + p0)` over `1 - p`.
    pub sandwich_upper_violation: f64,
    /// `L(p, 0, T)`.
    pub decrease_rate: f64,
    /// Largest drop of `b_hat` between adjacent rows with `t >= t_min`.
    pub largest_down_step: f64,
}

pub fn inverse_lattice(
    spec: &DiffusionSpec,
    init: &InitialDistribution,
    horizon: f64,
    dx: f64,
    dt: f64,
    warmup: f64,
) -> Result<Lattice> {
    let space = truncated_space(spec, init, None, horizon, dx)?;
    let t_start = if init.kind() == InitialKind::PointMass {
        warmup
    } else {
        0.0
    };
    Lattice::with_inserted_times(space, t_start, horizon, dt, &[])
}

/// Projected SOR for `a w_{k-1} + d w_k + c w_{k+1} = r_k`, `w <= cap`,
/// with fixed end values. Returns the sweep count.
#[allow(clippy::too_many_arguments)]
fn psor(
    op: &Tridiag,
    scale: f64,
    rhs: &[f64],
    w: &mut [f64],
    cap: f64,
    omega: f64,
    tol: f64,
    max_sweeps: usize,
    history: &mut Vec<f64>,
) -> Option<usize> {
    let n = w.len();
    history.clear();
    for sweep in 1..=max_sweeps {
        let mut change = 0.0f64;
        for k in 1..n - 1 {
            let a = scale * op.lower[k];
            let c = scale * op.upper[k];
            let d = 1.0 + scale * op.diag[k];
            let gs = (rhs[k] - a * w[k - 1] - c * w[k + 1]) / d;
            let mut v = w[k] + omega * (gs - w[k]);
            if v > cap {
                v = cap;
            }
            change = change.max((v - w[k]).abs());
            w[k] = v;
        }
        history.push(change);
        if change < tol {
            return Some(sweep);
        }
    }
    None
}

/// Per row, the first node where `p - w > eps_w` (interpolated to the
/// `eps_w` level), or `-inf`. Rows on which `p` did not decrease since the
/// previous row are `-inf`: no mass is absorbed there, so no barrier can be
/// active.
fn extract_row(space: &SpaceGrid, w: &[f64], p: f64, p_prev: f64, eps_rel: f64) -> f64 {
    if p_prev - p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let eps = eps_rel * p;
    let mut prev_gap = f64::NAN;
    for (k, &wk) in w.iter().enumerate() {
        let gap = p - wk;
        if gap > eps {
            if k == 0 {
                return space.x_min;
            }
            let s = ((eps - prev_gap) / (gap - prev_gap)).clamp(0.0, 1.0);
            return space.x(k - 1) + s * space.dx;
        }
        prev_gap = gap;
    }
    f64::NEG_INFINITY
}

/// Value compared against the first row in the flat-row rule: `p(0) = 1`
/// when the first row comes after 0; the row at `t = 0` itself is never
/// treated as flat.
fn initial_reference(t_first: f64) -> f64 {
    if t_first == 0.0 {
        f64::INFINITY
    } else {
        1.0
    }
}

/// Boundary read-off from a stored field; see [`solve_inverse`].
pub fn extract_boundary(w: &SurvivalField, p: &SurvivalCurve, eps_w_rel: f64) -> Result<Boundary> {
    let f = w.field();
    let mut rows = Vec::with_capacity(f.rows());
    for j in 0..f.rows() {
        let row = f.row(j);
        if let Some(k) = row.windows(2).position(|x| x[1] - x[0] > ISOTONIC_TOLERANCE) {
            return Err(Error::Scheme(format!(
                "row {j} of w is not monotone at node {k}"
            )));
        }
        let pj = p.eval(f.times[j])?;
        let prev = if j == 0 {
            initial_reference(f.times[0])
        } else {
            p.eval(f.times[j - 1])?
        };
        rows.push(extract_row(&f.space, row, pj, prev, eps_w_rel));
    }
    Boundary::piecewise_linear(f.times.clone(), rows, p.horizon())
}

pub fn solve_inverse(
    spec: &DiffusionSpec,
    init: &InitialDistribution,
    p: &SurvivalCurve,
    lattice: &Lattice,
    opts: &InverseOptions,
) -> Result<ObstacleSolveReport> {
    p.validate_p0().into_result()?;
    if lattice.horizon() > p.horizon() * (1.0 + 1e-12) {
        return domain(format!(
            "lattice horizon {} exceeds the survival curve horizon {}",
            lattice.horizon(),
            p.horizon()
        ));
    }
    let space = lattice.space;
    let times = lattice.times();
    let nx = space.nx;
    let t0 = lattice.t_start();
    if init.kind() == InitialKind::PointMass && !(t0 > 0.0) {
        return domain("a point-mass start needs a lattice starting after t = 0");
    }
    let start = init.regularized(spec, t0)?;
    let t_min = opts.t_min.unwrap_or(t0 + 10.0 * (times[1] - times[0]));

    let p_at: Vec<f64> = times.iter().map(|&t| p.eval(t)).collect::<Result<_>>()?;
    let mut w: Vec<f64> = space
        .xs()
        .iter()
        .map(|&x| (1.0 - (start.cdf)(x)).min(p_at[0]))
        .collect();
    w[0] = p_at[0];
    w[nx - 1] = 0.0;
    // Unconstrained companion w0 = 1 - p0 for the sandwich bounds.
    let mut free: Vec<f64> = space.xs().iter().map(|&x| 1.0 - (start.cdf)(x)).collect();
    free[0] = 1.0;
    free[nx - 1] = 0.0;

    let mut cache = OperatorCache::backward(spec, space);
    let mut free_stepper = ThetaStepper::new();
    let mut rhs = vec![0.0; nx];
    let mut history = Vec::new();
    let mut sweeps = Vec::with_capacity(times.len());
    let mut field = if opts.store_w {
        Some(Field::new(space))
    } else {
        None
    };

    let mut summary = InverseSummary {
        dx: space.dx,
        dt: times[1] - times[0],
        nx,
        rows: times.len(),
        t_min,
        complementarity_residual: 0.0,
        constraint_violation: 0.0,
        isotonic_repair: 0.0,
        psor_max_sweeps: 0,
        psor_mean_sweeps: 0.0,
        sandwich_lower_violation: 0.0,
        sandwich_upper_violation: 0.0,
        decrease_rate: p.decrease_rate(0.0, p.horizon())?,
        largest_down_step: 0.0,
    };
    let mut b_rows = Vec::with_capacity(times.len());
    // Rows j-1 and j kept for the centred residual at j.
    let mut prev_row: Option<Vec<f64>> = None;
    let mut cur_row = w.clone();

    let observe = |j: usize, row: &[f64], free_row: &[f64], s: &mut InverseSummary| {
        for k in 0..nx {
            s.constraint_violation = s.constraint_violation.max(row[k] - p_at[j]);
            let gap = free_row[k] - row[k];
            s.sandwich_lower_violation = s.sandwich_lower_violation.max(-gap);
            s.sandwich_upper_violation = s.sandwich_upper_violation.max(gap - (1.0 - p_at[j]));
        }
    };
    observe(0, &w, &free, &mut summary);
    b_rows.push(extract_row(&space, &w, p_at[0], initial_reference(t0), opts.eps_w_rel));
    if let Some(f) = field.as_mut() {
        f.push(times[0], w.clone());
    }

    for j in 0..times.len() - 1 {
        let (ta, tb) = (times[j], times[j + 1]);
        let h = tb - ta;
        let cap = p_at[j + 1];
        let damped = j < opts.damped_steps || lattice.restart(j) && j > 0;
        let mut step_sweeps = 0;
        let substeps: Vec<(f64, f64, f64)> = if damped {
            vec![(ta, ta + 0.5 * h, 1.0), (ta + 0.5 * h, tb, 1.0)]
        } else {
            vec![(ta, tb, opts.theta)]
        };
        for (sa, sb, theta) in substeps {
            let dt = sb - sa;
            let result = cache.with_pair(sa, sb, |old, new| {
                let ex = (1.0 - theta) * dt;
                for k in 1..nx - 1 {
                    rhs[k] = w[k] - if ex != 0.0 { ex * old.apply_at(&w, k) } else { 0.0 };
                }
                w[0] = cap;
                w[nx - 1] = 0.0;
                let cnt = psor(new, theta * dt, &rhs, &mut w, cap, opts.omega, opts.tol, opts.max_sweeps, &mut history);
                let free_res = free_stepper.step(old, new, &mut free, dt, theta, 1.0, 0.0, &[]);
                (cnt, free_res)
            })?;
            result.1?;
            match result.0 {
                Some(c) => step_sweeps += c,
                None => {
                    return Err(Error::NonConvergence {
                        message: format!(
                            "PSOR did not reach {:e} in {} sweeps at t = {sb}",
                            opts.tol, opts.max_sweeps
                        ),
                        residual_history: history.clone(),
                    })
                }
            }
        }
        sweeps.push(step_sweeps);

        // Isotonic check: w must be nonincreasing in x.
        let mut worst = 0.0f64;
        for k in 1..nx {
            if w[k] > w[k - 1] {
                worst = worst.max(w[k] - w[k - 1]);
                w[k] = w[k - 1];
            }
        }
        if worst > ISOTONIC_TOLERANCE {
            return Err(Error::Scheme(format!(
                "w lost monotonicity in x by {worst:e} at t = {tb}"
            )));
        }
        summary.isotonic_repair = summary.isotonic_repair.max(worst);
        observe(j + 1, &w, &free, &mut summary);
        b_rows.push(extract_row(&space, &w, p_at[j + 1], p_at[j], opts.eps_w_rel));

        // Centred residual at row j, using rows j-1, j, j+1.
        if let Some(prev) = prev_row.as_ref() {
            let t = times[j];
            if t >= t_min {
                let span = times[j + 1] - times[j - 1];
                let r = cache.with_pair(t, t, |_, op| {
                    let mut worst = 0.0f64;
                    for k in 1..nx - 1 {
                        let lw = (w[k] - prev[k]) / span + op.apply_at(&cur_row, k);
                        let gap = p_at[j] - cur_row[k];
                        worst = worst.max(lw.abs().min(gap));
                    }
                    worst
                })?;
                summary.complementarity_residual = summary.complementarity_residual.max(r);
            }
        }
        prev_row = Some(std::mem::replace(&mut cur_row, w.clone()));
        if let Some(f) = field.as_mut() {
            f.push(tb, w.clone());
        }
    }

    summary.psor_max_sweeps = sweeps.iter().copied().max().unwrap_or(0);
    summary.psor_mean_sweeps = sweeps.iter().sum::<usize>() as f64 / sweeps.len().max(1) as f64;
    for j in 1..b_rows.len() {
        if times[j - 1] < t_min {
            continue;
        }
        let drop = b_rows[j - 1] - b_rows[j];
        if drop.is_nan() {
            continue;
        }
        summary.largest_down_step = summary.largest_down_step.max(drop);
    }
    let b_hat = Boundary::piecewise_linear(times.to_vec(), b_rows.clone(), p.horizon())?;
    Ok(ObstacleSolveReport {
        w: field.map(SurvivalField),
        times: times.to_vec(),
        b_rows,
        b_hat,
        summary,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowReport {
    pub t1: f64,
    pub t2: f64,
    pub decrease_rate: f64,
    /// Largest adjacent-row drop of `b_hat` inside the window.
    pub max_down_jump: f64,
    pub threshold: f64,
    pub flagged_jumps: usize,
    /// For windows where `p` is flat somewhere: whether every row strictly
    /// inside each flat stretch has `b_hat = -inf`.
    pub flat_interior_neg_infinite: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityReport {
    pub c_fit: f64,
    pub modulus: f64,
    pub windows: Vec<WindowReport>,
}

impl ContinuityReport {
    pub fn passes(&self) -> bool {
        self.windows.iter().all(|w| {
            w.flagged_jumps == 0 && w.flat_interior_neg_infinite.unwrap_or(true)
        })
    }
}

/// `C_fit`: largest adjacent-row change of the barrier recovered on a
/// benchmark whose true barrier is constant, plus two cells of slack,
/// divided by `sqrt(dt |log dt|)`.
pub fn calibrate_modulus(times: &[f64], b_rows: &[f64], t_min: f64, dx: f64, dt: f64) -> f64 {
    let mut worst = 0.0f64;
    for j in 1..b_rows.len() {
        if times[j - 1] < t_min {
            continue;
        }
        let d = (b_rows[j] - b_rows[j - 1]).abs();
        if d.is_finite() {
            worst = worst.max(d);
        }
    }
    (worst + 2.0 * dx) / (dt * dt.ln().abs()).sqrt()
}

/// Continuity diagnostic on the rows of an extracted barrier.
pub fn continuity_check(
    p: &SurvivalCurve,
    times: &[f64],
    b_rows: &[f64],
    windows: &[(f64, f64)],
    c_fit: f64,
    dt: f64,
) -> Result<ContinuityReport> {
    let modulus = (dt * dt.ln().abs()).sqrt();
    let threshold = c_fit * modulus;
    let mut out = Vec::with_capacity(windows.len());
    for &(t1, t2) in windows {
        let l = p.decrease_rate(t1, t2)?;
        let mut max_down = 0.0f64;
        let mut flagged = 0;
        let mut flat_ok = None;
        if l > 0.0 {
            for j in 1..b_rows.len() {
                if times[j - 1] < t1 || times[j] > t2 {
                    continue;
                }
                let drop = b_rows[j - 1] - b_rows[j];
                if drop.is_nan() {
                    continue;
                }
                max_down = max_down.max(drop);
                if drop > threshold {
                    flagged += 1;
                }
            }
        } else {
            // Maximal stretches where p is constant.
            let (pt, pv) = (p.times(), p.values());
            let mut ok = true;
            let mut k = 0;
            while k + 1 < pt.len() {
                if pv[k + 1] == pv[k] && pt[k + 1] > t1 && pt[k] < t2 {
                    let a = pt[k];
                    let mut e = k + 1;
                    while e + 1 < pt.len() && pv[e + 1] == pv[k] {
                        e += 1;
                    }
                    let c = pt[e];
                    // A row stands for the step (t_{j-1}, t_j]; only steps
                    // lying inside the stretch are required to be -inf.
                    for j in 1..times.len() {
                        let t = times[j];
                        if times[j - 1] >= a && t < c && t >= t1 && t <= t2 && b_rows[j] != f64::NEG_INFINITY {
                            ok = false;
                        }
                    }
                    k = e;
                } else {
                    k += 1;
                }
            }
            flat_ok = Some(ok);
        }
        out.push(WindowReport {
            t1,
            t2,
            decrease_rate: l,
            max_down_jump: max_down,
            threshold,
            flagged_jumps: flagged,
            flat_interior_neg_infinite: flat_ok,
        });
    }
    Ok(ContinuityReport {
        c_fit,
        modulus,
        windows: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extraction_on_an_idealised_step() {
        let space = SpaceGrid::new(-1.0, 1.0, 201).unwrap();
        let p = 0.8;
        let row: Vec<f64> = space.xs().iter().map(|&x| if x < 0.0 { p } else { 0.0 }).collect();
        let b = extract_row(&space, &row, p, 0.9, 1e-8);
        assert!(b.abs() <= space.dx, "{b}");
    }

    #[test]
    fn full_contact_row_is_neg_infinite() {
        let space = SpaceGrid::new(-1.0, 1.0, 21).unwrap();
        let row = vec![0.5; 21];
        assert_eq!(extract_row(&space, &row, 0.5, 0.6, 1e-8), f64::NEG_INFINITY);
    }

    #[test]
    fn psor_matches_thomas_without_active_obstacle() {
        let space = SpaceGrid::new(-2.0, 2.0, 41).unwrap();
        let op = crate::grid::backward_operator(&DiffusionSpec::brownian(), &space, 0.0).unwrap();
        let rhs: Vec<f64> = space.xs().iter().map(|x| (-x * x).exp()).collect();
        let mut w = rhs.clone();
        w[0] = 0.0;
        w[40] = 0.0;
        let mut hist = Vec::new();
        psor(&op, 0.01, &rhs, &mut w, 10.0, 1.5, 1e-13, 10_000, &mut hist).unwrap();
        let mut t = rhs.clone();
        let mut stepper = ThetaStepper::new();
        stepper.step(&op, &op, &mut t, 0.01, 1.0, 0.0, 0.0, &[]).unwrap();
        for k in 0..41 {
            assert!((w[k] - t[k]).abs() < 1e-11);
        }
    }
}
