//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Reference values come from closed forms
//! (reflection principle, Bachelier-Levy) evaluated here, from Monte Carlo,
//! or from exact structural identities.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use ifpp::analytic::{bm_constant_barrier_survival, bm_linear_barrier_survival, exponential_curve};
use ifpp::config::{DirectConfig, GridConfig, InverseConfig, McConfig, RunConfig, Tolerances};
use ifpp::diffusion::{named_coefficient, DiffusionSpec, InitialDistribution};
use ifpp::direct::{direct_lattice, refine_direct, solve_direct_landmark, DirectDiagnostics, DirectOptions};
use ifpp::grid::{apply_l, apply_l1, SpaceGrid};
use ifpp::inverse::{
    calibrate_modulus, continuity_check, inverse_lattice, solve_inverse, InverseOptions, InverseSummary,
    ObstacleSolveReport,
};
use ifpp::mc::{estimate_survival, McOptions};
use ifpp::workflow::{roundtrip_bp, roundtrip_pb};
use ifpp::{Boundary, SurvivalCurve};

// Reference resolution shared by the PDE criteria.
const DX: f64 = 0.005;
const DT: f64 = 5e-4;
const WARMUP: f64 = 1e-4;
const LEVEL: u32 = 10;
const MIN_LEVEL: u32 = 8;

const C1_TOL: f64 = 5e-4;
const C1_TIMES: [f64; 3] = [0.25, 0.5, 1.0];
const C1_RUNTIME: Duration = Duration::from_secs(30);
const C2_TOL: f64 = 1e-3;
const C2_SLOPE: f64 = 0.5;
const C2_TIMES: [f64; 2] = [0.5, 1.0];
const C2_RUNTIME: Duration = Duration::from_secs(30);
const C3_LEVELS: std::ops::RangeInclusive<u32> = 4..=9;
const C3_TOL: f64 = 1e-12;
const C4_DENSITY_FLOOR: f64 = -1e-12;
const C4_EXCESS: f64 = 1e-10;
const C4_MONOTONE: f64 = 1e-12;
const C4_CONSISTENCY: f64 = 1e-10;
const C4_SANDWICH: f64 = 1e-8;
const C5_FEASIBILITY: f64 = 1e-10;
const C5_RATIO: f64 = 3.0;
const C5_COARSE: (f64, f64) = (0.01, 1e-3);
const C5_T_MIN: f64 = 0.1;
const C6_T_MIN: f64 = 0.1;
const C6_CONST_TOL: f64 = 0.05;
const C6_LINEAR_TOL: f64 = 0.07;
const C6_RUNTIME: Duration = Duration::from_secs(300);
const C7_PATHS: usize = 1_000_000;
const C7_MC_DT: f64 = 1e-3;
const C7_SEED: u64 = 7;
const C7_TIMES: [f64; 4] = [0.25, 0.5, 1.0, 2.0];
const C7_ABS_TOL: f64 = 0.01;
const C7_RUNTIME: Duration = Duration::from_secs(600);
const C8_PATHS: usize = 1_000_000;
const C8_SEED: u64 = 8;
const C10_M: [f64; 3] = [4.0, 8.0, 16.0];
const C10_SLACK: f64 = 1e-3;
const C11_ORDER: f64 = 1.8;

struct Line {
    id: u32,
    pass: bool,
    detail: String,
}

fn line(id: u32, pass: bool, detail: String) -> Line {
    Line { id, pass, detail }
}

fn failed(id: u32, what: &str, e: impl std::fmt::Display) -> Line {
    line(id, false, format!("{what}: error: {e}"))
}

fn bm() -> DiffusionSpec {
    DiffusionSpec::brownian()
}

fn start(x0: f64) -> InitialDistribution {
    InitialDistribution::point_mass(x0).unwrap()
}

fn tracked() -> DirectOptions {
    DirectOptions {
        track_unkilled: true,
        ..Default::default()
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

/// Field invariants collected from every solve in the run.
#[derive(Default)]
struct Invariants {
    direct: Vec<(String, DirectDiagnostics)>,
    inverse: Vec<(String, InverseSummary)>,
}

impl Invariants {
    fn add_direct(&mut self, label: impl Into<String>, d: &DirectDiagnostics) {
        self.direct.push((label.into(), d.clone()));
    }

    fn add_inverse(&mut self, label: impl Into<String>, s: &InverseSummary) {
        self.inverse.push((label.into(), s.clone()));
    }
}

struct Shared {
    inv: Invariants,
    p_const_1: Option<f64>,
    c_fit: Option<f64>,
    exp_fine: Option<(SurvivalCurve, ObstacleSolveReport)>,
}

fn criterion_1(sh: &mut Shared) -> Line {
    let clock = Instant::now();
    let b = Boundary::constant(0.0, 1.0).unwrap();
    let run = || -> ifpp::Result<_> {
        let lat = direct_lattice(&bm(), &start(1.0), &b, LEVEL, DX, DT, WARMUP)?;
        refine_direct(&bm(), &start(1.0), &b, MIN_LEVEL, LEVEL, &lat, &tracked())
    };
    let r = match run() {
        Ok(r) => r,
        Err(e) => return failed(1, "constant barrier", e),
    };
    let elapsed = clock.elapsed();
    for (n, d) in r.levels.iter().zip(&r.level_diagnostics) {
        sh.inv.add_direct(format!("c1 level {n}"), d);
    }
    let mut worst = 0.0f64;
    let mut raw = 0.0f64;
    for t in C1_TIMES {
        let exact = bm_constant_barrier_survival(1.0, 0.0, t).unwrap();
        worst = worst.max((r.extrapolated.eval(t).unwrap() - exact).abs());
        raw = raw.max((r.finest.survival.eval(t).unwrap() - exact).abs());
    }
    let p1 = r.extrapolated.eval(1.0).unwrap();
    sh.p_const_1 = Some(p1);
    line(
        1,
        worst <= C1_TOL && elapsed <= C1_RUNTIME,
        format!(
            "constant barrier: max |p - erf(1/sqrt(2t))| = {worst:.2e} (tol {C1_TOL:.0e}; level {LEVEL} alone {raw:.2e}), \
             p(1) = {p1:.6}, {} (limit {})",
            secs(elapsed),
            secs(C1_RUNTIME)
        ),
    )
}

fn criterion_2(sh: &mut Shared) -> Line {
    let clock = Instant::now();
    let b = Boundary::piecewise_linear(vec![0.0, 1.0], vec![0.0, C2_SLOPE], 1.0).unwrap();
    let run = || -> ifpp::Result<_> {
        let lat = direct_lattice(&bm(), &start(1.0), &b, LEVEL, DX, DT, WARMUP)?;
        refine_direct(&bm(), &start(1.0), &b, MIN_LEVEL, LEVEL, &lat, &tracked())
    };
    let r = match run() {
        Ok(r) => r,
        Err(e) => return failed(2, "linear barrier", e),
    };
    let elapsed = clock.elapsed();
    for (n, d) in r.levels.iter().zip(&r.level_diagnostics) {
        sh.inv.add_direct(format!("c2 level {n}"), d);
    }
    let mut worst = 0.0f64;
    for t in C2_TIMES {
        let exact = bm_linear_barrier_survival(1.0, 0.0, C2_SLOPE, t).unwrap();
        worst = worst.max((r.extrapolated.eval(t).unwrap() - exact).abs());
    }
    line(
        2,
        worst <= C2_TOL && elapsed <= C2_RUNTIME,
        format!(
            "linear barrier 0.5t: max gap to Bachelier-Levy = {worst:.2e} (tol {C2_TOL:.0e}), {} (limit {})",
            secs(elapsed),
            secs(C2_RUNTIME)
        ),
    )
}

fn criterion_3(sh: &mut Shared) -> Line {
    let b = Boundary::piecewise_linear(vec![0.0, 1.0], vec![0.0, 1.0], 1.0).unwrap();
    let max_level = *C3_LEVELS.end();
    let lat = match direct_lattice(&bm(), &start(1.0), &b, max_level, DX, DT, WARMUP) {
        Ok(l) => l,
        Err(e) => return failed(3, "monotone refinement", e),
    };
    let mut curves = Vec::new();
    for n in C3_LEVELS {
        match solve_direct_landmark(&bm(), &start(1.0), &b, n, &lat, &tracked()) {
            Ok(s) => {
                sh.inv.add_direct(format!("c3 level {n}"), &s.diagnostics);
                curves.push(s.lattice_survival);
            }
            Err(e) => return failed(3, "monotone refinement", e),
        }
    }
    let mut worst = 0.0f64;
    let mut count = 0usize;
    for w in curves.windows(2) {
        for (coarse, fine) in w[0].iter().zip(&w[1]) {
            let v = fine - coarse;
            worst = worst.max(v);
            if v > C3_TOL {
                count += 1;
            }
        }
    }
    line(
        3,
        worst <= C3_TOL,
        format!(
            "b(t) = t, levels {}..={}: max (p_(n+1) - p_n) = {worst:.2e} (tol {C3_TOL:.0e}), {count} violations over {} times",
            C3_LEVELS.start(),
            max_level,
            lat.times().len()
        ),
    )
}

fn criterion_4(sh: &Shared) -> Line {
    let mut worst_floor = f64::INFINITY;
    let mut worst = [0.0f64; 5];
    let mut culprit: Option<String> = None;
    for (label, d) in &sh.inv.direct {
        worst_floor = worst_floor.min(d.min_density);
        worst[0] = worst[0].max(d.max_excess_over_unkilled);
        worst[1] = worst[1].max(d.w_monotonicity_violation);
        worst[2] = worst[2].max(d.p_consistency);
        worst[3] = worst[3].max(d.sandwich_lower_violation);
        worst[4] = worst[4].max(d.sandwich_upper_violation);
        let bad = d.min_density < C4_DENSITY_FLOOR
            || d.max_excess_over_unkilled > C4_EXCESS
            || d.w_monotonicity_violation > C4_MONOTONE
            || d.p_consistency > C4_CONSISTENCY
            || d.sandwich_lower_violation > C4_SANDWICH
            || d.sandwich_upper_violation > C4_SANDWICH;
        if bad && culprit.is_none() {
            culprit = Some(label.clone());
        }
    }
    let mut inv_worst = [0.0f64; 3];
    for (label, s) in &sh.inv.inverse {
        inv_worst[0] = inv_worst[0].max(s.constraint_violation);
        inv_worst[1] = inv_worst[1].max(s.sandwich_lower_violation);
        inv_worst[2] = inv_worst[2].max(s.sandwich_upper_violation);
        let bad = s.constraint_violation > C5_FEASIBILITY
            || s.sandwich_lower_violation > C4_SANDWICH
            || s.sandwich_upper_violation > C4_SANDWICH;
        if bad && culprit.is_none() {
            culprit = Some(label.clone());
        }
    }
    let solves = sh.inv.direct.len() + sh.inv.inverse.len();
    line(
        4,
        culprit.is_none() && solves > 0,
        format!(
            "{solves} solves: min U = {worst_floor:.1e} (floor {C4_DENSITY_FLOOR:.0e}), U - rho0 <= {:.1e}, \
             w monotone within {:.1e}, |p - w(x_min)| <= {:.1e}, sandwich violations {:.1e}/{:.1e} \
             (inverse: w - p <= {:.1e}, sandwich {:.1e}/{:.1e}){}",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            worst[4],
            inv_worst[0],
            inv_worst[1],
            inv_worst[2],
            culprit.map(|c| format!("; first offender: {c}")).unwrap_or_default()
        ),
    )
}

fn exp_inverse(dx: f64, dt: f64) -> ifpp::Result<(SurvivalCurve, ObstacleSolveReport)> {
    let p = exponential_curve(1.0, 1.0, 2000)?;
    let lat = inverse_lattice(&bm(), &start(0.0), 1.0, dx, dt, WARMUP)?;
    let opts = InverseOptions {
        t_min: Some(C5_T_MIN),
        ..Default::default()
    };
    let rep = solve_inverse(&bm(), &start(0.0), &p, &lat, &opts)?;
    Ok((p, rep))
}

fn criterion_5(sh: &mut Shared) -> Line {
    let coarse = match exp_inverse(C5_COARSE.0, C5_COARSE.1) {
        Ok(r) => r,
        Err(e) => return failed(5, "obstacle solve", e),
    };
    let fine = match exp_inverse(DX, DT) {
        Ok(r) => r,
        Err(e) => return failed(5, "obstacle solve", e),
    };
    let (a, b) = (&coarse.1.summary, &fine.1.summary);
    sh.inv.add_inverse("c5 coarse", a);
    sh.inv.add_inverse("c5 fine", b);
    let feas = a.constraint_violation.max(b.constraint_violation);
    let ratio = a.complementarity_residual / b.complementarity_residual;
    let detail = format!(
        "exponential p, BM from 0: max(w - p) = {feas:.1e} (tol {C5_FEASIBILITY:.0e}); complementarity residual on \
         [{C5_T_MIN}, 1] {:.3e} -> {:.3e}, ratio {ratio:.2} (need >= {C5_RATIO})",
        a.complementarity_residual, b.complementarity_residual
    );
    sh.exp_fine = Some(fine);
    line(5, feas <= C5_FEASIBILITY && ratio >= C5_RATIO, detail)
}

fn bp_config(x0: f64, tol: f64) -> RunConfig {
    RunConfig {
        diffusion: ifpp::config::DiffusionConfig {
            x0: Some(x0),
            ..Default::default()
        },
        grid: GridConfig {
            dx: DX,
            dt: DT,
            warmup: WARMUP,
        },
        direct: DirectConfig {
            level: LEVEL,
            min_level: MIN_LEVEL,
            track_invariants: true,
            ..Default::default()
        },
        inverse: InverseConfig::default(),
        tolerances: Tolerances {
            boundary_gap: tol,
            boundary_t_min: C6_T_MIN,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn criterion_6(sh: &mut Shared) -> Line {
    let clock = Instant::now();
    let cases = [
        ("constant", Boundary::constant(0.0, 1.0).unwrap(), C6_CONST_TOL),
        (
            "linear",
            Boundary::piecewise_linear(vec![0.0, 1.0], vec![0.0, C2_SLOPE], 1.0).unwrap(),
            C6_LINEAR_TOL,
        ),
    ];
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, b, tol) in cases {
        let rt = match roundtrip_bp(&bp_config(1.0, tol), &b) {
            Ok(r) => r,
            Err(e) => return failed(6, name, e),
        };
        let rep = &rt.report;
        for (n, d) in rep.levels.iter().zip(&rep.direct) {
            sh.inv.add_direct(format!("c6 {name} level {n}"), d);
        }
        sh.inv.add_inverse(format!("c6 {name}"), &rep.inverse);
        if name == "constant" {
            sh.c_fit = Some(calibrate_modulus(&rt.inverse.times, &rt.inverse.b_rows, C6_T_MIN, DX, DT));
        }
        pass &= rep.pass && rep.b0.consistent_with_b0;
        parts.push(format!(
            "{name}: sup |b_hat - b| = {:.3e} at t = {:.3} (tol {tol})",
            rep.sup_gap, rep.sup_gap_at
        ));
    }
    let elapsed = clock.elapsed();
    line(
        6,
        pass && elapsed <= C6_RUNTIME,
        format!(
            "{} on [{C6_T_MIN}, 1]; C_fit = {:.3}; {} (limit {})",
            parts.join(", "),
            sh.c_fit.unwrap_or(f64::NAN),
            secs(elapsed),
            secs(C6_RUNTIME)
        ),
    )
}

fn criterion_7(sh: &mut Shared) -> Line {
    let clock = Instant::now();
    let p = exponential_curve(1.0, 2.0, 4000).unwrap();
    let mut cfg = bp_config(0.0, 0.0);
    cfg.mc = McConfig {
        paths: C7_PATHS,
        dt: C7_MC_DT,
        seed: C7_SEED,
        bridge: true,
    };
    cfg.tolerances.survival_gap = C7_ABS_TOL;
    cfg.tolerances.output_times = C7_TIMES.to_vec();
    let rt = match roundtrip_pb(&cfg, &p) {
        Ok(r) => r,
        Err(e) => return failed(7, "survival round trip", e),
    };
    let elapsed = clock.elapsed();
    sh.inv.add_inverse("c7", &rt.report.inverse);
    sh.inv.add_direct("c7 direct check", &rt.report.direct);
    let gaps: Vec<String> = rt
        .report
        .gaps
        .iter()
        .map(|g| format!("t={}: {:.2e}/{:.2e}", g.t, g.gap, g.allowed))
        .collect();
    line(
        7,
        rt.report.pass && elapsed <= C7_RUNTIME,
        format!(
            "exp(-t) -> b_hat -> MC ({C7_PATHS} bridge paths): gap/allowed {}; {} (limit {})",
            gaps.join(", "),
            secs(elapsed),
            secs(C7_RUNTIME)
        ),
    )
}

fn criterion_8() -> Line {
    let b = Boundary::constant(0.0, 1.0).unwrap();
    let opts = McOptions {
        n_paths: C8_PATHS,
        dt: 1e-3,
        seed: C8_SEED,
        bridge: true,
        horizon: 1.0,
    };
    match estimate_survival(&bm(), &start(1.0), &b, &opts) {
        Ok(est) => line(
            8,
            est.disagreements == 0,
            format!(
                "constant barrier, {C8_PATHS} paths: strict/non-strict disagreements = {} (need 0); p_hat(1) = {:.5} +/- {:.1e}",
                est.disagreements,
                est.p_hat[est.index_of(1.0)],
                est.ci_half_width[est.index_of(1.0)]
            ),
        ),
        Err(e) => failed(8, "crossing estimators", e),
    }
}

fn plateau_curve() -> SurvivalCurve {
    let ts: Vec<f64> = (0..=1000).map(|k| k as f64 / 1000.0).collect();
    SurvivalCurve::from_fn(ts, |t| {
        if t <= 0.4 {
            (-t).exp()
        } else if t <= 0.6 {
            (-0.4f64).exp()
        } else {
            (-(t - 0.2)).exp()
        }
    })
    .unwrap()
}

fn criterion_9(sh: &mut Shared) -> Line {
    let Some(c_fit) = sh.c_fit else {
        return line(9, false, "C_fit unavailable (criterion 6 did not run)".into());
    };
    let Some((p, rep)) = sh.exp_fine.as_ref() else {
        return line(9, false, "exponential solve unavailable (criterion 5 did not run)".into());
    };
    let l = p.decrease_rate(0.0, 1.0).unwrap();
    let jumps = match continuity_check(p, &rep.times, &rep.b_rows, &[(C6_T_MIN, 1.0)], c_fit, DT) {
        Ok(r) => r,
        Err(e) => return failed(9, "continuity check", e),
    };
    let w = &jumps.windows[0];

    let flat = plateau_curve();
    let flat_run = || -> ifpp::Result<_> {
        let lat = inverse_lattice(&bm(), &start(0.0), 1.0, C5_COARSE.0, C5_COARSE.1, WARMUP)?;
        let rep = solve_inverse(&bm(), &start(0.0), &flat, &lat, &InverseOptions::default())?;
        let check = continuity_check(&flat, &rep.times, &rep.b_rows, &[(0.0, 1.0)], c_fit, C5_COARSE.1)?;
        let inside = rep
            .times
            .iter()
            .zip(&rep.b_rows)
            .filter(|(t, _)| **t > 0.4 && **t < 0.6)
            .count();
        Ok((rep.summary, check.windows[0].flat_interior_neg_infinite, inside))
    };
    let (summary, flat_ok, inside) = match flat_run() {
        Ok(r) => r,
        Err(e) => return failed(9, "plateau solve", e),
    };
    sh.inv.add_inverse("c9 plateau", &summary);
    let pass = l > 0.0 && w.flagged_jumps == 0 && flat_ok == Some(true);
    line(
        9,
        pass,
        format!(
            "L(p,0,1) = {l:.4}; largest down-jump of b_hat on [{C6_T_MIN}, 1] = {:.2e} vs C_fit*sqrt(dt|log dt|) = {:.2e} \
             ({} flagged); plateau (0.4, 0.6): {inside} rows, all -inf = {}",
            w.max_down_jump,
            w.threshold,
            w.flagged_jumps,
            flat_ok.map_or("n/a".to_string(), |v| v.to_string())
        ),
    )
}

fn criterion_10(sh: &mut Shared) -> Line {
    let Some(p1) = sh.p_const_1 else {
        return line(10, false, "p(1) unavailable (criterion 1 did not run)".into());
    };
    let mut parts = Vec::new();
    let mut pass = true;
    for m in C10_M {
        let b = Boundary::constant(-1.0 / m, 1.0).unwrap();
        let run = || -> ifpp::Result<_> {
            let lat = direct_lattice(&bm(), &start(1.0), &b, LEVEL, DX, DT, WARMUP)?;
            refine_direct(&bm(), &start(1.0), &b, MIN_LEVEL, LEVEL, &lat, &tracked())
        };
        let r = match run() {
            Ok(r) => r,
            Err(e) => return failed(10, "semi-continuity", e),
        };
        for (n, d) in r.levels.iter().zip(&r.level_diagnostics) {
            sh.inv.add_direct(format!("c10 m={m} level {n}"), d);
        }
        let pm = r.extrapolated.eval(1.0).unwrap();
        let gap = (pm - p1).abs();
        let allowed = 2.0 / m + C10_SLACK;
        pass &= gap <= allowed;
        parts.push(format!("m={m}: {gap:.4}/{allowed:.4}"));
    }
    line(
        10,
        pass,
        format!("b_m = -1/m: |p_m(1) - p(1)| / allowed: {}", parts.join(", ")),
    )
}

/// Manufactured check of the discrete operators against exact derivatives
/// for `mu = 0.3 sin x`, `sigma = 1 + 0.5 tanh x`, `phi = exp(-(x - 0.3)^2)`.
fn criterion_11() -> Line {
    let drift = named_coefficient("sine-drift").unwrap();
    let vol = named_coefficient("tanh-vol").unwrap();
    let (f_mu, f_s) = (drift.function.clone(), vol.function.clone());
    let spec = DiffusionSpec::custom(move |x, t| f_mu(x, t), move |x, t| f_s(x, t), vol.lower_bound, drift.bound, true)
        .unwrap();

    let mu = |x: f64| 0.3 * x.sin();
    let dmu = |x: f64| 0.3 * x.cos();
    let s = |x: f64| 1.0 + 0.5 * x.tanh();
    let sech2 = |x: f64| 1.0 / x.cosh().powi(2);
    let ds = |x: f64| 0.5 * sech2(x);
    let dds = |x: f64| -sech2(x) * x.tanh();
    let a = |x: f64| s(x) * s(x);
    let da = |x: f64| 2.0 * s(x) * ds(x);
    let dda = |x: f64| 2.0 * (ds(x) * ds(x) + s(x) * dds(x));
    let phi = |x: f64| (-(x - 0.3) * (x - 0.3)).exp();
    let dphi = |x: f64| -2.0 * (x - 0.3) * phi(x);
    let ddphi = |x: f64| (4.0 * (x - 0.3) * (x - 0.3) - 2.0) * phi(x);
    let exact_l = |x: f64| -0.5 * (da(x) * dphi(x) + a(x) * ddphi(x)) + mu(x) * dphi(x);
    let exact_l1 = |x: f64| {
        -0.5 * (dda(x) * phi(x) + 2.0 * da(x) * dphi(x) + a(x) * ddphi(x)) + dmu(x) * phi(x) + mu(x) * dphi(x)
    };

    let mut errs = [[0.0f64; 3]; 2];
    for (i, n) in [121usize, 241, 481].into_iter().enumerate() {
        let grid = SpaceGrid::new(-3.0, 3.0, n).unwrap();
        let row: Vec<f64> = grid.xs().iter().map(|&x| phi(x)).collect();
        let l = apply_l(&spec, &grid, &row, 0.0).unwrap();
        let l1 = apply_l1(&spec, &grid, &row, 0.0).unwrap();
        for k in 1..n - 1 {
            let x = grid.x(k);
            errs[0][i] = errs[0][i].max((l[k - 1] - exact_l(x)).abs());
            errs[1][i] = errs[1][i].max((l1[k - 1] - exact_l1(x)).abs());
        }
    }
    let order = |e: [f64; 3]| [(e[0] / e[1]).log2(), (e[1] / e[2]).log2()];
    let (ol, ol1) = (order(errs[0]), order(errs[1]));
    let pass = ol.iter().chain(&ol1).all(|&o| o >= C11_ORDER);
    line(
        11,
        pass,
        format!(
            "manufactured residuals, dx = 0.05/0.025/0.0125: L errors {:.2e}/{:.2e}/{:.2e} (orders {:.2}, {:.2}); \
             L1 errors {:.2e}/{:.2e}/{:.2e} (orders {:.2}, {:.2}); need >= {C11_ORDER}",
            errs[0][0], errs[0][1], errs[0][2], ol[0], ol[1], errs[1][0], errs[1][1], errs[1][2], ol1[0], ol1[1]
        ),
    )
}

fn main() -> ExitCode {
    let mut sh = Shared {
        inv: Invariants::default(),
        p_const_1: None,
        c_fit: None,
        exp_fine: None,
    };
    let clock = Instant::now();
    let mut lines = vec![
        criterion_1(&mut sh),
        criterion_2(&mut sh),
        criterion_3(&mut sh),
    ];
    lines.push(criterion_5(&mut sh));
    lines.push(criterion_6(&mut sh));
    lines.push(criterion_7(&mut sh));
    lines.push(criterion_8());
    lines.push(criterion_9(&mut sh));
    lines.push(criterion_10(&mut sh));
    lines.push(criterion_11());
    // Aggregates the invariants of every solve above.
    lines.push(criterion_4(&sh));
    lines.sort_by_key(|l| l.id);

    println!();
    for l in &lines {
        println!(
            "criterion {:>2}: {}  {}",
            l.id,
            if l.pass { "PASS" } else { "FAIL" },
            l.detail
        );
    }
    let passed = lines.iter().filter(|l| l.pass).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {}",
        lines.len(),
        secs(clock.elapsed())
    );
    if passed == lines.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
