use ifpp::analytic::{bm_constant_barrier_survival, exponential_curve};
use ifpp::diffusion::{DiffusionSpec, InitialDistribution};
use ifpp::inverse::{extract_boundary, inverse_lattice, solve_inverse, InverseOptions, ObstacleSolveReport};
use ifpp::survival::SurvivalCurve;
use ifpp::Error;

const DX: f64 = 0.01;
const DT: f64 = 1e-3;
const WARMUP: f64 = 1e-4;
const T_MIN: f64 = 0.1;

fn solve(x0: f64, p: &SurvivalCurve, opts: &InverseOptions) -> ifpp::Result<ObstacleSolveReport> {
    let spec = DiffusionSpec::brownian();
    let init = InitialDistribution::point_mass(x0).unwrap();
    let lat = inverse_lattice(&spec, &init, p.horizon(), DX, DT, WARMUP)?;
    solve_inverse(&spec, &init, p, &lat, opts)
}

fn grid_times() -> Vec<f64> {
    (0..=1000).map(|k| k as f64 / 1000.0).collect()
}

/// Rows at or after `T_MIN`, as `(t, b)`.
fn late_rows(r: &ObstacleSolveReport) -> impl Iterator<Item = (f64, f64)> + '_ {
    r.times
        .iter()
        .copied()
        .zip(r.b_rows.iter().copied())
        .filter(|(t, _)| *t >= T_MIN)
}

#[test]
fn certain_survival_gives_no_barrier() {
    let p = SurvivalCurve::from_fn(grid_times(), |_| 1.0).unwrap();
    let r = solve(0.0, &p, &InverseOptions::default()).unwrap();
    assert!(r.b_rows.iter().all(|&b| b == f64::NEG_INFINITY));
    assert!(r.b_hat.is_neg_infinity_everywhere());
}

#[test]
fn constant_barrier_curve_gives_back_the_constant() {
    let p = SurvivalCurve::from_fn(grid_times(), |t| {
        if t == 0.0 {
            1.0
        } else {
            bm_constant_barrier_survival(1.0, 0.0, t).unwrap()
        }
    })
    .unwrap();
    let r = solve(1.0, &p, &InverseOptions::default()).unwrap();
    for (t, b) in late_rows(&r) {
        assert!(b.abs() < 0.05, "b_hat({t}) = {b}");
    }
}

#[test]
fn stored_field_reproduces_the_barrier_and_stays_below_p() {
    let p = exponential_curve(1.0, 1.0, 1000).unwrap();
    let opts = InverseOptions {
        store_w: true,
        ..InverseOptions::default()
    };
    let r = solve(0.0, &p, &opts).unwrap();
    let w = r.w.as_ref().unwrap();
    let again = extract_boundary(w, &p, opts.eps_w_rel).unwrap();
    for (&t, &b) in r.times.iter().zip(&r.b_rows) {
        let b2 = again.value(t).unwrap();
        assert!(b == b2 || (b - b2).abs() < 1e-12, "t={t}: {b} vs {b2}");
    }
    let f = w.field();
    for j in 0..f.rows() {
        let pj = p.eval(f.times[j]).unwrap();
        for &v in f.row(j) {
            assert!(v <= pj + 1e-10, "w = {v} above p = {pj} at t = {}", f.times[j]);
        }
    }
}

#[test]
fn higher_survival_means_a_lower_barrier() {
    let slow = exponential_curve(0.5, 1.0, 1000).unwrap();
    let fast = exponential_curve(1.0, 1.0, 1000).unwrap();
    let opts = InverseOptions::default();
    let (rs, rf) = (solve(0.0, &slow, &opts).unwrap(), solve(0.0, &fast, &opts).unwrap());
    for ((t, bs), (_, bf)) in late_rows(&rs).zip(late_rows(&rf)) {
        assert!(bs <= bf + DX, "t={t}: slow {bs} above fast {bf}");
    }
}

#[test]
fn halving_the_tie_threshold_moves_the_barrier_less_than_a_cell() {
    let p = exponential_curve(1.0, 1.0, 1000).unwrap();
    let base = InverseOptions::default();
    let half = InverseOptions {
        eps_w_rel: base.eps_w_rel / 2.0,
        ..base.clone()
    };
    let (a, b) = (solve(0.0, &p, &base).unwrap(), solve(0.0, &p, &half).unwrap());
    for ((t, x), (_, y)) in late_rows(&a).zip(late_rows(&b)) {
        assert!(x == y || (x - y).abs() < DX, "t={t}: {x} vs {y}");
    }
}

#[test]
fn one_sweep_is_not_enough() {
    let p = exponential_curve(1.0, 1.0, 1000).unwrap();
    let opts = InverseOptions {
        max_sweeps: 1,
        ..InverseOptions::default()
    };
    match solve(0.0, &p, &opts) {
        Err(Error::NonConvergence { residual_history, .. }) => assert!(!residual_history.is_empty()),
        other => panic!("expected non-convergence, got {:?}", other.map(|r| r.summary)),
    }
}

#[test]
fn increasing_curves_are_rejected() {
    let p = SurvivalCurve::new(vec![0.0, 0.5, 1.0], vec![1.0, 0.5, 0.6]).unwrap();
    assert!(matches!(solve(0.0, &p, &InverseOptions::default()), Err(Error::Input(_))));
}
