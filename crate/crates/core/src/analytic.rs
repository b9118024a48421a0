//! Closed-form Brownian benchmarks.

use libm::{erf, erfc};

use crate::error::{domain, Result};
use crate::survival::{ClosedForm, SurvivalCurve};

/// Standard normal distribution function, evaluated through `erfc` so the
/// lower tail keeps full relative precision.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Survival probability of Brownian motion started at `x0` against the
/// constant barrier `barrier`: `erf((x0 - barrier) / sqrt(2t))`.
pub fn bm_constant_barrier_survival(x0: f64, barrier: f64, t: f64) -> Result<f64> {
    if x0 <= barrier {
        return domain(format!("start {x0} is not above barrier {barrier}"));
    }
    if t < 0.0 {
        return domain(format!("negative time {t}"));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    Ok(erf((x0 - barrier) / (2.0 * t).sqrt()))
}

/// Time derivative of [`bm_constant_barrier_survival`]; the negative of the
/// first-passage density.
pub fn bm_constant_barrier_survival_rate(x0: f64, barrier: f64, t: f64) -> Result<f64> {
    if x0 <= barrier {
        return domain(format!("start {x0} is not above barrier {barrier}"));
    }
    if t <= 0.0 {
        return domain(format!("non-positive time {t}"));
    }
    let d = x0 - barrier;
    Ok(-d * (-d * d / (2.0 * t)).exp() / (2.0 * std::f64::consts::PI * t * t * t).sqrt())
}

/// Survival probability of Brownian motion from `x0` against the linear
/// barrier `a + c t` (Bachelier-Levy):
/// `Phi((d - ct)/sqrt t) - exp(2 c d) Phi((-d - ct)/sqrt t)` with `d = x0 - a`.
pub fn bm_linear_barrier_survival(x0: f64, a: f64, c: f64, t: f64) -> Result<f64> {
    if x0 <= a {
        return domain(format!("start {x0} is not above barrier intercept {a}"));
    }
    if t < 0.0 {
        return domain(format!("negative time {t}"));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    let d = x0 - a;
    let s = t.sqrt();
    let reflected = if c == 0.0 {
        norm_cdf(-d / s)
    } else {
        // exp(2cd) * Phi(z) computed in log space: for large c the product is
        // a ratio of two tiny/huge numbers.
        let z = (-d - c * t) / s;
        let tail = norm_cdf(z);
        if tail == 0.0 {
            0.0
        } else {
            (2.0 * c * d + tail.ln()).exp()
        }
    };
    Ok((norm_cdf((d - c * t) / s) - reflected).clamp(0.0, 1.0))
}

/// Exponential survival curve `exp(-lambda t)` sampled at `samples + 1`
/// equally spaced times on `[0, horizon]`.
pub fn exponential_curve(lambda: f64, horizon: f64, samples: usize) -> Result<SurvivalCurve> {
    if !(lambda > 0.0) {
        return domain(format!("rate must be positive, got {lambda}"));
    }
    if !(horizon > 0.0) || samples == 0 {
        return domain("exponential curve needs a positive horizon and at least one interval");
    }
    let times: Vec<f64> = (0..=samples)
        .map(|j| horizon * j as f64 / samples as f64)
        .collect();
    let values = times.iter().map(|t| (-lambda * t).exp()).collect();
    let mut curve = SurvivalCurve::new(times, values)?;
    curve.set_closed_form(ClosedForm::Exponential { rate: lambda });
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_barrier_reference_value() {
        let p = bm_constant_barrier_survival(1.0, 0.0, 1.0).unwrap();
        assert!((p - 0.682_689_492_137_086).abs() < 1e-14, "{p}");
    }

    #[test]
    fn constant_barrier_scale_invariance() {
        let a = bm_constant_barrier_survival(2.0, 0.0, 4.0).unwrap();
        let b = bm_constant_barrier_survival(1.0, 0.0, 1.0).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn constant_barrier_short_time_limit() {
        assert_eq!(bm_constant_barrier_survival(1.0, 0.0, 0.0).unwrap(), 1.0);
        assert!(bm_constant_barrier_survival(1.0, 0.0, 1e-6).unwrap() > 1.0 - 1e-15);
    }

    #[test]
    fn start_on_barrier_is_a_domain_error() {
        assert!(bm_constant_barrier_survival(0.0, 0.0, 1.0).is_err());
        assert!(bm_linear_barrier_survival(0.0, 0.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn linear_formula_collapses_to_constant() {
        for &t in &[0.01, 0.1, 0.5, 1.0, 3.0] {
            for &d in &[0.1, 1.0, 2.5] {
                let lin = bm_linear_barrier_survival(d, 0.0, 0.0, t).unwrap();
                let con = bm_constant_barrier_survival(d, 0.0, t).unwrap();
                assert!((lin - con).abs() < 1e-14, "t={t} d={d}");
            }
        }
    }

    #[test]
    fn steep_barrier_overtakes_the_path() {
        let p = bm_linear_barrier_survival(1.0, 0.0, 200.0, 0.5).unwrap();
        assert!(p < 1e-12);
    }

    #[test]
    fn rate_matches_finite_difference() {
        let h = 1e-5;
        for &t in &[0.2, 0.5, 1.0] {
            let fd = (bm_constant_barrier_survival(1.0, 0.0, t + h).unwrap()
                - bm_constant_barrier_survival(1.0, 0.0, t - h).unwrap())
                / (2.0 * h);
            let exact = bm_constant_barrier_survival_rate(1.0, 0.0, t).unwrap();
            assert!((fd - exact).abs() < 1e-8, "t={t}: {fd} vs {exact}");
        }
    }

    #[test]
    fn barrier_formulas_are_monotone() {
        let ts: Vec<f64> = (1..400).map(|k| k as f64 * 0.01).collect();
        for w in ts.windows(2) {
            let a = bm_linear_barrier_survival(1.0, 0.0, 0.5, w[0]).unwrap();
            let b = bm_linear_barrier_survival(1.0, 0.0, 0.5, w[1]).unwrap();
            assert!(b <= a + 1e-15);
            let a = bm_constant_barrier_survival(1.0, 0.0, w[0]).unwrap();
            let b = bm_constant_barrier_survival(1.0, 0.0, w[1]).unwrap();
            assert!(b <= a + 1e-15);
        }
        for k in 0..50 {
            let lo = -1.0 + 0.03 * k as f64;
            let hi = lo + 0.03;
            let a = bm_constant_barrier_survival(1.0, lo, 1.0).unwrap();
            let b = bm_constant_barrier_survival(1.0, hi, 1.0).unwrap();
            assert!(b <= a);
        }
    }

    #[test]
    fn exponential_reference_values() {
        let p = exponential_curve(1.0, 2.0, 2000).unwrap();
        assert!((p.eval(1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!(p.validate_p0().is_valid());
        assert!(exponential_curve(0.0, 1.0, 10).is_err());
    }
}
