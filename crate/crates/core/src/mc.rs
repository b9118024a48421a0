//! Euler-Maruyama Monte Carlo estimates of survival curves, with optional
//! Brownian-bridge crossing correction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::boundary::Boundary;
use crate::diffusion::{DiffusionSpec, InitialDistribution};
use crate::error::{input, Error, Result};
use crate::survival::SurvivalCurve;

/// Two-sided 99% normal quantile.
const Z99: f64 = 2.575_829_303_548_901;
const CHUNK: usize = 8192;

#[derive(Debug, Clone, Serialize)]
pub struct McOptions {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub bridge: bool,
    pub horizon: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossingEstimate {
    pub times: Vec<f64>,
    /// Survival under the non-strict rule `X <= b` kills.
    pub p_hat: Vec<f64>,
    /// Survival under the strict rule `X < b` kills.
    pub p_hat_strict: Vec<f64>,
    /// 99% half-width for `p_hat`.
    pub ci_half_width: Vec<f64>,
    pub n_paths: usize,
    pub dt: f64,
    pub bridge: bool,
    /// Paths on which the strict and non-strict rules disagree.
    pub disagreements: u64,
    /// Whether `p_hat` is nonincreasing (reported, never enforced).
    pub monotone: bool,
}

impl CrossingEstimate {
    pub fn curve(&self) -> Result<SurvivalCurve> {
        SurvivalCurve::new(self.times.clone(), self.p_hat.clone())
    }

    pub fn index_of(&self, t: f64) -> usize {
        let k = (t / self.dt).round() as usize;
        k.min(self.times.len() - 1)
    }
}

#[derive(Clone)]
struct Sums {
    ns: Vec<f64>,
    ns_sq: Vec<f64>,
    st: Vec<f64>,
    disagreements: u64,
}

impl Sums {
    fn zeros(n: usize) -> Self {
        Self {
            ns: vec![0.0; n],
            ns_sq: vec![0.0; n],
            st: vec![0.0; n],
            disagreements: 0,
        }
    }

    fn add(mut self, other: &Sums) -> Self {
        for k in 0..self.ns.len() {
            self.ns[k] += other.ns[k];
            self.ns_sq[k] += other.ns_sq[k];
            self.st[k] += other.st[k];
        }
        self.disagreements += other.disagreements;
        self
    }
}

/// Pairwise combination in index order.
fn pairwise(mut parts: Vec<Sums>) -> Sums {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(a.add(&b)),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop().unwrap()
}

pub fn estimate_survival(
    spec: &DiffusionSpec,
    init: &InitialDistribution,
    b: &Boundary,
    opts: &McOptions,
) -> Result<CrossingEstimate> {
    if opts.n_paths < 1000 {
        return input(format!("need at least 1000 paths, got {}", opts.n_paths));
    }
    if !(opts.horizon > 0.0) || opts.horizon > b.horizon() * (1.0 + 1e-12) {
        return input(format!(
            "horizon {} must be positive and within the barrier horizon {}",
            opts.horizon,
            b.horizon()
        ));
    }
    if !(opts.dt > 0.0) || opts.dt > opts.horizon / 100.0 * (1.0 + 1e-9) {
        return input(format!(
            "time step {} must be at most horizon / 100 = {}",
            opts.dt,
            opts.horizon / 100.0
        ));
    }
    let steps = (opts.horizon / opts.dt).round().max(1.0) as usize;
    let dt = opts.horizon / steps as f64;
    let times: Vec<f64> = (0..=steps)
        .map(|k| if k == steps { opts.horizon } else { k as f64 * dt })
        .collect();
    let mut bvals = Vec::with_capacity(steps + 1);
    for &t in &times {
        bvals.push(b.value(t.min(b.horizon()))?);
    }
    let consts = spec.constant_coefficients();
    let sqdt = dt.sqrt();
    let x_start = init.point();

    let chunks = opts.n_paths.div_ceil(CHUNK);
    let parts: Vec<Result<Sums>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut sums = Sums::zeros(steps + 1);
            let first = c * CHUNK;
            let last = ((c + 1) * CHUNK).min(opts.n_paths);
            for path in first..last {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(path as u64);
                let mut x = match x_start {
                    Some(x0) => x0,
                    None => {
                        let u = ((rng.random::<u64>() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
                        init.quantile(u)?
                    }
                };
                let mut weight = 1.0f64;
                let mut alive_ns = true;
                let mut alive_st = true;
                let mut disagreed = false;
                sums.ns[0] += 1.0;
                sums.ns_sq[0] += 1.0;
                sums.st[0] += 1.0;
                for k in 0..steps {
                    let t = times[k];
                    let (mu, sigma) = match consts {
                        Some(c) => c,
                        None => (spec.drift(x, t), spec.vol(x, t)),
                    };
                    let z: f64 = rng.sample(StandardNormal);
                    let xn = x + mu * dt + sigma * sqdt * z;
                    if !xn.is_finite() {
                        return Err(Error::Coefficient(format!(
                            "path {path} blew up at t = {t} (x = {x})"
                        )));
                    }
                    let (b0, b1) = (bvals[k], bvals[k + 1]);
                    if opts.bridge && b0.is_finite() && b1.is_finite() && x > b0 && xn > b1 {
                        let q = (-2.0 * (x - b0) * (xn - b1) / (sigma * sigma * dt)).exp();
                        weight *= 1.0 - q;
                    }
                    if xn <= b1 {
                        alive_ns = false;
                    }
                    if xn < b1 {
                        alive_st = false;
                    }
                    if alive_ns != alive_st {
                        disagreed = true;
                    }
                    if !alive_ns && !alive_st {
                        break;
                    }
                    if alive_ns {
                        sums.ns[k + 1] += weight;
                        sums.ns_sq[k + 1] += weight * weight;
                    }
                    if alive_st {
                        sums.st[k + 1] += weight;
                    }
                    x = xn;
                }
                if disagreed {
                    sums.disagreements += 1;
                }
            }
            Ok(sums)
        })
        .collect();
    let parts: Vec<Sums> = parts.into_iter().collect::<Result<_>>()?;
    let total = pairwise(parts);

    let n = opts.n_paths as f64;
    let p_hat: Vec<f64> = total.ns.iter().map(|s| s / n).collect();
    let p_hat_strict: Vec<f64> = total.st.iter().map(|s| s / n).collect();
    let ci_half_width = total
        .ns
        .iter()
        .zip(&total.ns_sq)
        .map(|(s, q)| {
            let mean = s / n;
            let var = ((q / n - mean * mean) * n / (n - 1.0)).max(0.0);
            Z99 * (var / n).sqrt()
        })
        .collect();
    let monotone = p_hat.windows(2).all(|w| w[1] <= w[0]);
    Ok(CrossingEstimate {
        times,
        p_hat,
        p_hat_strict,
        ci_half_width,
        n_paths: opts.n_paths,
        dt,
        bridge: opts.bridge,
        disagreements: total.disagreements,
        monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(n: usize, bridge: bool) -> McOptions {
        McOptions {
            n_paths: n,
            dt: 1e-2,
            seed: 7,
            bridge,
            horizon: 1.0,
        }
    }

    #[test]
    fn no_barrier_means_certain_survival() {
        let est = estimate_survival(
            &DiffusionSpec::brownian(),
            &InitialDistribution::point_mass(1.0).unwrap(),
            &Boundary::neg_infinity(1.0).unwrap(),
            &opts(2000, true),
        )
        .unwrap();
        assert!(est.p_hat.iter().all(|&p| p == 1.0));
        assert_eq!(est.disagreements, 0);
    }

    #[test]
    fn preconditions() {
        let spec = DiffusionSpec::brownian();
        let init = InitialDistribution::point_mass(1.0).unwrap();
        let b = Boundary::constant(0.0, 1.0).unwrap();
        assert!(estimate_survival(&spec, &init, &b, &opts(10, true)).is_err());
        let mut o = opts(2000, true);
        o.dt = 0.05;
        assert!(estimate_survival(&spec, &init, &b, &o).is_err());
    }

    #[test]
    fn deterministic_for_a_seed() {
        let spec = DiffusionSpec::brownian();
        let init = InitialDistribution::normal(1.0, 0.2).unwrap();
        let b = Boundary::constant(0.0, 1.0).unwrap();
        let a = estimate_survival(&spec, &init, &b, &opts(20_000, true)).unwrap();
        let c = estimate_survival(&spec, &init, &b, &opts(20_000, true)).unwrap();
        assert_eq!(a.p_hat, c.p_hat);
        assert_eq!(a.ci_half_width, c.ci_half_width);
    }
}
