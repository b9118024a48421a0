//! Diffusion coefficients, initial laws, transition densities and the change
//! of variables `Y(x, t) = int_0^x dz / sigma(z, t)` to unit volatility.

use std::fmt;
use std::sync::Arc;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::analytic::{norm_cdf, norm_pdf};
use crate::boundary::Boundary;
use crate::error::{domain, input, Error, Result};
use crate::grid::{forward_operator, SpaceGrid, ThetaStepper};

pub type CoefficientFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiffusionKind {
    Brownian,
    BrownianDrift { mu: f64, sigma: f64 },
    Custom,
}

/// `dX = mu(X, t) dt + sigma(X, t) dW`.
#[derive(Clone)]
pub struct DiffusionSpec {
    kind: DiffusionKind,
    drift: CoefficientFn,
    vol: CoefficientFn,
    vol_lower_bound: f64,
    bound_m: f64,
    time_homogeneous: bool,
}

impl fmt::Debug for DiffusionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionSpec")
            .field("kind", &self.kind)
            .field("vol_lower_bound", &self.vol_lower_bound)
            .field("bound_m", &self.bound_m)
            .field("time_homogeneous", &self.time_homogeneous)
            .finish()
    }
}

impl DiffusionSpec {
    pub fn brownian() -> Self {
        Self {
            kind: DiffusionKind::Brownian,
            drift: Arc::new(|_, _| 0.0),
            vol: Arc::new(|_, _| 1.0),
            vol_lower_bound: 1.0,
            bound_m: 0.0,
            time_homogeneous: true,
        }
    }

    pub fn brownian_drift(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
            return domain(format!("invalid drift {mu} or volatility {sigma}"));
        }
        Ok(Self {
            kind: DiffusionKind::BrownianDrift { mu, sigma },
            drift: Arc::new(move |_, _| mu),
            vol: Arc::new(move |_, _| sigma),
            vol_lower_bound: sigma,
            bound_m: mu.abs(),
            time_homogeneous: true,
        })
    }

    /// General coefficients. `vol_lower_bound` must be a positive lower
    /// bound for `sigma`; `bound_m` bounds `|mu| + |mu_x|` and is only
    /// reported.
    pub fn custom(
        drift: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        vol: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        vol_lower_bound: f64,
        bound_m: f64,
        time_homogeneous: bool,
    ) -> Result<Self> {
        if !(vol_lower_bound > 0.0) {
            return domain(format!(
                "volatility lower bound must be positive, got {vol_lower_bound}"
            ));
        }
        Ok(Self {
            kind: DiffusionKind::Custom,
            drift: Arc::new(drift),
            vol: Arc::new(vol),
            vol_lower_bound,
            bound_m,
            time_homogeneous,
        })
    }

    pub fn kind(&self) -> DiffusionKind {
        self.kind
    }

    #[inline]
    pub fn drift(&self, x: f64, t: f64) -> f64 {
        (self.drift)(x, t)
    }

    #[inline]
    pub fn vol(&self, x: f64, t: f64) -> f64 {
        (self.vol)(x, t)
    }

    pub fn vol_lower_bound(&self) -> f64 {
        self.vol_lower_bound
    }

    pub fn bound_m(&self) -> f64 {
        self.bound_m
    }

    pub fn is_time_homogeneous(&self) -> bool {
        self.time_homogeneous
    }

    /// `(mu, sigma)` when both coefficients are constants.
    pub fn constant_coefficients(&self) -> Option<(f64, f64)> {
        match self.kind {
            DiffusionKind::Brownian => Some((0.0, 1.0)),
            DiffusionKind::BrownianDrift { mu, sigma } => Some((mu, sigma)),
            DiffusionKind::Custom => None,
        }
    }

    /// Checks finiteness and the volatility lower bound on a set of nodes.
    pub fn validate_on(&self, xs: &[f64], ts: &[f64]) -> Result<()> {
        for &t in ts {
            for &x in xs {
                let s = self.vol(x, t);
                let m = self.drift(x, t);
                if !s.is_finite() || !m.is_finite() {
                    return Err(Error::Coefficient(format!(
                        "non-finite coefficient at ({x}, {t}): mu = {m}, sigma = {s}"
                    )));
                }
                if s < self.vol_lower_bound * (1.0 - 1e-12) {
                    return Err(Error::Coefficient(format!(
                        "sigma({x}, {t}) = {s} is below the declared lower bound {}",
                        self.vol_lower_bound
                    )));
                }
            }
        }
        Ok(())
    }

    /// Largest sampled `sigma` on `[lo, hi] x [0, horizon]`.
    pub fn vol_max_on(&self, lo: f64, hi: f64, horizon: f64) -> Result<f64> {
        if let Some((_, s)) = self.constant_coefficients() {
            return Ok(s);
        }
        let mut best = 0.0f64;
        for i in 0..=8 {
            let t = horizon * i as f64 / 8.0;
            for k in 0..=400 {
                let x = lo + (hi - lo) * k as f64 / 400.0;
                let s = self.vol(x, t);
                if !s.is_finite() {
                    return Err(Error::Coefficient(format!("sigma({x}, {t}) = {s}")));
                }
                best = best.max(s);
            }
            if self.time_homogeneous {
                break;
            }
        }
        Ok(best)
    }
}

/// A coefficient available by name from configuration files.
#[derive(Clone)]
pub struct NamedCoefficient {
    pub function: CoefficientFn,
    /// Lower bound of the function; used when it serves as a volatility.
    pub lower_bound: f64,
    /// Upper bound of `|f| + |f_x|`.
    pub bound: f64,
    pub time_homogeneous: bool,
}

pub fn named_coefficient(name: &str) -> Option<NamedCoefficient> {
    let (function, lower_bound, bound, time_homogeneous): (CoefficientFn, f64, f64, bool) = match name {
        "zero" => (Arc::new(|_, _| 0.0), 0.0, 0.0, true),
        "one" => (Arc::new(|_, _| 1.0), 1.0, 1.0, true),
        "tanh-vol" => (Arc::new(|x: f64, _| 1.0 + 0.5 * x.tanh()), 0.5, 2.0, true),
        "sine-drift" => (Arc::new(|x: f64, _| 0.3 * x.sin()), -0.3, 0.6, true),
        "tanh-reversion" => (Arc::new(|x: f64, _| -x.tanh()), -1.0, 2.0, true),
        "seasonal-vol" => (
            Arc::new(|_, t: f64| 1.0 + 0.25 * (2.0 * std::f64::consts::PI * t).sin()),
            0.75,
            1.25,
            false,
        ),
        _ => return None,
    };
    Some(NamedCoefficient {
        function,
        lower_bound,
        bound,
        time_homogeneous,
    })
}

pub const NAMED_COEFFICIENTS: &[&str] = &[
    "zero",
    "one",
    "tanh-vol",
    "sine-drift",
    "tanh-reversion",
    "seasonal-vol",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialKind {
    PointMass,
    Density,
    Cdf,
}

/// Law of `X_0`, described by its distribution function `p0(x, 0)`.
#[derive(Clone)]
pub struct InitialDistribution {
    kind: InitialKind,
    x0: Option<f64>,
    cdf: ScalarFn,
    density: Option<ScalarFn>,
    quantile: Option<ScalarFn>,
    support: (f64, f64),
}

impl fmt::Debug for InitialDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InitialDistribution")
            .field("kind", &self.kind)
            .field("x0", &self.x0)
            .field("support", &self.support)
            .finish()
    }
}

impl InitialDistribution {
    pub fn point_mass(x0: f64) -> Result<Self> {
        if !x0.is_finite() {
            return domain(format!("start point must be finite, got {x0}"));
        }
        Ok(Self {
            kind: InitialKind::PointMass,
            x0: Some(x0),
            cdf: Arc::new(move |x| if x >= x0 { 1.0 } else { 0.0 }),
            density: None,
            quantile: Some(Arc::new(move |_| x0)),
            support: (x0, x0),
        })
    }

    pub fn normal(mean: f64, sd: f64) -> Result<Self> {
        let law = Normal::new(mean, sd).map_err(|e| Error::Domain(e.to_string()))?;
        let q = law;
        Ok(Self {
            kind: InitialKind::Density,
            x0: None,
            cdf: Arc::new(move |x| norm_cdf((x - mean) / sd)),
            density: Some(Arc::new(move |x| norm_pdf((x - mean) / sd) / sd)),
            quantile: Some(Arc::new(move |u| q.inverse_cdf(u))),
            support: (f64::NEG_INFINITY, f64::INFINITY),
        })
    }

    /// Law with density `f` supported in `[lo, hi]`. The distribution
    /// function is tabulated by Simpson's rule on 2^14 intervals.
    pub fn from_density(f: impl Fn(f64) -> f64 + Send + Sync + 'static, lo: f64, hi: f64) -> Result<Self> {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return domain(format!("invalid support [{lo}, {hi}]"));
        }
        let m = 1usize << 14;
        let h = (hi - lo) / m as f64;
        let vals: Vec<f64> = (0..=m).map(|k| f(lo + k as f64 * h)).collect();
        if let Some(k) = vals.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return input(format!("density is negative or non-finite at x = {}", lo + k as f64 * h));
        }
        // Cumulative integral at even nodes by Simpson, odd nodes by the
        // trapezoid refinement of the last panel.
        let mut cum = vec![0.0; m + 1];
        for k in (2..=m).step_by(2) {
            cum[k] = cum[k - 2] + h / 3.0 * (vals[k - 2] + 4.0 * vals[k - 1] + vals[k]);
            cum[k - 1] = cum[k - 2] + 0.5 * h * (vals[k - 2] + vals[k - 1]);
        }
        let total = cum[m];
        if (total - 1.0).abs() > 1e-8 {
            return input(format!("density integrates to {total}, not 1"));
        }
        let table = Arc::new(cum);
        let t2 = Arc::clone(&table);
        let f = Arc::new(f);
        Ok(Self {
            kind: InitialKind::Density,
            x0: None,
            cdf: Arc::new(move |x| {
                if x <= lo {
                    return 0.0;
                }
                if x >= hi {
                    return 1.0;
                }
                let s = (x - lo) / h;
                let k = (s.floor() as usize).min(m - 1);
                let r = s - k as f64;
                (t2[k] + r * (t2[k + 1] - t2[k])).clamp(0.0, 1.0)
            }),
            density: Some(Arc::new(move |x| if x < lo || x > hi { 0.0 } else { f(x) })),
            quantile: None,
            support: (lo, hi),
        })
    }

    /// Law given by its distribution function, with effective support
    /// `[lo, hi]` used for bracketing quantiles.
    pub fn from_cdf(cdf: impl Fn(f64) -> f64 + Send + Sync + 'static, lo: f64, hi: f64) -> Result<Self> {
        if !(hi > lo) {
            return domain(format!("invalid support [{lo}, {hi}]"));
        }
        let cdf: ScalarFn = Arc::new(cdf);
        let mut prev = 0.0;
        for k in 0..=1000 {
            let v = cdf(lo + (hi - lo) * k as f64 / 1000.0);
            if !(0.0..=1.0).contains(&v) || v < prev - 1e-12 {
                return input(format!("distribution function is not a CDF near sample {k}"));
            }
            prev = v;
        }
        let c2 = Arc::clone(&cdf);
        let h = 1e-6 * (hi - lo);
        Ok(Self {
            kind: InitialKind::Cdf,
            x0: None,
            cdf,
            density: Some(Arc::new(move |x| ((c2(x + h) - c2(x - h)) / (2.0 * h)).max(0.0))),
            quantile: None,
            support: (lo, hi),
        })
    }

    pub fn kind(&self) -> InitialKind {
        self.kind
    }

    pub fn point(&self) -> Option<f64> {
        self.x0
    }

    pub fn cdf(&self, x: f64) -> f64 {
        (self.cdf)(x)
    }

    pub fn density(&self, x: f64) -> Option<f64> {
        self.density.as_ref().map(|f| f(x))
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return domain(format!("quantile level {u} outside [0, 1]"));
        }
        if let Some(q) = &self.quantile {
            return Ok(q(u));
        }
        let (mut lo, mut hi) = self.support;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-13 * (1.0 + mid.abs()) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// `inf { x : p0(x, 0) > 0 }`.
    pub fn lower_edge(&self) -> f64 {
        match self.kind {
            InitialKind::PointMass => self.x0.unwrap(),
            _ => {
                if self.support.0 == f64::NEG_INFINITY {
                    return f64::NEG_INFINITY;
                }
                let (mut lo, mut hi) = self.support;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.cdf(mid) > 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                lo
            }
        }
    }

    /// Density and distribution function at the PDE start time. A point
    /// mass is replaced by the transition density after `warmup`; other
    /// laws start at `t = 0`.
    pub fn regularized(&self, spec: &DiffusionSpec, warmup: f64) -> Result<RegularizedStart> {
        match self.kind {
            InitialKind::PointMass => {
                if !(warmup > 0.0) {
                    return domain("a point-mass start needs a positive warm-up time");
                }
                let x0 = self.x0.unwrap();
                let (mean, sd) = match TransitionDensity::for_spec(spec) {
                    TransitionDensity::Gaussian { mu, sigma } => (x0 + mu * warmup, sigma * warmup.sqrt()),
                    TransitionDensity::Numerical(_) => (
                        x0 + spec.drift(x0, 0.0) * warmup,
                        spec.vol(x0, 0.0) * warmup.sqrt(),
                    ),
                };
                Ok(RegularizedStart {
                    t_start: warmup,
                    density: Arc::new(move |x| norm_pdf((x - mean) / sd) / sd),
                    cdf: Arc::new(move |x| norm_cdf((x - mean) / sd)),
                })
            }
            _ => Ok(RegularizedStart {
                t_start: 0.0,
                density: self.density.clone().unwrap(),
                cdf: Arc::clone(&self.cdf),
            }),
        }
    }
}

/// Initial data for the PDE solvers.
#[derive(Clone)]
pub struct RegularizedStart {
    pub t_start: f64,
    pub density: ScalarFn,
    pub cdf: ScalarFn,
}

/// `rho(y, s; x, t)`: closed form for constant coefficients, otherwise a
/// numerical propagation of a narrow Gaussian by the forward equation.
#[derive(Debug, Clone)]
pub enum TransitionDensity {
    Gaussian { mu: f64, sigma: f64 },
    Numerical(DiffusionSpec),
}

/// A density tabulated on a uniform grid.
#[derive(Debug, Clone)]
pub struct TabulatedDensity {
    pub grid: SpaceGrid,
    pub values: Vec<f64>,
}

impl TabulatedDensity {
    pub fn eval(&self, x: f64) -> f64 {
        let s = (x - self.grid.x_min) / self.grid.dx;
        if s < 0.0 || s > (self.grid.nx - 1) as f64 {
            return 0.0;
        }
        let k = (s.floor() as usize).min(self.grid.nx - 2);
        let r = s - k as f64;
        self.values[k] + r * (self.values[k + 1] - self.values[k])
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.values)
    }
}

impl TransitionDensity {
    pub fn for_spec(spec: &DiffusionSpec) -> Self {
        match spec.constant_coefficients() {
            Some((mu, sigma)) => Self::Gaussian { mu, sigma },
            None => Self::Numerical(spec.clone()),
        }
    }

    pub fn density(&self, y: f64, s: f64, x: f64, t: f64) -> Result<f64> {
        if !(t > s) {
            return domain(format!("transition density needs s < t, got s={s}, t={t}"));
        }
        match self {
            Self::Gaussian { mu, sigma } => {
                let sd = sigma * (t - s).sqrt();
                Ok(norm_pdf((x - y - mu * (t - s)) / sd) / sd)
            }
            Self::Numerical(_) => Ok(self.propagate(y, s, t, 801)?.eval(x)),
        }
    }

    /// `F(y, s; x, t) = P(X_t <= x | X_s = y)`.
    pub fn cdf(&self, y: f64, s: f64, x: f64, t: f64) -> Result<f64> {
        if !(t > s) {
            return domain(format!("transition law needs s < t, got s={s}, t={t}"));
        }
        match self {
            Self::Gaussian { mu, sigma } => {
                let sd = sigma * (t - s).sqrt();
                Ok(norm_cdf((x - y - mu * (t - s)) / sd))
            }
            Self::Numerical(_) => {
                let tab = self.propagate(y, s, t, 801)?;
                let mut tail = Vec::new();
                tab.grid.tail_integral(&tab.values, &mut tail);
                let total = tail[0];
                let s = ((x - tab.grid.x_min) / tab.grid.dx).clamp(0.0, (tab.grid.nx - 1) as f64);
                let k = (s.floor() as usize).min(tab.grid.nx - 2);
                let r = s - k as f64;
                let above = tail[k] + r * (tail[k + 1] - tail[k]);
                Ok((1.0 - above / total).clamp(0.0, 1.0))
            }
        }
    }

    /// The density of `X_t` given `X_s = y` on a grid of `nx` nodes
    /// covering eight local standard deviations (plus drift) each side.
    pub fn propagate(&self, y: f64, s: f64, t: f64, nx: usize) -> Result<TabulatedDensity> {
        let tau = t - s;
        if !(tau > 0.0) {
            return domain(format!("propagation needs s < t, got s={s}, t={t}"));
        }
        match self {
            Self::Gaussian { mu, sigma } => {
                let sd = sigma * tau.sqrt();
                let centre = y + mu * tau;
                let grid = SpaceGrid::new(centre - 10.0 * sd, centre + 10.0 * sd, nx)?;
                let values = grid.xs().iter().map(|&x| norm_pdf((x - centre) / sd) / sd).collect();
                Ok(TabulatedDensity { grid, values })
            }
            Self::Numerical(spec) => {
                let smax = spec.vol_max_on(y - 10.0, y + 10.0, t)?;
                let reach = 10.0 * smax * tau.sqrt() + spec.bound_m() * tau;
                let grid = SpaceGrid::new(y - reach, y + reach, nx)?;
                // Start from the local Gaussian after a short warm-up.
                let h0 = (tau * 1e-3).min(1e-4);
                let (m0, s0) = (spec.drift(y, s), spec.vol(y, s));
                let sd0 = s0 * h0.sqrt();
                let c0 = y + m0 * h0;
                let mut u: Vec<f64> = grid
                    .xs()
                    .iter()
                    .map(|&x| norm_pdf((x - c0) / sd0) / sd0)
                    .collect();
                let mass = grid.integrate(&u);
                if mass > 0.0 {
                    u.iter_mut().for_each(|v| *v /= mass);
                }
                u[0] = 0.0;
                u[nx - 1] = 0.0;
                let steps = 400usize;
                let mut stepper = ThetaStepper::new();
                let mut tc = s + h0;
                let dt = (t - tc) / steps as f64;
                for k in 0..steps {
                    let tn = tc + dt;
                    let old = forward_operator(spec, &grid, tc)?;
                    let new = forward_operator(spec, &grid, tn)?;
                    if k < 4 {
                        // Damped start: two implicit half steps.
                        let mid = forward_operator(spec, &grid, tc + 0.5 * dt)?;
                        stepper.step(&old, &mid, &mut u, 0.5 * dt, 1.0, 0.0, 0.0, &[])?;
                        stepper.step(&mid, &new, &mut u, 0.5 * dt, 1.0, 0.0, 0.0, &[])?;
                    } else {
                        stepper.step(&old, &new, &mut u, dt, 0.5, 0.0, 0.0, &[])?;
                    }
                    tc = tn;
                }
                Ok(TabulatedDensity { grid, values: u })
            }
        }
    }
}

/// Change of variables to unit volatility:
/// `Y(x, t) = int_0^x dz / sigma(z, t)` with drift
/// `mu~(y, t) = -int_0^x sigma_t / sigma^2 dz + mu / sigma - sigma_x / 2`
/// at `x = X(y, t)`.
#[derive(Debug, Clone)]
pub struct UnitDiffusionTransform {
    spec: DiffusionSpec,
    step: f64,
}

pub fn make_unit_transform(spec: &DiffusionSpec, quadrature_step: f64) -> Result<UnitDiffusionTransform> {
    if !(quadrature_step > 0.0) {
        return domain(format!("quadrature step must be positive, got {quadrature_step}"));
    }
    for &t in &[0.0, 0.5, 1.0] {
        for k in -20..=20 {
            let x = k as f64 * 0.5;
            let s = spec.vol(x, t);
            if !s.is_finite() || s <= 0.0 {
                return Err(Error::Coefficient(format!("sigma({x}, {t}) = {s}")));
            }
        }
    }
    Ok(UnitDiffusionTransform {
        spec: spec.clone(),
        step: quadrature_step,
    })
}

impl UnitDiffusionTransform {
    pub fn spec(&self) -> &DiffusionSpec {
        &self.spec
    }

    /// Composite Simpson of `g` on `[0, x]` with panels no wider than the
    /// quadrature step.
    fn simpson(&self, x: f64, g: impl Fn(f64) -> Result<f64>) -> Result<f64> {
        if x == 0.0 {
            return Ok(0.0);
        }
        let mut m = (x.abs() / self.step).ceil() as usize;
        m = m.max(2);
        if m % 2 == 1 {
            m += 1;
        }
        let h = x / m as f64;
        let mut acc = g(0.0)? + g(x)?;
        for k in 1..m {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * g(k as f64 * h)?;
        }
        Ok(acc * h / 3.0)
    }

    fn sigma(&self, x: f64, t: f64) -> Result<f64> {
        let s = self.spec.vol(x, t);
        if !s.is_finite() || s <= 0.0 {
            return Err(Error::Coefficient(format!("sigma({x}, {t}) = {s}")));
        }
        Ok(s)
    }

    pub fn forward(&self, x: f64, t: f64) -> Result<f64> {
        if x == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        if let Some((_, s)) = self.spec.constant_coefficients() {
            return Ok(x / s);
        }
        self.simpson(x, |z| Ok(1.0 / self.sigma(z, t)?))
    }

    /// `X(y, t)`: Newton on `Y(., t) = y` safeguarded by bisection, to
    /// `1e-12`.
    pub fn inverse(&self, y: f64, t: f64) -> Result<f64> {
        if y == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        if let Some((_, s)) = self.spec.constant_coefficients() {
            return Ok(y * s);
        }
        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
        let mut grow = 0;
        while self.forward(lo, t)? > y {
            lo *= 2.0;
            grow += 1;
            if grow > 60 {
                return domain(format!("cannot bracket X({y}, {t})"));
            }
        }
        while self.forward(hi, t)? < y {
            hi *= 2.0;
            grow += 1;
            if grow > 120 {
                return domain(format!("cannot bracket X({y}, {t})"));
            }
        }
        let mut x = y * self.sigma(0.0, t)?;
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        for _ in 0..200 {
            let g = self.forward(x, t)? - y;
            if g > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let newton = x - g * self.sigma(x, t)?;
            let next = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - x).abs() <= 1e-12 * (1.0 + x.abs()) || hi - lo <= 1e-12 {
                return Ok(next);
            }
            x = next;
        }
        Ok(x)
    }

    fn sigma_t(&self, x: f64, t: f64) -> Result<f64> {
        if self.spec.is_time_homogeneous() {
            return Ok(0.0);
        }
        let h = self.step;
        if t >= h {
            Ok((self.sigma(x, t + h)? - self.sigma(x, t - h)?) / (2.0 * h))
        } else {
            Ok((self.sigma(x, t + h)? - self.sigma(x, t)?) / h)
        }
    }

    fn sigma_x(&self, x: f64, t: f64) -> Result<f64> {
        let h = self.step;
        Ok((self.sigma(x + h, t)? - self.sigma(x - h, t)?) / (2.0 * h))
    }

    /// `Y_t(x, t) = -int_0^x sigma_t / sigma^2 dz`.
    pub fn forward_time_derivative(&self, x: f64, t: f64) -> Result<f64> {
        if self.spec.is_time_homogeneous() {
            return Ok(0.0);
        }
        let i = self.simpson(x, |z| {
            let s = self.sigma(z, t)?;
            Ok(self.sigma_t(z, t)? / (s * s))
        })?;
        Ok(-i)
    }

    pub fn transformed_drift(&self, y: f64, t: f64) -> Result<f64> {
        let x = self.inverse(y, t)?;
        let s = self.sigma(x, t)?;
        Ok(self.forward_time_derivative(x, t)? + self.spec.drift(x, t) / s - 0.5 * self.sigma_x(x, t)?)
    }

    /// The unit-volatility diffusion for `Y_t = Y(X_t, t)`.
    pub fn transformed_spec(&self) -> DiffusionSpec {
        if let Some((mu, s)) = self.spec.constant_coefficients() {
            return DiffusionSpec::brownian_drift(mu / s, 1.0).unwrap();
        }
        let me = self.clone();
        DiffusionSpec {
            kind: DiffusionKind::Custom,
            drift: Arc::new(move |y, t| me.transformed_drift(y, t).unwrap_or(f64::NAN)),
            vol: Arc::new(|_, _| 1.0),
            vol_lower_bound: 1.0,
            bound_m: f64::NAN,
            time_homogeneous: self.spec.time_homogeneous,
        }
    }

    /// Law of `Y(X_0, 0)`.
    pub fn transform_initial(&self, init: &InitialDistribution) -> Result<InitialDistribution> {
        match init.kind() {
            InitialKind::PointMass => InitialDistribution::point_mass(self.forward(init.point().unwrap(), 0.0)?),
            _ => {
                let me = self.clone();
                let src = init.clone();
                let lo = self.forward(init.quantile(1e-12)?, 0.0)?;
                let hi = self.forward(init.quantile(1.0 - 1e-12)?, 0.0)?;
                InitialDistribution::from_cdf(
                    move |y| src.cdf(me.inverse(y, 0.0).unwrap_or(f64::NAN)),
                    lo,
                    hi,
                )
            }
        }
    }
}

/// `t -> Y(b(t), t)`, with `-inf` preserved.
pub fn transform_boundary(transform: &UnitDiffusionTransform, b: &Boundary) -> Result<Boundary> {
    let tr = transform.clone();
    b.map_values(
        Arc::new(move |v, t| {
            if v == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                tr.forward(v, t).unwrap_or(f64::NAN)
            }
        }),
        transform.spec.is_time_homogeneous(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tanh_spec() -> DiffusionSpec {
        DiffusionSpec::custom(|_, _| 0.0, |x: f64, _| 1.0 + 0.5 * x.tanh(), 0.5, 0.0, true).unwrap()
    }

    #[test]
    fn identity_and_scaling_transforms() {
        let id = make_unit_transform(&DiffusionSpec::brownian(), 1e-3).unwrap();
        assert_eq!(id.forward(1.7, 0.3).unwrap(), 1.7);
        assert_eq!(id.transformed_drift(0.4, 0.0).unwrap(), 0.0);
        let two = DiffusionSpec::brownian_drift(0.0, 2.0).unwrap();
        let tr = make_unit_transform(&two, 1e-3).unwrap();
        assert_eq!(tr.forward(1.0, 0.0).unwrap(), 0.5);
        assert_eq!(tr.transformed_drift(0.3, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn quadrature_matches_closed_form() {
        // int_0^x dz / (1 + z^2 / 4) = 2 atan(x / 2)
        let spec = DiffusionSpec::custom(|_, _| 0.0, |x: f64, _| 1.0 + 0.25 * x * x, 1.0, 0.0, true).unwrap();
        let tr = make_unit_transform(&spec, 1e-3).unwrap();
        for &x in &[-3.0, -0.5, 0.25, 2.0] {
            let exact = 2.0 * (x / 2.0f64).atan();
            assert!((tr.forward(x, 0.0).unwrap() - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_on_a_grid() {
        let tr = make_unit_transform(&tanh_spec(), 1e-3).unwrap();
        for k in -40..=40 {
            let x = k as f64 * 0.1;
            let y = tr.forward(x, 0.0).unwrap();
            assert!((tr.inverse(y, 0.0).unwrap() - x).abs() < 1e-10, "x={x}");
        }
    }

    #[test]
    fn drift_formula_on_state_dependent_vol() {
        // For sigma(x) = 1 + x^2/4 and mu = 0: mu~ = -sigma_x / 2 = -x / 4.
        let spec = DiffusionSpec::custom(|_, _| 0.0, |x: f64, _| 1.0 + 0.25 * x * x, 1.0, 0.0, true).unwrap();
        let tr = make_unit_transform(&spec, 1e-3).unwrap();
        for &x in &[-1.0, 0.5, 2.0] {
            let y = tr.forward(x, 0.0).unwrap();
            assert!((tr.transformed_drift(y, 0.0).unwrap() + 0.25 * x).abs() < 1e-6);
        }
    }

    #[test]
    fn time_dependent_vol_term() {
        // sigma(t) = 1 + t: Y = x / (1 + t), Y_t = -x / (1 + t)^2.
        let spec = DiffusionSpec::custom(|_, _| 0.0, |_, t| 1.0 + t, 1.0, 0.0, false).unwrap();
        let tr = make_unit_transform(&spec, 1e-3).unwrap();
        let (x, t) = (1.5, 0.5);
        let yt = tr.forward_time_derivative(x, t).unwrap();
        assert!((yt + x / (1.0 + t).powi(2)).abs() < 1e-6);
    }

    #[test]
    fn non_finite_vol_is_a_coefficient_error() {
        let spec = DiffusionSpec::custom(|_, _| 0.0, |x: f64, _| if x > 3.0 { f64::NAN } else { 1.0 }, 1.0, 0.0, true).unwrap();
        assert!(matches!(make_unit_transform(&spec, 1e-3), Err(Error::Coefficient(_))));
    }

    #[test]
    fn brownian_kernel() {
        let k = TransitionDensity::for_spec(&DiffusionSpec::brownian());
        let v = k.density(0.3, 0.1, 1.0, 0.6).unwrap();
        let exact = (-(0.7f64 * 0.7) / (2.0 * 0.5)).exp() / (2.0 * std::f64::consts::PI * 0.5).sqrt();
        assert!((v - exact).abs() < 1e-12);
        assert!(k.density(0.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn numerical_kernel_is_a_density() {
        let k = TransitionDensity::for_spec(&tanh_spec());
        let tab = k.propagate(0.2, 0.0, 0.5, 801).unwrap();
        assert!((tab.mass() - 1.0).abs() < 1e-6, "{}", tab.mass());
        assert!(tab.values.iter().all(|&v| v >= -1e-14));
    }

    #[test]
    fn initial_laws() {
        let pm = InitialDistribution::point_mass(1.0).unwrap();
        assert_eq!(pm.lower_edge(), 1.0);
        assert_eq!(pm.quantile(0.3).unwrap(), 1.0);
        let n = InitialDistribution::normal(0.5, 2.0).unwrap();
        assert!((n.quantile(0.5).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(n.lower_edge(), f64::NEG_INFINITY);
        let u = InitialDistribution::from_density(|_| 1.0, 0.5, 1.5).unwrap();
        assert!((u.cdf(1.0) - 0.5).abs() < 1e-12);
        assert!((u.quantile(0.25).unwrap() - 0.75).abs() < 1e-9);
        assert!((u.lower_edge() - 0.5).abs() < 1e-9);
        assert!(InitialDistribution::from_density(|_| 2.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn transform_boundary_examples() {
        let two = DiffusionSpec::brownian_drift(0.0, 2.0).unwrap();
        let tr = make_unit_transform(&two, 1e-3).unwrap();
        let b = transform_boundary(&tr, &Boundary::constant(1.0, 1.0).unwrap()).unwrap();
        assert_eq!(b.value(0.5).unwrap(), 0.5);
        let m = transform_boundary(&tr, &Boundary::neg_infinity(1.0).unwrap()).unwrap();
        assert_eq!(m.value(0.7).unwrap(), f64::NEG_INFINITY);
        let id = make_unit_transform(&DiffusionSpec::brownian(), 1e-3).unwrap();
        let src = Boundary::piecewise_linear(vec![0.0, 1.0], vec![0.2, -0.4], 1.0).unwrap();
        let same = transform_boundary(&id, &src).unwrap();
        for k in 0..=20 {
            let t = k as f64 / 20.0;
            assert_eq!(same.value(t).unwrap(), src.value(t).unwrap());
        }
    }
}
