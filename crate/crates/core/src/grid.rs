//! Space-time lattices, the discrete operators `L` (divergence form, acting
//! on `w`) and `L1` (Fokker-Planck form, acting on `U`), and field storage.

use std::io::Write;

use crate::diffusion::{DiffusionSpec, InitialDistribution};
use crate::boundary::Boundary;
use crate::error::{domain, Error, Result};

pub const MIN_NODES: usize = 16;

/// Uniform spatial grid `x_k = x_min + k dx`, `k = 0..nx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceGrid {
    pub x_min: f64,
    pub dx: f64,
    pub nx: usize,
}

impl SpaceGrid {
    pub fn new(x_min: f64, x_max: f64, nx: usize) -> Result<Self> {
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return domain(format!("invalid spatial range [{x_min}, {x_max}]"));
        }
        if nx < MIN_NODES {
            return domain(format!("need at least {MIN_NODES} nodes, got {nx}"));
        }
        Ok(Self {
            x_min,
            dx: (x_max - x_min) / (nx - 1) as f64,
            nx,
        })
    }

    pub fn from_spacing(x_min: f64, dx: f64, nx: usize) -> Result<Self> {
        if !(dx > 0.0) || !x_min.is_finite() {
            return domain(format!("invalid grid origin {x_min} or spacing {dx}"));
        }
        if nx < MIN_NODES {
            return domain(format!("need at least {MIN_NODES} nodes, got {nx}"));
        }
        Ok(Self { x_min, dx, nx })
    }

    #[inline]
    pub fn x(&self, k: usize) -> f64 {
        self.x_min + k as f64 * self.dx
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.nx - 1)
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|k| self.x(k)).collect()
    }

    /// Trapezoid integral of a row.
    pub fn integrate(&self, row: &[f64]) -> f64 {
        let n = row.len();
        let inner: f64 = row[1..n - 1].iter().sum();
        self.dx * (inner + 0.5 * (row[0] + row[n - 1]))
    }

    /// `out[k] = trapezoid integral of row over [x_k, x_max]`.
    pub fn tail_integral(&self, row: &[f64], out: &mut Vec<f64>) {
        let n = row.len();
        out.clear();
        out.resize(n, 0.0);
        let mut acc = 0.0;
        for k in (0..n - 1).rev() {
            acc += 0.5 * self.dx * (row[k] + row[k + 1]);
            out[k] = acc;
        }
    }
}

/// Space grid plus an increasing time grid. `restart[j]` marks times after
/// which the next step is taken with damped (implicit Euler) start-up.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub space: SpaceGrid,
    times: Vec<f64>,
    restart: Vec<bool>,
}

impl Lattice {
    pub fn new(space: SpaceGrid, times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return domain("time grid needs at least two points");
        }
        if let Some(j) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return domain(format!("time grid not strictly increasing at index {}", j + 1));
        }
        if !(times[0] >= 0.0) {
            return domain(format!("time grid starts at {}", times[0]));
        }
        let n = times.len();
        let mut restart = vec![false; n];
        restart[0] = true;
        Ok(Self {
            space,
            times,
            restart,
        })
    }

    /// `t_start`, the multiples of `dt` after it, and `horizon`, with the
    /// extra times inserted exactly. Uniform points closer than `dt / 1000`
    /// to an inserted time are dropped. Inserted times are flagged as
    /// restarts.
    pub fn with_inserted_times(
        space: SpaceGrid,
        t_start: f64,
        horizon: f64,
        dt: f64,
        inserted: &[f64],
    ) -> Result<Self> {
        if !(dt > 0.0) || !(horizon > t_start) {
            return domain(format!(
                "invalid time stepping dt={dt} on [{t_start}, {horizon}]"
            ));
        }
        let mut extra: Vec<f64> = inserted
            .iter()
            .copied()
            .filter(|&t| t > t_start && t < horizon)
            .collect();
        let horizon_inserted = inserted.contains(&horizon);
        extra.sort_by(|a, b| a.partial_cmp(b).unwrap());
        extra.dedup();
        let gap = dt * 1e-3;
        let steps = (horizon / dt + 1e-9).floor() as usize;
        let uniform: Vec<f64> = (1..=steps)
            .map(|k| k as f64 * dt)
            .filter(|&t| t > t_start + gap && t < horizon - gap)
            .collect();

        let mut times = vec![t_start];
        let mut flags = vec![true];
        let (mut i, mut e) = (0, 0);
        while i < uniform.len() || e < extra.len() {
            let take_extra = match (uniform.get(i), extra.get(e)) {
                (Some(&u), Some(&x)) => {
                    if (u - x).abs() < gap {
                        i += 1;
                        true
                    } else {
                        x < u
                    }
                }
                (None, Some(_)) => true,
                _ => false,
            };
            if take_extra {
                times.push(extra[e]);
                flags.push(true);
                e += 1;
            } else {
                let u = uniform[i];
                i += 1;
                if u - times.last().unwrap() < gap {
                    continue;
                }
                times.push(u);
                flags.push(false);
            }
        }
        // The horizon is never merged away, even when an inserted time sits
        // just below it.
        times.push(horizon);
        flags.push(horizon_inserted);
        let mut lattice = Self::new(space, times)?;
        lattice.restart = flags;
        Ok(lattice)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn restart(&self, j: usize) -> bool {
        self.restart[j]
    }

    pub fn set_restart(&mut self, j: usize, on: bool) {
        self.restart[j] = on;
    }

    /// Index of a time that must appear exactly in the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times
            .binary_search_by(|s| s.partial_cmp(&t).unwrap())
            .ok()
    }

    /// Index of the grid time nearest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        match self.times.binary_search_by(|s| s.partial_cmp(&t).unwrap()) {
            Ok(j) => j,
            Err(0) => 0,
            Err(j) if j >= self.times.len() => self.times.len() - 1,
            Err(j) => {
                if t - self.times[j - 1] <= self.times[j] - t {
                    j - 1
                } else {
                    j
                }
            }
        }
    }
}

/// Truncated spatial domain: the initial law's `1e-6` quantiles widened by
/// `8 sigma_max sqrt(T)`, and on the left also reaching below the finite
/// part of the barrier. Nodes are aligned to integer multiples of `dx`.
pub fn truncated_space(
    spec: &DiffusionSpec,
    init: &InitialDistribution,
    barrier: Option<&Boundary>,
    horizon: f64,
    dx: f64,
) -> Result<SpaceGrid> {
    if !(dx > 0.0) {
        return domain(format!("dx must be positive, got {dx}"));
    }
    let q_lo = init.quantile(1e-6)?;
    let q_hi = init.quantile(1.0 - 1e-6)?;
    let sigma_max = spec.vol_max_on(q_lo - 10.0, q_hi + 10.0, horizon)?;
    let spread = 8.0 * sigma_max * horizon.sqrt();
    let mut lo = q_lo;
    if let Some((b_lo, _)) = barrier.and_then(|b| b.finite_range()) {
        lo = lo.min(b_lo);
    }
    let lo = lo - spread;
    let hi = q_hi + spread;
    let i_lo = (lo / dx).floor();
    let i_hi = (hi / dx).ceil();
    let nx = (i_hi - i_lo) as usize + 1;
    SpaceGrid::from_spacing(-((-i_lo) * dx), dx, nx)
}

/// Tridiagonal spatial operator on interior rows `1..nx-1`; rows 0 and
/// `nx - 1` are left zero.
#[derive(Debug, Clone)]
pub struct Tridiag {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiag {
    fn zeros(n: usize) -> Self {
        Self {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `(A u)_k` for interior `k`.
    #[inline]
    pub fn apply_at(&self, u: &[f64], k: usize) -> f64 {
        self.lower[k] * u[k - 1] + self.diag[k] * u[k] + self.upper[k] * u[k + 1]
    }

    /// Interior rows of `A u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        (1..u.len() - 1).map(|k| self.apply_at(u, k)).collect()
    }
}

fn eval_checked(v: f64, what: &str, x: f64, t: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Coefficient(format!("{what}({x}, {t}) = {v}")))
    }
}

/// Spatial part of `L phi = phi_t - (1/2) d/dx(sigma^2 d phi/dx) + mu d phi/dx`
/// with `sigma^2` taken at half nodes.
pub fn backward_operator(spec: &DiffusionSpec, grid: &SpaceGrid, t: f64) -> Result<Tridiag> {
    let n = grid.nx;
    let dx = grid.dx;
    let mut op = Tridiag::zeros(n);
    let mut half = vec![0.0; n - 1];
    for (k, h) in half.iter_mut().enumerate() {
        let xm = grid.x_min + (k as f64 + 0.5) * dx;
        let s = eval_checked(spec.vol(xm, t), "sigma", xm, t)?;
        *h = s * s;
    }
    let inv2 = 1.0 / (dx * dx);
    for k in 1..n - 1 {
        let x = grid.x(k);
        let mu = eval_checked(spec.drift(x, t), "mu", x, t)?;
        let (am, ap) = (half[k - 1], half[k]);
        op.lower[k] = -0.5 * am * inv2 - mu / (2.0 * dx);
        op.diag[k] = 0.5 * (am + ap) * inv2;
        op.upper[k] = -0.5 * ap * inv2 + mu / (2.0 * dx);
    }
    Ok(op)
}

/// Spatial part of `L1 phi = phi_t - (1/2) d2/dx2(sigma^2 phi) + d/dx(mu phi)`.
pub fn forward_operator(spec: &DiffusionSpec, grid: &SpaceGrid, t: f64) -> Result<Tridiag> {
    let n = grid.nx;
    let dx = grid.dx;
    let mut op = Tridiag::zeros(n);
    let mut s2 = vec![0.0; n];
    let mut mu = vec![0.0; n];
    for k in 0..n {
        let x = grid.x(k);
        let s = eval_checked(spec.vol(x, t), "sigma", x, t)?;
        s2[k] = s * s;
        mu[k] = eval_checked(spec.drift(x, t), "mu", x, t)?;
    }
    let inv2 = 1.0 / (dx * dx);
    for k in 1..n - 1 {
        op.lower[k] = -0.5 * s2[k - 1] * inv2 - mu[k - 1] / (2.0 * dx);
        op.diag[k] = s2[k] * inv2;
        op.upper[k] = -0.5 * s2[k + 1] * inv2 + mu[k + 1] / (2.0 * dx);
    }
    Ok(op)
}

/// Spatial part of `L` applied to a row; interior nodes only.
pub fn apply_l(spec: &DiffusionSpec, grid: &SpaceGrid, row: &[f64], t: f64) -> Result<Vec<f64>> {
    check_row(grid, row)?;
    Ok(backward_operator(spec, grid, t)?.apply(row))
}

/// Spatial part of `L1` applied to a row; interior nodes only.
pub fn apply_l1(spec: &DiffusionSpec, grid: &SpaceGrid, row: &[f64], t: f64) -> Result<Vec<f64>> {
    check_row(grid, row)?;
    Ok(forward_operator(spec, grid, t)?.apply(row))
}

fn check_row(grid: &SpaceGrid, row: &[f64]) -> Result<()> {
    if row.len() != grid.nx {
        return domain(format!("row has {} entries, grid has {}", row.len(), grid.nx));
    }
    Ok(())
}

/// Thomas algorithm for `a_i x_{i-1} + b_i x_i + c_i x_{i+1} = d_i`.
/// `a[0]` and `c[n-1]` are ignored. `d` is overwritten with the solution.
pub fn solve_tridiagonal(a: &[f64], b: &[f64], c: &[f64], d: &mut [f64], scratch: &mut Vec<f64>) -> Result<()> {
    let n = d.len();
    scratch.clear();
    scratch.resize(n, 0.0);
    let mut denom = b[0];
    if denom == 0.0 {
        return Err(Error::Scheme("zero pivot in tridiagonal solve".into()));
    }
    scratch[0] = c[0] / denom;
    d[0] /= denom;
    for i in 1..n {
        denom = b[i] - a[i] * scratch[i - 1];
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::Scheme(format!("zero pivot in tridiagonal solve at row {i}")));
        }
        scratch[i] = if i + 1 < n { c[i] / denom } else { 0.0 };
        d[i] = (d[i] - a[i] * d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] -= scratch[i] * d[i + 1];
    }
    Ok(())
}

/// Reusable buffers for theta steps `(I + theta dt A_new) u' = (I - (1-theta) dt A_old) u`
/// with Dirichlet values at both ends.
#[derive(Debug, Default)]
pub struct ThetaStepper {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    rhs: Vec<f64>,
    scratch: Vec<f64>,
}

impl ThetaStepper {
    pub fn new() -> Self {
        Self::default()
    }

    /// One step. `fixed[k]` forces node `k` to zero in the implicit solve
    /// (absorbing nodes); pass an empty slice for none.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        op_old: &Tridiag,
        op_new: &Tridiag,
        u: &mut [f64],
        dt: f64,
        theta: f64,
        left: f64,
        right: f64,
        fixed: &[bool],
    ) -> Result<()> {
        let n = u.len();
        let m = n - 2;
        self.a.clear();
        self.b.clear();
        self.c.clear();
        self.rhs.clear();
        let ex = (1.0 - theta) * dt;
        let im = theta * dt;
        for k in 1..n - 1 {
            let mut r = u[k];
            if ex != 0.0 {
                r -= ex * op_old.apply_at(u, k);
            }
            if !fixed.is_empty() && fixed[k] {
                self.a.push(0.0);
                self.b.push(1.0);
                self.c.push(0.0);
                self.rhs.push(0.0);
                continue;
            }
            let mut lo = im * op_new.lower[k];
            let mut up = im * op_new.upper[k];
            if k == 1 {
                r -= lo * left;
                lo = 0.0;
            }
            if k == n - 2 {
                r -= up * right;
                up = 0.0;
            }
            if !fixed.is_empty() {
                if fixed[k - 1] {
                    lo = 0.0;
                }
                if fixed[k + 1] {
                    up = 0.0;
                }
            }
            self.a.push(lo);
            self.b.push(1.0 + im * op_new.diag[k]);
            self.c.push(up);
            self.rhs.push(r);
        }
        debug_assert_eq!(self.rhs.len(), m);
        solve_tridiagonal(&self.a, &self.b, &self.c, &mut self.rhs, &mut self.scratch)?;
        u[0] = left;
        u[n - 1] = right;
        u[1..n - 1].copy_from_slice(&self.rhs);
        Ok(())
    }
}

/// Operators that are rebuilt per time only for time-dependent coefficients.
pub struct OperatorCache<'a> {
    spec: &'a DiffusionSpec,
    grid: SpaceGrid,
    forward: bool,
    cached: Option<(f64, Tridiag)>,
    fixed: Option<Tridiag>,
}

impl<'a> OperatorCache<'a> {
    pub fn forward(spec: &'a DiffusionSpec, grid: SpaceGrid) -> Self {
        Self {
            spec,
            grid,
            forward: true,
            cached: None,
            fixed: None,
        }
    }

    pub fn backward(spec: &'a DiffusionSpec, grid: SpaceGrid) -> Self {
        Self {
            spec,
            grid,
            forward: false,
            cached: None,
            fixed: None,
        }
    }

    fn build(&self, t: f64) -> Result<Tridiag> {
        if self.forward {
            forward_operator(self.spec, &self.grid, t)
        } else {
            backward_operator(self.spec, &self.grid, t)
        }
    }

    /// Operators at `t_old` and `t_new`.
    pub fn pair(&mut self, t_old: f64, t_new: f64) -> Result<(Tridiag, Tridiag)> {
        if self.spec.is_time_homogeneous() {
            if self.fixed.is_none() {
                self.fixed = Some(self.build(t_new)?);
            }
            let op = self.fixed.as_ref().unwrap().clone();
            return Ok((op.clone(), op));
        }
        let old = match self.cached.take() {
            Some((t, op)) if t == t_old => op,
            _ => self.build(t_old)?,
        };
        let new = self.build(t_new)?;
        self.cached = Some((t_new, new.clone()));
        Ok((old, new))
    }

    /// Same as [`Self::pair`] but borrows the operator for homogeneous
    /// coefficients instead of cloning it.
    pub fn with_pair<R>(
        &mut self,
        t_old: f64,
        t_new: f64,
        f: impl FnOnce(&Tridiag, &Tridiag) -> R,
    ) -> Result<R> {
        if self.spec.is_time_homogeneous() {
            if self.fixed.is_none() {
                self.fixed = Some(self.build(t_new)?);
            }
            let op = self.fixed.as_ref().unwrap();
            return Ok(f(op, op));
        }
        let (old, new) = self.pair(t_old, t_new)?;
        Ok(f(&old, &new))
    }
}

/// Field on a lattice: `values[j][k]` at `(x_k, t_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub space: SpaceGrid,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl Field {
    pub fn new(space: SpaceGrid) -> Self {
        Self {
            space,
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, row: Vec<f64>) {
        self.times.push(t);
        self.values.push(row);
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j]
    }

    pub fn rows(&self) -> usize {
        self.times.len()
    }

    /// CSV matrix: header `t` followed by the x nodes, then one line per
    /// time row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend(self.space.xs().iter().map(|x| format!("{x}")));
        w.write_record(&header)?;
        for (t, row) in self.times.iter().zip(&self.values) {
            let mut rec = vec![format!("{t}")];
            rec.extend(row.iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Samples of `w(x, t) = P(survive to t, X_t > x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalField(pub Field);

/// Samples of the sub-probability density `U(x, t)` of surviving paths.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField(pub Field);

impl SurvivalField {
    pub fn field(&self) -> &Field {
        &self.0
    }

    /// `w(x_min, t_j)` per row.
    pub fn p_row(&self) -> Vec<f64> {
        self.0.values.iter().map(|r| r[0]).collect()
    }

    /// Largest excursion of `w` outside `[0, 1]`.
    pub fn range_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for row in &self.0.values {
            for &v in row {
                worst = worst.max(-v).max(v - 1.0);
            }
        }
        worst
    }

    /// Largest increase of `w` in `x` along any row.
    pub fn monotonicity_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for row in &self.0.values {
            for w in row.windows(2) {
                worst = worst.max(w[1] - w[0]);
            }
        }
        worst
    }
}

impl DensityField {
    pub fn field(&self) -> &Field {
        &self.0
    }

    pub fn mass(&self, j: usize) -> f64 {
        self.0.space.integrate(&self.0.values[j])
    }

    pub fn min_value(&self) -> f64 {
        self.0
            .values
            .iter()
            .flat_map(|r| r.iter())
            .fold(f64::INFINITY, |a, &b| a.min(b))
    }

    /// `w_k = trapezoid integral of U over [x_k, x_max]`, per row.
    pub fn survival_field(&self) -> SurvivalField {
        let mut out = Field::new(self.0.space);
        let mut buf = Vec::new();
        for (t, row) in self.0.times.iter().zip(&self.0.values) {
            self.0.space.tail_integral(row, &mut buf);
            out.push(*t, buf.clone());
        }
        SurvivalField(out)
    }
}
