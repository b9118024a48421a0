//! Barriers `b: [0, T] -> [-inf, inf)`, their upper semicontinuous
//! envelopes, and dyadic landmark points.
//!
//! `-inf` is represented by `f64::NEG_INFINITY`; it lies below every grid.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffusion::{DiffusionSpec, InitialDistribution};
use crate::error::{domain, input, Error, Result};
use crate::mc::{estimate_survival, McOptions};

pub type BoundaryFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Base level for landmark hierarchies of knot-based barriers. All levels up
/// to this one are read off a single base computation, which is what makes
/// separately requested levels nest exactly.
const KNOT_BASE_LEVEL: u32 = 20;
const MAX_BASE_CELLS: f64 = (1u64 << 21) as f64;
/// Extra dyadic levels used when sampling a callable barrier.
const CALLABLE_OVERSAMPLING: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    #[default]
    Linear,
    /// `b(t) = b_i` on `[t_i, t_{i+1})`.
    ConstantLeft,
}

impl std::str::FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "constant-left" => Ok(Self::ConstantLeft),
            other => Err(Error::Config(format!(
                "unknown interpolation `{other}` (expected linear or constant-left)"
            ))),
        }
    }
}

#[derive(Clone)]
enum Shape {
    Constant(f64),
    Knots {
        t: Vec<f64>,
        b: Vec<f64>,
        interp: Interpolation,
    },
    Callable(BoundaryFn),
}

#[derive(Clone)]
pub struct Boundary {
    shape: Shape,
    horizon: f64,
    /// Open intervals on which the barrier is `-inf`.
    neg_inf_mask: Vec<(f64, f64)>,
    /// Isolated point values overriding the base representation.
    point_values: Vec<(f64, f64)>,
}

impl fmt::Debug for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let shape = match &self.shape {
            Shape::Constant(c) => format!("Constant({c})"),
            Shape::Knots { t, interp, .. } => format!("Knots({} knots, {interp:?})", t.len()),
            Shape::Callable(_) => "Callable".to_string(),
        };
        f.debug_struct("Boundary")
            .field("shape", &shape)
            .field("horizon", &self.horizon)
            .field("neg_inf_mask", &self.neg_inf_mask)
            .field("point_values", &self.point_values)
            .finish()
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return domain(format!("horizon must be positive and finite, got {horizon}"));
    }
    Ok(())
}

fn check_value(v: f64) -> Result<()> {
    if v.is_nan() || v == f64::INFINITY {
        return input(format!("barrier value {v} is not in [-inf, inf)"));
    }
    Ok(())
}

impl Boundary {
    pub fn constant(value: f64, horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        check_value(value)?;
        Ok(Self {
            shape: Shape::Constant(value),
            horizon,
            neg_inf_mask: Vec::new(),
            point_values: Vec::new(),
        })
    }

    pub fn neg_infinity(horizon: f64) -> Result<Self> {
        Self::constant(f64::NEG_INFINITY, horizon)
    }

    /// Barrier given by knots. Outside the knot range the first/last value
    /// is extended. On a linear segment with a `-inf` end the open segment
    /// is `-inf`.
    pub fn from_knots(
        times: Vec<f64>,
        values: Vec<f64>,
        interp: Interpolation,
        horizon: f64,
    ) -> Result<Self> {
        check_horizon(horizon)?;
        if times.is_empty() || times.len() != values.len() {
            return input(format!(
                "need matching non-empty knot arrays, got {} times and {} values",
                times.len(),
                values.len()
            ));
        }
        if let Some(k) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return input(format!("knot times not strictly increasing at index {}", k + 1));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return input("knot times must be finite");
        }
        for &v in &values {
            check_value(v)?;
        }
        Ok(Self {
            shape: Shape::Knots {
                t: times,
                b: values,
                interp,
            },
            horizon,
            neg_inf_mask: Vec::new(),
            point_values: Vec::new(),
        })
    }

    pub fn piecewise_linear(times: Vec<f64>, values: Vec<f64>, horizon: f64) -> Result<Self> {
        Self::from_knots(times, values, Interpolation::Linear, horizon)
    }

    pub fn piecewise_constant(times: Vec<f64>, values: Vec<f64>, horizon: f64) -> Result<Self> {
        Self::from_knots(times, values, Interpolation::ConstantLeft, horizon)
    }

    /// A black-box barrier. It is assumed continuous wherever it is finite;
    /// landmarks sample it on a dyadic grid.
    pub fn callable(f: impl Fn(f64) -> f64 + Send + Sync + 'static, horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        Ok(Self {
            shape: Shape::Callable(Arc::new(f)),
            horizon,
            neg_inf_mask: Vec::new(),
            point_values: Vec::new(),
        })
    }

    /// Sets `b = -inf` on the open interval `(from, to)`.
    pub fn with_neg_infinity_on(mut self, from: f64, to: f64) -> Result<Self> {
        if !(to > from) {
            return input(format!("empty mask interval ({from}, {to})"));
        }
        self.neg_inf_mask.push((from, to));
        Ok(self)
    }

    /// Overrides the value at the single time `t`.
    pub fn with_point_value(mut self, t: f64, value: f64) -> Result<Self> {
        check_value(value)?;
        if !(t > 0.0 && t <= self.horizon) {
            return domain(format!("point override at {t} outside (0, {}]", self.horizon));
        }
        self.point_values.retain(|&(s, _)| s != t);
        self.point_values.push((t, value));
        self.point_values
            .sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Ok(self)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn is_constant(&self) -> Option<f64> {
        match self.shape {
            Shape::Constant(c) if self.neg_inf_mask.is_empty() && self.point_values.is_empty() => {
                Some(c)
            }
            _ => None,
        }
    }

    pub fn is_callable(&self) -> bool {
        matches!(self.shape, Shape::Callable(_))
    }

    /// Knot times and values, when the barrier is knot based.
    pub fn knots(&self) -> Option<(&[f64], &[f64], Interpolation)> {
        match &self.shape {
            Shape::Knots { t, b, interp } => Some((t, b, *interp)),
            _ => None,
        }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0) || t > self.horizon {
            return domain(format!("t = {t} outside (0, {}]", self.horizon));
        }
        Ok(())
    }

    fn masked_open(&self, t: f64) -> bool {
        self.neg_inf_mask.iter().any(|&(a, c)| a < t && t < c)
    }

    fn masked_left(&self, t: f64) -> bool {
        self.neg_inf_mask.iter().any(|&(a, c)| a < t && t <= c)
    }

    fn masked_right(&self, t: f64) -> bool {
        self.neg_inf_mask.iter().any(|&(a, c)| a <= t && t < c)
    }

    fn point_value(&self, t: f64) -> Option<f64> {
        self.point_values
            .iter()
            .find(|&&(s, _)| s == t)
            .map(|&(_, v)| v)
    }

    fn base_value(&self, t: f64) -> f64 {
        match &self.shape {
            Shape::Constant(c) => *c,
            Shape::Callable(f) => f(t),
            Shape::Knots { t: ts, b, interp } => knot_value(ts, b, *interp, t),
        }
    }

    fn base_left(&self, t: f64) -> f64 {
        match &self.shape {
            Shape::Constant(c) => *c,
            Shape::Callable(f) => f(t),
            Shape::Knots { t: ts, b, interp } => knot_left(ts, b, *interp, t),
        }
    }

    fn base_right(&self, t: f64) -> f64 {
        match &self.shape {
            Shape::Constant(c) => *c,
            Shape::Callable(f) => f(t),
            Shape::Knots { t: ts, b, interp } => knot_right(ts, b, *interp, t),
        }
    }

    fn raw_value(&self, t: f64) -> f64 {
        if let Some(v) = self.point_value(t) {
            return v;
        }
        if self.masked_open(t) {
            return f64::NEG_INFINITY;
        }
        self.base_value(t)
    }

    fn raw_left(&self, t: f64) -> f64 {
        if self.masked_left(t) {
            f64::NEG_INFINITY
        } else {
            self.base_left(t)
        }
    }

    fn raw_right(&self, t: f64) -> f64 {
        if self.masked_right(t) {
            f64::NEG_INFINITY
        } else {
            self.base_right(t)
        }
    }

    /// `b(t)`; at `t = 0` this is `limsup_{s -> 0+} b(s)`.
    pub fn value(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        if t == 0.0 {
            return Ok(self.raw_right(0.0));
        }
        Ok(self.raw_value(t))
    }

    /// `b*(t) = max(b(t), limsup_{s -> t} b(s))`.
    pub fn usc_envelope(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.envelope_unchecked(t))
    }

    fn envelope_unchecked(&self, t: f64) -> f64 {
        if t == 0.0 {
            return self.raw_right(0.0);
        }
        let mut v = self.raw_value(t).max(self.raw_left(t));
        if t < self.horizon {
            v = v.max(self.raw_right(t));
        }
        v
    }

    /// `b*_-(t) = limsup_{s -> t-} b(s)`.
    pub fn left_limsup(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        if t == 0.0 {
            return domain("left limit at t = 0 is undefined");
        }
        Ok(self.raw_left(t))
    }

    /// `b*(0) = limsup_{s -> 0+} b(s)`.
    pub fn limsup_at_zero(&self) -> f64 {
        self.raw_right(0.0)
    }

    /// The barrier `t -> b*(t)` as a new boundary. Knot representations
    /// become point-override sets at the knots, so the result is exact.
    pub fn envelope(&self) -> Boundary {
        let mut out = self.clone();
        let mut points: Vec<f64> = self.point_values.iter().map(|p| p.0).collect();
        if let Shape::Knots { t, .. } = &self.shape {
            points.extend(t.iter().copied());
        }
        for &(a, c) in &self.neg_inf_mask {
            points.push(a);
            points.push(c);
        }
        points.retain(|&t| t > 0.0 && t <= self.horizon);
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        points.dedup();
        out.point_values = points
            .into_iter()
            .map(|t| (t, self.envelope_unchecked(t)))
            .collect();
        out
    }

    /// Smallest and largest finite values taken on `[0, T]`, or `None` when
    /// the barrier is `-inf` throughout.
    pub fn finite_range(&self) -> Option<(f64, f64)> {
        let mut vals: Vec<f64> = match &self.shape {
            Shape::Constant(c) => vec![*c],
            Shape::Knots { t, b, .. } => {
                let mut v: Vec<f64> = t
                    .iter()
                    .zip(b)
                    .filter(|(&s, _)| s <= self.horizon)
                    .map(|(_, &x)| x)
                    .collect();
                v.push(self.raw_value(self.horizon));
                v.push(self.raw_right(0.0));
                v
            }
            Shape::Callable(f) => (0..=4096)
                .map(|k| f(self.horizon * k as f64 / 4096.0))
                .collect(),
        };
        vals.extend(self.point_values.iter().map(|p| p.1));
        let finite: Vec<f64> = vals.into_iter().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            return None;
        }
        let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Some((lo, hi))
    }

    pub fn is_neg_infinity_everywhere(&self) -> bool {
        self.finite_range().is_none()
    }

    /// Knot-based view of the barrier used for landmark computation.
    fn landmark_base(&self, max_level: u32) -> (Boundary, u32) {
        match &self.shape {
            Shape::Callable(f) => {
                let level = max_level + CALLABLE_OVERSAMPLING;
                let h = (-(level as f64)).exp2();
                let cells = (self.horizon / h).ceil() as usize;
                let mut ts: Vec<f64> = (0..cells).map(|i| i as f64 * h).collect();
                ts.push(self.horizon);
                let bs: Vec<f64> = ts.iter().map(|&t| f(t)).collect();
                let mut out = self.clone();
                out.shape = Shape::Knots {
                    t: ts,
                    b: bs,
                    interp: Interpolation::Linear,
                };
                (out, level)
            }
            _ => {
                let cap = (MAX_BASE_CELLS / self.horizon).log2().floor().max(0.0) as u32;
                (self.clone(), max_level.max(KNOT_BASE_LEVEL.min(cap)))
            }
        }
    }

    /// Landmark sets for all levels `0..=max_level`, read off one base
    /// computation so that nesting is exact.
    pub fn landmark_hierarchy(&self, max_level: u32) -> LandmarkHierarchy {
        if let Some(c) = self.is_constant() {
            let levels = (0..=max_level)
                .map(|n| {
                    let cells = cell_count(self.horizon, n);
                    let h = (-(n as f64)).exp2();
                    LandmarkSet {
                        level: n,
                        points: (0..cells)
                            .map(|i| Landmark {
                                index: i,
                                t: i as f64 * h,
                                bstar: c,
                                cell_sup: c,
                            })
                            .collect(),
                    }
                })
                .collect();
            return LandmarkHierarchy { levels };
        }
        let (base, base_level) = self.landmark_base(max_level);
        let mut current = base.base_landmarks(base_level);
        let mut levels = Vec::with_capacity(max_level as usize + 1);
        if base_level == max_level {
            levels.push(current.clone());
        }
        for n in (0..base_level).rev() {
            let cells = cell_count(self.horizon, n);
            let mut points = Vec::with_capacity(cells);
            for i in 0..cells {
                let left = &current.points[2 * i];
                let pick = match current.points.get(2 * i + 1) {
                    None => left.clone(),
                    Some(right) => {
                        let sup = left.cell_sup.max(right.cell_sup);
                        let chosen = if left.bstar >= sup { left } else { right };
                        Landmark {
                            index: i,
                            t: chosen.t,
                            bstar: chosen.bstar,
                            cell_sup: sup,
                        }
                    }
                };
                points.push(Landmark { index: i, ..pick });
            }
            current = LandmarkSet { level: n, points };
            if n <= max_level {
                levels.push(current.clone());
            }
        }
        levels.reverse();
        LandmarkHierarchy { levels }
    }

    /// `LM_n(b)`: per dyadic cell `[i 2^-n, (i+1) 2^-n]`, the first time the
    /// envelope reaches the supremum of `b` over the cell.
    pub fn landmarks(&self, level: u32) -> LandmarkSet {
        self.landmark_hierarchy(level).levels.pop().unwrap()
    }

    /// Exact landmark computation on a knot/constant representation.
    fn base_landmarks(&self, level: u32) -> LandmarkSet {
        let h = (-(level as f64)).exp2();
        let cells = cell_count(self.horizon, level);
        let mut extra: Vec<f64> = Vec::new();
        if let Shape::Knots { t, .. } = &self.shape {
            extra.extend(t.iter().copied());
        }
        extra.extend(self.point_values.iter().map(|p| p.0));
        for &(a, c) in &self.neg_inf_mask {
            extra.push(a);
            extra.push(c);
        }
        extra.retain(|&t| t > 0.0 && t < self.horizon);
        extra.sort_by(|a, b| a.partial_cmp(b).unwrap());
        extra.dedup();

        let mut points = Vec::with_capacity(cells);
        let mut cursor = 0usize;
        let mut candidates: Vec<f64> = Vec::new();
        for i in 0..cells {
            let a = i as f64 * h;
            let c = ((i + 1) as f64 * h).min(self.horizon);
            candidates.clear();
            candidates.push(a);
            while cursor < extra.len() && extra[cursor] <= a {
                cursor += 1;
            }
            let mut k = cursor;
            while k < extra.len() && extra[k] < c {
                candidates.push(extra[k]);
                k += 1;
            }
            candidates.push(c);
            let value_at = |t: f64| {
                if t == 0.0 {
                    self.raw_right(0.0)
                } else {
                    self.raw_value(t)
                }
            };
            let sup = candidates
                .iter()
                .map(|&t| value_at(t))
                .fold(f64::NEG_INFINITY, f64::max);
            let mut chosen = (c, self.envelope_unchecked(c));
            for &t in &candidates {
                let e = self.envelope_unchecked(t);
                if e >= sup {
                    chosen = (t, e);
                    break;
                }
            }
            points.push(Landmark {
                index: i,
                t: chosen.0,
                bstar: chosen.1,
                cell_sup: sup,
            });
        }
        LandmarkSet { level, points }
    }

    /// Applies `f(value, t)` pointwise. With `time_free` set, `f` must not
    /// depend on `t` and constant/step shapes stay exact; otherwise the
    /// result is a callable.
    pub fn map_values(
        &self,
        f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
        time_free: bool,
    ) -> Result<Boundary> {
        let mut out = self.clone();
        out.point_values = self
            .point_values
            .iter()
            .map(|&(t, v)| (t, f(v, t)))
            .collect();
        match &self.shape {
            Shape::Constant(c) if time_free => {
                let v = f(*c, 0.0);
                check_value(v)?;
                out.shape = Shape::Constant(v);
            }
            Shape::Knots {
                t,
                b,
                interp: Interpolation::ConstantLeft,
            } if time_free => {
                let mapped: Vec<f64> = t.iter().zip(b).map(|(&s, &v)| f(v, s)).collect();
                for &v in &mapped {
                    check_value(v)?;
                }
                out.shape = Shape::Knots {
                    t: t.clone(),
                    b: mapped,
                    interp: Interpolation::ConstantLeft,
                };
            }
            _ => {
                let mut inner = self.clone();
                inner.point_values.clear();
                out.shape = Shape::Callable(Arc::new(move |t| {
                    let v = if t == 0.0 {
                        inner.raw_right(0.0)
                    } else {
                        inner.raw_value(t)
                    };
                    f(v, t)
                }));
            }
        }
        Ok(out)
    }

    pub fn read_csv<R: Read>(reader: R, interp: Interpolation, horizon: Option<f64>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || headers[0].trim() != "t" || headers[1].trim() != "b" {
            return Err(Error::Format(format!(
                "boundary CSV header must be `t,b`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut ts = Vec::new();
        let mut bs = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let t: f64 = rec[0].trim().parse().map_err(|e| {
                Error::Format(format!("row {}: bad time `{}`: {e}", line + 2, &rec[0]))
            })?;
            let raw = rec[1].trim();
            let b = if raw == "-inf" {
                f64::NEG_INFINITY
            } else {
                let v: f64 = raw.parse().map_err(|e| {
                    Error::Format(format!("row {}: bad value `{raw}`: {e}", line + 2))
                })?;
                if !v.is_finite() {
                    return Err(Error::Format(format!(
                        "row {}: use the token `-inf` for minus infinity",
                        line + 2
                    )));
                }
                v
            };
            ts.push(t);
            bs.push(b);
        }
        if ts.is_empty() {
            return Err(Error::Format("boundary CSV has no rows".into()));
        }
        let horizon = horizon.unwrap_or(*ts.last().unwrap());
        Self::from_knots(ts, bs, interp, horizon)
    }

    pub fn read_csv_path(
        path: impl AsRef<Path>,
        interp: Interpolation,
        horizon: Option<f64>,
    ) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path.as_ref())?, interp, horizon)
    }

    /// Writes `t,b` rows at the knots, or at `samples` when given.
    pub fn write_csv<W: Write>(&self, writer: W, samples: Option<&[f64]>) -> Result<()> {
        let owned: Vec<f64>;
        let times: &[f64] = match (samples, &self.shape) {
            (Some(s), _) => s,
            (None, Shape::Knots { t, .. }) => t,
            (None, _) => {
                owned = (0..=1000).map(|k| self.horizon * k as f64 / 1000.0).collect();
                &owned
            }
        };
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "b"])?;
        for &t in times {
            let b = self.value(t)?;
            w.write_record([format!("{t}"), format_extended(b)])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn format_extended(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

fn cell_count(horizon: f64, level: u32) -> usize {
    (horizon * level_scale(level)).ceil().max(1.0) as usize
}

fn level_scale(level: u32) -> f64 {
    (level as f64).exp2()
}

/// Index `j` with `t_j <= t < t_{j+1}`; `None` if `t < t_0`.
fn segment_right(ts: &[f64], t: f64) -> Option<usize> {
    match ts.binary_search_by(|s| s.partial_cmp(&t).unwrap()) {
        Ok(j) => Some(j),
        Err(0) => None,
        Err(j) => Some(j - 1),
    }
}

/// Index `j` with `t_j < t <= t_{j+1}`; `None` if `t <= t_0`.
fn segment_left(ts: &[f64], t: f64) -> Option<usize> {
    match ts.binary_search_by(|s| s.partial_cmp(&t).unwrap()) {
        Ok(0) | Err(0) => None,
        Ok(j) | Err(j) => Some(j - 1),
    }
}

fn lerp_segment(ts: &[f64], b: &[f64], j: usize, t: f64) -> f64 {
    let (b0, b1) = (b[j], b[j + 1]);
    if b0 == f64::NEG_INFINITY || b1 == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if t == ts[j + 1] {
        return b1;
    }
    let s = (t - ts[j]) / (ts[j + 1] - ts[j]);
    (b0 + (b1 - b0) * s).clamp(b0.min(b1), b0.max(b1))
}

fn knot_value(ts: &[f64], b: &[f64], interp: Interpolation, t: f64) -> f64 {
    let n = ts.len();
    match segment_right(ts, t) {
        None => b[0],
        Some(j) if j + 1 >= n => b[n - 1],
        Some(j) => match interp {
            Interpolation::ConstantLeft => b[j],
            Interpolation::Linear if t == ts[j] => b[j],
            Interpolation::Linear => lerp_segment(ts, b, j, t),
        },
    }
}

fn knot_left(ts: &[f64], b: &[f64], interp: Interpolation, t: f64) -> f64 {
    let n = ts.len();
    match segment_left(ts, t) {
        None => b[0],
        Some(j) if j + 1 >= n => b[n - 1],
        Some(j) => match interp {
            Interpolation::ConstantLeft => b[j],
            Interpolation::Linear => lerp_segment(ts, b, j, t),
        },
    }
}

fn knot_right(ts: &[f64], b: &[f64], interp: Interpolation, t: f64) -> f64 {
    let n = ts.len();
    match segment_right(ts, t) {
        None => b[0],
        Some(j) if j + 1 >= n => b[n - 1],
        Some(j) => match interp {
            Interpolation::ConstantLeft => b[j],
            Interpolation::Linear => {
                if t == ts[j] && (b[j] == f64::NEG_INFINITY || b[j + 1] == f64::NEG_INFINITY) {
                    f64::NEG_INFINITY
                } else if t == ts[j] {
                    b[j]
                } else {
                    lerp_segment(ts, b, j, t)
                }
            }
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Landmark {
    /// Cell index `i` of `[i 2^-n, (i+1) 2^-n]`.
    pub index: usize,
    pub t: f64,
    /// `b*(t)` at the landmark.
    pub bstar: f64,
    /// Supremum of `b` over the cell.
    pub cell_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LandmarkSet {
    pub level: u32,
    pub points: Vec<Landmark>,
}

impl LandmarkSet {
    pub fn width(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    pub fn times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.points.iter().map(|p| p.t).collect();
        t.dedup();
        t
    }

    /// Landmarks grouped by time. Two adjacent cells may share a landmark
    /// (the common endpoint); it is reported once.
    pub fn distinct(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(self.points.len());
        for p in &self.points {
            match out.last_mut() {
                Some(last) if last.0 == p.t => last.1 = last.1.max(p.bstar),
                _ => out.push((p.t, p.bstar)),
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["n", "i", "t", "bstar"])?;
        for p in &self.points {
            w.write_record([
                self.level.to_string(),
                p.index.to_string(),
                format!("{}", p.t),
                format_extended(p.bstar),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LandmarkHierarchy {
    levels: Vec<LandmarkSet>,
}

impl LandmarkHierarchy {
    pub fn level(&self, n: u32) -> Option<&LandmarkSet> {
        self.levels.get(n as usize)
    }

    pub fn max_level(&self) -> u32 {
        self.levels.len() as u32 - 1
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeMismatch {
    pub t: f64,
    pub b: f64,
    pub bstar: f64,
    pub bstar_left: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EarlyCrossing {
    pub epsilon: f64,
    pub mass: f64,
    pub ci_half_width: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct B0Report {
    /// `b = b* = b*_-` at every probed time.
    pub envelope_regular: bool,
    pub mismatches: Vec<EnvelopeMismatch>,
    pub start_limsup: f64,
    pub start_lower_edge: f64,
    /// `b*(0)` lies strictly below the lower edge of the initial law.
    pub starts_above: bool,
    pub early_crossing: Vec<EarlyCrossing>,
    pub consistent_with_b0: bool,
    pub label: String,
}

/// Sampled necessary conditions for membership in the admissible barrier
/// class. A positive answer reads "consistent with B0"; nothing is proved.
pub fn check_b0(b: &Boundary, spec: &DiffusionSpec, init: &InitialDistribution) -> B0Report {
    let mut probes: Vec<f64> = (1..=1024).map(|k| b.horizon * k as f64 / 1024.0).collect();
    if let Shape::Knots { t, .. } = &b.shape {
        probes.extend(t.iter().copied().filter(|&s| s > 0.0 && s <= b.horizon));
    }
    probes.extend(b.point_values.iter().map(|p| p.0));
    for &(a, c) in &b.neg_inf_mask {
        probes.extend([a, c].into_iter().filter(|&s| s > 0.0 && s <= b.horizon));
    }
    probes.sort_by(|x, y| x.partial_cmp(y).unwrap());
    probes.dedup();

    let same = |x: f64, y: f64| x == y || (x - y).abs() <= 1e-12 * (1.0 + x.abs());
    let mut mismatches = Vec::new();
    for &t in &probes {
        let v = b.raw_value(t);
        let up = b.envelope_unchecked(t);
        let left = b.raw_left(t);
        if !(same(v, up) && same(v, left)) {
            mismatches.push(EnvelopeMismatch {
                t,
                b: v,
                bstar: up,
                bstar_left: left,
            });
        }
    }

    let start_limsup = b.limsup_at_zero();
    let start_lower_edge = init.lower_edge();
    let starts_above = start_limsup == f64::NEG_INFINITY || start_limsup < start_lower_edge;

    let mut early_crossing = Vec::new();
    for &eps in &[1e-2, 1e-3] {
        if eps >= b.horizon {
            continue;
        }
        let opts = McOptions {
            n_paths: 10_000,
            dt: eps / 100.0,
            seed: 0x005e_edb0,
            bridge: false,
            horizon: eps,
        };
        if let Ok(est) = estimate_survival(spec, init, b, &opts) {
            let j = est.times.len() - 1;
            early_crossing.push(EarlyCrossing {
                epsilon: eps,
                mass: 1.0 - est.p_hat[j],
                ci_half_width: est.ci_half_width[j],
            });
        }
    }

    let envelope_regular = mismatches.is_empty();
    let consistent_with_b0 = envelope_regular && starts_above;
    B0Report {
        envelope_regular,
        mismatches,
        start_limsup,
        start_lower_edge,
        starts_above,
        early_crossing,
        consistent_with_b0,
        label: if consistent_with_b0 {
            "consistent with B0".into()
        } else {
            "not consistent with B0".into()
        },
    }
}
