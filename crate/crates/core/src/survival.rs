//! Survival curves `p(t) = P(no crossing before t)` and the checks that
//! admit them as targets for the inverse problem.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain, input, Error, Result};

/// Tolerance used by [`SurvivalCurve::validate_p0`].
pub const P0_TOLERANCE: f64 = 1e-12;

/// Monotonicity violations smaller than this are repaired when a curve is
/// read from CSV; larger ones are rejected.
pub const CSV_REPAIR_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CurveInterpolation {
    #[default]
    Linear,
    LogLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ClosedForm {
    Exponential { rate: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    times: Vec<f64>,
    values: Vec<f64>,
    interpolation: CurveInterpolation,
    closed_form: Option<ClosedForm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    InitialValue,
    Positivity,
    AboveOne,
    Monotonicity,
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub index: usize,
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct P0Report {
    pub violations: Vec<Violation>,
}

impl P0Report {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            return Ok(());
        }
        let msgs: Vec<String> = self
            .violations
            .iter()
            .take(5)
            .map(|v| format!("[{}] {}", v.index, v.message))
            .collect();
        input(format!(
            "survival curve is not admissible ({} violations): {}",
            self.violations.len(),
            msgs.join("; ")
        ))
    }
}

impl SurvivalCurve {
    /// Builds a curve from samples. Times must start at 0 and increase
    /// strictly; values are not checked here, see [`Self::validate_p0`].
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Format("survival curve has no samples".into()));
        }
        if times.len() != values.len() {
            return input(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            ));
        }
        if times[0] != 0.0 {
            return input(format!("first sample must be at t = 0, got {}", times[0]));
        }
        if let Some(k) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return input(format!("sample times not strictly increasing at index {}", k + 1));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return input(format!("non-finite survival value at index {k}"));
        }
        Ok(Self {
            times,
            values,
            interpolation: CurveInterpolation::Linear,
            closed_form: None,
        })
    }

    pub fn from_fn(times: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = times.iter().map(|&t| f(t)).collect();
        Self::new(times, values)
    }

    pub fn with_interpolation(mut self, interpolation: CurveInterpolation) -> Self {
        self.interpolation = interpolation;
        self
    }

    pub fn set_closed_form(&mut self, closed_form: ClosedForm) {
        self.closed_form = Some(closed_form);
    }

    pub fn closed_form(&self) -> Option<ClosedForm> {
        self.closed_form
    }

    pub fn interpolation(&self) -> CurveInterpolation {
        self.interpolation
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Interpolated value. Within a segment the result never leaves the
    /// interval spanned by its two end samples.
    pub fn eval(&self, t: f64) -> Result<f64> {
        let n = self.times.len();
        if !(t >= 0.0) || t > self.horizon() {
            return domain(format!("t = {t} outside [0, {}]", self.horizon()));
        }
        if n == 1 {
            return Ok(self.values[0]);
        }
        let j = match self.times.binary_search_by(|s| s.partial_cmp(&t).unwrap()) {
            Ok(j) => return Ok(self.values[j]),
            Err(j) => j - 1,
        };
        let (t0, t1) = (self.times[j], self.times[j + 1]);
        let (p0, p1) = (self.values[j], self.values[j + 1]);
        let s = (t - t0) / (t1 - t0);
        let v = match self.interpolation {
            CurveInterpolation::LogLinear if p0 > 0.0 && p1 > 0.0 => p0 * (p1 / p0).powf(s),
            _ => p0 + (p1 - p0) * s,
        };
        Ok(v.clamp(p0.min(p1), p0.max(p1)))
    }

    /// Checks membership in the admissible class: `p(0) = 1`, `0 < p <= 1`
    /// and nonincreasing, all within [`P0_TOLERANCE`].
    pub fn validate_p0(&self) -> P0Report {
        let mut report = P0Report::default();
        if self.times.len() < 2 {
            report.violations.push(Violation {
                index: 0,
                kind: ViolationKind::InitialValue,
                message: "need at least two samples".into(),
            });
            return report;
        }
        if (self.values[0] - 1.0).abs() > P0_TOLERANCE {
            report.violations.push(Violation {
                index: 0,
                kind: ViolationKind::InitialValue,
                message: format!("p(0) != 1 (p(0) = {})", self.values[0]),
            });
        }
        for (j, &p) in self.values.iter().enumerate() {
            if !(p > 0.0) {
                report.violations.push(Violation {
                    index: j,
                    kind: ViolationKind::Positivity,
                    message: format!("p({}) = {p} is not positive", self.times[j]),
                });
            }
            if p > 1.0 + P0_TOLERANCE {
                report.violations.push(Violation {
                    index: j,
                    kind: ViolationKind::AboveOne,
                    message: format!("p({}) = {p} exceeds 1", self.times[j]),
                });
            }
        }
        for j in 1..self.values.len() {
            if self.values[j] > self.values[j - 1] + P0_TOLERANCE {
                report.violations.push(Violation {
                    index: j,
                    kind: ViolationKind::Monotonicity,
                    message: format!(
                        "p increases from {} to {} at t = {}",
                        self.values[j - 1],
                        self.values[j],
                        self.times[j]
                    ),
                });
            }
        }
        report
    }

    /// `L(p, T1, T2) = inf over T1 <= s < t <= T2 of (p(s) - p(t)) / (t - s)`.
    ///
    /// For the piecewise-linear interpolant this is the smallest segment
    /// slope magnitude over the segments meeting the window; for log-linear
    /// segments the slope magnitude is smallest at the right end.
    pub fn decrease_rate(&self, t1: f64, t2: f64) -> Result<f64> {
        if !(t1 >= 0.0) || !(t2 > t1) || t2 > self.horizon() * (1.0 + 1e-12) {
            return domain(format!(
                "degenerate window [{t1}, {t2}] for horizon {}",
                self.horizon()
            ));
        }
        if let Some(ClosedForm::Exponential { rate }) = self.closed_form {
            return Ok(rate * (-rate * t2).exp());
        }
        let mut best = f64::INFINITY;
        for j in 0..self.times.len() - 1 {
            let (a, b) = (self.times[j], self.times[j + 1]);
            if b <= t1 || a >= t2 {
                continue;
            }
            let (p0, p1) = (self.values[j], self.values[j + 1]);
            let rate = match self.interpolation {
                CurveInterpolation::LogLinear if p0 > 0.0 && p1 > 0.0 => {
                    let k = (p0 / p1).ln() / (b - a);
                    let right = b.min(t2);
                    k * p0 * (-k * (right - a)).exp()
                }
                _ => (p0 - p1) / (b - a),
            };
            best = best.min(rate);
        }
        Ok(best)
    }

    /// Restricts the curve to `[0, horizon]`, adding an interpolated end
    /// sample when the horizon falls between samples.
    pub fn truncate(&self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return domain(format!("horizon must be positive, got {horizon}"));
        }
        if horizon >= self.horizon() {
            return Ok(self.clone());
        }
        let end = self.eval(horizon)?;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (&t, &p) in self.times.iter().zip(&self.values) {
            if t < horizon {
                times.push(t);
                values.push(p);
            }
        }
        times.push(horizon);
        values.push(end);
        let mut out = Self::new(times, values)?.with_interpolation(self.interpolation);
        out.closed_form = self.closed_form;
        Ok(out)
    }

    /// Clamps to `[0, 1]` and replaces each value by the running minimum.
    /// Returns the repaired curve and the largest correction applied.
    pub fn isotonic_repair(&self) -> (Self, f64) {
        let mut out = self.clone();
        let mut worst = 0.0f64;
        let mut running = f64::INFINITY;
        for v in out.values.iter_mut() {
            let clamped = v.clamp(0.0, 1.0).min(running);
            worst = worst.max((*v - clamped).abs());
            *v = clamped;
            running = clamped;
        }
        out.closed_form = None;
        (out, worst)
    }

    pub fn read_csv<R: Read>(reader: R, horizon: Option<f64>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || headers[0].trim() != "t" || headers[1].trim() != "p" {
            return Err(Error::Format(format!(
                "survival CSV header must be `t,p`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| {
                    Error::Format(format!("row {}: cannot parse `{s}`: {e}", line + 2))
                })
            };
            times.push(parse(&rec[0])?);
            values.push(parse(&rec[1])?);
        }
        let mut curve = Self::new(times, values)?;
        if let Some(h) = horizon {
            curve = curve.truncate(h)?;
        }
        let (repaired, worst) = curve.isotonic_repair();
        if worst >= CSV_REPAIR_TOLERANCE {
            return input(format!(
                "survival CSV violates monotonicity or [0,1] bounds by {worst:e}"
            ));
        }
        Ok(repaired)
    }

    pub fn read_csv_path(path: impl AsRef<Path>, horizon: Option<f64>) -> Result<Self> {
        let f = std::fs::File::open(path.as_ref())?;
        Self::read_csv(f, horizon)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "p"])?;
        for (t, p) in self.times.iter().zip(&self.values) {
            w.write_record([format!("{t}"), format!("{p}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Largest absolute difference to `other`, evaluated at the samples of
    /// both curves that lie in `[from, to]`.
    pub fn sup_distance(&self, other: &Self, from: f64, to: f64) -> Result<(f64, f64)> {
        let to = to.min(self.horizon()).min(other.horizon());
        let mut best = (0.0, from);
        for &t in self.times.iter().chain(other.times.iter()) {
            if t < from || t > to {
                continue;
            }
            let d = (self.eval(t)? - other.eval(t)?).abs();
            if d > best.0 {
                best = (d, t);
            }
        }
        Ok(best)
    }
}
