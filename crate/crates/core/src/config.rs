//! JSON run configuration with explicit defaults. Every report embeds the
//! resolved configuration and its SHA-256.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boundary::Interpolation;
use crate::diffusion::{named_coefficient, DiffusionSpec, InitialDistribution, NAMED_COEFFICIENTS};
use crate::direct::{DirectOptions, KillRule};
use crate::error::{Error, Result};
use crate::inverse::InverseOptions;
use crate::mc::McOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProcessKind {
    #[default]
    Bm,
    BmDrift,
    Custom,
}

/// A constant or the name of a built-in coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Constant(f64),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialConfig {
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DiffusionConfig {
    #[serde(default)]
    pub kind: ProcessKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Coefficient>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Coefficient>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    /// Replaces the point mass at `x0` by a continuous law.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialConfig>,
}

fn constant(c: &Option<Coefficient>, default: f64, what: &str) -> Result<f64> {
    match c {
        None => Ok(default),
        Some(Coefficient::Constant(v)) => Ok(*v),
        Some(Coefficient::Named(n)) => Err(Error::Config(format!(
            "{what} must be a constant for this process kind, got `{n}`"
        ))),
    }
}

struct Resolved {
    f: crate::diffusion::CoefficientFn,
    lower: f64,
    bound: f64,
    homogeneous: bool,
}

fn resolve(c: &Option<Coefficient>, default: f64) -> Result<Resolved> {
    match c {
        None => Ok(Resolved {
            f: std::sync::Arc::new(move |_, _| default),
            lower: default,
            bound: default.abs(),
            homogeneous: true,
        }),
        Some(Coefficient::Constant(v)) => {
            let v = *v;
            Ok(Resolved {
                f: std::sync::Arc::new(move |_, _| v),
                lower: v,
                bound: v.abs(),
                homogeneous: true,
            })
        }
        Some(Coefficient::Named(n)) => {
            let named = named_coefficient(n).ok_or_else(|| {
                Error::Config(format!(
                    "unknown coefficient `{n}`; built-ins are {}",
                    NAMED_COEFFICIENTS.join(", ")
                ))
            })?;
            Ok(Resolved {
                f: named.function,
                lower: named.lower_bound,
                bound: named.bound,
                homogeneous: named.time_homogeneous,
            })
        }
    }
}

impl DiffusionConfig {
    pub fn build(&self) -> Result<(DiffusionSpec, InitialDistribution)> {
        let spec = match self.kind {
            ProcessKind::Bm => {
                let mu = constant(&self.mu, 0.0, "mu")?;
                let sigma = constant(&self.sigma, 1.0, "sigma")?;
                if mu != 0.0 || sigma != 1.0 {
                    return Err(Error::Config(
                        "kind `bm` is standard Brownian motion; use `bm-drift` for other coefficients".into(),
                    ));
                }
                DiffusionSpec::brownian()
            }
            ProcessKind::BmDrift => DiffusionSpec::brownian_drift(
                constant(&self.mu, 0.0, "mu")?,
                constant(&self.sigma, 1.0, "sigma")?,
            )?,
            ProcessKind::Custom => {
                let mu = resolve(&self.mu, 0.0)?;
                let sigma = resolve(&self.sigma, 1.0)?;
                if !(sigma.lower > 0.0) {
                    return Err(Error::Config("sigma must be bounded below by a positive constant".into()));
                }
                let (fm, fs) = (mu.f, sigma.f);
                DiffusionSpec::custom(
                    move |x, t| fm(x, t),
                    move |x, t| fs(x, t),
                    sigma.lower,
                    mu.bound,
                    mu.homogeneous && sigma.homogeneous,
                )?
            }
        };
        let init = match (&self.initial, self.x0) {
            (Some(InitialConfig::Normal { mean, sd }), _) => InitialDistribution::normal(*mean, *sd)?,
            (Some(InitialConfig::Uniform { lo, hi }), _) => {
                let (lo, hi) = (*lo, *hi);
                if !(hi > lo) {
                    return Err(Error::Config(format!("empty uniform support [{lo}, {hi}]")));
                }
                let h = 1.0 / (hi - lo);
                InitialDistribution::from_density(move |_| h, lo, hi)?
            }
            (None, Some(x0)) => InitialDistribution::point_mass(x0)?,
            (None, None) => return Err(Error::Config("either `x0` or `initial` is required".into())),
        };
        Ok((spec, init))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub dx: f64,
    pub dt: f64,
    /// Start time used in place of a point-mass initial law.
    pub warmup: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            dx: 0.005,
            dt: 5e-4,
            warmup: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirectConfig {
    pub level: u32,
    /// Coarsest level used by refinement and extrapolation.
    pub min_level: u32,
    pub kill_rule: KillRule,
    pub theta: f64,
    /// March the unkilled density alongside and record the field invariants.
    pub track_invariants: bool,
}

impl Default for DirectConfig {
    fn default() -> Self {
        Self {
            level: 10,
            min_level: 8,
            kill_rule: KillRule::Fractional,
            theta: 0.5,
            track_invariants: false,
        }
    }
}

impl DirectConfig {
    pub fn options(&self) -> DirectOptions {
        DirectOptions {
            theta: self.theta,
            kill_rule: self.kill_rule,
            track_unkilled: self.track_invariants,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InverseConfig {
    pub theta: f64,
    pub omega: f64,
    pub tol: f64,
    pub max_sweeps: usize,
    pub damped_steps: usize,
    pub eps_w_rel: f64,
    pub t_min: Option<f64>,
}

impl Default for InverseConfig {
    fn default() -> Self {
        let o = InverseOptions::default();
        Self {
            theta: o.theta,
            omega: o.omega,
            tol: o.tol,
            max_sweeps: o.max_sweeps,
            damped_steps: o.damped_steps,
            eps_w_rel: o.eps_w_rel,
            t_min: o.t_min,
        }
    }
}

impl InverseConfig {
    pub fn options(&self) -> InverseOptions {
        InverseOptions {
            theta: self.theta,
            omega: self.omega,
            tol: self.tol,
            max_sweeps: self.max_sweeps,
            damped_steps: self.damped_steps,
            eps_w_rel: self.eps_w_rel,
            t_min: self.t_min,
            store_w: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub bridge: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            paths: 1_000_000,
            dt: 1e-3,
            seed: 20_061_117,
            bridge: true,
        }
    }
}

impl McConfig {
    pub fn options(&self, horizon: f64) -> McOptions {
        McOptions {
            n_paths: self.paths,
            dt: self.dt,
            seed: self.seed,
            bridge: self.bridge,
            horizon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Survival round trip: allowed `|p_hat - p|`, widened to three CI
    /// half-widths when those are larger.
    pub survival_gap: f64,
    /// Barrier round trip: allowed sup-norm gap on `[boundary_t_min, T]`.
    pub boundary_gap: f64,
    pub boundary_t_min: f64,
    /// Times at which survival round trips are compared; empty means ten
    /// equally spaced times.
    pub output_times: Vec<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            survival_gap: 0.01,
            boundary_gap: 0.05,
            boundary_t_min: 0.1,
            output_times: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub diffusion: DiffusionConfig,
    #[serde(default)]
    pub boundary_interpolation: Interpolation,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub direct: DirectConfig,
    #[serde(default)]
    pub inverse: InverseConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad configuration: {e}")))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path.as_ref())?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::from_json(r#"{"kind": "bm", "x0": 1.0}"#).unwrap();
        assert_eq!(c.grid.dx, 0.005);
        assert_eq!(c.direct.level, 10);
        let (spec, init) = c.diffusion.build().unwrap();
        assert_eq!(spec.constant_coefficients(), Some((0.0, 1.0)));
        assert_eq!(init.point(), Some(1.0));
    }

    #[test]
    fn named_builtins() {
        let c = RunConfig::from_json(r#"{"kind": "custom", "sigma": "tanh-vol", "mu": 0.1, "x0": 0.0}"#).unwrap();
        let (spec, _) = c.diffusion.build().unwrap();
        assert!((spec.vol(1.0, 0.0) - (1.0 + 0.5 * 1.0f64.tanh())).abs() < 1e-15);
        assert_eq!(spec.drift(3.0, 0.0), 0.1);
        let bad = RunConfig::from_json(r#"{"kind": "custom", "sigma": "nope", "x0": 0.0}"#).unwrap();
        assert!(matches!(bad.diffusion.build(), Err(Error::Config(_))));
    }

    #[test]
    fn hash_tracks_every_field() {
        let a = RunConfig::from_json(r#"{"kind": "bm", "x0": 1.0}"#).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.mc.seed += 1;
        assert_ne!(a.hash(), b.hash());
        let back = RunConfig::from_json(&a.to_json()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn unknown_grid_key_is_rejected() {
        assert!(RunConfig::from_json(r#"{"kind": "bm", "x0": 1.0, "grid": {"dz": 1}}"#).is_err());
    }
}
