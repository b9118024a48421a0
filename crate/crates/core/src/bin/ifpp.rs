use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ifpp::analytic::{bm_constant_barrier_survival, bm_linear_barrier_survival, exponential_curve};
use ifpp::config::RunConfig;
use ifpp::direct::{direct_lattice, refine_direct, solve_direct_landmark};
use ifpp::inverse::{inverse_lattice, solve_inverse};
use ifpp::mc::estimate_survival;
use ifpp::workflow::{roundtrip_bp, roundtrip_pb};
use ifpp::{Boundary, Interpolation, SurvivalCurve};

/// First-passage survival curves and inverse barrier recovery.
#[derive(Parser)]
#[command(name = "ifpp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Survival curve of a barrier by the landmark direct solver.
    Direct {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        boundary: PathBuf,
        /// Landmark level; defaults to `direct.level` from the config.
        #[arg(long)]
        level: Option<u32>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        horizon: Option<f64>,
        /// Also solve coarser levels down to `direct.min_level` and write the
        /// extrapolated curve instead of the level-`n` one.
        #[arg(long)]
        extrapolate: bool,
        /// Directory for `density.csv` and `w.csv` field dumps.
        #[arg(long)]
        dump_fields: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Barrier from a survival curve via the obstacle problem.
    Inverse {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        survival: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Monte Carlo survival estimate with confidence intervals.
    Mc {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        boundary: PathBuf,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Brownian-bridge crossing correction between grid points.
        #[arg(long)]
        bridge: bool,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Survival curve -> barrier -> survival curve (Monte Carlo).
    RoundtripPb {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        survival: PathBuf,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Writes the recovered barrier here.
        #[arg(long)]
        boundary_out: Option<PathBuf>,
    },
    /// Barrier -> survival curve -> barrier.
    RoundtripBp {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        boundary: PathBuf,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        boundary_out: Option<PathBuf>,
    },
    /// Closed-form Brownian reference curves.
    Bench {
        #[arg(long, value_enum)]
        case: BenchCase,
        #[arg(long, default_value_t = 1.0)]
        x0: f64,
        /// Barrier intercept for `const` and `linear`.
        #[arg(long, default_value_t = 0.0)]
        barrier: f64,
        #[arg(long, default_value_t = 0.5)]
        slope: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1001)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
        /// Writes the matching barrier (for `const` and `linear`).
        #[arg(long)]
        boundary_out: Option<PathBuf>,
    },
    /// Landmark set of a barrier as CSV `n,i,t,bstar`.
    Landmarks {
        #[arg(long)]
        boundary: PathBuf,
        #[arg(long)]
        level: u32,
        #[arg(long, value_enum, default_value_t = InterpArg::Linear)]
        interpolation: InterpArg,
        #[arg(long)]
        horizon: Option<f64>,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchCase {
    Const,
    Linear,
    Exp,
}

#[derive(Clone, Copy, ValueEnum)]
enum InterpArg {
    Linear,
    ConstantLeft,
}

impl From<InterpArg> for Interpolation {
    fn from(a: InterpArg) -> Self {
        match a {
            InterpArg::Linear => Interpolation::Linear,
            InterpArg::ConstantLeft => Interpolation::ConstantLeft,
        }
    }
}

enum Outcome {
    Pass,
    ToleranceFailure,
}

type CliResult = Result<Outcome, Box<dyn std::error::Error>>;

fn create(path: &Path) -> io::Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Box<dyn std::error::Error>> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

fn load_boundary(path: &Path, cfg: &RunConfig, horizon: Option<f64>) -> ifpp::Result<Boundary> {
    Boundary::read_csv_path(path, cfg.boundary_interpolation, horizon)
}

#[derive(Serialize)]
struct WithConfig<'a, T: Serialize> {
    config: &'a RunConfig,
    config_hash: String,
    #[serde(flatten)]
    body: T,
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Direct {
            spec,
            boundary,
            level,
            out,
            horizon,
            extrapolate,
            dump_fields,
            report,
        } => {
            let mut cfg = RunConfig::from_path(&spec)?;
            if let Some(n) = level {
                cfg.direct.level = n;
                cfg.direct.min_level = cfg.direct.min_level.min(n.saturating_sub(2));
            }
            let (spec, init) = cfg.diffusion.build()?;
            let b = load_boundary(&boundary, &cfg, horizon)?;
            let g = &cfg.grid;
            let n = cfg.direct.level;
            let lat = direct_lattice(&spec, &init, &b, n, g.dx, g.dt, g.warmup)?;
            let mut opts = cfg.direct.options();
            opts.store_fields = dump_fields.is_some();
            let (curve, sol, chain) = if extrapolate {
                let r = refine_direct(&spec, &init, &b, cfg.direct.min_level, n, &lat, &opts)?;
                (r.extrapolated, r.finest, Some(r.max_chain_violation))
            } else {
                let sol = solve_direct_landmark(&spec, &init, &b, n, &lat, &opts)?;
                (sol.survival.clone(), sol, None)
            };
            curve.write_csv(create(&out)?)?;
            if let Some(dir) = dump_fields {
                std::fs::create_dir_all(&dir)?;
                if let Some(d) = &sol.density {
                    d.field().write_csv(create(&dir.join("density.csv"))?)?;
                    d.survival_field().0.write_csv(create(&dir.join("w.csv"))?)?;
                }
            }
            if let Some(path) = report {
                #[derive(Serialize)]
                struct Body<'a> {
                    level: u32,
                    kill_times: &'a [f64],
                    max_chain_violation: Option<f64>,
                    diagnostics: &'a ifpp::direct::DirectDiagnostics,
                }
                write_json(
                    &path,
                    &WithConfig {
                        config: &cfg,
                        config_hash: cfg.hash(),
                        body: Body {
                            level: n,
                            kill_times: &sol.kill_times,
                            max_chain_violation: chain,
                            diagnostics: &sol.diagnostics,
                        },
                    },
                )?;
            }
            Ok(Outcome::Pass)
        }
        Command::Inverse {
            spec,
            survival,
            out,
            horizon,
            report,
        } => {
            let cfg = RunConfig::from_path(&spec)?;
            let (spec, init) = cfg.diffusion.build()?;
            let p = SurvivalCurve::read_csv_path(&survival, horizon)?;
            let g = &cfg.grid;
            let lat = inverse_lattice(&spec, &init, p.horizon(), g.dx, g.dt, g.warmup)?;
            let rep = solve_inverse(&spec, &init, &p, &lat, &cfg.inverse.options())?;
            rep.b_hat.write_csv(create(&out)?, None)?;
            if let Some(path) = report {
                write_json(
                    &path,
                    &WithConfig {
                        config: &cfg,
                        config_hash: cfg.hash(),
                        body: &rep.summary,
                    },
                )?;
            }
            Ok(if rep.summary.constraint_violation <= 1e-10 {
                Outcome::Pass
            } else {
                Outcome::ToleranceFailure
            })
        }
        Command::Mc {
            spec,
            boundary,
            paths,
            dt,
            seed,
            bridge,
            horizon,
            out,
        } => {
            let mut cfg = RunConfig::from_path(&spec)?;
            if let Some(v) = paths {
                cfg.mc.paths = v;
            }
            if let Some(v) = dt {
                cfg.mc.dt = v;
            }
            if let Some(v) = seed {
                cfg.mc.seed = v;
            }
            cfg.mc.bridge = bridge;
            let (spec, init) = cfg.diffusion.build()?;
            let b = load_boundary(&boundary, &cfg, horizon)?;
            let est = estimate_survival(&spec, &init, &b, &cfg.mc.options(b.horizon()))?;
            let mut w = csv::Writer::from_writer(create(&out)?);
            w.write_record(["t", "p", "p_strict", "ci_half_width"])?;
            for i in 0..est.times.len() {
                w.write_record([
                    format!("{}", est.times[i]),
                    format!("{}", est.p_hat[i]),
                    format!("{}", est.p_hat_strict[i]),
                    format!("{}", est.ci_half_width[i]),
                ])?;
            }
            w.flush()?;
            eprintln!(
                "{} paths, seed {}, strict/non-strict disagreements: {}",
                est.n_paths, cfg.mc.seed, est.disagreements
            );
            Ok(Outcome::Pass)
        }
        Command::RoundtripPb {
            spec,
            survival,
            horizon,
            report,
            boundary_out,
        } => {
            let cfg = RunConfig::from_path(&spec)?;
            let p = SurvivalCurve::read_csv_path(&survival, horizon)?;
            let rt = roundtrip_pb(&cfg, &p)?;
            if let Some(path) = boundary_out {
                rt.inverse.b_hat.write_csv(create(&path)?, None)?;
            }
            emit(&rt.report, report.as_deref())?;
            for g in &rt.report.gaps {
                eprintln!(
                    "t={:<8} target={:.6} mc={:.6} (+/-{:.1e}) gap={:.2e} allowed={:.2e}",
                    g.t, g.target, g.mc, g.ci_half_width, g.gap, g.allowed
                );
            }
            Ok(verdict(rt.report.pass))
        }
        Command::RoundtripBp {
            spec,
            boundary,
            horizon,
            report,
            boundary_out,
        } => {
            let cfg = RunConfig::from_path(&spec)?;
            let b = load_boundary(&boundary, &cfg, horizon)?;
            let rt = roundtrip_bp(&cfg, &b)?;
            if let Some(path) = boundary_out {
                rt.inverse.b_hat.write_csv(create(&path)?, None)?;
            }
            emit(&rt.report, report.as_deref())?;
            eprintln!(
                "{}; sup gap {:.3e} at t={} (tolerance {:.3e})",
                rt.report.b0.label, rt.report.sup_gap, rt.report.sup_gap_at, rt.report.tolerance
            );
            Ok(verdict(rt.report.pass))
        }
        Command::Bench {
            case,
            x0,
            barrier,
            slope,
            lambda,
            horizon,
            samples,
            out,
            boundary_out,
        } => {
            if samples < 2 {
                return Err("need at least two samples".into());
            }
            let ts: Vec<f64> = (0..samples)
                .map(|k| horizon * k as f64 / (samples - 1) as f64)
                .collect();
            let (curve, b) = match case {
                BenchCase::Const => (
                    SurvivalCurve::new(
                        ts.clone(),
                        ts.iter()
                            .map(|&t| bm_constant_barrier_survival(x0, barrier, t))
                            .collect::<ifpp::Result<_>>()?,
                    )?,
                    Some(Boundary::constant(barrier, horizon)?),
                ),
                BenchCase::Linear => (
                    SurvivalCurve::new(
                        ts.clone(),
                        ts.iter()
                            .map(|&t| bm_linear_barrier_survival(x0, barrier, slope, t))
                            .collect::<ifpp::Result<_>>()?,
                    )?,
                    Some(Boundary::piecewise_linear(
                        vec![0.0, horizon],
                        vec![barrier, barrier + slope * horizon],
                        horizon,
                    )?),
                ),
                BenchCase::Exp => (exponential_curve(lambda, horizon, samples)?, None),
            };
            curve.write_csv(create(&out)?)?;
            match (boundary_out, b) {
                (Some(path), Some(b)) => b.write_csv(create(&path)?, Some(&ts))?,
                (Some(_), None) => return Err("the exponential case has no closed-form barrier".into()),
                _ => {}
            }
            Ok(Outcome::Pass)
        }
        Command::Landmarks {
            boundary,
            level,
            interpolation,
            horizon,
            out,
        } => {
            let b = Boundary::read_csv_path(&boundary, interpolation.into(), horizon)?;
            let lm = b.landmarks(level);
            match out {
                Some(path) => lm.write_csv(create(&path)?)?,
                None => lm.write_csv(io::stdout().lock())?,
            }
            Ok(Outcome::Pass)
        }
    }
}

fn emit<T: Serialize>(report: &T, path: Option<&Path>) -> Result<(), Box<dyn std::error::Error>> {
    match path {
        Some(p) => write_json(p, report),
        None => {
            let mut out = io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, report)?;
            writeln!(out)?;
            Ok(())
        }
    }
}

fn verdict(pass: bool) -> Outcome {
    if pass {
        Outcome::Pass
    } else {
        Outcome::ToleranceFailure
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::ToleranceFailure) => {
            eprintln!("tolerance check failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
