//! Command implementations behind the `cqbem` binary.

pub mod config;

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cqbem::cq::{operator_weights, ContourParameters, CqScheme};
use cqbem::geometry::BoundaryMesh;
use cqbem::operators::assemble_frequency_system;
use cqbem::solver::{
    evaluate_fields, solve_transmission, split_evaluable, step_index, DensityHistory, Region, TransmissionProblem,
};
use cqbem::trace_spaces::{Space, TraceSpacePair};
use cqbem::verification::{ConvergenceRecord, ConvergenceStudy, ErrorKind};

pub use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Invalid or unreadable configuration; the message starts with the offending field.
    Config(String),
    Numerical(cqbem::Error),
    Io(PathBuf, std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(..) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(e) => write!(f, "numerical failure: {e}"),
            CliError::Io(p, e) => write!(f, "cannot write {}: {e}", p.display()),
        }
    }
}

impl std::error::Error for CliError {}

impl From<cqbem::Error> for CliError {
    fn from(e: cqbem::Error) -> Self {
        match e {
            cqbem::Error::InvalidParameter { .. } | cqbem::Error::Geometry(_) | cqbem::Error::Unsupported(_) => {
                CliError::Config(e.to_string())
            }
            e => CliError::Numerical(e),
        }
    }
}

/// Settings that come from the command line rather than the config file.
#[derive(Debug, Clone, Default)]
pub struct Options {
    /// Overrides `out_dir` of the config; the current directory when both are absent.
    pub out_dir: Option<PathBuf>,
    pub contour_points: Option<usize>,
    pub dump_weights: bool,
}

impl Options {
    fn out_dir(&self, cfg: &RunConfig) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }

    fn contour_points(&self, cfg: &RunConfig) -> Option<usize> {
        self.contour_points.or(cfg.contour_points)
    }
}

/// Doubles with 17 significant digits.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_path_buf(), e))?;
    }
    fs::write(path, text).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

/// Everything a single-mesh run needs.
struct Setup {
    scheme: CqScheme,
    contour: ContourParameters,
    spaces: TraceSpacePair,
    problem: TransmissionProblem,
}

fn setup(cfg: &RunConfig, opts: &Options) -> Result<Setup, CliError> {
    cfg.validate()?;
    let polygon = cfg.polygon()?;
    let scheme = cfg.scheme_kind()?.build(cfg.step, cfg.steps()?)?;
    let contour = match opts.contour_points(cfg) {
        Some(p) => ContourParameters::with_points(p),
        None => ContourParameters::for_scheme(&scheme),
    };
    contour.validate(&scheme)?;
    let spaces = TraceSpacePair::new(BoundaryMesh::from_polygon(&polygon, cfg.mesh_size)?, cfg.degree)?;
    let problem = match (cfg.source_field(), &cfg.manufactured) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config("sources: cannot be combined with manufactured".into()));
        }
        (Some(src), None) => {
            let (a, b) = (src.clone(), src);
            TransmissionProblem::new(
                polygon,
                cfg.rho,
                cfg.kappa,
                cfg.final_time,
                Arc::new(move |x, t| a.value(x, t)),
                Arc::new(move |x, n, t| b.normal_derivative(x, n, t)),
            )?
        }
        (None, _) => cfg.manufactured()?.problem(&polygon, cfg.final_time)?,
    };
    Ok(Setup {
        scheme,
        contour,
        spaces,
        problem,
    })
}

/// Files written by a command.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Artifacts {
    pub files: Vec<PathBuf>,
}

/// Solves once and writes `densities.csv` with the `L²` norms of both densities at `t_1, …, t_N`.
pub fn cmd_solve(cfg: &RunConfig, opts: &Options) -> Result<Artifacts, CliError> {
    let s = setup(cfg, opts)?;
    let densities = solve_transmission(&s.problem, &s.spaces, &s.scheme, &s.contour)?;
    let out = opts.out_dir(cfg);
    let mut artifacts = Artifacts::default();

    let (gx, gy) = (s.spaces.gram(Space::X), s.spaces.gram(Space::Y));
    let mut csv = String::from("time,norm_lambda,norm_phi\n");
    for n in 1..=s.scheme.steps() {
        let (l, p) = (densities.step_lambda(n), densities.step_phi(n));
        let nl = l.dot(&(&gx * &l)).max(0.0).sqrt();
        let np = p.dot(&(&gy * &p)).max(0.0).sqrt();
        let _ = writeln!(csv, "{},{},{}", num(n as f64 * s.scheme.step()), num(nl), num(np));
    }
    let path = out.join("densities.csv");
    write_file(&path, &csv)?;
    artifacts.files.push(path);

    if cfg.snapshots.is_some() {
        artifacts.files.extend(write_fields(cfg, &s, &densities, &out)?);
    }
    if opts.dump_weights {
        artifacts.files.push(write_weights(&s, &out)?);
    }
    Ok(artifacts)
}

/// Runs a manufactured-solution study over `levels` levels and writes `convergence.csv`.
pub fn cmd_convergence(cfg: &RunConfig, opts: &Options) -> Result<(ConvergenceRecord, Artifacts), CliError> {
    cfg.validate()?;
    if cfg.levels < 3 {
        return Err(CliError::Config(format!(
            "levels: a rate fit needs at least 3 levels, got {}",
            cfg.levels
        )));
    }
    let study = ConvergenceStudy {
        polygon: cfg.polygon()?,
        exact: cfg.manufactured()?,
        scheme: cfg.scheme_kind()?,
        degree: cfg.degree,
        base_mesh_size: cfg.mesh_size,
        base_steps: cfg.steps()?,
        final_time: cfg.final_time,
        levels: cfg.levels,
        contour_points: opts.contour_points(cfg),
    };
    let record = study.run()?;
    let mut csv = String::from("level,k,h,E_phi,E_lambda_0,E_lambda_mhalf\n");
    for l in &record.levels {
        let e = l.errors;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            l.level,
            num(l.k),
            num(l.h),
            num(e.phi),
            num(e.lambda_l2),
            num(e.lambda_mhalf)
        );
    }
    let rates = [ErrorKind::Phi, ErrorKind::LambdaL2, ErrorKind::LambdaMinusHalf]
        .map(|k| record.rate(k).map(|r| num(r.rate)))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let _ = writeln!(csv, "rate,,,{}", rates.join(","));
    let path = opts.out_dir(cfg).join("convergence.csv");
    write_file(&path, &csv)?;
    Ok((record, Artifacts { files: vec![path] }))
}

/// Solves and writes one field CSV per snapshot time.
pub fn cmd_fields(cfg: &RunConfig, opts: &Options) -> Result<Artifacts, CliError> {
    if cfg.snapshots.is_none() {
        return Err(CliError::Config("snapshots: the fields command needs times and a grid".into()));
    }
    let s = setup(cfg, opts)?;
    let out = opts.out_dir(cfg);
    if cfg.snapshots.as_ref().is_some_and(|snap| snap.times.is_empty()) {
        return Ok(Artifacts::default());
    }
    let densities = solve_transmission(&s.problem, &s.spaces, &s.scheme, &s.contour)?;
    let mut files = write_fields(cfg, &s, &densities, &out)?;
    if opts.dump_weights {
        files.push(write_weights(&s, &out)?);
    }
    Ok(Artifacts { files })
}

/// Writes the CQ weights of the system matrix `A(s)`.
pub fn cmd_weights_dump(cfg: &RunConfig, opts: &Options) -> Result<Artifacts, CliError> {
    let s = setup(cfg, opts)?;
    Ok(Artifacts {
        files: vec![write_weights(&s, &opts.out_dir(cfg))?],
    })
}

fn write_fields(cfg: &RunConfig, s: &Setup, densities: &DensityHistory, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let Some(snap) = &cfg.snapshots else {
        return Ok(vec![]);
    };
    if snap.times.is_empty() {
        return Ok(vec![]);
    }
    let (points, skipped) = split_evaluable(&s.spaces, &cfg.grid_points());
    let steps: Vec<usize> = snap.times.iter().map(|&t| step_index(&s.scheme, t)).collect();
    let snaps = evaluate_fields(densities, &s.problem, &s.spaces, &points, &steps)?;
    let incident = cfg.source_field();
    let mut files = vec![];
    for (i, (snap, requested)) in snaps.iter().zip(&snap.times).enumerate() {
        let mut csv = String::from("x,y,region,u\n");
        for ((x, r), u) in snap.points.iter().zip(&snap.regions).zip(&snap.combined) {
            let (tag, u) = match r {
                Region::Interior => ("-", *u),
                Region::Exterior => ("+", u + incident.as_ref().map_or(0.0, |f| f.value(x, snap.time))),
            };
            let _ = writeln!(csv, "{},{},{tag},{}", num(x.x), num(x.y), num(u));
        }
        let path = out.join(format!("fields_{i:02}_t{requested}.csv"));
        write_file(&path, &csv)?;
        files.push(path);
    }
    let mut log = format!("{} grid points skipped (on or too close to the boundary)\n", skipped.len());
    for p in &skipped {
        let _ = writeln!(log, "warning: skipped point {},{}", num(p.x), num(p.y));
    }
    if !skipped.is_empty() {
        log::warn!("{} grid points lie on or near the boundary and were skipped", skipped.len());
    }
    let path = out.join("fields_skipped.log");
    write_file(&path, &log)?;
    files.push(path);
    Ok(files)
}

fn write_weights(s: &Setup, out: &Path) -> Result<PathBuf, CliError> {
    let (m, kappa) = (s.problem.m(), s.problem.kappa());
    let spaces = &s.spaces;
    let weights = operator_weights(
        |freq| Ok(assemble_frequency_system(freq, m, kappa, spaces)?.matrix().clone()),
        &s.scheme,
        &s.contour,
        s.scheme.num_blocks(),
    )?;
    let mut csv = String::from("row,col,n,re,im\n");
    let (rows, cols) = weights.first().map_or((0, 0), |w| w.shape());
    for r in 0..rows {
        for c in 0..cols {
            for (n, w) in weights.iter().enumerate() {
                let z = w[(r, c)];
                let _ = writeln!(csv, "{r},{c},{n},{},{}", num(z.re), num(z.im));
            }
        }
    }
    let path = out.join("weights.csv");
    write_file(&path, &csv)?;
    Ok(path)
}
