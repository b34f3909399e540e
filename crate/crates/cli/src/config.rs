//! Run configuration read from a TOML file.

use std::path::Path;

use cqbem::cq::SchemeKind;
use cqbem::geometry::{Point, Polygon};
use cqbem::solver::{horseshoe, SourceField};
use cqbem::verification::{make_manufactured, ManufacturedSolution};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Vertices of the quadrilateral used for the convergence studies.
pub const PAPER_QUAD: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [0.8, 0.8], [0.2, 1.0]];

/// Either a named preset (`"paper-quad"`, `"horseshoe"`) or explicit counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Geometry {
    Preset(String),
    Vertices(Vec<[f64; 2]>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManufacturedConfig {
    /// Point source location, strictly outside the inclusion.
    pub source: [f64; 2],
    #[serde(default)]
    pub t_lag: f64,
}

/// Exterior unit heat sources on a circle, driving the scattered-field run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourcesConfig {
    pub center: [f64; 2],
    pub radius: f64,
    pub count: usize,
    pub t_lag: f64,
}

/// Uniform `nx × ny` grid over `[x_min, x_max] × [y_min, y_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotConfig {
    pub times: Vec<f64>,
    pub grid: GridConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: Geometry,
    pub rho: f64,
    pub kappa: f64,
    /// `bdf:q` or `radau:s`.
    pub scheme: String,
    /// Time step `k`; `final_time / step` must be an integer.
    pub step: f64,
    pub final_time: f64,
    /// Degree of the Neumann space; the Dirichlet space has one more.
    pub degree: usize,
    pub mesh_size: f64,
    #[serde(default = "one")]
    pub levels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contour_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manufactured: Option<ManufacturedConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sources: Option<SourcesConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<SnapshotConfig>,
}

fn one() -> usize {
    1
}

fn config_error(field: &str, detail: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {detail}"))
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_error(field, format!("must be positive, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_error(field, format!("must be non-negative, got {v}")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("config: cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Canonical TOML form.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.polygon()?;
        positive("rho", self.rho)?;
        positive("kappa", self.kappa)?;
        self.scheme_kind()?;
        positive("step", self.step)?;
        positive("final_time", self.final_time)?;
        self.steps()?;
        positive("mesh_size", self.mesh_size)?;
        if self.levels == 0 {
            return Err(config_error("levels", "must be at least 1"));
        }
        if self.contour_points == Some(0) {
            return Err(config_error("contour_points", "must be positive"));
        }
        if let Some(m) = &self.manufactured {
            non_negative("manufactured.t_lag", m.t_lag)?;
            self.manufactured()?;
        }
        if let Some(s) = &self.sources {
            positive("sources.radius", s.radius)?;
            non_negative("sources.t_lag", s.t_lag)?;
            if s.count == 0 {
                return Err(config_error("sources.count", "must be at least 1"));
            }
        }
        if let Some(snap) = &self.snapshots {
            for &t in &snap.times {
                if !(0.0..=self.final_time).contains(&t) {
                    return Err(config_error("snapshots.times", format!("{t} outside [0, final_time]")));
                }
            }
            let g = &snap.grid;
            if !(g.x_min < g.x_max && g.y_min < g.y_max) || g.nx == 0 || g.ny == 0 {
                return Err(config_error("snapshots.grid", "needs x_min < x_max, y_min < y_max and nx, ny ≥ 1"));
            }
        }
        Ok(())
    }

    pub fn polygon(&self) -> Result<Polygon, CliError> {
        match &self.geometry {
            Geometry::Preset(name) => match name.as_str() {
                "paper-quad" => Ok(Polygon::from_coords(&PAPER_QUAD).expect("preset is valid")),
                "horseshoe" => Ok(horseshoe()),
                other => Err(config_error("geometry", format!("unknown preset {other:?}"))),
            },
            Geometry::Vertices(v) => Polygon::from_coords(v).map_err(|e| config_error("geometry", e)),
        }
    }

    pub fn scheme_kind(&self) -> Result<SchemeKind, CliError> {
        self.scheme.parse().map_err(|e| config_error("scheme", e))
    }

    /// Number of steps `N = T/k`.
    pub fn steps(&self) -> Result<usize, CliError> {
        let n = self.final_time / self.step;
        let r = n.round();
        if r < 1.0 || (n - r).abs() > 1e-9 * n.max(1.0) {
            return Err(config_error("step", format!("final_time / step = {n} is not a positive integer")));
        }
        Ok(r as usize)
    }

    /// The heat-kernel solution; the reference source `(1.5, 1.6)` when none is configured.
    pub fn manufactured(&self) -> Result<ManufacturedSolution, CliError> {
        let (source, t_lag) = match &self.manufactured {
            Some(m) => (m.source, m.t_lag),
            None => ([1.5, 1.6], 0.0),
        };
        make_manufactured(
            &self.polygon()?,
            Point::new(source[0], source[1]),
            self.kappa / self.rho,
            self.kappa,
            t_lag,
        )
        .map_err(|e| config_error("manufactured.source", e))
    }

    pub fn source_field(&self) -> Option<SourceField> {
        self.sources.as_ref().map(|s| {
            SourceField::on_circle(Point::new(s.center[0], s.center[1]), s.radius, s.count, s.t_lag)
        })
    }

    /// Grid points, row-major in `y` then `x`.
    pub fn grid_points(&self) -> Vec<Point> {
        let Some(snap) = &self.snapshots else {
            return vec![];
        };
        let g = &snap.grid;
        let coord = |lo: f64, hi: f64, n: usize, i: usize| {
            if n == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        };
        (0..g.ny)
            .flat_map(|j| (0..g.nx).map(move |i| Point::new(coord(g.x_min, g.x_max, g.nx, i), coord(g.y_min, g.y_max, g.ny, j))))
            .collect()
    }
}
