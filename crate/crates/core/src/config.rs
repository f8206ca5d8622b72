//! Run configuration for the batch driver.
//!
//! A configuration is a plain-text file of `key = value` lines (`#` starts a
//! comment). Command-line flags use the same keys and are applied afterwards,
//! so they override the file. Keys accept `-` or `_` as word separator.

use std::path::{Path, PathBuf};

use crate::analysis::ErrorMeasure;
use crate::assembly::{AssemblyOptions, Method};
use crate::error::{Error, Result};
use crate::linalg::SolverOptions;
use crate::problem::CaseKind;
use crate::stabilization::{SeriesMode, StabMode, StabilizationConfig};
use crate::timestepper::{PicardConfig, TimeLoopConfig};

/// Grids of the published convergence tables.
pub const DEFAULT_GRIDS: [usize; 4] = [10, 20, 40, 80];

/// How the number of time steps follows from the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DtPolicy {
    /// `dt = h_cell / k` on an `n x n` grid, i.e. `k n T` steps for the unit square.
    Proportional(f64),
    /// The same `dt` on every grid; `T / dt` must be an integer.
    Fixed(f64),
}

impl DtPolicy {
    pub fn steps(self, n: usize, t_final: f64) -> Result<usize> {
        let raw = match self {
            DtPolicy::Proportional(k) => k * n as f64 * t_final,
            DtPolicy::Fixed(dt) => t_final / dt,
        };
        let steps = raw.round();
        if steps < 1.0 || (raw - steps).abs() > 1e-9 * raw.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "time step policy {self:?} gives a non-integer step count {raw} for T = {t_final}"
            )));
        }
        Ok(steps as usize)
    }
}

impl std::str::FromStr for DtPolicy {
    type Err = Error;

    /// `h`, `<k>h` (for example `2h`), or a positive number.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidArgument(format!("time step '{s}' is neither a number nor '<k>h'"));
        let policy = match s.strip_suffix('h') {
            Some("") => DtPolicy::Proportional(1.0),
            Some(k) => DtPolicy::Proportional(k.trim().parse().map_err(|_| bad())?),
            None => DtPolicy::Fixed(s.parse().map_err(|_| bad())?),
        };
        let v = match policy {
            DtPolicy::Proportional(v) | DtPolicy::Fixed(v) => v,
        };
        if !(v > 0.0) || !v.is_finite() {
            return Err(bad());
        }
        Ok(policy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub case: CaseKind,
    pub method: Method,
    pub grids: Vec<usize>,
    pub theta: f64,
    pub t_final: f64,
    pub dt: DtPolicy,
    pub stabilization: StabilizationConfig,
    pub assembly: AssemblyOptions,
    pub solver: SolverOptions,
    pub picard: Option<PicardConfig>,
    pub probe: Option<[f64; 2]>,
    pub out: Option<PathBuf>,
    pub measure: ErrorMeasure,
    /// Interface position `x = split` for the coupled case.
    pub split: f64,
    /// Run the grids of a study concurrently.
    pub parallel_grids: bool,
    /// Single runs only: replace the discrete solution by the exact interpolant.
    pub exact_injection: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            case: CaseKind::Stokes,
            method: Method::Asgs,
            grids: DEFAULT_GRIDS.to_vec(),
            theta: 1.0,
            t_final: 1.0,
            dt: DtPolicy::Proportional(1.0),
            stabilization: StabilizationConfig::default(),
            assembly: AssemblyOptions::default(),
            solver: SolverOptions::default(),
            picard: None,
            probe: None,
            out: None,
            measure: ErrorMeasure::SquaredNorm,
            split: 0.5,
            parallel_grids: false,
            exact_injection: false,
        }
    }
}

fn parse_bool(v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::InvalidArgument(format!("'{v}' is not a boolean"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidArgument(format!("{key}: cannot parse '{v}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

impl RunConfig {
    /// Sets one option by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().to_ascii_lowercase().replace('_', "-");
        let v = value.trim();
        match key.as_str() {
            "case" => self.case = v.parse()?,
            "method" => self.method = v.parse()?,
            "grids" => self.grids = parse_list(&key, v)?,
            "theta" => self.theta = parse_num(&key, v)?,
            "t-final" => self.t_final = parse_num(&key, v)?,
            "dt" => self.dt = v.parse()?,
            "stab-mode" => self.stabilization.mode = v.parse::<StabMode>()?,
            "series" => {
                self.stabilization.series = match v.to_ascii_lowercase().as_str() {
                    "closed" => SeriesMode::Closed,
                    "off" => SeriesMode::Off,
                    n => SeriesMode::Finite(parse_num(&key, n)?),
                }
            }
            "tau3-scale" => self.stabilization.tau3_scale = parse_num(&key, v)?,
            "out" => self.out = Some(PathBuf::from(v)),
            "probe" => {
                let p: Vec<f64> = parse_list(&key, v)?;
                match p[..] {
                    [x, y] => self.probe = Some([x, y]),
                    _ => return Err(Error::InvalidArgument(format!("probe needs 'x,y', got '{v}'"))),
                }
            }
            "pin-pressure" => self.assembly.pin_pressure = parse_bool(v)?,
            "coefficient-gradient-terms" => self.assembly.coefficient_gradient_terms = parse_bool(v)?,
            "quadrature" => self.assembly.quadrature_degree = parse_num(&key, v)?,
            "picard" => {
                self.picard = match v.to_ascii_lowercase().as_str() {
                    "off" | "false" | "no" => None,
                    "on" | "true" | "yes" => Some(PicardConfig::default()),
                    n => Some(PicardConfig {
                        max_iter: parse_num(&key, n)?,
                        ..PicardConfig::default()
                    }),
                }
            }
            "solver-tol" => self.solver.tol = parse_num(&key, v)?,
            "restart" => self.solver.restart = parse_num(&key, v)?,
            "max-iter" => self.solver.max_iter = parse_num(&key, v)?,
            "fill" => self.solver.fill_level = parse_num(&key, v)?,
            "measure" => self.measure = v.parse()?,
            "split" => self.split = parse_num(&key, v)?,
            "parallel-grids" => self.parallel_grids = parse_bool(v)?,
            "exact-injection" => self.exact_injection = parse_bool(v)?,
            other => return Err(Error::InvalidArgument(format!("unknown option '{other}'"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let line_no = i + 1;
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                message: format!("expected 'key = value', got '{line}'"),
            })?;
            self.set(k, v).map_err(|e| Error::Config {
                line: line_no,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grids.is_empty() {
            return Err(Error::InvalidArgument("no grids given".into()));
        }
        if self.grids.iter().any(|&n| n < 2) {
            return Err(Error::InvalidArgument("every grid needs n >= 2".into()));
        }
        if self.grids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("grids must be strictly ascending".into()));
        }
        for &n in &self.grids {
            self.time_loop(n)?.validate()?;
        }
        Ok(())
    }

    /// Time-loop settings for an `n x n` grid.
    pub fn time_loop(&self, n: usize) -> Result<TimeLoopConfig> {
        Ok(TimeLoopConfig {
            t_final: self.t_final,
            steps: self.dt.steps(n, self.t_final)?,
            theta: self.theta,
            method: self.method,
            picard: self.picard,
            solver: self.solver,
            assembly: self.assembly,
            stabilization: self.stabilization,
            probe: self.probe,
        })
    }

    /// File-name stem shared by a study's outputs.
    pub fn stem(&self) -> String {
        format!("{}_{}", self.case.name(), self.method.name())
    }
}
