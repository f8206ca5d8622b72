//! θ-scheme time loop over `(0, T]`.
//!
//! Each step assembles one monolithic linear system (optionally inside a
//! fixed-point loop on the lagged viscosity and advecting velocity), applies
//! the Dirichlet data at `t^{n+1}` and solves it with preconditioned GMRES.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::assembly::{Assembler, AssemblyOptions, Method, StepContext};
use crate::error::{Error, Result};
use crate::linalg::{norm2, solve_preconditioned, SolverOptions};
use crate::mesh::Subdomain;
use crate::problem::ProblemCase;
use crate::spaces::{CoupledLayout, Field, State};
use crate::stabilization::{StabilizationConfig, StabilizationSet};

/// Fixed-point iteration on the lagged coefficients within one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig {
            tol: 1e-10,
            max_iter: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeLoopConfig {
    pub t_final: f64,
    pub steps: usize,
    /// 1 is backward Euler, 0 is Crank-Nicolson.
    pub theta: f64,
    pub method: Method,
    pub picard: Option<PicardConfig>,
    pub solver: SolverOptions,
    pub assembly: AssemblyOptions,
    pub stabilization: StabilizationConfig,
    /// Point whose field values are recorded after every step.
    pub probe: Option<[f64; 2]>,
}

impl Default for TimeLoopConfig {
    fn default() -> Self {
        TimeLoopConfig {
            t_final: 1.0,
            steps: 10,
            theta: 1.0,
            method: Method::Asgs,
            picard: None,
            solver: SolverOptions::default(),
            assembly: AssemblyOptions::default(),
            stabilization: StabilizationConfig::default(),
            probe: None,
        }
    }
}

impl TimeLoopConfig {
    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    /// `t^n = n T / N`, computed without accumulating rounding.
    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.t_final
        } else {
            self.t_final * n as f64 / self.steps as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("need at least one time step".into()));
        }
        if !(self.t_final > 0.0) || !self.t_final.is_finite() {
            return Err(Error::InvalidArgument(format!("final time {} must be positive", self.t_final)));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidArgument(format!("theta {} outside [0, 1]", self.theta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    /// Index `n + 1` of the time level reached.
    pub step: usize,
    pub t: f64,
    pub iterations: usize,
    pub residual: f64,
    pub picard_iterations: usize,
    /// The solver stopped at a least-squares stagnation point (Galerkin only).
    pub stagnated: bool,
    /// `[u1, u2, p, c]` at the configured probe point.
    pub probe: Option<[f64; 4]>,
}

/// All time levels `t^0 .. t^N` and the per-step diagnostics.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub dt: f64,
    pub theta: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &State {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// A configured problem on one mesh, ready to be advanced in time.
///
/// Equal-order Galerkin systems are singular (spurious pressure modes) and
/// have a zero pressure diagonal. They are solved in the least-squares sense:
/// GMRES runs until it stagnates, preconditioned by the incomplete
/// factorization of the matrix plus a `τ1`-weighted pressure Laplacian. The
/// achieved residual is kept in the step diagnostics.
#[derive(Debug, Clone)]
pub struct Simulation {
    assembler: Assembler,
    stab: Option<StabilizationSet>,
    /// Pressure-Laplacian values added to Galerkin matrices for preconditioning.
    galerkin_precond: Option<Vec<f64>>,
    cfg: TimeLoopConfig,
}

impl Simulation {
    pub fn new(layout: Arc<CoupledLayout>, case: ProblemCase, cfg: TimeLoopConfig) -> Result<Self> {
        cfg.validate()?;
        let h = layout.mesh().h;
        let params = StabilizationSet::for_case(&case, h, cfg.dt(), &cfg.stabilization)?;
        let assembler = Assembler::new(layout, case, cfg.assembly)?;
        let (stab, galerkin_precond) = match cfg.method {
            Method::Asgs => (Some(params), None),
            Method::Galerkin => {
                let constrained: Vec<usize> = assembler.dirichlet_values(0.0).iter().map(|c| c.0).collect();
                let tau = [Subdomain::Unified, Subdomain::Stokes, Subdomain::Brinkman].map(|s| params.get(s).tau1);
                (None, Some(assembler.pressure_laplacian(&tau, &constrained)))
            }
        };
        Ok(Simulation {
            assembler,
            stab,
            galerkin_precond,
            cfg,
        })
    }

    pub fn config(&self) -> &TimeLoopConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Arc<CoupledLayout> {
        self.assembler.layout()
    }

    pub fn case(&self) -> &ProblemCase {
        self.assembler.case()
    }

    pub fn assembler(&self) -> &Assembler {
        &self.assembler
    }

    pub fn stabilization(&self) -> Option<&StabilizationSet> {
        self.stab.as_ref()
    }

    /// Interpolant of the exact solution at `t = 0`.
    pub fn initial_state(&self) -> State {
        let case = self.case();
        State::interpolate(self.layout().clone(), 0.0, |x, y, t| case.exact_solution(x, y, t))
    }

    /// Advances `state` from level `n` to `n + 1`.
    pub fn step(&self, state: &State, n: usize) -> Result<(State, StepDiagnostics)> {
        self.step_inner(state, n).map_err(|e| Error::Step {
            step: n + 1,
            source: Box::new(e),
        })
    }

    fn step_inner(&self, state: &State, n: usize) -> Result<(State, StepDiagnostics)> {
        state.validate()?;
        let t_next = self.cfg.time(n + 1);
        let dt = t_next - self.cfg.time(n);
        let prev_global = state.to_global();
        let mut lag = state.clone();
        let mut picard_iterations = 0;
        let max_outer = self.cfg.picard.map_or(1, |p| p.max_iter.max(1));
        loop {
            let ctx = StepContext {
                prev: state,
                lag: &lag,
                t_next,
                dt,
                theta: self.cfg.theta,
            };
            let mut system = self.assembler.assemble(&ctx, self.stab.as_ref())?;
            system.apply_constraints()?;
            let guess = if picard_iterations == 0 { prev_global.clone() } else { lag.to_global() };
            let (x, stats) = match &self.galerkin_precond {
                None => solve_preconditioned(&system.matrix, &system.rhs, Some(&guess), &system.matrix, &self.cfg.solver)?,
                Some(lap) => {
                    let mut precond = system.matrix.clone();
                    for (v, l) in precond.values_mut().iter_mut().zip(lap) {
                        *v += l;
                    }
                    let opts = SolverOptions {
                        accept_stagnation: true,
                        ..self.cfg.solver
                    };
                    solve_preconditioned(&system.matrix, &system.rhs, Some(&guess), &precond, &opts)?
                }
            };
            picard_iterations += 1;
            let next = State::from_global(self.layout().clone(), &x, t_next)?;
            let converged = match self.cfg.picard {
                None => true,
                Some(p) => {
                    let diff: Vec<f64> = x.iter().zip(lag.to_global()).map(|(a, b)| a - b).collect();
                    norm2(&diff) <= p.tol * norm2(&x).max(f64::MIN_POSITIVE)
                }
            };
            if converged || picard_iterations >= max_outer {
                if !converged {
                    return Err(Error::NoConvergence {
                        iterations: picard_iterations,
                        residual: stats.residual,
                    });
                }
                let probe = match self.cfg.probe {
                    Some([px, py]) => Some(next.probe(px, py)?),
                    None => None,
                };
                let diag = StepDiagnostics {
                    step: n + 1,
                    t: t_next,
                    iterations: stats.iterations,
                    residual: stats.residual,
                    picard_iterations,
                    stagnated: stats.stagnated,
                    probe,
                };
                return Ok((next, diag));
            }
            lag = next;
        }
    }

    /// Runs all `N` steps from `initial` at `t = 0`.
    pub fn run(&self, initial: State) -> Result<Trajectory> {
        self.run_from(initial, 0)
    }

    /// Runs from `state` at level `start` up to level `N`.
    pub fn run_from(&self, state: State, start: usize) -> Result<Trajectory> {
        if start > self.cfg.steps {
            return Err(Error::InvalidArgument(format!(
                "start level {start} beyond {} steps",
                self.cfg.steps
            )));
        }
        let mut states = Vec::with_capacity(self.cfg.steps - start + 1);
        let mut diagnostics = Vec::with_capacity(self.cfg.steps - start);
        states.push(state);
        for n in start..self.cfg.steps {
            let (next, diag) = self.step(states.last().unwrap(), n)?;
            states.push(next);
            diagnostics.push(diag);
        }
        Ok(Trajectory {
            states,
            diagnostics,
            dt: self.cfg.dt(),
            theta: self.cfg.theta,
        })
    }
}

/// Writes `state` as: field count (u64), time (f64), then per field its
/// length (u64) followed by the values, all little-endian.
pub fn write_checkpoint_to<W: Write>(state: &State, mut w: W) -> std::io::Result<()> {
    w.write_all(&(Field::ALL.len() as u64).to_le_bytes())?;
    w.write_all(&state.t.to_le_bytes())?;
    for f in Field::ALL {
        let v = state.field(f);
        w.write_all(&(v.len() as u64).to_le_bytes())?;
        for x in v {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()
}

/// Reads a checkpoint written by [`write_checkpoint_to`] for `layout`.
pub fn read_checkpoint_from<R: Read>(layout: Arc<CoupledLayout>, mut r: R) -> Result<State> {
    let bad = |m: &str| Error::InvalidArgument(format!("malformed checkpoint: {m}"));
    let mut b8 = [0u8; 8];
    let mut next = |r: &mut R| -> Result<[u8; 8]> {
        r.read_exact(&mut b8).map_err(|_| bad("truncated"))?;
        Ok(b8)
    };
    let count = u64::from_le_bytes(next(&mut r)?);
    if count != Field::ALL.len() as u64 {
        return Err(bad(&format!("expected 4 fields, found {count}")));
    }
    let t = f64::from_le_bytes(next(&mut r)?);
    let mut state = State::zeros(layout, t);
    for f in Field::ALL {
        let len = u64::from_le_bytes(next(&mut r)?) as usize;
        let expected = state.field(f).len();
        if len != expected {
            return Err(Error::DimensionMismatch { expected, got: len });
        }
        for i in 0..len {
            state.field_mut(f)[i] = f64::from_le_bytes(next(&mut r)?);
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|_| bad("unreadable tail"))? != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok(state)
}

pub fn write_checkpoint(state: &State, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint_to(state, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(layout: Arc<CoupledLayout>, path: &Path) -> Result<State> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint_from(layout, BufReader::new(file))
}
