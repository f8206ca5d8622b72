//! Convergence studies and single runs with their file outputs.
//!
//! Every number is written with Rust's locale-independent formatting and a
//! fixed precision, so repeated runs of the same configuration produce
//! byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::analysis::{aposteriori_estimate, eoc, error_norms, error_norms_of, ErrorMeasure, ErrorReport, ExactInjection};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::mesh::{build_structured_mesh, partition_interface, Axis, Rect};
use crate::problem::ProblemCase;
use crate::spaces::{CoupledLayout, Field, State};
use crate::timestepper::{write_checkpoint, Simulation, Trajectory};

/// Everything measured on one grid.
#[derive(Debug, Clone)]
pub struct GridResult {
    pub grid: usize,
    pub errors: ErrorReport,
    /// Per step `(t^{n+1}, η_n²)`.
    pub estimator: Vec<(f64, f64)>,
    /// `Σ_n dt η_n²`.
    pub estimate_sq: f64,
    /// Largest Krylov iteration count of any step.
    pub max_iterations: usize,
    /// Steps whose linear solve ended at a stagnation point.
    pub stagnated_steps: usize,
    /// `(t, [u1, u2, p, c])` at the probe point, including `t = 0`.
    pub probe: Vec<(f64, [f64; 4])>,
}

#[derive(Debug, Clone)]
pub struct StudyRow {
    pub result: GridResult,
    /// Error in the configured measure.
    pub error: f64,
    pub eoc: Option<f64>,
    /// Estimator in the configured measure.
    pub eta: f64,
    pub eoc_eta: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub case: String,
    pub method: String,
    pub measure: ErrorMeasure,
    pub rows: Vec<StudyRow>,
}

fn measure_sq(measure: ErrorMeasure, sq: f64) -> f64 {
    match measure {
        ErrorMeasure::SquaredNorm => sq,
        ErrorMeasure::Norm => sq.sqrt(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

impl ConvergenceReport {
    fn from_results(cfg: &RunConfig, results: Vec<GridResult>) -> Result<Self> {
        let mut rows: Vec<StudyRow> = Vec::with_capacity(results.len());
        for result in results {
            let error = cfg.measure.of(&result.errors);
            let eta = measure_sq(cfg.measure, result.estimate_sq);
            let (eoc_e, eoc_eta) = match rows.last() {
                Some(prev) => (Some(eoc(prev.error, error)?), Some(eoc(prev.eta, eta)?)),
                None => (None, None),
            };
            rows.push(StudyRow {
                result,
                error,
                eoc: eoc_e,
                eta,
                eoc_eta,
            });
        }
        Ok(ConvergenceReport {
            case: cfg.case.name().to_string(),
            method: cfg.method.name().to_string(),
            measure: cfg.measure,
            rows,
        })
    }

    pub fn eocs(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.eoc).collect()
    }

    pub fn eta_eocs(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.eoc_eta).collect()
    }

    /// `grid,error,eoc`.
    pub fn convergence_csv(&self) -> String {
        let mut s = String::from("grid,error,eoc\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.9e},{}", r.result.grid, r.error, fmt_opt(r.eoc));
        }
        s
    }

    /// Per-field squared error components.
    pub fn components_csv(&self) -> String {
        let mut s = String::from("grid,dofs,u1,u2,p,c,c_max_l2,combined_sq,combined,max_iterations,stagnated_steps\n");
        for r in &self.rows {
            let e = &r.result.errors;
            let _ = writeln!(
                s,
                "{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{},{}",
                e.grid,
                e.dofs,
                e.u1,
                e.u2,
                e.p,
                e.c,
                e.c_max_l2,
                e.combined_sq(),
                e.combined(),
                r.result.max_iterations,
                r.result.stagnated_steps
            );
        }
        s
    }

    /// `grid,eta,eoc_eta`.
    pub fn estimator_csv(&self) -> String {
        let mut s = String::from("grid,eta,eoc_eta\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.9e},{}", r.result.grid, r.eta, fmt_opt(r.eoc_eta));
        }
        s
    }

    /// Gnuplot data: `dofs error eta`.
    pub fn dofs_dat(&self) -> String {
        let mut s = String::from("# dofs error eta\n");
        for r in &self.rows {
            let _ = writeln!(s, "{} {:.9e} {:.9e}", r.result.errors.dofs, r.error, r.eta);
        }
        s
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{} / {} (error measure: {})\n{:>10} {:>10} {:>16} {:>10} {:>16} {:>10}\n",
            self.method, self.case, self.measure.name(), "grid", "dofs", "error", "eoc", "eta", "eoc_eta"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>10} {:>10} {:>16.6e} {:>10} {:>16.6e} {:>10}",
                format!("{0}x{0}", r.result.grid),
                r.result.errors.dofs,
                r.error,
                fmt_opt(r.eoc),
                r.eta,
                fmt_opt(r.eoc_eta)
            );
        }
        s
    }

    /// Writes all study files into `dir` with names starting with `stem`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        create_dir(dir)?;
        write_file(&dir.join(format!("{stem}_convergence.csv")), &self.convergence_csv())?;
        write_file(&dir.join(format!("{stem}_components.csv")), &self.components_csv())?;
        write_file(&dir.join(format!("{stem}_estimator.csv")), &self.estimator_csv())?;
        write_file(&dir.join(format!("{stem}_error_vs_dofs.dat")), &self.dofs_dat())?;
        write_file(&dir.join(format!("{stem}_table.txt")), &self.table())?;
        for r in &self.rows {
            if !r.result.probe.is_empty() {
                write_file(
                    &dir.join(format!("{stem}_probe_n{}.dat", r.result.grid)),
                    &probe_text(&r.result.probe, ' ', "# t u1 u2 p c\n"),
                )?;
            }
        }
        Ok(())
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn probe_text(trace: &[(f64, [f64; 4])], sep: char, header: &str) -> String {
    let mut s = String::from(header);
    for (t, v) in trace {
        let _ = writeln!(s, "{t:.9e}{sep}{:.9e}{sep}{:.9e}{sep}{:.9e}{sep}{:.9e}", v[0], v[1], v[2], v[3]);
    }
    s
}

/// Case preset and P1 layout for an `n x n` grid of the unit square.
pub fn setup(cfg: &RunConfig, n: usize) -> Result<(ProblemCase, Arc<CoupledLayout>)> {
    let mut case = ProblemCase::preset(cfg.case);
    case.t_final = cfg.t_final;
    case.split = (Axis::X, cfg.split);
    let mut mesh = build_structured_mesh(n, n, Rect::UNIT)?;
    if case.is_interface() {
        mesh = partition_interface(mesh, Axis::X, cfg.split)?;
    }
    let layout = Arc::new(CoupledLayout::p1(Arc::new(mesh))?);
    Ok((case, layout))
}

/// Exact interpolants at the time levels of the configured loop. Error norms
/// of an injected run are measured against the exact fields themselves, so
/// they vanish up to quadrature rounding; probes and nodal dumps use the
/// interpolants.
fn exact_trajectory(sim: &Simulation) -> Trajectory {
    let cfg = sim.config();
    let case = sim.case();
    let states: Vec<State> = (0..=cfg.steps)
        .map(|n| State::interpolate(sim.layout().clone(), cfg.time(n), |x, y, t| case.exact_solution(x, y, t)))
        .collect();
    Trajectory {
        states,
        diagnostics: Vec::new(),
        dt: cfg.dt(),
        theta: cfg.theta,
    }
}

fn measure(cfg: &RunConfig, n: usize, sim: &Simulation, traj: &Trajectory) -> Result<GridResult> {
    let case = sim.case();
    let errors = if cfg.exact_injection {
        let times = traj.states.iter().map(|s| s.t).collect();
        let layout = sim.layout();
        let src = ExactInjection { case, times };
        error_norms_of(&src, case, layout.mesh(), traj.theta, n, layout.total())?
    } else {
        error_norms(traj, case)?
    };
    let mut estimator = Vec::with_capacity(traj.states.len().saturating_sub(1));
    let mut estimate_sq = 0.0;
    for pair in traj.states.windows(2) {
        let r = aposteriori_estimate(&pair[0], &pair[1], case, traj.theta)?;
        estimate_sq += (pair[1].t - pair[0].t) * r.eta_sq;
        estimator.push((pair[1].t, r.eta_sq));
    }
    let probe = match cfg.probe {
        Some([x, y]) => traj
            .states
            .iter()
            .map(|s| Ok((s.t, s.probe(x, y)?)))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    Ok(GridResult {
        grid: n,
        errors,
        estimator,
        estimate_sq,
        max_iterations: traj.diagnostics.iter().map(|d| d.iterations).max().unwrap_or(0),
        stagnated_steps: traj.diagnostics.iter().filter(|d| d.stagnated).count(),
        probe,
    })
}

fn solve_grid(cfg: &RunConfig, n: usize) -> Result<(Simulation, Trajectory)> {
    let (case, layout) = setup(cfg, n)?;
    let sim = Simulation::new(layout, case, cfg.time_loop(n)?)?;
    let traj = if cfg.exact_injection {
        exact_trajectory(&sim)
    } else {
        sim.run(sim.initial_state())?
    };
    Ok((sim, traj))
}

/// Solves and measures one grid.
pub fn run_grid(cfg: &RunConfig, n: usize) -> Result<GridResult> {
    let (sim, traj) = solve_grid(cfg, n)?;
    measure(cfg, n, &sim, &traj)
}

/// Runs every grid of `cfg`, computes EOCs and writes the study files when an
/// output directory is set. A failing grid aborts the study; the rows of the
/// grids before it are still written.
pub fn run_convergence_study(cfg: &RunConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let attempt = |n: usize| run_grid(cfg, n).map_err(|e| (n, e));
    let outcomes: Vec<std::result::Result<GridResult, (usize, Error)>> = if cfg.parallel_grids {
        cfg.grids.par_iter().map(|&n| attempt(n)).collect()
    } else {
        let mut v = Vec::new();
        for &n in &cfg.grids {
            let r = attempt(n);
            let failed = r.is_err();
            v.push(r);
            if failed {
                break;
            }
        }
        v
    };
    let mut results = Vec::new();
    let mut failure = None;
    for o in outcomes {
        match o {
            Ok(r) => results.push(r),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    let report = ConvergenceReport::from_results(cfg, results)?;
    if let Some(dir) = &cfg.out {
        report.write(dir, &cfg.stem())?;
    }
    match failure {
        Some((grid, source)) => Err(Error::Grid {
            grid,
            source: Box::new(source),
        }),
        None => Ok(report),
    }
}

/// Outputs of [`run_single`].
#[derive(Debug, Clone)]
pub struct SingleRun {
    pub result: GridResult,
    pub final_state: State,
    pub files: Vec<PathBuf>,
}

/// Runs the single grid of `cfg` and, when an output directory is set, writes
/// `checkpoint.bin`, `probe.csv`, `estimator.csv` and the nodal dump
/// `nodes.dat` / `elements.dat` of the final state. The probe defaults to the
/// domain centre.
pub fn run_single(cfg: &RunConfig) -> Result<SingleRun> {
    cfg.validate()?;
    let n = match cfg.grids[..] {
        [n] => n,
        _ => return Err(Error::InvalidArgument(format!("a single run needs exactly one grid, got {:?}", cfg.grids))),
    };
    let mut cfg = cfg.clone();
    cfg.probe.get_or_insert([0.5, 0.5]);
    let grid_err = |e| Error::Grid {
        grid: n,
        source: Box::new(e),
    };
    let (sim, traj) = solve_grid(&cfg, n).map_err(grid_err)?;
    let result = measure(&cfg, n, &sim, &traj).map_err(grid_err)?;
    let final_state = traj.final_state().clone();
    let mut files = Vec::new();
    if let Some(dir) = &cfg.out {
        create_dir(dir)?;
        let path = dir.join("checkpoint.bin");
        write_checkpoint(&final_state, &path)?;
        files.push(path);

        let path = dir.join("probe.csv");
        write_file(&path, &probe_text(&result.probe, ',', "t,u1,u2,p,c\n"))?;
        files.push(path);

        let mut est = String::from("step,t,eta_sq\n");
        for (i, (t, e)) in result.estimator.iter().enumerate() {
            let _ = writeln!(est, "{},{t:.9e},{e:.9e}", i + 1);
        }
        let path = dir.join("estimator.csv");
        write_file(&path, &est)?;
        files.push(path);

        let path = dir.join("nodes.dat");
        write_file(&path, &nodal_dump(&final_state))?;
        files.push(path);

        let path = dir.join("elements.dat");
        let mut buf = Vec::new();
        final_state
            .layout
            .mesh()
            .write_elements(&mut buf)
            .map_err(|e| Error::io(&path, e))?;
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
        files.push(path);
    }
    Ok(SingleRun {
        result,
        final_state,
        files,
    })
}

/// One line `x y u1 u2 p c` per vertex of a piecewise-linear state.
pub fn nodal_dump(state: &State) -> String {
    let layout = &state.layout;
    let coords = layout.space(Field::U1).dof_coords();
    let mut s = String::from("# x y u1 u2 p c\n");
    for (i, [x, y]) in coords.iter().enumerate() {
        let v = Field::ALL.map(|f| state.field(f)[i]);
        let _ = writeln!(s, "{x:.9e} {y:.9e} {:.9e} {:.9e} {:.9e} {:.9e}", v[0], v[1], v[2], v[3]);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::CaseKind;

    fn small(case: CaseKind) -> RunConfig {
        RunConfig {
            case,
            grids: vec![4, 8],
            ..RunConfig::default()
        }
    }

    #[test]
    fn single_grid_has_empty_eoc() {
        let cfg = RunConfig {
            grids: vec![4],
            ..RunConfig::default()
        };
        let report = run_convergence_study(&cfg).unwrap();
        assert_eq!(report.rows.len(), 1);
        let csv = report.convergence_csv();
        let line = csv.lines().nth(1).unwrap();
        assert!(line.starts_with("4,") && line.ends_with(','), "{line}");
    }

    #[test]
    fn errors_decrease_on_refinement() {
        let report = run_convergence_study(&small(CaseKind::Brinkman)).unwrap();
        assert!(report.rows[1].error < report.rows[0].error);
        assert!(report.eocs()[0] > 1.0);
    }

    #[test]
    fn parallel_grids_match_sequential() {
        let seq = run_convergence_study(&small(CaseKind::Stokes)).unwrap();
        let par = run_convergence_study(&RunConfig {
            parallel_grids: true,
            ..small(CaseKind::Stokes)
        })
        .unwrap();
        assert_eq!(seq.convergence_csv(), par.convergence_csv());
        assert_eq!(seq.components_csv(), par.components_csv());
    }

    #[test]
    fn partial_results_written_on_failure() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(CaseKind::Stokes);
        // x = 0.3 is a grid line of the 10x10 mesh but not of the 4x4 one.
        cfg.case = CaseKind::InterfaceStokesBrinkman;
        cfg.grids = vec![10, 12];
        cfg.split = 0.3;
        cfg.out = Some(dir.path().to_path_buf());
        match run_convergence_study(&cfg) {
            Err(Error::Grid { grid: 12, .. }) => {}
            other => panic!("{other:?}"),
        }
        let csv = fs::read_to_string(dir.path().join("interface_asgs_convergence.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2, "{csv}");
        assert!(csv.lines().nth(1).unwrap().starts_with("10,"));
    }

    #[test]
    fn exact_injection_probe_and_zero_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            grids: vec![4],
            exact_injection: true,
            out: Some(dir.path().join("nested/out")),
            ..RunConfig::default()
        };
        let run = run_single(&cfg).unwrap();
        assert!(run.result.errors.combined() < 1e-10);
        for (t, v) in &run.result.probe {
            assert!((v[3] - 0.0625 * t).abs() < 1e-14, "t = {t}: {}", v[3]);
        }
        let probe = fs::read_to_string(dir.path().join("nested/out/probe.csv")).unwrap();
        assert!(probe.starts_with("t,u1,u2,p,c\n"));
        assert_eq!(probe.lines().count(), 1 + 5);
        assert_eq!(run.files.len(), 5);
        let nodes = fs::read_to_string(dir.path().join("nested/out/nodes.dat")).unwrap();
        assert_eq!(nodes.lines().count(), 1 + 25);
    }

    #[test]
    fn single_run_needs_one_grid() {
        assert!(run_single(&small(CaseKind::Stokes)).is_err());
    }

    #[test]
    fn unwritable_output_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let cfg = RunConfig {
            grids: vec![2],
            exact_injection: true,
            out: Some(blocker.join("sub")),
            ..RunConfig::default()
        };
        assert!(matches!(run_single(&cfg), Err(Error::Io { .. })));
    }
}
