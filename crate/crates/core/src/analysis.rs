//! Space-time error norms, observed orders of convergence and the
//! residual-based a posteriori estimator.
//!
//! All time integrals are the discrete sums `Σ_n dt ‖e^{n,θ}‖²` with
//! `e^{n,θ} = w1 e^{n+1} + w0 e^n`, i.e. exactly the θ-level sampling of the
//! scheme. Norm components are kept squared; the combined value is offered
//! both squared and as its square root.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::problem::ProblemCase;
use crate::quadrature::QuadratureRule;
use crate::spaces::{lagrange_basis, ElementGeometry, Field, State};
use crate::timestepper::Trajectory;

/// Quadrature degree used for all error integrals.
pub const ERROR_QUADRATURE_DEGREE: usize = 6;

/// Value and gradient of the four fields at one point.
pub type PointFields = [(f64, [f64; 2]); 4];

/// A time-discrete solution that can be evaluated inside elements.
pub trait FieldSource: Sync {
    /// Number of time levels `N + 1`.
    fn levels(&self) -> usize;
    fn time(&self, level: usize) -> f64;
    fn eval(&self, level: usize, k: usize, bary: [f64; 3], point: [f64; 2]) -> PointFields;
}

impl FieldSource for Trajectory {
    fn levels(&self) -> usize {
        self.states.len()
    }

    fn time(&self, level: usize) -> f64 {
        self.states[level].t
    }

    fn eval(&self, level: usize, k: usize, bary: [f64; 3], _point: [f64; 2]) -> PointFields {
        eval_state(&self.states[level], k, bary)
    }
}

fn eval_state(state: &State, k: usize, bary: [f64; 3]) -> PointFields {
    Field::ALL.map(|f| {
        let space = state.layout.space(f);
        let b = lagrange_basis(space.order(), &space.geometry(k), bary);
        space.eval_function(state.field(f), k, &b)
    })
}

/// The exact solution itself, sampled at given time levels.
#[derive(Debug, Clone)]
pub struct ExactInjection<'a> {
    pub case: &'a ProblemCase,
    pub times: Vec<f64>,
}

impl FieldSource for ExactInjection<'_> {
    fn levels(&self) -> usize {
        self.times.len()
    }

    fn time(&self, level: usize) -> f64 {
        self.times[level]
    }

    fn eval(&self, level: usize, _k: usize, _bary: [f64; 3], point: [f64; 2]) -> PointFields {
        let j = self.case.solution.jets(point[0], point[1], self.times[level]);
        [j.u1, j.u2, j.p, j.c].map(|q| (q.v, q.grad()))
    }
}

/// Squared error components of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub grid: usize,
    pub dofs: usize,
    /// `‖e_u1‖²` in L²(H¹).
    pub u1: f64,
    pub u2: f64,
    /// `‖e_p‖²` in L²(L²).
    pub p: f64,
    /// `‖e_c‖²` in the Ṽ norm: `max_n ‖e_c^n‖² + ‖e_c‖²_{L²(H¹)}`.
    pub c: f64,
    /// The `max_n ‖e_c^n‖²` part of [`ErrorReport::c`].
    pub c_max_l2: f64,
}

impl ErrorReport {
    /// Squared combined V-norm error.
    pub fn combined_sq(&self) -> f64 {
        self.u1 + self.u2 + self.p + self.c
    }

    /// Combined V-norm error.
    pub fn combined(&self) -> f64 {
        self.combined_sq().sqrt()
    }
}

/// Which scalar of an [`ErrorReport`] a study tabulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorMeasure {
    /// The squared V-norm, the quantity bounded by the error estimates.
    SquaredNorm,
    /// The V-norm itself.
    Norm,
}

impl ErrorMeasure {
    pub fn of(self, r: &ErrorReport) -> f64 {
        match self {
            ErrorMeasure::SquaredNorm => r.combined_sq(),
            ErrorMeasure::Norm => r.combined(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorMeasure::SquaredNorm => "squared",
            ErrorMeasure::Norm => "norm",
        }
    }
}

impl std::str::FromStr for ErrorMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "squared" | "squared-norm" => Ok(ErrorMeasure::SquaredNorm),
            "norm" => Ok(ErrorMeasure::Norm),
            other => Err(Error::InvalidArgument(format!("unknown error measure '{other}'"))),
        }
    }
}

/// Per-level squared spatial integrals `[|e_u1|²_1, |e_u2|²_1, |e_p|², |e_c|²_1, |e_c|²]`
/// where the value at level `n` blends levels `n + 1` and `n` with `(w1, w0)`.
fn level_integrals(
    src: &dyn FieldSource,
    case: &ProblemCase,
    mesh: &Mesh,
    quad: &QuadratureRule,
    levels: (usize, usize),
    weights: (f64, f64),
) -> [f64; 5] {
    let (hi, lo) = levels;
    let (w1, w0) = weights;
    let (t_hi, t_lo) = (src.time(hi), src.time(lo));
    let per_element: Vec<[f64; 5]> = (0..mesh.n_triangles())
        .into_par_iter()
        .map(|k| {
            let geom = ElementGeometry::new(mesh.corners(k));
            let mut acc = [0.0; 5];
            for (bary, wq) in quad.points.iter().zip(&quad.weights) {
                let point = geom.point(*bary);
                let w = wq * geom.area;
                let a = src.eval(hi, k, *bary, point);
                let ea = case.solution.jets(point[0], point[1], t_hi);
                let mut e = [(0.0, [0.0; 2]); 4];
                let exact_a = [ea.u1, ea.u2, ea.p, ea.c];
                for f in 0..4 {
                    e[f].0 = w1 * (a[f].0 - exact_a[f].v);
                    e[f].1[0] = w1 * (a[f].1[0] - exact_a[f].dx);
                    e[f].1[1] = w1 * (a[f].1[1] - exact_a[f].dy);
                }
                if w0 != 0.0 {
                    let b = src.eval(lo, k, *bary, point);
                    let eb = case.solution.jets(point[0], point[1], t_lo);
                    let exact_b = [eb.u1, eb.u2, eb.p, eb.c];
                    for f in 0..4 {
                        e[f].0 += w0 * (b[f].0 - exact_b[f].v);
                        e[f].1[0] += w0 * (b[f].1[0] - exact_b[f].dx);
                        e[f].1[1] += w0 * (b[f].1[1] - exact_b[f].dy);
                    }
                }
                let h1 = |q: &(f64, [f64; 2])| q.0 * q.0 + q.1[0] * q.1[0] + q.1[1] * q.1[1];
                acc[0] += w * h1(&e[0]);
                acc[1] += w * h1(&e[1]);
                acc[2] += w * e[2].0 * e[2].0;
                acc[3] += w * h1(&e[3]);
                acc[4] += w * e[3].0 * e[3].0;
            }
            acc
        })
        .collect();
    let mut total = [0.0; 5];
    for a in &per_element {
        for (t, v) in total.iter_mut().zip(a) {
            *t += v;
        }
    }
    total
}

/// Squared error norms of `src` against the exact solution of `case`.
pub fn error_norms_of(
    src: &dyn FieldSource,
    case: &ProblemCase,
    mesh: &Mesh,
    theta: f64,
    grid: usize,
    dofs: usize,
) -> Result<ErrorReport> {
    let levels = src.levels();
    if levels < 2 {
        return Err(Error::InvalidArgument("error norms need at least two time levels".into()));
    }
    let quad = QuadratureRule::triangle(ERROR_QUADRATURE_DEGREE)?;
    let (w1, w0) = (0.5 * (1.0 + theta), 0.5 * (1.0 - theta));
    let mut sums = [0.0; 4];
    let mut c_max: f64 = 0.0;
    for n in 0..levels {
        // ‖e_c^n‖² at each level for the max-in-time part
        let at_n = level_integrals(src, case, mesh, &quad, (n, n), (1.0, 0.0));
        c_max = c_max.max(at_n[4]);
        if n + 1 < levels {
            let dt = src.time(n + 1) - src.time(n);
            let blended = level_integrals(src, case, mesh, &quad, (n + 1, n), (w1, w0));
            for i in 0..4 {
                sums[i] += dt * blended[i];
            }
        }
    }
    Ok(ErrorReport {
        grid,
        dofs,
        u1: sums[0],
        u2: sums[1],
        p: sums[2],
        c: c_max + sums[3],
        c_max_l2: c_max,
    })
}

/// Squared error norms of a computed trajectory.
pub fn error_norms(traj: &Trajectory, case: &ProblemCase) -> Result<ErrorReport> {
    let first = traj
        .states
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty trajectory".into()))?;
    let layout = first.layout.clone();
    if traj.states.iter().any(|s| s.layout.total() != layout.total()) {
        return Err(Error::InvalidArgument("trajectory mixes layouts".into()));
    }
    let mesh = layout.mesh();
    error_norms_of(traj, case, mesh, traj.theta, mesh.nx, layout.total())
}

/// Observed order between errors on meshes refined by a factor 2.
pub fn eoc(e_coarse: f64, e_fine: f64) -> Result<f64> {
    if !(e_coarse > 0.0 && e_fine > 0.0) || !e_coarse.is_finite() || !e_fine.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "order of convergence needs positive finite errors, got {e_coarse} and {e_fine}"
        )));
    }
    Ok((e_coarse / e_fine).ln() / std::f64::consts::LN_2)
}

/// Per-element residual norms of one step and the resulting estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField {
    /// `[‖R1‖, ‖R2‖, ‖R3‖, ‖R4‖]` on each element: both momentum
    /// components, continuity and transport.
    pub element_norms: Vec<[f64; 4]>,
    pub h: f64,
    /// `η² = Σ_k h² Σ_i ‖R_i‖²_k`.
    pub eta_sq: f64,
}

impl ResidualField {
    pub fn eta(&self) -> f64 {
        self.eta_sq.sqrt()
    }
}

/// Strong residuals of the step `prev -> next` at the θ level.
///
/// Coefficients are lagged exactly as in the scheme: the viscosity uses
/// `c^n` and the transport velocity `u^n`.
pub fn aposteriori_estimate(prev: &State, next: &State, case: &ProblemCase, theta: f64) -> Result<ResidualField> {
    let layout = next.layout.clone();
    if prev.layout.total() != layout.total() {
        return Err(Error::DimensionMismatch {
            expected: layout.total(),
            got: prev.layout.total(),
        });
    }
    let dt = next.t - prev.t;
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("step pair must advance in time (dt = {dt})")));
    }
    let mesh = layout.mesh();
    let quad = QuadratureRule::triangle(4)?;
    let (w1, w0) = (0.5 * (1.0 + theta), 0.5 * (1.0 - theta));
    let t_theta = w1 * next.t + w0 * prev.t;
    let vs = layout.space(Field::U1);
    let ps = layout.space(Field::P);
    let cs = layout.space(Field::C);
    let element_norms: Vec<[f64; 4]> = (0..mesh.n_triangles())
        .into_par_iter()
        .map(|k| {
            let sub = mesh.subdomain_of[k];
            let co = case.coefficients(sub);
            let geom = ElementGeometry::new(mesh.corners(k));
            let mut acc = [0.0; 4];
            for (bary, wq) in quad.points.iter().zip(&quad.weights) {
                let w = wq * geom.area;
                let [x, y] = geom.point(*bary);
                let bv = lagrange_basis(vs.order(), &geom, *bary);
                let bp = lagrange_basis(ps.order(), &geom, *bary);
                let bc = lagrange_basis(cs.order(), &geom, *bary);
                let blend = |f: Field, space: &crate::spaces::ScalarSpace, b| {
                    let (vn, gn) = space.eval_function(next.field(f), k, b);
                    let (vp, gp) = space.eval_function(prev.field(f), k, b);
                    let hn = space.eval_hessian(next.field(f), k, b);
                    let hp = space.eval_hessian(prev.field(f), k, b);
                    (
                        w1 * vn + w0 * vp,
                        [w1 * gn[0] + w0 * gp[0], w1 * gn[1] + w0 * gp[1]],
                        [0, 1, 2].map(|i| w1 * hn[i] + w0 * hp[i]),
                        vn - vp,
                    )
                };
                let (u1, g1, h1, _) = blend(Field::U1, vs, &bv);
                let (u2, g2, h2, _) = blend(Field::U2, vs, &bv);
                let (_, gp, _, _) = blend(Field::P, ps, &bp);
                let (c, gc, hc, dc) = blend(Field::C, cs, &bc);
                let (c_lag, _) = cs.eval_function(prev.field(Field::C), k, &bc);
                let (u1_lag, _) = vs.eval_function(prev.field(Field::U1), k, &bv);
                let (u2_lag, _) = vs.eval_function(prev.field(Field::U2), k, &bv);
                let mu = co.viscosity.eval(c_lag);
                let d = co.diffusion.eval(x, y, t_theta);
                let fa = case.forcing_at(sub, x, y, next.t);
                let fb = case.forcing_at(sub, x, y, prev.t);
                let f: [f64; 4] = std::array::from_fn(|i| w1 * fa[i] + w0 * fb[i]);
                let r1 = f[0] - (-mu * (h1[0] + h1[2]) + co.sigma * u1 + gp[0]);
                let r2 = f[1] - (-mu * (h2[0] + h2[2]) + co.sigma * u2 + gp[1]);
                let r3 = f[2] - (g1[0] + g2[1]);
                let div_flux = d.d1 * hc[0] + d.d2 * hc[2] + d.d1_x * gc[0] + d.d2_y * gc[1];
                let r4 = f[3] - (co.phi * dc / dt - div_flux + u1_lag * gc[0] + u2_lag * gc[1] + co.alpha * c);
                for (a, r) in acc.iter_mut().zip([r1, r2, r3, r4]) {
                    *a += w * r * r;
                }
            }
            acc.map(f64::sqrt)
        })
        .collect();
    let h = mesh.h;
    let eta_sq = element_norms
        .iter()
        .map(|r| h * h * r.iter().map(|v| v * v).sum::<f64>())
        .sum();
    Ok(ResidualField { element_norms, h, eta_sq })
}

/// Estimator accumulated over a trajectory: `Σ_n dt η_n²`.
pub fn trajectory_estimate(traj: &Trajectory, case: &ProblemCase) -> Result<f64> {
    let mut total = 0.0;
    for pair in traj.states.windows(2) {
        let r = aposteriori_estimate(&pair[0], &pair[1], case, traj.theta)?;
        total += (pair[1].t - pair[0].t) * r.eta_sq;
    }
    Ok(total)
}

/// `∫_Ω φ c dΩ` of a state.
pub fn total_mass(state: &State, case: &ProblemCase) -> Result<f64> {
    let mesh = state.layout.mesh();
    let cs = state.layout.space(Field::C);
    let quad = QuadratureRule::triangle(2 * cs.order())?;
    let mut total = 0.0;
    for k in 0..mesh.n_triangles() {
        let phi = case.coefficients(mesh.subdomain_of[k]).phi;
        let geom = ElementGeometry::new(mesh.corners(k));
        for (bary, wq) in quad.points.iter().zip(&quad.weights) {
            let b = lagrange_basis(cs.order(), &geom, *bary);
            total += wq * geom.area * phi * cs.eval_function(state.field(Field::C), k, &b).0;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured_mesh, Rect};
    use crate::problem::{ForcingMode, ZeroSolution};
    use crate::spaces::CoupledLayout;
    use std::sync::Arc;

    fn layout(n: usize) -> Arc<CoupledLayout> {
        let mesh = Arc::new(build_structured_mesh(n, n, Rect::UNIT).unwrap());
        Arc::new(CoupledLayout::p1(mesh).unwrap())
    }

    fn interpolated(l: &Arc<CoupledLayout>, case: &ProblemCase, steps: usize) -> Trajectory {
        let states = (0..=steps)
            .map(|n| {
                let t = n as f64 / steps as f64;
                State::interpolate(l.clone(), t, |x, y, t| case.exact_solution(x, y, t))
            })
            .collect();
        Trajectory {
            states,
            diagnostics: Vec::new(),
            dt: 1.0 / steps as f64,
            theta: 1.0,
        }
    }

    #[test]
    fn eoc_examples() {
        assert!((eoc(0.200567, 0.0661861).unwrap() - 1.59948).abs() < 1e-4);
        assert!((eoc(0.27489, 0.0635241).unwrap() - 2.11348).abs() < 1e-4);
        assert_eq!(eoc(0.3, 0.3).unwrap(), 0.0);
        assert!(eoc(0.0, 1.0).is_err());
        assert!(eoc(1.0, -1.0).is_err());
    }

    #[test]
    fn exact_injection_has_zero_error() {
        let case = ProblemCase::brinkman();
        let l = layout(5);
        let src = ExactInjection {
            case: &case,
            times: (0..=4).map(|n| n as f64 / 4.0).collect(),
        };
        let r = error_norms_of(&src, &case, l.mesh(), 1.0, 5, l.total()).unwrap();
        assert_eq!(r.combined_sq(), 0.0);
    }

    #[test]
    fn interpolation_error_orders() {
        let case = ProblemCase::stokes();
        let a = error_norms(&interpolated(&layout(10), &case, 4), &case).unwrap();
        let b = error_norms(&interpolated(&layout(20), &case, 4), &case).unwrap();
        assert!(a.combined() > 0.0);
        // the H1 seminorm dominates: first order in the norm, second in its square
        assert!((eoc(a.combined(), b.combined()).unwrap() - 1.0).abs() < 0.15);
        assert!((eoc(a.combined_sq(), b.combined_sq()).unwrap() - 2.0).abs() < 0.3);
        // the pressure part is a pure L2 error: second order in the norm
        assert!((eoc(a.p.sqrt(), b.p.sqrt()).unwrap() - 2.0).abs() < 0.2);
        assert!(a.c >= a.c_max_l2);
    }

    #[test]
    fn estimator_vanishes_for_zero_problem() {
        let mut case = ProblemCase::stokes();
        case.solution = Arc::new(ZeroSolution);
        case.forcing = ForcingMode::Zero;
        let l = layout(4);
        let a = State::zeros(l.clone(), 0.0);
        let b = State::zeros(l, 0.5);
        let r = aposteriori_estimate(&a, &b, &case, 1.0).unwrap();
        assert_eq!(r.eta_sq, 0.0);
        assert!(aposteriori_estimate(&b, &a, &case, 1.0).is_err());
    }

    #[test]
    fn mass_of_constant() {
        let case = ProblemCase::brinkman();
        let l = layout(3);
        let s = State::interpolate(l, 0.0, |_, _, _| [0.0, 0.0, 0.0, 1.5]);
        assert!((total_mass(&s, &case).unwrap() - 3.0).abs() < 1e-14);
    }
}
