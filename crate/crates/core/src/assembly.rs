//! Monolithic assembly of the θ-scheme system for `(u1, u2, p, c)`.
//!
//! Every element contributes two local operators: the time-mass part `Mt`
//! (nonzero only in concentration columns, since the flow is quasi-static)
//! and the spatial operator `B`. With weights `w1 = (1+θ)/2` and
//! `w0 = (1-θ)/2` the local system is
//!
//! ```text
//! (Mt/dt + w1 B) U^{n+1} = (Mt/dt - w0 B) U^n + L^{n,θ}
//! ```
//!
//! The stabilized variant adds, per element, the strong residual tested
//! against the negative adjoint operator; a zero parameter set reproduces the
//! Galerkin system exactly. Viscosity and the advecting velocity are taken
//! from a lagged state so that each step is linear.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::SparseMatrix;
use crate::mesh::Subdomain;
use crate::problem::ProblemCase;
use crate::quadrature::{gauss_segment3, QuadratureRule};
use crate::spaces::{lagrange_basis, BasisEval, CoupledLayout, ElementGeometry, Field, State};
use crate::stabilization::{StabilizationParams, StabilizationSet};

/// Discretization method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Galerkin,
    Asgs,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Galerkin => "galerkin",
            Method::Asgs => "asgs",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "galerkin" => Ok(Method::Galerkin),
            "asgs" => Ok(Method::Asgs),
            other => Err(Error::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyOptions {
    pub quadrature_degree: usize,
    /// Skip second-derivative terms of piecewise-linear spaces, which vanish.
    pub skip_vanishing_terms: bool,
    /// Fix pressure dof 0 to the exact pressure to remove the constant mode.
    pub pin_pressure: bool,
    /// Keep `∂xD1 ∂x c + ∂yD2 ∂y c` in the stabilizing transport residual.
    /// Off by default: the diffusive flux divergence of the discrete
    /// concentration is then only its second-derivative part, which vanishes
    /// for linear elements. Keeping these terms adds an anti-diffusive
    /// `-τ (∂xD1)² ∂x c ∂x d` contribution that destabilizes coarse meshes.
    pub coefficient_gradient_terms: bool,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions {
            quadrature_degree: 4,
            skip_vanishing_terms: true,
            pin_pressure: true,
            coefficient_gradient_terms: false,
        }
    }
}

/// Data of one time step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    /// Solution at `t^n`.
    pub prev: &'a State,
    /// State supplying the viscosity concentration and the advecting velocity.
    pub lag: &'a State,
    pub t_next: f64,
    pub dt: f64,
    pub theta: f64,
}

impl StepContext<'_> {
    pub fn weights(&self) -> (f64, f64) {
        (0.5 * (1.0 + self.theta), 0.5 * (1.0 - self.theta))
    }

    pub fn t_prev(&self) -> f64 {
        self.t_next - self.dt
    }

    /// `t^{n,θ}`. An infinite step (steady problem) requires `θ = 1`.
    pub fn t_theta(&self) -> f64 {
        let (w1, w0) = self.weights();
        if w0 == 0.0 {
            self.t_next
        } else {
            w1 * self.t_next + w0 * self.t_prev()
        }
    }

    /// `w1 f(t^{n+1}) + w0 f(t^n)`, skipping the old level when `w0 = 0`.
    fn blend<const N: usize>(&self, f: impl Fn(f64) -> [f64; N]) -> [f64; N] {
        let (w1, w0) = self.weights();
        let new = f(self.t_next);
        if w0 == 0.0 {
            return new.map(|v| w1 * v);
        }
        let old = f(self.t_prev());
        std::array::from_fn(|i| w1 * new[i] + w0 * old[i])
    }
}

/// Sparse system together with its pending Dirichlet constraints.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    /// `(global dof, value)`; applied by [`AssembledSystem::apply_constraints`].
    pub constraints: Vec<(usize, f64)>,
}

impl AssembledSystem {
    /// Eliminates the stored constraints: rows and columns of constrained
    /// dofs are zeroed, the diagonal set to one and the known column
    /// contributions moved to the right-hand side. The pattern is kept.
    pub fn apply_constraints(&mut self) -> Result<()> {
        let n = self.matrix.dim();
        let mut value: Vec<Option<f64>> = vec![None; n];
        for &(dof, v) in &self.constraints {
            if dof >= n {
                return Err(Error::InvalidArgument(format!("constrained dof {dof} outside system of size {n}")));
            }
            match value[dof] {
                Some(first) if first != v => {
                    return Err(Error::ConflictingConstraint { dof, first, second: v });
                }
                _ => value[dof] = Some(v),
            }
        }
        let row_ptr = self.matrix.row_ptr().to_vec();
        let cols = self.matrix.col_idx().to_vec();
        let vals = self.matrix.values_mut();
        for i in 0..n {
            let range = row_ptr[i]..row_ptr[i + 1];
            if let Some(g) = value[i] {
                for p in range {
                    vals[p] = if cols[p] == i { 1.0 } else { 0.0 };
                }
                self.rhs[i] = g;
            } else {
                for p in range {
                    if let Some(g) = value[cols[p]] {
                        self.rhs[i] -= vals[p] * g;
                        vals[p] = 0.0;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Adds `values` to the constraints of `system` and eliminates them.
pub fn apply_dirichlet(system: &mut AssembledSystem, values: &[(usize, f64)]) -> Result<()> {
    system.constraints.extend_from_slice(values);
    system.apply_constraints()
}

/// Element-local contribution scattered into the global system.
struct Local {
    dofs: Vec<usize>,
    mat: Vec<f64>,
    rhs: Vec<f64>,
}

/// Boundary edge with its owning triangle and outward unit normal.
#[derive(Debug, Clone, Copy)]
struct BoundaryFace {
    triangle: usize,
    vertices: [usize; 2],
    normal: [f64; 2],
    length: f64,
}

/// Reusable assembler for one layout and problem; owns the sparsity pattern.
#[derive(Debug, Clone)]
pub struct Assembler {
    layout: Arc<CoupledLayout>,
    case: ProblemCase,
    opts: AssemblyOptions,
    quad: QuadratureRule,
    pattern: SparseMatrix,
    faces: Vec<BoundaryFace>,
}

/// Barycentric coordinates in triangle `tri` of the point `s` along the edge `a -> b`.
fn edge_bary(tri: &[usize; 3], a: usize, b: usize, s: f64) -> [f64; 3] {
    let mut bary = [0.0; 3];
    for (l, &v) in tri.iter().enumerate() {
        if v == a {
            bary[l] = 1.0 - s;
        } else if v == b {
            bary[l] = s;
        }
    }
    bary
}

impl Assembler {
    pub fn new(layout: Arc<CoupledLayout>, case: ProblemCase, opts: AssemblyOptions) -> Result<Self> {
        case.validate()?;
        let quad = QuadratureRule::triangle(opts.quadrature_degree)?;
        let mesh = layout.mesh().clone();
        if case.is_interface() && mesh.interface_edges.is_empty() {
            return Err(Error::InvalidArgument(
                "interface case needs a mesh partitioned along the interface".into(),
            ));
        }

        // every pair of dofs of one element couples, for all field pairs
        let n = layout.total();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut dofs = Vec::new();
        for k in 0..mesh.n_triangles() {
            Self::element_dofs(&layout, k, &mut dofs);
            for &i in &dofs {
                rows[i].extend_from_slice(&dofs);
            }
        }
        for r in &mut rows {
            r.sort_unstable();
            r.dedup();
        }
        let pattern = SparseMatrix::from_pattern(rows);

        let mut faces = Vec::new();
        if case.neumann_remainder {
            let owner: std::collections::HashMap<(usize, usize), usize> = mesh
                .edges()
                .into_iter()
                .filter_map(|e| {
                    let [a, b] = e.vertices;
                    e.triangles[0].map(|t| ((a.min(b), a.max(b)), t))
                })
                .collect();
            for &([a, b], _) in &mesh.boundary_edges {
                let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
                let (dx, dy) = (pb[0] - pa[0], pb[1] - pa[1]);
                let length = dx.hypot(dy);
                faces.push(BoundaryFace {
                    triangle: owner[&(a.min(b), a.max(b))],
                    vertices: [a, b],
                    // boundary edges run counter-clockwise
                    normal: [dy / length, -dx / length],
                    length,
                });
            }
        }
        Ok(Assembler {
            layout,
            case,
            opts,
            quad,
            pattern,
            faces,
        })
    }

    pub fn layout(&self) -> &Arc<CoupledLayout> {
        &self.layout
    }

    pub fn case(&self) -> &ProblemCase {
        &self.case
    }

    pub fn options(&self) -> &AssemblyOptions {
        &self.opts
    }

    /// Global dofs of element `k` in local block order `u1, u2, p, c`.
    fn element_dofs(layout: &CoupledLayout, k: usize, out: &mut Vec<usize>) {
        out.clear();
        for f in Field::ALL {
            let off = layout.offset(f);
            out.extend(layout.space(f).cell_dofs(k).iter().map(|d| off + d));
        }
    }

    /// Dirichlet data at time `t`: exact velocity on the whole boundary and,
    /// if enabled, pressure dof 0.
    pub fn dirichlet_values(&self, t: f64) -> Vec<(usize, f64)> {
        let vs = self.layout.space(Field::U1);
        let coords = vs.dof_coords();
        let mut out = Vec::new();
        for d in vs.all_boundary_dofs() {
            let [x, y] = coords[d];
            let [u1, u2, _, _] = self.case.exact_solution(x, y, t);
            out.push((self.layout.global(Field::U1, d), u1));
            out.push((self.layout.global(Field::U2, d), u2));
        }
        if self.opts.pin_pressure {
            let [x, y] = self.layout.space(Field::P).dof_coords()[0];
            out.push((self.layout.global(Field::P, 0), self.case.exact_solution(x, y, t)[2]));
        }
        out
    }

    fn check_state(&self, s: &State) -> Result<()> {
        if s.layout.total() != self.layout.total() {
            return Err(Error::DimensionMismatch {
                expected: self.layout.total(),
                got: s.layout.total(),
            });
        }
        Ok(())
    }

    /// Assembles the step system; `stab = None` gives the Galerkin method.
    /// Constraints are listed but not yet applied.
    pub fn assemble(&self, ctx: &StepContext, stab: Option<&StabilizationSet>) -> Result<AssembledSystem> {
        self.assemble_in_order(ctx, stab, None)
    }

    /// As [`Assembler::assemble`], visiting elements in the given order.
    pub fn assemble_in_order(
        &self,
        ctx: &StepContext,
        stab: Option<&StabilizationSet>,
        order: Option<&[usize]>,
    ) -> Result<AssembledSystem> {
        self.check_state(ctx.prev)?;
        self.check_state(ctx.lag)?;
        if !(ctx.dt > 0.0) || !(0.0..=1.0).contains(&ctx.theta) || (ctx.dt.is_infinite() && ctx.theta != 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need dt > 0 and theta in [0, 1], theta = 1 for a steady solve (dt={}, theta={})",
                ctx.dt, ctx.theta
            )));
        }
        let mesh = self.layout.mesh();
        let ne = mesh.n_triangles();
        let default_order: Vec<usize>;
        let order = match order {
            Some(o) => o,
            None => {
                default_order = (0..ne).collect();
                &default_order
            }
        };
        let prev_global = ctx.prev.to_global();
        let locals: Vec<Local> = order
            .par_iter()
            .map(|&k| {
                let params = stab.map(|s| *s.get(mesh.subdomain_of[k]));
                self.element(k, ctx, params.as_ref(), &prev_global)
            })
            .collect();

        let mut matrix = self.pattern.clone();
        let mut rhs = vec![0.0; self.layout.total()];
        for loc in &locals {
            let n = loc.dofs.len();
            for (a, &i) in loc.dofs.iter().enumerate() {
                rhs[i] += loc.rhs[a];
                for (b, &j) in loc.dofs.iter().enumerate() {
                    let v = loc.mat[a * n + b];
                    if v != 0.0 {
                        matrix.add_to(i, j, v);
                    }
                }
            }
        }
        let mut system = AssembledSystem {
            matrix,
            rhs,
            constraints: Vec::new(),
        };
        if self.case.is_interface() {
            let (w1, w0) = ctx.weights();
            let sigma_b = self.case.coefficients(Subdomain::Brinkman).sigma;
            self.add_bjs(&mut system, w1, Some((w0, &prev_global)), sigma_b)?;
        }
        if self.case.neumann_remainder {
            self.add_neumann_remainder(&mut system, ctx);
        }
        system.constraints = self.dirichlet_values(ctx.t_next);
        Ok(system)
    }

    /// Local matrix and right-hand side of element `k`.
    fn element(&self, k: usize, ctx: &StepContext, stab: Option<&StabilizationParams>, prev: &[f64]) -> Local {
        let layout = &self.layout;
        let mesh = layout.mesh();
        let sub = mesh.subdomain_of[k];
        let co = self.case.coefficients(sub);
        let (w1, w0) = ctx.weights();
        let t_theta = ctx.t_theta();
        let vs = layout.space(Field::U1);
        let ps = layout.space(Field::P);
        let cs = layout.space(Field::C);
        let (nu, np, nc) = (vs.n_local(), ps.n_local(), cs.n_local());
        let (ou2, op, oc) = (nu, 2 * nu, 2 * nu + np);
        let n = 2 * nu + np + nc;
        let mut dofs = Vec::with_capacity(n);
        Self::element_dofs(layout, k, &mut dofs);

        let mut bmat = vec![0.0; n * n];
        let mut mt = vec![0.0; n * n];
        let mut load = vec![0.0; n];
        let geom = ElementGeometry::new(mesh.corners(k));
        let zero = StabilizationParams::zero();
        let st = stab.unwrap_or(&zero);
        let stabilized = stab.is_some();
        let adj = st.transport_adjoint_weight();
        let kappa = st.transport_mass_weight();
        let keep_vel_2nd = !(self.opts.skip_vanishing_terms && vs.is_piecewise_linear());
        let keep_c_2nd = !(self.opts.skip_vanishing_terms && cs.is_piecewise_linear());

        // per-dof strong operator values, reused across the quadrature loop
        let mut r_flow = vec![[0.0f64; 2]; 2 * nu + np];
        let mut t_flow = vec![[0.0f64; 2]; 2 * nu + np];
        let mut div = vec![0.0f64; 2 * nu];
        let mut op_c = vec![0.0f64; nc];
        let mut t_c = vec![0.0f64; nc];

        for (bary, wq) in self.quad.points.iter().zip(&self.quad.weights) {
            let w = wq * geom.area;
            let [x, y] = geom.point(*bary);
            let bv: BasisEval = lagrange_basis(vs.order(), &geom, *bary);
            let bp = lagrange_basis(ps.order(), &geom, *bary);
            let bc = lagrange_basis(cs.order(), &geom, *bary);
            let (c_lag, _) = cs.eval_function(ctx.lag.field(Field::C), k, &bc);
            let (u1_lag, _) = vs.eval_function(ctx.lag.field(Field::U1), k, &bv);
            let (u2_lag, _) = vs.eval_function(ctx.lag.field(Field::U2), k, &bv);
            let mu = co.viscosity.eval(c_lag);
            let dv = co.diffusion.eval(x, y, t_theta);
            let f = ctx.blend(|t| self.case.forcing_at(sub, x, y, t));

            // Galerkin flow terms
            for i in 0..nu {
                let (ni, gi) = (bv.values[i], bv.grads[i]);
                for j in 0..nu {
                    let (nj, gj) = (bv.values[j], bv.grads[j]);
                    let a = w * (mu * (gi[0] * gj[0] + gi[1] * gj[1]) + co.sigma * ni * nj);
                    bmat[i * n + j] += a;
                    bmat[(ou2 + i) * n + ou2 + j] += a;
                }
                for j in 0..np {
                    let pj = bp.values[j];
                    // -b(v, p) and +b(u, q)
                    bmat[i * n + op + j] -= w * gi[0] * pj;
                    bmat[(ou2 + i) * n + op + j] -= w * gi[1] * pj;
                    bmat[(op + j) * n + i] += w * pj * gi[0];
                    bmat[(op + j) * n + ou2 + i] += w * pj * gi[1];
                }
                load[i] += w * f[0] * ni;
                load[ou2 + i] += w * f[1] * ni;
            }
            for j in 0..np {
                load[op + j] += w * f[2] * bp.values[j];
            }

            // Galerkin transport terms
            for i in 0..nc {
                let (ni, gi) = (bc.values[i], bc.grads[i]);
                for j in 0..nc {
                    let (nj, gj) = (bc.values[j], bc.grads[j]);
                    bmat[(oc + i) * n + oc + j] += w
                        * (dv.d1 * gi[0] * gj[0]
                            + dv.d2 * gi[1] * gj[1]
                            + ni * (u1_lag * gj[0] + u2_lag * gj[1])
                            + co.alpha * ni * nj);
                    mt[(oc + i) * n + oc + j] += w * co.phi * ni * nj;
                }
                load[oc + i] += w * f[3] * ni;
            }

            if !stabilized {
                continue;
            }

            // momentum residual against -L* applied to (v, q)
            for i in 0..nu {
                let lap = if keep_vel_2nd { bv.laplacian(i) } else { 0.0 };
                let s = -mu * lap + co.sigma * bv.values[i];
                r_flow[i] = [s, 0.0];
                r_flow[ou2 + i] = [0.0, s];
                t_flow[i] = [-s, 0.0];
                t_flow[ou2 + i] = [0.0, -s];
                div[i] = bv.grads[i][0];
                div[ou2 + i] = bv.grads[i][1];
            }
            for j in 0..np {
                r_flow[op + j] = bp.grads[j];
                t_flow[op + j] = bp.grads[j];
            }
            let (t1, t2) = (st.tau1 * w, st.tau2 * w);
            for a in 0..2 * nu + np {
                let ta = t_flow[a];
                for b in 0..2 * nu + np {
                    let rb = r_flow[b];
                    bmat[a * n + b] += t1 * (rb[0] * ta[0] + rb[1] * ta[1]);
                }
                load[a] += t1 * (f[0] * ta[0] + f[1] * ta[1]);
            }
            for a in 0..2 * nu {
                for b in 0..2 * nu {
                    bmat[a * n + b] += t2 * div[a] * div[b];
                }
                load[a] += t2 * f[2] * div[a];
            }

            // transport residual against -L* d and the subscale mass term
            for i in 0..nc {
                let g = bc.grads[i];
                let second = if keep_c_2nd {
                    dv.d1 * bc.hessians[i][0] + dv.d2 * bc.hessians[i][2]
                } else {
                    0.0
                };
                let flux = if self.opts.coefficient_gradient_terms {
                    second + dv.d1_x * g[0] + dv.d2_y * g[1]
                } else {
                    second
                };
                let conv = u1_lag * g[0] + u2_lag * g[1];
                op_c[i] = -flux + conv + co.alpha * bc.values[i];
                t_c[i] = flux + conv - co.alpha * bc.values[i];
            }
            for i in 0..nc {
                let test = w * (adj * t_c[i] - kappa * bc.values[i]);
                if test == 0.0 {
                    continue;
                }
                for j in 0..nc {
                    bmat[(oc + i) * n + oc + j] += test * op_c[j];
                    mt[(oc + i) * n + oc + j] += test * co.phi * bc.values[j];
                }
                load[oc + i] += test * f[3];
            }
        }

        // A = Mt/dt + w1 B,  b = (Mt/dt - w0 B) U^n + L
        let un: Vec<f64> = dofs.iter().map(|&d| prev[d]).collect();
        let mut mat = vec![0.0; n * n];
        let mut rhs = load;
        for a in 0..n {
            let mut acc = 0.0;
            for b in 0..n {
                let m = mt[a * n + b] / ctx.dt;
                let bb = bmat[a * n + b];
                mat[a * n + b] = m + w1 * bb;
                acc += (m - w0 * bb) * un[b];
            }
            rhs[a] += acc;
        }
        Local { dofs, mat, rhs }
    }

    /// Values, aligned with the system pattern, of `Σ_k τ_k ∫ ∇p·∇q` with rows
    /// and columns of the `constrained` dofs left out. Added to a Galerkin
    /// matrix it gives a preconditioner free of zero pressure pivots.
    pub fn pressure_laplacian(&self, tau: &[f64; 3], constrained: &[usize]) -> Vec<f64> {
        let layout = &self.layout;
        let mesh = layout.mesh();
        let ps = layout.space(Field::P);
        let mut skip = vec![false; layout.total()];
        for &d in constrained {
            skip[d] = true;
        }
        let quad = QuadratureRule::triangle(2 * (ps.order() - 1)).expect("low degree rule exists");
        let mut values = vec![0.0; self.pattern.nnz()];
        for k in 0..mesh.n_triangles() {
            let geom = ElementGeometry::new(mesh.corners(k));
            let t = tau[mesh.subdomain_of[k].index()];
            let dofs: Vec<usize> = ps.cell_dofs(k).iter().map(|&d| layout.global(Field::P, d)).collect();
            for (bary, wq) in quad.points.iter().zip(&quad.weights) {
                let b = lagrange_basis(ps.order(), &geom, *bary);
                for (i, &gi) in dofs.iter().enumerate() {
                    for (j, &gj) in dofs.iter().enumerate() {
                        if skip[gi] || skip[gj] {
                            continue;
                        }
                        let slot = self.pattern.slot(gi, gj).expect("pressure pairs are in the pattern");
                        values[slot] += t * wq * geom.area * (b.grads[i][0] * b.grads[j][0] + b.grads[i][1] * b.grads[j][1]);
                    }
                }
            }
        }
        values
    }

    /// Local interface matrices `(dofs, M)` of `∫_Γ (u·t)(v·t)` per edge.
    fn bjs_locals(&self) -> Vec<(Vec<usize>, Vec<f64>)> {
        let layout = &self.layout;
        let mesh = layout.mesh();
        let vs = layout.space(Field::U1);
        let nu = vs.n_local();
        let mut out = Vec::with_capacity(mesh.interface_edges.len());
        for e in &mesh.interface_edges {
            let k = e.stokes_triangle;
            let geom = ElementGeometry::new(mesh.corners(k));
            let [a, b] = e.vertices;
            let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
            let len = (pb[0] - pa[0]).hypot(pb[1] - pa[1]);
            let t = e.tangent();
            let mut dofs = Vec::with_capacity(2 * nu);
            dofs.extend(vs.cell_dofs(k).iter().map(|&d| layout.global(Field::U1, d)));
            dofs.extend(vs.cell_dofs(k).iter().map(|&d| layout.global(Field::U2, d)));
            let m = 2 * nu;
            let mut mat = vec![0.0; m * m];
            for (s, wq) in gauss_segment3() {
                let bary = edge_bary(&mesh.triangles[k], a, b, s);
                let bv = lagrange_basis(vs.order(), &geom, bary);
                let tr: Vec<f64> = (0..m)
                    .map(|i| if i < nu { bv.values[i] * t[0] } else { bv.values[i - nu] * t[1] })
                    .collect();
                for i in 0..m {
                    for j in 0..m {
                        mat[i * m + j] += wq * len * tr[i] * tr[j];
                    }
                }
            }
            out.push((dofs, mat));
        }
        out
    }

    /// Adds `weight (α/√σ_B) ∫_Γ (u·t)(v·t)` to the matrix and, with history,
    /// subtracts `w0` times the same form applied to `U^n` from the rhs.
    fn add_bjs(
        &self,
        system: &mut AssembledSystem,
        weight: f64,
        history: Option<(f64, &[f64])>,
        sigma_b: f64,
    ) -> Result<()> {
        if self.layout.mesh().interface_edges.is_empty() {
            return Err(Error::InvalidArgument("mesh has no interface edges".into()));
        }
        if !(sigma_b > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "interface slip term needs sigma_B > 0, got {sigma_b}"
            )));
        }
        let coef = self.case.alpha_bjs / sigma_b.sqrt();
        if coef == 0.0 {
            return Ok(());
        }
        for (dofs, mat) in self.bjs_locals() {
            let m = dofs.len();
            for (a, &i) in dofs.iter().enumerate() {
                for (b, &j) in dofs.iter().enumerate() {
                    let v = coef * mat[a * m + b];
                    system.matrix.add_to(i, j, weight * v);
                    if let Some((w0, prev)) = history {
                        system.rhs[i] -= w0 * v * prev[j];
                    }
                }
            }
        }
        Ok(())
    }

    /// Weak boundary source `∫_∂Ω (D ∇c_exact · n) d` at the θ level.
    fn add_neumann_remainder(&self, system: &mut AssembledSystem, ctx: &StepContext) {
        let layout = &self.layout;
        let mesh = layout.mesh();
        let cs = layout.space(Field::C);
        for face in &self.faces {
            let k = face.triangle;
            let geom = ElementGeometry::new(mesh.corners(k));
            let sub = mesh.subdomain_of[k];
            let [a, b] = face.vertices;
            for (s, wq) in gauss_segment3() {
                let bary = edge_bary(&mesh.triangles[k], a, b, s);
                let [x, y] = geom.point(bary);
                let [g] = ctx.blend(|t| [self.case.neumann_flux(sub, x, y, t, face.normal)]);
                let bc = lagrange_basis(cs.order(), &geom, bary);
                for (i, &d) in cs.cell_dofs(k).iter().enumerate() {
                    system.rhs[layout.global(Field::C, d)] += wq * face.length * g * bc.values[i];
                }
            }
        }
    }
}

/// Galerkin system for one step from `state_prev` at `t_target - dt`.
pub fn assemble_galerkin(
    layout: Arc<CoupledLayout>,
    case: &ProblemCase,
    state_prev: &State,
    t_target: f64,
    dt: f64,
    theta: f64,
) -> Result<AssembledSystem> {
    let asm = Assembler::new(layout, case.clone(), AssemblyOptions::default())?;
    let ctx = StepContext {
        prev: state_prev,
        lag: state_prev,
        t_next: t_target,
        dt,
        theta,
    };
    asm.assemble(&ctx, None)
}

/// Stabilized system for one step from `state_prev` at `t_target - dt`.
pub fn assemble_asgs(
    layout: Arc<CoupledLayout>,
    case: &ProblemCase,
    state_prev: &State,
    t_target: f64,
    dt: f64,
    theta: f64,
    stab: &StabilizationSet,
) -> Result<AssembledSystem> {
    let asm = Assembler::new(layout, case.clone(), AssemblyOptions::default())?;
    let ctx = StepContext {
        prev: state_prev,
        lag: state_prev,
        t_next: t_target,
        dt,
        theta,
    };
    asm.assemble(&ctx, Some(stab))
}

/// Adds `(α_bjs/√σ_B) ∫_Γ (u·t)(v·t)` to the velocity rows of `system`.
pub fn assemble_interface_bjs(
    system: &mut AssembledSystem,
    layout: Arc<CoupledLayout>,
    alpha_bjs: f64,
    sigma_b: f64,
) -> Result<()> {
    let mut case = ProblemCase::interface();
    case.alpha_bjs = alpha_bjs;
    if let Some(b) = case.brinkman.as_mut() {
        b.sigma = sigma_b;
    }
    let asm = Assembler {
        quad: QuadratureRule::triangle(1)?,
        pattern: system.matrix.clone(),
        faces: Vec::new(),
        opts: AssemblyOptions::default(),
        case,
        layout,
    };
    asm.add_bjs(system, 1.0, None, sigma_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dense_rank, solve_dense_oracle};
    use crate::mesh::{build_structured_mesh, partition_interface, Axis, Rect};
    use crate::problem::{ForcingMode, ZeroSolution};
    use crate::stabilization::StabilizationConfig;

    fn layout(n: usize) -> Arc<CoupledLayout> {
        let mesh = Arc::new(build_structured_mesh(n, n, Rect::UNIT).unwrap());
        Arc::new(CoupledLayout::p1(mesh).unwrap())
    }

    fn interface_layout(n: usize) -> Arc<CoupledLayout> {
        let mesh = partition_interface(build_structured_mesh(n, n, Rect::UNIT).unwrap(), Axis::X, 0.5).unwrap();
        Arc::new(CoupledLayout::p1(Arc::new(mesh)).unwrap())
    }

    fn exact_state(l: &Arc<CoupledLayout>, case: &ProblemCase, t: f64) -> State {
        State::interpolate(l.clone(), t, |x, y, t| case.exact_solution(x, y, t))
    }

    fn stab(case: &ProblemCase, l: &CoupledLayout, dt: f64) -> StabilizationSet {
        StabilizationSet::for_case(case, l.mesh().h, dt, &StabilizationConfig::default()).unwrap()
    }

    #[test]
    fn zero_problem_has_zero_solution() {
        let l = layout(3);
        let mut case = ProblemCase::stokes();
        case.solution = Arc::new(ZeroSolution);
        case.forcing = ForcingMode::Zero;
        let prev = State::zeros(l.clone(), 0.0);
        let st = stab(&case, &l, 0.5);
        let mut sys = assemble_asgs(l.clone(), &case, &prev, 0.5, 0.5, 1.0, &st).unwrap();
        sys.apply_constraints().unwrap();
        assert!(sys.rhs.iter().all(|&v| v == 0.0));
        let x = solve_dense_oracle(sys.matrix.to_dense(), &sys.rhs).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn divergence_blocks_are_negative_transposes() {
        let l = layout(4);
        let case = ProblemCase::stokes();
        let prev = exact_state(&l, &case, 0.0);
        let sys = assemble_galerkin(l.clone(), &case, &prev, 0.25, 0.25, 1.0).unwrap();
        let a = &sys.matrix;
        let nv = l.space(Field::U1).n_dofs();
        let np = l.space(Field::P).n_dofs();
        let mut checked = 0;
        for f in [Field::U1, Field::U2] {
            for i in 0..nv {
                for j in 0..np {
                    let up = a.get(l.global(f, i), l.global(Field::P, j));
                    let pu = a.get(l.global(Field::P, j), l.global(f, i));
                    assert!((up + pu).abs() < 1e-15, "{up} vs {pu}");
                    checked += (up != 0.0) as usize;
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn velocity_block_spd_on_constant_viscosity() {
        let l = layout(2);
        let case = ProblemCase::stokes();
        // c = 0 everywhere gives constant viscosity
        let prev = State::zeros(l.clone(), 0.0);
        let mut sys = assemble_galerkin(l.clone(), &case, &prev, 0.5, 0.5, 1.0).unwrap();
        sys.apply_constraints().unwrap();
        let nv = l.space(Field::U1).n_dofs();
        let block: Vec<Vec<f64>> = (0..nv)
            .map(|i| (0..nv).map(|j| sys.matrix.get(l.global(Field::U1, i), l.global(Field::U1, j))).collect())
            .collect();
        for i in 0..nv {
            for j in 0..nv {
                assert!((block[i][j] - block[j][i]).abs() < 1e-14);
            }
        }
        // positive definite iff every leading pivot of Cholesky is positive
        let mut a = block.clone();
        for k in 0..nv {
            assert!(a[k][k] > 0.0, "pivot {k} = {}", a[k][k]);
            for i in k + 1..nv {
                let f = a[i][k] / a[k][k];
                for j in k..nv {
                    a[i][j] -= f * a[k][j];
                }
            }
        }
    }

    #[test]
    fn zero_parameters_reproduce_galerkin() {
        let l = layout(4);
        let case = ProblemCase::brinkman();
        let prev = exact_state(&l, &case, 0.3);
        let g = assemble_galerkin(l.clone(), &case, &prev, 0.55, 0.25, 1.0).unwrap();
        let z = StabilizationSet::uniform(StabilizationParams::zero());
        let s = assemble_asgs(l.clone(), &case, &prev, 0.55, 0.25, 1.0, &z).unwrap();
        for (a, b) in g.matrix.values().iter().zip(s.matrix.values()) {
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }
        for (a, b) in g.rhs.iter().zip(&s.rhs) {
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }
    }

    #[test]
    fn skipped_terms_match_naive_path() {
        let l = layout(4);
        let case = ProblemCase::stokes();
        let prev = exact_state(&l, &case, 0.5);
        let st = stab(&case, &l, 0.25);
        let ctx = StepContext {
            prev: &prev,
            lag: &prev,
            t_next: 0.75,
            dt: 0.25,
            theta: 1.0,
        };
        let fast = Assembler::new(l.clone(), case.clone(), AssemblyOptions::default()).unwrap();
        let naive = Assembler::new(
            l.clone(),
            case,
            AssemblyOptions {
                skip_vanishing_terms: false,
                ..Default::default()
            },
        )
        .unwrap();
        let a = fast.assemble(&ctx, Some(&st)).unwrap();
        let b = naive.assemble(&ctx, Some(&st)).unwrap();
        assert_eq!(a.matrix, b.matrix);
        assert_eq!(a.rhs, b.rhs);
    }

    #[test]
    fn element_order_does_not_change_system() {
        let l = interface_layout(6);
        let case = ProblemCase::interface();
        let prev = exact_state(&l, &case, 0.5);
        let st = stab(&case, &l, 0.1);
        let asm = Assembler::new(l.clone(), case, AssemblyOptions::default()).unwrap();
        let ctx = StepContext {
            prev: &prev,
            lag: &prev,
            t_next: 0.6,
            dt: 0.1,
            theta: 0.0,
        };
        let a = asm.assemble(&ctx, Some(&st)).unwrap();
        let mut order: Vec<usize> = (0..l.mesh().n_triangles()).rev().collect();
        order.swap(3, 40);
        let b = asm.assemble_in_order(&ctx, Some(&st), Some(&order)).unwrap();
        for (x, y) in a.matrix.values().iter().zip(b.matrix.values()) {
            assert!((x - y).abs() <= 1e-13 * x.abs().max(1.0));
        }
        for (x, y) in a.rhs.iter().zip(&b.rhs) {
            assert!((x - y).abs() <= 1e-13 * x.abs().max(1.0));
        }
    }

    #[test]
    fn pinned_pressure_gives_full_rank() {
        let l = layout(2);
        let case = ProblemCase::stokes();
        let prev = exact_state(&l, &case, 0.0);
        let st = stab(&case, &l, 0.5);
        let mut sys = assemble_asgs(l.clone(), &case, &prev, 0.5, 0.5, 1.0, &st).unwrap();
        sys.apply_constraints().unwrap();
        assert_eq!(dense_rank(sys.matrix.to_dense(), 1e-12), l.total());

        // without the pin the stabilized pressure keeps exactly its constant mode
        let asm = Assembler::new(
            l.clone(),
            case,
            AssemblyOptions {
                pin_pressure: false,
                ..Default::default()
            },
        )
        .unwrap();
        let ctx = StepContext {
            prev: &prev,
            lag: &prev,
            t_next: 0.5,
            dt: 0.5,
            theta: 1.0,
        };
        let mut sys = asm.assemble(&ctx, Some(&st)).unwrap();
        sys.apply_constraints().unwrap();
        assert_eq!(dense_rank(sys.matrix.to_dense(), 1e-12), l.total() - 1);
    }

    #[test]
    fn elimination_preserves_unconstrained_equations() {
        let l = layout(3);
        let case = ProblemCase::brinkman();
        let prev = exact_state(&l, &case, 0.2);
        let st = stab(&case, &l, 0.2);
        let raw = assemble_asgs(l.clone(), &case, &prev, 0.4, 0.2, 1.0, &st).unwrap();
        let mut sys = raw.clone();
        sys.apply_constraints().unwrap();
        let x = solve_dense_oracle(sys.matrix.to_dense(), &sys.rhs).unwrap();
        let fixed: std::collections::HashMap<usize, f64> = raw.constraints.iter().copied().collect();
        for (&d, &v) in &fixed {
            assert!((x[d] - v).abs() < 1e-12);
        }
        let ax = raw.matrix.mul_vec(&x);
        for i in 0..l.total() {
            if !fixed.contains_key(&i) {
                assert!((ax[i] - raw.rhs[i]).abs() < 1e-9 * raw.rhs[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn conflicting_constraints_rejected() {
        let l = layout(2);
        let case = ProblemCase::stokes();
        let prev = State::zeros(l.clone(), 0.0);
        let mut sys = assemble_galerkin(l, &case, &prev, 0.5, 0.5, 1.0).unwrap();
        let err = apply_dirichlet(&mut sys, &[(0, 1.0), (0, 2.0)]).unwrap_err();
        assert!(matches!(err, Error::ConflictingConstraint { dof: 0, .. }));
    }

    fn bjs_delta(l: &Arc<CoupledLayout>, alpha: f64, sigma: f64) -> SparseMatrix {
        let case = ProblemCase::stokes();
        let prev = State::zeros(l.clone(), 0.0);
        let base = assemble_galerkin(l.clone(), &case, &prev, 0.5, 0.5, 1.0).unwrap();
        let mut sys = base.clone();
        assemble_interface_bjs(&mut sys, l.clone(), alpha, sigma).unwrap();
        let mut d = sys.matrix.clone();
        for (v, b) in d.values_mut().iter_mut().zip(base.matrix.values()) {
            *v -= b;
        }
        d
    }

    #[test]
    fn bjs_energy_of_unit_tangential_velocity() {
        // velocity tangential to the interface only at the two ends of one edge
        let l = interface_layout(10);
        let d = bjs_delta(&l, 0.7, 4.0);
        let mesh = l.mesh();
        let e = &mesh.interface_edges[0];
        let mut u = vec![0.0; l.total()];
        // u = (0, 1) on the edge vertices: tangent of the x = 0.5 interface is ±e_y
        for &v in &e.vertices {
            u[l.global(Field::U2, v)] = 1.0;
        }
        let du = d.mul_vec(&u);
        let energy: f64 = u.iter().zip(&du).map(|(a, b)| a * b).sum();
        // linear hat functions on the single edge: ∫ (N_a + N_b)^2 = 0.1,
        // but neighbouring edges see the tail of each hat: ∫_0^0.1 s^2/0.01 = 0.1/3
        let neighbours = mesh
            .interface_edges
            .iter()
            .filter(|o| o.vertices != e.vertices && o.vertices.iter().any(|v| e.vertices.contains(v)))
            .count();
        let expected = 0.7 / 2.0 * (0.1 + neighbours as f64 * 0.1 / 3.0);
        assert!((energy - expected).abs() < 1e-14, "{energy} vs {expected}");

        // normal velocity produces no energy
        let mut un = vec![0.0; l.total()];
        for &v in &e.vertices {
            un[l.global(Field::U1, v)] = 1.0;
        }
        let dn = d.mul_vec(&un);
        assert!(un.iter().zip(&dn).map(|(a, b)| a * b).sum::<f64>().abs() < 1e-16);

        // zero slip coefficient leaves the system unchanged
        assert!(bjs_delta(&l, 0.0, 4.0).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bjs_on_single_edge_with_constant_tangential_velocity() {
        // constant u·t = 1 along the full interface: energy = coef · |Γ|
        let l = interface_layout(10);
        let d = bjs_delta(&l, 1.0, 1.0);
        let mut u = vec![0.0; l.total()];
        for e in &l.mesh().interface_edges {
            for &v in &e.vertices {
                u[l.global(Field::U2, v)] = 1.0;
            }
        }
        let du = d.mul_vec(&u);
        let energy: f64 = u.iter().zip(&du).map(|(a, b)| a * b).sum();
        assert!((energy - 1.0).abs() < 1e-13);
        // each of the 10 edges of length 0.1 contributes (α/√σ)·0.1
        assert_eq!(l.mesh().interface_edges.len(), 10);
    }

    #[test]
    fn bjs_requires_interface() {
        let l = layout(4);
        let case = ProblemCase::stokes();
        let prev = State::zeros(l.clone(), 0.0);
        let mut sys = assemble_galerkin(l.clone(), &case, &prev, 0.5, 0.5, 1.0).unwrap();
        assert!(assemble_interface_bjs(&mut sys, l, 1.0, 1.0).is_err());
    }
}
