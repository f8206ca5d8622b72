//! Continuous Lagrange spaces on triangles and the block layout of the
//! coupled unknown `(u1, u2, p, c)`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, Mesh};

/// Largest number of local basis functions (quadratic triangle).
pub const MAX_LOCAL: usize = 6;

/// Affine geometry of one triangle.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub corners: [[f64; 2]; 3],
    /// Physical gradients of the barycentric coordinates.
    pub grad_lambda: [[f64; 2]; 3],
    pub area: f64,
}

impl ElementGeometry {
    pub fn new(corners: [[f64; 2]; 3]) -> Self {
        let [a, b, c] = corners;
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let grad_lambda = [
            [(b[1] - c[1]) / det, (c[0] - b[0]) / det],
            [(c[1] - a[1]) / det, (a[0] - c[0]) / det],
            [(a[1] - b[1]) / det, (b[0] - a[0]) / det],
        ];
        ElementGeometry {
            corners,
            grad_lambda,
            area: 0.5 * det,
        }
    }

    pub fn point(&self, bary: [f64; 3]) -> [f64; 2] {
        let c = &self.corners;
        [
            bary[0] * c[0][0] + bary[1] * c[1][0] + bary[2] * c[2][0],
            bary[0] * c[0][1] + bary[1] * c[1][1] + bary[2] * c[2][1],
        ]
    }
}

/// Basis values and physical derivatives at one point of one element.
#[derive(Debug, Clone, Copy)]
pub struct BasisEval {
    pub n: usize,
    pub values: [f64; MAX_LOCAL],
    pub grads: [[f64; 2]; MAX_LOCAL],
    /// Second derivatives stored as `[xx, xy, yy]`.
    pub hessians: [[f64; 3]; MAX_LOCAL],
}

impl BasisEval {
    pub fn laplacian(&self, i: usize) -> f64 {
        self.hessians[i][0] + self.hessians[i][2]
    }
}

/// Evaluates the order-`order` Lagrange basis at barycentric point `bary`.
///
/// Local numbering: vertices 0..3, then (order 2) the midpoints of edges
/// (0,1), (1,2), (2,0).
pub fn lagrange_basis(order: usize, geom: &ElementGeometry, bary: [f64; 3]) -> BasisEval {
    let gl = &geom.grad_lambda;
    let mut out = BasisEval {
        n: if order == 1 { 3 } else { 6 },
        values: [0.0; MAX_LOCAL],
        grads: [[0.0; 2]; MAX_LOCAL],
        hessians: [[0.0; 3]; MAX_LOCAL],
    };
    if order == 1 {
        for i in 0..3 {
            out.values[i] = bary[i];
            out.grads[i] = gl[i];
        }
        return out;
    }
    let outer = |a: usize, b: usize| -> [f64; 3] {
        // symmetrised ∇λa ⊗ ∇λb
        [
            gl[a][0] * gl[b][0],
            0.5 * (gl[a][0] * gl[b][1] + gl[a][1] * gl[b][0]),
            gl[a][1] * gl[b][1],
        ]
    };
    for i in 0..3 {
        let l = bary[i];
        out.values[i] = l * (2.0 * l - 1.0);
        let d = 4.0 * l - 1.0;
        out.grads[i] = [d * gl[i][0], d * gl[i][1]];
        out.hessians[i] = outer(i, i).map(|v| 4.0 * v);
    }
    for e in 0..3 {
        let (a, b) = (e, (e + 1) % 3);
        let (la, lb) = (bary[a], bary[b]);
        out.values[3 + e] = 4.0 * la * lb;
        out.grads[3 + e] = [
            4.0 * (lb * gl[a][0] + la * gl[b][0]),
            4.0 * (lb * gl[a][1] + la * gl[b][1]),
        ];
        out.hessians[3 + e] = outer(a, b).map(|v| 8.0 * v);
    }
    out
}

/// A continuous scalar Lagrange space of order 1 or 2.
#[derive(Debug, Clone)]
pub struct ScalarSpace {
    mesh: Arc<Mesh>,
    order: usize,
    dof_coords: Vec<[f64; 2]>,
    cell_dofs: Vec<usize>,
    boundary_dofs: [Vec<usize>; 4],
}

pub fn build_space(mesh: Arc<Mesh>, order: usize) -> Result<ScalarSpace> {
    if order != 1 && order != 2 {
        return Err(Error::InvalidArgument(format!(
            "unsupported polynomial order {order}"
        )));
    }
    let nv = mesh.n_vertices();
    let mut dof_coords = mesh.vertices.clone();
    let n_local = if order == 1 { 3 } else { 6 };
    let mut cell_dofs = Vec::with_capacity(n_local * mesh.n_triangles());
    let mut boundary_dofs: [Vec<usize>; 4] = Default::default();

    if order == 1 {
        for t in &mesh.triangles {
            cell_dofs.extend_from_slice(t);
        }
        for (e, tag) in &mesh.boundary_edges {
            boundary_dofs[tag.index()].extend_from_slice(e);
        }
    } else {
        let edges = mesh.edges();
        let mut edge_of = std::collections::HashMap::with_capacity(edges.len());
        for (id, e) in edges.iter().enumerate() {
            let [a, b] = e.vertices;
            edge_of.insert((a.min(b), a.max(b)), nv + id);
            let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
            dof_coords.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
        }
        for t in &mesh.triangles {
            cell_dofs.extend_from_slice(t);
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                cell_dofs.push(edge_of[&(a.min(b), a.max(b))]);
            }
        }
        for (e, tag) in &mesh.boundary_edges {
            let list = &mut boundary_dofs[tag.index()];
            list.extend_from_slice(e);
            list.push(edge_of[&(e[0].min(e[1]), e[0].max(e[1]))]);
        }
    }
    for list in &mut boundary_dofs {
        list.sort_unstable();
        list.dedup();
    }
    Ok(ScalarSpace {
        mesh,
        order,
        dof_coords,
        cell_dofs,
        boundary_dofs,
    })
}

impl ScalarSpace {
    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_dofs(&self) -> usize {
        self.dof_coords.len()
    }

    pub fn n_local(&self) -> usize {
        if self.order == 1 {
            3
        } else {
            6
        }
    }

    pub fn dof_coords(&self) -> &[[f64; 2]] {
        &self.dof_coords
    }

    pub fn cell_dofs(&self, k: usize) -> &[usize] {
        let n = self.n_local();
        &self.cell_dofs[k * n..(k + 1) * n]
    }

    pub fn boundary_dofs(&self, tag: BoundaryTag) -> &[usize] {
        &self.boundary_dofs[tag.index()]
    }

    /// Sorted union of the boundary dofs over all tags.
    pub fn all_boundary_dofs(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.boundary_dofs.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    pub fn geometry(&self, k: usize) -> ElementGeometry {
        ElementGeometry::new(self.mesh.corners(k))
    }

    /// Whether second derivatives of the basis vanish identically.
    pub fn is_piecewise_linear(&self) -> bool {
        self.order == 1
    }

    /// Value and physical gradient of the finite element function `coeffs`.
    pub fn eval_function(&self, coeffs: &[f64], k: usize, basis: &BasisEval) -> (f64, [f64; 2]) {
        let dofs = self.cell_dofs(k);
        let mut v = 0.0;
        let mut g = [0.0; 2];
        for (i, &d) in dofs.iter().enumerate() {
            let c = coeffs[d];
            v += c * basis.values[i];
            g[0] += c * basis.grads[i][0];
            g[1] += c * basis.grads[i][1];
        }
        (v, g)
    }

    /// Second derivatives `[xx, xy, yy]` of the finite element function.
    pub fn eval_hessian(&self, coeffs: &[f64], k: usize, basis: &BasisEval) -> [f64; 3] {
        let mut h = [0.0; 3];
        if self.order == 1 {
            return h;
        }
        for (i, &d) in self.cell_dofs(k).iter().enumerate() {
            for (hc, bc) in h.iter_mut().zip(basis.hessians[i]) {
                *hc += coeffs[d] * bc;
            }
        }
        h
    }
}

/// Basis values and physical derivatives in triangle `k` at barycentric `bary`.
pub fn evaluate_basis(space: &ScalarSpace, k: usize, bary: [f64; 3]) -> Result<BasisEval> {
    let geom = space.geometry(k);
    let sum: f64 = bary.iter().sum();
    if (sum - 1.0).abs() > 1e-12 || bary.iter().any(|&l| !(-1e-12..=1.0 + 1e-12).contains(&l)) {
        let p = geom.point(bary);
        return Err(Error::OutsideElement { x: p[0], y: p[1] });
    }
    Ok(lagrange_basis(space.order, &geom, bary))
}

/// Nodal interpolant of `f(x, y, t)`.
pub fn interpolate(space: &ScalarSpace, f: impl Fn(f64, f64, f64) -> f64, t: f64) -> Vec<f64> {
    space.dof_coords.iter().map(|p| f(p[0], p[1], t)).collect()
}

/// One component of the coupled unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    U1,
    U2,
    P,
    C,
}

impl Field {
    pub const ALL: [Field; 4] = [Field::U1, Field::U2, Field::P, Field::C];

    pub fn index(self) -> usize {
        match self {
            Field::U1 => 0,
            Field::U2 => 1,
            Field::P => 2,
            Field::C => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::U1 => "u1",
            Field::U2 => "u2",
            Field::P => "p",
            Field::C => "c",
        }
    }
}

/// Global numbering of the monolithic system: one contiguous block per field.
#[derive(Debug, Clone)]
pub struct CoupledLayout {
    order: [Field; 4],
    spaces: [Arc<ScalarSpace>; 4],
    offsets: [usize; 4],
    total: usize,
}

impl CoupledLayout {
    /// Canonical `(u1, u2, p, c)` block order.
    pub fn new(velocity: Arc<ScalarSpace>, pressure: Arc<ScalarSpace>, concentration: Arc<ScalarSpace>) -> Self {
        Self::with_order(velocity, pressure, concentration, Field::ALL)
    }

    /// Same spaces with the blocks stored in `order`.
    pub fn with_order(
        velocity: Arc<ScalarSpace>,
        pressure: Arc<ScalarSpace>,
        concentration: Arc<ScalarSpace>,
        order: [Field; 4],
    ) -> Self {
        let spaces = [velocity.clone(), velocity, pressure, concentration];
        let mut offsets = [0; 4];
        let mut next = 0;
        for f in order {
            offsets[f.index()] = next;
            next += spaces[f.index()].n_dofs();
        }
        CoupledLayout {
            order,
            spaces,
            offsets,
            total: next,
        }
    }

    /// Equal-order P1 layout on `mesh`.
    pub fn p1(mesh: Arc<Mesh>) -> Result<Self> {
        let s = Arc::new(build_space(mesh, 1)?);
        Ok(Self::new(s.clone(), s.clone(), s))
    }

    pub fn field_order(&self) -> [Field; 4] {
        self.order
    }

    pub fn space(&self, f: Field) -> &Arc<ScalarSpace> {
        &self.spaces[f.index()]
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.spaces[0].mesh()
    }

    pub fn offset(&self, f: Field) -> usize {
        self.offsets[f.index()]
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn global(&self, f: Field, dof: usize) -> usize {
        self.offsets[f.index()] + dof
    }
}

/// Nodal coefficients of every field at one time level.
#[derive(Debug, Clone)]
pub struct State {
    pub layout: Arc<CoupledLayout>,
    pub values: [Vec<f64>; 4],
    pub t: f64,
}

impl State {
    pub fn zeros(layout: Arc<CoupledLayout>, t: f64) -> Self {
        let values = Field::ALL.map(|f| vec![0.0; layout.space(f).n_dofs()]);
        State { layout, values, t }
    }

    /// Interpolates `f(x, y, t) -> [u1, u2, p, c]` on every field.
    pub fn interpolate(layout: Arc<CoupledLayout>, t: f64, f: impl Fn(f64, f64, f64) -> [f64; 4]) -> Self {
        let values = Field::ALL.map(|field| {
            interpolate(layout.space(field), |x, y, t| f(x, y, t)[field.index()], t)
        });
        State { layout, values, t }
    }

    pub fn field(&self, f: Field) -> &[f64] {
        &self.values[f.index()]
    }

    pub fn field_mut(&mut self, f: Field) -> &mut Vec<f64> {
        &mut self.values[f.index()]
    }

    pub fn to_global(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.layout.total()];
        for f in Field::ALL {
            let off = self.layout.offset(f);
            x[off..off + self.values[f.index()].len()].copy_from_slice(&self.values[f.index()]);
        }
        x
    }

    pub fn from_global(layout: Arc<CoupledLayout>, x: &[f64], t: f64) -> Result<Self> {
        if x.len() != layout.total() {
            return Err(Error::DimensionMismatch {
                expected: layout.total(),
                got: x.len(),
            });
        }
        let values = Field::ALL.map(|f| {
            let off = layout.offset(f);
            x[off..off + layout.space(f).n_dofs()].to_vec()
        });
        Ok(State { layout, values, t })
    }

    /// Checks vector lengths against the layout and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        for f in Field::ALL {
            let n = self.layout.space(f).n_dofs();
            let v = &self.values[f.index()];
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                });
            }
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "non-finite {} coefficient at dof {i}",
                    f.name()
                )));
            }
        }
        Ok(())
    }

    /// Values of all four fields at a physical point.
    pub fn probe(&self, x: f64, y: f64) -> Result<[f64; 4]> {
        let (k, bary) = self.layout.mesh().locate(x, y)?;
        Ok(Field::ALL.map(|f| {
            let space = self.layout.space(f);
            let b = lagrange_basis(space.order(), &space.geometry(k), bary);
            space.eval_function(self.field(f), k, &b).0
        }))
    }
}
