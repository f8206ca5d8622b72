//! Structured triangulations of axis-aligned rectangles.
//!
//! Every grid cell is split along its bottom-left to top-right diagonal, so a
//! mesh is fully determined by its resolution and rectangle. Triangles are
//! stored counter-clockwise.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};

/// Which side of the rectangle a boundary edge lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Left,
    Right,
    Bottom,
    Top,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 4] = [
        BoundaryTag::Left,
        BoundaryTag::Right,
        BoundaryTag::Bottom,
        BoundaryTag::Top,
    ];

    pub fn index(self) -> usize {
        match self {
            BoundaryTag::Left => 0,
            BoundaryTag::Right => 1,
            BoundaryTag::Bottom => 2,
            BoundaryTag::Top => 3,
        }
    }
}

/// Physical model active on a triangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subdomain {
    Unified,
    Stokes,
    Brinkman,
}

impl Subdomain {
    pub fn index(self) -> usize {
        match self {
            Subdomain::Unified => 0,
            Subdomain::Stokes => 1,
            Subdomain::Brinkman => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub const UNIT: Rect = Rect {
        x0: 0.0,
        y0: 0.0,
        x1: 1.0,
        y1: 1.0,
    };

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// An edge on the Stokes/Brinkman interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceEdge {
    pub vertices: [usize; 2],
    pub stokes_triangle: usize,
    pub brinkman_triangle: usize,
    /// Outward unit normal of the Stokes region; the Brinkman normal is its negation.
    pub normal_stokes: [f64; 2],
}

impl InterfaceEdge {
    pub fn normal_brinkman(&self) -> [f64; 2] {
        [-self.normal_stokes[0], -self.normal_stokes[1]]
    }

    /// Unit tangent, the normal rotated by +90 degrees.
    pub fn tangent(&self) -> [f64; 2] {
        [-self.normal_stokes[1], self.normal_stokes[0]]
    }
}

/// A mesh edge with the triangles touching it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub triangles: [Option<usize>; 2],
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<([usize; 2], BoundaryTag)>,
    pub subdomain_of: Vec<Subdomain>,
    pub interface_edges: Vec<InterfaceEdge>,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    pub rect: Rect,
}

/// Builds the `nx` by `ny` structured triangulation of `rect`.
pub fn build_structured_mesh(nx: usize, ny: usize, rect: Rect) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument(format!(
            "mesh resolution must be positive, got {nx}x{ny}"
        )));
    }
    if !(rect.width() > 0.0 && rect.height() > 0.0) || !rect.area().is_finite() {
        return Err(Error::InvalidArgument(format!(
            "degenerate rectangle {rect:?}"
        )));
    }

    let dx = rect.width() / nx as f64;
    let dy = rect.height() / ny as f64;
    let vid = |i: usize, j: usize| j * (nx + 1) + i;

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        // pin the far edge exactly to the rectangle corner
        let y = if j == ny { rect.y1 } else { rect.y0 + j as f64 * dy };
        for i in 0..=nx {
            let x = if i == nx { rect.x1 } else { rect.x0 + i as f64 * dx };
            vertices.push([x, y]);
        }
    }

    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let v00 = vid(i, j);
            let v10 = vid(i + 1, j);
            let v01 = vid(i, j + 1);
            let v11 = vid(i + 1, j + 1);
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }

    let mut boundary_edges = Vec::with_capacity(2 * (nx + ny));
    for i in 0..nx {
        boundary_edges.push(([vid(i, 0), vid(i + 1, 0)], BoundaryTag::Bottom));
    }
    for j in 0..ny {
        boundary_edges.push(([vid(nx, j), vid(nx, j + 1)], BoundaryTag::Right));
    }
    for i in (0..nx).rev() {
        boundary_edges.push(([vid(i + 1, ny), vid(i, ny)], BoundaryTag::Top));
    }
    for j in (0..ny).rev() {
        boundary_edges.push(([vid(0, j + 1), vid(0, j)], BoundaryTag::Left));
    }

    let mut mesh = Mesh {
        vertices,
        triangles,
        boundary_edges,
        subdomain_of: vec![Subdomain::Unified; 2 * nx * ny],
        interface_edges: Vec::new(),
        h: 0.0,
        nx,
        ny,
        rect,
    };
    mesh.h = (0..mesh.n_triangles())
        .map(|k| mesh.diameter(k))
        .fold(0.0, f64::max);
    Ok(mesh)
}

/// Labels triangles on either side of a grid line and records the interface edges.
///
/// Triangles left of (below) the line become [`Subdomain::Stokes`], the rest
/// [`Subdomain::Brinkman`].
pub fn partition_interface(mut mesh: Mesh, axis: Axis, coordinate: f64) -> Result<Mesh> {
    let (lo, len, cells) = match axis {
        Axis::X => (mesh.rect.x0, mesh.rect.width(), mesh.nx),
        Axis::Y => (mesh.rect.y0, mesh.rect.height(), mesh.ny),
    };
    let s = (coordinate - lo) / len * cells as f64;
    let line = s.round();
    if (s - line).abs() > 1e-12 * cells.max(1) as f64 || line <= 0.0 || line >= cells as f64 {
        return Err(Error::NonConforming(format!(
            "split {axis:?} = {coordinate} is not an interior grid line"
        )));
    }
    let line = line as usize;
    let comp = match axis {
        Axis::X => 0,
        Axis::Y => 1,
    };
    let on_line = |v: usize| -> bool {
        let idx = match axis {
            Axis::X => v % (mesh.nx + 1),
            Axis::Y => v / (mesh.nx + 1),
        };
        idx == line
    };
    let split = {
        let v = mesh
            .vertices
            .iter()
            .enumerate()
            .find(|(i, _)| on_line(*i))
            .map(|(_, p)| p[comp])
            .expect("grid line has vertices");
        v
    };

    for k in 0..mesh.n_triangles() {
        let c = mesh.centroid(k);
        mesh.subdomain_of[k] = if c[comp] < split {
            Subdomain::Stokes
        } else {
            Subdomain::Brinkman
        };
    }

    let normal_stokes = match axis {
        Axis::X => [1.0, 0.0],
        Axis::Y => [0.0, 1.0],
    };
    mesh.interface_edges = mesh
        .edges()
        .into_iter()
        .filter(|e| on_line(e.vertices[0]) && on_line(e.vertices[1]))
        .map(|e| {
            let [a, b] = e.triangles;
            let (a, b) = (a.expect("interior edge"), b.expect("interior edge"));
            let (s, br) = if mesh.subdomain_of[a] == Subdomain::Stokes {
                (a, b)
            } else {
                (b, a)
            };
            InterfaceEdge {
                vertices: e.vertices,
                stokes_triangle: s,
                brinkman_triangle: br,
                normal_stokes,
            }
        })
        .collect();
    Ok(mesh)
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn corners(&self, k: usize) -> [[f64; 2]; 3] {
        let t = self.triangles[k];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    /// Signed area, positive for counter-clockwise triangles.
    pub fn signed_area(&self, k: usize) -> f64 {
        let [a, b, c] = self.corners(k);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    /// Longest edge length of triangle `k`.
    pub fn diameter(&self, k: usize) -> f64 {
        let p = self.corners(k);
        (0..3)
            .map(|i| {
                let (a, b) = (p[i], p[(i + 1) % 3]);
                (b[0] - a[0]).hypot(b[1] - a[1])
            })
            .fold(0.0, f64::max)
    }

    pub fn centroid(&self, k: usize) -> [f64; 2] {
        let [a, b, c] = self.corners(k);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// All unique edges, ordered by first appearance in the triangle list.
    ///
    /// Local edge `e` of a triangle joins its local vertices `e` and `(e + 1) % 3`.
    pub fn edges(&self) -> Vec<Edge> {
        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        for (k, t) in self.triangles.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                match index.get(&key) {
                    Some(&id) => edges[id].triangles[1] = Some(k),
                    None => {
                        index.insert(key, edges.len());
                        edges.push(Edge {
                            vertices: [a, b],
                            triangles: [Some(k), None],
                        });
                    }
                }
            }
        }
        edges
    }

    /// Finds a triangle containing `(x, y)` and the barycentric coordinates there.
    pub fn locate(&self, x: f64, y: f64) -> Result<(usize, [f64; 3])> {
        let r = self.rect;
        let tol = 1e-12 * r.width().max(r.height());
        if x < r.x0 - tol || x > r.x1 + tol || y < r.y0 - tol || y > r.y1 + tol {
            return Err(Error::OutsideElement { x, y });
        }
        let dx = r.width() / self.nx as f64;
        let dy = r.height() / self.ny as f64;
        let i = (((x - r.x0) / dx).floor().max(0.0) as usize).min(self.nx - 1);
        let j = (((y - r.y0) / dy).floor().max(0.0) as usize).min(self.ny - 1);
        let cell = j * self.nx + i;
        for k in [2 * cell, 2 * cell + 1] {
            let l = self.barycentric(k, x, y);
            if l.iter().all(|&v| v >= -1e-12) {
                let l = l.map(|v| v.max(0.0));
                let s: f64 = l.iter().sum();
                return Ok((k, l.map(|v| v / s)));
            }
        }
        Err(Error::OutsideElement { x, y })
    }

    pub fn barycentric(&self, k: usize, x: f64, y: f64) -> [f64; 3] {
        let [a, b, c] = self.corners(k);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let l1 = ((x - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (y - a[1])) / det;
        let l2 = ((b[0] - a[0]) * (y - a[1]) - (x - a[0]) * (b[1] - a[1])) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Writes one vertex per line as `x y`.
    pub fn write_nodes<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for v in &self.vertices {
            writeln!(w, "{} {}", v[0], v[1])?;
        }
        Ok(())
    }

    /// Writes one triangle per line as `i j k` with 0-based vertex indices.
    pub fn write_elements<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.triangles {
            writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}
