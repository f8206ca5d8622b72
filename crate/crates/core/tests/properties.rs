use std::collections::HashMap;
use std::sync::Arc;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;

use asgs::analysis::{aposteriori_estimate, eoc, error_norms_of, ExactInjection, FieldSource, PointFields};
use asgs::linalg::SparseMatrix;
use asgs::mesh::{build_structured_mesh, partition_interface, Axis, Mesh, Rect};
use asgs::problem::{mms_forcing, CaseKind, CoefficientSet, ExactSolution, ManufacturedSolution, ProblemCase};
use asgs::spaces::{lagrange_basis, CoupledLayout, ElementGeometry, State};
use asgs::stabilization::{subscale_series_factor, SeriesMode};

fn rect_strategy() -> impl Strategy<Value = Rect> {
    (-2.0..2.0f64, -2.0..2.0f64, 0.1..3.0f64, 0.1..3.0f64).prop_map(|(x0, y0, w, h)| Rect {
        x0,
        y0,
        x1: x0 + w,
        y1: y0 + h,
    })
}

fn edge_use(mesh: &Mesh) -> HashMap<(usize, usize), usize> {
    let mut count = HashMap::new();
    for t in &mesh.triangles {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    count
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mesh_tiles_the_rectangle(nx in 1usize..20, ny in 1usize..20, rect in rect_strategy()) {
        let mesh = build_structured_mesh(nx, ny, rect).unwrap();
        let total: f64 = (0..mesh.n_triangles()).map(|k| mesh.signed_area(k)).sum();
        prop_assert!(((total - rect.area()) / rect.area()).abs() <= 1e-12);
        prop_assert!((0..mesh.n_triangles()).all(|k| mesh.signed_area(k) > 0.0));
        let longest = (0..mesh.n_triangles()).map(|k| mesh.diameter(k)).fold(0.0, f64::max);
        prop_assert!((mesh.h - longest).abs() <= 1e-12 * longest);
    }

    #[test]
    fn mesh_topology(nx in 1usize..15, ny in 1usize..15) {
        let mesh = build_structured_mesh(nx, ny, Rect::UNIT).unwrap();
        let edges = edge_use(&mesh);
        let (v, e, f) = (mesh.n_vertices() as i64, edges.len() as i64, mesh.n_triangles() as i64);
        prop_assert_eq!(v - e + f, 1);
        let boundary: Vec<_> = edges.iter().filter(|(_, &c)| c == 1).map(|(k, _)| *k).collect();
        prop_assert!(edges.values().all(|&c| c == 1 || c == 2));
        prop_assert_eq!(boundary.len(), mesh.boundary_edges.len());
        for (pair, _) in &mesh.boundary_edges {
            prop_assert_eq!(edges[&(pair[0].min(pair[1]), pair[0].max(pair[1]))], 1);
        }
    }

    #[test]
    fn partition_changes_labels_only(n in 1usize..12, cut in 1usize..12) {
        prop_assume!(cut < n);
        let mesh = build_structured_mesh(n, n, Rect::UNIT).unwrap();
        let split = cut as f64 / n as f64;
        let parted = partition_interface(mesh.clone(), Axis::X, split).unwrap();
        prop_assert_eq!(&parted.vertices, &mesh.vertices);
        prop_assert_eq!(&parted.triangles, &mesh.triangles);
        prop_assert_eq!(parted.interface_edges.len(), n);
    }

    #[test]
    fn p1_basis_is_a_partition_of_unity(
        corners in prop::array::uniform3(prop::array::uniform2(-1.0..1.0f64)),
        l in prop::array::uniform3(0.0..1.0f64),
    ) {
        let geom = ElementGeometry::new(corners);
        prop_assume!(geom.area.abs() > 1e-3);
        let s = l.iter().sum::<f64>();
        prop_assume!(s > 1e-6);
        let bary = l.map(|v| v / s);
        for order in [1, 2] {
            let b = lagrange_basis(order, &geom, bary);
            let sum: f64 = b.values[..b.n].iter().sum();
            let gx: f64 = b.grads[..b.n].iter().map(|g| g[0]).sum();
            let gy: f64 = b.grads[..b.n].iter().map(|g| g[1]).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(gx.abs() < 1e-9 * (1.0 + 1.0 / geom.area.abs()));
            prop_assert!(gy.abs() < 1e-9 * (1.0 + 1.0 / geom.area.abs()));
        }
    }

    /// The analytic forcing agrees with a central-difference evaluation of the
    /// strong operator applied to the exact fields.
    #[test]
    fn forcing_matches_finite_differences(x in 0.05..0.95f64, y in 0.05..0.95f64, t in 0.1..1.0f64, sigma in 0.0..2.0f64) {
        let sol = ManufacturedSolution { time_dependent: true };
        let co = CoefficientSet::electrolyte(sigma, 1.0 + sigma);
        let h = 1e-4;
        let at = |x: f64, y: f64, t: f64| sol.jets(x, y, t).values();
        let d1 = |f: &dyn Fn(f64) -> [f64; 4], i: usize| (f(h)[i] - f(-h)[i]) / (2.0 * h);
        let d2 = |f: &dyn Fn(f64) -> [f64; 4], i: usize| (f(h)[i] - 2.0 * f(0.0)[i] + f(-h)[i]) / (h * h);
        let fx = |s: f64| at(x + s, y, t);
        let fy = |s: f64| at(x, y + s, t);
        let ft = |s: f64| at(x, y, t + s);
        let v = at(x, y, t);
        let mu = co.viscosity.eval(v[3]);
        let lap = |i| d2(&fx, i) + d2(&fy, i);
        let fd_f1x = -mu * lap(0) + sigma * v[0] + d1(&fx, 2);
        let fd_f1y = -mu * lap(1) + sigma * v[1] + d1(&fy, 2);
        let flux = |s: f64, axis: usize| {
            let (px, py) = if axis == 0 { (x + s, y) } else { (x, y + s) };
            let d = co.diffusion.eval(px, py, t);
            let g = (at(px + h, py, t)[3] - at(px - h, py, t)[3]) / (2.0 * h);
            let gy = (at(px, py + h, t)[3] - at(px, py - h, t)[3]) / (2.0 * h);
            if axis == 0 { d.d1 * g } else { d.d2 * gy }
        };
        let div_flux = (flux(h, 0) - flux(-h, 0) + flux(h, 1) - flux(-h, 1)) / (2.0 * h);
        let fd_g = co.phi * d1(&ft, 3) - div_flux + v[0] * d1(&fx, 3) + v[1] * d1(&fy, 3) + co.alpha * v[3];
        let f = mms_forcing(&co, &sol.jets(x, y, t), x, y, t);
        prop_assert!((f[0] - fd_f1x).abs() < 1e-4 * (1.0 + fd_f1x.abs()), "{} vs {}", f[0], fd_f1x);
        prop_assert!((f[1] - fd_f1y).abs() < 1e-4 * (1.0 + fd_f1y.abs()), "{} vs {}", f[1], fd_f1y);
        prop_assert!((f[3] - fd_g).abs() < 1e-4 * (1.0 + fd_g.abs()), "{} vs {}", f[3], fd_g);
    }

    #[test]
    fn exact_velocity_is_divergence_free(x in 0.0..1.0f64, y in 0.0..1.0f64, t in 0.0..1.0f64) {
        let sol = ManufacturedSolution { time_dependent: true };
        let co = CoefficientSet::electrolyte(0.0, 1.0);
        let f = mms_forcing(&co, &sol.jets(x, y, t), x, y, t);
        prop_assert!(f[2].abs() <= 1e-12);
    }

    #[test]
    fn finite_series_approaches_closed_form(r in 0.0..0.9f64, terms in 400usize..1000) {
        let closed = subscale_series_factor(r, SeriesMode::Closed).unwrap();
        let finite = subscale_series_factor(r, SeriesMode::Finite(terms)).unwrap();
        prop_assert!((closed - finite).abs() <= 1e-12 * (1.0 + closed));
    }

    #[test]
    fn matvec_matches_triplets(
        n in 1usize..12,
        entries in prop::collection::vec((0usize..12, 0usize..12, -5.0..5.0f64), 0..60),
        x in prop::collection::vec(-3.0..3.0f64, 12),
    ) {
        let triplets: Vec<_> = entries.into_iter().filter(|(i, j, _)| *i < n && *j < n).collect();
        let a = SparseMatrix::from_triplets(n, &triplets).unwrap();
        let mut expected = vec![0.0; n];
        for &(i, j, v) in &triplets {
            expected[i] += v * x[j];
        }
        let got = a.mul_vec(&x[..n]);
        for (g, e) in got.iter().zip(&expected) {
            prop_assert!((g - e).abs() <= 1e-12 * (1.0 + e.abs()));
        }
    }

    #[test]
    fn eoc_telescopes(a in 1e-6..1e3f64, r1 in 1.01..20.0f64, r2 in 1.01..20.0f64) {
        let (b, c) = (a / r1, a / r1 / r2);
        let sum = eoc(a, b).unwrap() + eoc(b, c).unwrap();
        prop_assert!((sum - (a / c).log2()).abs() <= 1e-12 * (1.0 + sum.abs()));
    }
}

/// Exact fields plus `s` times a fixed perturbation.
struct Perturbed<'a> {
    exact: ExactInjection<'a>,
    scale: f64,
}

impl FieldSource for Perturbed<'_> {
    fn levels(&self) -> usize {
        self.exact.levels()
    }

    fn time(&self, level: usize) -> f64 {
        self.exact.time(level)
    }

    fn eval(&self, level: usize, k: usize, bary: [f64; 3], point: [f64; 2]) -> PointFields {
        let mut v = self.exact.eval(level, k, bary, point);
        let [x, y] = point;
        let t = self.time(level);
        for (i, f) in v.iter_mut().enumerate() {
            let w = (i + 1) as f64;
            f.0 += self.scale * (w * x + y * y) * (1.0 + t);
            f.1[0] += self.scale * w * (1.0 + t);
            f.1[1] += self.scale * 2.0 * y * (1.0 + t);
        }
        v
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Squared error components scale exactly with the square of the error.
    #[test]
    fn error_norms_scale_quadratically(s in 0.1..10.0f64, theta in 0.0..1.0f64) {
        let case = ProblemCase::preset(CaseKind::Brinkman);
        let mesh = build_structured_mesh(4, 4, Rect::UNIT).unwrap();
        let src = |scale| Perturbed {
            exact: ExactInjection { case: &case, times: vec![0.0, 0.25, 0.5] },
            scale,
        };
        let one = error_norms_of(&src(1.0), &case, &mesh, theta, 4, 0).unwrap();
        let scaled = error_norms_of(&src(s), &case, &mesh, theta, 4, 0).unwrap();
        for (a, b) in [(one.u1, scaled.u1), (one.u2, scaled.u2), (one.p, scaled.p), (one.c, scaled.c)] {
            prop_assert!(a > 0.0);
            prop_assert!((b - s * s * a).abs() <= 1e-10 * b.max(1e-300));
        }
        prop_assert!(scaled.combined() >= scaled.u1.sqrt());
    }

    /// Renumbering the triangles leaves the estimator unchanged.
    #[test]
    fn estimator_ignores_element_order(seed in any::<u64>(), n in 2usize..6) {
        let case = ProblemCase::preset(CaseKind::InterfaceStokesBrinkman);
        let mesh = partition_interface(build_structured_mesh(2 * n, 2 * n, Rect::UNIT).unwrap(), Axis::X, 0.5).unwrap();
        let mut order: Vec<usize> = (0..mesh.n_triangles()).collect();
        order.shuffle(&mut StdRng::seed_from_u64(seed));
        let mut shuffled = mesh.clone();
        shuffled.triangles = order.iter().map(|&k| mesh.triangles[k]).collect();
        shuffled.subdomain_of = order.iter().map(|&k| mesh.subdomain_of[k]).collect();
        let eta = |m: Mesh| {
            let layout = Arc::new(CoupledLayout::p1(Arc::new(m)).unwrap());
            let perturb = |x: f64, y: f64, t: f64| {
                let e = case.exact_solution(x, y, t);
                [e[0] + 0.01 * x * y, e[1], e[2] + 0.1 * x, e[3] + 0.001 * y]
            };
            let prev = State::interpolate(layout.clone(), 0.5, perturb);
            let next = State::interpolate(layout, 0.75, perturb);
            aposteriori_estimate(&prev, &next, &case, 1.0).unwrap().eta_sq
        };
        let (a, b) = (eta(mesh), eta(shuffled));
        prop_assert!((a - b).abs() <= 1e-12 * a, "{a} vs {b}");
    }
}
