//! Physical coefficients, manufactured solutions and their forcing terms.

use std::f64::consts::PI;
use std::fmt::Debug;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{Axis, Subdomain};

/// `mu(c) = a * exp(b * c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViscosityLaw {
    pub a: f64,
    pub b: f64,
}

impl ViscosityLaw {
    /// Electrolyte law `0.954 exp(27.93 * 0.028 c)`.
    pub const ELECTROLYTE: ViscosityLaw = ViscosityLaw {
        a: 0.954,
        b: 27.93 * 0.028,
    };

    pub fn eval(&self, c: f64) -> f64 {
        self.a * (self.b * c).exp()
    }
}

/// Diffusion coefficient values and the derivatives entering `div(D grad c)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DiffusionValue {
    pub d1: f64,
    pub d2: f64,
    /// `dD1/dx`
    pub d1_x: f64,
    /// `dD2/dy`
    pub d2_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiffusionLaw {
    /// `D1 = t^2 sin^4(pi x) sin^2(2 pi y)`, `D2 = t^2 sin^2(2 pi x) sin^4(pi y)`.
    Manufactured,
    Constant { d1: f64, d2: f64 },
}

impl DiffusionLaw {
    pub fn eval(&self, x: f64, y: f64, t: f64) -> DiffusionValue {
        match *self {
            DiffusionLaw::Constant { d1, d2 } => DiffusionValue {
                d1,
                d2,
                d1_x: 0.0,
                d2_y: 0.0,
            },
            DiffusionLaw::Manufactured => {
                let t2 = t * t;
                let (sx, cx) = (PI * x).sin_cos();
                let (sy, cy) = (PI * y).sin_cos();
                let s2x = (2.0 * PI * x).sin();
                let s2y = (2.0 * PI * y).sin();
                DiffusionValue {
                    d1: t2 * sx.powi(4) * s2y * s2y,
                    d2: t2 * s2x * s2x * sy.powi(4),
                    d1_x: t2 * 4.0 * PI * sx.powi(3) * cx * s2y * s2y,
                    d2_y: t2 * s2x * s2x * 4.0 * PI * sy.powi(3) * cy,
                }
            }
        }
    }
}

/// Coefficients of one flow/transport region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientSet {
    /// Inverse permeability; zero gives Stokes flow.
    pub sigma: f64,
    /// Reaction rate.
    pub alpha: f64,
    /// Porosity.
    pub phi: f64,
    pub viscosity: ViscosityLaw,
    pub diffusion: DiffusionLaw,
    /// Bounds of `mu(c)` over the expected concentration range.
    pub mu_l: f64,
    pub mu_u: f64,
    /// Lower bound of the diffusion coefficients.
    pub d_l: f64,
    /// Viscosity scale in the default stabilization parameters, `mu(1/16)`
    /// for the electrolyte law.
    pub mu_stab: f64,
}

impl CoefficientSet {
    /// Electrolyte viscosity, manufactured diffusion and `alpha = 0.01`.
    pub fn electrolyte(sigma: f64, phi: f64) -> Self {
        let law = ViscosityLaw::ELECTROLYTE;
        // the exact concentration stays in [0, 1/16] for t in [0, 1]
        CoefficientSet {
            sigma,
            alpha: 0.01,
            phi,
            viscosity: law,
            diffusion: DiffusionLaw::Manufactured,
            mu_l: law.eval(0.0),
            mu_u: law.eval(0.0625),
            d_l: 0.0,
            mu_stab: law.eval(0.0625),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.mu_l > 0.0
            && self.mu_l <= self.mu_u
            && self.sigma >= 0.0
            && self.alpha >= 0.0
            && self.phi > 0.0
            && self.d_l >= 0.0
            && self.mu_stab > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("inconsistent coefficients {self:?}")))
        }
    }
}

pub fn viscosity(coeffs: &CoefficientSet, c: f64) -> f64 {
    coeffs.viscosity.eval(c)
}

pub fn diffusion(coeffs: &CoefficientSet, x: f64, y: f64, t: f64) -> (f64, f64) {
    let d = coeffs.diffusion.eval(x, y, t);
    (d.d1, d.d2)
}

/// Value, space derivatives up to second order, and time derivative of a scalar field.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub dx: f64,
    pub dy: f64,
    pub dxx: f64,
    pub dxy: f64,
    pub dyy: f64,
    pub dt: f64,
}

impl Jet {
    pub fn laplacian(&self) -> f64 {
        self.dxx + self.dyy
    }

    pub fn grad(&self) -> [f64; 2] {
        [self.dx, self.dy]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FieldJets {
    pub u1: Jet,
    pub u2: Jet,
    pub p: Jet,
    pub c: Jet,
}

impl FieldJets {
    pub fn values(&self) -> [f64; 4] {
        [self.u1.v, self.u2.v, self.p.v, self.c.v]
    }

    pub fn get(&self, i: usize) -> &Jet {
        match i {
            0 => &self.u1,
            1 => &self.u2,
            2 => &self.p,
            _ => &self.c,
        }
    }
}

/// An analytically known solution `(u1, u2, p, c)(x, y, t)`.
pub trait ExactSolution: Send + Sync + Debug {
    fn jets(&self, x: f64, y: f64, t: f64) -> FieldJets;
}

/// The trigonometric/polynomial manufactured fields
/// `u = t (sin^2(pi x) sin(pi y) cos(pi y), -sin(pi x) cos(pi x) sin^2(pi y))`,
/// `p = t sin(2 pi x) sin(2 pi y)`, `c = t x y (x - 1)(y - 1)`.
///
/// With `time_dependent = false` the factor `t` is replaced by 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedSolution {
    pub time_dependent: bool,
}

impl ExactSolution for ManufacturedSolution {
    fn jets(&self, x: f64, y: f64, t: f64) -> FieldJets {
        let (s, ds) = if self.time_dependent { (t, 1.0) } else { (1.0, 0.0) };
        // a = sin^2(pi z), b = sin(pi z) cos(pi z), w = sin(2 pi z)
        let a = |z: f64| {
            let sz = (PI * z).sin();
            (sz * sz, PI * (2.0 * PI * z).sin(), 2.0 * PI * PI * (2.0 * PI * z).cos())
        };
        let b = |z: f64| {
            let w = (2.0 * PI * z).sin();
            (0.5 * w, PI * (2.0 * PI * z).cos(), -2.0 * PI * PI * w)
        };
        let w = |z: f64| {
            let (sn, cs) = (2.0 * PI * z).sin_cos();
            (sn, 2.0 * PI * cs, -4.0 * PI * PI * sn)
        };
        let q = |z: f64| (z * z - z, 2.0 * z - 1.0, 2.0);
        let product = |fx: (f64, f64, f64), fy: (f64, f64, f64), scale: f64| Jet {
            v: s * scale * fx.0 * fy.0,
            dx: s * scale * fx.1 * fy.0,
            dy: s * scale * fx.0 * fy.1,
            dxx: s * scale * fx.2 * fy.0,
            dxy: s * scale * fx.1 * fy.1,
            dyy: s * scale * fx.0 * fy.2,
            dt: ds * scale * fx.0 * fy.0,
        };
        FieldJets {
            u1: product(a(x), b(y), 1.0),
            u2: product(b(x), a(y), -1.0),
            p: product(w(x), w(y), 1.0),
            c: product(q(x), q(y), 1.0),
        }
    }
}

/// Identically zero fields.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ZeroSolution;

impl ExactSolution for ZeroSolution {
    fn jets(&self, _x: f64, _y: f64, _t: f64) -> FieldJets {
        FieldJets::default()
    }
}

/// Strong-form source terms `[f1x, f1y, f2, g]` that make `jets` an exact solution.
pub fn mms_forcing(coeffs: &CoefficientSet, jets: &FieldJets, x: f64, y: f64, t: f64) -> [f64; 4] {
    let FieldJets { u1, u2, p, c } = jets;
    let mu = viscosity(coeffs, c.v);
    let d = coeffs.diffusion.eval(x, y, t);
    let f1x = -mu * u1.laplacian() + coeffs.sigma * u1.v + p.dx;
    let f1y = -mu * u2.laplacian() + coeffs.sigma * u2.v + p.dy;
    let f2 = u1.dx + u2.dy;
    let div_flux = d.d1_x * c.dx + d.d1 * c.dxx + d.d2_y * c.dy + d.d2 * c.dyy;
    let g = coeffs.phi * c.dt - div_flux + u1.v * c.dx + u2.v * c.dy + coeffs.alpha * c.v;
    [f1x, f1y, f2, g]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseKind {
    Stokes,
    Brinkman,
    InterfaceStokesBrinkman,
}

impl CaseKind {
    pub fn name(self) -> &'static str {
        match self {
            CaseKind::Stokes => "stokes",
            CaseKind::Brinkman => "brinkman",
            CaseKind::InterfaceStokesBrinkman => "interface",
        }
    }
}

impl std::str::FromStr for CaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stokes" => Ok(CaseKind::Stokes),
            "brinkman" => Ok(CaseKind::Brinkman),
            "interface" | "stokes-brinkman" => Ok(CaseKind::InterfaceStokesBrinkman),
            other => Err(Error::InvalidArgument(format!("unknown case '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForcingMode {
    /// Sources derived from the exact solution.
    Manufactured,
    /// All sources zero; the exact solution only supplies initial and boundary data.
    Zero,
}

/// One experiment: coefficients, exact solution and sources.
#[derive(Debug, Clone)]
pub struct ProblemCase {
    pub kind: CaseKind,
    /// Coefficients of the unified domain, or of the Stokes region.
    pub coefficients: CoefficientSet,
    /// Coefficients of the Brinkman region in the interface case.
    pub brinkman: Option<CoefficientSet>,
    pub solution: Arc<dyn ExactSolution>,
    pub forcing: ForcingMode,
    pub t_final: f64,
    /// Beavers-Joseph-Saffman slip coefficient.
    pub alpha_bjs: f64,
    /// Interface location.
    pub split: (Axis, f64),
    /// Adds the boundary flux of the exact concentration as a Neumann source.
    pub neumann_remainder: bool,
}

impl ProblemCase {
    pub fn preset(kind: CaseKind) -> Self {
        let solution: Arc<dyn ExactSolution> = Arc::new(ManufacturedSolution { time_dependent: true });
        let (coefficients, brinkman) = match kind {
            CaseKind::Stokes => (CoefficientSet::electrolyte(0.0, 1.0), None),
            CaseKind::Brinkman => (CoefficientSet::electrolyte(1.0, 2.0), None),
            CaseKind::InterfaceStokesBrinkman => (
                CoefficientSet::electrolyte(0.0, 1.0),
                Some(CoefficientSet::electrolyte(1.0, 2.0)),
            ),
        };
        ProblemCase {
            kind,
            coefficients,
            brinkman,
            solution,
            forcing: ForcingMode::Manufactured,
            t_final: 1.0,
            alpha_bjs: 1.0,
            split: (Axis::X, 0.5),
            neumann_remainder: false,
        }
    }

    pub fn stokes() -> Self {
        Self::preset(CaseKind::Stokes)
    }

    pub fn brinkman() -> Self {
        Self::preset(CaseKind::Brinkman)
    }

    pub fn interface() -> Self {
        Self::preset(CaseKind::InterfaceStokesBrinkman)
    }

    pub fn is_interface(&self) -> bool {
        self.kind == CaseKind::InterfaceStokesBrinkman
    }

    pub fn coefficients(&self, sub: Subdomain) -> &CoefficientSet {
        match (sub, &self.brinkman) {
            (Subdomain::Brinkman, Some(b)) => b,
            _ => &self.coefficients,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.coefficients.validate()?;
        if let Some(b) = &self.brinkman {
            b.validate()?;
        }
        if self.kind == CaseKind::Stokes && (self.coefficients.sigma != 0.0 || self.coefficients.phi != 1.0) {
            return Err(Error::InvalidArgument(
                "the Stokes case requires sigma = 0 and phi = 1".into(),
            ));
        }
        if self.is_interface() && self.brinkman.is_none() {
            return Err(Error::InvalidArgument(
                "the interface case needs Brinkman coefficients".into(),
            ));
        }
        if !(self.t_final > 0.0) {
            return Err(Error::InvalidArgument(format!("final time {} must be positive", self.t_final)));
        }
        Ok(())
    }

    pub fn exact_solution(&self, x: f64, y: f64, t: f64) -> [f64; 4] {
        self.solution.jets(x, y, t).values()
    }

    /// `[f1x, f1y, f2, g]` at a point of region `sub`.
    pub fn forcing_at(&self, sub: Subdomain, x: f64, y: f64, t: f64) -> [f64; 4] {
        match self.forcing {
            ForcingMode::Zero => [0.0; 4],
            ForcingMode::Manufactured => {
                let jets = self.solution.jets(x, y, t);
                mms_forcing(self.coefficients(sub), &jets, x, y, t)
            }
        }
    }

    /// Exact boundary flux `(D grad c) . n`.
    pub fn neumann_flux(&self, sub: Subdomain, x: f64, y: f64, t: f64, n: [f64; 2]) -> f64 {
        let c = self.solution.jets(x, y, t).c;
        let d = self.coefficients(sub).diffusion.eval(x, y, t);
        d.d1 * c.dx * n[0] + d.d2 * c.dy * n[1]
    }
}
