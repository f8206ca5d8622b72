//! Algebraic subgrid-scale stabilization parameters.
//!
//! The flow parameters `tau1`, `tau2` are unaffected by the time step because
//! the mass operator has zeros in the flow rows; only the transport parameter
//! gets the time-modified value `tau3' = (phi/dt + 1/tau3)^-1`.

use crate::error::{Error, Result};
use crate::mesh::Subdomain;
use crate::problem::{CoefficientSet, ProblemCase};

/// Which family of parameter formulas to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabMode {
    /// `(c1 mu_u / h^2 + c2 sigma)^-1`, `c1p mu_u`, `(9D/(4h^2) + 3U/(2h) + alpha)^-1`.
    Eq9,
    /// `(4 mu / h^2 + sigma)^-1`, `4 mu h`, `19 (9/(4h^2) + 3/(2h) + alpha)^-1`.
    Section5,
}

impl std::str::FromStr for StabMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eq9" | "general" => Ok(StabMode::Eq9),
            "section5" | "experiment" => Ok(StabMode::Section5),
            other => Err(Error::InvalidArgument(format!("unknown stabilization mode '{other}'"))),
        }
    }
}

/// How the subscale correction series is summed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesMode {
    /// `r / (1 - r)`.
    Closed,
    /// `sum_{i=1}^{terms} r^i`.
    Finite(usize),
    /// No subscale correction.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilizationConfig {
    pub mode: StabMode,
    pub series: SeriesMode,
    pub c1_u: f64,
    pub c2_u: f64,
    pub c1_p: f64,
    /// Leading factor of `tau3` in [`StabMode::Section5`].
    pub tau3_scale: f64,
    /// Advective velocity scale `U`.
    pub advective_scale: f64,
    /// Diffusion scale `D`.
    pub diffusion_scale: f64,
}

impl Default for StabilizationConfig {
    fn default() -> Self {
        StabilizationConfig {
            mode: StabMode::Section5,
            series: SeriesMode::Closed,
            c1_u: 4.0,
            c2_u: 1.0,
            c1_p: 4.0,
            tau3_scale: 19.0,
            advective_scale: 1.0,
            diffusion_scale: 1.0,
        }
    }
}

/// Parameters of one region for one mesh size and time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilizationParams {
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
    pub tau3_prime: f64,
    /// `tau3' / tau3`, defined as 1 when `tau3 = 0`.
    pub tau3_ratio: f64,
    pub series_factor: f64,
    pub mode: StabMode,
}

impl StabilizationParams {
    /// All parameters zero: the stabilized form reduces to plain Galerkin.
    pub fn zero() -> Self {
        StabilizationParams {
            tau1: 0.0,
            tau2: 0.0,
            tau3: 0.0,
            tau3_prime: 0.0,
            tau3_ratio: 1.0,
            series_factor: 0.0,
            mode: StabMode::Section5,
        }
    }

    pub fn new(coeffs: &CoefficientSet, h: f64, dt: f64, cfg: &StabilizationConfig) -> Result<Self> {
        let (tau1, tau2, tau3) = compute_taus(coeffs, h, cfg)?;
        let tau3_prime = compute_tau_prime(tau3, dt, coeffs.phi)?;
        let r = coeffs.phi * tau3_prime / dt;
        let series_factor = subscale_series_factor(r, cfg.series)?;
        Ok(StabilizationParams {
            tau1,
            tau2,
            tau3,
            tau3_prime,
            tau3_ratio: if dt.is_infinite() { 1.0 } else { dt / (dt + coeffs.phi * tau3) },
            series_factor,
            mode: cfg.mode,
        })
    }

    /// Weight of the transport residual against the adjoint test operator.
    pub fn transport_adjoint_weight(&self) -> f64 {
        self.tau3_prime * (1.0 + self.series_factor)
    }

    /// Weight of the transport residual against the plain test function,
    /// `(1 - tau3'/tau3) - (tau3'/tau3) S`; zero for the closed-form series.
    pub fn transport_mass_weight(&self) -> f64 {
        (1.0 - self.tau3_ratio) - self.tau3_ratio * self.series_factor
    }
}

/// `(tau1, tau2, tau3)` for mesh size `h`.
pub fn compute_taus(coeffs: &CoefficientSet, h: f64, cfg: &StabilizationConfig) -> Result<(f64, f64, f64)> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("mesh size must be positive, got {h}")));
    }
    let h2 = h * h;
    let alpha = coeffs.alpha;
    Ok(match cfg.mode {
        StabMode::Section5 => {
            let mu = coeffs.mu_stab;
            (
                1.0 / (cfg.c1_u * mu / h2 + cfg.c2_u * coeffs.sigma),
                cfg.c1_p * mu * h,
                cfg.tau3_scale / (9.0 / (4.0 * h2) + 3.0 / (2.0 * h) + alpha),
            )
        }
        StabMode::Eq9 => (
            1.0 / (cfg.c1_u * coeffs.mu_u / h2 + cfg.c2_u * coeffs.sigma),
            cfg.c1_p * coeffs.mu_u,
            1.0 / (9.0 * cfg.diffusion_scale / (4.0 * h2) + 3.0 * cfg.advective_scale / (2.0 * h) + alpha),
        ),
    })
}

/// `tau3' = (phi/dt + 1/tau3)^-1 = tau3 dt / (dt + phi tau3)`.
pub fn compute_tau_prime(tau3: f64, dt: f64, phi: f64) -> Result<f64> {
    if !(dt > 0.0) || !(phi > 0.0) || !(tau3 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tau' needs dt > 0, phi > 0, tau >= 0 (dt={dt}, phi={phi}, tau={tau3})"
        )));
    }
    if dt.is_infinite() {
        return Ok(tau3);
    }
    Ok(tau3 * dt / (dt + phi * tau3))
}

/// Sum of the geometric series `sum r^i` defining the subscale correction.
pub fn subscale_series_factor(r: f64, mode: SeriesMode) -> Result<f64> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::DivergentSeries(r));
    }
    Ok(match mode {
        SeriesMode::Closed => r / (1.0 - r),
        SeriesMode::Finite(terms) => r * (1.0 - r.powi(terms as i32)) / (1.0 - r),
        SeriesMode::Off => 0.0,
    })
}

/// Parameters for every region of a case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilizationSet {
    by_region: [StabilizationParams; 3],
}

impl StabilizationSet {
    pub fn uniform(p: StabilizationParams) -> Self {
        StabilizationSet { by_region: [p; 3] }
    }

    pub fn for_case(case: &ProblemCase, h: f64, dt: f64, cfg: &StabilizationConfig) -> Result<Self> {
        let mut by_region = [StabilizationParams::zero(); 3];
        for sub in [Subdomain::Unified, Subdomain::Stokes, Subdomain::Brinkman] {
            by_region[sub.index()] = StabilizationParams::new(case.coefficients(sub), h, dt, cfg)?;
        }
        Ok(StabilizationSet { by_region })
    }

    pub fn get(&self, sub: Subdomain) -> &StabilizationParams {
        &self.by_region[sub.index()]
    }
}
