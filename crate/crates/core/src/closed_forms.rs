//! Radial solutions and spectral constants for the ball `B_R ⊂ ℝ^d`.
//!
//! Capacity potential `u(r) = (r/R)^{(p-d)/(p-1)}` outside the ball, torsion
//! function `ψ(r) = (R^{q/(q-1)} - r^{q/(q-1)})/β` inside it, with
//! `β = q/(q-1) · d^{1/(q-1)}`. The torsion function solves
//! `-div(|∇ψ|^{q-2}∇ψ) = 1`, `ψ = 0` on `∂B_R`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};

/// Distance from the singular endpoints `p = 1`, `q = 1` below which parameters are rejected.
pub const EXPONENT_GUARD: f64 = 1e-9;

/// Relative difference above which the two torsion constants are reported as inconsistent.
pub const TORSION_DISCREPANCY_TOL: f64 = 1e-12;

/// Dimension, capacity exponent, torsion exponent and radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProblemParams {
    pub d: usize,
    pub p: f64,
    pub q: f64,
    #[serde(rename = "R")]
    pub radius: f64,
}

impl ProblemParams {
    pub fn new(d: usize, p: f64, q: f64, radius: f64) -> Result<Self> {
        if d < 3 {
            return Err(Error::Params(format!("dimension d = {d} must be >= 3")));
        }
        if !p.is_finite() || p <= 1.0 + EXPONENT_GUARD || p >= d as f64 {
            return Err(Error::Params(format!("capacity exponent p = {p} must satisfy 1 < p < d = {d}")));
        }
        if !q.is_finite() || q <= 1.0 + EXPONENT_GUARD {
            return Err(Error::Params(format!("torsion exponent q = {q} must satisfy q > 1")));
        }
        if !radius.is_finite() || radius <= 0.0 {
            return Err(Error::Params(format!("radius R = {radius} must be positive")));
        }
        Ok(Self { d, p, q, radius })
    }

    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        Self::new(self.d, self.p, self.q, radius)
    }

    fn df(&self) -> f64 {
        self.d as f64
    }

    /// `(d-p)/(p-1)`.
    pub fn capacity_ratio(&self) -> f64 {
        (self.df() - self.p) / (self.p - 1.0)
    }

    /// `q/(q-1)`.
    pub fn torsion_power(&self) -> f64 {
        self.q / (self.q - 1.0)
    }

    /// `|∇u|` on `∂B_R`: `γ = (d-p)/((p-1)R)`.
    pub fn gamma(&self) -> f64 {
        self.capacity_ratio() / self.radius
    }

    /// `|∇ψ|` on `∂B_R`: `γ̃ = (R/d)^{1/(q-1)}`.
    pub fn gamma_tilde(&self) -> f64 {
        self.ln_gamma_tilde().exp()
    }

    pub fn ln_gamma_tilde(&self) -> f64 {
        (self.radius / self.df()).ln() / (self.q - 1.0)
    }

    /// Exterior Steklov eigenvalue `μ_k = (d-2+k)/R`.
    pub fn steklov_exterior(&self, k: i64) -> Result<f64> {
        steklov_exterior(self.d, self.radius, k)
    }

    /// Interior Steklov eigenvalue `μ̂_k = k/R`.
    pub fn steklov_interior(&self, k: i64) -> Result<f64> {
        steklov_interior(self.radius, k)
    }
}

/// Which constant `ω_d` stands for when reading the literal ball formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OmegaConvention {
    UnitBallVolume,
    UnitSphereArea,
}

impl OmegaConvention {
    pub fn value(self, d: usize) -> f64 {
        match self {
            Self::UnitBallVolume => unit_ball_volume(d),
            Self::UnitSphereArea => unit_sphere_area(d),
        }
    }
}

/// Literal published constants or constants recomputed from the radial solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluationMode {
    Paper,
    Derived,
}

impl EvaluationMode {
    pub const BOTH: [EvaluationMode; 2] = [EvaluationMode::Paper, EvaluationMode::Derived];

    pub fn name(self) -> &'static str {
        match self {
            Self::Paper => "paper",
            Self::Derived => "derived",
        }
    }
}

impl std::str::FromStr for EvaluationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Self::Paper),
            "derived" => Ok(Self::Derived),
            other => Err(Error::Input(format!("unknown evaluation mode {other:?}"))),
        }
    }
}

/// `|S^{d-1}|`, via `σ_{d+2} = 2π σ_d / d`.
pub fn unit_sphere_area(d: usize) -> f64 {
    let mut area = if d.is_multiple_of(2) { 2.0 * PI } else { 2.0 };
    let mut n = if d.is_multiple_of(2) { 2 } else { 1 };
    while n < d {
        area *= 2.0 * PI / n as f64;
        n += 2;
    }
    area
}

/// `|B_1| = |S^{d-1}|/d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    unit_sphere_area(d) / d as f64
}

/// `u(r) = (r/R)^{(p-d)/(p-1)}` for `r >= R`.
pub fn capacity_potential(params: &ProblemParams, r: f64) -> Result<f64> {
    if !(r >= params.radius) || !r.is_finite() {
        return Err(Error::Domain(format!("capacity potential needs r >= R = {}, got {r}", params.radius)));
    }
    Ok((r / params.radius).powf(-params.capacity_ratio()))
}

/// `ψ(r)` for `0 <= r <= R`.
pub fn torsion_function(params: &ProblemParams, r: f64) -> Result<f64> {
    if !(0.0..=params.radius).contains(&r) {
        return Err(Error::Domain(format!("torsion function needs 0 <= r <= R = {}, got {r}", params.radius)));
    }
    let s = params.torsion_power();
    let beta = s * (params.df().ln() / (params.q - 1.0)).exp();
    Ok((params.radius.powf(s) - r.powf(s)) / beta)
}

/// `ψ'(r) = -(r/d)^{1/(q-1)}`.
pub fn torsion_function_derivative(params: &ProblemParams, r: f64) -> f64 {
    -(r / params.df()).powf(1.0 / (params.q - 1.0))
}

/// `(γ, γ̃)`.
pub fn boundary_gradients(params: &ProblemParams) -> (f64, f64) {
    (params.gamma(), params.gamma_tilde())
}

/// `𝒞_p(B_R) = |S^{d-1}| ((d-p)/(p-1))^{p-1} R^{d-p}`.
pub fn ball_capacity(params: &ProblemParams) -> f64 {
    ln_ball_capacity(params).exp()
}

pub fn ln_ball_capacity(params: &ProblemParams) -> f64 {
    unit_sphere_area(params.d).ln()
        + params.capacity_ratio().ln() * (params.p - 1.0)
        + (params.df() - params.p) * params.radius.ln()
}

/// Literal published torsion constant `ω_d (q-1) d^{-q/(q-1)} / (d(q-1)+1) R^{d+q/(q-1)}`.
pub fn ball_torsion_paper(params: &ProblemParams, omega: OmegaConvention) -> f64 {
    ln_ball_torsion_paper(params, omega).exp()
}

pub fn ln_ball_torsion_paper(params: &ProblemParams, omega: OmegaConvention) -> f64 {
    let (d, q) = (params.df(), params.q);
    omega.value(params.d).ln() + (q - 1.0).ln() - (d * (q - 1.0) + 1.0).ln() - params.torsion_power() * d.ln()
        + (d + params.torsion_power()) * params.radius.ln()
}

/// `∫_{B_R} ψ = |B_1| R^{d+q/(q-1)} (q-1) d^{-1/(q-1)} / (d(q-1)+q)`.
pub fn ball_torsion_derived(params: &ProblemParams) -> f64 {
    ln_ball_torsion_derived(params).exp()
}

pub fn ln_ball_torsion_derived(params: &ProblemParams) -> f64 {
    let (d, q) = (params.df(), params.q);
    unit_ball_volume(params.d).ln() + (q - 1.0).ln() - (d * (q - 1.0) + q).ln() - d.ln() / (q - 1.0)
        + (d + params.torsion_power()) * params.radius.ln()
}

/// Ball torsional rigidity; paper mode reads `ω_d` as the unit sphere area, the same
/// convention the capacity constant requires.
pub fn ball_torsion(params: &ProblemParams, mode: EvaluationMode) -> f64 {
    match mode {
        EvaluationMode::Paper => ball_torsion_paper(params, OmegaConvention::UnitSphereArea),
        EvaluationMode::Derived => ball_torsion_derived(params),
    }
}

pub fn steklov_exterior(d: usize, radius: f64, k: i64) -> Result<f64> {
    if k < 0 {
        return Err(Error::Input(format!("Steklov index must be >= 0, got {k}")));
    }
    Ok((d as f64 - 2.0 + k as f64) / radius)
}

pub fn steklov_interior(radius: f64, k: i64) -> Result<f64> {
    if k < 0 {
        return Err(Error::Input(format!("Steklov index must be >= 0, got {k}")));
    }
    Ok(k as f64 / radius)
}

/// Ball values and boundary gradients in one place.
#[derive(Debug, Clone, Serialize)]
pub struct BallConstants {
    pub gamma: f64,
    pub gamma_tilde: f64,
    pub cap_value: f64,
    pub tor_value_paper: f64,
    pub tor_value_derived: f64,
    pub omega_convention: OmegaConvention,
    /// `|paper - derived| / |derived| > 1e-12`.
    pub torsion_discrepancy: bool,
}

pub fn ball_constants(params: &ProblemParams, omega_convention: OmegaConvention) -> BallConstants {
    let tor_value_paper = ball_torsion_paper(params, omega_convention);
    let tor_value_derived = ball_torsion_derived(params);
    BallConstants {
        gamma: params.gamma(),
        gamma_tilde: params.gamma_tilde(),
        cap_value: ball_capacity(params),
        tor_value_paper,
        tor_value_derived,
        omega_convention,
        torsion_discrepancy: relative_difference(tor_value_paper, tor_value_derived) > TORSION_DISCREPANCY_TOL,
    }
}

pub fn relative_difference(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
