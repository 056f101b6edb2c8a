//! First and second domain variations at the ball, evaluated mode by mode.
//!
//! A perturbation of `B_R` is described by the normal velocity `ρ = v·ν` on
//! `∂B_R`, expanded in harmonics that are orthonormal on `∂B_R` (so
//! `∮_{∂B_R} ρ² dS = Σ coeff²`). The shape derivatives are `u' = γρ` and
//! `ψ' = γ̃ρ` on the boundary, so a spectrum may equally be given in terms of
//! `c_k` (coefficients of `u'`) or `c̃_k` (coefficients of `ψ'`).
//!
//! Every second variation is diagonal in the harmonic basis and depends only
//! on the per-degree energies `Σ_m coeff²_{k,m}`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::closed_forms::{
    self, ball_capacity, ball_torsion, unit_sphere_area, EvaluationMode, OmegaConvention, ProblemParams,
};
use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::sphere_harmonics::{laplace_beltrami_eigenvalue, HarmonicIndex};

/// What the coefficients of a [`ModeSpectrum`] expand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientKind {
    /// `ρ = v·ν`
    Shape,
    /// `u'` on `∂B_R`
    CapacityShapeDerivative,
    /// `ψ'` on `∂B_R`
    TorsionShapeDerivative,
}

/// Harmonic coefficients of a boundary perturbation of `B_R`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSpectrum {
    entries: BTreeMap<HarmonicIndex, f64>,
    radius: f64,
    kind: CoefficientKind,
}

impl ModeSpectrum {
    pub fn new(radius: f64, kind: CoefficientKind) -> Self {
        Self { entries: BTreeMap::new(), radius, kind }
    }

    /// Shape spectrum `ρ = Σ c_k Y_{k,0}` from `(k, c_k)` pairs.
    pub fn zonal(radius: f64, modes: &[(usize, f64)]) -> Self {
        let mut s = Self::new(radius, CoefficientKind::Shape);
        for &(k, c) in modes {
            s.add(HarmonicIndex::zonal(k), c);
        }
        s
    }

    pub fn with(mut self, idx: HarmonicIndex, coeff: f64) -> Self {
        self.add(idx, coeff);
        self
    }

    /// Adds `coeff` to the coefficient at `idx`.
    pub fn add(&mut self, idx: HarmonicIndex, coeff: f64) {
        *self.entries.entry(idx).or_insert(0.0) += coeff;
    }

    pub fn entries(&self) -> &BTreeMap<HarmonicIndex, f64> {
        &self.entries
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn kind(&self) -> CoefficientKind {
        self.kind
    }

    pub fn coefficient(&self, idx: HarmonicIndex) -> f64 {
        self.entries.get(&idx).copied().unwrap_or(0.0)
    }

    pub fn max_degree(&self) -> usize {
        self.entries.keys().map(|i| i.k).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.entries.values().all(|c| *c == 0.0)
    }

    /// Every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            entries: self.entries.iter().map(|(i, c)| (*i, c * factor)).collect(),
            radius: self.radius,
            kind: self.kind,
        }
    }

    /// `Σ_m coeff²_{k,m}` per degree, zero degrees omitted.
    pub fn degree_energies(&self) -> BTreeMap<usize, f64> {
        let mut out = BTreeMap::new();
        for (idx, c) in &self.entries {
            if *c != 0.0 {
                *out.entry(idx.k).or_insert(0.0) += c * c;
            }
        }
        out
    }

    pub fn is_volume_preserving(&self) -> bool {
        self.entries.iter().all(|(i, c)| i.k != 0 || *c == 0.0)
    }

    pub fn is_barycenter_preserving(&self) -> bool {
        self.entries.iter().all(|(i, c)| i.k != 1 || *c == 0.0)
    }

    /// Rejects degree-0 (volume) and degree-1 (translation) content.
    pub fn check_admissible(&self) -> Result<()> {
        if !self.is_volume_preserving() {
            return Err(Error::Precondition { k: 0, constraint: "volume preservation" });
        }
        if !self.is_barycenter_preserving() {
            return Err(Error::Precondition { k: 1, constraint: "the barycenter condition" });
        }
        Ok(())
    }

    /// The same perturbation expressed through `ρ = v·ν`.
    pub fn to_shape(&self, params: &ProblemParams) -> Result<Self> {
        self.check_radius(params)?;
        let factor = match self.kind {
            CoefficientKind::Shape => 1.0,
            CoefficientKind::CapacityShapeDerivative => 1.0 / params.gamma(),
            CoefficientKind::TorsionShapeDerivative => 1.0 / params.gamma_tilde(),
        };
        let mut s = self.scaled(factor);
        s.kind = CoefficientKind::Shape;
        Ok(s)
    }

    /// Coefficients of `u'` (`c_k = γ ρ_k`) or `ψ'` (`c̃_k = γ̃ ρ_k`).
    pub fn to_kind(&self, params: &ProblemParams, kind: CoefficientKind) -> Result<Self> {
        let shape = self.to_shape(params)?;
        let factor = match kind {
            CoefficientKind::Shape => 1.0,
            CoefficientKind::CapacityShapeDerivative => params.gamma(),
            CoefficientKind::TorsionShapeDerivative => params.gamma_tilde(),
        };
        let mut s = shape.scaled(factor);
        s.kind = kind;
        Ok(s)
    }

    fn check_radius(&self, params: &ProblemParams) -> Result<()> {
        if (self.radius - params.radius).abs() > 1e-12 * params.radius {
            return Err(Error::Input(format!(
                "spectrum lives on radius {} but parameters use R = {}",
                self.radius, params.radius
            )));
        }
        Ok(())
    }

    /// `∮_{∂B_R} f dS` where `f` has these coefficients (only the k = 0 term survives).
    pub fn surface_mean_integral(&self, d: usize) -> f64 {
        let area = unit_sphere_area(d) * self.radius.powi(d as i32 - 1);
        self.coefficient(HarmonicIndex::zonal(0)) * area.sqrt()
    }
}

/// Which domain functional a report is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Functional {
    Volume,
    Perimeter,
    Capacity,
    Torsion,
    Product,
}

/// `(value, first variation, second variation)` with per-degree contributions.
#[derive(Debug, Clone, Serialize)]
pub struct VariationReport {
    pub functional: Functional,
    pub value: f64,
    pub first: f64,
    pub second: f64,
    pub mode: EvaluationMode,
    pub per_mode_terms: BTreeMap<usize, f64>,
    pub flags: Vec<String>,
}

impl VariationReport {
    fn from_terms(
        functional: Functional,
        value: f64,
        first: f64,
        mode: EvaluationMode,
        per_mode_terms: BTreeMap<usize, f64>,
    ) -> Self {
        let second = per_mode_terms.values().sum();
        Self { functional, value, first, second, mode, per_mode_terms, flags: Vec::new() }
    }
}

/// How the second-order normal field `w·ν` is fixed in the volume expansion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SecondOrderFlux {
    /// Pure radial graph `r = R + tρ`, no second-order term.
    None,
    /// Given `∮ w·ν dS`.
    Flux(f64),
    /// `∮ w·ν dS` chosen so that `V̈(0) = 0`.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VolumeVariation {
    pub first: f64,
    pub second: f64,
    /// `∮ w·ν dS` used in `second`.
    pub w_flux: f64,
}

/// `V̇(0) = ∮ρ dS`, `V̈(0) = (d-1)/R ∮ρ² dS + ∮ w·ν dS` for radial perturbations of `B_R`.
pub fn volume_variation(d: usize, spectrum: &ModeSpectrum, w: SecondOrderFlux) -> Result<VolumeVariation> {
    if spectrum.kind != CoefficientKind::Shape {
        return Err(Error::Input("volume variation expects a shape (ρ) spectrum".into()));
    }
    let r = spectrum.radius;
    let first = spectrum.surface_mean_integral(d);
    let curvature: f64 = (d as f64 - 1.0) / r * spectrum.degree_energies().values().sum::<f64>();
    let w_flux = match w {
        SecondOrderFlux::None => 0.0,
        SecondOrderFlux::Flux(f) => f,
        SecondOrderFlux::Auto => -curvature,
    };
    Ok(VolumeVariation { first, second: curvature + w_flux, w_flux })
}

/// `(Ṡ(0), S̈(0))` on the volume-preserving branch `V̈(0) = 0`.
pub fn perimeter_variation(d: usize, spectrum: &ModeSpectrum) -> Result<(f64, f64)> {
    if spectrum.kind != CoefficientKind::Shape {
        return Err(Error::Input("perimeter variation expects a shape (ρ) spectrum".into()));
    }
    if !spectrum.is_volume_preserving() {
        return Err(Error::Precondition { k: 0, constraint: "volume preservation" });
    }
    let r = spectrum.radius;
    let first = (d as f64 - 1.0) / r * spectrum.surface_mean_integral(d);
    let second = spectrum
        .degree_energies()
        .iter()
        .map(|(&k, e)| e * (laplace_beltrami_eigenvalue(k, d) - (d as f64 - 1.0)) / (r * r))
        .sum();
    Ok((first, second))
}

/// `Ċ_p(0) = (p-1) γ^p ∮ρ dS`.
pub fn first_variation_capacity(params: &ProblemParams, spectrum: &ModeSpectrum) -> Result<f64> {
    let rho = spectrum.to_shape(params)?;
    Ok((params.p - 1.0) * params.gamma().powf(params.p) * rho.surface_mean_integral(params.d))
}

/// `Ṫ_q(0) = γ̃^q ∮ρ dS`.
pub fn first_variation_torsion(params: &ProblemParams, spectrum: &ModeSpectrum) -> Result<f64> {
    let rho = spectrum.to_shape(params)?;
    Ok((params.q * params.ln_gamma_tilde()).exp() * rho.surface_mean_integral(params.d))
}

/// Per-degree `C̈_p(0)` terms per unit `ρ`-energy: `p γ^p [(p-1)μ_k - (d-1)/R]`.
fn capacity_mode_factor(params: &ProblemParams, k: usize) -> f64 {
    let mu = (params.d as f64 - 2.0 + k as f64) / params.radius;
    params.p * params.gamma().powf(params.p) * ((params.p - 1.0) * mu - (params.d as f64 - 1.0) / params.radius)
}

/// Per-degree `T̈_q(0)` terms per unit `ρ`-energy: `-q γ̃^q [(q-1)k/R + (d-1)/R]`.
fn torsion_mode_factor(params: &ProblemParams, k: usize) -> f64 {
    let mu_hat = k as f64 / params.radius;
    -params.q
        * (params.q * params.ln_gamma_tilde()).exp()
        * ((params.q - 1.0) * mu_hat + (params.d as f64 - 1.0) / params.radius)
}

/// `C̈_p(0) = p γ^{p-2} Σ_{k>=2} c_k² [(p-1)μ_k - (d-1)/R]`, `c_k = γ ρ_k`.
pub fn second_variation_capacity(params: &ProblemParams, spectrum: &ModeSpectrum) -> Result<VariationReport> {
    let rho = spectrum.to_shape(params)?;
    rho.check_admissible()?;
    let terms = rho.degree_energies().into_iter().map(|(k, e)| (k, e * capacity_mode_factor(params, k))).collect();
    Ok(VariationReport::from_terms(
        Functional::Capacity,
        ball_capacity(params),
        first_variation_capacity(params, &rho)?,
        EvaluationMode::Derived,
        terms,
    ))
}

/// `T̈_q(0) = -q γ̃^{q-2} Σ_{k>=2} c̃_k² [(q-1)k/R + (d-1)/R]`, `c̃_k = γ̃ ρ_k`.
pub fn second_variation_torsion(params: &ProblemParams, spectrum: &ModeSpectrum) -> Result<VariationReport> {
    let rho = spectrum.to_shape(params)?;
    rho.check_admissible()?;
    let terms = rho.degree_energies().into_iter().map(|(k, e)| (k, e * torsion_mode_factor(params, k))).collect();
    Ok(VariationReport::from_terms(
        Functional::Torsion,
        closed_forms::ball_torsion_derived(params),
        first_variation_torsion(params, &rho)?,
        EvaluationMode::Derived,
        terms,
    ))
}

/// Affine mode-sign function `Z(k) = e^{log_scale} (offset + slope·k)`.
///
/// The positive factor is carried separately because the unscaled coefficients
/// over- or underflow as `q → 1⁺`; signs only depend on `offset + slope·k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeSignFunction {
    pub log_scale: f64,
    pub offset: f64,
    pub slope: f64,
}

impl ModeSignFunction {
    pub fn scaled(&self, k: usize) -> f64 {
        self.offset + self.slope * k as f64
    }

    pub fn value(&self, k: usize) -> f64 {
        self.log_scale.exp() * self.scaled(k)
    }

    /// `c₂` (constant part).
    pub fn constant(&self) -> f64 {
        self.log_scale.exp() * self.offset
    }

    /// `c₃` (slope in k).
    pub fn linear(&self) -> f64 {
        self.log_scale.exp() * self.slope
    }
}

/// Coefficients of `G̈(0) = R^{d-p-1/(q-1)} ((d-p)/(p-1))^p Σ c̃_k² (c₂ + k c₃)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProductCoefficients {
    pub mode: EvaluationMode,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub z: ModeSignFunction,
}

/// `ln R^{d-p-1/(q-1)} + p ln((d-p)/(p-1))`, the log of the positive prefactor.
pub fn ln_product_prefactor(params: &ProblemParams) -> f64 {
    let e = params.d as f64 - params.p - 1.0 / (params.q - 1.0);
    e * params.radius.ln() + params.p * params.capacity_ratio().ln()
}

/// `ln c₀`, `ln c₁` in the requested mode.
fn ln_c0_c1(params: &ProblemParams, mode: EvaluationMode) -> (f64, f64) {
    let (d, p, q) = (params.d as f64, params.p, params.q);
    let a = params.capacity_ratio();
    match mode {
        EvaluationMode::Paper => {
            let ln_c0 = (p * (q - 1.0) / (d * (q - 1.0) + 1.0)).ln() + p * a.ln() - q / (q - 1.0) * d.ln();
            let ln_c1 = (p - 1.0) * a.ln() - (q - 2.0) / (q - 1.0) * d.ln();
            (ln_c0, ln_c1)
        }
        EvaluationMode::Derived => {
            // C̈·𝒯 + 𝒞·T̈ per unit c̃², divided by R^{d-p-1/(q-1)}
            let ln_r_exp = (1.0 + d - p - 1.0 / (q - 1.0)) * params.radius.ln();
            let ln_c0 = p.ln() + p * params.gamma().ln() + closed_forms::ln_ball_torsion_derived(params)
                - 2.0 * params.ln_gamma_tilde()
                - ln_r_exp;
            let ln_c1 =
                q.ln() + (q - 2.0) * params.ln_gamma_tilde() + closed_forms::ln_ball_capacity(params) - ln_r_exp;
            (ln_c0, ln_c1)
        }
    }
}

/// `c₀ … c₃`; paper mode evaluates the printed `c₂`, `c₃` verbatim, derived mode
/// rearranges `c₀[(p-1)(d-2+k) - d + 1] - c₁[(q-1)k + d - 1]` with recomputed constants.
pub fn product_coefficients(params: &ProblemParams, mode: EvaluationMode) -> ProductCoefficients {
    let (d, p, q) = (params.d as f64, params.p, params.q);
    let (ln_c0, ln_c1) = ln_c0_c1(params, mode);
    let z = match mode {
        EvaluationMode::Paper => {
            // c₂ = A(pd-2d-2p+3) - (d-1)d^{-(q-2)/(q-1)}, c₃ = A(p-1) - (q-1)d^{-(q-2)/(q-1)}
            // with A = p(q-1)d^{-q/(q-1)}/(d(q-1)+1); factor out d^{-(q-2)/(q-1)}.
            let a_scaled = p * (q - 1.0) / (d * (q - 1.0) + 1.0) * (-2.0 / (q - 1.0) * d.ln()).exp();
            ModeSignFunction {
                log_scale: -(q - 2.0) / (q - 1.0) * d.ln(),
                offset: a_scaled * (p * d - 2.0 * d - 2.0 * p + 3.0) - (d - 1.0),
                slope: a_scaled * (p - 1.0) - (q - 1.0),
            }
        }
        EvaluationMode::Derived => {
            let ratio = (ln_c0 - ln_c1).exp();
            ModeSignFunction {
                log_scale: ln_c1 - p * params.capacity_ratio().ln(),
                offset: ratio * ((p - 1.0) * (d - 2.0) - d + 1.0) - (d - 1.0),
                slope: ratio * (p - 1.0) - (q - 1.0),
            }
        }
    };
    ProductCoefficients { mode, c0: ln_c0.exp(), c1: ln_c1.exp(), c2: z.constant(), c3: z.linear(), z }
}

/// `𝒢(B_R) = 𝒞_p 𝒯_q` in the given mode.
pub fn ball_product(params: &ProblemParams, mode: EvaluationMode) -> f64 {
    ball_capacity(params) * ball_torsion(params, mode)
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

fn product_terms(params: &ProblemParams, rho: &ModeSpectrum, mode: EvaluationMode) -> BTreeMap<usize, f64> {
    match mode {
        EvaluationMode::Paper => {
            let z = product_coefficients(params, mode).z;
            // c̃_k² = γ̃² ρ_k²
            let ln_pref = ln_product_prefactor(params) + 2.0 * params.ln_gamma_tilde() + z.log_scale;
            rho.degree_energies().into_iter().map(|(k, e)| (k, e * ln_pref.exp() * z.scaled(k))).collect()
        }
        EvaluationMode::Derived => {
            let cap = ball_capacity(params);
            let tor = closed_forms::ball_torsion_derived(params);
            rho.degree_energies()
                .into_iter()
                .map(|(k, e)| (k, e * (capacity_mode_factor(params, k) * tor + cap * torsion_mode_factor(params, k))))
                .collect()
        }
    }
}

/// Second variation of `𝒢 = 𝒞_p 𝒯_q` in one mode; flags list the degrees where
/// the other mode's term has the opposite sign.
pub fn second_variation_product(
    params: &ProblemParams,
    spectrum: &ModeSpectrum,
    mode: EvaluationMode,
) -> Result<VariationReport> {
    Ok(compare_product(params, spectrum)?.report(mode).clone())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SignRow {
    pub k: usize,
    pub paper: i8,
    pub derived: i8,
    pub agree: bool,
}

/// Both product evaluations with their per-degree sign agreement table.
#[derive(Debug, Clone, Serialize)]
pub struct ProductComparison {
    pub paper: VariationReport,
    pub derived: VariationReport,
    pub sign_table: Vec<SignRow>,
}

impl ProductComparison {
    pub fn report(&self, mode: EvaluationMode) -> &VariationReport {
        match mode {
            EvaluationMode::Paper => &self.paper,
            EvaluationMode::Derived => &self.derived,
        }
    }
}

pub fn compare_product(params: &ProblemParams, spectrum: &ModeSpectrum) -> Result<ProductComparison> {
    let rho = spectrum.to_shape(params)?;
    rho.check_admissible()?;
    let first_c = first_variation_capacity(params, &rho)?;
    let first_t = first_variation_torsion(params, &rho)?;
    let cap = ball_capacity(params);
    let build = |mode| {
        let tor = ball_torsion(params, mode);
        VariationReport::from_terms(
            Functional::Product,
            cap * tor,
            first_c * tor + cap * first_t,
            mode,
            product_terms(params, &rho, mode),
        )
    };
    let mut paper = build(EvaluationMode::Paper);
    let mut derived = build(EvaluationMode::Derived);
    let sign_table: Vec<SignRow> = paper
        .per_mode_terms
        .iter()
        .map(|(&k, &pt)| {
            let (ps, ds) = (sign(pt), sign(derived.per_mode_terms[&k]));
            SignRow { k, paper: ps, derived: ds, agree: ps == ds }
        })
        .collect();
    for row in sign_table.iter().filter(|r| !r.agree) {
        let note =
            format!("k={}: paper-mode term sign {} differs from derived-mode sign {}", row.k, row.paper, row.derived);
        paper.flags.push(note.clone());
        derived.flags.push(note);
    }
    if closed_forms::ball_constants(params, OmegaConvention::UnitSphereArea).torsion_discrepancy {
        paper.flags.push("paper-literal torsion constant differs from the radial integral".into());
    }
    Ok(ProductComparison { paper, derived, sign_table })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JacobianCheck {
    pub max_residual: f64,
    /// `max_residual / |t|³`.
    pub scaled_residual: f64,
}

/// `max |det(I + tDv + t²/2 Dw) - [1 + t div v + t²/2((div v)² - Dv:Dv + div w)]|` over the points.
pub fn check_jacobian_expansion(
    v: &dyn VectorField,
    w: &dyn VectorField,
    t: f64,
    points: &[Vec<f64>],
) -> JacobianCheck {
    let n = v.dim();
    let mut max_residual: f64 = 0.0;
    for x in points {
        let dv = v.jacobian(x);
        let dw = w.jacobian(x);
        let exact = (DMatrix::identity(n, n) + &dv * t + &dw * (0.5 * t * t)).determinant();
        let div_v = dv.trace();
        // Dv:Dv = ∂_i v_j ∂_j v_i = tr(Dv²)
        let dv_dv = (&dv * &dv).trace();
        let approx = 1.0 + t * div_v + 0.5 * t * t * (div_v * div_v - dv_dv + dw.trace());
        max_residual = max_residual.max((exact - approx).abs());
    }
    JacobianCheck { max_residual, scaled_residual: max_residual / t.abs().powi(3) }
}
