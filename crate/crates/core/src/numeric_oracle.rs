//! Brute-force checks in d = 3 that share no code with the variation formulas.
//!
//! A perturbed ball is the star-shaped domain `r(ξ) = c(t)(R + tρ(ξ))`, where `c(t)`
//! restores the volume of `B_R` exactly. On the sphere the normal is radial, so the
//! first-order normal velocity of this family is `ρ`. The second-order part of the
//! deformation only enters the ball-case second variations through `V̈(0)`, which the
//! normalization pins to zero, so differentiating these domains twice in `t` tests
//! the formulas as stated.
//!
//! The `p = 2` exterior capacity and `q = 2` torsion problems are solved by
//! least-squares collocation in the exact harmonic bases `(R/r)^{l+1} Y_{l,m}` and
//! `(r/R)^l Y_{l,m}`. Derivatives in `t` come from Richardson-extrapolated central
//! differences.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::sphere_harmonics::{gauss_legendre, make_quadrature, HarmonicIndex, HarmonicTable, SphereQuadrature};
use crate::variation_engine::{CoefficientKind, ModeSpectrum};

/// Largest boundary displacement `t·‖ρ‖∞` used by the default difference steps.
pub const DEFAULT_AMPLITUDE: f64 = 0.02;

/// Step amplitude for the volume and area checks, which involve no solver noise.
pub const GEOMETRY_AMPLITUDE: f64 = 0.05;

/// Singular-value ratio above which a collocation fit is rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Quadrature exact for zonal polynomials of degree `<= order`: Gauss–Legendre in `cos θ`
/// at the single azimuth `φ = 0`, weights carrying the factor `2π`.
fn axisymmetric_quadrature(order: usize) -> SphereQuadrature {
    let n = order / 2 + 1;
    let (x, w) = gauss_legendre(n);
    let theta: Vec<f64> = x.iter().map(|x| x.acos()).collect();
    SphereQuadrature {
        nodes: theta.iter().map(|&t| [t.sin(), 0.0, t.cos()]).collect(),
        weights: w.iter().map(|w| 2.0 * PI * w).collect(),
        order,
        phi: vec![0.0; n],
        theta,
    }
}

fn quadrature_for(axisymmetric: bool, order: usize) -> Result<SphereQuadrature> {
    if axisymmetric {
        Ok(axisymmetric_quadrature(order.max(2)))
    } else {
        make_quadrature(order.max(2))
    }
}

/// `max_ξ |ρ(ξ)|` bound from `|Y_{k,m}| <= √((2k+1)/4π)`.
pub fn sup_norm_bound(rho: &ModeSpectrum) -> f64 {
    rho.entries().iter().map(|(i, c)| c.abs() * ((2 * i.k + 1) as f64 / (4.0 * PI)).sqrt()).sum::<f64>() / rho.radius()
}

/// Boundary radius and its tangential gradient on the unit sphere at each node.
struct Boundary {
    r: Vec<f64>,
    grad_sq: Vec<f64>,
}

/// The domain `r(ξ) = c(t)(R + tρ(ξ))` in ℝ³.
#[derive(Debug, Clone, Serialize)]
pub struct PerturbedBall {
    pub radius: f64,
    pub rho: ModeSpectrum,
    pub t: f64,
    pub normalize_volume: bool,
    pub c_of_t: f64,
}

impl PerturbedBall {
    /// `rho` holds shape coefficients orthonormal on `∂B_R`, so `ρ(ξ) = Σ coeff·Y(ξ)/R`.
    pub fn new(rho: ModeSpectrum, t: f64, normalize_volume: bool) -> Result<Self> {
        if rho.kind() != CoefficientKind::Shape {
            return Err(Error::Input("perturbed ball needs a shape (ρ) spectrum".into()));
        }
        let radius = rho.radius();
        if !(radius > 0.0 && radius.is_finite()) || !t.is_finite() {
            return Err(Error::Input(format!("invalid radius {radius} or amplitude {t}")));
        }
        let mut ball = Self { radius, rho, t, normalize_volume, c_of_t: 1.0 };
        if normalize_volume {
            // volume scales as c³
            let target = 4.0 * PI / 3.0 * radius.powi(3);
            ball.c_of_t = (target / perturbed_volume(&ball)?).cbrt();
        }
        Ok(ball)
    }

    pub fn is_axisymmetric(&self) -> bool {
        self.rho.entries().iter().all(|(i, c)| i.m == 0 || *c == 0.0)
    }

    fn boundary(&self, quad: &SphereQuadrature) -> Result<Boundary> {
        let l_max = self.rho.max_degree();
        let n = quad.len();
        let mut r = Vec::with_capacity(n);
        let mut grad_sq = Vec::with_capacity(n);
        for i in 0..n {
            let table = HarmonicTable::at_angles(l_max, quad.theta[i], quad.phi[i]);
            let (mut v, mut gt, mut gp) = (0.0, 0.0, 0.0);
            for (idx, c) in self.rho.entries() {
                v += c * table.values[idx.flat()];
                gt += c * table.d_theta[idx.flat()];
                gp += c * table.d_phi[idx.flat()];
            }
            let scale = self.c_of_t * self.t / self.radius;
            let ri = self.c_of_t * self.radius + scale * v;
            if !(ri > 0.0) {
                return Err(Error::NotStarShaped { node: i, radius: ri });
            }
            r.push(ri);
            grad_sq.push(scale * scale * (gt * gt + gp * gp));
        }
        Ok(Boundary { r, grad_sq })
    }
}

/// `|Ω_t| = (1/3)∮ r(ξ)³ dS`, exact for the polynomial integrand.
pub fn perturbed_volume(ball: &PerturbedBall) -> Result<f64> {
    let quad = quadrature_for(ball.is_axisymmetric(), 3 * ball.rho.max_degree())?;
    let b = ball.boundary(&quad)?;
    quad.integrate_indexed(|i, _| b.r[i].powi(3) / 3.0)
}

/// `|∂Ω_t| = ∮ r √(r² + |∇*r|²) dS` with the analytic tangential gradient.
pub fn perturbed_area(ball: &PerturbedBall) -> Result<f64> {
    perturbed_area_with_order(ball, 8 * ball.rho.max_degree() + 48)
}

pub fn perturbed_area_with_order(ball: &PerturbedBall, order: usize) -> Result<f64> {
    let quad = quadrature_for(ball.is_axisymmetric(), order)?;
    let b = ball.boundary(&quad)?;
    quad.integrate_indexed(|i, _| b.r[i] * (b.r[i] * b.r[i] + b.grad_sq[i]).sqrt())
}

/// Truncation, quadrature and difference-step settings of the collocation oracles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralSolveConfig {
    #[serde(rename = "L")]
    pub l_max: usize,
    pub quad_order: usize,
    pub fd_steps: Vec<f64>,
    pub tol: f64,
}

impl SpectralSolveConfig {
    /// `L = 8k + 8`, `4L`-exact quadrature and steps `{4h, 2h, h}` with `4h‖ρ‖∞ = amplitude`.
    pub fn for_spectrum(rho: &ModeSpectrum, amplitude: f64) -> Self {
        let l_max = 8 * rho.max_degree() + 8;
        let sup = sup_norm_bound(rho).max(f64::MIN_POSITIVE);
        let h = amplitude / (4.0 * sup);
        Self { l_max, quad_order: 4 * l_max, fd_steps: vec![4.0 * h, 2.0 * h, h], tol: 1e-9 }
    }

    pub fn validate(&self, rho: &ModeSpectrum) -> Result<()> {
        let need = 2 * rho.max_degree() + 4;
        if self.l_max < need {
            return Err(Error::Input(format!("L = {} below 2·(max degree) + 4 = {need}", self.l_max)));
        }
        if self.quad_order < 2 * self.l_max {
            return Err(Error::Input(format!("quadrature order {} below 2L = {}", self.quad_order, 2 * self.l_max)));
        }
        check_steps(&self.fd_steps, 3)?;
        if !(self.tol > 0.0) {
            return Err(Error::Input(format!("tolerance {} must be positive", self.tol)));
        }
        Ok(())
    }
}

fn check_steps(steps: &[f64], min: usize) -> Result<()> {
    if steps.len() < min {
        return Err(Error::Input(format!("need at least {min} difference steps, got {}", steps.len())));
    }
    if steps.iter().any(|h| !(h.is_finite() && *h > 0.0)) || steps.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Input(format!("difference steps {steps:?} must be positive and strictly decreasing")));
    }
    Ok(())
}

/// Least-squares fit of a harmonic expansion to boundary data.
#[derive(Debug, Clone, Serialize)]
pub struct CollocationFit {
    pub basis: Vec<HarmonicIndex>,
    pub coefficients: Vec<f64>,
    /// Max boundary misfit over the collocation nodes.
    pub residual: f64,
    pub condition: f64,
}

fn collocation_basis(l_max: usize, axisymmetric: bool) -> Vec<HarmonicIndex> {
    (0..=l_max)
        .flat_map(|l| {
            let li = l as i64;
            let ms: Vec<i64> = if axisymmetric { vec![0] } else { (-li..=li).collect() };
            ms.into_iter().map(move |m| HarmonicIndex { k: l, m })
        })
        .collect()
}

/// Fits `Σ a_{lm} radial(l, r) Y_{lm}(ξ) = rhs(r)` on `r = r(ξ)`, weighted by `√w`.
fn fit_boundary<FR, FB>(
    quad: &SphereQuadrature,
    b: &Boundary,
    cfg: &SpectralSolveConfig,
    axisymmetric: bool,
    radial: FR,
    rhs: FB,
) -> Result<CollocationFit>
where
    FR: Fn(usize, f64) -> f64,
    FB: Fn(f64) -> f64,
{
    let basis = collocation_basis(cfg.l_max, axisymmetric);
    let (n, m) = (quad.len(), basis.len());
    if n < m {
        return Err(Error::Input(format!("{n} collocation nodes for {m} unknowns")));
    }
    let mut a = DMatrix::zeros(n, m);
    let mut rhs_v = DVector::zeros(n);
    for i in 0..n {
        let table = HarmonicTable::at_angles(cfg.l_max, quad.theta[i], quad.phi[i]);
        let sw = quad.weights[i].sqrt();
        for (j, idx) in basis.iter().enumerate() {
            a[(i, j)] = radial(idx.k, b.r[i]) * table.values[idx.flat()];
        }
        rhs_v[i] = rhs(b.r[i]);
        a.row_mut(i).scale_mut(sw);
        rhs_v[i] *= sw;
    }
    let svd = a.clone().svd(true, true);
    let (smax, smin) = svd.singular_values.iter().fold((0.0f64, f64::INFINITY), |(hi, lo), &s| (hi.max(s), lo.min(s)));
    let condition = smax / smin;
    if !(condition < MAX_CONDITION) {
        return Err(Error::Solver {
            message: format!(
                "ill-conditioned collocation matrix (condition {condition:e}); use a larger L or a smaller t"
            ),
            residual: f64::NAN,
        });
    }
    let coef = svd
        .solve(&rhs_v, 0.0)
        .map_err(|e| Error::Solver { message: format!("least-squares solve failed: {e}"), residual: f64::NAN })?;
    let misfit = &a * &coef - &rhs_v;
    let residual = (0..n).map(|i| (misfit[i] / quad.weights[i].sqrt()).abs()).fold(0.0, f64::max);
    if !(residual <= cfg.tol) {
        return Err(Error::Solver { message: format!("boundary fit misses tolerance {:e}", cfg.tol), residual });
    }
    Ok(CollocationFit { basis, coefficients: coef.iter().copied().collect(), residual, condition })
}

/// Value and collocation diagnostics of one oracle solve.
#[derive(Debug, Clone, Serialize)]
pub struct OracleSolve {
    pub value: f64,
    pub fit: CollocationFit,
}

fn solve_setup(ball: &PerturbedBall, cfg: &SpectralSolveConfig) -> Result<(SphereQuadrature, Boundary, bool)> {
    cfg.validate(&ball.rho)?;
    let axisymmetric = ball.is_axisymmetric();
    let quad = quadrature_for(axisymmetric, cfg.quad_order)?;
    let b = ball.boundary(&quad)?;
    Ok((quad, b, axisymmetric))
}

/// `𝒞₂(Ω_t)` from `u = Σ a_{lm}(R/r)^{l+1}Y_{lm}`, `u = 1` on `∂Ω_t`: the flux at infinity
/// is `√(4π) R a₀₀`.
pub fn exterior_capacity_p2(ball: &PerturbedBall, cfg: &SpectralSolveConfig) -> Result<OracleSolve> {
    let (quad, b, axi) = solve_setup(ball, cfg)?;
    let radius = ball.radius;
    let fit = fit_boundary(&quad, &b, cfg, axi, |l, r| (radius / r).powi(l as i32 + 1), |_| 1.0)?;
    let value = (4.0 * PI).sqrt() * radius * fit.coefficients[0];
    Ok(OracleSolve { value, fit })
}

/// `𝒯₂(Ω_t) = ∫ψ` with `ψ = -r²/6 + Σ b_{lm}(r/R)^l Y_{lm}`, integrated radially in closed form
/// along each node direction.
pub fn torsion_q2(ball: &PerturbedBall, cfg: &SpectralSolveConfig) -> Result<OracleSolve> {
    let (quad, b, axi) = solve_setup(ball, cfg)?;
    let radius = ball.radius;
    let fit = fit_boundary(&quad, &b, cfg, axi, |l, r| (r / radius).powi(l as i32), |r| r * r / 6.0)?;
    let value = quad.integrate_indexed(|i, _| {
        let rb = b.r[i];
        let table = HarmonicTable::at_angles(cfg.l_max, quad.theta[i], quad.phi[i]);
        let series: f64 = fit
            .basis
            .iter()
            .zip(&fit.coefficients)
            .map(|(idx, c)| {
                let l = idx.k as i32;
                c * table.values[idx.flat()] * rb.powi(l + 3) / ((l + 3) as f64 * radius.powi(l))
            })
            .sum();
        -rb.powi(5) / 30.0 + series
    })?;
    Ok(OracleSolve { value, fit })
}

/// Richardson-extrapolated derivative estimate.
#[derive(Debug, Clone, Serialize)]
pub struct FdEstimate {
    pub value: f64,
    /// Difference between the two most refined extrapolants.
    pub error_estimate: f64,
    /// Raw central differences, one per step.
    pub raw: Vec<f64>,
    /// Set when `error_estimate` exceeds the requested tolerance.
    pub flagged: bool,
}

/// Neville table in `h²` for estimates `D(h) = D + a h² + b h⁴ + …`.
fn richardson(steps: &[f64], raw: &[f64]) -> (f64, f64) {
    let n = raw.len();
    let mut table: Vec<Vec<f64>> = vec![raw.to_vec()];
    for j in 1..n {
        let prev = &table[j - 1];
        let row: Vec<f64> = (j..n)
            .map(|i| {
                let ratio = (steps[i - j] / steps[i]).powi(2);
                let (coarse, fine) = (prev[i - j], prev[i - j + 1]);
                fine + (fine - coarse) / (ratio - 1.0)
            })
            .collect();
        table.push(row);
    }
    let best = table[n - 1][0];
    let err = if n == 1 { f64::NAN } else { (best - table[n - 2].last().copied().unwrap()).abs() };
    (best, err)
}

fn sample_curve<F>(f: &F, points: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    let values: Vec<f64> = points.par_iter().map(|&t| f(t)).collect::<Result<_>>()?;
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!("curve value {} at t = {} is not finite", values[i], points[i])));
    }
    Ok(values)
}

fn finish(steps: &[f64], raw: Vec<f64>, tol: Option<f64>) -> FdEstimate {
    let (value, error_estimate) = richardson(steps, &raw);
    let flagged = tol.is_some_and(|tol| !(error_estimate <= tol));
    FdEstimate { value, error_estimate, raw, flagged }
}

/// `f''(0)` from `(f(h) - 2f(0) + f(-h))/h²` over decreasing steps, extrapolated in `h²`.
pub fn fd_second_derivative<F>(f: F, steps: &[f64], tol: Option<f64>) -> Result<FdEstimate>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    check_steps(steps, 2)?;
    let mut points = vec![0.0];
    points.extend(steps.iter().flat_map(|&h| [h, -h]));
    let v = sample_curve(&f, &points)?;
    let raw = steps.iter().enumerate().map(|(i, h)| (v[1 + 2 * i] - 2.0 * v[0] + v[2 + 2 * i]) / (h * h)).collect();
    Ok(finish(steps, raw, tol))
}

/// `f'(0)` from `(f(h) - f(-h))/2h`, extrapolated in `h²`.
pub fn fd_first_derivative<F>(f: F, steps: &[f64], tol: Option<f64>) -> Result<FdEstimate>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    check_steps(steps, 2)?;
    let points: Vec<f64> = steps.iter().flat_map(|&h| [h, -h]).collect();
    let v = sample_curve(&f, &points)?;
    let raw = steps.iter().enumerate().map(|(i, h)| (v[2 * i] - v[2 * i + 1]) / (2.0 * h)).collect();
    Ok(finish(steps, raw, tol))
}

/// Maximum entrywise deviations of the finite-difference `A(0)`, `Ȧ(0)`, `Ä(0)` from the lemma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AijCheck {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
}

impl AijCheck {
    pub fn max(&self) -> f64 {
        self.a0.max(self.a1).max(self.a2)
    }
}

/// `A(t) = G Gᵀ`, `G = (I + tDv + t²/2 Dw)^{-1}`: `A_ij = ∂_k Φ⁻¹_i ∂_k Φ⁻¹_j` at `Φ_t(x)`.
fn a_of_t(dv: &DMatrix<f64>, dw: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let n = dv.nrows();
    let jac = DMatrix::identity(n, n) + dv * t + dw * (0.5 * t * t);
    let g = jac.try_inverse().ok_or_else(|| Error::Input(format!("Φ_t not invertible at t = {t}")))?;
    Ok(&g * g.transpose())
}

/// Compares `A(t)` against `A(0) = I`, `Ȧ(0) = -(∂_j v_i + ∂_i v_j)` and
/// `Ä(0) = 2∂_k v_i ∂_j v_k + 2∂_k v_j ∂_i v_k + 2∂_k v_i ∂_k v_j - ∂_i w_j - ∂_j w_i`.
pub fn check_aij_lemma(
    v: &dyn VectorField,
    w: &dyn VectorField,
    points: &[Vec<f64>],
    steps: &[f64],
) -> Result<AijCheck> {
    check_steps(steps, 2)?;
    let n = v.dim();
    let mut out = AijCheck { a0: 0.0, a1: 0.0, a2: 0.0 };
    for x in points {
        // B_ij = ∂_j v_i
        let b = v.jacobian(x);
        let c = w.jacobian(x);
        let a0 = a_of_t(&b, &c, 0.0)?;
        let expect1 = -(&b + b.transpose());
        let b2 = &b * &b;
        let expect2 = (&b2 + b2.transpose() + &b * b.transpose()) * 2.0 - &c - c.transpose();
        for i in 0..n {
            for j in 0..n {
                out.a0 = out.a0.max((a0[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs());
                let entry = |t: f64| a_of_t(&b, &c, t).map(|a| a[(i, j)]);
                let d1 = fd_first_derivative(entry, steps, None)?.value;
                let d2 = fd_second_derivative(entry, steps, None)?.value;
                out.a1 = out.a1.max((d1 - expect1[(i, j)]).abs());
                out.a2 = out.a2.max((d2 - expect2[(i, j)]).abs());
            }
        }
    }
    Ok(out)
}

/// Deviations of the finite-difference Taylor coefficients of `J(t) = det(I + tDv + t²/2 Dw)`
/// from `1`, `div v` and `(div v)² - Dv:Dv + div w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JacobianCoefficientCheck {
    pub j0: f64,
    pub j1: f64,
    pub j2: f64,
}

impl JacobianCoefficientCheck {
    pub fn max(&self) -> f64 {
        self.j0.max(self.j1).max(self.j2)
    }
}

pub fn check_jacobian_coefficients(
    v: &dyn VectorField,
    w: &dyn VectorField,
    points: &[Vec<f64>],
    steps: &[f64],
) -> Result<JacobianCoefficientCheck> {
    check_steps(steps, 2)?;
    let n = v.dim();
    let mut out = JacobianCoefficientCheck { j0: 0.0, j1: 0.0, j2: 0.0 };
    for x in points {
        let b = v.jacobian(x);
        let c = w.jacobian(x);
        let jac = |t: f64| Ok((DMatrix::identity(n, n) + &b * t + &c * (0.5 * t * t)).determinant());
        let div_v = b.trace();
        let expect2 = div_v * div_v - (&b * &b).trace() + c.trace();
        out.j0 = out.j0.max((jac(0.0)? - 1.0).abs());
        out.j1 = out.j1.max((fd_first_derivative(jac, steps, None)?.value - div_v).abs());
        out.j2 = out.j2.max((fd_second_derivative(jac, steps, None)?.value - expect2).abs());
    }
    Ok(out)
}

/// `ρ = Y_{k,0}` on `∂B_R` (unit coefficient).
pub fn zonal_mode(radius: f64, k: usize) -> ModeSpectrum {
    ModeSpectrum::zonal(radius, &[(k, 1.0)])
}

/// `t ↦ value` along the volume-normalized family of `rho`.
pub fn normalized_family<'a, F>(rho: &'a ModeSpectrum, functional: F) -> impl Fn(f64) -> Result<f64> + Sync + 'a
where
    F: Fn(&PerturbedBall) -> Result<f64> + Sync + 'a,
{
    move |t| functional(&PerturbedBall::new(rho.clone(), t, true)?)
}
