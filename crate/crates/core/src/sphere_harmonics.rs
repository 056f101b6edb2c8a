//! Real surface harmonics and product quadrature on the unit sphere S².
//!
//! Convention used everywhere in this crate: real, L²(S²)-orthonormal harmonics
//! without the Condon–Shortley phase,
//!
//! ```text
//! Y_{k,0}  = P̄_k^0(cos θ)
//! Y_{k,m}  = √2 P̄_k^m(cos θ) cos(mφ)     m > 0
//! Y_{k,-m} = √2 P̄_k^m(cos θ) sin(mφ)     m > 0
//! ```
//!
//! where `P̄_k^m` are the associated Legendre functions normalized so that
//! `∮ Y² dS = 1`. Only d = 3 is evaluated pointwise; for general dimension the
//! crate needs just the Laplace–Beltrami eigenvalues and multiplicities.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Degree/order pair of a real surface harmonic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub struct HarmonicIndex {
    pub k: usize,
    pub m: i64,
}

impl HarmonicIndex {
    pub fn new(k: i64, m: i64) -> Result<Self> {
        if k < 0 {
            return Err(Error::Input(format!("harmonic degree must be >= 0, got {k}")));
        }
        if m.abs() > k {
            return Err(Error::Input(format!("harmonic order {m} outside [-{k}, {k}]")));
        }
        Ok(Self { k: k as usize, m })
    }

    /// Zonal harmonic `Y_{k,0}`.
    pub fn zonal(k: usize) -> Self {
        Self { k, m: 0 }
    }

    /// Position in a degree-major table `(0,0), (1,-1), (1,0), (1,1), (2,-2), ...`.
    pub fn flat(&self) -> usize {
        ((self.k * self.k + self.k) as i64 + self.m) as usize
    }
}

/// Laplace–Beltrami eigenvalue `k(k+d-2)` of degree-k harmonics on S^{d-1}.
pub fn laplace_beltrami_eigenvalue(k: usize, d: usize) -> f64 {
    (k * (k + d - 2)) as f64
}

/// Dimension of the space of degree-k spherical harmonics on S^{d-1}.
pub fn multiplicity(k: usize, d: usize) -> u64 {
    let binom = |n: i64, r: i64| -> u64 {
        if n < r || r < 0 || n < 0 {
            return 0;
        }
        let r = r.min(n - r);
        (0..r).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
    };
    let (k, d) = (k as i64, d as i64);
    binom(k + d - 1, d - 1) - binom(k + d - 3, d - 1)
}

fn check_unit(xi: &[f64; 3]) -> Result<()> {
    let n = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
    if !n.is_finite() || (n - 1.0).abs() > 1e-12 {
        return Err(Error::Input(format!("point {xi:?} is not on the unit sphere (|xi| = {n})")));
    }
    Ok(())
}

/// Polar and azimuthal angle of a unit vector.
pub fn angles(xi: &[f64; 3]) -> (f64, f64) {
    let rho = xi[0].hypot(xi[1]);
    (rho.atan2(xi[2]), xi[1].atan2(xi[0]))
}

pub fn unit_vector(theta: f64, phi: f64) -> [f64; 3] {
    let s = theta.sin();
    [s * phi.cos(), s * phi.sin(), theta.cos()]
}

/// Fully normalized associated Legendre functions `P̄_l^m(cos θ)`, `0 <= m <= l <= l_max`,
/// stored at `l*(l+1)/2 + m`.
fn normalized_legendre(l_max: usize, x: f64, s: f64) -> Vec<f64> {
    let idx = |l: usize, m: usize| l * (l + 1) / 2 + m;
    let mut p = vec![0.0; (l_max + 1) * (l_max + 2) / 2];
    p[0] = 0.5 / PI.sqrt();
    for m in 1..=l_max {
        let mf = m as f64;
        p[idx(m, m)] = ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s * p[idx(m - 1, m - 1)];
    }
    for m in 0..l_max {
        p[idx(m + 1, m)] = (2.0 * m as f64 + 3.0).sqrt() * x * p[idx(m, m)];
    }
    for m in 0..=l_max {
        for l in (m + 2)..=l_max {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
            p[idx(l, m)] = a * (x * p[idx(l - 1, m)] - b * p[idx(l - 2, m)]);
        }
    }
    p
}

/// All real harmonics up to degree `l_max` at one point, with tangential derivatives.
///
/// `d_theta` is ∂θ Y and `d_phi` is (1/sin θ) ∂φ Y, so that the squared tangential
/// gradient on S² is `d_theta² + d_phi²`. Derivatives are singular at the poles and
/// are only meaningful for 0 < θ < π.
#[derive(Debug, Clone)]
pub struct HarmonicTable {
    pub l_max: usize,
    pub values: Vec<f64>,
    pub d_theta: Vec<f64>,
    pub d_phi: Vec<f64>,
}

impl HarmonicTable {
    pub fn at_angles(l_max: usize, theta: f64, phi: f64) -> Self {
        let (x, s) = (theta.cos(), theta.sin());
        let p = normalized_legendre(l_max, x, s);
        let pidx = |l: usize, m: usize| l * (l + 1) / 2 + m;
        let n = (l_max + 1) * (l_max + 1);
        let mut values = vec![0.0; n];
        let mut d_theta = vec![0.0; n];
        let mut d_phi = vec![0.0; n];
        let sqrt2 = 2f64.sqrt();
        for l in 0..=l_max {
            let lf = l as f64;
            for m in 0..=l {
                let mf = m as f64;
                let plm = p[pidx(l, m)];
                let lower = if l > m { p[pidx(l - 1, m)] } else { 0.0 };
                let dp = if s != 0.0 {
                    (lf * x * plm - ((2.0 * lf + 1.0) * (lf * lf - mf * mf) / (2.0 * lf - 1.0)).sqrt() * lower) / s
                } else {
                    0.0
                };
                let base = l * l + l;
                if m == 0 {
                    values[base] = plm;
                    d_theta[base] = dp;
                } else {
                    let (sn, cs) = (mf * phi).sin_cos();
                    let pos = base + m;
                    let neg = base - m;
                    values[pos] = sqrt2 * plm * cs;
                    values[neg] = sqrt2 * plm * sn;
                    d_theta[pos] = sqrt2 * dp * cs;
                    d_theta[neg] = sqrt2 * dp * sn;
                    if s != 0.0 {
                        d_phi[pos] = -sqrt2 * mf * plm * sn / s;
                        d_phi[neg] = sqrt2 * mf * plm * cs / s;
                    }
                }
            }
        }
        Self { l_max, values, d_theta, d_phi }
    }

    pub fn value(&self, idx: HarmonicIndex) -> f64 {
        self.values[idx.flat()]
    }
}

/// Real orthonormal surface harmonic `Y_{k,m}(ξ)`.
pub fn real_harmonic(idx: HarmonicIndex, xi: &[f64; 3]) -> Result<f64> {
    check_unit(xi)?;
    let (theta, phi) = angles(xi);
    let (x, s) = (theta.cos(), theta.sin());
    let m = idx.m.unsigned_abs() as usize;
    let p = normalized_legendre(idx.k, x, s);
    let plm = p[idx.k * (idx.k + 1) / 2 + m];
    Ok(match idx.m {
        0 => plm,
        mm if mm > 0 => 2f64.sqrt() * plm * (m as f64 * phi).cos(),
        _ => 2f64.sqrt() * plm * (m as f64 * phi).sin(),
    })
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Product rule: Gauss–Legendre in cos θ times the trapezoid rule in φ.
#[derive(Debug, Clone)]
pub struct SphereQuadrature {
    pub nodes: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    /// Polynomial degree integrated exactly.
    pub order: usize,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
}

impl SphereQuadrature {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Σ wᵢ f(ξᵢ); fails on the first non-finite integrand value.
    pub fn integrate<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(&[f64; 3]) -> f64,
    {
        self.integrate_indexed(|_, xi| f(xi))
    }

    /// Like [`integrate`](Self::integrate) but the integrand also receives the node index,
    /// for integrands tabulated per node.
    pub fn integrate_indexed<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(usize, &[f64; 3]) -> f64,
    {
        let mut sum = 0.0;
        for (i, (xi, w)) in self.nodes.iter().zip(&self.weights).enumerate() {
            let v = f(i, xi);
            if !v.is_finite() {
                return Err(Error::NonFinite { node: i, xi: *xi, value: v });
            }
            sum += w * v;
        }
        Ok(sum)
    }
}

/// Quadrature exact for polynomials of degree `<= order` on S².
///
/// Uses `order/2 + 1` Gauss–Legendre nodes in cos θ and `order + 1` equispaced
/// azimuths, i.e. `(order/2 + 1)(order + 1)` nodes in total.
pub fn make_quadrature(order: usize) -> Result<SphereQuadrature> {
    if order < 2 {
        return Err(Error::Input(format!("quadrature order must be >= 2, got {order}")));
    }
    let n_theta = order / 2 + 1;
    let n_phi = order + 1;
    let (x, w) = gauss_legendre(n_theta);
    let dphi = 2.0 * PI / n_phi as f64;
    let mut q = SphereQuadrature {
        nodes: Vec::with_capacity(n_theta * n_phi),
        weights: Vec::with_capacity(n_theta * n_phi),
        order,
        theta: Vec::with_capacity(n_theta * n_phi),
        phi: Vec::with_capacity(n_theta * n_phi),
    };
    for (xi, wi) in x.iter().zip(&w) {
        let theta = xi.acos();
        for j in 0..n_phi {
            let phi = j as f64 * dphi;
            q.nodes.push(unit_vector(theta, phi));
            q.weights.push(wi * dphi);
            q.theta.push(theta);
            q.phi.push(phi);
        }
    }
    Ok(q)
}

/// Σ wᵢ f(ξᵢ) over `quad`.
pub fn integrate<F>(quad: &SphereQuadrature, f: F) -> Result<f64>
where
    F: Fn(&[f64; 3]) -> f64,
{
    quad.integrate(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_indices(l_max: usize) -> Vec<HarmonicIndex> {
        (0..=l_max as i64).flat_map(|k| (-k..=k).map(move |m| HarmonicIndex::new(k, m).unwrap())).collect()
    }

    #[test]
    fn harmonic_examples() {
        let pole = [0.0, 0.0, 1.0];
        let y00 = real_harmonic(HarmonicIndex::zonal(0), &[0.6, 0.0, 0.8]).unwrap();
        assert!((y00 - 1.0 / (4.0 * PI).sqrt()).abs() < 1e-15);
        let y10 = real_harmonic(HarmonicIndex::zonal(1), &pole).unwrap();
        assert!((y10 - (3.0 / (4.0 * PI)).sqrt()).abs() < 1e-15);
        let y20 = real_harmonic(HarmonicIndex::zonal(2), &pole).unwrap();
        assert!((y20 - (5.0 / (4.0 * PI)).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn closed_form_low_degree() {
        // Y_{1,1} = √(3/4π) x, Y_{2,-2} = √(15/4π) x y, Y_{2,1} = √(15/4π) x z
        let xi = unit_vector(0.7, 1.3);
        let c1 = (3.0 / (4.0 * PI)).sqrt();
        let c2 = (15.0 / (4.0 * PI)).sqrt();
        let v = |k, m| real_harmonic(HarmonicIndex::new(k, m).unwrap(), &xi).unwrap();
        assert!((v(1, 1) - c1 * xi[0]).abs() < 1e-14);
        assert!((v(1, -1) - c1 * xi[1]).abs() < 1e-14);
        assert!((v(2, -2) - c2 * xi[0] * xi[1]).abs() < 1e-14);
        assert!((v(2, 1) - c2 * xi[0] * xi[2]).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(HarmonicIndex::new(-1, 0), Err(Error::Input(_))));
        assert!(matches!(HarmonicIndex::new(2, 3), Err(Error::Input(_))));
        assert!(real_harmonic(HarmonicIndex::zonal(1), &[0.0, 0.0, 1.1]).is_err());
        assert!(make_quadrature(1).is_err());
    }

    #[test]
    fn quadrature_examples() {
        let q = make_quadrature(8).unwrap();
        assert!((q.weights.iter().sum::<f64>() - 4.0 * PI).abs() < 1e-13);
        let y20 = |xi: &[f64; 3]| real_harmonic(HarmonicIndex::zonal(2), xi).unwrap();
        assert!(integrate(&q, y20).unwrap().abs() < 1e-13);
        assert!((integrate(&q, |xi| y20(xi).powi(2)).unwrap() - 1.0).abs() < 1e-12);
        assert!((integrate(&q, |_| 1.0).unwrap() - 4.0 * PI).abs() < 1e-13);
        let y10 = |xi: &[f64; 3]| real_harmonic(HarmonicIndex::zonal(1), xi).unwrap();
        assert!(integrate(&q, |xi| y10(xi) * y20(xi)).unwrap().abs() < 1e-12);
    }

    #[test]
    fn cube_of_perturbed_constant() {
        // ∮(1+εY)³ = 4π + 3ε² + ε³∮Y³; ∮Y₂₀³ from an independent high-order rule
        let eps = 0.1;
        let y20 = |xi: &[f64; 3]| real_harmonic(HarmonicIndex::zonal(2), xi).unwrap();
        let fine = make_quadrature(40).unwrap();
        let cube = integrate(&fine, |xi| y20(xi).powi(3)).unwrap();
        let q = make_quadrature(8).unwrap();
        let got = integrate(&q, |xi| (1.0 + eps * y20(xi)).powi(3)).unwrap();
        assert!((got - (4.0 * PI + 3.0 * eps * eps + eps.powi(3) * cube)).abs() < 1e-12);
    }

    #[test]
    fn non_finite_integrand_reports_node() {
        let q = make_quadrature(4).unwrap();
        let err = integrate(&q, |xi| if xi[2] > 0.5 { f64::NAN } else { 1.0 }).unwrap_err();
        match err {
            Error::NonFinite { node, xi, .. } => {
                assert_eq!(xi, q.nodes[node]);
                assert!(xi[2] > 0.5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn orthonormality() {
        let order = 16;
        let q = make_quadrature(order).unwrap();
        let idx = all_indices(order / 2);
        let tables: Vec<_> =
            q.theta.iter().zip(&q.phi).map(|(t, p)| HarmonicTable::at_angles(order / 2, *t, *p)).collect();
        for a in &idx {
            for b in &idx {
                let v = q.integrate_indexed(|i, _| tables[i].value(*a) * tables[i].value(*b)).unwrap();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-11, "{a:?} {b:?} {v}");
            }
        }
    }

    #[test]
    fn table_matches_pointwise() {
        let (theta, phi) = (1.1, -2.4);
        let t = HarmonicTable::at_angles(7, theta, phi);
        for idx in all_indices(7) {
            let v = real_harmonic(idx, &unit_vector(theta, phi)).unwrap();
            assert!((t.value(idx) - v).abs() < 1e-14);
        }
    }

    #[test]
    fn table_derivatives_match_finite_differences() {
        let (theta, phi, h) = (0.9, 0.4, 1e-5);
        let t = HarmonicTable::at_angles(6, theta, phi);
        let tp = HarmonicTable::at_angles(6, theta + h, phi);
        let tm = HarmonicTable::at_angles(6, theta - h, phi);
        let pp = HarmonicTable::at_angles(6, theta, phi + h);
        let pm = HarmonicTable::at_angles(6, theta, phi - h);
        for i in 0..t.values.len() {
            let dth = (tp.values[i] - tm.values[i]) / (2.0 * h);
            let dph = (pp.values[i] - pm.values[i]) / (2.0 * h) / theta.sin();
            assert!((t.d_theta[i] - dth).abs() < 1e-8, "{i}");
            assert!((t.d_phi[i] - dph).abs() < 1e-8, "{i}");
        }
    }

    #[test]
    fn eigenfunction_property() {
        // spherical finite-difference Laplace–Beltrami, O(h²)
        let f = |idx: HarmonicIndex, th: f64, ph: f64| real_harmonic(idx, &unit_vector(th, ph)).unwrap();
        let (th, ph): (f64, f64) = (1.0, 0.7);
        for idx in all_indices(4) {
            let lb = |h: f64| {
                let s = th.sin();
                let sp = (th + h / 2.0).sin();
                let sm = (th - h / 2.0).sin();
                let d_theta = (sp * (f(idx, th + h, ph) - f(idx, th, ph)) - sm * (f(idx, th, ph) - f(idx, th - h, ph)))
                    / (s * h * h);
                let d_phi = (f(idx, th, ph + h) - 2.0 * f(idx, th, ph) + f(idx, th, ph - h)) / (s * s * h * h);
                d_theta + d_phi
            };
            let expect = -laplace_beltrami_eigenvalue(idx.k, 3) * f(idx, th, ph);
            let e1 = (lb(1e-2) - expect).abs();
            let e2 = (lb(5e-3) - expect).abs();
            assert!(e1 < 1e-3, "{idx:?}");
            // halving h cuts the error by ~4
            assert!(e2 < e1 / 3.0 || e1 < 1e-9, "{idx:?} {e1} {e2}");
        }
    }

    #[test]
    fn quadrature_converges() {
        let f = |xi: &[f64; 3]| (xi[0] + 0.3 * xi[1] * xi[2]).exp() / (2.0 + xi[2]);
        let a = integrate(&make_quadrature(40).unwrap(), f).unwrap();
        let b = integrate(&make_quadrature(80).unwrap(), f).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn metadata() {
        for k in 0..10 {
            assert_eq!(multiplicity(k, 3), 2 * k as u64 + 1);
            assert_eq!(laplace_beltrami_eigenvalue(k, 3), (k * (k + 1)) as f64);
        }
        // S³: (k+1)²
        for k in 0..10 {
            assert_eq!(multiplicity(k, 4), ((k + 1) * (k + 1)) as u64);
        }
        assert_eq!(laplace_beltrami_eigenvalue(3, 5), 18.0);
    }

    #[test]
    fn gauss_legendre_exactness() {
        let (x, w) = gauss_legendre(7);
        for p in 0..=13 {
            let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum();
            let expect = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
            assert!((got - expect).abs() < 1e-14, "{p}");
        }
    }
}
