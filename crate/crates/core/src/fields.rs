//! Smooth vector fields with analytic Jacobians, used to exercise the Jacobian
//! expansion and the `A_ij(t)` coefficient identities.

use nalgebra::DMatrix;
use rand::Rng;

pub trait VectorField {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Vec<f64>;
    /// `J[(i, j)] = ∂_j v_i`.
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64>;
}

/// The zero field in `d` dimensions.
#[derive(Debug, Clone, Copy)]
pub struct ZeroField(pub usize);

impl VectorField for ZeroField {
    fn dim(&self) -> usize {
        self.0
    }

    fn value(&self, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.0]
    }

    fn jacobian(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(self.0, self.0)
    }
}

/// `v(x) = M x`.
#[derive(Debug, Clone)]
pub struct LinearField(pub DMatrix<f64>);

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn value(&self, x: &[f64]) -> Vec<f64> {
        (&self.0 * nalgebra::DVector::from_column_slice(x)).iter().copied().collect()
    }

    fn jacobian(&self, _x: &[f64]) -> DMatrix<f64> {
        self.0.clone()
    }
}

/// Each component is a polynomial `Σ c_α x^α` over all exponents `|α| <= degree`.
#[derive(Debug, Clone)]
pub struct PolynomialField {
    dim: usize,
    exponents: Vec<Vec<u32>>,
    /// `coefficients[i][a]` multiplies `x^{exponents[a]}` in component `i`.
    coefficients: Vec<Vec<f64>>,
}

fn exponents_up_to(dim: usize, degree: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|e: Vec<u32>| {
                let used: u32 = e.iter().sum();
                (0..=degree - used).map(move |k| {
                    let mut e = e.clone();
                    e.push(k);
                    e
                })
            })
            .collect();
    }
    out
}

impl PolynomialField {
    pub fn new(dim: usize, degree: u32, coefficients: Vec<Vec<f64>>) -> Self {
        let exponents = exponents_up_to(dim, degree);
        assert_eq!(coefficients.len(), dim);
        assert!(coefficients.iter().all(|c| c.len() == exponents.len()));
        Self { dim, exponents, coefficients }
    }

    /// Coefficients uniform in `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, dim: usize, degree: u32, scale: f64) -> Self {
        let n = exponents_up_to(dim, degree).len();
        let coefficients = (0..dim).map(|_| (0..n).map(|_| rng.gen_range(-scale..=scale)).collect()).collect();
        Self::new(dim, degree, coefficients)
    }

    fn monomial(e: &[u32], x: &[f64]) -> f64 {
        e.iter().zip(x).map(|(&k, &xi)| xi.powi(k as i32)).product()
    }

    fn monomial_derivative(e: &[u32], x: &[f64], j: usize) -> f64 {
        if e[j] == 0 {
            return 0.0;
        }
        e.iter()
            .zip(x)
            .enumerate()
            .map(|(l, (&k, &xi))| if l == j { k as f64 * xi.powi(k as i32 - 1) } else { xi.powi(k as i32) })
            .product()
    }
}

impl VectorField for PolynomialField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> Vec<f64> {
        self.coefficients
            .iter()
            .map(|c| c.iter().zip(&self.exponents).map(|(c, e)| c * Self::monomial(e, x)).sum())
            .collect()
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| {
            self.coefficients[i].iter().zip(&self.exponents).map(|(c, e)| c * Self::monomial_derivative(e, x, j)).sum()
        })
    }
}

/// Uniform sample points in the cube `[-half_width, half_width]^dim`.
pub fn sample_points<R: Rng + ?Sized>(rng: &mut R, dim: usize, n: usize, half_width: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-half_width..=half_width)).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn exponent_count() {
        // C(3+3, 3) monomials of degree <= 3 in three variables
        assert_eq!(exponents_up_to(3, 3).len(), 20);
        assert_eq!(exponents_up_to(2, 2).len(), 6);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let f = PolynomialField::random(&mut rng, 3, 3, 1.0);
        let x = [0.3, -0.2, 0.5];
        let j = f.jacobian(&x);
        let h = 1e-6;
        for col in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[col] += h;
            xm[col] -= h;
            let (vp, vm) = (f.value(&xp), f.value(&xm));
            for row in 0..3 {
                assert!((j[(row, col)] - (vp[row] - vm[row]) / (2.0 * h)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn linear_field() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let f = LinearField(m.clone());
        assert_eq!(f.value(&[1.0, 1.0]), vec![3.0, 7.0]);
        assert_eq!(f.jacobian(&[0.0, 0.0]), m);
    }
}
