//! Small dense linear algebra and multivariate draws used by the sampler.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
        .ok_or_else(|| Error::numerical(format!("{what} is not positive definite: {m}")))
}

pub fn std_normal_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

/// Draws from `N(precision^-1 * linear, precision^-1)`.
pub fn sample_canonical<R: Rng + ?Sized>(
    precision: &DMatrix<f64>,
    linear: &DVector<f64>,
    rng: &mut R,
    what: &str,
) -> Result<DVector<f64>> {
    let chol = cholesky(precision, what)?;
    let mean = chol.solve(linear);
    let noise = std_normal_vector(linear.len(), rng);
    // L^T x = noise gives cov (L L^T)^-1
    let shift = chol
        .l()
        .transpose()
        .solve_upper_triangular(&noise)
        .ok_or_else(|| Error::numerical(format!("{what}: singular factor")))?;
    Ok(mean + shift)
}

/// Draws `N(0, cov)`.
pub fn sample_mvn<R: Rng + ?Sized>(
    cov: &DMatrix<f64>,
    rng: &mut R,
    what: &str,
) -> Result<DVector<f64>> {
    let chol = cholesky(cov, what)?;
    Ok(chol.l() * std_normal_vector(cov.nrows(), rng))
}

/// Inverse-Wishart draw with `df` degrees of freedom and scale `scale`
/// (mean `scale / (df - d - 1)`), via the Bartlett decomposition.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    df: f64,
    scale: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let d = scale.nrows();
    if df <= d as f64 - 1.0 {
        return Err(Error::numerical(format!(
            "inverse-Wishart df {df} must exceed dimension - 1 = {}",
            d as f64 - 1.0
        )));
    }
    let c = cholesky(scale, "inverse-Wishart scale")?.l();
    let mut a = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(df - i as f64)
            .map_err(|e| Error::numerical(format!("chi-squared: {e}")))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    // W^-1 = C A^-T A^-1 C^T where A A^T ~ Wishart(df, I)
    let a_inv_t = a
        .solve_lower_triangular(&DMatrix::identity(d, d))
        .ok_or_else(|| Error::numerical("singular Bartlett factor"))?
        .transpose();
    let f = c * a_inv_t;
    let out = &f * f.transpose();
    Ok(symmetrize(&out))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric positive definite operator on `k` stacked length-`n` vectors
/// of the form `A (x) I_n + B (x) 11^T`. Vectors are held as `k x n`
/// matrices, one row per component.
///
/// On the all-ones direction it acts as `A + nB`, on its complement as `A`,
/// so solves and square roots reduce to two `k x k` problems.
pub struct CompoundOperator {
    n: usize,
    mean_block: Cholesky<f64, Dyn>,
    centered_block: Cholesky<f64, Dyn>,
}

impl CompoundOperator {
    pub fn new(a: &DMatrix<f64>, b: &DMatrix<f64>, n: usize) -> Result<Self> {
        let mean = a + b * n as f64;
        Ok(Self {
            n,
            mean_block: cholesky(&mean, "compound operator (mean block)")?,
            centered_block: cholesky(a, "compound operator (centered block)")?,
        })
    }

    fn split(&self, w: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let mean = w.column_mean();
        let mut centered = w.clone();
        for mut col in centered.column_iter_mut() {
            col -= &mean;
        }
        (mean, centered)
    }

    fn join(&self, mean: DVector<f64>, mut centered: DMatrix<f64>) -> DMatrix<f64> {
        for mut col in centered.column_iter_mut() {
            col += &mean;
        }
        centered
    }

    pub fn solve(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        debug_assert_eq!(w.ncols(), self.n);
        let (mean, centered) = self.split(w);
        let mean = self.mean_block.solve(&mean);
        let centered = self.centered_block.solve(&centered);
        self.join(mean, centered)
    }

    /// Draws `N(0, operator^-1)` as a `k x n` matrix.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> DMatrix<f64> {
        let xi = DMatrix::from_fn(k, self.n, |_, _| StandardNormal.sample(rng));
        let (mean, centered) = self.split(&xi);
        let mean = self
            .mean_block
            .l()
            .transpose()
            .solve_upper_triangular(&mean)
            .expect("Cholesky factor is nonsingular");
        let centered = self
            .centered_block
            .l()
            .transpose()
            .solve_upper_triangular(&centered)
            .expect("Cholesky factor is nonsingular");
        self.join(mean, centered)
    }

    /// Dense form, for tests.
    pub fn dense(a: &DMatrix<f64>, b: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
        let k = a.nrows();
        DMatrix::from_fn(k * n, k * n, |r, c| {
            let (ri, rn) = (r / n, r % n);
            let (ci, cn) = (c / n, c % n);
            b[(ri, ci)] + if rn == cn { a[(ri, ci)] } else { 0.0 }
        })
    }
}
