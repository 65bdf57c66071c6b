//! Correlation kernels, Gram matrices, and dense symmetric positive-definite
//! linear algebra.
//!
//! Every Gaussian conditional in the sampler reduces to factorizing a small
//! SPD matrix, solving against it, and drawing correlated normals. Those
//! primitives live here: [`GramMatrix`] for kernel-built covariances on a
//! measurement grid, [`SpdFactor`] for arbitrary SPD matrices, and
//! [`mvn_sample`] / [`sample_gaussian_precision`] for the draws.
//!
//! Radial-basis Gram matrices over dense grids are routinely on the edge of
//! numerical singularity, so factorization runs behind a jitter ladder:
//! on Cholesky failure a diagonal boost of `1e-10 * mean(diag)` is added,
//! escalating tenfold up to `1e-4 * mean(diag)` before giving up.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

/// Ordered measurement locations within a day (hours, typically 1..=24).
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementGrid {
    points: Vec<f64>,
}

impl MeasurementGrid {
    /// Builds a grid from strictly increasing points; requires at least two.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::validation("measurement grid needs at least 2 points"));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) || points.iter().any(|p| !p.is_finite()) {
            return Err(Error::validation(
                "measurement grid points must be finite and strictly increasing",
            ));
        }
        Ok(MeasurementGrid { points })
    }

    /// Hourly grid 1..=k.
    pub fn hourly(k: usize) -> Self {
        MeasurementGrid::new((1..=k).map(|i| i as f64).collect()).expect("k >= 2")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }
}

/// The radial basis function correlation kernel exp(-d^2 / phi).
///
/// Equals 1 exactly when the distance is 0 and decays with squared
/// distance on the scale of the range parameter.
pub fn rbf_kernel(d: f64, phi: f64) -> Result<f64> {
    if !(phi > 0.0) {
        return Err(Error::validation(format!("kernel range must be positive, got {phi}")));
    }
    Ok((-(d * d) / phi).exp())
}

/// A Cholesky factorization of an SPD matrix, with the jitter that was
/// needed to obtain it.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
    dim: usize,
}

impl SpdFactor {
    /// Factorizes a symmetric positive-definite matrix, climbing the jitter
    /// ladder on failure.
    pub fn new(matrix: &DMatrix<f64>) -> Result<Self> {
        let dim = matrix.nrows();
        if dim == 0 || matrix.ncols() != dim {
            return Err(Error::validation("SPD factorization needs a nonempty square matrix"));
        }
        if let Some(chol) = matrix.clone().cholesky() {
            return Ok(SpdFactor { chol, jitter: 0.0, dim });
        }
        let mean_diag = matrix.diagonal().iter().copied().sum::<f64>() / dim as f64;
        let base = if mean_diag > 0.0 { mean_diag } else { 1.0 };
        let mut level = JITTER_START;
        while level <= JITTER_MAX {
            let jitter = level * base;
            let mut boosted = matrix.clone();
            for i in 0..dim {
                boosted[(i, i)] += jitter;
            }
            if let Some(chol) = boosted.cholesky() {
                return Ok(SpdFactor { chol, jitter, dim });
            }
            level *= 10.0;
        }
        Err(Error::numerical(format!(
            "Cholesky failed after jitter up to {:.3e} (dim {})",
            JITTER_MAX * base,
            dim
        )))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Diagonal jitter that was added before factorization succeeded.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Solves A x = b.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// Solves A X = B column-wise.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// Log-determinant from the Cholesky diagonal.
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Quadratic form x' A^{-1} x.
    pub fn inv_quad(&self, x: &DVector<f64>) -> f64 {
        // L y = x, then |y|^2.
        let mut y = x.clone();
        self.chol.l_dirty().solve_lower_triangular_unchecked_mut(&mut y);
        y.norm_squared()
    }

    /// Draws from N(mean, A) where A is the factorized matrix.
    pub fn sample_covariance<R: Rng>(&self, mean: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let u = standard_normal_vec(self.dim, rng);
        mean + self.chol.l_dirty().lower_triangle() * u
    }

    /// Draws from N(mean, A^{-1}) where A is the factorized matrix.
    pub fn sample_precision<R: Rng>(&self, mean: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let mut u = standard_normal_vec(self.dim, rng);
        // Solve L' v = u so that v has covariance (L L')^{-1}.
        self.chol.l_dirty().tr_solve_lower_triangular_unchecked_mut(&mut u);
        mean + u
    }
}

/// Draws from a Gaussian given its precision matrix and information vector
/// (precision * mean). Returns the draw and the implied mean.
pub fn sample_gaussian_precision<R: Rng>(
    precision: &DMatrix<f64>,
    info: &DVector<f64>,
    rng: &mut R,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let factor = SpdFactor::new(precision)?;
    let mean = factor.solve_vec(info);
    let draw = factor.sample_precision(&mean, rng);
    Ok((draw, mean))
}

fn standard_normal_vec<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// A kernel-built K x K covariance matrix on a measurement grid, carrying
/// its variance scale, range parameter, and Cholesky factorization.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    values: DMatrix<f64>,
    scale: f64,
    range: f64,
    factor: SpdFactor,
}

/// Builds the Gram matrix with entries `scale * rbf(|tau_i - tau_j|, range)`.
///
/// Any correlation kernel of (distance, range) can be substituted through
/// [`build_gram_with`]; the RBF kernel is the default.
pub fn build_gram(grid: &MeasurementGrid, scale: f64, range: f64) -> Result<GramMatrix> {
    build_gram_with(grid, scale, range, rbf_kernel)
}

/// As [`build_gram`] with a caller-chosen correlation kernel rho(d, range).
pub fn build_gram_with(
    grid: &MeasurementGrid,
    scale: f64,
    range: f64,
    kernel: impl Fn(f64, f64) -> Result<f64>,
) -> Result<GramMatrix> {
    if !(scale > 0.0) {
        return Err(Error::validation(format!("gram scale must be positive, got {scale}")));
    }
    let k = grid.len();
    let pts = grid.points();
    let mut values = DMatrix::zeros(k, k);
    for i in 0..k {
        values[(i, i)] = scale;
        for j in 0..i {
            let v = scale * kernel((pts[i] - pts[j]).abs(), range)?;
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }
    let factor = SpdFactor::new(&values)?;
    Ok(GramMatrix { values, scale, range, factor })
}

impl GramMatrix {
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn factor(&self) -> &SpdFactor {
        &self.factor
    }

    /// x' G^{-1} x.
    pub fn inv_quad(&self, x: &DVector<f64>) -> f64 {
        self.factor.inv_quad(x)
    }
}

/// Solves G x = rhs for a vector right-hand side.
pub fn chol_solve(gram: &GramMatrix, rhs: &DVector<f64>) -> DVector<f64> {
    gram.factor.solve_vec(rhs)
}

/// Solves G X = rhs for a matrix right-hand side.
pub fn chol_solve_mat(gram: &GramMatrix, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    gram.factor.solve_mat(rhs)
}

/// Log-determinant of the Gram matrix.
pub fn log_det(gram: &GramMatrix) -> f64 {
    gram.factor.log_det()
}

/// Whether the matrix argument is interpreted as a covariance or as a
/// precision when sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MvnMode {
    Covariance,
    Precision,
}

/// Draws one sample from a multivariate normal specified by either its
/// covariance or its precision matrix.
pub fn mvn_sample<R: Rng>(
    mean: &DVector<f64>,
    matrix: &DMatrix<f64>,
    mode: MvnMode,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if matrix.nrows() != mean.len() {
        return Err(Error::validation("mvn_sample: mean/matrix dimension mismatch"));
    }
    let factor = SpdFactor::new(matrix)?;
    Ok(match mode {
        MvnMode::Covariance => factor.sample_covariance(mean, rng),
        MvnMode::Precision => factor.sample_precision(mean, rng),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn random_spd<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        &a * a.transpose() + DMatrix::identity(n, n) * (0.5 + rng.random::<f64>())
    }

    #[test]
    fn rbf_values() {
        assert_eq!(rbf_kernel(0.0, 2.5).unwrap(), 1.0);
        assert_relative_eq!(rbf_kernel(1.0, 1.0).unwrap(), (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(rbf_kernel(2.0, 4.0).unwrap(), (-1.0f64).exp(), epsilon = 1e-15);
        assert!(rbf_kernel(1.0, 0.0).is_err());
        assert!(rbf_kernel(1.0, -2.0).is_err());
    }

    #[test]
    fn gram_two_by_two_by_hand() {
        let grid = MeasurementGrid::new(vec![0.0, 1.0]).unwrap();
        let g = build_gram(&grid, 1.0, 1.0).unwrap();
        let e = (-1.0f64).exp();
        assert_relative_eq!(g.values()[(0, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(g.values()[(0, 1)], e, epsilon = 1e-15);
        assert_relative_eq!(g.values()[(1, 0)], e, epsilon = 1e-15);
    }

    #[test]
    fn gram_large_range_saturates() {
        let grid = MeasurementGrid::new(vec![0.0, 1.0, 2.0]).unwrap();
        let g = build_gram(&grid, 4.0, 1e8).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(g.values()[(i, j)], 4.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn gram_scaled_range_half() {
        // Direct evaluation oracle: eta2=2, phi=0.5, d=1 -> 2 e^{-2}.
        let grid = MeasurementGrid::new(vec![0.0, 1.0]).unwrap();
        let g = build_gram(&grid, 2.0, 0.5).unwrap();
        assert_relative_eq!(g.values()[(0, 1)], 2.0 * (-2.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(g.values()[(0, 0)], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn gram_is_symmetric_and_pd_on_dense_grids() {
        for k in [8, 24, 48] {
            let grid = MeasurementGrid::hourly(k);
            let g = build_gram(&grid, 3.0, 16.0).unwrap();
            for i in 0..k {
                for j in 0..k {
                    assert_eq!(g.values()[(i, j)].to_bits(), g.values()[(j, i)].to_bits());
                }
            }
            assert!(g.factor().jitter() <= JITTER_MAX * 3.0);
        }
    }

    #[test]
    fn chol_solve_identity_and_scaled() {
        let grid = MeasurementGrid::new(vec![0.0, 10.0]).unwrap();
        // Huge distance relative to range: effectively identity * scale.
        let g = build_gram(&grid, 2.0, 1e-6).unwrap();
        let rhs = DVector::from_vec(vec![2.0, 4.0]);
        let x = chol_solve(&g, &rhs);
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn chol_solve_matches_adjugate_inverse() {
        // 3x3 oracle: explicit inverse via the adjugate formula.
        let mut rng = stream(11, "kernel-adjugate");
        let a = random_spd(3, &mut rng);
        let det = a[(0, 0)] * (a[(1, 1)] * a[(2, 2)] - a[(1, 2)] * a[(2, 1)])
            - a[(0, 1)] * (a[(1, 0)] * a[(2, 2)] - a[(1, 2)] * a[(2, 0)])
            + a[(0, 2)] * (a[(1, 0)] * a[(2, 1)] - a[(1, 1)] * a[(2, 0)]);
        // First column of the inverse = cofactors of the first row / det.
        let inv_col0 = [
            (a[(1, 1)] * a[(2, 2)] - a[(1, 2)] * a[(2, 1)]) / det,
            -(a[(1, 0)] * a[(2, 2)] - a[(1, 2)] * a[(2, 0)]) / det,
            (a[(1, 0)] * a[(2, 1)] - a[(1, 1)] * a[(2, 0)]) / det,
        ];
        let f = SpdFactor::new(&a).unwrap();
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let x = f.solve_vec(&e1);
        for i in 0..3 {
            assert_relative_eq!(x[i], inv_col0[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn chol_solve_round_trips_random_spd() {
        let mut rng = stream(12, "kernel-roundtrip");
        for n in [2usize, 5, 17, 50] {
            let a = random_spd(n, &mut rng);
            let f = SpdFactor::new(&a).unwrap();
            let v = DVector::from_fn(n, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let x = f.solve_vec(&v);
            let back = &a * x;
            let err = (back - &v).amax() / v.amax().max(1e-300);
            assert!(err < 1e-8, "round trip error {err} at n={n}");
        }
    }

    #[test]
    fn log_det_exact_cases() {
        let grid = MeasurementGrid::new(vec![0.0, 100.0, 200.0]).unwrap();
        let id = build_gram(&grid, 1.0, 1e-9).unwrap();
        assert_abs_diff_eq!(log_det(&id), 0.0, epsilon = 1e-9);

        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 8.0]));
        let f = SpdFactor::new(&d).unwrap();
        assert_relative_eq!(f.log_det(), 16.0f64.ln(), epsilon = 1e-12);

        // 2x2 correlation with rho = 0.5: det = 1 - rho^2 = 0.75.
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let f = SpdFactor::new(&c).unwrap();
        assert_relative_eq!(f.log_det(), 0.75f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn log_det_matches_eigenvalue_oracle() {
        let mut rng = stream(13, "kernel-logdet");
        for n in [3usize, 8, 20] {
            let a = random_spd(n, &mut rng);
            let f = SpdFactor::new(&a).unwrap();
            let eig = a.symmetric_eigenvalues();
            let oracle: f64 = eig.iter().map(|l| l.ln()).sum();
            assert_relative_eq!(f.log_det(), oracle, epsilon = 1e-8);
        }
    }

    #[test]
    fn mvn_sample_tiny_covariance_is_mean() {
        let mut rng = stream(14, "kernel-mvn0");
        let mean = DVector::from_vec(vec![0.0, 0.0, 0.0]);
        let cov = DMatrix::identity(3, 3) * 1e-12;
        let x = mvn_sample(&mean, &cov, MvnMode::Covariance, &mut rng).unwrap();
        assert!(x.amax() < 1e-5);
    }

    #[test]
    fn mvn_sample_monte_carlo_moments() {
        let mut rng = stream(15, "kernel-mvn-mc");
        let n = 100_000;
        let mean = DVector::zeros(2);
        let cov = DMatrix::identity(2, 2);
        let mut acc = DVector::zeros(2);
        for _ in 0..n {
            acc += mvn_sample(&mean, &cov, MvnMode::Covariance, &mut rng).unwrap();
        }
        acc /= n as f64;
        assert!(acc[0].abs() < 0.02 && acc[1].abs() < 0.02, "{acc}");

        // Precision 4I => variance 0.25.
        let prec = DMatrix::identity(2, 2) * 4.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let x = mvn_sample(&mean, &prec, MvnMode::Precision, &mut rng).unwrap();
            sq += x[0] * x[0];
        }
        let var = sq / n as f64;
        assert!((var - 0.25).abs() < 0.01, "var {var}");
    }

    #[test]
    fn precision_and_covariance_modes_agree_through_inverse() {
        // Same target expressed both ways: first two empirical moments match
        // within Monte Carlo error.
        let mut rng = stream(16, "kernel-mvn-dual");
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let prec = cov.clone().try_inverse().unwrap();
        let mean = DVector::from_vec(vec![1.0, -1.0]);
        let n = 100_000;
        let mut m_c: DVector<f64> = DVector::zeros(2);
        let mut m_p: DVector<f64> = DVector::zeros(2);
        let mut v_c: DVector<f64> = DVector::zeros(2);
        let mut v_p: DVector<f64> = DVector::zeros(2);
        for _ in 0..n {
            let a = mvn_sample(&mean, &cov, MvnMode::Covariance, &mut rng).unwrap();
            let b = mvn_sample(&mean, &prec, MvnMode::Precision, &mut rng).unwrap();
            for i in 0..2 {
                m_c[i] += a[i];
                m_p[i] += b[i];
                v_c[i] += (a[i] - mean[i]).powi(2);
                v_p[i] += (b[i] - mean[i]).powi(2);
            }
        }
        for i in 0..2 {
            let se_mean = 3.0 * (cov[(i, i)] / n as f64).sqrt();
            assert!((m_c[i] - m_p[i]).abs() / n as f64 <= 2.0 * se_mean);
            let se_var = 3.0 * cov[(i, i)] * (2.0 / n as f64).sqrt();
            assert!((v_c[i] - v_p[i]).abs() / n as f64 <= 2.0 * se_var);
        }
    }

    #[test]
    fn grid_validation() {
        assert!(MeasurementGrid::new(vec![1.0]).is_err());
        assert!(MeasurementGrid::new(vec![1.0, 1.0]).is_err());
        assert!(MeasurementGrid::new(vec![2.0, 1.0]).is_err());
        assert!(MeasurementGrid::new(vec![1.0, f64::NAN]).is_err());
    }
}
