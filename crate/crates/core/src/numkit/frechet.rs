//! Fréchet distance between Gaussians.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Mean and covariance of a Gaussian fit.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major `dim x dim` covariance.
    pub cov: Vec<f64>,
}

impl GaussianStats {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        if cov.len() != mean.len() * mean.len() {
            return Err(Error::Shape(format!(
                "covariance has {} entries for dimension {}",
                cov.len(),
                mean.len()
            )));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Sample mean and unbiased covariance of feature rows.
    pub fn fit(features: &[Vec<f64>]) -> Result<Self> {
        let n = features.len();
        if n < 2 {
            return Err(Error::Empty("need at least two feature vectors"));
        }
        let d = features[0].len();
        if features.iter().any(|f| f.len() != d) {
            return Err(Error::Shape("ragged feature rows".into()));
        }
        let mut mean = vec![0.0; d];
        for f in features {
            for (m, x) in mean.iter_mut().zip(f) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![0.0; d * d];
        for f in features {
            for i in 0..d {
                let di = f[i] - mean[i];
                for j in i..d {
                    cov[i * d + j] += di * (f[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[i * d + j] / (n - 1) as f64;
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        Ok(Self { mean, cov })
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.cov)
    }
}

/// Square root of a symmetric PSD matrix; negative eigenvalues clamp to zero.
fn psd_sqrt(m: DMatrix<f64>) -> DMatrix<f64> {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})`.
///
/// The trace of `(S_a S_b)^{1/2}` is taken as the trace of the symmetric
/// `(S_a^{1/2} S_b S_a^{1/2})^{1/2}`, which shares its eigenvalues.
pub fn frechet_gaussian_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "frechet distance between dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let sa = a.cov_matrix();
    let sb = b.cov_matrix();
    let root_a = psd_sqrt(sa.clone());
    let inner = &root_a * &sb * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum();
    let d = mean_term + sa.trace() + sb.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;

    fn diag(v: &[f64]) -> Vec<f64> {
        let d = v.len();
        let mut m = vec![0.0; d * d];
        for (i, &x) in v.iter().enumerate() {
            m[i * d + i] = x;
        }
        m
    }

    /// Closed-form eigenvalues of a symmetric 2x2 matrix.
    fn eig2(m: [f64; 4]) -> (f64, f64) {
        let tr = m[0] + m[3];
        let det = m[0] * m[3] - m[1] * m[2];
        let disc = ((tr * tr) / 4.0 - det).max(0.0).sqrt();
        (tr / 2.0 + disc, tr / 2.0 - disc)
    }

    #[test]
    fn identical_stats_are_zero() {
        let s = GaussianStats::new(vec![1.0, -2.0], vec![2.0, 0.5, 0.5, 1.0]).unwrap();
        assert!(frechet_gaussian_distance(&s, &s).unwrap() < 1e-10);
    }

    #[test]
    fn shared_covariance_leaves_mean_term() {
        let cov = vec![2.0, 0.3, 0.3, 1.0];
        let a = GaussianStats::new(vec![0.0, 0.0], cov.clone()).unwrap();
        let b = GaussianStats::new(vec![3.0, -4.0], cov).unwrap();
        assert!((frechet_gaussian_distance(&a, &b).unwrap() - 25.0).abs() < 1e-9);
    }

    #[test]
    fn swapped_diagonals_against_eigen_oracle() {
        let a = GaussianStats::new(vec![0.0; 2], diag(&[1.0, 4.0])).unwrap();
        let b = GaussianStats::new(vec![0.0; 2], diag(&[4.0, 1.0])).unwrap();
        // Oracle: sqrt(A) B sqrt(A) = diag(1*4, 2*1*2) = diag(4, 4).
        let (l1, l2) = eig2([4.0, 0.0, 0.0, 4.0]);
        let expected = 5.0 + 5.0 - 2.0 * (l1.sqrt() + l2.sqrt());
        assert!((expected - 2.0).abs() < 1e-12);
        assert!((frechet_gaussian_distance(&a, &b).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = GaussianStats::new(vec![0.0], vec![1.0]).unwrap();
        let b = GaussianStats::new(vec![0.0; 2], diag(&[1.0, 1.0])).unwrap();
        assert!(frechet_gaussian_distance(&a, &b).is_err());
    }

    #[test]
    fn symmetric_and_non_negative_on_random_fits() {
        let mut rng = Rng::new(11);
        for _ in 0..20 {
            let sample = |rng: &mut Rng, shift: f64| -> Vec<Vec<f64>> {
                (0..40)
                    .map(|_| (0..4).map(|k| rng.normal() * (1.0 + k as f64) + shift).collect())
                    .collect()
            };
            let a = GaussianStats::fit(&sample(&mut rng, 0.0)).unwrap();
            let b = GaussianStats::fit(&sample(&mut rng, 0.5)).unwrap();
            let ab = frechet_gaussian_distance(&a, &b).unwrap();
            let ba = frechet_gaussian_distance(&b, &a).unwrap();
            assert!(ab >= 0.0);
            assert!((ab - ba).abs() < 1e-8 * (1.0 + ab), "{ab} vs {ba}");
            assert!(frechet_gaussian_distance(&a, &a).unwrap() < 1e-8);
        }
    }
}
