//! Seeded synthetic data generators and their analytic oracles: correlated
//! Gaussians, multivariate t-Student, and concentric circles.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::data::{DataMatrix, Seed};
use crate::error::{Error, Result};

/// Gaussian family: mean + correlation + per-dimension scales.
#[derive(Debug, Clone)]
pub struct GaussianSpec {
    pub mean: Array1<f64>,
    /// Symmetric positive-definite with unit diagonal.
    pub correlation: Array2<f64>,
    pub scales: Array1<f64>,
}

impl GaussianSpec {
    pub fn standard(d: usize) -> Self {
        Self {
            mean: Array1::zeros(d),
            correlation: Array2::eye(d),
            scales: Array1::ones(d),
        }
    }

    /// All off-diagonal correlations equal to `rho`. Positive definite for
    /// `rho` in `(-1/(d-1), 1)`; the determinant has the closed form
    /// `(1 - rho)^(d-1) (1 + (d-1) rho)`.
    pub fn equicorrelated(d: usize, rho: f64) -> Result<Self> {
        let correlation = equicorrelation_matrix(d, rho);
        let spec = Self {
            mean: Array1::zeros(d),
            correlation,
            scales: Array1::ones(d),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        validate_correlation(&self.correlation, d)?;
        if self.scales.len() != d || self.scales.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(())
    }

    /// Full covariance: `Sigma = D R D` with `D = diag(scales)`.
    pub fn covariance(&self) -> Array2<f64> {
        let d = self.dims();
        Array2::from_shape_fn((d, d), |(i, j)| {
            self.correlation[[i, j]] * self.scales[i] * self.scales[j]
        })
    }
}

/// Multivariate t-Student family.
#[derive(Debug, Clone)]
pub struct StudentSpec {
    /// Degrees of freedom, > 0.
    pub nu: f64,
    pub correlation: Array2<f64>,
}

impl StudentSpec {
    pub fn equicorrelated(d: usize, rho: f64, nu: f64) -> Result<Self> {
        let spec = Self {
            nu,
            correlation: equicorrelation_matrix(d, rho),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dims(&self) -> usize {
        self.correlation.nrows()
    }

    /// The covariance exists only for nu > 2.
    pub fn has_finite_covariance(&self) -> bool {
        self.nu > 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        validate_correlation(&self.correlation, self.dims())
    }
}

/// Concentric rings in the plane with Gaussian radial noise.
#[derive(Debug, Clone)]
pub struct CirclesSpec {
    /// Strictly increasing positive ring radii.
    pub radii: Vec<f64>,
    /// Standard deviation of the radial perturbation.
    pub radial_noise: f64,
}

impl CirclesSpec {
    pub fn new(radii: Vec<f64>, radial_noise: f64) -> Result<Self> {
        let spec = Self {
            radii,
            radial_noise,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn n_rings(&self) -> usize {
        self.radii.len()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = !self.radii.is_empty()
            && self.radii[0] > 0.0
            && self.radii.windows(2).all(|w| w[0] < w[1])
            && self.radial_noise > 0.0
            && self
                .radii
                .windows(2)
                .all(|w| self.radial_noise < 0.5 * (w[1] - w[0]));
        if ok {
            Ok(())
        } else {
            Err(Error::OutOfDomain(
                "circles spec needs increasing radii and noise below half the ring gap".into(),
            ))
        }
    }
}

fn equicorrelation_matrix(d: usize, rho: f64) -> Array2<f64> {
    Array2::from_shape_fn((d, d), |(i, j)| if i == j { 1.0 } else { rho })
}

fn validate_correlation(correlation: &Array2<f64>, d: usize) -> Result<()> {
    if correlation.nrows() != d || correlation.ncols() != d || d == 0 {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: correlation.nrows(),
        });
    }
    for i in 0..d {
        if (correlation[[i, i]] - 1.0).abs() > 1e-12 {
            return Err(Error::NotPositiveDefinite);
        }
        for j in 0..i {
            if (correlation[[i, j]] - correlation[[j, i]]).abs() > 1e-12 {
                return Err(Error::NotPositiveDefinite);
            }
        }
    }
    cholesky_with_jitter(correlation).map(|_| ())
}

/// Lower Cholesky factor, retrying once with a 1e-12 diagonal jitter to
/// tolerate float-level asymmetry before declaring failure.
fn cholesky_with_jitter(matrix: &Array2<f64>) -> Result<nalgebra::DMatrix<f64>> {
    let d = matrix.nrows();
    let m = nalgebra::DMatrix::from_fn(d, d, |i, j| matrix[[i, j]]);
    if let Some(chol) = nalgebra::Cholesky::new(m.clone()) {
        return Ok(chol.unpack());
    }
    let jittered = m + nalgebra::DMatrix::identity(d, d) * 1e-12;
    nalgebra::Cholesky::new(jittered)
        .map(|c| c.unpack())
        .ok_or(Error::NotPositiveDefinite)
}

/// Draw `n` samples from the Gaussian spec via the Cholesky factor of the
/// full covariance. Deterministic under seed.
pub fn sample_gaussian(spec: &GaussianSpec, n: usize, seed: Seed) -> Result<DataMatrix> {
    spec.validate()?;
    assert!(n >= 2, "need at least 2 samples");
    let d = spec.dims();
    let chol = cholesky_with_jitter(&spec.covariance())?;
    let mut rng = seed.rng();
    let mut out = Array2::zeros((n, d));
    let mut z = vec![0.0f64; d];
    for mut row in out.rows_mut() {
        for zj in z.iter_mut() {
            *zj = rng.sample(StandardNormal);
        }
        for i in 0..d {
            let mut acc = spec.mean[i];
            for (j, zj) in z.iter().enumerate().take(i + 1) {
                acc += chol[(i, j)] * zj;
            }
            row[i] = acc;
        }
    }
    DataMatrix::new(out)
}

/// Draw `n` samples from the t-Student spec: `x = z / sqrt(g / nu)` with `z`
/// correlated Gaussian and `g` an independent chi-square(nu) per sample.
pub fn sample_student(spec: &StudentSpec, n: usize, seed: Seed) -> Result<DataMatrix> {
    spec.validate()?;
    assert!(n >= 2, "need at least 2 samples");
    let d = spec.dims();
    let chol = cholesky_with_jitter(&spec.correlation)?;
    let chi = ChiSquared::new(spec.nu).expect("nu validated positive");
    let mut rng = seed.rng();
    let mut out = Array2::zeros((n, d));
    let mut z = vec![0.0f64; d];
    for mut row in out.rows_mut() {
        for zj in z.iter_mut() {
            *zj = rng.sample(StandardNormal);
        }
        let g: f64 = chi.sample(&mut rng);
        let tail = (spec.nu / g).sqrt();
        for i in 0..d {
            let mut acc = 0.0;
            for (j, zj) in z.iter().enumerate().take(i + 1) {
                acc += chol[(i, j)] * zj;
            }
            row[i] = acc * tail;
        }
    }
    DataMatrix::new(out)
}

/// Draw `n` points from the circles spec: uniform ring, uniform angle,
/// Gaussian-perturbed radius. Output is 2-d.
pub fn sample_circles(spec: &CirclesSpec, n: usize, seed: Seed) -> Result<DataMatrix> {
    spec.validate()?;
    assert!(n >= 2, "need at least 2 samples");
    let mut rng = seed.rng();
    let mut out = Array2::zeros((n, 2));
    for mut row in out.rows_mut() {
        let ring = rng.random_range(0..spec.radii.len());
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        let radius = spec.radii[ring] + spec.radial_noise * rng.sample::<f64, _>(StandardNormal);
        row[0] = radius * theta.cos();
        row[1] = radius * theta.sin();
    }
    DataMatrix::new(out)
}

fn cholesky_log_diag(correlation: &Array2<f64>) -> Result<Vec<f64>> {
    let chol = cholesky_with_jitter(correlation)?;
    Ok((0..correlation.nrows())
        .map(|i| 2.0 * chol[(i, i)].ln())
        .collect())
}

fn log_det_correlation(correlation: &Array2<f64>) -> Result<f64> {
    Ok(cholesky_log_diag(correlation)?.iter().sum())
}

/// Analytic total correlation of the Gaussian family:
/// `T = -1/2 ln det(R)` nats.
pub fn gaussian_total_correlation(spec: &GaussianSpec) -> Result<f64> {
    spec.validate()?;
    Ok(-0.5 * log_det_correlation(&spec.correlation)?)
}

/// Analytic mutual information between the first `split` dimensions and the
/// rest: `I = -1/2 ln(det R / (det R_a det R_b))` nats.
pub fn gaussian_mutual_information(spec: &GaussianSpec, split: usize) -> Result<f64> {
    spec.validate()?;
    let d = spec.dims();
    if split == 0 || split >= d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: split,
        });
    }
    let r_a = spec
        .correlation
        .slice(ndarray::s![..split, ..split])
        .to_owned();
    let r_b = spec
        .correlation
        .slice(ndarray::s![split.., split..])
        .to_owned();
    // Cancel the block contributions before combining so that
    // block-diagonal correlations give exactly zero.
    let full = cholesky_log_diag(&spec.correlation)?;
    let gap_a: f64 = full[..split].iter().sum::<f64>() - log_det_correlation(&r_a)?;
    let gap_b: f64 = full[split..].iter().sum::<f64>() - log_det_correlation(&r_b)?;
    Ok(-0.5 * (gap_a + gap_b))
}
