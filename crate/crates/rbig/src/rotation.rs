//! Orthogonal rotations between marginal Gaussianization steps: PCA from the
//! covariance eigendecomposition, and Haar-distributed random rotations.
//!
//! Rotations contribute zero to the flow's log-det Jacobian by contract, so
//! every constructed matrix is checked for orthogonality and unit determinant.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{summary, DataMatrix, Seed};
use crate::error::{Error, Result};

/// How a rotation was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RotationKind {
    Pca,
    Random,
}

const ORTHOGONALITY_TOL: f64 = 1e-10;

/// A d x d orthogonal matrix with provenance. The forward rotation maps a
/// sample row `x` to `x R^T`; rows of `R` are the rotated basis vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationMatrix {
    matrix: Array2<f64>,
    kind: RotationKind,
    seed: Option<Seed>,
}

impl RotationMatrix {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn kind(&self) -> RotationKind {
        self.kind
    }

    pub fn seed(&self) -> Option<Seed> {
        self.seed
    }

    pub fn d(&self) -> usize {
        self.matrix.nrows()
    }

    /// The identity rotation (useful as a neutral layer element).
    pub fn identity(d: usize) -> Self {
        Self {
            matrix: Array2::eye(d),
            kind: RotationKind::Pca,
            seed: None,
        }
    }

    /// Wrap an already-orthogonal matrix, enforcing the type invariants.
    pub fn from_matrix(matrix: Array2<f64>, kind: RotationKind, seed: Option<Seed>) -> Result<Self> {
        let r = Self { matrix, kind, seed };
        r.check_invariants()?;
        Ok(r)
    }

    fn check_invariants(&self) -> Result<()> {
        let d = self.matrix.nrows();
        if self.matrix.ncols() != d || d == 0 {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.matrix.ncols(),
            });
        }
        let gram = self.matrix.dot(&self.matrix.t());
        let mut worst = 0.0f64;
        for ((i, j), v) in gram.indexed_iter() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
        if worst >= ORTHOGONALITY_TOL {
            return Err(Error::CorruptModel(format!(
                "rotation not orthogonal (max deviation {worst:.3e})"
            )));
        }
        let det = determinant(&self.matrix);
        if (det.abs() - 1.0).abs() >= ORTHOGONALITY_TOL {
            return Err(Error::CorruptModel(format!(
                "rotation determinant {det} not of unit magnitude"
            )));
        }
        Ok(())
    }
}

fn determinant(m: &Array2<f64>) -> f64 {
    let d = m.nrows();
    let dm = nalgebra::DMatrix::from_fn(d, d, |i, j| m[[i, j]]);
    dm.determinant()
}

/// PCA rotation plus spectrum diagnostics.
#[derive(Debug, Clone)]
pub struct PcaRotation {
    pub rotation: RotationMatrix,
    /// Eigenvalues of the sample covariance, descending.
    pub eigenvalues: Vec<f64>,
    /// True when some eigenvalue fell below 1e-12 of the trace. The rotation
    /// is still valid; downstream consumers decide whether that is fatal.
    pub rank_deficient: bool,
}

/// Eigendecompose the sample covariance. Rows of the rotation are unit
/// eigenvectors sorted by descending eigenvalue, each signed so its
/// largest-magnitude entry is positive; exact eigenvalue ties are broken by
/// lexicographic comparison of the eigenvectors.
pub fn pca_rotation(data: &DataMatrix) -> Result<PcaRotation> {
    let n = data.n_samples();
    let d = data.n_dims();
    if n <= d {
        return Err(Error::TooFewSamples { n, min: d });
    }
    let stats = summary(data);
    pca_rotation_from_covariance(&stats.covariance)
}

/// PCA rotation from an explicit covariance matrix (see [`pca_rotation`]).
pub fn pca_rotation_from_covariance(covariance: &Array2<f64>) -> Result<PcaRotation> {
    let d = covariance.nrows();
    let cov = nalgebra::DMatrix::from_fn(d, d, |i, j| covariance[[i, j]]);
    let eig = nalgebra::SymmetricEigen::new(cov);

    // Extract (eigenvalue, eigenvector-row) pairs with the sign convention.
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..d)
        .map(|k| {
            let mut vec: Vec<f64> = (0..d).map(|i| eig.eigenvectors[(i, k)]).collect();
            // first entry attaining the largest magnitude must be positive
            let mut lead = 0;
            for (i, v) in vec.iter().enumerate() {
                if v.abs() > vec[lead].abs() {
                    lead = i;
                }
            }
            if vec[lead] < 0.0 {
                for v in &mut vec {
                    *v = -*v;
                }
            }
            (eig.eigenvalues[k], vec)
        })
        .collect();

    pairs.sort_by(|a, b| {
        b.0.total_cmp(&a.0).then_with(|| {
            a.1.iter()
                .zip(&b.1)
                .find_map(|(x, y)| {
                    let ord = x.total_cmp(y);
                    (ord != std::cmp::Ordering::Equal).then_some(ord)
                })
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });

    let trace: f64 = pairs.iter().map(|(v, _)| v).sum();
    let rank_deficient = pairs.iter().any(|(v, _)| *v < 1e-12 * trace);
    let eigenvalues: Vec<f64> = pairs.iter().map(|(v, _)| *v).collect();

    let mut matrix = Array2::zeros((d, d));
    for (row, (_, vec)) in pairs.iter().enumerate() {
        for (col, &v) in vec.iter().enumerate() {
            matrix[[row, col]] = v;
        }
    }

    let rotation = RotationMatrix::from_matrix(matrix, RotationKind::Pca, None)?;
    Ok(PcaRotation {
        rotation,
        eigenvalues,
        rank_deficient,
    })
}

/// Haar-distributed random orthogonal matrix: QR of a standard-Gaussian
/// matrix with the sign-of-R-diagonal correction. Deterministic under seed.
pub fn random_rotation(d: usize, seed: Seed) -> RotationMatrix {
    assert!(d >= 1);
    let mut rng = seed.rng();
    let gauss = nalgebra::DMatrix::from_fn(d, d, |_, _| {
        rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal)
    });
    let qr = gauss.qr();
    let r_diag: Vec<f64> = (0..d).map(|i| qr.r()[(i, i)]).collect();
    let mut q = qr.q();
    for (j, &sign_source) in r_diag.iter().enumerate() {
        if sign_source < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    let matrix = Array2::from_shape_fn((d, d), |(i, j)| q[(i, j)]);
    RotationMatrix::from_matrix(matrix, RotationKind::Random, Some(seed))
        .expect("QR output is orthogonal")
}

/// Rotate every sample row: `x R^T` forward, `x R` for the inverse.
pub fn rotate(data: &DataMatrix, r: &RotationMatrix, inverse: bool) -> Result<DataMatrix> {
    if data.n_dims() != r.d() {
        return Err(Error::DimensionMismatch {
            expected: r.d(),
            got: data.n_dims(),
        });
    }
    let out = rotate_array(&data.values().to_owned(), r, inverse);
    DataMatrix::new(out)
}

pub(crate) fn rotate_array(values: &Array2<f64>, r: &RotationMatrix, inverse: bool) -> Array2<f64> {
    if inverse {
        values.dot(r.matrix())
    } else {
        values.dot(&r.matrix().t())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{sample_gaussian, GaussianSpec};
    use ndarray::array;

    #[test]
    fn pca_two_by_two_closed_form() {
        let cov = array![[2.0, 1.0], [1.0, 2.0]];
        let pca = pca_rotation_from_covariance(&cov).unwrap();
        assert!((pca.eigenvalues[0] - 3.0).abs() < 1e-12);
        assert!((pca.eigenvalues[1] - 1.0).abs() < 1e-12);
        let s = 1.0 / 2.0f64.sqrt();
        let m = pca.rotation.matrix();
        for (got, want) in m.iter().zip([s, s, s, -s]) {
            assert!((got - want).abs() < 1e-12, "matrix {m:?}");
        }
        assert!(!pca.rank_deficient);
    }

    #[test]
    fn pca_identity_covariance_is_orthogonal() {
        let pca = pca_rotation_from_covariance(&Array2::eye(3)).unwrap();
        // degenerate spectrum: only orthogonality and determinant are pinned
        let m = pca.rotation.matrix();
        let gram = m.dot(&m.t());
        for ((i, j), v) in gram.indexed_iter() {
            let target = if i == j { 1.0 } else { 0.0 };
            assert!((v - target).abs() < 1e-10);
        }
    }

    #[test]
    fn pca_idempotent_on_rotated_data() {
        let spec = GaussianSpec::equicorrelated(3, 0.6).unwrap();
        let data = sample_gaussian(&spec, 4000, Seed(21)).unwrap();
        let first = pca_rotation(&data).unwrap();
        let rotated = rotate(&data, &first.rotation, false).unwrap();
        let second = pca_rotation(&rotated).unwrap();
        // already-diagonal covariance: new rotation is a signed permutation
        for v in second.rotation.matrix().iter() {
            assert!(
                v.abs() < 1e-6 || (v.abs() - 1.0).abs() < 1e-6,
                "entry {v} not near 0 or +/-1"
            );
        }
    }

    #[test]
    fn pca_rank_deficient_flag() {
        let cov = array![[1.0, 0.0], [0.0, 0.0]];
        let pca = pca_rotation_from_covariance(&cov).unwrap();
        assert!(pca.rank_deficient);
    }

    #[test]
    fn random_rotation_d1() {
        for s in 0..8 {
            let r = random_rotation(1, Seed(s));
            let v = r.matrix()[[0, 0]];
            assert!((v.abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_rotation_deterministic() {
        let a = random_rotation(5, Seed(11));
        let b = random_rotation(5, Seed(11));
        assert_eq!(a.matrix(), b.matrix());
        let c = random_rotation(5, Seed(12));
        assert_ne!(a.matrix(), c.matrix());
    }

    #[test]
    fn random_rotation_haar_entry_mean() {
        let mean: f64 = (0..200)
            .map(|s| random_rotation(50, Seed(s)).matrix()[[0, 0]])
            .sum::<f64>()
            / 200.0;
        assert!(mean.abs() < 0.05, "mean R[0][0] = {mean}");
    }

    #[test]
    fn rotate_identity_is_bitwise() {
        let data = DataMatrix::new(array![[1.5, -2.25], [0.125, 3.75], [9.0, -0.5]]).unwrap();
        let r = RotationMatrix::identity(2);
        let out = rotate(&data, &r, false).unwrap();
        assert_eq!(out.values(), data.values());
    }

    #[test]
    fn rotate_quarter_turn() {
        let r = RotationMatrix::from_matrix(
            array![[0.0, -1.0], [1.0, 0.0]],
            RotationKind::Random,
            None,
        )
        .unwrap();
        // row convention: output = x R^T
        let data = DataMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let out = rotate(&data, &r, false).unwrap();
        assert!((out.values()[[0, 0]] - 0.0).abs() < 1e-12);
        assert!((out.values()[[0, 1]] - 1.0).abs() < 1e-12);

        let back = rotate(&out, &r, true).unwrap();
        for (a, b) in back.values().iter().zip(data.values().iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rotate_preserves_norms_and_cov_det() {
        let spec = GaussianSpec::equicorrelated(3, 0.4).unwrap();
        let data = sample_gaussian(&spec, 2000, Seed(5)).unwrap();
        let r = random_rotation(3, Seed(17));
        let out = rotate(&data, &r, false).unwrap();

        for (x, y) in data.values().rows().into_iter().zip(out.values().rows()) {
            let nx: f64 = x.iter().map(|v| v * v).sum();
            let ny: f64 = y.iter().map(|v| v * v).sum();
            assert!((nx - ny).abs() < 1e-10 * nx.max(1.0));
        }

        let det_before = determinant(&summary(&data).covariance);
        let det_after = determinant(&summary(&out).covariance);
        assert!((det_before - det_after).abs() < 1e-8 * det_before.abs());
    }

    #[test]
    fn rotate_dimension_mismatch() {
        let data = DataMatrix::new(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let r = RotationMatrix::identity(3);
        assert!(matches!(
            rotate(&data, &r, false),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
