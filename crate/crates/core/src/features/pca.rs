use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{FeatureSequence, Modality};
use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    mean: Array1<f64>,
    basis: Array2<f64>,
    explained_variance: Array1<f64>,
    total_variance: f64,
}

impl PcaModel {
    /// Validates orthonormal columns and a non-increasing, non-negative
    /// variance spectrum.
    pub fn new(
        mean: Array1<f64>,
        basis: Array2<f64>,
        explained_variance: Array1<f64>,
        total_variance: f64,
    ) -> Result<Self> {
        let (d, m) = basis.dim();
        if mean.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: mean.len(),
            });
        }
        if explained_variance.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: explained_variance.len(),
            });
        }
        let gram = basis.t().dot(&basis);
        for ((i, j), v) in gram.indexed_iter() {
            let want = if i == j { 1.0 } else { 0.0 };
            if (v - want).abs() > ORTHONORMAL_TOL {
                return Err(Error::invalid("PCA basis columns are not orthonormal"));
            }
        }
        if explained_variance.iter().any(|&v| v < 0.0)
            || explained_variance.windows(2).into_iter().any(|w| w[1] > w[0])
        {
            return Err(Error::invalid(
                "explained variance must be non-negative and non-increasing",
            ));
        }
        Ok(Self {
            mean,
            basis,
            explained_variance,
            total_variance,
        })
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn basis(&self) -> &Array2<f64> {
        &self.basis
    }

    pub fn explained_variance(&self) -> &Array1<f64> {
        &self.explained_variance
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    pub fn input_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn num_components(&self) -> usize {
        self.basis.ncols()
    }

    /// Fraction of the training variance captured by the kept components.
    pub fn retained_fraction(&self) -> f64 {
        if self.total_variance > 0.0 {
            self.explained_variance.sum() / self.total_variance
        } else {
            1.0
        }
    }
}

fn to_nalgebra(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Fits a PCA keeping the fewest leading components whose cumulative
/// variance reaches `variance_target` of the total.
///
/// When there are fewer observations than dimensions the eigenproblem is
/// solved on the `N x N` Gram matrix instead of the covariance.
pub fn fit_pca(data: &Array2<f64>, variance_target: f64) -> Result<PcaModel> {
    let (n, d) = data.dim();
    if n <= 1 {
        return Err(Error::InsufficientData(n));
    }
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::invalid(format!(
            "variance target must lie in (0, 1], got {variance_target}"
        )));
    }
    let mean = data.mean_axis(Axis(0)).expect("n > 1");
    let centered = data - &mean;
    let dof = (n - 1) as f64;
    let total: f64 = centered.iter().map(|v| v * v).sum::<f64>() / dof;

    let use_gram = n < d;
    let scatter = if use_gram {
        centered.dot(&centered.t())
    } else {
        centered.t().dot(&centered)
    };
    let eig = SymmetricEigen::new(to_nalgebra(&scatter));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .take_while(|&&i| eig.eigenvalues[i] > 1e-12 * top.max(f64::MIN_POSITIVE))
        .count()
        .min(n - 1)
        .min(d);

    let goal = variance_target * total * (1.0 - 1e-12);
    let mut keep = 0;
    let mut cumulative = 0.0;
    while keep < rank && cumulative < goal {
        cumulative += eig.eigenvalues[order[keep]] / dof;
        keep += 1;
    }
    let keep = keep.max(1).min(d);

    let mut basis = Array2::zeros((d, keep));
    let mut variances = Array1::zeros(keep);
    for (c, &idx) in order.iter().take(keep).enumerate() {
        let lambda = eig.eigenvalues[idx].max(0.0);
        variances[c] = lambda / dof;
        let v = eig.eigenvectors.column(idx);
        if use_gram {
            // covariance eigenvector = Xc^T u / |Xc^T u|
            let mut col = Array1::<f64>::zeros(d);
            for (i, ui) in v.iter().enumerate() {
                col.scaled_add(*ui, &centered.row(i));
            }
            let norm = col.dot(&col).sqrt();
            if norm > 0.0 {
                col /= norm;
            }
            basis.column_mut(c).assign(&col);
        } else {
            for i in 0..d {
                basis[[i, c]] = v[i];
            }
        }
    }
    if use_gram {
        // tiny cancellation errors; one Gram-Schmidt pass restores the tolerance
        for c in 0..keep {
            for prev in 0..c {
                let proj = basis.column(c).dot(&basis.column(prev));
                let p = basis.column(prev).to_owned();
                basis.column_mut(c).scaled_add(-proj, &p);
            }
            let norm = basis.column(c).dot(&basis.column(c)).sqrt();
            if norm > 0.0 {
                basis.column_mut(c).mapv_inplace(|v| v / norm);
            }
        }
    }
    PcaModel::new(mean, basis, variances, total)
}

/// Projects onto the kept components: `(frames - mean) · basis`.
pub fn apply_pca(m: &PcaModel, x: &FeatureSequence) -> Result<FeatureSequence> {
    if x.dim() != m.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: m.input_dim(),
            got: x.dim(),
        });
    }
    let projected = (x.frames() - &m.mean).dot(&m.basis);
    FeatureSequence::new(projected, x.frame_shift_ms(), x.modality())
}

/// Stand-in for per-frame lip descriptors (e.g. 2304-dim SIFT) when no
/// images are available: a smooth low-rank trajectory plus isotropic noise.
pub fn synthetic_descriptors(frames: usize, dim: usize, rank: usize, seed: u64) -> Result<FeatureSequence> {
    if frames == 0 || dim == 0 || rank == 0 {
        return Err(Error::invalid("descriptor stream needs frames, dim and rank > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |n: usize, m: usize, scale: f64| {
        Array2::from_shape_fn((n, m), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
    };
    let loadings = gauss(rank, dim, 1.0);
    let mut latent = gauss(frames, rank, 1.0);
    for t in 1..frames {
        let prev = latent.row(t - 1).to_owned();
        latent.row_mut(t).zip_mut_with(&prev, |v, p| *v = 0.8 * p + 0.6 * *v);
    }
    let noise = gauss(frames, dim, 0.05);
    FeatureSequence::from_frames(latent.dot(&loadings) + noise, Modality::Video)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0))
    }

    fn check_orthonormal(m: &PcaModel) {
        let g = m.basis().t().dot(m.basis());
        for ((i, j), v) in g.indexed_iter() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-8);
        }
    }

    #[test]
    fn rank_two_data() {
        let mut data = Array2::zeros((50, 5));
        let r = random(50, 2, 1);
        data.column_mut(1).assign(&r.column(0));
        data.column_mut(3).assign(&(&r.column(1) * 3.0));
        let m = fit_pca(&data, 0.98).unwrap();
        assert!(m.num_components() <= 2);
        check_orthonormal(&m);
    }

    #[test]
    fn full_target_keeps_full_rank() {
        let data = random(6, 10, 2);
        assert_eq!(fit_pca(&data, 1.0).unwrap().num_components(), 5);
        let data = random(40, 7, 3);
        assert_eq!(fit_pca(&data, 1.0).unwrap().num_components(), 7);
    }

    #[test]
    fn reconstruction_keeps_target_variance() {
        let data = synthetic_descriptors(200, 30, 6, 4).unwrap().into_frames();
        let m = fit_pca(&data, 0.98).unwrap();
        check_orthonormal(&m);
        let centered = &data - m.mean();
        let recon = centered.dot(m.basis()).dot(&m.basis().t());
        let residual: f64 = (&centered - &recon).iter().map(|v| v * v).sum();
        let total: f64 = centered.iter().map(|v| v * v).sum();
        assert!(1.0 - residual / total >= 0.98);
        assert!(m.retained_fraction() >= 0.98);
        let ev = m.explained_variance();
        assert!(ev.windows(2).into_iter().all(|w| w[0] >= w[1]));
    }

    #[test]
    fn insufficient_data() {
        assert!(matches!(fit_pca(&random(1, 3, 0), 0.9), Err(Error::InsufficientData(1))));
    }

    #[test]
    fn projecting_the_mean_gives_zero() {
        let data = random(30, 4, 5);
        let m = fit_pca(&data, 0.9).unwrap();
        let frames = Array2::from_shape_fn((3, 4), |(_, j)| m.mean()[j]);
        let x = FeatureSequence::from_frames(frames, Modality::Video).unwrap();
        assert!(apply_pca(&m, &x).unwrap().frames().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn identity_basis_only_centers() {
        let mean = Array1::from(vec![1.0, -2.0]);
        let m = PcaModel::new(mean, Array2::eye(2), Array1::from(vec![1.0, 1.0]), 2.0).unwrap();
        let x = FeatureSequence::from_frames(ndarray::array![[1.0, 0.0], [3.0, -2.0]], Modality::Audio).unwrap();
        assert_eq!(apply_pca(&m, &x).unwrap().frames(), &ndarray::array![[0.0, 2.0], [2.0, 0.0]]);
        let wrong = FeatureSequence::from_frames(Array2::zeros((2, 3)), Modality::Audio).unwrap();
        assert!(matches!(apply_pca(&m, &wrong), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn descriptor_stream_reduced_to_222() {
        let train = synthetic_descriptors(300, 2304, 250, 6).unwrap();
        let m = fit_pca(train.frames(), 1.0).unwrap();
        let basis = m.basis().slice(ndarray::s![.., ..222]).to_owned();
        let ev = m.explained_variance().slice(ndarray::s![..222]).to_owned();
        let m222 = PcaModel::new(m.mean().clone(), basis, ev, m.total_variance()).unwrap();
        let stream = synthetic_descriptors(20, 2304, 250, 7).unwrap();
        assert_eq!(apply_pca(&m222, &stream).unwrap().dim(), 222);
    }
}
