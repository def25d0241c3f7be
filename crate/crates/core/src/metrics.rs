//! Accuracy aggregation and the feature-space Frechet distance.
//!
//! The distance compares Gaussian fits of internal representations read at
//! a reference model's last hidden layer: real test images arrive there by
//! a full forward pass, generated features by injection at their level.
//! The matrix square root uses a symmetric eigendecomposition of
//! sqrt(A) B sqrt(A) with eigenvalues clamped at zero, and both
//! covariances get 1e-6 added to the diagonal beforehand.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::arch::Classifier;
use crate::error::{Error, Result};
use crate::generator::Generator;

pub const COVARIANCE_EPSILON: f64 = 1e-6;

/// Mean and covariance of a sample of representation vectors.
#[derive(Debug, Clone)]
pub struct GaussianStats {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
}

impl GaussianStats {
    /// Fit from rows of `samples`. The covariance is the unbiased estimate,
    /// symmetrized exactly.
    pub fn fit(samples: ArrayView2<'_, f32>) -> Result<Self> {
        let (n, d) = samples.dim();
        if n < 2 {
            return Err(Error::input("need at least 2 samples for a covariance"));
        }
        let mut mean = Array1::<f64>::zeros(d);
        for row in samples.rows() {
            for (m, &v) in mean.iter_mut().zip(row.iter()) {
                *m += v as f64;
            }
        }
        mean.mapv_inplace(|v| v / n as f64);
        let mut cov = Array2::<f64>::zeros((d, d));
        for row in samples.rows() {
            let centered: Vec<f64> = row
                .iter()
                .zip(mean.iter())
                .map(|(&v, &m)| v as f64 - m)
                .collect();
            for i in 0..d {
                let ci = centered[i];
                for j in i..d {
                    cov[[i, j]] += ci * centered[j];
                }
            }
        }
        let denom = (n - 1) as f64;
        for i in 0..d {
            for j in i..d {
                let v = cov[[i, j]] / denom;
                cov[[i, j]] = v;
                cov[[j, i]] = v;
            }
        }
        Ok(GaussianStats { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Symmetric PSD square root via eigendecomposition; negative eigenvalues
/// (numerical noise) are clamped at zero.
fn sqrtm_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let sqrt_vals: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for (j, s) in sqrt_vals.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*s);
    }
    &scaled * q.transpose()
}

/// Frechet distance between two Gaussian fits:
/// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::input(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let d = a.dim();
    let mut ca = to_dmatrix(&a.cov);
    let mut cb = to_dmatrix(&b.cov);
    for i in 0..d {
        ca[(i, i)] += COVARIANCE_EPSILON;
        cb[(i, i)] += COVARIANCE_EPSILON;
    }
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(b.mean.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    let sa = sqrtm_psd(&ca);
    let inner = &sa * &cb * &sa;
    let cross = sqrtm_psd(&inner);
    let dist = mean_term + ca.trace() + cb.trace() - 2.0 * cross.trace();
    // tiny negative values are numerical noise around zero
    Ok(dist.max(0.0))
}

/// Mean and standard error of the mean over per-seed values. SEM is the
/// sample standard deviation divided by sqrt(n); absent for a single seed.
pub fn average_accuracy_sem(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, Some(var.sqrt() / (n as f64).sqrt()))
}

/// Result of one seeded run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub dataset: String,
    pub architecture: String,
    pub mode: String,
    pub strategy_label: String,
    pub strategy: Vec<f64>,
    pub relative_cost: f64,
    pub per_task_accuracy: Vec<f64>,
    pub average_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mfid: Option<f64>,
    pub seed: u64,
    pub wall_clock_seconds: f64,
    pub config_hash: String,
}

impl RunResult {
    /// Canonical JSON with volatile wall-clock timing removed; two runs of
    /// the same config must agree byte-for-byte on this form.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("wall_clock_seconds");
        }
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

/// Read representations at the reference model's last hidden layer for a
/// feature batch injected at `level`.
fn reference_representations(
    reference: &Classifier,
    feats: &Array2<f32>,
    level: usize,
) -> Result<Array2<f32>> {
    let h = reference.num_levels();
    if level + 1 == h {
        // the injected features already live at the last hidden layer
        return Ok(feats.clone());
    }
    // walk the tail but stop before the output head by reusing taps
    let mut x = feats.clone();
    for l in level + 1..h {
        x = reference.hidden_layer_forward(l, &x)?;
    }
    Ok(x)
}

/// Feature-space Frechet distance between generated features injected at
/// `level` of the reference model and real test images pushed through the
/// full reference forward.
pub fn modified_fid(
    reference: &Classifier,
    generator: &Generator,
    level: usize,
    real_images: &ndarray::Array4<f32>,
    generated_count: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<f64> {
    if reference.num_levels() != generator.num_levels()
        || (0..reference.num_levels()).any(|l| reference.level_width(l) != generator.level_width(l))
    {
        return Err(Error::config(
            "reference model and generator disagree on hidden widths",
        ));
    }
    if level >= reference.num_levels() {
        return Err(Error::input(format!(
            "injection level {level} out of range (H = {})",
            reference.num_levels()
        )));
    }
    // real side: full forward, last hidden tap
    let mut real_reps: Vec<Array2<f32>> = Vec::new();
    let batch = 512usize;
    let n = real_images.dim().0;
    let mut i = 0;
    while i < n {
        let end = (i + batch).min(n);
        let chunk = real_images.slice(ndarray::s![i..end, .., .., ..]).to_owned();
        let (_, taps) = reference.forward_with_taps(&chunk)?;
        real_reps.push(taps.levels.last().unwrap().clone());
        i = end;
    }
    let real = concat_rows(&real_reps);

    // generated side: per-level samples through the reference tail
    let mut gen_reps: Vec<Array2<f32>> = Vec::new();
    let mut remaining = generated_count;
    while remaining > 0 {
        let take = remaining.min(batch);
        let feats = generator.sample_features(level, take, None, rng)?;
        gen_reps.push(reference_representations(reference, &feats, level)?);
        remaining -= take;
    }
    let gen = concat_rows(&gen_reps);

    let stats_real = GaussianStats::fit(real.view())?;
    let stats_gen = GaussianStats::fit(gen.view())?;
    frechet_distance(&stats_real, &stats_gen)
}

/// Frechet distance between representations of two image sets under the
/// same reference model (the same-distribution control).
pub fn representation_fid(
    reference: &Classifier,
    images_a: &ndarray::Array4<f32>,
    images_b: &ndarray::Array4<f32>,
) -> Result<f64> {
    let rep = |images: &ndarray::Array4<f32>| -> Result<Array2<f32>> {
        let mut parts = Vec::new();
        let n = images.dim().0;
        let mut i = 0;
        while i < n {
            let end = (i + 512).min(n);
            let chunk = images.slice(ndarray::s![i..end, .., .., ..]).to_owned();
            let (_, taps) = reference.forward_with_taps(&chunk)?;
            parts.push(taps.levels.last().unwrap().clone());
            i = end;
        }
        Ok(concat_rows(&parts))
    };
    let a = GaussianStats::fit(rep(images_a)?.view())?;
    let b = GaussianStats::fit(rep(images_b)?.view())?;
    frechet_distance(&a, &b)
}

fn concat_rows(parts: &[Array2<f32>]) -> Array2<f32> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views).expect("row concat")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn stats1(mean: f64, var: f64) -> GaussianStats {
        GaussianStats {
            mean: array![mean],
            cov: array![[var]],
        }
    }

    #[test]
    fn frechet_identity_is_zero() {
        let a = stats1(0.3, 2.0);
        assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-9);
    }

    #[test]
    fn frechet_one_dim_mean_case() {
        // mu 0 vs 1, both variances 0 -> 1
        let d = frechet_distance(&stats1(0.0, 0.0), &stats1(1.0, 0.0)).unwrap();
        assert!((d - 1.0).abs() < 1e-4, "{d}");
    }

    #[test]
    fn frechet_one_dim_variance_case() {
        // equal means, var 1 vs 4 -> 1 + 4 - 2*2 = 1
        let d = frechet_distance(&stats1(0.5, 1.0), &stats1(0.5, 4.0)).unwrap();
        assert!((d - 1.0).abs() < 1e-4, "{d}");
    }

    #[test]
    fn frechet_is_symmetric_and_nonnegative() {
        let a = GaussianStats {
            mean: array![0.1, -0.4],
            cov: array![[1.2, 0.3], [0.3, 0.9]],
        };
        let b = GaussianStats {
            mean: array![0.5, 0.0],
            cov: array![[0.7, -0.1], [-0.1, 1.4]],
        };
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!(ab >= 0.0);
        assert!((ab - ba).abs() < 1e-8);
    }

    #[test]
    fn frechet_dimension_mismatch_is_input_error() {
        let a = stats1(0.0, 1.0);
        let b = GaussianStats {
            mean: array![0.0, 0.0],
            cov: Array2::eye(2),
        };
        assert!(matches!(frechet_distance(&a, &b), Err(Error::Input(_))));
    }

    #[test]
    fn covariance_fit_is_symmetric_psd_after_clamping() {
        let mut rng = crate::nn::init::rng_for(0, "cov");
        let samples = crate::nn::init::standard_normal(&mut rng, 12, 5);
        let s = GaussianStats::fit(samples.view()).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(s.cov[[i, j]], s.cov[[j, i]]);
            }
        }
        let m = to_dmatrix(&s.cov);
        let eig = m.clone().symmetric_eigen();
        // clamping happens inside the sqrt path; the raw estimate may carry
        // eigenvalues a hair below zero
        assert!(eig.eigenvalues.iter().all(|&l| l > -1e-9));
        let root = sqrtm_psd(&m);
        let eig2 = (&root * &root).symmetric_eigen();
        assert!(eig2.eigenvalues.iter().all(|&l| l >= -1e-9));
    }

    #[test]
    fn sem_hand_case() {
        let (mean, sem) = average_accuracy_sem(&[0.70, 0.71, 0.72]);
        assert!((mean - 0.71).abs() < 1e-12);
        assert!((sem.unwrap() - 0.005773502691896258).abs() < 1e-5);
    }

    #[test]
    fn sem_zero_variance_and_single_seed() {
        let (_, sem) = average_accuracy_sem(&[0.5, 0.5, 0.5]);
        assert_eq!(sem.unwrap(), 0.0);
        let (mean, sem) = average_accuracy_sem(&[0.9]);
        assert_eq!(mean, 0.9);
        assert!(sem.is_none());
    }

    #[test]
    fn run_result_json_strips_wall_clock() {
        let r = RunResult {
            dataset: "synthetic".into(),
            architecture: "FMNIST3".into(),
            mode: "buffer".into(),
            strategy_label: "IR".into(),
            strategy: vec![1.0, 0.0, 0.0],
            relative_cost: 1.0,
            per_task_accuracy: vec![0.9, 0.8],
            average_accuracy: 0.85,
            mfid: None,
            seed: 1,
            wall_clock_seconds: 12.5,
            config_hash: "abc".into(),
        };
        let json = r.deterministic_json().unwrap();
        assert!(!json.contains("wall_clock"));
        let mut r2 = r.clone();
        r2.wall_clock_seconds = 99.0;
        assert_eq!(json, r2.deterministic_json().unwrap());
    }
}
