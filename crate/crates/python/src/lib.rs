//! Python bindings: the analytic cost model, batch apportionment, the
//! Frechet distance, and thin classifier/generator wrappers working on
//! flat row-major float lists.

use ndarray::{Array1, Array2, Array4};
use pyo3::exceptions::{PyFileNotFoundError, PyValueError};
use pyo3::prelude::*;

use plr::arch::{build_classifier, ClassifierSpec, FreezeScope};
use plr::cost::blocks_from_spec;
use plr::generator::build_generator;
use plr::metrics::GaussianStats;
use plr::nn::init::rng_for;
use plr::replay::ReplayStrategy;

fn to_py_err(e: plr::Error) -> PyErr {
    match &e {
        plr::Error::MissingData(_) => PyFileNotFoundError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn strategy(freqs: Vec<f64>) -> PyResult<ReplayStrategy> {
    ReplayStrategy::new(freqs).map_err(to_py_err)
}

/// Architecture preset names usable everywhere an `arch` argument appears.
#[pyfunction]
fn arch_presets() -> Vec<String> {
    ClassifierSpec::PRESETS.iter().map(|s| s.to_string()).collect()
}

/// Per-level parameter blocks [P_0, ..., P_{H-1}] of a preset.
#[pyfunction]
#[pyo3(signature = (arch, include_biases = false))]
fn cost_blocks(arch: &str, include_biases: bool) -> PyResult<Vec<f64>> {
    let spec = ClassifierSpec::preset(arch).map_err(to_py_err)?;
    Ok(blocks_from_spec(&spec, include_biases).blocks().to_vec())
}

/// Parameter updates per replay unit U(S).
#[pyfunction]
#[pyo3(signature = (arch, freqs, include_biases = false))]
fn updates(arch: &str, freqs: Vec<f64>, include_biases: bool) -> PyResult<f64> {
    let spec = ClassifierSpec::preset(arch).map_err(to_py_err)?;
    blocks_from_spec(&spec, include_biases)
        .updates(&strategy(freqs)?)
        .map_err(to_py_err)
}

/// Relative replay cost R(S) in (0, 1].
#[pyfunction]
#[pyo3(signature = (arch, freqs, include_biases = false))]
fn relative_cost(arch: &str, freqs: Vec<f64>, include_biases: bool) -> PyResult<f64> {
    let spec = ClassifierSpec::preset(arch).map_err(to_py_err)?;
    blocks_from_spec(&spec, include_biases)
        .relative_cost(&strategy(freqs)?)
        .map_err(to_py_err)
}

/// The internal-replay strategy vector for a preset.
#[pyfunction]
fn internal_replay(arch: &str) -> PyResult<Vec<f64>> {
    let spec = ClassifierSpec::preset(arch).map_err(to_py_err)?;
    Ok(ReplayStrategy::internal_replay(spec.num_levels())
        .frequencies()
        .to_vec())
}

/// Deterministic largest-remainder apportionment of a batch over levels.
#[pyfunction]
fn split_batch(batch_size: usize, freqs: Vec<f64>) -> PyResult<Vec<usize>> {
    Ok(plr::replay::split_batch(batch_size, &strategy(freqs)?))
}

/// Frechet distance between two Gaussian fits given as (mean, covariance).
#[pyfunction]
fn frechet_distance(
    mean_a: Vec<f64>,
    cov_a: Vec<Vec<f64>>,
    mean_b: Vec<f64>,
    cov_b: Vec<Vec<f64>>,
) -> PyResult<f64> {
    let to_stats = |mean: Vec<f64>, cov: Vec<Vec<f64>>| -> PyResult<GaussianStats> {
        let d = mean.len();
        let mut m = Array2::<f64>::zeros((d, d));
        if cov.len() != d {
            return Err(PyValueError::new_err("covariance rows do not match mean length"));
        }
        for (i, row) in cov.iter().enumerate() {
            if row.len() != d {
                return Err(PyValueError::new_err("covariance is not square"));
            }
            for (j, &v) in row.iter().enumerate() {
                m[[i, j]] = v;
            }
        }
        Ok(GaussianStats {
            mean: Array1::from_vec(mean),
            cov: m,
        })
    };
    plr::metrics::frechet_distance(&to_stats(mean_a, cov_a)?, &to_stats(mean_b, cov_b)?)
        .map_err(to_py_err)
}

/// Mean and SEM over per-seed values; SEM is None for a single value.
#[pyfunction]
fn average_accuracy_sem(values: Vec<f64>) -> (f64, Option<f64>) {
    plr::metrics::average_accuracy_sem(&values)
}

/// Classifier with per-level feature taps, over flat row-major batches.
#[pyclass(name = "Classifier")]
struct PyClassifier {
    inner: plr::arch::Classifier,
}

#[pymethods]
impl PyClassifier {
    #[new]
    fn new(arch: &str, seed: u64) -> PyResult<Self> {
        let spec = ClassifierSpec::preset(arch).map_err(to_py_err)?;
        Ok(PyClassifier {
            inner: build_classifier(&spec, seed).map_err(to_py_err)?,
        })
    }

    /// (channels, height, width) expected per image.
    fn input_shape(&self) -> (usize, usize, usize) {
        self.inner.spec.extractor.input_shape()
    }

    fn num_levels(&self) -> usize {
        self.inner.num_levels()
    }

    fn level_width(&self, level: usize) -> PyResult<usize> {
        if level >= self.inner.num_levels() {
            return Err(PyValueError::new_err("level out of range"));
        }
        Ok(self.inner.level_width(level))
    }

    /// Full forward: returns (logits, taps) where taps is a list of H
    /// flat matrices, one per hidden level.
    fn forward_with_taps(&self, images: Vec<f32>) -> PyResult<(Vec<Vec<f32>>, Vec<Vec<Vec<f32>>>)> {
        let (c, h, w) = self.inner.spec.extractor.input_shape();
        let px = c * h * w;
        if images.is_empty() || images.len() % px != 0 {
            return Err(PyValueError::new_err(format!(
                "image buffer length {} is not a multiple of {px}",
                images.len()
            )));
        }
        let batch = images.len() / px;
        let arr = Array4::from_shape_vec((batch, c, h, w), images)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        let (logits, taps) = self.inner.forward_with_taps(&arr).map_err(to_py_err)?;
        let rows = |m: &Array2<f32>| -> Vec<Vec<f32>> { m.rows().into_iter().map(|r| r.to_vec()).collect() };
        Ok((rows(&logits), taps.levels.iter().map(rows).collect()))
    }

    /// Recompute the tail from features injected at a level.
    fn forward_from_level(&self, feats: Vec<Vec<f32>>, level: usize) -> PyResult<Vec<Vec<f32>>> {
        let batch = feats.len();
        let width = feats.first().map(|r| r.len()).unwrap_or(0);
        let flat: Vec<f32> = feats.into_iter().flatten().collect();
        let arr = Array2::from_shape_vec((batch, width), flat)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        let logits = self.inner.forward_from_level(&arr, level).map_err(to_py_err)?;
        Ok(logits.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    fn freeze_extractor(&mut self) {
        self.inner.freeze(FreezeScope::Extractor);
    }

    fn frozen_mask(&self) -> Vec<bool> {
        self.inner.frozen_mask()
    }
}

/// Feature-space VAE mirroring a preset's fully-connected stack.
#[pyclass(name = "Generator")]
struct PyGenerator {
    inner: plr::generator::Generator,
}

#[pymethods]
impl PyGenerator {
    #[new]
    #[pyo3(signature = (arch, latent_dim = 100, seed = 0))]
    fn new(arch: &str, latent_dim: usize, seed: u64) -> PyResult<Self> {
        let spec = ClassifierSpec::preset(arch).map_err(to_py_err)?;
        Ok(PyGenerator {
            inner: build_generator(&spec, latent_dim, seed).map_err(to_py_err)?,
        })
    }

    fn num_levels(&self) -> usize {
        self.inner.num_levels()
    }

    fn encoder_shapes(&self) -> Vec<(usize, usize)> {
        self.inner.encoder_shapes()
    }

    fn decoder_shapes(&self) -> Vec<(usize, usize)> {
        self.inner.decoder_shapes()
    }

    /// Sample `count` feature rows for injection at `level`.
    #[pyo3(signature = (level, count, seed = 0))]
    fn sample_features(&self, level: usize, count: usize, seed: u64) -> PyResult<Vec<Vec<f32>>> {
        let mut rng = rng_for(seed, "py-sample");
        let feats = self
            .inner
            .sample_features(level, count, None, &mut rng)
            .map_err(to_py_err)?;
        Ok(feats.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    /// Decoder stages executed so far (sampling deeper levels runs fewer).
    fn stages_executed(&self) -> u64 {
        self.inner.stages_executed()
    }
}

#[pymodule]
fn plr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(arch_presets, m)?)?;
    m.add_function(wrap_pyfunction!(cost_blocks, m)?)?;
    m.add_function(wrap_pyfunction!(updates, m)?)?;
    m.add_function(wrap_pyfunction!(relative_cost, m)?)?;
    m.add_function(wrap_pyfunction!(internal_replay, m)?)?;
    m.add_function(wrap_pyfunction!(split_batch, m)?)?;
    m.add_function(wrap_pyfunction!(frechet_distance, m)?)?;
    m.add_function(wrap_pyfunction!(average_accuracy_sem, m)?)?;
    m.add_class::<PyClassifier>()?;
    m.add_class::<PyGenerator>()?;
    Ok(())
}
