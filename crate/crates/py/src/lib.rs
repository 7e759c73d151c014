//! Python bindings for the proxyspike core.
//!
//! Compiled as a `cdylib`; `python/smoke_test.py` shows how to load the
//! shared library straight from `target/` without an installer. The surface
//! is deliberately small: the conv kernel for spot checks, proxy training on
//! the synthetic task, and checkpoint inspection/evaluation.

use std::path::Path;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use proxyspike::checkpoint::Checkpoint;
use proxyspike::data::{self, Dataset};
use proxyspike::metrics::MetricsRow;
use proxyspike::trainer::{self, TrainConfig};
use proxyspike::{Architecture, Error, Precision, ResetMode, Tensor};

fn value_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: Error) -> PyErr {
    PyIOError::new_err(e.to_string())
}

/// Version string of the underlying core crate.
#[pyfunction]
fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// 2-D cross-correlation of `input` `[C, H, W]` with `weight`
/// `[C_out, C, k, k]`, both given as flat row-major lists plus shapes.
/// Returns `(data, shape)` of the output in the same layout.
#[pyfunction]
#[pyo3(signature = (input, input_shape, weight, weight_shape, stride = 1, pad = 0))]
fn conv2d(
    input: Vec<f64>,
    input_shape: Vec<usize>,
    weight: Vec<f64>,
    weight_shape: Vec<usize>,
    stride: usize,
    pad: usize,
) -> PyResult<(Vec<f64>, Vec<usize>)> {
    let x = Tensor::new(input_shape, input).map_err(value_err)?;
    let w = Tensor::new(weight_shape, weight).map_err(value_err)?;
    let out = proxyspike::ops::conv2d(&x, &w, stride, pad).map_err(value_err)?;
    Ok((out.as_slice().to_vec(), out.shape().to_vec()))
}

fn row_dict<'py>(py: Python<'py>, row: &MetricsRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("epoch", row.epoch)?;
    d.set_item("split", &row.split)?;
    d.set_item("accuracy", row.accuracy)?;
    d.set_item("xent", row.xent)?;
    d.set_item("msse", row.msse)?;
    d.set_item("seconds", row.seconds)?;
    Ok(d)
}

fn synthetic_pair(
    classes: usize,
    image_size: usize,
    train_per_class: usize,
    test_per_class: usize,
    noise: f64,
    data_seed: u64,
) -> PyResult<(Dataset, Dataset)> {
    data::make_synthetic_pair(classes, image_size, train_per_class, test_per_class, noise, data_seed)
        .map_err(value_err)
}

/// Train the proxy learner on the synthetic grating task. Returns a dict
/// with the architecture, best epoch, spiking test accuracy at that epoch,
/// and the full per-epoch metrics history; optionally saves the best
/// checkpoint to `checkpoint_out`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (
    arch = "16C3-P2-32C3-P2-64F-10F",
    classes = 10,
    image_size = 8,
    train_per_class = 100,
    test_per_class = 20,
    noise = 0.1,
    data_seed = 7,
    epochs = 5,
    t_max = 50,
    theta = 2.0,
    batch_size = 64,
    eta = 1e-3,
    seed = 42,
    reset = "to_zero",
    precision = "f32",
    eval_max = None,
    checkpoint_out = None,
))]
fn train_synthetic(
    py: Python<'_>,
    arch: &str,
    classes: usize,
    image_size: usize,
    train_per_class: usize,
    test_per_class: usize,
    noise: f64,
    data_seed: u64,
    epochs: usize,
    t_max: usize,
    theta: f64,
    batch_size: usize,
    eta: f64,
    seed: u64,
    reset: &str,
    precision: &str,
    eval_max: Option<usize>,
    checkpoint_out: Option<&str>,
) -> PyResult<Py<PyDict>> {
    let arch = Architecture::from_text(arch, [1, image_size, image_size], classes)
        .map_err(value_err)?;
    let (train_set, test_set) =
        synthetic_pair(classes, image_size, train_per_class, test_per_class, noise, data_seed)?;
    let cfg = TrainConfig {
        theta,
        t_max,
        eta,
        batch_size,
        epochs,
        seed,
        reset: reset.parse::<ResetMode>().map_err(value_err)?,
        precision: precision.parse::<Precision>().map_err(value_err)?,
        eval_max,
        ..TrainConfig::default()
    };
    let outcome = trainer::train(&cfg, &arch, &train_set, &test_set).map_err(value_err)?;

    let result = PyDict::new(py);
    result.set_item("arch", outcome.checkpoint.arch.to_string())?;
    result.set_item("best_epoch", outcome.best_epoch)?;
    let best_test = outcome
        .history
        .iter()
        .find(|r| r.split == "test" && r.epoch == outcome.best_epoch)
        .map(|r| r.accuracy);
    result.set_item("test_accuracy", best_test)?;
    let rows = outcome
        .history
        .iter()
        .map(|r| row_dict(py, r))
        .collect::<PyResult<Vec<_>>>()?;
    result.set_item("history", PyList::new(py, rows)?)?;
    if let Some(path) = checkpoint_out {
        outcome.checkpoint.save(Path::new(path)).map_err(io_err)?;
        result.set_item("checkpoint", path)?;
    }
    Ok(result.into())
}

/// Header fields of a saved checkpoint, without evaluating it.
#[pyfunction]
fn checkpoint_info(py: Python<'_>, path: &str) -> PyResult<Py<PyDict>> {
    let ckpt = Checkpoint::load(Path::new(path)).map_err(io_err)?;
    let d = PyDict::new(py);
    d.set_item("arch", ckpt.arch.to_string())?;
    d.set_item("classes", ckpt.arch.classes)?;
    d.set_item("input", ckpt.arch.input.to_vec())?;
    d.set_item("theta", ckpt.theta)?;
    d.set_item("t_max", ckpt.t_max)?;
    d.set_item("reset", ckpt.reset.to_string())?;
    d.set_item("precision", &ckpt.precision)?;
    d.set_item("parameters", ckpt.params.scalar_count())?;
    Ok(d.into())
}

/// Evaluate a saved checkpoint's spiking network on a regenerated synthetic
/// split. The generator arguments must match the ones used for training;
/// `t_max` overrides the stored horizon when given.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (
    path,
    classes = 10,
    image_size = 8,
    train_per_class = 100,
    test_per_class = 20,
    noise = 0.1,
    data_seed = 7,
    split = "test",
    t_max = None,
))]
fn eval_synthetic_checkpoint(
    py: Python<'_>,
    path: &str,
    classes: usize,
    image_size: usize,
    train_per_class: usize,
    test_per_class: usize,
    noise: f64,
    data_seed: u64,
    split: &str,
    t_max: Option<usize>,
) -> PyResult<Py<PyDict>> {
    let ckpt = Checkpoint::load(Path::new(path)).map_err(io_err)?;
    let (train_set, test_set) =
        synthetic_pair(classes, image_size, train_per_class, test_per_class, noise, data_seed)?;
    let dataset = match split {
        "train" => train_set,
        "test" => test_set,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown split {other:?}; expected \"train\" or \"test\""
            )))
        }
    };
    let cfg = TrainConfig {
        theta: ckpt.theta,
        t_max: t_max.unwrap_or(ckpt.t_max),
        reset: ckpt.reset,
        precision: ckpt.precision.parse::<Precision>().map_err(value_err)?,
        timing: false,
        ..TrainConfig::default()
    };
    let row = match cfg.precision {
        Precision::F32 => trainer::evaluate(&dataset, &ckpt.params, &ckpt.arch, &cfg, 0),
        Precision::F64 => {
            trainer::evaluate(&dataset, &ckpt.params.cast::<f64>(), &ckpt.arch, &cfg, 0)
        }
    }
    .map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("split", &row.split)?;
    d.set_item("t_max", cfg.t_max)?;
    d.set_item("samples", dataset.len())?;
    d.set_item("accuracy", row.accuracy)?;
    d.set_item("xent", row.xent)?;
    d.set_item("msse", row.msse)?;
    Ok(d.into())
}

#[pymodule]
fn proxyspike_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(conv2d, m)?)?;
    m.add_function(wrap_pyfunction!(train_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(checkpoint_info, m)?)?;
    m.add_function(wrap_pyfunction!(eval_synthetic_checkpoint, m)?)?;
    Ok(())
}
