//! Python bindings for the motionatt forecasting library.

use std::path::PathBuf;

use motionatt::cli::RunConfig;
use motionatt::data::{self, SyntheticSpec};
use motionatt::eval::{self, Checkpoint};
use motionatt::model::{self, Forecaster, Representation};
use motionatt::numerics::{DctBasis, Matrix};
use motionatt::training;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(motionatt_py, MotionattError, PyException);

fn err(e: motionatt::Error) -> PyErr {
    MotionattError::new_err(format!("{}: {}", e.kind(), e))
}

fn json_err(e: serde_json::Error) -> PyErr {
    MotionattError::new_err(format!("json-error: {e}"))
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    Matrix::from_rows(rows).map_err(err)
}

fn repr_of(token: &str) -> PyResult<Representation> {
    Representation::from_token(token).ok_or_else(|| {
        MotionattError::new_err(format!(
            "invalid-argument: unknown representation {token:?}"
        ))
    })
}

/// Orthonormal DCT of each row of `seq` (K rows of L samples), keeping `retain` coefficients.
#[pyfunction]
fn dct(seq: Vec<Vec<f64>>, retain: usize) -> PyResult<Vec<Vec<f64>>> {
    let m = matrix(&seq)?;
    let basis = DctBasis::cached(m.cols()).map_err(err)?;
    Ok(basis.dct(&m, retain).map_err(err)?.to_rows())
}

/// Inverse of `dct`, zero-padding to `length` samples.
#[pyfunction]
fn idct(coef: Vec<Vec<f64>>, length: usize) -> PyResult<Vec<Vec<f64>>> {
    let m = matrix(&coef)?;
    let basis = DctBasis::cached(length).map_err(err)?;
    Ok(basis.idct(&m).map_err(err)?.to_rows())
}

#[pyfunction]
fn attention_scores(q: Vec<f64>, keys: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    motionatt::attention::attention_scores(&q, &keys).map_err(err)
}

#[pyfunction]
fn frame_wise_scores(last_pose: Vec<f64>, key_poses: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    motionatt::attention::frame_wise_scores(&last_pose, &key_poses).map_err(err)
}

/// Mean per-joint position error between two frame-major pose lists.
#[pyfunction]
fn mpjpe(pred: Vec<Vec<f64>>, truth: Vec<Vec<f64>>) -> PyResult<f64> {
    let p = matrix(&pred)?;
    let joints = p.cols() / 3;
    training::mpjpe_loss(&p, &matrix(&truth)?, joints).map_err(err)
}

#[pyfunction]
fn angle_l1(pred: Vec<Vec<f64>>, truth: Vec<Vec<f64>>) -> PyResult<f64> {
    training::angle_l1_loss(&matrix(&pred)?, &matrix(&truth)?).map_err(err)
}

/// Learning rate at a 1-based epoch under the exponential schedule.
#[pyfunction]
#[pyo3(signature = (epoch, lr=0.0005, gamma=None))]
fn lr_schedule(epoch: usize, lr: f64, gamma: Option<f64>) -> f64 {
    let cfg = training::TrainConfig {
        lr,
        gamma: gamma.unwrap_or_else(training::default_gamma),
        ..Default::default()
    };
    training::lr_schedule(epoch, &cfg)
}

/// Frame indices of millisecond horizons.
#[pyfunction]
#[pyo3(signature = (ms, fps=25.0))]
fn horizon_frames(ms: Vec<u32>, fps: f64) -> PyResult<Vec<usize>> {
    Ok(eval::horizon_frames(&ms, fps)
        .map_err(err)?
        .into_iter()
        .map(|h| h.frame)
        .collect())
}

#[pyfunction]
fn expmap_to_rotmat(v: [f64; 3]) -> Vec<Vec<f64>> {
    data::expmap_to_rotmat(v).to_rows()
}

/// A pose sequence: `frames` is a list of N poses of K values.
#[pyclass(name = "PoseSequence", module = "motionatt_py", from_py_object)]
#[derive(Clone)]
struct PySequence {
    inner: model::PoseSequence,
}

#[pymethods]
impl PySequence {
    #[new]
    #[pyo3(signature = (frames, fps=25.0, repr="coords3d"))]
    fn new(frames: Vec<Vec<f64>>, fps: f64, repr: &str) -> PyResult<Self> {
        let inner = model::PoseSequence::new(matrix(&frames)?, fps, repr_of(repr)?).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn frames(&self) -> Vec<Vec<f64>> {
        self.inner.frames().to_rows()
    }

    #[getter]
    fn fps(&self) -> f64 {
        self.inner.fps()
    }

    #[getter]
    fn repr(&self) -> &'static str {
        self.inner.repr().token()
    }

    #[getter]
    fn pose_dim(&self) -> usize {
        self.inner.pose_dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn slice(&self, start: usize, end: usize) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.slice(start, end).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        data::save_sequence(&self.inner, &path).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: data::load_sequence(&path).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "PoseSequence(frames={}, pose_dim={}, fps={}, repr={})",
            self.inner.len(),
            self.inner.pose_dim(),
            self.inner.fps(),
            self.inner.repr().token()
        )
    }
}

/// Generates a sequence from a JSON synthetic recipe.
#[pyfunction]
#[pyo3(signature = (spec_json, seed=0))]
fn gen_synthetic(spec_json: &str, seed: u64) -> PyResult<PySequence> {
    let spec: SyntheticSpec = serde_json::from_str(spec_json).map_err(json_err)?;
    Ok(PySequence {
        inner: data::gen_synthetic(&spec, seed).map_err(err)?,
    })
}

/// Random purely periodic recipe, returned as JSON.
#[pyfunction]
#[pyo3(signature = (joints, period, orders, amplitude, length, seed=0))]
fn periodic_spec(
    joints: usize,
    period: usize,
    orders: u32,
    amplitude: f64,
    length: usize,
    seed: u64,
) -> PyResult<String> {
    let spec = SyntheticSpec::random_periodic(joints, period, orders, amplitude, length, seed);
    serde_json::to_string(&spec).map_err(json_err)
}

/// Forecasting model.
#[pyclass(name = "Model", module = "motionatt_py")]
struct PyModel {
    inner: model::Model,
    seed: u64,
    epoch: usize,
}

#[pymethods]
impl PyModel {
    /// Fresh model for `pose_dim` coordinates from a flat JSON run configuration.
    #[new]
    #[pyo3(signature = (pose_dim, config_json="{}", seed=0))]
    fn new(pose_dim: usize, config_json: &str, seed: u64) -> PyResult<Self> {
        let run: RunConfig = serde_json::from_str(config_json).map_err(json_err)?;
        let inner = model::Model::init(run.model_config(pose_dim), seed).map_err(err)?;
        Ok(Self {
            inner,
            seed,
            epoch: 0,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = eval::load_checkpoint(&path).map_err(err)?;
        Ok(Self {
            inner: ckpt.model().map_err(err)?,
            seed: ckpt.seed,
            epoch: ckpt.epoch,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let ckpt = Checkpoint {
            config: self.inner.config.clone(),
            params: self.inner.params.clone(),
            seed: self.seed,
            epoch: self.epoch,
        };
        eval::save_checkpoint(&ckpt, &path).map_err(err)
    }

    #[getter]
    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.config).map_err(json_err)
    }

    /// Trains in place on fixed-length windows; returns per-epoch training losses.
    #[pyo3(signature = (windows, config_json="{}"))]
    fn train(
        &mut self,
        py: Python<'_>,
        windows: Vec<PySequence>,
        config_json: &str,
    ) -> PyResult<Vec<f64>> {
        let run: RunConfig = serde_json::from_str(config_json).map_err(json_err)?;
        let seqs: Vec<model::PoseSequence> = windows.into_iter().map(|w| w.inner).collect();
        let cfg = self.inner.config.clone();
        let tc = run.train_config();
        let params = self.inner.params.clone();
        let out = py
            .detach(|| training::train_from(params, &seqs, None, &cfg, &tc, |_, _| {}))
            .map_err(err)?;
        self.inner.params = out.params;
        self.epoch = out.epoch;
        Ok(out.log.iter().map(|e| e.train_loss).collect())
    }

    /// Recursive forecast of `steps * T` frames; returns `(frames, scores per step)`.
    #[pyo3(signature = (history, steps=1))]
    fn predict(
        &self,
        history: &PySequence,
        steps: usize,
    ) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let out = self
            .inner
            .predict_recursive(&history.inner, steps)
            .map_err(err)?;
        let scores = out.attention.into_iter().map(|a| a.scores).collect();
        Ok((out.frames.to_rows(), scores))
    }

    /// Exactly `frames` future poses.
    fn forecast(&self, history: &PySequence, frames: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(self
            .inner
            .forecast(&history.inner, frames)
            .map_err(err)?
            .to_rows())
    }
}

/// Repeats the last observed pose.
#[pyfunction]
fn zero_velocity(history: &PySequence, frames: usize) -> Vec<Vec<f64>> {
    model::zero_velocity_baseline(&history.inner, frames).to_rows()
}

#[pymodule]
fn motionatt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MotionattError", m.py().get_type::<MotionattError>())?;
    m.add_class::<PySequence>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(dct, m)?)?;
    m.add_function(wrap_pyfunction!(idct, m)?)?;
    m.add_function(wrap_pyfunction!(attention_scores, m)?)?;
    m.add_function(wrap_pyfunction!(frame_wise_scores, m)?)?;
    m.add_function(wrap_pyfunction!(mpjpe, m)?)?;
    m.add_function(wrap_pyfunction!(angle_l1, m)?)?;
    m.add_function(wrap_pyfunction!(lr_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(horizon_frames, m)?)?;
    m.add_function(wrap_pyfunction!(expmap_to_rotmat, m)?)?;
    m.add_function(wrap_pyfunction!(gen_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(periodic_spec, m)?)?;
    m.add_function(wrap_pyfunction!(zero_velocity, m)?)?;
    Ok(())
}
