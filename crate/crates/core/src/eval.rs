//! Horizon-indexed evaluation, attention-map export and checkpoints.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionOutput;
use crate::data::pose_expmap_to_euler;
use crate::error::{Error, Result};
use crate::model::{Forecaster, Model, ModelConfig, ModelParams, PoseSequence};
use crate::numerics::{Matrix, Parameters};

/// Frame rate every evaluation horizon is expressed at.
pub const EVAL_FPS: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Horizon {
    pub ms: u32,
    /// 1-based future frame index.
    pub frame: usize,
}

/// Short-term horizons in milliseconds.
pub const SHORT_HORIZONS_MS: [u32; 4] = [80, 160, 320, 400];
/// Long-term horizons in milliseconds.
pub const LONG_HORIZONS_MS: [u32; 4] = [560, 720, 880, 1000];

/// Maps millisecond horizons to frame indices at `fps`.
pub fn horizon_frames(ms_list: &[u32], fps: f64) -> Result<Vec<Horizon>> {
    if !(fps > 0.0) {
        return Err(Error::invalid("fps must be positive"));
    }
    ms_list
        .iter()
        .map(|&ms| {
            let exact = ms as f64 * fps / 1000.0;
            let frame = exact.round();
            if (exact - frame).abs() > 1e-9 || frame < 1.0 {
                return Err(Error::invalid(format!(
                    "{ms} ms is not a positive multiple of the {} ms frame duration",
                    1000.0 / fps
                )));
            }
            Ok(Horizon {
                ms,
                frame: frame as usize,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Mean joint Euclidean distance (mm for coordinate data).
    Mpjpe,
    /// Euclidean distance between Euler-angle vectors of exponential-map poses.
    EulerAngle,
}

/// Error of a single predicted pose.
pub fn pose_error(metric: Metric, pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || !pred.len().is_multiple_of(3) {
        return Err(Error::invalid(
            "pose lengths differ or are not multiples of 3",
        ));
    }
    match metric {
        Metric::Mpjpe => {
            let joints = pred.len() / 3;
            let total: f64 = pred
                .chunks_exact(3)
                .zip(truth.chunks_exact(3))
                .map(|(a, b)| {
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
                })
                .sum();
            Ok(total / joints as f64)
        }
        Metric::EulerAngle => {
            let a = pose_expmap_to_euler(pred)?;
            let b = pose_expmap_to_euler(truth)?;
            Ok(a.iter()
                .zip(&b)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt())
        }
    }
}

/// A test sequence: history followed by at least the largest horizon of future frames.
#[derive(Debug, Clone)]
pub struct EvalWindow {
    pub action: String,
    pub sequence: PoseSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub horizons: Vec<Horizon>,
    pub mean_error: Vec<f64>,
    /// Extra named columns (baselines, per-action means), in CSV order.
    pub columns: Vec<(String, Vec<f64>)>,
    pub evaluated: usize,
    pub skipped: usize,
}

impl EvalReport {
    pub fn add_column(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        if values.len() != self.horizons.len() {
            return Err(Error::invalid(
                "column length differs from the horizon count",
            ));
        }
        self.columns.push((name.into(), values));
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    /// `horizon_ms,frame,mean_error[,column...]`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("horizon_ms,frame,mean_error");
        for (name, _) in &self.columns {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (i, h) in self.horizons.iter().enumerate() {
            let _ = write!(out, "{},{},{:.6}", h.ms, h.frame, self.mean_error[i]);
            for (_, v) in &self.columns {
                let _ = write!(out, ",{:.6}", v[i]);
            }
            out.push('\n');
        }
        out
    }
}

/// Mean error at each horizon frame over all windows.
///
/// Each window's first `history_len` frames are observed; windows without
/// enough future frames for the largest horizon are skipped and counted.
/// Per-action means are added as `action:<name>` columns when more than one
/// action is present.
pub fn evaluate(
    forecaster: &dyn Forecaster,
    windows: &[EvalWindow],
    history_len: usize,
    horizons: &[Horizon],
    metric: Metric,
) -> Result<EvalReport> {
    let max_h = horizons
        .iter()
        .map(|h| h.frame)
        .max()
        .ok_or_else(|| Error::invalid("no horizons"))?;
    let mut sums = vec![0.0; horizons.len()];
    let mut per_action: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    let mut evaluated = 0;
    let mut skipped = 0;
    for w in windows {
        if history_len == 0 || w.sequence.len() < history_len + max_h {
            skipped += 1;
            continue;
        }
        let history = w.sequence.slice(0, history_len)?;
        let pred = forecaster.forecast(&history, max_h)?;
        let entry = per_action
            .entry(w.action.as_str())
            .or_insert_with(|| (vec![0.0; horizons.len()], 0));
        for (i, h) in horizons.iter().enumerate() {
            let truth = w.sequence.frames().row(history_len + h.frame - 1);
            let e = pose_error(metric, pred.row(h.frame - 1), truth)?;
            sums[i] += e;
            entry.0[i] += e;
        }
        entry.1 += 1;
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(Error::invalid(format!(
            "no window has {history_len} + {max_h} frames ({skipped} skipped)"
        )));
    }
    let mean_error = sums.iter().map(|s| s / evaluated as f64).collect();
    let mut report = EvalReport {
        horizons: horizons.to_vec(),
        mean_error,
        columns: Vec::new(),
        evaluated,
        skipped,
    };
    if per_action.len() > 1 {
        for (action, (s, n)) in per_action {
            report.add_column(
                format!("action:{action}"),
                s.iter().map(|v| v / n as f64).collect(),
            )?;
        }
    }
    Ok(report)
}

/// Per-frame attention map: one row per recursion step.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    /// Frame index relative to the first predicted frame (which is 0).
    pub columns: Vec<i64>,
    pub rows: Vec<Vec<f64>>,
}

impl AttentionMap {
    /// Places score `a_i` on the last frame of key window `i` (frame `i + M − 1`).
    pub fn from_trace(
        trace: &[AttentionOutput],
        history_len: usize,
        m: usize,
        t: usize,
    ) -> Result<Self> {
        if trace.is_empty() {
            return Err(Error::invalid("empty attention trace"));
        }
        let width = history_len + (trace.len() - 1) * t;
        let columns = (0..width).map(|f| f as i64 - history_len as i64).collect();
        let rows = trace
            .iter()
            .map(|step| {
                let mut row = vec![0.0; width];
                for (i, a) in step.scores.iter().enumerate() {
                    row[i + m - 1] = *a;
                }
                row
            })
            .collect();
        Ok(Self { columns, rows })
    }

    /// Relative frame index of the largest entry in `row`.
    pub fn argmax(&self, row: usize) -> i64 {
        let r = &self.rows[row];
        let best = r
            .iter()
            .enumerate()
            .fold(0, |b, (i, v)| if *v > r[b] { i } else { b });
        self.columns[best]
    }

    /// Attention mass on columns `<= frame` in `row`.
    pub fn mass_up_to(&self, row: usize, frame: i64) -> f64 {
        self.columns
            .iter()
            .zip(&self.rows[row])
            .filter(|(c, _)| **c <= frame)
            .map(|(_, v)| v)
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = join(self.columns.iter().map(|c| c.to_string()));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&join(row.iter().map(|v| format!("{v:.9}"))));
            out.push('\n');
        }
        out
    }
}

fn join(it: impl Iterator<Item = String>) -> String {
    it.collect::<Vec<_>>().join(",")
}

pub fn export_attention(
    trace: &[AttentionOutput],
    history_len: usize,
    m: usize,
    t: usize,
) -> Result<String> {
    Ok(AttentionMap::from_trace(trace, history_len, m, t)?.to_csv())
}

const CHECKPOINT_FORMAT: &str = "motionatt-checkpoint/1";
const MANIFEST_FILE: &str = "manifest.json";
const BLOB_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub seed: u64,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model> {
        Model::new(self.config.clone(), self.params.clone())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: ModelConfig,
    seed: u64,
    epoch: usize,
    params: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: [usize; 2],
    /// Offset in values (not bytes) into the blob.
    offset: usize,
}

/// Writes `manifest.json` and `params.bin` (little-endian f64) into `dir`.
pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    let mut offset = 0;
    for (name, m) in ckpt.params.tensors() {
        entries.push(ManifestEntry {
            name,
            shape: [m.rows(), m.cols()],
            offset,
        });
        offset += m.rows() * m.cols();
        for v in m.as_slice() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        config: ckpt.config.clone(),
        seed: ckpt.seed,
        epoch: ckpt.epoch,
        params: entries,
    };
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    fs::write(dir.join(BLOB_FILE), blob)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    let load_err = |param: &str, message: String| Error::Load {
        param: param.to_string(),
        message,
    };
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(load_err(
            "manifest",
            format!("unknown format {:?}", manifest.format),
        ));
    }
    manifest
        .config
        .validate()
        .map_err(|e| load_err("config", e.to_string()))?;
    let blob = fs::read(dir.join(BLOB_FILE))?;
    if blob.len() % 8 != 0 {
        return Err(load_err(
            "blob",
            format!("length {} is not a multiple of 8", blob.len()),
        ));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let mut expected_offset = 0;
    for e in &manifest.params {
        if e.offset != expected_offset {
            return Err(load_err(
                &e.name,
                format!(
                    "offset {} is not contiguous (expected {expected_offset})",
                    e.offset
                ),
            ));
        }
        expected_offset += e.shape[0] * e.shape[1];
    }
    if expected_offset != values.len() {
        return Err(load_err(
            "blob",
            format!(
                "manifest describes {expected_offset} values, blob holds {}",
                values.len()
            ),
        ));
    }

    let mut params =
        ModelParams::init(&manifest.config, 0).map_err(|e| load_err("config", e.to_string()))?;
    let names: Vec<(String, (usize, usize))> = params
        .tensors()
        .into_iter()
        .map(|(n, m)| (n, m.shape()))
        .collect();
    for e in &manifest.params {
        if manifest.params.iter().filter(|o| o.name == e.name).count() > 1 {
            return Err(load_err(&e.name, "listed more than once".into()));
        }
        if !names.iter().any(|(n, _)| *n == e.name) {
            return Err(load_err(
                &e.name,
                "not a parameter of this configuration".into(),
            ));
        }
    }
    for ((name, shape), slot) in names.iter().zip(params.tensors_mut()) {
        let e = manifest
            .params
            .iter()
            .find(|e| &e.name == name)
            .ok_or_else(|| load_err(name, "missing from manifest".into()))?;
        if (e.shape[0], e.shape[1]) != *shape {
            return Err(load_err(
                name,
                format!("shape {:?} does not match expected {:?}", e.shape, shape),
            ));
        }
        let data = values[e.offset..e.offset + shape.0 * shape.1].to_vec();
        *slot =
            Matrix::new(shape.0, shape.1, data).map_err(|err| load_err(name, err.to_string()))?;
    }
    Ok(Checkpoint {
        config: manifest.config,
        params,
        seed: manifest.seed,
        epoch: manifest.epoch,
    })
}
