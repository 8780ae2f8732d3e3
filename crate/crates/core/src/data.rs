//! Sequence files, preprocessing, rotation conversions, synthetic motion and
//! window sampling.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PoseSequence, Representation};
use crate::numerics::Matrix;

pub const SEQUENCE_MAGIC: &str = "HRISEQ1";
const MAX_HEADER: usize = 512;

/// Parsed first line of a sequence file.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFileHeader {
    pub pose_dim: usize,
    pub fps: f64,
    pub repr: Representation,
    pub frames: usize,
}

impl SequenceFileHeader {
    pub fn to_line(&self) -> String {
        format!(
            "{SEQUENCE_MAGIC} K={} fps={} repr={} N={}\n",
            self.pose_dim,
            self.fps,
            self.repr.token(),
            self.frames
        )
    }

    /// Parses the header and returns it with the body offset.
    pub fn parse(bytes: &[u8]) -> Result<(Self, usize)> {
        let limit = bytes.len().min(MAX_HEADER);
        let nl = bytes[..limit]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Parse {
                offset: limit,
                message: "header line not terminated".into(),
            })?;
        let line = std::str::from_utf8(&bytes[..nl]).map_err(|e| Error::Parse {
            offset: e.valid_up_to(),
            message: "header is not UTF-8".into(),
        })?;

        let mut fields = Vec::new();
        let mut pos = 0;
        for tok in line.split(' ') {
            fields.push((pos, tok));
            pos += tok.len() + 1;
        }
        let expect = ["", "K", "fps", "repr", "N"];
        if fields.len() != expect.len() {
            return Err(Error::Parse {
                offset: 0,
                message: format!("expected 5 header fields, found {}", fields.len()),
            });
        }
        if fields[0].1 != SEQUENCE_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                message: format!("bad magic {:?}", fields[0].1),
            });
        }
        let mut values = Vec::new();
        for (&(off, tok), key) in fields[1..].iter().zip(&expect[1..]) {
            let v = tok
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .ok_or_else(|| Error::Parse {
                    offset: off,
                    message: format!("expected {key}=<value>, found {tok:?}"),
                })?;
            values.push((off + key.len() + 1, v));
        }
        let positive_int = |(off, v): (usize, &str), name: &str| -> Result<usize> {
            match v.parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(Error::Parse {
                    offset: off,
                    message: format!("{name} must be a positive integer, found {v:?}"),
                }),
            }
        };
        let pose_dim = positive_int(values[0], "K")?;
        let fps = match values[1].1.parse::<f64>() {
            Ok(f) if f.is_finite() && f > 0.0 => f,
            _ => {
                return Err(Error::Parse {
                    offset: values[1].0,
                    message: format!("fps must be a positive number, found {:?}", values[1].1),
                })
            }
        };
        let repr = Representation::from_token(values[2].1).ok_or_else(|| Error::Parse {
            offset: values[2].0,
            message: format!("unknown representation {:?}", values[2].1),
        })?;
        let frames = positive_int(values[3], "N")?;
        Ok((
            Self {
                pose_dim,
                fps,
                repr,
                frames,
            },
            nl + 1,
        ))
    }
}

pub fn encode_sequence(seq: &PoseSequence) -> Vec<u8> {
    let header = SequenceFileHeader {
        pose_dim: seq.pose_dim(),
        fps: seq.fps(),
        repr: seq.repr(),
        frames: seq.len(),
    };
    let mut out = header.to_line().into_bytes();
    out.reserve(seq.len() * seq.pose_dim() * 8);
    for v in seq.frames().as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_sequence(bytes: &[u8]) -> Result<PoseSequence> {
    let (h, body_start) = SequenceFileHeader::parse(bytes)?;
    let body = &bytes[body_start..];
    let expected = h.frames * h.pose_dim;
    if !body.len().is_multiple_of(8) || body.len() / 8 != expected {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!(
                "expected {expected} values ({} bytes), body holds {} bytes",
                expected * 8,
                body.len()
            ),
        });
    }
    let mut data = Vec::with_capacity(expected);
    for (i, chunk) in body.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        if !v.is_finite() {
            return Err(Error::Parse {
                offset: body_start + 8 * i,
                message: format!("non-finite value {v}"),
            });
        }
        data.push(v);
    }
    PoseSequence::new(Matrix::new(h.frames, h.pose_dim, data)?, h.fps, h.repr)
}

pub fn load_sequence(path: &Path) -> Result<PoseSequence> {
    decode_sequence(&fs::read(path)?)
}

pub fn save_sequence(seq: &PoseSequence, path: &Path) -> Result<()> {
    fs::write(path, encode_sequence(seq))?;
    Ok(())
}

/// Keeps every `round(fps / target)`-th frame.
pub fn downsample(seq: &PoseSequence, target_fps: f64) -> Result<PoseSequence> {
    if !(target_fps > 0.0) || target_fps > seq.fps() {
        return Err(Error::invalid(format!(
            "cannot downsample {} fps to {target_fps} fps",
            seq.fps()
        )));
    }
    let ratio = seq.fps() / target_fps;
    let step = ratio.round();
    if ((ratio - step) / ratio).abs() > 0.01 {
        return Err(Error::invalid(format!(
            "frame-rate ratio {ratio} is not an integer"
        )));
    }
    let step = step as usize;
    let kept: Vec<f64> = (0..seq.len())
        .step_by(step)
        .flat_map(|r| seq.frames().row(r).to_vec())
        .collect();
    let n = kept.len() / seq.pose_dim();
    PoseSequence::new(
        Matrix::new(n, seq.pose_dim(), kept)?,
        seq.fps() / step as f64,
        seq.repr(),
    )
}

/// Absolute range below which a coordinate counts as constant.
pub const CONSTANT_DIM_TOLERANCE: f64 = 1e-8;

/// Drops coordinates whose range over all frames is at most `tolerance`.
/// Returns the reduced sequence and the kept original indices.
pub fn strip_constant_dims(
    seq: &PoseSequence,
    tolerance: f64,
) -> Result<(PoseSequence, Vec<usize>)> {
    if seq.len() < 2 {
        return Err(Error::invalid(
            "need at least two frames to detect constant dimensions",
        ));
    }
    let f = seq.frames();
    let kept: Vec<usize> = (0..f.cols())
        .filter(|&c| {
            let (lo, hi) = (0..f.rows()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(f[(r, c)]), hi.max(f[(r, c)]))
            });
            hi - lo > tolerance
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptySequence("every dimension is constant".into()));
    }
    let reduced = Matrix::from_fn(f.rows(), kept.len(), |r, c| f[(r, kept[c])]);
    Ok((PoseSequence::new(reduced, seq.fps(), seq.repr())?, kept))
}

/// Inverse of [`strip_constant_dims`]: scatters reduced columns back and
/// fills the removed ones from `template`.
pub fn reinsert_dims(reduced: &Matrix, kept: &[usize], template: &[f64]) -> Result<Matrix> {
    if reduced.cols() != kept.len() || kept.iter().any(|&k| k >= template.len()) {
        return Err(Error::invalid("index map does not match the reduced data"));
    }
    let mut out = Matrix::from_fn(reduced.rows(), template.len(), |_, c| template[c]);
    for r in 0..reduced.rows() {
        for (c, &k) in kept.iter().enumerate() {
            out[(r, k)] = reduced[(r, c)];
        }
    }
    Ok(out)
}

/// Rodrigues formula for an axis-angle 3-vector.
pub fn expmap_to_rotmat(v: [f64; 3]) -> Matrix {
    let theta = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if theta < 1e-12 {
        return Matrix::identity(3);
    }
    let u = [v[0] / theta, v[1] / theta, v[2] / theta];
    let skew = Matrix::from_rows(&[
        vec![0.0, -u[2], u[1]],
        vec![u[2], 0.0, -u[0]],
        vec![-u[1], u[0], 0.0],
    ])
    .expect("3x3");
    let skew2 = skew.matmul(&skew);
    let mut r = Matrix::identity(3);
    r.axpy(theta.sin(), &skew);
    r.axpy(1.0 - theta.cos(), &skew2);
    r
}

/// Intrinsic Z-Y-X angles `[yaw, pitch, roll]` with `R = Rz(yaw)·Ry(pitch)·Rx(roll)`.
///
/// Pitch is in `[−π/2, π/2]`. At gimbal lock roll is set to 0 and the
/// remaining rotation is reported as yaw.
pub fn rotmat_to_euler(r: &Matrix) -> Result<[f64; 3]> {
    if r.shape() != (3, 3) {
        return Err(Error::invalid("rotation matrix must be 3x3"));
    }
    let ortho = r.tr_matmul(r).max_abs_diff(&Matrix::identity(3));
    if ortho > 1e-6 || det3(r) < 0.0 {
        return Err(Error::invalid(format!(
            "matrix is not a rotation (orthonormality error {ortho:e})"
        )));
    }
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    if pitch.cos() > 1e-9 {
        let yaw = r[(1, 0)].atan2(r[(0, 0)]);
        let roll = r[(2, 1)].atan2(r[(2, 2)]);
        Ok([yaw, pitch, roll])
    } else {
        let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]);
        Ok([yaw, pitch, 0.0])
    }
}

/// `Rz(yaw)·Ry(pitch)·Rx(roll)`.
pub fn euler_to_rotmat(angles: [f64; 3]) -> Matrix {
    let [yaw, pitch, roll] = angles;
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let rz = Matrix::from_rows(&[vec![cy, -sy, 0.0], vec![sy, cy, 0.0], vec![0.0, 0.0, 1.0]])
        .expect("3x3");
    let ry = Matrix::from_rows(&[vec![cp, 0.0, sp], vec![0.0, 1.0, 0.0], vec![-sp, 0.0, cp]])
        .expect("3x3");
    let rx = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, cr, -sr], vec![0.0, sr, cr]])
        .expect("3x3");
    rz.matmul(&ry).matmul(&rx)
}

pub(crate) fn det3(m: &Matrix) -> f64 {
    m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
        - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
        + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
}

/// Converts every joint's exponential map in a pose to Euler angles.
pub fn pose_expmap_to_euler(pose: &[f64]) -> Result<Vec<f64>> {
    if !pose.len().is_multiple_of(3) {
        return Err(Error::invalid(
            "exponential-map pose length must be a multiple of 3",
        ));
    }
    let mut out = Vec::with_capacity(pose.len());
    for j in pose.chunks_exact(3) {
        out.extend(rotmat_to_euler(&expmap_to_rotmat([j[0], j[1], j[2]]))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    /// Multiple of the base frequency.
    pub order: u32,
    pub amplitude: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Segment {
    /// Harmonic motion; the periodic clock advances.
    Periodic { frames: usize },
    /// Linear displacement by `velocity` per frame; the clock is frozen.
    Drift { frames: usize, velocity: Vec<f64> },
    /// Frozen pose.
    Rest { frames: usize },
}

impl Segment {
    pub fn frames(&self) -> usize {
        match self {
            Segment::Periodic { frames }
            | Segment::Drift { frames, .. }
            | Segment::Rest { frames } => *frames,
        }
    }
}

/// Recipe for a synthetic skeleton trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub joints: usize,
    /// Base period `P` in frames.
    pub period: usize,
    /// One harmonic list per coordinate (`3 * joints` lists).
    pub harmonics: Vec<Vec<Harmonic>>,
    /// Rest pose added to every frame; zeros when empty.
    #[serde(default)]
    pub base: Vec<f64>,
    /// Gaussian noise standard deviation.
    #[serde(default)]
    pub noise: f64,
    /// Segment plan; a single periodic segment when empty.
    #[serde(default)]
    pub segments: Vec<Segment>,
    pub length: usize,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repr")]
    pub repr: Representation,
}

fn default_fps() -> f64 {
    25.0
}

fn default_repr() -> Representation {
    Representation::Coords3d
}

impl SyntheticSpec {
    /// Purely periodic spec with `orders` random harmonics per coordinate whose
    /// amplitudes are drawn up to `amplitude` and decay with order.
    pub fn random_periodic(
        joints: usize,
        period: usize,
        orders: u32,
        amplitude: f64,
        length: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let harmonics = (0..3 * joints)
            .map(|_| {
                (1..=orders)
                    .map(|h| Harmonic {
                        order: h,
                        amplitude: rng.random_range(0.3..1.0) * amplitude / h as f64,
                        phase: rng.random_range(0.0..2.0 * PI),
                    })
                    .collect()
            })
            .collect();
        Self {
            joints,
            period,
            harmonics,
            base: Vec::new(),
            noise: 0.0,
            segments: Vec::new(),
            length,
            fps: 25.0,
            seed,
            repr: Representation::Coords3d,
        }
    }

    pub fn pose_dim(&self) -> usize {
        3 * self.joints
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.pose_dim();
        if self.joints == 0 {
            return Err(Error::invalid("synthetic spec needs at least one joint"));
        }
        if self.period < 4 {
            return Err(Error::invalid("period must be at least 4 frames"));
        }
        if self.length < self.period {
            return Err(Error::invalid("length must cover at least one period"));
        }
        if self.harmonics.len() != k {
            return Err(Error::invalid(format!(
                "expected {k} harmonic lists, got {}",
                self.harmonics.len()
            )));
        }
        if self
            .harmonics
            .iter()
            .flatten()
            .any(|h| !h.amplitude.is_finite() || !h.phase.is_finite())
        {
            return Err(Error::invalid(
                "harmonic amplitudes and phases must be finite",
            ));
        }
        if !self.base.is_empty() && self.base.len() != k {
            return Err(Error::invalid(
                "base pose length differs from pose dimension",
            ));
        }
        if !(self.noise >= 0.0) || !(self.fps > 0.0) {
            return Err(Error::invalid(
                "noise must be non-negative and fps positive",
            ));
        }
        if !self.segments.is_empty() {
            let total: usize = self.segments.iter().map(Segment::frames).sum();
            if total != self.length {
                return Err(Error::invalid(format!(
                    "segments cover {total} frames, length is {}",
                    self.length
                )));
            }
            for s in &self.segments {
                if let Segment::Drift { velocity, .. } = s {
                    if velocity.len() != k {
                        return Err(Error::invalid(
                            "drift velocity length differs from pose dimension",
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Generates the trajectory described by `spec`; noise is drawn from `seed`.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<PoseSequence> {
    spec.validate()?;
    let k = spec.pose_dim();
    let p = spec.period as f64;
    let segments = if spec.segments.is_empty() {
        vec![Segment::Periodic {
            frames: spec.length,
        }]
    } else {
        spec.segments.clone()
    };
    let base = if spec.base.is_empty() {
        vec![0.0; k]
    } else {
        spec.base.clone()
    };
    let harmonic_value = |c: usize, clock: f64| -> f64 {
        spec.harmonics[c]
            .iter()
            .map(|h| h.amplitude * (2.0 * PI * h.order as f64 * clock / p + h.phase).sin())
            .sum()
    };

    // the periodic clock only advances on periodic frames, so motion resumes
    // from the frozen phase after rest or drift
    let mut clock = 0.0;
    let mut shown = 0.0;
    let mut offset = vec![0.0; k];
    let mut clean = Vec::with_capacity(spec.length * k);
    for seg in &segments {
        for _ in 0..seg.frames() {
            match seg {
                Segment::Periodic { .. } => {
                    shown = clock;
                    clock += 1.0;
                }
                Segment::Drift { velocity, .. } => {
                    offset.iter_mut().zip(velocity).for_each(|(o, v)| *o += v)
                }
                Segment::Rest { .. } => {}
            }
            for c in 0..k {
                clean.push(base[c] + offset[c] + harmonic_value(c, shown));
            }
        }
    }
    if spec.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::invalid(e.to_string()))?;
        clean.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    PoseSequence::new(Matrix::new(spec.length, k, clean)?, spec.fps, spec.repr)
}

/// Windows of `len` frames starting every `stride` frames.
pub fn sample_windows(seq: &PoseSequence, len: usize, stride: usize) -> Vec<PoseSequence> {
    if len == 0 || seq.len() < len {
        return Vec::new();
    }
    (0..=seq.len() - len)
        .step_by(stride.max(1))
        .map(|s| seq.slice(s, s + len).expect("window inside sequence"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, k: usize, fps: f64) -> PoseSequence {
        PoseSequence::new(
            Matrix::from_fn(n, k, |r, c| (r + 1) as f64 + 100.0 * c as f64),
            fps,
            Representation::Coords3d,
        )
        .unwrap()
    }

    #[test]
    fn file_round_trip_is_bitwise() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let seq = PoseSequence::new(
            Matrix::from_fn(13, 9, |_, _| r.random_range(-1e3..1e3)),
            50.0,
            Representation::Expmap,
        )
        .unwrap();
        let bytes = encode_sequence(&seq);
        assert!(bytes.starts_with(b"HRISEQ1 K=9 fps=50 repr=expmap N=13\n"));
        let back = decode_sequence(&bytes).unwrap();
        assert_eq!(back, seq);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.hriseq");
        save_sequence(&seq, &path).unwrap();
        assert_eq!(load_sequence(&path).unwrap(), seq);
    }

    #[test]
    fn header_errors() {
        let body = vec![0u8; 8];
        let with = |h: &str| [h.as_bytes(), &body].concat();
        let err = decode_sequence(&with("HRISEQ1 K=0 fps=25 repr=coords3d N=1\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 10, .. }), "{err}");
        assert!(matches!(
            decode_sequence(&with("HRISEQ2 K=1 fps=25 repr=coords3d N=1\n")),
            Err(Error::Parse { offset: 0, .. })
        ));
        assert!(decode_sequence(&with("HRISEQ1 K=1 fps=-1 repr=coords3d N=1\n")).is_err());
        assert!(decode_sequence(&with("HRISEQ1 K=1 fps=25 repr=quat N=1\n")).is_err());
        assert!(decode_sequence(&with("HRISEQ1 K=1 fps=25 repr=coords3d\n")).is_err());
        assert!(decode_sequence(b"HRISEQ1 K=1 fps=25 repr=coords3d N=1").is_err());
    }

    #[test]
    fn truncated_body_reports_counts() {
        let seq = ramp(4, 3, 25.0);
        let mut bytes = encode_sequence(&seq);
        bytes.truncate(bytes.len() - 8);
        match decode_sequence(&bytes).unwrap_err() {
            Error::Parse { message, .. } => {
                assert!(message.contains("expected 12 values"), "{message}");
                assert!(message.contains("88 bytes"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn non_finite_body_value() {
        let seq = ramp(2, 3, 25.0);
        let mut bytes = encode_sequence(&seq);
        let header_len = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
        bytes[header_len + 16..header_len + 24].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(
            matches!(decode_sequence(&bytes), Err(Error::Parse { offset, .. }) if offset == header_len + 16)
        );
    }

    #[test]
    fn downsampling() {
        let s = downsample(&ramp(10, 1, 50.0), 25.0).unwrap();
        assert_eq!(s.frames().as_slice(), &[1.0, 3.0, 5.0, 7.0, 9.0]);
        assert_eq!(s.fps(), 25.0);
        assert_eq!(
            downsample(&ramp(10, 1, 25.0), 25.0).unwrap(),
            ramp(10, 1, 25.0)
        );
        let s = downsample(&ramp(100, 1, 100.0), 25.0).unwrap();
        assert_eq!(&s.frames().as_slice()[..4], &[1.0, 5.0, 9.0, 13.0]);
        assert_eq!(s.len(), 25);
        assert!(downsample(&ramp(10, 1, 50.0), 30.0).is_err());
        assert!(downsample(&ramp(10, 1, 25.0), 50.0).is_err());
    }

    #[test]
    fn constant_dims() {
        let mut f = Matrix::from_fn(5, 4, |r, c| (r * (c + 1)) as f64);
        for r in 0..5 {
            f[(r, 2)] = 7.0;
        }
        let seq = PoseSequence::new(f.clone(), 25.0, Representation::Expmap).unwrap();
        let (red, kept) = strip_constant_dims(&seq, CONSTANT_DIM_TOLERANCE).unwrap();
        assert_eq!(kept, vec![0, 1, 3]);
        // column 0 is r * 1, never constant over 5 frames
        assert_eq!(red.pose_dim(), 3);
        assert_eq!(reinsert_dims(red.frames(), &kept, f.row(0)).unwrap(), f);

        let moving = ramp(3, 2, 25.0);
        assert_eq!(strip_constant_dims(&moving, 1e-8).unwrap().1, vec![0, 1]);

        let frozen =
            PoseSequence::new(Matrix::zeros(3, 2), 25.0, Representation::Coords3d).unwrap();
        assert!(matches!(
            strip_constant_dims(&frozen, 1e-8),
            Err(Error::EmptySequence(_))
        ));
        assert!(strip_constant_dims(&ramp(1, 2, 25.0), 1e-8).is_err());
    }

    #[test]
    fn h36m_shaped_reduction() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let frozen: Vec<usize> = (0..96).filter(|c| c % 16 < 5).collect();
        assert_eq!(frozen.len(), 30);
        let f = Matrix::from_fn(20, 96, |_, c| {
            if frozen.contains(&c) {
                c as f64
            } else {
                r.random_range(-1.0..1.0)
            }
        });
        let seq = PoseSequence::new(f, 25.0, Representation::Coords3d).unwrap();
        let (red, kept) = strip_constant_dims(&seq, CONSTANT_DIM_TOLERANCE).unwrap();
        assert_eq!(red.pose_dim(), 66);
        assert!(kept.iter().all(|k| !frozen.contains(k)));
    }

    #[test]
    fn rodrigues_examples() {
        assert_eq!(expmap_to_rotmat([0.0; 3]), Matrix::identity(3));
        let r = expmap_to_rotmat([0.0, 0.0, PI / 2.0]);
        let expect = Matrix::from_rows(&[
            vec![0.0, -1.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        assert!(r.max_abs_diff(&expect) < 1e-12);
        let e = rotmat_to_euler(&r).unwrap();
        assert!((e[0] - PI / 2.0).abs() < 1e-12 && e[1].abs() < 1e-12 && e[2].abs() < 1e-12);
        assert_eq!(
            rotmat_to_euler(&Matrix::identity(3)).unwrap(),
            [0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn euler_rejects_non_rotations() {
        assert!(rotmat_to_euler(&Matrix::identity(3).scale(1.1)).is_err());
        let reflect = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, -1.0],
        ])
        .unwrap();
        assert!(rotmat_to_euler(&reflect).is_err());
        assert!(rotmat_to_euler(&Matrix::identity(2)).is_err());
    }

    #[test]
    fn gimbal_lock_folds_roll_into_yaw() {
        let r = euler_to_rotmat([0.3, PI / 2.0, 0.2]);
        let e = rotmat_to_euler(&r).unwrap();
        assert_eq!(e[2], 0.0);
        assert!(euler_to_rotmat(e).max_abs_diff(&r) < 1e-7);
    }

    #[test]
    fn rotation_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let v = [
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
            ];
            let r = expmap_to_rotmat(v);
            assert!(r.tr_matmul(&r).max_abs_diff(&Matrix::identity(3)) < 1e-9);
            assert!((det3(&r) - 1.0).abs() < 1e-9);
            let e = rotmat_to_euler(&r).unwrap();
            if e[1].abs() < 1.4 {
                assert!(euler_to_rotmat(e).max_abs_diff(&r) < 1e-9);
            }
            let small = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.0..1.0),
            ];
            let back = rotmat_to_euler(&euler_to_rotmat(small)).unwrap();
            for (a, b) in back.iter().zip(&small) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    fn one_harmonic_spec(noise: f64) -> SyntheticSpec {
        let mut spec = SyntheticSpec::random_periodic(2, 25, 1, 40.0, 120, 5);
        spec.noise = noise;
        spec
    }

    #[test]
    fn synthetic_zero_harmonics_is_constant() {
        let mut spec = one_harmonic_spec(0.0);
        spec.harmonics.iter_mut().for_each(Vec::clear);
        spec.base = (0..6).map(|c| c as f64).collect();
        let s = gen_synthetic(&spec, 0).unwrap();
        assert!((0..s.len()).all(|r| s.frames().row(r) == spec.base.as_slice()));
    }

    #[test]
    fn synthetic_periodicity_and_determinism() {
        let spec = one_harmonic_spec(0.0);
        let s = gen_synthetic(&spec, 0).unwrap();
        for t in 0..s.len() - 25 {
            for c in 0..6 {
                assert!((s.frames()[(t + 25, c)] - s.frames()[(t, c)]).abs() < 1e-12);
            }
        }
        let noisy = one_harmonic_spec(2.0);
        assert_eq!(
            gen_synthetic(&noisy, 4).unwrap(),
            gen_synthetic(&noisy, 4).unwrap()
        );
        assert_ne!(
            gen_synthetic(&noisy, 4).unwrap(),
            gen_synthetic(&noisy, 5).unwrap()
        );
    }

    #[test]
    fn synthetic_segments() {
        let mut spec = one_harmonic_spec(0.0);
        spec.length = 60;
        spec.segments = vec![
            Segment::Periodic { frames: 20 },
            Segment::Rest { frames: 10 },
            Segment::Drift {
                frames: 10,
                velocity: vec![1.0; 6],
            },
            Segment::Periodic { frames: 20 },
        ];
        let s = gen_synthetic(&spec, 0).unwrap();
        let f = s.frames();
        for t in 20..30 {
            assert_eq!(f.row(t), f.row(19));
        }
        let mut pure = spec.clone();
        pure.segments.clear();
        let g = gen_synthetic(&pure, 0).unwrap();
        for c in 0..6 {
            assert!((f[(39, c)] - f[(19, c)] - 10.0).abs() < 1e-9);
            for j in 0..20 {
                assert!((f[(40 + j, c)] - 10.0 - g.frames()[(20 + j, c)]).abs() < 1e-9);
            }
        }
        spec.segments.pop();
        assert!(gen_synthetic(&spec, 0).is_err());
    }

    #[test]
    fn synthetic_spec_json() {
        let spec = one_harmonic_spec(1.5);
        let json = serde_json::to_string(&spec).unwrap();
        let back: SyntheticSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let minimal: SyntheticSpec = serde_json::from_str(
            r#"{"joints":1,"period":4,"length":8,"harmonics":[[],[],[{"order":1,"amplitude":2.0,"phase":0.0}]],
                "segments":[{"kind":"periodic","frames":4},{"kind":"rest","frames":4}]}"#,
        )
        .unwrap();
        assert_eq!(gen_synthetic(&minimal, 0).unwrap().len(), 8);
    }

    #[test]
    fn window_sampling() {
        let s = ramp(100, 2, 25.0);
        let w = sample_windows(&s, 60, 5);
        assert_eq!(w.len(), 9);
        assert_eq!(w[0].frames()[(0, 0)], 1.0);
        assert_eq!(w[8].frames()[(0, 0)], 41.0);
        assert_eq!(sample_windows(&ramp(60, 1, 25.0), 60, 1).len(), 1);
        assert_eq!(sample_windows(&s, 10, 500).len(), 1);
        assert!(sample_windows(&s, 101, 1).is_empty());
    }
}
