//! Keyframe identification from per-frame feature vectors.
//!
//! Visually consistent stretches of video show up as bright blocks along the
//! diagonal of the frame-to-frame cosine-similarity matrix. Averaging the
//! similarities inside a sliding window on that diagonal gives a 1-D signal
//! whose peaks sit at block centers; those peaks are the keyframes.
//!
//! Only the diagonal band of the matrix is ever computed.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::scene::FrameRef;

pub const SFV_MAGIC: &[u8; 4] = b"SFV1";

/// Values closer than this are treated as one plateau during peak picking.
pub const PLATEAU_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum KeyframeError {
    #[error("feature series is empty")]
    EmptySeries,
    #[error("feature dimension must be at least 1")]
    ZeroDimension,
    #[error("feature vector {0} has zero norm")]
    ZeroNorm(usize),
    #[error("feature vector {0} contains a non-finite value")]
    NonFinite(usize),
    #[error("expected {expected} values, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("half width must be at least 1")]
    InvalidWindow,
    #[error("not an SFV1 feature file")]
    BadMagic,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// T feature vectors of dimension D with the frames they describe.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    dim: usize,
    data: Vec<f32>,
    frames: Vec<FrameRef>,
}

impl FeatureSeries {
    pub fn new(dim: usize, data: Vec<f32>, frames: Vec<FrameRef>) -> Result<Self, KeyframeError> {
        if dim == 0 {
            return Err(KeyframeError::ZeroDimension);
        }
        if frames.is_empty() {
            return Err(KeyframeError::EmptySeries);
        }
        let expected = frames.len() * dim;
        if data.len() != expected {
            return Err(KeyframeError::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        for (t, row) in data.chunks_exact(dim).enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(KeyframeError::NonFinite(t));
            }
            if row.iter().all(|&v| v == 0.0) {
                return Err(KeyframeError::ZeroNorm(t));
            }
        }
        Ok(FeatureSeries { dim, data, frames })
    }

    /// Frames default to one video sampled at one frame per second.
    pub fn with_default_frames(dim: usize, data: Vec<f32>, video_id: &str) -> Result<Self, KeyframeError> {
        if dim == 0 {
            return Err(KeyframeError::ZeroDimension);
        }
        let t = data.len() / dim;
        let frames = (0..t as u64)
            .map(|i| FrameRef::new(video_id, i, i * 1000))
            .collect();
        FeatureSeries::new(dim, data, frames)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> &[FrameRef] {
        &self.frames
    }

    pub fn as_raw(&self) -> &[f32] {
        &self.data
    }

    fn norms(&self) -> Vec<f64> {
        self.data
            .chunks_exact(self.dim)
            .map(|r| r.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt())
            .collect()
    }
}

pub(crate) fn cosine(a: &[f32], b: &[f32], na: f64, nb: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySignal {
    pub values: Vec<f64>,
    pub half_width: usize,
}

pub fn banded_similarity_signal(
    features: &FeatureSeries,
    half_width: usize,
) -> Result<SimilaritySignal, KeyframeError> {
    banded_similarity_signal_with(Exec::default(), features, half_width)
}

/// Mean pairwise cosine similarity inside a window of `±half_width` frames,
/// truncated at the ends of the series. A window holding a single frame
/// scores 1.0.
pub fn banded_similarity_signal_with(
    exec: Exec,
    features: &FeatureSeries,
    half_width: usize,
) -> Result<SimilaritySignal, KeyframeError> {
    if half_width == 0 {
        return Err(KeyframeError::InvalidWindow);
    }
    let t_len = features.len();
    if t_len == 0 {
        return Err(KeyframeError::EmptySeries);
    }
    let norms = features.norms();
    let band = 2 * half_width;

    // band_rows[i][d - 1] = cos(v_i, v_{i + d}) for 1 <= d <= 2w.
    let band_rows: Vec<Vec<f64>> = exec.map_range(t_len, |i| {
        (1..=band)
            .take_while(|d| i + d < t_len)
            .map(|d| cosine(features.row(i), features.row(i + d), norms[i], norms[i + d]))
            .collect()
    });

    let values = exec.map_range(t_len, |t| {
        let lo = t.saturating_sub(half_width);
        let hi = (t + half_width).min(t_len - 1);
        let m = hi - lo + 1;
        if m < 2 {
            return 1.0;
        }
        let mut sum = 0.0;
        for i in lo..hi {
            sum += band_rows[i][..hi - i].iter().sum::<f64>();
        }
        sum / (m * (m - 1) / 2) as f64
    });
    Ok(SimilaritySignal { values, half_width })
}

#[derive(Debug, Clone, Copy)]
struct Plateau {
    start: usize,
    end: usize,
    value: f64,
}

impl Plateau {
    fn center(&self) -> usize {
        self.start + (self.end - self.start + 1) / 2
    }
}

fn plateaus(signal: &[f64]) -> Vec<Plateau> {
    let mut out: Vec<Plateau> = Vec::new();
    for (i, &v) in signal.iter().enumerate() {
        match out.last_mut() {
            Some(p) if (v - signal[i - 1]).abs() <= PLATEAU_TOLERANCE => {
                p.end = i;
                p.value = p.value.max(v);
            }
            _ => out.push(Plateau {
                start: i,
                end: i,
                value: v,
            }),
        }
    }
    out
}

/// Height of a plateau above the higher of the valleys that separate it
/// from higher terrain. Sides that run to the end of the signal without
/// meeting higher terrain only count when no side does.
fn prominence(signal: &[f64], p: &Plateau) -> f64 {
    let scan = |iter: &mut dyn Iterator<Item = usize>| -> (Option<f64>, bool) {
        let mut lowest: Option<f64> = None;
        for i in iter {
            if signal[i] > p.value + PLATEAU_TOLERANCE {
                return (lowest, true);
            }
            lowest = Some(lowest.map_or(signal[i], |m: f64| m.min(signal[i])));
        }
        (lowest, false)
    };
    let (left_min, left_higher) = scan(&mut (0..p.start).rev());
    let (right_min, right_higher) = scan(&mut (p.end + 1..signal.len()));
    let base = match (left_higher, right_higher) {
        (true, true) => left_min.unwrap_or(p.value).max(right_min.unwrap_or(p.value)),
        (true, false) => left_min.unwrap_or(p.value),
        (false, true) => right_min.unwrap_or(p.value),
        (false, false) => match (left_min, right_min) {
            (Some(l), Some(r)) => l.min(r),
            (Some(m), None) | (None, Some(m)) => m,
            (None, None) => p.value,
        },
    };
    (p.value - base).max(0.0)
}

/// Picks peaks of `signal`.
///
/// Returns ascending plateau-center indices of local maxima whose prominence
/// is at least `min_prominence`, thinned so that kept peaks are at least
/// `min_separation` apart (taller peaks win). When nothing qualifies the
/// center of the first global-maximum plateau is returned instead.
pub fn detect_peaks(signal: &[f64], min_separation: usize, min_prominence: f64) -> Vec<usize> {
    if signal.is_empty() {
        return Vec::new();
    }
    let min_separation = min_separation.max(1);
    let runs = plateaus(signal);

    let mut candidates: Vec<(f64, usize)> = Vec::new();
    for (k, p) in runs.iter().enumerate() {
        let left_lower = k == 0 || runs[k - 1].value < p.value;
        let right_lower = k + 1 == runs.len() || runs[k + 1].value < p.value;
        if left_lower && right_lower && prominence(signal, p) >= min_prominence {
            candidates.push((p.value, p.center()));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut kept: Vec<usize> = Vec::new();
    for (_, idx) in candidates {
        if kept.iter().all(|&k| k.abs_diff(idx) >= min_separation) {
            kept.push(idx);
        }
    }
    if kept.is_empty() {
        let mut best = 0;
        for (i, &v) in signal.iter().enumerate() {
            if v > signal[best] {
                best = i;
            }
        }
        let run = runs
            .iter()
            .find(|p| p.start <= best && best <= p.end)
            .expect("plateaus cover the signal");
        kept.push(run.center());
    }
    kept.sort_unstable();
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyframeConfig {
    pub half_width: usize,
    pub min_separation: usize,
    pub min_prominence: f64,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        KeyframeConfig {
            half_width: 15,
            min_separation: 10,
            min_prominence: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub index: usize,
    pub frame: FrameRef,
    pub score: f64,
}

pub fn keyframes(
    features: &FeatureSeries,
    config: &KeyframeConfig,
) -> Result<Vec<Keyframe>, KeyframeError> {
    let signal = banded_similarity_signal(features, config.half_width)?;
    Ok(detect_peaks(&signal.values, config.min_separation, config.min_prominence)
        .into_iter()
        .map(|index| Keyframe {
            index,
            frame: features.frames()[index].clone(),
            score: signal.values[index],
        })
        .collect())
}

/// Writes `T`, `D` and the row-major values in the SFV1 layout.
pub fn write_sfv(mut w: impl Write, dim: usize, data: &[f32]) -> Result<(), KeyframeError> {
    if dim == 0 {
        return Err(KeyframeError::ZeroDimension);
    }
    let t = data.len() / dim;
    if t * dim != data.len() {
        return Err(KeyframeError::LengthMismatch {
            expected: (t + 1) * dim,
            found: data.len(),
        });
    }
    let mut buf = Vec::with_capacity(12 + data.len() * 4);
    buf.extend_from_slice(SFV_MAGIC);
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads an SFV1 stream, returning `(dim, values)`.
pub fn read_sfv(mut r: impl Read) -> Result<(usize, Vec<f32>), KeyframeError> {
    let mut header = [0u8; 12];
    r.read_exact(&mut header)?;
    if &header[..4] != SFV_MAGIC {
        return Err(KeyframeError::BadMagic);
    }
    let t = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let expected = t * d * 4;
    if body.len() != expected {
        return Err(KeyframeError::LengthMismatch {
            expected: t * d,
            found: body.len() / 4,
        });
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((d, data))
}

pub fn read_sfv_file(path: impl AsRef<Path>) -> Result<(usize, Vec<f32>), KeyframeError> {
    read_sfv(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn write_sfv_file(path: impl AsRef<Path>, dim: usize, data: &[f32]) -> Result<(), KeyframeError> {
    write_sfv(std::io::BufWriter::new(std::fs::File::create(path)?), dim, data)
}
