//! Seeded synthetic scenes with known ground truth.
//!
//! Frames are grouped into shots. A shot fixes a set of blobs (ellipses and
//! convex polygons) that drift slowly from frame to frame, so frames within
//! a shot share their composition and the feature series shows one block
//! per shot. Blobs are painted bottom-up in the editable z-order, tiny
//! components are absorbed into their neighbours, and the noisy map flips a
//! strict minority of every truth section to other classes.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::exec::Exec;
use crate::geometry::{fill_mask, Point, Z_ORDER};
use crate::scene::{label_components, ClassId, ClassMap, FrameRef, SectionMask, NUM_CLASSES};

pub const FEATURE_DIM: usize = 16;
const GRID_CHECK: (u32, u32) = (80, 45);
const MAX_RETRIES: u64 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    /// Per-pixel flip probability, below 0.5.
    pub noise: f64,
    pub seed: u64,
    #[serde(default = "default_video")]
    pub video_id: String,
    /// Inclusive blob count range per editable class, in z-order.
    #[serde(default = "default_blobs")]
    pub blobs: [(u8, u8); 6],
    /// Inclusive shot length range in frames.
    #[serde(default = "default_shot_len")]
    pub shot_len: (usize, usize),
    /// Components smaller than this fraction of the frame are absorbed.
    #[serde(default = "default_min_component")]
    pub min_component: f64,
}

fn default_video() -> String {
    "synth".into()
}

fn default_blobs() -> [(u8, u8); 6] {
    // Liver, Gallbladder, Fat, GI tract, Blood, Tool
    [(1, 1), (0, 1), (1, 2), (0, 1), (0, 1), (1, 2)]
}

fn default_shot_len() -> (usize, usize) {
    (15, 40)
}

fn default_min_component() -> f64 {
    0.01
}

impl SyntheticSpec {
    pub fn new(frames: usize, noise: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            frames,
            width: 854,
            height: 480,
            noise,
            seed,
            video_id: default_video(),
            blobs: default_blobs(),
            shot_len: default_shot_len(),
            min_component: default_min_component(),
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidSpec(m.to_string()));
        if !(0.0..0.5).contains(&self.noise) {
            return bad("noise must be in [0, 0.5)");
        }
        if self.frames == 0 {
            return bad("frame count must be positive");
        }
        if self.width < GRID_CHECK.0 || self.height < GRID_CHECK.1 {
            return bad("canvas must be at least 80x45");
        }
        if self.shot_len.0 == 0 || self.shot_len.0 > self.shot_len.1 {
            return bad("shot length range is empty");
        }
        if self.blobs.iter().any(|(lo, hi)| lo > hi) {
            return bad("blob count range is empty");
        }
        if !(0.0..0.2).contains(&self.min_component) {
            return bad("min_component must be in [0, 0.2)");
        }
        if self.video_id.is_empty() || !self.video_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return bad("video id must be non-empty [A-Za-z0-9_]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFrame {
    pub frame: FrameRef,
    pub shot: usize,
    pub truth: ClassMap,
    pub truth_sections: SectionMask,
    pub noisy: ClassMap,
    /// Flipped pixel count per truth section.
    pub flips: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub spec: SyntheticSpec,
    pub frames: Vec<SyntheticFrame>,
    /// Row-major `frames x FEATURE_DIM`.
    pub features: Vec<f32>,
    /// First frame index of every shot.
    pub shot_starts: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipse { rx: f64, ry: f64, angle: f64 },
    Convex { n: usize, radius: f64, phase: f64, jitter: [f64; 8] },
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    class: ClassId,
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
    spin: f64,
    shape: Shape,
}

impl Blob {
    fn ring(&self, t: f64, extra: f64) -> Vec<Point> {
        let (cx, cy) = (self.cx + self.vx * t, self.cy + self.vy * t);
        let turn = self.spin * t + extra;
        match self.shape {
            Shape::Ellipse { rx, ry, angle } => {
                let (s, c) = (angle + turn).sin_cos();
                (0..48)
                    .map(|k| {
                        let a = k as f64 / 48.0 * std::f64::consts::TAU;
                        let (x, y) = (rx * a.cos(), ry * a.sin());
                        Point::new(cx + x * c - y * s, cy + x * s + y * c)
                    })
                    .collect()
            }
            Shape::Convex { n, radius, phase, jitter } => (0..n)
                .map(|k| {
                    let a = phase + turn + k as f64 / n as f64 * std::f64::consts::TAU;
                    let r = radius * jitter[k];
                    Point::new(cx + r * a.cos(), cy + r * a.sin())
                })
                .collect(),
        }
    }
}

fn plan_shot(rng: &mut ChaCha8Rng, spec: &SyntheticSpec) -> Vec<Blob> {
    let (w, h) = (f64::from(spec.width), f64::from(spec.height));
    let scale = w.min(h);
    let mut blobs = Vec::new();
    for (z, &class) in Z_ORDER.iter().enumerate() {
        let (lo, hi) = spec.blobs[z];
        let count = rng.random_range(lo..=hi);
        // lower layers are larger
        let size = match class {
            ClassId::LIVER => (0.25, 0.40),
            ClassId::GALLBLADDER | ClassId::FAT | ClassId::GI_TRACT => (0.12, 0.22),
            _ => (0.07, 0.14),
        };
        for _ in 0..count {
            let shape = if class == ClassId::TOOL || rng.random_bool(0.4) {
                let mut jitter = [1.0; 8];
                for j in &mut jitter {
                    *j = rng.random_range(0.8..1.0);
                }
                Shape::Convex {
                    n: rng.random_range(4..=8),
                    radius: scale * rng.random_range(size.0..size.1),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    jitter,
                }
            } else {
                let r = scale * rng.random_range(size.0..size.1);
                Shape::Ellipse {
                    rx: r,
                    ry: r * rng.random_range(0.55..1.0),
                    angle: rng.random_range(0.0..std::f64::consts::PI),
                }
            };
            blobs.push(Blob {
                class,
                cx: rng.random_range(0.15 * w..0.85 * w),
                cy: rng.random_range(0.15 * h..0.85 * h),
                vx: rng.random_range(-2.0..2.0),
                vy: rng.random_range(-1.5..1.5),
                spin: rng.random_range(-0.01..0.01),
                shape,
            });
        }
    }
    blobs
}

fn paint(spec: &SyntheticSpec, blobs: &[Blob], t: f64, extra: f64) -> Vec<u8> {
    let (w, h) = (spec.width as usize, spec.height as usize);
    let mut labels = vec![ClassId::BACKGROUND.get(); w * h];
    for b in blobs {
        let m = fill_mask(&b.ring(t, extra), w, h);
        for (l, &inside) in labels.iter_mut().zip(&m.data) {
            if inside {
                *l = b.class.get();
            }
        }
    }
    labels
}

/// Relabels components below `min_pixels` with the most common class along
/// their border until none remain.
fn absorb_small_components(w: u32, h: u32, labels: &mut [u8], min_pixels: u64) {
    let (wu, hu) = (w as usize, h as usize);
    for _ in 0..16 {
        let map = ClassMap::from_raw(w, h, labels.to_vec()).expect("labels sized to canvas");
        let comps = label_components(&map).expect("components of a valid map");
        let sizes = comps.section_sizes();
        if sizes.iter().all(|&s| s >= min_pixels) || sizes.len() == 1 {
            return;
        }
        let ids = comps.as_raw();
        let mut votes = vec![[0u64; NUM_CLASSES]; sizes.len()];
        for y in 0..hu {
            for x in 0..wu {
                let i = y * wu + x;
                let s = usize::from(ids[i]);
                if sizes[s] >= min_pixels {
                    continue;
                }
                let mut vote = |j: usize| {
                    if ids[j] != ids[i] {
                        votes[s][usize::from(labels[j])] += 1;
                    }
                };
                if x > 0 {
                    vote(i - 1);
                }
                if x + 1 < wu {
                    vote(i + 1);
                }
                if y > 0 {
                    vote(i - wu);
                }
                if y + 1 < hu {
                    vote(i + wu);
                }
            }
        }
        // Absorb only the smallest small component per neighbour class
        // pattern this round; relabel all small ones toward their border's
        // majority, which can only shrink the set of small components.
        let target: Vec<Option<u8>> = (0..sizes.len())
            .map(|s| {
                if sizes[s] >= min_pixels {
                    return None;
                }
                let v = &votes[s];
                let best = (0..NUM_CLASSES).max_by_key(|&c| (v[c], std::cmp::Reverse(c)))?;
                (v[best] > 0).then_some(best as u8)
            })
            .collect();
        for (i, l) in labels.iter_mut().enumerate() {
            if let Some(c) = target[usize::from(ids[i])] {
                *l = c;
            }
        }
    }
}

/// Fractions of four class groups in each image quadrant.
pub fn composition_features(map: &ClassMap) -> [f32; FEATURE_DIM] {
    let group = |c: u8| match c {
        2 | 8 => 0,
        3 | 4 => 1,
        5 | 6 => 2,
        _ => 3,
    };
    let (w, h) = (map.width() as usize, map.height() as usize);
    let mut counts = [0u64; FEATURE_DIM];
    let mut totals = [0u64; 4];
    for (i, &c) in map.as_raw().iter().enumerate() {
        let (x, y) = (i % w, i / w);
        let q = usize::from(x >= w / 2) + 2 * usize::from(y >= h / 2);
        counts[q * 4 + group(c)] += 1;
        totals[q] += 1;
    }
    let mut f = [0f32; FEATURE_DIM];
    for k in 0..FEATURE_DIM {
        f[k] = (counts[k] as f64 / totals[k / 4].max(1) as f64) as f32;
    }
    f
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn add_noise(
    truth: &ClassMap,
    sections: &SectionMask,
    rho: f64,
    rng: &mut ChaCha8Rng,
) -> (ClassMap, Vec<u64>) {
    let n = sections.n_sections() as usize;
    let sizes = sections.section_sizes();
    let mut labels = truth.as_raw().to_vec();
    let mut flipped: Vec<Vec<usize>> = vec![Vec::new(); n];
    if rho > 0.0 {
        for (i, l) in labels.iter_mut().enumerate() {
            if rng.random_bool(rho) {
                let other = rng.random_range(0..NUM_CLASSES as u8 - 1);
                *l = if other >= *l { other + 1 } else { other };
                flipped[usize::from(sections.as_raw()[i])].push(i);
            }
        }
    }
    // keep flips a strict minority of each section
    for (s, f) in flipped.iter_mut().enumerate() {
        while 2 * f.len() as u64 >= sizes[s] && !f.is_empty() {
            let k = rng.random_range(0..f.len());
            let i = f.swap_remove(k);
            labels[i] = truth.as_raw()[i];
        }
    }
    let counts = flipped.iter().map(|f| f.len() as u64).collect();
    (
        ClassMap::from_raw(truth.width(), truth.height(), labels).expect("same dims as truth"),
        counts,
    )
}

/// Truth map for frame `t` of a shot; `attempt` perturbs the pose when the
/// first attempt duplicates an earlier frame at the check grid.
fn truth_map(spec: &SyntheticSpec, blobs: &[Blob], t: usize, attempt: u64) -> ClassMap {
    let extra = attempt as f64 * 0.05;
    let mut labels = paint(spec, blobs, t as f64 + attempt as f64 * 0.37, extra);
    let min_pixels = (spec.min_component * f64::from(spec.width) * f64::from(spec.height)).ceil() as u64;
    absorb_small_components(spec.width, spec.height, &mut labels, min_pixels);
    ClassMap::from_raw(spec.width, spec.height, labels).expect("labels sized to canvas")
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus, CorpusError> {
    generate_synthetic_with(Exec::default(), spec)
}

/// Builds the whole corpus in memory. The output depends only on `spec`.
pub fn generate_synthetic_with(exec: Exec, spec: &SyntheticSpec) -> Result<SyntheticCorpus, CorpusError> {
    spec.validate()?;
    let mut plan_rng = stream_rng(spec.seed, 0);
    let mut shots = Vec::new();
    let mut shot_starts = Vec::new();
    let mut start = 0;
    while start < spec.frames {
        let len = plan_rng.random_range(spec.shot_len.0..=spec.shot_len.1);
        shot_starts.push(start);
        shots.push((start, plan_shot(&mut plan_rng, spec)));
        start += len;
    }
    let shot_of = |i: usize| shot_starts.partition_point(|&s| s <= i) - 1;

    let mut truths: Vec<ClassMap> =
        exec.map_range(spec.frames, |i| truth_map(spec, &shots[shot_of(i)].1, i - shot_starts[shot_of(i)], 0));

    // Pairwise distinct at the search grid: re-pose duplicates in order.
    let mut seen = HashSet::new();
    for i in 0..spec.frames {
        let s = shot_of(i);
        let mut attempt = 0;
        loop {
            let key = truths[i].downsample(GRID_CHECK.0, GRID_CHECK.1)?.into_raw();
            if seen.insert(key) {
                break;
            }
            attempt += 1;
            if attempt > MAX_RETRIES {
                return Err(CorpusError::InvalidSpec(format!(
                    "could not make frame {i} distinct from earlier frames"
                )));
            }
            truths[i] = truth_map(spec, &shots[s].1, i - shot_starts[s], attempt);
        }
    }

    let frames: Vec<Result<SyntheticFrame, CorpusError>> = exec.map_range(spec.frames, |i| {
        let truth = truths[i].clone();
        let truth_sections = label_components(&truth)?;
        let mut rng = stream_rng(spec.seed, 1 + i as u64);
        let (noisy, flips) = add_noise(&truth, &truth_sections, spec.noise, &mut rng);
        Ok(SyntheticFrame {
            frame: FrameRef::new(spec.video_id.clone(), i as u64, i as u64 * 1000),
            shot: shot_of(i),
            truth,
            truth_sections,
            noisy,
            flips,
        })
    });
    let frames = frames.into_iter().collect::<Result<Vec<_>, _>>()?;

    let normal = Normal::new(0.0, 0.01).expect("valid sigma");
    let mut features = Vec::with_capacity(spec.frames * FEATURE_DIM);
    for f in &frames {
        let mut rng = stream_rng(spec.seed, 1 << 40 | f.frame.frame_index);
        let base = composition_features(&f.truth);
        features.extend(base.iter().map(|&v| v + normal.sample(&mut rng) as f32));
    }

    Ok(SyntheticCorpus {
        spec: spec.clone(),
        frames,
        features,
        shot_starts,
    })
}
