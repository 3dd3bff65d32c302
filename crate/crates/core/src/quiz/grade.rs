//! Grading for multiple-choice and draw-a-path questions.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{ExtractQuestion, McqQuestion, PathQuestion, QuizError, RegionFeedback};
use crate::geometry::Point;

pub const RESAMPLE_POINTS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqGrade {
    pub correct: bool,
    /// Feedback of every chosen option, in option order.
    pub feedback: Vec<RegionFeedback>,
}

pub fn grade_mcq(q: &McqQuestion, chosen: &BTreeSet<usize>) -> Result<McqGrade, QuizError> {
    if let Some(&bad) = chosen.iter().find(|&&c| c >= q.options.len()) {
        return Err(QuizError::UnknownOption(bad));
    }
    Ok(McqGrade {
        correct: *chosen == q.correct,
        feedback: chosen
            .iter()
            .flat_map(|&c| q.options[c].feedback.iter().cloned())
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractGrade {
    pub tool_correct: bool,
    /// Whether the drop point lies in the answer placement; absent when the
    /// student did not place the tool.
    pub placement_correct: Option<bool>,
    pub correct: bool,
}

fn inside_ring(ring: &[Point], p: Point) -> bool {
    let mut inside = false;
    for i in 0..ring.len() {
        let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
        if (a.y > p.y) != (b.y > p.y) && p.x < a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x) {
            inside = !inside;
        }
    }
    inside
}

pub fn grade_extract(q: &ExtractQuestion, option: usize, drop: Option<Point>) -> Result<ExtractGrade, QuizError> {
    if option >= q.options.len() {
        return Err(QuizError::UnknownOption(option));
    }
    let tool_correct = q.answer_key.acceptable_options.contains(&option);
    let placement_correct = drop.map(|p| inside_ring(&q.answer_key.placement, p));
    Ok(ExtractGrade {
        tool_correct,
        placement_correct,
        correct: tool_correct && placement_correct != Some(false),
    })
}

/// `n` points spaced evenly by arc length, as offsets from the path's first
/// point. Working in offsets keeps a rigid translation exact.
fn resample_offsets(path: &[Point], n: usize) -> Vec<(f64, f64)> {
    let o = path[0];
    let rel: Vec<(f64, f64)> = path.iter().map(|p| (p.x - o.x, p.y - o.y)).collect();
    let mut cum = vec![0.0];
    for w in rel.windows(2) {
        let seg = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
        cum.push(cum.last().unwrap() + seg);
    }
    let total = *cum.last().unwrap();
    if total == 0.0 {
        return vec![(0.0, 0.0); n];
    }
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        if k == n - 1 {
            out.push(*rel.last().unwrap());
            break;
        }
        let s = total * k as f64 / (n - 1) as f64;
        while seg + 1 < cum.len() - 1 && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
        let (a, b) = (rel[seg], rel[seg + 1]);
        out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
    }
    out
}

/// Arc-length resampling to `n` points (`n >= 2`).
pub fn resample_path(path: &[Point], n: usize) -> Vec<Point> {
    if path.is_empty() {
        return Vec::new();
    }
    let o = path[0];
    resample_offsets(path, n.max(2))
        .into_iter()
        .map(|(dx, dy)| Point::new(o.x + dx, o.y + dy))
        .collect()
}

fn frechet(
    oa: Point,
    a: &[(f64, f64)],
    ob: Point,
    b: &[(f64, f64)],
) -> f64 {
    let (odx, ody) = (oa.x - ob.x, oa.y - ob.y);
    let d = |i: usize, j: usize| (odx + (a[i].0 - b[j].0)).hypot(ody + (a[i].1 - b[j].1));
    let (n, m) = (a.len(), b.len());
    let mut ca = vec![0.0f64; n * m];
    for i in 0..n {
        for j in 0..m {
            let here = d(i, j);
            let prev = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => ca[j - 1],
                (_, 0) => ca[(i - 1) * m],
                _ => ca[(i - 1) * m + j]
                    .min(ca[(i - 1) * m + j - 1])
                    .min(ca[i * m + j - 1]),
            };
            ca[i * m + j] = here.max(prev);
        }
    }
    ca[n * m - 1]
}

/// Discrete Fréchet distance between the resampled paths, taking the better
/// of the two drawing directions of `b`.
pub fn path_distance(a: &[Point], b: &[Point]) -> Result<f64, QuizError> {
    for p in [a, b] {
        if p.len() < 2 {
            return Err(QuizError::PathTooShort(p.len()));
        }
    }
    let ra = resample_offsets(a, RESAMPLE_POINTS);
    let rb = resample_offsets(b, RESAMPLE_POINTS);
    let fwd = frechet(a[0], &ra, b[0], &rb);
    // Resample the reversed input rather than reversing the samples, so a
    // path drawn backwards matches exactly.
    let b_rev: Vec<Point> = b.iter().rev().copied().collect();
    let back = frechet(a[0], &ra, b_rev[0], &resample_offsets(&b_rev, RESAMPLE_POINTS));
    Ok(fwd.min(back))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathGrade {
    pub distance: f64,
    pub score: f64,
    pub pass: bool,
}

/// Passes when the distance is within tolerance; the score falls linearly
/// to 0 at twice the tolerance.
pub fn grade_path(q: &PathQuestion, student: &[Point]) -> Result<PathGrade, QuizError> {
    if !(q.tolerance.is_finite() && q.tolerance > 0.0) {
        return Err(QuizError::InvalidTolerance);
    }
    let distance = path_distance(&q.author_path, student)?;
    Ok(PathGrade {
        distance,
        score: (1.0 - distance / (2.0 * q.tolerance)).max(0.0),
        pass: distance <= q.tolerance,
    })
}
