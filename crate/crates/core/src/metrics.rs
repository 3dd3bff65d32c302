//! Dice coefficient per class, pooled over frames.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::scene::{ClassId, ClassMap, NUM_CLASSES};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("dimension mismatch in pair {pair}: {pred:?} vs {truth:?}")]
    DimensionMismatch {
        pair: usize,
        pred: (u32, u32),
        truth: (u32, u32),
    },
    #[error("{pred} predicted frames but {truth} ground-truth frames")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("no frames to evaluate")]
    Empty,
}

/// Pixel counts for one class: predicted, true, and both.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub pred: u64,
    pub truth: u64,
    pub both: u64,
}

impl ClassCounts {
    pub fn dice(&self) -> Option<f64> {
        let denom = self.pred + self.truth;
        (denom > 0).then(|| 2.0 * self.both as f64 / denom as f64)
    }

    fn add(&mut self, o: &ClassCounts) {
        self.pred += o.pred;
        self.truth += o.truth;
        self.both += o.both;
    }
}

pub fn class_counts(
    pred: &ClassMap,
    truth: &ClassMap,
) -> Result<[ClassCounts; NUM_CLASSES], MetricsError> {
    if pred.dims() != truth.dims() {
        return Err(MetricsError::DimensionMismatch {
            pair: 0,
            pred: pred.dims(),
            truth: truth.dims(),
        });
    }
    let mut c = [ClassCounts::default(); NUM_CLASSES];
    for (&p, &t) in pred.as_raw().iter().zip(truth.as_raw()) {
        c[usize::from(p)].pred += 1;
        c[usize::from(t)].truth += 1;
        if p == t {
            c[usize::from(p)].both += 1;
        }
    }
    Ok(c)
}

/// `2|P∩T| / (|P| + |T|)`, or `None` when the class is in neither map.
pub fn dice(pred: &ClassMap, truth: &ClassMap, class: ClassId) -> Result<Option<f64>, MetricsError> {
    Ok(class_counts(pred, truth)?[class.index()].dice())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDice {
    pub class: ClassId,
    pub name: String,
    pub dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceReport {
    /// Always `"pooled"`: counts are summed over frames before dividing.
    pub aggregation: String,
    pub frames: usize,
    pub per_class: Vec<ClassDice>,
    /// Mean over classes present in either prediction or truth.
    pub mean: f64,
    pub excluded: Vec<ClassId>,
}

impl DiceReport {
    pub fn from_counts(frames: usize, counts: &[ClassCounts; NUM_CLASSES]) -> DiceReport {
        let per_class: Vec<ClassDice> = ClassId::ALL
            .iter()
            .map(|&c| ClassDice {
                class: c,
                name: c.name().to_string(),
                dice: counts[c.index()].dice(),
            })
            .collect();
        let present: Vec<f64> = per_class.iter().filter_map(|c| c.dice).collect();
        let mean = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        DiceReport {
            aggregation: "pooled".into(),
            frames,
            excluded: per_class
                .iter()
                .filter(|c| c.dice.is_none())
                .map(|c| c.class)
                .collect(),
            per_class,
            mean,
        }
    }

    pub fn dice(&self, class: ClassId) -> Option<f64> {
        self.per_class[class.index()].dice
    }

    /// Plain-text table in class order, two decimals.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Dice (pooled over {} frames)", self.frames);
        let _ = writeln!(s, "{:<18} {:>6}", "Class", "Dice");
        for c in &self.per_class {
            match c.dice {
                Some(d) => {
                    let _ = writeln!(s, "{:<18} {:>6.2}", c.name, d);
                }
                None => {
                    let _ = writeln!(s, "{:<18} {:>6}", c.name, "-");
                }
            }
        }
        let _ = writeln!(s, "{:<18} {:>6.2}", "Mean", self.mean);
        s
    }
}

pub fn dice_report(pred: &[ClassMap], truth: &[ClassMap]) -> Result<DiceReport, MetricsError> {
    dice_report_with(Exec::default(), pred, truth)
}

pub fn dice_report_with(
    exec: Exec,
    pred: &[ClassMap],
    truth: &[ClassMap],
) -> Result<DiceReport, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    let per_frame = exec.map_range(pred.len(), |i| {
        class_counts(&pred[i], &truth[i]).map_err(|e| match e {
            MetricsError::DimensionMismatch { pred, truth, .. } => {
                MetricsError::DimensionMismatch { pair: i, pred, truth }
            }
            e => e,
        })
    });
    let mut total = [ClassCounts::default(); NUM_CLASSES];
    for counts in per_frame {
        for (t, c) in total.iter_mut().zip(counts?.iter()) {
            t.add(c);
        }
    }
    Ok(DiceReport::from_counts(pred.len(), &total))
}
