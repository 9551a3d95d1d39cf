//! Classification metrics over the eight levels.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::error::{Error, Result};
use crate::labels::{Aspect, CefrScale, Level, LEVEL_NAMES, NUM_LEVELS};
use crate::model::AspectModel;
use crate::numerics::Real;

/// Counts indexed `[true][predicted]`.
pub type Confusion = [[u64; NUM_LEVELS]; NUM_LEVELS];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task_id: String,
    pub aspect: Aspect,
    pub n: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: [f64; NUM_LEVELS],
    pub confusion: Confusion,
    /// Mean cumulative margin distance between truth and prediction.
    pub expected_ordinal_error: f64,
    /// Fraction of instances predicted two or more levels away.
    pub far_error_rate: f64,
}

/// Index of the largest logit; ties go to the lower level.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

pub fn confusion_from_pairs(pairs: impl IntoIterator<Item = (Level, Level)>) -> Confusion {
    let mut c = [[0; NUM_LEVELS]; NUM_LEVELS];
    for (t, p) in pairs {
        c[t.index()][p.index()] += 1;
    }
    c
}

/// Per-class F1; a class with no true and no predicted instances scores 0.
pub fn per_class_f1(c: &Confusion) -> [f64; NUM_LEVELS] {
    std::array::from_fn(|k| {
        let tp = c[k][k] as f64;
        let actual: u64 = c[k].iter().sum();
        let predicted: u64 = c.iter().map(|row| row[k]).sum();
        let denom = (actual + predicted) as f64;
        if denom == 0.0 {
            0.0
        } else {
            2.0 * tp / denom
        }
    })
}

pub fn total(c: &Confusion) -> u64 {
    c.iter().flatten().sum()
}

pub fn expected_ordinal_error_of(c: &Confusion, scale: &CefrScale) -> f64 {
    let d = scale.distance_table();
    let mut sum = 0.0;
    for (t, row) in c.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            sum += n as f64 * d[t][p];
        }
    }
    sum / total(c) as f64
}

/// Share of instances whose prediction is at least `min_gap` levels off.
pub fn far_error_rate(c: &Confusion, min_gap: usize) -> f64 {
    let mut far = 0;
    for (t, row) in c.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            if t.abs_diff(p) >= min_gap {
                far += n;
            }
        }
    }
    far as f64 / total(c) as f64
}

pub fn expected_ordinal_error(report: &EvalReport, scale: &CefrScale) -> f64 {
    expected_ordinal_error_of(&report.confusion, scale)
}

impl EvalReport {
    pub fn from_confusion(
        confusion: Confusion,
        task_id: String,
        aspect: Aspect,
        scale: &CefrScale,
    ) -> Result<Self> {
        let n = total(&confusion);
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let correct: u64 = (0..NUM_LEVELS).map(|k| confusion[k][k]).sum();
        let per_class_f1 = per_class_f1(&confusion);
        Ok(EvalReport {
            task_id,
            aspect,
            n,
            accuracy: correct as f64 / n as f64,
            macro_f1: per_class_f1.iter().sum::<f64>() / NUM_LEVELS as f64,
            per_class_f1,
            confusion,
            expected_ordinal_error: expected_ordinal_error_of(&confusion, scale),
            far_error_rate: far_error_rate(&confusion, 2),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_confusion_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "true\\pred,{}", LEVEL_NAMES.join(","))?;
        for (name, row) in LEVEL_NAMES.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(w, "{name},{}", cells.join(","))?;
        }
        Ok(())
    }

    /// Confusion matrix as right-aligned text, rows true, columns predicted.
    pub fn render_confusion(&self) -> String {
        let width = self
            .confusion
            .iter()
            .flatten()
            .map(|n| n.to_string().len())
            .chain(LEVEL_NAMES.iter().map(|s| s.len()))
            .max()
            .unwrap_or(1);
        let mut out = format!("{:>width$}", "true\\pred", width = 9.max(width));
        for name in LEVEL_NAMES {
            out.push_str(&format!(" {name:>width$}"));
        }
        out.push('\n');
        for (name, row) in LEVEL_NAMES.iter().zip(&self.confusion) {
            out.push_str(&format!("{:>width$}", name, width = 9.max(width)));
            for n in row {
                out.push_str(&format!(" {n:>width$}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Task ids in `data`, joined with `+` when more than one.
pub fn task_label(data: &[Instance]) -> String {
    let ids: BTreeSet<&str> = data.iter().map(|i| i.task_id.as_str()).collect();
    ids.into_iter().collect::<Vec<_>>().join("+")
}

pub fn evaluate<T: Real>(
    model: &AspectModel<T>,
    data: &[Instance],
    aspect: Aspect,
    scale: &CefrScale,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut pairs = Vec::with_capacity(data.len());
    for inst in data {
        let z = model.predict(inst)?;
        pairs.push((inst.label(aspect)?, Level::from_index(argmax(&z))));
    }
    EvalReport::from_confusion(confusion_from_pairs(pairs), task_label(data), aspect, scale)
}
