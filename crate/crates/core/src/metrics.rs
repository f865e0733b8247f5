//! Pixel-space error metrics and per-image evaluation reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::degrade::{Degradation, DegradationSpec, Mask};
use crate::error::{LcmError, Result};
use crate::losses::{lap_l1, PyramidSpec};
use crate::restore::RestoreMode;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Known,
    Hole,
    Full,
}

/// Mean squared difference over the pixels of `region`, across all channels.
pub fn mse_region<T: Real>(x_hat: &Tensor<T>, x: &Tensor<T>, mask: &Mask, region: Region) -> Result<f64> {
    x_hat.expect_same_shape(x)?;
    let [n, c, h, w] = x.nchw()?;
    if mask.height() != h || mask.width() != w {
        return Err(LcmError::Shape(format!(
            "mask is {}×{} but images are {h}×{w}",
            mask.height(),
            mask.width()
        )));
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (i, (&a, &b)) in x_hat.data().iter().zip(x.data()).enumerate() {
        let p = i % (h * w);
        let selected = match region {
            Region::Full => true,
            Region::Known => mask.is_known(p / w, p % w),
            Region::Hole => !mask.is_known(p / w, p % w),
        };
        if selected {
            let d = a.to_f64().unwrap_or(f64::NAN) - b.to_f64().unwrap_or(f64::NAN);
            sum += d * d;
            count += 1;
        }
    }
    debug_assert!(count <= n * c * h * w);
    if count == 0 {
        return Err(LcmError::Contract(format!("{region:?} region is empty")));
    }
    Ok(sum / count as f64)
}

/// One evaluated restoration. Region columns not defined for the task
/// (no hole outside inpainting) are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub task: String,
    pub mode: String,
    pub mse_full: f64,
    pub mse_known: Option<f64>,
    pub mse_hole: Option<f64>,
    pub lap_l1: f64,
}

/// Column means over the rows that define them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mse_full: f64,
    pub mse_known: Option<f64>,
    pub mse_hole: Option<f64>,
    pub lap_l1: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean: Aggregate,
}

pub const CSV_HEADER: &str = "id,task,mode,mse_full,mse_known,mse_hole,lap_l1";

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values.flatten() {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let mean = if rows.is_empty() {
            Aggregate::default()
        } else {
            let k = rows.len() as f64;
            Aggregate {
                mse_full: rows.iter().map(|r| r.mse_full).sum::<f64>() / k,
                mse_known: mean_of(rows.iter().map(|r| r.mse_known)),
                mse_hole: mean_of(rows.iter().map(|r| r.mse_hole)),
                lap_l1: rows.iter().map(|r| r.lap_l1).sum::<f64>() / k,
            }
        };
        EvalReport { rows, mean }
    }

    /// Rows plus a final `mean` row; undefined cells are empty.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.id,
                r.task,
                r.mode,
                r.mse_full,
                cell(r.mse_known),
                cell(r.mse_hole),
                r.lap_l1
            );
        }
        if !self.rows.is_empty() {
            let m = &self.mean;
            let _ = writeln!(
                out,
                "mean,,,{},{},{},{}",
                m.mse_full,
                cell(m.mse_known),
                cell(m.mse_hole),
                m.lap_l1
            );
        }
        out
    }
}

/// A restored image together with what is needed to score it.
pub struct Scored<'a, T: Real> {
    pub id: &'a str,
    pub restored: &'a Tensor<T>,
    pub truth: &'a Tensor<T>,
    pub spec: &'a DegradationSpec,
    pub mode: Option<RestoreMode>,
}

/// Scores each restoration against its ground truth.
pub fn evaluate<T: Real>(items: &[Scored<'_, T>]) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(items.len());
    for it in items {
        let [_, _, h, w] = it.truth.nchw()?;
        let full = Mask::ones(h, w);
        let (known, hole) = match &it.spec.kind {
            Degradation::Inpaint(m) => (
                optional_region(it.restored, it.truth, m, Region::Known)?,
                optional_region(it.restored, it.truth, m, Region::Hole)?,
            ),
            _ => (None, None),
        };
        rows.push(EvalRow {
            id: it.id.to_string(),
            task: it.spec.kind.task_name().to_string(),
            mode: it.mode.map(|m| m.name().to_string()).unwrap_or_else(|| "-".into()),
            mse_full: mse_region(it.restored, it.truth, &full, Region::Full)?,
            mse_known: known,
            mse_hole: hole,
            lap_l1: lap_l1(it.restored, it.truth, &PyramidSpec::default_for(h, w))?
                .to_f64()
                .unwrap_or(f64::NAN),
        });
    }
    Ok(EvalReport::from_rows(rows))
}

/// Aligned-list form: errors when the three lists differ in length.
pub fn evaluate_lists<T: Real>(
    ids: &[String],
    restored: &[Tensor<T>],
    truth: &[Tensor<T>],
    specs: &[DegradationSpec],
    mode: Option<RestoreMode>,
) -> Result<EvalReport> {
    if restored.len() != truth.len() || restored.len() != specs.len() || ids.len() != truth.len() {
        return Err(LcmError::Contract(format!(
            "{} ids, {} restored images, {} ground-truth images and {} specs",
            ids.len(),
            restored.len(),
            truth.len(),
            specs.len()
        )));
    }
    let items: Vec<Scored<'_, T>> = (0..ids.len())
        .map(|i| Scored {
            id: &ids[i],
            restored: &restored[i],
            truth: &truth[i],
            spec: &specs[i],
            mode,
        })
        .collect();
    evaluate(&items)
}

fn optional_region<T: Real>(a: &Tensor<T>, b: &Tensor<T>, m: &Mask, r: Region) -> Result<Option<f64>> {
    let empty = match r {
        Region::Known => m.known_count() == 0,
        Region::Hole => m.missing_count() == 0,
        Region::Full => false,
    };
    if empty {
        Ok(None)
    } else {
        mse_region(a, b, m, r).map(Some)
    }
}
