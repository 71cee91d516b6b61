//! Segmentation and grounding metrics: per-pair IoU, cumulative IoU over a
//! corpus, mean IoU variants with the no-target convention, and box
//! accuracy at the 0.5 threshold.
//!
//! No-target convention: an absent (or all-zero) ground truth scored against
//! an empty prediction counts 1, against a non-empty prediction counts 0.
//! A targeted pair predicted empty scores IoU 0; reports flag the convention.

use crate::raster::{BinaryGrid, BoxBins};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("grids disagree on dimensions: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("metric needs at least one pair")]
    EmptyInput,
    #[error("box lists differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no targeted pairs to average")]
    NoTargetedPairs,
}

/// One evaluation pair; `None` marks a no-target side.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub pred: Option<BinaryGrid>,
    pub gt: Option<BinaryGrid>,
}

impl EvalPair {
    pub fn new(pred: Option<BinaryGrid>, gt: Option<BinaryGrid>) -> Self {
        EvalPair { pred, gt }
    }

    fn pred_empty(&self) -> bool {
        self.pred.as_ref().is_none_or(|g| g.count_ones() == 0)
    }

    fn gt_empty(&self) -> bool {
        self.gt.as_ref().is_none_or(|g| g.count_ones() == 0)
    }

    /// Intersection and union bit counts; an absent side is an empty mask.
    fn overlap(&self) -> Result<(u64, u64), MetricsError> {
        match (&self.pred, &self.gt) {
            (Some(a), Some(b)) => {
                check_dims(a, b)?;
                let mut inter = 0u64;
                let mut union = 0u64;
                for (&x, &y) in a.bits().iter().zip(b.bits()) {
                    inter += (x && y) as u64;
                    union += (x || y) as u64;
                }
                Ok((inter, union))
            }
            (Some(a), None) => Ok((0, a.count_ones() as u64)),
            (None, Some(b)) => Ok((0, b.count_ones() as u64)),
            (None, None) => Ok((0, 0)),
        }
    }
}

fn check_dims(a: &BinaryGrid, b: &BinaryGrid) -> Result<(), MetricsError> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(MetricsError::DimensionMismatch(
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols(),
        ));
    }
    Ok(())
}

/// Intersection over union of two same-sized grids; two masks with no set
/// bits count as a perfect match.
pub fn iou(a: &BinaryGrid, b: &BinaryGrid) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x && y) as u64;
        union += (x || y) as u64;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Cumulative IoU: summed intersections over summed unions. No-target sides
/// contribute zero to both sums; an all-empty corpus counts as perfect.
pub fn ciou(pairs: &[EvalPair]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for pair in pairs {
        let (i, u) = pair.overlap()?;
        inter += i;
        union += u;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Per-pair score under the generalized convention: a no-target ground
/// truth scores 1 against an empty prediction and 0 otherwise; targeted
/// pairs score their IoU.
pub fn pair_score(pair: &EvalPair) -> Result<f64, MetricsError> {
    if pair.gt_empty() {
        return Ok(if pair.pred_empty() { 1.0 } else { 0.0 });
    }
    let (inter, union) = pair.overlap()?;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Mean per-pair score including no-target pairs (generalized IoU).
pub fn giou(pairs: &[EvalPair]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut sum = 0.0;
    for pair in pairs {
        sum += pair_score(pair)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Mean IoU over targeted pairs only.
pub fn miou(pairs: &[EvalPair]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for pair in pairs {
        if pair.gt_empty() {
            continue;
        }
        sum += pair_score(pair)?;
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::NoTargetedPairs);
    }
    Ok(sum / n as f64)
}

/// IoU of two boxes on the inclusive bin geometry (a point box has area 1).
pub fn box_iou(a: &BoxBins, b: &BoxBins) -> f64 {
    let ix1 = a.x1.max(b.x1);
    let iy1 = a.y1.max(b.y1);
    let ix2 = a.x2.min(b.x2);
    let iy2 = a.y2.min(b.y2);
    let inter = if ix1 <= ix2 && iy1 <= iy2 {
        (ix2 - ix1 + 1) as u64 * (iy2 - iy1 + 1) as u64
    } else {
        0
    };
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Fraction of aligned box pairs with IoU at least 0.5.
pub fn acc_at_05(pred: &[BoxBins], gt: &[BoxBins]) -> Result<f64, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let hits = pred
        .iter()
        .zip(gt)
        .filter(|(p, g)| box_iou(p, g) >= 0.5)
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Aggregate report over a corpus of pairs (and optionally aligned boxes).
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub pairs: usize,
    pub targeted: usize,
    pub no_target_correct: usize,
    pub no_target_false_negative: usize,
    /// Targeted pairs the prediction left empty; they score IoU 0.
    pub targeted_predicted_empty: usize,
    pub ciou: f64,
    pub giou: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub miou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_at_05: Option<f64>,
    /// Per-pair scores under the generalized convention, in input order.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_pair: Option<Vec<f64>>,
    pub convention: &'static str,
}

const CONVENTION: &str =
    "no-target: correct-empty=1, false-negative=0; targeted pairs predicted empty score 0";

/// Evaluate a corpus. `boxes`, when given, must align one predicted and one
/// ground-truth box per sample. `per_pair` controls the per-sample array.
pub fn evaluate(
    pairs: &[EvalPair],
    boxes: Option<(&[BoxBins], &[BoxBins])>,
    per_pair: bool,
) -> Result<EvalReport, MetricsError> {
    let ciou = ciou(pairs)?;
    let giou = giou(pairs)?;
    let miou = match miou(pairs) {
        Ok(v) => Some(v),
        Err(MetricsError::NoTargetedPairs) => None,
        Err(e) => return Err(e),
    };
    let acc = match boxes {
        Some((p, g)) => Some(acc_at_05(p, g)?),
        None => None,
    };

    let mut scores = Vec::with_capacity(pairs.len());
    let mut targeted = 0usize;
    let mut nt_correct = 0usize;
    let mut nt_false_negative = 0usize;
    let mut targeted_pred_empty = 0usize;
    for pair in pairs {
        scores.push(pair_score(pair)?);
        if pair.gt_empty() {
            if pair.pred_empty() {
                nt_correct += 1;
            } else {
                nt_false_negative += 1;
            }
        } else {
            targeted += 1;
            if pair.pred_empty() {
                targeted_pred_empty += 1;
            }
        }
    }

    Ok(EvalReport {
        pairs: pairs.len(),
        targeted,
        no_target_correct: nt_correct,
        no_target_false_negative: nt_false_negative,
        targeted_predicted_empty: targeted_pred_empty,
        ciou,
        giou,
        miou,
        acc_at_05: acc,
        per_pair: per_pair.then_some(scores),
        convention: CONVENTION,
    })
}

impl EvalReport {
    /// One-line CSV summary with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "pairs,targeted,no_target_correct,no_target_false_negative,ciou,giou,miou,acc_at_05\n",
        );
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{},{}\n",
            self.pairs,
            self.targeted,
            self.no_target_correct,
            self.no_target_false_negative,
            self.ciou,
            self.giou,
            opt(self.miou),
            opt(self.acc_at_05),
        ));
        out
    }
}
