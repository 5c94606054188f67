//! Region-similarity metrics over per-frame predictions.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Thresholds reported as P@X.
pub const P_THRESHOLDS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

/// Intersection and union pixel counts of one annotated frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameScore {
    pub inter: u64,
    pub union: u64,
}

impl FrameScore {
    pub fn new(pred: &[bool], gt: &[bool]) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::Dimension(format!("iou: prediction has {} pixels, ground truth {}", pred.len(), gt.len())));
        }
        let mut inter = 0;
        let mut union = 0;
        for (&p, &g) in pred.iter().zip(gt) {
            inter += u64::from(p && g);
            union += u64::from(p || g);
        }
        Ok(FrameScore { inter, union })
    }

    /// `1` when both masks are empty.
    pub fn iou(&self) -> f64 {
        if self.union == 0 {
            1.0
        } else {
            self.inter as f64 / self.union as f64
        }
    }
}

pub fn iou(pred: &[bool], gt: &[bool]) -> Result<f64> {
    Ok(FrameScore::new(pred, gt)?.iou())
}

fn nonempty<T>(xs: &[T]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Usage("metrics need at least one sample".into()));
    }
    Ok(())
}

/// `Σ ∩ / Σ ∪`; `1` if every frame has an empty union.
pub fn overall_iou(samples: &[FrameScore]) -> Result<f64> {
    nonempty(samples)?;
    let inter: u64 = samples.iter().map(|s| s.inter).sum();
    let union: u64 = samples.iter().map(|s| s.union).sum();
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

pub fn mean_iou(samples: &[FrameScore]) -> Result<f64> {
    nonempty(samples)?;
    Ok(samples.iter().map(FrameScore::iou).sum::<f64>() / samples.len() as f64)
}

/// Fraction of IoUs `≥ tau`.
pub fn precision_at(ious: &[f64], tau: f64) -> Result<f64> {
    nonempty(ious)?;
    Ok(ious.iter().filter(|&&v| v >= tau).count() as f64 / ious.len() as f64)
}

/// The ten thresholds `0.50, 0.55, …, 0.95`.
pub fn map_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Mean of [`precision_at`] over [`map_thresholds`].
pub fn map_50_95(ious: &[f64]) -> Result<f64> {
    nonempty(ious)?;
    let passed: usize = map_thresholds().iter().map(|&t| ious.iter().filter(|&&v| v >= t).count()).sum();
    Ok(passed as f64 / (10 * ious.len()) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub overall_iou: f64,
    pub mean_iou: f64,
    /// `(threshold, fraction)` for [`P_THRESHOLDS`].
    pub p_at: Vec<(f64, f64)>,
    pub map_50_95: f64,
    pub count: usize,
}

impl MetricsReport {
    pub fn from_scores(samples: &[FrameScore]) -> Result<Self> {
        let ious: Vec<f64> = samples.iter().map(FrameScore::iou).collect();
        Ok(MetricsReport {
            overall_iou: overall_iou(samples)?,
            mean_iou: mean_iou(samples)?,
            p_at: P_THRESHOLDS.iter().map(|&t| Ok((t, precision_at(&ious, t)?))).collect::<Result<_>>()?,
            map_50_95: map_50_95(&ious)?,
            count: samples.len(),
        })
    }

    /// `key = value` lines.
    pub fn key_values(&self) -> String {
        let mut s = String::new();
        for (t, p) in &self.p_at {
            writeln!(s, "p_at_{:.1} = {p:.6}", t).unwrap();
        }
        writeln!(s, "map_50_95 = {:.6}", self.map_50_95).unwrap();
        writeln!(s, "overall_iou = {:.6}", self.overall_iou).unwrap();
        writeln!(s, "mean_iou = {:.6}", self.mean_iou).unwrap();
        writeln!(s, "samples = {}", self.count).unwrap();
        s
    }

    /// Aligned one-row table with a header.
    pub fn table(&self) -> String {
        let mut head = String::new();
        let mut row = String::new();
        for (t, p) in &self.p_at {
            write!(head, "{:>8}", format!("P@{t:.1}")).unwrap();
            write!(row, "{:>8.4}", p).unwrap();
        }
        for (name, v) in [("mAP", self.map_50_95), ("Overall", self.overall_iou), ("Mean", self.mean_iou)] {
            write!(head, "{name:>9}").unwrap();
            write!(row, "{v:>9.4}").unwrap();
        }
        format!("{head}\n{row}\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_edge_cases() {
        assert_eq!(iou(&[false; 4], &[false; 4]).unwrap(), 1.0);
        assert_eq!(iou(&[true, false], &[false, false]).unwrap(), 0.0);
        assert!(matches!(iou(&[true], &[true, false]), Err(Error::Dimension(_))));
    }

    #[test]
    fn empty_sets_are_usage_errors() {
        assert!(matches!(overall_iou(&[]), Err(Error::Usage(_))));
        assert!(matches!(map_50_95(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn thresholds_are_exact_decimals() {
        let t = map_thresholds();
        assert_eq!(t[0], 0.5);
        assert_eq!(t[9], 0.95);
        assert_eq!(t[4], 0.7);
    }
}
