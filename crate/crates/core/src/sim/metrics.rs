//! Estimation, prediction, interval and selection metrics.

use serde::{Deserialize, Serialize};

use crate::error::{CometError, Result};
use crate::posterior::quantile;

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(CometError::DimensionMismatch(format!("{what}: {a} vs {b}")))
    }
}

/// `(‖B̂ - B‖_F² / p*)^{1/2}` on flattened tensors.
pub fn rmse(b_hat: &[f64], b_true: &[f64]) -> Result<f64> {
    same_len(b_hat.len(), b_true.len(), "rmse")?;
    let ss: f64 = b_hat.iter().zip(b_true).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((ss / b_true.len() as f64).sqrt())
}

/// Mean over subjects of the within-subject mean squared error, square
/// rooted. Both arguments are indexed `[subject][observation]`.
pub fn rmspe(preds: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    same_len(preds.len(), truth.len(), "rmspe subjects")?;
    if truth.is_empty() {
        return Err(CometError::DimensionMismatch("rmspe of no subjects".into()));
    }
    let mut acc = 0.0;
    for (p, y) in preds.iter().zip(truth) {
        same_len(p.len(), y.len(), "rmspe observations")?;
        let ss: f64 = p.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
        acc += ss / y.len() as f64;
    }
    Ok((acc / truth.len() as f64).sqrt())
}

/// Fraction of targets inside their interval and the mean interval width.
pub fn coverage_width(intervals: &[(f64, f64)], targets: &[f64]) -> Result<(f64, f64)> {
    same_len(intervals.len(), targets.len(), "coverage")?;
    if targets.is_empty() {
        return Err(CometError::DimensionMismatch("coverage of no targets".into()));
    }
    let n = targets.len() as f64;
    let inside = intervals
        .iter()
        .zip(targets)
        .filter(|((lo, hi), t)| lo <= *t && *t <= hi)
        .count();
    let width: f64 = intervals.iter().map(|(lo, hi)| hi - lo).sum();
    Ok((inside as f64 / n, width / n))
}

/// F1 score of a selected support against the true one; 1 when both are
/// empty.
pub fn f1(selected: &[bool], truth: &[bool]) -> Result<f64> {
    same_len(selected.len(), truth.len(), "f1")?;
    let tp = selected.iter().zip(truth).filter(|(s, t)| **s && **t).count() as f64;
    let fp = selected.iter().zip(truth).filter(|(s, t)| **s && !**t).count() as f64;
    let fne = selected.iter().zip(truth).filter(|(s, t)| !**s && **t).count() as f64;
    if tp + fp + fne == 0.0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp / (2.0 * tp + fp + fne))
}

/// Median and quartile deviation `(Q3 - Q1) / 2` of a column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub qd: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(Summary {
        median: quantile(&v, 0.5),
        qd: (quantile(&v, 0.75) - quantile(&v, 0.25)) / 2.0,
        n: v.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmspe(&[vec![1.0, 2.0]], &[vec![1.0, 2.0]]).unwrap(), 0.0);
        assert_eq!(rmspe(&[vec![1.0, -1.0]], &[vec![0.0, 0.0]]).unwrap(), 1.0);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rmspe_weights_subjects_equally() {
        // (1/2)(4/1 + (0 + 0)/2) = 2
        let r = rmspe(&[vec![2.0], vec![0.0, 0.0]], &[vec![0.0], vec![0.0, 0.0]]).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn coverage_and_f1() {
        let (c, w) = coverage_width(&[(0.0, 1.0), (0.0, 3.0)], &[0.5, 4.0]).unwrap();
        assert_eq!((c, w), (0.5, 2.0));
        assert_eq!(f1(&[true, false, true], &[true, true, false]).unwrap(), 0.5);
        assert_eq!(f1(&[false; 3], &[false; 3]).unwrap(), 1.0);
    }

    #[test]
    fn summary_matches_sorted_oracle() {
        let s = summarize(&[5.0, 1.0, 4.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.median, s.qd, s.n), (3.0, 1.0, 5));
        assert!(summarize(&[f64::NAN]).is_none());
    }
}
