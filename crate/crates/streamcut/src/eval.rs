//! Windowed precision-recall evaluation of changepoint detections.
//!
//! A detection is correct within window `delta` iff its stream has a true
//! changepoint and `|kappa_hat - kappa_star| <= delta`; detections on
//! no-change streams are never correct. The PR curve sweeps a threshold over
//! the distinct confidence values (ties processed together); recall is
//! measured against the number of streams with a true changepoint. AP is the
//! mean of max-to-the-right interpolated precision over the 11-point recall
//! grid `0.0, 0.1, ..., 1.0`, scaled to `[0, 100]`; mAP averages AP over the
//! requested windows.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{DetectionResult, GroundTruth};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("detection/truth stream mismatch: '{detection}' vs '{truth}'")]
    StreamMismatch { detection: String, truth: String },
    #[error("no stream in the truth set has a changepoint")]
    EmptyTruthSet,
    #[error("multiple detections for stream '{0}'")]
    DuplicateDetection(String),
    #[error("non-finite confidence for stream '{0}'")]
    NonFiniteConfidence(String),
    #[error("no evaluation windows given")]
    NoWindows,
}

/// One point of a precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint<T> {
    pub recall: T,
    pub precision: T,
}

/// Evaluation summary: the PR curve at the smallest requested window, AP per
/// window, and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport<T> {
    pub pr_points: Vec<PrPoint<T>>,
    pub ap_per_window: BTreeMap<u32, T>,
    pub map_value: T,
}

/// True iff the detection hits the true changepoint within `window`.
pub fn windowed_correct<T: Scalar>(
    detection: &DetectionResult<T>,
    truth: &GroundTruth,
    window: u32,
) -> Result<bool, EvalError> {
    if detection.stream_id != truth.stream_id {
        return Err(EvalError::StreamMismatch {
            detection: detection.stream_id.clone(),
            truth: truth.stream_id.clone(),
        });
    }
    Ok(match truth.kappa_star {
        Some(kappa_star) => detection.kappa_hat.abs_diff(kappa_star) <= window,
        None => false,
    })
}

/// Precision-recall curve for one detection set at one window size.
pub fn pr_curve<T: Scalar>(
    detections: &[DetectionResult<T>],
    truths: &[GroundTruth],
    window: u32,
) -> Result<Vec<PrPoint<T>>, EvalError> {
    let truth_by_id: BTreeMap<&str, &GroundTruth> =
        truths.iter().map(|t| (t.stream_id.as_str(), t)).collect();
    let num_positive = truths.iter().filter(|t| t.kappa_star.is_some()).count();
    if num_positive == 0 {
        return Err(EvalError::EmptyTruthSet);
    }

    let mut scored: Vec<(T, bool)> = Vec::with_capacity(detections.len());
    let mut seen = std::collections::BTreeSet::new();
    for det in detections {
        if !seen.insert(det.stream_id.as_str()) {
            return Err(EvalError::DuplicateDetection(det.stream_id.clone()));
        }
        let truth = truth_by_id.get(det.stream_id.as_str()).ok_or_else(|| {
            EvalError::StreamMismatch {
                detection: det.stream_id.clone(),
                truth: "<absent>".into(),
            }
        })?;
        if !det.confidence.is_finite() {
            return Err(EvalError::NonFiniteConfidence(det.stream_id.clone()));
        }
        scored.push((det.confidence, windowed_correct(det, truth, window)?));
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite confidences"));

    let denom = T::from_count(num_positive);
    let mut points = Vec::new();
    let mut fired = 0usize;
    let mut correct = 0usize;
    let mut i = 0usize;
    while i < scored.len() {
        // advance through the whole tie group before emitting a point
        let threshold = scored[i].0;
        while i < scored.len() && scored[i].0 == threshold {
            fired += 1;
            if scored[i].1 {
                correct += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            recall: T::from_count(correct) / denom,
            precision: T::from_count(correct) / T::from_count(fired),
        });
    }
    Ok(points)
}

/// Average precision over the 11-point recall grid, in `[0, 100]`.
///
/// Interpolated precision at recall `r` is the maximum precision among
/// points with recall at least `r`, or 0 when the curve never reaches `r`.
pub fn average_precision<T: Scalar>(points: &[PrPoint<T>]) -> T {
    let grid_size = 11usize;
    let mut total = T::zero();
    for i in 0..grid_size {
        let r = T::from_count(i) / T::from_count(10);
        let mut best = T::zero();
        for point in points {
            if point.recall >= r && point.precision > best {
                best = point.precision;
            }
        }
        total += best;
    }
    total / T::from_count(grid_size) * T::c(100.0)
}

/// AP at every window plus the mean; `pr_points` holds the curve at the
/// smallest window.
pub fn map_over_windows<T: Scalar>(
    detections: &[DetectionResult<T>],
    truths: &[GroundTruth],
    windows: &[u32],
) -> Result<EvalReport<T>, EvalError> {
    if windows.is_empty() {
        return Err(EvalError::NoWindows);
    }
    let mut sorted_windows = windows.to_vec();
    sorted_windows.sort_unstable();
    sorted_windows.dedup();

    let mut ap_per_window = BTreeMap::new();
    let mut pr_points = Vec::new();
    for (i, &window) in sorted_windows.iter().enumerate() {
        let curve = pr_curve(detections, truths, window)?;
        ap_per_window.insert(window, average_precision(&curve));
        if i == 0 {
            pr_points = curve;
        }
    }
    let map_value = ap_per_window.values().copied().sum::<T>()
        / T::from_count(ap_per_window.len());
    Ok(EvalReport { pr_points, ap_per_window, map_value })
}

/// Default evaluation windows.
pub const DEFAULT_WINDOWS: [u32; 5] = [0, 1, 2, 3, 4];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Method;

    fn det(id: &str, kappa_hat: u32, confidence: f64) -> DetectionResult<f64> {
        DetectionResult {
            stream_id: id.into(),
            method: Method::Gc,
            kappa_hat,
            confidence,
            profile: vec![confidence],
        }
    }

    fn truth(id: &str, kappa: Option<u32>) -> GroundTruth {
        GroundTruth { stream_id: id.into(), kappa_star: kappa }
    }

    #[test]
    fn windowed_correct_basics() {
        assert!(windowed_correct(&det("s", 3, 0.0), &truth("s", Some(3)), 0).unwrap());
        assert!(!windowed_correct(&det("s", 5, 0.0), &truth("s", Some(3)), 1).unwrap());
        assert!(windowed_correct(&det("s", 5, 0.0), &truth("s", Some(3)), 2).unwrap());
        for delta in 0..10 {
            assert!(!windowed_correct(&det("s", 1, 0.0), &truth("s", None), delta).unwrap());
        }
        assert!(windowed_correct(&det("a", 1, 0.0), &truth("b", Some(1)), 0).is_err());
    }

    #[test]
    fn pr_curve_two_correct_detections() {
        let dets = vec![det("s1", 3, 0.9), det("s2", 2, 0.8)];
        let truths = vec![truth("s1", Some(3)), truth("s2", Some(2))];
        let curve = pr_curve(&dets, &truths, 0).unwrap();
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[0], PrPoint { recall: 0.5, precision: 1.0 });
        assert_eq!(curve[1], PrPoint { recall: 1.0, precision: 1.0 });
    }

    #[test]
    fn pr_curve_confident_false_alarm_first() {
        // the no-change stream's detection outranks the correct one
        let dets = vec![det("change", 3, 0.5), det("nochange", 2, 0.9)];
        let truths = vec![truth("change", Some(3)), truth("nochange", None)];
        let curve = pr_curve(&dets, &truths, 0).unwrap();
        assert_eq!(curve[0], PrPoint { recall: 0.0, precision: 0.0 });
        assert_eq!(curve[1], PrPoint { recall: 1.0, precision: 0.5 });
        assert_eq!(average_precision(&curve), 50.0);
    }

    #[test]
    fn pr_curve_all_incorrect() {
        let dets = vec![det("s1", 1, 0.9), det("s2", 1, 0.8)];
        let truths = vec![truth("s1", Some(3)), truth("s2", Some(4))];
        let curve = pr_curve(&dets, &truths, 0).unwrap();
        assert!(curve.iter().all(|p| p.precision == 0.0));
        assert_eq!(average_precision(&curve), 0.0);
    }

    #[test]
    fn pr_curve_processes_ties_together() {
        let dets = vec![det("s1", 3, 0.5), det("s2", 2, 0.5), det("s3", 1, 0.1)];
        let truths = vec![truth("s1", Some(3)), truth("s2", Some(2)), truth("s3", Some(5))];
        let curve = pr_curve(&dets, &truths, 0).unwrap();
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[0], PrPoint { recall: 2.0 / 3.0, precision: 1.0 });
    }

    #[test]
    fn recalls_are_non_decreasing_along_the_sweep() {
        let dets: Vec<_> = (0u32..20)
            .map(|i| det(&format!("s{i}"), 1 + (i % 4), 1.0 / (1.0 + f64::from(i))))
            .collect();
        let truths: Vec<_> = (0u32..20)
            .map(|i| truth(&format!("s{i}"), if i % 3 == 0 { Some(1 + (i % 5)) } else { None }))
            .collect();
        let curve = pr_curve(&dets, &truths, 1).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].recall >= w[0].recall);
        }
    }

    #[test]
    fn empty_truth_set_is_an_error() {
        let dets = vec![det("s1", 1, 0.9)];
        let truths = vec![truth("s1", None)];
        assert_eq!(pr_curve(&dets, &truths, 0).unwrap_err(), EvalError::EmptyTruthSet);
    }

    #[test]
    fn duplicate_detection_is_an_error() {
        let dets = vec![det("s1", 1, 0.9), det("s1", 2, 0.8)];
        let truths = vec![truth("s1", Some(1))];
        assert_eq!(
            pr_curve(&dets, &truths, 0).unwrap_err(),
            EvalError::DuplicateDetection("s1".into())
        );
    }

    #[test]
    fn perfect_curve_scores_one_hundred() {
        let points = vec![
            PrPoint { recall: 0.5, precision: 1.0 },
            PrPoint { recall: 1.0, precision: 1.0 },
        ];
        assert_eq!(average_precision(&points), 100.0);
    }

    #[test]
    fn interpolated_precision_is_non_increasing_on_the_grid() {
        let points = vec![
            PrPoint { recall: 0.2, precision: 0.4 },
            PrPoint { recall: 0.5, precision: 0.9 },
            PrPoint { recall: 0.8, precision: 0.3 },
        ];
        let mut last = f64::INFINITY;
        for i in 0..11 {
            let r = i as f64 / 10.0;
            let interp = points
                .iter()
                .filter(|p| p.recall >= r)
                .map(|p| p.precision)
                .fold(0.0f64, f64::max);
            assert!(interp <= last);
            last = interp;
        }
    }

    #[test]
    fn map_over_windows_perfect_detector() {
        let dets = vec![det("s1", 3, 0.9), det("s2", 2, 0.8)];
        let truths = vec![truth("s1", Some(3)), truth("s2", Some(2))];
        let report = map_over_windows(&dets, &truths, &DEFAULT_WINDOWS).unwrap();
        for ap in report.ap_per_window.values() {
            assert_eq!(*ap, 100.0);
        }
        assert_eq!(report.map_value, 100.0);
        assert_eq!(report.ap_per_window.len(), 5);
    }

    #[test]
    fn ap_is_non_decreasing_in_the_window() {
        let dets: Vec<_> = (0u32..30)
            .map(|i| det(&format!("s{i:02}"), 1 + (i * 7 % 6), 1.0 / (1.0 + f64::from(i * 13 % 17))))
            .collect();
        let truths: Vec<_> = (0u32..30)
            .map(|i| {
                truth(&format!("s{i:02}"), if i % 4 == 0 { None } else { Some(1 + (i * 5 % 6)) })
            })
            .collect();
        let report = map_over_windows(&dets, &truths, &DEFAULT_WINDOWS).unwrap();
        let aps: Vec<f64> = report.ap_per_window.values().copied().collect();
        for w in aps.windows(2) {
            assert!(w[1] >= w[0], "AP must not decrease as the window grows: {aps:?}");
        }
    }
}
