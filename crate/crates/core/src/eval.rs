//! Region-based (RBDC), track-based (TBDC) and frame-level detection
//! criteria.
//!
//! Only predicted regions with a positive score take part in the RBDC and
//! TBDC threshold sweeps. A prediction is a false positive when it overlaps
//! no ground-truth region of its frame with IoU of at least `beta`; that
//! status does not depend on the threshold, so each criterion reduces to a
//! single sort-and-sweep over the unique positive scores.

use std::collections::HashMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Rect;
use crate::ingest::GroundTruth;
use crate::score::{FrameScoreSeries, RegionScore};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("ground truth has no anomalous regions; true-positive rate is undefined")]
    UndefinedTpr,
    #[error("frame labels contain a single class; AUC is undefined")]
    UndefinedAuc,
    #[error("score series has {scores} frames but labels have {labels}")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("non-finite score")]
    NonFiniteScore,
    #[error("invalid evaluation config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Minimum IoU for a prediction to match a ground-truth region.
    pub beta: f64,
    /// Fraction of a track's regions that must be detected.
    pub gamma: f64,
    /// Upper end of the false-positives-per-frame integration range.
    pub max_fp_per_frame: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            gamma: 0.1,
            max_fp_per_frame: 1.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.beta) {
            return Err(EvalError::Config(format!("beta must be in (0, 1], got {}", self.beta)));
        }
        if !unit(self.gamma) {
            return Err(EvalError::Config(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if !(self.max_fp_per_frame > 0.0 && self.max_fp_per_frame.is_finite()) {
            return Err(EvalError::Config("max_fp_per_frame must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fp_per_frame: f64,
}

pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Area under the piecewise-linear curve from `(0, 0)` through `points`
/// (ordered by increasing fp), over `fp in [0, max_fp]`, divided by
/// `max_fp`. The curve is held flat past its last point.
pub fn curve_auc(points: &[CurvePoint], max_fp: f64) -> f64 {
    let mut area = 0.0;
    let (mut x0, mut y0) = (0.0f64, 0.0f64);
    for p in points {
        let (x1, y1) = (p.fp_per_frame, p.tpr);
        if x1 >= max_fp {
            let y_end = if x1 > x0 { y0 + (y1 - y0) * (max_fp - x0) / (x1 - x0) } else { y1 };
            area += 0.5 * (y0 + y_end) * (max_fp - x0);
            return area / max_fp;
        }
        area += 0.5 * (y0 + y1) * (x1 - x0);
        (x0, y0) = (x1, y1);
    }
    area += y0 * (max_fp - x0);
    area / max_fp
}

/// Per-prediction false-positive flags and per-gt-region detection scores
/// (max score of any matching positive prediction).
struct Matching {
    fp_scores: Vec<f64>,
    region_scores: Vec<Option<f64>>,
    thresholds: Vec<f64>,
}

fn match_regions(regions: &[RegionScore], gt: &GroundTruth, beta: f64) -> Result<Matching, EvalError> {
    let mut gt_by_frame: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, g) in gt.regions.iter().enumerate() {
        gt_by_frame.entry(g.frame_idx).or_default().push(i);
    }
    let mut fp_scores = Vec::new();
    let mut region_scores: Vec<Option<f64>> = vec![None; gt.regions.len()];
    let mut thresholds = Vec::new();
    for p in regions {
        if !p.score.is_finite() {
            return Err(EvalError::NonFiniteScore);
        }
        if p.score <= 0.0 {
            continue;
        }
        thresholds.push(p.score);
        let mut matched = false;
        for &g in gt_by_frame.get(&p.frame_idx).map(Vec::as_slice).unwrap_or(&[]) {
            if iou(&p.rect, &gt.regions[g].rect) >= beta {
                matched = true;
                let best = &mut region_scores[g];
                if best.is_none_or(|b| p.score > b) {
                    *best = Some(p.score);
                }
            }
        }
        if !matched {
            fp_scores.push(p.score);
        }
    }
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    fp_scores.sort_by(|a, b| b.total_cmp(a));
    Ok(Matching {
        fp_scores,
        region_scores,
        thresholds,
    })
}

/// Sweeps thresholds in descending order. `hit_scores` holds, per positive
/// unit (region or track), the highest threshold at which it counts as
/// detected.
fn sweep(m: &Matching, mut hit_scores: Vec<f64>, total: usize, frames: u64) -> Vec<CurvePoint> {
    hit_scores.sort_by(|a, b| b.total_cmp(a));
    let (mut hi, mut fi) = (0, 0);
    m.thresholds
        .iter()
        .map(|&tau| {
            while hi < hit_scores.len() && hit_scores[hi] >= tau {
                hi += 1;
            }
            while fi < m.fp_scores.len() && m.fp_scores[fi] >= tau {
                fi += 1;
            }
            CurvePoint {
                threshold: tau,
                tpr: hi as f64 / total as f64,
                fp_per_frame: fi as f64 / frames as f64,
            }
        })
        .collect()
}

pub fn rbdc(regions: &[RegionScore], gt: &GroundTruth, cfg: &EvalConfig, frames: u64) -> Result<(f64, Vec<CurvePoint>), EvalError> {
    cfg.validate()?;
    if gt.regions.is_empty() {
        return Err(EvalError::UndefinedTpr);
    }
    let m = match_regions(regions, gt, cfg.beta)?;
    let hits = m.region_scores.iter().flatten().copied().collect();
    let curve = sweep(&m, hits, gt.regions.len(), frames.max(1));
    Ok((curve_auc(&curve, cfg.max_fp_per_frame), curve))
}

pub fn tbdc(regions: &[RegionScore], gt: &GroundTruth, cfg: &EvalConfig, frames: u64) -> Result<(f64, Vec<CurvePoint>), EvalError> {
    cfg.validate()?;
    if gt.tracks.is_empty() {
        return Err(EvalError::UndefinedTpr);
    }
    let m = match_regions(regions, gt, cfg.beta)?;
    let mut track_hits = Vec::new();
    for members in gt.tracks.values() {
        let n = members.len();
        let Some(k) = (1..=n).find(|&k| k as f64 / n as f64 >= cfg.gamma) else {
            continue;
        };
        let mut scores: Vec<f64> = members.iter().filter_map(|&i| m.region_scores[i]).collect();
        scores.sort_by(|a, b| b.total_cmp(a));
        if let Some(&s) = scores.get(k - 1) {
            track_hits.push(s);
        }
    }
    let curve = sweep(&m, track_hits, gt.tracks.len(), frames.max(1));
    Ok((curve_auc(&curve, cfg.max_fp_per_frame), curve))
}

/// ROC AUC over frames via the Mann-Whitney statistic with midranks.
pub fn frame_auc(series: &FrameScoreSeries, labels: &[u8]) -> Result<f64, EvalError> {
    let scores = &series.values;
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore);
    }
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        pos_rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k] != 0).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub criterion: String,
    pub points: Vec<CurvePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rbdc: f64,
    pub tbdc: f64,
    pub frame_auc: f64,
    pub config: EvalConfig,
    pub curves: Vec<Curve>,
    pub frames: u64,
    pub gt_regions: usize,
    pub gt_tracks: usize,
}

pub fn evaluate(
    regions: &[RegionScore],
    series: &FrameScoreSeries,
    gt: &GroundTruth,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    let frames = series.len() as u64;
    let (rbdc_auc, rbdc_curve) = rbdc(regions, gt, cfg, frames)?;
    let (tbdc_auc, tbdc_curve) = tbdc(regions, gt, cfg, frames)?;
    let frame = frame_auc(series, &gt.frame_labels(frames))?;
    Ok(EvalReport {
        rbdc: rbdc_auc,
        tbdc: tbdc_auc,
        frame_auc: frame,
        config: *cfg,
        curves: vec![
            Curve {
                criterion: "rbdc".into(),
                points: rbdc_curve,
            },
            Curve {
                criterion: "tbdc".into(),
                points: tbdc_curve,
            },
        ],
        frames,
        gt_regions: gt.regions.len(),
        gt_tracks: gt.tracks.len(),
    })
}

pub fn write_curve_csv(mut w: impl Write, curve: &[CurvePoint]) -> io::Result<()> {
    writeln!(w, "threshold,tpr,fp_per_frame")?;
    for p in curve {
        writeln!(w, "{},{},{}", p.threshold, p.tpr, p.fp_per_frame)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::GtRegion;

    fn r(x1: f64, y1: f64, x2: f64, y2: f64) -> Rect {
        Rect::new(x1, y1, x2, y2)
    }

    fn pred(frame: u64, rect: Rect, score: f64) -> RegionScore {
        RegionScore {
            frame_idx: frame,
            rect,
            score,
        }
    }

    fn gt(regions: &[(u64, Rect, u64)]) -> GroundTruth {
        GroundTruth::from_regions(
            regions
                .iter()
                .map(|&(frame_idx, rect, track_id)| GtRegion { frame_idx, rect, track_id })
                .collect(),
        )
    }

    #[test]
    fn iou_examples() {
        let a = r(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &r(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert!((iou(&a, &r(5.0, 0.0, 15.0, 10.0)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_detector_scores_one() {
        let g = gt(&[(0, r(0.0, 0.0, 10.0, 10.0), 1), (1, r(0.0, 0.0, 10.0, 10.0), 1)]);
        let p = vec![pred(0, r(0.0, 0.0, 10.0, 10.0), 0.9), pred(1, r(0.0, 0.0, 10.0, 10.0), 0.8)];
        let cfg = EvalConfig::default();
        assert_eq!(rbdc(&p, &g, &cfg, 2).unwrap().0, 1.0);
        assert_eq!(tbdc(&p, &g, &cfg, 2).unwrap().0, 1.0);
    }

    #[test]
    fn non_overlapping_predictions_score_zero() {
        let g = gt(&[(0, r(0.0, 0.0, 10.0, 10.0), 1)]);
        let p = vec![pred(0, r(50.0, 50.0, 60.0, 60.0), 0.9)];
        let cfg = EvalConfig::default();
        assert_eq!(rbdc(&p, &g, &cfg, 2).unwrap().0, 0.0);
        assert_eq!(tbdc(&[], &g, &cfg, 2).unwrap().0, 0.0);
    }

    #[test]
    fn spurious_low_score_region_does_not_hurt() {
        let g = gt(&[(0, r(0.0, 0.0, 10.0, 10.0), 1)]);
        let p = vec![pred(0, r(0.0, 0.0, 10.0, 10.0), 0.9), pred(1, r(40.0, 40.0, 50.0, 50.0), 0.2)];
        assert_eq!(rbdc(&p, &g, &EvalConfig::default(), 2).unwrap().0, 1.0);
    }

    #[test]
    fn one_of_ten_regions_detects_track_at_gamma_point_one() {
        let regions: Vec<(u64, Rect, u64)> = (0..10).map(|f| (f, r(0.0, 0.0, 10.0, 10.0), 7)).collect();
        let g = gt(&regions);
        let p = vec![pred(3, r(0.0, 0.0, 10.0, 10.0), 0.5)];
        assert_eq!(tbdc(&p, &g, &EvalConfig::default(), 10).unwrap().0, 1.0);
    }

    #[test]
    fn fp_interpolation_and_truncation() {
        let pts = [
            CurvePoint {
                threshold: 0.9,
                tpr: 0.5,
                fp_per_frame: 0.0,
            },
            CurvePoint {
                threshold: 0.5,
                tpr: 1.0,
                fp_per_frame: 2.0,
            },
        ];
        // vertical to 0.5, then a line reaching 0.75 at fp = 1
        assert!((curve_auc(&pts, 1.0) - 0.625).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let cfg = EvalConfig::default();
        assert_eq!(rbdc(&[], &GroundTruth::default(), &cfg, 5).unwrap_err(), EvalError::UndefinedTpr);
        assert_eq!(tbdc(&[], &GroundTruth::default(), &cfg, 5).unwrap_err(), EvalError::UndefinedTpr);
        let s = FrameScoreSeries { values: vec![0.1, 0.2] };
        assert_eq!(frame_auc(&s, &[1, 1]).unwrap_err(), EvalError::UndefinedAuc);
        assert!(matches!(frame_auc(&s, &[1]), Err(EvalError::LengthMismatch { .. })));
        let bad = EvalConfig { beta: 0.0, ..cfg };
        assert!(matches!(bad.validate(), Err(EvalError::Config(_))));
    }

    #[test]
    fn frame_auc_examples() {
        assert_eq!(frame_auc(&FrameScoreSeries { values: vec![0.9, 0.1] }, &[1, 0]).unwrap(), 1.0);
        assert_eq!(frame_auc(&FrameScoreSeries { values: vec![0.5, 0.5] }, &[1, 0]).unwrap(), 0.5);
    }
}
