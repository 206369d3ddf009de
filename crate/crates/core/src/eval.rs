//! Detection evaluation: greedy IoU matching, precision/recall and
//! miss-rate/FPPI sweeps, average precision, log-average miss rate and
//! maximum F1.
//!
//! Operating points are taken at every distinct score threshold: detections
//! sharing a score enter the sweep together. All annotations count; there are
//! no ignore regions or size filters.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{BoundingBox, Detection};
use crate::error::{Error, Result};

pub const DEFAULT_IOU_MIN: f64 = 0.5;
pub const LAMR_SAMPLES: usize = 9;
pub const LAMR_FPPI_RANGE: (f64, f64) = (1e-2, 1.0);
pub const MISS_RATE_FLOOR: f64 = 1e-4;

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    a.iou(b)
}

/// Outcome of matching one image's detections to its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// Per detection, in input order.
    pub true_positive: Vec<bool>,
    /// Per ground-truth box, the index of the detection that claimed it.
    pub matched_by: Vec<Option<usize>>,
    /// Detection indices by descending score (ties in input order).
    pub order: Vec<usize>,
}

impl MatchResult {
    pub fn n_true_positives(&self) -> usize {
        self.true_positive.iter().filter(|&&t| t).count()
    }

    pub fn n_missed(&self) -> usize {
        self.matched_by.iter().filter(|m| m.is_none()).count()
    }
}

/// Visits detections by descending score; each claims the unmatched
/// ground-truth box it overlaps most, provided that IoU is at least `iou_min`.
pub fn match_detections(
    detections: &[Detection],
    ground_truth: &[BoundingBox],
    iou_min: f64,
) -> MatchResult {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score));
    let mut true_positive = vec![false; detections.len()];
    let mut matched_by = vec![None; ground_truth.len()];
    for &di in &order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in ground_truth.iter().enumerate() {
            if matched_by[gi].is_some() {
                continue;
            }
            let o = detections[di].bbox.iou(gt);
            if o >= iou_min && best.map_or(true, |(_, b)| o > b) {
                best = Some((gi, o));
            }
        }
        if let Some((gi, _)) = best {
            matched_by[gi] = Some(di);
            true_positive[di] = true;
        }
    }
    MatchResult {
        true_positive,
        matched_by,
        order,
    }
}

/// A scored detection after matching.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredMatch {
    pub score: f64,
    pub true_positive: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MrFppiPoint {
    pub fppi: f64,
    pub miss_rate: f64,
}

/// Cumulative `(tp, fp)` after each distinct score, highest score first.
fn sweep(matches: &[ScoredMatch]) -> Vec<(usize, usize)> {
    let mut sorted = matches.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (i, m) in sorted.iter().enumerate() {
        if m.true_positive {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = sorted.get(i + 1).map_or(true, |next| next.score != m.score);
        if last_of_group {
            out.push((tp, fp));
        }
    }
    out
}

/// All-point interpolated average precision and the precision/recall curve.
pub fn average_precision(matches: &[ScoredMatch], n_ground_truth: usize) -> Result<(f64, Vec<PrPoint>)> {
    if n_ground_truth == 0 {
        return Err(Error::InvalidInput("average precision needs ground truth".into()));
    }
    let points: Vec<PrPoint> = sweep(matches)
        .into_iter()
        .map(|(tp, fp)| PrPoint {
            recall: tp as f64 / n_ground_truth as f64,
            precision: tp as f64 / (tp + fp) as f64,
        })
        .collect();
    let mut envelope = vec![0.0; points.len()];
    let mut running = 0.0f64;
    for (k, p) in points.iter().enumerate().rev() {
        running = running.max(p.precision);
        envelope[k] = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in points.iter().zip(&envelope) {
        ap += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    Ok((ap, points))
}

/// FPPI reference points, log-uniform over [`LAMR_FPPI_RANGE`].
pub fn lamr_reference_points() -> Vec<f64> {
    let (lo, hi) = (LAMR_FPPI_RANGE.0.log10(), LAMR_FPPI_RANGE.1.log10());
    (0..LAMR_SAMPLES)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (LAMR_SAMPLES - 1) as f64))
        .collect()
}

/// Log-average miss rate over the reference FPPI points and the
/// miss-rate/FPPI curve.
pub fn log_average_miss_rate(
    matches: &[ScoredMatch],
    n_ground_truth: usize,
    n_images: usize,
) -> Result<(f64, Vec<MrFppiPoint>)> {
    if n_ground_truth == 0 || n_images == 0 {
        return Err(Error::InvalidInput(
            "miss rate needs at least one image and one ground-truth box".into(),
        ));
    }
    let points: Vec<MrFppiPoint> = sweep(matches)
        .into_iter()
        .map(|(tp, fp)| MrFppiPoint {
            fppi: fp as f64 / n_images as f64,
            miss_rate: 1.0 - tp as f64 / n_ground_truth as f64,
        })
        .collect();
    let refs = lamr_reference_points();
    let mean_log = refs
        .iter()
        .map(|&r| {
            let mr = points
                .iter()
                .rev()
                .find(|p| p.fppi <= r)
                .map_or(1.0, |p| p.miss_rate);
            mr.max(MISS_RATE_FLOOR).ln()
        })
        .sum::<f64>()
        / refs.len() as f64;
    Ok((mean_log.exp(), points))
}

/// Best F1 over the curve's operating points (0 for an empty curve).
pub fn max_f1(pr_points: &[PrPoint]) -> f64 {
    pr_points
        .iter()
        .map(|p| {
            let s = p.precision + p.recall;
            if s == 0.0 {
                0.0
            } else {
                2.0 * p.precision * p.recall / s
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub n_detections: usize,
    pub n_ground_truth: usize,
    pub n_images: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub pr_points: Vec<PrPoint>,
    pub mr_fppi_points: Vec<MrFppiPoint>,
    pub ap: f64,
    pub lamr: f64,
    pub max_f1: f64,
    pub counts: EvalCounts,
}

/// Summary written by the `eval` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub ap: f64,
    pub lamr: f64,
    pub max_f1: f64,
    pub counts: EvalCounts,
}

impl EvalResult {
    pub fn summary(&self) -> EvalSummary {
        EvalSummary {
            ap: self.ap,
            lamr: self.lamr,
            max_f1: self.max_f1,
            counts: self.counts,
        }
    }
}

/// Per-image detections paired with ground truth.
pub struct ImageEval<'a> {
    pub detections: &'a [Detection],
    pub ground_truth: &'a [BoundingBox],
}

/// Matches each image independently and aggregates all three metrics.
pub fn evaluate(images: &[ImageEval<'_>], iou_min: f64) -> Result<EvalResult> {
    let mut matches = Vec::new();
    let mut n_gt = 0;
    for img in images {
        let m = match_detections(img.detections, img.ground_truth, iou_min);
        n_gt += img.ground_truth.len();
        matches.extend(img.detections.iter().zip(&m.true_positive).map(|(d, &tp)| ScoredMatch {
            score: d.score,
            true_positive: tp,
        }));
    }
    evaluate_matches(&matches, n_gt, images.len())
}

pub fn evaluate_matches(matches: &[ScoredMatch], n_ground_truth: usize, n_images: usize) -> Result<EvalResult> {
    let (ap, pr_points) = average_precision(matches, n_ground_truth)?;
    let (lamr, mr_fppi_points) = log_average_miss_rate(matches, n_ground_truth, n_images)?;
    Ok(EvalResult {
        max_f1: max_f1(&pr_points),
        pr_points,
        mr_fppi_points,
        ap,
        lamr,
        counts: EvalCounts {
            n_detections: matches.len(),
            n_ground_truth,
            n_images,
        },
    })
}

/// Writes `recall,precision` rows.
pub fn write_pr_csv(points: &[PrPoint], out: impl Write) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["recall", "precision"])?;
    for p in points {
        w.write_record([p.recall.to_string(), p.precision.to_string()])?;
    }
    w.flush()
}

/// Writes `fppi,miss_rate` rows.
pub fn write_mr_fppi_csv(points: &[MrFppiPoint], out: impl Write) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fppi", "miss_rate"])?;
    for p in points {
        w.write_record([p.fppi.to_string(), p.miss_rate.to_string()])?;
    }
    w.flush()
}

/// Writes the precision/recall curve to `path` and the miss-rate/FPPI curve
/// next to it with a `.mr_fppi.csv` suffix. Returns both paths.
pub fn write_curves(result: &EvalResult, path: &Path) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let mr_path = path.with_extension("mr_fppi.csv");
    let open = |p: &Path| std::fs::File::create(p).map_err(|e| Error::io(p, e));
    write_pr_csv(&result.pr_points, open(path)?).map_err(|e| Error::io(path, e))?;
    write_mr_fppi_csv(&result.mr_fppi_points, open(&mr_path)?).map_err(|e| Error::io(&mr_path, e))?;
    Ok((path.to_path_buf(), mr_path))
}

/// Minimal static SVG plot of a curve, axes in `[0, 1]` (x log-scaled when
/// `log_x` is set over the FPPI range `[1e-2, 1e1]`).
pub fn curve_svg(title: &str, points: &[(f64, f64)], log_x: bool) -> String {
    let (w, h, m) = (320.0, 240.0, 30.0);
    let to_px = |x: f64, y: f64| {
        let fx = if log_x {
            ((x.max(1e-2).log10() + 2.0) / 3.0).clamp(0.0, 1.0)
        } else {
            x.clamp(0.0, 1.0)
        };
        (m + fx * (w - 2.0 * m), h - m - y.clamp(0.0, 1.0) * (h - 2.0 * m))
    };
    let path: Vec<String> = points
        .iter()
        .map(|&(x, y)| {
            let (px, py) = to_px(x, y);
            format!("{px:.2},{py:.2}")
        })
        .collect();
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\
<rect x=\"{m}\" y=\"{m}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\
<text x=\"{m}\" y=\"{}\" font-size=\"12\">{title}</text>\
<polyline fill=\"none\" stroke=\"blue\" points=\"{}\"/></svg>\n",
        w - 2.0 * m,
        h - 2.0 * m,
        m - 8.0,
        path.join(" ")
    )
}
