//! Sliding-window scoring, pyramid detection and greedy non-maximum suppression.

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{build_pyramid, ChannelStack, FeaturePyramid, PyramidConfig, N_CHANNELS};
use crate::error::{Error, Result};
use crate::svm::LinearModel;

/// Axis-aligned box in pixels; `(x, y)` is the top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid box ({x}, {y}, {w}, {h})")));
        }
        Ok(BoundingBox { x, y, w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn intersection(&self, other: &BoundingBox) -> f64 {
        let iw = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let ih = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Intersection over union, in `[0, 1]`.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection(other);
        if inter == 0.0 {
            return 0.0;
        }
        inter / (self.area() + other.area() - inter)
    }

    /// Intersection with `[0, width] × [0, height]`, or `None` if empty.
    pub fn clip(&self, width: f64, height: f64) -> Option<BoundingBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = (self.x + self.w).min(width);
        let y1 = (self.y + self.h).min(height);
        (x1 > x0 && y1 > y0).then(|| BoundingBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        })
    }

    pub fn scaled(&self, factor: f64) -> BoundingBox {
        BoundingBox {
            x: self.x * factor,
            y: self.y * factor,
            w: self.w * factor,
            h: self.h * factor,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    /// Signed SVM margin.
    pub score: f64,
    /// Pyramid level the window was scored at.
    pub level: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    /// Model window in pixels, `(width, height)`.
    pub window: (usize, usize),
    pub stride_cells: usize,
    pub score_threshold: f64,
    pub nms_overlap: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            window: (64, 128),
            stride_cells: 1,
            score_threshold: 0.0,
            nms_overlap: 0.5,
        }
    }
}

fn check_model(stack: &ChannelStack, model: &LinearModel, window: (usize, usize)) -> Result<(usize, usize)> {
    let shrink = stack.shrink;
    if window.0 % shrink != 0 || window.1 % shrink != 0 {
        return Err(Error::InvalidInput(format!(
            "window {}x{} is not divisible by shrink {shrink}",
            window.0, window.1
        )));
    }
    let (wc, hc) = (window.0 / shrink, window.1 / shrink);
    let expected = wc * hc * N_CHANNELS;
    if model.feature_dim() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: model.feature_dim(),
        });
    }
    Ok((wc, hc))
}

/// Calls `f(x_cell, y_cell, score)` for every window placement fully inside
/// `stack`, row by row. Scores come from a dense score map built one weight
/// at a time over contiguous rows.
pub(crate) fn for_each_window(
    stack: &ChannelStack,
    model: &LinearModel,
    (wc, hc): (usize, usize),
    stride: usize,
    mut f: impl FnMut(usize, usize, f64),
) {
    if stack.width_cells < wc || stack.height_cells < hc {
        return;
    }
    let stride = stride.max(1);
    let (nx, ny) = (stack.width_cells - wc + 1, stack.height_cells - hc + 1);
    let mut map = vec![model.bias; nx * ny];
    let weights = &model.weights;
    let mut k = 0;
    for c in 0..N_CHANNELS {
        for dy in 0..hc {
            for dx in 0..wc {
                let a = weights[k];
                k += 1;
                if a == 0.0 {
                    continue;
                }
                for y in 0..ny {
                    let src = stack.row_slice(c, y + dy, dx, nx);
                    for (m, v) in map[y * nx..(y + 1) * nx].iter_mut().zip(src) {
                        *m += a * v;
                    }
                }
            }
        }
    }
    for y in (0..ny).step_by(stride) {
        for x in (0..nx).step_by(stride) {
            f(x, y, map[y * nx + x]);
        }
    }
}

/// Scores every window placement at `stride_cells`. Boxes are in the
/// stack's own pixel coordinates and `level` is 0.
pub fn score_windows(
    stack: &ChannelStack,
    model: &LinearModel,
    window: (usize, usize),
    stride_cells: usize,
) -> Result<Vec<Detection>> {
    let cells = check_model(stack, model, window)?;
    if stride_cells == 0 {
        return Err(Error::InvalidInput("stride must be at least 1 cell".into()));
    }
    let shrink = stack.shrink as f64;
    let mut out = Vec::new();
    for_each_window(stack, model, cells, stride_cells, |x, y, score| {
        out.push(Detection {
            bbox: BoundingBox {
                x: x as f64 * shrink,
                y: y as f64 * shrink,
                w: window.0 as f64,
                h: window.1 as f64,
            },
            score,
            level: 0,
        });
    });
    Ok(out)
}

/// Greedy suppression over abstract items: visit indices by descending
/// score (ties keep index order) and keep an item unless its overlap with an
/// already kept item exceeds `threshold`. Returns kept indices in visit order.
pub fn greedy_suppress(
    scores: &[f64],
    overlap: impl Fn(usize, usize) -> f64,
    threshold: f64,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| overlap(k, i) <= threshold) {
            kept.push(i);
        }
    }
    kept
}

/// Greedy IoU non-maximum suppression; output sorted by descending score.
pub fn nms(detections: &[Detection], overlap_threshold: f64) -> Vec<Detection> {
    let scores: Vec<f64> = detections.iter().map(|d| d.score).collect();
    greedy_suppress(
        &scores,
        |a, b| detections[a].bbox.iou(&detections[b].bbox),
        overlap_threshold,
    )
    .into_iter()
    .map(|i| detections[i])
    .collect()
}

/// Thresholded detections of every pyramid level mapped to image
/// coordinates and clipped to `image_size`, before suppression.
pub fn detect_raw(
    pyramid: &FeaturePyramid,
    image_size: (usize, usize),
    model: &LinearModel,
    config: &DetectConfig,
) -> Result<Vec<Detection>> {
    if let Some(level) = pyramid.levels.first() {
        check_model(&level.stack, model, config.window)?;
    }
    let per_level = pyramid
        .levels
        .par_iter()
        .enumerate()
        .map(|(li, level)| {
            let mut dets = score_windows(&level.stack, model, config.window, config.stride_cells)?;
            dets.retain(|d| d.score >= config.score_threshold);
            Ok(dets
                .into_iter()
                .filter_map(|d| {
                    let bbox = d
                        .bbox
                        .scaled(1.0 / level.scale)
                        .clip(image_size.0 as f64, image_size.1 as f64)?;
                    Some(Detection {
                        bbox,
                        score: d.score,
                        level: li,
                    })
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_level.into_iter().flatten().collect())
}

/// Full detection on a precomputed pyramid.
pub fn detect_pyramid(
    pyramid: &FeaturePyramid,
    image_size: (usize, usize),
    model: &LinearModel,
    config: &DetectConfig,
) -> Result<Vec<Detection>> {
    let raw = detect_raw(pyramid, image_size, model, config)?;
    Ok(nms(&raw, config.nms_overlap))
}

/// Builds the pyramid of `image`, scores all levels, thresholds, maps to
/// image coordinates and applies NMS.
pub fn detect(
    image: &RgbImage,
    model: &LinearModel,
    config: &DetectConfig,
    pyramid_config: &PyramidConfig,
) -> Result<Vec<Detection>> {
    let pyramid = build_pyramid(image, pyramid_config)?;
    detect_pyramid(
        &pyramid,
        (image.width() as usize, image.height() as usize),
        model,
        config,
    )
}
