//! Fixtures shared by the integration and acceptance tests.
#![allow(dead_code)]

use image::{Rgb, RgbImage};
use placefit::channels::PyramidConfig;
use placefit::detector::BoundingBox;
use placefit::mining::{positive_features, sample_seed_negatives, HnmConfig, TrainingFrame};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WINDOW: (usize, usize) = (16, 32);
pub const SHRINK: usize = 4;
pub const MARGIN: u32 = 8;

pub fn hnm_config() -> HnmConfig {
    HnmConfig {
        window: WINDOW,
        pyramid: PyramidConfig {
            scales_per_octave: 4,
            min_window: WINDOW,
            shrink: SHRINK,
        },
        ..HnmConfig::default()
    }
}

fn noisy_gray(w: u32, h: u32, level: u8, rng: &mut ChaCha8Rng) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| {
        let v = (level as i32 + rng.gen_range(-6..=6)).clamp(0, 255) as u8;
        Rgb([v, v, v])
    })
}

/// Dark figure (head and body) drawn into `img` with its window's top-left
/// corner at `(x0, y0)`.
pub fn draw_figure(img: &mut RgbImage, x0: u32, y0: u32, shade: u8) {
    for y in 0..32u32 {
        for x in 0..16u32 {
            let (dx, dy) = (x as f64 - 7.5, y as f64);
            let head = dx * dx + (dy - 5.0).powi(2) <= 9.0;
            let body = (9..30).contains(&y) && dx.abs() <= 3.5;
            if head || body {
                img.put_pixel(x0 + x, y0 + y, Rgb([shade, shade / 2, shade / 3]));
            }
        }
    }
}

/// Positive crops: a figure centred in a window-plus-margin crop.
pub fn positive_images(n: usize, seed: u64) -> Vec<RgbImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut img = noisy_gray(16 + 2 * MARGIN, 32 + 2 * MARGIN, 170, &mut rng);
            let shade = rng.gen_range(20..50);
            draw_figure(&mut img, MARGIN, MARGIN, shade);
            img
        })
        .collect()
}

pub fn negative_images(n: usize, seed: u64) -> Vec<RgbImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| noisy_gray(64, 64, 170, &mut rng)).collect()
}

pub struct HnmFixture {
    pub positives: Vec<Vec<f64>>,
    pub seeds: Vec<Vec<f64>>,
    pub frame: TrainingFrame,
    pub image: RgbImage,
    pub config: HnmConfig,
}

fn features(config: &HnmConfig) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let positives = positive_features(&positive_images(40, 1), WINDOW, SHRINK).unwrap();
    let seeds = sample_seed_negatives(
        &negative_images(6, 2),
        config.seed_patches_per_negative_image,
        WINDOW,
        &config.pyramid,
        3,
    )
    .unwrap();
    (positives, seeds)
}

/// A 16×40 frame crossed by a dark vertical bar. It admits exactly three
/// window placements (one column, three rows, no coarser pyramid level) and
/// the seed model fires on all of them; mining can learn the bar away.
pub fn mineable_fixture() -> HnmFixture {
    let config = hnm_config();
    let (positives, seeds) = features(&config);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut image = noisy_gray(16, 40, 170, &mut rng);
    for y in 0..40 {
        for x in 5..11 {
            image.put_pixel(x, y, Rgb([40, 20, 13]));
        }
    }
    let frame = TrainingFrame::new(0, &image, vec![], &config.pyramid).unwrap();
    HnmFixture {
        positives,
        seeds,
        frame,
        image,
        config,
    }
}

/// One unannotated frame containing exact copies of positive crops, which
/// no linear model can separate from the positives.
pub fn inseparable_fixture() -> HnmFixture {
    let config = hnm_config();
    let (positives, seeds) = features(&config);
    let crops = positive_images(40, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut image = noisy_gray(96, 48, 170, &mut rng);
    for (k, x0) in [0u32, 32, 64].into_iter().enumerate() {
        image::imageops::replace(&mut image, &crops[k], x0 as i64, 0);
    }
    let frame = TrainingFrame::new(0, &image, vec![], &config.pyramid).unwrap();
    HnmFixture {
        positives,
        seeds,
        frame,
        image,
        config,
    }
}

pub fn bbox(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
    BoundingBox::new(x, y, w, h).unwrap()
}

/// Brute-force detection metrics: every distinct score threshold is
/// evaluated from scratch by re-matching only the detections at or above
/// it.
pub mod metric_oracle {
    use placefit::detector::{BoundingBox, Detection};

    pub struct Metrics {
        pub ap: f64,
        pub lamr: f64,
        pub max_f1: f64,
    }

    fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
        let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
        let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
        let inter = iw * ih;
        inter / (a.w * a.h + b.w * b.h - inter)
    }

    /// True positives among the detections scoring at least `t`.
    fn true_positives(dets: &[Detection], gt: &[BoundingBox], t: f64, iou_min: f64) -> (usize, usize) {
        let mut kept: Vec<(usize, &Detection)> = dets.iter().enumerate().filter(|(_, d)| d.score >= t).collect();
        kept.sort_by(|(ia, a), (ib, b)| b.score.partial_cmp(&a.score).unwrap().then(ia.cmp(ib)));
        let mut taken = vec![false; gt.len()];
        let mut tp = 0;
        for (_, d) in &kept {
            let mut best: Option<(usize, f64)> = None;
            for (g, b) in gt.iter().enumerate() {
                let o = iou(&d.bbox, b);
                if !taken[g] && o >= iou_min && best.map_or(true, |(_, bo)| o > bo) {
                    best = Some((g, o));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
                tp += 1;
            }
        }
        (tp, kept.len())
    }

    pub fn evaluate(images: &[(Vec<Detection>, Vec<BoundingBox>)], iou_min: f64) -> Metrics {
        let n_gt: usize = images.iter().map(|(_, g)| g.len()).sum();
        let n_img = images.len() as f64;
        let mut thresholds: Vec<f64> = images.iter().flat_map(|(d, _)| d.iter().map(|x| x.score)).collect();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();

        // (recall, precision, fppi, miss rate, f1) per threshold, strictest first.
        let points: Vec<(f64, f64, f64, f64, f64)> = thresholds
            .iter()
            .map(|&t| {
                let (tp, n) = images
                    .iter()
                    .map(|(d, g)| true_positives(d, g, t, iou_min))
                    .fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
                let fp = n - tp;
                let recall = tp as f64 / n_gt as f64;
                let f1 = 2.0 * tp as f64 / (n + n_gt) as f64;
                (recall, tp as f64 / n as f64, fp as f64 / n_img, 1.0 - recall, f1)
            })
            .collect();

        let mut ap = 0.0;
        let mut prev = 0.0;
        for p in &points {
            let best = points.iter().filter(|q| q.0 >= p.0).map(|q| q.1).fold(0.0, f64::max);
            ap += (p.0 - prev) * best;
            prev = p.0;
        }

        let mut log_sum = 0.0;
        for i in 0..9 {
            let s = 10f64.powf(-2.0 + 2.0 * i as f64 / 8.0);
            let mr = points.iter().filter(|p| p.2 <= s).map(|p| p.3).fold(1.0, f64::min);
            log_sum += mr.max(1e-4).ln();
        }
        Metrics {
            ap,
            lamr: (log_sum / 9.0).exp(),
            max_f1: points.iter().map(|p| p.4).fold(0.0, f64::max),
        }
    }
}

/// Best primal objective of the class-weighted L1-hinge SVM over a grid of
/// `(w, b)`, refined around the incumbent.
pub fn svm_grid_oracle(xs: &[Vec<f64>], ys: &[f64], cs: &[f64], c: f64) -> f64 {
    let d = xs[0].len();
    let obj = |p: &[f64]| {
        let (w, b) = (&p[..d], p[d]);
        let reg = 0.5 * (w.iter().map(|v| v * v).sum::<f64>() + b * b);
        let loss: f64 = xs
            .iter()
            .zip(ys)
            .zip(cs)
            .map(|((x, y), ci)| {
                let s: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
                ci * (1.0 - y * s).max(0.0)
            })
            .sum();
        reg + c * loss
    };
    let mut centre = vec![0.0; d + 1];
    let mut best = obj(&centre);
    let (mut half, mut steps) = (32.0, 64);
    for _ in 0..8 {
        let step = 2.0 * half / steps as f64;
        let mut incumbent = centre.clone();
        let mut idx = vec![0usize; d + 1];
        loop {
            let p: Vec<f64> = idx.iter().zip(&centre).map(|(&k, c0)| c0 - half + k as f64 * step).collect();
            let v = obj(&p);
            if v < best {
                best = v;
                incumbent = p;
            }
            let mut k = 0;
            while k <= d {
                idx[k] += 1;
                if idx[k] <= steps {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k > d {
                break;
            }
        }
        centre = incumbent;
        half = 2.0 * step;
        steps = 16;
    }
    best
}

/// Shannon entropy in bits of a value histogram.
pub fn entropy_bits(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    counts
        .iter()
        .filter(|&&k| k > 0)
        .map(|&k| {
            let p = k as f64 / n as f64;
            -p * p.log2()
        })
        .sum()
}

/// A random evaluation instance: 1–3 images holding at most 10 detections
/// and 5 ground-truth boxes in total. Scores come from a small set so ties
/// occur; detections are jittered copies of ground truth or free boxes.
pub fn random_eval_instance(rng: &mut ChaCha8Rng) -> Vec<(Vec<placefit::detector::Detection>, Vec<BoundingBox>)> {
    use placefit::detector::Detection;
    let n_images = rng.gen_range(1..=3);
    let n_gt = rng.gen_range(0..=5);
    let n_det = rng.gen_range(0..=10);
    let mut images: Vec<(Vec<Detection>, Vec<BoundingBox>)> = vec![(vec![], vec![]); n_images];
    for _ in 0..n_gt {
        let g = bbox(rng.gen_range(0..6) as f64 * 8.0, rng.gen_range(0..3) as f64 * 8.0, 16.0, 32.0);
        images[rng.gen_range(0..n_images)].1.push(g);
    }
    for _ in 0..n_det {
        let i = rng.gen_range(0..n_images);
        let b = match images[i].1.len() {
            k if k > 0 && rng.gen_bool(0.7) => {
                let g = images[i].1[rng.gen_range(0..k)];
                bbox(g.x + rng.gen_range(-8.0..8.0), g.y + rng.gen_range(-12.0..12.0), 16.0, 32.0)
            }
            _ => bbox(rng.gen_range(0.0..48.0), rng.gen_range(0.0..24.0), 16.0, 32.0),
        };
        images[i].0.push(Detection {
            bbox: b,
            score: rng.gen_range(0..6) as f64 * 0.5 - 1.0,
            level: 0,
        });
    }
    if n_gt == 0 {
        // Metrics need at least one ground-truth box.
        images[0].1.push(bbox(100.0, 100.0, 16.0, 32.0));
    }
    images
}

/// Blocky random colour image, so intensities are spatially correlated.
pub fn random_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RgbImage {
    let block = rng.gen_range(4..16);
    let cols = w.div_ceil(block) as usize;
    let rows = h.div_ceil(block) as usize;
    let palette: Vec<[u8; 3]> = (0..cols * rows).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    RgbImage::from_fn(w, h, |x, y| Rgb(palette[(y / block) as usize * cols + (x / block) as usize]))
}
