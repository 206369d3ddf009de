//! Deterministic synthetic route.
//!
//! A closed loop is split into `n_places` consecutive stretches. Each place
//! has its own background: a neutral-gray luminance grating whose
//! orientation family is `π·p / n_places`, drifting slowly in orientation
//! and frequency along the stretch and scrolling with route position.
//!
//! Pedestrians are dark neutral articulated figures. Each place also hosts
//! distractors: the same figures at the same luminance but tinted with the
//! place's hue. Hues are spread evenly around the chroma circle, so the
//! pedestrian's colour channels sit at the centroid of the distractors'.
//! Against one place's distractors a linear model on the channel features
//! separates pedestrians along that place's hue direction; against all
//! places at once no linear direction exists, because every direction that
//! lowers one hue raises another.
//!
//! Everything is a pure function of the config: each frame, crop and
//! negative image draws from its own ChaCha stream.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, NamedImage};
use crate::channels::{luv_to_rgb, rgb_to_luv};
use crate::detector::BoundingBox;
use crate::error::{Error, Result};
use crate::placebank::{FrameRecord, Pose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_places: usize,
    pub frames_per_place: usize,
    pub n_laps: usize,
    /// Standard deviation (m) of the isotropic pose offset of later laps
    /// relative to lap 0, truncated at 3σ. The default puts the median
    /// cross-lap offset at 0.4 m.
    pub pose_noise_sigma: f64,
    pub pedestrian_rate: f64,
    /// Probability that a frame contains distractors.
    pub distractor_rate: f64,
    pub rng_seed: u64,
    pub image_size: (usize, usize),
    /// Distance between consecutive frames along the route (m).
    pub frame_spacing_m: f64,
    pub speed_mps: f64,
    /// Height range of figures in frames, pixels; widths are half.
    pub figure_height: (usize, usize),
    pub n_positives: usize,
    /// Window the positive crops are made for, pixels.
    pub positive_window: (usize, usize),
    /// Context around the window in each positive crop, pixels per side.
    pub positive_margin: usize,
    pub n_negative_images: usize,
    /// Per-pixel gray noise standard deviation, byte units.
    pub pixel_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_places: 3,
            frames_per_place: 100,
            n_laps: 2,
            pose_noise_sigma: 0.34,
            pedestrian_rate: 0.5,
            distractor_rate: 0.6,
            rng_seed: 0,
            image_size: (128, 96),
            frame_spacing_m: 2.15,
            speed_mps: 4.3,
            figure_height: (32, 44),
            n_positives: 200,
            positive_window: (16, 32),
            positive_margin: 8,
            n_negative_images: 20,
            pixel_noise: 3.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_places", self.n_places),
            ("frames_per_place", self.frames_per_place),
            ("n_laps", self.n_laps),
            ("n_positives", self.n_positives),
            ("n_negative_images", self.n_negative_images),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidInput(format!("{name} must be at least 1")));
            }
        }
        for (name, p) in [("pedestrian_rate", self.pedestrian_rate), ("distractor_rate", self.distractor_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidInput(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        for (name, v) in [
            ("pose_noise_sigma", self.pose_noise_sigma),
            ("frame_spacing_m", self.frame_spacing_m),
            ("speed_mps", self.speed_mps),
            ("pixel_noise", self.pixel_noise),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!("{name} must be finite and non-negative")));
            }
        }
        if self.frame_spacing_m == 0.0 || self.speed_mps == 0.0 {
            return Err(Error::InvalidInput("frame spacing and speed must be positive".into()));
        }
        let (w, h) = self.image_size;
        let (hmin, hmax) = self.figure_height;
        if hmin < 4 || hmin > hmax || hmax > h || hmax / 2 > w {
            return Err(Error::InvalidInput(format!(
                "figure heights {hmin}..={hmax} do not fit a {w}x{h} image"
            )));
        }
        if self.positive_window.0 == 0 || self.positive_window.1 == 0 {
            return Err(Error::InvalidInput("positive window must be non-empty".into()));
        }
        Ok(())
    }

    pub fn frames_per_lap(&self) -> usize {
        self.n_places * self.frames_per_place
    }

    /// Place of the frame at position `index` within its lap.
    pub fn place_of_index(&self, index: usize) -> usize {
        (index / self.frames_per_place).min(self.n_places - 1)
    }

    /// Place of a generated frame id.
    pub fn place_of_frame(&self, frame_id: u32) -> usize {
        self.place_of_index(frame_id as usize % self.frames_per_lap())
    }

    fn route_length(&self) -> f64 {
        self.frames_per_lap() as f64 * self.frame_spacing_m
    }
}

// Stream ids keep every component of the dataset independent of the others.
const STREAM_FRAME: u64 = 1 << 32;
const STREAM_POSITIVE: u64 = 2 << 32;
const STREAM_NEGATIVE: u64 = 3 << 32;
const STREAM_POSE: u64 = 4 << 32;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller; one draw per call keeps streams simple to reason about.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Colours shared by every figure: the neutral pedestrian and one tinted
/// distractor per place, all at the same luminance.
#[derive(Clone, Debug)]
struct Palette {
    pedestrian: [f64; 3],
    distractors: Vec<[f64; 3]>,
}

const FIGURE_LIGHTNESS: f64 = 50.0;

fn luminance_bytes(c: [f64; 3]) -> f64 {
    0.212671 * c[0] + 0.715160 * c[1] + 0.072169 * c[2]
}

fn chroma_bytes(c: [f64; 3]) -> (f64, f64) {
    let luv = rgb_to_luv(c[0] / 255.0, c[1] / 255.0, c[2] / 255.0);
    (luv[1], luv[2])
}

fn in_gamut(c: [f64; 3]) -> bool {
    c.iter().all(|v| (0.0..=1.0).contains(v))
}

impl Palette {
    /// Byte colours are chosen so that every distractor matches the
    /// pedestrian's luminance and the distractors' mean chroma is as close
    /// to neutral as byte quantisation allows.
    fn new(n_places: usize) -> Palette {
        let y = ((FIGURE_LIGHTNESS + 16.0) / 116.0).powi(3);
        let gray = (y * 255.0).round();
        let pedestrian = [gray; 3];
        let l = rgb_to_luv(gray / 255.0, gray / 255.0, gray / 255.0)[0];
        let hue = |p: usize| 2.0 * PI * p as f64 / n_places as f64;

        let mut radius: f64 = 0.0;
        while (0..n_places).all(|p| {
            let r = radius + 1.0;
            in_gamut(luv_to_rgb(l, r * hue(p).cos(), r * hue(p).sin()))
        }) && radius < 150.0
        {
            radius += 1.0;
        }
        let radius = 0.8 * radius;

        // Candidate byte colours near each ideal tint with matching luminance.
        let candidates: Vec<Vec<[f64; 3]>> = (0..n_places)
            .map(|p| {
                let ideal = luv_to_rgb(l, radius * hue(p).cos(), radius * hue(p).sin());
                let base = ideal.map(|v| (v * 255.0).round());
                let mut out = Vec::new();
                for dr in -20..=20 {
                    for dg in -20..=20 {
                        for db in -20..=20 {
                            let c = [base[0] + dr as f64, base[1] + dg as f64, base[2] + db as f64];
                            if c.iter().all(|v| (0.0..=255.0).contains(v)) {
                                out.push(c);
                            }
                        }
                    }
                }
                out.retain(|c| (luminance_bytes(*c) - gray).abs() < 0.02);
                out
            })
            .collect();

        // Coordinate descent on the chroma imbalance, lightly anchored to
        // the ideal tints so the hues stay evenly spread.
        let chroma: Vec<Vec<(f64, f64)>> = candidates
            .iter()
            .map(|cs| cs.iter().map(|c| chroma_bytes(*c)).collect())
            .collect();
        let ideal: Vec<(f64, f64)> = (0..n_places).map(|p| (radius * hue(p).cos(), radius * hue(p).sin())).collect();
        let cost = |pick: &[usize]| {
            let (mut su, mut sv, mut drift) = (0.0, 0.0, 0.0);
            for (p, &k) in pick.iter().enumerate() {
                let (u, v) = chroma[p][k];
                su += u;
                sv += v;
                drift += (u - ideal[p].0).hypot(v - ideal[p].1);
            }
            su.hypot(sv) + 0.02 * drift
        };
        let mut pick: Vec<usize> = (0..n_places)
            .map(|p| {
                (0..chroma[p].len())
                    .min_by(|&a, &b| {
                        let d = |k: usize| (chroma[p][k].0 - ideal[p].0).hypot(chroma[p][k].1 - ideal[p].1);
                        d(a).total_cmp(&d(b))
                    })
                    .expect("luminance-matched candidates exist")
            })
            .collect();
        // Pairwise moves: single-colour moves stall on the coarse byte grid.
        for _ in 0..4 {
            for p in 0..n_places {
                for q in p..n_places {
                    let mut best = (cost(&pick), pick[p], pick[q]);
                    for k in 0..chroma[p].len() {
                        pick[p] = k;
                        let ls: Vec<usize> = if q == p { vec![k] } else { (0..chroma[q].len()).collect() };
                        for l in ls {
                            pick[q] = l;
                            let e = cost(&pick);
                            if e < best.0 {
                                best = (e, k, l);
                            }
                        }
                    }
                    pick[p] = best.1;
                    pick[q] = best.2;
                }
            }
        }
        Palette {
            pedestrian,
            distractors: pick.iter().enumerate().map(|(p, &k)| candidates[p][k]).collect(),
        }
    }
}

/// Limb and head layout of one figure, in units of its box height.
#[derive(Clone, Copy, Debug)]
struct Articulation {
    leg_spread: f64,
    arm_swing: f64,
    lean: f64,
}

impl Articulation {
    fn random(rng: &mut impl Rng) -> Self {
        Articulation {
            leg_spread: rng.gen_range(0.02..0.14),
            arm_swing: rng.gen_range(-0.10..0.10),
            lean: rng.gen_range(-0.03..0.03),
        }
    }
}

fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let t = (((px - a.0) * dx + (py - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    (px - a.0 - t * dx).hypot(py - a.1 - t * dy)
}

/// Whether normalised point `(u, v)` (box width 0.5, height 1) lies on the
/// figure.
fn on_figure(u: f64, v: f64, art: &Articulation) -> bool {
    let cx = 0.25 + art.lean * (0.6 - v);
    if (u - (0.25 + art.lean * 0.5)).hypot(v - 0.12) < 0.075 {
        return true;
    }
    if (u - cx).abs() < 0.075 && (0.19..0.58).contains(&v) {
        return true;
    }
    let hip = (0.25, 0.56);
    for s in [-1.0, 1.0] {
        if segment_distance(u, v, hip, (0.25 + s * art.leg_spread, 0.96)) < 0.04 {
            return true;
        }
        let shoulder = (0.25 + s * 0.07 + art.lean * 0.35, 0.24);
        let hand = (0.25 + s * 0.11 + art.arm_swing * s, 0.52);
        if segment_distance(u, v, shoulder, hand) < 0.03 {
            return true;
        }
    }
    false
}

/// Draws a figure filling `bbox` with 4×4 supersampled coverage.
fn draw_figure(img: &mut [[f64; 3]], width: usize, bbox: &BoundingBox, colour: [f64; 3], art: &Articulation) {
    const SS: usize = 4;
    let height = img.len() / width;
    let x0 = bbox.x.floor().max(0.0) as usize;
    let y0 = bbox.y.floor().max(0.0) as usize;
    let x1 = ((bbox.x + bbox.w).ceil() as usize).min(width);
    let y1 = ((bbox.y + bbox.h).ceil() as usize).min(height);
    for py in y0..y1 {
        for px in x0..x1 {
            let mut hits = 0;
            for sy in 0..SS {
                for sx in 0..SS {
                    let x = px as f64 + (sx as f64 + 0.5) / SS as f64;
                    let y = py as f64 + (sy as f64 + 0.5) / SS as f64;
                    let u = (x - bbox.x) / bbox.h;
                    let v = (y - bbox.y) / bbox.h;
                    if (0.0..0.5).contains(&u) && (0.0..1.0).contains(&v) && on_figure(u, v, art) {
                        hits += 1;
                    }
                }
            }
            if hits > 0 {
                let a = hits as f64 / (SS * SS) as f64;
                let p = &mut img[py * width + px];
                for c in 0..3 {
                    p[c] = (1.0 - a) * p[c] + a * colour[c];
                }
            }
        }
    }
}

/// Gray grating with orientation `theta`, period `period` px and phase.
fn grating(width: usize, height: usize, theta: f64, period: f64, phase: f64) -> Vec<[f64; 3]> {
    let (c, s) = (theta.cos(), theta.sin());
    let k = 2.0 * PI / period;
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let t = k * (x as f64 * c + y as f64 * s) + phase;
            let g = 150.0 + 42.0 * t.sin() + 12.0 * (2.0 * t + 0.7).sin();
            out.push([g; 3]);
        }
    }
    out
}

/// Background of place `place` at fractional position `t ∈ [0, 1)` within
/// it, seen from route position `s` metres.
fn place_background(cfg: &SynthConfig, place: usize, t: f64, s: f64) -> Vec<[f64; 3]> {
    let theta = PI * place as f64 / cfg.n_places as f64 + (t - 0.5) * 40f64.to_radians();
    let period = 14.0 * (1.0 + 0.3 * (t - 0.5));
    let phase = 2.0 * PI * s / 6.0;
    let (w, h) = cfg.image_size;
    grating(w, h, theta, period, phase)
}

fn finish(pixels: &[[f64; 3]], width: usize, noise: f64, rng: &mut impl Rng) -> RgbImage {
    let height = pixels.len() / width;
    RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let p = pixels[y as usize * width + x as usize];
        let n = if noise > 0.0 { noise * gaussian(rng) } else { 0.0 };
        Rgb(p.map(|v| (v + n).round().clamp(0.0, 255.0) as u8))
    })
}

/// Places up to `count` non-overlapping figure boxes avoiding `taken`.
fn place_boxes(cfg: &SynthConfig, count: usize, taken: &[BoundingBox], rng: &mut impl Rng) -> Vec<BoundingBox> {
    let (w, h) = cfg.image_size;
    let mut out = Vec::new();
    for _ in 0..count {
        for _attempt in 0..50 {
            let bh = rng.gen_range(cfg.figure_height.0 / 2..=cfg.figure_height.1 / 2) * 2;
            let bw = bh / 2;
            let x = rng.gen_range(0..=w - bw) as f64;
            let y = rng.gen_range(0..=h - bh) as f64;
            let b = BoundingBox::new(x, y, bw as f64, bh as f64).expect("positive size");
            if taken.iter().chain(out.iter()).all(|o| b.intersection(o) == 0.0) {
                out.push(b);
                break;
            }
        }
    }
    out
}

struct RenderedFrame {
    record: FrameRecord,
    image: RgbImage,
    boxes: Vec<BoundingBox>,
}

fn render_frame(cfg: &SynthConfig, palette: &Palette, lap: usize, index: usize) -> RenderedFrame {
    let per_lap = cfg.frames_per_lap();
    let frame_id = (lap * per_lap + index) as u32;
    let mut rng = rng_for(cfg.rng_seed, STREAM_FRAME + frame_id as u64);

    // Later laps are displaced from lap 0 by a truncated isotropic offset.
    let mut pose_rng = rng_for(cfg.rng_seed, STREAM_POSE + frame_id as u64);
    let (dx, dy) = if lap == 0 || cfg.pose_noise_sigma == 0.0 {
        (0.0, 0.0)
    } else {
        loop {
            let (a, b) = (gaussian(&mut pose_rng), gaussian(&mut pose_rng));
            if a.hypot(b) <= 3.0 {
                break (a * cfg.pose_noise_sigma, b * cfg.pose_noise_sigma);
            }
        }
    };
    let length = cfg.route_length();
    let radius = length / (2.0 * PI);
    let s = index as f64 * cfg.frame_spacing_m;
    let angle = s / radius;
    let heading = angle + PI / 2.0;
    let x = radius * angle.cos() + dx;
    let y = radius * angle.sin() + dy;
    // Along-track component of the offset shifts what the camera sees.
    let s_seen = s + dx * heading.cos() + dy * heading.sin();

    let place = cfg.place_of_index(index);
    let t = (index - place * cfg.frames_per_place) as f64 / cfg.frames_per_place as f64;
    let mut pixels = place_background(cfg, place, t, s_seen);
    let (w, _) = cfg.image_size;

    let n_ped = if rng.gen_bool(cfg.pedestrian_rate) { rng.gen_range(1..=2) } else { 0 };
    let boxes = place_boxes(cfg, n_ped, &[], &mut rng);
    for b in &boxes {
        let art = Articulation::random(&mut rng);
        draw_figure(&mut pixels, w, b, palette.pedestrian, &art);
    }
    let n_dis = if rng.gen_bool(cfg.distractor_rate) { rng.gen_range(1..=2) } else { 0 };
    for b in place_boxes(cfg, n_dis, &boxes, &mut rng) {
        let art = Articulation::random(&mut rng);
        draw_figure(&mut pixels, w, &b, palette.distractors[place], &art);
    }
    let image = finish(&pixels, w, cfg.pixel_noise, &mut rng);

    let dt_us = (cfg.frame_spacing_m / cfg.speed_mps * 1e6).round() as i64;
    RenderedFrame {
        record: FrameRecord {
            frame_id,
            lap_id: lap as u32,
            timestamp_us: (lap * per_lap + index) as i64 * dt_us,
            pose: Pose { x, y, heading },
            image_ref: format!("frames/lap{lap}/{frame_id:06}.png"),
        },
        image,
        boxes,
    }
}

fn render_positive(cfg: &SynthConfig, palette: &Palette, k: usize) -> RgbImage {
    let mut rng = rng_for(cfg.rng_seed, STREAM_POSITIVE + k as u64);
    let (ww, wh) = cfg.positive_window;
    let m = cfg.positive_margin;
    let (cw, ch) = (ww + 2 * m, wh + 2 * m);
    let place = rng.gen_range(0..cfg.n_places);
    let t: f64 = rng.gen();
    let s = rng.gen_range(0.0..cfg.route_length());
    let bg = place_background(cfg, place, t, s);
    let (fw, _) = cfg.image_size;
    let ox = rng.gen_range(0..=fw - cw.min(fw));
    let oy = rng.gen_range(0..=bg.len() / fw - ch.min(bg.len() / fw));
    let mut pixels: Vec<[f64; 3]> = (0..ch)
        .flat_map(|y| (0..cw).map(move |x| (x, y)))
        .map(|(x, y)| bg[((oy + y) % (bg.len() / fw)) * fw + (ox + x) % fw])
        .collect();
    // Small jitter in scale and position around the window.
    let scale = rng.gen_range(0.95..1.05);
    let bh = wh as f64 * scale;
    let bw = bh / 2.0;
    let bx = m as f64 + (ww as f64 - bw) / 2.0 + rng.gen_range(-0.5..0.5);
    let by = m as f64 + (wh as f64 - bh) / 2.0 + rng.gen_range(-0.5..0.5);
    let bbox = BoundingBox::new(bx, by, bw, bh).expect("positive size");
    draw_figure(&mut pixels, cw, &bbox, palette.pedestrian, &Articulation::random(&mut rng));
    finish(&pixels, cw, cfg.pixel_noise, &mut rng)
}

fn render_negative(cfg: &SynthConfig, k: usize) -> RgbImage {
    let mut rng = rng_for(cfg.rng_seed, STREAM_NEGATIVE + k as u64);
    let (w, h) = cfg.image_size;
    let theta = rng.gen_range(0.0..PI);
    let period = rng.gen_range(8.0..24.0);
    let mut pixels = grating(w, h, theta, period, rng.gen_range(0.0..2.0 * PI));
    // Gray clutter blocks.
    for _ in 0..rng.gen_range(2..6) {
        let bw = rng.gen_range(6..w / 3);
        let bh = rng.gen_range(6..h / 2);
        let x0 = rng.gen_range(0..w - bw);
        let y0 = rng.gen_range(0..h - bh);
        let g = rng.gen_range(30.0..230.0);
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                pixels[y * w + x] = [g; 3];
            }
        }
    }
    finish(&pixels, w, cfg.pixel_noise, &mut rng)
}

/// Renders the full synthetic dataset described by `cfg`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let palette = Palette::new(cfg.n_places);
    let per_lap = cfg.frames_per_lap();
    let rendered: Vec<RenderedFrame> = (0..cfg.n_laps * per_lap)
        .into_par_iter()
        .map(|k| render_frame(cfg, &palette, k / per_lap, k % per_lap))
        .collect();
    let positives = (0..cfg.n_positives)
        .into_par_iter()
        .map(|k| NamedImage {
            path: format!("positives/{k:05}.png"),
            image: render_positive(cfg, &palette, k),
        })
        .collect();
    let negative_images = (0..cfg.n_negative_images)
        .into_par_iter()
        .map(|k| NamedImage {
            path: format!("negatives/{k:05}.png"),
            image: render_negative(cfg, k),
        })
        .collect();

    let mut frames = Vec::with_capacity(rendered.len());
    let mut frame_images = Vec::with_capacity(rendered.len());
    let mut annotations = BTreeMap::new();
    for r in rendered {
        annotations.insert(r.record.frame_id, r.boxes);
        frames.push(r.record);
        frame_images.push(r.image);
    }
    Ok(Dataset {
        frames,
        frame_images,
        annotations,
        negative_images,
        positives,
    })
}
