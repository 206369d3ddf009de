//! Aggregate channel features (ACF) and multi-scale feature pyramids.
//!
//! Every image is turned into ten channels:
//!
//! | index | channel                          | range   |
//! |-------|----------------------------------|---------|
//! | 0     | L (CIELUV, `L / 100`)            | [0, 1]  |
//! | 1     | u (`(u + 134) / 354`)            | [0, 1]  |
//! | 2     | v (`(v + 140) / 262`)            | [0, 1]  |
//! | 3     | gradient magnitude of L, `×√2`   | [0, 1]  |
//! | 4..10 | magnitude soft-binned by angle   | [0, 1]  |
//!
//! Input RGB bytes are scaled to `[0, 1]` and treated as linear, then mapped
//! to XYZ with the sRGB primaries and to LUV against the D65 white point.
//! Gradients use centred `[-1, 0, 1]` differences with replicated borders;
//! orientation is unsigned (`[0, π)`), with bin `k` centred on `k·π/6` and
//! each pixel's magnitude split linearly between the two nearest bins.
//!
//! Pixel channels are averaged over `shrink × shrink` blocks (remainder rows
//! and columns are dropped) and then smoothed once with a separable `[1 2 1]/4`
//! kernel, borders replicated.

use image::RgbImage;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{Plane, RgbPlanes};

pub const N_CHANNELS: usize = 10;
pub const N_ORIENTATIONS: usize = 6;
pub const DEFAULT_SHRINK: usize = 4;

pub const CH_L: usize = 0;
pub const CH_U: usize = 1;
pub const CH_V: usize = 2;
pub const CH_GRAD_MAG: usize = 3;
pub const CH_ORIENT0: usize = 4;

// D65 reference white, as u'v' chromaticity.
const WHITE_X: f64 = 0.950456;
const WHITE_Z: f64 = 1.088754;
const U_RANGE: (f64, f64) = (-134.0, 220.0);
const V_RANGE: (f64, f64) = (-140.0, 122.0);
const LAB_EPSILON: f64 = 0.008856;
const LAB_KAPPA: f64 = 903.3;

fn white_uv() -> (f64, f64) {
    let d = WHITE_X + 15.0 + 3.0 * WHITE_Z;
    (4.0 * WHITE_X / d, 9.0 / d)
}

/// Converts linear RGB in `[0, 1]` to CIELUV (`L` in `[0, 100]`).
pub fn rgb_to_luv(r: f64, g: f64, b: f64) -> [f64; 3] {
    let x = 0.412453 * r + 0.357580 * g + 0.180423 * b;
    let y = 0.212671 * r + 0.715160 * g + 0.072169 * b;
    let z = 0.019334 * r + 0.119193 * g + 0.950227 * b;
    let l = if y > LAB_EPSILON {
        116.0 * y.cbrt() - 16.0
    } else {
        LAB_KAPPA * y
    };
    let d = x + 15.0 * y + 3.0 * z;
    if d <= 0.0 {
        return [l, 0.0, 0.0];
    }
    let (un, vn) = white_uv();
    let u = 13.0 * l * (4.0 * x / d - un);
    let v = 13.0 * l * (9.0 * y / d - vn);
    [l, u, v]
}

/// Inverse of [`rgb_to_luv`]; the result may fall outside `[0, 1]` for
/// out-of-gamut colours.
pub fn luv_to_rgb(l: f64, u: f64, v: f64) -> [f64; 3] {
    if l <= 0.0 {
        return [0.0; 3];
    }
    let y = if l > LAB_KAPPA * LAB_EPSILON {
        ((l + 16.0) / 116.0).powi(3)
    } else {
        l / LAB_KAPPA
    };
    let (un, vn) = white_uv();
    let up = u / (13.0 * l) + un;
    let vp = v / (13.0 * l) + vn;
    let x = y * 9.0 * up / (4.0 * vp);
    let z = y * (12.0 - 3.0 * up - 20.0 * vp) / (4.0 * vp);
    [
        3.240479 * x - 1.537150 * y - 0.498535 * z,
        -0.969256 * x + 1.875992 * y + 0.041556 * z,
        0.055648 * x - 0.204043 * y + 1.057311 * z,
    ]
}

/// Maps raw LUV to the normalised `[0, 1]` channel ranges.
pub fn normalize_luv(luv: [f64; 3]) -> [f64; 3] {
    [
        luv[0] / 100.0,
        (luv[1] - U_RANGE.0) / (U_RANGE.1 - U_RANGE.0),
        (luv[2] - V_RANGE.0) / (V_RANGE.1 - V_RANGE.0),
    ]
}

/// Aggregated ten-channel features of one image at one scale.
///
/// Values are stored channel-major, then row, then column.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStack {
    pub width_cells: usize,
    pub height_cells: usize,
    pub shrink: usize,
    data: Vec<f64>,
}

impl ChannelStack {
    pub fn from_raw(
        width_cells: usize,
        height_cells: usize,
        shrink: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let expected = width_cells * height_cells * N_CHANNELS;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(ChannelStack {
            width_cells,
            height_cells,
            shrink,
            data,
        })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.width_cells * self.height_cells;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height_cells + y) * self.width_cells + x]
    }

    /// Row `y` of channel `c`, columns `x..x + len`.
    #[inline]
    pub fn row_slice(&self, c: usize, y: usize, x: usize, len: usize) -> &[f64] {
        let start = (c * self.height_cells + y) * self.width_cells + x;
        &self.data[start..start + len]
    }

    /// Flattened features of the `wc × hc` cell window at `(x, y)`, in
    /// channel, row, column order.
    pub fn window_features(&self, x: usize, y: usize, wc: usize, hc: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(wc * hc * N_CHANNELS);
        for c in 0..N_CHANNELS {
            for row in y..y + hc {
                out.extend_from_slice(self.row_slice(c, row, x, wc));
            }
        }
        out
    }
}

/// Computes the aggregated channel stack of an RGB image.
pub fn compute_channels(image: &RgbImage, shrink: usize) -> Result<ChannelStack> {
    channels_from_planes(&RgbPlanes::from_image(image), shrink)
}

pub(crate) fn channels_from_planes(rgb: &RgbPlanes, shrink: usize) -> Result<ChannelStack> {
    let (w, h) = (rgb.width(), rgb.height());
    if shrink == 0 {
        return Err(Error::InvalidInput("shrink must be at least 1".into()));
    }
    if w < shrink || h < shrink {
        return Err(Error::InvalidInput(format!(
            "{w}x{h} image is smaller than one {shrink}x{shrink} cell"
        )));
    }

    let mut l = Plane::new(w, h);
    let mut u = Plane::new(w, h);
    let mut v = Plane::new(w, h);
    for i in 0..w * h {
        let luv = rgb_to_luv(
            rgb.r.data[i] / 255.0,
            rgb.g.data[i] / 255.0,
            rgb.b.data[i] / 255.0,
        );
        let [nl, nu, nv] = normalize_luv(luv);
        l.data[i] = nl;
        u.data[i] = nu;
        v.data[i] = nv;
    }
    let (mag, orient) = gradient_channels(&l);

    let wc = w / shrink;
    let hc = h / shrink;
    let mut data = Vec::with_capacity(wc * hc * N_CHANNELS);
    for plane in [&l, &u, &v, &mag].into_iter().chain(orient.iter()) {
        data.extend(smooth_121(&aggregate(plane, shrink), wc, hc));
    }
    ChannelStack::from_raw(wc, hc, shrink, data)
}

/// Gradient magnitude (scaled by √2 so its maximum over `[0, 1]` input is 1)
/// and the six soft-binned orientation planes of `plane`.
pub fn gradient_channels(plane: &Plane) -> (Plane, Vec<Plane>) {
    let (w, h) = (plane.width, plane.height);
    let mut mag = Plane::new(w, h);
    let mut orient: Vec<Plane> = (0..N_ORIENTATIONS).map(|_| Plane::new(w, h)).collect();
    for y in 0..h {
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let gx = (plane.get(xp, y) - plane.get(xm, y)) * 0.5;
            let gy = (plane.get(x, yp) - plane.get(x, ym)) * 0.5;
            let m = (gx * gx + gy * gy).sqrt() * std::f64::consts::SQRT_2;
            mag.set(x, y, m);
            if m == 0.0 {
                continue;
            }
            let mut theta = gy.atan2(gx);
            if theta < 0.0 {
                theta += std::f64::consts::PI;
            }
            let o = theta / std::f64::consts::PI * N_ORIENTATIONS as f64;
            let o_floor = o.floor();
            let frac = o - o_floor;
            let b0 = (o_floor as usize) % N_ORIENTATIONS;
            let b1 = (b0 + 1) % N_ORIENTATIONS;
            let i = y * w + x;
            orient[b0].data[i] += m * (1.0 - frac);
            orient[b1].data[i] += m * frac;
        }
    }
    (mag, orient)
}

/// Block means over `shrink × shrink` cells, row-major.
fn aggregate(plane: &Plane, shrink: usize) -> Vec<f64> {
    let wc = plane.width / shrink;
    let hc = plane.height / shrink;
    let mut out = vec![0.0; wc * hc];
    let norm = 1.0 / (shrink * shrink) as f64;
    for cy in 0..hc {
        for py in cy * shrink..(cy + 1) * shrink {
            let row = &plane.data[py * plane.width..py * plane.width + wc * shrink];
            for (cx, block) in row.chunks_exact(shrink).enumerate() {
                out[cy * wc + cx] += block.iter().sum::<f64>();
            }
        }
    }
    for v in &mut out {
        *v *= norm;
    }
    out
}

fn smooth_121(cells: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let l = cells[y * w + x.saturating_sub(1)];
            let r = cells[y * w + (x + 1).min(w - 1)];
            tmp[y * w + x] = 0.25 * l + 0.5 * cells[y * w + x] + 0.25 * r;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let up = y.saturating_sub(1);
        let down = (y + 1).min(h - 1);
        for x in 0..w {
            out[y * w + x] = 0.25 * tmp[up * w + x] + 0.5 * tmp[y * w + x] + 0.25 * tmp[down * w + x];
        }
    }
    out
}

/// Multi-scale pyramid settings.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PyramidConfig {
    pub scales_per_octave: usize,
    /// Smallest window (width, height) in pixels each level must contain.
    pub min_window: (usize, usize),
    pub shrink: usize,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig {
            scales_per_octave: 8,
            min_window: (64, 128),
            shrink: DEFAULT_SHRINK,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidLevel {
    pub scale: f64,
    /// Size of the resampled image this level was computed from.
    pub width_px: usize,
    pub height_px: usize,
    pub stack: ChannelStack,
}

/// Channel stacks at geometrically decreasing scales, largest first.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<PyramidLevel>,
}

/// Scales `2^(-k / scales_per_octave)` and resampled sizes for every level
/// of a `width × height` image.
pub fn pyramid_scales(
    width: usize,
    height: usize,
    config: &PyramidConfig,
) -> Result<Vec<(f64, usize, usize)>> {
    if config.scales_per_octave == 0 {
        return Err(Error::InvalidInput("scales_per_octave must be at least 1".into()));
    }
    let (mw, mh) = config.min_window;
    if width < mw || height < mh {
        return Err(Error::InvalidInput(format!(
            "{width}x{height} image cannot contain the {mw}x{mh} window"
        )));
    }
    let mut out = Vec::new();
    for k in 0.. {
        let scale = (-(k as f64) / config.scales_per_octave as f64).exp2();
        let rw = (width as f64 * scale).round() as usize;
        let rh = (height as f64 * scale).round() as usize;
        if rw < mw || rh < mh || rw < config.shrink || rh < config.shrink {
            break;
        }
        out.push((scale, rw, rh));
    }
    Ok(out)
}

/// Builds a feature pyramid; each level is computed from a bilinearly
/// resampled copy of the image.
pub fn build_pyramid(image: &RgbImage, config: &PyramidConfig) -> Result<FeaturePyramid> {
    let rgb = RgbPlanes::from_image(image);
    let scales = pyramid_scales(rgb.width(), rgb.height(), config)?;
    let levels = scales
        .into_par_iter()
        .map(|(scale, rw, rh)| {
            let stack = channels_from_planes(&rgb.resize(rw, rh), config.shrink)?;
            Ok(PyramidLevel {
                scale,
                width_px: rw,
                height_px: rh,
                stack,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeaturePyramid { levels })
}
