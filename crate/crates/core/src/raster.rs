//! Floating-point image planes and bilinear resampling.

use image::RgbImage;

/// A single-channel image of `f64` samples stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Plane {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear resample to `width`×`height`, pixel-centre aligned.
    /// Resampling to the current size returns an exact copy.
    pub fn resize(&self, width: usize, height: usize) -> Plane {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let xs = sample_positions(self.width, width);
        let ys = sample_positions(self.height, height);
        let mut out = Plane::new(width, height);
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
                let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
                out.set(ox, oy, top * (1.0 - fy) + bottom * fy);
            }
        }
        out
    }
}

fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Red, green and blue planes with samples in `[0, 255]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbPlanes {
    pub r: Plane,
    pub g: Plane,
    pub b: Plane,
}

impl RgbPlanes {
    pub fn from_image(image: &RgbImage) -> Self {
        let (w, h) = (image.width() as usize, image.height() as usize);
        let mut r = Plane::new(w, h);
        let mut g = Plane::new(w, h);
        let mut b = Plane::new(w, h);
        for (i, px) in image.pixels().enumerate() {
            r.data[i] = px[0] as f64;
            g.data[i] = px[1] as f64;
            b.data[i] = px[2] as f64;
        }
        RgbPlanes { r, g, b }
    }

    pub fn width(&self) -> usize {
        self.r.width
    }

    pub fn height(&self) -> usize {
        self.r.height
    }

    pub fn resize(&self, width: usize, height: usize) -> Self {
        RgbPlanes {
            r: self.r.resize(width, height),
            g: self.g.resize(width, height),
            b: self.b.resize(width, height),
        }
    }
}

/// ITU-R BT.601 luma in `[0, 255]`.
pub fn grayscale(image: &RgbImage) -> Plane {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut out = Plane::new(w, h);
    for (i, px) in image.pixels().enumerate() {
        out.data[i] = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
    }
    out
}
