//! Whole-image similarity: GIST descriptors compared by ℓ2 distance, and
//! mutual information between intensity images.

use std::io::{Read, Write};

use image::RgbImage;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{grayscale, Plane};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GistConfig {
    pub scales: usize,
    pub orientations: usize,
    pub grid: usize,
    pub working_size: (usize, usize),
}

impl Default for GistConfig {
    fn default() -> Self {
        GistConfig {
            scales: 4,
            orientations: 8,
            grid: 4,
            working_size: (128, 128),
        }
    }
}

impl GistConfig {
    pub fn dim(&self) -> usize {
        self.scales * self.orientations * self.grid * self.grid
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GistDescriptor {
    pub values: Vec<f64>,
}

/// Frequency-domain transfer functions of the oriented band-pass bank, one
/// per (scale, orientation), laid out like the FFT output (row-major, DC at
/// index 0). Scale `s` peaks at `0.3 / 1.85^s` cycles per pixel and
/// orientation `o` at angle `-o·π/orientations`; the DC term is zeroed.
pub fn gabor_bank(config: &GistConfig) -> Vec<Vec<f64>> {
    let (w, h) = config.working_size;
    let n_orient = config.orientations as f64;
    let angular = 16.0 * n_orient * n_orient / (32.0 * 32.0);
    let mut bank = Vec::with_capacity(config.scales * config.orientations);
    for s in 0..config.scales {
        let centre = 0.3 / 1.85f64.powi(s as i32);
        for o in 0..config.orientations {
            let theta = std::f64::consts::PI / n_orient * o as f64;
            let mut g = vec![0.0; w * h];
            for ky in 0..h {
                let fy = signed_freq(ky, h) / h as f64;
                for kx in 0..w {
                    if kx == 0 && ky == 0 {
                        continue;
                    }
                    let fx = signed_freq(kx, w) / w as f64;
                    let fr = (fx * fx + fy * fy).sqrt();
                    let mut t = fy.atan2(fx) + theta;
                    if t < -std::f64::consts::PI {
                        t += 2.0 * std::f64::consts::PI;
                    } else if t > std::f64::consts::PI {
                        t -= 2.0 * std::f64::consts::PI;
                    }
                    g[ky * w + kx] = (-10.0 * 0.35 * (fr / centre - 1.0).powi(2)
                        - 2.0 * angular * std::f64::consts::PI * t * t)
                        .exp();
                }
            }
            bank.push(g);
        }
    }
    bank
}

fn signed_freq(k: usize, n: usize) -> f64 {
    if k < n.div_ceil(2) {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Reusable GIST extractor holding the FFT plans and filter bank.
pub struct GistExtractor {
    config: GistConfig,
    bank: Vec<Vec<f64>>,
    planner: std::sync::Mutex<FftPlanner<f64>>,
}

impl GistExtractor {
    pub fn new(config: GistConfig) -> Result<Self> {
        let (w, h) = config.working_size;
        if config.scales == 0 || config.orientations == 0 || config.grid == 0 || w < config.grid || h < config.grid {
            return Err(Error::InvalidInput(format!("degenerate GIST configuration {config:?}")));
        }
        Ok(GistExtractor {
            bank: gabor_bank(&config),
            config,
            planner: std::sync::Mutex::new(FftPlanner::new()),
        })
    }

    pub fn config(&self) -> &GistConfig {
        &self.config
    }

    pub fn describe(&self, image: &RgbImage) -> Result<GistDescriptor> {
        if image.width() == 0 || image.height() == 0 {
            return Err(Error::InvalidInput("empty image".into()));
        }
        let (w, h) = self.config.working_size;
        let gray = grayscale(image).resize(w, h);
        self.describe_plane(&gray)
    }

    /// Descriptor of an intensity plane already at the working size, with
    /// samples in `[0, 255]`.
    pub fn describe_plane(&self, gray: &Plane) -> Result<GistDescriptor> {
        let (w, h) = self.config.working_size;
        if gray.width != w || gray.height != h {
            return Err(Error::DimensionMismatch {
                expected: w * h,
                actual: gray.width * gray.height,
            });
        }
        let (fwd_row, fwd_col, inv_row, inv_col) = {
            let mut p = self.planner.lock().expect("planner lock");
            (p.plan_fft_forward(w), p.plan_fft_forward(h), p.plan_fft_inverse(w), p.plan_fft_inverse(h))
        };
        let mut spectrum: Vec<Complex<f64>> = gray.data.iter().map(|&v| Complex::new(v / 255.0, 0.0)).collect();
        fft2(&mut spectrum, w, h, &*fwd_row, &*fwd_col);

        let grid = self.config.grid;
        let norm = 1.0 / (w * h) as f64;
        let mut values = Vec::with_capacity(self.config.dim());
        let mut buf = vec![Complex::new(0.0, 0.0); w * h];
        for g in &self.bank {
            for ((b, s), gv) in buf.iter_mut().zip(&spectrum).zip(g) {
                *b = s * gv;
            }
            fft2(&mut buf, w, h, &*inv_row, &*inv_col);
            for gy in 0..grid {
                let (y0, y1) = (gy * h / grid, (gy + 1) * h / grid);
                for gx in 0..grid {
                    let (x0, x1) = (gx * w / grid, (gx + 1) * w / grid);
                    let mut sum = 0.0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            sum += buf[y * w + x].norm_sqr().sqrt();
                        }
                    }
                    values.push(sum * norm / ((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
        Ok(GistDescriptor { values })
    }
}

fn fft2(
    data: &mut [Complex<f64>],
    w: usize,
    h: usize,
    row: &dyn rustfft::Fft<f64>,
    col: &dyn rustfft::Fft<f64>,
) {
    // Rows in one batched pass, then columns via a transpose so they are
    // contiguous too.
    row.process(data);
    let mut t = vec![Complex::new(0.0, 0.0); w * h];
    transpose::transpose(data, &mut t, w, h);
    col.process(&mut t);
    transpose::transpose(&t, data, h, w);
}

/// GIST descriptor with a one-off extractor.
pub fn gist_descriptor(image: &RgbImage, config: &GistConfig) -> Result<GistDescriptor> {
    GistExtractor::new(*config)?.describe(image)
}

/// Euclidean distance between two descriptors.
pub fn gist_distance(a: &GistDescriptor, b: &GistDescriptor) -> Result<f64> {
    l2_distance(&a.values, &b.values)
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiConfig {
    pub bins: usize,
    pub working_size: (usize, usize),
}

impl Default for MiConfig {
    fn default() -> Self {
        MiConfig {
            bins: 32,
            working_size: (128, 128),
        }
    }
}

/// Intensities resized to the working size and quantised into equal-width
/// bins over `[0, 255]`.
pub fn quantize_intensity(image: &RgbImage, config: &MiConfig) -> Vec<u16> {
    let (w, h) = config.working_size;
    grayscale(image)
        .resize(w, h)
        .data
        .iter()
        .map(|&v| ((v / 256.0 * config.bins as f64).floor().max(0.0) as usize).min(config.bins - 1) as u16)
        .collect()
}

/// Plug-in mutual information (bits) between two quantised images of equal size.
pub fn mutual_information_quantized(a: &[u16], b: &[u16], bins: usize) -> f64 {
    let mut joint = vec![0u32; bins * bins];
    let mut pa = vec![0u32; bins];
    let mut pb = vec![0u32; bins];
    for (&x, &y) in a.iter().zip(b) {
        joint[x as usize * bins + y as usize] += 1;
        pa[x as usize] += 1;
        pb[y as usize] += 1;
    }
    let n = a.len() as f64;
    let mut mi = 0.0;
    for i in 0..bins {
        if pa[i] == 0 {
            continue;
        }
        for j in 0..bins {
            let c = joint[i * bins + j];
            if c == 0 {
                continue;
            }
            let pab = c as f64 / n;
            mi += pab * (pab * n * n / (pa[i] as f64 * pb[j] as f64)).log2();
        }
    }
    mi
}

/// Mutual information in bits between the intensities of two images.
pub fn mutual_information(a: &RgbImage, b: &RgbImage, config: &MiConfig) -> f64 {
    mutual_information_quantized(&quantize_intensity(a, config), &quantize_intensity(b, config), config.bins)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMetric {
    GistL2,
    MutualInformation,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub gist: GistConfig,
    pub mi: MiConfig,
}

/// All-pairs distances; for mutual information the distance is `-MI`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub metric: SimilarityMetric,
    n: usize,
    distances: Vec<f64>,
}

const SIM_MAGIC: &[u8; 8] = b"PFSIMMAT";
const SIM_VERSION: u32 = 1;

impl SimilarityMatrix {
    pub fn from_distances(metric: SimilarityMetric, n: usize, distances: Vec<f64>) -> Result<Self> {
        if distances.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                actual: distances.len(),
            });
        }
        Ok(SimilarityMatrix { metric, n, distances })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.distances[i * self.n..(i + 1) * self.n]
    }

    /// Flat binary form: magic, version, metric tag, `n`, then `n²`
    /// little-endian `f64` distances row-major.
    pub fn write_binary(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(SIM_MAGIC)?;
        out.write_all(&SIM_VERSION.to_le_bytes())?;
        out.write_all(&[match self.metric {
            SimilarityMetric::GistL2 => 0u8,
            SimilarityMetric::MutualInformation => 1u8,
        }])?;
        out.write_all(&(self.n as u64).to_le_bytes())?;
        for d in &self.distances {
            out.write_all(&d.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut input: impl Read) -> Result<Self> {
        let bad = |m: &str| Error::InvalidInput(format!("similarity matrix: {m}"));
        let mut head = [0u8; 21];
        input.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
        if &head[..8] != SIM_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(head[8..12].try_into().unwrap());
        if version != SIM_VERSION {
            return Err(Error::Version {
                found: version,
                supported: SIM_VERSION,
            });
        }
        let metric = match head[12] {
            0 => SimilarityMetric::GistL2,
            1 => SimilarityMetric::MutualInformation,
            t => return Err(bad(&format!("unknown metric tag {t}"))),
        };
        let n = u64::from_le_bytes(head[13..21].try_into().unwrap()) as usize;
        let mut bytes = vec![0u8; n * n * 8];
        input.read_exact(&mut bytes).map_err(|_| bad("truncated payload"))?;
        let distances = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_distances(metric, n, distances)
    }

    /// `i,j,distance` rows for every ordered pair.
    pub fn write_csv(&self, out: impl Write) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "j", "distance"])?;
        for i in 0..self.n {
            for j in 0..self.n {
                w.write_record([i.to_string(), j.to_string(), self.get(i, j).to_string()])?;
            }
        }
        w.flush()
    }
}

fn mirror(n: usize, upper: impl Fn(usize, usize) -> f64 + Sync, diag: impl Fn(usize) -> f64 + Sync) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i + 1..n).map(|j| upper(i, j)).collect())
        .collect();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        d[i * n + i] = diag(i);
        for (k, &v) in rows[i].iter().enumerate() {
            let j = i + 1 + k;
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// All-pairs distance matrix. Each pair is computed once and mirrored.
pub fn similarity_matrix(
    images: &[RgbImage],
    metric: SimilarityMetric,
    config: &SimilarityConfig,
) -> Result<SimilarityMatrix> {
    if images.is_empty() {
        return Err(Error::InvalidInput("similarity matrix needs at least one frame".into()));
    }
    let n = images.len();
    let distances = match metric {
        SimilarityMetric::GistL2 => {
            let extractor = GistExtractor::new(config.gist)?;
            let descs = images
                .par_iter()
                .map(|img| extractor.describe(img))
                .collect::<Result<Vec<_>>>()?;
            mirror(
                n,
                |i, j| l2_distance(&descs[i].values, &descs[j].values).expect("equal dims"),
                |_| 0.0,
            )
        }
        SimilarityMetric::MutualInformation => {
            if config.mi.bins == 0 {
                return Err(Error::InvalidInput("MI needs at least one bin".into()));
            }
            let q: Vec<Vec<u16>> = images.par_iter().map(|img| quantize_intensity(img, &config.mi)).collect();
            let bins = config.mi.bins;
            mirror(
                n,
                |i, j| -mutual_information_quantized(&q[i], &q[j], bins),
                |i| -mutual_information_quantized(&q[i], &q[i], bins),
            )
        }
    };
    SimilarityMatrix::from_distances(metric, n, distances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn constant_image_has_no_band_energy() {
        let img = RgbImage::from_pixel(128, 128, Rgb([90, 90, 90]));
        let d = gist_descriptor(&img, &GistConfig::default()).unwrap();
        assert_eq!(d.values.len(), 512);
        assert!(d.values.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn distance_examples() {
        let a = GistDescriptor { values: vec![0.0, 0.0] };
        let b = GistDescriptor { values: vec![3.0, 4.0] };
        assert_eq!(gist_distance(&a, &b).unwrap(), 5.0);
        assert_eq!(gist_distance(&b, &a).unwrap(), 5.0);
        assert_eq!(gist_distance(&a, &a).unwrap(), 0.0);
        let c = GistDescriptor { values: vec![1.0] };
        assert!(gist_distance(&a, &c).is_err());
    }

    #[test]
    fn half_black_half_white_has_one_bit() {
        let img = RgbImage::from_fn(128, 128, |x, _| if x < 64 { Rgb([0, 0, 0]) } else { Rgb([255, 255, 255]) });
        assert_eq!(mutual_information(&img, &img, &MiConfig::default()), 1.0);
    }

    #[test]
    fn constant_images_share_no_information() {
        let a = RgbImage::from_pixel(50, 40, Rgb([10, 10, 10]));
        let b = RgbImage::from_pixel(70, 20, Rgb([200, 30, 30]));
        assert_eq!(mutual_information(&a, &b, &MiConfig::default()), 0.0);
    }

    #[test]
    fn binary_round_trip() {
        let m = SimilarityMatrix::from_distances(SimilarityMetric::MutualInformation, 2, vec![-1.0, -0.25, -0.25, -2.0]).unwrap();
        let mut buf = Vec::new();
        m.write_binary(&mut buf).unwrap();
        assert_eq!(SimilarityMatrix::read_binary(&buf[..]).unwrap(), m);
    }
}
