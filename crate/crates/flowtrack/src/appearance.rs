//! Appearance model: spatially layered LAB color histograms compared with a
//! histogram intersection kernel.
//!
//! A detection's histogram has two layers normalized independently: one over
//! the full box and one over a 3x3 grid of the box, each cell binning the A
//! and B chroma channels into 4x4 bins. Luminance is deliberately ignored to
//! stay robust against lighting changes.

use std::collections::HashMap;

use dashmap::DashMap;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::types::BoundingBox;

/// Chroma bins per channel.
pub const AB_BINS: usize = 4;
/// Grid resolution of the spatial layer.
pub const GRID: usize = 3;
/// Cells: full box plus the 3x3 grid.
pub const CELLS: usize = 1 + GRID * GRID;
/// Total histogram length: 10 cells x 4 x 4 chroma bins.
pub const HIST_LEN: usize = CELLS * AB_BINS * AB_BINS;

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    /// Allocates a black image.
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage { width, height, data: vec![0; width * height * 3] }
    }

    /// Wraps raw interleaved RGB bytes; the length must match.
    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::InvalidInput(format!(
                "rgb buffer of {} bytes does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> (u8, u8, u8) {
        let i = (y * self.width + x) * 3;
        (self.data[i], self.data[i + 1], self.data[i + 2])
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: (u8, u8, u8)) {
        let i = (y * self.width + x) * 3;
        self.data[i] = rgb.0;
        self.data[i + 1] = rgb.1;
        self.data[i + 2] = rgb.2;
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }
}

/// sRGB (8-bit, D65) to CIELAB.
pub fn srgb_to_lab<T: Real>(r: u8, g: u8, b: u8) -> (T, T, T) {
    fn linearize(v: u8) -> f64 {
        let c = v as f64 / 255.0;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    }
    let rl = linearize(r);
    let gl = linearize(g);
    let bl = linearize(b);
    let x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
    let y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
    let z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
    // D65 reference white.
    let (xn, yn, zn) = (0.95047, 1.0, 1.08883);
    fn f(t: f64) -> f64 {
        const DELTA3: f64 = 216.0 / 24389.0; // (6/29)^3
        if t > DELTA3 {
            t.cbrt()
        } else {
            t * (841.0 / 108.0) + 4.0 / 29.0
        }
    }
    let fx = f(x / xn);
    let fy = f(y / yn);
    let fz = f(z / zn);
    (T::of(116.0 * fy - 16.0), T::of(500.0 * (fx - fy)), T::of(200.0 * (fy - fz)))
}

/// Chroma bin for an A or B value; the nominal range `[-128, 127]` is split
/// into four equal bins and out-of-range values clamp into the edge bins.
#[inline]
pub fn chroma_bin<T: Real>(v: T) -> usize {
    let b = ((v.to_f64_() + 128.0) / 64.0).floor() as isize;
    b.clamp(0, AB_BINS as isize - 1) as usize
}

/// Layered chroma histogram of one detection box.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorHistogram<T> {
    pub bins: Vec<T>,
}

impl<T: Real> ColorHistogram<T> {
    /// Builds a histogram from raw per-bin counts, normalizing the full-box
    /// layer and the grid layer to unit L1 mass independently.
    pub fn from_counts(counts: Vec<T>) -> Result<Self> {
        if counts.len() != HIST_LEN {
            return Err(Error::InvalidInput(format!(
                "histogram needs {HIST_LEN} bins, got {}",
                counts.len()
            )));
        }
        let mut bins = counts;
        let cell_len = AB_BINS * AB_BINS;
        let full: T = bins[..cell_len].iter().copied().sum();
        let grid: T = bins[cell_len..].iter().copied().sum();
        if full <= T::zero() || grid <= T::zero() {
            return Err(Error::EmptyHistogram);
        }
        for v in &mut bins[..cell_len] {
            *v /= full;
        }
        for v in &mut bins[cell_len..] {
            *v /= grid;
        }
        Ok(ColorHistogram { bins })
    }

    /// Histogram of `bbox` inside `img`, sampling pixels at integer
    /// coordinates inside the box clipped to the image.
    pub fn from_image(img: &RgbImage, bbox: &BoundingBox<T>) -> Result<Self> {
        let x0 = bbox.x.to_f64_().max(0.0).ceil() as i64;
        let y0 = bbox.y.to_f64_().max(0.0).ceil() as i64;
        let x1 = bbox.right().to_f64_().min(img.width as f64 - 1.0).floor() as i64;
        let y1 = bbox.bottom().to_f64_().min(img.height as f64 - 1.0).floor() as i64;
        if x0 > x1 || y0 > y1 || img.width == 0 || img.height == 0 {
            return Err(Error::EmptyHistogram);
        }
        let mut counts = vec![T::zero(); HIST_LEN];
        let cell_len = AB_BINS * AB_BINS;
        let g = T::of_usize(GRID);
        for py in y0..=y1 {
            for px in x0..=x1 {
                let (r, gc, b) = img.pixel(px as usize, py as usize);
                let (_, a, bb) = srgb_to_lab::<T>(r, gc, b);
                let ab = chroma_bin(a) * AB_BINS + chroma_bin(bb);
                counts[ab] += T::one();
                let rx = (T::of(px as f64) - bbox.x) / bbox.w;
                let ry = (T::of(py as f64) - bbox.y) / bbox.h;
                let cx = ((rx * g).floor().to_f64_() as isize).clamp(0, GRID as isize - 1) as usize;
                let cy = ((ry * g).floor().to_f64_() as isize).clamp(0, GRID as isize - 1) as usize;
                let cell = 1 + cy * GRID + cx;
                counts[cell * cell_len + ab] += T::one();
            }
        }
        Self::from_counts(counts)
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// Histogram intersection kernel: sum of bin-wise minima. With per-layer
/// unit mass the value lies in `[0, 2]`, reaching 2 on identical histograms.
pub fn intersection_kernel<T: Real>(a: &ColorHistogram<T>, b: &ColorHistogram<T>) -> Result<T> {
    if a.bins.len() != b.bins.len() {
        return Err(Error::InvalidInput(format!(
            "histogram lengths differ: {} vs {}",
            a.bins.len(),
            b.bins.len()
        )));
    }
    Ok(a.bins.iter().zip(&b.bins).map(|(&x, &y)| x.min(y)).sum())
}

/// Intersection kernel rescaled to `[0, 1]`, the form the energy model uses.
pub fn normalized_kernel<T: Real>(a: &ColorHistogram<T>, b: &ColorHistogram<T>) -> Result<T> {
    Ok(intersection_kernel(a, b)? * T::of(0.5))
}

/// Per-detection histogram storage.
#[derive(Debug, Clone, Default)]
pub struct HistogramStore<T> {
    map: HashMap<usize, ColorHistogram<T>>,
}

impl<T: Real> HistogramStore<T> {
    pub fn new() -> Self {
        HistogramStore { map: HashMap::new() }
    }

    pub fn insert(&mut self, det_id: usize, hist: ColorHistogram<T>) {
        self.map.insert(det_id, hist);
    }

    pub fn get(&self, det_id: usize) -> Option<&ColorHistogram<T>> {
        self.map.get(&det_id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &ColorHistogram<T>)> {
        self.map.iter().map(|(&k, v)| (k, v))
    }
}

/// Memoized normalized kernels keyed by detection id pairs; the energy model
/// revisits the same pairs many times per window.
#[derive(Debug, Default)]
pub struct KernelCache<T> {
    map: DashMap<(usize, usize), T>,
}

impl<T: Real> KernelCache<T> {
    pub fn new() -> Self {
        KernelCache { map: DashMap::new() }
    }

    /// Normalized kernel between two detections' histograms, `None` when
    /// either histogram is absent from the store.
    pub fn normalized(&self, hists: &HistogramStore<T>, i: usize, j: usize) -> Option<T> {
        let key = (i.min(j), i.max(j));
        if let Some(v) = self.map.get(&key) {
            return Some(*v);
        }
        let (a, b) = (hists.get(i)?, hists.get(j)?);
        let v = normalized_kernel(a, b).expect("stored histograms share a binning");
        self.map.insert(key, v);
        Some(v)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Drops entries touching detections on frames before `min_frame`.
    pub fn evict_before(&self, frame_of: impl Fn(usize) -> usize, min_frame: usize) {
        self.map.retain(|&(a, b), _| frame_of(a) >= min_frame && frame_of(b) >= min_frame);
    }
}
