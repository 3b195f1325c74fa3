//! Rasters, preprocessing, oriented patch extraction and object size estimation.

mod io;

pub use io::{draw_rect, load_image, save_png, save_ppm, write_ppm};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::GraspRect;

/// Side of the square crop taken from the raw camera frame.
pub const CROP_SIZE: usize = 300;
/// Side of the preprocessed search image.
pub const SEARCH_SIZE: usize = 224;
/// Side of the classifier input patch.
pub const PATCH_SIZE: usize = 24;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("image is {width}x{height}, need at least {min}x{min}")]
    TooSmall { width: usize, height: usize, min: usize },
    #[error("rectangle corners leave the {width}x{height} image")]
    OutOfBounds { width: usize, height: usize },
    #[error("no foreground object found (fraction {fraction:.4})")]
    NoForeground { fraction: f64 },
    #[error("raster data length {len} does not match {width}x{height}x{channels}")]
    BadShape {
        width: usize,
        height: usize,
        channels: usize,
        len: usize,
    },
    #[error("unsupported channel count {0}")]
    UnsupportedChannels(usize),
    #[error("raster value {0} is outside [0, 1]")]
    ValueOutOfRange(f64),
    #[error("the rectangle is not finite")]
    NonFinite,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("image decode error: {0}")]
    Decode(String),
}

/// An image with values in `[0, 1]`, stored row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self, ImagingError> {
        if channels != 1 && channels != 3 {
            return Err(ImagingError::UnsupportedChannels(channels));
        }
        if data.len() != width * height * channels {
            return Err(ImagingError::BadShape {
                width,
                height,
                channels,
                len: data.len(),
            });
        }
        if let Some(&v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImagingError::ValueOutOfRange(v));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(channels == 1 || channels == 3);
        Self {
            width,
            height,
            channels,
            data: vec![value.clamp(0.0, 1.0); width * height * channels],
        }
    }

    /// Builds a raster from a per-pixel closure returning all channels.
    pub fn from_fn<F>(width: usize, height: usize, channels: usize, mut f: F) -> Self
    where
        F: FnMut(usize, usize, usize) -> f64,
    {
        assert!(channels == 1 || channels == 3);
        let mut data = Vec::with_capacity(width * height * channels);
        for row in 0..height {
            for col in 0..width {
                for c in 0..channels {
                    data.push(f(col, row, c).clamp(0.0, 1.0));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    #[inline]
    fn set(&mut self, col: usize, row: usize, channel: usize, v: f64) {
        let idx = (row * self.width + col) * self.channels + channel;
        self.data[idx] = v;
    }

    /// Bilinear sample at continuous pixel coordinates. Coordinates are
    /// clamped to the pixel-center grid `[0, width - 1] x [0, height - 1]`.
    pub fn sample_bilinear(&self, x: f64, y: f64, channel: usize) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0, channel) * (1.0 - fx) + self.get(x1, y0, channel) * fx;
        let bottom = self.get(x0, y1, channel) * (1.0 - fx) + self.get(x1, y1, channel) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Copies the window with top-left corner `(left, top)`.
    pub fn crop(&self, left: usize, top: usize, width: usize, height: usize) -> Raster {
        assert!(left + width <= self.width && top + height <= self.height);
        let mut data = Vec::with_capacity(width * height * self.channels);
        for row in top..top + height {
            let start = (row * self.width + left) * self.channels;
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Raster {
            width,
            height,
            channels: self.channels,
            data,
        }
    }

    /// Bilinear resize with pixel-center alignment.
    pub fn resize(&self, width: usize, height: usize) -> Raster {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Raster::filled(width, height, self.channels, 0.0);
        for row in 0..height {
            let y = (row as f64 + 0.5) * sy - 0.5;
            for col in 0..width {
                let x = (col as f64 + 0.5) * sx - 0.5;
                for c in 0..self.channels {
                    out.set(col, row, c, self.sample_bilinear(x, y, c));
                }
            }
        }
        out
    }

    /// Luminance (`0.299 R + 0.587 G + 0.114 B`) at a pixel.
    pub fn gray(&self, col: usize, row: usize) -> f64 {
        if self.channels == 1 {
            self.get(col, row, 0)
        } else {
            0.299 * self.get(col, row, 0) + 0.587 * self.get(col, row, 1) + 0.114 * self.get(col, row, 2)
        }
    }

    /// Expands a single-channel raster to three identical channels.
    pub fn to_rgb(&self) -> Raster {
        if self.channels == 3 {
            return self.clone();
        }
        Raster::from_fn(self.width, self.height, 3, |c, r, _| self.get(c, r, 0))
    }
}

/// Crop-then-resize mapping from raw frame coordinates to the search image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameTransform {
    pub crop_left: usize,
    pub crop_top: usize,
    pub scale: f64,
}

impl FrameTransform {
    /// The center crop used by [`preprocess`] for a frame of the given size.
    pub fn for_frame(width: usize, height: usize) -> Result<Self, ImagingError> {
        if width < CROP_SIZE || height < CROP_SIZE {
            return Err(ImagingError::TooSmall {
                width,
                height,
                min: CROP_SIZE,
            });
        }
        Ok(Self {
            crop_left: (width - CROP_SIZE) / 2,
            crop_top: (height - CROP_SIZE) / 2,
            scale: SEARCH_SIZE as f64 / CROP_SIZE as f64,
        })
    }

    /// Maps a raw-frame point into search-image coordinates, consistent with
    /// the pixel-center convention of [`Raster::resize`].
    pub fn map_point(&self, p: [f64; 2]) -> [f64; 2] {
        [
            (p[0] - self.crop_left as f64 + 0.5) * self.scale - 0.5,
            (p[1] - self.crop_top as f64 + 0.5) * self.scale - 0.5,
        ]
    }

    pub fn map_rect(&self, r: &GraspRect) -> GraspRect {
        let [x, y] = self.map_point([r.x, r.y]);
        GraspRect {
            x,
            y,
            theta: r.theta,
            h: r.h * self.scale,
            w: r.w * self.scale,
        }
    }

    /// Inverse of [`FrameTransform::map_point`].
    pub fn unmap_point(&self, p: [f64; 2]) -> [f64; 2] {
        [
            (p[0] + 0.5) / self.scale - 0.5 + self.crop_left as f64,
            (p[1] + 0.5) / self.scale - 0.5 + self.crop_top as f64,
        ]
    }

    pub fn unmap_rect(&self, r: &GraspRect) -> GraspRect {
        let [x, y] = self.unmap_point([r.x, r.y]);
        GraspRect {
            x,
            y,
            theta: r.theta,
            h: r.h / self.scale,
            w: r.w / self.scale,
        }
    }
}

/// Center-crops to 300x300 and resizes to 224x224.
pub fn preprocess(img: &Raster) -> Result<Raster, ImagingError> {
    let t = FrameTransform::for_frame(img.width(), img.height())?;
    Ok(img
        .crop(t.crop_left, t.crop_top, CROP_SIZE, CROP_SIZE)
        .resize(SEARCH_SIZE, SEARCH_SIZE))
}

/// A 24x24x3 classifier input.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch(Raster);

impl Patch {
    pub fn from_raster(r: Raster) -> Result<Self, ImagingError> {
        if r.width() != PATCH_SIZE || r.height() != PATCH_SIZE || r.channels() != 3 {
            return Err(ImagingError::BadShape {
                width: r.width(),
                height: r.height(),
                channels: r.channels(),
                len: r.data().len(),
            });
        }
        Ok(Self(r))
    }

    pub fn raster(&self) -> &Raster {
        &self.0
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }
}

/// Cuts the rectangle out of `img` into a 24x24x3 patch.
///
/// The patch is laid out with the rectangle's longer side horizontal, spans
/// the long side across the full patch width, and centers the short side
/// vertically. Rows beyond the short side are exactly zero. The long-axis
/// direction is taken modulo 180 so that `(theta, h, w)` and
/// `(theta + 90, w, h)` produce the same patch.
pub fn extract_patch(img: &Raster, r: &GraspRect) -> Result<Patch, ImagingError> {
    if !(r.x.is_finite() && r.y.is_finite() && r.theta.is_finite() && r.h.is_finite() && r.w.is_finite()) {
        return Err(ImagingError::NonFinite);
    }
    if !r.fits_within(img.width(), img.height()) {
        return Err(ImagingError::OutOfBounds {
            width: img.width(),
            height: img.height(),
        });
    }
    let (long, short, long_dir_deg) = if r.w >= r.h {
        (r.w, r.h, r.theta)
    } else {
        (r.h, r.w, r.theta + 90.0)
    };
    let phi = crate::geometry::normalize_theta(long_dir_deg).to_radians();
    let along = [phi.cos(), phi.sin()];
    let across = [-phi.sin(), phi.cos()];
    let half_short = short / 2.0;
    let step = long / PATCH_SIZE as f64;
    let src = if img.channels() == 3 { None } else { Some(0) };

    let mut data = vec![0.0; PATCH_SIZE * PATCH_SIZE * 3];
    for row in 0..PATCH_SIZE {
        let v = (row as f64 + 0.5 - PATCH_SIZE as f64 / 2.0) * step;
        if v.abs() > half_short {
            continue;
        }
        for col in 0..PATCH_SIZE {
            let u = (col as f64 + 0.5 - PATCH_SIZE as f64 / 2.0) * step;
            let sx = r.x + u * along[0] + v * across[0];
            let sy = r.y + u * along[1] + v * across[1];
            let base = (row * PATCH_SIZE + col) * 3;
            for c in 0..3 {
                data[base + c] = img.sample_bilinear(sx, sy, src.unwrap_or(c));
            }
        }
    }
    Ok(Patch(Raster {
        width: PATCH_SIZE,
        height: PATCH_SIZE,
        channels: 3,
        data,
    }))
}

/// 256-bin histogram of luminance quantized to 8 bits.
pub fn gray_histogram(img: &Raster) -> [u64; 256] {
    let mut bins = [0u64; 256];
    for row in 0..img.height() {
        for col in 0..img.width() {
            let level = (img.gray(col, row) * 255.0).round().clamp(0.0, 255.0) as usize;
            bins[level] += 1;
        }
    }
    bins
}

/// Otsu threshold: levels `<= t` form the dark class. `None` if the histogram
/// has fewer than two occupied levels.
pub fn otsu_threshold(hist: &[u64; 256]) -> Option<usize> {
    let total: u64 = hist.iter().sum();
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return None;
    }
    let total_f = total as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut weight_dark = 0.0;
    let mut sum_dark = 0.0;
    let mut best: Option<(usize, f64)> = None;
    for (t, &count) in hist.iter().enumerate().take(255) {
        weight_dark += count as f64;
        sum_dark += t as f64 * count as f64;
        let weight_light = total_f - weight_dark;
        if weight_dark == 0.0 || weight_light == 0.0 {
            continue;
        }
        let mean_dark = sum_dark / weight_dark;
        let mean_light = (sum_all - sum_dark) / weight_light;
        let between = weight_dark * weight_light * (mean_dark - mean_light).powi(2);
        if best.is_none_or(|(_, b)| between > b) {
            best = Some((t, between));
        }
    }
    best.map(|(t, _)| t)
}

/// A closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }

    fn scaled_clamped(&self, factor: f64, bounds: &Interval) -> Interval {
        Interval::new(bounds.clamp(self.lo * factor), bounds.clamp(self.hi * factor))
    }
}

/// Which Otsu class is taken as the object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForegroundPolarity {
    /// The class with fewer pixels.
    #[default]
    Minority,
    Dark,
    Light,
}

/// Tunables for [`estimate_object_scale`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleConfig {
    /// Multipliers on the size estimate giving the `w` sampling range.
    pub w_factors: Interval,
    /// Multipliers on the size estimate giving the `h` sampling range.
    pub h_factors: Interval,
    pub w_bounds: Interval,
    pub h_bounds: Interval,
    /// Below this foreground fraction the estimate is rejected.
    pub min_foreground_fraction: f64,
    pub polarity: ForegroundPolarity,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self {
            w_factors: Interval::new(0.6, 2.0),
            h_factors: Interval::new(0.3, 1.5),
            w_bounds: Interval::new(30.0, 100.0),
            h_bounds: Interval::new(10.0, 70.0),
            min_foreground_fraction: 0.005,
            polarity: ForegroundPolarity::Minority,
        }
    }
}

impl ScaleConfig {
    /// Ranges used when no object can be found.
    pub fn fallback(&self) -> ScaleEstimate {
        ScaleEstimate {
            size_estimate: f64::NAN,
            foreground_pixels: 0,
            w_range: self.w_bounds,
            h_range: self.h_bounds,
        }
    }

    /// Sampling ranges for an object covering `foreground_pixels` pixels.
    pub fn ranges_for_count(&self, foreground_pixels: u64) -> ScaleEstimate {
        let size = (foreground_pixels as f64).sqrt();
        ScaleEstimate {
            size_estimate: size,
            foreground_pixels,
            w_range: self.w_factors.scaled_clamped(size, &self.w_bounds),
            h_range: self.h_factors.scaled_clamped(size, &self.h_bounds),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleEstimate {
    /// Square root of the foreground pixel count.
    pub size_estimate: f64,
    pub foreground_pixels: u64,
    pub w_range: Interval,
    pub h_range: Interval,
}

/// Estimates object size from the gray-level histogram by Otsu thresholding.
pub fn estimate_object_scale(img: &Raster, cfg: &ScaleConfig) -> Result<ScaleEstimate, ImagingError> {
    let hist = gray_histogram(img);
    let total: u64 = hist.iter().sum();
    let Some(t) = otsu_threshold(&hist) else {
        return Err(ImagingError::NoForeground { fraction: 0.0 });
    };
    let dark: u64 = hist[..=t].iter().sum();
    let light = total - dark;
    let foreground = match cfg.polarity {
        ForegroundPolarity::Minority => dark.min(light),
        ForegroundPolarity::Dark => dark,
        ForegroundPolarity::Light => light,
    };
    let fraction = foreground as f64 / total as f64;
    if fraction < cfg.min_foreground_fraction {
        return Err(ImagingError::NoForeground { fraction });
    }
    Ok(cfg.ranges_for_count(foreground))
}
