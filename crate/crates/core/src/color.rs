//! sRGB rasters and their conversion to the HSV and CIELAB channels used for
//! thresholding.
//!
//! Inputs are treated as sRGB (IEC 61966-2-1 transfer curve, D65 white).
//! CIELAB uses the CIE 1976 definition with the reference white taken as the
//! row sums of the sRGB→XYZ matrix, so that RGB(255, 255, 255) maps to
//! L* = 100, a* = b* = 0 exactly.
//!
//! Every conversion is computed per pixel in `f64`. Planes store the result
//! rounded to `f32`; thresholds always compare against those stored values.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 8-bit interleaved RGB raster, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RgbImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::InvalidRaster(format!(
                "expected {} bytes for {width}x{height} RGB, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Image filled with a single color.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "dimensions must be positive");
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "dimensions must be positive");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.data[y * self.width * 3..(y + 1) * self.width * 3]
    }

    /// Copies the `w`x`h` region anchored at (`x`, `y`).
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(Error::InvalidRaster(format!(
                "crop ({x}, {y}) {w}x{h} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for row in y..y + h {
            let start = (row * self.width + x) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Ok(Self {
            width: w,
            height: h,
            data,
        })
    }

    /// Box-filter downsampling by an integer factor. Trailing rows/columns
    /// that do not fill a whole block are dropped.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.width < factor || self.height < factor {
            return Err(Error::InvalidRaster(format!(
                "cannot downsample {}x{} by {factor}",
                self.width, self.height
            )));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let n = (factor * factor) as u32;
        let mut data = vec![0u8; w * h * 3];
        data.par_chunks_mut(w * 3).enumerate().for_each(|(by, out)| {
            let mut acc = vec![0u32; w * 3];
            for y in by * factor..(by + 1) * factor {
                let row = self.row(y);
                for (bx, a) in acc.chunks_mut(3).enumerate() {
                    for px in row[bx * factor * 3..(bx + 1) * factor * 3].chunks_exact(3) {
                        a[0] += px[0] as u32;
                        a[1] += px[1] as u32;
                        a[2] += px[2] as u32;
                    }
                }
            }
            for (o, a) in out.iter_mut().zip(acc) {
                *o = ((a + n / 2) / n) as u8;
            }
        });
        Ok(Self {
            width: w,
            height: h,
            data,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    H,
    S,
    V,
    L,
    A,
    B,
}

/// One real-valued channel of a converted image.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPlane {
    width: usize,
    height: usize,
    channel: Channel,
    samples: Vec<f32>,
}

impl ChannelPlane {
    pub fn new(width: usize, height: usize, channel: Channel, samples: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || samples.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "plane {width}x{height} with {} samples",
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channel,
            samples,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.samples[y * self.width + x]
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Self {
        let mut samples = Vec::with_capacity(w * h);
        for row in y..y + h {
            let start = row * self.width + x;
            samples.extend_from_slice(&self.samples[start..start + w]);
        }
        Self {
            width: w,
            height: h,
            channel: self.channel,
            samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv {
    /// Degrees in [0, 360); 0 for achromatic pixels.
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lab {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

// sRGB (linear) -> XYZ, IEC 61966-2-1.
const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124, 0.3576, 0.1805],
    [0.2126, 0.7152, 0.0722],
    [0.0193, 0.1192, 0.9505],
];
const WHITE: [f64; 3] = [
    SRGB_TO_XYZ[0][0] + SRGB_TO_XYZ[0][1] + SRGB_TO_XYZ[0][2],
    SRGB_TO_XYZ[1][0] + SRGB_TO_XYZ[1][1] + SRGB_TO_XYZ[1][2],
    SRGB_TO_XYZ[2][0] + SRGB_TO_XYZ[2][1] + SRGB_TO_XYZ[2][2],
];

fn linearize(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// sRGB transfer curve inverse. Table-backed; entries are the exact values
/// of the closed form above.
pub fn srgb_to_linear(c: u8) -> f64 {
    static TABLE: OnceLock<[f64; 256]> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(|i| linearize(i as u8)))[c as usize]
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn normalized_xyz(rgb: [u8; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    std::array::from_fn(|i| {
        let m = SRGB_TO_XYZ[i];
        (m[0] * lin[0] + m[1] * lin[1] + m[2] * lin[2]) / WHITE[i]
    })
}

pub fn hsv_of(rgb: [u8; 3]) -> Hsv {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let v = max as f64 / 255.0;
    if max == 0 {
        return Hsv { h: 0.0, s: 0.0, v };
    }
    let delta = (max - min) as f64;
    let s = delta / max as f64;
    if max == min {
        return Hsv { h: 0.0, s, v };
    }
    let (r, g, b) = (r as f64, g as f64, b as f64);
    let sector = if max as f64 == r {
        (g - b) / delta
    } else if max as f64 == g {
        2.0 + (b - r) / delta
    } else {
        4.0 + (r - g) / delta
    };
    let mut h = 60.0 * sector;
    if h < 0.0 {
        h += 360.0;
    }
    if h >= 360.0 {
        h -= 360.0;
    }
    Hsv { h, s, v }
}

/// HSV value channel, `max(R, G, B) / 255`.
pub fn value_of(rgb: [u8; 3]) -> f64 {
    rgb[0].max(rgb[1]).max(rgb[2]) as f64 / 255.0
}

pub fn lab_of(rgb: [u8; 3]) -> Lab {
    let [x, y, z] = normalized_xyz(rgb).map(lab_f);
    Lab {
        l: (116.0 * y - 16.0).clamp(0.0, 100.0),
        a: (500.0 * (x - y)).clamp(-128.0, 128.0),
        b: (200.0 * (y - z)).clamp(-128.0, 128.0),
    }
}

/// The a* coordinate alone; identical to `lab_of(rgb).a`.
pub fn a_star_of(rgb: [u8; 3]) -> f64 {
    let [x, y, _] = normalized_xyz(rgb);
    (500.0 * (lab_f(x) - lab_f(y))).clamp(-128.0, 128.0)
}

/// Value that a plane of `channel` stores for this pixel.
pub fn channel_value(rgb: [u8; 3], channel: Channel) -> f32 {
    let v = match channel {
        Channel::H => hsv_of(rgb).h,
        Channel::S => hsv_of(rgb).s,
        Channel::V => value_of(rgb),
        Channel::L => lab_of(rgb).l,
        Channel::A => a_star_of(rgb),
        Channel::B => lab_of(rgb).b,
    };
    v as f32
}

/// Converts a single channel, row-parallel.
pub fn channel_plane(img: &RgbImage, channel: Channel) -> ChannelPlane {
    let (w, h) = img.dimensions();
    let mut samples = vec![0f32; w * h];
    samples
        .par_chunks_mut(w)
        .zip(img.data.par_chunks(w * 3))
        .for_each(|(out, row)| {
            for (o, px) in out.iter_mut().zip(row.chunks_exact(3)) {
                *o = channel_value([px[0], px[1], px[2]], channel);
            }
        });
    ChannelPlane {
        width: w,
        height: h,
        channel,
        samples,
    }
}

pub struct HsvPlanes {
    pub h: ChannelPlane,
    pub s: ChannelPlane,
    pub v: ChannelPlane,
}

pub struct LabPlanes {
    pub l: ChannelPlane,
    pub a: ChannelPlane,
    pub b: ChannelPlane,
}

pub fn rgb_to_hsv(img: &RgbImage) -> HsvPlanes {
    HsvPlanes {
        h: channel_plane(img, Channel::H),
        s: channel_plane(img, Channel::S),
        v: channel_plane(img, Channel::V),
    }
}

pub fn rgb_to_lab(img: &RgbImage) -> LabPlanes {
    LabPlanes {
        l: channel_plane(img, Channel::L),
        a: channel_plane(img, Channel::A),
        b: channel_plane(img, Channel::B),
    }
}

/// Fully saturated color at `hue` degrees.
pub fn hue_to_rgb(hue: f64) -> [u8; 3] {
    let h = hue.rem_euclid(360.0) / 60.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r, g, b].map(|c: f64| (c * 255.0).round() as u8)
}
