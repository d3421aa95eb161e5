//! Sliding-window decomposition and per-pixel vote fusion.
//!
//! Each window reports a binary patch mask. A pixel's votes are normalized by
//! the number of windows covering it, so border pixels covered by few windows
//! are judged on the same scale as interior pixels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binmorph::BinaryMask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TileConfig {
    pub window_w: usize,
    pub window_h: usize,
    pub stride_x: usize,
    pub stride_y: usize,
    /// Minimum positive fraction of covering windows, in (0, 1].
    pub vote_threshold: f64,
    /// Windows handed to the detector per call.
    pub batch_size: usize,
}

impl Default for TileConfig {
    fn default() -> Self {
        Self {
            window_w: 600,
            window_h: 400,
            stride_x: 75,
            stride_y: 50,
            vote_threshold: 0.5,
            batch_size: 64,
        }
    }
}

impl TileConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_w == 0 || self.window_h == 0 {
            return Err(Error::InvalidConfig("window must be non-empty".into()));
        }
        if self.stride_x == 0 || self.stride_x > self.window_w {
            return Err(Error::InvalidConfig(format!(
                "stride_x {} must be in 1..={}",
                self.stride_x, self.window_w
            )));
        }
        if self.stride_y == 0 || self.stride_y > self.window_h {
            return Err(Error::InvalidConfig(format!(
                "stride_y {} must be in 1..={}",
                self.stride_y, self.window_h
            )));
        }
        if !(self.vote_threshold > 0.0 && self.vote_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "vote threshold {} outside (0, 1]",
                self.vote_threshold
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileGrid {
    pub image_w: usize,
    pub image_h: usize,
    /// Row-major: y outer, x inner.
    pub windows: Vec<Window>,
}

impl TileGrid {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

// 0, stride, 2*stride, ... while the window fits; a final anchor flush with
// the far edge is added when the stride does not land on it exactly.
fn anchors(extent: usize, window: usize, stride: usize) -> Vec<usize> {
    let last = extent - window;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if *out.last().unwrap() != last {
        out.push(last);
    }
    out
}

pub fn make_grid(image_w: usize, image_h: usize, cfg: &TileConfig) -> Result<TileGrid> {
    cfg.validate()?;
    if image_w < cfg.window_w || image_h < cfg.window_h {
        return Err(Error::ImageSmallerThanWindow {
            image_w,
            image_h,
            window_w: cfg.window_w,
            window_h: cfg.window_h,
        });
    }
    let xs = anchors(image_w, cfg.window_w, cfg.stride_x);
    let ys = anchors(image_h, cfg.window_h, cfg.stride_y);
    let windows = ys
        .iter()
        .flat_map(|&y| {
            xs.iter().map(move |&x| Window {
                x,
                y,
                w: cfg.window_w,
                h: cfg.window_h,
            })
        })
        .collect();
    Ok(TileGrid {
        image_w,
        image_h,
        windows,
    })
}

/// Per-pixel positive votes and window coverage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteField {
    width: usize,
    height: usize,
    positive: Vec<u32>,
    coverage: Vec<u32>,
}

impl VoteField {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            positive: vec![0; width * height],
            coverage: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn positive(&self) -> &[u32] {
        &self.positive
    }

    pub fn coverage(&self) -> &[u32] {
        &self.coverage
    }

    fn check(&self, window: &Window, patch: &BinaryMask) -> Result<()> {
        if window.x + window.w > self.width || window.y + window.h > self.height {
            return Err(Error::WindowOutOfBounds {
                x: window.x,
                y: window.y,
                w: window.w,
                h: window.h,
                width: self.width,
                height: self.height,
            });
        }
        if patch.dimensions() != (window.w, window.h) {
            return Err(Error::DimensionMismatch {
                expected: (window.w, window.h),
                actual: patch.dimensions(),
            });
        }
        Ok(())
    }

    pub fn accumulate(&mut self, window: &Window, patch: &BinaryMask) -> Result<()> {
        self.accumulate_batch(&[(*window, patch)])
    }

    /// Adds several windows at once, parallel over field rows. Counter
    /// addition commutes, so the result does not depend on batch order.
    pub fn accumulate_batch(&mut self, batch: &[(Window, &BinaryMask)]) -> Result<()> {
        for (window, patch) in batch {
            self.check(window, patch)?;
        }
        let w = self.width;
        self.positive
            .par_chunks_mut(w)
            .zip(self.coverage.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (pos, cov))| {
                for (win, patch) in batch {
                    if y < win.y || y >= win.y + win.h {
                        continue;
                    }
                    let src = &patch.bits()[(y - win.y) * win.w..(y - win.y + 1) * win.w];
                    let pos = &mut pos[win.x..win.x + win.w];
                    let cov = &mut cov[win.x..win.x + win.w];
                    for ((p, c), &s) in pos.iter_mut().zip(cov.iter_mut()).zip(src) {
                        *p += s as u32;
                        *c += 1;
                    }
                }
            });
        Ok(())
    }

    /// Adds another field's counters into this one.
    pub fn merge(&mut self, other: &VoteField) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::DimensionMismatch {
                expected: (self.width, self.height),
                actual: (other.width, other.height),
            });
        }
        for (a, b) in self.positive.iter_mut().zip(&other.positive) {
            *a += b;
        }
        for (a, b) in self.coverage.iter_mut().zip(&other.coverage) {
            *a += b;
        }
        Ok(())
    }

    /// Pixel set iff `positive / coverage >= tau`.
    pub fn fuse(&self, tau: f64) -> Result<BinaryMask> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidConfig(format!("vote threshold {tau} outside (0, 1]")));
        }
        if let Some(i) = self.coverage.iter().position(|&c| c == 0) {
            return Err(Error::ZeroCoverage {
                x: i % self.width,
                y: i / self.width,
            });
        }
        let bits = self
            .positive
            .par_iter()
            .zip(&self.coverage)
            .map(|(&p, &c)| p as f64 / c as f64 >= tau)
            .collect();
        BinaryMask::from_bits(self.width, self.height, bits)
    }
}

pub fn fuse_votes(votes: &VoteField, tau: f64) -> Result<BinaryMask> {
    votes.fuse(tau)
}
