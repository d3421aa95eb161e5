//! Binary masks, 3x3 morphology and connected-component labeling.
//!
//! Pixels outside the raster are background for erosion and dilation, so
//! erosion clears a one-pixel frame on an all-set mask and dilation never
//! grows in from the border. Closing is the exception, see [`close`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.width * self.height <= 1024 {
            writeln!(f, "BinaryMask {}x{}", self.width, self.height)?;
            for row in self.bits.chunks(self.width) {
                let line: String = row.iter().map(|&b| if b { '#' } else { '.' }).collect();
                writeln!(f, "{line}")?;
            }
            Ok(())
        } else {
            write!(
                f,
                "BinaryMask {}x{} ({} set)",
                self.width,
                self.height,
                self.count()
            )
        }
    }
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, false)
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        assert!(width > 0 && height > 0, "dimensions must be positive");
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "mask {width}x{height} with {} bits",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        assert!(width > 0 && height > 0, "dimensions must be positive");
        let bits = (0..width * height).map(|i| f(i % width, i / width)).collect();
        Self {
            width,
            height,
            bits,
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

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn into_bits(self) -> Vec<bool> {
        self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn check_same_size(&self, other: &BinaryMask) -> Result<()> {
        if self.dimensions() != other.dimensions() {
            return Err(Error::DimensionMismatch {
                expected: self.dimensions(),
                actual: other.dimensions(),
            });
        }
        Ok(())
    }

    pub fn not(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    pub fn or(&self, other: &BinaryMask) -> Result<Self> {
        self.zip_with(other, |a, b| a | b)
    }

    pub fn and(&self, other: &BinaryMask) -> Result<Self> {
        self.zip_with(other, |a, b| a & b)
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        self.check_same_size(other)?;
        Ok(Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// True when every set pixel of `self` is set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dimensions() == other.dimensions()
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Self {
        assert!(x + w <= self.width && y + h <= self.height, "crop out of bounds");
        let mut bits = Vec::with_capacity(w * h);
        for row in y..y + h {
            let start = row * self.width + x;
            bits.extend_from_slice(&self.bits[start..start + w]);
        }
        Self {
            width: w,
            height: h,
            bits,
        }
    }

    /// ORs `patch` into this mask with its top-left corner at (`x`, `y`).
    pub fn paint(&mut self, x: usize, y: usize, patch: &BinaryMask) {
        assert!(
            x + patch.width <= self.width && y + patch.height <= self.height,
            "patch out of bounds"
        );
        for (py, src) in patch.bits.chunks(patch.width).enumerate() {
            let start = (y + py) * self.width + x;
            for (d, &s) in self.bits[start..start + patch.width].iter_mut().zip(src) {
                *d |= s;
            }
        }
    }

    /// Embeds the mask in a background frame `pad` pixels wide.
    pub fn padded(&self, pad: usize) -> Self {
        let mut out = Self::new(self.width + 2 * pad, self.height + 2 * pad);
        out.paint(pad, pad, self);
        out
    }

    /// Tight bounds of the set pixels, if any.
    pub fn bounds(&self) -> Option<BBox> {
        let mut bbox: Option<BBox> = None;
        for (y, row) in self.bits.chunks(self.width).enumerate() {
            let Some(first) = row.iter().position(|&b| b) else {
                continue;
            };
            let last = row.iter().rposition(|&b| b).unwrap();
            bbox = Some(match bbox {
                None => BBox::new(first, y, last, y),
                Some(b) => BBox::new(b.x_min.min(first), b.y_min, b.x_max.max(last), y),
            });
        }
        bbox
    }
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BBox {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Self {
        debug_assert!(x_min <= x_max && y_min <= y_max);
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min + 1
    }

    /// `[x, y, w, h]`, the interchange layout.
    pub fn xywh(&self) -> [usize; 4] {
        [self.x_min, self.y_min, self.width(), self.height()]
    }

    fn include(&mut self, x: usize, y: usize) {
        self.x_min = self.x_min.min(x);
        self.x_max = self.x_max.max(x);
        self.y_min = self.y_min.min(y);
        self.y_max = self.y_max.max(y);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ElementShape {
    #[default]
    Box,
    Cross,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuringElement {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl StructuringElement {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width % 2 == 0 || height % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "structuring element must have odd dimensions, got {width}x{height}"
            )));
        }
        if bits.len() != width * height {
            return Err(Error::InvalidConfig("structuring element size mismatch".into()));
        }
        if !bits[(height / 2) * width + width / 2] {
            return Err(Error::InvalidConfig(
                "structuring element origin must be set".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn box3() -> Self {
        Self {
            width: 3,
            height: 3,
            bits: vec![true; 9],
        }
    }

    pub fn cross3() -> Self {
        Self {
            width: 3,
            height: 3,
            bits: vec![false, true, false, true, true, true, false, true, false],
        }
    }

    pub fn from_shape(shape: ElementShape) -> Self {
        match shape {
            ElementShape::Box => Self::box3(),
            ElementShape::Cross => Self::cross3(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Member offsets relative to the origin.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let (cx, cy) = ((self.width / 2) as isize, (self.height / 2) as isize);
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| ((i % self.width) as isize - cx, (i / self.width) as isize - cy))
            .collect()
    }

    fn is_full_box3(&self) -> bool {
        self.width == 3 && self.height == 3 && self.bits.iter().all(|&b| b)
    }
}

/// Output set iff every pixel under the element (anchored at its origin) is set.
pub fn erode(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    if se.is_full_box3() {
        return box3(mask, true);
    }
    shifted_combine(mask, &se.offsets(), true)
}

/// Output set iff some pixel of the reflected element is set. The reflection
/// only matters for asymmetric elements; both built-in elements are symmetric.
pub fn dilate(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    if se.is_full_box3() {
        return box3(mask, false);
    }
    let reflected: Vec<_> = se.offsets().into_iter().map(|(dx, dy)| (-dx, -dy)).collect();
    shifted_combine(mask, &reflected, false)
}

pub fn open(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    dilate(&erode(mask, se), se)
}

/// Closing of the mask embedded in an unbounded background plane: the
/// dilation may spill past the raster edge before the erosion, so set pixels
/// on the border are never lost and `mask ⊆ close(mask)` holds everywhere.
pub fn close(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let pad = se.width.max(se.height) / 2;
    let closed = erode(&dilate(&mask.padded(pad), se), se);
    closed.crop(pad, pad, mask.width, mask.height)
}

// `all = true` folds with AND (erosion), otherwise OR (dilation).
fn shifted_combine(mask: &BinaryMask, offsets: &[(isize, isize)], all: bool) -> BinaryMask {
    let (w, h) = mask.dimensions();
    let mut out = vec![all; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for &(dx, dy) in offsets {
            let sy = y as isize + dy;
            if sy < 0 || sy >= h as isize {
                if all {
                    row.fill(false);
                }
                continue;
            }
            let src = &mask.bits[sy as usize * w..(sy as usize + 1) * w];
            // x range whose source x + dx is inside the row
            let lo = (-dx).max(0) as usize;
            let hi = (w as isize - dx).min(w as isize).max(0) as usize;
            if all {
                row[..lo.min(w)].fill(false);
                row[hi.max(lo).min(w)..].fill(false);
            }
            if lo < hi {
                let s0 = (lo as isize + dx) as usize;
                let src = &src[s0..s0 + (hi - lo)];
                if all {
                    for (d, &s) in row[lo..hi].iter_mut().zip(src) {
                        *d &= s;
                    }
                } else {
                    for (d, &s) in row[lo..hi].iter_mut().zip(src) {
                        *d |= s;
                    }
                }
            }
        }
    });
    BinaryMask {
        width: w,
        height: h,
        bits: out,
    }
}

// Separable 3x3 box: horizontal pass then vertical pass.
fn box3(mask: &BinaryMask, all: bool) -> BinaryMask {
    let (w, h) = mask.dimensions();
    let fold = |a: bool, b: bool| if all { a & b } else { a | b };
    let mut horiz = vec![false; w * h];
    horiz
        .par_chunks_mut(w)
        .zip(mask.bits.par_chunks(w))
        .for_each(|(out, src)| {
            if w == 1 {
                out[0] = if all { false } else { src[0] };
                return;
            }
            out[0] = if all { false } else { src[0] | src[1] };
            out[w - 1] = if all { false } else { src[w - 2] | src[w - 1] };
            for (o, win) in out[1..w - 1].iter_mut().zip(src.windows(3)) {
                *o = fold(fold(win[0], win[1]), win[2]);
            }
        });
    let mut out = vec![false; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let mid = &horiz[y * w..(y + 1) * w];
        if all {
            if y == 0 || y == h - 1 {
                return;
            }
            let up = &horiz[(y - 1) * w..y * w];
            let down = &horiz[(y + 1) * w..(y + 2) * w];
            for (((o, &a), &b), &c) in row.iter_mut().zip(up).zip(mid).zip(down) {
                *o = a & b & c;
            }
        } else {
            row.copy_from_slice(mid);
            if y > 0 {
                for (o, &a) in row.iter_mut().zip(&horiz[(y - 1) * w..y * w]) {
                    *o |= a;
                }
            }
            if y + 1 < h {
                for (o, &a) in row.iter_mut().zip(&horiz[(y + 1) * w..(y + 2) * w]) {
                    *o |= a;
                }
            }
        }
    });
    BinaryMask {
        width: w,
        height: h,
        bits: out,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[default]
    #[serde(rename = "8")]
    Eight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: u32,
    pub bbox: BBox,
    pub area: usize,
    pub centroid: (f64, f64),
}

/// Labeled instances of one image. Label 0 is background; ids are 1..=N in
/// order of each instance's first pixel in a row-major scan.
#[derive(Clone, PartialEq)]
pub struct InstanceSet {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    instances: Vec<Instance>,
}

impl std::fmt::Debug for InstanceSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InstanceSet")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("instances", &self.instances)
            .finish_non_exhaustive()
    }
}

impl InstanceSet {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
            instances: Vec::new(),
        }
    }

    /// Builds a set from an arbitrary label raster, renumbering labels densely
    /// in first-appearance order. Labels are not required to be connected.
    pub fn from_labels(width: usize, height: usize, mut labels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "label raster {width}x{height} with {} entries",
                labels.len()
            )));
        }
        let mut remap = std::collections::HashMap::new();
        for l in labels.iter_mut().filter(|l| **l != 0) {
            let next = remap.len() as u32 + 1;
            *l = *remap.entry(*l).or_insert(next);
        }
        let n = remap.len();
        Ok(Self::with_stats(width, height, labels, n))
    }

    // `labels` must already be dense 1..=n in scan order.
    fn with_stats(width: usize, height: usize, labels: Vec<u32>, n: usize) -> Self {
        let empty = BBox {
            x_min: usize::MAX,
            y_min: usize::MAX,
            x_max: 0,
            y_max: 0,
        };
        let mut acc: Vec<(BBox, usize, f64, f64)> = vec![(empty, 0, 0.0, 0.0); n];
        for (y, row) in labels.chunks(width).enumerate() {
            for (x, &l) in row.iter().enumerate() {
                if l != 0 {
                    let a = &mut acc[l as usize - 1];
                    a.0.include(x, y);
                    a.1 += 1;
                    a.2 += x as f64;
                    a.3 += y as f64;
                }
            }
        }
        let instances = acc
            .into_iter()
            .enumerate()
            .map(|(i, (bbox, area, sx, sy))| Instance {
                id: i as u32 + 1,
                bbox,
                area,
                centroid: (sx / area as f64, sy / area as f64),
            })
            .collect();
        Self {
            width,
            height,
            labels,
            instances,
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

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Union of all instances.
    pub fn mask(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.labels.iter().map(|&l| l != 0).collect(),
        }
    }

    pub fn total_area(&self) -> usize {
        self.instances.iter().map(|i| i.area).sum()
    }

    /// Mask of instance `id`, cropped to its bounding box.
    pub fn instance_mask(&self, id: u32) -> BinaryMask {
        let bbox = self.instances[id as usize - 1].bbox;
        BinaryMask::from_fn(bbox.width(), bbox.height(), |x, y| {
            self.labels[(bbox.y_min + y) * self.width + bbox.x_min + x] == id
        })
    }

    /// Drops instances smaller than `min_area` and renumbers the rest densely,
    /// preserving their relative order.
    pub fn filter_min_area(self, min_area: usize) -> Self {
        if self.instances.iter().all(|i| i.area >= min_area) {
            return self;
        }
        let mut remap = vec![0u32; self.instances.len() + 1];
        let mut instances = Vec::new();
        for inst in self.instances {
            if inst.area >= min_area {
                let id = instances.len() as u32 + 1;
                remap[inst.id as usize] = id;
                instances.push(Instance { id, ..inst });
            }
        }
        let mut labels = self.labels;
        for l in labels.iter_mut() {
            *l = remap[*l as usize];
        }
        Self {
            width: self.width,
            height: self.height,
            labels,
            instances,
        }
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so roots stay stable in scan order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass union-find labeling.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> InstanceSet {
    let (w, h) = mask.dimensions();
    let bits = &mask.bits;
    let mut labels = vec![0u32; w * h];
    // provisional label 0 is reserved for background
    let mut sets = DisjointSet { parent: vec![0] };
    let eight = connectivity == Connectivity::Eight;

    for y in 0..h {
        let row = y * w;
        for x in 0..w {
            if !bits[row + x] {
                continue;
            }
            let mut current = 0u32;
            let mut visit = |l: u32, sets: &mut DisjointSet| {
                if l != 0 {
                    if current == 0 {
                        current = l;
                    } else if current != l {
                        sets.union(current, l);
                    }
                }
            };
            if x > 0 {
                visit(labels[row + x - 1], &mut sets);
            }
            if y > 0 {
                let up = row - w;
                if eight && x > 0 {
                    visit(labels[up + x - 1], &mut sets);
                }
                visit(labels[up + x], &mut sets);
                if eight && x + 1 < w {
                    visit(labels[up + x + 1], &mut sets);
                }
            }
            labels[row + x] = if current == 0 { sets.make() } else { current };
        }
    }

    let mut final_id = vec![0u32; sets.parent.len()];
    let mut n = 0u32;
    for l in labels.iter_mut() {
        if *l != 0 {
            let root = sets.find(*l) as usize;
            if final_id[root] == 0 {
                n += 1;
                final_id[root] = n;
            }
            *l = final_id[root];
        }
    }
    InstanceSet::with_stats(w, h, labels, n as usize)
}
