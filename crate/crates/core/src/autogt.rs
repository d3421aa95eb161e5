//! Automatic ground truthing: threshold V and a*, OR the two masks, clean the
//! result with opening/closing, and split it into connected instances.
//!
//! Default thresholds are uncalibrated starting points; run
//! [`calibrate_thresholds`] on labeled validation images before trusting
//! them on a new dataset.

use std::io::Write;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binmorph::{
    close, connected_components, open, BinaryMask, Connectivity, ElementShape, InstanceSet,
    StructuringElement,
};
use crate::color::{channel_plane, channel_value, Channel, ChannelPlane, RgbImage};
use crate::error::{Error, Result};
use crate::metrics::{match_instances, MatchConfig};

/// Which side of a threshold selects a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// value <= threshold
    Below,
    /// value >= threshold
    Above,
}

impl Polarity {
    #[inline]
    pub fn selects(self, value: f64, threshold: f64) -> bool {
        match self {
            Polarity::Below => value <= threshold,
            Polarity::Above => value >= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    /// V-channel threshold in [0, 1].
    pub t_v: f64,
    /// a*-channel threshold in [-128, 128].
    pub t_a: f64,
    pub v_polarity: Polarity,
    pub a_polarity: Polarity,
    /// Number of (open, close) rounds.
    pub morph_iterations: u32,
    pub element: ElementShape,
    pub connectivity: Connectivity,
    /// Instances smaller than this many pixels are dropped; 0 keeps everything.
    pub min_area: usize,
    /// Pixels with a* at or below this count as leaf tissue in [`leaf_mask`].
    pub leaf_a_max: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            t_v: 0.25,
            t_a: -5.0,
            v_polarity: Polarity::Below,
            a_polarity: Polarity::Above,
            morph_iterations: 1,
            element: ElementShape::Box,
            connectivity: Connectivity::Eight,
            min_area: 0,
            leaf_a_max: -8.0,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.t_v) {
            return Err(Error::InvalidConfig(format!("t_v {} outside [0, 1]", self.t_v)));
        }
        if !(-128.0..=128.0).contains(&self.t_a) {
            return Err(Error::InvalidConfig(format!(
                "t_a {} outside [-128, 128]",
                self.t_a
            )));
        }
        if !(-128.0..=128.0).contains(&self.leaf_a_max) {
            return Err(Error::InvalidConfig(format!(
                "leaf_a_max {} outside [-128, 128]",
                self.leaf_a_max
            )));
        }
        if self.morph_iterations == 0 {
            return Err(Error::InvalidConfig("morph_iterations must be >= 1".into()));
        }
        Ok(())
    }

    pub fn structuring_element(&self) -> StructuringElement {
        StructuringElement::from_shape(self.element)
    }

    /// The fused per-pixel decision: dark OR non-green.
    pub fn selects(&self, rgb: [u8; 3]) -> bool {
        self.v_polarity
            .selects(channel_value(rgb, Channel::V) as f64, self.t_v)
            || self
                .a_polarity
                .selects(channel_value(rgb, Channel::A) as f64, self.t_a)
    }
}

fn expect_channel(plane: &ChannelPlane, expected: Channel) -> Result<()> {
    if plane.channel() != expected {
        return Err(Error::WrongChannel {
            expected,
            actual: plane.channel(),
        });
    }
    Ok(())
}

fn threshold_plane(plane: &ChannelPlane, polarity: Polarity, t: f64) -> BinaryMask {
    let bits = plane
        .samples()
        .par_iter()
        .map(|&s| polarity.selects(s as f64, t))
        .collect();
    BinaryMask::from_bits(plane.width(), plane.height(), bits).expect("plane dimensions are valid")
}

/// Dark-pixel mask from the HSV value plane.
pub fn threshold_dark(v_plane: &ChannelPlane, cfg: &ThresholdConfig) -> Result<BinaryMask> {
    expect_channel(v_plane, Channel::V)?;
    Ok(threshold_plane(v_plane, cfg.v_polarity, cfg.t_v))
}

/// Non-green mask from the a* plane. Healthy tissue has strongly negative a*.
pub fn threshold_nongreen(a_plane: &ChannelPlane, cfg: &ThresholdConfig) -> Result<BinaryMask> {
    expect_channel(a_plane, Channel::A)?;
    Ok(threshold_plane(a_plane, cfg.a_polarity, cfg.t_a))
}

pub fn fuse_or(m1: &BinaryMask, m2: &BinaryMask) -> Result<BinaryMask> {
    m1.or(m2)
}

/// Thresholded and fused mask, before any morphology, computed through the
/// V and a* planes.
pub fn candidate_mask(img: &RgbImage, cfg: &ThresholdConfig) -> Result<BinaryMask> {
    let dark = threshold_dark(&channel_plane(img, Channel::V), cfg)?;
    let nongreen = threshold_nongreen(&channel_plane(img, Channel::A), cfg)?;
    fuse_or(&dark, &nongreen)
}

/// Applies `cfg.morph_iterations` rounds of opening followed by closing.
pub fn clean_mask(mut mask: BinaryMask, cfg: &ThresholdConfig) -> BinaryMask {
    let se = cfg.structuring_element();
    for _ in 0..cfg.morph_iterations {
        mask = open(&mask, &se);
        mask = close(&mask, &se);
    }
    mask
}

pub fn instances_from_mask(mask: &BinaryMask, cfg: &ThresholdConfig) -> InstanceSet {
    connected_components(mask, cfg.connectivity).filter_min_area(cfg.min_area)
}

pub fn auto_ground_truth(img: &RgbImage, cfg: &ThresholdConfig) -> Result<InstanceSet> {
    cfg.validate()?;
    let cleaned = clean_mask(candidate_mask(img, cfg)?, cfg);
    Ok(instances_from_mask(&cleaned, cfg))
}

/// Boolean decision for every 24-bit color, evaluated once through the float
/// conversion path. Lookups are therefore identical to evaluating the
/// predicate directly.
pub struct ColorLut {
    words: Vec<u64>,
}

impl ColorLut {
    pub fn build(predicate: impl Fn([u8; 3]) -> bool + Sync) -> Self {
        let words = (0..(1usize << 24) / 64)
            .into_par_iter()
            .map(|w| {
                let mut word = 0u64;
                for bit in 0..64 {
                    let c = w * 64 + bit;
                    if predicate([(c >> 16) as u8, (c >> 8) as u8, c as u8]) {
                        word |= 1 << bit;
                    }
                }
                word
            })
            .collect();
        Self { words }
    }

    #[inline]
    pub fn get(&self, rgb: [u8; 3]) -> bool {
        let c = (rgb[0] as usize) << 16 | (rgb[1] as usize) << 8 | rgb[2] as usize;
        self.words[c >> 6] >> (c & 63) & 1 == 1
    }

    pub fn mask(&self, img: &RgbImage) -> BinaryMask {
        let (w, h) = img.dimensions();
        let mut bits = vec![false; w * h];
        bits.par_chunks_mut(w)
            .zip(img.data().par_chunks(w * 3))
            .for_each(|(out, row)| {
                for (o, px) in out.iter_mut().zip(row.chunks_exact(3)) {
                    *o = self.get([px[0], px[1], px[2]]);
                }
            });
        BinaryMask::from_bits(w, h, bits).expect("image dimensions are valid")
    }
}

/// Ground-truthing pipeline with cached color tables, for batch and tiled use.
pub struct GroundTruther {
    cfg: ThresholdConfig,
    candidates: OnceLock<ColorLut>,
    leaf: OnceLock<ColorLut>,
}

impl GroundTruther {
    pub fn new(cfg: ThresholdConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            candidates: OnceLock::new(),
            leaf: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &ThresholdConfig {
        &self.cfg
    }

    /// Same result as [`candidate_mask`].
    pub fn candidates(&self, img: &RgbImage) -> BinaryMask {
        let cfg = &self.cfg;
        self.candidates
            .get_or_init(|| ColorLut::build(|rgb| cfg.selects(rgb)))
            .mask(img)
    }

    /// Candidates after morphology and the min-area filter, as a mask.
    pub fn cleaned(&self, img: &RgbImage) -> BinaryMask {
        let cleaned = clean_mask(self.candidates(img), &self.cfg);
        if self.cfg.min_area <= 1 {
            return cleaned;
        }
        instances_from_mask(&cleaned, &self.cfg).mask()
    }

    /// Same result as [`auto_ground_truth`].
    pub fn run(&self, img: &RgbImage) -> InstanceSet {
        let cleaned = clean_mask(self.candidates(img), &self.cfg);
        instances_from_mask(&cleaned, &self.cfg)
    }

    /// Same result as [`leaf_mask`].
    pub fn leaf_mask(&self, img: &RgbImage) -> BinaryMask {
        let cfg = &self.cfg;
        let candidates = self
            .leaf
            .get_or_init(|| ColorLut::build(|rgb| leaf_candidate(rgb, cfg)))
            .mask(img);
        finish_leaf_mask(candidates, cfg)
    }
}

fn leaf_candidate(rgb: [u8; 3], cfg: &ThresholdConfig) -> bool {
    channel_value(rgb, Channel::A) as f64 <= cfg.leaf_a_max
        || cfg
            .v_polarity
            .selects(channel_value(rgb, Channel::V) as f64, cfg.t_v)
}

/// Foreground leaf segmentation: green tissue or dark spot pixels, closed,
/// reduced to the largest component, with enclosed holes filled so that
/// spots of any color count as leaf area.
pub fn leaf_mask(img: &RgbImage, cfg: &ThresholdConfig) -> BinaryMask {
    let (w, h) = img.dimensions();
    let mut bits = Vec::with_capacity(w * h);
    for px in img.data().chunks_exact(3) {
        bits.push(leaf_candidate([px[0], px[1], px[2]], cfg));
    }
    let candidates = BinaryMask::from_bits(w, h, bits).expect("image dimensions are valid");
    finish_leaf_mask(candidates, cfg)
}

fn finish_leaf_mask(candidates: BinaryMask, cfg: &ThresholdConfig) -> BinaryMask {
    let closed = close(&candidates, &cfg.structuring_element());
    let components = connected_components(&closed, Connectivity::Eight);
    let Some(largest) = components
        .instances()
        .iter()
        .max_by(|a, b| a.area.cmp(&b.area).then(b.id.cmp(&a.id)))
        .map(|i| i.id)
    else {
        return closed;
    };
    let leaf: Vec<bool> = components.labels().iter().map(|&l| l == largest).collect();
    let leaf = BinaryMask::from_bits(closed.width(), closed.height(), leaf).unwrap();
    fill_holes(&leaf)
}

/// Sets every background region that does not touch the image border.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dimensions();
    let background = connected_components(&mask.not(), Connectivity::Four);
    let mut touches = vec![false; background.len() + 1];
    let labels = background.labels();
    for x in 0..w {
        touches[labels[x] as usize] = true;
        touches[labels[(h - 1) * w + x] as usize] = true;
    }
    for y in 0..h {
        touches[labels[y * w] as usize] = true;
        touches[labels[y * w + w - 1] as usize] = true;
    }
    let bits = labels.iter().map(|&l| l == 0 || !touches[l as usize]).collect();
    BinaryMask::from_bits(w, h, bits).unwrap()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityReport {
    pub spot_count: usize,
    pub spot_area: usize,
    pub leaf_area: usize,
    pub infected_fraction: f64,
}

/// Infected fraction of the leaf. Spot pixels outside the leaf are ignored.
pub fn severity(instances: &InstanceSet, leaf: &BinaryMask) -> Result<SeverityReport> {
    if instances.dimensions() != leaf.dimensions() {
        return Err(Error::DimensionMismatch {
            expected: leaf.dimensions(),
            actual: instances.dimensions(),
        });
    }
    let leaf_area = leaf.count();
    if leaf_area == 0 {
        return Err(Error::Degenerate("leaf mask is empty".into()));
    }
    let spot_area = instances
        .labels()
        .iter()
        .zip(leaf.bits())
        .filter(|(&l, &in_leaf)| l != 0 && in_leaf)
        .count();
    Ok(SeverityReport {
        spot_count: instances.len(),
        spot_area,
        leaf_area,
        infected_fraction: spot_area as f64 / leaf_area as f64,
    })
}

/// Candidate threshold values for calibration, each axis strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub t_v: Vec<f64>,
    pub t_a: Vec<f64>,
}

impl ThresholdGrid {
    pub fn new(mut t_v: Vec<f64>, mut t_a: Vec<f64>) -> Result<Self> {
        for (name, axis, range) in [("t_v", &mut t_v, 0.0..=1.0), ("t_a", &mut t_a, -128.0..=128.0)]
        {
            if axis.is_empty() || axis.len() > 255 {
                return Err(Error::InvalidConfig(format!(
                    "{name} grid must have 1..=255 values, got {}",
                    axis.len()
                )));
            }
            if axis.iter().any(|v| !range.contains(v)) {
                return Err(Error::InvalidConfig(format!("{name} grid leaves {range:?}")));
            }
            axis.sort_by(f64::total_cmp);
            if axis.windows(2).any(|p| p[0] == p[1]) {
                return Err(Error::InvalidConfig(format!("{name} grid has duplicates")));
            }
        }
        Ok(Self { t_v, t_a })
    }

    /// Inclusive arithmetic range `start, start + step, ...` up to `stop`.
    pub fn axis(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
        if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "bad grid range {start}:{stop}:{step}"
            )));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
        Ok((0..n)
            .map(|k| ((start + k as f64 * step) * 1e9).round() / 1e9)
            .collect())
    }

    pub fn len(&self) -> usize {
        self.t_v.len() * self.t_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub t_v: f64,
    pub t_a: f64,
    pub mean_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub best: ThresholdConfig,
    pub best_f1: f64,
    /// Row-major over (t_v, t_a).
    pub surface: Vec<SurfacePoint>,
}

impl Calibration {
    pub fn write_surface_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "t_v,t_a,mean_f1")?;
        for p in &self.surface {
            writeln!(out, "{},{},{:.6}", p.t_v, p.t_a, p.mean_f1)?;
        }
        Ok(())
    }
}

// Per-pixel grid ranks. Pixel is selected by V at grid index i iff
// `selected(i, v_rank)` for the configured polarity; likewise for a*.
struct RankedImage {
    width: usize,
    height: usize,
    v_rank: Vec<u8>,
    a_rank: Vec<u8>,
    truth: InstanceSet,
}

fn rank(sorted: &[f64], value: f64, polarity: Polarity) -> u8 {
    match polarity {
        // selected iff i >= #{g < value}
        Polarity::Below => sorted.iter().take_while(|&&g| g < value).count() as u8,
        // selected iff i < #{g <= value}
        Polarity::Above => sorted.iter().take_while(|&&g| g <= value).count() as u8,
    }
}

#[inline]
fn rank_selects(i: usize, rank: u8, polarity: Polarity) -> bool {
    match polarity {
        Polarity::Below => i >= rank as usize,
        Polarity::Above => i < rank as usize,
    }
}

/// Incremental grid-search calibration. Images are reduced to per-pixel grid
/// ranks on insertion, so only 2 bytes per pixel plus the ground truth are
/// retained.
pub struct Calibrator {
    grid: ThresholdGrid,
    base: ThresholdConfig,
    match_cfg: MatchConfig,
    rank_lut: Option<Vec<[u8; 2]>>,
    images: Vec<RankedImage>,
}

impl Calibrator {
    pub fn new(grid: ThresholdGrid, base: ThresholdConfig, match_cfg: MatchConfig) -> Result<Self> {
        base.validate()?;
        match_cfg.validate()?;
        Ok(Self {
            grid,
            base,
            match_cfg,
            rank_lut: None,
            images: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn add(&mut self, img: &RgbImage, truth: InstanceSet) -> Result<()> {
        if img.dimensions() != truth.dimensions() {
            return Err(Error::DimensionMismatch {
                expected: img.dimensions(),
                actual: truth.dimensions(),
            });
        }
        let (grid, base) = (&self.grid, &self.base);
        let lut = self.rank_lut.get_or_insert_with(|| {
            (0..1usize << 24)
                .into_par_iter()
                .map(|c| {
                    let rgb = [(c >> 16) as u8, (c >> 8) as u8, c as u8];
                    [
                        rank(&grid.t_v, channel_value(rgb, Channel::V) as f64, base.v_polarity),
                        rank(&grid.t_a, channel_value(rgb, Channel::A) as f64, base.a_polarity),
                    ]
                })
                .collect()
        });
        let n = img.width() * img.height();
        let mut v_rank = Vec::with_capacity(n);
        let mut a_rank = Vec::with_capacity(n);
        for px in img.data().chunks_exact(3) {
            let c = (px[0] as usize) << 16 | (px[1] as usize) << 8 | px[2] as usize;
            let [v, a] = lut[c];
            v_rank.push(v);
            a_rank.push(a);
        }
        self.images.push(RankedImage {
            width: img.width(),
            height: img.height(),
            v_rank,
            a_rank,
            truth,
        });
        Ok(())
    }

    fn score(&self, vi: usize, ai: usize) -> f64 {
        let cfg = ThresholdConfig {
            t_v: self.grid.t_v[vi],
            t_a: self.grid.t_a[ai],
            ..self.base.clone()
        };
        let total: f64 = self
            .images
            .iter()
            .map(|img| {
                let bits = img
                    .v_rank
                    .iter()
                    .zip(&img.a_rank)
                    .map(|(&v, &a)| {
                        rank_selects(vi, v, cfg.v_polarity) || rank_selects(ai, a, cfg.a_polarity)
                    })
                    .collect();
                let mask = BinaryMask::from_bits(img.width, img.height, bits).unwrap();
                let pred = instances_from_mask(&clean_mask(mask, &cfg), &cfg);
                match_instances(&pred, &img.truth, &self.match_cfg)
                    .expect("dimensions checked on insertion")
                    .f1()
            })
            .sum();
        total / self.images.len() as f64
    }

    pub fn run(&self) -> Result<Calibration> {
        if self.images.is_empty() {
            return Err(Error::Degenerate("validation set is empty".into()));
        }
        let na = self.grid.t_a.len();
        let surface: Vec<SurfacePoint> = (0..self.grid.len())
            .into_par_iter()
            .map(|k| {
                let (vi, ai) = (k / na, k % na);
                SurfacePoint {
                    t_v: self.grid.t_v[vi],
                    t_a: self.grid.t_a[ai],
                    mean_f1: self.score(vi, ai),
                }
            })
            .collect();
        // Surface is ordered by (t_v, t_a) ascending, so the first maximum
        // is the lowest t_v, then lowest t_a.
        let best = surface
            .iter()
            .fold(None::<SurfacePoint>, |acc, p| match acc {
                Some(b) if b.mean_f1 >= p.mean_f1 => Some(b),
                _ => Some(*p),
            })
            .unwrap();
        Ok(Calibration {
            best: ThresholdConfig {
                t_v: best.t_v,
                t_a: best.t_a,
                ..self.base.clone()
            },
            best_f1: best.mean_f1,
            surface,
        })
    }
}

/// Exhaustive grid search maximizing mean per-image instance F1.
pub fn calibrate_thresholds(
    validation: &[(RgbImage, InstanceSet)],
    grid: &ThresholdGrid,
    base: &ThresholdConfig,
    match_cfg: &MatchConfig,
) -> Result<Calibration> {
    if validation.is_empty() {
        return Err(Error::Degenerate("validation set is empty".into()));
    }
    let mut calibrator = Calibrator::new(grid.clone(), base.clone(), match_cfg.clone())?;
    for (img, truth) in validation {
        calibrator.add(img, truth.clone())?;
    }
    calibrator.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    const GREEN: [u8; 3] = [40, 128, 30];
    const SPOT: [u8; 3] = [12, 12, 12];

    fn disk_image(w: usize, h: usize, disks: &[(f64, f64, f64)]) -> (RgbImage, BinaryMask) {
        let inside = |x: usize, y: usize| {
            disks
                .iter()
                .any(|&(cx, cy, r)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r)
        };
        let img = RgbImage::from_fn(w, h, |x, y| if inside(x, y) { SPOT } else { GREEN });
        (img, BinaryMask::from_fn(w, h, inside))
    }

    #[test]
    fn thresholds_on_uniform_images() {
        let cfg = ThresholdConfig::default();
        let black = RgbImage::filled(4, 3, [0, 0, 0]);
        let v = channel_plane(&black, Channel::V);
        assert_eq!(threshold_dark(&v, &ThresholdConfig { t_v: 0.0, ..cfg.clone() }).unwrap().count(), 12);
        let white = RgbImage::filled(4, 3, [255; 3]);
        assert!(threshold_dark(&channel_plane(&white, Channel::V), &cfg).unwrap().is_empty());

        let cfg = ThresholdConfig { t_a: -10.0, ..cfg };
        let green = RgbImage::filled(4, 3, [0, 255, 0]);
        assert!(threshold_nongreen(&channel_plane(&green, Channel::A), &cfg).unwrap().is_empty());
        let grey = RgbImage::filled(4, 3, [128; 3]);
        assert_eq!(threshold_nongreen(&channel_plane(&grey, Channel::A), &cfg).unwrap().count(), 12);
    }

    #[test]
    fn wrong_channel_is_rejected() {
        let img = RgbImage::filled(2, 2, GREEN);
        let cfg = ThresholdConfig::default();
        assert!(matches!(
            threshold_dark(&channel_plane(&img, Channel::A), &cfg),
            Err(Error::WrongChannel { .. })
        ));
        assert!(threshold_nongreen(&channel_plane(&img, Channel::V), &cfg).is_err());
    }

    #[test]
    fn dark_threshold_recovers_disks_exactly() {
        let (img, disks) = disk_image(80, 60, &[(20.0, 20.0, 6.0), (55.0, 35.0, 8.0)]);
        let cfg = ThresholdConfig { t_v: 0.2, ..Default::default() };
        let dark = threshold_dark(&channel_plane(&img, Channel::V), &cfg).unwrap();
        assert_eq!(dark, disks);
        let nongreen = threshold_nongreen(&channel_plane(&img, Channel::A), &cfg).unwrap();
        assert!(disks.is_subset_of(&nongreen));
        assert!(nongreen.and(&disks.not()).unwrap().is_empty());
    }

    #[test]
    fn fuse_or_identities() {
        let m = BinaryMask::from_fn(5, 4, |x, y| (x * y) % 3 == 1);
        assert_eq!(fuse_or(&m, &BinaryMask::new(5, 4)).unwrap(), m);
        assert_eq!(fuse_or(&m, &BinaryMask::filled(5, 4, true)).unwrap().count(), 20);
        assert!(fuse_or(&m, &BinaryMask::new(4, 5)).is_err());
    }

    #[test]
    fn blank_image_has_no_instances() {
        let img = RgbImage::filled(50, 40, [255; 3]);
        let cfg = ThresholdConfig { t_a: 5.0, ..Default::default() };
        assert!(auto_ground_truth(&img, &cfg).unwrap().is_empty());
    }

    #[test]
    fn overlapping_disks_merge() {
        let (img, _) = disk_image(50, 30, &[(15.0, 15.0, 7.0), (27.0, 15.0, 7.0)]);
        let set = auto_ground_truth(&img, &ThresholdConfig::default()).unwrap();
        assert_eq!(set.len(), 1);
    }

    #[test]
    fn one_pixel_bridge_merges_components_but_not_after_opening() {
        let (mut img, mut mask) = disk_image(60, 30, &[(15.0, 15.0, 7.0), (40.0, 15.0, 7.0)]);
        for x in 22..=33 {
            img.put_pixel(x, 15, SPOT);
            mask.set(x, 15, true);
        }
        assert_eq!(connected_components(&mask, Connectivity::Eight).len(), 1);
        let set = auto_ground_truth(&img, &ThresholdConfig::default()).unwrap();
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn thin_line_between_distant_disks_is_opened() {
        let (mut img, _) = disk_image(60, 30, &[(15.0, 15.0, 7.0), (40.0, 15.0, 7.0)]);
        for x in 15..=40 {
            img.put_pixel(x, 15, SPOT);
            img.put_pixel(x, 16, SPOT);
        }
        let set = auto_ground_truth(&img, &ThresholdConfig::default()).unwrap();
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn lut_route_matches_plane_route() {
        let img = RgbImage::from_fn(97, 61, |x, y| {
            let h = (x * 2654435761 + y * 40503) as u32;
            [(h >> 3) as u8, (h >> 11) as u8, (h >> 19) as u8]
        });
        let cfg = ThresholdConfig { t_v: 0.4, t_a: 2.5, ..Default::default() };
        let truther = GroundTruther::new(cfg.clone()).unwrap();
        assert_eq!(truther.candidates(&img), candidate_mask(&img, &cfg).unwrap());
        assert_eq!(truther.run(&img), auto_ground_truth(&img, &cfg).unwrap());
        assert_eq!(truther.leaf_mask(&img), leaf_mask(&img, &cfg));
    }

    #[test]
    fn severity_examples() {
        let leaf = BinaryMask::filled(10, 10, true);
        let none = InstanceSet::empty(10, 10);
        let r = severity(&none, &leaf).unwrap();
        assert_eq!((r.spot_count, r.infected_fraction), (0, 0.0));

        let spot = BinaryMask::from_fn(10, 10, |x, y| x < 5 && y < 2);
        let set = connected_components(&spot, Connectivity::Eight);
        let r = severity(&set, &leaf).unwrap();
        assert_eq!(r.spot_area, 10);
        assert!((r.infected_fraction - 0.10).abs() < 1e-12);

        assert!(matches!(
            severity(&set, &BinaryMask::new(10, 10)),
            Err(Error::Degenerate(_))
        ));
        assert!(severity(&set, &BinaryMask::new(9, 10)).is_err());
    }

    #[test]
    fn leaf_mask_of_full_green_frame() {
        let img = RgbImage::filled(30, 20, GREEN);
        assert_eq!(leaf_mask(&img, &ThresholdConfig::default()).count(), 600);
    }

    #[test]
    fn leaf_mask_strip_on_white_keeps_largest() {
        let img = RgbImage::from_fn(40, 30, |x, y| {
            if (8..20).contains(&y) || (x < 3 && y > 26) {
                GREEN
            } else {
                [255; 3]
            }
        });
        let leaf = leaf_mask(&img, &ThresholdConfig::default());
        assert_eq!(leaf, BinaryMask::from_fn(40, 30, |_, y| (8..20).contains(&y)));
    }

    #[test]
    fn leaf_mask_includes_spots() {
        let (img, disks) = disk_image(40, 40, &[(20.0, 20.0, 5.0)]);
        let mut img = img;
        // a brownish spot that neither thresholds as dark nor as green
        for y in 3..8 {
            for x in 3..8 {
                img.put_pixel(x, y, [150, 110, 80]);
            }
        }
        let leaf = leaf_mask(&img, &ThresholdConfig::default());
        assert!(disks.is_subset_of(&leaf));
        assert_eq!(leaf.count(), 1600);
    }

    #[test]
    fn grid_axis_ranges() {
        assert_eq!(ThresholdGrid::axis(0.1, 0.3, 0.05).unwrap(), vec![0.1, 0.15, 0.2, 0.25, 0.3]);
        assert_eq!(ThresholdGrid::axis(-10.0, 10.0, 5.0).unwrap().len(), 5);
        assert!(ThresholdGrid::axis(0.0, 1.0, 0.0).is_err());
        assert!(ThresholdGrid::new(vec![], vec![0.0]).is_err());
        assert!(ThresholdGrid::new(vec![0.1, 0.1], vec![0.0]).is_err());
        assert!(ThresholdGrid::new(vec![1.5], vec![0.0]).is_err());
    }

    #[test]
    fn single_point_grid_returns_it() {
        let (img, disks) = disk_image(40, 40, &[(20.0, 20.0, 6.0)]);
        let truth = connected_components(&disks, Connectivity::Eight);
        let grid = ThresholdGrid::new(vec![0.33], vec![7.0]).unwrap();
        let base = ThresholdConfig::default();
        let cal = calibrate_thresholds(&[(img, truth)], &grid, &base, &MatchConfig::default())
            .unwrap();
        assert_eq!((cal.best.t_v, cal.best.t_a), (0.33, 7.0));
        assert_eq!(cal.best.morph_iterations, base.morph_iterations);
        assert_eq!(cal.surface.len(), 1);
    }

    #[test]
    fn spotless_validation_ties_to_smallest_point() {
        let img = RgbImage::filled(32, 32, GREEN);
        let truth = InstanceSet::empty(32, 32);
        let grid = ThresholdGrid::new(vec![0.1, 0.2, 0.3], vec![-20.0, -10.0, 0.0]).unwrap();
        let cal = calibrate_thresholds(
            &[(img.clone(), truth.clone()), (img, truth)],
            &grid,
            &ThresholdConfig::default(),
            &MatchConfig::default(),
        )
        .unwrap();
        assert!(cal.surface.iter().all(|p| p.mean_f1 == 1.0));
        assert_eq!((cal.best.t_v, cal.best.t_a), (0.1, -20.0));
    }

    #[test]
    fn empty_validation_is_an_error() {
        let grid = ThresholdGrid::new(vec![0.1], vec![0.0]).unwrap();
        let r = calibrate_thresholds(&[], &grid, &ThresholdConfig::default(), &MatchConfig::default());
        assert!(matches!(r, Err(Error::Degenerate(_))));
    }

    #[test]
    fn rank_encoding_agrees_with_direct_threshold() {
        let grid = [0.1, 0.2, 0.3];
        for value in [0.05, 0.1, 0.15, 0.2, 0.3, 0.31] {
            for polarity in [Polarity::Below, Polarity::Above] {
                let r = rank(&grid, value, polarity);
                for (i, &g) in grid.iter().enumerate() {
                    assert_eq!(rank_selects(i, r, polarity), polarity.selects(value, g));
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(ThresholdConfig::default().validate().is_ok());
        assert!(ThresholdConfig { t_v: 1.2, ..Default::default() }.validate().is_err());
        assert!(ThresholdConfig { t_a: -200.0, ..Default::default() }.validate().is_err());
        assert!(ThresholdConfig { morph_iterations: 0, ..Default::default() }.validate().is_err());
    }
}
