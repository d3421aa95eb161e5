//! Synthetic tar spot leaves with known ground truth.
//!
//! Colors are placed relative to a pair of generator thresholds: leaf tissue
//! sits just on the unselected side of both, spots just on the selected
//! side, so the thresholds are recoverable by calibration and the planted
//! ellipses are exactly what a correctly tuned pipeline should find.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autogt::ThresholdConfig;
use crate::binmorph::{BinaryMask, InstanceSet};
use crate::color::{channel_value, Channel, RgbImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Inclusive range of planted spots per image.
    pub spots: (usize, usize),
    /// Inclusive range of ellipse semi-axes, in pixels.
    pub radius: (f64, f64),
    /// Minimum clear distance between spots, in pixels.
    pub min_gap: f64,
    /// Share of spots that are dark rather than brown.
    pub dark_fraction: f64,
    /// Generator thresholds; leaf and spot colors straddle them.
    pub t_v: f64,
    pub t_a: f64,
    /// Leaf occupies a horizontal band leaving this fraction of the height
    /// as background above and below; `None` fills the frame with leaf.
    pub strip_margin: Option<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 6000,
            height: 4000,
            spots: (0, 150),
            radius: (5.0, 20.0),
            min_gap: 6.0,
            dark_fraction: 0.7,
            t_v: 0.30,
            t_a: 0.0,
            strip_margin: None,
            seed: 0,
        }
    }
}

/// Leaf V stays at least this far above the generator's t_v.
pub const LEAF_V_MARGIN: f64 = 0.02;
/// Leaf a* stays at least this far below the generator's t_a.
pub const LEAF_A_MARGIN: f64 = 1.5;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.width < 16 || self.height < 16 {
            return bad("synthetic image must be at least 16x16");
        }
        if self.spots.0 > self.spots.1 {
            return bad("spot range is empty");
        }
        if !(self.radius.0 >= 1.0 && self.radius.0 <= self.radius.1) {
            return bad("radius range must satisfy 1 <= min <= max");
        }
        if !(self.min_gap >= 0.0) {
            return bad("min_gap must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.dark_fraction) {
            return bad("dark_fraction outside [0, 1]");
        }
        if !(self.t_v >= 0.1 && self.t_v <= 0.6) {
            return bad("generator t_v must lie in [0.1, 0.6]");
        }
        if !(self.t_a >= -20.0 && self.t_a <= 10.0) {
            return bad("generator t_a must lie in [-20, 10]");
        }
        if let Some(m) = self.strip_margin {
            if !(0.0..0.45).contains(&m) {
                return bad("strip_margin outside [0, 0.45)");
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    /// Pipeline settings whose thresholds equal the generator's, with the
    /// leaf cutoff placed between leaf tissue and the strip background.
    pub fn matching_thresholds(&self) -> ThresholdConfig {
        ThresholdConfig {
            t_v: self.t_v,
            t_a: self.t_a,
            leaf_a_max: self.t_a - 1.0,
            ..Default::default()
        }
    }

    fn leaf_rows(&self) -> (usize, usize) {
        match self.strip_margin {
            None => (0, self.height),
            Some(m) => {
                let top = (self.height as f64 * m).round() as usize;
                (top, self.height - top)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpotKind {
    /// Below t_v, clearly green in a*.
    Dark,
    /// Just above t_v, just above t_a.
    Brown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpot {
    pub cx: f64,
    pub cy: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Radians.
    pub angle: f64,
    pub kind: SpotKind,
}

impl PlantedSpot {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = (dx * c + dy * s) / self.semi_major;
        let v = (-dx * s + dy * c) / self.semi_minor;
        u * u + v * v <= 1.0
    }
}

#[derive(Debug, Clone)]
pub struct SynthImage {
    pub image: RgbImage,
    /// One instance per planted spot, numbered in scan order.
    pub truth: InstanceSet,
    pub leaf: BinaryMask,
    pub spots: Vec<PlantedSpot>,
}

impl SynthImage {
    /// Planted spot pixels over leaf pixels.
    pub fn planted_fraction(&self) -> f64 {
        self.truth.total_area() as f64 / self.leaf.count() as f64
    }
}

// Colors sharing one maximum channel value, ordered by a*.
struct Ramp {
    by_max: Vec<Vec<(f64, [u8; 3])>>,
}

impl Ramp {
    fn build(color: impl Fn(u8, u8) -> [u8; 3]) -> Self {
        let by_max = (0..=255u8)
            .map(|m| {
                let mut row: Vec<(f64, [u8; 3])> = (0..=m)
                    .map(|t| {
                        let rgb = color(m, t);
                        (channel_value(rgb, Channel::A) as f64, rgb)
                    })
                    .collect();
                row.sort_by(|a, b| a.0.total_cmp(&b.0));
                row
            })
            .collect();
        Self { by_max }
    }

    /// Largest a* not above `a_max`, else the smallest available.
    fn below(&self, max: u8, a_max: f64) -> [u8; 3] {
        let row = &self.by_max[max as usize];
        let i = row.partition_point(|e| e.0 <= a_max);
        row[i.saturating_sub(1)].1
    }

    fn nearest(&self, max: u8, a: f64) -> (f64, [u8; 3]) {
        let row = &self.by_max[max as usize];
        let i = row.partition_point(|e| e.0 < a);
        let mut best = row[i.min(row.len() - 1)];
        if i > 0 && (row[i - 1].0 - a).abs() <= (best.0 - a).abs() {
            best = row[i - 1];
        }
        best
    }
}

struct Palette {
    // Green to grey: (t, max, t).
    green: Ramp,
    // Red-brown to khaki: (max, t, 3t/4).
    brown: Ramp,
}

impl Palette {
    fn get() -> &'static Palette {
        static PALETTE: std::sync::OnceLock<Palette> = std::sync::OnceLock::new();
        PALETTE.get_or_init(|| Palette {
            green: Ramp::build(|m, t| [t, m, t]),
            brown: Ramp::build(|m, t| [m, t, (t as u32 * 3 / 4) as u8]),
        })
    }
}

// Smooth field in [0, 1]: a few random low-frequency sinusoids.
fn wave(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let terms: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let period = n as f64 * rng.gen_range(0.15..0.9);
            (std::f64::consts::TAU / period, rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.5..1.0))
        })
        .collect();
    let norm: f64 = terms.iter().map(|t| t.2).sum();
    (0..n)
        .map(|i| {
            let s: f64 = terms.iter().map(|&(w, p, a)| a * (w * i as f64 + p).sin()).sum();
            0.5 + 0.5 * s / norm
        })
        .collect()
}

fn hash_noise(seed: u64, x: usize, y: usize) -> f64 {
    let mut z = seed ^ ((x as u64) << 32 | y as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn place_spots(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<PlantedSpot> {
    let target = rng.gen_range(cfg.spots.0..=cfg.spots.1);
    let (top, bottom) = cfg.leaf_rows();
    let margin = cfg.min_gap.max(2.0);
    let mut spots: Vec<PlantedSpot> = Vec::with_capacity(target);
    let mut attempts = 0;
    while spots.len() < target && attempts < target * 200 + 1000 {
        attempts += 1;
        let a = rng.gen_range(cfg.radius.0..=cfg.radius.1);
        let b = rng.gen_range(cfg.radius.0.max(a * 0.6)..=a);
        let reach = a + margin;
        let (x_lo, x_hi) = (reach, cfg.width as f64 - reach);
        let (y_lo, y_hi) = (top as f64 + reach, bottom as f64 - reach);
        if x_lo >= x_hi || y_lo >= y_hi {
            break;
        }
        let spot = PlantedSpot {
            cx: rng.gen_range(x_lo..x_hi),
            cy: rng.gen_range(y_lo..y_hi),
            semi_major: a,
            semi_minor: b,
            angle: rng.gen_range(0.0..std::f64::consts::PI),
            kind: if rng.gen_bool(cfg.dark_fraction) {
                SpotKind::Dark
            } else {
                SpotKind::Brown
            },
        };
        let clear = spots.iter().all(|o| {
            let d = ((o.cx - spot.cx).powi(2) + (o.cy - spot.cy).powi(2)).sqrt();
            d >= o.semi_major + spot.semi_major + cfg.min_gap
        });
        if clear {
            spots.push(spot);
        }
    }
    spots
}

fn v_level(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthImage> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let palette = Palette::get();

    let v_lo = ((cfg.t_v + LEAF_V_MARGIN) * 255.0).ceil() as u8;
    let v_hi = v_level(cfg.t_v + 0.35).max(v_lo);
    let a_hi = cfg.t_a - LEAF_A_MARGIN;
    let a_lo = cfg.t_a - 20.0;
    let vx = wave(&mut rng, w);
    let vy = wave(&mut rng, h);
    let ax = wave(&mut rng, w);
    let ay = wave(&mut rng, h);
    let noise_seed: u64 = rng.gen();
    let (top, bottom) = cfg.leaf_rows();
    let background = palette.green.nearest(230, cfg.t_a - 0.5).1;

    let mut image = RgbImage::filled(w, h, background);
    for y in top..bottom {
        for x in 0..w {
            let n = hash_noise(noise_seed, x, y) - 0.5;
            let sv = (0.5 * (vx[x] + vy[y]) + 0.04 * n).clamp(0.0, 1.0);
            let sa = (0.5 * (ax[x] + ay[y]) - 0.04 * n).clamp(0.0, 1.0);
            let level = v_lo + ((v_hi - v_lo) as f64 * sv * sv).round() as u8;
            let a = a_hi - (a_hi - a_lo) * sa * sa;
            image.put_pixel(x, y, palette.green.below(level, a));
        }
    }
    let leaf = BinaryMask::from_fn(w, h, |_, y| (top..bottom).contains(&y));

    let spots = place_spots(cfg, &mut rng);
    let dark_lo = ((cfg.t_v - 0.04) * 255.0).ceil() as u8;
    let dark_hi = ((cfg.t_v - 0.005) * 255.0).floor() as u8;
    let brown_lo = ((cfg.t_v + 0.01) * 255.0).ceil() as u8;
    let brown_hi = ((cfg.t_v + 0.06) * 255.0).floor() as u8;
    let mut labels = vec![0u32; w * h];
    for (i, spot) in spots.iter().enumerate() {
        let brown_a = rng.gen_range(cfg.t_a + 1.5..cfg.t_a + 3.5);
        let dark_a = rng.gen_range(cfg.t_a - 12.0..cfg.t_a - 4.0);
        let r = spot.semi_major.ceil() as isize + 1;
        let (cx, cy) = (spot.cx.round() as isize, spot.cy.round() as isize);
        for y in (cy - r).max(0)..=(cy + r).min(h as isize - 1) {
            for x in (cx - r).max(0)..=(cx + r).min(w as isize - 1) {
                let (xu, yu) = (x as usize, y as usize);
                if !spot.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    continue;
                }
                labels[yu * w + xu] = i as u32 + 1;
                let n = hash_noise(noise_seed ^ 0x5bd1_e995, xu, yu);
                let rgb = match spot.kind {
                    SpotKind::Dark => {
                        let level = dark_lo + ((dark_hi - dark_lo) as f64 * n).round() as u8;
                        palette.green.below(level, dark_a)
                    }
                    SpotKind::Brown => {
                        let level = brown_lo + ((brown_hi - brown_lo) as f64 * n).round() as u8;
                        palette.brown.nearest(level, brown_a).1
                    }
                };
                image.put_pixel(xu, yu, rgb);
            }
        }
    }
    let truth = InstanceSet::from_labels(w, h, labels)?;
    Ok(SynthImage {
        image,
        truth,
        leaf,
        spots,
    })
}

/// `n` images with seeds `cfg.seed, cfg.seed + 1, ...`.
pub fn generate_batch(cfg: &SynthConfig, n: usize) -> Result<Vec<SynthImage>> {
    (0..n as u64)
        .map(|i| generate(&cfg.with_seed(cfg.seed.wrapping_add(i))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::{channel_plane, Channel};

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            width: 400,
            height: 300,
            spots: (10, 20),
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn colors_straddle_generator_thresholds() {
        let cfg = small(3);
        let s = generate(&cfg).unwrap();
        let v = channel_plane(&s.image, Channel::V);
        let a = channel_plane(&s.image, Channel::A);
        let mut seen_brown = false;
        for y in 0..300 {
            for x in 0..400 {
                let (vv, aa) = (v.get(x, y) as f64, a.get(x, y) as f64);
                let selected = vv <= cfg.t_v || aa >= cfg.t_a;
                let label = s.truth.label(x, y);
                if label == 0 {
                    assert!(vv >= cfg.t_v + LEAF_V_MARGIN - 1e-9, "leaf V {vv} at {x},{y}");
                    assert!(aa <= cfg.t_a - LEAF_A_MARGIN + 1e-3, "leaf a* {aa} at {x},{y}");
                } else {
                    assert!(selected, "spot pixel unselected at {x},{y}");
                }
                if label != 0 && vv > cfg.t_v {
                    seen_brown = true;
                    assert!(aa >= cfg.t_a + 1.0 && aa <= cfg.t_a + 4.0, "brown a* {aa}");
                }
            }
        }
        assert!(seen_brown || s.spots.iter().all(|p| p.kind == SpotKind::Dark));
    }

    #[test]
    fn spots_are_separate_instances() {
        for seed in 0..4 {
            let s = generate(&small(seed)).unwrap();
            assert_eq!(s.truth.len(), s.spots.len());
            assert!(s.spots.len() >= 10);
            for inst in s.truth.instances() {
                assert!(inst.area >= 50, "area {}", inst.area);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small(9)).unwrap();
        let b = generate(&small(9)).unwrap();
        let c = generate(&small(10)).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.truth.labels(), b.truth.labels());
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn strip_background_is_neither_leaf_nor_spot() {
        let cfg = SynthConfig {
            strip_margin: Some(0.25),
            ..small(1)
        };
        let s = generate(&cfg).unwrap();
        let t = cfg.matching_thresholds();
        let px = s.image.pixel(5, 5);
        let a = channel_value(px, Channel::A) as f64;
        let v = channel_value(px, Channel::V) as f64;
        assert!(a > t.leaf_a_max && a < t.t_a, "background a* {a}");
        assert!(v > t.t_v);
        assert_eq!(s.leaf.count(), 400 * 150);
        assert!(s.truth.mask().is_subset_of(&s.leaf));
    }

    #[test]
    fn planted_fraction_is_pixel_ratio() {
        let s = generate(&small(2)).unwrap();
        let f = s.planted_fraction();
        assert_eq!(f, s.truth.total_area() as f64 / (400.0 * 300.0));
        assert!(f > 0.0 && f < 1.0);
    }

    #[test]
    fn zero_spots() {
        let cfg = SynthConfig {
            spots: (0, 0),
            ..small(0)
        };
        let s = generate(&cfg).unwrap();
        assert!(s.truth.is_empty());
    }

    #[test]
    fn invalid_configs() {
        assert!(generate(&SynthConfig { spots: (3, 2), ..small(0) }).is_err());
        assert!(generate(&SynthConfig { radius: (4.0, 2.0), ..small(0) }).is_err());
        assert!(generate(&SynthConfig { width: 8, ..small(0) }).is_err());
    }
}
