//! Annotation interchange: run-length masks, COCO-style manifests, dataset
//! splits, overlays and image files.
//!
//! Run-length counts are column-major and start with a background run, the
//! layout COCO tooling expects for uncompressed RLE.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binmorph::{BBox, BinaryMask, InstanceSet};
use crate::color::{hue_to_rgb, RgbImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    width: usize,
    height: usize,
    counts: Vec<u64>,
}

impl RleMask {
    /// Counts must sum to `width * height`; only the first run may be empty.
    pub fn new(width: usize, height: usize, counts: Vec<u64>) -> Result<Self> {
        let expected = (width * height) as u64;
        let mut sum = 0u64;
        for (i, &c) in counts.iter().enumerate() {
            if c == 0 && i > 0 {
                return Err(Error::RleZeroRun(i));
            }
            sum = sum.saturating_add(c);
        }
        if sum != expected {
            return Err(Error::RleSumMismatch { sum, expected });
        }
        Ok(Self {
            width,
            height,
            counts,
        })
    }

    pub fn encode(mask: &BinaryMask) -> Self {
        let (w, h) = mask.dimensions();
        let mut enc = RunEncoder::default();
        for x in 0..w {
            for y in 0..h {
                enc.push(mask.get(x, y), 1);
            }
        }
        enc.finish(w, h)
    }

    /// Encodes one instance of a label image, touching only its bounding box.
    pub fn encode_instance(set: &InstanceSet, id: u32) -> Self {
        let (w, h) = set.dimensions();
        let Some(inst) = set.instances().iter().find(|i| i.id == id) else {
            return Self {
                width: w,
                height: h,
                counts: vec![(w * h) as u64],
            };
        };
        let b = inst.bbox;
        let labels = set.labels();
        let mut enc = RunEncoder::default();
        enc.push(false, (b.x_min * h) as u64);
        for x in b.x_min..=b.x_max {
            enc.push(false, b.y_min as u64);
            for y in b.y_min..=b.y_max {
                enc.push(labels[y * w + x] == id, 1);
            }
            enc.push(false, (h - 1 - b.y_max) as u64);
        }
        enc.push(false, ((w - 1 - b.x_max) * h) as u64);
        enc.finish(w, h)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).sum()
    }

    pub fn decode(&self) -> Result<BinaryMask> {
        let mut mask = BinaryMask::new(self.width, self.height);
        self.for_each_run(|x, y0, y1| {
            for y in y0..y1 {
                mask.set(x, y, true);
            }
        });
        Ok(mask)
    }

    /// Calls `f(x, y_start, y_end)` for each foreground column segment.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let h = self.height;
        let mut pos = 0usize;
        for (i, &c) in self.counts.iter().enumerate() {
            let end = pos + c as usize;
            if i % 2 == 1 {
                let mut p = pos;
                while p < end {
                    let (x, y) = (p / h, p % h);
                    let seg_end = end.min((x + 1) * h);
                    f(x, y, y + seg_end - p);
                    p = seg_end;
                }
            }
            pos = end;
        }
    }

    /// Foreground bounding box, or `None` if empty.
    pub fn bbox(&self) -> Option<BBox> {
        let mut out: Option<BBox> = None;
        self.for_each_run(|x, y0, y1| {
            let b = BBox::new(x, y0, x, y1 - 1);
            out = Some(match out {
                None => b,
                Some(o) => BBox::new(
                    o.x_min.min(b.x_min),
                    o.y_min.min(b.y_min),
                    o.x_max.max(b.x_max),
                    o.y_max.max(b.y_max),
                ),
            });
        });
        out
    }

    /// COCO compressed-string form of the counts.
    pub fn to_compressed(&self) -> String {
        let mut s = String::new();
        for (i, &c) in self.counts.iter().enumerate() {
            let mut x = c as i64;
            if i > 2 {
                x -= self.counts[i - 2] as i64;
            }
            loop {
                let mut ch = (x & 0x1f) as u8;
                x >>= 5;
                let more = if ch & 0x10 != 0 { x != -1 } else { x != 0 };
                if more {
                    ch |= 0x20;
                }
                s.push((ch + 48) as char);
                if !more {
                    break;
                }
            }
        }
        s
    }

    pub fn from_compressed(width: usize, height: usize, s: &str) -> Result<Self> {
        let bytes = s.as_bytes();
        let mut counts: Vec<u64> = Vec::new();
        let mut p = 0;
        while p < bytes.len() {
            let mut x: i64 = 0;
            let mut k = 0;
            loop {
                let Some(&b) = bytes.get(p) else {
                    return Err(Error::Schema("truncated compressed RLE".into()));
                };
                if !(48..48 + 64).contains(&b) || k > 12 {
                    return Err(Error::Schema("invalid compressed RLE".into()));
                }
                let c = (b - 48) as i64;
                x |= (c & 0x1f) << (5 * k);
                p += 1;
                k += 1;
                if c & 0x20 == 0 {
                    if c & 0x10 != 0 {
                        x |= -1i64 << (5 * k);
                    }
                    break;
                }
            }
            let m = counts.len();
            if m > 2 {
                x += counts[m - 2] as i64;
            }
            if x < 0 {
                return Err(Error::Schema("negative run in compressed RLE".into()));
            }
            counts.push(x as u64);
        }
        Self::new(width, height, counts)
    }
}

#[derive(Default)]
struct RunEncoder {
    counts: Vec<u64>,
    current: bool,
    run: u64,
}

impl RunEncoder {
    fn push(&mut self, value: bool, n: u64) {
        if n == 0 {
            return;
        }
        if value != self.current {
            self.counts.push(self.run);
            self.current = value;
            self.run = 0;
        }
        self.run += n;
    }

    fn finish(mut self, width: usize, height: usize) -> RleMask {
        self.counts.push(self.run);
        RleMask {
            width,
            height,
            counts: self.counts,
        }
    }
}

pub fn rle_encode(mask: &BinaryMask) -> RleMask {
    RleMask::encode(mask)
}

pub fn rle_decode(rle: &RleMask) -> Result<BinaryMask> {
    rle.decode()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    #[serde(alias = "file")]
    pub file_name: String,
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    /// `[height, width]`.
    pub size: [usize; 2],
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    /// `[x, y, width, height]`.
    pub bbox: [usize; 4],
    pub area: u64,
    pub iscrowd: u8,
    pub segmentation: Segmentation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

pub const TAR_SPOT_CATEGORY: u64 = 1;

fn default_categories() -> Vec<Category> {
    vec![Category {
        id: TAR_SPOT_CATEGORY,
        name: "tar_spot".into(),
    }]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            images: Vec::new(),
            annotations: Vec::new(),
            categories: default_categories(),
        }
    }
}

impl Manifest {
    /// Appends an image and its instances. Image and annotation ids continue
    /// from the largest ids present.
    pub fn add_image(
        &mut self,
        file_name: impl Into<String>,
        split: Option<Split>,
        instances: &InstanceSet,
        scores: Option<&[f64]>,
    ) -> Result<u64> {
        let file_name = file_name.into();
        if self.images.iter().any(|r| r.file_name == file_name) {
            return Err(Error::DuplicateImage(file_name));
        }
        if let Some(s) = scores {
            if s.len() != instances.len() {
                return Err(Error::Misaligned(format!(
                    "{} scores for {} instances",
                    s.len(),
                    instances.len()
                )));
            }
        }
        let (w, h) = instances.dimensions();
        let image_id = self.images.iter().map(|r| r.id).max().map_or(1, |m| m + 1);
        let mut next_ann = self.annotations.iter().map(|a| a.id).max().map_or(1, |m| m + 1);
        self.images.push(ImageRecord {
            id: image_id,
            file_name,
            width: w,
            height: h,
            split,
        });
        for (i, inst) in instances.instances().iter().enumerate() {
            let rle = RleMask::encode_instance(instances, inst.id);
            self.annotations.push(Annotation {
                id: next_ann,
                image_id,
                category_id: TAR_SPOT_CATEGORY,
                bbox: inst.bbox.xywh(),
                area: inst.area as u64,
                iscrowd: 0,
                segmentation: Segmentation {
                    size: [h, w],
                    counts: rle.counts,
                },
                score: scores.map(|s| s[i]),
            });
            next_ann += 1;
        }
        Ok(image_id)
    }

    /// Pretty JSON with object keys in sorted order; identical manifests
    /// give identical bytes.
    pub fn to_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        let mut s = serde_json::to_string_pretty(&sort_keys(value))?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    /// Parses and validates a manifest. Unknown fields are ignored; polygon
    /// segmentations are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawManifest =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        let mut images = raw.images;
        images.sort_by_key(|r| r.id);
        let mut by_id = HashMap::new();
        let mut files = BTreeSet::new();
        for r in &images {
            if by_id.insert(r.id, (r.width, r.height)).is_some() {
                return Err(Error::Schema(format!("duplicate image id {}", r.id)));
            }
            if !files.insert(r.file_name.clone()) {
                return Err(Error::DuplicateImage(r.file_name.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        let mut annotations = Vec::with_capacity(raw.annotations.len());
        for a in raw.annotations {
            if !seen.insert(a.id) {
                return Err(Error::Schema(format!("duplicate annotation id {}", a.id)));
            }
            let &(w, h) = by_id.get(&a.image_id).ok_or(Error::DanglingReference {
                annotation: a.id,
                image: a.image_id,
            })?;
            let rle = parse_segmentation(&a.segmentation, a.id, w, h)
                .map_err(|e| wrap_annotation(a.id, e))?;
            let area = rle.area();
            let bbox = rle.bbox().map_or([0; 4], |b| b.xywh());
            annotations.push(Annotation {
                id: a.id,
                image_id: a.image_id,
                category_id: a.category_id,
                bbox,
                area,
                iscrowd: a.iscrowd,
                segmentation: Segmentation {
                    size: [h, w],
                    counts: rle.counts,
                },
                score: a.score,
            });
        }
        annotations.sort_by_key(|a| a.id);
        let categories = if raw.categories.is_empty() {
            default_categories()
        } else {
            raw.categories
        };
        Ok(Self {
            images,
            annotations,
            categories,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn image_by_file(&self, file_name: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|r| r.file_name == file_name)
    }

    /// Label image for one image; annotations are painted in id order and
    /// earlier annotations keep contested pixels.
    pub fn instances(&self, image_id: u64) -> Result<InstanceSet> {
        let rec = self
            .images
            .iter()
            .find(|r| r.id == image_id)
            .ok_or_else(|| Error::Schema(format!("no image with id {image_id}")))?;
        let (w, h) = (rec.width, rec.height);
        let mut labels = vec![0u32; w * h];
        let mut next = 1u32;
        for a in self.annotations.iter().filter(|a| a.image_id == image_id) {
            let rle = RleMask::new(w, h, a.segmentation.counts.clone())
                .map_err(|e| wrap_annotation(a.id, e))?;
            let label = next;
            next += 1;
            rle.for_each_run(|x, y0, y1| {
                for y in y0..y1 {
                    let slot = &mut labels[y * w + x];
                    if *slot == 0 {
                        *slot = label;
                    }
                }
            });
        }
        InstanceSet::from_labels(w, h, labels)
    }

    /// Moves every image of `other` into this manifest, renumbering image and
    /// annotation ids to continue after the largest ids present.
    pub fn append(&mut self, other: Manifest) -> Result<()> {
        for rec in &other.images {
            if self.image_by_file(&rec.file_name).is_some() {
                return Err(Error::DuplicateImage(rec.file_name.clone()));
            }
        }
        let mut next_image = self.images.iter().map(|r| r.id).max().map_or(1, |m| m + 1);
        let mut next_ann = self.annotations.iter().map(|a| a.id).max().map_or(1, |m| m + 1);
        let mut image_ids = std::collections::HashMap::new();
        for mut rec in other.images {
            image_ids.insert(rec.id, next_image);
            rec.id = next_image;
            next_image += 1;
            self.images.push(rec);
        }
        for mut a in other.annotations {
            a.image_id = image_ids[&a.image_id];
            a.id = next_ann;
            next_ann += 1;
            self.annotations.push(a);
        }
        Ok(())
    }
}

fn wrap_annotation(id: u64, e: Error) -> Error {
    match e {
        e @ (Error::UnsupportedSegmentation { .. } | Error::Annotation { .. }) => e,
        e => Error::Annotation {
            id,
            source: Box::new(e),
        },
    }
}

fn sort_keys(v: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let sorted: BTreeMap<String, Value> =
                map.into_iter().map(|(k, v)| (k, sort_keys(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(a) => Value::Array(a.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

#[derive(Deserialize)]
struct RawManifest {
    #[serde(default)]
    images: Vec<ImageRecord>,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
    #[serde(default)]
    categories: Vec<Category>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    #[serde(default = "tar_spot_category")]
    category_id: u64,
    #[serde(default)]
    iscrowd: u8,
    segmentation: serde_json::Value,
    #[serde(default)]
    score: Option<f64>,
}

fn tar_spot_category() -> u64 {
    TAR_SPOT_CATEGORY
}

fn parse_segmentation(v: &serde_json::Value, id: u64, w: usize, h: usize) -> Result<RleMask> {
    use serde_json::Value;
    let obj = match v {
        Value::Object(o) => o,
        Value::Array(_) => {
            return Err(Error::UnsupportedSegmentation {
                id,
                format: "polygon".into(),
            })
        }
        other => {
            return Err(Error::UnsupportedSegmentation {
                id,
                format: json_kind(other).into(),
            })
        }
    };
    let size: [usize; 2] = obj
        .get("size")
        .cloned()
        .ok_or_else(|| Error::Schema("segmentation without size".into()))
        .and_then(|s| serde_json::from_value(s).map_err(|e| Error::Schema(format!("size: {e}"))))?;
    if size != [h, w] {
        return Err(Error::Schema(format!(
            "segmentation size {size:?} differs from image [{h}, {w}]"
        )));
    }
    match obj.get("counts") {
        Some(Value::Array(items)) => {
            let counts = items
                .iter()
                .map(|c| {
                    c.as_u64()
                        .ok_or_else(|| Error::Schema(format!("bad run length {c}")))
                })
                .collect::<Result<Vec<_>>>()?;
            RleMask::new(w, h, counts)
        }
        Some(Value::String(s)) => RleMask::from_compressed(w, h, s),
        _ => Err(Error::Schema("segmentation without counts".into())),
    }
}

fn json_kind(v: &serde_json::Value) -> &'static str {
    use serde_json::Value;
    match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Builds a manifest from label images in the given order.
pub fn export_coco(items: &[(String, Option<Split>, &InstanceSet)]) -> Result<Manifest> {
    let mut m = Manifest::default();
    for (file, split, set) in items {
        m.add_image(file.clone(), *split, set, None)?;
    }
    Ok(m)
}

/// Image records with their label images, in image id order.
pub fn import_coco(path: &Path) -> Result<Vec<(ImageRecord, InstanceSet)>> {
    let m = Manifest::read(path)?;
    m.images
        .iter()
        .map(|r| Ok((r.clone(), m.instances(r.id)?)))
        .collect()
}

/// Named parts and their relative weights, e.g. `test:4,val:1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRatio {
    pub parts: Vec<(Split, u32)>,
}

impl SplitRatio {
    pub fn new(parts: Vec<(Split, u32)>) -> Result<Self> {
        if parts.is_empty() || parts.iter().all(|p| p.1 == 0) {
            return Err(Error::InvalidConfig("split ratio needs a positive part".into()));
        }
        let names: BTreeSet<_> = parts.iter().map(|p| p.0).collect();
        if names.len() != parts.len() {
            return Err(Error::InvalidConfig("split named twice".into()));
        }
        Ok(Self { parts })
    }

    /// Part sizes for `n` items: each part gets the floor of its share and
    /// the remainder goes to the heaviest part (first listed on ties).
    pub fn sizes(&self, n: usize) -> Vec<usize> {
        let total: u64 = self.parts.iter().map(|p| p.1 as u64).sum();
        let mut sizes: Vec<usize> = self
            .parts
            .iter()
            .map(|p| (n as u64 * p.1 as u64 / total) as usize)
            .collect();
        let rest = n - sizes.iter().sum::<usize>();
        let heaviest = (0..self.parts.len())
            .max_by(|&a, &b| self.parts[a].1.cmp(&self.parts[b].1).then(b.cmp(&a)))
            .unwrap();
        sizes[heaviest] += rest;
        sizes
    }
}

impl std::str::FromStr for SplitRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .split(',')
            .map(|part| {
                let (name, weight) = part
                    .split_once(':')
                    .ok_or_else(|| Error::InvalidConfig(format!("expected name:weight, got {part:?}")))?;
                let weight = weight
                    .trim()
                    .parse::<u32>()
                    .map_err(|e| Error::InvalidConfig(format!("weight {weight:?}: {e}")))?;
                Ok((name.trim().parse()?, weight))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(parts)
    }
}

/// Assigns every image to a split, deterministically for a given seed.
/// Images that already carry a split are relabeled only with `force`.
pub fn split_dataset(manifest: &Manifest, ratio: &SplitRatio, seed: u64, force: bool) -> Result<Manifest> {
    if manifest.images.is_empty() {
        return Err(Error::Degenerate("manifest has no images".into()));
    }
    if !force {
        if let Some(r) = manifest.images.iter().find(|r| r.split.is_some()) {
            return Err(Error::InvalidConfig(format!(
                "image {} already has a split; relabeling must be forced",
                r.file_name
            )));
        }
    }
    let mut ids: Vec<u64> = manifest.images.iter().map(|r| r.id).collect();
    ids.sort_unstable();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = HashMap::new();
    let mut start = 0;
    for (part, size) in ratio.parts.iter().zip(ratio.sizes(ids.len())) {
        for &id in &ids[start..start + size] {
            assignment.insert(id, part.0);
        }
        start += size;
    }
    let mut out = manifest.clone();
    for r in &mut out.images {
        r.split = Some(assignment[&r.id]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverlayStyle {
    /// Fill opacity for instance interiors.
    pub alpha: f64,
    /// Hue of the first instance, in degrees.
    pub hue_offset: f64,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self {
            alpha: 0.45,
            hue_offset: 0.0,
        }
    }
}

impl OverlayStyle {
    pub fn seeded(seed: u64) -> Self {
        Self {
            hue_offset: (seed % 360) as f64,
            ..Default::default()
        }
    }

    /// Successive instances step around the hue circle by the golden angle.
    pub fn color(&self, index: usize) -> [u8; 3] {
        const GOLDEN_ANGLE: f64 = 137.507_764_050_037_85;
        hue_to_rgb((self.hue_offset + GOLDEN_ANGLE * index as f64).rem_euclid(360.0))
    }
}

/// Instance interiors are tinted, boundaries drawn in solid color; pixels
/// outside every instance are copied unchanged.
pub fn render_overlay(img: &RgbImage, instances: &InstanceSet, style: &OverlayStyle) -> Result<RgbImage> {
    if img.dimensions() != instances.dimensions() {
        return Err(Error::DimensionMismatch {
            expected: img.dimensions(),
            actual: instances.dimensions(),
        });
    }
    let (w, h) = img.dimensions();
    let colors: Vec<[u8; 3]> = (0..instances.len()).map(|i| style.color(i)).collect();
    let labels = instances.labels();
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l == 0 {
                continue;
            }
            let boundary = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || labels[y * w + x - 1] != l
                || labels[y * w + x + 1] != l
                || labels[(y - 1) * w + x] != l
                || labels[(y + 1) * w + x] != l;
            let c = colors[l as usize - 1];
            let px = if boundary {
                c
            } else {
                let src = img.pixel(x, y);
                let mut px = [0u8; 3];
                for k in 0..3 {
                    let v = src[k] as f64 * (1.0 - style.alpha) + c[k] as f64 * style.alpha;
                    px[k] = v.round().clamp(0.0, 255.0) as u8;
                }
                px
            };
            out.put_pixel(x, y, px);
        }
    }
    Ok(out)
}

pub fn read_image(path: &Path) -> Result<RgbImage> {
    let decoded = image::ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .decode()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .into_rgb8();
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    RgbImage::new(w, h, decoded.into_raw())
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    use image::codecs::png::{CompressionType, FilterType, PngEncoder};
    use image::ImageEncoder;
    let mut buf = Vec::new();
    PngEncoder::new_with_quality(&mut buf, CompressionType::Fast, FilterType::Sub)
        .write_image(
            img.data(),
            img.width() as u32,
            img.height() as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::Encode {
            path: PathBuf::new(),
            message: e.to_string(),
        })?;
    Ok(buf)
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let bytes = encode_png(img).map_err(|e| match e {
        Error::Encode { message, .. } => Error::Encode {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })?;
    write_atomic(path, &bytes)
}

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
