//! Instance detectors behind one interface.
//!
//! The classical detector runs the thresholding pipeline in-process. The
//! external detector hands patches to a subprocess through a request
//! directory and reads back run-length encoded masks, so a learned model can
//! be plugged in without linking it.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::annot::{write_png, RleMask};
use crate::autogt::{GroundTruther, ThresholdConfig};
use crate::binmorph::{connected_components, BBox, BinaryMask, Connectivity, InstanceSet};
use crate::color::RgbImage;
use crate::error::{Error, Result};
use crate::tiling::{make_grid, TileConfig, VoteField};

/// One detected instance in patch coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    /// Cropped to `bbox`.
    pub mask: BinaryMask,
    pub score: f64,
    pub label: u32,
}

impl Detection {
    /// `None` for an empty mask.
    pub fn from_full_mask(mask: &BinaryMask, score: f64, label: u32) -> Option<Self> {
        let bbox = mask.bounds()?;
        Some(Self {
            bbox,
            mask: mask.crop(bbox.x_min, bbox.y_min, bbox.width(), bbox.height()),
            score,
            label,
        })
    }

    pub fn area(&self) -> usize {
        self.mask.count()
    }
}

/// Union of all detection masks.
pub fn rasterize(detections: &[Detection], width: usize, height: usize) -> BinaryMask {
    let mut out = BinaryMask::new(width, height);
    for d in detections {
        out.paint(d.bbox.x_min, d.bbox.y_min, &d.mask);
    }
    out
}

/// Label image from possibly overlapping detections. Higher scores claim
/// contested pixels first; equal scores keep input order.
pub fn detections_to_instances(
    detections: &[Detection],
    width: usize,
    height: usize,
) -> Result<InstanceSet> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score).then(a.cmp(&b)));
    let mut labels = vec![0u32; width * height];
    for (rank, &i) in order.iter().enumerate() {
        let d = &detections[i];
        let (mw, mh) = d.mask.dimensions();
        if d.bbox.x_min + mw > width || d.bbox.y_min + mh > height {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                actual: (d.bbox.x_min + mw, d.bbox.y_min + mh),
            });
        }
        for y in 0..mh {
            for x in 0..mw {
                let slot = &mut labels[(d.bbox.y_min + y) * width + d.bbox.x_min + x];
                if d.mask.get(x, y) && *slot == 0 {
                    *slot = rank as u32 + 1;
                }
            }
        }
    }
    InstanceSet::from_labels(width, height, labels)
}

pub trait Detector: Send + Sync {
    fn name(&self) -> String;

    /// One list of detections per patch, in input order.
    fn detect_batch(&self, patches: &[RgbImage]) -> Result<Vec<Vec<Detection>>>;

    fn detect(&self, img: &RgbImage) -> Result<Vec<Detection>> {
        let mut out = self.detect_batch(std::slice::from_ref(img))?;
        out.pop()
            .ok_or_else(|| Error::MalformedResponse("detector returned no result".into()))
    }

    /// Binary masks per patch; equal to rasterizing `detect_batch`.
    fn patch_masks(&self, patches: &[RgbImage]) -> Result<Vec<BinaryMask>> {
        let detections = self.detect_batch(patches)?;
        Ok(patches
            .iter()
            .zip(&detections)
            .map(|(p, d)| rasterize(d, p.width(), p.height()))
            .collect())
    }

    fn instances(&self, img: &RgbImage) -> Result<InstanceSet> {
        detections_to_instances(&self.detect(img)?, img.width(), img.height())
    }

    /// Used to split fused vote masks into instances.
    fn connectivity(&self) -> Connectivity {
        Connectivity::Eight
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassicalStage {
    /// Thresholds, morphology and the area filter.
    #[default]
    Full,
    /// Fused thresholds only, split into connected components.
    ThresholdOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSpec {
    /// Split shell-style. `{request}` and `{response}` are replaced by the
    /// request and response directories; if `{request}` is absent the
    /// request directory is appended as the last argument.
    pub command: String,
    #[serde(default)]
    pub workdir: Option<PathBuf>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_score_threshold")]
    pub score_threshold: f64,
}

fn default_timeout() -> f64 {
    600.0
}

fn default_score_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorSpec {
    Classical {
        #[serde(default)]
        config: ThresholdConfig,
        #[serde(default)]
        stage: ClassicalStage,
    },
    External(ExternalSpec),
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec::Classical {
            config: ThresholdConfig::default(),
            stage: ClassicalStage::Full,
        }
    }
}

impl DetectorSpec {
    pub fn build(&self) -> Result<Box<dyn Detector>> {
        Ok(match self {
            DetectorSpec::Classical { config, stage } => {
                Box::new(ClassicalDetector::new(config.clone(), *stage)?)
            }
            DetectorSpec::External(spec) => Box::new(ExternalDetector::new(spec.clone())?),
        })
    }
}

pub struct ClassicalDetector {
    truther: GroundTruther,
    stage: ClassicalStage,
}

impl ClassicalDetector {
    pub fn new(cfg: ThresholdConfig, stage: ClassicalStage) -> Result<Self> {
        Ok(Self {
            truther: GroundTruther::new(cfg)?,
            stage,
        })
    }

    pub fn config(&self) -> &ThresholdConfig {
        self.truther.config()
    }
}

impl Detector for ClassicalDetector {
    fn name(&self) -> String {
        match self.stage {
            ClassicalStage::Full => "classical".into(),
            ClassicalStage::ThresholdOnly => "classical-threshold".into(),
        }
    }

    fn detect_batch(&self, patches: &[RgbImage]) -> Result<Vec<Vec<Detection>>> {
        patches
            .par_iter()
            .map(|p| {
                let set = self.instances(p)?;
                Ok(set
                    .instances()
                    .iter()
                    .map(|inst| Detection {
                        bbox: inst.bbox,
                        mask: set.instance_mask(inst.id),
                        score: 1.0,
                        label: 1,
                    })
                    .collect())
            })
            .collect()
    }

    fn patch_masks(&self, patches: &[RgbImage]) -> Result<Vec<BinaryMask>> {
        Ok(patches
            .par_iter()
            .map(|p| match self.stage {
                ClassicalStage::Full => self.truther.cleaned(p),
                ClassicalStage::ThresholdOnly => self.truther.candidates(p),
            })
            .collect())
    }

    fn instances(&self, img: &RgbImage) -> Result<InstanceSet> {
        Ok(match self.stage {
            ClassicalStage::Full => self.truther.run(img),
            ClassicalStage::ThresholdOnly => {
                connected_components(&self.truther.candidates(img), self.connectivity())
            }
        })
    }

    fn connectivity(&self) -> Connectivity {
        self.truther.config().connectivity
    }
}

#[derive(Serialize)]
struct ManifestEntry<'a> {
    patch_id: usize,
    file: &'a str,
    width: usize,
    height: usize,
}

#[derive(Deserialize)]
struct ResponseEntry {
    patch_id: usize,
    #[serde(default)]
    instances: Vec<ResponseInstance>,
}

#[derive(Deserialize)]
struct ResponseInstance {
    #[serde(default)]
    bbox: Option<[f64; 4]>,
    #[serde(default = "one")]
    score: f64,
    rle: Vec<u64>,
    #[serde(default = "label_one")]
    label: u32,
}

fn one() -> f64 {
    1.0
}

fn label_one() -> u32 {
    1
}

/// Subprocess detector. Calls are serialized; the model process is assumed
/// to use the machine on its own.
pub struct ExternalDetector {
    spec: ExternalSpec,
    argv: Vec<String>,
    lock: Mutex<()>,
}

impl ExternalDetector {
    pub fn new(spec: ExternalSpec) -> Result<Self> {
        let argv = shlex::split(&spec.command)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| Error::InvalidConfig(format!("cannot parse command {:?}", spec.command)))?;
        if !(spec.timeout_secs > 0.0) {
            return Err(Error::InvalidConfig("timeout must be positive".into()));
        }
        if !(0.0..=1.0).contains(&spec.score_threshold) {
            return Err(Error::InvalidConfig(format!(
                "score threshold {} outside [0, 1]",
                spec.score_threshold
            )));
        }
        Ok(Self {
            spec,
            argv,
            lock: Mutex::new(()),
        })
    }

    fn command(&self, request: &Path, response: &Path) -> Command {
        let req = request.to_string_lossy();
        let resp = response.to_string_lossy();
        let mut args: Vec<String> = self
            .argv
            .iter()
            .map(|a| a.replace("{request}", &req).replace("{response}", &resp))
            .collect();
        if !self.argv.iter().any(|a| a.contains("{request}")) {
            args.push(req.into_owned());
        }
        let mut cmd = Command::new(&args[0]);
        cmd.args(&args[1..])
            .env("TARSPOT_REQUEST_DIR", request)
            .env("TARSPOT_RESPONSE_DIR", response)
            .stdin(Stdio::null())
            .stdout(Stdio::null());
        if let Some(dir) = &self.spec.workdir {
            cmd.current_dir(dir);
        }
        cmd
    }

    fn write_request(dir: &Path, patches: &[RgbImage]) -> Result<()> {
        let names: Vec<String> = (0..patches.len()).map(|i| format!("patch_{i:06}.png")).collect();
        patches
            .par_iter()
            .zip(&names)
            .try_for_each(|(p, name)| write_png(&dir.join(name), p))?;
        let manifest: Vec<ManifestEntry> = patches
            .iter()
            .zip(&names)
            .enumerate()
            .map(|(patch_id, (p, file))| ManifestEntry {
                patch_id,
                file,
                width: p.width(),
                height: p.height(),
            })
            .collect();
        fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    fn run_process(&self, request: &Path, response: &Path, stderr_path: &Path) -> Result<()> {
        let stderr = fs::File::create(stderr_path)?;
        let mut child = self.command(request, response).stderr(stderr).spawn()?;
        let timeout = Duration::from_secs_f64(self.spec.timeout_secs);
        let status = match child.wait_timeout(timeout)? {
            Some(status) => status,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::DetectorTimeout(self.spec.timeout_secs));
            }
        };
        if !status.success() {
            let text = fs::read_to_string(stderr_path).unwrap_or_default();
            let tail: String = {
                let chars: Vec<char> = text.chars().collect();
                chars[chars.len().saturating_sub(2000)..].iter().collect()
            };
            return Err(Error::DetectorFailed {
                status: status.to_string(),
                stderr: tail,
            });
        }
        Ok(())
    }

    fn parse_response(&self, path: &Path, patches: &[RgbImage]) -> Result<Vec<Vec<Detection>>> {
        let bytes = fs::read(path)
            .map_err(|e| Error::MalformedResponse(format!("{}: {e}", path.display())))?;
        let entries: Vec<ResponseEntry> = serde_json::from_slice(&bytes)
            .map_err(|e| Error::MalformedResponse(format!("detections.json: {e}")))?;
        let mut out: Vec<Option<Vec<Detection>>> = vec![None; patches.len()];
        for entry in entries {
            let patch = patches.get(entry.patch_id).ok_or_else(|| {
                Error::MalformedResponse(format!("unknown patch_id {}", entry.patch_id))
            })?;
            let slot = &mut out[entry.patch_id];
            if slot.is_some() {
                return Err(Error::MalformedResponse(format!(
                    "patch_id {} listed twice",
                    entry.patch_id
                )));
            }
            let mut dets = Vec::new();
            for inst in entry.instances {
                if !inst.score.is_finite() {
                    return Err(Error::MalformedResponse(format!(
                        "non-finite score in patch {}",
                        entry.patch_id
                    )));
                }
                if inst.score < self.spec.score_threshold {
                    continue;
                }
                if let Some(b) = inst.bbox {
                    if b.iter().any(|v| !v.is_finite()) {
                        return Err(Error::MalformedResponse(format!(
                            "non-finite bbox in patch {}",
                            entry.patch_id
                        )));
                    }
                }
                let mask = RleMask::new(patch.width(), patch.height(), inst.rle)
                    .and_then(|r| r.decode())
                    .map_err(|e| {
                        Error::MalformedResponse(format!("patch {}: {e}", entry.patch_id))
                    })?;
                // The reported box is advisory; the mask defines the instance.
                if let Some(d) = Detection::from_full_mask(&mask, inst.score, inst.label) {
                    dets.push(d);
                }
            }
            *slot = Some(dets);
        }
        out.into_iter()
            .enumerate()
            .map(|(i, d)| {
                d.ok_or_else(|| Error::MalformedResponse(format!("patch_id {i} missing")))
            })
            .collect()
    }
}

impl Detector for ExternalDetector {
    fn name(&self) -> String {
        format!("external:{}", self.argv[0])
    }

    fn detect_batch(&self, patches: &[RgbImage]) -> Result<Vec<Vec<Detection>>> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let scratch = tempfile::Builder::new().prefix("tarspot-detect").tempdir()?;
        let request = scratch.path().join("request");
        let response = scratch.path().join("response");
        fs::create_dir(&request)?;
        fs::create_dir(&response)?;
        Self::write_request(&request, patches)?;
        self.run_process(&request, &response, &scratch.path().join("stderr.log"))?;
        self.parse_response(&response.join("detections.json"), patches)
    }
}

/// Votes of every grid window; independent of the vote threshold.
pub fn tiled_votes(img: &RgbImage, detector: &dyn Detector, tile: &TileConfig) -> Result<VoteField> {
    let grid = make_grid(img.width(), img.height(), tile)?;
    let mut votes = VoteField::new(img.width(), img.height());
    for chunk in grid.windows.chunks(tile.batch_size) {
        let patches = chunk
            .iter()
            .map(|w| img.crop(w.x, w.y, w.w, w.h))
            .collect::<Result<Vec<_>>>()?;
        let masks = detector.patch_masks(&patches)?;
        if masks.len() != chunk.len() {
            return Err(Error::MalformedResponse(format!(
                "{} masks for {} patches",
                masks.len(),
                chunk.len()
            )));
        }
        let batch: Vec<_> = chunk.iter().copied().zip(masks.iter()).collect();
        votes.accumulate_batch(&batch)?;
    }
    Ok(votes)
}

/// Tiled detection: windows are detected in batches, votes are normalized by
/// coverage and thresholded, and the fused mask is split into instances.
pub fn tiled_instances(
    img: &RgbImage,
    detector: &dyn Detector,
    tile: &TileConfig,
) -> Result<InstanceSet> {
    let fused = tiled_votes(img, detector, tile)?.fuse(tile.vote_threshold)?;
    Ok(connected_components(&fused, detector.connectivity()))
}

/// Whole-image detection.
pub fn detect(img: &RgbImage, spec: &DetectorSpec) -> Result<Vec<Detection>> {
    spec.build()?.detect(img)
}

pub fn detect_tiled(img: &RgbImage, spec: &DetectorSpec, tile: &TileConfig) -> Result<InstanceSet> {
    tiled_instances(img, spec.build()?.as_ref(), tile)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spotted(w: usize, h: usize, spots: &[(usize, usize, usize)]) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let inside = spots.iter().any(|&(cx, cy, r)| {
                let dx = x as f64 - cx as f64;
                let dy = y as f64 - cy as f64;
                dx * dx + dy * dy <= (r * r) as f64
            });
            if inside {
                [20, 15, 10]
            } else {
                [60, 160, 50]
            }
        })
    }

    #[test]
    fn classical_masks_match_rasterized_detections() {
        let img = spotted(80, 60, &[(20, 20, 6), (60, 40, 5), (79, 0, 4)]);
        for stage in [ClassicalStage::Full, ClassicalStage::ThresholdOnly] {
            let det = ClassicalDetector::new(ThresholdConfig::default(), stage).unwrap();
            let fast = det.patch_masks(std::slice::from_ref(&img)).unwrap();
            let dets = det.detect(&img).unwrap();
            assert_eq!(fast[0], rasterize(&dets, 80, 60));
            assert_eq!(dets.len(), 3);
        }
    }

    #[test]
    fn detection_round_trip_through_instances() {
        let img = spotted(50, 50, &[(10, 10, 4), (35, 30, 6)]);
        let det = ClassicalDetector::new(ThresholdConfig::default(), ClassicalStage::Full).unwrap();
        let dets = det.detect(&img).unwrap();
        let set = detections_to_instances(&dets, 50, 50).unwrap();
        assert_eq!(set.labels(), det.instances(&img).unwrap().labels());
    }

    #[test]
    fn overlapping_detections_prefer_higher_score() {
        let a = Detection::from_full_mask(&BinaryMask::from_fn(4, 1, |x, _| x < 3), 0.6, 1).unwrap();
        let b = Detection::from_full_mask(&BinaryMask::from_fn(4, 1, |x, _| x > 0), 0.9, 1).unwrap();
        let set = detections_to_instances(&[a, b], 4, 1).unwrap();
        // b claims 1..4 first and is numbered after a by scan order.
        assert_eq!(set.labels(), &[1, 2, 2, 2]);
    }

    #[test]
    fn tiled_single_window_equals_whole_image() {
        let img = spotted(60, 40, &[(10, 10, 4), (40, 25, 7)]);
        let tile = TileConfig {
            window_w: 60,
            window_h: 40,
            stride_x: 15,
            stride_y: 10,
            ..Default::default()
        };
        let spec = DetectorSpec::default();
        let tiled = detect_tiled(&img, &spec, &tile).unwrap();
        let whole = spec.build().unwrap().instances(&img).unwrap();
        assert_eq!(tiled.labels(), whole.labels());
    }

    #[test]
    fn spec_from_json() {
        let spec: DetectorSpec =
            serde_json::from_str(r#"{"kind": "external", "command": "run {request} {response}"}"#)
                .unwrap();
        match spec {
            DetectorSpec::External(e) => {
                assert_eq!(e.score_threshold, 0.5);
                assert_eq!(e.timeout_secs, 600.0);
            }
            _ => panic!("wrong kind"),
        }
        let spec: DetectorSpec = serde_json::from_str(r#"{"kind": "classical"}"#).unwrap();
        assert_eq!(spec, DetectorSpec::default());
    }

    #[test]
    fn external_rejects_bad_spec() {
        let spec = ExternalSpec {
            command: "  ".into(),
            workdir: None,
            timeout_secs: 1.0,
            score_threshold: 0.5,
        };
        assert!(ExternalDetector::new(spec).is_err());
    }
}
