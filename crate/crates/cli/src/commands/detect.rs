use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use tarspot::annot::{read_image, render_overlay, write_atomic, write_png, OverlayStyle};
use tarspot::autogt::severity;
use tarspot::detector::tiled_instances;
use tarspot::{GroundTruther, InstanceSet, Manifest, RgbImage, SeverityReport};

use crate::args::{DetectArgs, GroundtruthArgs};
use crate::batch::{create_dir, expand_inputs, image_name, run_batch, stem, unique_names, Summary};
use crate::config::RunConfig;
use crate::CliError;

struct Processed<E> {
    name: String,
    part: Manifest,
    instances: usize,
    extra: E,
}

fn write_overlay(dir: &Path, name: &str, img: &RgbImage, set: &InstanceSet, style: &OverlayStyle) -> anyhow::Result<()> {
    let overlay = render_overlay(img, set, style)?;
    write_png(&dir.join(format!("{}.png", stem(name))), &overlay)?;
    Ok(())
}

fn single_image_manifest(name: &str, set: &InstanceSet) -> anyhow::Result<Manifest> {
    let mut part = Manifest::default();
    part.add_image(name, None, set, None)?;
    Ok(part)
}

/// Appends per-image manifests in input order.
fn merge<E>(results: Vec<Result<Processed<E>, crate::batch::Failure>>, summary: &mut Summary) -> (Manifest, Vec<(String, usize, E)>) {
    let mut manifest = Manifest::default();
    let mut rows = Vec::new();
    for r in results {
        match r {
            Ok(p) => match manifest.append(p.part) {
                Ok(()) => {
                    summary.ok();
                    rows.push((p.name, p.instances, p.extra));
                }
                Err(e) => summary.fail(crate::batch::Failure {
                    input: p.name,
                    error: e.to_string(),
                }),
            },
            Err(f) => summary.fail(f),
        }
    }
    (manifest, rows)
}

fn prepare(inputs: &[String], out: &Path, overlays: bool, summary: &mut Summary) -> Result<(Vec<PathBuf>, Option<PathBuf>), CliError> {
    let paths = expand_inputs(inputs)?;
    let (paths, rejected) = unique_names(&paths);
    rejected.into_iter().for_each(|f| summary.fail(f));
    create_dir(out)?;
    let overlay_dir = overlays.then(|| out.join("overlays"));
    if let Some(d) = &overlay_dir {
        create_dir(d)?;
    }
    Ok((paths, overlay_dir))
}

pub fn groundtruth(args: &GroundtruthArgs, mut cfg: RunConfig) -> Result<Summary, CliError> {
    cfg.apply_thresholds(&args.thresholds)?;
    let mut summary = Summary::new("groundtruth");
    let (paths, overlay_dir) = prepare(&args.inputs, &args.out, !args.no_overlays, &mut summary)?;
    let truther = GroundTruther::new(cfg.thresholds.clone())?;
    let style = OverlayStyle::seeded(cfg.seed);

    let results = run_batch(&paths, |p| p.display().to_string(), cfg.strict, |path| {
        let name = image_name(path);
        let img = read_image(path)?;
        let set = truther.run(&img);
        if let Some(dir) = &overlay_dir {
            write_overlay(dir, &name, &img, &set, &style)?;
        }
        log::info!("{name}: {} instances", set.len());
        Ok(Processed {
            part: single_image_manifest(&name, &set)?,
            instances: set.len(),
            name,
            extra: (),
        })
    })?;

    let (manifest, rows) = merge(results, &mut summary);
    let manifest_path = args.out.join("manifest.json");
    manifest.write(&manifest_path)?;
    #[derive(Serialize)]
    struct Row {
        file_name: String,
        instances: usize,
    }
    let rows: Vec<Row> = rows
        .into_iter()
        .map(|(file_name, instances, ())| Row { file_name, instances })
        .collect();
    summary.set("manifest", manifest_path);
    summary.set("thresholds", &cfg.thresholds);
    summary.set("images", rows);
    Ok(summary)
}

#[derive(Serialize)]
struct SeverityRow {
    file_name: String,
    #[serde(flatten)]
    report: Option<SeverityReport>,
}

pub fn detect(args: &DetectArgs, mut cfg: RunConfig) -> Result<Summary, CliError> {
    cfg.apply_thresholds(&args.thresholds)?;
    cfg.apply_tiling(&args.tile)?;
    cfg.apply_detector(&args.detector)?;
    let mut summary = Summary::new("detect");
    let (paths, overlay_dir) = prepare(&args.inputs, &args.out, !args.no_overlays, &mut summary)?;
    let detector = cfg.detector.build().map_err(|e| CliError::Usage(e.to_string()))?;
    // Leaf area always comes from the color thresholds, whatever finds the spots.
    let leaf = GroundTruther::new(cfg.thresholds.clone())?;
    let style = OverlayStyle::seeded(cfg.seed);
    let tiled = args.tile.tiled;

    let results = run_batch(&paths, |p| p.display().to_string(), cfg.strict, |path| {
        let name = image_name(path);
        let img = read_image(path)?;
        let start = Instant::now();
        let set = if tiled {
            tiled_instances(&img, detector.as_ref(), &cfg.tiling)
        } else {
            detector.instances(&img)
        }
        .with_context(|| format!("{} failed", detector.name()))?;
        let seconds = start.elapsed().as_secs_f64();
        let report = match severity(&set, &leaf.leaf_mask(&img)) {
            Ok(r) => Some(r),
            Err(e) => {
                log::warn!("{name}: no severity: {e}");
                None
            }
        };
        if let Some(dir) = &overlay_dir {
            write_overlay(dir, &name, &img, &set, &style)?;
        }
        log::info!("{name}: {} spots in {seconds:.2}s", set.len());
        Ok(Processed {
            part: single_image_manifest(&name, &set)?,
            instances: set.len(),
            name,
            extra: (report, seconds),
        })
    })?;

    let (manifest, rows) = merge(results, &mut summary);
    let manifest_path = args.out.join("detections.json");
    manifest.write(&manifest_path)?;
    let severity_rows: Vec<SeverityRow> = rows
        .iter()
        .map(|(name, _, (report, _))| SeverityRow {
            file_name: name.clone(),
            report: report.clone(),
        })
        .collect();
    let severity_path = args.out.join("severity.json");
    let mut text = serde_json::to_string_pretty(&severity_rows).context("severity report")?;
    text.push('\n');
    write_atomic(&severity_path, text.as_bytes())?;

    #[derive(Serialize)]
    struct Row<'a> {
        file_name: &'a str,
        spots: usize,
        infected_fraction: Option<f64>,
        seconds: f64,
    }
    let table: Vec<Row> = rows
        .iter()
        .map(|(name, n, (report, seconds))| Row {
            file_name: name,
            spots: *n,
            infected_fraction: report.as_ref().map(|r| r.infected_fraction),
            seconds: *seconds,
        })
        .collect();
    summary.set("detector", detector.name());
    summary.set("tiled", tiled);
    summary.set("manifest", manifest_path);
    summary.set("severity", severity_path);
    summary.set("images", table);
    Ok(summary)
}
