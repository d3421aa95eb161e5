use std::collections::BTreeMap;

use anyhow::Context;
use serde::Serialize;
use tarspot::annot::{read_image, render_overlay, split_dataset, write_atomic, write_png, OverlayStyle};
use tarspot::Manifest;

use crate::args::{ExportArgs, OverlayArgs, SplitArgs};
use crate::batch::{create_dir, images_dir, read_manifest, run_batch, stem, Summary};
use crate::config::RunConfig;
use crate::CliError;

const UNSPLIT: &str = "unsplit";

/// Writes `<out>/<split>/annotations.json` and `<out>/<split>/images/` for
/// every split present; images without a split go to `unsplit`.
pub fn export(args: &ExportArgs, cfg: RunConfig) -> Result<Summary, CliError> {
    let manifest = read_manifest(&args.manifest)?;
    let src = images_dir(args.images.as_deref(), &args.manifest);
    let mut summary = Summary::new("export");

    let copied = run_batch(&manifest.images, |r| r.file_name.clone(), cfg.strict, |rec| {
        let group = rec.split.map_or(UNSPLIT, |s| s.as_str());
        let dir = args.out.join(group).join("images");
        create_dir(&dir)?;
        let bytes = std::fs::read(src.join(&rec.file_name))
            .with_context(|| format!("reading {}", src.join(&rec.file_name).display()))?;
        write_atomic(&dir.join(&rec.file_name), &bytes)?;
        Ok(rec.id)
    })?;

    let mut groups: BTreeMap<&str, Manifest> = BTreeMap::new();
    for (rec, r) in manifest.images.iter().zip(copied) {
        match r {
            Ok(_) => {
                summary.ok();
                let group = rec.split.map_or(UNSPLIT, |s| s.as_str());
                let m = groups.entry(group).or_insert_with(|| Manifest {
                    images: Vec::new(),
                    annotations: Vec::new(),
                    categories: manifest.categories.clone(),
                });
                m.images.push(rec.clone());
                m.annotations
                    .extend(manifest.annotations.iter().filter(|a| a.image_id == rec.id).cloned());
            }
            Err(f) => summary.fail(f),
        }
    }
    #[derive(Serialize)]
    struct Group {
        split: String,
        images: usize,
        annotations: usize,
        manifest: std::path::PathBuf,
    }
    let mut rows = Vec::new();
    for (group, m) in groups {
        let path = args.out.join(group).join("annotations.json");
        m.write(&path)?;
        rows.push(Group {
            split: group.to_string(),
            images: m.images.len(),
            annotations: m.annotations.len(),
            manifest: path,
        });
    }
    summary.set("splits", rows);
    Ok(summary)
}

pub fn split(args: &SplitArgs, cfg: RunConfig) -> Result<Summary, CliError> {
    let manifest = read_manifest(&args.manifest)?;
    let out = split_dataset(&manifest, &args.ratio, cfg.seed, args.force)
        .map_err(|e| CliError::Fatal(anyhow::anyhow!(e)))?;
    out.write(&args.out)?;
    let mut summary = Summary::new("split");
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for rec in &out.images {
        summary.ok();
        *counts.entry(rec.split.map_or(UNSPLIT.into(), |s| s.to_string())).or_default() += 1;
    }
    summary.set("seed", cfg.seed);
    summary.set("counts", counts);
    summary.set("manifest", &args.out);
    Ok(summary)
}

pub fn overlay(args: &OverlayArgs, cfg: RunConfig) -> Result<Summary, CliError> {
    let manifest = read_manifest(&args.manifest)?;
    let src = images_dir(args.images.as_deref(), &args.manifest);
    create_dir(&args.out)?;
    let style = OverlayStyle::seeded(cfg.seed);
    let mut summary = Summary::new("overlay");
    let results = run_batch(&manifest.images, |r| r.file_name.clone(), cfg.strict, |rec| {
        let img = read_image(&src.join(&rec.file_name))?;
        let set = manifest.instances(rec.id)?;
        let path = args.out.join(format!("{}.png", stem(&rec.file_name)));
        write_png(&path, &render_overlay(&img, &set, &style)?)?;
        Ok(path)
    })?;
    let mut written = Vec::new();
    for r in results {
        match r {
            Ok(p) => {
                summary.ok();
                written.push(p);
            }
            Err(f) => summary.fail(f),
        }
    }
    summary.set("overlays", written);
    Ok(summary)
}
