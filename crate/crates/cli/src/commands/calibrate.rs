use anyhow::Context;
use serde::Serialize;
use tarspot::annot::{read_image, write_atomic};
use tarspot::autogt::Calibrator;
use tarspot::ThresholdGrid;

use crate::args::{parse_range, CalibrateArgs};
use crate::batch::{create_dir, images_dir, read_manifest, Failure, Summary};
use crate::config::{FileConfig, RunConfig};
use crate::CliError;

fn axis(flag: &str, spec: &str) -> Result<Vec<f64>, CliError> {
    let (start, stop, step) = parse_range(spec).map_err(|e| CliError::Usage(format!("--{flag}: {e}")))?;
    ThresholdGrid::axis(start, stop, step).map_err(|e| CliError::Usage(format!("--{flag}: {e}")))
}

pub fn calibrate(args: &CalibrateArgs, mut cfg: RunConfig) -> Result<Summary, CliError> {
    cfg.apply_thresholds(&args.thresholds)?;
    cfg.apply_matching(&args.matching)?;
    let grid = ThresholdGrid::new(axis("grid-v", &args.grid_v)?, axis("grid-a", &args.grid_a)?)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let manifest = read_manifest(&args.truth)?;
    let dir = images_dir(args.images.as_deref(), &args.truth);
    let selected: Vec<_> = manifest
        .images
        .iter()
        .filter(|r| args.split.is_none() || r.split == args.split)
        .collect();
    if selected.is_empty() {
        let which = args.split.map_or(String::new(), |s| format!(" in split {s}"));
        return Err(CliError::Fatal(anyhow::anyhow!(
            "{}: no ground-truth images{which}",
            args.truth.display()
        )));
    }
    let annotated = selected
        .iter()
        .any(|r| manifest.annotations.iter().any(|a| a.image_id == r.id));
    if !annotated {
        return Err(CliError::Fatal(anyhow::anyhow!(
            "{}: selected images carry no ground-truth annotations",
            args.truth.display()
        )));
    }

    let mut summary = Summary::new("calibrate");
    let mut calibrator = Calibrator::new(grid.clone(), cfg.thresholds.clone(), cfg.matching.clone())?;
    // Sequential: each full-size image is reduced to ranks before the next loads.
    for rec in &selected {
        let path = dir.join(&rec.file_name);
        let loaded = (|| -> anyhow::Result<()> {
            let img = read_image(&path)?;
            let truth = manifest.instances(rec.id)?;
            calibrator.add(&img, truth)?;
            Ok(())
        })();
        match loaded {
            Ok(()) => summary.ok(),
            Err(e) => {
                if cfg.strict {
                    return Err(CliError::Fatal(e.context(format!("{} (strict mode)", path.display()))));
                }
                log::error!("{}: {e:#}", path.display());
                summary.fail(Failure {
                    input: path.display().to_string(),
                    error: format!("{e:#}"),
                });
            }
        }
    }
    if calibrator.is_empty() {
        return Ok(summary);
    }
    log::info!("searching {} grid points over {} images", grid.len(), calibrator.len());
    let cal = calibrator.run()?;

    create_dir(&args.out)?;
    let file = FileConfig {
        thresholds: Some(cal.best.clone()),
        ..Default::default()
    };
    let toml_path = args.out.join("thresholds.toml");
    let text = toml::to_string(&file).context("serializing thresholds")?;
    write_atomic(&toml_path, text.as_bytes())?;
    let csv_path = args.out.join("surface.csv");
    let mut csv = Vec::new();
    cal.write_surface_csv(&mut csv).context("writing surface")?;
    write_atomic(&csv_path, &csv)?;

    #[derive(Serialize)]
    struct Best {
        t_v: f64,
        t_a: f64,
        mean_f1: f64,
    }
    summary.set("grid", &grid);
    summary.set("grid_points", grid.len());
    summary.set(
        "best",
        Best {
            t_v: cal.best.t_v,
            t_a: cal.best.t_a,
            mean_f1: cal.best_f1,
        },
    );
    summary.set("thresholds", toml_path);
    summary.set("surface", csv_path);
    Ok(summary)
}
