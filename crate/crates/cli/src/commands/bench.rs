use std::time::Instant;

use serde::Serialize;
use tarspot::annot::read_image;
use tarspot::detector::tiled_instances;
use tarspot::metrics::{bench as time_runs, timing_table, TimingStats};
use tarspot::{Detector, RgbImage, TileConfig};

use crate::args::{BenchArgs, DetectorChoice};
use crate::batch::{expand_inputs, Failure, Summary};
use crate::config::RunConfig;
use crate::CliError;

fn time_tiled(images: &[RgbImage], detector: &dyn Detector, tile: &TileConfig, runs: usize) -> tarspot::Result<TimingStats> {
    let mut samples = Vec::new();
    for img in images {
        for _ in 0..runs {
            let start = Instant::now();
            tiled_instances(img, detector, tile)?;
            samples.push(start.elapsed().as_secs_f64());
        }
    }
    Ok(TimingStats::from_samples(samples))
}

/// Times each detector on every input. One untimed warm-up call per
/// detector builds its lookup tables; decoding is never timed.
pub fn bench(args: &BenchArgs, mut cfg: RunConfig) -> Result<Summary, CliError> {
    if args.runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    cfg.apply_thresholds(&args.thresholds)?;
    cfg.apply_tiling(&args.tile)?;
    let mut summary = Summary::new("bench");
    let mut images = Vec::new();
    for path in expand_inputs(&args.inputs)? {
        match read_image(&path) {
            Ok(img) => images.push(img),
            Err(e) => {
                log::error!("{}: {e}", path.display());
                summary.fail(Failure {
                    input: path.display().to_string(),
                    error: e.to_string(),
                });
            }
        }
    }
    if images.is_empty() {
        return Ok(summary);
    }
    let choices = if args.detectors.is_empty() {
        vec![DetectorChoice::Classical(Default::default())]
    } else {
        args.detectors.clone()
    };

    #[derive(Serialize)]
    struct Row {
        detector: String,
        tiled: bool,
        #[serde(flatten)]
        stats: TimingStats,
    }
    let mut rows = Vec::new();
    for choice in &choices {
        let label = if args.tile.tiled {
            format!("{} (tiled)", choice.label())
        } else {
            choice.label()
        };
        let mut c = cfg.clone();
        c.detector = cfg.detector_for(choice);
        c.apply_external_overrides(args.score_threshold, args.detector_timeout)?;
        let timed = c.detector.build().and_then(|det| {
            let first = std::slice::from_ref(&images[0]);
            if args.tile.tiled {
                time_tiled(first, det.as_ref(), &c.tiling, 1)?;
                time_tiled(&images, det.as_ref(), &c.tiling, args.runs)
            } else {
                time_runs(first, det.as_ref(), 1)?;
                time_runs(&images, det.as_ref(), args.runs)
            }
        });
        match timed {
            Ok(stats) => {
                summary.ok();
                log::info!("{label}: {:.3} s ± {:.3}", stats.mean, stats.sd);
                rows.push(Row {
                    detector: label,
                    tiled: args.tile.tiled,
                    stats,
                });
            }
            Err(e) => {
                if cfg.strict {
                    return Err(CliError::Fatal(anyhow::anyhow!(e).context(format!("{label} (strict mode)"))));
                }
                log::error!("{label}: {e}");
                summary.fail(Failure {
                    input: label,
                    error: e.to_string(),
                });
            }
        }
    }
    let table: Vec<(String, TimingStats)> = rows.iter().map(|r| (r.detector.clone(), r.stats.clone())).collect();
    eprint!("{}", timing_table(&table));
    summary.set("workers", cfg.workers);
    summary.set("images", images.len());
    summary.set("runs", args.runs);
    summary.set("rows", rows);
    Ok(summary)
}
