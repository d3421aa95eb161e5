use anyhow::Context;
use serde::Serialize;
use tarspot::annot::{write_atomic, write_png};
use tarspot::synth::{generate, SynthConfig};
use tarspot::Manifest;

use crate::args::SynthArgs;
use crate::batch::{create_dir, run_batch, Summary};
use crate::config::RunConfig;
use crate::CliError;

#[derive(Serialize)]
struct Planted {
    file_name: String,
    seed: u64,
    spots: usize,
    planted_fraction: f64,
}

/// Writes `synth_NNNN.png` images, their ground truth as `truth.json` and
/// per-image generator facts as `planted.json`. Image `i` uses seed
/// `--seed + i`.
pub fn synth(args: &SynthArgs, cfg: RunConfig) -> Result<Summary, CliError> {
    let base = SynthConfig {
        width: args.width,
        height: args.height,
        spots: args.spots,
        radius: args.radius,
        min_gap: args.min_gap,
        dark_fraction: args.dark_fraction,
        t_v: args.gen_v,
        t_a: args.gen_a,
        strip_margin: args.strip_margin,
        seed: cfg.seed,
    };
    base.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if args.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    create_dir(&args.out)?;
    let indices: Vec<u64> = (0..args.count as u64).collect();
    let mut summary = Summary::new("synth");
    let results = run_batch(&indices, |i| format!("image {i}"), cfg.strict, |&i| {
        let seed = cfg.seed.wrapping_add(i);
        let s = generate(&base.with_seed(seed))?;
        let file_name = format!("synth_{i:04}.png");
        write_png(&args.out.join(&file_name), &s.image)?;
        let mut part = Manifest::default();
        part.add_image(&file_name, None, &s.truth, None)?;
        Ok((
            part,
            Planted {
                file_name,
                seed,
                spots: s.spots.len(),
                planted_fraction: s.planted_fraction(),
            },
        ))
    })?;
    let mut truth = Manifest::default();
    let mut planted = Vec::new();
    for r in results {
        match r {
            Ok((part, p)) => {
                truth.append(part)?;
                planted.push(p);
                summary.ok();
            }
            Err(f) => summary.fail(f),
        }
    }
    truth.write(&args.out.join("truth.json"))?;
    let mut text = serde_json::to_string_pretty(&planted).context("planted spots")?;
    text.push('\n');
    write_atomic(&args.out.join("planted.json"), text.as_bytes())?;
    summary.set("truth", args.out.join("truth.json"));
    summary.set("planted", args.out.join("planted.json"));
    summary.set("generator", &base);
    summary.set("suggested_thresholds", base.matching_thresholds());
    Ok(summary)
}
