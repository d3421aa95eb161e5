use std::collections::HashMap;

use anyhow::{anyhow, Context};
use tarspot::annot::write_atomic;
use tarspot::metrics::{EvalReport, ImageEval};
use tarspot::Manifest;

use crate::args::EvalArgs;
use crate::batch::{read_manifest, run_batch, Summary};
use crate::config::RunConfig;
use crate::CliError;

/// Pairs of (pred image id, truth image id, file name), in truth order.
fn align(pred: &Manifest, truth: &Manifest, args: &EvalArgs) -> Result<Vec<(u64, u64, String)>, CliError> {
    let by_name: HashMap<&str, u64> = pred.images.iter().map(|r| (r.file_name.as_str(), r.id)).collect();
    let selected: Vec<_> = truth
        .images
        .iter()
        .filter(|r| args.split.is_none() || r.split == args.split)
        .collect();
    let missing: Vec<&str> = selected
        .iter()
        .filter(|r| !by_name.contains_key(r.file_name.as_str()))
        .map(|r| r.file_name.as_str())
        .collect();
    let extra: Vec<&str> = if args.split.is_none() {
        pred.images
            .iter()
            .filter(|r| truth.image_by_file(&r.file_name).is_none())
            .map(|r| r.file_name.as_str())
            .collect()
    } else {
        Vec::new()
    };
    if selected.is_empty() || !missing.is_empty() || !extra.is_empty() {
        let show = |v: &[&str]| v.iter().take(5).copied().collect::<Vec<_>>().join(", ");
        return Err(CliError::Fatal(anyhow!(
            "manifests do not align: {} ground-truth images selected, {} without predictions [{}], {} predictions without ground truth [{}]",
            selected.len(),
            missing.len(),
            show(&missing),
            extra.len(),
            show(&extra)
        )));
    }
    Ok(selected
        .iter()
        .map(|r| (by_name[r.file_name.as_str()], r.id, r.file_name.clone()))
        .collect())
}

pub fn eval(args: &EvalArgs, mut cfg: RunConfig) -> Result<Summary, CliError> {
    cfg.apply_matching(&args.matching)?;
    let pred = read_manifest(&args.pred)?;
    let truth = read_manifest(&args.truth)?;
    let pairs = align(&pred, &truth, args)?;

    let mut summary = Summary::new("eval");
    let results = run_batch(&pairs, |(_, _, name)| name.clone(), cfg.strict, |(p, t, name)| {
        let p_set = pred.instances(*p)?;
        let t_set = truth.instances(*t)?;
        if p_set.dimensions() != t_set.dimensions() {
            return Err(anyhow!(
                "prediction is {:?} but ground truth is {:?}",
                p_set.dimensions(),
                t_set.dimensions()
            ));
        }
        Ok(ImageEval::compute(&p_set, &t_set, &cfg.matching)?.with_name(name.clone()))
    })?;
    let mut per_image = Vec::new();
    for r in results {
        match r {
            Ok(e) => {
                summary.ok();
                per_image.push(e);
            }
            Err(f) => summary.fail(f),
        }
    }
    let report = EvalReport::aggregate(per_image, &cfg.matching);
    eprint!("{}", report.to_table());
    if let Some(out) = &args.out {
        let mut text = serde_json::to_string_pretty(&report).context("serializing report")?;
        text.push('\n');
        write_atomic(out, text.as_bytes())?;
        summary.set("report", out);
    }
    summary.set("images", report.images);
    summary.set("iou_threshold", report.iou_threshold);
    summary.set("averaging", report.averaging);
    summary.set("counts", report.counts);
    summary.set("precision", report.precision);
    summary.set("recall", report.recall);
    summary.set("f1", report.f1);
    summary.set("mean_count_error", report.mean_count_error);
    summary.set("mean_area_error", report.mean_area_error);
    summary.set("pixel_f1", report.pixel_f1);
    Ok(summary)
}
