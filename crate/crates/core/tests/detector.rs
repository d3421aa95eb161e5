use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tarspot::annot::{read_image, rle_encode};
use tarspot::detector::{
    detect, detect_tiled, tiled_instances, ClassicalDetector, ClassicalStage, ExternalDetector,
    ExternalSpec,
};
use tarspot::{
    auto_ground_truth, BinaryMask, Detector, DetectorSpec, Error, RgbImage, ThresholdConfig,
    TileConfig,
};

const GREEN: [u8; 3] = [40, 128, 30];
const DARK: [u8; 3] = [20, 14, 10];

fn spotted(w: usize, h: usize, spots: &[(f64, f64, f64)]) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        let hit = spots
            .iter()
            .any(|&(cx, cy, r)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r);
        if hit { DARK } else { GREEN }
    })
}

fn external(command: String, timeout_secs: f64) -> ExternalDetector {
    ExternalDetector::new(ExternalSpec {
        command,
        workdir: None,
        timeout_secs,
        score_threshold: 0.5,
    })
    .unwrap()
}

/// A stub model that answers with a canned response and keeps a copy of the
/// request for inspection.
fn replaying_stub(response: &Path, keep: &Path) -> ExternalDetector {
    let script = r#"cp "$0" "$2/detections.json" && cp -r "$1/." "$3/""#;
    external(
        format!(
            "sh -c '{script}' {} {{request}} {{response}} {}",
            response.display(),
            keep.display()
        ),
        30.0,
    )
}

fn patches() -> Vec<RgbImage> {
    vec![
        RgbImage::from_fn(6, 4, |x, y| [x as u8 * 40, y as u8 * 60, 9]),
        RgbImage::filled(5, 3, GREEN),
    ]
}

#[test]
fn external_stub_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let keep = dir.path().join("keep");
    std::fs::create_dir(&keep).unwrap();
    let a = BinaryMask::from_fn(6, 4, |x, y| (1..3).contains(&x) && (1..4).contains(&y));
    let b = BinaryMask::from_fn(6, 4, |x, y| x == 5 && y == 0);
    let faint = BinaryMask::from_fn(6, 4, |x, _| x == 4);
    let body = serde_json::json!([
        {"patch_id": 1, "instances": []},
        {"patch_id": 0, "instances": [
            // The bbox is deliberately wrong; the mask decides.
            {"bbox": [0, 0, 1, 1], "score": 0.9, "rle": rle_encode(&a).counts(), "label": 1},
            {"score": 0.6, "rle": rle_encode(&b).counts()},
            {"score": 0.3, "rle": rle_encode(&faint).counts()}
        ]}
    ]);
    let response = dir.path().join("canned.json");
    std::fs::write(&response, body.to_string()).unwrap();

    let det = replaying_stub(&response, &keep);
    let out = det.detect_batch(&patches()).unwrap();
    assert_eq!(out.len(), 2);
    assert!(out[1].is_empty());
    assert_eq!(out[0].len(), 2);
    assert_eq!(out[0][0].score, 0.9);
    assert_eq!(out[0][0].bbox.xywh(), [1, 1, 2, 3]);
    assert_eq!(out[0][0].area(), 6);
    assert_eq!(out[0][1].bbox.xywh(), [5, 0, 1, 1]);

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(keep.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(
        manifest,
        serde_json::json!([
            {"patch_id": 0, "file": "patch_000000.png", "width": 6, "height": 4},
            {"patch_id": 1, "file": "patch_000001.png", "width": 5, "height": 3}
        ])
    );
    for (i, p) in patches().iter().enumerate() {
        assert_eq!(&read_image(&keep.join(format!("patch_{i:06}.png"))).unwrap(), p);
    }

    let masks = det.patch_masks(&patches()).unwrap();
    assert_eq!(masks[0], a.or(&b).unwrap());
    assert!(masks[1].is_empty());
}

#[test]
fn request_dir_is_appended_and_exported() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("model.sh");
    std::fs::write(
        &script,
        r#"test -f "$1/manifest.json" && test "$1" = "$TARSPOT_REQUEST_DIR" || exit 1
printf '[{"patch_id":0},{"patch_id":1}]' > "$TARSPOT_RESPONSE_DIR/detections.json"
"#,
    )
    .unwrap();
    let det = external(format!("sh {}", script.display()), 30.0);
    let out = det.detect_batch(&patches()).unwrap();
    assert_eq!(out, vec![Vec::new(), Vec::new()]);
}

#[test]
fn failing_model_reports_status_and_stderr() {
    let det = external("sh -c 'echo model exploded >&2; exit 3'".into(), 30.0);
    match det.detect_batch(&patches()) {
        Err(Error::DetectorFailed { status, stderr }) => {
            assert!(status.contains('3'), "{status}");
            assert!(stderr.contains("model exploded"));
        }
        other => panic!("expected failure, got {other:?}"),
    }
}

#[test]
fn slow_model_times_out() {
    let det = external("sh -c 'sleep 20'".into(), 0.3);
    let start = Instant::now();
    assert!(matches!(det.detect_batch(&patches()), Err(Error::DetectorTimeout(_))));
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn malformed_responses_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let keep = dir.path().join("keep");
    std::fs::create_dir(&keep).unwrap();
    let cases = [
        ("not json", "not json"),
        ("unknown id", r#"[{"patch_id":0},{"patch_id":1},{"patch_id":2}]"#),
        ("duplicate id", r#"[{"patch_id":0},{"patch_id":0},{"patch_id":1}]"#),
        ("missing id", r#"[{"patch_id":1}]"#),
        ("bad rle sum", r#"[{"patch_id":0,"instances":[{"rle":[3,4]}]},{"patch_id":1}]"#),
        ("zero run", r#"[{"patch_id":0,"instances":[{"rle":[3,0,21]}]},{"patch_id":1}]"#),
    ];
    for (name, body) in cases {
        let path = dir.path().join("canned.json");
        std::fs::write(&path, body).unwrap();
        let result = replaying_stub(&path, &keep).detect_batch(&patches());
        assert!(matches!(result, Err(Error::MalformedResponse(_))), "{name}: {result:?}");
    }
    let silent = external("true".into(), 30.0);
    assert!(matches!(silent.detect_batch(&patches()), Err(Error::MalformedResponse(_))));
}

#[test]
fn bad_external_specs_are_rejected() {
    let spec = |command: &str, timeout_secs: f64, score_threshold: f64| ExternalSpec {
        command: command.into(),
        workdir: None,
        timeout_secs,
        score_threshold,
    };
    assert!(ExternalDetector::new(spec("", 1.0, 0.5)).is_err());
    assert!(ExternalDetector::new(spec("'unclosed", 1.0, 0.5)).is_err());
    assert!(ExternalDetector::new(spec("x", 0.0, 0.5)).is_err());
    assert!(ExternalDetector::new(spec("x", 1.0, 1.5)).is_err());
}

#[test]
fn classical_detector_agrees_with_pipeline() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let det = ClassicalDetector::new(ThresholdConfig::default(), ClassicalStage::Full).unwrap();
    for _ in 0..10 {
        let spots: Vec<_> = (0..rng.gen_range(0..8))
            .map(|_| (rng.gen_range(10.0..110.0), rng.gen_range(10.0..70.0), rng.gen_range(3.0..9.0)))
            .collect();
        let img = spotted(120, 80, &spots);
        let expected = auto_ground_truth(&img, &ThresholdConfig::default()).unwrap();
        assert_eq!(det.instances(&img).unwrap(), expected);
        let dets = det.detect(&img).unwrap();
        assert_eq!(dets.len(), expected.len());
        assert_eq!(
            dets.iter().map(|d| d.area()).sum::<usize>(),
            expected.total_area()
        );
    }
    let blank = RgbImage::filled(64, 48, GREEN);
    assert!(detect(&blank, &DetectorSpec::default()).unwrap().is_empty());
    assert!(tiled_instances(&blank, &det, &TileConfig { window_w: 32, window_h: 24, stride_x: 8, stride_y: 6, ..Default::default() })
        .unwrap()
        .is_empty());
}

#[test]
fn tiling_at_full_resolution_beats_downsampling() {
    // Small spots on a lattice across a full-size frame.
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let mut spots = Vec::new();
    for gy in 0..10 {
        for gx in 0..15 {
            let cx = 200.0 + gx as f64 * 400.0 + rng.gen_range(-50.0..50.0);
            let cy = 200.0 + gy as f64 * 400.0 + rng.gen_range(-50.0..50.0);
            spots.push((cx, cy, 3.0));
        }
    }
    let img = spotted(6000, 4000, &spots);
    let spec = DetectorSpec::default();
    let tiled = detect_tiled(&img, &spec, &TileConfig::default()).unwrap();
    let coarse = detect(&img.downsample(10).unwrap(), &spec).unwrap();
    assert_eq!(tiled.len(), spots.len());
    assert!(tiled.len() >= coarse.len());
}
