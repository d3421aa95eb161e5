//! Settings are resolved in three layers: built-in defaults, then the TOML
//! file given by `--config`, then command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tarspot::detector::{ClassicalStage, ExternalSpec};
use tarspot::{DetectorSpec, MatchConfig, ThresholdConfig, TileConfig};

use crate::args::{DetectorArgs, DetectorChoice, GlobalArgs, MatchArgs, ThresholdArgs, TileArgs};
use crate::CliError;

pub const DEFAULT_SEED: u64 = 0;

/// Contents of a `--config` file. Every table is optional.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strict: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<ThresholdConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tiling: Option<TileConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matching: Option<MatchConfig>,
    /// The classical detector always runs with `thresholds`; a `config`
    /// key here is replaced.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detector: Option<DetectorSpec>,
}

impl FileConfig {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub workers: usize,
    pub seed: u64,
    pub strict: bool,
    pub thresholds: ThresholdConfig,
    pub tiling: TileConfig,
    pub matching: MatchConfig,
    pub detector: DetectorSpec,
}

impl RunConfig {
    /// Defaults overlaid with the config file and the global flags.
    pub fn resolve(global: &GlobalArgs) -> Result<Self, CliError> {
        let file = match &global.config {
            Some(path) => FileConfig::read(path)?,
            None => FileConfig::default(),
        };
        let workers = global
            .workers
            .or(file.workers)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if workers == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        let thresholds = file.thresholds.unwrap_or_default();
        let detector = match file.detector {
            Some(DetectorSpec::Classical { stage, .. }) => DetectorSpec::Classical {
                config: thresholds.clone(),
                stage,
            },
            Some(external) => external,
            None => DetectorSpec::Classical {
                config: thresholds.clone(),
                stage: ClassicalStage::Full,
            },
        };
        Ok(Self {
            workers,
            seed: global.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            strict: global.strict || file.strict.unwrap_or(false),
            thresholds,
            tiling: file.tiling.unwrap_or_default(),
            matching: file.matching.unwrap_or_default(),
            detector,
        })
    }

    pub fn apply_thresholds(&mut self, args: &ThresholdArgs) -> Result<(), CliError> {
        let t = &mut self.thresholds;
        if let Some(v) = args.threshold_v {
            t.t_v = v;
        }
        if let Some(a) = args.threshold_a {
            t.t_a = a;
        }
        if let Some(m) = args.min_area {
            t.min_area = m;
        }
        if let Some(n) = args.morph_iterations {
            t.morph_iterations = n;
        }
        if let Some(l) = args.leaf_a_max {
            t.leaf_a_max = l;
        }
        t.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if let DetectorSpec::Classical { config, .. } = &mut self.detector {
            *config = self.thresholds.clone();
        }
        Ok(())
    }

    pub fn apply_tiling(&mut self, args: &TileArgs) -> Result<(), CliError> {
        let t = &mut self.tiling;
        if let Some((w, h)) = args.window {
            t.window_w = w;
            t.window_h = h;
        }
        if let Some((x, y)) = args.stride {
            t.stride_x = x;
            t.stride_y = y;
        }
        if let Some(tau) = args.vote_threshold {
            t.vote_threshold = tau;
        }
        if let Some(b) = args.batch_size {
            t.batch_size = b;
        }
        t.validate().map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn apply_matching(&mut self, args: &MatchArgs) -> Result<(), CliError> {
        if let Some(iou) = args.iou {
            self.matching.iou_threshold = iou;
        }
        if let Some(avg) = args.averaging {
            self.matching.averaging = avg;
        }
        self.matching.validate().map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn apply_detector(&mut self, args: &DetectorArgs) -> Result<(), CliError> {
        if let Some(choice) = &args.detector {
            self.detector = self.detector_for(choice);
        }
        self.apply_external_overrides(args.score_threshold, args.detector_timeout)
    }

    /// Builds a spec for `choice`, keeping external settings from the file
    /// when it already names an external detector.
    pub fn detector_for(&self, choice: &DetectorChoice) -> DetectorSpec {
        match choice {
            DetectorChoice::Classical(stage) => DetectorSpec::Classical {
                config: self.thresholds.clone(),
                stage: *stage,
            },
            DetectorChoice::External(command) => {
                let base = match &self.detector {
                    DetectorSpec::External(e) => e.clone(),
                    _ => ExternalSpec {
                        command: String::new(),
                        workdir: None,
                        timeout_secs: 600.0,
                        score_threshold: 0.5,
                    },
                };
                DetectorSpec::External(ExternalSpec {
                    command: command.clone(),
                    ..base
                })
            }
        }
    }

    pub fn apply_external_overrides(
        &mut self,
        score_threshold: Option<f64>,
        timeout: Option<f64>,
    ) -> Result<(), CliError> {
        match &mut self.detector {
            DetectorSpec::External(e) => {
                if let Some(s) = score_threshold {
                    e.score_threshold = s;
                }
                if let Some(t) = timeout {
                    e.timeout_secs = t;
                }
            }
            DetectorSpec::Classical { .. } => {
                if score_threshold.is_some() || timeout.is_some() {
                    log::warn!("--score-threshold and --detector-timeout only affect external detectors");
                }
            }
        }
        Ok(())
    }

    pub fn install_thread_pool(&self) {
        // A second call in the same process (tests) keeps the first pool.
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(self.workers).build_global() {
            log::debug!("thread pool already configured: {e}");
        }
    }
}
