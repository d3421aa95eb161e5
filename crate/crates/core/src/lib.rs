//! Tar spot detection on corn leaf images.
//!
//! The classical pipeline thresholds HSV value and CIELAB a*, cleans the
//! fused mask morphologically and splits it into connected components.
//! Full-size images can be processed as overlapping windows whose votes are
//! fused per pixel. Results are evaluated at the instance level and
//! exchanged as COCO-style manifests.

pub mod annot;
pub mod autogt;
pub mod binmorph;
pub mod color;
pub mod detector;
pub mod error;
pub mod metrics;
pub mod synth;
pub mod tiling;

pub use annot::{Manifest, RleMask, Split, SplitRatio};
pub use autogt::{auto_ground_truth, GroundTruther, SeverityReport, ThresholdConfig, ThresholdGrid};
pub use binmorph::{BBox, BinaryMask, Connectivity, InstanceSet};
pub use color::{Channel, ChannelPlane, RgbImage};
pub use detector::{Detection, Detector, DetectorSpec};
pub use error::{Error, Result};
pub use metrics::{EvalReport, MatchConfig};
pub use tiling::TileConfig;
