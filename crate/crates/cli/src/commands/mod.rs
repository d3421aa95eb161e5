mod bench;
mod calibrate;
mod dataset;
mod detect;
mod eval;
mod synth;

pub use bench::bench;
pub use calibrate::calibrate;
pub use dataset::{export, overlay, split};
pub use detect::{detect, groundtruth};
pub use eval::eval;
pub use synth::synth;
