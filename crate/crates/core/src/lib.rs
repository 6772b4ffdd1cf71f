//! OCT region-of-interest comparison for intermediate AMD classification.
//!
//! The crate covers the whole pipeline: synthetic B-scan generation with
//! ground-truth layers ([`synth`]), layer-guided ROI extraction ([`roi`]), a
//! small VGG-style CNN with its training protocol ([`nn`]), ROC statistics
//! ([`eval`]) and an experiment runner that ties them together
//! ([`experiment`]).

pub mod dataset;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod nn;
pub mod rng;
pub mod roi;
pub mod synth;
pub mod types;

pub use dataset::{DatasetManifest, ManifestEntry, SplitAssignment};
pub use types::{BScan, ClassLabel, Image, LayerSegmentation};
