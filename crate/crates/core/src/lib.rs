//! Object-level monocular depth estimation toolkit.
//!
//! * [`transfer`]: depth encodings for regression heads and their inverses.
//! * [`bins`]: uniform depth bins, Soft-Argmax and sub-bin refinement.
//! * [`losses`]: regression, classification and ordinal losses with gradients.
//! * [`metrics`]: greedy matching, mF1 / F1-Comb / Fitness, 2D mAP and MALE.
//! * [`synth`]: seeded synthetic ground truth and detectors.
//! * [`io`]: JSON-lines records and the evaluation report.

pub mod bins;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod synth;
pub mod transfer;
pub mod types;

pub use bins::{DepthBinSpec, InterpolationKind, SoftArgmaxConfig};
pub use error::{Error, Result};
pub use metrics::{evaluate, DepthDecode, EvalConfig, EvalReport, MatchResult, ThresholdGrid};
pub use transfer::{TransferKind, TransferSpec};
pub use types::{iou, BoundingBox, DepthPrediction, Detection, GroundTruthObject};
