//! Frame-level video affect analysis.
//!
//! The crate works on precomputed per-frame facial features (embeddings,
//! expression logits, valence and arousal) and covers everything after the
//! backbone:
//!
//! * [`dataio`]: feature and label interchange formats, alignment, and a
//!   seeded synthetic generator.
//! * [`heads`]: valence/arousal, expression and action-unit heads trained by
//!   mini-batch gradient descent, plus the Other/non-Other adapter for
//!   pretrained logits.
//! * [`postprocess`]: box-filter smoothing, per-unit threshold search and
//!   two-member blending.
//! * [`metrics`]: CCC, mean CCC, macro F1 and multi-label F1.
//! * [`pipeline`]: configuration and the train / evaluate / predict / sweep
//!   commands used by the CLI.

pub mod dataio;
pub mod heads;
pub mod matrix;
pub mod metrics;
pub mod pipeline;
pub mod postprocess;

pub use dataio::{Dataset, FrameFeatures, Task, TaskLabels, VideoTrack};
pub use matrix::Matrix;
