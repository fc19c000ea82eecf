//! Feature reflecting and dynamic loss trading for monocular 3D detection,
//! with a seeded synthetic task to train and ablate them on.
//!
//! ```
//! use dfr_core::{train, TrainConfig};
//!
//! let cfg = TrainConfig { steps: 2, ..TrainConfig::default() };
//! let run = train(&cfg).unwrap();
//! assert_eq!(run.history.len(), 2);
//! ```

pub mod ablate;
pub mod alfr;
pub mod detector;
pub mod dit;
mod error;
pub mod gradcheck;
pub mod losses;
mod nn;
pub mod scene;
pub mod train;

pub use ablate::{ablate, AblationRow, SeedResult, Variant};
pub use alfr::{alfr_forward, AlfrConfig, AlfrParams, AlfrVars, Flow, StreamOutputs};
pub use detector::{Detection, ModelConfig, ToyDetector};
pub use dit::{score_variant, trading_loss, trading_score, DitParams, DitVariant};
pub use error::{CoreError, Result};
pub use losses::{grouped_losses, ClusteringConfig, ObjectTarget, PredVars, StreamChoice};
pub use nn::{conv_tensors, pointwise, ConvVars};
pub use scene::{generate_scene, SyntheticScene};
pub use train::{evaluate, train, EvalSummary, HistoryRow, TrainConfig, TrainRun};
