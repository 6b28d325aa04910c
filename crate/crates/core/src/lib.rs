//! Offline three-stage visual token pruning.
//!
//! Given activations captured from a vision-language model (encoder `[CLS]`
//! attention, patch features and positions, per-layer LLM key vectors),
//! the engine decides which visual tokens survive each stage and what the
//! reduced sequence costs:
//!
//! 1. [`saliency`]: `[CLS]` attention top-k after the encoder.
//! 2. [`vic`] + [`copruning`]: density-peaks clustering of the survivors,
//!    then per-cluster elite selection by key norm and mean-merging of the
//!    rest, at LLM layer `l_s`.
//! 3. Key-norm top-k at layer `l_d`.
//!
//! [`pipeline::run_pipeline`] chains the stages; [`cost`] evaluates the
//! analytic FLOPs model; [`io`] reads and writes the bundle container;
//! [`cli`] is the `coprune` command.

pub mod cli;
pub mod copruning;
pub mod cost;
mod error;
pub mod io;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod report;
pub mod saliency;
pub mod schedule;
pub mod synth;
pub mod vic;

pub use error::{BundleError, Error, Result};
pub use model::{ActivationBundle, BundleMeta, ClusterAssignment, TokenKind, TokenSet};
pub use pipeline::{run_pipeline, PipelineOutput, PruneStrategy, StageTrace};
pub use schedule::PruneSchedule;
