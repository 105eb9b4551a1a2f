//! Out-of-distribution detection with predefined evenly-distributed class
//! centroids.
//!
//! A feature extractor is trained so its normalized embeddings align with a
//! fixed regular-simplex frame. At test time the cosine confidence is split
//! into an out-of-span part (`S_α`) and an in-span alignment part (`S_β`),
//! and the detector scores `S_α + ω · S_β`.

pub mod commands;
pub mod error;
pub mod evaluate;
pub mod frame;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod loss;
pub mod par;
pub mod pipeline;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
pub use evaluate::{auroc, tnr_at_tpr, tune_omega, MethodRow, Report};
pub use frame::{generate_frame, validate_frame, CentroidFrame};
pub use geometry::{decompose, score_batch, Decomposed, ScoreRecord};
pub use loss::{pedcc_loss, LossParams};
pub use par::Execution;
pub use trainer::{embed, train, EmbeddingSet, Model, NetworkSpec, TrainConfig};
