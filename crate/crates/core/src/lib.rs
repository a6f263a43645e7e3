//! Compressing an ensemble of heterogeneous recommender teachers into a
//! compact student by replaying the teachers' training trajectories as an
//! easy-to-hard curriculum.
//!
//! The pipeline, bottom-up:
//!
//! * [`data`]: interaction logs, k-core filtering, per-user splits.
//! * [`models`]: MF / metric-learning / MLP scorers with hand-written gradients.
//! * [`teacher`]: teacher training with early stopping and trajectory capture.
//! * [`trajectory`]: the checkpointed rankings and their `HCTRAJ` file format.
//! * [`metrics`]: discrepancy `D@K`, Recall@K and NDCG@K.
//! * [`losses`]: the listwise objectives and their gradients.
//! * [`ensemble`]: consistency-weighted rank aggregation.
//! * [`curriculum`]: per-user, per-teacher checkpoint selection.
//! * [`distill`]: the student training loop and its ablations.
//! * [`analysis`]: trajectory diversity and the discrepancy study.

pub mod analysis;
pub mod curriculum;
pub mod data;
pub mod distill;
pub mod ensemble;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod synth;
pub mod teacher;
pub mod trajectory;

pub use error::{Error, Result};
pub use metrics::{RankedList, RelevanceParams};
pub use models::{EmbeddingModel, ModelKind};
pub use trajectory::TeacherTrajectory;
