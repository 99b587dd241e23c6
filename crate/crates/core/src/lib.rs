//! Interactive attribute-question retrieval.
//!
//! A target identity is searched for in a gallery by asking appearance
//! questions. Questions are ordered offline by greedily minimizing mean rank,
//! and a session stops asking once the entropy of the normalized affinity
//! scores drops to a budget.
//!
//! - [`gallery`]: schemas, records, synthetic generation, gallery files
//! - [`scorer`]: constraint descriptions and affinity functions
//! - [`metrics`]: top-k retrieval, rank, mean rank, entropy
//! - [`ordering`]: greedy and exhaustive question ordering, submodularity checks
//! - [`session`]: budgeted question-answer sessions, simulation, budget sweeps
//! - [`online`]: threshold-gated matching over a growing gallery

pub mod error;
pub mod fixtures;
pub mod gallery;
pub mod metrics;
pub mod online;
pub mod ordering;
pub mod query;
pub mod scorer;
pub mod session;
pub mod synth;

pub use error::{Error, Result};
pub use gallery::{
    generate_gallery, load_gallery, save_gallery, true_constraints, Facet, FacetId, FacetSchema,
    Gallery, GalleryConfig, Identity, ImageId, PersonRecord, Question, QuestionId,
};
pub use metrics::{entropy, mean_rank, rank_of, retrieve_topk, RankReport, TiePolicy};
pub use ordering::{greedy_order, Objective, QuestionSequence};
pub use query::Query;
pub use scorer::{
    candidate_set, score_gallery, AffinityVector, ConstraintSet, ScorerKind, ScorerSpec,
};
pub use session::{Session, SessionConfig, StopReason, Transcript};

/// Written into every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
