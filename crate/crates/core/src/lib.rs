//! Hybrid vision-language weld qualification.
//!
//! Similarity deltas from a text-aligned and an image-aligned embedding model
//! are standardized over a population and fused into one score per sample and
//! criterion. A detection tree combines criteria into an accept/reject verdict.

pub mod error;
pub mod fixtures;
pub mod fusion;
pub mod kb;
pub mod model;
pub mod retrieval;
pub mod scoring;
pub mod similarity;
pub mod synthetic;
pub mod table;
pub mod tree;

pub use error::{Error, Result};
pub use fusion::{confusion, score_deltas, Confusion, PopulationStats, ScoreTable};
pub use kb::{KnowledgeBase, ModelConfig, Snapshot, Store};
pub use model::{
    AssessmentCriterion, Embedding, ExpertLabel, FusionConfig, HybridScore, Prediction,
    PromptVariant, SampleRecord, SigmaConvention, SimilarityDelta, Space, Strategy,
};
pub use tree::{evaluate_tree, QualificationTrace, TreeConfig};
