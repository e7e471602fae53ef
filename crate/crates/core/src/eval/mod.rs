//! Evaluation: per-well embeddings, plate-level post-processing,
//! constrained retrieval and significance tests.

pub mod normalize;
pub mod pipeline;
pub mod retrieval;
pub mod stats;
pub mod store;

pub use normalize::{aggregate_well, aggregate_wells, mad_normalize, spherize, PlateNormalizer, WellEmbedding};
pub use pipeline::{
    counterfactual_embeddings, embed_wells, evaluate_retrieval, feature_embeddings, prepare_sets, Embedder, EvalConfig,
    EvalSets,
};
pub use retrieval::{permutation_test, retrieve_1nn, Constraint, PermutationTest, QueryMatch, RetrievalReport};
pub use stats::{rm_anova, t_test_one_tailed, Anova, TTest};
pub use store::{read_embeddings, write_embeddings};
