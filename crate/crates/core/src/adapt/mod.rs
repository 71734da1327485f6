//! Domain adaptation: sampling constructs from the knowledge source,
//! clustering them into a concept tree and validating them against the
//! command catalog until the interface stops growing.

pub mod crp;
pub mod em;
pub mod mcmc;
pub mod metrics;
pub mod tables;
pub mod tree;

pub use crp::{cluster, crp_prior_weights, features, ClusterState, Features, Likelihood};
pub use em::{
    adapt_domain, assemble_interface, expectation_expand, maximization_validate, retrieval_query, AdaptConfig,
    AdaptError, AdaptState, AdaptationReport, Hints, IterationRecord, Judged, Validation,
};
pub use mcmc::{acceptance, chain_rng, run_mcmc, ChainState, McmcConfig, McmcError, McmcRun};
pub use metrics::{convergence_metrics, ConvergenceMetrics};
pub use tables::estimate_tables;
pub use tree::{build_concept_tree, ConceptNode, ConceptTree, TreeError};
