//! Embedding-table compression toolkit for recommender systems.
//!
//! The pipeline ingests user-item interaction logs, clusters the bipartite
//! interaction graph by modularity maximization, and turns the clusters into
//! bucket assignments for shared embedding rows. Classic ID-hashing baselines
//! (modulo, frequency, double hashing, structural LSH) live alongside the
//! cluster-based schemes so they can be compared under identical backbones
//! (matrix factorization, light graph convolution, a logistic CTR head) and
//! metrics (Recall@K, NDCG@K, LogLoss, AUC, embedding smoothness).

pub mod clustering;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod hashing;
pub mod models;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
