//! Grant recommendation as a learning-to-rank problem.
//!
//! The pipeline ingests grants, publications and funding links, builds
//! five-candidate ranking lists per funded publication, extracts 129
//! features per grant/publication pair (31 lexical statistics and one
//! embedding similarity for each of four grant-description views, plus the
//! year gap), trains a LambdaMART ranker and evaluates it with NDCG@k.

pub mod cli;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod ranker;
pub mod semfeat;
pub mod statfeat;
pub mod synth;

pub mod textproc;

pub use error::{Error, Result};
