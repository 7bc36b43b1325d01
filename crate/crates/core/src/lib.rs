//! Topic models of social annotation.
//!
//! Tagging data is a multiset of `<resource, user, tag>` tuples. Three
//! collapsed Gibbs samplers are provided over it:
//!
//! * [`lda`]: LDA with resources as documents and tags as words.
//! * [`itm`]: the Interest Topic Model, which draws every tag from a
//!   resource topic *and* a user interest.
//! * [`hdpitm`]: ITM with hierarchical Dirichlet process priors, so the
//!   numbers of topics and interests are inferred.
//!
//! [`synth`] generates ground-truth corpora with tunable tag ambiguity and user
//! interest variation, and [`eval`] scores learned resource profiles against
//! that truth or ranks resources by similarity.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod hdpitm;
pub mod hyper;
pub mod itm;
pub mod lda;
pub mod posterior;
pub mod rng;
pub mod sampling;
pub mod snapshot;
pub mod synth;
pub mod table;

pub use corpus::{parse_triples, Corpus, CorpusStats, InputFormat, Post, Triple};
pub use error::{Error, Result};
pub use posterior::Posterior;
pub use table::{Matrix, Tensor3};
