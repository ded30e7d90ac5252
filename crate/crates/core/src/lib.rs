//! Evidential multi-view classification.
//!
//! Each view of a sample is mapped by a small evidence network to a
//! non-negative evidence vector, turned into a subjective-logic opinion
//! (class beliefs plus an uncertainty mass), and the opinions are fused with
//! Dempster's rule restricted to singletons plus the whole frame. The crate
//! also carries the evidential training objective, the training loop, a
//! portable multi-view dataset format, trust-oriented evaluation metrics and
//! a keyboard-typo noise injector.

pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod opinion;
pub mod perturb;
pub mod rng;
pub mod special;

pub use error::{Error, Result};
pub use opinion::{
    combine_all, combine_pair, dirichlet_from_opinion, expected_probs, opinion_from_evidence,
    DirichletParams, EvidenceVector, FusionOutcome, Opinion,
};
