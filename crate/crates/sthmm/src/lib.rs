//! Bayesian spatio-temporal hidden Markov models with a K-state autologistic
//! latent field.
//!
//! The latent process puts a Markov random field over sites (a fixed
//! neighbourhood graph) and a first-order Markov chain over time. Its
//! normalizing constant is intractable except on tiny instances, so the
//! parameter updates come in two flavours:
//!
//! * a pseudo-posterior Metropolis step, which replaces the joint latent
//!   distribution with the product of its full conditionals, and
//! * an approximate exchange step, which cancels the normalizing constant by
//!   augmenting with an auxiliary field sampled by a short, warm-started
//!   Gibbs run (plus a noisy variant averaging several auxiliary fields).
//!
//! Gaussian responses hang off the latent states with conjugate
//! Normal/Inverse-Wishart (or Normal/Inverse-Gamma) updates, so a full sweep
//! alternates conjugate emission draws, per-parameter latent-field parameter
//! moves, and a Gibbs sweep of the latent labels.
//!
//! The crate also ships the exact enumeration oracles used to validate the
//! conditionals on small instances, synthetic scenario generators, and the
//! posterior diagnostics (Geweke, batch-means MCSE, DIC, MAP decoding,
//! misclassification, MAE) used to compare the two engines.

pub mod diagnostics;
pub mod emission;
pub mod graph;
pub mod io;
pub mod latent;
pub mod samplers;
pub mod synthdata;

pub use graph::NeighborhoodSystem;
pub use latent::{LatentField, LatentParams};
