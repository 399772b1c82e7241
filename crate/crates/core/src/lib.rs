//! Multitemporal hyperspectral unmixing with spatial and temporal endmember
//! variability, learned by recurrent variational inference over a Markov
//! state-space model.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: tensors, a reverse-mode tape, Glorot init, Adam.
//! - [`mixing`]: smooth DCT-based endmember variability and the Gaussian
//!   measurement model.
//! - [`abundance`]: softmax-basis maps, the Dirichlet Laplace approximation
//!   and the learned transition scale network.
//! - [`posterior`]: bidirectional LSTM encoder and the variational posterior.
//! - [`elbo`]: the factorized ELBO, training loop and estimation pass.
//! - [`synth`]: seeded synthetic sequence generators.
//! - [`baselines`]: VCA, FCLS, alignment, metrics and parameter accounting.
//! - [`io`]: cube files, configs, reports and plots.
//! - [`pipeline`]: end-to-end runs used by the command-line tool.

pub mod abundance;
pub mod baselines;
pub mod elbo;
pub mod error;
pub mod io;
pub mod linalg;
pub mod mixing;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod posterior;
pub mod sequence;
pub mod synth;

pub use error::{Error, Result};
