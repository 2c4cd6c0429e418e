//! Physics-infused transfer-mapping networks.
//!
//! A transfer MLP maps raw inputs to the latent parameters of a cheap
//! analytical model (the *partial physics*), and that model is evaluated
//! as the final differentiable stage of the network. Training runs on a
//! self-contained reverse-mode AD engine ([`tape`]).
//!
//! Two benchmark families are provided: the one-dimensional Gramacy-Lee
//! problems and an acoustic monopole field, along with a pure data-driven
//! baseline, a sequential hybrid baseline, spatial extrapolation splits and
//! a seeded experiment runner.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod models;
pub mod network;
pub mod parallel;
pub mod physics;
pub mod rng;
pub mod split;
pub mod suite;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
