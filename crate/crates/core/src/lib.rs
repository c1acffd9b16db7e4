//! Hypernetwork-generated dynamics models.
//!
//! An interaction encoder and a shape encoder summarise a system into a
//! latent code; a hypernetwork turns that code into the full weight vector of
//! a small dynamics MLP. The crate also ships the toy pushing and locomotion
//! environments, the comparison baselines, a random-shooting MPC planner and
//! the experiment harness used to train and evaluate all of them.

pub mod autodiff;
pub mod baselines;
pub mod env;
pub mod encoders;
pub mod error;
pub mod harness;
pub mod hypernet;
pub mod model;
pub mod norm;
pub mod planner;
pub mod rng;

pub use error::{Error, Result};
