//! A desk-scale Bayesian offline reinforcement-learning workbench.
//!
//! The crate covers the full pipeline on small tabular and continuous
//! environments where every quantity of interest can be computed exactly or
//! oracle-checked: posterior inference over MDP dynamics (exact conjugate
//! and randomised-prior ensembles), posterior-information-loss monitoring,
//! regret bounds and approximators, the SOReL safe-deployment loop and the
//! TOReL offline hyperparameter tuner.

pub mod dataset;
pub mod env;
pub mod error;
pub mod math;
pub mod mdp;
pub mod norms;
pub mod posterior;
pub mod sim;

pub use error::{Error, Result};
