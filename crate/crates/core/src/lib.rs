//! Multi-negative preference alignment for item-level recommenders.
//!
//! The crate is organised bottom-up:
//!
//! | module | contents |
//! |--------|----------|
//! | [`numerics`] | stable `log_sum_exp`, `log_sigmoid`, `softmax`, finite-difference gradients |
//! | [`preference`] | Plackett-Luce / Bradley-Terry preference probabilities, ranking sampler, brute-force marginalization |
//! | [`losses`] | SFT, BPR, sampled softmax, DPO and softmax-DPO losses with analytic gradients |
//! | [`policy`] | embedding and tabular policies with normalized log-probabilities and backprop |
//! | [`data`] | TSV ingestion, chronological splits, preference samples, candidate sets, synthetic data |
//! | [`training`] | SFT and alignment stages, SGD/Adam, checkpoints |
//! | [`evaluation`] | HR@1, curves, forward-evaluation cost model, parameter sweeps |
//! | [`gradcheck`] | randomized analytic vs finite-difference gradient checks |
//!
//! Every loss returns its value together with the gradient with respect to the
//! policy log-probabilities it consumed; the policies own the chain rule from
//! there back to their parameters.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod losses;
pub mod numerics;
pub mod policy;
pub mod preference;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
