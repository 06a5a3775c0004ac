// SPDX-License-Identifier: Apache-2.0

//! Density-matrix ordinal regression over random Fourier features.
//!
//! Inputs are precomputed patch feature vectors grouped into bags. The
//! [`rff`] encoder maps each vector to a unit state, a [`qmr`] model (or the
//! per-class [`dmkdc`] baseline) turns the state into a distribution over
//! ordinal grades, and [`aggregation`] combines patch distributions into a
//! bag prediction whose variance serves as an uncertainty score.

pub mod aggregation;
pub mod cli;
pub mod dataio;
pub mod density;
pub mod dmkdc;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod posterior;
pub mod qmr;
pub mod rff;
pub mod rng;
pub mod training;

pub use aggregation::{BagPrediction, VoteMethod};
pub use dataio::{Checkpoint, FeatureDataset};
pub use dmkdc::DmkdcModel;
pub use error::{Error, Result};
pub use posterior::Posterior;
pub use qmr::{QmrConfig, QmrModel};
pub use rff::{RffEncoder, StateVector};
pub use training::{ModelKind, TrainReport, TrainedModel};
