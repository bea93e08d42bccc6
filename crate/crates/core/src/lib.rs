//! GRU4Rec for session-based recommendation.
//!
//! Raw clickstreams are turned into train/test logs by [`datasets`], packed
//! into session-parallel mini-batches by [`corpus`], scored by the recurrent
//! [`model`], fitted with the losses and optimizer in [`training`], and
//! measured by [`eval`]. [`validation`] holds the executable correctness
//! suite and [`cli`] the `gru4rec` command.

pub mod cli;
pub mod corpus;
pub mod datasets;
pub mod eval;
pub mod faults;
pub mod model;
pub mod persist;
pub mod synthetic;
pub mod tensor;
pub mod training;
pub mod validation;
