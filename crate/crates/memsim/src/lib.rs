//! Simulator and in-situ training engine for neural networks whose weights
//! live in imprecise memristor crossbars.
//!
//! The crate models single devices (`device`), arrays of them with the
//! weight/conductance mapping (`crossbar`), pulse-based weight programming
//! schemes (`programmer`), crossbar-backed networks with momentum training
//! (`network`), dataset handling (`data`), and a config-driven experiment
//! harness (`harness`).

pub mod config;
pub mod crossbar;
pub mod data;
pub mod device;
pub mod error;
pub mod harness;
pub mod network;
pub mod programmer;
pub mod rng;

pub use error::{Error, Result};
