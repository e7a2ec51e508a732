//! Split inference of a layered transformer across a user device and an edge
//! node over a fading, lossy wireless link, and reinforcement-learned control
//! of the splitting point.

pub mod agents;
pub mod analysis;
pub mod channel;
pub mod environment;
pub mod error;
pub mod mathcore;
pub mod neuralnet;
pub mod splitlm;
pub mod surrogate;

pub use error::{Error, Result};
