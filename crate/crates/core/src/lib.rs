//! Competitive self-play league training.
//!
//! Actors roll out episodes against opponents sampled from a pool of frozen models, stream
//! trajectory segments to learners, and report outcomes to the league manager. Learners
//! publish parameters to the model pool and, at the end of each learning period, the league
//! freezes the current model into the pool and starts a successor.

pub mod actor;
pub mod api;
pub mod bench;
pub mod cluster;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod inf_server;
pub mod league;
pub mod learner;
pub mod model_pool;
pub mod policy;
pub mod proto;
pub mod rl;
pub mod rpc;
pub mod segment;

pub use error::{Error, Result};
