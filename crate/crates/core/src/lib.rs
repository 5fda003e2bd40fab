//! Rollout, reward, and GRPO group formation for a search agent trained
//! jointly with a generative reranker.
//!
//! The pipeline is: [`rollout`] records trajectories (and every ranker call
//! made along the way), [`rewards`] scores them, [`grouping`] turns the
//! recorded ranker calls into GRPO groups without extra sampling and computes
//! advantages, and [`report`] summarizes trajectory files.

pub mod config;
pub mod grouping;
pub mod io;
pub mod policy;
pub mod protocol;
pub mod report;
pub mod retrieval;
pub mod rewards;
pub mod rollout;
pub mod textmetrics;
