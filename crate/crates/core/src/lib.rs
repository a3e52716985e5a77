//! Multi-agent electricity-market bidding with graph-convolutional actor-critic
//! learners and an exact merit-order clearing engine.

pub mod cli;
pub mod grid;
pub mod market;
pub mod nn;
pub mod rl;
pub mod sim;
