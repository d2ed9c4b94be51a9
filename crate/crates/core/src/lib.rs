//! Semi-dynamic user-equilibrium traffic assignment on point-queue links.
//!
//! The engine solves a sequence of per-interval static equilibrium problems
//! coupled by link queue state. Link travel times respond to queues built up
//! in earlier intervals and to time-varying discharge rates, so a slow
//! maintenance vehicle occupying links one after another shows up as a moving
//! capacity drop. On top of the assignment sit two distorted reference models
//! (fixed-capacity queueing and static BPR) and a route optimizer that ranks
//! candidate maintenance routes by the system cost they induce.

pub mod benchmark;
pub mod capacity;
pub mod network;
pub mod optimizer;
pub mod queue;
pub mod report;
pub mod solver;
