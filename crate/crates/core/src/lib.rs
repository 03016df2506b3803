//! Distributed prescribed-time convex optimization for networks of uncertain
//! Euler-Lagrange agents.
//!
//! Each agent runs an optimum-seeking auxiliary system driven by its measured
//! local gradient and its neighbours' outputs, and an adaptive tracking
//! controller whose gains grow without bound as the deadline approaches. The
//! outputs reach the minimiser of the summed objectives at the deadline and
//! stay there afterwards.

pub mod cli;
pub mod config;
pub mod controller;
pub mod design;
pub mod gain;
pub mod graph;
pub mod objective;
pub mod plant;
pub mod sim;
