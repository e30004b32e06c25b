//! Command layer for the spatio-temporal hidden Markov model toolkit:
//! scenario simulation, single fits, the engine benchmark, relative
//! variation preprocessing and DIC-based state-count selection.
//!
//! The binary in `main.rs` is a thin argument parser over
//! [`commands`]; tests call the command functions directly.

pub mod commands;
pub mod config;
