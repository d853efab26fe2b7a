//! Configuration, experiment runner and acceptance suite for `levyfbsde`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod criteria;
pub mod manifest;
pub mod registry;

pub use commands::{execute, Command, Options};
