//! Steering service and command-line front end for `protots`.

pub mod cli;
pub mod service;
