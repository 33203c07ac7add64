//! Command line and HTTP front end for `layoutdiff`.

pub mod api;
pub mod commands;
pub mod config;
pub mod server;
