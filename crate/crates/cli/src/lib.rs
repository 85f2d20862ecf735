//! Command-line tools and HTTP service for controllable abductive reasoning.

pub mod api;
pub mod cli;
pub mod view;
