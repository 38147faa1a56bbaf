//! Library surface of the `kvfunnel` harness: spec parsing, subcommand
//! implementations and the attention dump format. The binary in `main.rs`
//! is a thin argument-parsing wrapper over [`commands`].

pub mod commands;
pub mod dump;
pub mod spec;
