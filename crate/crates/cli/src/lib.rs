//! Command-line front end for sflc images: the `sflc` commands, the block
//! socket protocol with its server and client, and the benchmarks.

pub mod app;
pub mod bench;
pub mod client;
pub mod protocol;
pub mod server;
