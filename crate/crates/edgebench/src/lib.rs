//! Sockets, processes, files and the command line around `edgebench-core`.

pub mod clock;
pub mod cloud;
pub mod config;
pub mod consumer;
pub mod edge;
pub mod logs;
pub mod probe;
pub mod producer;
pub mod runner;
pub mod server;
pub mod shim;
pub mod stage;
pub mod wire;
