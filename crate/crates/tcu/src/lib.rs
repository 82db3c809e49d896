pub mod bench;
pub mod cli;
pub mod encode;
pub mod fl;
pub mod guest;
pub mod registry;
pub mod service;
pub mod simzk;
pub mod vcc;
pub mod workflow;
pub mod softtee;
pub mod types;
