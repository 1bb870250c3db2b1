pub mod acquire;
pub mod cli;
pub mod clock;
pub mod config;
pub mod convert;
pub mod daemon;
pub mod hal;
pub mod ops_log;
pub mod recover;
pub mod store;
