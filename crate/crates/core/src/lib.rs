pub mod config;
pub mod packages;
pub mod agent;
pub mod bootstrap;
pub mod notify;
pub mod batch;
pub mod rundown;
pub mod sim;
