pub mod admission;
pub mod aggregate;
pub mod cli;
pub mod config;
pub mod dp;
pub mod experiments;
pub mod heavyhitter;
pub mod ratelimit;
pub mod token;
