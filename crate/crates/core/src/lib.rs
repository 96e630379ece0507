pub mod controller;
pub mod flowtable;
pub mod harness;
pub mod scheduling;
pub mod simnet;
pub mod stats;
pub mod time;

pub use time::SimTime;
