//! Auction-mediated control plane for optical circuits over flexible
//! timescales: a fiber exchange, global and local site control, a simulated
//! physical substrate, and a deterministic experiment harness.

pub mod events;
pub mod exchange;
pub mod harness;
pub mod ggc;
pub mod glsc;
pub mod protocol;
pub mod service;
pub mod sim;
pub mod substrate;
pub mod topology;
pub mod units;

pub use units::{Bps, Money, SimDuration, SimTime};
