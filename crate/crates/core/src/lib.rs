//! Trusted-relay quantum key distribution network model.
//!
//! QKD links fill per-link key stores at a distance-dependent rate; session
//! keys are relayed hop by hop under one-time-pad protection over virtual
//! circuits that are admitted, policed and scheduled per service class, and
//! rerouted when a link is lost to an eavesdropper.
//!
//! The crate is `no_std` (with `alloc`). Everything here is pure state and
//! arithmetic; file formats and the command line live in the `qkdnet` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod bits;
pub mod forwarding;
pub mod keystore;
pub mod link_model;
pub mod q3p;
pub mod rng;
pub mod routing;
pub mod scenario;
pub mod sim;
pub mod time;

pub use bits::BitString;
pub use keystore::{InsufficientKey, KeyBlock, KeyStore};
pub use link_model::LinkProfile;
pub use scenario::{Scenario, SimConfig, ValidationError};
pub use sim::{run, Metrics, Outcome, Simulator, TraceLevel, TraceRecord};
pub use time::SimTime;

use core::fmt;

use serde::{Deserialize, Serialize};

/// Dense index of a node, assigned in ascending order of the node's name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct NodeId(pub u32);

/// Dense index of a QBB link, assigned in scenario declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkId(pub u32);

/// Virtual circuit identifier, unique for the lifetime of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CircuitId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl LinkId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "l{}", self.0)
    }
}

impl fmt::Display for CircuitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "vc{}", self.0)
    }
}
