//! Simulated time on a fixed microsecond grid.
//!
//! Scenario files give times in seconds; they are rounded to the grid once at
//! load, so event ordering never depends on floating point comparisons.

use core::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

/// Microseconds since the start of the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MICROS_PER_SEC: u64 = 1_000_000;

    /// Rounds a non-negative number of seconds to the nearest microsecond.
    pub fn from_secs_f64(secs: f64) -> SimTime {
        if !(secs > 0.0) {
            return SimTime::ZERO;
        }
        SimTime(libm::round(secs * Self::MICROS_PER_SEC as f64) as u64)
    }

    pub fn from_micros(us: u64) -> SimTime {
        SimTime(us)
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / Self::MICROS_PER_SEC as f64
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}
