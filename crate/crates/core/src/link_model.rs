//! Secret-key generation rate of a QBB link.
//!
//! A single quantum channel yields `r0 * exp(-length / lambda_qkd)` secret
//! bits per second up to `d_max` and nothing beyond. A link bundles one or
//! more identical channels, and yields nothing at all while its QBER sits at
//! or above the security threshold (the raw key is discarded).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Conventional BB84 error threshold.
pub const DEFAULT_QBER_THRESHOLD: f64 = 0.11;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error("r0 must be positive and finite, got {0}")]
    R0(f64),
    #[error("lambda_qkd must be positive and finite, got {0}")]
    Lambda(f64),
    #[error("d_max must be positive and finite, got {0}")]
    DMax(f64),
    #[error("length must be non-negative and finite, got {0}")]
    Length(f64),
    #[error("num_quantum_channels must be at least 1")]
    Channels,
    #[error("qber must lie in [0, 0.5], got {0}")]
    Qber(f64),
    #[error("qber_threshold must lie in (0, 0.5), got {0}")]
    Threshold(f64),
}

/// Physical description of a QBB link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    /// Secret bit rate at zero distance, bits/s.
    pub r0: f64,
    /// Attenuation scaling length, km.
    pub lambda_qkd: f64,
    /// Distance beyond which no key is produced, km.
    pub d_max: f64,
    /// km.
    pub length: f64,
    pub num_quantum_channels: u32,
    pub qber: f64,
    pub qber_threshold: f64,
}

impl LinkProfile {
    pub fn new(r0: f64, lambda_qkd: f64, d_max: f64, length: f64) -> Result<LinkProfile, ProfileError> {
        let profile = LinkProfile {
            r0,
            lambda_qkd,
            d_max,
            length,
            num_quantum_channels: 1,
            qber: 0.0,
            qber_threshold: DEFAULT_QBER_THRESHOLD,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn with_channels(mut self, n: u32) -> LinkProfile {
        self.num_quantum_channels = n;
        self
    }

    pub fn with_qber(mut self, qber: f64) -> LinkProfile {
        self.qber = qber;
        self
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.r0) {
            return Err(ProfileError::R0(self.r0));
        }
        if !positive(self.lambda_qkd) {
            return Err(ProfileError::Lambda(self.lambda_qkd));
        }
        if !positive(self.d_max) {
            return Err(ProfileError::DMax(self.d_max));
        }
        if !(self.length.is_finite() && self.length >= 0.0) {
            return Err(ProfileError::Length(self.length));
        }
        if self.num_quantum_channels == 0 {
            return Err(ProfileError::Channels);
        }
        if !(0.0..=0.5).contains(&self.qber) {
            return Err(ProfileError::Qber(self.qber));
        }
        if !(self.qber_threshold > 0.0 && self.qber_threshold < 0.5) {
            return Err(ProfileError::Threshold(self.qber_threshold));
        }
        Ok(())
    }

    /// True when the link is too long to produce any key.
    pub fn beyond_reach(&self) -> bool {
        self.length > self.d_max
    }

    /// True when error correction would have to discard the raw key.
    pub fn qber_exceeded(&self) -> bool {
        self.qber >= self.qber_threshold
    }
}

/// Secret-key rate of one quantum channel, bits/s. Ignores QBER and channel count.
pub fn single_channel_rate(profile: &LinkProfile) -> f64 {
    if profile.beyond_reach() {
        0.0
    } else {
        profile.r0 * libm::exp(-profile.length / profile.lambda_qkd)
    }
}

/// Secret-key rate of the whole link, bits/s.
pub fn effective_link_rate(profile: &LinkProfile) -> f64 {
    if profile.qber_exceeded() {
        0.0
    } else {
        f64::from(profile.num_quantum_channels) * single_channel_rate(profile)
    }
}
