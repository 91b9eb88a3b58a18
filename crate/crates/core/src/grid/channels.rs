//! The 21 canonical variables and their fixed index order.

use super::{GridError, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Number of canonical channels in a full stack.
pub const NUM_CHANNELS: usize = 21;

/// Identifier of one atmospheric variable.
///
/// Geopotential height Z (m), temperature T (K) and wind components U/V
/// (m/s) at 850/700/500/200 hPa, then the surface set: 2-m temperature (K),
/// mean sea-level pressure (Pa), 10-m winds and 10-m wind speed (m/s).
/// Declaration order is the canonical serialization order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum ChannelId {
    Z850,
    Z700,
    Z500,
    Z200,
    T850,
    T700,
    T500,
    T200,
    U850,
    U700,
    U500,
    U200,
    V850,
    V700,
    V500,
    V200,
    T2m,
    Msl,
    U10m,
    V10m,
    Ws10m,
}

impl ChannelId {
    /// All channels in canonical index order.
    pub const ALL: [ChannelId; NUM_CHANNELS] = [
        ChannelId::Z850,
        ChannelId::Z700,
        ChannelId::Z500,
        ChannelId::Z200,
        ChannelId::T850,
        ChannelId::T700,
        ChannelId::T500,
        ChannelId::T200,
        ChannelId::U850,
        ChannelId::U700,
        ChannelId::U500,
        ChannelId::U200,
        ChannelId::V850,
        ChannelId::V700,
        ChannelId::V500,
        ChannelId::V200,
        ChannelId::T2m,
        ChannelId::Msl,
        ChannelId::U10m,
        ChannelId::V10m,
        ChannelId::Ws10m,
    ];

    /// Canonical index of this channel.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Channel at a canonical index.
    pub fn from_index(index: usize) -> Result<ChannelId> {
        ChannelId::ALL
            .get(index)
            .copied()
            .ok_or_else(|| GridError::UnknownChannel(format!("#{index}")))
    }

    /// Serialized name, as stored in field containers.
    pub fn name(self) -> &'static str {
        match self {
            ChannelId::Z850 => "Z850",
            ChannelId::Z700 => "Z700",
            ChannelId::Z500 => "Z500",
            ChannelId::Z200 => "Z200",
            ChannelId::T850 => "T850",
            ChannelId::T700 => "T700",
            ChannelId::T500 => "T500",
            ChannelId::T200 => "T200",
            ChannelId::U850 => "U850",
            ChannelId::U700 => "U700",
            ChannelId::U500 => "U500",
            ChannelId::U200 => "U200",
            ChannelId::V850 => "V850",
            ChannelId::V700 => "V700",
            ChannelId::V500 => "V500",
            ChannelId::V200 => "V200",
            ChannelId::T2m => "T2M",
            ChannelId::Msl => "MSL",
            ChannelId::U10m => "U10M",
            ChannelId::V10m => "V10M",
            ChannelId::Ws10m => "WS10M",
        }
    }

    /// Parse a serialized name.
    pub fn from_name(name: &str) -> Result<ChannelId> {
        ChannelId::ALL
            .iter()
            .copied()
            .find(|c| c.name() == name)
            .ok_or_else(|| GridError::UnknownChannel(name.to_string()))
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_indices() {
        assert_eq!(ChannelId::Z850.index(), 0);
        assert_eq!(ChannelId::Msl.index(), 17);
        assert_eq!(ChannelId::Ws10m.index(), 20);
        assert_eq!(ChannelId::T2m.index(), 16);
        assert_eq!(ChannelId::ALL.len(), NUM_CHANNELS);
    }

    #[test]
    fn index_name_roundtrip() {
        for (i, c) in ChannelId::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(ChannelId::from_index(i).unwrap(), *c);
            assert_eq!(ChannelId::from_name(c.name()).unwrap(), *c);
        }
    }

    #[test]
    fn unknown_name_reports_token() {
        let err = ChannelId::from_name("Q999").unwrap_err();
        assert!(err.to_string().contains("Q999"));
    }
}
