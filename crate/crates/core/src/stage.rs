use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of sleep stages after harmonisation.
pub const NUM_STAGES: usize = 5;

/// AASM sleep stage with N4 folded into N3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum SleepStage {
    W = 0,
    N1 = 1,
    N2 = 2,
    N3 = 3,
    Rem = 4,
}

impl SleepStage {
    pub const ALL: [SleepStage; NUM_STAGES] = [
        SleepStage::W,
        SleepStage::N1,
        SleepStage::N2,
        SleepStage::N3,
        SleepStage::Rem,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::Label(format!("stage index {index} outside 0..{NUM_STAGES}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            SleepStage::W => "W",
            SleepStage::N1 => "N1",
            SleepStage::N2 => "N2",
            SleepStage::N3 => "N3",
            SleepStage::Rem => "REM",
        }
    }
}

impl fmt::Display for SleepStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SleepStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "W" | "WAKE" => Ok(SleepStage::W),
            "N1" | "S1" => Ok(SleepStage::N1),
            "N2" | "S2" => Ok(SleepStage::N2),
            "N3" | "S3" => Ok(SleepStage::N3),
            "R" | "REM" => Ok(SleepStage::Rem),
            other => Err(Error::Label(format!("unknown sleep stage {other:?}"))),
        }
    }
}

/// Stage label as scored in a raw hypnogram, before harmonisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RawStage {
    W,
    N1,
    N2,
    N3,
    N4,
    Rem,
    Movement,
    Unknown,
}

impl RawStage {
    /// Harmonised stage, or `None` for epochs that must be discarded.
    pub fn harmonize(self) -> Option<SleepStage> {
        match self {
            RawStage::W => Some(SleepStage::W),
            RawStage::N1 => Some(SleepStage::N1),
            RawStage::N2 => Some(SleepStage::N2),
            RawStage::N3 | RawStage::N4 => Some(SleepStage::N3),
            RawStage::Rem => Some(SleepStage::Rem),
            RawStage::Movement | RawStage::Unknown => None,
        }
    }

    /// Parses the annotation vocabularies used by Sleep-EDF hypnograms and plain
    /// text hypnograms. Unrecognised text maps to `Unknown`.
    pub fn parse(text: &str) -> RawStage {
        let t = text.trim();
        let t = t.strip_prefix("Sleep stage ").unwrap_or(t);
        match t.to_ascii_uppercase().as_str() {
            "W" | "WAKE" | "0" => RawStage::W,
            "1" | "N1" | "S1" => RawStage::N1,
            "2" | "N2" | "S2" => RawStage::N2,
            "3" | "N3" | "S3" => RawStage::N3,
            "4" | "N4" | "S4" => RawStage::N4,
            "R" | "REM" | "5" => RawStage::Rem,
            "MOVEMENT TIME" | "MOVEMENT" | "MT" | "M" | "6" => RawStage::Movement,
            _ => RawStage::Unknown,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        for s in SleepStage::ALL {
            assert_eq!(SleepStage::from_index(s.index()).unwrap(), s);
        }
        assert!(matches!(SleepStage::from_index(5), Err(Error::Label(_))));
    }

    #[test]
    fn harmonisation_rules() {
        assert_eq!(RawStage::N4.harmonize(), Some(SleepStage::N3));
        assert_eq!(RawStage::Movement.harmonize(), None);
        assert_eq!(RawStage::Unknown.harmonize(), None);
        assert_eq!(RawStage::parse("Sleep stage 4"), RawStage::N4);
        assert_eq!(RawStage::parse("Sleep stage R"), RawStage::Rem);
        assert_eq!(RawStage::parse("Sleep stage ?"), RawStage::Unknown);
        assert_eq!(RawStage::parse("Movement time"), RawStage::Movement);
    }
}
