use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The four image kinds: two sequences (FLAIR, T2 fast spin-echo) at two
/// axial slice locations (anterior commissure, lateral ventricles).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    FlairAc,
    FlairLv,
    T2Ac,
    T2Lv,
}

impl Modality {
    /// Ensemble input order.
    pub const ALL: [Modality; 4] = [
        Modality::FlairAc,
        Modality::FlairLv,
        Modality::T2Ac,
        Modality::T2Lv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::FlairAc => "flair_ac",
            Modality::FlairLv => "flair_lv",
            Modality::T2Ac => "t2_ac",
            Modality::T2Lv => "t2_lv",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_flair(self) -> bool {
        matches!(self, Modality::FlairAc | Modality::FlairLv)
    }

    pub fn is_ventricle_slice(self) -> bool {
        matches!(self, Modality::FlairLv | Modality::T2Lv)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown modality {0:?}; expected one of flair_ac, flair_lv, t2_ac, t2_lv")]
pub struct UnknownModality(pub String);

impl FromStr for Modality {
    type Err = UnknownModality;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| UnknownModality(s.to_string()))
    }
}
