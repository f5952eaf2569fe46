use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::modality::Modality;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Htn,
    Dm,
    Mtbi,
    Sad,
    Aad,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::Htn,
        Condition::Dm,
        Condition::Mtbi,
        Condition::Sad,
        Condition::Aad,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Htn => "htn",
            Condition::Dm => "dm",
            Condition::Mtbi => "mtbi",
            Condition::Sad => "sad",
            Condition::Aad => "aad",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Condition::Htn => "HTN",
            Condition::Dm => "DM",
            Condition::Mtbi => "mTBI",
            Condition::Sad => "SAD",
            Condition::Aad => "AAD",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// The five binary diagnosis flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IcdFlags {
    pub htn: bool,
    pub dm: bool,
    pub mtbi: bool,
    pub sad: bool,
    pub aad: bool,
}

impl IcdFlags {
    pub fn from_conditions(set: &[Condition]) -> Self {
        let mut flags = Self::default();
        for &c in set {
            flags.set(c, true);
        }
        flags
    }

    pub fn get(&self, c: Condition) -> bool {
        match c {
            Condition::Htn => self.htn,
            Condition::Dm => self.dm,
            Condition::Mtbi => self.mtbi,
            Condition::Sad => self.sad,
            Condition::Aad => self.aad,
        }
    }

    pub fn set(&mut self, c: Condition, value: bool) {
        match c {
            Condition::Htn => self.htn = value,
            Condition::Dm => self.dm = value,
            Condition::Mtbi => self.mtbi = value,
            Condition::Sad => self.sad = value,
            Condition::Aad => self.aad = value,
        }
    }

    pub fn count(&self) -> usize {
        Condition::ALL.iter().filter(|&&c| self.get(c)).count()
    }

    pub fn conditions(&self) -> Vec<Condition> {
        Condition::ALL
            .into_iter()
            .filter(|&c| self.get(c))
            .collect()
    }

    /// `none`, or the set flags joined with `+` (e.g. `HTN+DM`).
    pub fn combination_label(&self) -> String {
        let set = self.conditions();
        if set.is_empty() {
            "none".to_string()
        } else {
            set.iter().map(|c| c.label()).collect::<Vec<_>>().join("+")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sex {
    M,
    F,
    U,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::M => "M",
            Sex::F => "F",
            Sex::U => "U",
        }
    }
}

/// One participant row of the metadata table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub age_years: f64,
    pub sex: Sex,
    pub flags: IcdFlags,
    /// Image path per modality, in [`Modality::ALL`] order.
    pub images: [Option<PathBuf>; 4],
}

impl SubjectRecord {
    pub fn image(&self, modality: Modality) -> Option<&PathBuf> {
        self.images[modality.index()].as_ref()
    }

    pub fn is_complete(&self) -> bool {
        self.images.iter().all(Option::is_some)
    }

    pub fn icd_count(&self) -> usize {
        self.flags.count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_count_and_labels() {
        let f = IcdFlags::from_conditions(&[Condition::Htn, Condition::Dm]);
        assert_eq!(f.count(), 2);
        assert_eq!(f.combination_label(), "HTN+DM");
        assert_eq!(IcdFlags::default().combination_label(), "none");
    }
}
