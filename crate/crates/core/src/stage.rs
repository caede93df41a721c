use std::fmt;
use std::str::FromStr;

use crate::error::Error;

const SPLIT_SALT: u64 = 0x5eed_5b11_7000_0001;

/// Curriculum dataset difficulty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    /// One character, walk/run postures only.
    Easy,
    /// One character, all postures.
    Inter,
    /// Sixteen characters, all postures.
    Hard,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Easy, Stage::Inter, Stage::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Easy => "easy",
            Stage::Inter => "inter",
            Stage::Hard => "hard",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "easy" => Ok(Stage::Easy),
            "inter" => Ok(Stage::Inter),
            "hard" => Ok(Stage::Hard),
            other => Err(Error::InvalidStage(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    /// Split owning a posture id. Ids are bucketed 80/10/10 by a fixed hash
    /// of the id alone, so the partition is shared by every stage and seed.
    pub fn of_posture(posture_id: u32) -> Split {
        match crate::seed::derive_seed(SPLIT_SALT, &[posture_id as u64]) % 10 {
            0..=7 => Split::Train,
            8 => Split::Validation,
            _ => Split::Test,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidSplit(other.to_string())),
        }
    }
}
