//! Label spaces shared by every stage of the pipeline.
//!
//! The final output space has seven classes (healthy control plus six
//! diseases). The first hierarchical stage works on the four
//! gender x health combinations; the second stage runs one six-class disease
//! classifier per gender.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::M, Gender::F];

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::M => "M",
            Gender::F => "F",
        }
    }

    pub fn opposite(self) -> Gender {
        match self {
            Gender::M => Gender::F,
            Gender::F => Gender::M,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "M" | "m" => Ok(Gender::M),
            "F" | "f" => Ok(Gender::F),
            other => Err(Error::InvalidParameter(format!("unknown gender {other:?}"))),
        }
    }
}

/// One of the six pathologies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Disease {
    /// COVID-19
    D1,
    /// Parkinson's disease
    D2,
    /// Dysphonia
    D3,
    /// Vocal cord paresis
    D4,
    /// Laryngitis
    D5,
    /// ALS
    D6,
}

impl Disease {
    pub const ALL: [Disease; 6] = [
        Disease::D1,
        Disease::D2,
        Disease::D3,
        Disease::D4,
        Disease::D5,
        Disease::D6,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Disease> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Disease::D1 => "COVID-19",
            Disease::D2 => "Parkinson's",
            Disease::D3 => "Dysphonia",
            Disease::D4 => "Vocal cord paresis",
            Disease::D5 => "Laryngitis",
            Disease::D6 => "ALS",
        }
    }
}

/// The seven-way label reported at the end of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FinalLabel {
    HC,
    Disease(Disease),
}

impl FinalLabel {
    pub const COUNT: usize = 7;

    pub const ALL: [FinalLabel; 7] = [
        FinalLabel::HC,
        FinalLabel::Disease(Disease::D1),
        FinalLabel::Disease(Disease::D2),
        FinalLabel::Disease(Disease::D3),
        FinalLabel::Disease(Disease::D4),
        FinalLabel::Disease(Disease::D5),
        FinalLabel::Disease(Disease::D6),
    ];

    /// HC = 0, D1..D6 = 1..6.
    pub fn index(self) -> usize {
        match self {
            FinalLabel::HC => 0,
            FinalLabel::Disease(d) => d.index() + 1,
        }
    }

    pub fn from_index(i: usize) -> Option<FinalLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            FinalLabel::HC => "HC",
            FinalLabel::Disease(Disease::D1) => "D1",
            FinalLabel::Disease(Disease::D2) => "D2",
            FinalLabel::Disease(Disease::D3) => "D3",
            FinalLabel::Disease(Disease::D4) => "D4",
            FinalLabel::Disease(Disease::D5) => "D5",
            FinalLabel::Disease(Disease::D6) => "D6",
        }
    }

    pub fn is_healthy(self) -> bool {
        matches!(self, FinalLabel::HC)
    }
}

impl fmt::Display for FinalLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for FinalLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        FinalLabel::ALL
            .iter()
            .copied()
            .find(|l| l.code().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown label {t:?}")))
    }
}

/// Stage-1 target: gender x {healthy, pathological}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GenderHealthLabel {
    HcM,
    HcF,
    PM,
    PF,
}

impl GenderHealthLabel {
    pub const ALL: [GenderHealthLabel; 4] = [
        GenderHealthLabel::HcM,
        GenderHealthLabel::HcF,
        GenderHealthLabel::PM,
        GenderHealthLabel::PF,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<GenderHealthLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            GenderHealthLabel::HcM => "HC_M",
            GenderHealthLabel::HcF => "HC_F",
            GenderHealthLabel::PM => "P_M",
            GenderHealthLabel::PF => "P_F",
        }
    }

    pub fn is_healthy(self) -> bool {
        matches!(self, GenderHealthLabel::HcM | GenderHealthLabel::HcF)
    }
}

impl fmt::Display for GenderHealthLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Source corpus of a recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetId {
    Coswara,
    Svd,
    Als,
    Pcgita,
    Synthetic,
}

impl DatasetId {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetId::Coswara => "coswara",
            DatasetId::Svd => "svd",
            DatasetId::Als => "als",
            DatasetId::Pcgita => "pcgita",
            DatasetId::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "coswara" => Ok(DatasetId::Coswara),
            "svd" => Ok(DatasetId::Svd),
            "als" => Ok(DatasetId::Als),
            "pcgita" | "pc-gita" => Ok(DatasetId::Pcgita),
            "synthetic" => Ok(DatasetId::Synthetic),
            other => Err(Error::InvalidParameter(format!("unknown dataset {other:?}"))),
        }
    }
}
