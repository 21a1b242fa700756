//! Perceived-attribute axes and their canonical label vocabularies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceivedAxis {
    PerceivedGender,
    PerceivedSkinTone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Female,
    Male,
    Dark,
    Medium,
    Light,
    NonePresent,
    Unparseable,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum LabelError {
    #[error("unknown axis `{0}` (expected gender or skintone)")]
    UnknownAxis(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("label `{label}` is not valid for axis {axis}")]
    WrongAxis { axis: PerceivedAxis, label: Label },
}

impl PerceivedAxis {
    pub const ALL: [PerceivedAxis; 2] = [PerceivedAxis::PerceivedGender, PerceivedAxis::PerceivedSkinTone];

    /// Labels that count toward the marginal distribution.
    pub fn substantive_labels(self) -> &'static [Label] {
        match self {
            PerceivedAxis::PerceivedGender => &[Label::Female, Label::Male],
            PerceivedAxis::PerceivedSkinTone => &[Label::Dark, Label::Medium, Label::Light],
        }
    }

    /// Labels a human annotator may assign.
    pub fn annotator_labels(self) -> Vec<Label> {
        let mut labels = match self {
            // male first mirrors the order of the VQA question
            PerceivedAxis::PerceivedGender => vec![Label::Male, Label::Female],
            PerceivedAxis::PerceivedSkinTone => vec![Label::Light, Label::Medium, Label::Dark],
        };
        labels.push(Label::NonePresent);
        labels
    }

    /// Full vocabulary a prediction may carry.
    pub fn prediction_labels(self) -> Vec<Label> {
        let mut labels = self.annotator_labels();
        labels.push(Label::Unparseable);
        labels
    }

    pub fn accepts(self, label: Label) -> bool {
        label.is_sink() || self.substantive_labels().contains(&label)
    }

    pub fn check(self, label: Label) -> Result<Label, LabelError> {
        if self.accepts(label) {
            Ok(label)
        } else {
            Err(LabelError::WrongAxis { axis: self, label })
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PerceivedAxis::PerceivedGender => "perceived_gender",
            PerceivedAxis::PerceivedSkinTone => "perceived_skin_tone",
        }
    }

    /// Short form used on the command line.
    pub fn short_name(self) -> &'static str {
        match self {
            PerceivedAxis::PerceivedGender => "gender",
            PerceivedAxis::PerceivedSkinTone => "skintone",
        }
    }
}

impl fmt::Display for PerceivedAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PerceivedAxis {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gender" | "perceived_gender" => Ok(PerceivedAxis::PerceivedGender),
            "skintone" | "skin_tone" | "skin-tone" | "perceived_skin_tone" => Ok(PerceivedAxis::PerceivedSkinTone),
            other => Err(LabelError::UnknownAxis(other.to_string())),
        }
    }
}

impl Label {
    /// `none_present` and `unparseable` are excluded from marginals.
    pub fn is_sink(self) -> bool {
        matches!(self, Label::NonePresent | Label::Unparseable)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Female => "female",
            Label::Male => "male",
            Label::Dark => "dark",
            Label::Medium => "medium",
            Label::Light => "light",
            Label::NonePresent => "none_present",
            Label::Unparseable => "unparseable",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "female" => Label::Female,
            "male" => Label::Male,
            "dark" => Label::Dark,
            "medium" => Label::Medium,
            "light" => Label::Light,
            "none_present" => Label::NonePresent,
            "unparseable" => Label::Unparseable,
            other => return Err(LabelError::UnknownLabel(other.to_string())),
        })
    }
}
