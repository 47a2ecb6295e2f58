use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::attribute::{AttributeQuery, QueryError, Vocabulary};
use crate::ErrorCode;

/// Document-type description that opens every generated prompt.
pub const DEFAULT_PREAMBLE: &str =
    "a full page of a historical document that is full of handwritten text";

/// Text-to-image request settings.
///
/// Defaults: Phoenix 1.0, no prompt enhancement, dynamic style, medium
/// contrast, quality mode, small square image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSettings {
    pub model_name: String,
    pub prompt_enhancement: bool,
    pub style: String,
    pub contrast: String,
    pub quality_mode: String,
    pub width: u32,
    pub height: u32,
    pub num_images: u32,
    pub seed: Option<u64>,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            model_name: "Phoenix 1.0".to_owned(),
            prompt_enhancement: false,
            style: "dynamic".to_owned(),
            contrast: "medium".to_owned(),
            quality_mode: "quality".to_owned(),
            width: 512,
            height: 512,
            num_images: 1,
            seed: None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SettingsError {
    #[error("image size {width}x{height} is neither 1:1 nor 2:3")]
    AspectRatio { width: u32, height: u32 },
    #[error("num_images must be at least 1")]
    NoImages,
    #[error("positive prompt text is empty")]
    EmptyPositive,
    #[error("negative prompt text is present but empty")]
    EmptyNegative,
    #[error("prompt preamble is empty")]
    EmptyPreamble,
}

impl ErrorCode for SettingsError {
    fn code(&self) -> &'static str {
        "InvalidSettings"
    }
}

impl GenerationSettings {
    /// Small 2:3 portrait preset.
    pub fn portrait() -> Self {
        Self {
            width: 512,
            height: 768,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SettingsError> {
        let (w, h) = (u64::from(self.width), u64::from(self.height));
        // 2:3 accepts h = round(1.5 * w), i.e. |2h - 3w| <= 1.
        let square = w == h;
        let portrait = (2 * h).abs_diff(3 * w) <= 1;
        if w == 0 || h == 0 || !(square || portrait) {
            return Err(SettingsError::AspectRatio {
                width: self.width,
                height: self.height,
            });
        }
        if self.num_images == 0 {
            return Err(SettingsError::NoImages);
        }
        Ok(())
    }
}

/// Hex SHA-256 of a [`PromptSpec`]'s canonical JSON encoding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptFingerprint(String);

impl PromptFingerprint {
    /// Hex SHA-256 of arbitrary bytes.
    pub fn of_bytes(bytes: &[u8]) -> Self {
        Self(hex::encode(Sha256::digest(bytes)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// First eight digest bytes as an integer, used to seed procedural output.
    pub fn prefix_u64(&self) -> u64 {
        let bytes = hex::decode(&self.0[..16]).expect("fingerprint is hex");
        u64::from_be_bytes(bytes.try_into().expect("eight bytes"))
    }
}

impl fmt::Display for PromptFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A complete text-to-image request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub positive_text: String,
    pub negative_text: Option<String>,
    pub settings: GenerationSettings,
}

impl PromptSpec {
    pub fn validate(&self) -> Result<(), SettingsError> {
        if self.positive_text.trim().is_empty() {
            return Err(SettingsError::EmptyPositive);
        }
        if matches!(&self.negative_text, Some(t) if t.trim().is_empty()) {
            return Err(SettingsError::EmptyNegative);
        }
        self.settings.validate()
    }

    pub fn fingerprint(&self) -> PromptFingerprint {
        let canonical = serde_json::to_vec(self).expect("prompt spec serializes");
        PromptFingerprint(hex::encode(Sha256::digest(&canonical)))
    }

    pub fn with_num_images(mut self, n: u32) -> Self {
        self.settings.num_images = n;
        self
    }
}

/// Assembles the prompt for `query`.
///
/// Positive phrases are taken in ascending attribute-name order and joined
/// with `" and "`. They attach to the preamble with `" that "`, or with
/// `" and "` when the preamble already carries its own `that` clause.
/// Negative phrases are joined with `", "`; no negatives means no negative
/// prompt.
pub fn build_prompt(
    query: &AttributeQuery,
    vocabulary: &Vocabulary,
    preamble: &str,
    settings: Option<GenerationSettings>,
) -> Result<PromptSpec, PromptBuildError> {
    let preamble = preamble.trim();
    if preamble.is_empty() {
        return Err(PromptBuildError::Settings(SettingsError::EmptyPreamble));
    }
    query.validate(vocabulary)?;

    let lookup = |name: &String| vocabulary.get(name).expect("validated above");
    let positives: Vec<&str> = query
        .positives
        .iter()
        .map(|n| lookup(n).phrase.as_str())
        .collect();
    let negatives: Vec<&str> = query
        .negatives
        .iter()
        .map(|n| lookup(n).negative_text())
        .collect();

    let positive_text = if positives.is_empty() {
        preamble.to_owned()
    } else {
        let connective = if preamble.split_whitespace().any(|w| w == "that") {
            " and "
        } else {
            " that "
        };
        format!("{preamble}{connective}{}", positives.join(" and "))
    };
    let negative_text = (!negatives.is_empty()).then(|| negatives.join(", "));

    let spec = PromptSpec {
        positive_text,
        negative_text,
        settings: settings.unwrap_or_default(),
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Error)]
pub enum PromptBuildError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Settings(#[from] SettingsError),
}

impl ErrorCode for PromptBuildError {
    fn code(&self) -> &'static str {
        match self {
            PromptBuildError::Query(e) => e.code(),
            PromptBuildError::Settings(e) => e.code(),
        }
    }
}
