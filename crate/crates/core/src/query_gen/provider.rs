use std::time::Duration;

use chrono::{DateTime, Utc};
use image::DynamicImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::prompt::{PromptFingerprint, PromptSpec, SettingsError};
use crate::ErrorCode;

/// One image returned by a generation provider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedImage {
    #[serde(with = "crate::pipeline::base64_bytes")]
    pub image_bytes: Vec<u8>,
    pub provider_id: String,
    pub prompt_fingerprint: PromptFingerprint,
    /// Seed the image was rendered with, when the provider reports one.
    pub seed: Option<u64>,
    pub created_at: DateTime<Utc>,
}

impl GeneratedImage {
    /// Wraps an image that did not come from a provider, e.g. one read from
    /// disk. Its fingerprint is the digest of the bytes themselves.
    pub fn external(image_bytes: Vec<u8>, provider_id: impl Into<String>) -> Self {
        Self {
            prompt_fingerprint: PromptFingerprint::of_bytes(&image_bytes),
            image_bytes,
            provider_id: provider_id.into(),
            seed: None,
            created_at: Utc::now(),
        }
    }

    pub fn decode(&self) -> image::ImageResult<DynamicImage> {
        image::load_from_memory(&self.image_bytes)
    }

    /// File extension matching the encoded payload.
    pub fn extension(&self) -> &'static str {
        match image::guess_format(&self.image_bytes) {
            Ok(image::ImageFormat::Jpeg) => "jpg",
            Ok(image::ImageFormat::Tiff) => "tiff",
            Ok(image::ImageFormat::WebP) => "webp",
            _ => "png",
        }
    }
}

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("provider rejected credentials: {0}")]
    AuthFailure(String),
    #[error("provider rate limited the request (retry after {retry_after:?})")]
    RateLimited { retry_after: Option<Duration> },
    #[error("provider timed out")]
    ProviderTimeout,
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("provider returned HTTP {status}: {message}")]
    ProviderError { status: u16, message: String },
    #[error("provider not configured: {0}")]
    NotConfigured(String),
    #[error(transparent)]
    InvalidSpec(#[from] SettingsError),
}

impl GenerationError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            GenerationError::RateLimited { .. } | GenerationError::ProviderTimeout
        )
    }
}

impl ErrorCode for GenerationError {
    fn code(&self) -> &'static str {
        match self {
            GenerationError::AuthFailure(_) => "AuthFailure",
            GenerationError::RateLimited { .. } => "RateLimited",
            GenerationError::ProviderTimeout => "ProviderTimeout",
            GenerationError::MalformedResponse(_) => "MalformedResponse",
            GenerationError::ProviderError { .. } => "ProviderError",
            GenerationError::NotConfigured(_) => "ProviderNotConfigured",
            GenerationError::InvalidSpec(e) => e.code(),
        }
    }
}

/// A text-to-image backend. One call is one attempt; retries live in
/// [`generate`].
pub trait GenerationProvider: Send + Sync {
    fn provider_id(&self) -> &str;

    fn request(&self, spec: &PromptSpec) -> Result<Vec<GeneratedImage>, GenerationError>;
}

/// Exponential backoff applied to rate limiting and timeouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_retries: 0,
            ..Self::default()
        }
    }

    /// Delay before retry number `attempt` (0-based), honouring a
    /// provider-supplied retry-after hint when it is longer.
    pub fn delay(&self, attempt: u32, hint: Option<Duration>) -> Duration {
        let backoff = self
            .base_delay
            .saturating_mul(2u32.saturating_pow(attempt))
            .min(self.max_delay);
        hint.map_or(backoff, |h| h.min(self.max_delay).max(backoff))
    }
}

/// Requests `spec.settings.num_images` images from `provider`.
///
/// Every returned image decodes and carries the spec's fingerprint. A
/// provider that returns fewer images than requested, or undecodable bytes,
/// is reported as [`GenerationError::MalformedResponse`].
pub fn generate(
    spec: &PromptSpec,
    provider: &dyn GenerationProvider,
    policy: &RetryPolicy,
) -> Result<Vec<GeneratedImage>, GenerationError> {
    spec.validate()?;
    let wanted = spec.settings.num_images as usize;
    let fingerprint = spec.fingerprint();

    let mut attempt = 0;
    let mut images = loop {
        match provider.request(spec) {
            Ok(images) => break images,
            Err(err) if err.is_retryable() && attempt < policy.max_retries => {
                let hint = match &err {
                    GenerationError::RateLimited { retry_after } => *retry_after,
                    _ => None,
                };
                let delay = policy.delay(attempt, hint);
                tracing::warn!(provider = provider.provider_id(), attempt, ?delay, "retrying: {err}");
                std::thread::sleep(delay);
                attempt += 1;
            }
            Err(err) => return Err(err),
        }
    };

    if images.len() < wanted {
        return Err(GenerationError::MalformedResponse(format!(
            "requested {wanted} images, provider returned {}",
            images.len()
        )));
    }
    images.truncate(wanted);
    for (i, image) in images.iter_mut().enumerate() {
        let decoded = image
            .decode()
            .map_err(|e| GenerationError::MalformedResponse(format!("image {i}: {e}")))?;
        if decoded.width() == 0 || decoded.height() == 0 {
            return Err(GenerationError::MalformedResponse(format!("image {i} is empty")));
        }
        image.prompt_fingerprint = fingerprint.clone();
    }
    Ok(images)
}
