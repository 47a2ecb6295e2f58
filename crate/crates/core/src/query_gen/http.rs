use std::sync::Mutex;
use std::time::Duration;

use base64::Engine as _;
use chrono::Utc;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::prompt::PromptSpec;
use super::provider::{GeneratedImage, GenerationError, GenerationProvider};

/// Connection settings for an HTTP text-to-image service.
///
/// The API key itself is never stored here; `api_key_env` names the
/// environment variable that holds it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    pub base_url: String,
    #[serde(default = "default_generate_path")]
    pub generate_path: String,
    pub api_key_env: String,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    /// Prefix placed before the key in the auth header, e.g. `Bearer`.
    #[serde(default = "default_auth_scheme")]
    pub auth_scheme: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_generate_path() -> String {
    "/generations".to_owned()
}

fn default_auth_header() -> String {
    "Authorization".to_owned()
}

fn default_auth_scheme() -> Option<String> {
    Some("Bearer".to_owned())
}

fn default_timeout_secs() -> u64 {
    120
}

impl HttpProviderConfig {
    pub fn new(base_url: impl Into<String>, api_key_env: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            generate_path: default_generate_path(),
            api_key_env: api_key_env.into(),
            auth_header: default_auth_header(),
            auth_scheme: default_auth_scheme(),
            timeout_secs: default_timeout_secs(),
        }
    }
}

#[derive(Debug, Serialize)]
struct GenerationRequest<'a> {
    prompt: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    negative_prompt: Option<&'a str>,
    model: &'a str,
    width: u32,
    height: u32,
    num_images: u32,
    enhancement: bool,
    style: &'a str,
    contrast: &'a str,
    mode: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct GenerationResponse {
    images: Vec<ImagePayload>,
}

#[derive(Debug, Deserialize)]
struct ImagePayload {
    url: Option<String>,
    base64: Option<String>,
    seed: Option<u64>,
}

/// JSON-over-HTTPS provider.
///
/// Requests are serialized through an internal lock, so one instance (one
/// credential) never has more than one generation in flight.
pub struct HttpProvider {
    config: HttpProviderConfig,
    api_key: String,
    client: Client,
    gate: Mutex<()>,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl HttpProvider {
    /// Reads the key from the environment variable named in `config`.
    pub fn from_env(config: HttpProviderConfig) -> Result<Self, GenerationError> {
        let key = std::env::var(&config.api_key_env).map_err(|_| {
            GenerationError::NotConfigured(format!(
                "environment variable `{}` is not set",
                config.api_key_env
            ))
        })?;
        Self::with_api_key(config, key)
    }

    pub fn with_api_key(
        config: HttpProviderConfig,
        api_key: impl Into<String>,
    ) -> Result<Self, GenerationError> {
        let api_key = api_key.into();
        if api_key.is_empty() {
            return Err(GenerationError::NotConfigured("API key is empty".into()));
        }
        let client = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GenerationError::NotConfigured(e.to_string()))?;
        Ok(Self {
            config,
            api_key,
            client,
            gate: Mutex::new(()),
        })
    }

    fn url(&self, path: &str) -> String {
        if path.starts_with("http://") || path.starts_with("https://") {
            return path.to_owned();
        }
        format!(
            "{}/{}",
            self.config.base_url.trim_end_matches('/'),
            path.trim_start_matches('/')
        )
    }

    fn auth_value(&self) -> String {
        match &self.config.auth_scheme {
            Some(scheme) => format!("{scheme} {}", self.api_key),
            None => self.api_key.clone(),
        }
    }

    fn fetch(&self, url: &str) -> Result<Vec<u8>, GenerationError> {
        let resp = self
            .client
            .get(self.url(url))
            .send()
            .map_err(transport_error)?;
        let resp = check_status(resp)?;
        Ok(resp.bytes().map_err(transport_error)?.to_vec())
    }
}

fn transport_error(err: reqwest::Error) -> GenerationError {
    if err.is_timeout() {
        GenerationError::ProviderTimeout
    } else if err.is_decode() {
        GenerationError::MalformedResponse(err.to_string())
    } else {
        GenerationError::ProviderError {
            status: err.status().map_or(0, |s| s.as_u16()),
            message: err.to_string(),
        }
    }
}

fn check_status(
    resp: reqwest::blocking::Response,
) -> Result<reqwest::blocking::Response, GenerationError> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let retry_after = resp
        .headers()
        .get(reqwest::header::RETRY_AFTER)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(Duration::from_secs);
    let message = resp.text().unwrap_or_default();
    Err(match status {
        StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => GenerationError::AuthFailure(message),
        StatusCode::TOO_MANY_REQUESTS => GenerationError::RateLimited { retry_after },
        StatusCode::REQUEST_TIMEOUT | StatusCode::GATEWAY_TIMEOUT => {
            GenerationError::ProviderTimeout
        }
        other => GenerationError::ProviderError {
            status: other.as_u16(),
            message,
        },
    })
}

fn decode_base64(payload: &str) -> Result<Vec<u8>, GenerationError> {
    let data = match payload.split_once(";base64,") {
        Some((_, data)) => data,
        None => payload,
    };
    base64::engine::general_purpose::STANDARD
        .decode(data.trim())
        .map_err(|e| GenerationError::MalformedResponse(format!("bad base64 image: {e}")))
}

impl GenerationProvider for HttpProvider {
    fn provider_id(&self) -> &str {
        &self.config.base_url
    }

    fn request(&self, spec: &PromptSpec) -> Result<Vec<GeneratedImage>, GenerationError> {
        let _serialized = self.gate.lock().unwrap_or_else(|p| p.into_inner());
        let s = &spec.settings;
        let body = GenerationRequest {
            prompt: &spec.positive_text,
            negative_prompt: spec.negative_text.as_deref(),
            model: &s.model_name,
            width: s.width,
            height: s.height,
            num_images: s.num_images,
            enhancement: s.prompt_enhancement,
            style: &s.style,
            contrast: &s.contrast,
            mode: &s.quality_mode,
            seed: s.seed,
        };
        let resp = self
            .client
            .post(self.url(&self.config.generate_path))
            .header(self.config.auth_header.as_str(), self.auth_value())
            .json(&body)
            .send()
            .map_err(transport_error)?;
        let resp = check_status(resp)?;
        let text = resp.text().map_err(transport_error)?;
        let parsed: GenerationResponse = serde_json::from_str(&text)
            .map_err(|e| GenerationError::MalformedResponse(e.to_string()))?;

        let fingerprint = spec.fingerprint();
        parsed
            .images
            .into_iter()
            .enumerate()
            .map(|(i, payload)| {
                let bytes = match (&payload.base64, &payload.url) {
                    (Some(b64), _) => decode_base64(b64)?,
                    (None, Some(url)) => self.fetch(url)?,
                    (None, None) => {
                        return Err(GenerationError::MalformedResponse(format!(
                            "image {i} has neither url nor base64"
                        )))
                    }
                };
                Ok(GeneratedImage {
                    image_bytes: bytes,
                    provider_id: self.provider_id().to_owned(),
                    prompt_fingerprint: fingerprint.clone(),
                    seed: payload.seed.or(s.seed.map(|base| base.wrapping_add(i as u64))),
                    created_at: Utc::now(),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_env_key_is_not_configured() {
        let cfg = HttpProviderConfig::new("http://127.0.0.1:9", "ATTRIQ_TEST_UNSET_KEY_VAR");
        assert!(matches!(
            HttpProvider::from_env(cfg),
            Err(GenerationError::NotConfigured(_))
        ));
    }

    #[test]
    fn url_joining() {
        let p = HttpProvider::with_api_key(HttpProviderConfig::new("http://h/api/", "K"), "k").unwrap();
        assert_eq!(p.url("/generations"), "http://h/api/generations");
        assert_eq!(p.url("https://cdn/x.png"), "https://cdn/x.png");
        assert_eq!(p.auth_value(), "Bearer k");
    }

    #[test]
    fn data_uri_base64() {
        assert_eq!(decode_base64("data:image/png;base64,AAEC").unwrap(), vec![0, 1, 2]);
        assert!(decode_base64("!!").is_err());
    }
}
