//! Prompt construction and query image generation.
//!
//! An [`AttributeQuery`] names attributes that must be present or absent.
//! [`build_prompt`] turns it into a [`PromptSpec`] for a text-to-image
//! provider, and [`generate`] obtains candidate query images from any
//! [`GenerationProvider`], retrying transient failures.

mod attribute;
mod http;
mod mock;
mod prompt;
mod provider;

pub use attribute::{
    load_query_set, parse_query_set, Attribute, AttributeQuery, QueryError, Vocabulary,
};
pub use http::{HttpProvider, HttpProviderConfig};
pub use mock::{mock_render, MockProvider, MOCK_PROVIDER_ID};
pub use prompt::{
    build_prompt, GenerationSettings, PromptBuildError, PromptFingerprint, PromptSpec, SettingsError,
    DEFAULT_PREAMBLE,
};
pub use provider::{generate, GeneratedImage, GenerationError, GenerationProvider, RetryPolicy};
