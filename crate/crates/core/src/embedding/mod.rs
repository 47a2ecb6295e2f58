//! Feature extraction.
//!
//! A backend maps a decoded raster to a fixed-width [`EmbeddingVector`]. Two
//! implementations ship: [`TestBackend`], a closed-form projection that
//! needs no weights, and `OnnxBackend` (feature `onnx`), which reads the
//! pooled activations of a pretrained network from an ONNX file.

mod descriptor;
#[cfg(feature = "onnx")]
mod onnx;
mod preprocess;
mod test_backend;

use std::path::Path;
use std::sync::Arc;

use image::DynamicImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ErrorCode;

pub use descriptor::{BackendDescriptor, BackendDescriptorFile, BackendKind, ChannelOrder, TensorLayout};
#[cfg(feature = "onnx")]
pub use onnx::OnnxBackend;
pub use preprocess::{decode_image, preprocess, resize_bilinear, Tensor};
pub use test_backend::{TestBackend, TEST_BACKEND_ID, TEST_EMBEDDING_DIM, TEST_GRID, TEST_PROJECTION_SEED};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("image could not be decoded: {0}")]
    UndecodableImage(String),
    #[error("failed to load backend: {0}")]
    BackendLoadFailure(String),
    #[error("inference failed: {0}")]
    InferenceFailure(String),
    #[error("invalid embedding: {0}")]
    InvalidVector(String),
}

impl ErrorCode for EmbedError {
    fn code(&self) -> &'static str {
        match self {
            EmbedError::UndecodableImage(_) => "UndecodableImage",
            EmbedError::BackendLoadFailure(_) => "BackendLoadFailure",
            EmbedError::InferenceFailure(_) => "InferenceFailure",
            EmbedError::InvalidVector(_) => "InvalidVector",
        }
    }
}

/// A feature vector tagged with the backend that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub backend_id: String,
    pub weights_fingerprint: String,
    values: Vec<f32>,
}

impl EmbeddingVector {
    /// Fails on an empty vector or any non-finite component.
    pub fn new(
        backend_id: impl Into<String>,
        weights_fingerprint: impl Into<String>,
        values: Vec<f32>,
    ) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::InvalidVector("zero-length vector".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidVector(format!("component {i} is not finite")));
        }
        Ok(Self {
            backend_id: backend_id.into(),
            weights_fingerprint: weights_fingerprint.into(),
            values,
        })
    }

    /// Builds a vector stamped with `descriptor`'s identity.
    pub fn for_descriptor(descriptor: &BackendDescriptor, values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.len() != descriptor.embedding_dim {
            return Err(EmbedError::InvalidVector(format!(
                "expected {} components, got {}",
                descriptor.embedding_dim,
                values.len()
            )));
        }
        Self::new(&descriptor.backend_id, &descriptor.weights_fingerprint, values)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// A loaded feature extractor. Implementations are read-only after
/// construction and may be shared across threads.
pub trait EmbeddingBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn embed_image(&self, image: &DynamicImage) -> Result<EmbeddingVector, EmbedError>;
}

/// Decodes `bytes` and embeds the result.
pub fn embed(bytes: &[u8], backend: &dyn EmbeddingBackend) -> Result<EmbeddingVector, EmbedError> {
    let image = decode_image(bytes)?;
    backend.embed_image(&image)
}

/// Embeds every image, preserving order. Failures are reported per item.
pub fn embed_batch<B>(images: &[B], backend: &dyn EmbeddingBackend) -> Vec<Result<EmbeddingVector, EmbedError>>
where
    B: AsRef<[u8]> + Sync,
{
    crate::par::map(images, |bytes| embed(bytes.as_ref(), backend))
}

/// Instantiates the backend described by `file`. Relative model paths are
/// resolved against `base_dir`.
pub fn load_backend(
    file: &BackendDescriptorFile,
    base_dir: &Path,
) -> Result<Arc<dyn EmbeddingBackend>, EmbedError> {
    match file.kind {
        BackendKind::Test => Ok(Arc::new(TestBackend::new())),
        #[cfg(feature = "onnx")]
        BackendKind::Onnx => Ok(Arc::new(OnnxBackend::load(file, base_dir)?)),
        #[cfg(not(feature = "onnx"))]
        BackendKind::Onnx => {
            let _ = base_dir;
            Err(EmbedError::BackendLoadFailure(
                "this build has no ONNX support (enable the `onnx` feature)".into(),
            ))
        }
    }
}

/// Reads a descriptor file and loads the backend it describes.
pub fn load_backend_from_path(path: &Path) -> Result<Arc<dyn EmbeddingBackend>, EmbedError> {
    let file = BackendDescriptorFile::load(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    load_backend(&file, base)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_rejects_non_finite() {
        assert!(EmbeddingVector::new("b", "w", vec![1.0, f32::NAN]).is_err());
        assert!(EmbeddingVector::new("b", "w", vec![f32::INFINITY]).is_err());
        assert!(EmbeddingVector::new("b", "w", vec![]).is_err());
        assert_eq!(EmbeddingVector::new("b", "w", vec![0.0; 3]).unwrap().dim(), 3);
    }

    #[test]
    fn batch_of_nothing() {
        let backend = TestBackend::new();
        let empty: Vec<Vec<u8>> = Vec::new();
        assert!(embed_batch(&empty, &backend).is_empty());
    }

    #[test]
    fn batch_reports_failures_in_place() {
        let backend = TestBackend::new();
        let good = {
            let mut buf = Vec::new();
            image::RgbImage::from_pixel(8, 8, image::Rgb([10, 20, 30]))
                .write_to(&mut std::io::Cursor::new(&mut buf), image::ImageFormat::Png)
                .unwrap();
            buf
        };
        let out = embed_batch(&[good.clone(), b"junk".to_vec(), good.clone()], &backend);
        assert!(out[0].is_ok());
        assert!(matches!(out[1], Err(EmbedError::UndecodableImage(_))));
        assert_eq!(out[2].as_ref().unwrap(), out[0].as_ref().unwrap());
    }
}
