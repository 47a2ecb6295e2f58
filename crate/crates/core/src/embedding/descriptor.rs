use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EmbedError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelOrder {
    Rgb,
    Bgr,
}

/// Memory layout of the network input tensor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorLayout {
    #[default]
    Nchw,
    Nhwc,
}

/// Identity and input contract of an embedding backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub backend_id: String,
    pub architecture_name: String,
    pub input_width: u32,
    pub input_height: u32,
    pub channel_order: ChannelOrder,
    /// Per-channel mean subtracted from pixel values scaled to [0, 1].
    pub mean: [f32; 3],
    /// Per-channel divisor applied after mean subtraction.
    pub scale: [f32; 3],
    pub embedding_dim: usize,
    pub weights_fingerprint: String,
}

impl BackendDescriptor {
    pub fn validate(&self) -> Result<(), EmbedError> {
        let fail = |msg: &str| Err(EmbedError::BackendLoadFailure(format!("{}: {msg}", self.backend_id)));
        if self.backend_id.is_empty() {
            return fail("backend_id is empty");
        }
        if self.embedding_dim == 0 {
            return fail("embedding_dim must be positive");
        }
        if self.input_width == 0 || self.input_height == 0 {
            return fail("input size must be positive");
        }
        if self.weights_fingerprint.is_empty() {
            return fail("weights_fingerprint is empty");
        }
        if self.scale.iter().any(|s| *s == 0.0 || !s.is_finite()) || self.mean.iter().any(|m| !m.is_finite()) {
            return fail("normalization constants must be finite with non-zero scale");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Test,
    Onnx,
}

/// On-disk backend description.
///
/// For ONNX backends `embedding_dim` and `weights_fingerprint` may be
/// omitted: they are read from the model's output shape and the SHA-256 of
/// the model file. When given, they must agree with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptorFile {
    pub kind: BackendKind,
    pub backend_id: String,
    pub architecture_name: String,
    pub input_width: u32,
    pub input_height: u32,
    pub channel_order: ChannelOrder,
    pub mean: [f32; 3],
    pub scale: [f32; 3],
    #[serde(default)]
    pub embedding_dim: Option<usize>,
    #[serde(default)]
    pub weights_fingerprint: Option<String>,
    #[serde(default)]
    pub model_path: Option<PathBuf>,
    #[serde(default)]
    pub output_tensor_name: Option<String>,
    #[serde(default)]
    pub layout: TensorLayout,
}

impl BackendDescriptorFile {
    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let bytes = std::fs::read(path)
            .map_err(|e| EmbedError::BackendLoadFailure(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| EmbedError::BackendLoadFailure(format!("{}: {e}", path.display())))
    }

    /// The descriptor with model-derived fields filled in.
    pub fn resolve(&self, embedding_dim: usize, weights_fingerprint: String) -> Result<BackendDescriptor, EmbedError> {
        if let Some(declared) = self.embedding_dim {
            if declared != embedding_dim {
                return Err(EmbedError::BackendLoadFailure(format!(
                    "{}: descriptor declares embedding_dim {declared} but the model produces {embedding_dim}",
                    self.backend_id
                )));
            }
        }
        if let Some(declared) = &self.weights_fingerprint {
            if *declared != weights_fingerprint {
                return Err(EmbedError::BackendLoadFailure(format!(
                    "{}: weights fingerprint mismatch (declared {declared}, file {weights_fingerprint})",
                    self.backend_id
                )));
            }
        }
        let descriptor = BackendDescriptor {
            backend_id: self.backend_id.clone(),
            architecture_name: self.architecture_name.clone(),
            input_width: self.input_width,
            input_height: self.input_height,
            channel_order: self.channel_order,
            mean: self.mean,
            scale: self.scale,
            embedding_dim,
            weights_fingerprint,
        };
        descriptor.validate()?;
        Ok(descriptor)
    }
}
