//! A second weight-free backend, so grids can have more than one row per
//! measure.

use attriq_core::embedding::{BackendDescriptor, EmbedError, EmbeddingBackend, EmbeddingVector, TestBackend};
use image::DynamicImage;

pub const CHANNEL_MEAN_ID: &str = "channel-mean";

/// Mean R, G and B over each cell of a 4 × 4 grid (48 values). Pixels are
/// assigned to the cell containing their top-left corner.
#[derive(Debug, Clone)]
pub struct ChannelMeanBackend {
    descriptor: BackendDescriptor,
}

impl Default for ChannelMeanBackend {
    fn default() -> Self {
        let mut descriptor = TestBackend::descriptor_template();
        descriptor.backend_id = CHANNEL_MEAN_ID.into();
        descriptor.architecture_name = "Channel means".into();
        descriptor.embedding_dim = 48;
        descriptor.weights_fingerprint = "none".into();
        Self { descriptor }
    }
}

impl EmbeddingBackend for ChannelMeanBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn embed_image(&self, image: &DynamicImage) -> Result<EmbeddingVector, EmbedError> {
        let rgb = image.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        if w == 0 || h == 0 {
            return Err(EmbedError::UndecodableImage("empty".into()));
        }
        let mut sums = [0.0f64; 48];
        let mut counts = [0usize; 16];
        for (x, y, p) in rgb.enumerate_pixels() {
            let cell = (y as usize * 4 / h) * 4 + x as usize * 4 / w;
            counts[cell] += 1;
            for c in 0..3 {
                sums[cell * 3 + c] += f64::from(p.0[c]) / 255.0;
            }
        }
        let values = sums
            .iter()
            .enumerate()
            .map(|(i, s)| (s / counts[i / 3].max(1) as f64) as f32)
            .collect();
        EmbeddingVector::for_descriptor(&self.descriptor, values)
    }
}

/// Fails on every image.
#[derive(Debug, Clone)]
pub struct BrokenBackend {
    descriptor: BackendDescriptor,
}

impl Default for BrokenBackend {
    fn default() -> Self {
        let mut descriptor = TestBackend::descriptor_template();
        descriptor.backend_id = "broken".into();
        Self { descriptor }
    }
}

impl EmbeddingBackend for BrokenBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn embed_image(&self, _image: &DynamicImage) -> Result<EmbeddingVector, EmbedError> {
        Err(EmbedError::InferenceFailure("always fails".into()))
    }
}
