use std::path::Path;

use image::DynamicImage;
use sha2::{Digest, Sha256};
use tract_onnx::prelude::*;

use super::{preprocess, BackendDescriptor, BackendDescriptorFile, EmbedError, EmbeddingBackend, EmbeddingVector, TensorLayout};

/// Pretrained network read from an ONNX file. The embedding is the output
/// named by `output_tensor_name` (the last pooling layer), flattened past
/// the batch axis.
pub struct OnnxBackend {
    descriptor: BackendDescriptor,
    layout: TensorLayout,
    plan: TypedRunnableModel<TypedModel>,
}

impl std::fmt::Debug for OnnxBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxBackend")
            .field("descriptor", &self.descriptor)
            .field("layout", &self.layout)
            .finish_non_exhaustive()
    }
}

fn load_err(e: impl std::fmt::Display) -> EmbedError {
    EmbedError::BackendLoadFailure(e.to_string())
}

impl OnnxBackend {
    pub fn load(file: &BackendDescriptorFile, base_dir: &Path) -> Result<Self, EmbedError> {
        let rel = file
            .model_path
            .as_ref()
            .ok_or_else(|| load_err(format!("{}: model_path is required for onnx backends", file.backend_id)))?;
        let path = base_dir.join(rel);
        let bytes = std::fs::read(&path).map_err(|e| load_err(format!("{}: {e}", path.display())))?;
        let fingerprint = hex::encode(Sha256::digest(&bytes));

        let (h, w) = (file.input_height as usize, file.input_width as usize);
        let shape = match file.layout {
            TensorLayout::Nchw => [1, 3, h, w],
            TensorLayout::Nhwc => [1, h, w, 3],
        };
        let mut model = tract_onnx::onnx()
            .model_for_read(&mut bytes.as_slice())
            .map_err(load_err)?
            .with_input_fact(0, f32::fact(shape).into())
            .map_err(load_err)?;
        if let Some(name) = &file.output_tensor_name {
            model = model.with_output_names([name.as_str()]).map_err(load_err)?;
        }
        let typed = model.into_optimized().map_err(load_err)?;
        let out_fact = typed.output_fact(0).map_err(load_err)?;
        let out_shape = out_fact
            .shape
            .as_concrete()
            .ok_or_else(|| load_err("pooled output shape is not concrete"))?
            .to_vec();
        let dim: usize = out_shape.iter().skip(1).product();
        let descriptor = file.resolve(dim, fingerprint)?;
        let plan = typed.into_runnable().map_err(load_err)?;
        Ok(Self {
            descriptor,
            layout: file.layout,
            plan,
        })
    }
}

impl EmbeddingBackend for OnnxBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn embed_image(&self, image: &DynamicImage) -> Result<EmbeddingVector, EmbedError> {
        let t = preprocess(image, &self.descriptor)?;
        let (h, w) = (t.height, t.width);
        let input: tract_onnx::prelude::Tensor = match self.layout {
            TensorLayout::Nhwc => tract_ndarray::Array4::from_shape_vec((1, h, w, 3), t.data),
            TensorLayout::Nchw => {
                tract_ndarray::Array4::from_shape_fn((1, 3, h, w), |(_, c, y, x)| t.data[(y * w + x) * 3 + c])
                    .into_shape_with_order((1, 3, h, w))
            }
        }
        .map_err(|e| EmbedError::InferenceFailure(e.to_string()))?
        .into();

        let outputs = self
            .plan
            .run(tvec!(input.into()))
            .map_err(|e| EmbedError::InferenceFailure(e.to_string()))?;
        let view = outputs[0]
            .to_array_view::<f32>()
            .map_err(|e| EmbedError::InferenceFailure(e.to_string()))?;
        let values: Vec<f32> = view.iter().copied().collect();
        EmbeddingVector::for_descriptor(&self.descriptor, values)
            .map_err(|e| EmbedError::InferenceFailure(e.to_string()))
    }
}
