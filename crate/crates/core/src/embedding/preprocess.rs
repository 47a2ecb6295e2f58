use image::DynamicImage;

use super::{BackendDescriptor, ChannelOrder, EmbedError};

/// Height × width × 3 tensor, channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }
}

/// Decodes PNG, JPEG or TIFF bytes.
pub fn decode_image(bytes: &[u8]) -> Result<DynamicImage, EmbedError> {
    let image = image::load_from_memory(bytes).map_err(|e| EmbedError::UndecodableImage(e.to_string()))?;
    if image.width() == 0 || image.height() == 0 {
        return Err(EmbedError::UndecodableImage("image has zero area".into()));
    }
    Ok(image)
}

/// Bilinear resize of an interleaved RGB float buffer, pixel centres at
/// half-integer coordinates and edges clamped. No cropping: the aspect
/// ratio follows the target size.
pub fn resize_bilinear(src: &[f32], src_w: usize, src_h: usize, dst_w: usize, dst_h: usize) -> Vec<f32> {
    assert_eq!(src.len(), src_w * src_h * 3, "source buffer does not match dimensions");
    let taps = |dst: usize, src_len: usize| -> Vec<(usize, usize, f32)> {
        let ratio = src_len as f32 / dst as f32;
        (0..dst)
            .map(|i| {
                let pos = ((i as f32 + 0.5) * ratio - 0.5).clamp(0.0, (src_len - 1) as f32);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(src_len - 1);
                (lo, hi, pos - lo as f32)
            })
            .collect()
    };
    let xs = taps(dst_w, src_w);
    let ys = taps(dst_h, src_h);
    let at = |x: usize, y: usize, c: usize| src[(y * src_w + x) * 3 + c];

    let mut out = Vec::with_capacity(dst_w * dst_h * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let top = at(x0, y0, c) + (at(x1, y0, c) - at(x0, y0, c)) * fx;
                let bottom = at(x0, y1, c) + (at(x1, y1, c) - at(x0, y1, c)) * fx;
                out.push(top + (bottom - top) * fy);
            }
        }
    }
    out
}

/// Resizes `image` to the descriptor's input size and normalizes each
/// channel as `(pixel / 255 - mean) / scale`.
///
/// `mean` and `scale` are indexed in the descriptor's channel order.
pub fn preprocess(image: &DynamicImage, descriptor: &BackendDescriptor) -> Result<Tensor, EmbedError> {
    if image.width() == 0 || image.height() == 0 {
        return Err(EmbedError::UndecodableImage("image has zero area".into()));
    }
    let rgb = image.to_rgb32f();
    let (w, h) = (descriptor.input_width as usize, descriptor.input_height as usize);
    let mut data = resize_bilinear(rgb.as_raw(), rgb.width() as usize, rgb.height() as usize, w, h);
    for px in data.chunks_exact_mut(3) {
        if descriptor.channel_order == ChannelOrder::Bgr {
            px.swap(0, 2);
        }
        for c in 0..3 {
            px[c] = (px[c] - descriptor.mean[c]) / descriptor.scale[c];
        }
    }
    Ok(Tensor { height: h, width: w, data })
}
