use std::sync::OnceLock;

use image::DynamicImage;
use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::{BackendDescriptor, ChannelOrder, EmbedError, EmbeddingBackend, EmbeddingVector};

pub const TEST_BACKEND_ID: &str = "test";
/// Side of the grayscale grid the image is reduced to.
pub const TEST_GRID: usize = 8;
pub const TEST_EMBEDDING_DIM: usize = TEST_GRID * TEST_GRID;
pub const TEST_PROJECTION_SEED: u64 = 42;

/// Weight-free backend with a closed-form definition:
///
/// 1. convert to grayscale luma `0.299 R + 0.587 G + 0.114 B` on [0, 1];
/// 2. box-average onto an 8 × 8 grid (exact area weights, so any input size
///    works);
/// 3. flatten row-major to 64 values and multiply by a fixed 64 × 64
///    matrix.
///
/// Matrix entries are drawn row-major from `Xoshiro256PlusPlus` seeded with
/// `seed_from_u64(42)`: each entry is `2 u - 1` with
/// `u = (next_u64() >> 11) · 2⁻⁵³`.
#[derive(Debug, Clone)]
pub struct TestBackend {
    descriptor: BackendDescriptor,
}

impl Default for TestBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl TestBackend {
    pub fn new() -> Self {
        Self {
            descriptor: Self::descriptor_template(),
        }
    }

    pub fn descriptor_template() -> BackendDescriptor {
        BackendDescriptor {
            backend_id: TEST_BACKEND_ID.to_owned(),
            architecture_name: "Seeded projection".to_owned(),
            input_width: TEST_GRID as u32,
            input_height: TEST_GRID as u32,
            channel_order: ChannelOrder::Rgb,
            mean: [0.0; 3],
            scale: [1.0; 3],
            embedding_dim: TEST_EMBEDDING_DIM,
            weights_fingerprint: "test".to_owned(),
        }
    }

    /// The projection matrix, row-major.
    pub fn projection() -> &'static [f64] {
        static MATRIX: OnceLock<Vec<f64>> = OnceLock::new();
        MATRIX.get_or_init(|| {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(TEST_PROJECTION_SEED);
            (0..TEST_EMBEDDING_DIM * TEST_EMBEDDING_DIM)
                .map(|_| {
                    let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                    2.0 * u - 1.0
                })
                .collect()
        })
    }

    /// Grayscale box average on the 8 × 8 grid, row-major.
    pub fn downsample(image: &DynamicImage) -> [f64; TEST_EMBEDDING_DIM] {
        let rgb = image.to_rgb32f();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let xs = area_weights(w);
        let ys = area_weights(h);
        let raw = rgb.as_raw();
        let luma = |x: usize, y: usize| {
            let p = &raw[(y * w + x) * 3..][..3];
            0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2])
        };

        let mut grid = [0.0; TEST_EMBEDDING_DIM];
        for (gy, row_taps) in ys.iter().enumerate() {
            for (gx, col_taps) in xs.iter().enumerate() {
                let mut acc = 0.0;
                for &(y, wy) in row_taps {
                    for &(x, wx) in col_taps {
                        acc += wy * wx * luma(x, y);
                    }
                }
                grid[gy * TEST_GRID + gx] = acc;
            }
        }
        grid
    }

    pub fn project(grid: &[f64; TEST_EMBEDDING_DIM]) -> Vec<f32> {
        Self::projection()
            .chunks_exact(TEST_EMBEDDING_DIM)
            .map(|row| row.iter().zip(grid).map(|(m, g)| m * g).sum::<f64>() as f32)
            .collect()
    }
}

/// For each of the 8 cells along an axis of `len` pixels: the pixels it
/// overlaps and their normalized overlap weights.
fn area_weights(len: usize) -> Vec<Vec<(usize, f64)>> {
    let cell = len as f64 / TEST_GRID as f64;
    (0..TEST_GRID)
        .map(|j| {
            let (lo, hi) = (j as f64 * cell, (j + 1) as f64 * cell);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(len);
            (first..last)
                .filter_map(|p| {
                    let overlap = (p as f64 + 1.0).min(hi) - (p as f64).max(lo);
                    (overlap > 0.0).then_some((p, overlap / cell))
                })
                .collect()
        })
        .collect()
}

impl EmbeddingBackend for TestBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn embed_image(&self, image: &DynamicImage) -> Result<EmbeddingVector, EmbedError> {
        if image.width() == 0 || image.height() == 0 {
            return Err(EmbedError::UndecodableImage("image has zero area".into()));
        }
        let grid = Self::downsample(image);
        EmbeddingVector::for_descriptor(&self.descriptor, Self::project(&grid))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    #[test]
    fn weights_sum_to_one() {
        for len in [1, 3, 8, 13, 64, 100] {
            for taps in area_weights(len) {
                let total: f64 = taps.iter().map(|(_, w)| w).sum();
                assert!((total - 1.0).abs() < 1e-12, "len {len}: {total}");
            }
        }
    }

    #[test]
    fn black_image_maps_to_zero() {
        let img = DynamicImage::ImageRgb8(RgbImage::new(64, 64));
        let v = TestBackend::new().embed_image(&img).unwrap();
        assert_eq!(v.dim(), 64);
        assert!(v.values().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn constant_image_is_linear_in_level() {
        // For a constant image the grid is constant, so each component is
        // (row sum of the matrix) × luma.
        let backend = TestBackend::new();
        let row_sums: Vec<f64> = TestBackend::projection()
            .chunks_exact(64)
            .map(|r| r.iter().sum())
            .collect();
        for level in [0u8, 40, 200, 255] {
            let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(24, 24, Rgb([level; 3])));
            let v = backend.embed_image(&img).unwrap();
            let luma = f64::from(level as f32 / 255.0);
            for (got, sum) in v.values().iter().zip(&row_sums) {
                assert!((f64::from(*got) - sum * luma).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn tiny_images_embed() {
        let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(1, 1, Rgb([255, 255, 255])));
        assert_eq!(TestBackend::new().embed_image(&img).unwrap().dim(), 64);
    }
}
