use std::io::Cursor;

use chrono::Utc;
use image::{ImageFormat, RgbImage};

use super::prompt::PromptSpec;
use super::provider::{GeneratedImage, GenerationError, GenerationProvider};

pub const MOCK_PROVIDER_ID: &str = "mock";

/// Offline provider that renders [`mock_render`] textures.
///
/// Image `i` of a request uses seed `settings.seed.unwrap_or(0) + i`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockProvider;

impl GenerationProvider for MockProvider {
    fn provider_id(&self) -> &str {
        MOCK_PROVIDER_ID
    }

    fn request(&self, spec: &PromptSpec) -> Result<Vec<GeneratedImage>, GenerationError> {
        spec.validate()?;
        let base = spec.settings.seed.unwrap_or(0);
        Ok((0..u64::from(spec.settings.num_images))
            .map(|i| mock_render(spec, base.wrapping_add(i)))
            .collect())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Integer value noise: lattice values bilinearly interpolated in fixed point.
struct ValueNoise {
    key: u64,
    cell: u32,
}

impl ValueNoise {
    fn lattice(&self, gx: u32, gy: u32) -> u64 {
        splitmix64(self.key ^ (u64::from(gx) << 32 | u64::from(gy))) & 0xFF
    }

    fn sample(&self, x: u32, y: u32) -> u64 {
        let (gx, gy) = (x / self.cell, y / self.cell);
        let (fx, fy) = (u64::from(x % self.cell), u64::from(y % self.cell));
        let c = u64::from(self.cell);
        let top = self.lattice(gx, gy) * (c - fx) + self.lattice(gx + 1, gy) * fx;
        let bottom = self.lattice(gx, gy + 1) * (c - fx) + self.lattice(gx + 1, gy + 1) * fx;
        (top * (c - fy) + bottom * fy) / (c * c)
    }
}

/// Renders a deterministic texture for `(spec.fingerprint(), seed)`.
///
/// Two octaves of value noise, tinted by a colour derived from the same
/// key. Only integer arithmetic is used, so output bytes are identical on
/// every platform. The image is `settings.width × settings.height` PNG.
pub fn mock_render(spec: &PromptSpec, seed: u64) -> GeneratedImage {
    let fingerprint = spec.fingerprint();
    let key = splitmix64(fingerprint.prefix_u64() ^ splitmix64(seed));
    let (width, height) = (spec.settings.width.max(1), spec.settings.height.max(1));

    let coarse = ValueNoise {
        key: splitmix64(key ^ 1),
        cell: 16 << ((key >> 8) & 3),
    };
    let fine = ValueNoise {
        key: splitmix64(key ^ 2),
        cell: 4 << ((key >> 10) & 1),
    };
    let tint = [
        96 + (key >> 16) % 160,
        96 + (key >> 24) % 160,
        96 + (key >> 32) % 160,
    ];

    let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
    for y in 0..height {
        for x in 0..width {
            let v = (3 * coarse.sample(x, y) + fine.sample(x, y)) / 4;
            for t in tint {
                pixels.push((t * v / 255) as u8);
            }
        }
    }
    let raster = RgbImage::from_raw(width, height, pixels).expect("buffer matches dimensions");
    let mut bytes = Vec::new();
    raster
        .write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .expect("in-memory PNG encoding");

    GeneratedImage {
        image_bytes: bytes,
        provider_id: MOCK_PROVIDER_ID.to_owned(),
        prompt_fingerprint: fingerprint,
        seed: Some(seed),
        created_at: Utc::now(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query_gen::GenerationSettings;
    use sha2::{Digest, Sha256};

    fn spec(text: &str, w: u32, h: u32) -> PromptSpec {
        PromptSpec {
            positive_text: text.into(),
            negative_text: Some("wax seal".into()),
            settings: GenerationSettings {
                width: w,
                height: h,
                ..Default::default()
            },
        }
    }

    fn digest(img: &GeneratedImage) -> Vec<u8> {
        Sha256::digest(&img.image_bytes).to_vec()
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let s = spec("a page", 64, 64);
        assert_eq!(mock_render(&s, 1).image_bytes, mock_render(&s, 1).image_bytes);
        assert_ne!(digest(&mock_render(&s, 1)), digest(&mock_render(&s, 2)));
    }

    #[test]
    fn prompt_sensitive() {
        let a = mock_render(&spec("a page", 48, 48), 3);
        let b = mock_render(&spec("another page", 48, 48), 3);
        assert_ne!(digest(&a), digest(&b));
    }

    #[test]
    fn dimensions_follow_settings() {
        for (w, h) in [(512, 512), (512, 768), (33, 50)] {
            let img = mock_render(&spec("a page", w, h), 0).decode().unwrap();
            assert_eq!((img.width(), img.height()), (w, h));
        }
    }

    #[test]
    fn carries_fingerprint() {
        let s = spec("a page", 16, 16);
        assert_eq!(mock_render(&s, 0).prompt_fingerprint, s.fingerprint());
    }
}
