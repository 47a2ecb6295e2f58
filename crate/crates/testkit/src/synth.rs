//! Procedural manuscript-like pages with planted attributes.

use std::collections::{BTreeSet, HashMap};
use std::io::Cursor;
use std::path::{Path, PathBuf};

use attriq_core::index::DocumentRecord;
use image::{ImageFormat, Rgb, RgbImage};
use rand::Rng;

pub const ILLUMINATED: &str = "illuminated";
pub const SEAL: &str = "seal";
pub const STAINED: &str = "stained";
pub const ATTRIBUTES: [&str; 3] = [ILLUMINATED, SEAL, STAINED];

#[derive(Debug, Clone)]
pub struct Page {
    pub doc_id: String,
    pub attributes: BTreeSet<String>,
    pub image: RgbImage,
}

impl Page {
    pub fn png(&self) -> Vec<u8> {
        encode_png(&self.image)
    }
}

pub fn encode_png(image: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    image.write_to(&mut out, ImageFormat::Png).expect("png encoding");
    out.into_inner()
}

fn fill_rect(img: &mut RgbImage, x0: u32, y0: u32, w: u32, h: u32, color: Rgb<u8>) {
    for y in y0..(y0 + h).min(img.height()) {
        for x in x0..(x0 + w).min(img.width()) {
            img.put_pixel(x, y, color);
        }
    }
}

fn fill_disc(img: &mut RgbImage, cx: f64, cy: f64, r: f64, color: Rgb<u8>, alpha: f64) {
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (dx, dy) = (f64::from(x) - cx, f64::from(y) - cy);
            if dx * dx + dy * dy <= r * r {
                let p = img.get_pixel_mut(x, y);
                for c in 0..3 {
                    p.0[c] = (f64::from(p.0[c]) * (1.0 - alpha) + f64::from(color.0[c]) * alpha).round() as u8;
                }
            }
        }
    }
}

/// Renders one page: parchment ground, ruled lines of ink "words", and the
/// visual marks of whichever attributes are set.
pub fn render_page(rng: &mut impl Rng, width: u32, height: u32, attributes: &BTreeSet<String>) -> RgbImage {
    let tone: u8 = rng.random_range(200..=240);
    let ground = Rgb([tone, tone.saturating_sub(rng.random_range(8..24)), tone.saturating_sub(rng.random_range(30..60))]);
    let mut img = RgbImage::from_pixel(width, height, ground);

    let ink_level: u8 = rng.random_range(20..80);
    let ink = Rgb([ink_level, ink_level, ink_level.saturating_add(rng.random_range(0..30))]);
    let margin = width / 10;
    let line_h = rng.random_range(6..=12).min(height / 4).max(3);
    let stroke = (line_h / 3).max(1);
    let mut y = height / 10;
    while y + stroke < height - height / 10 {
        let mut x = margin;
        while x < width - margin {
            let word = rng.random_range(3..=(width / 6).max(4));
            fill_rect(&mut img, x, y, word.min(width - margin - x), stroke, ink);
            x += word + rng.random_range(2..=6);
        }
        y += line_h;
    }

    if attributes.contains(ILLUMINATED) {
        let side = (width.min(height) / 4).max(2);
        let colors = [Rgb([200, 160, 40]), Rgb([170, 30, 30]), Rgb([30, 50, 150])];
        let color = colors[rng.random_range(0..colors.len())];
        fill_rect(&mut img, margin, height / 10, side, side, color);
    }
    if attributes.contains(STAINED) {
        for _ in 0..rng.random_range(1..=3) {
            let cx = rng.random_range(0.0..f64::from(width));
            let cy = rng.random_range(0.0..f64::from(height));
            let r = rng.random_range(0.1..0.3) * f64::from(width.min(height));
            fill_disc(&mut img, cx, cy, r, Rgb([110, 80, 40]), 0.45);
        }
    }
    if attributes.contains(SEAL) {
        let r = f64::from(width.min(height)) / 8.0;
        fill_disc(&mut img, f64::from(width) * 0.75, f64::from(height) * 0.85, r, Rgb([160, 20, 20]), 1.0);
    }
    img
}

/// Adds independent noise in `[-max_delta, max_delta]` to every channel.
pub fn perturb(image: &RgbImage, rng: &mut impl Rng, max_delta: u8) -> RgbImage {
    let mut out = image.clone();
    let d = i16::from(max_delta);
    for p in out.pixels_mut() {
        for c in &mut p.0 {
            *c = (i16::from(*c) + rng.random_range(-d..=d)).clamp(0, 255) as u8;
        }
    }
    out
}

/// `n` pages `doc0000 …` with each attribute present with probability ½.
pub fn labeled_corpus(rng: &mut impl Rng, n: usize, width: u32, height: u32) -> Vec<Page> {
    (0..n)
        .map(|i| {
            let attributes: BTreeSet<String> = ATTRIBUTES
                .iter()
                .filter(|_| rng.random_bool(0.5))
                .map(|a| a.to_string())
                .collect();
            let image = render_page(rng, width, height, &attributes);
            Page {
                doc_id: format!("doc{i:04}"),
                attributes,
                image,
            }
        })
        .collect()
}

/// Records with `mem://<doc_id>` URIs, for use with an in-memory loader.
pub fn records(pages: &[Page]) -> Vec<DocumentRecord> {
    pages
        .iter()
        .map(|p| DocumentRecord {
            doc_id: p.doc_id.clone(),
            image_uri: format!("mem://{}", p.doc_id),
            attributes: Some(p.attributes.clone()),
        })
        .collect()
}

/// PNG bytes per doc id.
pub fn png_map(pages: &[Page]) -> HashMap<String, Vec<u8>> {
    pages.iter().map(|p| (p.doc_id.clone(), p.png())).collect()
}

/// Writes `images/<doc_id>.png` and `manifest.jsonl` under `dir`; returns
/// the manifest path.
pub fn write_corpus(dir: &Path, pages: &[Page]) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir.join("images"))?;
    let mut manifest = String::new();
    for p in pages {
        let rel = format!("images/{}.png", p.doc_id);
        std::fs::write(dir.join(&rel), p.png())?;
        let record = DocumentRecord {
            doc_id: p.doc_id.clone(),
            image_uri: rel,
            attributes: Some(p.attributes.clone()),
        };
        manifest.push_str(&serde_json::to_string(&record).expect("record serializes"));
        manifest.push('\n');
    }
    let path = dir.join("manifest.jsonl");
    std::fs::write(&path, manifest)?;
    Ok(path)
}
