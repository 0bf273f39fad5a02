use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Pair;
use crate::error::{Error, Result};
use crate::maps::{LabelMap, RgbImage};
use crate::spix::SuperpixelMap;

fn open(path: &Path) -> Result<image::DynamicImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, format!("unreadable PNG: {e}")))
}

/// Reads an 8-bit RGB PNG with channels scaled to [0, 1].
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0.map(|c| c as f32 / 255.0)).collect();
    RgbImage::new(w, h, data)
}

/// Writes an 8-bit RGB PNG, rounding to the nearest level.
pub fn save_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let mut buf = ImageBuffer::<Rgb<u8>, Vec<u8>>::new(img.width() as u32, img.height() as u32);
    for (dst, src) in buf.pixels_mut().zip(img.pixels()) {
        *dst = Rgb(src.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, format!("cannot write PNG: {e}")))
}

/// Reads a grayscale PNG of category ids, rejecting ids `≥ categories`.
pub fn load_labels(path: &Path, categories: usize) -> Result<LabelMap> {
    let img = open(path)?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<u32> = img.pixels().map(|p| p.0[0] as u32).collect();
    if let Some(&bad) = data.iter().find(|&&v| v as usize >= categories) {
        return Err(Error::CategoryOverflow { category: bad, max: categories });
    }
    LabelMap::new(w, h, data)
}

fn save_luma16(path: &Path, w: usize, h: usize, ids: &[u32]) -> Result<()> {
    let mut raw = Vec::with_capacity(ids.len());
    for &v in ids {
        let v = u16::try_from(v).map_err(|_| Error::format(path, format!("id {v} does not fit 16 bits")))?;
        raw.push(v);
    }
    let buf = ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(w as u32, h as u32, raw).expect("sized buffer");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, format!("cannot write PNG: {e}")))
}

/// Writes category ids as a 16-bit grayscale PNG.
pub fn save_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    save_luma16(path, labels.width(), labels.height(), labels.data())
}

/// Loads an image and its label map, requiring equal extents.
pub fn load_pair(image: &Path, labels: &Path, categories: usize) -> Result<Pair> {
    let img = load_rgb(image)?;
    let lab = load_labels(labels, categories)?;
    if (img.width(), img.height()) != (lab.width(), lab.height()) {
        return Err(Error::dim(
            "load_pair",
            format!(
                "{} is {}×{} but {} is {}×{}",
                image.display(),
                img.width(),
                img.height(),
                labels.display(),
                lab.width(),
                lab.height()
            ),
        ));
    }
    Ok(Pair { image: img, labels: lab })
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// JSON written next to every superpixel PNG.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuperpixelSidecar {
    pub count: usize,
    pub s: usize,
    pub width: usize,
    pub height: usize,
    pub source_sha256: String,
}

/// Writes `path` (16-bit ids) and `path` with a `.json` extension.
pub fn save_superpixels(path: &Path, map: &SuperpixelMap, s: usize, source_sha256: &str) -> Result<()> {
    save_luma16(path, map.width(), map.height(), map.ids())?;
    let side = SuperpixelSidecar {
        count: map.count(),
        s,
        width: map.width(),
        height: map.height(),
        source_sha256: source_sha256.to_string(),
    };
    let json_path = path.with_extension("json");
    let text = serde_json::to_string_pretty(&side).map_err(|e| Error::format(&json_path, e.to_string()))?;
    fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))
}

/// Reads a superpixel id PNG (ids are re-densified in first-appearance order).
pub fn load_superpixels(path: &Path) -> Result<SuperpixelMap> {
    let img = open(path)?.to_luma16();
    let ids: Vec<u32> = img.pixels().map(|p| p.0[0] as u32).collect();
    SuperpixelMap::from_labels(img.width() as usize, img.height() as usize, &ids)
}
