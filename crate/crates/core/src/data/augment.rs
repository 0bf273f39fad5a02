use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Pair;
use crate::error::{Error, Result};
use crate::maps::{LabelMap, RgbImage};

/// Square crop at (x, y) with an optional horizontal flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropSpec {
    pub x: usize,
    pub y: usize,
    pub size: usize,
    pub flip: bool,
}

/// Uniform crop offset and a fair coin for the flip, from `seed` alone.
pub fn draw_crop(width: usize, height: usize, crop: usize, seed: u64) -> Result<CropSpec> {
    if crop == 0 || !crop.is_multiple_of(16) {
        return Err(Error::param("crop", format!("must be a positive multiple of 16, got {crop}")));
    }
    if crop > width.min(height) {
        return Err(Error::param("crop", format!("{crop} exceeds the {width}×{height} image")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rng.random_range(0..=width - crop);
    let y = rng.random_range(0..=height - crop);
    let flip = rng.random_bool(0.5);
    Ok(CropSpec { x, y, size: crop, flip })
}

/// Applies one spatial transform to both image and labels.
pub fn apply_crop(pair: &Pair, spec: CropSpec) -> Result<Pair> {
    let (w, h) = (pair.image.width(), pair.image.height());
    if spec.x + spec.size > w || spec.y + spec.size > h {
        return Err(Error::param("crop", format!("{spec:?} does not fit {w}×{h}")));
    }
    let n = spec.size;
    let src = |x: usize| if spec.flip { spec.x + n - 1 - x } else { spec.x + x };
    let mut px = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            px.push(pair.image.get(src(x), spec.y + y));
        }
    }
    let labels = LabelMap::from_fn(n, n, |x, y| pair.labels.get(src(x), spec.y + y))?;
    Ok(Pair { image: RgbImage::new(n, n, px)?, labels })
}

pub fn random_crop_flip(pair: &Pair, crop: usize, seed: u64) -> Result<Pair> {
    let spec = draw_crop(pair.image.width(), pair.image.height(), crop, seed)?;
    apply_crop(pair, spec)
}
