//! Layered random shapes over a background, rasterized to a category map and
//! painted with per-region colors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Pair;
use crate::error::{Error, Result};
use crate::maps::{LabelMap, RgbImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Polygon,
    Ellipse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSceneConfig {
    pub width: usize,
    pub height: usize,
    /// Inclusive range of categories per scene, background included.
    pub regions: (usize, usize),
    pub shapes: Vec<ShapeKind>,
    /// Standard deviation of each region's linear shading slopes.
    pub jitter: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        SyntheticSceneConfig {
            width: 64,
            height: 64,
            regions: (3, 6),
            shapes: vec![ShapeKind::Polygon, ShapeKind::Ellipse],
            jitter: 0.05,
            noise: 0.02,
            seed: 0,
        }
    }
}

/// Pixels every category must cover.
const MIN_REGION: usize = 16;

impl SyntheticSceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || !self.width.is_multiple_of(16) || !self.height.is_multiple_of(16) {
            return Err(Error::param("extents", format!("{}×{} must be positive multiples of 16", self.width, self.height)));
        }
        let (lo, hi) = self.regions;
        if lo < 2 || hi < lo {
            return Err(Error::param("regions", format!("need 2 ≤ min ≤ max, got {lo}..={hi}")));
        }
        if hi * MIN_REGION > self.width * self.height {
            return Err(Error::param("regions", "too many regions for the extents"));
        }
        if self.shapes.is_empty() {
            return Err(Error::param("shapes", "palette must not be empty"));
        }
        if !(self.jitter >= 0.0 && self.noise >= 0.0) {
            return Err(Error::param("noise", "jitter and noise must be ≥ 0"));
        }
        Ok(())
    }
}

enum Shape {
    Polygon(Vec<(f64, f64)>),
    Ellipse { cx: f64, cy: f64, a: f64, b: f64, cos: f64, sin: f64 },
}

impl Shape {
    fn random(kind: ShapeKind, w: f64, h: f64, rng: &mut ChaCha8Rng) -> Shape {
        let cx = rng.random_range(0.0..w);
        let cy = rng.random_range(0.0..h);
        let scale = w.min(h);
        match kind {
            ShapeKind::Polygon => {
                let n = rng.random_range(3..=7);
                let r = rng.random_range(0.15..0.4) * scale;
                let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
                angles.sort_by(f64::total_cmp);
                let pts = angles
                    .into_iter()
                    .map(|t| {
                        let rr = r * rng.random_range(0.6..1.0);
                        (cx + rr * t.cos(), cy + rr * t.sin())
                    })
                    .collect();
                Shape::Polygon(pts)
            }
            ShapeKind::Ellipse => {
                let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
                Shape::Ellipse {
                    cx,
                    cy,
                    a: rng.random_range(0.1..0.35) * scale,
                    b: rng.random_range(0.1..0.35) * scale,
                    cos: t.cos(),
                    sin: t.sin(),
                }
            }
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Shape::Polygon(pts) => {
                let mut inside = false;
                let mut j = pts.len() - 1;
                for i in 0..pts.len() {
                    let ((xi, yi), (xj, yj)) = (pts[i], pts[j]);
                    if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
            Shape::Ellipse { cx, cy, a, b, cos, sin } => {
                let (dx, dy) = (x - cx, y - cy);
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            }
        }
    }
}

fn distinct_colors(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let mut out: Vec<[f64; 3]> = Vec::with_capacity(n);
    let mut min_gap = 0.3;
    while out.len() < n {
        // relax the spacing if the palette gets crowded
        for _ in 0..200 {
            let c = [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)];
            let far = out.iter().all(|o| o.iter().zip(&c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) >= min_gap);
            if far {
                out.push(c);
                break;
            }
        }
        min_gap *= 0.9;
    }
    out
}

/// One scene. Degenerate layouts (a category under 16 pixels) are redrawn.
pub fn gen_synthetic(cfg: &SyntheticSceneConfig) -> Result<Pair> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (w, h) = (cfg.width, cfg.height);
    let regions = rng.random_range(cfg.regions.0..=cfg.regions.1);
    let labels = loop {
        let mut ids = vec![0u32; w * h];
        for cat in 1..regions {
            let kind = cfg.shapes[rng.random_range(0..cfg.shapes.len())];
            let shape = Shape::random(kind, w as f64, h as f64, &mut rng);
            for y in 0..h {
                for x in 0..w {
                    if shape.contains(x as f64 + 0.5, y as f64 + 0.5) {
                        ids[y * w + x] = cat as u32;
                    }
                }
            }
        }
        let mut counts = vec![0usize; regions];
        ids.iter().for_each(|&c| counts[c as usize] += 1);
        if counts.iter().all(|&c| c >= MIN_REGION) {
            break ids;
        }
    };

    let colors = distinct_colors(regions, &mut rng);
    let jitter = Normal::new(0.0, cfg.jitter).map_err(|e| Error::param("jitter", e.to_string()))?;
    let slopes: Vec<[[f64; 2]; 3]> =
        (0..regions).map(|_| std::array::from_fn(|_| [jitter.sample(&mut rng), jitter.sample(&mut rng)])).collect();
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::param("noise", e.to_string()))?;
    let mut px = Vec::with_capacity(w * h);
    for (i, &cat) in labels.iter().enumerate() {
        let (u, v) = ((i % w) as f64 / w as f64 - 0.5, (i / w) as f64 / h as f64 - 0.5);
        let c = cat as usize;
        px.push(std::array::from_fn(|ch| {
            let base = colors[c][ch] + slopes[c][ch][0] * u + slopes[c][ch][1] * v;
            let n = if cfg.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            (base + n).clamp(0.0, 1.0) as f32
        }));
    }
    Ok(Pair { image: RgbImage::new(w, h, px)?, labels: LabelMap::new(w, h, labels)? })
}

/// `count` scenes; scene `i` uses seed `cfg.seed ^ i`.
pub fn synthetic_corpus(cfg: &SyntheticSceneConfig, count: usize) -> Result<Vec<Pair>> {
    (0..count)
        .map(|i| gen_synthetic(&SyntheticSceneConfig { seed: cfg.seed ^ i as u64, ..cfg.clone() }))
        .collect()
}
