//! Simple linear iterative clustering over LAB color and position.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{srgb_to_lab, RgbImage};
use crate::spix::{enforce_connectivity, SuperpixelMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlicConfig {
    /// Target number of superpixels.
    pub k: usize,
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SlicConfig {
    fn default() -> Self {
        SlicConfig { k: 200, compactness: 10.0, iterations: 10 }
    }
}

/// Clustering result with the mean spatial center displacement of every
/// iteration.
#[derive(Clone, Debug)]
pub struct SlicOutput {
    pub map: SuperpixelMap,
    pub residuals: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

pub fn slic(image: &RgbImage, cfg: &SlicConfig) -> Result<SuperpixelMap> {
    slic_with_trace(image, cfg).map(|o| o.map)
}

pub fn slic_with_trace(image: &RgbImage, cfg: &SlicConfig) -> Result<SlicOutput> {
    let (w, h) = (image.width(), image.height());
    let n = w * h;
    if cfg.k == 0 || cfg.k > n {
        return Err(Error::param("K", format!("must be in 1..={n}, got {}", cfg.k)));
    }
    if cfg.iterations == 0 {
        return Err(Error::param("iterations", "must be ≥ 1"));
    }
    if !(cfg.compactness > 0.0) {
        return Err(Error::param("compactness", "must be positive"));
    }
    let lab: Vec<[f64; 3]> = image.pixels().iter().map(|&p| srgb_to_lab(p).map(f64::from)).collect();
    let step = (n as f64 / cfg.k as f64).sqrt();

    let nx = ((cfg.k as f64 * w as f64 / h as f64).sqrt().round() as usize).clamp(1, w);
    let ny = ((cfg.k as f64 / nx as f64).round() as usize).clamp(1, h);
    let (sx, sy) = (w as f64 / nx as f64, h as f64 / ny as f64);
    let grad = |x: usize, y: usize| {
        let at = |x: usize, y: usize| lab[y * w + x];
        let d = |a: [f64; 3], b: [f64; 3]| (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>();
        d(at((x + 1).min(w - 1), y), at(x.saturating_sub(1), y)) + d(at(x, (y + 1).min(h - 1)), at(x, y.saturating_sub(1)))
    };
    let mut centers: Vec<Center> = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let cx = (((i as f64 + 0.5) * sx) as usize).min(w - 1);
            let cy = (((j as f64 + 0.5) * sy) as usize).min(h - 1);
            // move to the lowest-gradient position of the 3×3 neighborhood
            let mut best = (grad(cx, cy), cx, cy);
            for y in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
                for x in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
                    let g = grad(x, y);
                    if g < best.0 {
                        best = (g, x, y);
                    }
                }
            }
            let (_, x, y) = best;
            centers.push(Center { lab: lab[y * w + x], x: x as f64, y: y as f64 });
        }
    }

    let spatial = cfg.compactness / step;
    let dist = |c: &Center, p: usize| {
        let (x, y) = ((p % w) as f64, (p / w) as f64);
        let dl: f64 = (0..3).map(|i| (lab[p][i] - c.lab[i]).powi(2)).sum();
        let dxy = (x - c.x).powi(2) + (y - c.y).powi(2);
        dl + dxy * spatial * spatial
    };
    let mut labels = vec![u32::MAX; n];
    let mut best = vec![f64::INFINITY; n];
    let mut residuals = Vec::with_capacity(cfg.iterations);
    let radius = step.ceil() as isize;
    for _ in 0..cfg.iterations {
        best.fill(f64::INFINITY);
        labels.fill(u32::MAX);
        for (ci, c) in centers.iter().enumerate() {
            let (x0, x1) = ((c.x as isize - radius).max(0), (c.x as isize + radius).min(w as isize - 1));
            let (y0, y1) = ((c.y as isize - radius).max(0), (c.y as isize + radius).min(h as isize - 1));
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = y as usize * w + x as usize;
                    let d = dist(c, p);
                    if d < best[p] {
                        best[p] = d;
                        labels[p] = ci as u32;
                    }
                }
            }
        }
        // pixels outside every window take the closest center outright
        for p in 0..n {
            if labels[p] == u32::MAX {
                let (ci, _) = centers
                    .iter()
                    .enumerate()
                    .map(|(i, c)| (i, dist(c, p)))
                    .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
                labels[p] = ci as u32;
            }
        }
        let mut acc = vec![[0.0f64; 6]; centers.len()];
        for (p, &l) in labels.iter().enumerate() {
            let a = &mut acc[l as usize];
            a[0] += lab[p][0];
            a[1] += lab[p][1];
            a[2] += lab[p][2];
            a[3] += (p % w) as f64;
            a[4] += (p / w) as f64;
            a[5] += 1.0;
        }
        let mut moved = 0.0;
        for (c, a) in centers.iter_mut().zip(&acc) {
            if a[5] == 0.0 {
                continue;
            }
            let next = Center { lab: [a[0] / a[5], a[1] / a[5], a[2] / a[5]], x: a[3] / a[5], y: a[4] / a[5] };
            moved += ((next.x - c.x).powi(2) + (next.y - c.y).powi(2)).sqrt();
            *c = next;
        }
        residuals.push(moved / centers.len() as f64);
    }
    let raw = SuperpixelMap::from_labels(w, h, &labels)?;
    let min_size = ((step * step) as usize / 4).max(1);
    Ok(SlicOutput { map: enforce_connectivity(&raw, min_size), residuals })
}
