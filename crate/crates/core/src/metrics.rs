//! Superpixel benchmark scores against ground-truth segmentations.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::LabelMap;
use crate::spix::SuperpixelMap;

pub const DEFAULT_TOLERANCE: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub asa: f64,
    pub br: f64,
    pub bp: f64,
    pub co: f64,
    pub superpixel_count: usize,
    pub boundary_tolerance: usize,
}

fn check_extent(sp: &SuperpixelMap, gt: &LabelMap) -> Result<()> {
    if (sp.width(), sp.height()) != (gt.width(), gt.height()) {
        return Err(Error::Usage(format!(
            "superpixels are {}×{} but ground truth is {}×{}",
            sp.width(),
            sp.height(),
            gt.width(),
            gt.height()
        )));
    }
    Ok(())
}

/// Fraction of pixels covered when every superpixel takes its majority
/// ground-truth label.
pub fn asa(sp: &SuperpixelMap, gt: &LabelMap) -> Result<f64> {
    check_extent(sp, gt)?;
    let mut overlap: HashMap<(u32, u32), usize> = HashMap::new();
    for (&s, &g) in sp.ids().iter().zip(gt.data()) {
        *overlap.entry((s, g)).or_insert(0) += 1;
    }
    let mut best = vec![0usize; sp.count()];
    for ((s, _), n) in overlap {
        best[s as usize] = best[s as usize].max(n);
    }
    Ok(best.iter().sum::<usize>() as f64 / gt.len() as f64)
}

/// Pixels with a 4-neighbor of a different label.
pub fn boundary_mask(ids: &[u32], width: usize, height: usize) -> Vec<bool> {
    let mut out = vec![false; ids.len()];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if x + 1 < width && ids[i] != ids[i + 1] {
                out[i] = true;
                out[i + 1] = true;
            }
            if y + 1 < height && ids[i] != ids[i + width] {
                out[i] = true;
                out[i + width] = true;
            }
        }
    }
    out
}

/// Counts set pixels in axis-aligned boxes in O(1) per query.
struct BoxCounter {
    width: usize,
    height: usize,
    sums: Vec<u32>,
}

impl BoxCounter {
    fn new(mask: &[bool], width: usize, height: usize) -> Self {
        let mut sums = vec![0u32; (width + 1) * (height + 1)];
        for y in 0..height {
            for x in 0..width {
                sums[(y + 1) * (width + 1) + x + 1] = u32::from(mask[y * width + x]) + sums[y * (width + 1) + x + 1]
                    + sums[(y + 1) * (width + 1) + x]
                    - sums[y * (width + 1) + x];
            }
        }
        BoxCounter { width, height, sums }
    }

    /// Any set pixel within Chebyshev distance `r` of (x, y)?
    fn any_within(&self, x: usize, y: usize, r: usize) -> bool {
        let (x0, y0) = (x.saturating_sub(r), y.saturating_sub(r));
        let (x1, y1) = ((x + r + 1).min(self.width), (y + r + 1).min(self.height));
        let at = |x: usize, y: usize| self.sums[y * (self.width + 1) + x];
        at(x1, y1) + at(x0, y0) > at(x0, y1) + at(x1, y0)
    }
}

/// Share of `from` boundary pixels with a `to` boundary pixel within `tol`;
/// 1 when `from` has no boundary.
fn boundary_hit_rate(from: &[bool], to: &[bool], width: usize, height: usize, tol: usize) -> f64 {
    let counter = BoxCounter::new(to, width, height);
    let (mut total, mut hit) = (0usize, 0usize);
    for (i, &b) in from.iter().enumerate() {
        if b {
            total += 1;
            if counter.any_within(i % width, i / width, tol) {
                hit += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}

/// (recall, precision) of superpixel boundaries against ground truth.
pub fn boundary_recall_precision(sp: &SuperpixelMap, gt: &LabelMap, tol: usize) -> Result<(f64, f64)> {
    check_extent(sp, gt)?;
    let (w, h) = (gt.width(), gt.height());
    let sb = boundary_mask(sp.ids(), w, h);
    let gb = boundary_mask(gt.data(), w, h);
    Ok((boundary_hit_rate(&gb, &sb, w, h, tol), boundary_hit_rate(&sb, &gb, w, h, tol)))
}

/// Size-weighted isoperimetric quotient `Σ (|s|/N) · min(1, 4π|s| / P_s²)`,
/// where `P_s` counts pixel sides facing another label or the image border.
pub fn compactness(sp: &SuperpixelMap) -> f64 {
    let (w, h) = (sp.width(), sp.height());
    let ids = sp.ids();
    let mut area = vec![0usize; sp.count()];
    let mut perim = vec![0usize; sp.count()];
    for y in 0..h {
        for x in 0..w {
            let l = ids[y * w + x] as usize;
            area[l] += 1;
            let differs = |nx: isize, ny: isize| {
                nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize || ids[ny as usize * w + nx as usize] as usize != l
            };
            let (xi, yi) = (x as isize, y as isize);
            perim[l] += [(xi - 1, yi), (xi + 1, yi), (xi, yi - 1), (xi, yi + 1)]
                .iter()
                .filter(|&&(nx, ny)| differs(nx, ny))
                .count();
        }
    }
    let n = (w * h) as f64;
    area.iter()
        .zip(&perim)
        .filter(|(&a, _)| a > 0)
        .map(|(&a, &p)| {
            let q = (4.0 * std::f64::consts::PI * a as f64 / (p * p) as f64).min(1.0);
            a as f64 / n * q
        })
        .sum()
}

pub fn evaluate(sp: &SuperpixelMap, gt: &LabelMap, tol: usize) -> Result<MetricsReport> {
    let asa = asa(sp, gt)?;
    let (br, bp) = boundary_recall_precision(sp, gt, tol)?;
    Ok(MetricsReport {
        asa,
        br,
        bp,
        co: compactness(sp),
        superpixel_count: sp.count(),
        boundary_tolerance: tol,
    })
}

/// One row of a granularity sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// The granularity parameter passed to the decoder (interval or count).
    pub setting: usize,
    pub superpixel_count: usize,
    pub asa: f64,
    pub br: f64,
    pub bp: f64,
    pub co: f64,
}

/// Decodes at every setting and scores the result.
pub fn sweep<F>(gt: &LabelMap, settings: &[usize], tol: usize, mut decode: F) -> Result<Vec<SweepRow>>
where
    F: FnMut(usize) -> Result<SuperpixelMap>,
{
    settings
        .iter()
        .map(|&s| {
            let r = evaluate(&decode(s)?, gt, tol)?;
            Ok(SweepRow { setting: s, superpixel_count: r.superpixel_count, asa: r.asa, br: r.br, bp: r.bp, co: r.co })
        })
        .collect()
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
