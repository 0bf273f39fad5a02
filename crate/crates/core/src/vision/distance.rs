//! Exact Euclidean distance from each pixel to the nearest pixel carrying a
//! different ground-truth label.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::LabelMap;

/// Pixel adjacency used to decide which pixels touch a boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Connectivity {
    #[default]
    #[serde(rename = "4")]
    Four,
    #[serde(rename = "8")]
    Eight,
}

/// Per-pixel boundary distance `d ≥ 0`; `+∞` when the map has one label.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DistanceField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

const FAR: f64 = 1e30;

/// Squared distance transform of a sampled function along one line
/// (lower envelope of parabolas). `f` holds 0 at features and `FAR` elsewhere.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let intersect = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    for q in 1..n {
        let mut s = intersect(q, v[k]);
        // z[0] = -inf, so this never underflows k
        while s <= z[k] {
            k -= 1;
            s = intersect(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

/// Squared Euclidean distance to the nearest `true` pixel of `features`.
pub(crate) fn squared_edt(features: &[bool], width: usize, height: usize) -> Vec<f64> {
    let n = width.max(height);
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut line = vec![0.0f64; n];
    let mut out_line = vec![0.0f64; n];
    let mut grid: Vec<f64> = features.iter().map(|&f| if f { 0.0 } else { FAR }).collect();

    for x in 0..width {
        for y in 0..height {
            line[y] = grid[y * width + x];
        }
        edt_1d(&line[..height], &mut out_line[..height], &mut v, &mut z);
        for y in 0..height {
            grid[y * width + x] = out_line[y];
        }
    }
    for y in 0..height {
        let row = &mut grid[y * width..(y + 1) * width];
        line[..width].copy_from_slice(row);
        edt_1d(&line[..width], &mut out_line[..width], &mut v, &mut z);
        row.copy_from_slice(&out_line[..width]);
    }
    grid
}

/// True if a neighbor under `conn` carries a different label.
pub(crate) fn touches_other_label(labels: &LabelMap, x: usize, y: usize, conn: Connectivity) -> bool {
    let (w, h) = (labels.width() as isize, labels.height() as isize);
    let own = labels.get(x, y);
    let offsets: &[(isize, isize)] = match conn {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (1, -1), (-1, 1), (1, 1)],
    };
    offsets.iter().any(|&(dx, dy)| {
        let (nx, ny) = (x as isize + dx, y as isize + dy);
        nx >= 0 && ny >= 0 && nx < w && ny < h && labels.get(nx as usize, ny as usize) != own
    })
}

/// Distance to the nearest differently-labelled pixel minus one, clamped at
/// zero, so pixels adjacent to a boundary get `d = 0`. The image border is
/// not a boundary.
pub fn distance_field(labels: &LabelMap, conn: Connectivity) -> Result<DistanceField> {
    let (width, height) = (labels.width(), labels.height());
    if labels.is_empty() {
        return Err(Error::Usage("distance field of an empty label map".into()));
    }
    let mut data = vec![f64::INFINITY; width * height];
    let uniq = labels.unique();
    if uniq.len() > 1 {
        for &label in &uniq {
            let features: Vec<bool> = labels.data().iter().map(|&l| l != label).collect();
            let sq = squared_edt(&features, width, height);
            for (i, &l) in labels.data().iter().enumerate() {
                if l == label {
                    data[i] = (sq[i].sqrt() - 1.0).max(0.0);
                }
            }
        }
        if conn == Connectivity::Eight {
            for y in 0..height {
                for x in 0..width {
                    if touches_other_label(labels, x, y, conn) {
                        data[y * width + x] = 0.0;
                    }
                }
            }
        }
    }
    Ok(DistanceField { width, height, data })
}
