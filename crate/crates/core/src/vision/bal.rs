//! Boundary-aware soft labels.
//!
//! Each category `c` owns a Gaussian bump centred on channel `delta_mu · c` of
//! a `K = delta_mu · (C - 1) + 1` channel vector. The bump width shrinks with
//! the pixel's distance to the nearest boundary, so pixels near an edge carry
//! a wider, higher-entropy target than interior pixels.

use serde::{Deserialize, Serialize};

use super::distance::{Connectivity, DistanceField};
use crate::error::{Error, Result};
use crate::maps::LabelMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BalConfig {
    /// Maximum number of categories per image.
    pub categories: usize,
    /// Channel spacing between consecutive category means.
    pub delta_mu: usize,
    /// Width at the boundary.
    pub beta: f64,
    /// Decay exponent of the width with distance.
    pub alpha: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Channels on each side of the mean that carry mass.
    pub support_radius: usize,
    pub eps_log: f64,
    pub connectivity: Connectivity,
}

impl Default for BalConfig {
    fn default() -> Self {
        BalConfig {
            categories: 50,
            delta_mu: 10,
            beta: 1.2,
            alpha: 0.5,
            sigma_min: 0.3,
            sigma_max: 1.2,
            support_radius: 4,
            eps_log: 1e-12,
            connectivity: Connectivity::Four,
        }
    }
}

impl BalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.categories < 1 {
            return Err(Error::param("categories", "must be at least 1"));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min <= self.sigma_max) {
            return Err(Error::param(
                "sigma_min",
                format!("need 0 < sigma_min ≤ sigma_max, got {} and {}", self.sigma_min, self.sigma_max),
            ));
        }
        if 2 * self.support_radius >= self.delta_mu {
            return Err(Error::param(
                "support_radius",
                format!(
                    "supports overlap: radius {} is not below delta_mu/2 = {}",
                    self.support_radius,
                    self.delta_mu as f64 / 2.0
                ),
            ));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::param("alpha", "must be positive"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::param("beta", "must be positive"));
        }
        if !(self.eps_log > 0.0) {
            return Err(Error::param("eps_log", "must be positive"));
        }
        Ok(())
    }

    /// Length `K` of each target vector.
    pub fn channels(&self) -> usize {
        self.delta_mu * (self.categories - 1) + 1
    }

    pub fn mean_index(&self, category: u32) -> usize {
        self.delta_mu * category as usize
    }
}

/// `clamp(beta · exp(-d^alpha), sigma_min, sigma_max)`; `d = +∞` → `sigma_min`.
pub fn sigma_of_distance(d: f64, cfg: &BalConfig) -> f64 {
    let raw = cfg.beta * (-d.powf(cfg.alpha)).exp();
    raw.clamp(cfg.sigma_min, cfg.sigma_max)
}

/// Gaussian evaluated at integer offsets `-radius..=radius` from `mean` in a
/// vector of length `len`, with out-of-range offsets dropped, normalized to
/// unit sum.
pub fn gaussian_window(mean: usize, sigma: f64, radius: usize, len: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let k = mean as isize + i as isize - radius as isize;
            if k < 0 || k as usize >= len {
                0.0
            } else {
                let off = i as f64 - radius as f64;
                (-(off * off) / (2.0 * sigma * sigma)).exp()
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Dense discretized Gaussian vector of length `len`.
pub fn gaussian_vector(mean: usize, sigma: f64, radius: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (i, v) in gaussian_window(mean, sigma, radius, len).into_iter().enumerate() {
        let k = mean as isize + i as isize - radius as isize;
        if k >= 0 && (k as usize) < len {
            out[k as usize] = v;
        }
    }
    out
}

/// `-Σ p_k ln(max(q_k, eps))`.
pub fn cross_entropy(p: &[f64], q: &[f64], eps: f64) -> f64 {
    -p.iter().zip(q).map(|(&pk, &qk)| if pk == 0.0 { 0.0 } else { pk * qk.max(eps).ln() }).sum::<f64>()
}

/// Encoded soft targets for one label map, stored sparsely as one window of
/// `2·support_radius + 1` channels per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct BalTarget {
    width: usize,
    height: usize,
    channels: usize,
    radius: usize,
    delta_mu: usize,
    eps_log: f64,
    categories: Vec<u32>,
    sigma: Vec<f64>,
    windows: Vec<f64>,
}

impl BalTarget {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Vector length `K`.
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn window_len(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn category(&self, pixel: usize) -> u32 {
        self.categories[pixel]
    }

    pub fn sigma(&self, pixel: usize) -> f64 {
        self.sigma[pixel]
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    pub fn eps_log(&self) -> f64 {
        self.eps_log
    }

    /// First channel of the pixel's window (may be negative at the low end).
    pub fn window_start(&self, pixel: usize) -> isize {
        (self.delta_mu * self.categories[pixel] as usize) as isize - self.radius as isize
    }

    pub fn window(&self, pixel: usize) -> &[f64] {
        let l = self.window_len();
        &self.windows[pixel * l..(pixel + 1) * l]
    }

    /// Non-zero `(channel, value)` pairs of a pixel's target.
    pub fn entries(&self, pixel: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let start = self.window_start(pixel);
        self.window(pixel).iter().enumerate().filter_map(move |(i, &v)| {
            let k = start + i as isize;
            (v != 0.0 && k >= 0 && (k as usize) < self.channels).then_some((k as usize, v))
        })
    }

    /// The dense target vector of one pixel.
    pub fn vector(&self, pixel: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.channels];
        for (k, val) in self.entries(pixel) {
            v[k] = val;
        }
        v
    }

    /// Dense channel-major (K×H×W) f32 layout.
    pub fn to_dense_chw(&self) -> Vec<f32> {
        let plane = self.width * self.height;
        let mut out = vec![0.0f32; self.channels * plane];
        for p in 0..plane {
            for (k, v) in self.entries(p) {
                out[k * plane + p] = v as f32;
            }
        }
        out
    }

    /// Channels carrying mass anywhere in the map, sorted.
    pub fn active_channels(&self) -> Vec<usize> {
        let mut used = vec![false; self.channels];
        for p in 0..self.width * self.height {
            for (k, _) in self.entries(p) {
                used[k] = true;
            }
        }
        used.iter().enumerate().filter_map(|(k, &u)| u.then_some(k)).collect()
    }

    /// Mirrors the target horizontally.
    pub fn flipped_horizontal(&self) -> BalTarget {
        let l = self.window_len();
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let src = y * self.width + (self.width - 1 - x);
                let dst = y * self.width + x;
                out.categories[dst] = self.categories[src];
                out.sigma[dst] = self.sigma[src];
                out.windows[dst * l..(dst + 1) * l].copy_from_slice(&self.windows[src * l..(src + 1) * l]);
            }
        }
        out
    }
}

/// Encodes a label map into boundary-aware soft targets.
pub fn bal_encode(labels: &LabelMap, field: &DistanceField, cfg: &BalConfig) -> Result<BalTarget> {
    cfg.validate()?;
    if field.width() != labels.width() || field.height() != labels.height() {
        return Err(Error::dim("bal_encode", "distance field and label map extents differ"));
    }
    if let Some(&bad) = labels.data().iter().find(|&&l| l as usize >= cfg.categories) {
        return Err(Error::CategoryOverflow {
            category: bad,
            max: cfg.categories,
        });
    }
    let k = cfg.channels();
    let l = 2 * cfg.support_radius + 1;
    let n = labels.len();
    let mut sigma = Vec::with_capacity(n);
    let mut windows = Vec::with_capacity(n * l);
    for (&c, &d) in labels.data().iter().zip(field.data()) {
        let s = sigma_of_distance(d, cfg);
        sigma.push(s);
        windows.extend(gaussian_window(cfg.mean_index(c), s, cfg.support_radius, k));
    }
    Ok(BalTarget {
        width: labels.width(),
        height: labels.height(),
        channels: k,
        radius: cfg.support_radius,
        delta_mu: cfg.delta_mu,
        eps_log: cfg.eps_log,
        categories: labels.data().to_vec(),
        sigma,
        windows,
    })
}

/// Per-pixel entropy in nats, the irreducible cross-entropy of each target.
pub fn bal_entropy_map(t: &BalTarget) -> Vec<f64> {
    let eps = t.eps_log;
    (0..t.width * t.height)
        .map(|p| -t.entries(p).map(|(_, y)| y * y.max(eps).ln()).sum::<f64>())
        .collect()
}

/// One cell of the mean-gap × width-gap cross-entropy table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CeDistance {
    pub delta_mu: usize,
    pub delta_sigma: f64,
    pub cross_entropy: f64,
}

/// Cross-entropy between a reference bump `p = N(μ₀, σ₀)` and a shifted,
/// widened bump `q = N(μ₀ + Δμ, σ₀ + Δσ)`, both discretized like BAL targets.
///
/// `σ₀ = sigma_min` and `μ₀` sits far enough from the vector ends that no
/// support is truncated.
pub fn bal_distance_analysis(cfg: &BalConfig, mu_gaps: &[usize], sigma_gaps: &[f64]) -> Result<Vec<CeDistance>> {
    if let Some(g) = sigma_gaps.iter().find(|g| !(**g >= 0.0) || !g.is_finite()) {
        return Err(Error::param("sigma_gaps", format!("gaps must be finite and non-negative, got {g}")));
    }
    let r = cfg.support_radius;
    let mu0 = 2 * r;
    let len = mu0 + mu_gaps.iter().copied().max().unwrap_or(0) + 2 * r + 1;
    let sigma0 = cfg.sigma_min;
    let p = gaussian_vector(mu0, sigma0, r, len);
    let mut rows = Vec::with_capacity(mu_gaps.len() * sigma_gaps.len());
    for &dm in mu_gaps {
        for &ds in sigma_gaps {
            let q = gaussian_vector(mu0 + dm, sigma0 + ds, r, len);
            rows.push(CeDistance {
                delta_mu: dm,
                delta_sigma: ds,
                cross_entropy: cross_entropy(&p, &q, cfg.eps_log),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vision::distance::distance_field;

    #[test]
    fn sigma_endpoints() {
        let cfg = BalConfig::default();
        assert!((sigma_of_distance(0.0, &cfg) - 1.2).abs() < 1e-12);
        assert!((1.2 * (-2.0f64).exp() - 0.1624).abs() < 1e-4);
        assert_eq!(sigma_of_distance(4.0, &cfg), 0.3);
        assert_eq!(sigma_of_distance(f64::INFINITY, &cfg), 0.3);
    }

    #[test]
    fn sigma_is_monotone_and_covers_range() {
        let cfg = BalConfig::default();
        let mut prev = f64::INFINITY;
        for i in 0..2000 {
            let s = sigma_of_distance(i as f64 * 0.005, &cfg);
            assert!(s <= prev);
            assert!((cfg.sigma_min..=cfg.sigma_max).contains(&s));
            prev = s;
        }
        assert_eq!(prev, cfg.sigma_min);
    }

    #[test]
    fn interior_and_boundary_windows() {
        let w = gaussian_window(20, 0.3, 4, 491);
        assert!((w[3] - 0.0038).abs() < 1e-4 && (w[4] - 0.9923).abs() < 1e-4 && (w[5] - 0.0038).abs() < 1e-4);
        let w = gaussian_window(20, 1.2, 4, 491);
        let expect = [0.0013, 0.0146, 0.0829, 0.2349, 0.3325];
        for (i, e) in expect.iter().enumerate() {
            assert!((w[i] - e).abs() < 1e-4, "{i}: {}", w[i]);
            assert!((w[8 - i] - e).abs() < 1e-4);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = BalConfig::default();
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.channels(), 491);
        cfg.support_radius = 5;
        assert!(cfg.validate().is_err());
        cfg = BalConfig { sigma_min: 2.0, ..BalConfig::default() };
        assert!(cfg.validate().is_err());
        cfg = BalConfig { categories: 0, ..BalConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn encoding_properties() {
        let labels = LabelMap::from_fn(12, 9, |x, y| ((x / 4) + 3 * (y / 5)) as u32).unwrap();
        let cfg = BalConfig::default();
        let field = distance_field(&labels, cfg.connectivity).unwrap();
        let t = bal_encode(&labels, &field, &cfg).unwrap();
        for p in 0..labels.len() {
            let v = t.vector(p);
            assert!(v.iter().all(|&x| x >= 0.0));
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let mean = cfg.mean_index(labels.data()[p]);
            for (k, &x) in v.iter().enumerate() {
                if x > 0.0 {
                    assert!(k.abs_diff(mean) <= cfg.support_radius);
                }
            }
        }
        let a = t.vector(0);
        let far = t.vector(labels.len() - 1);
        assert_eq!(a.iter().zip(&far).map(|(x, y)| x * y).sum::<f64>(), 0.0);
    }

    #[test]
    fn category_overflow() {
        let labels = LabelMap::new(2, 1, vec![0, 50]).unwrap();
        let field = distance_field(&labels, Connectivity::Four).unwrap();
        assert!(matches!(
            bal_encode(&labels, &field, &BalConfig::default()),
            Err(Error::CategoryOverflow { category: 50, max: 50 })
        ));
    }

    #[test]
    fn entropy_values() {
        let labels = LabelMap::new(1, 1, vec![3]).unwrap();
        let cfg = BalConfig::default();
        let field = distance_field(&labels, cfg.connectivity).unwrap();
        let t = bal_encode(&labels, &field, &cfg).unwrap();
        let h = bal_entropy_map(&t)[0];
        assert!((h - 0.050).abs() < 5e-4, "{h}");

        let w = gaussian_window(30, 1.2, 4, 491);
        let h = -w.iter().map(|y| y * y.ln()).sum::<f64>();
        assert!((h - 1.60).abs() < 5e-3, "{h}");

        let one_hot = BalConfig { support_radius: 0, ..BalConfig::default() };
        let t = bal_encode(&labels, &field, &one_hot).unwrap();
        assert_eq!(bal_entropy_map(&t)[0], 0.0);
    }

    #[test]
    fn entropy_decreases_with_distance() {
        // A wide label-1 stripe so distances grow well past the clamp.
        let labels = LabelMap::from_fn(24, 1, |x, _| u32::from(x >= 2)).unwrap();
        let cfg = BalConfig::default();
        let field = distance_field(&labels, cfg.connectivity).unwrap();
        let t = bal_encode(&labels, &field, &cfg).unwrap();
        let h = bal_entropy_map(&t);
        for x in 2..23 {
            assert!(field.get(x, 0) <= field.get(x + 1, 0));
            assert!(h[x] >= h[x + 1] - 1e-15);
        }
    }

    #[test]
    fn ce_table_saturates_and_equals_entropy_at_zero_gap() {
        let cfg = BalConfig::default();
        let rows = bal_distance_analysis(&cfg, &[0, 10, 20], &[0.0, 0.3]).unwrap();
        let at = |dm: usize, ds: f64| {
            rows.iter().find(|r| r.delta_mu == dm && r.delta_sigma == ds).unwrap().cross_entropy
        };
        assert!((at(10, 0.0) - at(20, 0.0)).abs() < 1e-9);
        assert!((at(10, 0.3) - at(20, 0.3)).abs() < 1e-9);
        let p = gaussian_vector(8, cfg.sigma_min, 4, 40);
        let h = -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>();
        assert!((at(0, 0.0) - h).abs() < 1e-12);
    }
}
