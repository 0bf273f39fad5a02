//! Band-pass contrast sensitivity model of human vision.

use crate::error::{Error, Result};

/// A spatial frequency sample in cycles per degree.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CsfQuery {
    pub fx: f64,
    pub fy: f64,
}

impl CsfQuery {
    pub fn new(fx: f64, fy: f64) -> Self {
        CsfQuery { fx, fy }
    }

    /// A purely radial query `f`.
    pub fn radial(f: f64) -> Self {
        CsfQuery { fx: f, fy: 0.0 }
    }

    pub fn frequency(&self) -> f64 {
        self.fx.hypot(self.fy)
    }
}

/// `H(f) = 2.6 (0.192 + 0.114 f) exp(-(0.114 f)^1.1)`.
pub fn csf_eval(q: CsfQuery) -> Result<f64> {
    if !q.fx.is_finite() || !q.fy.is_finite() {
        return Err(Error::param("f", format!("non-finite frequency ({}, {})", q.fx, q.fy)));
    }
    sensitivity(q.frequency())
}

/// The model at radial frequency `f`.
pub fn sensitivity(f: f64) -> Result<f64> {
    if !f.is_finite() || f < 0.0 {
        return Err(Error::param("f", format!("frequency must be finite and ≥ 0, got {f}")));
    }
    Ok(2.6 * (0.192 + 0.114 * f) * (-(0.114 * f).powf(1.1)).exp())
}

/// Samples `0, step, 2·step, …` up to and including `max_f`.
pub fn csf_table(max_f: f64, step: f64) -> Result<Vec<(f64, f64)>> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::param("step", format!("must be positive, got {step}")));
    }
    if !(max_f >= 0.0) || !max_f.is_finite() {
        return Err(Error::param("max_f", format!("must be finite and ≥ 0, got {max_f}")));
    }
    // tolerate floating point drift in max_f / step
    let n = (max_f / step + 1e-9).floor() as usize;
    (0..=n)
        .map(|i| {
            let f = i as f64 * step;
            sensitivity(f).map(|h| (f, h))
        })
        .collect()
}

/// Grid-search maximum over `(0, max_f]`.
pub fn csf_peak(max_f: f64, step: f64) -> Result<(f64, f64)> {
    let table = csf_table(max_f, step)?;
    Ok(table
        .into_iter()
        .skip(1)
        .fold((0.0, f64::NEG_INFINITY), |best, (f, h)| if h > best.1 { (f, h) } else { best }))
}
