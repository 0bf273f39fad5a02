//! Training objective: cross-entropy between boundary-aware targets and their
//! reconstruction through Q, plus a weighted position reconstruction term.

use serde::{Deserialize, Serialize};

use crate::autograd::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::spix::GridSpec;
use crate::tensor::{Scalar, Tensor};
use crate::vision::BalTarget;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the position term.
    pub m: f64,
    /// Sampling interval of the superpixel grid.
    pub s: usize,
    pub eps_log: f64,
    pub lr: f64,
    pub lr_decay_factor: f64,
    /// First iteration that uses the decayed rate.
    pub lr_decay_at: u64,
    pub batch: usize,
    pub crop: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            m: 0.003,
            s: 16,
            eps_log: 1e-12,
            lr: 8e-5,
            lr_decay_factor: 0.5,
            lr_decay_at: 8000,
            batch: 8,
            crop: 208,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.m >= 0.0) || !self.m.is_finite() {
            return Err(Error::param("m", format!("must be finite and ≥ 0, got {}", self.m)));
        }
        if self.s == 0 {
            return Err(Error::param("S", "must be ≥ 1"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::param("lr", format!("must be finite and ≥ 0, got {}", self.lr)));
        }
        if !(self.eps_log > 0.0) {
            return Err(Error::param("eps_log", "must be positive"));
        }
        if self.batch == 0 {
            return Err(Error::param("batch", "must be ≥ 1"));
        }
        if self.crop == 0 || !self.crop.is_multiple_of(16) {
            return Err(Error::param("crop", format!("must be a positive multiple of 16, got {}", self.crop)));
        }
        Ok(())
    }

    /// Learning rate used at `iteration` (0-based).
    pub fn lr_at(&self, iteration: u64) -> f64 {
        if iteration >= self.lr_decay_at {
            self.lr * self.lr_decay_factor
        } else {
            self.lr
        }
    }
}

/// Pixel coordinates normalized to [0, 1] per axis, N×2×H×W (x then y).
pub fn position_features<T: Scalar>(n: usize, height: usize, width: usize) -> Tensor<T> {
    let plane = height * width;
    let sx = 1.0 / width.saturating_sub(1).max(1) as f64;
    let sy = 1.0 / height.saturating_sub(1).max(1) as f64;
    let mut data = vec![T::zero(); n * 2 * plane];
    for b in 0..n {
        for p in 0..plane {
            data[b * 2 * plane + p] = T::from_f64((p % width) as f64 * sx);
            data[b * 2 * plane + plane + p] = T::from_f64((p / width) as f64 * sy);
        }
    }
    Tensor::new(&[n, 2, height, width], data).expect("consistent shape")
}

/// Dense N×F×H×W targets restricted to the channels any image in the batch
/// uses; channels outside every support are zero and do not affect the loss.
pub fn compact_targets<T: Scalar>(targets: &[BalTarget]) -> Result<(Tensor<T>, Vec<usize>)> {
    let first = targets.first().ok_or_else(|| Error::Usage("empty target batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut channels: Vec<usize> = Vec::new();
    for t in targets {
        if (t.height(), t.width()) != (h, w) {
            return Err(Error::dim("compact_targets", "targets of one batch must share extents"));
        }
        channels.extend(t.active_channels());
    }
    channels.sort_unstable();
    channels.dedup();
    let mut slot = vec![usize::MAX; first.channels()];
    for (i, &c) in channels.iter().enumerate() {
        slot[c] = i;
    }
    let (plane, nf) = (h * w, channels.len());
    let mut data = vec![T::zero(); targets.len() * nf * plane];
    for (b, t) in targets.iter().enumerate() {
        for p in 0..plane {
            for (c, v) in t.entries(p) {
                data[(b * nf + slot[c]) * plane + p] = T::from_f64(v);
            }
        }
    }
    Ok((Tensor::new(&[targets.len(), nf, h, w], data)?, channels))
}

/// `-(1/count) Σ t · ln(max(pred, eps))` over every element.
struct CrossEntropyRule {
    eps: f64,
}

impl<T: Scalar> Backward<T> for CrossEntropyRule {
    fn name(&self) -> &'static str {
        "cross_entropy_mean"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (pred, target) = (inputs[0].data(), inputs[1].data());
        let [n, _, h, w] = inputs[0].dims4("cross_entropy_mean").expect("checked in forward");
        let scale = g[0] / T::from_f64((n * h * w) as f64);
        let eps = T::from_f64(self.eps);
        let dp = needs[0].then(|| {
            pred.iter().zip(target).map(|(&p, &t)| if p > eps { -t / p * scale } else { T::zero() }).collect()
        });
        let dt = needs[1].then(|| pred.iter().map(|&p| -p.max(eps).ln() * scale).collect());
        vec![dp, dt]
    }
}

/// `Σ_{n,p} ‖a(n,·,p) − b(n,·,p)‖₂` (zero subgradient where the norm vanishes).
struct L2SumRule;

impl<T: Scalar> Backward<T> for L2SumRule {
    fn name(&self) -> &'static str {
        "l2_distance_sum"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let [n, c, h, w] = inputs[0].dims4("l2_distance_sum").expect("checked in forward");
        let plane = h * w;
        let mut da = vec![T::zero(); a.len()];
        for bi in 0..n {
            for p in 0..plane {
                let idx = |ci: usize| (bi * c + ci) * plane + p;
                let norm = (0..c).map(|ci| (a[idx(ci)] - b[idx(ci)]).powi(2)).sum::<T>().sqrt();
                if norm > T::zero() {
                    for ci in 0..c {
                        da[idx(ci)] = g[0] * (a[idx(ci)] - b[idx(ci)]) / norm;
                    }
                }
            }
        }
        let db = needs[1].then(|| da.iter().map(|&v| -v).collect());
        vec![needs[0].then_some(da), db]
    }
}

impl<T: Scalar> Tape<T> {
    /// Mean over pixels of the per-pixel cross-entropy along channels.
    pub fn cross_entropy_mean(&mut self, pred: Var, target: Var, eps: f64) -> Result<Var> {
        let [n, _, h, w] = self.value(pred).dims4("cross_entropy_mean")?;
        if self.shape(pred) != self.shape(target) {
            return Err(Error::dim(
                "cross_entropy_mean",
                format!("{:?} vs {:?}", self.shape(pred), self.shape(target)),
            ));
        }
        let e = T::from_f64(eps);
        let total: T = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(&p, &t)| -t * p.max(e).ln())
            .sum();
        let out = Tensor::scalar(total / T::from_f64((n * h * w) as f64));
        Ok(self.record(out, &[pred, target], Box::new(CrossEntropyRule { eps })))
    }

    /// Sum over pixels of the Euclidean distance between channel vectors.
    pub fn l2_distance_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(a).dims4("l2_distance_sum")?;
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("l2_distance_sum", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let plane = h * w;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut total = T::zero();
        for bi in 0..n {
            for p in 0..plane {
                let idx = |ci: usize| (bi * c + ci) * plane + p;
                total += (0..c).map(|ci| (ad[idx(ci)] - bd[idx(ci)]).powi(2)).sum::<T>().sqrt();
            }
        }
        Ok(self.record(Tensor::scalar(total), &[a, b], Box::new(L2SumRule)))
    }
}

/// Scalar nodes of one loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub ce: Var,
    pub pos: Var,
}

/// `total = mean_p CE(l'(p), l(p)) + (m/S) Σ_p ‖p − p'‖₂` with the position
/// sum taken per image and averaged over the batch. `target` is N×F×H×W,
/// `pos` N×2×H×W; both are reconstructed through the border-masked Q.
pub fn superpixel_loss<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    target: Var,
    pos: Var,
    grid: &GridSpec,
    cfg: &LossConfig,
) -> Result<LossParts> {
    if cfg.s != grid.s {
        return Err(Error::param("S", format!("loss uses S={}, grid uses S={}", cfg.s, grid.s)));
    }
    let n = tape.shape(q)[0];
    let qm = tape.mask_assoc(q, grid)?;
    let centers = tape.aggregate(qm, target, grid)?;
    let recon = tape.reconstruct(qm, centers, grid)?;
    let ce = tape.cross_entropy_mean(recon, target, cfg.eps_log)?;
    let pc = tape.aggregate(qm, pos, grid)?;
    let prec = tape.reconstruct(qm, pc, grid)?;
    let dist = tape.l2_distance_sum(pos, prec)?;
    let pos_part = tape.scale(dist, T::from_f64(cfg.m / cfg.s as f64 / n as f64));
    let total = tape.add(ce, pos_part)?;
    let value = tape.value(total).data()[0];
    if !value.is_finite() {
        return Err(non_finite_block(tape.value(q), tape.value(recon), tape.value(target), grid, cfg.eps_log));
    }
    Ok(LossParts { total, ce, pos: pos_part })
}

/// Names the grid block where the loss first fails to be finite: a bad
/// association value if there is one, else the first bad per-pixel term.
fn non_finite_block<T: Scalar>(q: &Tensor<T>, recon: &Tensor<T>, target: &Tensor<T>, grid: &GridSpec, eps: f64) -> Error {
    let [n, c, h, w] = recon.dims4("superpixel_loss").expect("4-d");
    let plane = h * w;
    let block = |b: usize, p: usize| {
        let (x, y) = (p % w, p / w);
        Error::NonFinite {
            context: "superpixel_loss".into(),
            detail: format!("image {b}, pixel block ({}, {}) at ({x}, {y})", y / grid.s, x / grid.s),
        }
    };
    if let Some(i) = q.data().iter().position(|v| !v.is_finite()) {
        return block(i / (9 * plane), i % plane);
    }
    let e = T::from_f64(eps);
    for b in 0..n {
        for p in 0..plane {
            let v: T = (0..c)
                .map(|ci| {
                    let i = (b * c + ci) * plane + p;
                    -target.data()[i] * recon.data()[i].max(e).ln()
                })
                .sum();
            if !v.is_finite() {
                return block(b, p);
            }
        }
    }
    Error::NonFinite { context: "superpixel_loss".into(), detail: "position term".into() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, GradCheckOptions};
    use crate::maps::LabelMap;
    use crate::spix::{init_grid, OWNER_SLOT};
    use crate::vision::{bal_encode, bal_entropy_map, distance_field, BalConfig};
    use proptest::prelude::*;

    fn owner_delta(n: usize, h: usize, w: usize) -> Tensor<f64> {
        let plane = h * w;
        let mut d = vec![0.0; n * 9 * plane];
        for b in 0..n {
            d[b * 9 * plane + OWNER_SLOT * plane..b * 9 * plane + (OWNER_SLOT + 1) * plane].fill(1.0);
        }
        Tensor::new(&[n, 9, h, w], d).unwrap()
    }

    fn random_q(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut s = seed | 1;
        let plane = h * w;
        let raw: Vec<f64> = (0..9 * plane)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s % 1000) as f64 / 250.0
            })
            .collect();
        let mut d = vec![0.0; 9 * plane];
        for p in 0..plane {
            let z: f64 = (0..9).map(|k| raw[k * plane + p].exp()).sum();
            for k in 0..9 {
                d[k * plane + p] = raw[k * plane + p].exp() / z;
            }
        }
        Tensor::new(&[1, 9, h, w], d).unwrap()
    }

    fn targets(labels: &LabelMap) -> BalTarget {
        let cfg = BalConfig::default();
        let field = distance_field(labels, cfg.connectivity).unwrap();
        bal_encode(labels, &field, &cfg).unwrap()
    }

    fn cfg_for(s: usize, m: f64) -> LossConfig {
        LossConfig { s, m, ..LossConfig::default() }
    }

    fn eval(q: Tensor<f64>, t: &BalTarget, grid: &GridSpec, cfg: &LossConfig, shift: f64) -> (f64, f64, f64) {
        let mut tape = Tape::<f64>::new();
        let (tt, _) = compact_targets::<f64>(std::slice::from_ref(t)).unwrap();
        let q = tape.constant(q);
        let tv = tape.constant(tt);
        let pos = position_features::<f64>(1, grid.height, grid.width).map(|v| v + shift);
        let pv = tape.constant(pos);
        let parts = superpixel_loss(&mut tape, q, tv, pv, grid, cfg).unwrap();
        (
            tape.value(parts.total).data()[0],
            tape.value(parts.ce).data()[0],
            tape.value(parts.pos).data()[0],
        )
    }

    #[test]
    fn owner_delta_on_interior_targets_hits_entropy_floor() {
        let grid = init_grid(32, 32, 16).unwrap();
        let labels = LabelMap::new(32, 32, vec![3; 1024]).unwrap();
        let t = targets(&labels);
        let (total, ce, _) = eval(owner_delta(1, 32, 32), &t, &grid, &cfg_for(16, 0.0), 0.0);
        assert!((total - ce).abs() < 1e-15);
        assert!((ce - 0.0503).abs() < 5e-4, "{ce}");
    }

    #[test]
    fn uniform_targets_give_entropy_for_any_q() {
        let grid = init_grid(16, 32, 8).unwrap();
        let labels = LabelMap::new(32, 16, vec![1; 512]).unwrap();
        let t = targets(&labels);
        let mean_entropy = bal_entropy_map(&t).iter().sum::<f64>() / 512.0;
        let (_, ce, _) = eval(random_q(16, 32, 5), &t, &grid, &cfg_for(8, 0.0), 0.0);
        assert!((ce - mean_entropy).abs() < 1e-9);
    }

    #[test]
    fn position_term_vanishes_for_exact_reconstruction() {
        // 1-pixel cells: centers are the pixel coordinates themselves
        let grid = init_grid(4, 4, 1).unwrap();
        let labels = LabelMap::new(4, 4, vec![0; 16]).unwrap();
        let (_, _, pos) = eval(owner_delta(1, 4, 4), &targets(&labels), &grid, &cfg_for(1, 0.5), 0.0);
        assert!(pos.abs() < 1e-15);
    }

    #[test]
    fn translation_leaves_position_term_unchanged() {
        let grid = init_grid(16, 16, 4).unwrap();
        let labels = LabelMap::from_fn(16, 16, |x, _| u32::from(x > 6)).unwrap();
        let t = targets(&labels);
        let q = random_q(16, 16, 9);
        let (_, _, a) = eval(q.clone(), &t, &grid, &cfg_for(4, 0.003), 0.0);
        let (_, _, b) = eval(q, &t, &grid, &cfg_for(4, 0.003), 3.25);
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let grid = init_grid(16, 16, 4).unwrap();
        let labels = LabelMap::from_fn(16, 16, |x, y| u32::from(x + y > 14) + u32::from(y > 11)).unwrap();
        let t = targets(&labels);
        let (tt, _) = compact_targets::<f64>(std::slice::from_ref(&t)).unwrap();
        let cfg = cfg_for(4, 0.5);
        let opts = GradCheckOptions { max_per_input: Some(400), ..GradCheckOptions::default() };
        let report = check_gradients(&[random_q(16, 16, 2)], opts, |tape, v| {
            let tv = tape.constant(tt.clone());
            let pv = tape.constant(position_features(1, 16, 16));
            Ok(superpixel_loss(tape, v[0], tv, pv, &grid, &cfg)?.total)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-3, "{report:?}");
    }

    #[test]
    fn schedule_steps_once() {
        let cfg = LossConfig::default();
        assert_eq!(cfg.lr_at(7999), 8e-5);
        assert_eq!(cfg.lr_at(8000), 4e-5);
        assert_eq!(cfg.lr_at(20000), 4e-5);
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(LossConfig { m: -1.0, ..LossConfig::default() }.validate().is_err());
        assert!(LossConfig { crop: 200, ..LossConfig::default() }.validate().is_err());
        assert!(LossConfig::default().validate().is_ok());
    }

    #[test]
    fn non_finite_loss_names_block() {
        let grid = init_grid(8, 8, 4).unwrap();
        let mut tape = Tape::<f64>::new();
        let mut qv = owner_delta(1, 8, 8);
        qv.data_mut()[4 * 64 + 6 * 8 + 5] = f64::NAN;
        let q = tape.constant(qv);
        let t = tape.constant(Tensor::full(&[1, 1, 8, 8], 1.0));
        let p = tape.constant(position_features(1, 8, 8));
        let err = superpixel_loss(&mut tape, q, t, p, &grid, &cfg_for(4, 0.0)).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert!(err.to_string().contains("block (1, 1)"), "{err}");
    }

    proptest! {
        #[test]
        fn ce_is_at_least_target_entropy(seed in any::<u64>(), cut in 2usize..14) {
            let grid = init_grid(16, 16, 4).unwrap();
            let labels = LabelMap::from_fn(16, 16, |x, y| u32::from(x + y / 2 > cut)).unwrap();
            let t = targets(&labels);
            let floor = bal_entropy_map(&t).iter().sum::<f64>() / 256.0;
            let (_, ce, _) = eval(random_q(16, 16, seed), &t, &grid, &cfg_for(4, 0.0), 0.0);
            prop_assert!(ce >= floor - 1e-12);
        }
    }
}
