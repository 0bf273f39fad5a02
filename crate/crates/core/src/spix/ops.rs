//! Differentiable association operations. Q is N×9×H×W, per-pixel features
//! N×F×H×W and cell centers N×F×cells.

use std::sync::Arc;

use super::{GridSpec, NO_CELL};
use crate::autograd::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Denominator floor of the weighted cell means.
pub const AGGREGATE_FLOOR: f64 = 1e-8;

fn check_q<T: Scalar>(tape: &Tape<T>, q: Var, grid: &GridSpec, op: &'static str) -> Result<usize> {
    let [n, k, h, w] = tape.value(q).dims4(op)?;
    if k != 9 {
        return Err(Error::dim(op, format!("association map needs 9 channels, got {k}")));
    }
    if (h, w) != (grid.height, grid.width) {
        return Err(Error::dim(op, format!("map is {h}×{w}, grid is {}×{}", grid.height, grid.width)));
    }
    Ok(n)
}

struct MaskRule {
    table: Arc<Vec<[u32; 9]>>,
}

impl<T: Scalar> Backward<T> for MaskRule {
    fn name(&self) -> &'static str {
        "mask_assoc"
    }

    fn backward(&self, inputs: &[&Tensor<T>], out: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let q = inputs[0].data();
        let qp = out.data();
        let plane = self.table.len();
        let n = q.len() / (9 * plane);
        let mut dq = vec![T::zero(); q.len()];
        for b in 0..n {
            let base = b * 9 * plane;
            for (p, slots) in self.table.iter().enumerate() {
                let idx = |k: usize| base + k * plane + p;
                let mut s = T::zero();
                let mut dot = T::zero();
                for (k, &c) in slots.iter().enumerate() {
                    if c != NO_CELL {
                        s += q[idx(k)];
                        dot += g[idx(k)] * qp[idx(k)];
                    }
                }
                if s != T::zero() {
                    for (k, &c) in slots.iter().enumerate() {
                        if c != NO_CELL {
                            dq[idx(k)] = (g[idx(k)] - dot) / s;
                        }
                    }
                }
            }
        }
        vec![Some(dq)]
    }
}

struct AggregateRule {
    table: Arc<Vec<[u32; 9]>>,
    cells: usize,
}

impl<T: Scalar> Backward<T> for AggregateRule {
    fn name(&self) -> &'static str {
        "aggregate"
    }

    fn backward(&self, inputs: &[&Tensor<T>], out: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (q, f) = (inputs[0].data(), inputs[1].data());
        let centers = out.data();
        let plane = self.table.len();
        let n = q.len() / (9 * plane);
        let nf = f.len() / (n * plane);
        let cells = self.cells;
        let floor = T::from_f64(AGGREGATE_FLOOR);
        let mut dq = needs[0].then(|| vec![T::zero(); q.len()]);
        let mut df = needs[1].then(|| vec![T::zero(); f.len()]);
        let mut den = vec![T::zero(); cells];
        for b in 0..n {
            let qb = &q[b * 9 * plane..(b + 1) * 9 * plane];
            den.fill(T::zero());
            for (p, slots) in self.table.iter().enumerate() {
                for (k, &c) in slots.iter().enumerate() {
                    if c != NO_CELL {
                        den[c as usize] += qb[k * plane + p];
                    }
                }
            }
            // c = num / max(den, floor): dnum = g / den', dden = -Σ_f g·c / den' (zero below the floor)
            let cb = &centers[b * nf * cells..(b + 1) * nf * cells];
            let gb = &g[b * nf * cells..(b + 1) * nf * cells];
            let dnum: Vec<T> = (0..nf * cells).map(|i| gb[i] / den[i % cells].max(floor)).collect();
            let dden: Vec<T> = (0..cells)
                .map(|s| {
                    if den[s] > floor {
                        -(0..nf).map(|fi| gb[fi * cells + s] * cb[fi * cells + s]).sum::<T>() / den[s]
                    } else {
                        T::zero()
                    }
                })
                .collect();
            let fb = &f[b * nf * plane..(b + 1) * nf * plane];
            if let Some(dq) = dq.as_mut() {
                let dqb = &mut dq[b * 9 * plane..(b + 1) * 9 * plane];
                for (p, slots) in self.table.iter().enumerate() {
                    for (k, &c) in slots.iter().enumerate() {
                        if c != NO_CELL {
                            let s = c as usize;
                            let mut acc = dden[s];
                            for fi in 0..nf {
                                acc += dnum[fi * cells + s] * fb[fi * plane + p];
                            }
                            dqb[k * plane + p] = acc;
                        }
                    }
                }
            }
            if let Some(df) = df.as_mut() {
                let dfb = &mut df[b * nf * plane..(b + 1) * nf * plane];
                for (p, slots) in self.table.iter().enumerate() {
                    for (k, &c) in slots.iter().enumerate() {
                        if c != NO_CELL {
                            let w = qb[k * plane + p];
                            for fi in 0..nf {
                                dfb[fi * plane + p] += w * dnum[fi * cells + c as usize];
                            }
                        }
                    }
                }
            }
        }
        vec![dq, df]
    }
}

struct ReconstructRule {
    table: Arc<Vec<[u32; 9]>>,
    cells: usize,
}

impl<T: Scalar> Backward<T> for ReconstructRule {
    fn name(&self) -> &'static str {
        "reconstruct"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (q, c) = (inputs[0].data(), inputs[1].data());
        let plane = self.table.len();
        let cells = self.cells;
        let n = q.len() / (9 * plane);
        let nf = c.len() / (n * cells);
        let mut dq = needs[0].then(|| vec![T::zero(); q.len()]);
        let mut dc = needs[1].then(|| vec![T::zero(); c.len()]);
        for b in 0..n {
            let qb = &q[b * 9 * plane..(b + 1) * 9 * plane];
            let cb = &c[b * nf * cells..(b + 1) * nf * cells];
            let gb = &g[b * nf * plane..(b + 1) * nf * plane];
            for (p, slots) in self.table.iter().enumerate() {
                for (k, &s) in slots.iter().enumerate() {
                    if s == NO_CELL {
                        continue;
                    }
                    let s = s as usize;
                    if let Some(dq) = dq.as_mut() {
                        let mut acc = T::zero();
                        for fi in 0..nf {
                            acc += gb[fi * plane + p] * cb[fi * cells + s];
                        }
                        dq[b * 9 * plane + k * plane + p] = acc;
                    }
                    if let Some(dc) = dc.as_mut() {
                        let w = qb[k * plane + p];
                        for fi in 0..nf {
                            dc[b * nf * cells + fi * cells + s] += w * gb[fi * plane + p];
                        }
                    }
                }
            }
        }
        vec![dq, dc]
    }
}

impl<T: Scalar> Tape<T> {
    /// Zeroes slots outside the grid and renormalizes each pixel's
    /// distribution over the cells that exist.
    pub fn mask_assoc(&mut self, q: Var, grid: &GridSpec) -> Result<Var> {
        let n = check_q(self, q, grid, "mask_assoc")?;
        let table = Arc::new(grid.neighbor_table());
        let plane = table.len();
        let src = self.value(q).data();
        let mut out = vec![T::zero(); src.len()];
        for b in 0..n {
            let base = b * 9 * plane;
            for (p, slots) in table.iter().enumerate() {
                let s: T = (0..9).filter(|&k| slots[k] != NO_CELL).map(|k| src[base + k * plane + p]).sum();
                if s != T::zero() {
                    for k in (0..9).filter(|&k| slots[k] != NO_CELL) {
                        out[base + k * plane + p] = src[base + k * plane + p] / s;
                    }
                }
            }
        }
        let out = Tensor::new(self.shape(q), out)?;
        Ok(self.record(out, &[q], Box::new(MaskRule { table })))
    }

    /// Association-weighted mean feature of every cell.
    pub fn aggregate(&mut self, q: Var, feats: Var, grid: &GridSpec) -> Result<Var> {
        let n = check_q(self, q, grid, "aggregate")?;
        let [fn_, nf, h, w] = self.value(feats).dims4("aggregate")?;
        if fn_ != n || (h, w) != (grid.height, grid.width) {
            return Err(Error::dim(
                "aggregate",
                format!("features {:?} do not match map {:?}", self.shape(feats), self.shape(q)),
            ));
        }
        let table = Arc::new(grid.neighbor_table());
        let (plane, cells) = (table.len(), grid.cells());
        let floor = T::from_f64(AGGREGATE_FLOOR);
        let (qd, fd) = (self.value(q).data(), self.value(feats).data());
        let mut out = vec![T::zero(); n * nf * cells];
        let mut den = vec![T::zero(); cells];
        for b in 0..n {
            den.fill(T::zero());
            let qb = &qd[b * 9 * plane..(b + 1) * 9 * plane];
            let fb = &fd[b * nf * plane..(b + 1) * nf * plane];
            let ob = &mut out[b * nf * cells..(b + 1) * nf * cells];
            for (p, slots) in table.iter().enumerate() {
                for (k, &c) in slots.iter().enumerate() {
                    if c == NO_CELL {
                        continue;
                    }
                    let wq = qb[k * plane + p];
                    den[c as usize] += wq;
                    for fi in 0..nf {
                        ob[fi * cells + c as usize] += wq * fb[fi * plane + p];
                    }
                }
            }
            for (i, v) in ob.iter_mut().enumerate() {
                *v = *v / den[i % cells].max(floor);
            }
        }
        let out = Tensor::new(&[n, nf, cells], out)?;
        Ok(self.record(out, &[q, feats], Box::new(AggregateRule { table, cells })))
    }

    /// Per-pixel convex combination of the centers of its nine cells.
    pub fn reconstruct(&mut self, q: Var, centers: Var, grid: &GridSpec) -> Result<Var> {
        let n = check_q(self, q, grid, "reconstruct")?;
        let cshape = self.shape(centers).to_vec();
        if cshape.len() != 3 || cshape[0] != n || cshape[2] != grid.cells() {
            return Err(Error::dim(
                "reconstruct",
                format!("centers {cshape:?} do not match {n} images of {} cells", grid.cells()),
            ));
        }
        let nf = cshape[1];
        let table = Arc::new(grid.neighbor_table());
        let (plane, cells) = (table.len(), grid.cells());
        let (qd, cd) = (self.value(q).data(), self.value(centers).data());
        let mut out = vec![T::zero(); n * nf * plane];
        for b in 0..n {
            let qb = &qd[b * 9 * plane..(b + 1) * 9 * plane];
            let cb = &cd[b * nf * cells..(b + 1) * nf * cells];
            let ob = &mut out[b * nf * plane..(b + 1) * nf * plane];
            for (p, slots) in table.iter().enumerate() {
                for (k, &s) in slots.iter().enumerate() {
                    if s == NO_CELL {
                        continue;
                    }
                    let wq = qb[k * plane + p];
                    for fi in 0..nf {
                        ob[fi * plane + p] += wq * cb[fi * cells + s as usize];
                    }
                }
            }
        }
        let out = Tensor::new(&[n, nf, grid.height, grid.width], out)?;
        Ok(self.record(out, &[q, centers], Box::new(ReconstructRule { table, cells })))
    }
}
