use super::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// How a batch-norm layer obtains its statistics.
#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a, T> {
    /// Normalize by the statistics of the current batch.
    Train,
    /// Normalize by stored running statistics.
    Eval { mean: &'a [T], var: &'a [T] },
}

/// Per-channel statistics of a training-mode batch; `var` is unbiased.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

struct BatchNormRule<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    /// Whether the statistics depend on the input (training mode).
    batch_stats: bool,
    channels: usize,
    plane: usize,
    batch: usize,
}

impl<T: Scalar> Backward<T> for BatchNormRule<T> {
    fn name(&self) -> &'static str {
        "batch_norm2d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let gamma = inputs[1].data();
        let (c_n, plane, n) = (self.channels, self.plane, self.batch);
        let count = T::from_f64((n * plane) as f64);
        let mut dgamma = vec![T::zero(); c_n];
        let mut dbeta = vec![T::zero(); c_n];
        for b in 0..n {
            for c in 0..c_n {
                let base = (b * c_n + c) * plane;
                for i in base..base + plane {
                    dgamma[c] += g[i] * self.xhat[i];
                    dbeta[c] += g[i];
                }
            }
        }
        let dx = needs[0].then(|| {
            let mut dx = vec![T::zero(); g.len()];
            for c in 0..c_n {
                let scale = gamma[c] * self.inv_std[c];
                for b in 0..n {
                    let base = (b * c_n + c) * plane;
                    for i in base..base + plane {
                        dx[i] = if self.batch_stats {
                            scale * (g[i] - dbeta[c] / count - self.xhat[i] * dgamma[c] / count)
                        } else {
                            scale * g[i]
                        };
                    }
                }
            }
            dx
        });
        vec![dx, needs[1].then_some(dgamma), needs[2].then_some(dbeta)]
    }
}

impl<T: Scalar> Tape<T> {
    /// Per-channel batch normalization of an N×C×H×W tensor.
    ///
    /// In training mode the returned statistics let the caller update its
    /// running estimates.
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        mode: BatchNormMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        if !(eps > 0.0) {
            return Err(Error::param("eps", format!("must be positive, got {eps}")));
        }
        let [n, c_n, h, w] = self.value(x).dims4("batch_norm2d")?;
        if self.shape(gamma) != [c_n] || self.shape(beta) != [c_n] {
            return Err(Error::dim("batch_norm2d", format!("affine parameters must have {c_n} entries")));
        }
        let plane = h * w;
        let count = n * plane;
        let xd = self.value(x).data();
        let eps_t = T::from_f64(eps);

        let (mean, var, stats) = match mode {
            BatchNormMode::Train => {
                if count < 2 {
                    return Err(Error::geometry(
                        "batch_norm2d",
                        format!("training mode needs at least 2 values per channel, got {count}"),
                    ));
                }
                let cnt = T::from_f64(count as f64);
                let mut mean = vec![T::zero(); c_n];
                let mut var = vec![T::zero(); c_n];
                for c in 0..c_n {
                    let mut s = T::zero();
                    for b in 0..n {
                        let base = (b * c_n + c) * plane;
                        s = xd[base..base + plane].iter().fold(s, |a, &v| a + v);
                    }
                    mean[c] = s / cnt;
                    let mut sq = T::zero();
                    for b in 0..n {
                        let base = (b * c_n + c) * plane;
                        sq = xd[base..base + plane].iter().fold(sq, |a, &v| a + (v - mean[c]) * (v - mean[c]));
                    }
                    var[c] = sq / cnt;
                }
                let unbiased = T::from_f64(count as f64 / (count - 1) as f64);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.iter().map(|&v| v * unbiased).collect(),
                };
                (mean, var, Some(stats))
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.len() != c_n || var.len() != c_n {
                    return Err(Error::dim("batch_norm2d", "running statistics have the wrong length"));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };

        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..n {
            for c in 0..c_n {
                let base = (b * c_n + c) * plane;
                for i in base..base + plane {
                    xhat[i] = (xd[i] - mean[c]) * inv_std[c];
                    out[i] = gd[c] * xhat[i] + bd[c];
                }
            }
        }
        let out = Tensor::new(self.shape(x), out)?;
        let rule = BatchNormRule {
            xhat,
            inv_std,
            batch_stats: stats.is_some(),
            channels: c_n,
            plane,
            batch: n,
        };
        Ok((self.record(out, &[x, gamma, beta], Box::new(rule)), stats))
    }
}
