use super::{same_shape, Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

struct AddRule;

impl<T: Scalar> Backward<T> for AddRule {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.to_vec())]
    }
}

struct SubRule;

impl<T: Scalar> Backward<T> for SubRule {
    fn name(&self) -> &'static str {
        "sub"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![
            needs[0].then(|| g.to_vec()),
            needs[1].then(|| g.iter().map(|&x| -x).collect()),
        ]
    }
}

struct MulRule;

impl<T: Scalar> Backward<T> for MulRule {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        vec![
            needs[0].then(|| g.iter().zip(b).map(|(&g, &b)| g * b).collect()),
            needs[1].then(|| g.iter().zip(a).map(|(&g, &a)| g * a).collect()),
        ]
    }
}

struct ChannelBiasRule;

impl<T: Scalar> Backward<T> for ChannelBiasRule {
    fn name(&self) -> &'static str {
        "channel_bias"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let c = inputs[1].numel();
        let plane = inputs[0].shape()[2] * inputs[0].shape()[3];
        let db = needs[1].then(|| {
            let mut db = vec![T::zero(); c];
            for (i, chunk) in g.chunks(plane).enumerate() {
                db[i % c] += chunk.iter().copied().sum::<T>();
            }
            db
        });
        vec![needs[0].then(|| g.to_vec()), db]
    }
}

struct ScaleRule<T>(T);

impl<T: Scalar> Backward<T> for ScaleRule<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.iter().map(|&g| g * self.0).collect())]
    }
}

struct LeakyReluRule<T>(T);

impl<T: Scalar> Backward<T> for LeakyReluRule<T> {
    fn name(&self) -> &'static str {
        "leaky_relu"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let x = inputs[0].data();
        let slope = self.0;
        vec![Some(
            g.iter()
                .zip(x)
                .map(|(&g, &x)| if x > T::zero() { g } else { g * slope })
                .collect(),
        )]
    }
}

struct SumRule;

impl<T: Scalar> Backward<T> for SumRule {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(vec![g[0]; inputs[0].numel()])]
    }
}

struct MeanRule;

impl<T: Scalar> Backward<T> for MeanRule {
    fn name(&self) -> &'static str {
        "mean"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let n = inputs[0].numel();
        vec![Some(vec![g[0] / T::from_f64(n as f64); n])]
    }
}

/// Channel-axis concatenation of N×Cᵢ×H×W tensors.
struct ConcatRule {
    channels: Vec<usize>,
}

impl<T: Scalar> Backward<T> for ConcatRule {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, inputs: &[&Tensor<T>], out: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let [n, c_total, h, w] = [out.shape()[0], out.shape()[1], out.shape()[2], out.shape()[3]];
        let plane = h * w;
        let mut offset = 0;
        let mut grads = Vec::with_capacity(inputs.len());
        for (i, &c) in self.channels.iter().enumerate() {
            if needs[i] {
                let mut gi = Vec::with_capacity(n * c * plane);
                for b in 0..n {
                    let start = (b * c_total + offset) * plane;
                    gi.extend_from_slice(&g[start..start + c * plane]);
                }
                grads.push(Some(gi));
            } else {
                grads.push(None);
            }
            offset += c;
        }
        grads
    }
}

/// Softmax over the channel axis of an N×C×H×W tensor.
struct SoftmaxRule;

impl<T: Scalar> Backward<T> for SoftmaxRule {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn backward(&self, _: &[&Tensor<T>], out: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let [n, c, h, w] = [out.shape()[0], out.shape()[1], out.shape()[2], out.shape()[3]];
        let plane = h * w;
        let y = out.data();
        let mut dx = vec![T::zero(); y.len()];
        for b in 0..n {
            let base = b * c * plane;
            for p in 0..plane {
                let mut dot = T::zero();
                for k in 0..c {
                    let i = base + k * plane + p;
                    dot += g[i] * y[i];
                }
                for k in 0..c {
                    let i = base + k * plane + p;
                    dx[i] = y[i] * (g[i] - dot);
                }
            }
        }
        vec![Some(dx)]
    }
}

/// Bilinear ×2 upsampling with half-pixel centers and edge clamping.
struct Upsample2xRule;

/// Source taps for output index `o` along an axis of input length `n`.
fn bilinear_taps(o: usize, n: usize) -> (usize, usize, f64) {
    let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, src - i0 as f64)
}

impl<T: Scalar> Backward<T> for Upsample2xRule {
    fn name(&self) -> &'static str {
        "upsample_bilinear2x"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let x = inputs[0];
        let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let (ho, wo) = (2 * h, 2 * w);
        let mut dx = vec![T::zero(); x.numel()];
        for nc in 0..n * c {
            let src = &mut dx[nc * h * w..(nc + 1) * h * w];
            let go = &g[nc * ho * wo..(nc + 1) * ho * wo];
            for oy in 0..ho {
                let (y0, y1, fy) = bilinear_taps(oy, h);
                let (fy, gy) = (T::from_f64(fy), T::from_f64(1.0 - fy));
                for ox in 0..wo {
                    let (x0, x1, fx) = bilinear_taps(ox, w);
                    let (fx, gx) = (T::from_f64(fx), T::from_f64(1.0 - fx));
                    let v = go[oy * wo + ox];
                    src[y0 * w + x0] += v * gy * gx;
                    src[y0 * w + x1] += v * gy * fx;
                    src[y1 * w + x0] += v * fy * gx;
                    src[y1 * w + x1] += v * fy * fx;
                }
            }
        }
        vec![Some(dx)]
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("shapes checked by caller")
}

impl<T: Scalar> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.record(out, &[a, b], Box::new(AddRule)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "sub", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.record(out, &[a, b], Box::new(SubRule)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mul", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.record(out, &[a, b], Box::new(MulRule)))
    }

    /// Adds `b[c]` to every element of channel `c` of an N×C×H×W tensor.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let [_, c, h, w] = self.value(x).dims4("channel_bias")?;
        if self.shape(b) != [c] {
            return Err(Error::dim("channel_bias", format!("bias shape {:?}, expected [{c}]", self.shape(b))));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        out.requires_grad = false;
        out.grad = None;
        for (i, chunk) in out.data_mut().chunks_mut(h * w).enumerate() {
            let bv = bias[i % c];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        Ok(self.record(out, &[x, b], Box::new(ChannelBiasRule)))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.record(out, &[a], Box::new(ScaleRule(factor)))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { v * slope });
        self.record(out, &[x], Box::new(LeakyReluRule(slope)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.record(out, &[x], Box::new(SumRule))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / T::from_f64(t.numel() as f64));
        self.record(out, &[x], Box::new(MeanRule))
    }

    /// Concatenates 4-d tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::dim("concat", "no inputs"));
        };
        let [n, _, h, w] = self.value(first).dims4("concat")?;
        let mut channels = Vec::with_capacity(parts.len());
        for &p in parts {
            let [pn, pc, ph, pw] = self.value(p).dims4("concat")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::dim(
                    "concat",
                    format!("{:?} vs {:?}", self.shape(first), self.shape(p)),
                ));
            }
            channels.push(pc);
        }
        let c_total: usize = channels.iter().sum();
        let plane = h * w;
        let mut data = Vec::with_capacity(n * c_total * plane);
        for b in 0..n {
            for (&p, &c) in parts.iter().zip(&channels) {
                let src = self.value(p).data();
                data.extend_from_slice(&src[b * c * plane..(b + 1) * c * plane]);
            }
        }
        let out = Tensor::new(&[n, c_total, h, w], data)?;
        Ok(self.record(out, parts, Box::new(ConcatRule { channels })))
    }

    /// Softmax over the channel axis of an N×C×H×W tensor.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let [n, c, h, w] = t.dims4("softmax")?;
        let out = Tensor::new(t.shape(), softmax_channels_raw(t.data(), n, c, h * w))?;
        Ok(self.record(out, &[x], Box::new(SoftmaxRule)))
    }

    /// Bilinear ×2 spatial upsampling.
    pub fn upsample_bilinear2x(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let [n, c, h, w] = t.dims4("upsample")?;
        let (ho, wo) = (2 * h, 2 * w);
        let mut data = vec![T::zero(); n * c * ho * wo];
        for nc in 0..n * c {
            let src = &t.data()[nc * h * w..(nc + 1) * h * w];
            let dst = &mut data[nc * ho * wo..(nc + 1) * ho * wo];
            for oy in 0..ho {
                let (y0, y1, fy) = bilinear_taps(oy, h);
                let (fy, gy) = (T::from_f64(fy), T::from_f64(1.0 - fy));
                for ox in 0..wo {
                    let (x0, x1, fx) = bilinear_taps(ox, w);
                    let (fx, gx) = (T::from_f64(fx), T::from_f64(1.0 - fx));
                    dst[oy * wo + ox] = gy * (gx * src[y0 * w + x0] + fx * src[y0 * w + x1])
                        + fy * (gx * src[y1 * w + x0] + fx * src[y1 * w + x1]);
                }
            }
        }
        let out = Tensor::new(&[n, c, ho, wo], data)?;
        Ok(self.record(out, &[x], Box::new(Upsample2xRule)))
    }
}

/// Numerically stable channel softmax on raw N×C×(H·W) data.
pub(crate) fn softmax_channels_raw<T: Scalar>(x: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        let base = b * c * plane;
        for p in 0..plane {
            let mut max = T::neg_infinity();
            for k in 0..c {
                max = max.max(x[base + k * plane + p]);
            }
            let mut total = T::zero();
            for k in 0..c {
                let e = (x[base + k * plane + p] - max).exp();
                out[base + k * plane + p] = e;
                total += e;
            }
            for k in 0..c {
                let i = base + k * plane + p;
                out[i] = out[i] / total;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiply_by_ones_is_identity() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_f64(&[1, 2, 2, 2], &[1., -2., 3., 0.5, 7., 8., -9., 0.]).unwrap());
        let ones = tape.constant(Tensor::ones(&[1, 2, 2, 2]));
        let y = tape.mul(x, ones).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 9, 1, 1]));
        let y = tape.softmax_channels(x).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 1.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn concat_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(&[1, 16, 5, 7]));
        let b = tape.constant(Tensor::ones(&[1, 32, 5, 7]));
        let c = tape.concat_channels(&[a, b]).unwrap();
        assert_eq!(tape.shape(c), &[1, 48, 5, 7]);
        assert_eq!(tape.value(c).at4(0, 15, 4, 6), 0.0);
        assert_eq!(tape.value(c).at4(0, 16, 0, 0), 1.0);
    }

    #[test]
    fn elementwise_shape_mismatch() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(tape.add(a, b), Err(Error::Dimension { .. })));
        assert!(matches!(tape.mul(a, b), Err(Error::Dimension { .. })));
        let c = tape.constant(Tensor::zeros(&[1, 2, 3, 3]));
        let d = tape.constant(Tensor::zeros(&[1, 2, 3, 4]));
        assert!(matches!(tape.concat_channels(&[c, d]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn upsample_constant_stays_constant() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[1, 1, 3, 2], 2.5));
        let y = tape.upsample_bilinear2x(x).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 6, 4]);
        assert!(tape.value(y).data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn leaky_relu_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[3], &[-2.0, 0.0, 3.0]).unwrap());
        let y = tape.leaky_relu(x, 0.1);
        assert_eq!(tape.value(y).data(), &[-0.2, 0.0, 3.0]);
    }
}
