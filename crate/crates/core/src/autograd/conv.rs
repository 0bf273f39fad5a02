//! Convolution and transposed convolution through im2col + GEMM.
//!
//! Both directions share one geometry: a "large" plane of extent `h×w` and a
//! "small" plane of extent `ho×wo` with `ho = (h + 2p - k)/s + 1`. A forward
//! convolution gathers from the large plane into columns (im2col); a
//! transposed convolution scatters columns into the large plane (col2im).

use super::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Index into the large plane for column position (ky, kx, oy, ox), if in bounds.
    #[inline]
    fn source(&self, ky: usize, kx: usize, oy: usize, ox: usize) -> Option<usize> {
        let y = (oy * self.stride + ky) as isize - self.padding as isize;
        let x = (ox * self.stride + kx) as isize - self.padding as isize;
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            None
        } else {
            Some(y as usize * self.w + x as usize)
        }
    }

    fn im2col<T: Scalar>(&self, plane: &[T], cols: &mut [T]) {
        let n_cols = self.col_cols();
        let hw = self.h * self.w;
        for c in 0..self.channels {
            let src = &plane[c * hw..(c + 1) * hw];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * n_cols..(row + 1) * n_cols];
                    for oy in 0..self.ho {
                        for ox in 0..self.wo {
                            dst[oy * self.wo + ox] = match self.source(ky, kx, oy, ox) {
                                Some(i) => src[i],
                                None => T::zero(),
                            };
                        }
                    }
                }
            }
        }
    }

    /// Accumulates columns back into the large plane.
    fn col2im<T: Scalar>(&self, cols: &[T], plane: &mut [T]) {
        let n_cols = self.col_cols();
        let hw = self.h * self.w;
        for c in 0..self.channels {
            let dst = &mut plane[c * hw..(c + 1) * hw];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &cols[row * n_cols..(row + 1) * n_cols];
                    for oy in 0..self.ho {
                        for ox in 0..self.wo {
                            if let Some(i) = self.source(ky, kx, oy, ox) {
                                dst[i] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Output extent of a convolution, or `None` when non-positive.
pub fn conv2d_output_extent(size: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    (padded >= k && stride > 0).then(|| (padded - k) / stride + 1)
}

/// Output extent of a transposed convolution, or `None` when non-positive.
pub fn conv_transpose2d_output_extent(size: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let full = (size.checked_sub(1)?) * stride + k;
    full.checked_sub(2 * padding).filter(|&e| e > 0)
}

struct Conv2dRule {
    geom: Geometry,
    out_channels: usize,
    batch: usize,
    has_bias: bool,
}

impl<T: Scalar> Backward<T> for Conv2dRule {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let geom = self.geom;
        let (x, weight) = (inputs[0], inputs[1]);
        let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
        let in_plane = geom.channels * geom.h * geom.w;
        let out_plane = self.out_channels * cols_n;

        let mut dx = needs[0].then(|| vec![T::zero(); x.numel()]);
        let mut dw = needs[1].then(|| vec![T::zero(); weight.numel()]);
        let mut cols = vec![T::zero(); rows * cols_n];
        let mut dcols = vec![T::zero(); rows * cols_n];
        for b in 0..self.batch {
            let gb = &g[b * out_plane..(b + 1) * out_plane];
            if let Some(dw) = dw.as_mut() {
                geom.im2col(&x.data()[b * in_plane..(b + 1) * in_plane], &mut cols);
                // dW (Cout×rows) += gout (Cout×cols) · colsᵀ
                T::gemm(
                    self.out_channels,
                    cols_n,
                    rows,
                    gb,
                    (cols_n as isize, 1),
                    &cols,
                    (1, cols_n as isize),
                    T::one(),
                    dw,
                );
            }
            if let Some(dx) = dx.as_mut() {
                // dcols (rows×cols) = Wᵀ (rows×Cout) · gout
                T::gemm(
                    rows,
                    self.out_channels,
                    cols_n,
                    weight.data(),
                    (1, rows as isize),
                    gb,
                    (cols_n as isize, 1),
                    T::zero(),
                    &mut dcols,
                );
                geom.col2im(&dcols, &mut dx[b * in_plane..(b + 1) * in_plane]);
            }
        }
        let db = (self.has_bias && needs.get(2).copied().unwrap_or(false)).then(|| {
            let mut db = vec![T::zero(); self.out_channels];
            for b in 0..self.batch {
                for (co, acc) in db.iter_mut().enumerate() {
                    let start = b * out_plane + co * cols_n;
                    *acc = g[start..start + cols_n].iter().fold(*acc, |s, &v| s + v);
                }
            }
            db
        });
        let mut grads = vec![dx, dw];
        if self.has_bias {
            grads.push(db);
        }
        grads
    }
}

struct ConvTranspose2dRule {
    geom: Geometry,
    in_channels: usize,
    batch: usize,
}

impl<T: Scalar> Backward<T> for ConvTranspose2dRule {
    fn name(&self) -> &'static str {
        "conv_transpose2d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let geom = self.geom;
        let (x, weight) = (inputs[0], inputs[1]);
        let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
        let out_plane = geom.channels * geom.h * geom.w;
        let in_plane = self.in_channels * cols_n;

        let mut dx = needs[0].then(|| vec![T::zero(); x.numel()]);
        let mut dw = needs[1].then(|| vec![T::zero(); weight.numel()]);
        let mut gcols = vec![T::zero(); rows * cols_n];
        for b in 0..self.batch {
            geom.im2col(&g[b * out_plane..(b + 1) * out_plane], &mut gcols);
            if let Some(dx) = dx.as_mut() {
                // dx (Cin×cols) = W (Cin×rows) · gcols
                T::gemm(
                    self.in_channels,
                    rows,
                    cols_n,
                    weight.data(),
                    (rows as isize, 1),
                    &gcols,
                    (cols_n as isize, 1),
                    T::zero(),
                    &mut dx[b * in_plane..(b + 1) * in_plane],
                );
            }
            if let Some(dw) = dw.as_mut() {
                // dW (Cin×rows) += x (Cin×cols) · gcolsᵀ
                T::gemm(
                    self.in_channels,
                    cols_n,
                    rows,
                    &x.data()[b * in_plane..(b + 1) * in_plane],
                    (cols_n as isize, 1),
                    &gcols,
                    (1, cols_n as isize),
                    T::one(),
                    dw,
                );
            }
        }
        vec![dx, dw]
    }
}

impl<T: Scalar> Tape<T> {
    /// 2-d cross-correlation. `weight` is Cout×Cin×k×k, `bias` has Cout entries.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let [n, cin, h, w] = self.value(input).dims4("conv2d")?;
        let [cout, wcin, k, k2] = self.value(weight).dims4("conv2d")?;
        if wcin != cin {
            return Err(Error::dim(
                "conv2d",
                format!("input has {cin} channels, weight expects {wcin}"),
            ));
        }
        if k != k2 || k % 2 == 0 {
            return Err(Error::geometry("conv2d", format!("kernel must be square and odd, got {k}×{k2}")));
        }
        if stride == 0 {
            return Err(Error::geometry("conv2d", "stride must be at least 1"));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(Error::dim("conv2d", format!("bias shape {:?}, expected [{cout}]", self.shape(b))));
            }
        }
        let (Some(ho), Some(wo)) = (
            conv2d_output_extent(h, k, stride, padding),
            conv2d_output_extent(w, k, stride, padding),
        ) else {
            return Err(Error::geometry(
                "conv2d",
                format!("{h}×{w} input with kernel {k}, padding {padding} has no output"),
            ));
        };
        let geom = Geometry { channels: cin, h, w, k, stride, padding, ho, wo };
        let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
        let xt = self.value(input);
        let wt = self.value(weight);
        let mut out = vec![T::zero(); n * cout * cols_n];
        let mut cols = vec![T::zero(); rows * cols_n];
        for b in 0..n {
            geom.im2col(&xt.data()[b * cin * h * w..(b + 1) * cin * h * w], &mut cols);
            let ob = &mut out[b * cout * cols_n..(b + 1) * cout * cols_n];
            if let Some(bias) = bias {
                for (co, &bv) in self.value(bias).data().iter().enumerate() {
                    ob[co * cols_n..(co + 1) * cols_n].fill(bv);
                }
            }
            T::gemm(
                cout,
                rows,
                cols_n,
                wt.data(),
                (rows as isize, 1),
                &cols,
                (cols_n as isize, 1),
                if bias.is_some() { T::one() } else { T::zero() },
                ob,
            );
        }
        let out = Tensor::new(&[n, cout, ho, wo], out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        let rule = Conv2dRule { geom, out_channels: cout, batch: n, has_bias: bias.is_some() };
        Ok(self.record(out, &inputs, Box::new(rule)))
    }

    /// Transposed convolution (the adjoint of [`Tape::conv2d`]).
    /// `weight` is Cin×Cout×k×k.
    pub fn conv_transpose2d(&mut self, input: Var, weight: Var, stride: usize, padding: usize) -> Result<Var> {
        let [n, cin, h, w] = self.value(input).dims4("conv_transpose2d")?;
        let [wcin, cout, k, k2] = self.value(weight).dims4("conv_transpose2d")?;
        if wcin != cin {
            return Err(Error::dim(
                "conv_transpose2d",
                format!("input has {cin} channels, weight expects {wcin}"),
            ));
        }
        if k != k2 || stride == 0 {
            return Err(Error::geometry("conv_transpose2d", "kernel must be square and stride ≥ 1"));
        }
        let (Some(ho), Some(wo)) = (
            conv_transpose2d_output_extent(h, k, stride, padding),
            conv_transpose2d_output_extent(w, k, stride, padding),
        ) else {
            return Err(Error::geometry("conv_transpose2d", "non-positive output extent"));
        };
        // The large plane is the output; the small plane is the input grid.
        let geom = Geometry { channels: cout, h: ho, w: wo, k, stride, padding, ho: h, wo: w };
        let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
        let xt = self.value(input);
        let wt = self.value(weight);
        let mut out = vec![T::zero(); n * cout * ho * wo];
        let mut cols = vec![T::zero(); rows * cols_n];
        for b in 0..n {
            // cols (rows×HW) = Wᵀ (rows×Cin) · x (Cin×HW)
            T::gemm(
                rows,
                cin,
                cols_n,
                wt.data(),
                (1, rows as isize),
                &xt.data()[b * cin * cols_n..(b + 1) * cin * cols_n],
                (cols_n as isize, 1),
                T::zero(),
                &mut cols,
            );
            geom.col2im(&cols, &mut out[b * cout * ho * wo..(b + 1) * cout * ho * wo]);
        }
        let out = Tensor::new(&[n, cout, ho, wo], out)?;
        let rule = ConvTranspose2dRule { geom, in_channels: cin, batch: n };
        Ok(self.record(out, &[input, weight], Box::new(rule)))
    }
}
