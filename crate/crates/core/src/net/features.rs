use crate::error::{Error, Result};
use crate::maps::{srgb_to_lab, RgbImage};
use crate::tensor::{Scalar, Tensor};

/// Scaled CIELAB channels, optionally followed by x and y normalized to
/// [0, 1]. Returns a 1×C×H×W tensor.
pub fn image_features<T: Scalar>(img: &RgbImage, channels: usize) -> Result<Tensor<T>> {
    if channels != 3 && channels != 5 {
        return Err(Error::param("in_channels", format!("must be 3 or 5, got {channels}")));
    }
    let (w, h) = (img.width(), img.height());
    let plane = w * h;
    let mut data = vec![T::zero(); channels * plane];
    let sx = 1.0 / (w.max(2) - 1) as f64;
    let sy = 1.0 / (h.max(2) - 1) as f64;
    for (i, &rgb) in img.pixels().iter().enumerate() {
        let [l, a, b] = srgb_to_lab(rgb);
        data[i] = T::from_f64(l as f64 / 100.0);
        data[plane + i] = T::from_f64(a as f64 / 100.0);
        data[2 * plane + i] = T::from_f64(b as f64 / 100.0);
        if channels == 5 {
            data[3 * plane + i] = T::from_f64((i % w) as f64 * sx);
            data[4 * plane + i] = T::from_f64((i / w) as f64 * sy);
        }
    }
    Tensor::new(&[1, channels, h, w], data)
}

/// Concatenates 1×C×H×W tensors along the batch axis.
pub fn stack_batch<T: Scalar>(items: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = items.first().ok_or_else(|| Error::Usage("empty batch".into()))?;
    let [_, c, h, w] = first.dims4("stack_batch")?;
    let mut data = Vec::with_capacity(items.len() * c * h * w);
    for t in items {
        if t.shape() != first.shape() {
            return Err(Error::dim("stack_batch", format!("{:?} vs {:?}", t.shape(), first.shape())));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new(&[items.len(), c, h, w], data)
}
