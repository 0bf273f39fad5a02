//! Deterministic inputs shared by the benchmarks.

use spixel_core::data::{gen_synthetic, Pair, SyntheticSceneConfig};
use spixel_core::Tensor;

/// A synthetic scene of the given square size.
pub fn scene(size: usize, seed: u64) -> Pair {
    gen_synthetic(&SyntheticSceneConfig { width: size, height: size, seed, ..Default::default() })
        .expect("valid synthetic config")
}

/// A tensor filled with a cheap deterministic pattern in [-1, 1].
pub fn pattern(shape: &[usize]) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| ((i * 7919 % 1000) as f32 / 500.0) - 1.0).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_are_well_formed() {
        let s = scene(32, 1);
        assert_eq!((s.image.width(), s.image.height()), (32, 32));
        let t = pattern(&[2, 3, 4]);
        assert_eq!(t.numel(), 24);
        assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
