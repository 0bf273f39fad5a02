//! Superpixel segmentation engine built around a learned pixel-to-grid
//! association map.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the tensor layout arithmetic they implement.
#![allow(clippy::needless_range_loop)]

pub mod autograd;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod maps;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod slic;
pub mod spix;
pub mod tensor;
pub mod train;
pub mod vision;

pub use error::{Error, ErrorClass, Result};
pub use maps::{LabelMap, RgbImage};
pub use tensor::{Scalar, Tensor};
