//! Label machinery derived from contrast sensitivity: the CSF model, boundary
//! distance fields and boundary-aware soft labels.

pub mod bal;
pub mod csf;
pub mod distance;

pub use bal::{
    bal_distance_analysis, bal_encode, bal_entropy_map, cross_entropy, gaussian_vector, gaussian_window,
    sigma_of_distance, BalConfig, BalTarget, CeDistance,
};
pub use csf::{csf_eval, csf_peak, csf_table, sensitivity, CsfQuery};
pub use distance::{distance_field, Connectivity, DistanceField};
