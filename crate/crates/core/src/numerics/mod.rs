//! Deterministic numeric substrate: tensors, derived random streams, 2-D
//! FFT, quantile mapping, summary statistics and a finite-difference
//! gradient oracle.

mod fft;
mod gradcheck;
mod quantile;
mod rng;
mod stats;
mod tensor;

pub use fft::{fft2, fft2_complex, ifft2, ifft2_complex};
pub use gradcheck::finite_diff_grad;
pub use quantile::{ks_distance, quantile_map};
pub(crate) use quantile::quantile_map_slice;
pub use rng::{rng_derive, RngStream, StreamKey, SERVER};
pub use stats::{mean_std, tensor_stats, MeanStd, StatAxis};
pub use tensor::Tensor;
