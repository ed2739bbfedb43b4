//! Layer primitives: frequency-strided convolution and its transpose, LSTM,
//! causal global layer normalization, PReLU and linear maps. Each forward
//! kernel has a matching `*_backward` used by [`crate::tape`].

pub mod conv;
pub mod dense;
pub mod lstm;
pub mod norm;

pub use conv::{conv_freq, deconv_freq, pad_last, slice_last};
pub use dense::{linear, prelu};
pub use lstm::{lstm_sequence, lstm_step, LstmWeights};
pub use norm::{cgln, cgln_2d, cgln_3d, CglnStats, NormLayout, CGLN_EPS};
