//! State-space model kernels.

pub mod lti;
pub mod selective;

pub use lti::{conv_scan, discretize, expm, recurrent_scan, ContinuousSsm, ConvKernel, DiscreteSsm};
pub use selective::{bidirectional_scan, selective_scan, selective_scan_plain, Direction, SelectiveParams};
