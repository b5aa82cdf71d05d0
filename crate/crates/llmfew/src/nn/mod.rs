//! Numeric substrate: parameter handling, elementwise kernels and the
//! layers shared by the encoder, backbone and classification head.

pub mod activation;
pub mod conv;
pub mod gradcheck;
pub mod init;
pub mod linear;
pub mod norm;
pub mod param;
pub mod scalar;

pub use param::{Param, Param1, Param2, Param3, ParamSlot, VisitParams};
pub use scalar::Scalar;
