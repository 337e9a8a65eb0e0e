//! U-Net and W-Net chest X-ray classifiers on a small CPU autodiff engine.
//!
//! [`tensor`] and [`autodiff`] hold the dense tensors and the tape,
//! [`layers`] the forward/backward kernels, [`arch`] the model builders,
//! [`train`] the Adam loop, [`data`] manifests, splits and synthetic data,
//! [`metrics`] confusion/ROC reporting and [`explain`] heat maps.

pub mod arch;
pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod explain;
pub mod layers;
pub mod metrics;
pub mod tensor;
pub mod train;
