//! Differentiable frequency-domain downsampling for convolutional networks.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`autodiff`]),
//! unitary Fourier/Hartley transforms ([`spectral`]), the two
//! frequency-domain pooling layers ([`pooling`]): spectral pooling and
//! DiffStride with learnable strides, the standard layers a CIFAR ResNet-18
//! needs ([`nn`]), the hybrid ResNet-18 assembly ([`resnet`]), CIFAR and
//! synthetic data ([`data`]) and the training harness ([`train`], with
//! [`config`], [`metrics`] and [`checkpoint`]). [`checks`] bundles the
//! gradient-check targets used by the command line.

pub mod autodiff;
pub mod checkpoint;
pub mod checks;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod pooling;
pub mod resnet;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use autodiff::{BackwardOp, Gradients, Graph, Var};
pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use data::{Dataset, Split};
pub use error::{Error, Result};
pub use metrics::{MetricsLog, MetricsRow};
pub use params::{ParamId, ParamKind, ParamStore, Parameter};
pub use pooling::{MaskSpec, StridePair};
pub use resnet::{Model, ModelConfig, Variant};
pub use spectral::ComplexSpectrum;
pub use tensor::{DType, Scalar, Tensor};
