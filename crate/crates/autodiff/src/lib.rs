//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! Every differentiable op records a node pointing at its inputs. Backward
//! rules are themselves written in terms of differentiable ops, so calling
//! [`grad`] with `create_graph = true` records the backward pass as a new
//! graph that can be differentiated again. That is the mechanism the
//! gradient penalty relies on: the input-gradient of the critic is itself
//! a function of the critic parameters.
//!
//! ```
//! use pano_autodiff::{grad, Tensor};
//!
//! let x = Tensor::new(vec![1.0, 2.0, 3.0], &[3]).unwrap().requires_grad();
//! let cube = x.powf(3.0).sum();
//! let g = grad(&cube, &[&x], true).unwrap().remove(0);
//! let h = grad(&g.sum(), &[&x], false).unwrap().remove(0);
//! assert_eq!(h.data(), &[6.0, 12.0, 18.0]);
//! ```

mod backward;
mod conv;
mod error;
pub mod gradcheck;
mod norm;
mod ops;
mod tensor;

pub use backward::grad;
pub use conv::ConvParams;
pub use error::{AutodiffError, Result};
pub use norm::{batch_norm2d, instance_norm2d, BatchNormMode, RunningStats, DEFAULT_NORM_EPS};
pub use ops::Activation;
pub use tensor::{is_grad_enabled, no_grad, NoGradGuard, Tensor};
