//! Channel-temporal attention for adversarial video domain adaptation.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`], [`ops`], [`autograd`]: a dense f32/f64 tensor engine with
//!   define-by-run reverse-mode differentiation, including the gradient
//!   reversal layer.
//! - [`attention`]: channel and temporal excitation modules and the four
//!   block orderings (C, T, TC, CT).
//! - [`backbone`]: a small 3-D CNN feature extractor with attention insertion
//!   points, the action classifier and the domain discriminator.
//! - [`trainer`]: the two-stage adversarial training loop and evaluation.
//! - [`data`]: segment windowing, split construction, manifests, clip
//!   preprocessing and a synthetic two-domain video generator.
//! - [`gradcheck`]: finite-difference verification of every backward rule.

pub mod attention;
pub mod autograd;
pub mod backbone;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod param;
pub mod real;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use autograd::{Gradients, Graph, GrlCoefficient, Var};
pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;
