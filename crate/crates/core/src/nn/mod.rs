//! Minimal CPU layer library: just the shapes the reference backbones need.

mod layers;
mod tensor;

pub use layers::{BatchNorm2d, Cache, Conv2d, Linear, Module, PreActBlock};
pub use tensor::{Param, Tensor};
