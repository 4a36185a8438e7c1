//! Face reconstruction by analysis-by-synthesis: a linear morphable shape
//! model, a pyramid reflectance generator, a differentiable rasterizer with
//! Blinn-Phong shading, and a two-stage fitting pipeline.

pub mod cli;
pub mod error;
pub mod fitting;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod reflectance;
pub mod render;
pub mod shape;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result, Warning};
pub use tensor::{Tape, Tensor, Var};
