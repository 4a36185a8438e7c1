//! File formats shared across the pipeline.

pub(crate) mod binary;
pub mod image;
mod landmarks;

pub use self::image::{linear_to_srgb, load_image, load_png16, save_png16, save_srgb8, srgb_to_linear, Image};
pub use landmarks::{load_landmarks, parse_landmarks, save_landmarks};
