//! Hybrid outdoor light-field engine: an HDR sky dome plus a volumetric
//! spherical-Gaussian grid, queried by alpha compositing, driving
//! physically-based object insertion with ratio shadows, and an inverse
//! fitter that recovers lighting by gradient descent through the renderer.

pub mod brdf;
pub mod diffopt;
pub mod error;
pub mod geometry;
pub mod image;
pub mod insertion;
pub mod io;
pub mod lightfield;
pub mod math;
pub mod sky;
pub mod volume;

pub use error::{Error, Result};
pub use image::{Image, RgbImage, ScalarImage};
pub use lightfield::HybridLightField;
pub use math::{Rgb, Vec3};
