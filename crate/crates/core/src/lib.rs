//! Appearance-driven mesh and material fitting with a differentiable
//! rasterizer.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below name the common instantiations. Optimization runs in `f64`.

pub mod adjoint;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod linalg;
pub mod loss;
pub mod optimize;
pub mod raster;
pub mod reference;
pub mod render;
pub mod scalar;
pub mod scene_io;
pub mod shading;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Mesh64 = geometry::Mesh<f64>;
pub type Mesh32 = geometry::Mesh<f32>;
pub type Registry64 = adjoint::Registry<f64>;
pub type Registry32 = adjoint::Registry<f32>;
pub type Texture64 = raster::Texture<f64>;
pub type Texture32 = raster::Texture<f32>;
pub type Camera64 = raster::Camera<f64>;
pub type Camera32 = raster::Camera<f32>;
