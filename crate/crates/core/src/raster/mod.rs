//! CPU rasterization primitives with hand-written adjoints.

pub mod antialias;
pub mod camera;
pub mod interpolate;
pub mod rasterize;
pub mod texture;

pub use antialias::{antialias, antialias_backward, AaTape, EdgeMap};
pub use camera::{project, project_backward, Camera, Projected};
pub use interpolate::{barycentrics_backward, interpolate, interpolate_backward};
pub use rasterize::{depth_peel, msaa_rasterize, pixel_center_ndc, rasterize, sample_pattern, DepthWindow, RasterOutput};
pub use texture::{PyramidGrad, Texture, TexturePyramid, WrapMode};
