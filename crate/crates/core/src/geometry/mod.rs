//! Differentiable mesh operations applied before rasterization.

pub mod displace;
pub mod laplacian;
pub mod mesh;
pub mod normals;
pub mod skinning;
pub mod subdivide;
pub mod tangents;

pub use displace::{displace, displace_backward};
pub use laplacian::{laplacian_loss, laplacian_loss_backward, uniform_laplacian, LaplacianMode};
pub use mesh::{primitives, Mesh, Neighbors, SkinLogits};
pub use normals::{vertex_normals, vertex_normals_backward};
pub use skinning::{skin, skin_backward, softmax_weights, BoneSet};
pub use subdivide::{subdivide, Subdivision};
pub use tangents::{tangent_frame, tangent_frame_backward, TangentFrame};
