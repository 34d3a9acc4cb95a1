//! Asset, configuration and checkpoint I/O.

pub mod animation;
pub mod checkpoint;
pub mod image;
pub mod obj;
pub mod scene;

pub use animation::{load_animation, save_animation};
pub use checkpoint::{read_snapshot, write_snapshot, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use image::{load_texture, read_hdr, read_pfm, read_png, save_texture, write_pfm, write_png, ColorSpace, HdrImage};
pub use obj::{load_obj, save_obj, MtlInfo, ObjData};
pub use scene::{load_scene, save_asset, FitFile, ReferenceSpec, Scene, SceneFile};
