//! Camera and light JSON, and image output.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use appear::linalg::{mat4_from_row_major, mat4_to_row_major};
use appear::raster::Camera;
use appear::scene_io::{write_pfm, write_png, ColorSpace, HdrImage};
use appear::shading::{tone_map_image, PointLight};

/// Either explicit matrices or a look-at description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum CameraSpec {
    Matrices {
        /// Row-major world-to-camera.
        view_matrix: Vec<f64>,
        /// Row-major camera-to-clip.
        proj_matrix: Vec<f64>,
        resolution: [usize; 2],
    },
    LookAt {
        eye: [f64; 3],
        target: [f64; 3],
        #[serde(default = "default_up")]
        up: [f64; 3],
        /// Vertical field of view in radians.
        fov_y: f64,
        near: f64,
        far: f64,
        resolution: [usize; 2],
    },
}

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

impl CameraSpec {
    pub fn from_camera(c: &Camera<f64>) -> Self {
        CameraSpec::Matrices {
            view_matrix: mat4_to_row_major(&c.view),
            proj_matrix: mat4_to_row_major(&c.proj),
            resolution: [c.width, c.height],
        }
    }

    pub fn camera(&self) -> Result<Camera<f64>> {
        Ok(match self {
            CameraSpec::Matrices { view_matrix, proj_matrix, resolution: [w, h] } => {
                let view = mat4_from_row_major(view_matrix).context("view_matrix needs 16 finite values")?;
                let proj = mat4_from_row_major(proj_matrix).context("proj_matrix needs 16 finite values")?;
                Camera::new(view, proj, *w, *h)?
            }
            CameraSpec::LookAt { eye, target, up, fov_y, near, far, resolution: [w, h] } => {
                Camera::look_at(*eye, *target, *up, *fov_y, *near, *far, *w, *h)?
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightSpec {
    pub position: [f64; 3],
    pub intensity: [f64; 3],
}

impl LightSpec {
    pub fn from_light(l: &PointLight<f64>) -> Self {
        Self { position: l.position, intensity: l.intensity }
    }

    pub fn light(&self) -> Result<PointLight<f64>> {
        Ok(PointLight::new(self.position, self.intensity)?)
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

/// Writes a linear HDR image: PFM as is, PNG tone-mapped to 8 bits.
pub fn write_image(path: &Path, width: usize, height: usize, rgb: &[f64]) -> Result<()> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("pfm") => write_pfm(path, &HdrImage::from_rgb(width, height, rgb)?)?,
        Some("png") => write_png(path, &HdrImage::from_rgb(width, height, &tone_map_image(rgb)?)?, ColorSpace::Linear, 8)?,
        _ => bail!("{}: output must end in .pfm or .png", path.display()),
    }
    Ok(())
}

/// Places equally sized RGB images left to right.
pub fn side_by_side(width: usize, height: usize, images: &[&[f64]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(images.len() * width * height * 3);
    for y in 0..height {
        for img in images {
            out.extend_from_slice(&img[3 * y * width..3 * (y + 1) * width]);
        }
    }
    out
}
