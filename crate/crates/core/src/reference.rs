//! Reference image providers: an internal supersampling renderer over a
//! reference asset, and an external manifest of pre-rendered images.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoneSet;
use crate::linalg::{mat4_from_row_major, mat4_to_row_major};
use crate::raster::Camera;
use crate::render::{render_supersampled, Asset, Pose, RenderOptions, Topology};
use crate::scene_io::image::read_hdr;
use crate::shading::PointLight;

/// One request for a reference image.
#[derive(Debug, Clone)]
pub struct ViewRequest<'a> {
    pub camera: &'a Camera<f64>,
    pub light: &'a PointLight<f64>,
    /// Options the latent is rendered with; fixes resolution and background.
    pub options: &'a RenderOptions<f64>,
    pub frame: Option<usize>,
    /// Manifest record for providers with fixed conditions.
    pub record: Option<usize>,
}

pub trait ReferenceProvider: Send + Sync {
    /// Number of fixed (camera, light) conditions, or `None` for free sampling.
    fn record_count(&self) -> Option<usize> {
        None
    }

    fn record(&self, index: usize) -> Result<(Camera<f64>, PointLight<f64>)> {
        Err(Error::Reference(format!("provider has no record {index}")))
    }

    /// Linear HDR image, `width × height × 3`.
    fn fetch(&self, request: &ViewRequest<'_>) -> Result<Vec<f64>>;
}

/// Renders a reference asset through the forward pipeline at `samples`
/// samples per pixel (a square ordered grid), box filtered.
#[derive(Debug, Clone)]
pub struct InternalProvider {
    pub asset: Asset<f64>,
    pub topology: Topology<f64>,
    pub bones: Option<BoneSet<f64>>,
    pub samples: usize,
    /// Overrides the latent's trilinear setting when set.
    pub mip: Option<bool>,
}

impl InternalProvider {
    pub fn new(asset: Asset<f64>, bones: Option<BoneSet<f64>>, samples: usize) -> Result<Self> {
        let k = (samples as f64).sqrt().round() as usize;
        if k == 0 || k * k != samples {
            return Err(Error::Config(format!("supersample count {samples} is not a square")));
        }
        let topology = Topology::new(&asset.mesh, asset.subdivisions)?;
        Ok(Self { asset, topology, bones, samples, mip: None })
    }

    pub fn render(
        &self,
        camera: &Camera<f64>,
        light: &PointLight<f64>,
        options: &RenderOptions<f64>,
        frame: Option<usize>,
    ) -> Result<Vec<f64>> {
        let mut opts = options.clone();
        if let Some(m) = self.mip {
            opts.mip = m;
        }
        let pose = match (frame, &self.bones, &self.asset.mesh.skin) {
            (Some(f), Some(b), Some(_)) => Some(Pose { bones: b, frame: f }),
            _ => None,
        };
        render_supersampled(&self.asset, &self.topology, camera, light, pose, &opts, self.samples)
    }
}

impl ReferenceProvider for InternalProvider {
    fn fetch(&self, r: &ViewRequest<'_>) -> Result<Vec<f64>> {
        self.render(r.camera, r.light, r.options, r.frame)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    /// Row-major world-to-camera matrix.
    pub view_matrix: Vec<f64>,
    /// Row-major camera-to-clip matrix.
    pub proj_matrix: Vec<f64>,
    pub light_pos: [f64; 3],
    pub light_intensity: [f64; 3],
    /// Image path relative to the manifest.
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => e.into(),
        })?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })?;
        if m.records.is_empty() {
            return Err(Error::Format { path: path.to_path_buf(), msg: "manifest has no records".into() });
        }
        for (i, r) in m.records.iter().enumerate() {
            r.condition(1, 1)
                .map_err(|e| Error::Format { path: path.to_path_buf(), msg: format!("record {i}: {e}") })?;
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

impl ManifestRecord {
    pub fn new(camera: &Camera<f64>, light: &PointLight<f64>, image: &str) -> Self {
        Self {
            view_matrix: mat4_to_row_major(&camera.view),
            proj_matrix: mat4_to_row_major(&camera.proj),
            light_pos: light.position,
            light_intensity: light.intensity,
            image: image.to_string(),
        }
    }

    pub fn condition(&self, width: usize, height: usize) -> Result<(Camera<f64>, PointLight<f64>)> {
        let view = mat4_from_row_major(&self.view_matrix)
            .ok_or_else(|| Error::Reference("view_matrix needs 16 finite values".into()))?;
        let proj = mat4_from_row_major(&self.proj_matrix)
            .ok_or_else(|| Error::Reference("proj_matrix needs 16 finite values".into()))?;
        let camera = Camera::new(view, proj, width, height)?;
        let light = PointLight::new(self.light_pos, self.light_intensity)?;
        Ok((camera, light))
    }
}

/// Serves the conditions and images listed in a manifest. Read-only.
#[derive(Debug, Clone)]
pub struct ExternalProvider {
    pub manifest: Manifest,
    pub root: PathBuf,
}

impl ExternalProvider {
    pub fn open(path: &Path) -> Result<Self> {
        let manifest = Manifest::load(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { manifest, root })
    }

    pub fn image_path(&self, index: usize) -> Result<PathBuf> {
        let r = self.manifest.records.get(index).ok_or_else(|| {
            Error::Reference(format!("record {index} out of range ({} records)", self.manifest.records.len()))
        })?;
        Ok(self.root.join(&r.image))
    }
}

impl ReferenceProvider for ExternalProvider {
    fn record_count(&self) -> Option<usize> {
        Some(self.manifest.records.len())
    }

    fn record(&self, index: usize) -> Result<(Camera<f64>, PointLight<f64>)> {
        let r = self.manifest.records.get(index).ok_or_else(|| Error::Reference(format!("no record {index}")))?;
        r.condition(1, 1)
    }

    fn fetch(&self, r: &ViewRequest<'_>) -> Result<Vec<f64>> {
        let index = r.record.ok_or_else(|| Error::Reference("manifest provider needs a record index".into()))?;
        let path = self.image_path(index)?;
        let img = read_hdr(&path)?;
        let (w, h) = (r.options.width, r.options.height);
        if img.width != w || img.height != h {
            return Err(Error::Reference(format!(
                "{}: image is {}x{}, requested {w}x{h}",
                path.display(),
                img.width,
                img.height
            )));
        }
        Ok(img.rgb())
    }
}
