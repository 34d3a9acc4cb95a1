//! JSON scene and fit configuration files, and saving assets as a loadable
//! scene directory.
//!
//! Relative paths inside a file resolve against that file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::animation::load_animation;
use super::image::{load_texture, save_texture, ColorSpace};
use super::obj::{load_obj, save_obj, MtlInfo};
use crate::error::{Error, Result};
use crate::geometry::{primitives, BoneSet, Mesh, SkinLogits};
use crate::optimize::{FitConfig, LearnFlags};
use crate::raster::{Texture, TexturePyramid, WrapMode};
use crate::render::Asset;
use crate::shading::Material;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "primitive", rename_all = "snake_case")]
pub enum Primitive {
    UvSphere { segments: usize, rings: usize, radius: f64 },
    Cube { half: f64 },
    Quad { half: f64 },
    Icosahedron,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeshSource {
    Path(String),
    Primitive(Primitive),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checker {
    /// Squares along each axis.
    pub squares: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waves {
    pub amplitude: f64,
    /// Periods across the unit square.
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TextureSource {
    Path(String),
    Constant(Vec<f64>),
    /// Channels of several images concatenated (e.g. RGB plus alpha).
    Stack { stack: Vec<String> },
    /// Explicit mip levels; the pyramid gets independent levels.
    Levels { levels: Vec<TextureSource> },
    Checker { checker: Checker },
    /// Single-channel `amplitude · sin(2πfu) · sin(2πfv)`.
    Waves { waves: Waves },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialSpec {
    pub kd: Option<TextureSource>,
    pub orm: Option<TextureSource>,
    pub normal: Option<TextureSource>,
    pub displacement: Option<TextureSource>,
    /// Extent of generated textures.
    pub resolution: usize,
    pub independent_levels: bool,
    pub ambient: Option<[f64; 3]>,
    pub wrap: WrapMode,
}

impl Default for MaterialSpec {
    fn default() -> Self {
        Self {
            kd: None,
            orm: None,
            normal: None,
            displacement: None,
            resolution: 64,
            independent_levels: false,
            ambient: None,
            wrap: WrapMode::Clamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkinSpec {
    pub bones: usize,
    /// JSON file with V×B logits; zeros (uniform weights) when absent.
    #[serde(default)]
    pub logits: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub mesh: MeshSource,
    /// Fan-triangulate polygons with more than four corners.
    #[serde(default)]
    pub fan: bool,
    #[serde(default)]
    pub subdivisions: usize,
    #[serde(default)]
    pub material: MaterialSpec,
    #[serde(default)]
    pub skin: Option<SkinSpec>,
    #[serde(default)]
    pub animation: Option<String>,
    #[serde(default)]
    pub learn: LearnFlags,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub asset: Asset<f64>,
    pub bones: Option<BoneSet<f64>>,
    pub learn: LearnFlags,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => e.into(),
    })
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })
}

fn generated(size: usize, channels: impl Fn(f64, f64) -> Vec<f64>) -> Result<Texture<f64>> {
    if size == 0 {
        return Err(Error::Config("generated texture resolution must be positive".into()));
    }
    let mut data = Vec::new();
    let mut c = 0;
    for y in 0..size {
        for x in 0..size {
            let v = channels((x as f64 + 0.5) / size as f64, (y as f64 + 0.5) / size as f64);
            c = v.len();
            data.extend(v);
        }
    }
    Texture::new(size, size, c, data)
}

fn load_source(src: &TextureSource, root: &Path, size: usize, space: ColorSpace) -> Result<Texture<f64>> {
    match src {
        TextureSource::Path(p) => load_texture(&root.join(p), space),
        TextureSource::Constant(v) => {
            if v.is_empty() || v.len() > crate::raster::texture::MAX_CHANNELS || size == 0 {
                return Err(Error::Config(format!("constant texture {v:?} at resolution {size}")));
            }
            Ok(Texture::constant(size, size, v))
        }
        TextureSource::Stack { stack } => {
            let parts = stack.iter().map(|p| load_texture(&root.join(p), space)).collect::<Result<Vec<_>>>()?;
            let first = parts.first().ok_or_else(|| Error::Config("empty texture stack".into()))?;
            let (w, h) = (first.width, first.height);
            if parts.iter().any(|t| t.width != w || t.height != h) {
                return Err(Error::Config(format!("texture stack {stack:?} mixes resolutions")));
            }
            let c: usize = parts.iter().map(|t| t.channels).sum();
            let mut data = Vec::with_capacity(w * h * c);
            for i in 0..w * h {
                for t in &parts {
                    data.extend_from_slice(&t.data[i * t.channels..(i + 1) * t.channels]);
                }
            }
            Texture::new(w, h, c, data)
        }
        TextureSource::Levels { levels } => match levels.first() {
            Some(l) => load_source(l, root, size, space),
            None => Err(Error::Config("empty level list".into())),
        },
        TextureSource::Checker { checker } => {
            if checker.a.len() != checker.b.len() || checker.squares == 0 {
                return Err(Error::Config("checker colours must have equal channel counts".into()));
            }
            let n = checker.squares as f64;
            generated(size, |u, v| {
                let odd = ((u * n).floor() + (v * n).floor()) as i64 % 2 == 1;
                if odd { checker.b.clone() } else { checker.a.clone() }
            })
        }
        TextureSource::Waves { waves } => {
            let tau = std::f64::consts::TAU * waves.frequency;
            generated(size, |u, v| vec![waves.amplitude * (tau * u).sin() * (tau * v).sin()])
        }
    }
}

fn load_pyramid(
    src: &TextureSource,
    root: &Path,
    spec: &MaterialSpec,
    space: ColorSpace,
    channels: &[usize],
    what: &str,
) -> Result<TexturePyramid<f64>> {
    let check = |t: &Texture<f64>| {
        if !channels.contains(&t.channels) {
            return Err(Error::Config(format!("{what} texture has {} channels, expected {channels:?}", t.channels)));
        }
        Ok(())
    };
    if let TextureSource::Levels { levels } = src {
        let textures = levels.iter().map(|l| load_source(l, root, spec.resolution, space)).collect::<Result<Vec<_>>>()?;
        textures.iter().try_for_each(check)?;
        let base = textures.first().ok_or_else(|| Error::Config(format!("{what}: empty level list")))?;
        let expected = TexturePyramid::from_base(base.clone(), true);
        if textures.len() != expected.level_count()
            || textures.iter().zip(&expected.levels).any(|(a, b)| (a.width, a.height) != (b.width, b.height))
        {
            return Err(Error::Config(format!("{what}: levels do not form a ceil-halving chain")));
        }
        return Ok(TexturePyramid { levels: textures, independent_levels: true });
    }
    let t = load_source(src, root, spec.resolution, space)?;
    check(&t)?;
    Ok(TexturePyramid::from_base(t, spec.independent_levels))
}

fn with_alpha(t: Texture<f64>, alpha: Option<Texture<f64>>, d: f64) -> Result<Texture<f64>> {
    if t.channels == 4 {
        return Ok(t);
    }
    if let Some(a) = &alpha {
        if (a.width, a.height) != (t.width, t.height) {
            return Err(Error::Config("alpha map resolution differs from the colour map".into()));
        }
    }
    let mut data = Vec::with_capacity(t.width * t.height * 4);
    for i in 0..t.width * t.height {
        data.extend_from_slice(&t.data[3 * i..3 * i + 3]);
        data.push(alpha.as_ref().map_or(d, |a| a.data[i * a.channels]));
    }
    Texture::new(t.width, t.height, 4, data)
}

fn build_mesh(src: &MeshSource, root: &Path, fan: bool) -> Result<(Mesh<f64>, Option<MtlInfo>)> {
    Ok(match src {
        MeshSource::Path(p) => {
            let d = load_obj(&root.join(p), fan)?;
            (d.mesh, d.material)
        }
        MeshSource::Primitive(p) => (
            match *p {
                Primitive::UvSphere { segments, rings, radius } => {
                    if segments < 3 || rings < 2 {
                        return Err(Error::Config("uv sphere needs at least 3 segments and 2 rings".into()));
                    }
                    primitives::uv_sphere(segments, rings, radius)
                }
                Primitive::Cube { half } => primitives::cube(half),
                Primitive::Quad { half } => primitives::quad(half),
                Primitive::Icosahedron => primitives::icosahedron(),
            },
            None,
        ),
    })
}

/// Builds a scene from its parsed file; `root` resolves relative paths.
pub fn build_scene(file: &SceneFile, root: &Path) -> Result<Scene> {
    let (mut mesh, mtl) = build_mesh(&file.mesh, root, file.fan)?;
    let spec = &file.material;
    let mtl = mtl.unwrap_or_default();
    let path_src = |p: &Option<PathBuf>| p.as_ref().map(|p| TextureSource::Path(p.to_string_lossy().into_owned()));
    // MTL paths are already absolute or relative to the working directory
    let resolve_root = |explicit: bool| if explicit { root } else { Path::new("") };

    let kd_src = spec.kd.clone();
    let kd = match (&kd_src, &mtl.map_kd) {
        (Some(s), _) => load_pyramid(s, root, spec, ColorSpace::Srgb, &[3, 4], "kd")?,
        (None, Some(_)) => load_pyramid(&path_src(&mtl.map_kd).unwrap(), resolve_root(false), spec, ColorSpace::Srgb, &[3, 4], "kd")?,
        (None, None) => {
            let c = mtl.kd.unwrap_or([0.5; 3]);
            load_pyramid(&TextureSource::Constant(c.to_vec()), root, spec, ColorSpace::Linear, &[3], "kd")?
        }
    };
    let kd = if kd.channels() == 4 {
        kd
    } else {
        let alpha = match &mtl.map_alpha {
            Some(p) if kd_src.is_none() => Some(load_texture(p, ColorSpace::Linear)?),
            _ => None,
        };
        let independent = kd.independent_levels;
        let levels = kd.levels.into_iter().enumerate().map(|(l, t)| {
            with_alpha(t, if l == 0 { alpha.clone() } else { None }, mtl.d.unwrap_or(1.0))
        });
        let levels = levels.collect::<Result<Vec<_>>>()?;
        if independent {
            TexturePyramid { levels, independent_levels: true }
        } else {
            TexturePyramid::from_base(levels.into_iter().next().expect("level 0"), false)
        }
    };
    let tex = |explicit: &Option<TextureSource>, from_mtl: &Option<PathBuf>, default: &[f64], what: &str, ch: &[usize]| {
        match (explicit, from_mtl) {
            (Some(s), _) => load_pyramid(s, root, spec, ColorSpace::Linear, ch, what),
            (None, Some(p)) => load_pyramid(&path_src(&Some(p.clone())).unwrap(), Path::new(""), spec, ColorSpace::Linear, ch, what),
            (None, None) => load_pyramid(&TextureSource::Constant(default.to_vec()), root, spec, ColorSpace::Linear, ch, what),
        }
    };
    let orm = tex(&spec.orm, &mtl.map_orm, &[0.0, 0.5, 0.0], "orm", &[3])?;
    let normal = tex(&spec.normal, &mtl.map_normal, &[0.5, 0.5, 1.0], "normal", &[3])?;
    let displacement = match (&spec.displacement, &mtl.map_disp) {
        (Some(s), _) => Some(load_source(s, root, spec.resolution, ColorSpace::Linear)?),
        (None, Some(p)) => Some(load_texture(p, ColorSpace::Linear)?),
        (None, None) => None,
    };
    if let Some(d) = &displacement {
        if d.channels != 1 {
            return Err(Error::Config(format!("displacement map has {} channels, expected 1", d.channels)));
        }
    }
    if let Some(s) = &file.skin {
        let n = mesh.vertex_count() * s.bones;
        let values = match &s.logits {
            Some(p) => parse_json::<Vec<f64>>(&root.join(p))?,
            None => vec![0.0; n],
        };
        mesh.skin = Some(SkinLogits { bones: s.bones, values });
    }
    mesh.validate()?;
    let bones = file.animation.as_ref().map(|p| load_animation(&root.join(p))).transpose()?;
    if let (Some(b), Some(s)) = (&bones, &mesh.skin) {
        if b.bone_count != s.bones {
            return Err(Error::Config(format!("animation has {} bones, skin has {}", b.bone_count, s.bones)));
        }
    }
    let material = Material { kd, orm, normal, displacement, ambient: spec.ambient, wrap: spec.wrap };
    Ok(Scene { asset: Asset { mesh, material, subdivisions: file.subdivisions }, bones, learn: file.learn })
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let file: SceneFile = parse_json(path)?;
    build_scene(&file, path.parent().unwrap_or(Path::new("")))
}

fn save_pyramid(dir: &Path, name: &str, p: &TexturePyramid<f64>, alpha_split: bool) -> Result<TextureSource> {
    let count = if p.independent_levels { p.level_count() } else { 1 };
    let mut sources = Vec::with_capacity(count);
    for (l, t) in p.levels.iter().take(count).enumerate() {
        if alpha_split && t.channels == 4 {
            let rgb: Vec<f64> = t.data.chunks_exact(4).flat_map(|c| [c[0], c[1], c[2]]).collect();
            let a: Vec<f64> = t.data.chunks_exact(4).map(|c| c[3]).collect();
            let (f_rgb, f_a) = (format!("{name}.{l}.pfm"), format!("{name}_alpha.{l}.pfm"));
            save_texture(&dir.join(&f_rgb), &Texture::new(t.width, t.height, 3, rgb)?, ColorSpace::Linear)?;
            save_texture(&dir.join(&f_a), &Texture::new(t.width, t.height, 1, a)?, ColorSpace::Linear)?;
            sources.push(TextureSource::Stack { stack: vec![f_rgb, f_a] });
        } else {
            let f = format!("{name}.{l}.pfm");
            save_texture(&dir.join(&f), t, ColorSpace::Linear)?;
            sources.push(TextureSource::Path(f));
        }
    }
    Ok(if p.independent_levels { TextureSource::Levels { levels: sources } } else { sources.remove(0) })
}

/// Writes `asset` as OBJ/MTL plus PFM textures and a `scene.json` that
/// [`load_scene`] reads back. Returns the scene file path.
pub fn save_asset(dir: &Path, asset: &Asset<f64>, learn: &LearnFlags) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let m = &asset.material;
    let kd = save_pyramid(dir, "kd", &m.kd, true)?;
    let orm = save_pyramid(dir, "orm", &m.orm, false)?;
    let normal = save_pyramid(dir, "normal", &m.normal, false)?;
    let displacement = match &m.displacement {
        Some(d) => {
            save_texture(&dir.join("displacement.pfm"), d, ColorSpace::Linear)?;
            Some(TextureSource::Path("displacement.pfm".into()))
        }
        None => None,
    };
    let mtl = MtlInfo {
        name: "material".into(),
        map_kd: Some(dir.join("kd.0.pfm")),
        map_alpha: Some(dir.join("kd_alpha.0.pfm")).filter(|p| p.exists()),
        map_orm: Some(dir.join("orm.0.pfm")),
        map_normal: Some(dir.join("normal.0.pfm")),
        map_disp: m.displacement.as_ref().map(|_| dir.join("displacement.pfm")),
        ..Default::default()
    };
    save_obj(dir, "mesh", &asset.mesh, Some(&mtl))?;
    let skin = match &asset.mesh.skin {
        Some(s) => {
            std::fs::write(dir.join("skin_logits.json"), serde_json::to_string(&s.values)?)?;
            Some(SkinSpec { bones: s.bones, logits: Some("skin_logits.json".into()) })
        }
        None => None,
    };
    let file = SceneFile {
        mesh: MeshSource::Path("mesh.obj".into()),
        fan: false,
        subdivisions: asset.subdivisions,
        material: MaterialSpec {
            kd: Some(kd),
            orm: Some(orm),
            normal: Some(normal),
            displacement,
            resolution: m.kd.base().width,
            independent_levels: false,
            ambient: m.ambient,
            wrap: m.wrap,
        },
        skin,
        animation: None,
        learn: *learn,
    };
    let path = dir.join("scene.json");
    std::fs::write(&path, serde_json::to_string_pretty(&file)?)?;
    Ok(path)
}

/// Where reference images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    /// Render a reference scene with the internal renderer.
    Internal {
        scene: String,
        #[serde(default = "default_samples")]
        samples: usize,
    },
    /// Images and conditions listed in a manifest.
    External { manifest: String },
    /// The latent scene itself, rendered at one sample per pixel.
    #[serde(rename = "self")]
    SelfReference,
}

fn default_samples() -> usize {
    16
}

/// Top-level fit configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitFile {
    pub scene: String,
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub fit: FitConfig,
}

impl FitFile {
    /// Parses and validates a fit file.
    pub fn load(path: &Path) -> Result<Self> {
        let f: FitFile = parse_json(path)?;
        f.fit.validate().map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })?;
        Ok(f)
    }
}
