//! Forward rendering of an asset and the matching reverse pass.
//!
//! Stages: skinning, midpoint tessellation, displacement, normals and tangent
//! frames, projection, coverage (plain, multisampled or depth-peeled),
//! G-buffer interpolation and texture lookups, shading, compositing and
//! optional silhouette blending.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::mesh::vertex_uvs;
use crate::geometry::{
    displace, displace_backward, skin, skin_backward, tangent_frame, tangent_frame_backward, vertex_normals,
    vertex_normals_backward, BoneSet, Mesh, Subdivision, TangentFrame,
};
use crate::linalg::{normalize, normalize_backward, Vec3};
use crate::raster::{
    antialias, antialias_backward, barycentrics_backward, depth_peel, interpolate, interpolate_backward,
    msaa_rasterize, project, project_backward, rasterize, AaTape, Camera, DepthWindow, Projected, PyramidGrad,
    RasterOutput, TexturePyramid,
};
use crate::scalar::Real;
use crate::shading::{
    apply_normal_map, apply_normal_map_backward, blend_layers, blend_layers_backward, shade_deferred,
    shade_deferred_backward, GBuffer, Material, PointLight, Surface,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AaMode {
    None,
    /// Analytic silhouette blending.
    #[default]
    Analytic,
    /// Multisampled visibility with the given samples per pixel.
    Msaa(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions<T> {
    pub width: usize,
    pub height: usize,
    pub aa: AaMode,
    /// Depth-peeling passes; 1 renders opaque.
    pub layers: usize,
    pub background: [T; 3],
    /// Trilinear lookups with a per-pixel level of detail.
    pub mip: bool,
}

impl<T: Real> RenderOptions<T> {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, aa: AaMode::Analytic, layers: 1, background: [T::zero(); 3], mip: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!("resolution {}x{}", self.width, self.height)));
        }
        if self.layers == 0 {
            return Err(Error::Config("layer count must be at least 1".into()));
        }
        if let AaMode::Msaa(s) = self.aa {
            if crate::raster::sample_pattern(s).is_none() {
                return Err(Error::Config(format!("msaa samples must be 1, 4, 8 or 16, got {s}")));
            }
            if self.layers > 1 {
                return Err(Error::Config("msaa cannot be combined with depth peeling".into()));
            }
        }
        Ok(())
    }
}

/// A renderable asset: base mesh, material and tessellation level.
#[derive(Debug, Clone)]
pub struct Asset<T> {
    pub mesh: Mesh<T>,
    pub material: Material<T>,
    pub subdivisions: usize,
}

/// Connectivity of the tessellated mesh, fixed for an asset's lifetime.
#[derive(Debug, Clone)]
pub struct Topology<T> {
    pub steps: Vec<Subdivision>,
    pub faces: Vec<[usize; 3]>,
    pub uvs: Vec<T>,
    pub uv_faces: Vec<[usize; 3]>,
    /// One uv per tessellated vertex, for displacement lookups.
    pub vertex_uvs: Vec<T>,
}

impl<T: Real> Topology<T> {
    pub fn new(mesh: &Mesh<T>, subdivisions: usize) -> Result<Self> {
        mesh.validate()?;
        if !mesh.has_uvs() {
            return Err(Error::InvalidMesh("rendering requires texture coordinates".into()));
        }
        let mut steps = Vec::with_capacity(subdivisions);
        let (mut faces, mut uvs, mut uv_faces) = (mesh.faces.clone(), mesh.uvs.clone(), mesh.uv_faces.clone());
        let mut vcount = mesh.vertex_count();
        for _ in 0..subdivisions {
            let s = Subdivision::new(&faces, &uv_faces, vcount, uvs.len() / 2);
            uvs = s.apply_uvs(&uvs);
            faces = s.faces.clone();
            uv_faces = s.uv_faces.clone();
            vcount = s.vertex_count();
            steps.push(s);
        }
        let vertex_uvs = vertex_uvs(vcount, &faces, &uvs, &uv_faces);
        Ok(Self { steps, faces, uvs, uv_faces, vertex_uvs })
    }

    pub fn vertex_count(&self, base: usize) -> usize {
        self.steps.last().map_or(base, |s| s.vertex_count())
    }
}

/// Animation pose applied before tessellation.
#[derive(Debug, Clone, Copy)]
pub struct Pose<'a, T> {
    pub bones: &'a BoneSet<T>,
    pub frame: usize,
}

/// Per-layer record kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct LayerTape<T> {
    pub raster: RasterOutput<T>,
    pub gbuffer: GBuffer<T>,
    pub uv: Vec<[T; 2]>,
    pub lod: Vec<[Option<T>; 3]>,
    /// Interpolated (unnormalized) normal, tangent and bitangent.
    pub frame: Vec<[Vec3<T>; 3]>,
    pub normal_map: Vec<[T; 3]>,
    pub radiance: Vec<T>,
}

/// Result of a forward render.
#[derive(Debug, Clone)]
pub struct Rendered<T> {
    /// P×3 linear HDR image.
    pub image: Vec<T>,
    pub width: usize,
    pub height: usize,
    pub skinned: Vec<T>,
    pub tessellated: Vec<T>,
    pub positions: Vec<T>,
    pub normals: Vec<T>,
    pub tangents: TangentFrame<T>,
    pub projected: Projected<T>,
    pub layers: Vec<LayerTape<T>>,
    pub aa: Option<AaTape<T>>,
    pub camera: Camera<T>,
    pub light: PointLight<T>,
}

/// Gradients of a render with respect to the asset.
#[derive(Debug, Clone)]
pub struct AssetGrad<T> {
    pub positions: Vec<T>,
    pub skin_logits: Option<Vec<T>>,
    pub kd: PyramidGrad<T>,
    pub orm: PyramidGrad<T>,
    pub normal: PyramidGrad<T>,
    pub displacement: Option<Vec<T>>,
}

impl<T: Real> AssetGrad<T> {
    pub fn zeros(asset: &Asset<T>) -> Self {
        Self {
            positions: vec![T::zero(); asset.mesh.positions.len()],
            skin_logits: asset.mesh.skin.as_ref().map(|s| vec![T::zero(); s.values.len()]),
            kd: asset.material.kd.zero_grad(),
            orm: asset.material.orm.zero_grad(),
            normal: asset.material.normal.zero_grad(),
            displacement: asset.material.displacement.as_ref().map(|d| vec![T::zero(); d.data.len()]),
        }
    }
}

fn screen_lod<T: Real>(
    projected: &Projected<T>,
    face: [usize; 3],
    uvs: &[T],
    uv_face: [usize; 3],
    width: usize,
    height: usize,
    tex: &TexturePyramid<T>,
) -> T {
    let s = face.map(|v| crate::raster::rasterize::ndc_to_screen(projected.ndc[v], width, height));
    let e1 = [s[1][0] - s[0][0], s[1][1] - s[0][1]];
    let e2 = [s[2][0] - s[0][0], s[2][1] - s[0][1]];
    let area = e1[0] * e2[1] - e1[1] * e2[0];
    if area == T::zero() {
        return T::zero();
    }
    // barycentric gradients in pixel units
    let du = [e2[1] / area, -e2[0] / area];
    let dv = [-e1[1] / area, e1[0] / area];
    let uv = |i: usize| [uvs[2 * uv_face[i]], uvs[2 * uv_face[i] + 1]];
    let (a, b, c) = (uv(0), uv(1), uv(2));
    let base = tex.base();
    let size = [T::from_usize_lossy(base.width), T::from_usize_lossy(base.height)];
    let mut rho = T::zero();
    for axis in 0..2 {
        let mut len2 = T::zero();
        for k in 0..2 {
            let d = ((b[k] - a[k]) * du[axis] + (c[k] - a[k]) * dv[axis]) * size[k];
            len2 += d * d;
        }
        rho = rho.max(len2.sqrt());
    }
    if rho > T::zero() {
        rho.log2().max(T::zero())
    } else {
        T::zero()
    }
}

const FRAME_EPS: f64 = 1e-12;

#[allow(clippy::too_many_arguments)]
fn build_layer<T: Real>(
    raster: RasterOutput<T>,
    asset: &Asset<T>,
    topo: &Topology<T>,
    positions: &[T],
    normals: &[T],
    tangents: &TangentFrame<T>,
    projected: &Projected<T>,
    opts: &RenderOptions<T>,
    light: &PointLight<T>,
    eye: Vec3<T>,
) -> Result<LayerTape<T>> {
    let faces = &topo.faces;
    let pos = interpolate(positions, 3, faces, &raster)?;
    let nrm = interpolate(normals, 3, faces, &raster)?;
    let tan = interpolate(&tangents.tangents, 3, faces, &raster)?;
    let bit = interpolate(&tangents.bitangents, 3, faces, &raster)?;
    let uvi = interpolate(&topo.uvs, 2, &topo.uv_faces, &raster)?;
    let n = raster.pixel_count();
    let mat = &asset.material;
    let eps = T::lit(FRAME_EPS);
    let mut covered = vec![false; n];
    let mut surface = vec![
        Surface { position: [T::zero(); 3], normal: [T::zero(); 3], kd: [T::zero(); 3], orm: [T::zero(); 3] };
        n
    ];
    let mut alpha = vec![T::zero(); n];
    let mut uv = vec![[T::zero(); 2]; n];
    let mut lod = vec![[None; 3]; n];
    let mut frame = vec![[[T::zero(); 3]; 3]; n];
    let mut normal_map = vec![[T::zero(); 3]; n];
    let get = |b: &[T], i: usize| [b[3 * i], b[3 * i + 1], b[3 * i + 2]];
    for i in 0..n {
        let Some(tri) = raster.covered(i) else { continue };
        covered[i] = true;
        uv[i] = [uvi[2 * i], uvi[2 * i + 1]];
        if opts.mip {
            let l = |tex: &TexturePyramid<T>| {
                Some(screen_lod(projected, faces[tri], &topo.uvs, topo.uv_faces[tri], raster.width, raster.height, tex))
            };
            lod[i] = [l(&mat.kd), l(&mat.orm), l(&mat.normal)];
        }
        let mut kd = [T::zero(); 4];
        mat.kd.sample(uv[i], lod[i][0], mat.wrap, &mut kd);
        let mut orm = [T::zero(); 3];
        mat.orm.sample(uv[i], lod[i][1], mat.wrap, &mut orm);
        let mut nm = [T::zero(); 3];
        mat.normal.sample(uv[i], lod[i][2], mat.wrap, &mut nm);
        frame[i] = [get(&nrm, i), get(&tan, i), get(&bit, i)];
        normal_map[i] = nm;
        let ng = normalize(frame[i][0], eps).unwrap_or([T::zero(), T::zero(), T::one()]);
        let t = normalize(frame[i][1], eps).unwrap_or([T::zero(); 3]);
        let b = normalize(frame[i][2], eps).unwrap_or([T::zero(); 3]);
        surface[i] = Surface { position: get(&pos, i), normal: apply_normal_map(ng, t, b, nm), kd: [kd[0], kd[1], kd[2]], orm };
        alpha[i] = kd[3];
    }
    let gbuffer = GBuffer { width: raster.width, height: raster.height, covered, surface, alpha };
    let shaded = shade_deferred(&gbuffer, light, eye, mat.ambient)?;
    Ok(LayerTape { raster, gbuffer, uv, lod, frame, normal_map, radiance: shaded.radiance })
}

/// Renders `asset` seen from `camera` under `light`.
pub fn render<T: Real>(
    asset: &Asset<T>,
    topo: &Topology<T>,
    camera: &Camera<T>,
    light: &PointLight<T>,
    pose: Option<Pose<'_, T>>,
    opts: &RenderOptions<T>,
) -> Result<Rendered<T>> {
    opts.validate()?;
    let camera = camera.with_resolution(opts.width, opts.height);
    let mesh = &asset.mesh;
    let skinned = match (pose, &mesh.skin) {
        (Some(p), Some(s)) => skin(&mesh.positions, &s.values, p.bones, p.frame)?,
        (Some(_), None) => return Err(Error::NoBones),
        (None, _) => mesh.positions.clone(),
    };
    let mut tessellated = skinned.clone();
    for s in &topo.steps {
        tessellated = s.apply(&tessellated, 3);
    }
    let positions = match &asset.material.displacement {
        Some(map) => displace(&tessellated, &topo.faces, &topo.vertex_uvs, map, asset.material.wrap),
        None => tessellated.clone(),
    };
    if positions.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("vertex positions".into()));
    }
    let normals = vertex_normals(&positions, &topo.faces);
    let tangents = tangent_frame(&positions, &topo.faces, &topo.uvs, &topo.uv_faces, &normals);
    let projected = project(&positions, &camera);
    let (w, h) = (opts.width, opts.height);
    let rasters = match opts.aa {
        AaMode::Msaa(s) => vec![msaa_rasterize(&projected, &topo.faces, w, h, s)],
        _ if opts.layers > 1 => depth_peel(&projected, &topo.faces, w, h, opts.layers),
        _ => vec![rasterize(&projected, &topo.faces, w, h, DepthWindow::None)],
    };
    let eye = camera.position();
    let layers = rasters
        .into_iter()
        .map(|r| build_layer(r, asset, topo, &positions, &normals, &tangents, &projected, opts, light, eye))
        .collect::<Result<Vec<_>>>()?;

    let bg = opts.background;
    let mut image = if opts.layers > 1 {
        let background: Vec<T> = (0..w * h).flat_map(|_| bg).collect();
        let parts: Vec<(&[T], &[T])> = layers.iter().map(|l| (&l.radiance[..], &l.gbuffer.alpha[..])).collect();
        blend_layers(&parts, &background)
    } else {
        let l = &layers[0];
        let mut img = vec![T::zero(); w * h * 3];
        for i in 0..w * h {
            let cov = match &l.raster.coverage {
                Some(c) => c[i],
                None if l.gbuffer.covered[i] => T::one(),
                None => T::zero(),
            };
            for c in 0..3 {
                img[3 * i + c] = cov * l.radiance[3 * i + c] + (T::one() - cov) * bg[c];
            }
        }
        img
    };
    let aa = match opts.aa {
        AaMode::Analytic => Some(antialias(&mut image, 3, &layers[0].raster, &projected, &topo.faces)),
        _ => None,
    };
    Ok(Rendered {
        image,
        width: w,
        height: h,
        skinned,
        tessellated,
        positions,
        normals,
        tangents,
        projected,
        layers,
        aa,
        camera,
        light: *light,
    })
}

/// Reverse pass of [`render`]: accumulates `∂L/∂asset` given `∂L/∂image`.
pub fn render_backward<T: Real>(
    asset: &Asset<T>,
    topo: &Topology<T>,
    pose: Option<Pose<'_, T>>,
    opts: &RenderOptions<T>,
    out: &Rendered<T>,
    grad_image: &[T],
    grads: &mut AssetGrad<T>,
) -> Result<()> {
    let (w, h) = (out.width, out.height);
    let np = w * h;
    let nv = out.positions.len();
    let mut g_ndc = vec![T::zero(); nv];
    let mut g_img = grad_image.to_vec();
    if let Some(tape) = &out.aa {
        antialias_backward(tape, 3, &out.layers[0].raster, &out.projected, &mut g_img, &mut g_ndc);
    }

    // per-layer radiance and alpha gradients
    let (g_rad, g_alpha): (Vec<Vec<T>>, Vec<Vec<T>>) = if opts.layers > 1 {
        let background: Vec<T> = (0..np).flat_map(|_| opts.background).collect();
        let parts: Vec<(&[T], &[T])> = out.layers.iter().map(|l| (&l.radiance[..], &l.gbuffer.alpha[..])).collect();
        let (gc, ga, _) = blend_layers_backward(&parts, &background, &g_img);
        (gc, ga)
    } else {
        let l = &out.layers[0];
        let mut gr = vec![T::zero(); np * 3];
        for i in 0..np {
            let cov = match &l.raster.coverage {
                Some(c) => c[i],
                None if l.gbuffer.covered[i] => T::one(),
                None => T::zero(),
            };
            for c in 0..3 {
                gr[3 * i + c] = cov * g_img[3 * i + c];
            }
        }
        (vec![gr], vec![vec![T::zero(); np]])
    };

    let mat = &asset.material;
    let eye = out.camera.position();
    let eps = T::lit(FRAME_EPS);
    let mut g_pos = vec![T::zero(); nv];
    let mut g_nrm = vec![T::zero(); nv];
    let mut g_tan = vec![T::zero(); nv];
    let mut g_bit = vec![T::zero(); nv];
    let mut g_uv_vertices = vec![T::zero(); topo.uvs.len()];
    for ((layer, gr), ga) in out.layers.iter().zip(&g_rad).zip(&g_alpha) {
        let gs = shade_deferred_backward(&layer.gbuffer, &out.light, eye, mat.ambient, gr);
        let mut gp_px = vec![T::zero(); np * 3];
        let mut gn_px = vec![T::zero(); np * 3];
        let mut gt_px = vec![T::zero(); np * 3];
        let mut gb_px = vec![T::zero(); np * 3];
        let mut guv_px = vec![T::zero(); np * 2];
        for i in 0..np {
            if !layer.gbuffer.covered[i] {
                continue;
            }
            let g = &gs[i];
            let uv = layer.uv[i];
            let lod = layer.lod[i];
            let g_kd = [g.kd[0], g.kd[1], g.kd[2], ga[i]];
            mat.kd.scatter_grad(uv, lod[0], mat.wrap, &g_kd, &mut grads.kd);
            mat.orm.scatter_grad(uv, lod[1], mat.wrap, &g.orm, &mut grads.orm);
            let [n_raw, t_raw, b_raw] = layer.frame[i];
            let nm = layer.normal_map[i];
            let ng = normalize(n_raw, eps);
            let t = normalize(t_raw, eps).unwrap_or([T::zero(); 3]);
            let b = normalize(b_raw, eps).unwrap_or([T::zero(); 3]);
            let (g_ng, g_t, g_b, g_nm) =
                apply_normal_map_backward(ng.unwrap_or([T::zero(), T::zero(), T::one()]), t, b, nm, g.normal);
            mat.normal.scatter_grad(uv, lod[2], mat.wrap, &g_nm, &mut grads.normal);
            let mut g_uv = mat.kd.uv_gradient(uv, lod[0], mat.wrap, &g_kd);
            let g_uv_orm = mat.orm.uv_gradient(uv, lod[1], mat.wrap, &g.orm);
            let g_uv_nm = mat.normal.uv_gradient(uv, lod[2], mat.wrap, &g_nm);
            for k in 0..2 {
                g_uv[k] += g_uv_orm[k] + g_uv_nm[k];
            }
            let gn = if ng.is_some() { normalize_backward(n_raw, g_ng) } else { [T::zero(); 3] };
            let gt = if normalize(t_raw, eps).is_some() { normalize_backward(t_raw, g_t) } else { [T::zero(); 3] };
            let gb = if normalize(b_raw, eps).is_some() { normalize_backward(b_raw, g_b) } else { [T::zero(); 3] };
            for k in 0..3 {
                gp_px[3 * i + k] = g.position[k];
                gn_px[3 * i + k] = gn[k];
                gt_px[3 * i + k] = gt[k];
                gb_px[3 * i + k] = gb[k];
            }
            guv_px[2 * i] = g_uv[0];
            guv_px[2 * i + 1] = g_uv[1];
        }
        let r = &layer.raster;
        let mut g_bary = vec![[T::zero(); 2]; np];
        interpolate_backward(&out.positions, 3, &topo.faces, r, &gp_px, &mut g_pos, Some(&mut g_bary));
        interpolate_backward(&out.normals, 3, &topo.faces, r, &gn_px, &mut g_nrm, Some(&mut g_bary));
        interpolate_backward(&out.tangents.tangents, 3, &topo.faces, r, &gt_px, &mut g_tan, Some(&mut g_bary));
        interpolate_backward(&out.tangents.bitangents, 3, &topo.faces, r, &gb_px, &mut g_bit, Some(&mut g_bary));
        interpolate_backward(&topo.uvs, 2, &topo.uv_faces, r, &guv_px, &mut g_uv_vertices, Some(&mut g_bary));
        barycentrics_backward(&out.projected, &topo.faces, r, &g_bary, &mut g_ndc);
    }

    project_backward(&out.camera, &out.projected, &g_ndc, &mut g_pos);
    tangent_frame_backward(&out.positions, &topo.faces, &topo.uvs, &topo.uv_faces, &out.normals, &g_tan, &g_bit, &mut g_pos, &mut g_nrm);
    vertex_normals_backward(&out.positions, &topo.faces, &g_nrm, &mut g_pos);

    let mut g_tess = match &mat.displacement {
        Some(map) => {
            let mut gt = vec![T::zero(); nv];
            let gd = grads.displacement.get_or_insert_with(|| vec![T::zero(); map.data.len()]);
            displace_backward(&out.tessellated, &topo.faces, &topo.vertex_uvs, map, mat.wrap, &g_pos, &mut gt, gd);
            gt
        }
        None => g_pos,
    };
    for s in topo.steps.iter().rev() {
        let mut coarse = vec![T::zero(); s.base_vertices * 3];
        s.backward(&g_tess, 3, &mut coarse);
        g_tess = coarse;
    }
    match (pose, &asset.mesh.skin) {
        (Some(p), Some(sk)) => {
            let gl = grads.skin_logits.get_or_insert_with(|| vec![T::zero(); sk.values.len()]);
            skin_backward(&asset.mesh.positions, &sk.values, p.bones, p.frame, &g_tess, &mut grads.positions, gl)?;
        }
        _ => {
            for (a, b) in grads.positions.iter_mut().zip(&g_tess) {
                *a += *b;
            }
        }
    }
    Ok(())
}

/// Box-filters a `(k·W)×(k·H)` image down by `k`.
pub fn downsample_box<T: Real>(image: &[T], width: usize, height: usize, k: usize) -> Vec<T> {
    let (fw, fh) = (width * k, height * k);
    debug_assert_eq!(image.len(), fw * fh * 3);
    let inv = T::one() / T::from_usize_lossy(k * k);
    let mut out = vec![T::zero(); width * height * 3];
    for y in 0..fh {
        for x in 0..fw {
            let o = 3 * ((y / k) * width + x / k);
            for c in 0..3 {
                out[o + c] += image[3 * (y * fw + x) + c];
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

/// Renders on a `k×k` ordered sample grid per pixel and box filters,
/// where `samples = k²`. No gradients are recorded.
pub fn render_supersampled<T: Real>(
    asset: &Asset<T>,
    topo: &Topology<T>,
    camera: &Camera<T>,
    light: &PointLight<T>,
    pose: Option<Pose<'_, T>>,
    opts: &RenderOptions<T>,
    samples: usize,
) -> Result<Vec<T>> {
    let k = (samples as f64).sqrt().round() as usize;
    if k == 0 || k * k != samples {
        return Err(Error::Config(format!("supersample count {samples} is not a square")));
    }
    let hi = RenderOptions {
        width: opts.width * k,
        height: opts.height * k,
        aa: if k == 1 { opts.aa } else { AaMode::None },
        ..opts.clone()
    };
    let r = render(asset, topo, camera, light, pose, &hi)?;
    Ok(if k == 1 { r.image } else { downsample_box(&r.image, opts.width, opts.height, k) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::{fd_check, SigStage};
    use crate::geometry::primitives;
    use crate::raster::{Texture, WrapMode};

    fn asset() -> Asset<f64> {
        let mesh = primitives::uv_sphere::<f64>(12, 8, 1.0);
        let mut material = Material::uniform([0.6, 0.5, 0.4, 1.0], [0.0, 0.5, 0.0], 8);
        let nm: Vec<f64> = (0..64).flat_map(|i| [0.5 + 0.1 * (i as f64).sin(), 0.5 + 0.1 * (i as f64 * 0.7).cos(), 0.95]).collect();
        material.normal = TexturePyramid::from_base(Texture::new(8, 8, 3, nm).unwrap(), false);
        Asset { mesh, material, subdivisions: 0 }
    }

    // frames the equatorial band and the right silhouette; the tangent frame
    // is singular at the uv poles, which stay out of view
    fn cam() -> Camera<f64> {
        Camera::look_at([1.2, 0.1, 3.2], [0.8, 0.0, 0.0], [0.0, 1.0, 0.0], 0.35, 0.5, 10.0, 24, 24).unwrap()
    }

    fn light() -> PointLight<f64> {
        PointLight::new([2.0, 2.5, 3.0], [12.0, 11.0, 10.0]).unwrap()
    }

    #[test]
    fn supersample_one_matches_plain_render() {
        let a = asset();
        let t = Topology::new(&a.mesh, 0).unwrap();
        let o = RenderOptions::new(24, 24);
        let r = render(&a, &t, &cam(), &light(), None, &o).unwrap();
        let s = render_supersampled(&a, &t, &cam(), &light(), None, &o, 1).unwrap();
        assert_eq!(r.image, s);
        assert!(render_supersampled(&a, &t, &cam(), &light(), None, &o, 3).is_err());
    }

    #[test]
    fn sphere_covers_centre() {
        let a = asset();
        let t = Topology::new(&a.mesh, 1).unwrap();
        let r = render(&a, &t, &cam(), &light(), None, &RenderOptions::new(24, 24)).unwrap();
        let c = 12 * 24 + 12;
        assert!(r.layers[0].gbuffer.covered[c]);
        assert!(r.image[3 * c] > 0.0);
        assert!(!r.layers[0].gbuffer.covered[23]);
        assert_eq!(&r.image[69..72], &[0.0; 3]);
    }

    fn check_positions(opts: RenderOptions<f64>, subdivisions: usize, tol: f64) {
        let a = asset();
        let t = Topology::new(&a.mesh, subdivisions).unwrap();
        let run = {
            let (a, t, o) = (a.clone(), t.clone(), opts.clone());
            move |x: &[f64]| {
                let mut a = a.clone();
                a.mesh.positions = x.to_vec();
                render(&a, &t, &cam(), &light(), None, &o).unwrap()
            }
        };
        let (r1, r2, r3) = (run.clone(), run.clone(), run);
        let (a2, t2, o2) = (a.clone(), t.clone(), opts.clone());
        let stage = SigStage {
            forward: move |x: &[f64]| r1(x).image,
            backward: move |x: &[f64], g: &[f64], gi: &mut [f64]| {
                let mut a = a2.clone();
                a.mesh.positions = x.to_vec();
                let out = r2(x);
                let mut grads = AssetGrad::zeros(&a);
                render_backward(&a, &t2, None, &o2, &out, g, &mut grads).unwrap();
                for (d, s) in gi.iter_mut().zip(&grads.positions) {
                    *d += *s;
                }
            },
            signature: move |x: &[f64]| {
                let out = r3(x);
                let mut s: Vec<i64> = out.layers.iter().flat_map(|l| l.raster.triangle_id.iter().map(|&i| i as i64)).collect();
                if let Some(tape) = &out.aa {
                    s.extend(tape.signature());
                }
                s
            },
        };
        let rep = fd_check(&stage, &a.mesh.positions, 1e-6, 60).unwrap();
        assert!(rep.errors.len() > 20, "{rep:?}");
        assert!(rep.passes(tol, 0.95), "{rep:?}");
    }

    #[test]
    fn position_gradient_plain() {
        let mut o = RenderOptions::new(24, 24);
        o.aa = AaMode::None;
        check_positions(o, 0, 1e-4);
    }

    #[test]
    fn position_gradient_analytic_aa_subdivided() {
        check_positions(RenderOptions::new(24, 24), 1, 1e-4);
    }

    #[test]
    fn position_gradient_msaa() {
        let mut o = RenderOptions::new(24, 24);
        o.aa = AaMode::Msaa(4);
        check_positions(o, 0, 1e-4);
    }

    #[test]
    fn texture_gradient_matches_fd() {
        let a = asset();
        let t = Topology::new(&a.mesh, 0).unwrap();
        let o = RenderOptions::new(24, 24);
        let n_kd = a.material.kd.base().data.len();
        let n_nm = a.material.normal.base().data.len();
        let set = {
            let a = a.clone();
            move |x: &[f64]| {
                let mut a = a.clone();
                a.material.kd = TexturePyramid::from_base(Texture::new(8, 8, 4, x[..n_kd].to_vec()).unwrap(), false);
                a.material.normal = TexturePyramid::from_base(Texture::new(8, 8, 3, x[n_kd..n_kd + n_nm].to_vec()).unwrap(), false);
                a.material.orm = TexturePyramid::from_base(Texture::new(8, 8, 3, x[n_kd + n_nm..].to_vec()).unwrap(), false);
                a
            }
        };
        let (s1, s2) = (set.clone(), set);
        let (t1, t2, o1, o2) = (t.clone(), t, o.clone(), o);
        let stage = crate::adjoint::FnStage {
            forward: move |x: &[f64]| render(&s1(x), &t1, &cam(), &light(), None, &o1).unwrap().image,
            backward: move |x: &[f64], g: &[f64], gi: &mut [f64]| {
                let a = s2(x);
                let out = render(&a, &t2, &cam(), &light(), None, &o2).unwrap();
                let mut grads = AssetGrad::zeros(&a);
                render_backward(&a, &t2, None, &o2, &out, g, &mut grads).unwrap();
                a.material.kd.reduce_grad(&mut grads.kd);
                a.material.normal.reduce_grad(&mut grads.normal);
                a.material.orm.reduce_grad(&mut grads.orm);
                let all = grads.kd.levels[0].iter().chain(&grads.normal.levels[0]).chain(&grads.orm.levels[0]);
                for (d, s) in gi.iter_mut().zip(all) {
                    *d += *s;
                }
            },
        };
        let mut x = a.material.kd.base().data.clone();
        x.extend(&a.material.normal.base().data);
        x.extend((0..64).flat_map(|i| [0.1, 0.3 + 0.2 * (i as f64 * 0.3).sin().abs(), 0.2]));
        let rep = fd_check(&stage, &x, 1e-6, 120).unwrap();
        assert!(rep.passes(1e-4, 0.95), "{rep:?}");
    }

    #[test]
    fn displacement_gradient_matches_fd() {
        let mut a = asset();
        a.material.displacement = Some(Texture::new(4, 4, 1, (0..16).map(|i| 0.02 * (i as f64).cos()).collect()).unwrap());
        let t = Topology::new(&a.mesh, 1).unwrap();
        let mut o = RenderOptions::new(24, 24);
        o.aa = AaMode::None;
        let set = {
            let a = a.clone();
            move |x: &[f64]| {
                let mut a = a.clone();
                a.material.displacement = Some(Texture::new(4, 4, 1, x.to_vec()).unwrap());
                a
            }
        };
        let (s1, s2, s3) = (set.clone(), set.clone(), set);
        let (t1, t2, t3, o1, o2, o3) = (t.clone(), t.clone(), t, o.clone(), o.clone(), o);
        let stage = SigStage {
            forward: move |x: &[f64]| render(&s1(x), &t1, &cam(), &light(), None, &o1).unwrap().image,
            backward: move |x: &[f64], g: &[f64], gi: &mut [f64]| {
                let a = s2(x);
                let out = render(&a, &t2, &cam(), &light(), None, &o2).unwrap();
                let mut grads = AssetGrad::zeros(&a);
                render_backward(&a, &t2, None, &o2, &out, g, &mut grads).unwrap();
                for (d, s) in gi.iter_mut().zip(grads.displacement.unwrap()) {
                    *d += s;
                }
            },
            signature: move |x: &[f64]| {
                render(&s3(x), &t3, &cam(), &light(), None, &o3).unwrap().layers[0].raster.triangle_id.iter().map(|&i| i as i64).collect()
            },
        };
        let x = a.material.displacement.as_ref().unwrap().data.clone();
        let rep = fd_check(&stage, &x, 1e-6, 16).unwrap();
        assert!(rep.passes(1e-4, 0.95), "{rep:?}");
        let _ = WrapMode::Clamp;
    }
}
