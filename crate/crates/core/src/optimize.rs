//! The fitting loop: view and light sampling, batched renders of the latent
//! asset against reference images, Adam updates, and the regularization and
//! learning-rate schedules.
//!
//! Fitting runs in `f64`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{Constraint, Init, ParamId, Registry};
use crate::error::{Error, Result};
use crate::geometry::{laplacian_loss, laplacian_loss_backward, uniform_laplacian, BoneSet, LaplacianMode, Neighbors};
use crate::linalg::{add, cross, dot, norm, scale, sub, Vec3};
use crate::loss::{image_loss, image_loss_backward, init_lambda, LossKind, ScheduleState};
use crate::raster::{Camera, PyramidGrad, TexturePyramid};
use crate::reference::{ReferenceProvider, ViewRequest};
use crate::render::{render, render_backward, AaMode, Asset, AssetGrad, Pose, RenderOptions, Topology};
use crate::scalar::Real;
use crate::shading::{PointLight, R_MIN};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const MAX_BATCH: usize = 8;

/// Camera and light distributions. Distances are in bounding-sphere radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub distance: [f64; 2],
    /// Vertical field of view range in radians.
    pub fov: [f64; 2],
    pub light_distance: [f64; 2],
    /// Irradiance range at the bounding-sphere centre; the light's intensity
    /// is this times its squared distance.
    pub irradiance: [f64; 2],
    /// Overrides the bounding sphere of the initial latent mesh.
    pub center: Option<[f64; 3]>,
    pub radius: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            distance: [2.5, 3.5],
            fov: [0.8, 0.8],
            light_distance: [2.0, 4.0],
            irradiance: [2.0, 4.0],
            center: None,
            radius: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, r: [f64; 2], min: f64| {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] > min && r[0] <= r[1]) {
                return Err(Error::Config(format!("sampler {name} range {r:?} is empty or out of bounds")));
            }
            Ok(())
        };
        range("distance", self.distance, 0.0)?;
        range("light_distance", self.light_distance, 0.0)?;
        range("irradiance", self.irradiance, -f64::MIN_POSITIVE)?;
        range("fov", self.fov, 0.0)?;
        if self.fov[1] >= std::f64::consts::PI {
            return Err(Error::Config(format!("field of view {} must be below pi", self.fov[1])));
        }
        if let Some(r) = self.radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("sampler radius {r}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub iterations: usize,
    /// Width and height.
    pub resolution: [usize; 2],
    pub batch_size: usize,
    pub lr_0: f64,
    /// Overrides the λ_0 heuristic.
    pub lambda: Option<f64>,
    pub laplacian: LaplacianMode,
    pub loss: LossKind,
    pub aa: AaMode,
    /// Depth-peeling passes.
    pub layers: usize,
    /// Trilinear texture lookups.
    pub mip: bool,
    pub background: [f64; 3],
    pub sampler: SamplerConfig,
    pub seed: u64,
    /// Animation frames to draw from; requires a skinned mesh and bones.
    pub frames: Option<Vec<usize>>,
    /// Iterations between checkpoints; 0 writes only the final state.
    pub checkpoint_every: usize,
    /// Record wall-clock time in the log.
    pub timing: bool,
    /// Target resolutions for prefiltering; empty for a plain fit.
    pub prefilter: Vec<[usize; 2]>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            resolution: [256, 256],
            batch_size: 1,
            lr_0: 0.01,
            lambda: None,
            laplacian: LaplacianMode::Relative,
            loss: LossKind::L1Tonemapped,
            aa: AaMode::Analytic,
            layers: 1,
            mip: false,
            background: [0.0; 3],
            sampler: SamplerConfig::default(),
            seed: 0x5eed,
            frames: None,
            checkpoint_every: 0,
            timing: false,
            prefilter: Vec::new(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_BATCH).contains(&self.batch_size) {
            return Err(Error::Config(format!("batch_size {} must be between 1 and {MAX_BATCH}", self.batch_size)));
        }
        if !(self.lr_0 > 0.0 && self.lr_0.is_finite()) {
            return Err(Error::Config(format!("lr_0 {} must be positive", self.lr_0)));
        }
        if let Some(f) = &self.frames {
            if f.is_empty() {
                return Err(Error::Config("animation frame list is empty".into()));
            }
        }
        if self.prefilter.iter().any(|r| r[0] == 0 || r[1] == 0) {
            return Err(Error::Config("prefilter resolutions must be positive".into()));
        }
        self.sampler.validate()?;
        self.render_options(self.resolution).validate()
    }

    pub fn render_options(&self, resolution: [usize; 2]) -> RenderOptions<f64> {
        RenderOptions {
            width: resolution[0],
            height: resolution[1],
            aa: self.aa,
            layers: self.layers,
            background: self.background,
            mip: self.mip || !self.prefilter.is_empty(),
        }
    }
}

/// Components of the latent asset that receive updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnFlags {
    pub positions: bool,
    pub skin_logits: bool,
    pub kd: bool,
    pub orm: bool,
    pub normal_map: bool,
    pub displacement: bool,
}

impl Default for LearnFlags {
    fn default() -> Self {
        Self { positions: true, skin_logits: true, kd: true, orm: true, normal_map: true, displacement: true }
    }
}

/// Generator for the draws of `(iteration, slot)`; slots below
/// [`MAX_BATCH`] are batch items.
pub fn view_rng(seed: u64, iteration: u64, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration.wrapping_mul(16).wrapping_add(slot));
    rng
}

const ITERATION_SLOT: u64 = 15;

fn unit_vector<R: Rng>(rng: &mut R) -> Vec3<f64> {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        // still consume a draw so streams stay aligned across configs
        let _: f64 = rng.gen();
        r[0]
    } else {
        rng.gen_range(r[0]..r[1])
    }
}

/// Bounding sphere of a point set: box centre and farthest point.
pub fn bounding_sphere(positions: &[f64]) -> ([f64; 3], f64) {
    let (lo, hi) = crate::geometry::mesh::bounds(positions);
    let c = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0];
    let r = positions.chunks_exact(3).map(|p| norm(sub([p[0], p[1], p[2]], c))).fold(0.0, f64::max);
    (c, r)
}

/// Random camera on a shell around `center` looking at it with a random roll,
/// and a point light on an independent shell.
pub fn sample_view<R: Rng>(
    rng: &mut R,
    sampler: &SamplerConfig,
    center: Vec3<f64>,
    radius: f64,
    width: usize,
    height: usize,
) -> Result<(Camera<f64>, PointLight<f64>)> {
    let dir = unit_vector(rng);
    let dist = uniform(rng, sampler.distance) * radius;
    let roll: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let fov = uniform(rng, sampler.fov);
    let eye = add(center, scale(dir, dist));
    let a = if dir[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let a = sub(a, scale(dir, dot(a, dir)));
    let a = scale(a, 1.0 / norm(a));
    let b = cross(dir, a);
    let up = add(scale(a, roll.cos()), scale(b, roll.sin()));
    let camera = Camera::look_at(eye, center, up, fov, 0.05 * radius, dist + 20.0 * radius, width, height)?;

    let ldir = unit_vector(rng);
    let ldist = uniform(rng, sampler.light_distance) * radius;
    let e = uniform(rng, sampler.irradiance);
    let light = PointLight::new(add(center, scale(ldir, ldist)), [e * ldist * ldist; 3])?;
    Ok((camera, light))
}

/// Adam moments for every tensor of a registry.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(registry: &Registry<T>) -> Self {
        let zeros = || registry.iter().map(|p| vec![T::zero(); p.len()]).collect();
        Self { beta1: BETA1, beta2: BETA2, eps: ADAM_EPS, step: 0, m: zeros(), v: zeros() }
    }

    /// Bias-corrected Adam update of every learnable tensor, followed by its
    /// constraint projection. Fails before touching anything if a learnable
    /// gradient is not finite.
    pub fn step(&mut self, registry: &mut Registry<T>, lr: f64) -> Result<()> {
        if let Some(p) = registry.iter().find(|p| p.learnable && p.grad.iter().any(|g| !g.is_finite())) {
            return Err(Error::NonFinite(format!("gradient of `{}`", p.name)));
        }
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let bc1 = T::one() - b1.powi(self.step as i32);
        let bc2 = T::one() - b2.powi(self.step as i32);
        let (lr, eps) = (T::lit(lr), T::lit(self.eps));
        for ((p, m), v) in registry.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.learnable {
                continue;
            }
            for i in 0..p.values.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.values[i] -= lr * mh / (vh.sqrt() + eps);
            }
            p.project();
        }
        Ok(())
    }
}

pub fn adam_step<T: Real>(registry: &mut Registry<T>, state: &mut AdamState<T>, lr: f64) -> Result<()> {
    state.step(registry, lr)
}

#[derive(Debug, Clone)]
struct PyramidIds {
    ids: Vec<ParamId>,
}

/// The latent asset together with the registry of its optimized tensors.
#[derive(Debug, Clone)]
pub struct Latent {
    pub asset: Asset<f64>,
    pub registry: Registry<f64>,
    positions: ParamId,
    skin: Option<ParamId>,
    kd: PyramidIds,
    orm: PyramidIds,
    normal: PyramidIds,
    displacement: Option<ParamId>,
}

fn register_pyramid(
    reg: &mut Registry<f64>,
    name: &str,
    p: &TexturePyramid<f64>,
    learnable: bool,
    constraint: Constraint,
) -> Result<PyramidIds> {
    let count = if p.independent_levels { p.level_count() } else { 1 };
    let mut ids = Vec::with_capacity(count);
    for (l, t) in p.levels.iter().take(count).enumerate() {
        let id = reg.register(&format!("{name}.{l}"), &[t.height, t.width, t.channels], Init::Values(t.data.clone()))?;
        reg.set_learnable(id, learnable);
        reg.set_constraint(id, constraint.clone());
        ids.push(id);
    }
    Ok(PyramidIds { ids })
}

impl Latent {
    pub fn new(asset: Asset<f64>, learn: LearnFlags) -> Result<Self> {
        let mut reg = Registry::new();
        let m = &asset.mesh;
        let positions = reg.register("positions", &[m.vertex_count(), 3], Init::Values(m.positions.clone()))?;
        reg.set_learnable(positions, learn.positions);
        let skin = match &m.skin {
            Some(s) => {
                let id = reg.register("skin_logits", &[m.vertex_count(), s.bones], Init::Values(s.values.clone()))?;
                reg.set_learnable(id, learn.skin_logits);
                Some(id)
            }
            None => None,
        };
        let mat = &asset.material;
        let unit = |c: usize| Constraint::PerChannel(vec![(0.0, 1.0); c]);
        let kd = register_pyramid(&mut reg, "kd", &mat.kd, learn.kd, unit(mat.kd.channels()))?;
        let orm_ranges = match mat.orm.channels() {
            3 => Constraint::PerChannel(vec![(0.0, 1.0), (R_MIN, 1.0), (0.0, 1.0)]),
            c => unit(c),
        };
        let orm = register_pyramid(&mut reg, "orm", &mat.orm, learn.orm, orm_ranges)?;
        let normal = register_pyramid(&mut reg, "normal", &mat.normal, learn.normal_map, unit(mat.normal.channels()))?;
        let displacement = match &mat.displacement {
            Some(d) => {
                let id = reg.register("displacement", &[d.height, d.width, d.channels], Init::Values(d.data.clone()))?;
                reg.set_learnable(id, learn.displacement);
                Some(id)
            }
            None => None,
        };
        let mut latent = Self { asset, registry: reg, positions, skin, kd, orm, normal, displacement };
        // bring initial values inside their constraints
        for p in latent.registry.iter_mut() {
            if p.learnable {
                p.project();
            }
        }
        latent.sync();
        Ok(latent)
    }

    pub fn positions_id(&self) -> ParamId {
        self.positions
    }

    /// Copies registry values into the asset and rebuilds derived mip levels.
    pub fn sync(&mut self) {
        let reg = &self.registry;
        let a = &mut self.asset;
        a.mesh.positions.copy_from_slice(reg.values(self.positions));
        if let (Some(id), Some(s)) = (self.skin, a.mesh.skin.as_mut()) {
            s.values.copy_from_slice(reg.values(id));
        }
        for (ids, p) in [(&self.kd, &mut a.material.kd), (&self.orm, &mut a.material.orm), (&self.normal, &mut a.material.normal)] {
            for (l, &id) in ids.ids.iter().enumerate() {
                p.levels[l].data.copy_from_slice(reg.values(id));
            }
            p.rebuild();
        }
        if let (Some(id), Some(d)) = (self.displacement, a.material.displacement.as_mut()) {
            d.data.copy_from_slice(reg.values(id));
        }
    }

    /// Adds `s · grads` to the registry gradients, folding derived mip levels
    /// into their base first.
    pub fn add_grads(&mut self, grads: &mut AssetGrad<f64>, s: f64) {
        let mat = &self.asset.material;
        mat.kd.reduce_grad(&mut grads.kd);
        mat.orm.reduce_grad(&mut grads.orm);
        mat.normal.reduce_grad(&mut grads.normal);
        let reg = &mut self.registry;
        let add = |dst: &mut [f64], src: &[f64]| dst.iter_mut().zip(src).for_each(|(d, &g)| *d += s * g);
        add(reg.grad_mut(self.positions), &grads.positions);
        if let (Some(id), Some(g)) = (self.skin, &grads.skin_logits) {
            add(reg.grad_mut(id), g);
        }
        for (ids, g) in [(&self.kd, &grads.kd), (&self.orm, &grads.orm), (&self.normal, &grads.normal)] {
            let g: &PyramidGrad<f64> = g;
            for (l, &id) in ids.ids.iter().enumerate() {
                add(reg.grad_mut(id), &g.levels[l]);
            }
        }
        if let (Some(id), Some(g)) = (self.displacement, &grads.displacement) {
            add(reg.grad_mut(id), g);
        }
    }
}

/// One row of the fit log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: u64,
    pub l_image: f64,
    pub l_lap: f64,
    pub lambda: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

pub const LOG_HEADER: &str = "iter,L_image,L_lap,lambda,lr,wall_ms";

impl LogRow {
    pub fn csv(&self) -> String {
        format!("{},{:e},{:e},{:e},{:e},{}", self.iter, self.l_image, self.l_lap, self.lambda, self.lr, self.wall_ms)
    }
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

/// Saved optimizer state of one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSnapshot {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Everything needed to resume a fit bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub iteration: u64,
    pub seed: u64,
    pub adam_step: u64,
    pub schedule: Option<ScheduleState>,
    pub center: [f64; 3],
    pub radius: f64,
    pub params: Vec<ParamSnapshot>,
    pub log: Vec<LogRow>,
}

/// A single draw of the conditions for one batch item.
#[derive(Debug, Clone)]
pub struct View {
    pub camera: Camera<f64>,
    pub light: PointLight<f64>,
    pub frame: Option<usize>,
    pub record: Option<usize>,
}

/// Stateful fit driver; [`fit`] and [`fit_prefilter`] wrap it.
pub struct Fitter<'a> {
    pub config: FitConfig,
    latent: Latent,
    topology: Topology<f64>,
    bones: Option<&'a BoneSet<f64>>,
    provider: &'a dyn ReferenceProvider,
    neighbors: Neighbors,
    initial_differentials: Option<Vec<f64>>,
    adam: AdamState<f64>,
    schedule: Option<ScheduleState>,
    center: [f64; 3],
    radius: f64,
    iteration: u64,
    log: Vec<LogRow>,
    started: Instant,
}

impl<'a> Fitter<'a> {
    pub fn new(
        asset: Asset<f64>,
        learn: LearnFlags,
        bones: Option<&'a BoneSet<f64>>,
        provider: &'a dyn ReferenceProvider,
        config: FitConfig,
    ) -> Result<Self> {
        config.validate()?;
        if config.frames.is_some() && (bones.is_none() || asset.mesh.skin.is_none()) {
            return Err(Error::Config("animation frames need a skinned mesh and bone transforms".into()));
        }
        if let (Some(frames), Some(b)) = (&config.frames, bones) {
            if let Some(&f) = frames.iter().find(|&&f| f >= b.frame_count()) {
                return Err(Error::FrameOutOfRange { frame: f, count: b.frame_count() });
            }
        }
        if !config.prefilter.is_empty() {
            let m = &asset.material;
            let dependent = [(&m.kd, learn.kd), (&m.orm, learn.orm), (&m.normal, learn.normal_map)]
                .iter()
                .any(|(p, learn)| *learn && !p.independent_levels);
            if dependent {
                return Err(Error::Config("prefiltering needs learnable pyramids with independent levels".into()));
            }
        }
        let topology = Topology::new(&asset.mesh, asset.subdivisions)?;
        let neighbors = Neighbors::from_faces(asset.mesh.vertex_count(), &asset.mesh.faces);
        let initial_differentials = match config.laplacian {
            LaplacianMode::Absolute => None,
            LaplacianMode::Relative => Some(
                asset
                    .mesh
                    .initial_differentials
                    .clone()
                    .unwrap_or_else(|| uniform_laplacian(&asset.mesh.positions, &neighbors)),
            ),
        };
        let (c, r) = bounding_sphere(&asset.mesh.positions);
        let center = config.sampler.center.unwrap_or(c);
        let radius = config.sampler.radius.unwrap_or(r);
        if !(radius > 0.0) {
            return Err(Error::Config("latent mesh has a zero bounding radius".into()));
        }
        let latent = Latent::new(asset, learn)?;
        let adam = AdamState::new(&latent.registry);
        Ok(Self {
            config,
            latent,
            topology,
            bones,
            provider,
            neighbors,
            initial_differentials,
            adam,
            schedule: None,
            center,
            radius,
            iteration: 0,
            log: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn asset(&self) -> &Asset<f64> {
        &self.latent.asset
    }

    pub fn latent(&self) -> &Latent {
        &self.latent
    }

    pub fn topology(&self) -> &Topology<f64> {
        &self.topology
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    pub fn schedule(&self) -> Option<&ScheduleState> {
        self.schedule.as_ref()
    }

    pub fn bounding_sphere(&self) -> ([f64; 3], f64) {
        (self.center, self.radius)
    }

    pub fn done(&self) -> bool {
        self.iteration >= self.config.iterations as u64
    }

    /// Resolution used at `iteration`: drawn from the prefilter list, or the
    /// configured one.
    pub fn resolution_at(&self, iteration: u64) -> [usize; 2] {
        let list = &self.config.prefilter;
        if list.is_empty() {
            return self.config.resolution;
        }
        let mut rng = view_rng(self.config.seed, iteration, ITERATION_SLOT);
        list[rng.gen_range(0..list.len())]
    }

    /// Conditions for batch item `slot` of `iteration`.
    pub fn view_at(&self, iteration: u64, slot: u64, resolution: [usize; 2]) -> Result<View> {
        let mut rng = view_rng(self.config.seed, iteration, slot);
        let [w, h] = resolution;
        let (camera, light, record) = match self.provider.record_count() {
            Some(n) => {
                let i = rng.gen_range(0..n);
                let (c, l) = self.provider.record(i)?;
                (c.with_resolution(w, h), l, Some(i))
            }
            None => {
                let (c, l) = sample_view(&mut rng, &self.config.sampler, self.center, self.radius, w, h)?;
                (c, l, None)
            }
        };
        let frame = self.config.frames.as_ref().map(|f| f[rng.gen_range(0..f.len())]);
        Ok(View { camera, light, frame, record })
    }

    /// A fixed view used for previews.
    pub fn preview_view(&self) -> Result<View> {
        self.view_at(u64::MAX / 16, 0, self.config.resolution)
    }

    fn pose(&self, frame: Option<usize>) -> Option<Pose<'a, f64>> {
        match (frame, self.bones) {
            (Some(f), Some(b)) => Some(Pose { bones: b, frame: f }),
            _ => None,
        }
    }

    /// Renders the current latent for `view`.
    pub fn render_view(&self, view: &View, resolution: [usize; 2]) -> Result<Vec<f64>> {
        let opts = self.config.render_options(resolution);
        let asset = &self.latent.asset;
        Ok(render(asset, &self.topology, &view.camera, &view.light, self.pose(view.frame), &opts)?.image)
    }

    /// Fetches the reference image for `view`.
    pub fn reference_view(&self, view: &View, resolution: [usize; 2]) -> Result<Vec<f64>> {
        let opts = self.config.render_options(resolution);
        let req = ViewRequest { camera: &view.camera, light: &view.light, options: &opts, frame: view.frame, record: view.record };
        self.provider.fetch(&req)
    }

    fn batch_item(&self, iteration: u64, slot: u64, resolution: [usize; 2]) -> Result<(f64, AssetGrad<f64>)> {
        let view = self.view_at(iteration, slot, resolution)?;
        let opts = self.config.render_options(resolution);
        let asset = &self.latent.asset;
        let pose = self.pose(view.frame);
        let out = render(asset, &self.topology, &view.camera, &view.light, pose, &opts)?;
        let req = ViewRequest { camera: &out.camera, light: &view.light, options: &opts, frame: view.frame, record: view.record };
        let reference = self.provider.fetch(&req)?;
        if reference.len() != out.image.len() {
            return Err(Error::Reference(format!(
                "reference has {} values, expected {}",
                reference.len(),
                out.image.len()
            )));
        }
        let loss = image_loss(self.config.loss, &out.image, &reference)?;
        let g = image_loss_backward(self.config.loss, &out.image, &reference)?;
        let mut grads = AssetGrad::zeros(asset);
        render_backward(asset, &self.topology, pose, &opts, &out, &g, &mut grads)?;
        Ok((loss, grads))
    }

    fn positions_learnable(&self) -> bool {
        self.latent.registry.get(self.latent.positions).learnable
    }

    /// Runs one iteration and returns its log row.
    pub fn step(&mut self) -> Result<LogRow> {
        let t = self.iteration;
        let resolution = self.resolution_at(t);
        let b = self.config.batch_size as u64;
        let items: Vec<Result<(f64, AssetGrad<f64>)>> =
            (0..b).into_par_iter().map(|slot| self.batch_item(t, slot, resolution)).collect();
        let mut items = items.into_iter().collect::<Result<Vec<_>>>()?;
        let inv_b = 1.0 / b as f64;
        let l_image = items.iter().map(|(l, _)| *l).sum::<f64>() * inv_b;
        let base = &self.latent.asset.mesh.positions;
        let diffs = self.initial_differentials.as_deref();
        let l_lap = laplacian_loss(base, &self.neighbors, self.config.laplacian, diffs)?;
        if !l_image.is_finite() || !l_lap.is_finite() {
            return Err(Error::NonFinite(format!("loss at iteration {t}")));
        }
        if self.schedule.is_none() {
            let lambda_0 = if self.positions_learnable() {
                init_lambda(l_image, l_lap, self.config.lambda)?.0
            } else {
                self.config.lambda.unwrap_or(0.0)
            };
            self.schedule = Some(ScheduleState::new(lambda_0, self.config.lr_0));
        }
        let schedule = self.schedule.as_ref().expect("initialized above");
        let (lambda, lr) = (schedule.lambda, schedule.lr());

        self.latent.registry.zero_grads();
        for (_, g) in items.iter_mut() {
            self.latent.add_grads(g, inv_b);
        }
        if lambda != 0.0 && self.positions_learnable() {
            let base = &self.latent.asset.mesh.positions;
            let gp = self.latent.registry.grad_mut(self.latent.positions);
            laplacian_loss_backward(base, &self.neighbors, self.config.laplacian, diffs, lambda, gp)?;
        }
        self.adam.step(&mut self.latent.registry, lr)?;
        self.latent.sync();
        self.schedule.as_mut().expect("initialized above").step();
        self.iteration += 1;
        let wall_ms = if self.config.timing { self.started.elapsed().as_millis() as f64 } else { 0.0 };
        let row = LogRow { iter: t, l_image, l_lap, lambda, lr, wall_ms };
        log::debug!("iter {t}: L_image {l_image:.6e} L_lap {l_lap:.6e}");
        self.log.push(row);
        Ok(row)
    }

    /// Runs to the configured iteration count. `hook` is called after every
    /// `checkpoint_every` iterations and once at the end.
    pub fn run(&mut self, mut hook: impl FnMut(&Fitter<'a>) -> Result<()>) -> Result<()> {
        let every = self.config.checkpoint_every as u64;
        while !self.done() {
            self.step()?;
            if every > 0 && self.iteration % every == 0 && !self.done() {
                hook(self)?;
            }
        }
        hook(self)
    }

    pub fn snapshot(&self) -> Snapshot {
        let params = self
            .latent
            .registry
            .iter()
            .enumerate()
            .map(|(i, p)| ParamSnapshot {
                name: p.name.clone(),
                shape: p.shape.clone(),
                values: p.values.clone(),
                m: self.adam.m[i].clone(),
                v: self.adam.v[i].clone(),
            })
            .collect();
        Snapshot {
            iteration: self.iteration,
            seed: self.config.seed,
            adam_step: self.adam.step,
            schedule: self.schedule,
            center: self.center,
            radius: self.radius,
            params,
            log: self.log.clone(),
        }
    }

    /// Restores a snapshot taken from a fit over the same scene.
    pub fn resume(&mut self, s: &Snapshot) -> Result<()> {
        let reg = &self.latent.registry;
        if s.params.len() != reg.len() {
            return Err(Error::Checkpoint(format!("{} tensors saved, {} registered", s.params.len(), reg.len())));
        }
        for (p, q) in reg.iter().zip(&s.params) {
            if p.name != q.name || p.shape != q.shape || q.values.len() != p.len() || q.m.len() != p.len() || q.v.len() != p.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {:?} does not match saved `{}` {:?}",
                    p.name, p.shape, q.name, q.shape
                )));
            }
        }
        if s.seed != self.config.seed {
            log::warn!("resuming seed {} with configured seed {}", s.seed, self.config.seed);
        }
        for (i, (p, q)) in self.latent.registry.iter_mut().zip(&s.params).enumerate() {
            p.values.copy_from_slice(&q.values);
            self.adam.m[i].copy_from_slice(&q.m);
            self.adam.v[i].copy_from_slice(&q.v);
        }
        self.adam.step = s.adam_step;
        self.schedule = s.schedule;
        self.center = s.center;
        self.radius = s.radius;
        self.iteration = s.iteration;
        self.log = s.log.clone();
        self.latent.sync();
        Ok(())
    }

    pub fn into_result(self) -> FitResult {
        FitResult { asset: self.latent.asset, log: self.log }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub asset: Asset<f64>,
    pub log: Vec<LogRow>,
}

/// Fits `asset` to the images served by `provider`.
pub fn fit(
    asset: Asset<f64>,
    learn: LearnFlags,
    bones: Option<&BoneSet<f64>>,
    provider: &dyn ReferenceProvider,
    config: FitConfig,
) -> Result<FitResult> {
    let mut f = Fitter::new(asset, learn, bones, provider, config)?;
    f.run(|_| Ok(()))?;
    Ok(f.into_result())
}

/// Prefiltering fit: each iteration draws one of `resolutions`, and the
/// latent (trilinear, independent mip levels) is matched against the
/// provider's supersampled reference at that resolution.
pub fn fit_prefilter(
    asset: Asset<f64>,
    learn: LearnFlags,
    bones: Option<&BoneSet<f64>>,
    provider: &dyn ReferenceProvider,
    mut config: FitConfig,
    resolutions: &[[usize; 2]],
) -> Result<FitResult> {
    if resolutions.is_empty() {
        return Err(Error::Config("prefiltering needs at least one target resolution".into()));
    }
    config.prefilter = resolutions.to_vec();
    fit(asset, learn, bones, provider, config)
}

/// Median of `values[a..b]`.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median image loss over the first 10% of a log exceeds that of the last 10%.
pub fn loss_trend_decreases(log: &[LogRow]) -> bool {
    let n = log.len();
    if n < 10 {
        return false;
    }
    let k = n / 10;
    let l: Vec<f64> = log.iter().map(|r| r.l_image).collect();
    median(&l[..k]) > median(&l[n - k..])
}
