use appear::geometry::{primitives, BoneSet, SkinLogits};
use appear::geometry::displace::sample_displacement;
use appear::optimize::{fit, fit_prefilter, loss_trend_decreases, log_csv, FitConfig, Fitter, LearnFlags};
use appear::raster::{Camera, Texture, TexturePyramid};
use appear::reference::{InternalProvider, ReferenceProvider, ViewRequest};
use appear::render::Asset;
use appear::scene_io::checkpoint::{decode_snapshot, encode_snapshot};
use appear::shading::{Material, PointLight};
use appear::{Error, Result};

fn sphere(segments: usize, rings: usize, radius: f64, kd: [f64; 4]) -> Asset<f64> {
    Asset {
        mesh: primitives::uv_sphere(segments, rings, radius),
        material: Material::uniform(kd, [0.0, 0.5, 0.0], 8),
        subdivisions: 0,
    }
}

fn only(f: impl FnOnce(&mut LearnFlags)) -> LearnFlags {
    let mut l = LearnFlags { positions: false, skin_logits: false, kd: false, orm: false, normal_map: false, displacement: false };
    f(&mut l);
    l
}

fn small_config(iterations: usize, resolution: usize) -> FitConfig {
    FitConfig { iterations, resolution: [resolution, resolution], lambda: Some(1.0), ..FitConfig::default() }
}

#[test]
fn self_reference_is_a_fixed_point() {
    let asset = sphere(16, 10, 1.0, [0.6, 0.45, 0.3, 1.0]);
    let provider = InternalProvider::new(asset.clone(), None, 1).unwrap();
    let mut f = Fitter::new(asset, LearnFlags::default(), None, &provider, small_config(100, 48)).unwrap();
    let before = f.latent().registry.clone();
    f.run(|_| Ok(())).unwrap();
    assert!(f.log()[0].l_image < 1e-6, "{}", f.log()[0].l_image);
    let mut drift = 0.0f64;
    for (a, b) in before.iter().zip(f.latent().registry.iter()) {
        for (x, y) in a.values.iter().zip(&b.values) {
            drift = drift.max((x - y).abs());
        }
    }
    assert!(drift < 1e-4, "drift {drift}");
}

#[test]
fn displacement_recovers_the_radius_offset() {
    let mut latent = sphere(32, 16, 1.0, [0.6, 0.6, 0.6, 1.0]);
    latent.material.displacement = Some(Texture::constant(16, 16, &[0.0]));
    let reference = sphere(32, 16, 1.1, [0.6, 0.6, 0.6, 1.0]);
    let provider = InternalProvider::new(reference, None, 1).unwrap();
    let config = FitConfig { iterations: 300, resolution: [128, 128], ..FitConfig::default() };
    let result = fit(latent, only(|l| l.displacement = true), None, &provider, config).unwrap();
    let m = &result.asset.mesh;
    let map = result.asset.material.displacement.as_ref().unwrap();
    let d = sample_displacement(&m.vertex_uvs(), map, result.asset.material.wrap);
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    assert!((mean - 0.1).abs() <= 0.02, "mean displacement {mean}");
}

/// A provider that serves a fixed list of conditions, rendered by an inner
/// supersampling provider.
struct FixedViews {
    inner: InternalProvider,
    views: Vec<(Camera<f64>, PointLight<f64>)>,
}

impl ReferenceProvider for FixedViews {
    fn record_count(&self) -> Option<usize> {
        Some(self.views.len())
    }

    fn record(&self, index: usize) -> Result<(Camera<f64>, PointLight<f64>)> {
        self.views.get(index).cloned().ok_or_else(|| Error::Reference(format!("no record {index}")))
    }

    fn fetch(&self, r: &ViewRequest<'_>) -> Result<Vec<f64>> {
        self.inner.fetch(r)
    }
}

fn checker(size: usize) -> Texture<f64> {
    let mut data = Vec::with_capacity(size * size * 4);
    for y in 0..size {
        for x in 0..size {
            let v = ((x + y) % 2) as f64;
            data.extend([v, v, v, 1.0]);
        }
    }
    Texture::new(size, size, 4, data).unwrap()
}

/// Head-on camera whose frame is exactly the unit quad.
fn frontal(resolution: usize) -> (Camera<f64>, PointLight<f64>) {
    let d = 4.0;
    let fov = 2.0 * (1.0f64 / d).atan();
    let cam = Camera::look_at([0.0, 0.0, d], [0.0; 3], [0.0, 1.0, 0.0], fov, 0.5, 10.0, resolution, resolution).unwrap();
    (cam, PointLight::new([0.3, 0.2, 3.0], [9.0; 3]).unwrap())
}

#[test]
fn prefiltering_converges_to_the_checker_mean() {
    let size = 64;
    let target = size / 8;
    let material = |kd: TexturePyramid<f64>| Material { kd, ..Material::uniform([0.0; 4], [1.0, 0.5, 0.0], 4) };
    let reference = Asset {
        mesh: primitives::quad(1.0),
        material: material(TexturePyramid::from_base(checker(size), false)),
        subdivisions: 0,
    };
    let provider = FixedViews { inner: InternalProvider::new(reference, None, 16).unwrap(), views: vec![frontal(target)] };

    let mut kd = TexturePyramid::from_base(checker(size), true);
    for (l, level) in kd.levels.iter_mut().enumerate() {
        if l >= 2 {
            level.data.chunks_exact_mut(4).for_each(|t| t[..3].fill(0.2));
        }
    }
    let initial = kd.clone();
    let latent = Asset { mesh: primitives::quad(1.0), material: material(kd), subdivisions: 0 };
    let config = FitConfig { iterations: 500, ..FitConfig::default() };
    let result = fit_prefilter(latent, only(|l| l.kd = true), None, &provider, config, &[[target, target]]).unwrap();

    let levels = &result.asset.material.kd.levels;
    let coarse = &levels[3];
    assert_eq!(coarse.width, target);
    for t in coarse.data.chunks_exact(4) {
        for c in &t[..3] {
            assert!((c - 0.5).abs() <= 0.05, "coarse texel {c}");
        }
    }
    for l in [0, 1, 5, 6] {
        assert_eq!(levels[l].data, initial.levels[l].data, "level {l} moved");
    }
}

fn moving_fit_setup() -> (Asset<f64>, InternalProvider, FitConfig) {
    let latent = sphere(12, 8, 1.0, [0.3, 0.3, 0.3, 1.0]);
    let reference = sphere(12, 8, 1.05, [0.8, 0.5, 0.2, 1.0]);
    let provider = InternalProvider::new(reference, None, 4).unwrap();
    let config = FitConfig { batch_size: 2, ..small_config(15, 32) };
    (latent, provider, config)
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let (latent, provider, config) = moving_fit_setup();
    let learn = LearnFlags::default();
    let mut whole = Fitter::new(latent.clone(), learn, None, &provider, config.clone()).unwrap();
    whole.run(|_| Ok(())).unwrap();

    let mut first = Fitter::new(latent.clone(), learn, None, &provider, config.clone()).unwrap();
    for _ in 0..5 {
        first.step().unwrap();
    }
    let saved = decode_snapshot(&encode_snapshot(&first.snapshot())).unwrap();
    drop(first);
    let mut resumed = Fitter::new(latent, learn, None, &provider, config).unwrap();
    resumed.resume(&saved).unwrap();
    resumed.run(|_| Ok(())).unwrap();

    assert_eq!(resumed.iteration(), 15);
    assert_eq!(resumed.snapshot(), whole.snapshot());
    assert_eq!(log_csv(resumed.log()), log_csv(whole.log()));
}

#[test]
fn resume_rejects_a_different_registry() {
    let (latent, provider, config) = moving_fit_setup();
    let mut f = Fitter::new(latent.clone(), LearnFlags::default(), None, &provider, config.clone()).unwrap();
    f.step().unwrap();
    let mut snap = f.snapshot();
    let other = sphere(10, 8, 1.0, [0.3, 0.3, 0.3, 1.0]);
    let mut g = Fitter::new(other, LearnFlags::default(), None, &provider, config.clone()).unwrap();
    assert!(matches!(g.resume(&snap), Err(Error::Checkpoint(_))));
    snap.params[0].shape.push(1);
    let mut h = Fitter::new(latent, LearnFlags::default(), None, &provider, config).unwrap();
    assert!(matches!(h.resume(&snap), Err(Error::Checkpoint(_))));
}

#[test]
fn seeded_fits_are_bit_identical() {
    let (latent, provider, config) = moving_fit_setup();
    let a = fit(latent.clone(), LearnFlags::default(), None, &provider, config.clone()).unwrap();
    let b = fit(latent.clone(), LearnFlags::default(), None, &provider, config.clone()).unwrap();
    assert_eq!(log_csv(&a.log), log_csv(&b.log));
    assert_eq!(a.asset.mesh.positions, b.asset.mesh.positions);
    assert_eq!(a.asset.material.kd.levels, b.asset.material.kd.levels);
    let other = fit(latent, LearnFlags::default(), None, &provider, FitConfig { seed: 1, ..config }).unwrap();
    assert_ne!(log_csv(&a.log), log_csv(&other.log));
}

#[test]
fn identity_bones_reduce_to_the_static_fit() {
    let (latent, provider, config) = moving_fit_setup();
    let config = FitConfig { iterations: 1, ..config };
    let learn = only(|l| {
        l.positions = true;
        l.kd = true;
    });
    let mut skinned = latent.clone();
    let v = skinned.mesh.vertex_count();
    skinned.mesh.skin = Some(SkinLogits { bones: 3, values: (0..3 * v).map(|i| (i % 5) as f64 * 0.3).collect() });
    let bones = BoneSet::identity(3, 4);
    let animated = FitConfig { frames: Some(vec![0, 1, 2, 3]), ..config.clone() };
    let a = fit(skinned, learn, Some(&bones), &provider, animated).unwrap();
    let s = fit(latent, learn, None, &provider, config).unwrap();

    assert!((a.log[0].l_image - s.log[0].l_image).abs() <= 1e-12 * s.log[0].l_image);
    // one Adam step from identical gradients lands on identical values
    for (x, y) in a.asset.mesh.positions.iter().zip(&s.asset.mesh.positions) {
        assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
    }
    for (x, y) in a.asset.material.kd.base().data.iter().zip(&s.asset.material.kd.base().data) {
        assert!((x - y).abs() <= 1e-9);
    }
}

#[test]
fn image_loss_trends_down_on_a_material_fit() {
    let latent = sphere(12, 8, 1.0, [0.1, 0.1, 0.1, 1.0]);
    let reference = sphere(12, 8, 1.0, [0.8, 0.5, 0.2, 1.0]);
    let provider = InternalProvider::new(reference, None, 1).unwrap();
    let config = FitConfig { lr_0: 0.03, ..small_config(100, 32) };
    let r = fit(latent, only(|l| l.kd = true), None, &provider, config).unwrap();
    assert!(loss_trend_decreases(&r.log));
    assert!(r.log.last().unwrap().l_image < 0.2 * r.log[0].l_image);
}
