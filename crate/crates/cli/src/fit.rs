//! `fit` and `bake`: runs a fit and writes logs, checkpoints and previews.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use appear::optimize::{log_csv, Fitter, LearnFlags, View};
use appear::reference::{ExternalProvider, InternalProvider, ReferenceProvider};
use appear::render::{render, Pose};
use appear::scene_io::{load_scene, read_snapshot, save_asset, write_snapshot, FitFile, ReferenceSpec, Scene};

use crate::views::{side_by_side, write_image, write_json, CameraSpec, LightSpec};
use crate::Failure;

pub struct FitArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub resume: Option<PathBuf>,
    /// Replaces the scene's learn flags.
    pub learn: Option<LearnFlags>,
}

/// Setup errors that mean the configuration itself is wrong.
fn setup(e: appear::Error) -> Failure {
    match e {
        appear::Error::Config(_) | appear::Error::Format { .. } | appear::Error::Parse { .. } => Failure::Usage(e.into()),
        e => Failure::Runtime(e.into()),
    }
}

fn resolve(root: &Path, p: &str) -> PathBuf {
    root.join(p)
}

pub fn checkpoint_dir(out: &Path, iteration: u64) -> PathBuf {
    out.join("checkpoints").join(format!("iter_{iteration:06}"))
}

pub fn preview_path(out: &Path, iteration: u64) -> PathBuf {
    out.join("previews").join(format!("iter_{iteration:06}.png"))
}

pub const STATE_FILE: &str = "state.bin";
pub const LOG_FILE: &str = "log.csv";

pub fn run(args: FitArgs) -> Result<(), Failure> {
    let file = FitFile::load(&args.config).map_err(setup)?;
    let root = args.config.parent().unwrap_or(Path::new("")).to_path_buf();
    let scene = load_scene(&resolve(&root, &file.scene)).map_err(setup)?;
    let provider: Box<dyn ReferenceProvider> = match &file.reference {
        ReferenceSpec::Internal { scene: s, samples } => {
            let r = load_scene(&resolve(&root, s)).map_err(setup)?;
            Box::new(InternalProvider::new(r.asset, r.bones, *samples).map_err(setup)?)
        }
        ReferenceSpec::External { manifest } => Box::new(ExternalProvider::open(&resolve(&root, manifest)).map_err(setup)?),
        ReferenceSpec::SelfReference => {
            Box::new(InternalProvider::new(scene.asset.clone(), scene.bones.clone(), 1).map_err(setup)?)
        }
    };
    let mut config = file.fit.clone();
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let learn = args.learn.unwrap_or(scene.learn);
    let Scene { asset, bones, .. } = scene;
    let mut fitter = Fitter::new(asset, learn, bones.as_ref(), provider.as_ref(), config).map_err(setup)?;
    if let Some(path) = &args.resume {
        let state = if path.is_dir() { path.join(STATE_FILE) } else { path.clone() };
        let snap = read_snapshot(&state).map_err(|e| Failure::Runtime(e.into()))?;
        fitter.resume(&snap).map_err(setup)?;
        log::info!("resumed at iteration {}", fitter.iteration());
    }

    let out = &args.out;
    std::fs::create_dir_all(out.join("previews")).context("creating output directory").map_err(Failure::Runtime)?;
    let preview = fitter.preview_view().map_err(|e| Failure::Runtime(e.into()))?;
    write_json(&out.join("preview_camera.json"), &CameraSpec::from_camera(&preview.camera)).map_err(Failure::Runtime)?;
    write_json(&out.join("preview_light.json"), &LightSpec::from_light(&preview.light)).map_err(Failure::Runtime)?;
    let reference = fitter.reference_view(&preview, fitter.config.resolution).map_err(|e| Failure::Runtime(e.into()))?;

    let mut hook_error: Option<anyhow::Error> = None;
    let result = fitter.run(|f| {
        checkpoint(f, out, &learn, bones.as_ref(), &preview, &reference).map_err(|e| {
            let msg = format!("{e:#}");
            hook_error = Some(e);
            appear::Error::Checkpoint(msg)
        })
    });
    if let Some(e) = hook_error {
        return Err(Failure::Runtime(e));
    }
    result.map_err(|e| Failure::Runtime(e.into()))?;

    let last = fitter.log().last().copied();
    let done = out.join("final");
    save_asset(&done, fitter.asset(), &learn).map_err(|e| Failure::Runtime(e.into()))?;
    write_snapshot(&done.join(STATE_FILE), &fitter.snapshot()).map_err(|e| Failure::Runtime(e.into()))?;
    if let Some(row) = last {
        println!("iterations {} final L_image {:e} L_lap {:e}", fitter.iteration(), row.l_image, row.l_lap);
    }
    Ok(())
}

fn checkpoint(
    f: &Fitter<'_>,
    out: &Path,
    learn: &LearnFlags,
    bones: Option<&appear::geometry::BoneSet<f64>>,
    preview: &View,
    reference: &[f64],
) -> Result<()> {
    let t = f.iteration();
    let dir = checkpoint_dir(out, t);
    let scene_path = save_asset(&dir, f.asset(), learn)?;
    write_snapshot(&dir.join(STATE_FILE), &f.snapshot())?;
    std::fs::write(out.join(LOG_FILE), log_csv(f.log()))?;

    // the preview shows the asset as reloaded from disk
    let saved = load_scene(&scene_path)?;
    let topo = appear::render::Topology::new(&saved.asset.mesh, saved.asset.subdivisions)?;
    let [w, h] = f.config.resolution;
    let opts = f.config.render_options([w, h]);
    let pose = match (preview.frame, bones) {
        (Some(frame), Some(b)) => Some(Pose { bones: b, frame }),
        _ => None,
    };
    let latent = render(&saved.asset, &topo, &preview.camera, &preview.light, pose, &opts)?.image;
    write_image(&preview_path(out, t), 2 * w, h, &side_by_side(w, h, &[&latent, reference]))?;
    if let Some(row) = f.log().last() {
        log::info!("checkpoint {t}: L_image {:e}", row.l_image);
    }
    Ok(())
}
