mod fit;
mod views;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use appear::geometry::subdivide;
use appear::gradcheck::{self, OpCheck};
use appear::optimize::{bounding_sphere, LearnFlags};
use appear::reference::InternalProvider;
use appear::render::{AaMode, RenderOptions, Topology};
use appear::scene_io::{load_obj, load_scene, read_snapshot, save_obj};

use views::{read_json, write_image, CameraSpec, LightSpec};

/// Joint shape and appearance fitting from images.
#[derive(Parser)]
#[command(name = "appear", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a latent scene to reference images.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint directory or state file to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render one view of a scene.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        light: PathBuf,
        /// Output image, `.pfm` (linear) or `.png` (tone-mapped).
        #[arg(long)]
        out: PathBuf,
        /// Samples per pixel on a square grid.
        #[arg(long, default_value_t = 1)]
        spp: usize,
        #[arg(long, value_enum, default_value_t = AaArg::Analytic)]
        aa: AaArg,
        #[arg(long, default_value_t = 1)]
        layers: usize,
        /// Trilinear texture lookups.
        #[arg(long)]
        mip: bool,
        /// Animation frame to pose the skinned mesh with.
        #[arg(long)]
        frame: Option<usize>,
    },
    /// Check adjoints against finite differences.
    Gradcheck {
        #[arg(long, value_parser = ["all", "geometry", "rasterizer", "shading", "loss"], default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = gradcheck::DEFAULT_EPSILON)]
        epsilon: f64,
    },
    /// Fit a normal map (and optionally positions) to a reference.
    Bake {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = BakeLearn::Normals)]
        learn: BakeLearn,
    },
    /// Midpoint-subdivide an OBJ mesh.
    Subdivide {
        #[arg(long)]
        mesh: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        levels: usize,
        #[arg(long)]
        fan: bool,
    },
    /// Summarize a scene file or checkpoint state.
    Info {
        #[arg(long, required_unless_present = "checkpoint")]
        scene: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AaArg {
    None,
    Analytic,
    Msaa4,
    Msaa8,
    Msaa16,
}

impl From<AaArg> for AaMode {
    fn from(a: AaArg) -> Self {
        match a {
            AaArg::None => AaMode::None,
            AaArg::Analytic => AaMode::Analytic,
            AaArg::Msaa4 => AaMode::Msaa(4),
            AaArg::Msaa8 => AaMode::Msaa(8),
            AaArg::Msaa16 => AaMode::Msaa(16),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BakeLearn {
    /// Positions frozen, normal map learned.
    Normals,
    /// Normal map and positions learned.
    NormalsPositions,
}

impl From<BakeLearn> for LearnFlags {
    fn from(b: BakeLearn) -> Self {
        LearnFlags {
            positions: matches!(b, BakeLearn::NormalsPositions),
            skin_logits: false,
            kd: false,
            orm: false,
            normal_map: true,
            displacement: false,
        }
    }
}

pub enum Failure {
    /// Exit code 2.
    Usage(anyhow::Error),
    /// Exit code 1.
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<appear::Error> for Failure {
    fn from(e: appear::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Fit { config, out, seed, resume } => fit::run(fit::FitArgs { config, out, seed, resume, learn: None }),
        Command::Bake { config, out, seed, learn } => {
            fit::run(fit::FitArgs { config, out, seed, resume: None, learn: Some(learn.into()) })
        }
        Command::Render { scene, camera, light, out, spp, aa, layers, mip, frame } => {
            let camera = read_json::<CameraSpec>(&camera).and_then(|c| c.camera())?;
            let light = read_json::<LightSpec>(&light).and_then(|l| l.light())?;
            let scene = load_scene(&scene)?;
            let mut opts = RenderOptions::new(camera.width, camera.height);
            opts.aa = aa.into();
            opts.layers = layers;
            opts.mip = mip;
            opts.validate().map_err(|e| Failure::Usage(e.into()))?;
            let provider = InternalProvider::new(scene.asset, scene.bones, spp).map_err(|e| Failure::Usage(e.into()))?;
            let img = provider.render(&camera, &light, &opts, frame)?;
            write_image(&out, camera.width, camera.height, &img)?;
            Ok(())
        }
        Command::Gradcheck { suite, epsilon } => {
            if !(epsilon > 0.0 && epsilon.is_finite()) {
                return Err(Failure::Usage(anyhow!("--epsilon must be positive")));
            }
            let checks = if suite == "all" { gradcheck::run_all(epsilon) } else { gradcheck::run_suite(&suite, epsilon) }
                .map_err(|e| Failure::Usage(e.into()))?;
            report(&checks)
        }
        Command::Subdivide { mesh, out, levels, fan } => {
            let data = load_obj(&mesh, fan)?;
            let mut m = data.mesh;
            for _ in 0..levels {
                m = subdivide(&m);
            }
            let name = mesh.file_stem().and_then(|s| s.to_str()).unwrap_or("mesh").to_string();
            std::fs::create_dir_all(&out).context("creating output directory")?;
            let path = save_obj(&out, &name, &m, data.material.as_ref())?;
            println!("{}: {} vertices, {} faces", path.display(), m.vertex_count(), m.face_count());
            Ok(())
        }
        Command::Info { scene, checkpoint } => {
            if let Some(path) = scene {
                let s = load_scene(&path)?;
                let m = &s.asset.mesh;
                let (c, r) = bounding_sphere(&m.positions);
                println!("vertices {}", m.vertex_count());
                println!("faces {}", m.face_count());
                println!("uvs {}", m.uv_count());
                match Topology::new(m, s.asset.subdivisions) {
                    Ok(topo) => println!("subdivisions {} ({} rendered faces)", s.asset.subdivisions, topo.faces.len()),
                    Err(e) => println!("subdivisions {} (not renderable: {e})", s.asset.subdivisions),
                }
                println!("bounding sphere center {c:?} radius {r}");
                let mat = &s.asset.material;
                for (name, p) in [("kd", &mat.kd), ("orm", &mat.orm), ("normal", &mat.normal)] {
                    let b = p.base();
                    println!("{name} {}x{}x{} levels {} independent {}", b.width, b.height, b.channels, p.level_count(), p.independent_levels);
                }
                if let Some(d) = &mat.displacement {
                    println!("displacement {}x{}", d.width, d.height);
                }
                if let Some(skin) = &m.skin {
                    println!("bones {}", skin.bones);
                }
                if let Some(b) = &s.bones {
                    println!("animation frames {}", b.frame_count());
                }
                println!("learn {:?}", s.learn);
            }
            if let Some(path) = checkpoint {
                let state = if path.is_dir() { path.join(fit::STATE_FILE) } else { path };
                let snap = read_snapshot(&state)?;
                println!("iteration {}", snap.iteration);
                println!("seed {}", snap.seed);
                for p in &snap.params {
                    println!("param {} {:?}", p.name, p.shape);
                }
                if let Some(row) = snap.log.last() {
                    println!("last {}", row.csv());
                }
            }
            Ok(())
        }
    }
}

fn report(checks: &[OpCheck]) -> Result<(), Failure> {
    let mut failed = Vec::new();
    for c in checks {
        let name = format!("{}/{}", c.suite, c.op);
        match &c.outcome {
            Ok(r) => println!(
                "{:<40} max_rel {:.3e}  within {:>6.2}%  smooth {:>4}  discontinuous {:>3}  {}",
                name,
                r.max_rel_error,
                100.0 * r.fraction_within(gradcheck::TOLERANCE),
                r.errors.len(),
                r.discontinuous.len(),
                if c.passes() { "ok" } else { "FAIL" }
            ),
            Err(e) => println!("{name:<40} error: {e}  FAIL"),
        }
        if !c.passes() {
            failed.push(c);
        }
    }
    if failed.is_empty() {
        println!("all {} ops within {:e}", checks.len(), gradcheck::TOLERANCE);
        return Ok(());
    }
    for c in &failed {
        let coords: Vec<String> = c.failing_coords().iter().take(8).map(|(i, e)| format!("{i} ({e:.2e})")).collect();
        if coords.is_empty() {
            eprintln!("{}/{}: failed", c.suite, c.op);
        } else {
            eprintln!("{}/{}: coordinates over tolerance: {}", c.suite, c.op, coords.join(", "));
        }
    }
    Err(Failure::Runtime(anyhow!("{} of {} ops failed", failed.len(), checks.len())))
}
