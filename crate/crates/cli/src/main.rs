//! `scalenorm`: generate synthetic scenes, train a scale-encoded SDF from
//! normal maps, extract meshes, render normals and evaluate.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use scalenorm::camera::load_cameras;
use scalenorm::field::{checkpoint, FieldParams};
use scalenorm::mesh::{
    marching_cubes, save_mesh, select_scales, write_scale_ply, Grid, MeshFormat, ScaleAssignment,
};
use scalenorm::render::render_view;
use scalenorm::scene::image::{Mask, NormalMap};
use scalenorm::scene::{evaluate, generate_synthetic_scene, EvalOptions, SceneDataset, SceneSpec, Shape};
use scalenorm::train::{TrainConfig, Trainer};
use scalenorm::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "scalenorm", version, about = "Scale-aware multi-view normal integration")]
struct Cli {
    /// Seed for every random choice; overrides the seed in a config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset from an analytic shape.
    Generate(GenerateArgs),
    /// Fit a field to a dataset.
    Train(TrainArgs),
    /// Extract a mesh from a checkpoint.
    Extract(ExtractArgs),
    /// Render a normal map from a checkpoint.
    Render(RenderArgs),
    /// Score a checkpoint (and optionally a mesh) on held-out views.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// sphere, torus, box or sphere-bump.
    #[arg(long, default_value = "sphere")]
    shape: Shape,
    /// Training views on the regular ring.
    #[arg(long, default_value_t = 16)]
    regular: usize,
    /// Training close-ups of the detail region.
    #[arg(long, default_value_t = 0)]
    closeup: usize,
    #[arg(long, default_value_t = 4)]
    heldout_regular: usize,
    #[arg(long, default_value_t = 0)]
    heldout_closeup: usize,
    /// Image width and height in pixels.
    #[arg(long, default_value_t = 800)]
    resolution: u32,
    /// Sub-pixel rays per pixel axis.
    #[arg(long, default_value_t = 8)]
    supersampling: usize,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// Full-size field and batch.
    Full,
    /// Compact field sized for CPU runs.
    Desk,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// TOML config; keys not given fall back to the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    #[arg(long)]
    iterations: Option<usize>,
    /// Weight of the cross-scale regularizer.
    #[arg(long)]
    lambda_csr: Option<f64>,
    /// Keep the scale-triplane at zero.
    #[arg(long)]
    freeze_triplane: bool,
    /// Held-out evaluation cadence in iterations, 0 disables it.
    #[arg(long)]
    eval_every: Option<usize>,
    /// Checkpoint cadence in iterations, 0 disables it.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Output directory for the log, checkpoints and the final field.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum ScaleMode {
    /// Per-unit scale chosen from the trained triplane.
    Smem,
    /// One scale everywhere.
    Constant,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Mesh path; the extension picks OBJ or PLY.
    #[arg(long)]
    out: PathBuf,
    /// Grid cells per axis.
    #[arg(long, default_value_t = 512)]
    resolution: usize,
    /// Grid vertices per axis in one scale unit.
    #[arg(long, default_value_t = 64)]
    unit: usize,
    #[arg(long, value_enum, default_value = "smem")]
    scale_mode: ScaleMode,
    /// Scale used with `--scale-mode constant`.
    #[arg(long, required_if_eq("scale_mode", "constant"))]
    scale: Option<f64>,
    /// Also write a PLY with vertices colored by their scale.
    #[arg(long)]
    scale_colors: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Camera file in the dataset `cameras.txt` format.
    #[arg(long)]
    cameras: PathBuf,
    /// Name of the camera to render.
    #[arg(long)]
    view: String,
    /// Output normal map (raw float image).
    #[arg(long)]
    out: PathBuf,
    /// Also write the opacity thresholded at 0.5 as a PGM mask.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    samples: usize,
    /// Feed this scale to the field instead of each sample's own radius.
    #[arg(long)]
    scale: Option<f64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Mesh to score against the analytic surface.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Directory for report.csv and report.txt.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    samples: usize,
    /// Render every n-th pixel per axis.
    #[arg(long, default_value_t = 1)]
    stride: u32,
    #[arg(long, default_value_t = 100_000)]
    chamfer_samples: usize,
    /// Render with this scale instead of each sample's own radius.
    #[arg(long)]
    scale: Option<f64>,
}

fn main() -> ExitCode {
    // Usage errors exit with 2, help and version with 0.
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    let seed = cli.seed;
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a, seed),
        Command::Extract(a) => extract(a),
        Command::Render(a) => render(a),
        Command::Eval(a) => eval(a, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let spec = SceneSpec {
        shape: a.shape,
        regular: a.regular,
        closeup: a.closeup,
        heldout_regular: a.heldout_regular,
        heldout_closeup: a.heldout_closeup,
        resolution: a.resolution,
        supersampling: a.supersampling,
        ..SceneSpec::default()
    };
    let dataset = generate_synthetic_scene(&spec)?;
    dataset.save(&a.out)?;
    println!("wrote {} views of {} to {}", dataset.views.len(), a.shape, a.out.display());
    Ok(())
}

fn train_config(a: &TrainArgs, seed: Option<u64>) -> Result<TrainConfig> {
    let base = match a.preset {
        Preset::Full => TrainConfig::default(),
        Preset::Desk => TrainConfig::desk(),
    };
    let mut config = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            TrainConfig::from_toml_over(&base, &text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => base,
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(n) = a.iterations {
        config.iterations = n;
    }
    if let Some(l) = a.lambda_csr {
        config.lambda_csr = l;
    }
    if a.freeze_triplane {
        config.freeze_triplane = true;
    }
    if let Some(n) = a.eval_every {
        config.eval_every = n;
    }
    if let Some(n) = a.checkpoint_every {
        config.checkpoint_every = n;
    }
    config.validate()?;
    Ok(config)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn train(a: TrainArgs, seed: Option<u64>) -> Result<()> {
    let config = train_config(&a, seed)?;
    let dataset = SceneDataset::load(&a.data)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let config_path = a.out.join("config.toml");
    std::fs::write(&config_path, config.to_toml()).map_err(|e| Error::io(&config_path, e))?;
    let ckpt_dir = a.out.join("checkpoints");
    if config.checkpoint_every > 0 {
        std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    }

    let log_path = a.out.join("train.csv");
    let mut log = create(&log_path)?;
    writeln!(log, "iteration,normal,mask,eikonal,csr,total,wall_clock_s,mae_heldout_deg").map_err(|e| Error::io(&log_path, e))?;
    let eval_opts = EvalOptions {
        samples_per_ray: config.eval_samples_per_ray,
        stride: config.eval_stride,
        constant_scale: config.constant_scale,
        ..EvalOptions::default()
    };
    let has_heldout = dataset.views_in(scalenorm::scene::dataset::Split::HeldOut).next().is_some();

    let mut trainer = Trainer::new(&dataset, config.clone())?;
    log::info!(
        "training {} parameters for {} iterations",
        trainer.params().parameter_count(),
        config.iterations
    );
    let start = Instant::now();
    let total = config.iterations;
    trainer.run(|t, terms| {
        let it = t.iteration();
        let mae = if has_heldout && config.eval_every > 0 && (it % config.eval_every == 0 || it == total) {
            evaluate(t.params(), None, &dataset, &eval_opts)?.mae(None)
        } else {
            None
        };
        let mae_text = mae.map_or(String::new(), |m| m.to_string());
        writeln!(
            log,
            "{it},{},{},{},{},{},{:.3},{mae_text}",
            terms.normal,
            terms.mask,
            terms.eikonal,
            terms.csr,
            terms.total,
            start.elapsed().as_secs_f64()
        )
        .map_err(|e| Error::io(&log_path, e))?;
        if let Some(m) = mae {
            log::info!("iteration {it}: total {:.5}, held-out MAE {m:.3} deg", terms.total);
        } else if it % 100 == 0 {
            log::info!("iteration {it}: total {:.5}", terms.total);
        }
        if config.checkpoint_every > 0 && it % config.checkpoint_every == 0 && it < total {
            checkpoint::save(t.params(), &ckpt_dir.join(format!("iter_{it:06}.ckpt")))?;
        }
        Ok(())
    })?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let final_path = a.out.join("field.ckpt");
    checkpoint::save(trainer.params(), &final_path)?;
    println!(
        "trained {} iterations in {:.1} s; wrote {}",
        trainer.iteration(),
        start.elapsed().as_secs_f64(),
        final_path.display()
    );
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<()> {
    let params = checkpoint::load(&a.checkpoint)?;
    let format = MeshFormat::from_path(&a.out)?;
    let grid = Grid::new(a.resolution)?;
    let assignment = match a.scale_mode {
        ScaleMode::Smem => select_scales(&params.triplane, grid, a.unit)?,
        ScaleMode::Constant => {
            let s = a.scale.ok_or_else(|| Error::Config("--scale-mode constant needs --scale".into()))?;
            ScaleAssignment::constant(grid, a.unit, s)?
        }
    };
    let start = Instant::now();
    let mesh = marching_cubes(&params, &assignment)?;
    save_mesh(&mesh, &a.out, format)?;
    if let Some(path) = &a.scale_colors {
        write_scale_ply(&mesh, path, params.config.scale_min, params.config.scale_max)?;
    }
    println!(
        "extracted {} vertices, {} triangles in {:.1} s; wrote {}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        start.elapsed().as_secs_f64(),
        a.out.display()
    );
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let params: FieldParams = checkpoint::load(&a.checkpoint)?;
    let cameras = load_cameras(&a.cameras)?;
    let camera = cameras
        .iter()
        .find(|(name, _)| *name == a.view)
        .map(|(_, c)| c)
        .ok_or_else(|| Error::Config(format!("no camera named {:?} in {}", a.view, a.cameras.display())))?;
    let view = render_view(&params, camera, a.samples, 1, a.scale)?;
    let mut normals = NormalMap::new(view.width, view.height);
    let mut mask = Mask::new(view.width, view.height);
    for (((row, col), n), o) in view.pixels.iter().zip(&view.normals).zip(&view.opacity) {
        normals.set(*row, *col, n);
        mask.set(*row, *col, *o >= 0.5);
    }
    normals.save(&a.out)?;
    if let Some(path) = &a.mask {
        mask.save(path)?;
    }
    println!("rendered {} ({}x{}) to {}", a.view, view.width, view.height, a.out.display());
    Ok(())
}

fn eval(a: EvalArgs, seed: Option<u64>) -> Result<()> {
    let params = checkpoint::load(&a.checkpoint)?;
    let dataset = SceneDataset::load(&a.data)?;
    let mesh = a.mesh.as_deref().map(scalenorm::mesh::load_mesh).transpose()?;
    let opts = EvalOptions {
        samples_per_ray: a.samples,
        stride: a.stride,
        constant_scale: a.scale,
        chamfer_samples: a.chamfer_samples,
        seed: seed.unwrap_or(0),
        ..EvalOptions::default()
    };
    let report = evaluate(&params, mesh.as_ref(), &dataset, &opts)?;
    report.save(&a.out)?;
    print!("{}", report.to_text());
    Ok(())
}
