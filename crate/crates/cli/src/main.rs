use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use handsplat::appearance::AttentionConfig;
use handsplat::geometry::{write_ply, SdfConfig};
use handsplat::io::{generate_synthetic_dataset, interpolate_pose, load_dataset, load_pose, DatasetManifest, SynthConfig};
use handsplat::relight::{relight_render, PhongLight, RelightOptions};
use handsplat::renderer::{bench_render, save_gray_png, save_rgb_png, Camera, REFERENCE_SECONDS_PER_FRAME};
use handsplat::rig::{build_toy_rig, load_template, TemplateRig, ToyRigConfig};
use handsplat::training::{train, write_log, HandModel, ModelConfig, RunConfig, ShadingFeatures};
use handsplat::{gradcheck, Real};

#[derive(Parser)]
#[command(name = "handsplat", version, about = "Point-splatting hand reconstruction: training, rendering and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a dataset manifest.
    Train(TrainArgs),
    /// Render a checkpoint under one pose and camera.
    Render(RenderArgs),
    /// Render a pose interpolation as a numbered PNG sequence.
    Animate(AnimateArgs),
    /// Render a horizontal light sweep with Phong shading and self-shadows.
    Relight(RelightArgs),
    /// Time forward rendering and print CSV rows.
    Bench(BenchArgs),
    /// Run every finite-difference suite.
    Gradcheck(GradcheckArgs),
    /// Write the canonical point cloud as PLY.
    ExportPly(ExportArgs),
    /// Generate a synthetic toy-rig dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 4)]
    sdf_layers: usize,
    #[arg(long, default_value_t = 128)]
    sdf_width: usize,
    #[arg(long, default_value_t = 128)]
    attention_hidden: usize,
    #[arg(long, default_value_t = 64)]
    attention_dim: usize,
}

impl ModelArgs {
    fn config(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            sdf: SdfConfig { hidden_layers: self.sdf_layers, width: self.sdf_width, ..Default::default() },
            attention: AttentionConfig { hidden: self.attention_hidden, d_cross: self.attention_dim, seed: AttentionConfig::default().seed ^ seed },
            shading_features: ShadingFeatures::Deformed,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// TOML with `[train]` and `[loss]` tables; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Template checkpoint; defaults to the manifest's template, then the toy rig.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Output directory for `model.ckpt`, `log.csv` and `config.toml`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train in 32-bit floats.
    #[arg(long)]
    f32: bool,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct ViewArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    /// Override the camera resolution, e.g. `256x256`.
    #[arg(long, value_parser = parse_resolution)]
    res: Option<(usize, usize)>,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    view: ViewArgs,
    #[arg(long)]
    pose: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the accumulated alpha as a grayscale PNG.
    #[arg(long)]
    alpha: Option<PathBuf>,
}

#[derive(Args)]
struct AnimateArgs {
    #[command(flatten)]
    view: ViewArgs,
    #[arg(long)]
    from: PathBuf,
    #[arg(long)]
    to: PathBuf,
    #[arg(long, default_value_t = 30)]
    frames: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RelightArgs {
    #[command(flatten)]
    view: ViewArgs,
    #[arg(long)]
    pose: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 9)]
    steps: usize,
    /// Total horizontal sweep in degrees, centered on the base direction.
    #[arg(long, default_value_t = 120.0)]
    sweep: f64,
    /// Base direction toward the light, `x,y,z`.
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,-1")]
    light: [f64; 3],
    #[arg(long, default_value_t = 0.3)]
    ambient: f64,
    #[arg(long, default_value_t = 0.7)]
    diffuse: f64,
    #[arg(long, default_value_t = 0.1)]
    specular: f64,
    #[arg(long, default_value_t = 16.0)]
    shininess: f64,
    #[arg(long)]
    no_shadows: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 100_000)]
    points: usize,
    #[arg(long, default_value_t = 256)]
    res: usize,
    /// Thread counts to time, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    threads: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    f32: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    #[arg(long, default_value_t = 4)]
    views: usize,
    #[arg(long, default_value_t = 256)]
    res: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Views held out for validation, comma separated.
    #[arg(long, value_delimiter = ',')]
    val_views: Vec<usize>,
    /// Surface samples per template vertex for the ground truth.
    #[arg(long, default_value_t = SynthConfig::default().surface_density)]
    surface_density: usize,
}

fn parse_resolution(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once('x').ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let w: usize = w.parse().map_err(|e| format!("width: {e}"))?;
    let h: usize = h.parse().map_err(|e| format!("height: {e}"))?;
    if w == 0 || h == 0 {
        return Err("resolution must be nonzero".into());
    }
    Ok((w, h))
}

fn parse_vec3(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<std::result::Result<_, _>>()?;
    match v.as_slice() {
        [x, y, z] if v.iter().all(|c| c.is_finite()) => Ok([*x, *y, *z]),
        _ => Err(format!("expected three finite numbers x,y,z, got {s:?}")),
    }
}

fn load_view(v: &ViewArgs) -> Result<(HandModel<f64>, Camera<f64>)> {
    let model = HandModel::<f64>::load(&v.checkpoint).with_context(|| format!("loading {}", v.checkpoint.display()))?;
    let mut camera = Camera::<f64>::load(&v.camera).with_context(|| format!("loading {}", v.camera.display()))?;
    if let Some((w, h)) = v.res {
        camera = camera.with_resolution(w, h);
    }
    Ok((model, camera))
}

fn resolve_template<T: Real>(args: &TrainArgs) -> Result<TemplateRig<T>> {
    if let Some(p) = &args.template {
        return Ok(load_template(p)?);
    }
    let manifest = DatasetManifest::load(&args.manifest)?;
    match manifest.template_path(&args.manifest) {
        Some(p) => Ok(load_template(&p).with_context(|| format!("loading template {}", p.display()))?),
        None => {
            log::warn!("manifest names no template; using the default toy rig");
            Ok(build_toy_rig(&ToyRigConfig::default()))
        }
    }
}

fn run_train<T: Real>(args: &TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
        cfg.train.geometry_freeze_epoch = cfg.train.geometry_freeze_epoch.min(e);
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    let dataset = load_dataset::<T>(&args.manifest)?;
    let rig = resolve_template::<T>(args)?;
    let model = HandModel::new(rig, args.model.config(cfg.train.seed))?;
    std::fs::create_dir_all(&args.out)?;
    cfg.save(&args.out.join("config.toml"))?;
    let (model, log) = train(model, &dataset, &cfg)?;
    model.save(&args.out.join("model.ckpt"))?;
    write_log(&args.out.join("log.csv"), &log)?;
    if let Some(last) = log.last() {
        println!(
            "epochs {} points {} loss {:.5} psnr {} ssim {} iou {}",
            last.epoch,
            last.num_points,
            last.loss_total,
            fmt_opt(last.psnr),
            fmt_opt(last.ssim),
            fmt_opt(last.iou)
        );
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}

fn run_render(args: &RenderArgs) -> Result<()> {
    let (model, camera) = load_view(&args.view)?;
    let pose = load_pose::<f64>(&args.pose)?;
    let t = model.render(&pose, &camera)?;
    save_rgb_png(&args.out, t.width, t.height, &t.rgb)?;
    if let Some(a) = &args.alpha {
        save_gray_png(a, t.width, t.height, &t.alpha)?;
    }
    Ok(())
}

fn run_animate(args: &AnimateArgs) -> Result<()> {
    if args.frames < 2 {
        bail!("--frames must be at least 2");
    }
    let (model, camera) = load_view(&args.view)?;
    let a = load_pose::<f64>(&args.from)?;
    let b = load_pose::<f64>(&args.to)?;
    std::fs::create_dir_all(&args.out_dir)?;
    for k in 0..args.frames {
        let pose = interpolate_pose(&a, &b, k as f64 / (args.frames - 1) as f64)?;
        let t = model.render(&pose, &camera)?;
        save_rgb_png(&args.out_dir.join(format!("frame_{k:04}.png")), t.width, t.height, &t.rgb)?;
    }
    Ok(())
}

fn run_relight(args: &RelightArgs) -> Result<()> {
    if args.steps == 0 {
        bail!("--steps must be positive");
    }
    let (model, camera) = load_view(&args.view)?;
    let pose = load_pose::<f64>(&args.pose)?;
    std::fs::create_dir_all(&args.out_dir)?;
    for k in 0..args.steps {
        let frac = if args.steps == 1 { 0.5 } else { k as f64 / (args.steps - 1) as f64 };
        let angle = (frac - 0.5) * args.sweep.to_radians();
        let light = PhongLight {
            ambient: args.ambient,
            diffuse: args.diffuse,
            specular: args.specular,
            shininess: args.shininess,
            ..PhongLight::swept(args.light, angle)?
        };
        light.validate()?;
        let t = relight_render(&model, &pose, &camera, &RelightOptions { light, shadows: !args.no_shadows })?;
        save_rgb_png(&args.out_dir.join(format!("relight_{k:04}.png")), t.width, t.height, &t.rgb)?;
    }
    Ok(())
}

fn run_bench(args: &BenchArgs) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "points,resolution,threads,frames,precision,ms_per_frame,reference_ms_per_frame")?;
    for &threads in &args.threads {
        let (r, precision) = if args.f32 {
            (bench_render::<f32>(args.points, args.res, threads, args.frames, args.seed)?, "f32")
        } else {
            (bench_render::<f64>(args.points, args.res, threads, args.frames, args.seed)?, "f64")
        };
        writeln!(
            out,
            "{},{},{},{},{},{:.3},{:.1}",
            r.points,
            r.resolution,
            r.threads,
            r.frames,
            precision,
            r.ms_per_frame,
            REFERENCE_SECONDS_PER_FRAME * 1e3
        )?;
    }
    Ok(())
}

fn run_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let results = gradcheck::run_all(args.seed)?;
    let mut failed = 0;
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!("{:<32} max_rel_error {:.3e}  tolerance {:.0e}  {status}", r.name, r.max_error, r.tolerance);
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        bail!("{failed} of {} gradient suites failed", results.len());
    }
    println!("all {} suites passed", results.len());
    Ok(())
}

fn run_export(args: &ExportArgs) -> Result<()> {
    let model = HandModel::<f64>::load(&args.checkpoint)?;
    let mut w = BufWriter::new(File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?);
    write_ply(&mut w, &model.ply_points()?)?;
    w.flush()?;
    Ok(())
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        frames: args.frames,
        views: args.views,
        resolution: args.res,
        seed: args.seed,
        val_views: args.val_views.clone(),
        surface_density: args.surface_density,
        ..Default::default()
    };
    let manifest = generate_synthetic_dataset(&args.out, &cfg)?;
    println!("{}", manifest.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) if a.f32 => run_train::<f32>(&a),
        Command::Train(a) => run_train::<f64>(&a),
        Command::Render(a) => run_render(&a),
        Command::Animate(a) => run_animate(&a),
        Command::Relight(a) => run_relight(&a),
        Command::Bench(a) => run_bench(&a),
        Command::Gradcheck(a) => run_gradcheck(&a),
        Command::ExportPly(a) => run_export(&a),
        Command::Synth(a) => run_synth(&a),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    let outputs: Vec<&Path> = match &cli.command {
        Command::Render(a) => vec![a.out.as_path()],
        Command::ExportPly(a) => vec![a.out.as_path()],
        _ => vec![],
    };
    let result = outputs.into_iter().try_for_each(ensure_parent).and_then(|_| run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
