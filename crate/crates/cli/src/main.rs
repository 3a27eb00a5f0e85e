//! `splatloc`: scene synthesis, database building, localization runs,
//! ablations, gradient checking, and plot rendering from one binary.
//!
//! Exit codes: 0 success, 1 configuration/usage error, 2 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use splatloc_core::harness::{
    self, line_plot_svg, load_config, run_dbaug_ablation, run_experiment_detailed,
    run_mask_ablation, run_phase_ablation, save_trajectory, split_trajectory, summary_table,
    HarnessError, PlotSeries,
};
use splatloc_core::render::gradcheck::{run_gradient_check, GradCheckConfig};
use splatloc_core::render::{render, RenderConfig};
use splatloc_core::retrieval::build_database;
use splatloc_core::scene::{load_ply, save_ply, synthesize_scene, SceneLayout, SceneRecipe};
use splatloc_core::{Image, Intrinsics};

#[derive(Parser)]
#[command(
    name = "splatloc",
    version,
    about = "Visual localization against Gaussian-splat scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit a synthetic scene: splat PLY, trajectory JSON, query PNGs.
    Synth(SynthArgs),
    /// Render reference views and build a retrieval database file.
    BuildDb(BuildDbArgs),
    /// Localize selected queries (or the full batch) from a config.
    Localize(LocalizeArgs),
    /// Run the full benchmark described by a TOML config.
    Eval(EvalArgs),
    /// Paired comparison runs toggling one pipeline feature.
    Ablate(AblateArgs),
    /// Check analytic pose gradients against central differences.
    GradCheck(GradCheckArgs),
    /// Render a CSV of curves (x in column 1) to an SVG line plot.
    TracePlot(TracePlotArgs),
}

#[derive(clap::Args)]
struct SynthArgs {
    /// Preset: default | box-room | facade | blobs.
    #[arg(long, default_value = "default")]
    recipe: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    primitives: Option<usize>,
    #[arg(long)]
    texture_frequency: Option<f64>,
    #[arg(long, default_value = "synth_out")]
    out: PathBuf,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 192)]
    height: usize,
    #[arg(long, default_value_t = 70.0)]
    fov: f64,
    /// Stride of the reference/query split used to pick PNG poses.
    #[arg(long, default_value_t = 3)]
    stride: usize,
    /// Cap on the number of query PNGs written.
    #[arg(long, default_value_t = 12)]
    max_query_pngs: usize,
}

#[derive(clap::Args)]
struct BuildDbArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long, default_value = "poses.db")]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    stride: usize,
    /// Skip the rendered-midpoint augmentation entries.
    #[arg(long)]
    no_augment: bool,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 192)]
    height: usize,
    #[arg(long, default_value_t = 70.0)]
    fov: f64,
}

#[derive(clap::Args)]
struct LocalizeArgs {
    #[arg(long)]
    config: PathBuf,
    /// Query ids to run; omit for the whole batch.
    #[arg(long)]
    query: Vec<usize>,
    #[arg(long, default_value = "localize")]
    scenario: String,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "full")]
    scenario: String,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblateWhat {
    /// Reliability mask on vs off.
    Mask,
    /// Per-phase results of the staged pipeline.
    Phases,
    /// Database midpoint augmentation on vs off.
    Dbaug,
}

#[derive(clap::Args)]
struct AblateArgs {
    #[arg(long, value_enum)]
    what: AblateWhat,
    #[arg(long)]
    config: PathBuf,
}

#[derive(clap::Args)]
struct GradCheckArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 20)]
    cases: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 300)]
    primitives: usize,
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    #[arg(long, default_value_t = 1e-3)]
    rel_tol: f64,
    #[arg(long, default_value_t = 1e-7)]
    abs_tol: f64,
}

#[derive(clap::Args)]
struct TracePlotArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    title: Option<String>,
    #[arg(long, default_value = "iteration")]
    x_label: String,
    #[arg(long, default_value = "value")]
    y_label: String,
}

/// Failure carrying its process exit code: 1 config, 2 runtime.
struct CliError {
    code: i32,
    error: anyhow::Error,
}

type CliResult = Result<(), CliError>;

fn config_error(error: anyhow::Error) -> CliError {
    CliError { code: 1, error }
}

fn runtime_error(error: anyhow::Error) -> CliError {
    CliError { code: 2, error }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) => config_error(e.into()),
            _ => runtime_error(e.into()),
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Synth(args) => run_synth(args),
        Command::BuildDb(args) => run_build_db(args),
        Command::Localize(args) => run_localize(args),
        Command::Eval(args) => run_eval(args),
        Command::Ablate(args) => run_ablate(args),
        Command::GradCheck(args) => run_grad_check(args),
        Command::TracePlot(args) => run_trace_plot(args),
    };
    if let Err(e) = result {
        eprintln!("error: {:#}", e.error);
        std::process::exit(e.code);
    }
}

fn parse_recipe(args: &SynthArgs) -> Result<SceneRecipe, CliError> {
    let mut recipe = SceneRecipe::default();
    recipe.layout = match args.recipe.as_str() {
        "default" | "box-room" | "box_room" => SceneLayout::TexturedBoxRoom,
        "facade" => SceneLayout::FacadeGrid,
        "blobs" => SceneLayout::RandomBlobs,
        other => {
            return Err(config_error(anyhow!(
                "unknown recipe {other:?}; expected default, box-room, facade, or blobs"
            )))
        }
    };
    if let Some(seed) = args.seed {
        recipe.seed = seed;
    }
    if let Some(n) = args.primitives {
        recipe.primitive_count = n;
    }
    if let Some(f) = args.texture_frequency {
        recipe.texture_frequency = f;
    }
    Ok(recipe)
}

fn run_synth(args: SynthArgs) -> CliResult {
    if args.stride < 2 {
        return Err(config_error(anyhow!("--stride must be >= 2")));
    }
    let recipe = parse_recipe(&args)?;
    let (scene, trajectory) =
        synthesize_scene(&recipe).map_err(|e| runtime_error(e.into()))?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("create {}", args.out.display()))
        .map_err(config_error)?;

    let ply_path = args.out.join("scene.ply");
    save_ply(&scene, &ply_path).map_err(|e| runtime_error(e.into()))?;
    let traj_path = args.out.join("trajectory.json");
    save_trajectory(&traj_path, &trajectory)?;

    let k = Intrinsics::from_fov(args.width, args.height, args.fov);
    let render_cfg = RenderConfig::default();
    let (_, queries) = split_trajectory(&trajectory, args.stride)?;
    let mut written = 0usize;
    for (i, pose) in queries.iter().take(args.max_query_pngs).enumerate() {
        let view = render(&scene, pose, &k, &render_cfg);
        let path = args.out.join(format!("query_{i:04}.png"));
        view.rgb
            .save_png(&path)
            .map_err(|e| runtime_error(anyhow!("write {}: {e}", path.display())))?;
        written += 1;
    }
    println!(
        "scene: {} ({} primitives)\ntrajectory: {} ({} poses)\nquery PNGs: {written}",
        ply_path.display(),
        scene.len(),
        traj_path.display(),
        trajectory.len()
    );
    Ok(())
}

fn run_build_db(args: BuildDbArgs) -> CliResult {
    if args.stride < 2 {
        return Err(config_error(anyhow!("--stride must be >= 2")));
    }
    let scene = load_ply(&args.scene)
        .map_err(|e| config_error(anyhow!("load {}: {e}", args.scene.display())))?;
    let trajectory = harness::load_trajectory(&args.trajectory)?;
    let (references, _) = split_trajectory(&trajectory, args.stride)?;
    let k = Intrinsics::from_fov(args.width, args.height, args.fov);
    let render_cfg = RenderConfig::default();
    let views: Vec<(Image, _)> = references
        .iter()
        .map(|pose| (render(&scene, pose, &k, &render_cfg).rgb, *pose))
        .collect();
    let scene_ref = args
        .scene
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    let db = build_database(&views, &scene, &k, &render_cfg, !args.no_augment, &scene_ref)
        .map_err(|e| runtime_error(e.into()))?;
    db.save(&args.out).map_err(|e| runtime_error(e.into()))?;
    println!(
        "database: {} ({} entries from {} references)",
        args.out.display(),
        db.len(),
        references.len()
    );
    Ok(())
}

fn run_localize(args: LocalizeArgs) -> CliResult {
    let cfg = load_config(&args.config)?;
    let filter = if args.query.is_empty() { None } else { Some(args.query.as_slice()) };
    let report = run_experiment_detailed(&cfg, &args.scenario, filter, args.threads)?;
    for r in &report.results {
        let fmt = |o: &Option<harness::PhaseOutcome>| match o {
            Some(p) => format!("{:.4} deg / {:.4}", p.rotation_error_deg, p.translation_error),
            None => "-".into(),
        };
        println!(
            "query {:3} [{}] retrieval {} | init {} | refine {}",
            r.query_id,
            r.status,
            fmt(&r.retrieval),
            fmt(&r.initialization),
            fmt(&r.refinement)
        );
    }
    print!("{}", summary_table(&report.summary));
    println!("outputs: {}", cfg.output_dir.display());
    Ok(())
}

fn run_eval(args: EvalArgs) -> CliResult {
    let cfg = load_config(&args.config)?;
    let report = run_experiment_detailed(&cfg, &args.scenario, None, args.threads)?;
    let failed = report.results.iter().filter(|r| !r.ok()).count();
    print!("{}", summary_table(&report.summary));
    println!(
        "queries: {} ({} failed) | scene diameter {:.3} | outputs: {}",
        report.results.len(),
        failed,
        report.scene_diameter,
        cfg.output_dir.display()
    );
    Ok(())
}

fn run_ablate(args: AblateArgs) -> CliResult {
    let cfg = load_config(&args.config)?;
    match args.what {
        AblateWhat::Phases => {
            let report = run_phase_ablation(&cfg)?;
            print!("{}", summary_table(&report.summary));
        }
        AblateWhat::Mask => {
            let out = run_mask_ablation(&cfg)?;
            let rows: Vec<_> = out
                .masked
                .summary
                .iter()
                .chain(out.unmasked.summary.iter())
                .cloned()
                .collect();
            print!("{}", summary_table(&rows));
            match out.median_translation_ratio() {
                Some(ratio) => println!("masked/unmasked median translation ratio: {ratio:.4}"),
                None => println!("median translation ratio unavailable (a refinement arm is empty)"),
            }
        }
        AblateWhat::Dbaug => {
            let out = run_dbaug_ablation(&cfg)?;
            let rows: Vec<_> = out
                .augmented
                .summary
                .iter()
                .chain(out.plain.summary.iter())
                .cloned()
                .collect();
            print!("{}", summary_table(&rows));
            let mean = |r: &splatloc_core::ExperimentReport| {
                r.mean_top1_center_distance()
                    .map(|v| format!("{v:.5}"))
                    .unwrap_or_else(|| "-".into())
            };
            println!(
                "mean top-1 center distance: augmented {} ({} entries) vs plain {} ({} entries)",
                mean(&out.augmented),
                out.augmented.database_size,
                mean(&out.plain),
                out.plain.database_size
            );
        }
    }
    println!("outputs: {}", cfg.output_dir.display());
    Ok(())
}

fn run_grad_check(args: GradCheckArgs) -> CliResult {
    let mut cfg = GradCheckConfig {
        cases: args.cases,
        image_width: args.width,
        image_height: args.height,
        primitive_count: args.primitives,
        step: args.step,
        rel_tol: args.rel_tol,
        abs_tol: args.abs_tol,
        ..GradCheckConfig::default()
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.cases == 0 || cfg.primitive_count == 0 || cfg.image_width < 8 || cfg.image_height < 8 {
        return Err(config_error(anyhow!(
            "need cases >= 1, primitives >= 1, and at least an 8x8 image"
        )));
    }
    let report = run_gradient_check(&cfg);
    for case in &report.cases {
        print!("case {:2} (excluded {:4} px):", case.index, case.excluded_pixels);
        for c in &case.components {
            print!(" {}={:.2e}", c.name, c.rel_err);
        }
        println!("{}", if case.pass { "" } else { "  FAIL" });
    }
    println!(
        "max relative error {:.3e}, max absolute error {:.3e} over {} cases ({} tolerance {:.1e} rel / {:.1e} abs)",
        report.max_rel_err,
        report.max_abs_err,
        report.cases.len(),
        if report.pass { "within" } else { "EXCEEDS" },
        cfg.rel_tol,
        cfg.abs_tol
    );
    if report.pass {
        Ok(())
    } else {
        Err(runtime_error(anyhow!("gradient check failed")))
    }
}

fn parse_curve_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<(f64, f64)>>), CliError> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("read {}", path.display()))
        .map_err(config_error)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| config_error(anyhow!("{}: empty file", path.display())))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    if header.len() < 2 {
        return Err(config_error(anyhow!(
            "{}: need an x column plus at least one series",
            path.display()
        )));
    }
    let mut series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); header.len() - 1];
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != header.len() {
            return Err(config_error(anyhow!(
                "{} line {}: {} fields, header has {}",
                path.display(),
                lineno + 2,
                fields.len(),
                header.len()
            )));
        }
        let parse = |s: &str| -> Result<f64, CliError> {
            s.parse::<f64>().map_err(|_| {
                config_error(anyhow!(
                    "{} line {}: {s:?} is not a number",
                    path.display(),
                    lineno + 2
                ))
            })
        };
        let x = parse(fields[0])?;
        for (i, field) in fields[1..].iter().enumerate() {
            series[i].push((x, parse(field)?));
        }
    }
    Ok((header, series))
}

fn run_trace_plot(args: TracePlotArgs) -> CliResult {
    let (header, series) = parse_curve_csv(&args.input)?;
    let plot: Vec<PlotSeries> = header[1..]
        .iter()
        .zip(series)
        .map(|(label, points)| PlotSeries { label: label.clone(), points })
        .collect();
    let title = args
        .title
        .unwrap_or_else(|| args.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    let svg = line_plot_svg(&title, &args.x_label, &args.y_label, &plot);
    if let Some(parent) = args.output.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("create {}", parent.display()))
                .map_err(runtime_error)?;
        }
    }
    fs::write(&args.output, svg)
        .with_context(|| format!("write {}", args.output.display()))
        .map_err(runtime_error)?;
    println!("plot: {}", args.output.display());
    Ok(())
}
