//! Command-line front end: dataset preparation, two-stage training,
//! video generation, evaluation, and the ablation ladder.

use clap::{Args, Parser, Subcommand};
use pose2video::ablation::{ladder_csv, run_ladder};
use pose2video::config::{AblationRow, TrainConfig};
use pose2video::data::{
    list_frame_files, prepare_paired_clip, prepare_unpaired_keypoints, split_frames,
    write_clip, write_synthetic_corpus, DatasetManifest, Frame, LoadedClip, PairedClipRef,
    PrepareConfig, Split, UnpairedClipRef, GREEN_FILL, MANIFEST_VERSION,
};
use pose2video::infer::{composite_background, InferencePipeline, DEFAULT_CHROMA_THRESHOLD};
use pose2video::metrics::evaluate_run;
use pose2video::percep::PerceptualNet;
use pose2video::pose::{parse_keypoints, serialize_keypoints, SkeletonTopology};
use pose2video::trainer::{latest_checkpoint_path, train_stage1, train_stage2};
use pose2video::{Error, Result};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "pose2video",
    version,
    about = "Two-stage pose-to-video motion transfer: prepare data, train, render, evaluate"
)]
struct Cli {
    /// Worker threads for parallel sections (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset manifest from recorded footage or a synthetic corpus.
    Prepare(PrepareArgs),
    /// Train stage 1 (pose to frame) or stage 2 (refinement).
    Train(TrainArgs),
    /// Render a keypoint sequence through trained checkpoints.
    Infer(InferArgs),
    /// Score generated frames against reference frames.
    Eval(EvalArgs),
    /// Train and evaluate all five ablation rows.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Output directory for the prepared dataset.
    #[arg(long, default_value = "data")]
    out: PathBuf,
    /// Directory of source frames (PNG) for one recorded clip.
    #[arg(long, requires = "keypoints")]
    frames: Option<PathBuf>,
    /// Keypoint file aligned with --frames.
    #[arg(long)]
    keypoints: Option<PathBuf>,
    /// Keypoint-only file from another video, for unpaired training.
    #[arg(long)]
    unpaired_keypoints: Vec<PathBuf>,
    /// train:val frame ratio within each clip.
    #[arg(long, default_value = "17:3")]
    split: String,
    /// Generate a synthetic stick-figure corpus with N frames per clip
    /// instead of ingesting footage.
    #[arg(long, value_name = "N")]
    synthetic: Option<usize>,
    /// Paired clips in the synthetic corpus.
    #[arg(long, default_value_t = 2)]
    clips: usize,
    /// Keypoint-only clips in the synthetic corpus.
    #[arg(long, default_value_t = 1)]
    unpaired_clips: usize,
    /// Output canvas as HxW.
    #[arg(long, default_value = "64x64")]
    resolution: String,
    /// Overwrite an existing manifest.
    #[arg(long)]
    force: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest produced by `prepare`.
    #[arg(long, default_value = "data/manifest.json")]
    manifest: PathBuf,
    /// Directory receiving checkpoints and loss logs.
    #[arg(long, default_value = "runs/default")]
    run_dir: PathBuf,
    /// 1 = pose to frame, 2 = refinement over stage-1 outputs.
    #[arg(long, default_value_t = 1)]
    stage: u8,
    /// Stage-1 checkpoint consumed by --stage 2. Defaults to the run
    /// directory's latest stage-1 checkpoint.
    #[arg(long)]
    stage1_checkpoint: Option<PathBuf>,
    /// TOML training config. File values override built-in defaults;
    /// explicit flags below override the file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ablation row preset controlling the four method switches.
    #[arg(long, value_parser = parse_row)]
    ablation: Option<AblationRow>,
    /// Override the paired step count (single-resolution schedules only).
    #[arg(long)]
    steps: Option<usize>,
    /// Override the stage-2 step count.
    #[arg(long)]
    stage2_steps: Option<usize>,
    /// Override the initial learning rate.
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long, default_value_t = 17)]
    seed: u64,
}

#[derive(Args)]
struct InferArgs {
    /// Keypoint sequence to render.
    #[arg(long)]
    keypoints: PathBuf,
    /// Run directory holding trained checkpoints (latest per stage), or
    /// give explicit checkpoint paths below.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    stage1_checkpoint: Option<PathBuf>,
    #[arg(long)]
    stage2_checkpoint: Option<PathBuf>,
    /// Skip stage 2 even when its checkpoint exists.
    #[arg(long)]
    stage1_only: bool,
    /// Output directory for numbered PNG frames.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Composite the rendered subject over this image.
    #[arg(long)]
    background: Option<PathBuf>,
    /// Chroma-key distance threshold for compositing.
    #[arg(long, default_value_t = DEFAULT_CHROMA_THRESHOLD)]
    chroma_threshold: f32,
    /// Overwrite existing output frames.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of generated frames.
    #[arg(long)]
    generated: PathBuf,
    /// Directory of reference frames, aligned by sorted filename.
    #[arg(long)]
    reference: PathBuf,
    /// Write the per-frame CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, default_value = "data/manifest.json")]
    manifest: PathBuf,
    /// Root directory receiving one run directory per row.
    #[arg(long, default_value = "runs/ablation")]
    out_dir: PathBuf,
    /// TOML training config applied to every row.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 17)]
    seed: u64,
}

fn parse_row(s: &str) -> Result<AblationRow> {
    s.parse()
}

fn parse_resolution(s: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = s.split('x').collect();
    let parse = |v: &str| v.parse::<usize>().ok().filter(|&n| n > 0);
    if let [h, w] = parts[..] {
        if let (Some(h), Some(w)) = (parse(h), parse(w)) {
            return Ok((h, w));
        }
    }
    Err(Error::Config(format!(
        "resolution {s:?} must look like 64x64"
    )))
}

fn parse_split(s: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = s.split(':').collect();
    let parse = |v: &str| v.parse::<usize>().ok().filter(|&n| n > 0);
    if let [a, b] = parts[..] {
        if let (Some(a), Some(b)) = (parse(a), parse(b)) {
            return Ok((a, b));
        }
    }
    Err(Error::Config(format!(
        "split {s:?} must look like 17:3 (positive train:val parts)"
    )))
}

fn cmd_prepare(args: PrepareArgs) -> Result<()> {
    let manifest_path = args.out.join("manifest.json");
    if manifest_path.exists() && !args.force {
        return Err(Error::AlreadyExists(manifest_path));
    }
    let resolution = parse_resolution(&args.resolution)?;
    let (train_parts, val_parts) = parse_split(&args.split)?;

    if let Some(frames_per_clip) = args.synthetic {
        // The synthetic corpus generator uses the standard 17:3 split.
        if (train_parts, val_parts) != (17, 3) {
            return Err(Error::Config(
                "the synthetic corpus always splits 17:3; drop --split".into(),
            ));
        }
        let path = write_synthetic_corpus(
            &args.out,
            args.clips,
            args.unpaired_clips,
            frames_per_clip,
            resolution,
            args.seed,
        )?;
        println!("manifest {}", path.display());
        return Ok(());
    }

    let (Some(frames_dir), Some(keypoints_file)) = (&args.frames, &args.keypoints) else {
        return Err(Error::Config(
            "give --frames and --keypoints, or --synthetic N".into(),
        ));
    };
    let topology = SkeletonTopology::builtin_15();
    let files = list_frame_files(frames_dir)?;
    let mut frames = Vec::with_capacity(files.len());
    for f in &files {
        frames.push(Frame::load_png(f)?);
    }
    let text = std::fs::read_to_string(keypoints_file).map_err(|e| Error::io(keypoints_file, e))?;
    let seq = parse_keypoints(&text, &topology)?;
    let cfg = PrepareConfig {
        out_resolution: resolution,
        ..PrepareConfig::default()
    };
    let clip = prepare_paired_clip(&frames, &seq, &cfg)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let (train_len, _) = split_frames(clip.frames.len(), train_parts, val_parts);
    let mut paired = Vec::new();
    let segments = [
        ("train", Split::Train, 0, train_len),
        ("val", Split::Val, train_len, clip.frames.len()),
    ];
    for (tag, split, lo, hi) in segments {
        if hi == lo {
            continue;
        }
        let part = LoadedClip {
            frames: clip.frames[lo..hi].to_vec(),
            skeletons: clip.skeletons[lo..hi].to_vec(),
            fps: clip.fps,
        };
        let dir = args.out.join(format!("clip_000_{tag}"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let (frames_dir, keypoints_file) = write_clip(&part, &topology, &dir)?;
        paired.push(PairedClipRef {
            frames_dir,
            keypoints_file,
            split,
        });
    }

    let mut unpaired = Vec::new();
    for (i, path) in args.unpaired_keypoints.iter().enumerate() {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let wild = parse_keypoints(&text, &topology)?;
        let mapped = prepare_unpaired_keypoints(&wild, cfg.margin_fraction, resolution)?;
        let out_path = args.out.join(format!("wild_{i:03}.p2vk"));
        std::fs::write(&out_path, serialize_keypoints(&mapped, &topology))
            .map_err(|e| Error::io(&out_path, e))?;
        unpaired.push(UnpairedClipRef {
            keypoints_file: out_path,
        });
    }

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        resolution,
        topology: "builtin-15".into(),
        paired_clips: paired,
        unpaired_clips: unpaired,
    };
    manifest.save(&manifest_path)?;
    println!("manifest {}", manifest_path.display());
    Ok(())
}

/// Defaults, then the config file, then explicit flags — later layers win.
fn layered_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config = match &args.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if let Some(row) = args.ablation {
        config = config.with_row(row);
    }
    if let Some(steps) = args.steps {
        if config.steps_per_resolution.len() != 1 {
            return Err(Error::Config(
                "--steps only applies to single-resolution schedules; edit the config file".into(),
            ));
        }
        config.steps_per_resolution = vec![steps];
    }
    if let Some(steps) = args.stage2_steps {
        config.stage2_steps = steps;
    }
    if let Some(lr) = args.lr {
        config.lr_initial = lr;
    }
    config.validate()?;
    Ok(config)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config = layered_config(&args)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    match args.stage {
        1 => {
            let outcome = train_stage1(&config, &manifest, &args.run_dir, args.seed)?;
            println!("checkpoint {}", outcome.checkpoint_path.display());
        }
        2 => {
            let stage1 = match &args.stage1_checkpoint {
                Some(p) => p.clone(),
                None => latest_checkpoint_path(&args.run_dir, 1).map_err(|_| {
                    Error::Config(
                        "stage 2 needs a stage-1 checkpoint: train stage 1 first or pass \
                         --stage1-checkpoint"
                            .into(),
                    )
                })?,
            };
            let outcome = train_stage2(&config, &manifest, &args.run_dir, &stage1, args.seed)?;
            println!("checkpoint {}", outcome.checkpoint_path.display());
        }
        other => return Err(Error::Config(format!("--stage {other} not in {{1,2}}"))),
    }
    Ok(())
}

fn cmd_infer(args: InferArgs) -> Result<()> {
    let stage1 = match (&args.stage1_checkpoint, &args.run_dir) {
        (Some(p), _) => p.clone(),
        (None, Some(run)) => latest_checkpoint_path(run, 1)?,
        (None, None) => {
            return Err(Error::Config(
                "give --run-dir or --stage1-checkpoint".into(),
            ))
        }
    };
    let stage2 = if args.stage1_only {
        None
    } else {
        match (&args.stage2_checkpoint, &args.run_dir) {
            (Some(p), _) => Some(p.clone()),
            // A run directory without stage 2 falls back to stage 1 alone.
            (None, Some(run)) => latest_checkpoint_path(run, 2).ok(),
            (None, None) => None,
        }
    };
    if args.out.exists() && !args.force {
        let occupied = list_frame_files(&args.out).map(|v| !v.is_empty()).unwrap_or(false);
        if occupied {
            return Err(Error::AlreadyExists(args.out));
        }
    }
    let pipeline = InferencePipeline::load(&stage1, stage2.as_deref())?;
    let mut frames = pipeline.render_file(&args.keypoints)?;
    if let Some(bg_path) = &args.background {
        let background = Frame::load_png(bg_path)?;
        frames = composite_background(&frames, &[background], GREEN_FILL, args.chroma_threshold)?;
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    for (t, frame) in frames.iter().enumerate() {
        frame.save_png(&args.out.join(format!("{t:06}.png")))?;
    }
    println!("frames {} {}", frames.len(), args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let net = PerceptualNet::fixed();
    let report = evaluate_run(&net, &args.generated, &args.reference)?;
    match &args.out {
        Some(path) => {
            report.write_csv(path)?;
            println!(
                "ssim {:.6} perceptual {:.6} fid {}",
                report.mean_ssim,
                report.mean_perceptual,
                report.fid.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into())
            );
        }
        None => print!("{}", report.to_csv()),
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let config = match &args.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    config.validate()?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let outcomes = run_ladder(&config, &manifest, &args.out_dir, args.seed)?;
    let csv = ladder_csv(&outcomes);
    let csv_path = args.out_dir.join("ablation.csv");
    std::fs::write(&csv_path, &csv).map_err(|e| Error::io(&csv_path, e))?;
    print!("{csv}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(args) => cmd_prepare(args),
        Command::Train(args) => cmd_train(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
    }
}

fn main() {
    let cli = Cli::parse();
    if cli.workers > 0 {
        // Ignore failure: the global pool can only be set once.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global();
    }
    if let Err(e) = run(cli) {
        // One line, machine-parseable: category token plus quoted message.
        eprintln!("error kind={} message={:?}", e.kind(), e.to_string());
        std::process::exit(1);
    }
}
