use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sgsg_core::checkpoint::Checkpoint;
use sgsg_core::dataset::parse_scene;
use sgsg_core::harness::config::TrainConfig;
use sgsg_core::harness::cost::{cost_report, write_graph_stats_csv};
use sgsg_core::harness::data::Corpus;
use sgsg_core::harness::evaluate::{evaluate, write_metrics_csv, write_prediction_dump, EvalOptions};
use sgsg_core::harness::plot::plot_dump;
use sgsg_core::harness::train::{model_config_for, train};
use sgsg_core::model::{ModelConfig, SgsgModel};
use sgsg_core::scene::{parse_label_grid, MergeMode, SceneRaster};
use sgsg_core::synthetic::write_benchmark;

#[derive(Parser)]
#[command(name = "sgsg", version, about = "Scene-gated social-graph trajectory forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on every scene but the held-out one.
    Train(TrainArgs),
    /// Best-of-K ADE/FDE on the held-out scene.
    Evaluate(EvalArgs),
    /// Dump observed, ground-truth and sampled trajectories as CSV.
    Predict(PredictArgs),
    /// Convert a text label grid into a binary scene raster.
    RasterizeScene(RasterizeArgs),
    /// Star versus complete graph edge counts per timestep.
    GraphStats(GraphStatsArgs),
    /// Render a prediction dump as one SVG per scene.
    Plot(PlotArgs),
    /// Write synthetic ETH/UCY-format scenes, rasters and a config.
    Synthesize(SynthesizeArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    held_out: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    merge: Option<MergeMode>,
    /// Ablation preset: v1..v5, alpha, beta or sgsg.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    no_scene: bool,
    #[arg(long)]
    no_sg: bool,
    #[arg(long)]
    no_vae: bool,
    #[arg(long)]
    teacher_forcing: bool,
    #[arg(long)]
    prior_sampling: bool,
    #[arg(long)]
    gcn_self_loop: bool,
    /// Checkpoint to write.
    #[arg(long, default_value = "sgsg.ckpt")]
    out: PathBuf,
    /// Per-epoch training log.
    #[arg(long, default_value = "train_log.csv")]
    log: PathBuf,
}

#[derive(Args)]
struct EvalCommon {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Samples per window (1, 20 and 100 are the usual protocols).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    k: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scene to evaluate; defaults to `held_out` from the config.
    #[arg(long)]
    scene: Option<String>,
    #[arg(long)]
    prior_sampling: bool,
    /// Sample the latent even for a single prediction.
    #[arg(long)]
    stochastic: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: EvalCommon,
    /// Metrics CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    common: EvalCommon,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RasterizeArgs {
    /// Text grid of class labels, one row per line.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    meters_per_cell: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    origin_x: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    origin_y: f64,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GraphStatsArgs {
    /// Config listing the scenes.
    #[arg(long, conflicts_with = "annotations")]
    config: Option<PathBuf>,
    /// A single annotation file instead of a config.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Restrict to these scenes.
    #[arg(long)]
    scene: Vec<String>,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    dump: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SynthesizeArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Recorded steps per scene (0.4 s each).
    #[arg(long, default_value_t = 600)]
    steps: usize,
    #[arg(long, default_value_t = 64)]
    raster_size: usize,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::load(&a.config).with_context(|| format!("loading {}", a.config.display()))?;
    cfg.held_out = Some(a.held_out);
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = a.epochs {
        cfg.epochs = epochs;
    }
    if let Some(v) = &a.variant {
        let preset = ModelConfig::variant(v)?;
        cfg.model.use_sg = preset.use_sg;
        cfg.model.use_scene = preset.use_scene;
        cfg.model.use_vae = preset.use_vae;
        cfg.model.merge = preset.merge;
    }
    if let Some(m) = a.merge {
        cfg.model.merge = m;
    }
    cfg.model.use_scene &= !a.no_scene;
    cfg.model.use_sg &= !a.no_sg;
    cfg.model.use_vae &= !a.no_vae;
    cfg.teacher_forcing |= a.teacher_forcing;
    cfg.prior_sampling |= a.prior_sampling;
    cfg.model.gcn_self_loop |= a.gcn_self_loop;
    cfg.validate()?;

    let corpus = Corpus::load(&cfg)?;
    let outcome = train(&cfg, &corpus)?;
    outcome.checkpoint.save(&a.out)?;
    outcome.report.write_csv(output(Some(&a.log))?)?;
    if outcome.report.regression {
        log::warn!("training loss increased during the first epochs");
    }
    eprintln!(
        "trained on {} windows ({} validation), {} steps, kept epoch {}; checkpoint {}",
        outcome.n_train,
        outcome.n_val,
        outcome.report.steps,
        outcome.report.best_epoch,
        a.out.display()
    );
    Ok(())
}

fn load_for_eval(c: &EvalCommon) -> Result<(Checkpoint, Corpus, String, EvalOptions)> {
    let cfg = TrainConfig::load(&c.config).with_context(|| format!("loading {}", c.config.display()))?;
    let ck = Checkpoint::load(&c.checkpoint).with_context(|| format!("loading {}", c.checkpoint.display()))?;
    let scene = c
        .scene
        .clone()
        .or(cfg.held_out.clone())
        .ok_or_else(|| anyhow!("no scene given and the config has no held_out"))?;
    let corpus = Corpus::load(&cfg)?;
    let opts = EvalOptions {
        k: c.k as usize,
        seed: c.seed,
        prior_sampling: c.prior_sampling || cfg.prior_sampling,
        stochastic: c.stochastic,
    };
    Ok((ck, corpus, scene, opts))
}

fn run_evaluate(a: EvalArgs) -> Result<()> {
    let (ck, corpus, scene, opts) = load_for_eval(&a.common)?;
    let eval = evaluate(&ck, &corpus, &scene, &opts)?;
    let mut w = output(a.out.as_deref())?;
    write_metrics_csv(&mut w, std::slice::from_ref(&eval.report))?;
    w.flush()?;
    eprintln!(
        "{}: K={} ADE {:.3} m FDE {:.3} m (constant velocity {:.3} / {:.3}) over {} windows in {:.1}s",
        eval.report.scene,
        eval.report.k,
        eval.report.ade_m,
        eval.report.fde_m,
        eval.report.baseline_ade_m,
        eval.report.baseline_fde_m,
        eval.report.n_windows,
        eval.report.wall_time_s
    );
    Ok(())
}

fn run_predict(a: PredictArgs) -> Result<()> {
    let (ck, corpus, scene, opts) = load_for_eval(&a.common)?;
    let eval = evaluate(&ck, &corpus, &scene, &opts)?;
    let mut w = output(Some(&a.out))?;
    write_prediction_dump(&mut w, &eval)?;
    w.flush()?;
    Ok(())
}

fn run_rasterize(a: RasterizeArgs) -> Result<()> {
    let text = fs::read_to_string(&a.labels).with_context(|| format!("reading {}", a.labels.display()))?;
    let (h, w, labels) = parse_label_grid(&text)?;
    let raster = SceneRaster::from_labels(a.classes, h, w, &labels, a.meters_per_cell, [a.origin_x, a.origin_y])?;
    raster.save(&a.out)?;
    Ok(())
}

fn run_graph_stats(a: GraphStatsArgs) -> Result<()> {
    let (index, mut names, params) = match (&a.config, &a.annotations) {
        (Some(path), None) => {
            let cfg = TrainConfig::load(path)?;
            let corpus = Corpus::load(&cfg)?;
            let model = SgsgModel::<f32>::new(model_config_for(&cfg, &corpus), cfg.seed)?;
            let params = model
                .parameter_counts()
                .into_iter()
                .map(|(m, n)| (m.to_string(), n))
                .collect();
            let names = corpus.names();
            (corpus.index, names, params)
        }
        (None, Some(path)) => {
            let parsed = parse_scene(path)?;
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scene".into());
            let mut index = sgsg_core::dataset::NeighborIndex::new();
            index.insert_scene(&name, &parsed);
            (index, vec![name], Vec::new())
        }
        _ => bail!("give exactly one of --config or --annotations"),
    };
    if !a.scene.is_empty() {
        for s in &a.scene {
            if !names.contains(s) {
                bail!("unknown scene `{s}`");
            }
        }
        names.retain(|n| a.scene.contains(n));
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let report = cost_report(&index, &refs, params);
    let mut w = output(a.out.as_deref())?;
    write_graph_stats_csv(&mut w, &report)?;
    w.flush()?;
    for s in &report.scenes {
        eprintln!(
            "{}: {} timesteps, star {} vs complete {} messages (ratio {:.4})",
            s.scene,
            s.timesteps,
            s.star_messages,
            s.complete_messages,
            s.ratio()
        );
    }
    for (module, n) in &report.parameters {
        eprintln!("parameters {module}: {n}");
    }
    Ok(())
}

fn run_plot(a: PlotArgs) -> Result<()> {
    for path in plot_dump(&a.dump, &a.out_dir)? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn run_synthesize(a: SynthesizeArgs) -> Result<()> {
    let cfg = write_benchmark(&a.out_dir, a.seed, a.steps, a.raster_size)?;
    eprintln!("wrote {}", cfg.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Predict(a) => run_predict(a),
        Command::RasterizeScene(a) => run_rasterize(a),
        Command::GraphStats(a) => run_graph_stats(a),
        Command::Plot(a) => run_plot(a),
        Command::Synthesize(a) => run_synthesize(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
