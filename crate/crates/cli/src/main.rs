//! Batch command-line surface: scene synthesis, training with the ablation
//! switch matrix, evaluation, aggregation, and report emission.

mod run_record;
mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use slotbench_core::eval::{evaluate_model, evaluate_predictions, EvalOptions};
use slotbench_core::metrics::{aggregate_summaries, MboDirection, ReportSummary};
use slotbench_core::model::{read_checkpoint, write_checkpoint, ModelConfig};
use slotbench_core::scene::{
    build_manifest, generate_scene, parse_scene_spec, write_image, write_segmentation, Manifest,
    SceneSpec,
};
use slotbench_core::train::{parse_config, train, Schedule, TrainConfig};

use run_record::RunRecord;

#[derive(Parser)]
#[command(name = "slotbench", version, about = "Object-centric learning desk bench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes with instance masks and a manifest.
    Synth {
        /// Scene spec file (flat key = value); defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes to generate.
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "synth")]
        dataset: String,
        /// Slot count recorded in the manifest (default: max objects + 1).
        #[arg(long)]
        slots: Option<usize>,
    },
    /// Train a model on a directory of scenes.
    Train {
        /// Training config file (flat key = value) applied over desk
        /// defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Reset to the frozen-encoder baseline recipe (exponential
        /// schedule, clip 1.0, no encoder tuning) before applying switches.
        #[arg(long)]
        baseline: bool,
        /// Train the encoder end-to-end.
        #[arg(long)]
        finetune: bool,
        /// General recipe improvements: cosine schedule, gradient clip 0.1.
        #[arg(long = "improved-hp")]
        improved_hp: bool,
        /// Encoder recipe improvements: LR factor 0.5, blockwise decay
        /// 0.85, weight decay 0.01.
        #[arg(long = "encoder-hp")]
        encoder_hp: bool,
        /// Decode only the top-k slots per patch.
        #[arg(long)]
        topk: Option<usize>,
        /// Add the high-resolution adaptation stage.
        #[arg(long)]
        hires: bool,
        /// Override the trained slot count.
        #[arg(long)]
        slots: Option<usize>,
        /// Override total training steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Score a checkpoint (or a directory of predicted segmentations)
    /// against a manifest.
    Eval {
        #[arg(long, conflicts_with = "pred_dir")]
        checkpoint: Option<PathBuf>,
        /// Directory of precomputed segmentations named like the
        /// manifest's mask files.
        #[arg(long = "pred-dir")]
        pred_dir: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        /// CSV output path; the JSON summary lands next to it.
        #[arg(long)]
        out: PathBuf,
        /// Run record; defaults to run.json beside the checkpoint.
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Best-overlap direction: per ground-truth mask (gt) or per
        /// predicted mask (pred).
        #[arg(long = "mbo-direction", default_value = "gt", value_parser = ["gt", "pred"])]
        mbo_direction: String,
        /// Also score per-image k-means clusterings of encoder features.
        #[arg(long)]
        kmeans: bool,
        /// Override the decode top-k used at evaluation.
        #[arg(long, conflicts_with = "full_decode")]
        topk: Option<usize>,
        /// Force full decoding even if the run trained with top-k.
        #[arg(long = "full-decode")]
        full_decode: bool,
    },
    /// Combine dataset summaries into the per-sample weighted aggregate.
    Aggregate {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit a comparison CSV and SVG bar charts over summaries.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        summaries: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not usage errors.
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { spec, out, count, seed, dataset, slots } => {
            cmd_synth(spec.as_deref(), &out, count, seed, &dataset, slots)
        }
        Command::Train {
            config,
            data,
            out,
            seed,
            baseline,
            finetune,
            improved_hp,
            encoder_hp,
            topk,
            hires,
            slots,
            steps,
        } => {
            let switches = TrainSwitches {
                baseline,
                finetune,
                improved_hp,
                encoder_hp,
                topk,
                hires,
                slots,
                steps,
            };
            cmd_train(config.as_deref(), &data, &out, seed, &switches)
        }
        Command::Eval {
            checkpoint,
            pred_dir,
            manifest,
            out,
            run,
            seed,
            mbo_direction,
            kmeans,
            topk,
            full_decode,
        } => cmd_eval(EvalArgs {
            checkpoint,
            pred_dir,
            manifest,
            out,
            run,
            seed,
            mbo_direction,
            kmeans,
            topk,
            full_decode,
        }),
        Command::Aggregate { reports, out } => cmd_aggregate(&reports, &out),
        Command::Report { summaries, out } => cmd_report(&summaries, &out),
    }
}

fn cmd_synth(
    spec_path: Option<&Path>,
    out: &Path,
    count: usize,
    seed: u64,
    dataset: &str,
    slots: Option<usize>,
) -> Result<(), CliError> {
    if count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let spec = match spec_path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
            parse_scene_spec(&text).map_err(CliError::runtime)?
        }
        None => SceneSpec::desk(),
    };
    fs::create_dir_all(out).map_err(CliError::runtime)?;
    let mut bumps = 0u32;
    for i in 0..count {
        let scene = generate_scene(&spec, seed.wrapping_add(i as u64)).map_err(CliError::runtime)?;
        bumps += scene.subseed_bumps;
        write_image(&scene.image, &out.join(format!("{i:04}.img.bin"))).map_err(CliError::runtime)?;
        write_segmentation(&scene.seg, &out.join(format!("{i:04}.seg.bin")))
            .map_err(CliError::runtime)?;
    }
    if bumps > 0 {
        eprintln!("note: {bumps} scene(s) regenerated from bumped sub-seeds");
    }
    let n_slots = slots.unwrap_or(spec.max_objects + 1);
    let manifest = build_manifest(out, dataset, n_slots).map_err(CliError::runtime)?;
    manifest.save(&out.join("manifest.json")).map_err(CliError::runtime)?;
    println!("wrote {count} scenes and manifest.json to {}", out.display());
    Ok(())
}

struct TrainSwitches {
    baseline: bool,
    finetune: bool,
    improved_hp: bool,
    encoder_hp: bool,
    topk: Option<usize>,
    hires: bool,
    slots: Option<usize>,
    steps: Option<usize>,
}

fn apply_switches(cfg: &mut TrainConfig, s: &TrainSwitches) {
    if s.baseline {
        cfg.finetune = false;
        cfg.schedule = Schedule::Exponential;
        cfg.grad_clip_norm = 1.0;
        cfg.encoder_lr_factor = 1.0;
        cfg.layerwise_decay = 1.0;
        cfg.encoder_weight_decay = 0.0;
        cfg.topk = None;
        cfg.hires = false;
    }
    if s.finetune {
        cfg.finetune = true;
    }
    if s.improved_hp {
        cfg.schedule = Schedule::Cosine;
        cfg.grad_clip_norm = 0.1;
    }
    if s.encoder_hp {
        cfg.encoder_lr_factor = 0.5;
        cfg.layerwise_decay = 0.85;
        cfg.encoder_weight_decay = 0.01;
    }
    if let Some(k) = s.topk {
        cfg.topk = Some(k);
    }
    if s.hires {
        cfg.hires = true;
    }
    if let Some(n) = s.steps {
        cfg.total_steps = n;
        cfg.warmup_steps = cfg.warmup_steps.min(n / 10);
        cfg.exp_half_life = cfg.exp_half_life.min((n as f64 / 3.0).max(1.0));
    }
}

fn load_images_sorted(dir: &Path) -> Result<Vec<slotbench_core::ImageBuf>, CliError> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".img.bin"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(CliError::Usage(format!("no .img.bin files in {}", dir.display())));
    }
    names
        .iter()
        .map(|n| slotbench_core::scene::read_image(&dir.join(n)).map_err(CliError::runtime))
        .collect()
}

fn cmd_train(
    config_path: Option<&Path>,
    data: &Path,
    out: &Path,
    seed: u64,
    switches: &TrainSwitches,
) -> Result<(), CliError> {
    let mut cfg = match config_path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
            parse_config(&text).map_err(CliError::runtime)?
        }
        None => TrainConfig::desk(),
    };
    apply_switches(&mut cfg, switches);
    cfg.validate().map_err(CliError::runtime)?;

    let mut model = ModelConfig::desk();
    if let Some(k) = switches.slots {
        model.slots.n_slots = k;
    }
    let images = load_images_sorted(data)?;
    let outcome = train(&model, &cfg, &images, seed).map_err(CliError::runtime)?;

    fs::create_dir_all(out).map_err(CliError::runtime)?;
    write_checkpoint(&outcome.params, &out.join("checkpoint.slbw")).map_err(CliError::runtime)?;

    let mut csv = String::from("step,loss,grad_norm");
    for i in 0..outcome.group_names.len() {
        csv.push_str(&format!(",lr_group{i}"));
    }
    csv.push('\n');
    for rec in &outcome.log {
        csv.push_str(&format!("{},{},{}", rec.step, rec.loss, rec.grad_norm));
        for lr in &rec.lrs {
            csv.push_str(&format!(",{lr}"));
        }
        csv.push('\n');
    }
    fs::write(out.join("steps.csv"), csv).map_err(CliError::runtime)?;

    let record = RunRecord {
        seed,
        data_dir: data.display().to_string(),
        model: outcome.model_cfg.clone(),
        train: cfg,
        checkpoint: "checkpoint.slbw".into(),
        step_log: "steps.csv".into(),
        collapse_step: outcome.collapse_step,
        lr_groups: outcome.group_names.clone(),
    };
    record.save(&out.join("run.json")).map_err(CliError::runtime)?;
    if let Some(step) = outcome.collapse_step {
        eprintln!("note: collapse detector fired at step {step}");
    }
    println!(
        "trained {} steps; artifacts in {}",
        outcome.log.len(),
        out.display()
    );
    Ok(())
}

struct EvalArgs {
    checkpoint: Option<PathBuf>,
    pred_dir: Option<PathBuf>,
    manifest: PathBuf,
    out: PathBuf,
    run: Option<PathBuf>,
    seed: u64,
    mbo_direction: String,
    kmeans: bool,
    topk: Option<usize>,
    full_decode: bool,
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let manifest = Manifest::load(&args.manifest)
        .map_err(|e| CliError::Usage(format!("cannot load manifest: {e}")))?;
    let manifest_dir = args
        .manifest
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let direction = if args.mbo_direction == "pred" {
        MboDirection::PerPred
    } else {
        MboDirection::PerGt
    };

    let report = match (&args.checkpoint, &args.pred_dir) {
        (Some(ckpt), None) => {
            let params = read_checkpoint(ckpt).map_err(CliError::runtime)?;
            let run_path = args
                .run
                .clone()
                .unwrap_or_else(|| ckpt.parent().unwrap_or(Path::new(".")).join("run.json"));
            let record = RunRecord::load(&run_path).map_err(CliError::Usage)?;
            let topk = if args.full_decode {
                None
            } else {
                args.topk.or(record.train.topk)
            };
            if let Some(k) = topk {
                if k > manifest.n_slots {
                    return Err(CliError::Usage(format!(
                        "top-k of {k} exceeds the manifest's {} slots",
                        manifest.n_slots
                    )));
                }
            }
            let opts = EvalOptions {
                mbo_direction: direction,
                topk,
                kmeans: args.kmeans,
                seed: args.seed,
            };
            evaluate_model(&params, &record.model, &manifest, &manifest_dir, &opts)
                .map_err(CliError::runtime)?
        }
        (None, Some(pred_dir)) => {
            let opts = EvalOptions {
                mbo_direction: direction,
                topk: None,
                kmeans: false,
                seed: args.seed,
            };
            evaluate_predictions(pred_dir, &manifest, &manifest_dir, &opts)
                .map_err(CliError::runtime)?
        }
        _ => {
            return Err(CliError::Usage(
                "exactly one of --checkpoint or --pred-dir is required".into(),
            ))
        }
    };

    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(CliError::runtime)?;
        }
    }
    fs::write(&args.out, report.to_csv()).map_err(CliError::runtime)?;
    let summary_path = args.out.with_extension("summary.json");
    let mut text = serde_json::to_string_pretty(&report.summary()).map_err(CliError::runtime)?;
    text.push('\n');
    fs::write(&summary_path, text).map_err(CliError::runtime)?;
    println!(
        "evaluated {} images; wrote {} and {}",
        manifest.count(),
        args.out.display(),
        summary_path.display()
    );
    Ok(())
}

fn load_summaries(paths: &[PathBuf]) -> Result<Vec<ReportSummary>, CliError> {
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Runtime(format!("bad summary {}: {e}", p.display())))
        })
        .collect()
}

fn cmd_aggregate(reports: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let summaries = load_summaries(reports)?;
    let aggregate = aggregate_summaries(&summaries).map_err(CliError::runtime)?;
    let mut text = serde_json::to_string_pretty(&aggregate).map_err(CliError::runtime)?;
    text.push('\n');
    fs::write(out, text).map_err(CliError::runtime)?;
    println!("aggregated {} summaries into {}", summaries.len(), out.display());
    Ok(())
}

fn cmd_report(summary_paths: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let summaries = load_summaries(summary_paths)?;
    fs::create_dir_all(out).map_err(CliError::runtime)?;

    let mut csv = String::from("source,dataset,metric,mean,count\n");
    let mut metric_names: Vec<String> = Vec::new();
    for (path, s) in summary_paths.iter().zip(&summaries) {
        let source = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "summary".into());
        for (metric, m) in &s.metrics {
            csv.push_str(&format!(
                "{source},{},{metric},{},{}\n",
                s.dataset, m.mean, m.count
            ));
            if !metric_names.contains(metric) {
                metric_names.push(metric.clone());
            }
        }
    }
    fs::write(out.join("comparison.csv"), csv).map_err(CliError::runtime)?;

    metric_names.sort();
    for metric in &metric_names {
        let bars: Vec<(String, f64)> = summary_paths
            .iter()
            .zip(&summaries)
            .filter_map(|(path, s)| {
                s.metrics.get(metric).map(|m| {
                    let source = path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| "summary".into());
                    (source, m.mean)
                })
            })
            .collect();
        let chart = svg::bar_chart(metric, &bars);
        fs::write(out.join(format!("{metric}.svg")), chart).map_err(CliError::runtime)?;
    }
    println!(
        "wrote comparison.csv and {} chart(s) to {}",
        metric_names.len(),
        out.display()
    );
    Ok(())
}
