//! `cass`: dataset generation, staged training, evaluation and ablation
//! sweeps over the procedural shape categories.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cass_core::eval::{evaluate_with_curves, predict_split, Sweep, REPORT_COLUMNS};
use cass_core::nets::Model;
use cass_core::pipeline::{ablation_csv, checkpoint_header, init_model, run_ablations};
use cass_core::shapegen::{generate_dataset, parse_categories, read_dataset, write_dataset, GenConfig, Split};
use cass_core::tensor::{read_checkpoint, write_checkpoint};
use cass_core::train::{run_stage, Ablation, TrainConfig};
use cass_core::{file_sha256, Error};
use clap::{Args, Parser, Subcommand, ValueEnum};

use manifest::{sidecar, Manifest};

const OUT_ENV: &str = "CASS_OUT_DIR";

#[derive(Parser)]
#[command(name = "cass", version, about, long_about = None)]
#[command(after_help = "Exit codes: 0 success, 2 usage or input error, 3 numeric abort, 4 I/O error.\n\
    Outputs default to the directory in CASS_OUT_DIR, or ./runs when unset.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural dataset file.
    GenData(GenDataArgs),
    /// Run training stages and write per-stage checkpoints and loss curves.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    #[command(after_help = format!(
        "Report columns: {REPORT_COLUMNS}\n\
         One row per category plus `overall`. IoU25/IoU50 and the pose columns are pass fractions; \
         CD is in units of 1e-3 m and EMD in meters.\n\
         Curves CSV columns: kind,threshold,category,ap"
    ))]
    Eval(EvalArgs),
    /// Train and evaluate several ablations with identical seeds and data.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Comma-separated built-in categories (bottle, bowl, camera, can, laptop, mug).
    #[arg(long, default_value = "bottle,bowl,mug")]
    categories: String,
    #[arg(long, default_value_t = 200)]
    instances_per_category: usize,
    #[arg(long, default_value_t = 4)]
    views_per_instance: usize,
    /// Canonical points per instance.
    #[arg(long, default_value_t = 128)]
    points: usize,
    /// Points drawn per observation before culling.
    #[arg(long, default_value_t = 96)]
    obs_points: usize,
    /// Fraction of drawn points kept by visibility culling.
    #[arg(long, default_value_t = 0.6)]
    visibility: f64,
    /// Standard deviation of observation noise, meters.
    #[arg(long, default_value_t = 0.001)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file [default: $CASS_OUT_DIR/data.cass].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key=value config file; unset keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    stage: StageArg,
    /// Overrides the config's ablation.
    #[arg(long)]
    ablation: Option<Ablation>,
    /// Checkpoint to continue from; required for --stage 2 or 3.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// [default: $CASS_OUT_DIR/train]
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Metric report [default: $CASS_OUT_DIR/report.csv]; AP curves go next to it.
    #[arg(long)]
    out_csv: Option<PathBuf>,
    /// Also draw the AP curves as SVG.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Monte-Carlo samples per box IoU (accepts 1e6).
    #[arg(long, default_value = "100000", value_parser = parse_count)]
    iou_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated subset of none, no_cass, no_bm, no_dm, no_vae.
    #[arg(long, value_delimiter = ',', default_value = "none,no_cass,no_bm,no_dm,no_vae")]
    ablations: Vec<Ablation>,
    /// Table CSV [default: $CASS_OUT_DIR/ablations.csv].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "100000", value_parser = parse_count)]
    iou_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_count(s: &str) -> Result<usize, String> {
    if let Ok(n) = s.parse::<usize>() {
        return Ok(n);
    }
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v <= usize::MAX as f64 => Ok(v as usize),
        _ => Err(format!("`{s}` is not a whole count")),
    }
}

fn out_dir() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn ensure_parent(path: &Path) -> cass_core::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> cass_core::Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::from_kv(&fs::read_to_string(p)?),
        None => Ok(TrainConfig::default()),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } | Error::NonFinite(_) => 3,
        Error::Io(_) => 4,
        _ => 2,
    }
}

fn gen_data(a: GenDataArgs) -> cass_core::Result<()> {
    let cfg = GenConfig {
        categories: parse_categories(&a.categories)?,
        instances_per_category: a.instances_per_category,
        views_per_instance: a.views_per_instance,
        points: a.points,
        obs_points: a.obs_points,
        visibility: a.visibility,
        noise_sigma: a.noise,
        seed: a.seed,
        ..GenConfig::default()
    };
    let ds = generate_dataset(&cfg)?;
    let out = a.out.unwrap_or_else(|| out_dir().join("data.cass"));
    ensure_parent(&out)?;
    write_dataset(&ds, &out)?;

    let mut m = Manifest::new("gen-data");
    m.set("seed", a.seed);
    m.set("generator", &ds.provenance);
    m.file("output.data", &out)?;
    m.write(&sidecar(&out, ".manifest"))?;

    let train = ds.record_indices(Split::Train).len();
    println!(
        "wrote {}: {} categories, {} instances, {} records ({} train, {} test)",
        out.display(),
        ds.categories.len(),
        ds.instances.len(),
        ds.records.len(),
        train,
        ds.records.len() - train
    );
    Ok(())
}

fn checkpoint_stage(ckpt: &cass_core::tensor::Checkpoint) -> cass_core::Result<u8> {
    ckpt.header
        .get("train.stage")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("checkpoint has no training stage".into()))
}

fn train(a: TrainArgs) -> cass_core::Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(ab) = a.ablation {
        cfg.ablation = ab;
    }
    cfg.validate()?;
    let data = read_dataset(&a.data)?;
    let data_sha = file_sha256(&a.data)?;
    let dir = a.out_dir.unwrap_or_else(|| out_dir().join("train"));
    fs::create_dir_all(&dir)?;

    let (mut model, done) = match &a.resume {
        Some(p) => {
            let ckpt = read_checkpoint(p)?;
            let done = checkpoint_stage(&ckpt)?;
            if ckpt.header.get("data.sha256").is_some_and(|s| *s != data_sha) {
                eprintln!("warning: {} was trained on a different dataset", p.display());
            }
            (Model::from_checkpoint(&ckpt)?, done)
        }
        None => (init_model(&cfg)?, 0),
    };
    let stages: Vec<u8> = match a.stage {
        StageArg::All => (done + 1..=3).collect(),
        StageArg::One => vec![1],
        StageArg::Two => vec![2],
        StageArg::Three => vec![3],
    };
    if let Some(&first) = stages.first() {
        if first > 1 && done + 1 < first {
            return Err(Error::Invalid(format!(
                "stage {first} needs a stage-{} checkpoint; pass one with --resume",
                first - 1
            )));
        }
    }

    let mut m = Manifest::new("train");
    m.set("seed", cfg.seed);
    m.section("config", &cfg.to_kv());
    m.file("input.data", &a.data)?;
    if let Some(p) = &a.resume {
        m.file("input.resume", p)?;
    }
    let manifest_path = dir.join("manifest.txt");
    for s in stages {
        eprintln!("stage {s}: {} iterations", cfg.iters(s));
        match run_stage(s, &cfg, &mut model, &data) {
            Ok(report) => {
                let ck = dir.join(format!("stage{s}.ckpt"));
                write_checkpoint(&ck, &model.to_checkpoint(&checkpoint_header(&cfg, s, &data_sha)))?;
                let curve = dir.join(format!("stage{s}_loss.csv"));
                fs::write(&curve, report.log.to_csv())?;
                m.file(&format!("output.stage{s}.checkpoint"), &ck)?;
                m.file(&format!("output.stage{s}.loss"), &curve)?;
                m.write(&manifest_path)?;
                eprintln!(
                    "stage {s}: loss {:.5} -> {:.5}, wrote {}",
                    report.initial_loss,
                    report.final_loss,
                    ck.display()
                );
            }
            Err(e) => {
                if matches!(e, Error::Diverged { .. }) {
                    let snap = dir.join(format!("stage{s}_diverged.ckpt"));
                    let mut header = checkpoint_header(&cfg, s, &data_sha);
                    header.insert("train.diverged".into(), e.to_string());
                    write_checkpoint(&snap, &model.to_checkpoint(&header))?;
                    m.file(&format!("output.stage{s}.diverged"), &snap)?;
                    m.write(&manifest_path)?;
                }
                return Err(e);
            }
        }
    }
    m.write(&manifest_path)
}

fn eval(a: EvalArgs) -> cass_core::Result<()> {
    let model = Model::from_checkpoint(&read_checkpoint(&a.checkpoint)?)?;
    let data = read_dataset(&a.data)?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let preds = predict_split(&model, &data, split)?;
    let (report, curves) = evaluate_with_curves(&preds, &Sweep::default(), a.iou_samples, a.seed)?;

    let out = a.out_csv.unwrap_or_else(|| out_dir().join("report.csv"));
    ensure_parent(&out)?;
    fs::write(&out, report.to_csv())?;
    let curve_path = out.with_file_name(format!(
        "{}_curves.csv",
        out.file_stem().and_then(|s| s.to_str()).unwrap_or("report")
    ));
    fs::write(&curve_path, curves.to_csv())?;

    let mut m = Manifest::new("eval");
    m.set("seed", a.seed);
    m.set("split", if matches!(split, Split::Train) { "train" } else { "test" });
    m.set("iou_samples", a.iou_samples);
    m.file("input.checkpoint", &a.checkpoint)?;
    m.file("input.data", &a.data)?;
    m.file("output.report", &out)?;
    m.file("output.curves", &curve_path)?;
    if let Some(svg) = &a.svg {
        ensure_parent(svg)?;
        fs::write(svg, curves.to_svg())?;
        m.file("output.svg", svg)?;
    }
    m.write(&sidecar(&out, ".manifest"))?;
    print!("{}", report.to_csv());
    Ok(())
}

fn ablate(a: AblateArgs) -> cass_core::Result<()> {
    if a.ablations.is_empty() {
        return Err(Error::Invalid("no ablations given".into()));
    }
    let cfg = load_config(a.config.as_deref())?;
    let data = read_dataset(&a.data)?;
    let out = a.out.unwrap_or_else(|| out_dir().join("ablations.csv"));
    ensure_parent(&out)?;

    let mut m = Manifest::new("ablate");
    m.set("seed", cfg.seed);
    m.set("eval_seed", a.seed);
    m.set("iou_samples", a.iou_samples);
    m.section("config", &cfg.to_kv());
    m.file("input.data", &a.data)?;

    let mut done = Vec::new();
    let result = run_ablations(&cfg, &data, &a.ablations, a.iou_samples, a.seed, |r| {
        eprintln!("{}: 10d5cm {:.3}", r.ablation, r.report.overall.map_10d5cm);
        done.push(r.clone());
        fs::write(&out, ablation_csv(&done))?;
        Ok(())
    });
    if !done.is_empty() {
        m.set("completed", done.iter().map(|r| r.ablation.as_str()).collect::<Vec<_>>().join(","));
        m.file("output.table", &out)?;
        m.write(&sidecar(&out, ".manifest"))?;
    }
    let results = result?;
    print!("{}", ablation_csv(&results));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
