use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use chrono_dce::model::{ModelConfig, RecognizerModel};
use chrono_dce::pipeline::{Encoding, FeatureStream, Pipeline};
use chrono_dce::probe::{probe_train, ProbeConfig, ProbeKind};
use chrono_dce::report::{self, ExperimentManifest, NoiseRow, EXPERIMENT_FILE};
use chrono_dce::skeleton::{synth_generate, Dataset, NoiseSpec, SkeletonGraph, SyntheticSpec, BODY9_JOINTS};
use chrono_dce::train::{self, EnsembleMember, TrainConfig};
use chrono_dce::losses::LossWeights;

#[derive(Parser)]
#[command(name = "chrono-dce", version, about = "Cosine encoding and chronological loss toolkit for skeleton action recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic skeleton action dataset.
    Synth(SynthArgs),
    /// Train a recognizer and write a checkpoint plus run record.
    Train(TrainArgs),
    /// Accuracy of checkpoints under Gaussian input noise.
    NoiseBench(NoiseArgs),
    /// Train the chronological-order probe.
    Probe(ProbeArgs),
    /// Softmax-averaging ensemble of checkpoints.
    Ensemble(EnsembleArgs),
    /// Markdown and SVG report over an experiment directory.
    Report(ReportArgs),
}

#[derive(Parser)]
struct SynthArgs {
    /// Number of classes; the first ones form reversal pairs, the rest are
    /// hand-waving classes at different frequencies.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..=64))]
    classes: u64,
    /// Samples per class.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    samples: u64,
    #[arg(long, default_value_t = 300, value_parser = clap::value_parser!(u64).range(2..))]
    frames: u64,
    #[arg(long, default_value_t = 9)]
    joints: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureArg {
    Joint,
    Bone,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncodingArg {
    None,
    Dce,
    RandPm1,
    Repeat,
}

#[derive(Parser)]
struct SplitArgs {
    /// Fraction of every class held out for validation; 0 uses everything.
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Parser)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = FeatureArg::Joint)]
    features: FeatureArg,
    #[arg(long, value_enum, default_value_t = EncodingArg::None)]
    encoding: EncodingArg,
    #[arg(long = "K", default_value_t = 8)]
    k: usize,
    /// Drop the raw block from the cosine encoding.
    #[arg(long)]
    no_original: bool,
    #[arg(long, default_value_t = 1.0)]
    lambda_crl: f64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    /// Global gradient-norm clip; 0 disables.
    #[arg(long, default_value_t = 1.0)]
    clip: f64,
    #[arg(long, value_delimiter = ',', default_value = "16,32,48")]
    widths: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Parser)]
struct NoiseArgs {
    /// Checkpoint manifests (`model.json`), comma separated or repeated.
    #[arg(long = "checkpoint", alias = "checkpoints", value_delimiter = ',', required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.02,0.05,0.1,0.15,0.2")]
    epsilons: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    None,
    Random,
    Tte,
}

#[derive(Parser)]
struct ProbeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = KindArg::Tte)]
    kind: KindArg,
    #[arg(long = "K", default_value_t = 3)]
    k: usize,
    /// Keep the raw block in front of the cosine blocks.
    #[arg(long)]
    include_original: bool,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, value_delimiter = ',', default_value = "16,32,48")]
    widths: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.25)]
    val_fraction: f64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Parser)]
struct EnsembleArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    /// Directory for `ensemble.json`; printed to stdout either way.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Parser)]
struct ReportArgs {
    #[arg(long)]
    experiment_dir: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("CHRONO_DCE_THREADS") {
        let n: usize = n
            .parse()
            .with_context(|| format!("CHRONO_DCE_THREADS must be a positive integer, got {n:?}"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::NoiseBench(a) => noise_bench(a),
        Command::Probe(a) => probe(a),
        Command::Ensemble(a) => ensemble(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn open_manifest(dir: &Path, name: &str, command: &str) -> Result<ExperimentManifest> {
    if dir.join(EXPERIMENT_FILE).is_file() {
        Ok(ExperimentManifest::load(dir)?)
    } else {
        Ok(ExperimentManifest::new(name, command))
    }
}

fn dir_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "experiment".into())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn split(data: &Dataset, s: &SplitArgs) -> Result<(Dataset, Dataset)> {
    if s.val_fraction == 0.0 {
        return Ok((data.clone(), data.clone()));
    }
    Ok(data.split(s.val_fraction, s.split_seed)?)
}

fn synth(a: SynthArgs) -> Result<()> {
    if a.joints != BODY9_JOINTS.len() {
        bail!(
            "--joints {} is not supported: the generator drives the built-in {}-joint body",
            a.joints,
            BODY9_JOINTS.len()
        );
    }
    let classes = a.classes as usize;
    let pairs = (classes / 2).min(chrono_dce::skeleton::Motion::ALL.len());
    let cycles: Vec<f64> = (0..classes - 2 * pairs).map(|i| (i + 2) as f64).collect();
    let spec = SyntheticSpec::new(pairs, &cycles, a.frames as usize, a.samples as usize, a.seed)?;
    let data = synth_generate(&spec)?;
    let manifest = data.save_dir(&a.out, Some(&spec))?;
    println!(
        "wrote {} sequences ({} classes × {}) to {}",
        manifest.entries.len(),
        classes,
        a.samples,
        a.out.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let data = Dataset::load_dir(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let graph = SkeletonGraph::body9();
    let encoding = match a.encoding {
        EncodingArg::None => Encoding::None,
        EncodingArg::Dce => Encoding::Dce {
            k: a.k,
            include_original: !a.no_original,
        },
        EncodingArg::RandPm1 => Encoding::RandPm1 { k: a.k, seed: a.seed },
        EncodingArg::Repeat => Encoding::Repeat { k: a.k },
    };
    let features = match a.features {
        FeatureArg::Joint => FeatureStream::Joint,
        FeatureArg::Bone => FeatureStream::Bone,
    };
    let pipeline = Pipeline::new(features, encoding);
    let cfg = TrainConfig {
        lr0: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
        weights: LossWeights::new(a.lambda_crl)?,
        pipeline,
        clip_grad_norm: (a.clip > 0.0).then_some(a.clip),
        ..TrainConfig::scaled(a.epochs)
    };
    let model_cfg =
        ModelConfig::new(pipeline.in_channels(), graph.joints(), data.num_classes()).with_widths(&a.widths);
    let (tr, va) = split(&data, &a.split)?;
    let trx = train::prepare(&tr, &pipeline, &graph, None)?;
    let vax = train::prepare(&va, &pipeline, &graph, None)?;
    let (model, mut run) = train::train(&model_cfg, &graph, &trx, Some(&vax), &cfg)?;
    run.class_names = data.class_names.clone();

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    model.save_with(a.out.join("model.json"), Some(&pipeline))?;
    run.save(a.out.join("run.json"))?;
    if let Some(e) = &run.evaluation {
        write(&a.out.join("confusion.csv"), &e.confusion_csv())?;
    }
    let mut m = open_manifest(&a.out, &dir_name(&a.out), "train")?;
    m.seeds.insert("train".into(), a.seed);
    m.seeds.insert("split".into(), a.split.split_seed);
    m.config("train", &cfg)?;
    m.config("model", &model_cfg)?;
    m.config("data", &json!({ "path": a.data, "val_fraction": a.split.val_fraction }))?;
    m.record(&a.out, "checkpoint", "model.json")?;
    m.record(&a.out, "checkpoint_payload", "model.bin")?;
    m.record(&a.out, "train_run", "run.json")?;
    if run.evaluation.is_some() {
        m.record(&a.out, "confusion_csv", "confusion.csv")?;
    }
    m.save(&a.out)?;
    for e in &run.epochs {
        println!(
            "epoch {:3}  lr {:.2e}  loss {:.4}  crl {:.4}  train acc {:.3}  val acc {}",
            e.epoch,
            e.lr,
            e.loss,
            e.crl_loss,
            e.train_accuracy,
            e.val_accuracy.map_or("-".into(), |v| format!("{v:.3}"))
        );
    }
    println!(
        "{} input channels, {} parameters; checkpoint in {}",
        model_cfg.in_channels,
        run.param_count.total,
        a.out.display()
    );
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<(RecognizerModel, Pipeline)> {
    let (model, pipeline) =
        RecognizerModel::load_with_pipeline(path).with_context(|| format!("loading {}", path.display()))?;
    let pipeline = pipeline.with_context(|| format!("{} records no input pipeline", path.display()))?;
    Ok((model, pipeline))
}

fn checkpoint_name(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn noise_bench(a: NoiseArgs) -> Result<()> {
    if a.trials == 0 {
        bail!("--trials must be at least 1");
    }
    if let Some(e) = a.epsilons.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        bail!("noise levels must be finite and >= 0, got {e}");
    }
    let data = Dataset::load_dir(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let (_, va) = split(&data, &a.split)?;
    let graph = SkeletonGraph::body9();
    let mut rows = Vec::new();
    for path in &a.checkpoints {
        let (model, pipeline) = load_checkpoint(path)?;
        let name = checkpoint_name(path);
        for &eps in &a.epsilons {
            for trial in 0..a.trials {
                let noise = NoiseSpec {
                    epsilon: eps,
                    seed: a.seed.wrapping_add(1000 * trial as u64),
                };
                let x = train::prepare(&va, &pipeline, &graph, Some(&noise))?;
                let accuracy = train::accuracy(&model, &x)?;
                println!("{name}  ε={eps}  trial {trial}  accuracy {accuracy:.4}");
                rows.push(NoiseRow {
                    model: name.clone(),
                    epsilon: eps,
                    trial,
                    accuracy,
                });
            }
        }
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write(&a.out.join("noise.csv"), &report::noise_csv(&rows))?;
    let means = report::noise_means(&rows);
    write(
        &a.out.join("noise.svg"),
        &report::line_chart_svg("Accuracy under input noise", "epsilon", "accuracy", &means),
    )?;
    let mut m = open_manifest(&a.out, &dir_name(&a.out), "noise-bench")?;
    m.seeds.insert("noise".into(), a.seed);
    m.config(
        "noise_bench",
        &json!({ "checkpoints": a.checkpoints, "epsilons": a.epsilons, "trials": a.trials, "data": a.data }),
    )?;
    m.record(&a.out, "noise_csv", "noise.csv")?;
    m.record(&a.out, "noise_svg", "noise.svg")?;
    m.save(&a.out)?;
    Ok(())
}

fn probe(a: ProbeArgs) -> Result<()> {
    let data = Dataset::load_dir(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let graph = SkeletonGraph::body9();
    let kind = match a.kind {
        KindArg::None => ProbeKind::None,
        KindArg::Random => ProbeKind::Random,
        KindArg::Tte => ProbeKind::Tte,
    };
    let cfg = ProbeConfig {
        kind,
        k: a.k,
        include_original: a.include_original,
        lr: a.lr,
        epochs: a.epochs,
        seed: a.seed,
        widths: a.widths.clone(),
        ..ProbeConfig::default()
    };
    let (tr, va) = data.split(a.val_fraction, a.split_seed)?;
    let (_, report) = probe_train(&tr, &va, &graph, &cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let name = kind.name();
    let csv = format!("curves_{name}.csv");
    let js = format!("probe_{name}.json");
    let svg = format!("probe_{name}.svg");
    write(&a.out.join(&csv), &report.curves_csv())?;
    write(&a.out.join(&js), &serde_json::to_string_pretty(&report)?)?;
    let series: Vec<(String, Vec<(f64, f64)>)> = report
        .held_out
        .curves
        .iter()
        .take(3)
        .enumerate()
        .map(|(i, c)| (format!("sample {i}"), c.iter().enumerate().map(|(t, &v)| (t as f64, v)).collect()))
        .collect();
    write(
        &a.out.join(&svg),
        &report::line_chart_svg(&format!("Probe outputs ({name})"), "frame", "normalized value", &series),
    )?;
    let mut m = open_manifest(&a.out, &dir_name(&a.out), "probe")?;
    m.seeds.insert(format!("probe_{name}"), a.seed);
    m.config(&format!("probe_{name}"), &cfg)?;
    m.record(&a.out, "probe_curves", &csv)?;
    m.record(&a.out, "probe_report", &js)?;
    m.record(&a.out, "probe_svg", &svg)?;
    m.save(&a.out)?;
    println!(
        "{name}: {} output frames, mean monotonicity {:.4} over {} held-out sequences",
        report.output_frames,
        report.held_out.mean_fraction,
        report.held_out.fractions.len()
    );
    Ok(())
}

fn ensemble(a: EnsembleArgs) -> Result<()> {
    let data = Dataset::load_dir(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let (_, va) = split(&data, &a.split)?;
    let graph = SkeletonGraph::body9();
    let loaded: Vec<(RecognizerModel, Pipeline)> =
        a.checkpoints.iter().map(|p| load_checkpoint(p)).collect::<Result<_>>()?;
    let mut individual = Vec::new();
    for ((model, pipeline), path) in loaded.iter().zip(&a.checkpoints) {
        let x = train::prepare(&va, pipeline, &graph, None)?;
        individual.push(json!({ "checkpoint": path, "accuracy": train::accuracy(model, &x)? }));
    }
    let members: Vec<EnsembleMember<'_>> = loaded
        .iter()
        .map(|(model, pipeline)| EnsembleMember { model, pipeline })
        .collect();
    let eval = train::ensemble_eval(&members, &va, &graph, None)?;
    let result = json!({ "ensemble_accuracy": eval.accuracy, "members": individual, "samples": va.len() });
    let text = serde_json::to_string_pretty(&result)?;
    println!("{text}");
    if let Some(out) = &a.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        write(&out.join("ensemble.json"), &text)?;
        let mut m = open_manifest(out, &dir_name(out), "ensemble")?;
        m.config("ensemble", &json!({ "checkpoints": a.checkpoints, "data": a.data }))?;
        m.record(out, "ensemble", "ensemble.json")?;
        m.save(out)?;
    }
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let inputs = report::collect(&a.experiment_dir)?;
    let (md, charts) = report::render(&inputs);
    for (name, svg) in &charts {
        write(&a.experiment_dir.join(name), svg)?;
    }
    write(&a.experiment_dir.join("report.md"), &md)?;
    println!("wrote {}", a.experiment_dir.join("report.md").display());
    Ok(())
}
