use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tssd::audio::{parse_protocol, parse_protocol_lenient, synth_dataset, MemorySource, ProtocolSource, UtteranceSource};
use tssd::metrics::{compute_eer, det_points, read_scores, write_det, write_scores, ScoreSet};
use tssd::models::{count_parameters, load_checkpoint, save_checkpoint, Model};
use tssd::training::{fit, score_utterances};
use tssd::verify::run_gradient_suite;

mod config;

use config::Layers;

/// How a command failed: bad invocation (exit 2) or a runtime problem (exit 1).
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

#[derive(Parser)]
#[command(name = "tssd", version, about = "Raw-waveform synthetic speech detection")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus of tone stacks and artifact-processed copies.
    Synth(SynthArgs),
    /// Train a model and keep the checkpoint with the lowest dev EER.
    Train(Box<TrainArgs>),
    /// Score a corpus with a checkpoint.
    Eval(EvalArgs),
    /// Equal error rate of a labelled score file.
    Eer(LabelledScores),
    /// DET curve rows `<threshold> <FAR> <FRR>` of a labelled score file.
    Det(DetArgs),
    /// Trainable parameter count of a model configuration.
    Params(ModelArgs),
    /// Finite-difference check of every layer kind and small composite networks.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Utterances per class.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Default)]
struct ModelArgs {
    /// `res` or `inc`.
    #[arg(long)]
    family: Option<String>,
    /// Number of stacked blocks.
    #[arg(long)]
    m: Option<usize>,
    /// Parallel branches per inception block.
    #[arg(long)]
    branches: Option<usize>,
    /// Comma-separated per-block channel counts.
    #[arg(long)]
    channels: Option<String>,
    /// Drop the 1x1 skip paths of residual blocks.
    #[arg(long)]
    no_skip: bool,
    /// Two comma-separated hidden widths of the classifier head.
    #[arg(long)]
    fc: Option<String>,
    #[arg(long)]
    stem_channels: Option<usize>,
    #[arg(long)]
    stem_kernel: Option<usize>,
    /// Samples per utterance after alignment.
    #[arg(long)]
    input_length: Option<usize>,
    /// Build convolutions without bias terms.
    #[arg(long)]
    no_conv_bias: bool,
}

impl ModelArgs {
    fn apply(&self, layers: &mut Layers) {
        let opt = |v: Option<usize>| v.map(|n| n.to_string());
        let pairs = [
            ("family", self.family.clone()),
            ("m", opt(self.m)),
            ("branches", opt(self.branches)),
            ("channels", self.channels.clone()),
            ("use_skip", self.no_skip.then(|| "false".to_string())),
            ("fc", self.fc.clone()),
            ("stem_channels", opt(self.stem_channels)),
            ("stem_kernel", opt(self.stem_kernel)),
            ("input_length", opt(self.input_length)),
            ("conv_bias", self.no_conv_bias.then(|| "false".to_string())),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                layers.set(k, v);
            }
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` settings file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train_protocol: Option<PathBuf>,
    #[arg(long)]
    train_audio: Option<PathBuf>,
    #[arg(long)]
    dev_protocol: Option<PathBuf>,
    #[arg(long)]
    dev_audio: Option<PathBuf>,
    /// Output directory for `best.tssd` and `train.log`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    /// Train with cross-entropy on mixup pairs, `λ ~ Beta(α, α)`.
    #[arg(long)]
    mixup_alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Protocol file, or a list of bare utterance ids.
    #[arg(long)]
    protocol: PathBuf,
    /// Directory holding `<utterance_id>.wav`.
    #[arg(long)]
    audio: PathBuf,
    /// Output score file.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    batch_size: u64,
}

#[derive(Args)]
struct LabelledScores {
    #[arg(long)]
    scores: PathBuf,
    /// Protocol supplying the labels.
    #[arg(long)]
    protocol: PathBuf,
}

#[derive(Args)]
struct DetArgs {
    #[command(flatten)]
    input: LabelledScores,
    /// Write rows here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(*a),
        Command::Eval(a) => cmd_eval(a),
        Command::Eer(a) => cmd_eer(a),
        Command::Det(a) => cmd_det(a),
        Command::Params(a) => cmd_params(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<(), Failure> {
    let entries = synth_dataset(a.n as usize, a.seed, &a.out)
        .with_context(|| format!("writing corpus to {}", a.out.display()))?;
    println!("wrote {} utterances to {}", entries.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let mut layers = Layers::default();
    if let Some(path) = &a.config {
        layers.apply_file(path)?;
    }
    let path_str = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned());
    let flags = [
        ("train_protocol", path_str(&a.train_protocol)),
        ("train_audio", path_str(&a.train_audio)),
        ("dev_protocol", path_str(&a.dev_protocol)),
        ("dev_audio", path_str(&a.dev_audio)),
        ("out", path_str(&a.out)),
        ("epochs", a.epochs.map(|v| v.to_string())),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("lr", a.lr.map(|v| v.to_string())),
        ("lr_decay", a.lr_decay.map(|v| v.to_string())),
        ("mixup_alpha", a.mixup_alpha.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            layers.set(k, v);
        }
    }
    a.model.apply(&mut layers);
    let run = layers.run_config()?;

    let target = run.model.input_length;
    let load = |protocol: &Path, audio: &Path| -> anyhow::Result<MemorySource> {
        let entries = parse_protocol(protocol)?;
        let source = ProtocolSource::new(entries, audio, target);
        source.check_files()?;
        Ok(MemorySource::preload(&source)?)
    };
    let train = load(&run.train_protocol, &run.train_audio).context("loading training data")?;
    let dev = load(&run.dev_protocol, &run.dev_audio).context("loading dev data")?;
    fs::create_dir_all(&run.out).with_context(|| format!("creating {}", run.out.display()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let model: Model<f32> = Model::build(&run.model, &mut rng)?;
    println!(
        "model={} params={} loss={} train={} dev={}",
        run.model.family,
        model.count_parameters(),
        run.train.loss,
        train.len(),
        dev.len()
    );
    let log_path = run.out.join("train.log");
    let mut log_file = BufWriter::new(fs::File::create(&log_path)?);
    let mut write_error = None;
    let outcome = fit(model, &train, &dev, &run.train, &mut rng, |entry| {
        println!("{entry}");
        if let Err(e) = writeln!(log_file, "{entry}").and_then(|_| log_file.flush()) {
            write_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_error {
        return Err(anyhow::Error::new(e).context(format!("writing {}", log_path.display())).into());
    }
    let ck_path = run.out.join("best.tssd");
    save_checkpoint(&outcome.best.model, outcome.best.optimizer.as_ref(), &ck_path)?;
    println!(
        "best epoch={} dev_eer={} checkpoint={}",
        outcome.best_epoch,
        outcome.best_eer,
        ck_path.display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let ck = load_checkpoint(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let entries = parse_protocol_lenient(&a.protocol)?;
    let source = ProtocolSource::new(entries, &a.audio, ck.model.config().input_length);
    source.check_files()?;
    let scores = score_utterances(&ck.model, &source, a.batch_size as usize)?;
    write_scores(&scores, &a.scores).with_context(|| format!("writing {}", a.scores.display()))?;
    println!("scored {} utterances -> {}", scores.entries.len(), a.scores.display());
    let all_labelled = scores.entries.iter().all(|e| e.label.is_known());
    if all_labelled && scores.has_both_classes() {
        report_eer(&scores)?;
    } else {
        println!("note: protocol lacks labels for both classes; EER not computed");
    }
    Ok(())
}

fn report_eer(scores: &ScoreSet) -> Result<(), Failure> {
    let r = compute_eer(scores)?;
    println!("EER: {:.2}%", r.eer * 100.0);
    println!("eer={} threshold={} far={} frr={}", r.eer, r.threshold, r.far, r.frr);
    Ok(())
}

fn labelled_scores(a: &LabelledScores) -> Result<ScoreSet, Failure> {
    if !a.protocol.is_file() {
        return Err(Failure::Usage(format!("label file {} not found", a.protocol.display())));
    }
    let read = read_scores(&a.scores, Some(&a.protocol))?;
    if !read.unmatched.is_empty() {
        eprintln!(
            "warning: {} score id(s) missing from {}: {}",
            read.unmatched.len(),
            a.protocol.display(),
            read.unmatched.join(", ")
        );
    }
    Ok(read.set)
}

fn cmd_eer(a: LabelledScores) -> Result<(), Failure> {
    report_eer(&labelled_scores(&a)?)
}

fn cmd_det(a: DetArgs) -> Result<(), Failure> {
    let points = det_points(&labelled_scores(&a.input)?)?;
    match &a.out {
        Some(path) => {
            let mut w = BufWriter::new(fs::File::create(path)?);
            write_det(&points, &mut w)?;
            w.flush()?;
        }
        None => write_det(&points, io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_params(a: ModelArgs) -> Result<(), Failure> {
    let mut layers = Layers::default();
    a.apply(&mut layers);
    let cfg = layers.model_config()?;
    println!("{}", count_parameters(&cfg)?);
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    let reports = run_gradient_suite(a.seed)?;
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(anyhow::anyhow!("{failed} of {} gradient checks failed", reports.len()).into());
    }
    println!("all {} gradient checks passed", reports.len());
    Ok(())
}
