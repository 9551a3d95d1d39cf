//! Command-line entry point.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{MarginMode, RunConfig};
use crate::data::{load_dataset, Instance};
use crate::error::{Error, Result};
use crate::features::{
    delivery_features, generate_synthetic_corpus, language_features, read_alignments,
    read_annotations, Audio, FeatureVocab, SynthSpec,
};
use crate::labels::{CefrScale, LEVEL_NAMES, NUM_LEVELS};
use crate::model::Checkpoint;
use crate::objective::{
    estimate_margins, level_pair_name, write_margins_csv, MarginEstimate, MarginSchedule,
    MARGINS_CSV_HEADER,
};

use super::metrics::{evaluate, EvalReport};
use super::train::{train_log_header, train_with, EpochLog, TrainObserver};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const MARGINS_FILE: &str = "margins.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CONFUSION_FILE: &str = "confusion.csv";

#[derive(Debug, Parser)]
#[command(
    name = "mmo-asa",
    version,
    about = "Multi-aspect CEFR scoring with an ordinal multi-margin loss"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute delivery and language-use feature tensors for one response.
    Extract(ExtractArgs),
    /// Generate a synthetic corpus with known inter-level gaps.
    Synth(SynthArgs),
    /// Train one aspect model from a config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Print adjacent margins and the cumulative distance table.
    Margins(MarginsArgs),
    /// Render a report's confusion matrix as aligned text.
    Confusion(ConfusionArgs),
}

#[derive(Debug, Args)]
struct ExtractArgs {
    /// Mono 16-bit PCM WAV file.
    #[arg(long)]
    wav: PathBuf,
    /// JSON array of {word, start, end, confidence}.
    #[arg(long)]
    alignments: PathBuf,
    /// JSON array of {word, upos, deprel, morph}.
    #[arg(long)]
    annotations: PathBuf,
    /// Output prefix; writes <prefix>.delivery.tnsr and <prefix>.language.tnsr.
    #[arg(long)]
    out: PathBuf,
    /// Feature vocabulary file; the bundled one by default.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// TOML generator spec; defaults when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    train_per_class: usize,
    #[arg(long, default_value_t = 16)]
    valid_per_class: usize,
    #[arg(long, default_value_t = 0)]
    test_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Comma-separated lambda values; one run per value under <out>/lambda-<v>.
    #[arg(long, value_delimiter = ',')]
    lambda_sweep: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for report.json and confusion.csv; JSON goes to stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep only instances of this task.
    #[arg(long)]
    task: Option<String>,
}

#[derive(Debug, Args)]
struct MarginsArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Re-estimate margins from this data instead of printing the stored ones.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConfusionArgs {
    #[arg(long)]
    report: PathBuf,
}

// stdout writes that surface a closed pipe as an error instead of panicking
macro_rules! out {
    ($($arg:tt)*) => {
        std::io::Write::write_fmt(&mut std::io::stdout().lock(), format_args!($($arg)*)).map_err(Error::Io)
    };
}
macro_rules! outln {
    () => { out!("\n") };
    ($($arg:tt)*) => { out!("{}\n", format_args!($($arg)*)) };
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Extract(a) => extract(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Margins(a) => margins_cmd(a),
        Command::Confusion(a) => {
            let text = fs::read_to_string(&a.report).map_err(|e| missing(e, &a.report))?;
            let report: EvalReport = serde_json::from_str(&text)?;
            out!("{}", report.render_confusion())?;
            Ok(())
        }
    }
}

fn missing(e: std::io::Error, path: &Path) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::MissingFile(path.to_path_buf())
    } else {
        Error::Io(e)
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn extract(a: ExtractArgs) -> Result<()> {
    let audio = Audio::read_wav(&a.wav)?;
    let alignments = read_alignments(&a.alignments)
        .map_err(|e| e.context(a.alignments.display().to_string()))?;
    let tokens = read_annotations(&a.annotations)
        .map_err(|e| e.context(a.annotations.display().to_string()))?;
    if alignments.len() != tokens.len() {
        return Err(Error::InvalidAlignment(format!(
            "{} aligned words but {} annotated tokens",
            alignments.len(),
            tokens.len()
        )));
    }
    let vocab = match &a.vocab {
        Some(p) => FeatureVocab::parse(&fs::read_to_string(p).map_err(|e| missing(e, p))?)?,
        None => FeatureVocab::bundled(),
    };
    let delivery = delivery_features(&audio, &alignments)?;
    let language = language_features(&tokens, &vocab);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    delivery.save(&with_suffix(&a.out, ".delivery.tnsr"))?;
    language.save(&with_suffix(&a.out, ".language.tnsr"))?;
    outln!(
        "{} words, delivery {}x{}, language {}x{}",
        alignments.len(),
        delivery.rows(),
        delivery.cols(),
        language.rows(),
        language.cols()
    )?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => SynthSpec::load(p)?,
        None => SynthSpec::default(),
    };
    spec.validate()?;
    fs::create_dir_all(&a.out)?;
    let splits = [
        ("train", a.train_per_class, a.seed),
        ("valid", a.valid_per_class, a.seed.wrapping_add(1)),
        ("test", a.test_per_class, a.seed.wrapping_add(2)),
    ];
    for (split, per_class, seed) in splits {
        if per_class == 0 {
            continue;
        }
        let manifest =
            generate_synthetic_corpus(&spec, &[per_class; NUM_LEVELS], seed, &a.out, split)?;
        outln!(
            "{split}: {} instances -> {}",
            per_class * NUM_LEVELS,
            manifest.display()
        )?;
    }
    Ok(())
}

struct DirObserver {
    dir: PathBuf,
    log: fs::File,
    margins: Option<fs::File>,
}

impl DirObserver {
    fn create(dir: &Path, cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let mut log = fs::File::create(dir.join(TRAIN_LOG_FILE))?;
        writeln!(log, "{}", train_log_header())?;
        let margins = if cfg.margin_mode == MarginMode::DataDriven {
            let mut f = fs::File::create(dir.join(MARGINS_FILE))?;
            writeln!(f, "{MARGINS_CSV_HEADER}")?;
            Some(f)
        } else {
            None
        };
        Ok(DirObserver {
            dir: dir.to_path_buf(),
            log,
            margins,
        })
    }
}

impl TrainObserver for DirObserver {
    fn epoch_end(&mut self, log: &EpochLog, margins: Option<&MarginEstimate>) -> Result<()> {
        writeln!(self.log, "{}", log.csv_row())?;
        if let (Some(f), Some(est)) = (self.margins.as_mut(), margins) {
            write_margins_csv(f, log.epoch, est)?;
        }
        Ok(())
    }

    fn improved(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.save(&self.dir.join(CHECKPOINT_FILE))
    }
}

fn load_split(which: &str, path: Option<&PathBuf>) -> Result<Vec<Instance>> {
    let path = path.ok_or_else(|| Error::InvalidConfig(format!("{which}_manifest is not set")))?;
    let data = load_dataset(path, &CefrScale::default())
        .map_err(|e| e.context(format!("{which} manifest {}", path.display())))?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(data)
}

fn train_one(cfg: &RunConfig, train: &[Instance], valid: &[Instance], out: &Path) -> Result<()> {
    let mut observer = DirObserver::create(out, cfg)?;
    let result = train_with(
        cfg,
        train,
        valid,
        &mut observer,
        |model, schedule, valid| {
            Ok(evaluate(model, valid, cfg.aspect, &schedule.cefr_scale())?.macro_f1)
        },
    );
    match result {
        Ok(outcome) => {
            outln!(
                "lambda {}: {} epochs, best valid macro-F1 {:.4} at epoch {} -> {}",
                cfg.lambda,
                outcome.state.epoch,
                outcome.state.best_metric,
                outcome.best.epoch,
                out.join(CHECKPOINT_FILE).display()
            )?;
            Ok(())
        }
        Err(e) => Err(e.context(format!(
            "training into {} (last improving checkpoint kept)",
            out.display()
        ))),
    }
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let train = load_split("train", cfg.train_manifest.as_ref())?;
    let valid = load_split("valid", cfg.valid_manifest.as_ref())?;
    match a.lambda_sweep {
        None => train_one(&cfg, &train, &valid, &a.out),
        Some(lambdas) => {
            for lambda in lambdas {
                let run = RunConfig {
                    lambda,
                    ..cfg.clone()
                };
                run.validate()?;
                train_one(
                    &run,
                    &train,
                    &valid,
                    &a.out.join(format!("lambda-{lambda}")),
                )?;
            }
            Ok(())
        }
    }
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let scale = CefrScale::default().with_margins(ckpt.margins)?;
    let mut data = load_dataset(&a.manifest, &scale)?;
    if let Some(task) = &a.task {
        data.retain(|i| &i.task_id == task);
    }
    let report = evaluate(&ckpt.model, &data, ckpt.config.aspect, &scale)?;
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(REPORT_FILE), report.to_json() + "\n")?;
            let mut csv = Vec::new();
            report.write_confusion_csv(&mut csv)?;
            fs::write(dir.join(CONFUSION_FILE), csv)?;
            outln!(
                "n {} accuracy {:.4} macro_f1 {:.4} expected_ordinal_error {:.4} -> {}",
                report.n,
                report.accuracy,
                report.macro_f1,
                report.expected_ordinal_error,
                dir.display()
            )?;
        }
        None => outln!("{}", report.to_json())?,
    }
    Ok(())
}

fn margins_cmd(a: MarginsArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let margins = match &a.manifest {
        Some(m) => {
            let data = load_dataset(m, &CefrScale::default())?;
            let mut schedule = MarginSchedule::new(
                MarginMode::DataDriven,
                ckpt.margins,
                0.0,
                ckpt.config.margin_scale,
            )?;
            let est = estimate_margins(&ckpt.model, &data, ckpt.config.aspect, &mut schedule)?;
            outln!("level_pair,raw_gap,margin")?;
            for c in 0..NUM_LEVELS - 1 {
                let raw = est.raw_gaps[c]
                    .map(|g| format!("{g:.6}"))
                    .unwrap_or_default();
                outln!("{},{raw},{:.6}", level_pair_name(c), est.margins[c])?;
            }
            est.margins
        }
        None => {
            outln!("level_pair,margin")?;
            for (c, m) in ckpt.margins.iter().enumerate() {
                outln!("{},{m:.6}", level_pair_name(c))?;
            }
            ckpt.margins
        }
    };
    let table = CefrScale::default().with_margins(margins)?.distance_table();
    outln!()?;
    out!("{:>8}", "")?;
    for name in LEVEL_NAMES {
        out!(" {name:>8}")?;
    }
    outln!()?;
    for (name, row) in LEVEL_NAMES.iter().zip(table) {
        out!("{name:>8}")?;
        for d in row {
            out!(" {d:>8.4}")?;
        }
        outln!()?;
    }
    Ok(())
}
