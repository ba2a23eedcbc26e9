//! Command-line front end: `simulate`, `train`, `eval` and `stream`.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::classifier::{predict_all, OnlineClassifier};
use crate::error::{Error, Result};
use crate::gbdt::{train_gbdt, GbdtConfig};
use crate::hmc::{train_hmc, HmcConfig};
use crate::lstm::{train_lstm, LstmConfig};
use crate::metrics::{evaluate, EvalReport};
use crate::model_file::{Model, ModelKind};
use crate::optim::LogisticConfig;
use crate::sensor::{
    chronological_split, compute_ratios, load_sessions, save_sessions, PollutantLabel, SensorFrame,
    NUM_CHANNELS,
};
use crate::simulator::{default_session_plan, generate_corpus, ProfileSet, SessionPlan};

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;
pub const DEFAULT_RESET_TOKEN: &str = "--reset";

#[derive(Debug, Parser)]
#[command(name = "pmclass", version, about = "Pollutant classification from particle-counter ratios")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic session CSV.
    Simulate(SimulateArgs),
    /// Train a model on the chronological training part of a session CSV.
    Train(TrainArgs),
    /// Evaluate a model file on the test part of a session CSV.
    Eval(EvalArgs),
    /// Classify frames read from standard input, one output line per frame.
    Stream(StreamArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output session CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Profile TOML; the built-in profiles are used when absent.
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    /// Session plan such as `background:180,sand:180`.
    #[arg(long)]
    pub plan: Option<SessionPlan>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub kind: ModelKind,
    /// Session CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Output model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Loss log CSV; defaults to the model path with extension `loss.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for LSTM weight initialization.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION)]
    pub train_fraction: f64,
    /// Optimizer iterations (hmc emission, lstm).
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Adam learning rate (hmc emission, lstm).
    #[arg(long)]
    pub lr: Option<f64>,
    /// LSTM hidden units.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Boosting rounds (gbdt).
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Transition probability floor (hmc).
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION)]
    pub train_fraction: f64,
    /// Evaluate on the whole file instead of its test part.
    #[arg(long)]
    pub full: bool,
    /// Directory receiving `report.txt`, `report.json` and `confusion.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Input line that resets the classifier state.
    #[arg(long, default_value = DEFAULT_RESET_TOKEN, allow_hyphen_values = true)]
    pub reset_token: String,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args).map(|_| ()),
        Command::Stream(args) => {
            let model = Model::load(&args.model)?;
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            let stderr = std::io::stderr();
            run_stream(
                &model,
                stdin.lock(),
                stdout.lock(),
                stderr.lock(),
                &args.reset_token,
            )
            .map(|_| ())
        }
    }
}

fn check_output_path(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "parent directory does not exist"),
        )),
        _ => Ok(()),
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    check_output_path(&args.out)?;
    let profiles = match &args.profiles {
        Some(path) => ProfileSet::load(path)?,
        None => ProfileSet::default_profiles(),
    };
    let plan = args.plan.clone().unwrap_or_else(default_session_plan);
    let data = generate_corpus(&plan, &profiles, args.seed)?;
    save_sessions(&args.out, &data)?;
    eprintln!(
        "wrote {} frames in {} sessions to {}",
        data.len(),
        data.sequences().len(),
        args.out.display()
    );
    Ok(())
}

fn reject(kind: ModelKind, flag: &str, present: bool) -> Result<()> {
    if present {
        return Err(Error::Argument(format!("{flag} does not apply to {}", kind.as_str())));
    }
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let kind = args.kind;
    let gbdt_flags = [
        ("--rounds", args.rounds.is_some()),
        ("--eta", args.eta.is_some()),
        ("--lambda", args.lambda.is_some()),
        ("--gamma", args.gamma.is_some()),
        ("--max-depth", args.max_depth.is_some()),
    ];
    let gradient_flags = [
        ("--iterations", args.iterations.is_some()),
        ("--lr", args.lr.is_some()),
    ];
    if kind != ModelKind::Gbdt {
        for (flag, present) in gbdt_flags {
            reject(kind, flag, present)?;
        }
    } else {
        for (flag, present) in gradient_flags {
            reject(kind, flag, present)?;
        }
    }
    if kind != ModelKind::Hmc {
        reject(kind, "--epsilon", args.epsilon.is_some())?;
    }
    if kind != ModelKind::Lstm {
        reject(kind, "--hidden", args.hidden.is_some())?;
    }

    let log_path = args
        .out
        .clone()
        .unwrap_or_else(|| args.model.with_extension("loss.csv"));
    check_output_path(&args.model)?;
    check_output_path(&log_path)?;

    let data = load_sessions(&args.data)?;
    let (train, _) = chronological_split(&data, args.train_fraction)?;
    let train = train.features();

    let (model, log) = match kind {
        ModelKind::Hmc => {
            let defaults = HmcConfig::default();
            let config = HmcConfig {
                emission: LogisticConfig {
                    iterations: args.iterations.unwrap_or(defaults.emission.iterations),
                    learning_rate: args.lr.unwrap_or(defaults.emission.learning_rate),
                },
                epsilon: args.epsilon.unwrap_or(defaults.epsilon),
            };
            let (m, log) = train_hmc(&train, &config)?;
            (Model::Hmc(m), log)
        }
        ModelKind::Lstm => {
            let defaults = LstmConfig::default();
            let config = LstmConfig {
                hidden: args.hidden.unwrap_or(defaults.hidden),
                iterations: args.iterations.unwrap_or(defaults.iterations),
                learning_rate: args.lr.unwrap_or(defaults.learning_rate),
                seed: args.seed,
            };
            let (m, log) = train_lstm(&train, &config)?;
            (Model::Lstm(m), log)
        }
        ModelKind::Gbdt => {
            let defaults = GbdtConfig::default();
            let config = GbdtConfig {
                rounds: args.rounds.unwrap_or(defaults.rounds),
                eta: args.eta.unwrap_or(defaults.eta),
                lambda: args.lambda.unwrap_or(defaults.lambda),
                gamma: args.gamma.unwrap_or(defaults.gamma),
                max_depth: args.max_depth.unwrap_or(defaults.max_depth),
                min_points: defaults.min_points,
            };
            let (m, log) = train_gbdt(&train, &config)?;
            (Model::Gbdt(m), log)
        }
    };
    model.save(&args.model)?;
    log.save(&log_path)?;
    eprintln!(
        "trained {} on {} frames: loss {:.6} -> {:.6}; model {}, log {}",
        kind.as_str(),
        train.len(),
        log.initial().unwrap_or(f64::NAN),
        log.last().unwrap_or(f64::NAN),
        args.model.display(),
        log_path.display()
    );
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let model = Model::load(&args.model)?;
    let data = load_sessions(&args.data)?;
    let data = if args.full {
        data
    } else {
        chronological_split(&data, args.train_fraction)?.1
    };
    if data.is_empty() {
        return Err(Error::Argument("no frames to evaluate".into()));
    }
    let features = data.features();
    let mut classifier = model.stream();
    let predicted = predict_all(classifier.as_mut(), &features)?;
    let report = evaluate(&data.labels(), &predicted)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: &str| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(path, e))
        };
        write("report.txt", &text)?;
        write("report.json", &(report.to_json() + "\n"))?;
        write("confusion.csv", &report.confusion.to_csv())?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamSummary {
    pub frames: u64,
    pub rejected: u64,
    pub resets: u64,
}

enum Row {
    Frame {
        session: Option<String>,
        frame: SensorFrame,
    },
    Header,
}

fn parse_row(line: &str) -> Result<Row> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if matches!(fields[0], "timestamp" | "session_id") {
        return Ok(Row::Header);
    }
    let (session, rest) = match fields.len() {
        6 => (None, &fields[..]),
        8 => {
            fields[7].parse::<PollutantLabel>()?;
            (Some(fields[0].to_string()), &fields[1..7])
        }
        n => {
            return Err(Error::Validation(format!(
                "expected 6 fields (timestamp,ch1..ch5) or 8 session fields, got {n}"
            )))
        }
    };
    let timestamp: u64 = rest[0]
        .parse()
        .map_err(|_| Error::Validation(format!("bad timestamp {:?}", rest[0])))?;
    let mut counts = [0.0; NUM_CHANNELS];
    for (c, s) in counts.iter_mut().zip(&rest[1..]) {
        *c = s
            .parse()
            .map_err(|_| Error::Validation(format!("bad count {s:?}")))?;
    }
    Ok(Row::Frame {
        session,
        frame: SensorFrame::new(timestamp, counts)?,
    })
}

/// Streams frames from `input` to `output`, one flushed line per frame.
///
/// Rows are `timestamp,ch1,..,ch5` or full session rows; with session rows
/// the state also resets whenever `session_id` changes. Header lines and
/// blank lines are skipped. A malformed row is reported on `errors` and
/// skipped.
pub fn run_stream<R: BufRead, W: Write, E: Write>(
    model: &Model,
    input: R,
    mut output: W,
    mut errors: E,
    reset_token: &str,
) -> Result<StreamSummary> {
    let mut classifier: Box<dyn OnlineClassifier + '_> = model.stream();
    let mut summary = StreamSummary::default();
    let mut session: Option<String> = None;
    let stdout_err = |e| Error::io("<stdout>", e);
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<stdin>", e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == reset_token {
            classifier.reset();
            session = None;
            summary.resets += 1;
            continue;
        }
        let step = parse_row(line).and_then(|row| match row {
            Row::Header => Ok(None),
            Row::Frame { session: id, frame } => {
                if id.is_some() && id != session {
                    classifier.reset();
                    session = id;
                }
                let p = classifier.push(&compute_ratios(&frame))?;
                Ok(Some((frame.timestamp(), p)))
            }
        });
        match step {
            Ok(None) => {}
            Ok(Some((ts, p))) => {
                writeln!(
                    output,
                    "{ts},{},{},{},{},{}",
                    PollutantLabel::argmax(&p),
                    p[0],
                    p[1],
                    p[2],
                    p[3]
                )
                .and_then(|_| output.flush())
                .map_err(stdout_err)?;
                summary.frames += 1;
            }
            Err(e) => {
                summary.rejected += 1;
                let _ = writeln!(errors, "line {}: {e}", n + 1);
                let _ = errors.flush();
            }
        }
    }
    Ok(summary)
}
