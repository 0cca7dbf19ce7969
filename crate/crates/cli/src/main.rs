mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use skytemp::dataset::{CueMode, Region, DEFAULT_MAX_DEVIATION_MIN, TEST_SLOT};
use skytemp::encoding::{DecodeMode, Encoding};
use skytemp::nn::Direction;
use skytemp::training::{Task, TrainConfig};
use skytemp::Error;

/// Ambient temperature estimation and forecasting from outdoor webcam images.
#[derive(Parser, Debug)]
#[command(name = "skytemp", version, arg_required_else_help = true)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// More log output; repeat for debug messages.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded synthetic webcam world.
    Synth(SynthArgs),
    /// Train the single-image classifier on one cross-validation fold.
    TrainSingle(TrainSingleArgs),
    /// Train the sequence forecaster with the held-out hour slot removed.
    TrainSeq(SeqArgs),
    /// Score a single-image checkpoint on every record of a manifest.
    EvalSingle(EvalSingleArgs),
    /// Score a sequence checkpoint and both baselines on the held-out slot.
    EvalSeq(EvalSeqArgs),
    /// Retrain and score for several sequence lengths.
    SweepN(SweepNArgs),
    /// Retrain and score with each hour slot held out in turn.
    SweepHours(SweepHoursArgs),
    /// Retrain and score on sky, ground and entire-frame crops.
    Regions(SeqArgs),
    /// Print the temperature predicted for one image or one sequence.
    Predict(PredictArgs),
    /// Export truth and forecast per day for one camera.
    Curve(CurveArgs),
    /// Render a block variation map for one camera.
    Saliency(SaliencyArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    cameras: usize,
    #[arg(long, default_value_t = 730)]
    days: usize,
    /// Capture hours.
    #[arg(long, value_delimiter = ',', default_values_t = [8, 9, 10, 11, 12, 13, 14, 15, 16, 17])]
    slots: Vec<u32>,
    #[arg(long, default_value_t = 32)]
    image_size: usize,
    /// Day-to-day weather noise in °C.
    #[arg(long, default_value_t = 2.0)]
    noise_sd: f64,
    /// Per-pixel image noise.
    #[arg(long, default_value_t = 0.02)]
    image_noise_sd: f64,
    #[arg(long, value_enum, default_value_t = CuesArg::Full)]
    cues: CuesArg,
    /// Probability that a capture is missing.
    #[arg(long, default_value_t = 0.0)]
    drop_rate: f64,
    #[arg(long, default_value_t = 20)]
    jitter_minutes: u32,
}

/// Flags named after the training configuration fields. Unset flags keep the
/// task's defaults.
#[derive(Args, Debug, Clone)]
struct TrainArgs {
    #[arg(long, value_enum)]
    encoding: Option<EncodingArg>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Sequence length.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum)]
    direction: Option<DirectionArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    input_size: Option<usize>,
    #[arg(long)]
    lstm_hidden: Option<usize>,
    /// Widths of the two convolution blocks, e.g. `32,64`.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    filters: Option<Vec<usize>>,
    #[arg(long)]
    dense_width: Option<usize>,
    #[arg(long, value_enum)]
    region: Option<RegionArg>,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// CSV with camera_id, timestamp, image_path, temperature_c.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of `<camera_id>.mask.png` sky masks.
    #[arg(long)]
    masks: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ProtocolArgs {
    /// Held-out hour slot.
    #[arg(long, default_value_t = TEST_SLOT)]
    hour: u32,
    /// Hour slots aligned from the manifest.
    #[arg(long, value_delimiter = ',', default_values_t = [8, 9, 10, 11, 12, 13, 14, 15, 16, 17])]
    hours: Vec<u32>,
    /// Largest distance in minutes between a capture and its slot.
    #[arg(long, default_value_t = DEFAULT_MAX_DEVIATION_MIN)]
    max_deviation: u32,
    /// Seeded subsample size of the training sequences.
    #[arg(long)]
    train_limit: Option<usize>,
    /// Seeded subsample size of the test sequences.
    #[arg(long)]
    test_limit: Option<usize>,
    #[arg(long, value_enum, default_value_t = DecodeArg::Argmax)]
    decode: DecodeArg,
}

#[derive(Args, Debug)]
struct TrainSingleArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    out: PathBuf,
    /// Use only the capture nearest this hour on each day.
    #[arg(long)]
    hour: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_MAX_DEVIATION_MIN)]
    max_deviation: u32,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Fold held out as the test set.
    #[arg(long, default_value_t = 0)]
    fold: usize,
}

#[derive(Args, Debug)]
struct SeqArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    protocol: ProtocolArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalSingleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = DecodeArg::Argmax)]
    decode: DecodeArg,
}

#[derive(Args, Debug)]
struct EvalSeqArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    protocol: ProtocolArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepNArgs {
    #[command(flatten)]
    seq: SeqArgs,
    /// Sequence lengths to try.
    #[arg(long, value_delimiter = ',', default_values_t = [2, 3, 4])]
    lengths: Vec<usize>,
}

#[derive(Args, Debug)]
struct SweepHoursArgs {
    #[command(flatten)]
    seq: SeqArgs,
    /// Slots held out in turn.
    #[arg(long, value_delimiter = ',', default_values_t = [8, 9, 10, 11, 12, 13, 14, 15, 16, 17])]
    test_hours: Vec<u32>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// One image, or the n images of a sequence oldest first.
    #[arg(required = true)]
    images: Vec<PathBuf>,
    /// Camera whose sky mask crops the images (region models only).
    #[arg(long)]
    camera: Option<String>,
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DecodeArg::Argmax)]
    decode: DecodeArg,
}

#[derive(Args, Debug)]
struct CurveArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    protocol: ProtocolArgs,
    #[arg(long)]
    camera: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SaliencyArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    camera: String,
    #[arg(long)]
    out: PathBuf,
    /// Use only the capture nearest this hour on each day.
    #[arg(long)]
    hour: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_MAX_DEVIATION_MIN)]
    max_deviation: u32,
    #[arg(long, default_value_t = skytemp::saliency::DEFAULT_BLOCK_SIZE)]
    block_size: usize,
    #[arg(long, value_enum, default_value_t = FormatArg::Png)]
    format: FormatArg,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum EncodingArg {
    OneHot,
    Lde,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum DirectionArg {
    Uni,
    Bi,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum RegionArg {
    Sky,
    Ground,
    Entire,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum DecodeArg {
    Argmax,
    Expectation,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum CuesArg {
    Full,
    GroundOnly,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum FormatArg {
    Png,
    Pgm,
}

impl From<DecodeArg> for DecodeMode {
    fn from(d: DecodeArg) -> Self {
        match d {
            DecodeArg::Argmax => DecodeMode::Argmax,
            DecodeArg::Expectation => DecodeMode::Expectation,
        }
    }
}

impl From<CuesArg> for CueMode {
    fn from(c: CuesArg) -> Self {
        match c {
            CuesArg::Full => CueMode::Full,
            CuesArg::GroundOnly => CueMode::GroundOnly,
        }
    }
}

impl From<RegionArg> for Region {
    fn from(r: RegionArg) -> Self {
        match r {
            RegionArg::Sky => Region::Sky,
            RegionArg::Ground => Region::Ground,
            RegionArg::Entire => Region::Entire,
        }
    }
}

impl TrainArgs {
    fn config(&self, task: Task) -> Result<TrainConfig, Failure> {
        let mut c = TrainConfig::for_task(task);
        if let Some(e) = self.encoding {
            c.encoding = match e {
                EncodingArg::OneHot => Encoding::OneHot,
                EncodingArg::Lde => Encoding::Lde,
            };
        }
        if let Some(d) = self.direction {
            c.direction = match d {
                DirectionArg::Uni => Direction::Uni,
                DirectionArg::Bi => Direction::Bi,
            };
        }
        if let Some(f) = &self.filters {
            c.filters = f
                .as_slice()
                .try_into()
                .map_err(|_| Failure::Usage(format!("--filters takes two widths, got {}", f.len())))?;
        }
        if let Some(r) = self.region {
            c.region = r.into();
        }
        c.sigma = self.sigma.unwrap_or(c.sigma);
        c.learning_rate = self.learning_rate.unwrap_or(c.learning_rate);
        c.epochs = self.epochs.unwrap_or(c.epochs);
        c.batch_size = self.batch_size.unwrap_or(c.batch_size);
        c.sequence_length = self.n.unwrap_or(c.sequence_length);
        c.seed = self.seed.unwrap_or(c.seed);
        c.input_size = self.input_size.unwrap_or(c.input_size);
        c.lstm_hidden = self.lstm_hidden.unwrap_or(c.lstm_hidden);
        c.dense_width = self.dense_width.unwrap_or(c.dense_width);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) | Failure::Core(Error::InvalidParameter(_)) => 1,
            Failure::Core(Error::Numeric(_)) => 3,
            Failure::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("usage error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("skytemp: {}", f.to_string().replace('\n', " "));
            ExitCode::from(f.exit_code())
        }
    }
}
