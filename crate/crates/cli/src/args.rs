use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use selkd::corpus::{TargetSide, VocabMode};
use selkd::nat::{ModelConfig, Objective};
use selkd::scoring::{Normalizer, Variant};
use selkd::synth::{MistakeKind, SynthTaskSpec};

pub const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  internal error
  2  invalid flags or configuration
  3  missing input file
  4  input does not match the checksum recorded by an earlier manifest
  5  malformed data, line-count or vocabulary mismatch
  6  training failure";

#[derive(Debug, Parser)]
#[command(name = "selkd", version, about = "Selective knowledge distillation for CTC-based non-autoregressive students", after_help = EXIT_CODES)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct Common {
    /// Output directory.
    #[arg(long, global = true, env = "SELKD_OUT", default_value = "selkd-out")]
    pub out: PathBuf,
    /// Seed for sampling, initialization and batch order.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads for scoring and metrics. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multimodal corpus with distilled targets.
    Synth(SynthArgs),
    /// Train the evaluator on raw targets.
    TrainEvaluator(TrainEvaluatorArgs),
    /// Score every raw target with a frozen evaluator.
    Score(ScoreArgs),
    /// Materialize the selected training set for one update or threshold.
    Select(SelectArgs),
    /// Train a student with the threshold schedule, or on one side as a baseline.
    TrainStudent(TrainStudentArgs),
    /// Greedy-decode sources with a checkpoint, optionally evaluating against references.
    Decode(DecodeArgs),
    /// Corpus complexity over a sweep of thresholds.
    Metrics(MetricsArgs),
    /// Summarize the artifacts of an output directory.
    Report(ReportArgs),
    /// Run every stage on a synthetic corpus.
    Full(FullArgs),
    /// Repeat a stage from its manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct CorpusArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long)]
    pub kd: PathBuf,
    /// One vocabulary for both languages.
    #[arg(long)]
    pub shared_vocab: bool,
}

impl CorpusArgs {
    pub fn in_dir(dir: &std::path::Path) -> Self {
        CorpusArgs {
            src: dir.join("train.src"),
            raw: dir.join("train.raw"),
            kd: dir.join("train.kd"),
            shared_vocab: false,
        }
    }

    pub fn vocab_mode(&self) -> VocabMode {
        if self.shared_vocab {
            VocabMode::Shared
        } else {
            VocabMode::Separate
        }
    }

    pub fn paths(&self) -> Vec<PathBuf> {
        vec![self.src.clone(), self.raw.clone(), self.kd.clone()]
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// Held-out sources with canonical references.
    #[arg(long, default_value_t = 500)]
    pub heldout: usize,
    /// Seed of the task itself (translation tables, fragile types).
    #[arg(long, default_value_t = 17)]
    pub task_seed: u64,
    #[arg(long, default_value_t = 48)]
    pub source_vocab: usize,
    #[arg(long, default_value_t = 192)]
    pub target_vocab: usize,
    #[arg(long, default_value_t = 4)]
    pub min_len: usize,
    #[arg(long, default_value_t = 10)]
    pub max_len: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.4,0.2,0.2,0.2")]
    pub mode_weights: Vec<f64>,
    /// Modes that also reverse word order.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub dramatic: Vec<usize>,
    #[arg(long, default_value_t = 0.25)]
    pub synonym_rate: f64,
    /// Share of distilled targets carrying a teacher mistake.
    #[arg(long, default_value_t = 0.1)]
    pub mistake_rate: f64,
    #[arg(long, default_value = "repeat-token")]
    pub mistake_kind: MistakeKind,
    /// Spread mistakes uniformly instead of concentrating them on fragile source types.
    #[arg(long)]
    pub uniform_mistakes: bool,
}

impl SynthArgs {
    pub fn spec(&self) -> SynthTaskSpec {
        SynthTaskSpec {
            source_vocab: self.source_vocab,
            target_vocab: self.target_vocab,
            min_len: self.min_len,
            max_len: self.max_len,
            mode_weights: self.mode_weights.clone(),
            dramatic_modes: self.dramatic.clone(),
            synonym_rate: self.synonym_rate,
            mistake_rate: self.mistake_rate,
            mistake_kind: self.mistake_kind,
            fragile_mistakes: !self.uniform_mistakes,
            seed: self.task_seed,
        }
    }
}

impl Default for SynthArgs {
    fn default() -> Self {
        #[derive(Parser)]
        struct Wrap {
            #[command(flatten)]
            inner: SynthArgs,
        }
        Wrap::parse_from(["synth"]).inner
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 16)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 48)]
    pub hidden_dim: usize,
    /// Frames per source token.
    #[arg(long, default_value_t = 2)]
    pub upsample: usize,
    /// Neighbouring source tokens visible to each frame, per side.
    #[arg(long, default_value_t = 1)]
    pub window: usize,
    #[arg(long, default_value_t = 0.2)]
    pub lr: f64,
    #[arg(long, default_value_t = 12)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5.0)]
    pub clip: f64,
    #[arg(long, default_value = "ctc")]
    pub objective: Objective,
}

impl ModelArgs {
    pub fn config(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            upsample: self.upsample,
            window: self.window,
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            clip_norm: self.clip,
            seed,
            objective: self.objective,
        }
    }
}

impl Default for ModelArgs {
    fn default() -> Self {
        #[derive(Parser)]
        struct Wrap {
            #[command(flatten)]
            inner: ModelArgs,
        }
        Wrap::parse_from(["model"]).inner
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct TrainEvaluatorArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Also save the parameters after this many updates (student initialization);
    /// defaults to a twelfth of all updates.
    #[arg(long)]
    pub snapshot_at: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum VariantArg {
    Ctc,
    Plain,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Ctc => Variant::Ctc,
            VariantArg::Plain => Variant::Plain,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum NormalizerArg {
    /// Divide the frame distance by the number of frames.
    Frames,
    /// Divide by the reference length (may need clamping).
    Reference,
}

impl From<NormalizerArg> for Normalizer {
    fn from(v: NormalizerArg) -> Self {
        match v {
            NormalizerArg::Frames => Normalizer::Frames,
            NormalizerArg::Reference => Normalizer::Reference,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "ctc")]
    pub variant: VariantArg,
    #[arg(long, value_enum, default_value = "frames")]
    pub normalizer: NormalizerArg,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct ScheduleArgs {
    #[arg(long, default_value_t = 0.4)]
    pub t0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t1: f64,
    /// Total student updates K.
    #[arg(long, default_value_t = 2000)]
    pub updates: usize,
    /// Use one threshold for every update instead of the linear schedule.
    #[arg(long)]
    pub fixed_threshold: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct SelectArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub scores: PathBuf,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Update index k whose threshold is applied.
    #[arg(long, default_value_t = 0)]
    pub update: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Raw,
    Kd,
}

impl From<Baseline> for TargetSide {
    fn from(b: Baseline) -> Self {
        match b {
            Baseline::Raw => TargetSide::Raw,
            Baseline::Kd => TargetSide::Distilled,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct TrainStudentArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Score table; required unless --baseline is given.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Train on one target side only.
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    /// Start from these parameters instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Keep every n-th update in the log.
    #[arg(long, default_value_t = 1)]
    pub log_every: usize,
    /// File name stem for the checkpoint and log.
    #[arg(long, default_value = "student")]
    pub name: String,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct DecodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Source sentences, one per line.
    #[arg(long)]
    pub input: PathBuf,
    /// References for BLEU, token accuracy and repetition.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// File name stem for the outputs.
    #[arg(long, default_value = "decode")]
    pub name: String,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.4,0.5,0.6,0.7,0.8,0.9,1.0,1.01")]
    pub thresholds: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub align_iterations: usize,
    #[arg(long, default_value_t = 4.0)]
    pub tension: f64,
    #[arg(long, default_value_t = 0.08)]
    pub p0: f64,
    /// Also write raw-side links in Pharaoh format.
    #[arg(long)]
    pub pharaoh: bool,
    /// Schedule used for the per-length exposure table.
    #[arg(long, default_value_t = 0.4)]
    pub t0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t1: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct ReportArgs {}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct FullArgs {
    #[command(flatten)]
    pub synth: SynthArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0.4)]
    pub t0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t1: f64,
    /// Student updates K.
    #[arg(long, default_value_t = 2000)]
    pub updates: usize,
    /// Skip the raw-only and distilled-only baseline students.
    #[arg(long)]
    pub no_baselines: bool,
}

#[derive(Debug, Clone, Args, PartialEq)]
pub struct RerunArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
    /// Write into this directory instead of the recorded one.
    #[arg(long)]
    pub into: Option<PathBuf>,
}
