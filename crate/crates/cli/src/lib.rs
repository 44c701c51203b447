//! Stage runners behind the `selkd` binary. Each stage reads files, writes
//! files and a `manifest.<stage>.json` next to them; `full` chains the stages
//! on a synthetic corpus.

pub mod args;
pub mod manifest;
pub mod stages;

use std::path::PathBuf;

use thiserror::Error;

pub use args::{Cli, Command, Common};

#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0}")]
    Internal(String),
    #[error("invalid configuration: {0}")]
    Usage(String),
    #[error("missing input: {}", .0.display())]
    Missing(PathBuf),
    #[error("{} does not match the checksum recorded in {}", path.display(), manifest.display())]
    Checksum { path: PathBuf, manifest: PathBuf },
    #[error("{0}")]
    Data(String),
    #[error("training failed: {0}")]
    Training(String),
}

impl Failure {
    /// Process exit status; see [`args::EXIT_CODES`].
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Internal(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Missing(_) => 3,
            Failure::Checksum { .. } => 4,
            Failure::Data(_) => 5,
            Failure::Training(_) => 6,
        }
    }
}

impl From<selkd::Error> for Failure {
    fn from(e: selkd::Error) -> Self {
        use selkd::Error as E;
        match e {
            E::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => Failure::Missing(path),
            E::Io { .. } => Failure::Internal(e.to_string()),
            E::Config(_) => Failure::Usage(e.to_string()),
            E::Infeasible { .. } | E::Training(_) => Failure::Training(e.to_string()),
            E::LineCountMismatch { .. }
            | E::Format { .. }
            | E::VocabularyMismatch(_)
            | E::MissingScore(_)
            | E::Empty(_)
            | E::Checkpoint(_) => Failure::Data(e.to_string()),
        }
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let common = &cli.common;
    if common.threads == 0 {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    match &cli.command {
        Command::Synth(a) => stages::synth(common, a).map(drop),
        Command::TrainEvaluator(a) => stages::train_evaluator(common, a).map(drop),
        Command::Score(a) => stages::score(common, a).map(drop),
        Command::Select(a) => stages::select(common, a).map(drop),
        Command::TrainStudent(a) => stages::train_student(common, a).map(drop),
        Command::Decode(a) => stages::decode(common, a).map(drop),
        Command::Metrics(a) => stages::metrics(common, a).map(drop),
        Command::Report(a) => stages::report(common, a).map(drop),
        Command::Full(a) => stages::full(common, a).map(drop),
        Command::Rerun(a) => stages::rerun(a),
    }
}
