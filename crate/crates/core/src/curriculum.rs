//! Hard-to-easy selection between raw and distilled targets.
//!
//! At update `k` of `K` the threshold is `T_k = T_0 + (k / K)(T_1 - T_0)`.
//! An example keeps its raw target while its evaluator score is at least
//! `T_k` and falls back to the distilled target otherwise, so the share of
//! raw data shrinks as training goes on.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, TargetSide, TokenId};
use crate::error::{Error, Result};
use crate::nat::checkpoint::check_compatible;
use crate::nat::{ModelConfig, NatModel, Trainer};
use crate::rng::Rng;
use crate::scoring::ScoreTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    Linear,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSchedule {
    pub t0: f64,
    pub t1: f64,
    /// Total number of updates `K`.
    pub updates: usize,
    pub mode: ScheduleMode,
}

impl ThresholdSchedule {
    /// `T_0 = 0.4`, `T_1 = 1.0`.
    pub fn default_linear(updates: usize) -> Self {
        ThresholdSchedule {
            t0: 0.4,
            t1: 1.0,
            updates,
            mode: ScheduleMode::Linear,
        }
    }

    pub fn linear(t0: f64, t1: f64, updates: usize) -> Result<Self> {
        let s = ThresholdSchedule {
            t0,
            t1,
            updates,
            mode: ScheduleMode::Linear,
        };
        s.validate()?;
        Ok(s)
    }

    /// A constant threshold. Values above 1 (such as 1.01) keep no raw target.
    pub fn fixed(t: f64, updates: usize) -> Result<Self> {
        let s = ThresholdSchedule {
            t0: t,
            t1: t,
            updates,
            mode: ScheduleMode::Fixed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.updates == 0 {
            return Err(Error::Config("schedule needs at least one update".into()));
        }
        for t in [self.t0, self.t1] {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::Config(format!("threshold {t} must be finite and nonnegative")));
            }
        }
        if self.mode == ScheduleMode::Fixed && self.t0 != self.t1 {
            return Err(Error::Config("a fixed schedule needs T_0 == T_1".into()));
        }
        Ok(())
    }

    /// `T_k` for `0 ≤ k ≤ K`.
    pub fn threshold_at(&self, k: usize) -> Result<f64> {
        if k > self.updates {
            return Err(Error::Config(format!(
                "update {k} outside the schedule's {} updates",
                self.updates
            )));
        }
        Ok(match self.mode {
            ScheduleMode::Fixed => self.t0,
            ScheduleMode::Linear if k == self.updates => self.t1,
            ScheduleMode::Linear => {
                self.t0 + (k as f64 / self.updates as f64) * (self.t1 - self.t0)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    #[serde(rename = "RAW")]
    Raw,
    #[serde(rename = "KD")]
    Kd,
}

impl Choice {
    pub fn side(self) -> TargetSide {
        match self {
            Choice::Raw => TargetSide::Raw,
            Choice::Kd => TargetSide::Distilled,
        }
    }

    /// RAW exactly when `score ≥ threshold`.
    pub fn for_score(score: f64, threshold: f64) -> Self {
        if score >= threshold {
            Choice::Raw
        } else {
            Choice::Kd
        }
    }
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Choice::Raw => "RAW",
            Choice::Kd => "KD",
        })
    }
}

impl FromStr for Choice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "RAW" => Ok(Choice::Raw),
            "KD" => Ok(Choice::Kd),
            other => Err(Error::Config(format!("unknown choice {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionDecision {
    pub index: usize,
    pub choice: Choice,
    pub score: f64,
    pub threshold: f64,
}

/// The training set for one update: exactly one target per example, in
/// corpus order.
pub fn select_for_update(scores: &ScoreTable, corpus: &Corpus, threshold: f64) -> Result<Vec<SelectionDecision>> {
    scores.check_covers(corpus.len())?;
    Ok(scores
        .records
        .iter()
        .map(|r| SelectionDecision {
            index: r.index,
            choice: Choice::for_score(r.score, threshold),
            score: r.score,
            threshold,
        })
        .collect())
}

/// `index<TAB>choice<TAB>score<TAB>threshold`, one row per example.
pub fn decisions_tsv(decisions: &[SelectionDecision]) -> String {
    let mut out = String::new();
    for d in decisions {
        out.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6}\n",
            d.index, d.choice, d.score, d.threshold
        ));
    }
    out
}

/// Target lines chosen by `decisions`, as surfaces.
pub fn selected_targets(corpus: &Corpus, decisions: &[SelectionDecision]) -> Vec<String> {
    decisions
        .iter()
        .map(|d| {
            let e = &corpus.examples()[d.index];
            corpus.target_vocab().decode(e.target(d.choice.side()))
        })
        .collect()
}

/// Fraction of examples whose score reaches `threshold`; 0 for an empty table.
pub fn raw_ratio(scores: &ScoreTable, threshold: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let kept = scores.records.iter().filter(|r| r.score >= threshold).count();
    kept as f64 / scores.len() as f64
}

/// Fraction of the `K` updates during which an example with this score keeps
/// its raw target.
pub fn exposure_period(score: f64, schedule: &ThresholdSchedule) -> f64 {
    if schedule.mode == ScheduleMode::Fixed || schedule.t1 <= schedule.t0 {
        return if score >= schedule.t0 { 1.0 } else { 0.0 };
    }
    ((score - schedule.t0) / (schedule.t1 - schedule.t0)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentConfig {
    pub model: ModelConfig,
    pub updates: usize,
    /// Keep every n-th update in the returned log (the first and last always).
    pub log_every: usize,
}

impl StudentConfig {
    pub fn new(model: ModelConfig, updates: usize) -> Self {
        StudentConfig {
            model,
            updates,
            log_every: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateLog {
    pub k: usize,
    pub threshold: f64,
    /// Share of the batch that trained on raw targets.
    pub raw_fraction: f64,
    pub loss: f64,
    pub skipped: usize,
}

pub fn update_log_tsv(log: &[UpdateLog]) -> String {
    let mut out = String::from("k\tthreshold\traw_fraction\tloss\tskipped\n");
    for u in log {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
            u.k, u.threshold, u.raw_fraction, u.loss, u.skipped
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct StudentOutcome {
    pub model: NatModel,
    pub log: Vec<UpdateLog>,
}

/// Seeded round-robin over repeated shuffles of `0..n`.
struct BatchSampler {
    seed: u64,
    n: usize,
    pass: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    fn new(seed: u64, n: usize) -> Self {
        BatchSampler {
            seed,
            n,
            pass: 0,
            order: Rng::derive(seed, 0x7061_7373_0000).permutation(n),
            cursor: 0,
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.cursor == self.n {
                    self.pass += 1;
                    self.order = Rng::derive(self.seed, 0x7061_7373_0000 + self.pass).permutation(self.n);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }
}

fn initial_model(corpus: &Corpus, config: &StudentConfig, init: Option<&NatModel>) -> Result<NatModel> {
    match init {
        None => NatModel::new(
            config.model.clone(),
            corpus.source_vocab().clone(),
            corpus.target_vocab().clone(),
        ),
        Some(teacher) => {
            check_compatible(teacher, corpus)?;
            let mut model = teacher.clone();
            let fresh = crate::nat::model::Layout::new(
                &config.model,
                corpus.source_vocab().len(),
                corpus.target_vocab().len(),
            );
            if &fresh != model.layout() {
                return Err(Error::Config(
                    "student architecture differs from the initializing checkpoint".into(),
                ));
            }
            config.model.validate()?;
            *model.config_mut() = config.model.clone();
            Ok(model)
        }
    }
}

fn run_updates(
    corpus: &Corpus,
    config: &StudentConfig,
    init: Option<&NatModel>,
    mut threshold_at: impl FnMut(usize) -> Result<f64>,
    mut side_of: impl FnMut(usize, f64) -> TargetSide,
) -> Result<StudentOutcome> {
    if corpus.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if config.updates == 0 {
        return Err(Error::Config("student needs at least one update".into()));
    }
    let model = initial_model(corpus, config, init)?;
    let mut trainer = Trainer::new(model);
    let mut sampler = BatchSampler::new(config.model.seed, corpus.len());
    let mut log = Vec::new();
    let mut used_total = 0;
    let every = config.log_every.max(1);
    for k in 0..config.updates {
        let threshold = threshold_at(k)?;
        let indices = sampler.next_batch(config.model.batch_size);
        let mut raw = 0;
        let batch: Vec<(&[TokenId], &[TokenId])> = indices
            .iter()
            .map(|&i| {
                let e = &corpus.examples()[i];
                let side = side_of(i, threshold);
                raw += usize::from(side == TargetSide::Raw);
                (e.source.tokens(), e.target(side).tokens())
            })
            .collect();
        let stats = trainer.step(&batch)?;
        used_total += stats.used;
        if k % every == 0 || k + 1 == config.updates {
            log.push(UpdateLog {
                k,
                threshold,
                raw_fraction: raw as f64 / indices.len() as f64,
                loss: stats.loss,
                skipped: stats.skipped,
            });
        }
    }
    if used_total == 0 {
        return Err(Error::Training(
            "no training pair can be aligned to its frames".into(),
        ));
    }
    Ok(StudentOutcome {
        model: trainer.into_model(),
        log,
    })
}

/// Trains a student for `K` updates, resolving each sampled example's target
/// against `T_k` at the moment it is drawn.
pub fn train_student(
    corpus: &Corpus,
    scores: &ScoreTable,
    schedule: &ThresholdSchedule,
    config: &StudentConfig,
    init: Option<&NatModel>,
) -> Result<StudentOutcome> {
    schedule.validate()?;
    if schedule.updates != config.updates {
        return Err(Error::Config(format!(
            "schedule has {} updates but the student runs {}",
            schedule.updates, config.updates
        )));
    }
    scores.check_covers(corpus.len())?;
    let score: Vec<f64> = scores.scores();
    run_updates(
        corpus,
        config,
        init,
        |k| schedule.threshold_at(k),
        |i, t| Choice::for_score(score[i], t).side(),
    )
}

/// The same loop on one fixed target side, for baselines.
pub fn train_on_side(
    corpus: &Corpus,
    side: TargetSide,
    config: &StudentConfig,
    init: Option<&NatModel>,
) -> Result<StudentOutcome> {
    let t = match side {
        TargetSide::Raw => 0.0,
        TargetSide::Distilled => f64::INFINITY,
    };
    run_updates(corpus, config, init, |_| Ok(t), |_, _| side)
}

/// Reads a decisions TSV back.
pub fn read_decisions(path: impl AsRef<Path>) -> Result<Vec<SelectionDecision>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let err = |m: String| Error::Format {
                path: path.to_owned(),
                line: i + 1,
                message: m,
            };
            let c: Vec<&str> = line.split('\t').collect();
            if c.len() != 4 {
                return Err(err(format!("expected 4 columns, found {}", c.len())));
            }
            Ok(SelectionDecision {
                index: c[0].parse().map_err(|e| err(format!("{e}")))?,
                choice: c[1].parse().map_err(|e: Error| err(e.to_string()))?,
                score: c[2].parse().map_err(|e| err(format!("{e}")))?,
                threshold: c[3].parse().map_err(|e| err(format!("{e}")))?,
            })
        })
        .collect()
}
