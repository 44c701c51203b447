//! Evaluator scores `1 - d(Y, Ŷ) / |Y|` for raw translations.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, TokenId, BLANK};
use crate::error::{Error, Result};
use crate::nat::checkpoint::check_compatible;
use crate::nat::ctc::{argmax, decode_greedy, viterbi_align, EmissionMatrix};
use crate::nat::NatModel;
use crate::util::par_map;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Decode at exactly `|Y|` frames and compare position by position.
    Plain,
    /// Compare the Viterbi path of `Y` with the greedy path frame by frame.
    #[default]
    Ctc,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Plain => "plain",
            Variant::Ctc => "ctc",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Variant::Plain),
            "ctc" => Ok(Variant::Ctc),
            other => Err(Error::Config(format!("unknown score variant {other:?}"))),
        }
    }
}

/// Denominator of the CTC frame distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalizer {
    /// Number of frames `L'`; keeps the score in `[0, 1]`.
    #[default]
    Frames,
    /// Reference length `|Y|`, clamped at zero.
    Reference,
}

impl FromStr for Normalizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frames" => Ok(Normalizer::Frames),
            "reference" => Ok(Normalizer::Reference),
            other => Err(Error::Config(format!("unknown normalizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub index: usize,
    pub score: f64,
    pub distance: usize,
    pub reference_len: usize,
    /// Frames compared; only for the CTC variant.
    pub frame_len: Option<usize>,
    pub variant: Variant,
    /// The reference could not be aligned to the lattice.
    pub infeasible: bool,
    /// Greedy decoding produced only blanks.
    pub empty_hypothesis: bool,
}

/// Positions compared up to the shorter length; every surplus position of the
/// longer sentence counts as one mismatch.
pub fn hamming_distance(a: &[TokenId], b: &[TokenId]) -> usize {
    let common = a.len().min(b.len());
    let mismatches = a.iter().zip(b).filter(|(x, y)| x != y).count();
    mismatches + a.len().max(b.len()) - common
}

/// `max(0, 1 - hamming(Y, Ŷ) / |Y|)`.
pub fn score_plain(reference: &[TokenId], hypothesis: &[TokenId]) -> f64 {
    assert!(!reference.is_empty(), "reference must be nonempty");
    (1.0 - hamming_distance(reference, hypothesis) as f64 / reference.len() as f64).max(0.0)
}

/// CTC-variant score on an already computed lattice.
pub fn score_lattice(emissions: &EmissionMatrix, reference: &[TokenId], normalizer: Normalizer) -> ScoreRecord {
    let frames = emissions.frames();
    let greedy = decode_greedy(emissions);
    let (distance, infeasible) = match viterbi_align(emissions, reference) {
        Ok(path) => (hamming_distance(path.labels(), greedy.frames.labels()), false),
        Err(_) => (frames, true),
    };
    let denom = match normalizer {
        Normalizer::Frames => frames,
        Normalizer::Reference => reference.len(),
    };
    let score = if infeasible {
        0.0
    } else {
        (1.0 - distance as f64 / denom as f64).clamp(0.0, 1.0)
    };
    ScoreRecord {
        index: 0,
        score,
        distance,
        reference_len: reference.len(),
        frame_len: Some(frames),
        variant: Variant::Ctc,
        infeasible,
        empty_hypothesis: greedy.is_empty(),
    }
}

pub fn score_ctc(model: &NatModel, source: &[TokenId], reference: &[TokenId]) -> ScoreRecord {
    score_lattice(&model.forward(source), reference, Normalizer::Frames)
}

/// Plain variant: the model runs at `|Y|` frames and each frame takes its best
/// non-blank token.
pub fn score_plain_pair(model: &NatModel, source: &[TokenId], reference: &[TokenId]) -> ScoreRecord {
    let em = model.forward_frames(source, reference.len());
    let hypothesis: Vec<TokenId> = (0..em.frames())
        .map(|t| argmax(&em.row(t)[1..]) + 1)
        .collect();
    debug_assert!(!hypothesis.contains(&BLANK));
    ScoreRecord {
        index: 0,
        score: score_plain(reference, &hypothesis),
        distance: hamming_distance(reference, &hypothesis),
        reference_len: reference.len(),
        frame_len: None,
        variant: Variant::Plain,
        infeasible: false,
        empty_hypothesis: false,
    }
}

/// Scores for every example of a corpus, computed once with a frozen model.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub records: Vec<ScoreRecord>,
    /// Fingerprint of the evaluator, empty when read back from a file.
    pub checkpoint: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOptions {
    pub variant: Variant,
    pub normalizer: Normalizer,
    pub threads: usize,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            variant: Variant::Ctc,
            normalizer: Normalizer::Frames,
            threads: 1,
        }
    }
}

pub fn score_corpus(model: &NatModel, corpus: &Corpus, options: &ScoreOptions) -> Result<ScoreTable> {
    check_compatible(model, corpus)?;
    let records = par_map(corpus.examples(), options.threads, |_, e| {
        let mut r = match options.variant {
            Variant::Ctc => score_lattice(&model.forward(&e.source), &e.raw, options.normalizer),
            Variant::Plain => score_plain_pair(model, &e.source, &e.raw),
        };
        r.index = e.index;
        r
    });
    Ok(ScoreTable {
        records,
        checkpoint: model.fingerprint(),
    })
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.score).collect()
    }

    /// Score of example `index`, if present.
    pub fn score_of(&self, index: usize) -> Option<f64> {
        self.records
            .get(index)
            .filter(|r| r.index == index)
            .or_else(|| self.records.iter().find(|r| r.index == index))
            .map(|r| r.score)
    }

    /// Checks that the records cover `0..n` exactly once, in order.
    pub fn check_covers(&self, n: usize) -> Result<()> {
        for i in 0..n {
            match self.records.get(i) {
                Some(r) if r.index == i => {}
                _ => return Err(Error::MissingScore(i)),
            }
        }
        if self.records.len() != n {
            return Err(Error::Config(format!(
                "score table has {} rows for {n} examples",
                self.records.len()
            )));
        }
        Ok(())
    }

    /// `index<TAB>score<TAB>distance<TAB>raw_len<TAB>frame_len`, one row per
    /// example, score with 6 decimals, `-` for a missing frame length.
    pub fn to_tsv(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 24);
        for r in &self.records {
            let frames = r.frame_len.map_or_else(|| "-".to_owned(), |f| f.to_string());
            out.push_str(&format!(
                "{}\t{:.6}\t{}\t{}\t{}\n",
                r.index, r.score, r.distance, r.reference_len, frames
            ));
        }
        out
    }

    pub fn from_tsv(text: &str, source: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let err = |message: String| Error::Format {
                path: source.to_owned(),
                line: i + 1,
                message,
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(err(format!("expected 5 columns, found {}", cols.len())));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|e| err(format!("{s:?}: {e}")));
            let score: f64 = cols[1]
                .parse()
                .map_err(|e| err(format!("{:?}: {e}", cols[1])))?;
            if !(0.0..=1.0).contains(&score) {
                return Err(err(format!("score {score} outside [0, 1]")));
            }
            let frame_len = if cols[4] == "-" { None } else { Some(int(cols[4])?) };
            records.push(ScoreRecord {
                index: int(cols[0])?,
                score,
                distance: int(cols[2])?,
                reference_len: int(cols[3])?,
                frame_len,
                variant: if frame_len.is_some() { Variant::Ctc } else { Variant::Plain },
                infeasible: false,
                empty_hypothesis: false,
            });
        }
        Ok(ScoreTable {
            records,
            checkpoint: String::new(),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, path)
    }

    /// Score quantiles at the given probabilities (nearest-rank).
    pub fn quantiles(&self, probs: &[f64]) -> Vec<f64> {
        let mut s = self.scores();
        s.sort_by(f64::total_cmp);
        probs
            .iter()
            .map(|&p| {
                if s.is_empty() {
                    return f64::NAN;
                }
                let rank = ((p * s.len() as f64).ceil() as usize).clamp(1, s.len());
                s[rank - 1]
            })
            .collect()
    }
}
