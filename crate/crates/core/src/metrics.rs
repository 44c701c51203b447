//! Corpus complexity and output quality measures.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::align::{AlignmentLinks, AlignmentModel, Pair};
use crate::corpus::{Corpus, TargetSide, TokenId};
use crate::curriculum::{exposure_period, raw_ratio, ThresholdSchedule};
use crate::error::{Error, Result};
use crate::scoring::ScoreTable;

/// Mean conditional entropy (nats) of the target types linked to each source
/// type. Source types that never get a non-NULL link are left out of the mean.
pub fn translation_uncertainty_from_links(bitext: &[Pair<'_>], links: &[AlignmentLinks]) -> Result<f64> {
    let mut counts: BTreeMap<TokenId, BTreeMap<TokenId, usize>> = BTreeMap::new();
    for ((x, y), l) in bitext.iter().zip(links) {
        for (j, link) in l.links.iter().enumerate() {
            if let Some(i) = link {
                *counts.entry(x[i - 1]).or_default().entry(y[j]).or_default() += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(Error::Empty("no aligned word pairs".into()));
    }
    let total: f64 = counts.values().map(|row| entropy(row.values().copied())).sum();
    Ok(total / counts.len() as f64)
}

fn entropy(counts: impl Iterator<Item = usize> + Clone) -> f64 {
    let n: usize = counts.clone().sum();
    let n = n as f64;
    let h: f64 = counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    // a single outcome gives -1·ln 1 = -0
    h.max(0.0)
}

pub fn translation_uncertainty(bitext: &[Pair<'_>], model: &AlignmentModel) -> Result<f64> {
    translation_uncertainty_from_links(bitext, &model.align_all(bitext, 1))
}

/// `τ(X, Y)`: mean over target positions of `|i/|X| - j/|Y||`, NULL links
/// contributing 0. Positions are 1-based.
pub fn alignment_shift_pair(source_len: usize, target_len: usize, links: &AlignmentLinks) -> f64 {
    if target_len == 0 {
        return 0.0;
    }
    let sum: f64 = links
        .links
        .iter()
        .enumerate()
        .filter_map(|(j, l)| {
            l.map(|i| (i as f64 / source_len as f64 - (j + 1) as f64 / target_len as f64).abs())
        })
        .sum();
    sum / target_len as f64
}

pub fn alignment_shift_from_links(bitext: &[Pair<'_>], links: &[AlignmentLinks]) -> Result<f64> {
    if bitext.is_empty() {
        return Err(Error::Empty("alignment shift of an empty bitext".into()));
    }
    let sum: f64 = bitext
        .iter()
        .zip(links)
        .map(|((x, y), l)| alignment_shift_pair(x.len(), y.len(), l))
        .sum();
    Ok(sum / bitext.len() as f64)
}

pub fn alignment_shift(bitext: &[Pair<'_>], model: &AlignmentModel) -> Result<f64> {
    alignment_shift_from_links(bitext, &model.align_all(bitext, 1))
}

/// Tokens equal to their predecessor in the same sentence, per mille of all
/// tokens. 0 when there are no tokens.
pub fn repetition_ratio<S: AsRef<[T]>, T: PartialEq>(sentences: &[S]) -> f64 {
    let (mut dup, mut total) = (0usize, 0usize);
    for s in sentences {
        let s = s.as_ref();
        total += s.len();
        dup += s.windows(2).filter(|w| w[0] == w[1]).count();
    }
    if total == 0 {
        0.0
    } else {
        1000.0 * dup as f64 / total as f64
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU-4 on a 0–100 scale. A zero n-gram match count for `n ≥ 2`
/// is smoothed to `1 / (total + 1)`; a zero unigram precision gives 0.
pub fn corpus_bleu<S: AsRef<[T]>, T: Eq + Hash>(hypotheses: &[S], references: &[S]) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::Empty("BLEU needs at least one hypothesis".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Config(format!(
            "{} hypotheses against {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        let (h, r) = (h.as_ref(), r.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let rc = ngram_counts(r, n);
            for (g, c) in ngram_counts(h, n) {
                matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
                totals[n - 1] += c;
            }
        }
    }
    if matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_p = 0.0;
    for n in 0..4 {
        let (m, t) = if n > 0 && matches[n] == 0 {
            (1, totals[n] + 1)
        } else {
            (matches[n], totals[n])
        };
        log_p += (m as f64 / t as f64).ln() / 4.0;
    }
    let bp = if hyp_len > ref_len {
        0.0
    } else {
        1.0 - ref_len as f64 / hyp_len as f64
    };
    Ok(100.0 * (bp + log_p).exp())
}

/// Position-wise agreement: matching positions over the longer of the two
/// lengths, summed over the corpus.
pub fn token_accuracy<S: AsRef<[T]>, T: PartialEq>(hypotheses: &[S], references: &[S]) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        let (h, r) = (h.as_ref(), r.as_ref());
        hit += h.iter().zip(r).filter(|(a, b)| a == b).count();
        total += h.len().max(r.len());
    }
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}

/// A labelled subset of the corpus with one target per chosen example.
#[derive(Debug, Clone)]
pub struct View<'a> {
    pub label: String,
    pub indices: Vec<usize>,
    pub pairs: Vec<Pair<'a>>,
}

impl<'a> View<'a> {
    fn build(label: &str, corpus: &'a Corpus, pick: impl Fn(usize) -> Option<TargetSide>) -> Self {
        let mut indices = Vec::new();
        let mut pairs = Vec::new();
        for (i, e) in corpus.examples().iter().enumerate() {
            if let Some(side) = pick(i) {
                indices.push(i);
                pairs.push((e.source.tokens(), e.target(side).tokens()));
            }
        }
        View {
            label: label.to_owned(),
            indices,
            pairs,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    /// One whole target side.
    pub fn side(corpus: &'a Corpus, side: TargetSide) -> Self {
        let label = match side {
            TargetSide::Raw => "raw",
            TargetSide::Distilled => "distilled",
        };
        Self::build(label, corpus, |_| Some(side))
    }

    /// Raw targets of examples scoring at least `t`.
    pub fn selected_raw(corpus: &'a Corpus, scores: &ScoreTable, t: f64) -> Self {
        Self::build("selected_raw", corpus, |i| {
            (scores.records[i].score >= t).then_some(TargetSide::Raw)
        })
    }

    /// Raw targets of examples scoring below `t`, the ones distillation replaces.
    pub fn replaced_raw(corpus: &'a Corpus, scores: &ScoreTable, t: f64) -> Self {
        Self::build("replaced_raw", corpus, |i| {
            (scores.records[i].score < t).then_some(TargetSide::Raw)
        })
    }

    /// Selected raw targets plus distilled targets for the rest.
    pub fn training_data(corpus: &'a Corpus, scores: &ScoreTable, t: f64) -> Self {
        Self::build("training_data", corpus, |i| {
            Some(if scores.records[i].score >= t {
                TargetSide::Raw
            } else {
                TargetSide::Distilled
            })
        })
    }
}

/// Source-length ranges `<10, [10,20), …, [50,60), ≥60`.
pub const BUCKET_LABELS: [&str; 7] = ["<10", "[10,20)", "[20,30)", "[30,40)", "[40,50)", "[50,60)", ">=60"];

pub fn bucket_of(source_len: usize) -> usize {
    (source_len / 10).min(6)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub bucket: String,
    pub sentences: usize,
    pub mean_score: f64,
    pub exposure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    pub translation_uncertainty: f64,
    pub alignment_shift: f64,
    pub repetition_per_mille: f64,
    pub sentences: usize,
    pub tokens: usize,
    pub buckets: Vec<BucketRow>,
}

/// All measures for one view. Buckets are filled when scores and a schedule
/// are given.
pub fn metric_report(
    view: &View<'_>,
    model: &AlignmentModel,
    scores: Option<(&ScoreTable, &ThresholdSchedule)>,
    threads: usize,
) -> Result<MetricReport> {
    if view.is_empty() {
        return Err(Error::Empty(format!("view {:?} has no sentences", view.label)));
    }
    let links = model.align_all(&view.pairs, threads);
    let targets: Vec<&[TokenId]> = view.pairs.iter().map(|p| p.1).collect();
    let mut buckets = Vec::new();
    if let Some((table, schedule)) = scores {
        let mut acc = [(0usize, 0.0f64); 7];
        for (&i, (x, _)) in view.indices.iter().zip(&view.pairs) {
            let b = &mut acc[bucket_of(x.len())];
            b.0 += 1;
            b.1 += table.records[i].score;
        }
        for (label, (n, sum)) in BUCKET_LABELS.iter().zip(acc) {
            if n > 0 {
                let mean = sum / n as f64;
                buckets.push(BucketRow {
                    bucket: (*label).to_owned(),
                    sentences: n,
                    mean_score: mean,
                    exposure: exposure_period(mean, schedule),
                });
            }
        }
    }
    Ok(MetricReport {
        label: view.label.clone(),
        translation_uncertainty: translation_uncertainty_from_links(&view.pairs, &links)?,
        alignment_shift: alignment_shift_from_links(&view.pairs, &links)?,
        repetition_per_mille: repetition_ratio(&targets),
        sentences: view.len(),
        tokens: targets.iter().map(|t| t.len()).sum(),
        buckets,
    })
}

/// `C(d)` and `S(d)` of one view, or `None` when it is too small to measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Complexity {
    pub uncertainty: f64,
    pub shift: f64,
}

fn complexity(view: &View<'_>, model: &AlignmentModel, threads: usize) -> Option<Complexity> {
    if view.is_empty() {
        return None;
    }
    let links = model.align_all(&view.pairs, threads);
    Some(Complexity {
        uncertainty: translation_uncertainty_from_links(&view.pairs, &links).ok()?,
        shift: alignment_shift_from_links(&view.pairs, &links).ok()?,
    })
}

/// One row of the threshold sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub raw_ratio: f64,
    pub selected_raw: Option<Complexity>,
    pub replaced_raw: Option<Complexity>,
    pub training_data: Option<Complexity>,
}

pub fn threshold_sweep(
    corpus: &Corpus,
    scores: &ScoreTable,
    model: &AlignmentModel,
    thresholds: &[f64],
    threads: usize,
) -> Result<Vec<ThresholdRow>> {
    scores.check_covers(corpus.len())?;
    Ok(thresholds
        .iter()
        .map(|&t| ThresholdRow {
            threshold: t,
            raw_ratio: raw_ratio(scores, t),
            selected_raw: complexity(&View::selected_raw(corpus, scores, t), model, threads),
            replaced_raw: complexity(&View::replaced_raw(corpus, scores, t), model, threads),
            training_data: complexity(&View::training_data(corpus, scores, t), model, threads),
        })
        .collect())
}

/// Tab-separated sweep; unmeasurable cells are `-`.
pub fn sweep_tsv(rows: &[ThresholdRow]) -> String {
    let cell = |c: &Option<Complexity>| match c {
        Some(c) => format!("{:.6}\t{:.6}", c.uncertainty, c.shift),
        None => "-\t-".to_owned(),
    };
    let mut out = String::from(
        "threshold\traw_ratio\tC_selected\tS_selected\tC_replaced\tS_replaced\tC_training\tS_training\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{:.4}\t{:.6}\t{}\t{}\t{}\n",
            r.threshold,
            r.raw_ratio,
            cell(&r.selected_raw),
            cell(&r.replaced_raw),
            cell(&r.training_data)
        ));
    }
    out
}
