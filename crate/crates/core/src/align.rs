//! Word alignment by EM over a lexical table with a fixed diagonal prior.
//!
//! For target position `j` of `M` and source position `i` of `N` (both
//! 1-based) the link weight is `(1 - p0) · δ(i, j) / Z_j · t(y_j | x_i)` with
//! `δ(i, j) = exp(-λ |i/N - j/M|)`, and the NULL link gets `p0 · t(y_j | NULL)`.
//! Because `λ` and `p0` stay fixed, every iteration is a plain EM step on a
//! mixture and the corpus likelihood cannot go down.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, TargetSide, TokenId};
use crate::error::{Error, Result};
use crate::util::par_chunks;

/// A source/target sentence pair as token ids.
pub type Pair<'a> = (&'a [TokenId], &'a [TokenId]);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub iterations: usize,
    /// `λ` of the diagonal prior; 0 makes every source position equally likely.
    pub tension: f64,
    /// Prior mass of the NULL link.
    pub p0: f64,
    pub threads: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            iterations: 5,
            tension: 4.0,
            p0: 0.08,
            threads: 1,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("alignment needs at least one EM iteration".into()));
        }
        if !(self.tension.is_finite() && self.tension >= 0.0) {
            return Err(Error::Config(format!("tension {} must be finite and nonnegative", self.tension)));
        }
        if !(0.0..1.0).contains(&self.p0) {
            return Err(Error::Config(format!("p0 {} must lie in [0, 1)", self.p0)));
        }
        Ok(())
    }
}

/// Sparse `t(y | x)` over the target types seen with `x`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Row {
    targets: Vec<TokenId>,
    probs: Vec<f64>,
}

impl Row {
    fn slot(&self, y: TokenId) -> Option<usize> {
        self.targets.binary_search(&y).ok()
    }

    fn prob(&self, y: TokenId) -> f64 {
        self.slot(y).map_or(0.0, |k| self.probs[k])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentModel {
    tension: f64,
    p0: f64,
    /// Row 0 is NULL, row `x + 1` is source token `x`.
    rows: Vec<Row>,
    /// Corpus log-likelihood measured in each E-step.
    log_likelihood: Vec<f64>,
}

/// Links for one pair: `links[j]` is the 1-based source position of target
/// word `j`, or `None` for NULL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentLinks {
    pub links: Vec<Option<usize>>,
    /// Target words that had no support in the table and went to NULL.
    pub fallbacks: usize,
}

impl AlignmentLinks {
    /// `i-j` pairs, 0-based, NULL links omitted.
    pub fn pharaoh(&self) -> String {
        self.links
            .iter()
            .enumerate()
            .filter_map(|(j, l)| l.map(|i| format!("{}-{}", i - 1, j)))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn diagonal(i: usize, n: usize, j: usize, m: usize, tension: f64) -> f64 {
    (-tension * (i as f64 / n as f64 - j as f64 / m as f64).abs()).exp()
}

impl AlignmentModel {
    pub fn tension(&self) -> f64 {
        self.tension
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    /// Log-likelihood before each M-step, one entry per iteration.
    pub fn log_likelihood_trace(&self) -> &[f64] {
        &self.log_likelihood
    }

    fn row(&self, x: Option<TokenId>) -> Option<&Row> {
        match x {
            None => self.rows.first(),
            Some(x) => self.rows.get(x as usize + 1),
        }
    }

    /// `t(y | x)`, with `None` for NULL.
    pub fn prob(&self, x: Option<TokenId>, y: TokenId) -> f64 {
        self.row(x).map_or(0.0, |r| r.prob(y))
    }

    /// Target types with nonzero `t(· | x)`, and their probabilities.
    pub fn support(&self, x: Option<TokenId>) -> Vec<(TokenId, f64)> {
        self.row(x)
            .map(|r| r.targets.iter().copied().zip(r.probs.iter().copied()).collect())
            .unwrap_or_default()
    }

    /// Unnormalized link weights for target position `j` (0-based): entry 0 is
    /// NULL, entry `i` is source position `i`.
    fn link_weights(&self, source: &[TokenId], target: &[TokenId], j: usize, out: &mut Vec<f64>) {
        out.clear();
        let y = target[j];
        out.push(self.p0 * self.prob(None, y));
        let (n, m) = (source.len(), target.len());
        let z: f64 = (1..=n).map(|i| diagonal(i, n, j + 1, m, self.tension)).sum();
        for (i, &x) in source.iter().enumerate() {
            let d = diagonal(i + 1, n, j + 1, m, self.tension);
            out.push((1.0 - self.p0) * d / z * self.prob(Some(x), y));
        }
    }

    /// Viterbi links under the trained model. Ties go to the smaller position,
    /// with NULL counting as position 0.
    pub fn align_pair(&self, source: &[TokenId], target: &[TokenId]) -> AlignmentLinks {
        let mut weights = Vec::with_capacity(source.len() + 1);
        let mut fallbacks = 0;
        let links = (0..target.len())
            .map(|j| {
                self.link_weights(source, target, j, &mut weights);
                let mut best = 0;
                for (i, &w) in weights.iter().enumerate().skip(1) {
                    if w > weights[best] {
                        best = i;
                    }
                }
                if weights[best] <= 0.0 {
                    fallbacks += 1;
                    return None;
                }
                (best > 0).then_some(best)
            })
            .collect();
        AlignmentLinks { links, fallbacks }
    }

    /// Links for every pair, in order.
    pub fn align_all(&self, bitext: &[Pair<'_>], threads: usize) -> Vec<AlignmentLinks> {
        par_chunks(bitext, threads, |_, chunk| {
            chunk.iter().map(|(x, y)| self.align_pair(x, y)).collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect()
    }
}

/// Expected counts shaped like the model's rows, plus the log-likelihood.
fn e_step(model: &AlignmentModel, chunk: &[Pair<'_>]) -> (Vec<Vec<f64>>, f64) {
    let mut counts: Vec<Vec<f64>> = model.rows.iter().map(|r| vec![0.0; r.targets.len()]).collect();
    let mut ll = 0.0;
    let mut weights = Vec::new();
    for (x, y) in chunk {
        for j in 0..y.len() {
            model.link_weights(x, y, j, &mut weights);
            let total: f64 = weights.iter().sum();
            ll += total.ln();
            for (i, &w) in weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let row = if i == 0 { 0 } else { x[i - 1] as usize + 1 };
                let slot = model.rows[row].slot(y[j]).expect("pair seen in training");
                counts[row][slot] += w / total;
            }
        }
    }
    (counts, ll)
}

/// Runs `config.iterations` rounds of EM, starting from `t(· | x)` uniform over
/// the targets that co-occur with `x`.
pub fn em_train(bitext: &[Pair<'_>], config: &AlignConfig) -> Result<AlignmentModel> {
    config.validate()?;
    if bitext.is_empty() {
        return Err(Error::Empty("alignment bitext".into()));
    }
    let rows_needed = bitext
        .iter()
        .flat_map(|(x, _)| x.iter())
        .map(|&x| x as usize + 2)
        .max()
        .unwrap_or(1);
    let mut support: Vec<BTreeSet<TokenId>> = vec![BTreeSet::new(); rows_needed];
    for (x, y) in bitext {
        support[0].extend(y.iter().copied());
        for &xi in x.iter() {
            support[xi as usize + 1].extend(y.iter().copied());
        }
    }
    let rows = support
        .into_iter()
        .map(|s| {
            let targets: Vec<TokenId> = s.into_iter().collect();
            let p = 1.0 / targets.len().max(1) as f64;
            Row {
                probs: vec![p; targets.len()],
                targets,
            }
        })
        .collect();
    let mut model = AlignmentModel {
        tension: config.tension,
        p0: config.p0,
        rows,
        log_likelihood: Vec::with_capacity(config.iterations),
    };
    for it in 0..config.iterations {
        let parts = par_chunks(bitext, config.threads, |_, chunk| e_step(&model, chunk));
        let mut ll = 0.0;
        let mut counts: Vec<Vec<f64>> = model.rows.iter().map(|r| vec![0.0; r.targets.len()]).collect();
        for (part, part_ll) in parts {
            ll += part_ll;
            for (acc, c) in counts.iter_mut().zip(part) {
                acc.iter_mut().zip(c).for_each(|(a, b)| *a += b);
            }
        }
        for (row, c) in model.rows.iter_mut().zip(counts) {
            let total: f64 = c.iter().sum();
            if total > 0.0 {
                row.probs = c.into_iter().map(|v| v / total).collect();
            }
        }
        log::debug!("alignment iteration {it}: log-likelihood {ll:.6}");
        model.log_likelihood.push(ll);
    }
    Ok(model)
}

/// Trains on the source side paired with every requested target side.
pub fn em_train_corpus(corpus: &Corpus, sides: &[TargetSide], config: &AlignConfig) -> Result<AlignmentModel> {
    let mut pairs: Vec<Pair<'_>> = Vec::with_capacity(corpus.len() * sides.len());
    for &side in sides {
        pairs.extend(
            corpus
                .examples()
                .iter()
                .map(|e| (e.source.tokens(), e.target(side).tokens())),
        );
    }
    em_train(&pairs, config)
}

/// One line of Pharaoh links per pair.
pub fn pharaoh_dump(links: &[AlignmentLinks]) -> String {
    let mut out = String::new();
    for l in links {
        out.push_str(&l.pharaoh());
        out.push('\n');
    }
    out
}
