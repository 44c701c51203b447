//! Synthetic multimodal translation tasks.
//!
//! A task owns one canonical token map from source types to target types and
//! `M - 1` alternative modes. Mode 0 is the canonical map. Every other mode
//! rewrites a seeded subset of source types to a mode-specific synonym; the
//! dramatic modes additionally reverse the sentence. The distilled target is
//! always the canonical output, optionally corrupted by a teacher mistake.
//!
//! Mistakes are placed on a seeded set of *fragile* source types when
//! `fragile_mistakes` is on: a sentence containing a fragile type is corrupted
//! with probability `ρ / π`, where `π` is the exact probability that a sampled
//! source contains one, and the duplicated (or swapped) token is one of the
//! fragile positions. The fragile set is the smallest one with `π ≥ ρ`, so
//! the marginal corruption rate stays exactly `ρ` while the mistakes stay tied
//! to particular words, the way a real teacher's do.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, VocabMode};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MistakeKind {
    /// Duplicate one token in place ("this this week").
    RepeatToken,
    /// Replace one token with a synonym from another mode.
    SynonymSwap,
}

impl fmt::Display for MistakeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MistakeKind::RepeatToken => "repeat-token",
            MistakeKind::SynonymSwap => "synonym-swap",
        })
    }
}

impl FromStr for MistakeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "repeat-token" => Ok(MistakeKind::RepeatToken),
            "synonym-swap" => Ok(MistakeKind::SynonymSwap),
            other => Err(Error::Config(format!("unknown mistake kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTaskSpec {
    pub source_vocab: usize,
    pub target_vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability of each mode; its length is the mode count.
    pub mode_weights: Vec<f64>,
    /// Modes that also reverse word order.
    pub dramatic_modes: Vec<usize>,
    /// Fraction of source types a non-canonical mode rewrites.
    pub synonym_rate: f64,
    pub mistake_rate: f64,
    pub mistake_kind: MistakeKind,
    pub fragile_mistakes: bool,
    pub seed: u64,
}

impl Default for SynthTaskSpec {
    fn default() -> Self {
        SynthTaskSpec {
            source_vocab: 48,
            target_vocab: 192,
            min_len: 4,
            max_len: 10,
            mode_weights: vec![0.4, 0.2, 0.2, 0.2],
            dramatic_modes: vec![2],
            synonym_rate: 0.25,
            mistake_rate: 0.1,
            mistake_kind: MistakeKind::RepeatToken,
            fragile_mistakes: true,
            seed: 17,
        }
    }
}

impl SynthTaskSpec {
    pub fn modes(&self) -> usize {
        self.mode_weights.len()
    }

    /// Single canonical mode with `M` uniform modes turned into weights.
    pub fn uniform_modes(mut self, modes: usize) -> Self {
        self.mode_weights = vec![1.0 / modes as f64; modes];
        self.dramatic_modes.retain(|&m| m < modes);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.modes();
        let bad = |msg: String| Err(Error::Config(msg));
        if m == 0 {
            return bad("at least one mode is required".into());
        }
        let total: f64 = self.mode_weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 || self.mode_weights.iter().any(|w| !(*w >= 0.0)) {
            return bad(format!("mode weights must be a probability vector (sum {total})"));
        }
        if self.min_len < 1 || self.min_len > self.max_len {
            return bad(format!(
                "length range [{}, {}] is invalid",
                self.min_len, self.max_len
            ));
        }
        if self.source_vocab < 1 {
            return bad("source vocabulary must be nonempty".into());
        }
        if self.target_vocab < 2 * m {
            return bad(format!(
                "target vocabulary {} is smaller than twice the mode count {m}",
                self.target_vocab
            ));
        }
        if !(0.0..=1.0).contains(&self.mistake_rate) {
            return bad(format!("mistake rate {} outside [0, 1]", self.mistake_rate));
        }
        if !(0.0..=1.0).contains(&self.synonym_rate) {
            return bad(format!("synonym rate {} outside [0, 1]", self.synonym_rate));
        }
        if let Some(&d) = self.dramatic_modes.iter().find(|&&d| d == 0 || d >= m) {
            return bad(format!("dramatic mode {d} must lie in [1, {m})"));
        }
        Ok(())
    }
}

/// The situations a raw/distilled pair can be in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairClass {
    Identical,
    MinorModalityChange,
    DramaticModalityChange,
}

/// Seeded maps of a task; sampling corpora from it is a separate step.
#[derive(Debug, Clone)]
pub struct SynthTask {
    spec: SynthTaskSpec,
    /// `maps[m][x]` is the target type of source type `x` under mode `m`.
    maps: Vec<Vec<usize>>,
    fragile: Vec<bool>,
    /// Probability of corrupting a sentence that contains a fragile type.
    corrupt_given_fragile: f64,
}

impl SynthTask {
    pub fn new(spec: SynthTaskSpec) -> Result<Self> {
        spec.validate()?;
        let m = spec.modes();
        let block = spec.target_vocab / m;
        let mut rng = Rng::derive(spec.seed, 0x6d61_7073);
        let canonical: Vec<usize> = {
            let perm = rng.permutation(block.max(spec.source_vocab));
            (0..spec.source_vocab).map(|x| perm[x] % block).collect()
        };
        let rewritten = ((spec.synonym_rate * spec.source_vocab as f64).round() as usize)
            .max(usize::from(spec.synonym_rate > 0.0));
        let mut maps = vec![canonical.clone()];
        for mode in 1..m {
            let perm = rng.permutation(block.max(spec.source_vocab));
            let chosen = rng.permutation(spec.source_vocab);
            let mut map = canonical.clone();
            for &x in chosen.iter().take(rewritten) {
                map[x] = mode * block + perm[x] % block;
            }
            maps.push(map);
        }

        let (fragile, corrupt_given_fragile) = if spec.fragile_mistakes && spec.mistake_rate > 0.0 {
            let order = rng.permutation(spec.source_vocab);
            let mut k = 1;
            while k < spec.source_vocab && contains_probability(&spec, k) < spec.mistake_rate {
                k += 1;
            }
            let mut fragile = vec![false; spec.source_vocab];
            for &x in order.iter().take(k) {
                fragile[x] = true;
            }
            let pi = contains_probability(&spec, k);
            (fragile, (spec.mistake_rate / pi).min(1.0))
        } else {
            (vec![false; spec.source_vocab], 0.0)
        };

        Ok(SynthTask {
            spec,
            maps,
            fragile,
            corrupt_given_fragile,
        })
    }

    pub fn spec(&self) -> &SynthTaskSpec {
        &self.spec
    }

    pub fn is_dramatic(&self, mode: usize) -> bool {
        self.spec.dramatic_modes.contains(&mode)
    }

    pub fn class_of(&self, mode: usize) -> PairClass {
        if mode == 0 {
            PairClass::Identical
        } else if self.is_dramatic(mode) {
            PairClass::DramaticModalityChange
        } else {
            PairClass::MinorModalityChange
        }
    }

    pub fn fragile_types(&self) -> Vec<usize> {
        (0..self.spec.source_vocab).filter(|&x| self.fragile[x]).collect()
    }

    fn source_surface(x: usize) -> String {
        format!("s{x}")
    }

    fn target_surface(y: usize) -> String {
        format!("t{y}")
    }

    fn translate(&self, source: &[usize], mode: usize) -> Vec<usize> {
        let mut out: Vec<usize> = source.iter().map(|&x| self.maps[mode][x]).collect();
        if self.is_dramatic(mode) {
            out.reverse();
        }
        out
    }

    /// Canonical (mode 0, mistake-free) translation of surface tokens.
    /// Surfaces outside the task's source alphabet yield `None`.
    pub fn canonical<S: AsRef<str>>(&self, source: &[S]) -> Option<Vec<String>> {
        source
            .iter()
            .map(|s| {
                let x: usize = s.as_ref().strip_prefix('s')?.parse().ok()?;
                (x < self.spec.source_vocab).then(|| Self::target_surface(self.maps[0][x]))
            })
            .collect()
    }

    fn sample_source(&self, rng: &mut Rng) -> Vec<usize> {
        let len = rng.range_inclusive(self.spec.min_len, self.spec.max_len);
        (0..len).map(|_| rng.below(self.spec.source_vocab)).collect()
    }

    fn corrupt(&self, source: &[usize], target: &mut Vec<usize>, rng: &mut Rng) -> bool {
        let candidates: Vec<usize> = if self.spec.fragile_mistakes {
            (0..source.len()).filter(|&i| self.fragile[source[i]]).collect()
        } else {
            (0..source.len()).collect()
        };
        let p = if self.spec.fragile_mistakes {
            if candidates.is_empty() {
                0.0
            } else {
                self.corrupt_given_fragile
            }
        } else {
            self.spec.mistake_rate
        };
        if !rng.bernoulli(p) {
            return false;
        }
        let pos = candidates[rng.below(candidates.len())];
        match self.spec.mistake_kind {
            MistakeKind::RepeatToken => target.insert(pos + 1, target[pos]),
            MistakeKind::SynonymSwap => {
                let x = source[pos];
                let alternative = (1..self.spec.modes())
                    .map(|m| self.maps[m][x])
                    .find(|&y| y != target[pos]);
                target[pos] = match alternative {
                    Some(y) => y,
                    None => {
                        let block = self.spec.target_vocab / self.spec.modes();
                        (target[pos] + 1) % block
                    }
                };
            }
        }
        true
    }

    /// Draws `n` examples. Deterministic in `(task seed, n, seed)`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<SynthCorpus> {
        if n == 0 {
            return Err(Error::Config("cannot generate an empty corpus".into()));
        }
        let mut rng = Rng::derive(seed, 0x7361_6d70);
        let mut rows = Vec::with_capacity(n);
        let mut modes = Vec::with_capacity(n);
        let mut mistakes = Vec::with_capacity(n);
        for _ in 0..n {
            let source = self.sample_source(&mut rng);
            let mode = rng.categorical(&self.spec.mode_weights);
            let raw = self.translate(&source, mode);
            let mut distilled = self.translate(&source, 0);
            let flag = self.corrupt(&source, &mut distilled, &mut rng);
            rows.push([
                source.iter().map(|&x| Self::source_surface(x)).collect::<Vec<_>>(),
                raw.iter().map(|&y| Self::target_surface(y)).collect(),
                distilled.iter().map(|&y| Self::target_surface(y)).collect(),
            ]);
            modes.push(mode);
            mistakes.push(flag);
        }
        Ok(SynthCorpus {
            corpus: Corpus::from_rows(&rows, VocabMode::Separate)?,
            modes,
            mistakes,
            dramatic: self.spec.dramatic_modes.clone(),
        })
    }

    /// Fresh sources with their canonical references, as surface tokens.
    pub fn heldout(&self, n: usize, seed: u64) -> Vec<(Vec<String>, Vec<String>)> {
        let mut rng = Rng::derive(seed, 0x7465_7374);
        (0..n)
            .map(|_| {
                let source = self.sample_source(&mut rng);
                let reference = self.translate(&source, 0);
                (
                    source.iter().map(|&x| Self::source_surface(x)).collect(),
                    reference.iter().map(|&y| Self::target_surface(y)).collect(),
                )
            })
            .collect()
    }
}

/// Probability that a sampled source contains one of `k` fragile types.
fn contains_probability(spec: &SynthTaskSpec, k: usize) -> f64 {
    let miss = 1.0 - k as f64 / spec.source_vocab as f64;
    let lens = spec.min_len..=spec.max_len;
    let count = lens.clone().count() as f64;
    lens.map(|l| 1.0 - miss.powi(l as i32)).sum::<f64>() / count
}

/// `generate(spec, n, seed)`: builds the task from `spec.seed` and samples `n`
/// examples from it with `seed`.
pub fn generate(spec: &SynthTaskSpec, n: usize, seed: u64) -> Result<SynthCorpus> {
    SynthTask::new(spec.clone())?.sample(n, seed)
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    /// Mode each raw target was drawn from.
    pub modes: Vec<usize>,
    /// Whether the distilled target was corrupted.
    pub mistakes: Vec<bool>,
    dramatic: Vec<usize>,
}

impl SynthCorpus {
    pub fn is_dramatic(&self, mode: usize) -> bool {
        self.dramatic.contains(&mode)
    }

    /// `index<TAB>mode<TAB>mistake` rows, mistake as 0 or 1.
    pub fn sidecar_tsv(&self) -> String {
        let mut out = String::new();
        for (i, (m, k)) in self.modes.iter().zip(&self.mistakes).enumerate() {
            out.push_str(&format!("{i}\t{m}\t{}\n", u8::from(*k)));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub examples: usize,
    pub mode_counts: Vec<usize>,
    pub mistake_count: usize,
    pub identical: usize,
    pub minor_modality: usize,
    pub dramatic_modality: usize,
    /// Ground truth for selection: mode 0 or a non-dramatic mode.
    pub should_select: Vec<bool>,
}

impl OracleReport {
    pub fn should_select_fraction(&self) -> f64 {
        self.should_select.iter().filter(|&&b| b).count() as f64 / self.examples as f64
    }

    /// Precision and recall of a RAW/KD choice against [`Self::should_select`].
    pub fn precision_recall(&self, selected: &[bool]) -> (f64, f64) {
        let tp = selected
            .iter()
            .zip(&self.should_select)
            .filter(|(&s, &g)| s && g)
            .count() as f64;
        let chosen = selected.iter().filter(|&&s| s).count() as f64;
        let relevant = self.should_select.iter().filter(|&&g| g).count() as f64;
        let ratio = |a: f64, b: f64| if b == 0.0 { 1.0 } else { a / b };
        (ratio(tp, chosen), ratio(tp, relevant))
    }
}

pub fn oracle_report(synth: &SynthCorpus) -> OracleReport {
    let modes = synth.modes.iter().max().map_or(0, |m| m + 1);
    let mut mode_counts = vec![0; modes];
    for &m in &synth.modes {
        mode_counts[m] += 1;
    }
    let should_select: Vec<bool> = synth.modes.iter().map(|&m| !synth.is_dramatic(m)).collect();
    let identical = mode_counts.first().copied().unwrap_or(0);
    let dramatic_modality = synth.modes.iter().filter(|&&m| synth.is_dramatic(m)).count();
    OracleReport {
        examples: synth.modes.len(),
        mode_counts,
        mistake_count: synth.mistakes.iter().filter(|&&b| b).count(),
        identical,
        minor_modality: synth.modes.len() - identical - dramatic_modality,
        dramatic_modality,
        should_select,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SynthTaskSpec {
        SynthTaskSpec::default()
    }

    #[test]
    fn single_mode_without_noise_has_identical_targets() {
        let s = SynthTaskSpec {
            mode_weights: vec![1.0],
            dramatic_modes: vec![],
            mistake_rate: 0.0,
            ..spec()
        };
        let c = generate(&s, 200, 1).unwrap();
        for e in c.corpus.examples() {
            assert_eq!(e.raw, e.distilled);
        }
    }

    #[test]
    fn mode_fraction_follows_weights() {
        let s = SynthTaskSpec {
            mode_weights: vec![0.5, 0.5],
            dramatic_modes: vec![],
            ..spec()
        };
        let c = generate(&s, 10_000, 9).unwrap();
        let frac = c.modes.iter().filter(|&&m| m == 0).count() as f64 / 10_000.0;
        assert!((frac - 0.5).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn full_repeat_rate_adds_one_adjacent_duplicate() {
        for fragile in [true, false] {
            let s = SynthTaskSpec {
                mistake_rate: 1.0,
                fragile_mistakes: fragile,
                ..spec()
            };
            let c = generate(&s, 300, 4).unwrap();
            for (e, &m) in c.corpus.examples().iter().zip(&c.modes) {
                assert_eq!(e.distilled.len(), e.raw.len() + 1);
                assert!(e.distilled.windows(2).any(|w| w[0] == w[1]));
                let _ = m;
            }
            assert!(c.mistakes.iter().all(|&b| b));
        }
    }

    #[test]
    fn mode_zero_raw_matches_clean_distilled() {
        let c = generate(&spec(), 2000, 3).unwrap();
        for ((e, &m), &flag) in c.corpus.examples().iter().zip(&c.modes).zip(&c.mistakes) {
            if m == 0 && !flag {
                assert_eq!(e.raw, e.distilled);
            }
            if !flag {
                // distilled is always the canonical map output
                let src: Vec<&str> = e
                    .source
                    .iter()
                    .map(|&t| c.corpus.source_vocab().surface(t))
                    .collect();
                let task = SynthTask::new(spec()).unwrap();
                let canon = task.canonical(&src).unwrap();
                let kd: Vec<&str> = e
                    .distilled
                    .iter()
                    .map(|&t| c.corpus.target_vocab().surface(t))
                    .collect();
                assert_eq!(canon, kd);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&spec(), 500, 42).unwrap();
        let b = generate(&spec(), 500, 42).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.sidecar_tsv(), b.sidecar_tsv());
        let c = generate(&spec(), 500, 43).unwrap();
        assert_ne!(a.corpus, c.corpus);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let cases = [
            SynthTaskSpec {
                mode_weights: vec![0.5, 0.4],
                ..spec()
            },
            SynthTaskSpec {
                min_len: 0,
                ..spec()
            },
            SynthTaskSpec {
                target_vocab: 7,
                ..spec()
            },
            SynthTaskSpec {
                mistake_rate: 1.5,
                ..spec()
            },
            SynthTaskSpec {
                dramatic_modes: vec![0],
                ..spec()
            },
        ];
        for s in cases {
            assert!(matches!(generate(&s, 10, 0), Err(Error::Config(_))), "{s:?}");
        }
        assert!(generate(&spec(), 0, 0).is_err());
    }

    #[test]
    fn oracle_all_identical() {
        let s = SynthTaskSpec {
            mode_weights: vec![1.0],
            dramatic_modes: vec![],
            ..spec()
        };
        let r = oracle_report(&generate(&s, 100, 0).unwrap());
        assert_eq!(r.should_select_fraction(), 1.0);
        assert_eq!(r.identical, 100);
    }

    #[test]
    fn oracle_uniform_four_modes_within_binomial_bounds() {
        let n = 4000;
        let s = spec().uniform_modes(4);
        let r = oracle_report(&generate(&s, n, 5).unwrap());
        // binomial(n, 1/4): sd = sqrt(n * 1/4 * 3/4)
        let sd = (n as f64 * 0.25 * 0.75).sqrt();
        for &c in &r.mode_counts {
            assert!((c as f64 - n as f64 / 4.0).abs() <= 3.0 * sd, "{:?}", r.mode_counts);
        }
    }

    #[test]
    fn mistake_count_within_binomial_bounds() {
        for fragile in [true, false] {
            let s = SynthTaskSpec {
                mistake_rate: 0.1,
                fragile_mistakes: fragile,
                ..spec()
            };
            let r = oracle_report(&generate(&s, 1000, 8).unwrap());
            assert!((r.mistake_count as i64 - 100).abs() <= 30, "{}", r.mistake_count);
        }
    }

    #[test]
    fn fragile_probability_is_exact_marginal() {
        let s = spec();
        let task = SynthTask::new(s.clone()).unwrap();
        let k = task.fragile_types().len();
        let pi = contains_probability(&s, k);
        assert!(pi >= s.mistake_rate);
        assert!(k == 1 || contains_probability(&s, k - 1) < s.mistake_rate);
        assert!((task.corrupt_given_fragile * pi - s.mistake_rate).abs() < 1e-12);
    }

    #[test]
    fn synonym_swap_keeps_length() {
        let s = SynthTaskSpec {
            mistake_rate: 1.0,
            mistake_kind: MistakeKind::SynonymSwap,
            ..spec()
        };
        let c = generate(&s, 100, 2).unwrap();
        for e in c.corpus.examples() {
            assert_eq!(e.distilled.len(), e.source.len());
        }
    }

    #[test]
    fn dramatic_modes_reverse() {
        let s = SynthTaskSpec {
            mode_weights: vec![0.0, 0.0, 1.0],
            dramatic_modes: vec![2],
            synonym_rate: 0.0,
            mistake_rate: 0.0,
            ..spec()
        };
        let c = generate(&s, 50, 1).unwrap();
        for e in c.corpus.examples() {
            let mut rev = e.distilled.tokens().to_vec();
            rev.reverse();
            assert_eq!(e.raw.tokens(), rev.as_slice());
        }
    }

    #[test]
    fn precision_recall() {
        let r = OracleReport {
            examples: 4,
            mode_counts: vec![],
            mistake_count: 0,
            identical: 0,
            minor_modality: 0,
            dramatic_modality: 0,
            should_select: vec![true, true, false, false],
        };
        assert_eq!(r.precision_recall(&[true, false, true, false]), (0.5, 0.5));
    }
}
