//! Tokenized parallel corpora with raw and distilled targets.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Reserved id of the CTC blank. Never part of a sentence.
pub const BLANK: TokenId = 0;
/// Reserved id for surfaces missing from a vocabulary.
pub const UNK: TokenId = 1;

pub const BLANK_SURFACE: &str = "<blank>";
pub const UNK_SURFACE: &str = "<unk>";

/// Longest sentence accepted on load, in tokens.
pub const MAX_SENTENCE_LEN: usize = 1024;

/// Bijection between token surfaces and ids. Ids are handed out in
/// first-occurrence order starting at 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    surfaces: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(surfaces: Vec<String>) -> Result<Self> {
        Self::from_surfaces(surfaces)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.surfaces
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary {
            surfaces: Vec::new(),
            ids: HashMap::new(),
        };
        v.intern(BLANK_SURFACE);
        v.intern(UNK_SURFACE);
        v
    }

    /// Rebuilds a vocabulary from its id-ordered surface list.
    pub fn from_surfaces(surfaces: Vec<String>) -> Result<Self> {
        if surfaces.len() < 2 || surfaces[0] != BLANK_SURFACE || surfaces[1] != UNK_SURFACE {
            return Err(Error::VocabularyMismatch(
                "surface list must start with the reserved blank and unknown entries".into(),
            ));
        }
        let mut ids = HashMap::with_capacity(surfaces.len());
        for (i, s) in surfaces.iter().enumerate() {
            if ids.insert(s.clone(), i as TokenId).is_some() {
                return Err(Error::VocabularyMismatch(format!("duplicate surface {s:?}")));
            }
        }
        Ok(Vocabulary { surfaces, ids })
    }

    fn intern(&mut self, surface: &str) -> TokenId {
        if let Some(&id) = self.ids.get(surface) {
            return id;
        }
        let id = self.surfaces.len() as TokenId;
        self.surfaces.push(surface.to_owned());
        self.ids.insert(surface.to_owned(), id);
        id
    }

    /// Id of `surface`, or [`UNK`] when absent.
    pub fn lookup(&self, surface: &str) -> TokenId {
        self.ids.get(surface).copied().unwrap_or(UNK)
    }

    pub fn get(&self, surface: &str) -> Option<TokenId> {
        self.ids.get(surface).copied()
    }

    pub fn surface(&self, id: TokenId) -> &str {
        &self.surfaces[id as usize]
    }

    /// Number of ids including the two reserved ones.
    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.len() <= 2
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    /// Maps whitespace-separated tokens to ids, with unknown surfaces going to [`UNK`].
    pub fn encode(&self, line: &str) -> Vec<TokenId> {
        line.split_whitespace().map(|t| self.lookup(t)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.surface(id));
        }
        out
    }

    /// SHA-256 over the id-ordered surfaces, newline separated, as lowercase hex.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for s in &self.surfaces {
            hasher.update(s.as_bytes());
            hasher.update(b"\n");
        }
        hex(&hasher.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A nonempty token sequence without blanks.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<TokenId>", into = "Vec<TokenId>")]
pub struct Sentence(Vec<TokenId>);

impl Sentence {
    pub fn new(tokens: Vec<TokenId>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Empty("sentence".into()));
        }
        if tokens.contains(&BLANK) {
            return Err(Error::Config("sentence contains the blank id".into()));
        }
        Ok(Sentence(tokens))
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl TryFrom<Vec<TokenId>> for Sentence {
    type Error = Error;

    fn try_from(tokens: Vec<TokenId>) -> Result<Self> {
        Sentence::new(tokens)
    }
}

impl From<Sentence> for Vec<TokenId> {
    fn from(s: Sentence) -> Self {
        s.0
    }
}

impl std::ops::Deref for Sentence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriExample {
    pub index: usize,
    pub source: Sentence,
    pub raw: Sentence,
    pub distilled: Sentence,
}

impl TriExample {
    pub fn target(&self, side: TargetSide) -> &Sentence {
        match side {
            TargetSide::Raw => &self.raw,
            TargetSide::Distilled => &self.distilled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Raw,
    Distilled,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Source => "source",
            Side::Raw => "raw",
            Side::Distilled => "distilled",
        })
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" | "src" => Ok(Side::Source),
            "raw" => Ok(Side::Raw),
            "distilled" | "kd" => Ok(Side::Distilled),
            other => Err(Error::Config(format!("unknown side {other:?}"))),
        }
    }
}

/// Which of the two targets of a [`TriExample`] to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetSide {
    Raw,
    Distilled,
}

impl From<TargetSide> for Side {
    fn from(t: TargetSide) -> Side {
        match t {
            TargetSide::Raw => Side::Raw,
            TargetSide::Distilled => Side::Distilled,
        }
    }
}

/// Whether source and target share one vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabMode {
    #[default]
    Separate,
    Shared,
}

/// Immutable after construction; example order is load order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    examples: Vec<TriExample>,
    source_vocab: Vocabulary,
    target_vocab: Vocabulary,
}

impl Corpus {
    /// Builds a corpus from surface-level rows `(source, raw, distilled)`.
    /// Vocabulary ids follow first occurrence: sources row by row, then raw
    /// targets, then distilled targets (all three in that order when shared).
    pub fn from_rows<S: AsRef<str>>(rows: &[[Vec<S>; 3]], mode: VocabMode) -> Result<Self> {
        let mut src_vocab = Vocabulary::new();
        let mut tgt_vocab = Vocabulary::new();
        for side in 0..3 {
            for row in rows {
                let vocab = if side == 0 || mode == VocabMode::Shared {
                    &mut src_vocab
                } else {
                    &mut tgt_vocab
                };
                for tok in &row[side] {
                    check_surface(tok.as_ref())?;
                    vocab.intern(tok.as_ref());
                }
            }
        }
        if mode == VocabMode::Shared {
            tgt_vocab = src_vocab.clone();
        }
        let examples = rows
            .iter()
            .enumerate()
            .map(|(index, row)| {
                let enc = |v: &Vocabulary, toks: &[S]| {
                    Sentence::new(toks.iter().map(|t| v.lookup(t.as_ref())).collect())
                };
                Ok(TriExample {
                    index,
                    source: enc(&src_vocab, &row[0])?,
                    raw: enc(&tgt_vocab, &row[1])?,
                    distilled: enc(&tgt_vocab, &row[2])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            examples,
            source_vocab: src_vocab,
            target_vocab: tgt_vocab,
        })
    }

    pub fn examples(&self) -> &[TriExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn source_vocab(&self) -> &Vocabulary {
        &self.source_vocab
    }

    pub fn target_vocab(&self) -> &Vocabulary {
        &self.target_vocab
    }

    /// `(source, target)` pairs for one target side, in corpus order.
    pub fn bitext(&self, side: TargetSide) -> Vec<(&Sentence, &Sentence)> {
        self.examples
            .iter()
            .map(|e| (&e.source, e.target(side)))
            .collect()
    }

    pub fn side_lines(&self, side: Side) -> Vec<String> {
        self.examples
            .iter()
            .map(|e| match side {
                Side::Source => self.source_vocab.decode(&e.source),
                Side::Raw => self.target_vocab.decode(&e.raw),
                Side::Distilled => self.target_vocab.decode(&e.distilled),
            })
            .collect()
    }
}

fn check_surface(tok: &str) -> Result<()> {
    if tok == BLANK_SURFACE {
        return Err(Error::Config(format!(
            "token {BLANK_SURFACE} is reserved for the CTC blank"
        )));
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn tokenize(path: &Path, lines: &[String]) -> Result<Vec<Vec<String>>> {
    lines
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let toks: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
            let err = |message: String| Error::Format {
                path: path.to_owned(),
                line: i + 1,
                message,
            };
            if toks.is_empty() {
                return Err(err("empty line".into()));
            }
            if toks.len() > MAX_SENTENCE_LEN {
                return Err(err(format!(
                    "{} tokens exceeds the maximum of {MAX_SENTENCE_LEN}",
                    toks.len()
                )));
            }
            if toks.iter().any(|t| t == BLANK_SURFACE) {
                return Err(err(format!("reserved token {BLANK_SURFACE}")));
            }
            Ok(toks)
        })
        .collect()
}

/// Loads three line-aligned, whitespace-tokenized files with separate vocabularies.
pub fn load_corpus(
    src_path: impl AsRef<Path>,
    raw_path: impl AsRef<Path>,
    kd_path: impl AsRef<Path>,
) -> Result<Corpus> {
    load_corpus_with(src_path, raw_path, kd_path, VocabMode::Separate)
}

pub fn load_corpus_with(
    src_path: impl AsRef<Path>,
    raw_path: impl AsRef<Path>,
    kd_path: impl AsRef<Path>,
    mode: VocabMode,
) -> Result<Corpus> {
    let paths = [src_path.as_ref(), raw_path.as_ref(), kd_path.as_ref()];
    let lines = paths
        .iter()
        .map(|p| read_lines(p))
        .collect::<Result<Vec<_>>>()?;
    for k in 1..3 {
        if lines[k].len() != lines[0].len() {
            return Err(Error::LineCountMismatch {
                left: paths[0].to_owned(),
                left_count: lines[0].len(),
                right: paths[k].to_owned(),
                right_count: lines[k].len(),
            });
        }
    }
    let mut sides = paths
        .iter()
        .zip(&lines)
        .map(|(p, l)| tokenize(p, l))
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    let (src, raw, kd) = (
        sides.next().unwrap(),
        sides.next().unwrap(),
        sides.next().unwrap(),
    );
    let rows: Vec<[Vec<String>; 3]> = src
        .into_iter()
        .zip(raw)
        .zip(kd)
        .map(|((s, r), d)| [s, r, d])
        .collect();
    Corpus::from_rows(&rows, mode)
}

/// Writes one side, one sentence per line with single-space separators and a
/// trailing newline after every line.
pub fn write_bitext(corpus: &Corpus, side: Side, path: impl AsRef<Path>) -> Result<()> {
    write_lines(path, &corpus.side_lines(side))
}

pub fn write_lines<S: AsRef<str>>(path: impl AsRef<Path>, lines: &[S]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for l in lines {
        buf.extend_from_slice(l.as_ref().as_bytes());
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn single_line_corpus() {
        let d = tempdir().unwrap();
        let c = load_corpus(
            write(d.path(), "s", "a b\n"),
            write(d.path(), "r", "c d\n"),
            write(d.path(), "k", "c d\n"),
        )
        .unwrap();
        assert_eq!(c.len(), 1);
        let e = &c.examples()[0];
        assert_eq!(e.raw, e.distilled);
        assert_eq!(e.index, 0);
        assert_eq!(c.source_vocab().lookup("a"), 2);
        assert_eq!(c.source_vocab().lookup("b"), 3);
    }

    #[test]
    fn line_count_mismatch_names_files() {
        let d = tempdir().unwrap();
        let err = load_corpus(
            write(d.path(), "s", "a\nb\n"),
            write(d.path(), "r", "c\nd\ne\n"),
            write(d.path(), "k", "c\nd\n"),
        )
        .unwrap_err();
        match err {
            Error::LineCountMismatch {
                left_count,
                right_count,
                ref right,
                ..
            } => {
                assert_eq!((left_count, right_count), (2, 3));
                assert!(right.ends_with("r"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_line_reports_line_number() {
        let d = tempdir().unwrap();
        let err = load_corpus(
            write(d.path(), "s", "a\n\n"),
            write(d.path(), "r", "c\nd\n"),
            write(d.path(), "k", "c\nd\n"),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }), "{err}");
    }

    #[test]
    fn overlong_line_is_rejected() {
        let d = tempdir().unwrap();
        let long = vec!["x"; MAX_SENTENCE_LEN + 1].join(" ");
        let err = load_corpus(
            write(d.path(), "s", &format!("{long}\n")),
            write(d.path(), "r", "c\n"),
            write(d.path(), "k", "c\n"),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Format { line: 1, .. }));
    }

    #[test]
    fn blank_surface_is_rejected() {
        let d = tempdir().unwrap();
        assert!(load_corpus(
            write(d.path(), "s", "a\n"),
            write(d.path(), "r", "<blank>\n"),
            write(d.path(), "k", "c\n"),
        )
        .is_err());
    }

    #[test]
    fn write_source_side() {
        let d = tempdir().unwrap();
        let c = load_corpus(
            write(d.path(), "s", "a b\n"),
            write(d.path(), "r", "c d\n"),
            write(d.path(), "k", "c d\n"),
        )
        .unwrap();
        let out = d.path().join("out");
        write_bitext(&c, Side::Source, &out).unwrap();
        assert_eq!(fs::read_to_string(out).unwrap(), "a b\n");
    }

    #[test]
    fn empty_corpus_writes_empty_file() {
        let d = tempdir().unwrap();
        let c = Corpus::from_rows::<&str>(&[], VocabMode::Separate).unwrap();
        let out = d.path().join("out");
        write_bitext(&c, Side::Raw, &out).unwrap();
        assert_eq!(fs::read(out).unwrap(), b"");
    }

    #[test]
    fn shared_vocabulary() {
        let rows = [[vec!["a", "b"], vec!["b", "c"], vec!["c"]]];
        let c = Corpus::from_rows(&rows, VocabMode::Shared).unwrap();
        assert_eq!(c.source_vocab(), c.target_vocab());
        assert_eq!(c.target_vocab().lookup("b"), 3);
    }

    #[test]
    fn vocabulary_roundtrip() {
        let rows = [[vec!["a", "b"], vec!["x", "y"], vec!["y", "z"]]];
        let c = Corpus::from_rows(&rows, VocabMode::Separate).unwrap();
        let v = c.target_vocab();
        for id in 0..v.len() as TokenId {
            assert_eq!(v.lookup(v.surface(id)), id);
        }
        assert_eq!(v.lookup("nope"), UNK);
        let json = serde_json::to_string(v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(&back, v);
        assert_eq!(back.lookup("z"), v.lookup("z"));
        assert!(serde_json::from_str::<Vocabulary>(r#"["a","b"]"#).is_err());
    }
}
