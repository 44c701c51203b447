//! Model checkpoints.
//!
//! A checkpoint is one JSON document:
//!
//! ```text
//! { "format": "selkd-nat", "version": 1,
//!   "config": { ...ModelConfig... },
//!   "source_vocab_hash": "<sha256>", "target_vocab_hash": "<sha256>",
//!   "source_vocab": [surfaces in id order], "target_vocab": [...],
//!   "blocks": [["embed", rows, cols], ["w1", ...], ...],
//!   "params": [flat f64 values, blocks concatenated in the order above] }
//! ```
//!
//! Floats are written in shortest round-trip form, so a save/load cycle is
//! bit-exact. Loading recomputes both vocabulary hashes and rejects a file
//! whose hashes or block shapes do not match.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Vocabulary};
use crate::error::{Error, Result};
use crate::nat::model::{ModelConfig, NatModel};

pub const FORMAT: &str = "selkd-nat";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    source_vocab_hash: String,
    target_vocab_hash: String,
    source_vocab: Vec<String>,
    target_vocab: Vec<String>,
    blocks: Vec<(String, usize, usize)>,
    params: Vec<f64>,
}

pub fn to_bytes(model: &NatModel) -> Vec<u8> {
    let file = CheckpointFile {
        format: FORMAT.into(),
        version: VERSION,
        config: model.config().clone(),
        source_vocab_hash: model.source_vocab().hash(),
        target_vocab_hash: model.target_vocab().hash(),
        source_vocab: model.source_vocab().surfaces().to_vec(),
        target_vocab: model.target_vocab().surfaces().to_vec(),
        blocks: model
            .layout()
            .blocks()
            .iter()
            .map(|&(n, r, c)| (n.to_owned(), r, c))
            .collect(),
        params: model.params().to_vec(),
    };
    let mut bytes = serde_json::to_vec(&file).expect("checkpoint serializes");
    bytes.push(b'\n');
    bytes
}

pub fn from_bytes(bytes: &[u8]) -> Result<NatModel> {
    let file: CheckpointFile =
        serde_json::from_slice(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if file.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", file.format)));
    }
    if file.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {}",
            file.version
        )));
    }
    let source_vocab = Vocabulary::from_surfaces(file.source_vocab)?;
    let target_vocab = Vocabulary::from_surfaces(file.target_vocab)?;
    if source_vocab.hash() != file.source_vocab_hash || target_vocab.hash() != file.target_vocab_hash {
        return Err(Error::VocabularyMismatch(
            "checkpoint vocabulary does not match its recorded hash".into(),
        ));
    }
    let model = NatModel::from_parts(file.config, source_vocab, target_vocab, file.params)?;
    let expected: Vec<(String, usize, usize)> = model
        .layout()
        .blocks()
        .iter()
        .map(|&(n, r, c)| (n.to_owned(), r, c))
        .collect();
    if expected != file.blocks {
        return Err(Error::Checkpoint("parameter blocks do not match the configuration".into()));
    }
    Ok(model)
}

pub fn save(model: &NatModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<NatModel> {
    let path = path.as_ref();
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Errors unless the model was built over exactly the corpus vocabularies.
pub fn check_compatible(model: &NatModel, corpus: &Corpus) -> Result<()> {
    if model.source_vocab().hash() != corpus.source_vocab().hash() {
        return Err(Error::VocabularyMismatch(
            "source vocabulary of the model differs from the corpus".into(),
        ));
    }
    if model.target_vocab().hash() != corpus.target_vocab().hash() {
        return Err(Error::VocabularyMismatch(
            "target vocabulary of the model differs from the corpus".into(),
        ));
    }
    Ok(())
}

/// Loads a checkpoint and checks it against `corpus`.
pub fn load_for(path: impl AsRef<Path>, corpus: &Corpus) -> Result<NatModel> {
    let model = load(path)?;
    check_compatible(&model, corpus)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::VocabMode;

    fn setup() -> (Corpus, NatModel) {
        let rows = [[vec!["a", "b"], vec!["x", "y"], vec!["x", "y"]]];
        let corpus = Corpus::from_rows(&rows, VocabMode::Separate).unwrap();
        let model = NatModel::new(
            ModelConfig {
                embed_dim: 2,
                hidden_dim: 3,
                ..ModelConfig::default()
            },
            corpus.source_vocab().clone(),
            corpus.target_vocab().clone(),
        )
        .unwrap();
        (corpus, model)
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let (_, model) = setup();
        let back = from_bytes(&to_bytes(&model)).unwrap();
        assert_eq!(back, model);
        assert_eq!(to_bytes(&back), to_bytes(&model));
    }

    #[test]
    fn rejects_tampered_vocabulary() {
        let (_, model) = setup();
        let text = String::from_utf8(to_bytes(&model)).unwrap();
        let tampered = text.replacen("\"x\"", "\"q\"", 1);
        assert!(matches!(
            from_bytes(tampered.as_bytes()),
            Err(Error::VocabularyMismatch(_))
        ));
    }

    #[test]
    fn rejects_foreign_corpus() {
        let (corpus, model) = setup();
        check_compatible(&model, &corpus).unwrap();
        let other = Corpus::from_rows(
            &[[vec!["a", "b"], vec!["x", "z"], vec!["x", "z"]]],
            VocabMode::Separate,
        )
        .unwrap();
        assert!(matches!(
            check_compatible(&model, &other),
            Err(Error::VocabularyMismatch(_))
        ));
    }

    #[test]
    fn rejects_bad_format() {
        assert!(from_bytes(b"{}").is_err());
        let (_, model) = setup();
        let text = String::from_utf8(to_bytes(&model)).unwrap();
        assert!(from_bytes(text.replace("selkd-nat", "other").as_bytes()).is_err());
    }
}
