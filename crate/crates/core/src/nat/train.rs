use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sentence, TargetSide, TokenId};
use crate::error::{Error, Result};
use crate::nat::model::{ModelConfig, NatModel, Scratch};
use crate::rng::Rng;

/// Result of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Mean loss over the pairs that could be used.
    pub loss: f64,
    pub used: usize,
    pub skipped: usize,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Plain SGD on the mean loss of a batch, with global-norm clipping.
#[derive(Debug)]
pub struct Trainer {
    model: NatModel,
    grad: Vec<f64>,
    scratch: Scratch,
    updates: usize,
}

impl Trainer {
    pub fn new(model: NatModel) -> Self {
        let grad = vec![0.0; model.layout().total];
        Trainer {
            model,
            grad,
            scratch: Scratch::default(),
            updates: 0,
        }
    }

    pub fn model(&self) -> &NatModel {
        &self.model
    }

    pub fn into_model(self) -> NatModel {
        self.model
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// One update over `batch`. Pairs whose target cannot be aligned are
    /// skipped and counted; a batch with nothing usable leaves the model as is.
    pub fn step(&mut self, batch: &[(&[TokenId], &[TokenId])]) -> Result<StepStats> {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        let mut used = 0;
        let mut skipped = 0;
        for (src, tgt) in batch {
            match self
                .model
                .loss_and_grad_with(src, tgt, &mut self.grad, &mut self.scratch)
            {
                Ok(loss) => {
                    total += loss;
                    used += 1;
                }
                Err(Error::Infeasible { .. }) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        self.updates += 1;
        if used == 0 {
            return Ok(StepStats {
                loss: 0.0,
                used,
                skipped,
                grad_norm: 0.0,
            });
        }
        let inv = 1.0 / used as f64;
        let norm = self.grad.iter().map(|g| g * g).sum::<f64>().sqrt() * inv;
        if !norm.is_finite() {
            return Err(Error::Training(format!(
                "non-finite gradient at update {}",
                self.updates
            )));
        }
        let clip = self.model.config().clip_norm;
        let scale = if norm > clip { clip / norm } else { 1.0 };
        let lr = self.model.config().learning_rate * inv * scale;
        self.model
            .params_mut()
            .iter_mut()
            .zip(&self.grad)
            .for_each(|(p, g)| *p -= lr * g);
        Ok(StepStats {
            loss: total * inv,
            used,
            skipped,
            grad_norm: norm,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: NatModel,
    pub epochs: Vec<EpochLog>,
    /// Pairs never usable because their targets cannot be aligned.
    pub skipped_pairs: usize,
    /// Copy of the parameters right after the requested update, if any.
    pub snapshot: Option<NatModel>,
}

/// Trains a fresh model on `(source, target)` pairs for `config.epochs`
/// epochs. Each epoch visits the pairs in a seeded order.
pub fn train_pairs(
    model: NatModel,
    pairs: &[(&Sentence, &Sentence)],
    snapshot_at: Option<usize>,
) -> Result<TrainOutcome> {
    if pairs.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let config = model.config().clone();
    let mut trainer = Trainer::new(model);
    let mut snapshot = None;
    if snapshot_at == Some(0) {
        snapshot = Some(trainer.model().clone());
    }
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut skipped_pairs = 0;
    for epoch in 0..config.epochs {
        let order = Rng::derive(config.seed, 0x6570_6f63_6800 + epoch as u64).permutation(pairs.len());
        let mut loss_sum = 0.0;
        let mut used = 0;
        let mut skipped = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[TokenId], &[TokenId])> = chunk
                .iter()
                .map(|&i| (pairs[i].0.tokens(), pairs[i].1.tokens()))
                .collect();
            let stats = trainer.step(&batch)?;
            loss_sum += stats.loss * stats.used as f64;
            used += stats.used;
            skipped += stats.skipped;
            if snapshot_at == Some(trainer.updates()) {
                snapshot = Some(trainer.model().clone());
            }
        }
        if used == 0 {
            return Err(Error::Training(
                "no training pair can be aligned to its frames".into(),
            ));
        }
        let mean_loss = loss_sum / used as f64;
        log::info!("epoch {epoch}: mean loss {mean_loss:.6} ({skipped} skipped)");
        epochs.push(EpochLog {
            epoch,
            mean_loss,
            skipped,
        });
        skipped_pairs = skipped;
    }
    Ok(TrainOutcome {
        model: trainer.into_model(),
        epochs,
        skipped_pairs,
        snapshot,
    })
}

/// Trains a model on one target side of `corpus`.
pub fn train(corpus: &Corpus, side: TargetSide, config: &ModelConfig) -> Result<TrainOutcome> {
    train_with_snapshot(corpus, side, config, None)
}

pub fn train_with_snapshot(
    corpus: &Corpus,
    side: TargetSide,
    config: &ModelConfig,
    snapshot_at: Option<usize>,
) -> Result<TrainOutcome> {
    let model = NatModel::new(
        config.clone(),
        corpus.source_vocab().clone(),
        corpus.target_vocab().clone(),
    )?;
    train_pairs(model, &corpus.bitext(side), snapshot_at)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::VocabMode;

    #[test]
    fn memorizes_a_single_pair() {
        let rows = [[vec!["a", "b", "c"], vec!["x", "y", "z"], vec!["x", "y", "z"]]];
        let corpus = Corpus::from_rows(&rows, VocabMode::Separate).unwrap();
        let config = ModelConfig {
            epochs: 200,
            batch_size: 1,
            learning_rate: 0.5,
            ..ModelConfig::default()
        };
        let out = train(&corpus, TargetSide::Raw, &config).unwrap();
        let last = out.epochs.last().unwrap().mean_loss;
        // the logged loss is measured before each update, so check the final model too
        let mut grad = vec![0.0; out.model.layout().total];
        let e = &corpus.examples()[0];
        let final_loss = out.model.loss_and_grad(&e.source, &e.raw, &mut grad).unwrap();
        assert!(last < 0.01 && final_loss < 0.01, "{last} {final_loss}");
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let rows = [
            [vec!["a", "b"], vec!["x", "y"], vec!["x", "y"]],
            [vec!["b", "a", "a"], vec!["y", "x", "x"], vec!["y", "x", "x"]],
        ];
        let corpus = Corpus::from_rows(&rows, VocabMode::Separate).unwrap();
        let config = ModelConfig {
            epochs: 5,
            batch_size: 1,
            ..ModelConfig::default()
        };
        let a = train(&corpus, TargetSide::Raw, &config).unwrap();
        let b = train(&corpus, TargetSide::Raw, &config).unwrap();
        assert_eq!(a.model.params(), b.model.params());
        let c = train(&corpus, TargetSide::Raw, &ModelConfig { seed: 2, ..config }).unwrap();
        assert_ne!(a.model.params(), c.model.params());
    }

    #[test]
    fn all_infeasible_is_an_error() {
        // three identical tokens need five frames but a 1-token source gives two
        let rows = [[vec!["a"], vec!["x", "x", "x"], vec!["x", "x", "x"]]];
        let corpus = Corpus::from_rows(&rows, VocabMode::Separate).unwrap();
        let err = train(&corpus, TargetSide::Raw, &ModelConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Training(_)));
    }

    #[test]
    fn infeasible_pairs_are_skipped_and_counted() {
        let rows = [
            [vec!["a"], vec!["x", "x", "x"], vec!["x"]],
            [vec!["a", "b"], vec!["x", "y"], vec!["x", "y"]],
        ];
        let corpus = Corpus::from_rows(&rows, VocabMode::Separate).unwrap();
        let out = train(
            &corpus,
            TargetSide::Raw,
            &ModelConfig {
                epochs: 2,
                ..ModelConfig::default()
            },
        )
        .unwrap();
        assert_eq!(out.skipped_pairs, 1);
    }

    #[test]
    fn snapshot_is_taken_at_requested_update() {
        let rows = [
            [vec!["a", "b"], vec!["x", "y"], vec!["x", "y"]],
            [vec!["b"], vec!["y"], vec!["y"]],
        ];
        let corpus = Corpus::from_rows(&rows, VocabMode::Separate).unwrap();
        let config = ModelConfig {
            epochs: 3,
            batch_size: 1,
            ..ModelConfig::default()
        };
        let out = train_with_snapshot(&corpus, TargetSide::Raw, &config, Some(2)).unwrap();
        let snap = out.snapshot.unwrap();
        assert_ne!(snap.params(), out.model.params());
        let short = train(&corpus, TargetSide::Raw, &ModelConfig { epochs: 1, ..config }).unwrap();
        assert_eq!(snap.params(), short.model.params());
    }
}
