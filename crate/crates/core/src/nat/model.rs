use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{hex, TokenId, Vocabulary, UNK};
use crate::error::{Error, Result};
use crate::nat::ctc::{ctc_loss_and_grad, EmissionMatrix};
use crate::rng::Rng;

/// What a model is trained to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// CTC over `upsample · |X|` frames.
    #[default]
    Ctc,
    /// Cross-entropy against the reference at exactly `|Y|` frames, no blank.
    Aligned,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Ctc => "ctc",
            Objective::Aligned => "aligned",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ctc" => Ok(Objective::Ctc),
            "aligned" => Ok(Objective::Aligned),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Frames per source token.
    pub upsample: usize,
    /// A frame sees source positions `p - window ..= p + window`.
    pub window: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub objective: Objective,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 16,
            hidden_dim: 48,
            upsample: 2,
            window: 1,
            learning_rate: 0.2,
            epochs: 12,
            batch_size: 16,
            clip_norm: 5.0,
            seed: 1,
            objective: Objective::Ctc,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.upsample < 2 {
            return bad("upsample factor must be at least 2");
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return bad("embedding and hidden sizes must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return bad("gradient clip norm must be positive");
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        (2 * self.window + 1) * self.embed_dim + self.upsample
    }
}

/// Offsets of each parameter block inside the flat parameter vector, in
/// storage order: source embeddings `[V_s × E]`, first layer `[H × D]` and
/// bias `[H]`, second layer `[H × H]` and bias `[H]`, output projection
/// `[C × H]` and bias `[C]`, all row-major. `D = (2w + 1)·E + s` and `C`
/// counts every target id including the blank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub source_vocab: usize,
    pub classes: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub input_dim: usize,
    pub embed: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub w_out: usize,
    pub b_out: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(config: &ModelConfig, source_vocab: usize, classes: usize) -> Self {
        let (e, h, d) = (config.embed_dim, config.hidden_dim, config.input_dim());
        let embed = 0;
        let w1 = embed + source_vocab * e;
        let b1 = w1 + h * d;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w_out = b2 + h;
        let b_out = w_out + classes * h;
        Layout {
            source_vocab,
            classes,
            embed_dim: e,
            hidden_dim: h,
            input_dim: d,
            embed,
            w1,
            b1,
            w2,
            b2,
            w_out,
            b_out,
            total: b_out + classes,
        }
    }

    /// `(name, rows, cols)` for each block in storage order.
    pub fn blocks(&self) -> [(&'static str, usize, usize); 7] {
        let (e, h, d, c) = (self.embed_dim, self.hidden_dim, self.input_dim, self.classes);
        [
            ("embed", self.source_vocab, e),
            ("w1", h, d),
            ("b1", h, 1),
            ("w2", h, h),
            ("b2", h, 1),
            ("w_out", c, h),
            ("b_out", c, 1),
        ]
    }
}

/// A per-frame perceptron over windowed source embeddings.
///
/// Frame `t` of `T` reads source position `p = ⌊t·N/T⌋`; its input is the
/// concatenation of the embeddings at `p - w ..= p + w` (zeros outside the
/// sentence) and a one-hot frame phase `⌊s·((t·N) mod T) / T⌋`. With
/// `T = s·N` this is the usual `p = ⌊t/s⌋`, phase `t mod s`. Each frame
/// depends on the source only, never on other frames' outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct NatModel {
    config: ModelConfig,
    source_vocab: Vocabulary,
    target_vocab: Vocabulary,
    layout: Layout,
    params: Vec<f64>,
}

/// Activations of one frame, kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct FrameCache {
    input: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    log_probs: Vec<f64>,
}

impl NatModel {
    pub fn new(config: ModelConfig, source_vocab: Vocabulary, target_vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config, source_vocab.len(), target_vocab.len());
        let mut params = vec![0.0; layout.total];
        let mut rng = Rng::derive(config.seed, 0x696e_6974);
        let mut fill = |range: std::ops::Range<usize>, scale: f64| {
            for p in &mut params[range] {
                *p = (2.0 * rng.unit() - 1.0) * scale;
            }
        };
        let (h, d, c) = (layout.hidden_dim, layout.input_dim, layout.classes);
        fill(layout.embed..layout.w1, 1.0);
        fill(layout.w1..layout.b1, (6.0 / (h + d) as f64).sqrt());
        fill(layout.w2..layout.b2, (6.0 / (2 * h) as f64).sqrt());
        fill(layout.w_out..layout.b_out, (6.0 / (h + c) as f64).sqrt());
        Ok(NatModel {
            config,
            source_vocab,
            target_vocab,
            layout,
            params,
        })
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        source_vocab: Vocabulary,
        target_vocab: Vocabulary,
        params: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config, source_vocab.len(), target_vocab.len());
        if params.len() != layout.total {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(NatModel {
            config,
            source_vocab,
            target_vocab,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub(crate) fn config_mut(&mut self) -> &mut ModelConfig {
        &mut self.config
    }

    pub fn source_vocab(&self) -> &Vocabulary {
        &self.source_vocab
    }

    pub fn target_vocab(&self) -> &Vocabulary {
        &self.target_vocab
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn classes(&self) -> usize {
        self.layout.classes
    }

    /// SHA-256 over the configuration, both vocabularies and the exact
    /// parameter bits.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.config).expect("config serializes"));
        hasher.update(self.source_vocab.hash().as_bytes());
        hasher.update(self.target_vocab.hash().as_bytes());
        for p in &self.params {
            hasher.update(p.to_bits().to_le_bytes());
        }
        hex(&hasher.finalize())
    }

    pub fn frame_count(&self, source_len: usize) -> usize {
        self.config.upsample * source_len
    }

    /// Emissions at `upsample · |X|` frames.
    pub fn forward(&self, source: &[TokenId]) -> EmissionMatrix {
        self.forward_frames(source, self.frame_count(source.len()))
    }

    /// Emissions at an arbitrary number of frames.
    pub fn forward_frames(&self, source: &[TokenId], frames: usize) -> EmissionMatrix {
        let classes = self.layout.classes;
        let mut data = Vec::with_capacity(frames * classes);
        let mut cache = FrameCache::default();
        for t in 0..frames {
            self.run_frame(source, t, frames, &mut cache);
            data.extend_from_slice(&cache.log_probs);
        }
        EmissionMatrix::from_log_probs(frames, classes, data).with_source_len(source.len())
    }

    fn frame_position(&self, n: usize, t: usize, frames: usize) -> (usize, usize) {
        let pos = t * n / frames;
        let phase = self.config.upsample * ((t * n) % frames) / frames;
        (pos, phase)
    }

    fn source_id(&self, tok: TokenId) -> usize {
        let id = tok as usize;
        if id < self.layout.source_vocab {
            id
        } else {
            UNK as usize
        }
    }

    fn run_frame(&self, source: &[TokenId], t: usize, frames: usize, cache: &mut FrameCache) {
        let l = &self.layout;
        let (e, h, d, c) = (l.embed_dim, l.hidden_dim, l.input_dim, l.classes);
        let w = self.config.window;
        let (pos, phase) = self.frame_position(source.len(), t, frames);
        let p = &self.params;

        cache.input.clear();
        cache.input.resize(d, 0.0);
        for slot in 0..=2 * w {
            let Some(q) = (pos + slot).checked_sub(w) else { continue };
            if q >= source.len() {
                continue;
            }
            let row = l.embed + self.source_id(source[q]) * e;
            cache.input[slot * e..(slot + 1) * e].copy_from_slice(&p[row..row + e]);
        }
        cache.input[(2 * w + 1) * e + phase] = 1.0;

        cache.h1.clear();
        for i in 0..h {
            let row = &p[l.w1 + i * d..l.w1 + (i + 1) * d];
            let z = p[l.b1 + i] + dot(row, &cache.input);
            cache.h1.push(z.tanh());
        }
        cache.h2.clear();
        for i in 0..h {
            let row = &p[l.w2 + i * h..l.w2 + (i + 1) * h];
            let z = p[l.b2 + i] + dot(row, &cache.h1);
            cache.h2.push(z.tanh());
        }
        cache.log_probs.clear();
        for k in 0..c {
            let row = &p[l.w_out + k * h..l.w_out + (k + 1) * h];
            cache.log_probs.push(p[l.b_out + k] + dot(row, &cache.h2));
        }
        let max = cache.log_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z = max + cache.log_probs.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        cache.log_probs.iter_mut().for_each(|v| *v -= z);
    }

    /// Adds the gradient of a frame's loss to `grad`, given `d_log_probs`, the
    /// loss gradient with respect to that frame's log-probabilities.
    fn backward_frame(
        &self,
        source: &[TokenId],
        t: usize,
        frames: usize,
        cache: &FrameCache,
        d_log_probs: &[f64],
        grad: &mut [f64],
        scratch: &mut Scratch,
    ) {
        let l = &self.layout;
        let (e, h, d, c) = (l.embed_dim, l.hidden_dim, l.input_dim, l.classes);
        let p = &self.params;

        // through log-softmax
        let total: f64 = d_log_probs.iter().sum();
        scratch.dz.clear();
        scratch
            .dz
            .extend((0..c).map(|k| d_log_probs[k] - cache.log_probs[k].exp() * total));

        scratch.dh.clear();
        scratch.dh.resize(h, 0.0);
        for k in 0..c {
            let g = scratch.dz[k];
            grad[l.b_out + k] += g;
            let off = l.w_out + k * h;
            axpy(g, &cache.h2, &mut grad[off..off + h]);
            axpy(g, &p[off..off + h], &mut scratch.dh);
        }

        scratch.da.clear();
        scratch
            .da
            .extend((0..h).map(|i| scratch.dh[i] * (1.0 - cache.h2[i] * cache.h2[i])));
        scratch.dh.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..h {
            let g = scratch.da[i];
            grad[l.b2 + i] += g;
            let off = l.w2 + i * h;
            axpy(g, &cache.h1, &mut grad[off..off + h]);
            axpy(g, &p[off..off + h], &mut scratch.dh);
        }

        for i in 0..h {
            scratch.da[i] = scratch.dh[i] * (1.0 - cache.h1[i] * cache.h1[i]);
        }
        scratch.dx.clear();
        scratch.dx.resize(d, 0.0);
        for i in 0..h {
            let g = scratch.da[i];
            grad[l.b1 + i] += g;
            let off = l.w1 + i * d;
            axpy(g, &cache.input, &mut grad[off..off + d]);
            axpy(g, &p[off..off + d], &mut scratch.dx);
        }

        let w = self.config.window;
        let (pos, _) = self.frame_position(source.len(), t, frames);
        for slot in 0..=2 * w {
            let Some(q) = (pos + slot).checked_sub(w) else { continue };
            if q >= source.len() {
                continue;
            }
            let row = l.embed + self.source_id(source[q]) * e;
            let dx = &scratch.dx[slot * e..(slot + 1) * e];
            grad[row..row + e]
                .iter_mut()
                .zip(dx)
                .for_each(|(g, v)| *g += v);
        }
    }

    /// Loss of one pair under the model's objective; its gradient is added to
    /// `grad`. On error `grad` is left untouched.
    pub fn loss_and_grad(
        &self,
        source: &[TokenId],
        target: &[TokenId],
        grad: &mut [f64],
    ) -> Result<f64> {
        let mut scratch = Scratch::default();
        self.loss_and_grad_with(source, target, grad, &mut scratch)
    }

    pub(crate) fn loss_and_grad_with(
        &self,
        source: &[TokenId],
        target: &[TokenId],
        grad: &mut [f64],
        scratch: &mut Scratch,
    ) -> Result<f64> {
        debug_assert_eq!(grad.len(), self.layout.total);
        if source.is_empty() || target.is_empty() {
            return Err(Error::Empty("training pair".into()));
        }
        let classes = self.layout.classes;
        let frames = match self.config.objective {
            Objective::Ctc => self.frame_count(source.len()),
            Objective::Aligned => target.len(),
        };
        if let Some(&k) = target.iter().find(|&&k| k as usize >= classes) {
            return Err(Error::VocabularyMismatch(format!(
                "target id {k} outside a {classes}-class output layer"
            )));
        }
        scratch.caches.resize_with(frames, FrameCache::default);
        let mut lattice = Vec::with_capacity(frames * classes);
        for t in 0..frames {
            self.run_frame(source, t, frames, &mut scratch.caches[t]);
            lattice.extend_from_slice(&scratch.caches[t].log_probs);
        }
        let (loss, d_lattice) = match self.config.objective {
            Objective::Ctc => {
                let em = EmissionMatrix::from_log_probs(frames, classes, lattice);
                ctc_loss_and_grad(&em, target)?
            }
            Objective::Aligned => {
                let mut d = vec![0.0; frames * classes];
                let mut loss = 0.0;
                for (t, &y) in target.iter().enumerate() {
                    loss -= lattice[t * classes + y as usize];
                    d[t * classes + y as usize] = -1.0;
                }
                (loss, d)
            }
        };
        let caches = std::mem::take(&mut scratch.caches);
        for (t, cache) in caches.iter().enumerate().take(frames) {
            let row = &d_lattice[t * classes..(t + 1) * classes];
            if row.iter().all(|&g| g == 0.0) {
                continue;
            }
            self.backward_frame(source, t, frames, cache, row, grad, scratch);
        }
        scratch.caches = caches;
        Ok(loss)
    }
}

#[derive(Debug, Default)]
pub(crate) struct Scratch {
    caches: Vec<FrameCache>,
    dz: Vec<f64>,
    dh: Vec<f64>,
    da: Vec<f64>,
    dx: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, VocabMode};

    pub(crate) fn tiny() -> (Corpus, ModelConfig) {
        let rows = [
            [vec!["a", "b", "c"], vec!["x", "y", "z"], vec!["x", "y", "z"]],
            [vec!["c", "a"], vec!["z", "x"], vec!["z", "x"]],
        ];
        let corpus = Corpus::from_rows(&rows, VocabMode::Separate).unwrap();
        let config = ModelConfig {
            embed_dim: 3,
            hidden_dim: 4,
            ..ModelConfig::default()
        };
        (corpus, config)
    }

    fn model(config: ModelConfig) -> NatModel {
        let (c, _) = tiny();
        NatModel::new(config, c.source_vocab().clone(), c.target_vocab().clone()).unwrap()
    }

    #[test]
    fn forward_shape_and_normalization() {
        let (_, cfg) = tiny();
        let m = model(cfg);
        let em = m.forward(&[2, 3, 4]);
        assert_eq!(em.frames(), 6);
        assert_eq!(em.classes(), m.target_vocab().len());
        assert!(em.normalization_error() < 1e-9);
        assert!(em.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn distant_tokens_do_not_reach_a_frame() {
        let (_, cfg) = tiny();
        let m = model(cfg);
        // frame 0 reads position 0 with window 1, so positions >= 2 are outside
        let a = m.forward(&[2, 3, 4, 2, 3]);
        let b = m.forward(&[2, 3, 3, 4, 2]);
        assert_eq!(a.row(0), b.row(0));
        assert_eq!(a.row(1), b.row(1));
        assert_ne!(a.row(4), b.row(4));
    }

    #[test]
    fn unknown_source_ids_map_to_unk() {
        let (_, cfg) = tiny();
        let m = model(cfg);
        assert_eq!(m.forward(&[999, 2]), m.forward(&[UNK, 2]));
    }

    #[test]
    fn invalid_config() {
        let (_, cfg) = tiny();
        for bad in [
            ModelConfig { upsample: 1, ..cfg.clone() },
            ModelConfig { embed_dim: 0, ..cfg.clone() },
            ModelConfig { learning_rate: 0.0, ..cfg.clone() },
        ] {
            let (c, _) = tiny();
            assert!(NatModel::new(bad, c.source_vocab().clone(), c.target_vocab().clone()).is_err());
        }
    }

    fn finite_difference_check(objective: Objective) {
        let (_, cfg) = tiny();
        let mut m = model(ModelConfig { objective, ..cfg });
        let (src, tgt) = ([2, 3, 4], [3, 2]);
        let mut grad = vec![0.0; m.layout().total];
        m.loss_and_grad(&src, &tgt, &mut grad).unwrap();
        let eps = 1e-6;
        let mut scratch = vec![0.0; m.layout().total];
        for i in (0..m.layout().total).step_by(7) {
            let orig = m.params[i];
            m.params[i] = orig + eps;
            let up = m.loss_and_grad(&src, &tgt, &mut scratch).unwrap();
            m.params[i] = orig - eps;
            let down = m.loss_and_grad(&src, &tgt, &mut scratch).unwrap();
            m.params[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = (numeric - grad[i]).abs() / (1e-6 + numeric.abs().max(grad[i].abs()));
            assert!(err < 1e-4, "param {i}: analytic {} numeric {numeric}", grad[i]);
        }
    }

    #[test]
    fn ctc_parameter_gradient_matches_finite_differences() {
        finite_difference_check(Objective::Ctc);
    }

    #[test]
    fn aligned_parameter_gradient_matches_finite_differences() {
        finite_difference_check(Objective::Aligned);
    }

    #[test]
    fn fingerprint_tracks_parameters() {
        let (_, cfg) = tiny();
        let mut m = model(cfg);
        let before = m.fingerprint();
        m.params[0] += 1.0;
        assert_ne!(before, m.fingerprint());
    }
}
