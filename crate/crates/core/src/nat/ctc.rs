//! CTC over a frame lattice: loss and gradient, greedy decoding and the
//! best single path for a reference.
//!
//! Every recursion runs over the extended label sequence
//! `_ y1 _ y2 _ ... _ yU _` (length `2U + 1`) in log space.

use crate::corpus::{TokenId, BLANK};
use crate::error::{Error, Result};
use crate::util::{log_add, log_sum_exp};

/// `frames × classes` log-probabilities, row-major. Class 0 is the blank.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionMatrix {
    frames: usize,
    classes: usize,
    source_len: usize,
    data: Vec<f64>,
}

impl EmissionMatrix {
    /// Wraps log-probabilities as they are. Rows need not be normalized,
    /// which lets tests perturb single entries.
    pub fn from_log_probs(frames: usize, classes: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), frames * classes, "lattice shape");
        assert!(classes >= 2, "lattice needs the blank and at least one token");
        EmissionMatrix {
            frames,
            classes,
            source_len: 0,
            data,
        }
    }

    /// Row-wise log-softmax of `logits`.
    pub fn from_logits(frames: usize, classes: usize, mut logits: Vec<f64>) -> Self {
        for row in logits.chunks_mut(classes) {
            let z = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= z);
        }
        Self::from_log_probs(frames, classes, logits)
    }

    pub(crate) fn with_source_len(mut self, n: usize) -> Self {
        self.source_len = n;
        self
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Length of the source sentence the lattice was computed from.
    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.classes..(t + 1) * self.classes]
    }

    pub fn get(&self, t: usize, k: TokenId) -> f64 {
        self.data[t * self.classes + k as usize]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Largest `|log Σ_k exp(row_k)|` over rows.
    pub fn normalization_error(&self) -> f64 {
        self.data
            .chunks(self.classes)
            .map(|r| log_sum_exp(r).abs())
            .fold(0.0, f64::max)
    }
}

/// One label (token or blank) per frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FramePath(pub Vec<TokenId>);

impl FramePath {
    pub fn labels(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn collapse(&self) -> Vec<TokenId> {
        collapse(&self.0)
    }

    /// Sum of the path's per-frame log-probabilities.
    pub fn log_prob(&self, emissions: &EmissionMatrix) -> f64 {
        self.0
            .iter()
            .enumerate()
            .map(|(t, &k)| emissions.get(t, k))
            .sum()
    }
}

/// Merges runs of equal labels, then drops blanks.
pub fn collapse(path: &[TokenId]) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(path.len());
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != BLANK {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Fewest frames that can emit `target`: one per token plus a separating
/// blank between equal neighbours.
pub fn min_frames(target: &[TokenId]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn extended(target: &[TokenId]) -> Vec<TokenId> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(BLANK);
    for &y in target {
        ext.push(y);
        ext.push(BLANK);
    }
    ext
}

/// Whether state `s` may be entered directly from `s - 2`.
fn can_skip(ext: &[TokenId], s: usize) -> bool {
    s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2]
}

fn check_target(emissions: &EmissionMatrix, target: &[TokenId]) -> Result<()> {
    if target.is_empty() {
        return Err(Error::Empty("CTC target".into()));
    }
    if let Some(&k) = target
        .iter()
        .find(|&&k| k == BLANK || k as usize >= emissions.classes)
    {
        return Err(Error::Config(format!(
            "target label {k} is not a token of a {}-class lattice",
            emissions.classes
        )));
    }
    let required = min_frames(target);
    if emissions.frames < required {
        return Err(infeasible(emissions, target));
    }
    Ok(())
}

fn infeasible(emissions: &EmissionMatrix, target: &[TokenId]) -> Error {
    Error::Infeasible {
        frames: emissions.frames,
        target_len: target.len(),
        required: min_frames(target),
    }
}

fn forward_table(em: &EmissionMatrix, ext: &[TokenId]) -> Vec<f64> {
    let (t_len, s_len) = (em.frames, ext.len());
    let mut alpha = vec![f64::NEG_INFINITY; t_len * s_len];
    alpha[0] = em.get(0, ext[0]);
    if s_len > 1 {
        alpha[1] = em.get(0, ext[1]);
    }
    for t in 1..t_len {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        let cur = &mut cur[..s_len];
        for s in 0..s_len {
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if can_skip(ext, s) {
                a = log_add(a, prev[s - 2]);
            }
            if a != f64::NEG_INFINITY {
                cur[s] = a + em.get(t, ext[s]);
            }
        }
    }
    alpha
}

fn backward_table(em: &EmissionMatrix, ext: &[TokenId]) -> Vec<f64> {
    let (t_len, s_len) = (em.frames, ext.len());
    let mut beta = vec![f64::NEG_INFINITY; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = em.get(t_len - 1, ext[s_len - 1]);
    beta[last + s_len - 2] = em.get(t_len - 1, ext[s_len - 2]);
    for t in (0..t_len - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        let next = &next[..s_len];
        for s in 0..s_len {
            let mut b = next[s];
            if s + 1 < s_len {
                b = log_add(b, next[s + 1]);
            }
            if s + 2 < s_len && can_skip(ext, s + 2) {
                b = log_add(b, next[s + 2]);
            }
            if b != f64::NEG_INFINITY {
                cur[s] = b + em.get(t, ext[s]);
            }
        }
    }
    beta
}

fn total_log_prob(alpha: &[f64], frames: usize, s_len: usize) -> f64 {
    let last = &alpha[(frames - 1) * s_len..];
    log_add(last[s_len - 1], last[s_len - 2])
}

/// `log p(target | emissions)`, the log of the summed probability of every
/// frame path that collapses to `target`.
pub fn ctc_log_likelihood(emissions: &EmissionMatrix, target: &[TokenId]) -> Result<f64> {
    check_target(emissions, target)?;
    let ext = extended(target);
    let alpha = forward_table(emissions, &ext);
    let lp = total_log_prob(&alpha, emissions.frames, ext.len());
    if lp == f64::NEG_INFINITY {
        return Err(infeasible(emissions, target));
    }
    Ok(lp)
}

/// Negative log-likelihood and its gradient with respect to every entry of
/// the lattice, laid out like [`EmissionMatrix::as_slice`].
pub fn ctc_loss_and_grad(emissions: &EmissionMatrix, target: &[TokenId]) -> Result<(f64, Vec<f64>)> {
    check_target(emissions, target)?;
    let ext = extended(target);
    let s_len = ext.len();
    let alpha = forward_table(emissions, &ext);
    let log_p = total_log_prob(&alpha, emissions.frames, s_len);
    if log_p == f64::NEG_INFINITY {
        return Err(infeasible(emissions, target));
    }
    let beta = backward_table(emissions, &ext);

    let classes = emissions.classes;
    let mut occupancy = vec![f64::NEG_INFINITY; emissions.frames * classes];
    for t in 0..emissions.frames {
        for s in 0..s_len {
            let i = t * s_len + s;
            if alpha[i] == f64::NEG_INFINITY || beta[i] == f64::NEG_INFINITY {
                continue;
            }
            let k = ext[s] as usize;
            let g = alpha[i] + beta[i] - emissions.get(t, ext[s]);
            occupancy[t * classes + k] = log_add(occupancy[t * classes + k], g);
        }
    }
    let grad = occupancy
        .into_iter()
        .map(|o| if o == f64::NEG_INFINITY { 0.0 } else { -(o - log_p).exp() })
        .collect();
    Ok((-log_p, grad))
}

/// Per-frame argmax, ties going to the lowest id, and its collapse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GreedyDecode {
    pub frames: FramePath,
    pub output: Vec<TokenId>,
}

impl GreedyDecode {
    /// Every frame chose the blank.
    pub fn is_empty(&self) -> bool {
        self.output.is_empty()
    }
}

pub fn argmax(row: &[f64]) -> TokenId {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best as TokenId
}

pub fn decode_greedy(emissions: &EmissionMatrix) -> GreedyDecode {
    let labels: Vec<TokenId> = (0..emissions.frames)
        .map(|t| argmax(emissions.row(t)))
        .collect();
    let output = collapse(&labels);
    GreedyDecode {
        frames: FramePath(labels),
        output,
    }
}

/// Highest-probability frame path collapsing to `target`.
///
/// Ties are broken during the backtrace: the last frame prefers ending on the
/// final token over the trailing blank, and each step prefers a blank
/// predecessor, then staying on the current state. Among equally good paths
/// blanks therefore land on the earlier frames and tokens as late as possible.
pub fn viterbi_align(emissions: &EmissionMatrix, target: &[TokenId]) -> Result<FramePath> {
    check_target(emissions, target)?;
    let ext = extended(target);
    let (t_len, s_len) = (emissions.frames, ext.len());
    let mut score = vec![f64::NEG_INFINITY; t_len * s_len];
    let mut back = vec![usize::MAX; t_len * s_len];
    score[0] = emissions.get(0, ext[0]);
    score[1] = emissions.get(0, ext[1]);
    for t in 1..t_len {
        for s in 0..s_len {
            let prev = (t - 1) * s_len;
            let candidates: &[usize] = if ext[s] == BLANK {
                if s >= 1 {
                    &[0, 1]
                } else {
                    &[0]
                }
            } else if can_skip(&ext, s) {
                &[1, 0, 2]
            } else {
                &[1, 0]
            };
            let mut best = f64::NEG_INFINITY;
            let mut arg = usize::MAX;
            for &d in candidates {
                let v = score[prev + s - d];
                if v > best {
                    best = v;
                    arg = s - d;
                }
            }
            if arg != usize::MAX {
                score[t * s_len + s] = best + emissions.get(t, ext[s]);
                back[t * s_len + s] = arg;
            }
        }
    }
    let last = (t_len - 1) * s_len;
    let mut s = if score[last + s_len - 1] > score[last + s_len - 2] {
        s_len - 1
    } else {
        s_len - 2
    };
    if score[last + s] == f64::NEG_INFINITY {
        return Err(infeasible(emissions, target));
    }
    let mut path = vec![BLANK; t_len];
    for t in (0..t_len).rev() {
        path[t] = ext[s];
        if t > 0 {
            s = back[t * s_len + s];
        }
    }
    Ok(FramePath(path))
}
