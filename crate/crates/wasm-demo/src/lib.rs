//! Browser bindings for three small views of the method: the threshold
//! schedule, a single CTC lattice, and a synthetic selection sweep.
//! Every export returns a JSON string; errors come back as JS exceptions.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use selkd::align::{em_train_corpus, AlignConfig};
use selkd::corpus::{TargetSide, TokenId};
use selkd::curriculum::{exposure_period, raw_ratio, ThresholdSchedule};
use selkd::metrics::threshold_sweep;
use selkd::nat::{collapse, ctc_log_likelihood, decode_greedy, train, viterbi_align, EmissionMatrix, ModelConfig};
use selkd::scoring::{score_corpus, score_lattice, Normalizer, ScoreOptions};
use selkd::synth::{SynthTask, SynthTaskSpec};

fn err(e: impl ToString) -> String {
    e.to_string()
}

/// Thresholds at `points + 1` evenly spaced updates, plus the exposure period
/// of each probe score.
pub fn schedule(t0: f64, t1: f64, updates: usize, points: usize, probes: &[f64]) -> Result<Value, String> {
    let s = ThresholdSchedule::linear(t0, t1, updates).map_err(err)?;
    let points = points.clamp(1, updates);
    let curve = (0..=points)
        .map(|i| {
            let k = i * updates / points;
            Ok(json!({ "k": k, "threshold": s.threshold_at(k).map_err(err)? }))
        })
        .collect::<Result<Vec<_>, String>>()?;
    let exposure: Vec<Value> = probes
        .iter()
        .map(|&p| json!({ "score": p, "exposure": exposure_period(p, &s) }))
        .collect();
    Ok(json!({ "curve": curve, "exposure": exposure }))
}

/// Greedy path, Viterbi path of `target` and the evaluator score on a
/// `frames x classes` logit grid (class 0 is the blank).
pub fn lattice(frames: usize, classes: usize, logits: Vec<f64>, target: &[TokenId]) -> Result<Value, String> {
    if frames == 0 || classes < 2 || logits.len() != frames * classes {
        return Err(format!("need {frames} x {classes} logits with at least two classes, got {}", logits.len()));
    }
    if target.is_empty() || target.iter().any(|&t| t == 0 || t as usize >= classes) {
        return Err("target tokens must lie in 1..classes".into());
    }
    let em = EmissionMatrix::from_logits(frames, classes, logits);
    let greedy = decode_greedy(&em);
    let viterbi = viterbi_align(&em, target).ok().map(|p| p.labels().to_vec());
    let record = score_lattice(&em, target, Normalizer::Frames);
    Ok(json!({
        "greedy": greedy.frames.labels(),
        "greedy_output": greedy.output,
        "viterbi": viterbi,
        "viterbi_output": viterbi.as_deref().map(collapse),
        "log_likelihood": ctc_log_likelihood(&em, target).ok(),
        "distance": record.distance,
        "score": record.score,
        "infeasible": record.infeasible,
    }))
}

/// Trains a small evaluator on a synthetic corpus, scores it and reports raw
/// ratio and the complexity of selected vs replaced raw targets per threshold.
pub fn selection_sweep(n: usize, seed: u64, epochs: usize, thresholds: &[f64]) -> Result<Value, String> {
    let task = SynthTask::new(SynthTaskSpec { seed, ..SynthTaskSpec::default() }).map_err(err)?;
    let synth = task.sample(n, seed).map_err(err)?;
    let config = ModelConfig { seed, epochs, hidden_dim: 32, ..ModelConfig::default() };
    let model = train(&synth.corpus, TargetSide::Raw, &config).map_err(err)?.model;
    let scores = score_corpus(&model, &synth.corpus, &ScoreOptions::default()).map_err(err)?;
    let aligner = em_train_corpus(&synth.corpus, &[TargetSide::Raw, TargetSide::Distilled], &AlignConfig::default())
        .map_err(err)?;
    let rows = threshold_sweep(&synth.corpus, &scores, &aligner, thresholds, 1).map_err(err)?;
    let c = |x: &Option<selkd::metrics::Complexity>| x.as_ref().map(|c| json!({ "c": c.uncertainty, "s": c.shift }));
    // mean score per mode, to show the reversed mode sinking
    let modes = task.spec().modes();
    let mut sum = vec![(0.0, 0usize); modes];
    for (r, &m) in scores.records.iter().zip(&synth.modes) {
        sum[m].0 += r.score;
        sum[m].1 += 1;
    }
    Ok(json!({
        "rows": rows.iter().map(|r| json!({
            "threshold": r.threshold,
            "raw_ratio": raw_ratio(&scores, r.threshold),
            "selected": c(&r.selected_raw),
            "replaced": c(&r.replaced_raw),
        })).collect::<Vec<_>>(),
        "mode_mean_score": sum.iter().map(|&(s, k)| if k == 0 { None } else { Some(s / k as f64) }).collect::<Vec<_>>(),
        "dramatic": (0..modes).filter(|&m| task.is_dramatic(m)).collect::<Vec<_>>(),
    }))
}

fn to_js(v: Result<Value, String>) -> Result<String, JsError> {
    v.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = schedule)]
pub fn schedule_js(t0: f64, t1: f64, updates: usize, points: usize, probes: Vec<f64>) -> Result<String, JsError> {
    to_js(schedule(t0, t1, updates, points, &probes))
}

#[wasm_bindgen(js_name = lattice)]
pub fn lattice_js(frames: usize, classes: usize, logits: Vec<f64>, target: Vec<TokenId>) -> Result<String, JsError> {
    to_js(lattice(frames, classes, logits, &target))
}

#[wasm_bindgen(js_name = selectionSweep)]
pub fn selection_sweep_js(n: usize, seed: u32, epochs: usize, thresholds: Vec<f64>) -> Result<String, JsError> {
    to_js(selection_sweep(n, seed as u64, epochs, &thresholds))
}
