use selkd::align::{em_train, em_train_corpus, AlignConfig, Pair};
use selkd::corpus::{TargetSide, TokenId};
use selkd::metrics::{alignment_shift, translation_uncertainty};
use selkd::rng::Rng;
use selkd::synth::{generate, SynthTaskSpec};

/// `n` pairs where source token `x` always translates to `x + 100` in place.
fn bijective(n: usize, seed: u64) -> Vec<(Vec<TokenId>, Vec<TokenId>)> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| {
            let len = rng.range_inclusive(4, 10);
            let x: Vec<TokenId> = (0..len).map(|_| 2 + rng.below(40) as TokenId).collect();
            let y = x.iter().map(|t| t + 100).collect();
            (x, y)
        })
        .collect()
}

fn as_pairs(v: &[(Vec<TokenId>, Vec<TokenId>)]) -> Vec<Pair<'_>> {
    v.iter().map(|(x, y)| (&x[..], &y[..])).collect()
}

#[test]
fn recovers_a_bijection() {
    let data = bijective(1000, 5);
    let pairs = as_pairs(&data);
    let model = em_train(&pairs, &AlignConfig::default()).unwrap();
    let (mut hit, mut total) = (0, 0);
    for (x, y) in &pairs {
        let links = model.align_pair(x, y);
        assert_eq!(links.links.len(), y.len());
        hit += links.links.iter().enumerate().filter(|(j, l)| **l == Some(j + 1)).count();
        total += y.len();
    }
    let acc = hit as f64 / total as f64;
    assert!(acc >= 0.99, "identity-link accuracy {acc}");
    let (x, y) = pairs[0];
    let l = model.align_pair(x, y);
    assert_eq!(l.links, (1..=x.len()).map(Some).collect::<Vec<_>>());
    assert_eq!(model.align_pair(x, y), l);
}

#[test]
fn log_likelihood_never_decreases() {
    let synth = generate(&SynthTaskSpec::default(), 1000, 3).unwrap();
    let config = AlignConfig {
        iterations: 10,
        ..AlignConfig::default()
    };
    let model = em_train_corpus(&synth.corpus, &[TargetSide::Raw], &config).unwrap();
    let trace = model.log_likelihood_trace();
    assert_eq!(trace.len(), 10);
    for w in trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-9, "{trace:?}");
    }
    assert!(trace[9] > trace[0]);
}

#[test]
fn thread_count_does_not_change_the_model() {
    let data = bijective(300, 9);
    let pairs = as_pairs(&data);
    let one = em_train(&pairs, &AlignConfig::default()).unwrap();
    let four = em_train(&pairs, &AlignConfig { threads: 4, ..AlignConfig::default() }).unwrap();
    assert_eq!(one, four);
}

#[test]
fn multimodal_raw_is_more_uncertain_than_distilled() {
    let synth = generate(&SynthTaskSpec::default(), 3000, 11).unwrap();
    let c = &synth.corpus;
    let model = em_train_corpus(c, &[TargetSide::Raw, TargetSide::Distilled], &AlignConfig::default()).unwrap();
    let raw = c.bitext(TargetSide::Raw);
    let raw: Vec<Pair<'_>> = raw.iter().map(|(x, y)| (x.tokens(), y.tokens())).collect();
    let kd = c.bitext(TargetSide::Distilled);
    let kd: Vec<Pair<'_>> = kd.iter().map(|(x, y)| (x.tokens(), y.tokens())).collect();
    assert!(translation_uncertainty(&raw, &model).unwrap() > translation_uncertainty(&kd, &model).unwrap());

    let by_mode = |m: usize| -> Vec<Pair<'_>> {
        raw.iter()
            .zip(&synth.modes)
            .filter(|(_, &mode)| mode == m)
            .map(|(p, _)| *p)
            .collect()
    };
    let reversed = alignment_shift(&by_mode(2), &model).unwrap();
    let canonical = alignment_shift(&by_mode(0), &model).unwrap();
    assert!(reversed > canonical, "{reversed} vs {canonical}");
}
