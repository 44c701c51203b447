//! Exhaustive and finite-difference oracles for the CTC routines.

use proptest::prelude::*;
use selkd::corpus::TokenId;
use selkd::nat::{collapse, ctc_log_likelihood, ctc_loss_and_grad, viterbi_align, EmissionMatrix, FramePath};
use selkd::rng::Rng;
use selkd::Error;

/// Every labelling of `frames` frames over `classes` symbols.
fn all_paths(frames: usize, classes: usize) -> Vec<Vec<TokenId>> {
    let mut out = vec![vec![]];
    for _ in 0..frames {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..classes as TokenId).map(move |k| {
                    let mut q = p.clone();
                    q.push(k);
                    q
                })
            })
            .collect();
    }
    out
}

fn path_log_prob(em: &EmissionMatrix, path: &[TokenId]) -> f64 {
    path.iter().enumerate().map(|(t, &k)| em.get(t, k)).sum()
}

fn random_lattice(rng: &mut Rng, frames: usize, classes: usize) -> EmissionMatrix {
    let logits = (0..frames * classes).map(|_| 4.0 * rng.unit() - 2.0).collect();
    EmissionMatrix::from_logits(frames, classes, logits)
}

fn random_target(rng: &mut Rng, len: usize, classes: usize) -> Vec<TokenId> {
    (0..len).map(|_| 1 + rng.below(classes - 1) as TokenId).collect()
}

#[test]
fn forward_matches_path_enumeration() {
    let mut rng = Rng::new(20_240_601);
    let mut checked = 0;
    let mut infeasible = 0;
    while checked < 240 {
        let frames = 1 + rng.below(8);
        let classes = 2 + rng.below(4);
        let u = 1 + rng.below(4);
        let em = random_lattice(&mut rng, frames, classes);
        let target = random_target(&mut rng, u, classes);
        let brute: f64 = all_paths(frames, classes)
            .iter()
            .filter(|p| collapse(p) == target)
            .map(|p| path_log_prob(&em, p).exp())
            .sum();
        match ctc_log_likelihood(&em, &target) {
            Ok(ll) => {
                let rel = (ll.exp() - brute).abs() / brute;
                assert!(rel <= 1e-10, "T={frames} C={classes} Y={target:?}: {} vs {brute}", ll.exp());
                checked += 1;
            }
            Err(Error::Infeasible { .. }) => {
                assert_eq!(brute, 0.0, "DP rejected a target with valid paths");
                infeasible += 1;
            }
            Err(e) => panic!("{e}"),
        }
    }
    assert!(infeasible > 0);
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = Rng::new(77);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut lattices = 0;
    while lattices < 60 {
        let frames = 2 + rng.below(7);
        let classes = 2 + rng.below(4);
        let u = 1 + rng.below(3);
        let target = random_target(&mut rng, u, classes);
        let em = random_lattice(&mut rng, frames, classes);
        let Ok((_, grad)) = ctc_loss_and_grad(&em, &target) else {
            continue;
        };
        lattices += 1;
        let base = em.as_slice().to_vec();
        for idx in 0..base.len() {
            let loss_at = |delta: f64| {
                let mut d = base.clone();
                d[idx] += delta;
                ctc_loss_and_grad(&EmissionMatrix::from_log_probs(frames, classes, d), &target)
                    .unwrap()
                    .0
            };
            let fd = (loss_at(h) - loss_at(-h)) / (2.0 * h);
            let scale = grad[idx].abs().max(fd.abs());
            let err = if scale > 1e-6 {
                (grad[idx] - fd).abs() / scale
            } else {
                (grad[idx] - fd).abs()
            };
            worst = worst.max(err);
        }
    }
    assert!(worst <= 1e-4, "max relative error {worst}");
}

#[test]
fn viterbi_matches_exhaustive_argmax() {
    let mut rng = Rng::new(4242);
    let mut checked = 0;
    for _ in 0..600 {
        let frames = 1 + rng.below(6);
        let classes = 2 + rng.below(3);
        let u = 1 + rng.below(3);
        let target = random_target(&mut rng, u, classes);
        let em = random_lattice(&mut rng, frames, classes);
        let best = all_paths(frames, classes)
            .into_iter()
            .filter(|p| collapse(p) == target)
            .map(|p| (path_log_prob(&em, &p), p))
            .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        match (viterbi_align(&em, &target), best) {
            (Ok(path), Some((score, brute))) => {
                assert_eq!(path.labels(), &brute[..]);
                assert!((path.log_prob(&em) - score).abs() < 1e-12);
                checked += 1;
            }
            (Err(Error::Infeasible { .. }), None) => {}
            (got, want) => panic!("viterbi {got:?} vs brute force {want:?}"),
        }
    }
    assert!(checked > 300);
}

fn lattice_strategy() -> impl Strategy<Value = (EmissionMatrix, Vec<TokenId>)> {
    (1usize..10, 2usize..6).prop_flat_map(|(frames, classes)| {
        (
            prop::collection::vec(-3.0f64..3.0, frames * classes),
            prop::collection::vec(1..classes as TokenId, 1..5),
        )
            .prop_map(move |(logits, target)| (EmissionMatrix::from_logits(frames, classes, logits), target))
    })
}

proptest! {
    #[test]
    fn rows_are_normalized((em, _) in lattice_strategy()) {
        prop_assert!(em.normalization_error() <= 1e-9);
    }

    #[test]
    fn loss_is_nonnegative((em, target) in lattice_strategy()) {
        if let Ok((loss, _)) = ctc_loss_and_grad(&em, &target) {
            prop_assert!(loss >= 0.0);
        }
    }

    #[test]
    fn viterbi_collapses_to_target((em, target) in lattice_strategy()) {
        if let Ok(path) = viterbi_align(&em, &target) {
            prop_assert_eq!(path.collapse(), target.clone());
            prop_assert!(path.log_prob(&em) <= ctc_log_likelihood(&em, &target).unwrap() + 1e-12);
        }
    }

    #[test]
    fn collapse_is_idempotent_without_repeats(path in prop::collection::vec(0u32..5, 0..20)) {
        // [a, _, a] -> [a, a] -> [a]: a second pass merges repeats that a blank kept apart
        let once = collapse(&path);
        prop_assert!(!once.contains(&0));
        if once.windows(2).all(|w| w[0] != w[1]) {
            prop_assert_eq!(collapse(&once), once.clone());
        } else {
            prop_assert!(collapse(&once).len() < once.len());
        }
    }

    #[test]
    fn frame_path_agrees_with_collapse(path in prop::collection::vec(0u32..5, 0..20)) {
        let fp = FramePath(path.clone());
        prop_assert_eq!(fp.collapse(), collapse(&path));
    }
}
