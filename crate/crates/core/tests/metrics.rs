mod common;

use std::collections::HashMap;

use common::{oracle_class_f1, oracle_macro_f1};
use mrsr::metrics::{bleu, edit_distance, f1_binary, f1_macro, wer, TextPair};
use proptest::prelude::*;

/// Plain recursive edit distance with memoization.
fn oracle_edits(a: &[String], b: &[String], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() || b.is_empty() {
        return a.len() + b.len();
    }
    if let Some(&v) = memo.get(&(a.len(), b.len())) {
        return v;
    }
    let sub = oracle_edits(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]);
    let del = oracle_edits(&a[1..], b, memo) + 1;
    let ins = oracle_edits(a, &b[1..], memo) + 1;
    let v = sub.min(del).min(ins);
    memo.insert((a.len(), b.len()), v);
    v
}

fn words(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(
        prop::sample::select(vec!["a", "b", "c", "the", "cat"]).prop_map(String::from),
        0..max,
    )
}

fn predictions(classes: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..60).prop_flat_map(move |n| {
        (
            prop::collection::vec(0..classes, n),
            prop::collection::vec(0..classes, n),
        )
    })
}

proptest! {
    #[test]
    fn binary_f1_matches_confusion_oracle((preds, labels) in predictions(2)) {
        prop_assert_eq!(f1_binary(&preds, &labels, 1).unwrap(), oracle_class_f1(&preds, &labels, 1));
    }

    #[test]
    fn swapped_positive_class_uses_complemented_counts((preds, labels) in predictions(2)) {
        let flip = |v: &[usize]| v.iter().map(|&x| 1 - x).collect::<Vec<_>>();
        prop_assert_eq!(f1_binary(&preds, &labels, 0).unwrap(), f1_binary(&flip(&preds), &flip(&labels), 1).unwrap());
        prop_assert_eq!(f1_binary(&preds, &labels, 0).unwrap(), oracle_class_f1(&preds, &labels, 0));
    }

    #[test]
    fn macro_f1_matches_oracle_and_is_bounded((preds, labels) in predictions(4)) {
        let got = f1_macro(&preds, &labels, 4).unwrap();
        prop_assert_eq!(got, oracle_macro_f1(&preds, &labels, 4));
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn macro_f1_is_invariant_to_class_relabeling((preds, labels) in predictions(3), perm in Just([0usize, 1, 2]).prop_shuffle()) {
        let map = |v: &[usize]| v.iter().map(|&x| perm[x]).collect::<Vec<_>>();
        let a = f1_macro(&preds, &labels, 3).unwrap();
        let b = f1_macro(&map(&preds), &map(&labels), 3).unwrap();
        prop_assert!((a - b).abs() <= 1e-15);
    }

    #[test]
    fn wer_matches_recursive_oracle(r in words(8), h in words(8)) {
        prop_assume!(!r.is_empty());
        let edits = oracle_edits(&r, &h, &mut HashMap::new());
        prop_assert_eq!(edit_distance(&r, &h), edits);
        let got = wer(&TextPair { reference: r.clone(), hypothesis: h }).unwrap();
        prop_assert_eq!(got, edits as f64 / r.len() as f64);
    }

    #[test]
    fn shared_suffix_never_adds_edits(r in words(8), h in words(8), tail in words(4)) {
        let before = edit_distance(&r, &h);
        let (mut r2, mut h2) = (r, h);
        r2.extend(tail.iter().cloned());
        h2.extend(tail);
        prop_assert!(edit_distance(&r2, &h2) <= before);
    }

    #[test]
    fn bleu_ignores_pair_order(pairs in prop::collection::vec((words(10), words(10)), 1..6), rot in 0usize..6) {
        let (refs, hyps): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let mut shuffled = pairs;
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let (refs2, hyps2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
        let a = bleu(&refs, &hyps).unwrap();
        prop_assert_eq!(a, bleu(&refs2, &hyps2).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
    }
}
