mod common;

use std::collections::HashMap;

use common::*;
use proptest::prelude::*;
use ptune_core::autodiff::Tensor;
use ptune_core::lm::init_params;
use ptune_core::rescore::*;
use ptune_core::text::{default_stopwords, tokenize, Stopwords};
use ptune_core::Error;

/// Plain recursive edit distance with memoization.
fn oracle(a: &[u8], b: &[u8], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    if let Some(&d) = memo.get(&(a.len(), b.len())) {
        return d;
    }
    let d = if a[0] == b[0] {
        oracle(&a[1..], &b[1..], memo)
    } else {
        1 + oracle(&a[1..], &b[1..], memo)
            .min(oracle(&a[1..], b, memo))
            .min(oracle(a, &b[1..], memo))
    };
    memo.insert((a.len(), b.len()), d);
    d
}

fn all_sequences(max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for c in [b'a', b'b', b'c'] {
                let mut t: Vec<u8> = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

#[test]
fn edit_distance_matches_exhaustive_oracle() {
    let seqs = all_sequences(6);
    assert_eq!(seqs.len(), 1093);
    for a in &seqs {
        for b in &seqs {
            let c = edit_counts(a, b);
            let want = oracle(a, b, &mut HashMap::new());
            assert_eq!(c.errors(), want, "{a:?} {b:?}");
            assert_eq!(c.reference_length, a.len());
            assert_eq!(a.len() - c.deletions, b.len() - c.insertions);
        }
    }
}

#[test]
fn counts_are_consistent_with_lengths() {
    for a in all_sequences(4) {
        for b in all_sequences(4) {
            let c = edit_counts(&a, &b);
            // Matched plus substituted positions cover the rest of each side.
            assert!(c.deletions + c.substitutions <= a.len());
            assert_eq!(a.len() - c.deletions, b.len() - c.insertions);
            let back = edit_counts(&b, &a);
            assert_eq!(back.errors(), c.errors());
        }
    }
}

proptest! {
    #[test]
    fn distance_is_symmetric(a in proptest::collection::vec(0u8..4, 0..12), b in proptest::collection::vec(0u8..4, 0..12)) {
        let ab = edit_counts(&a, &b);
        let ba = edit_counts(&b, &a);
        prop_assert_eq!(ab.errors(), ba.errors());
    }

    #[test]
    fn empty_stoplist_cwer_is_wer(a in proptest::collection::vec("[a-c]", 1..8), b in proptest::collection::vec("[a-c]", 0..8)) {
        prop_assert_eq!(cwer(&a, &b, &Stopwords::empty()).unwrap(), wer(&a, &b).unwrap());
    }

    #[test]
    fn extending_text_lowers_logprob(extra in proptest::collection::vec(4usize..12, 1..4), seed in 0u64..50) {
        let v = vocab(&TOY);
        let params = init_params(&config(v.len()), seed).unwrap();
        let base = "large fries";
        let words: Vec<&str> = extra.iter().map(|&i| v.tokens()[i].as_str()).collect();
        let longer = format!("{base} {}", words.join(" "));
        let a = lm_logprob(&params, None, &v, base).unwrap();
        let b = lm_logprob(&params, None, &v, &longer).unwrap();
        prop_assert!(b < a);
    }
}

#[test]
fn cwer_examples_exact() {
    let stop = Stopwords::new(["i", "want", "a"]);
    let c = cwer(&tokenize("i want a large fries"), &tokenize("i want large fry"), &stop).unwrap();
    assert_eq!(c.rate(), 0.5);
    let c = cwer(
        &tokenize("i want a large fries"),
        &tokenize("i want a a large i fries"),
        &stop,
    )
    .unwrap();
    assert_eq!(c.rate(), 0.0);
}

#[test]
fn uniform_lm_logprob() {
    let v = vocab(&["a b c d e f"]);
    assert_eq!(v.len(), 10);
    let params = zeroed(&config(10));
    let lp = lm_logprob(&params, None, &v, "a b c").unwrap();
    assert!((lp + 4.0 * 10f64.ln()).abs() < 1e-9);
    assert!(matches!(lm_logprob(&params, None, &v, "  "), Err(Error::Input(_))));
}

fn nbest_for(lines: &[&str], noise: f64, seed: u64) -> Vec<NBestEntry> {
    let table = ConfusionTable::builtin("fastfood-orders").unwrap();
    synth_nbest(lines, "u", &table, &default_stopwords(), 6, noise, seed).unwrap()
}

const SENTS: [&str; 6] = [
    "i want a large fries",
    "can i get two burger",
    "a small coke please",
    "do you have salad",
    "give me a taco with bacon",
    "three hot dog and a sprite",
];

#[test]
fn synthetic_nbest_construction() {
    let set = nbest_for(&SENTS, 0.5, 3);
    assert_eq!(set.len(), SENTS.len());
    for (e, s) in set.iter().zip(SENTS) {
        assert_eq!(e.hyps.len(), 6);
        assert_eq!(e.reference, s);
        assert!(e.hyps.iter().any(|h| h.text == s));
        assert!(e.hyps.iter().all(|h| h.am.is_finite()));
    }
    assert_eq!(nbest_to_jsonl(&set), nbest_to_jsonl(&nbest_for(&SENTS, 0.5, 3)));
    assert_ne!(nbest_to_jsonl(&set), nbest_to_jsonl(&nbest_for(&SENTS, 0.5, 4)));
    assert_eq!(parse_nbest(&nbest_to_jsonl(&set)).unwrap(), set);
    let table = ConfusionTable::builtin("fastfood-orders").unwrap();
    assert!(synth_nbest(&SENTS, "u", &table, &default_stopwords(), 1, 0.5, 0).is_err());
}

#[test]
fn noiseless_acoustics_pick_the_transcript() {
    let set = nbest_for(&SENTS, 0.0, 5);
    let scores: Vec<Vec<HypScore>> = set
        .iter()
        .map(|e| {
            e.hyps
                .iter()
                .map(|h| HypScore {
                    am: h.am,
                    lm: 0.0,
                    tokens: 0,
                })
                .collect()
        })
        .collect();
    let report = evaluate_scored(&set, &scores, 0.0, 0.0, &default_stopwords()).unwrap();
    assert_eq!(report.baseline.cwer.errors(), 0);
    assert_eq!(report.system.cwer_rate(), 0.0);
    // Substituted hypotheses score exactly minus their substitution count.
    for e in &set {
        for h in &e.hyps {
            let (r, t) = (tokenize(&e.reference), tokenize(&h.text));
            assert_eq!(r.len(), t.len());
            let changed = r.iter().zip(&t).filter(|(a, b)| a != b).count();
            assert_eq!(h.am, -(changed as f64));
        }
    }
}

#[test]
fn nbest_parse_rejects_bad_lines() {
    assert!(parse_nbest(r#"{"id":"x","ref":"a","hyps":[]}"#).is_err());
    assert!(parse_nbest("not json").is_err());
    let ok = parse_nbest("{\"id\":\"x\",\"ref\":\"a\",\"hyps\":[{\"text\":\"a\",\"am\":-1.5}]}\n\n").unwrap();
    assert_eq!(ok[0].hyps[0].am, -1.5);
}

#[test]
fn evaluation_matches_manual_recomputation() {
    let v = vocab(&TOY);
    let params = init_params(&config(v.len()), 4).unwrap();
    let set = nbest_for(&SENTS, 0.5, 6);
    let stop = default_stopwords();
    let report = evaluate_rescoring(&set, &params, None, &v, 0.7, -0.2, &stop).unwrap();

    let mut errors = 0;
    let mut length = 0;
    for (e, &choice) in set.iter().zip(&report.choices) {
        let best = (0..e.hyps.len())
            .map(|i| {
                let h = &e.hyps[i];
                let lm = lm_logprob(&params, None, &v, &h.text).unwrap();
                (i, combined_score(h.am, lm, 0.7, -0.2, tokenize(&h.text).len()))
            })
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc })
            .0;
        assert_eq!(choice, best);
        let c = cwer(&tokenize(&e.reference), &tokenize(&e.hyps[choice].text), &stop).unwrap();
        errors += c.errors();
        length += c.reference_length;
    }
    assert_eq!(report.system.cwer_rate(), errors as f64 / length as f64);
    assert_eq!(
        select_best(
            &set[0],
            &params,
            None,
            &v,
            &RescoreConfig {
                lm_weight: 0.7,
                length_bonus: -0.2,
                lambda_grid: vec![0.0],
                mu_grid: vec![0.0]
            }
        )
        .unwrap(),
        report.choices[0]
    );

    let empty = Tensor::zeros(vec![0, 8]);
    let with_empty = evaluate_rescoring(&set, &params, Some(&empty), &v, 0.7, -0.2, &stop).unwrap();
    assert_eq!(with_empty, report);
}

#[test]
fn tuning_picks_the_grid_minimum() {
    let v = vocab(&TOY);
    let params = init_params(&config(v.len()), 4).unwrap();
    let set = nbest_for(&SENTS, 0.8, 7);
    let stop = default_stopwords();
    let grids = RescoreConfig {
        lm_weight: 0.0,
        length_bonus: 0.0,
        lambda_grid: vec![1.0, 0.0, 0.5, 2.0],
        mu_grid: vec![0.5, -0.5, 0.0],
    };
    let (l, m) = tune_weights(&set, &params, None, &v, &grids, &stop).unwrap();
    let best = evaluate_rescoring(&set, &params, None, &v, l, m, &stop)
        .unwrap()
        .system
        .cwer_rate();
    for &gl in &grids.lambda_grid {
        for &gm in &grids.mu_grid {
            let r = evaluate_rescoring(&set, &params, None, &v, gl, gm, &stop)
                .unwrap()
                .system
                .cwer_rate();
            assert!(best <= r);
            if r == best {
                assert!((l, m) <= (gl, gm));
            }
        }
    }

    let single = RescoreConfig {
        lambda_grid: vec![0.0],
        mu_grid: vec![0.0],
        ..grids.clone()
    };
    assert_eq!(
        tune_weights(&set, &params, None, &v, &single, &stop).unwrap(),
        (0.0, 0.0)
    );

    let same: Vec<NBestEntry> = set
        .iter()
        .map(|e| NBestEntry {
            hyps: vec![e.hyps[0].clone(); 3],
            ..e.clone()
        })
        .collect();
    assert_eq!(
        tune_weights(&same, &params, None, &v, &grids, &stop).unwrap(),
        (0.0, -0.5)
    );
}

#[test]
fn report_csv_layout() {
    let row = RescoreRow {
        system: "none".into(),
        lambda: 0.5,
        mu: -1.0,
        cwer: 0.0927,
        wer: 0.1,
        rel_improvement_pct: Some(7.3),
    };
    assert_eq!(
        rescore_csv(&[row]),
        "system,lambda,mu,cwer,wer,rel_improvement_pct\nnone,0.5,-1,0.0927,0.1,7.3\n"
    );
}
