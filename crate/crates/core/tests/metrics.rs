use std::collections::{HashMap, HashSet};

use proptest::prelude::*;
use vstory::metrics::{
    bleu, cider, diversity_stats, lcs_len, meteor_lite, meteor_sentence, rouge_l, EvalPair,
};

fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

/// Small-alphabet token lists so n-grams repeat.
fn token_list(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "."]), 0..max)
        .prop_map(|v| v.into_iter().map(str::to_string).collect())
}

fn story() -> impl Strategy<Value = Vec<Vec<String>>> {
    prop::collection::vec(token_list(7), 1..6)
}

fn pair() -> impl Strategy<Value = EvalPair> {
    (story(), prop::collection::vec(token_list(12), 1..4))
        .prop_map(|(s, refs)| EvalPair::new(s, refs).unwrap())
}

/// Counts n-grams by rebuilding each one as an owned vector.
fn counts(tokens: &[String], n: usize) -> HashMap<Vec<String>, usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for i in 0..=tokens.len() - n {
            *m.entry(tokens[i..i + n].to_vec()).or_insert(0) += 1;
        }
    }
    m
}

fn bleu_oracle(pairs: &[EvalPair], n: usize) -> f64 {
    let (mut c, mut r) = (0usize, 0usize);
    let mut logs = 0.0;
    for k in 1..=n {
        let (mut hit, mut tot) = (0usize, 0usize);
        for p in pairs {
            for (g, cnt) in counts(&p.candidate, k) {
                let max_ref = p.references.iter().map(|r| counts(r, k).get(&g).copied().unwrap_or(0)).max().unwrap();
                hit += cnt.min(max_ref);
                tot += cnt;
            }
        }
        let prec = if hit == 0 { 1e-9 } else { hit as f64 / tot as f64 };
        logs += prec.ln();
    }
    for p in pairs {
        c += p.candidate.len();
        let mut lens: Vec<usize> = p.references.iter().map(Vec::len).collect();
        lens.sort();
        let best = lens.iter().min_by_key(|&&l| (l as i64 - p.candidate.len() as i64).abs()).unwrap();
        r += best;
    }
    if c == 0 {
        return 0.0;
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (logs / n as f64).exp()
}

/// LCS by enumerating every subsequence of the shorter list.
fn lcs_oracle(a: &[String], b: &[String]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let is_subseq = |s: &[&String]| {
        let mut it = long.iter();
        s.iter().all(|x| it.any(|y| y == *x))
    };
    (0u32..1 << short.len())
        .filter_map(|mask| {
            let sub: Vec<&String> = (0..short.len()).filter(|i| mask & (1 << i) != 0).map(|i| &short[i]).collect();
            is_subseq(&sub).then_some(sub.len())
        })
        .max()
        .unwrap_or(0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn diversity_matches_set_recount(corpus in prop::collection::vec(story(), 0..8)) {
        let d = diversity_stats(&corpus);
        let mut sets: Vec<HashSet<Vec<String>>> = vec![HashSet::new(); 4];
        let mut total = 0;
        let mut sentences = 0;
        for st in &corpus {
            for s in st {
                total += s.len();
                sentences += 1;
                for n in 1..=4 {
                    sets[n - 1].extend(counts(s, n).into_keys());
                }
            }
        }
        prop_assert_eq!(d.unique_ngrams.to_vec(), sets.iter().map(HashSet::len).collect::<Vec<_>>());
        prop_assert_eq!(d.sentences, sentences);
        if !corpus.is_empty() {
            prop_assert_eq!(d.avg_words_per_story, total as f64 / corpus.len() as f64);
        }
    }

    #[test]
    fn bleu_matches_oracle(pairs in prop::collection::vec(pair(), 1..5), n in 1usize..=4) {
        let got = bleu(&pairs, n).unwrap();
        let want = bleu_oracle(&pairs, n);
        prop_assert!((got - want).abs() <= 1e-12 * want.max(1e-30), "{} vs {}", got, want);
    }

    #[test]
    fn lcs_matches_enumeration(a in token_list(9), b in token_list(9)) {
        prop_assert_eq!(lcs_len(&a, &b), lcs_oracle(&a, &b));
    }

    #[test]
    fn scores_ignore_pair_order(pairs in prop::collection::vec(pair(), 2..6)) {
        let mut rev = pairs.clone();
        rev.reverse();
        for (a, b) in [
            (bleu(&pairs, 4).unwrap(), bleu(&rev, 4).unwrap()),
            (rouge_l(&pairs).unwrap(), rouge_l(&rev).unwrap()),
            (meteor_lite(&pairs).unwrap(), meteor_lite(&rev).unwrap()),
            (cider(&pairs).unwrap(), cider(&rev).unwrap()),
        ] {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_are_finite_and_bounded(pairs in prop::collection::vec(pair(), 1..6)) {
        for v in [
            bleu(&pairs, 1).unwrap(),
            bleu(&pairs, 4).unwrap(),
            rouge_l(&pairs).unwrap(),
            meteor_lite(&pairs).unwrap(),
            cider(&pairs).unwrap(),
        ] {
            prop_assert!(v.is_finite() && (0.0..=1.0 + 1e-12).contains(&v), "{}", v);
        }
    }

    #[test]
    fn self_reference_scores(s in prop::collection::vec(prop::sample::select(vec!["x", "y", "z", "w"]), 1..10)) {
        let s: Vec<String> = s.into_iter().map(str::to_string).collect();
        let p = EvalPair::new(vec![s.clone()], vec![s.clone()]).unwrap();
        prop_assert!((rouge_l(&[p.clone()]).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((bleu(&[p.clone()], 1).unwrap() - 1.0).abs() < 1e-12);
        let m = s.len() as f64;
        prop_assert!((meteor_sentence(&s, &s) - (1.0 - 0.5 / m.powi(3))).abs() < 1e-12);
    }
}

#[test]
fn bleu_order_is_non_increasing_when_matches_nest() {
    let pairs = vec![
        EvalPair::new(vec![words("the dog ran to the park and sat")], vec![words("the dog ran to a park then sat down")]).unwrap(),
        EvalPair::new(vec![words("we ate cake at home")], vec![words("we ate some cake at home today")]).unwrap(),
    ];
    let scores: Vec<f64> = (1..=4).map(|n| bleu(&pairs, n).unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[1] <= w[0]), "{scores:?}");
    assert!(scores[3] > 0.0);
}

#[test]
fn identity_corpus() {
    let stories = ["a b c d", "e f g h i", "j k l"];
    let pairs: Vec<EvalPair> = stories
        .iter()
        .map(|s| EvalPair::new(vec![words(s)], vec![words(s)]).unwrap())
        .collect();
    for n in 1..=3 {
        assert!((bleu(&pairs, n).unwrap() - 1.0).abs() < 1e-12);
    }
    // Four-grams exist only in two of the three stories.
    assert!((bleu(&pairs, 4).unwrap() - 1.0).abs() < 1e-12);
    assert!((rouge_l(&pairs).unwrap() - 1.0).abs() < 1e-12);
    assert!((cider(&pairs).unwrap() - (1.0 + 1.0 + 0.75) / 3.0).abs() < 1e-12);
}
