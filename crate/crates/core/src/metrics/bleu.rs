use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::{check_corpus, ngram_counts, EvalPair};

/// Stand-in for a zero modified precision.
pub const BLEU_EPSILON: f64 = 1e-9;

/// Corpus BLEU-`n`: clipped n-gram precisions summed over the corpus,
/// geometric mean of orders `1..=n`, times the brevity penalty.
pub fn bleu(pairs: &[EvalPair], n: usize) -> Result<f64> {
    if !(1..=4).contains(&n) {
        return Err(Error::Config(format!("BLEU order {n} outside 1..=4")));
    }
    check_corpus(pairs)?;
    let mut matched = vec![0usize; n];
    let mut total = vec![0usize; n];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for p in pairs {
        let c = p.candidate.len();
        cand_len += c;
        ref_len += p
            .references
            .iter()
            .map(Vec::len)
            .min_by_key(|&r| (r.abs_diff(c), r))
            .expect("at least one reference");
        for k in 1..=n {
            let mut max_ref: BTreeMap<&[String], usize> = BTreeMap::new();
            for r in &p.references {
                for (g, cnt) in ngram_counts(r, k) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(cnt);
                }
            }
            for (g, cnt) in ngram_counts(&p.candidate, k) {
                matched[k - 1] += cnt.min(max_ref.get(g).copied().unwrap_or(0));
                total[k - 1] += cnt;
            }
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let log_mean = matched
        .iter()
        .zip(&total)
        .map(|(&m, &t)| {
            let p = if m == 0 || t == 0 { BLEU_EPSILON } else { m as f64 / t as f64 };
            p.ln()
        })
        .sum::<f64>()
        / n as f64;
    let bp = (1.0 - ref_len as f64 / cand_len as f64).min(0.0).exp();
    Ok(bp * log_mean.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipped_unigram_case() {
        let p = EvalPair::from_text("the the the", &["the cat"]).unwrap();
        assert!((bleu(&[p], 1).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn brevity_penalty_uses_closest_reference() {
        // c = 2; references of length 3 and 5 -> r = 3.
        let p = EvalPair::from_text("a b", &["a b c", "a b c d e"]).unwrap();
        let expected = (1.0f64 - 1.5).exp();
        assert!((bleu(&[p], 1).unwrap() - expected).abs() < 1e-12);
        // Equidistant references (1 and 3 around c = 2): the shorter wins, no penalty.
        let p = EvalPair::from_text("a b", &["a b c", "a"]).unwrap();
        assert!((bleu(&[p], 1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_precision_is_smoothed() {
        let p = EvalPair::from_text("a b", &["a c"]).unwrap();
        let expected = (0.5f64 * BLEU_EPSILON).sqrt();
        assert!((bleu(&[p], 2).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn corpus_level_sums_before_dividing() {
        let pairs = vec![
            EvalPair::from_text("a b c d", &["a b c d"]).unwrap(),
            EvalPair::from_text("x y", &["x z"]).unwrap(),
        ];
        // matched 5 of 6 unigrams; c = r = 6.
        assert!((bleu(&pairs, 1).unwrap() - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(bleu(&[], 1).is_err());
        let p = EvalPair::from_text("a", &["a"]).unwrap();
        assert!(bleu(&[p.clone()], 0).is_err());
        assert!(bleu(&[p], 5).is_err());
    }
}
