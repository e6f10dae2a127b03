use crate::error::Result;

use super::{check_corpus, EvalPair};

pub const ROUGE_BETA: f64 = 1.2;

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// LCS F-measure of one candidate against one reference.
pub fn rouge_l_sentence(candidate: &[String], reference: &[String]) -> f64 {
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean over the corpus of the best F-measure against any reference.
pub fn rouge_l(pairs: &[EvalPair]) -> Result<f64> {
    check_corpus(pairs)?;
    let total: f64 = pairs
        .iter()
        .map(|p| {
            p.references
                .iter()
                .map(|r| rouge_l_sentence(&p.candidate, r))
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(total / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::split;

    #[test]
    fn lcs_by_hand() {
        assert_eq!(lcs_len(&split("a b c b d a b"), &split("b d c a b a")), 4);
        assert_eq!(lcs_len::<String>(&[], &split("a")), 0);
    }

    #[test]
    fn recall_weighted() {
        let c = split("a b c d");
        let r = split("a b");
        // P = 1/2, R = 1.
        let b2 = 1.44;
        let expected = (1.0 + b2) * 0.5 / (1.0 + b2 * 0.5);
        assert!((rouge_l_sentence(&c, &r) - expected).abs() < 1e-12);
        assert_eq!(rouge_l_sentence(&[], &r), 0.0);
    }

    #[test]
    fn max_over_references() {
        let p = EvalPair::from_text("a b", &["x y", "a b"]).unwrap();
        assert_eq!(rouge_l(&[p]).unwrap(), 1.0);
    }
}
