use std::collections::{BTreeMap, BTreeSet};

use crate::error::Result;

use super::{check_corpus, ngram_counts, EvalPair};

type Vector<'a> = BTreeMap<&'a [String], f64>;

fn tfidf<'a>(tokens: &'a [String], n: usize, idf: &dyn Fn(&[String]) -> f64) -> Vector<'a> {
    let counts = ngram_counts(tokens, n);
    let total: usize = counts.values().sum();
    counts
        .into_iter()
        .map(|(g, c)| (g, c as f64 / total as f64 * idf(g)))
        .collect()
}

fn cosine(a: &Vector, b: &Vector) -> f64 {
    let dot: f64 = a.iter().filter_map(|(g, x)| b.get(g).map(|y| x * y)).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// CIDEr without length penalty or scaling. Document frequencies count the
/// pairs whose references contain an n-gram.
pub fn cider(pairs: &[EvalPair]) -> Result<f64> {
    check_corpus(pairs)?;
    let n_docs = pairs.len() as f64;
    let mut total = 0.0;
    let mut per_n = vec![vec![0.0; pairs.len()]; 4];
    for n in 1..=4 {
        let mut df: BTreeMap<&[String], usize> = BTreeMap::new();
        for p in pairs {
            let grams: BTreeSet<&[String]> = p.references.iter().flat_map(|r| r.windows(n)).collect();
            for g in grams {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        let idf = |g: &[String]| (n_docs / df.get(g).copied().unwrap_or(0).max(1) as f64).ln();
        for (k, p) in pairs.iter().enumerate() {
            let c = tfidf(&p.candidate, n, &idf);
            let sim: f64 = p
                .references
                .iter()
                .map(|r| cosine(&c, &tfidf(r, n, &idf)))
                .sum::<f64>()
                / p.references.len() as f64;
            per_n[n - 1][k] = sim;
        }
    }
    for k in 0..pairs.len() {
        total += (0..4).map(|n| per_n[n][k]).sum::<f64>() / 4.0;
    }
    Ok(total / pairs.len() as f64)
}
