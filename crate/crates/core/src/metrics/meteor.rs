use rust_stemmers::{Algorithm, Stemmer};

use crate::error::Result;

use super::{check_corpus, EvalPair};

const ALPHA: f64 = 0.9;
const GAMMA: f64 = 0.5;
const BETA: i32 = 3;

/// Greedy unigram alignment: exact matches first, then stem matches among
/// what is left. Returns `(candidate index, reference index)` pairs.
fn align(candidate: &[String], reference: &[String], stemmer: &Stemmer) -> Vec<(usize, usize)> {
    let mut ref_used = vec![false; reference.len()];
    let mut cand_used = vec![false; candidate.len()];
    let mut out = Vec::new();
    let stem = |t: &String| stemmer.stem(t).into_owned();
    let cand_stems: Vec<String> = candidate.iter().map(stem).collect();
    let ref_stems: Vec<String> = reference.iter().map(stem).collect();
    for stage in 0..2 {
        for (i, c) in candidate.iter().enumerate() {
            if cand_used[i] {
                continue;
            }
            let hit = (0..reference.len()).find(|&j| {
                !ref_used[j]
                    && if stage == 0 {
                        reference[j] == *c
                    } else {
                        ref_stems[j] == cand_stems[i]
                    }
            });
            if let Some(j) = hit {
                ref_used[j] = true;
                cand_used[i] = true;
                out.push((i, j));
            }
        }
    }
    out.sort_unstable();
    out
}

/// METEOR without synonymy for one candidate/reference pair.
pub fn meteor_sentence(candidate: &[String], reference: &[String]) -> f64 {
    meteor_with(candidate, reference, &Stemmer::create(Algorithm::English))
}

fn meteor_with(candidate: &[String], reference: &[String], stemmer: &Stemmer) -> f64 {
    let alignment = align(candidate, reference, stemmer);
    let m = alignment.len();
    if m == 0 {
        return 0.0;
    }
    let chunks = 1 + alignment
        .windows(2)
        .filter(|w| w[1].0 != w[0].0 + 1 || w[1].1 != w[0].1 + 1)
        .count();
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = p * r / (ALPHA * p + (1.0 - ALPHA) * r);
    let penalty = GAMMA * (chunks as f64 / m as f64).powi(BETA);
    fmean * (1.0 - penalty)
}

/// Mean over the corpus of the best score against any reference.
pub fn meteor_lite(pairs: &[EvalPair]) -> Result<f64> {
    check_corpus(pairs)?;
    let stemmer = Stemmer::create(Algorithm::English);
    let total: f64 = pairs
        .iter()
        .map(|p| {
            p.references
                .iter()
                .map(|r| meteor_with(&p.candidate, r, &stemmer))
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(total / pairs.len() as f64)
}
