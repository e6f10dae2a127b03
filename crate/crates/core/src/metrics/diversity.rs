use std::collections::BTreeSet;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiversityStats {
    pub stories: usize,
    pub sentences: usize,
    pub avg_words_per_story: f64,
    pub avg_words_per_sentence: f64,
    /// Distinct n-grams over the corpus for n = 1..=4; n-grams never cross a
    /// sentence boundary.
    pub unique_ngrams: [usize; 4],
}

pub fn diversity_stats(stories: &[Vec<Vec<String>>]) -> DiversityStats {
    let mut sets: [BTreeSet<&[String]>; 4] = Default::default();
    let mut words = 0usize;
    let mut sentences = 0usize;
    for story in stories {
        for sent in story {
            sentences += 1;
            words += sent.len();
            for (n, set) in sets.iter_mut().enumerate() {
                set.extend(sent.windows(n + 1));
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    DiversityStats {
        stories: stories.len(),
        sentences,
        avg_words_per_story: ratio(words, stories.len()),
        avg_words_per_sentence: ratio(words, sentences),
        unique_ngrams: sets.map(|s| s.len()),
    }
}
