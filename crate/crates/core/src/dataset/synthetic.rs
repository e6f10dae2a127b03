//! Seeded toy corpus for exercising the pipeline without VIST.
//!
//! Each story draws a latent topic (a place) and, per image, a subject and an
//! action. Image ids carry those concept tags, so the synthetic feature
//! backbone yields features correlated with the text. Sentences and
//! descriptions are filled from fixed templates over a ~40-word vocabulary.

use std::collections::HashMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::textproc::{TokenId, EOS, SOS, SPECIALS};

use super::examples::StoryExample;
use super::vist::{RawStory, StoryEntry};
use super::STORY_LEN;

const FIRST_WORD: TokenId = SPECIALS.len() as TokenId;

const PLACES: [&str; 8] = [
    "beach", "park", "city", "party", "wedding", "museum", "lake", "mountain",
];
const SUBJECTS: [&str; 8] = ["dog", "girl", "boy", "man", "woman", "family", "baby", "friends"];
const ACTIONS: [&str; 8] = [
    "played", "smiled", "walked", "danced", "ate", "swam", "laughed", "posed",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub stories: Vec<RawStory>,
    pub descriptions: HashMap<String, String>,
}

fn sentence(pos: usize, place: &str, subject: &str, action: &str) -> String {
    match pos {
        0 => format!("we went to the {place} with the {subject} ."),
        1 => format!("the {subject} {action} at the {place} ."),
        2 => format!("then the {subject} {action} ."),
        3 => format!("a {subject} {action} near the {place} ."),
        _ => format!("it was a great day at the {place} !"),
    }
}

/// `n` stories named `{prefix}-{i}`. The same `(seed, prefix)` always yields
/// the same corpus.
pub fn generate(n: usize, seed: u64, prefix: &str) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stories = Vec::with_capacity(n);
    let mut descriptions = HashMap::new();
    for i in 0..n {
        let place = PLACES[rng.gen_range(0..PLACES.len())];
        let mut entries = Vec::with_capacity(STORY_LEN);
        for pos in 0..STORY_LEN {
            let subject = SUBJECTS[rng.gen_range(0..SUBJECTS.len())];
            let action = ACTIONS[rng.gen_range(0..ACTIONS.len())];
            let image_id = format!("{place}.{subject}.{action}#{prefix}-{i}-{pos}");
            descriptions.insert(
                image_id.clone(),
                format!("a {subject} {action} in the {place}"),
            );
            entries.push(StoryEntry {
                image_id,
                sentence: sentence(pos, place, subject, action),
            });
        }
        stories.push(RawStory {
            story_id: format!("{prefix}-{i}"),
            entries,
        });
    }
    SyntheticCorpus {
        stories,
        descriptions,
    }
}

/// Encoded examples with Gaussian features and uniformly drawn token ids,
/// for exercising the network without a text pipeline. Descriptions have
/// 1..=4 tokens and sentences 1..=`max_sentence` content tokens.
pub fn random_examples(
    n: usize,
    feature_dim: usize,
    vocab_size: usize,
    max_sentence: usize,
    seed: u64,
) -> Vec<StoryExample> {
    assert!(vocab_size > FIRST_WORD as usize, "vocabulary has no ordinary words");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let word = |rng: &mut ChaCha8Rng| rng.gen_range(FIRST_WORD..vocab_size as TokenId);
    (0..n)
        .map(|i| {
            let features = Array2::from_shape_simple_fn((STORY_LEN, feature_dim), || {
                StandardNormal.sample(&mut rng)
            });
            let mut desc_ids = Vec::with_capacity(STORY_LEN);
            let mut sent_ids = Vec::with_capacity(STORY_LEN);
            for _ in 0..STORY_LEN {
                let d = rng.gen_range(1..=4);
                desc_ids.push((0..d).map(|_| word(&mut rng)).collect());
                let len = rng.gen_range(1..=max_sentence.max(1));
                let mut s = vec![SOS];
                s.extend((0..len).map(|_| word(&mut rng)));
                s.push(EOS);
                sent_ids.push(s);
            }
            StoryExample {
                story_id: format!("random-{i}"),
                image_ids: (0..STORY_LEN).map(|p| format!("random-{i}-{p}")).collect(),
                features,
                desc_ids,
                sent_ids,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TextPipeline;
    use crate::textproc::Vocabulary;

    #[test]
    fn deterministic_and_well_formed() {
        let a = generate(10, 4, "train");
        assert_eq!(a, generate(10, 4, "train"));
        assert_ne!(a, generate(10, 5, "train"));
        assert_eq!(a.stories.len(), 10);
        for s in &a.stories {
            assert_eq!(s.entries.len(), STORY_LEN);
            assert!(s.image_ids().all(|id| a.descriptions.contains_key(id)));
        }
    }

    #[test]
    fn vocabulary_is_small() {
        let corpus = generate(200, 1, "t");
        let pipeline = TextPipeline::default();
        let v = Vocabulary::build(&pipeline.story_corpus(&corpus.stories), 1).unwrap();
        assert!(v.len() <= 50, "{}", v.len());
        assert!(v.len() >= 35, "{}", v.len());
    }

    #[test]
    fn random_examples_are_well_formed() {
        let ex = random_examples(3, 7, 12, 4, 5);
        assert_eq!(ex, random_examples(3, 7, 12, 4, 5));
        for e in &ex {
            assert_eq!(e.features.dim(), (STORY_LEN, 7));
            for (d, s) in e.desc_ids.iter().zip(&e.sent_ids) {
                assert!((1..=4).contains(&d.len()));
                assert!((3..=6).contains(&s.len()));
                assert_eq!((s[0], s[s.len() - 1]), (SOS, EOS));
                assert!(d.iter().chain(&s[1..s.len() - 1]).all(|&t| (4..12).contains(&t)));
            }
        }
    }
}
