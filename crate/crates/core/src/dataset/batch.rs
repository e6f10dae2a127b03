use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::textproc::{TokenId, PAD};

use super::examples::StoryExample;
use super::STORY_LEN;

/// A padded id matrix (`B x max_len`) with its 0/1 mask and true lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Padded {
    pub ids: Array2<TokenId>,
    pub mask: Array2<f64>,
    pub lengths: Vec<usize>,
}

impl Padded {
    pub fn from_sequences(seqs: &[&[TokenId]]) -> Self {
        let max_len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut ids = Array2::from_elem((seqs.len(), max_len), PAD);
        let mut mask = Array2::zeros((seqs.len(), max_len));
        for (r, seq) in seqs.iter().enumerate() {
            for (c, &id) in seq.iter().enumerate() {
                ids[[r, c]] = id;
                mask[[r, c]] = 1.0;
            }
        }
        Self {
            ids,
            mask,
            lengths: seqs.iter().map(|s| s.len()).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.ids.nrows()
    }

    pub fn max_len(&self) -> usize {
        self.ids.ncols()
    }

    pub fn column(&self, t: usize) -> Vec<usize> {
        self.ids.column(t).iter().map(|&id| id as usize).collect()
    }

    /// Rows whose sequence still has a token at position `t`.
    pub fn active(&self, t: usize) -> Vec<bool> {
        self.lengths.iter().map(|&l| t < l).collect()
    }

    pub fn unpad(&self) -> Vec<Vec<TokenId>> {
        self.ids
            .rows()
            .into_iter()
            .zip(&self.lengths)
            .map(|(row, &len)| row.iter().take(len).copied().collect())
            .collect()
    }
}

/// Stories stacked along a leading batch dimension, padded per position.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub story_ids: Vec<String>,
    /// Per position: `B x D_img`.
    pub features: Vec<Array2<f64>>,
    pub descriptions: Vec<Padded>,
    /// Full sentences including SOS and EOS.
    pub sentences: Vec<Padded>,
}

impl Batch {
    pub fn from_examples(examples: &[&StoryExample]) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let dim = examples[0].feature_dim();
        let mut features = Vec::with_capacity(STORY_LEN);
        let mut descriptions = Vec::with_capacity(STORY_LEN);
        let mut sentences = Vec::with_capacity(STORY_LEN);
        for s in 0..STORY_LEN {
            let mut f = Array2::zeros((examples.len(), dim));
            for (r, ex) in examples.iter().enumerate() {
                if ex.feature_dim() != dim || ex.features.nrows() != STORY_LEN {
                    return Err(Error::Shape(format!(
                        "story {} has features {:?}, expected ({STORY_LEN}, {dim})",
                        ex.story_id,
                        ex.features.dim()
                    )));
                }
                f.row_mut(r).assign(&ex.features.row(s));
            }
            features.push(f);
            let descs: Vec<&[TokenId]> = examples.iter().map(|e| e.desc_ids[s].as_slice()).collect();
            if descs.iter().any(|d| d.is_empty()) {
                return Err(Error::Empty("description ids"));
            }
            descriptions.push(Padded::from_sequences(&descs));
            let sents: Vec<&[TokenId]> = examples.iter().map(|e| e.sent_ids[s].as_slice()).collect();
            if sents.iter().any(|d| d.len() < 2) {
                return Err(Error::Shape("sentence ids need at least SOS and EOS".into()));
            }
            sentences.push(Padded::from_sequences(&sents));
        }
        Ok(Self {
            story_ids: examples.iter().map(|e| e.story_id.clone()).collect(),
            features,
            descriptions,
            sentences,
        })
    }

    pub fn size(&self) -> usize {
        self.story_ids.len()
    }

    /// Number of predicted tokens: every sentence position after SOS.
    pub fn num_targets(&self) -> usize {
        self.sentences
            .iter()
            .flat_map(|p| p.lengths.iter())
            .map(|l| l - 1)
            .sum()
    }

    /// Target mask for the decoder: column `t` marks rows predicting token
    /// `t + 1`.
    pub fn target_mask(&self, s: usize) -> Array2<f64> {
        let m = &self.sentences[s].mask;
        m.slice(ndarray::s![.., 1..]).to_owned()
    }
}

/// Shuffles deterministically with `shuffle_seed` (or keeps input order when
/// `None`) and chunks; the last partial batch is kept.
pub fn make_batches(
    examples: &[StoryExample],
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
        .chunks(batch_size)
        .map(|chunk| {
            let members: Vec<&StoryExample> = chunk.iter().map(|&i| &examples[i]).collect();
            Batch::from_examples(&members)
        })
        .collect()
}
