use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::manifest::RunManifest;
use crate::metrics::ReferenceRecord;
use crate::textproc::{self, SpellingFixer, TokenId, Vocabulary, UNK};

use super::features::{FeatureProvider, ProviderSpec};
use super::vist::RawStory;
use super::STORY_LEN;

/// Tokenization settings applied to descriptions and story text.
#[derive(Debug, Clone)]
pub struct TextPipeline {
    pub stoplist: HashSet<String>,
    pub spelling: SpellingFixer,
}

impl Default for TextPipeline {
    fn default() -> Self {
        Self {
            stoplist: textproc::default_stoplist(),
            spelling: SpellingFixer::default(),
        }
    }
}

impl TextPipeline {
    pub fn story_tokens(&self, text: &str) -> Vec<String> {
        self.spelling.apply(textproc::tokenize(text))
    }

    pub fn description_tokens(&self, text: &str) -> Vec<String> {
        textproc::remove_stop_words(&self.story_tokens(text), &self.stoplist)
    }

    /// Every story sentence, tokenized; the vocabulary is built from this.
    pub fn story_corpus(&self, stories: &[RawStory]) -> Vec<Vec<String>> {
        stories
            .iter()
            .flat_map(|s| s.entries.iter().map(|e| self.story_tokens(&e.sentence)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoryExample {
    pub story_id: String,
    pub image_ids: Vec<String>,
    /// One row per image.
    pub features: Array2<f64>,
    /// Stop-word-free description ids, no boundary symbols, never empty.
    pub desc_ids: Vec<Vec<TokenId>>,
    /// Story sentence ids wrapped in SOS ... EOS.
    pub sent_ids: Vec<Vec<TokenId>>,
}

impl StoryExample {
    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_targets(&self) -> usize {
        self.sent_ids.iter().map(|s| s.len() - 1).sum()
    }
}

pub fn encode_description(
    pipeline: &TextPipeline,
    vocab: &Vocabulary,
    text: Option<&str>,
) -> Vec<TokenId> {
    let ids = text
        .map(|t| vocab.encode(&pipeline.description_tokens(t), false))
        .unwrap_or_default();
    if ids.is_empty() {
        vec![UNK]
    } else {
        ids
    }
}

fn load_features(provider: &FeatureProvider, image_ids: &[String]) -> Result<Array2<f64>> {
    let mut features = Array2::zeros((image_ids.len(), provider.dim()));
    for (row, id) in image_ids.iter().enumerate() {
        let f = provider.get_features(id)?;
        if f.len() != provider.dim() {
            return Err(Error::Shape(format!(
                "feature for {id:?} has length {}, expected {}",
                f.len(),
                provider.dim()
            )));
        }
        features.row_mut(row).assign(&f);
    }
    Ok(features)
}

pub fn build_examples(
    stories: &[RawStory],
    descriptions: &HashMap<String, String>,
    vocab: &Vocabulary,
    pipeline: &TextPipeline,
    provider: &FeatureProvider,
) -> Result<Vec<StoryExample>> {
    stories
        .iter()
        .map(|story| {
            if story.entries.len() != STORY_LEN {
                return Err(Error::Shape(format!(
                    "story {} has {} entries",
                    story.story_id,
                    story.entries.len()
                )));
            }
            let image_ids: Vec<String> = story.image_ids().map(String::from).collect();
            let desc_ids = image_ids
                .iter()
                .map(|id| {
                    let text = descriptions.get(id).map(String::as_str);
                    if text.is_none() {
                        log::warn!("no description for image {id}; using a single UNK");
                    }
                    encode_description(pipeline, vocab, text)
                })
                .collect();
            let sent_ids = story
                .entries
                .iter()
                .map(|e| vocab.encode(&pipeline.story_tokens(&e.sentence), true))
                .collect();
            Ok(StoryExample {
                story_id: story.story_id.clone(),
                features: load_features(provider, &image_ids)?,
                image_ids,
                desc_ids,
                sent_ids,
            })
        })
        .collect()
}

/// Ground-truth stories grouped by image sequence: every story over the same
/// five images is a reference for each of them.
pub fn reference_records(stories: &[RawStory], pipeline: &TextPipeline) -> Vec<ReferenceRecord> {
    let mut by_sequence: HashMap<Vec<&str>, Vec<Vec<String>>> = HashMap::new();
    let render = |s: &RawStory| -> Vec<String> {
        s.entries
            .iter()
            .map(|e| pipeline.story_tokens(&e.sentence).join(" "))
            .collect()
    };
    for s in stories {
        by_sequence
            .entry(s.image_ids().collect())
            .or_default()
            .push(render(s));
    }
    stories
        .iter()
        .map(|s| ReferenceRecord {
            story_id: s.story_id.clone(),
            references: by_sequence[&s.image_ids().collect::<Vec<_>>()].clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub split: String,
    pub features: ProviderSpec,
    pub vocab_size: usize,
    pub manifest: RunManifest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub story_id: String,
    pub image_ids: Vec<String>,
    pub desc_ids: Vec<Vec<TokenId>>,
    pub sent_ids: Vec<Vec<TokenId>>,
}

impl From<&StoryExample> for ExampleRecord {
    fn from(e: &StoryExample) -> Self {
        Self {
            story_id: e.story_id.clone(),
            image_ids: e.image_ids.clone(),
            desc_ids: e.desc_ids.clone(),
            sent_ids: e.sent_ids.clone(),
        }
    }
}

/// JSONL cache of encoded examples: a header line, then one record per story.
/// Features are stored by reference and re-read through the provider.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleCache {
    pub header: CacheHeader,
    pub records: Vec<ExampleRecord>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: CacheHeader,
}

impl ExampleCache {
    /// Content hash of the encoded records (the header is excluded so the
    /// fingerprint can be embedded in it).
    pub fn fingerprint_records(records: &[ExampleRecord]) -> String {
        let mut h = Sha256::new();
        for r in records {
            h.update(serde_json::to_vec(r).expect("record serializes"));
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn fingerprint(&self) -> String {
        Self::fingerprint_records(&self.records)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        serde_json::to_writer(&mut out, &HeaderLine { header: self.header.clone() })
            .expect("header serializes");
        out.push(b'\n');
        for r in &self.records {
            serde_json::to_writer(&mut out, r).expect("record serializes");
            out.push(b'\n');
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines.next().ok_or(Error::Empty("examples cache"))?;
        let HeaderLine { header } = serde_json::from_str(first).map_err(|e| Error::json(path, e))?;
        let records = lines
            .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
            .collect::<Result<Vec<ExampleRecord>>>()?;
        Ok(Self { header, records })
    }

    pub fn materialize(&self, provider: &FeatureProvider) -> Result<Vec<StoryExample>> {
        if provider.dim() != self.header.features.dim {
            return Err(Error::Shape(format!(
                "provider dimension {} does not match cached dimension {}",
                provider.dim(),
                self.header.features.dim
            )));
        }
        self.records
            .iter()
            .map(|r| {
                for ids in r.desc_ids.iter().chain(&r.sent_ids) {
                    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= self.header.vocab_size) {
                        return Err(Error::TokenOutOfRange {
                            id: bad as usize,
                            vocab: self.header.vocab_size,
                        });
                    }
                }
                Ok(StoryExample {
                    story_id: r.story_id.clone(),
                    features: load_features(provider, &r.image_ids)?,
                    image_ids: r.image_ids.clone(),
                    desc_ids: r.desc_ids.clone(),
                    sent_ids: r.sent_ids.clone(),
                })
            })
            .collect()
    }
}

/// Groups reference records by story id.
pub fn reference_map(records: &[ReferenceRecord]) -> BTreeMap<String, Vec<Vec<String>>> {
    records
        .iter()
        .map(|r| (r.story_id.clone(), r.references.clone()))
        .collect()
}
