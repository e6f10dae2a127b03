//! File names inside a preprocessed data directory and how to load them.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use vstory::dataset::{Backbone, ExampleCache, FeatureProvider, StoryExample};
use vstory::textproc::Vocabulary;

pub const VOCAB_FILE: &str = "vocab.json";

pub fn cache_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.jsonl"))
}

pub fn refs_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.refs.jsonl"))
}

pub struct DataDir {
    pub dir: PathBuf,
    pub vocab: Vocabulary,
}

pub struct Split {
    pub cache: ExampleCache,
    pub examples: Vec<StoryExample>,
    pub backbone: Backbone,
}

impl DataDir {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(VOCAB_FILE);
        let vocab = Vocabulary::load(&path).with_context(|| format!("no preprocessed data in {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            vocab,
        })
    }

    pub fn split(&self, name: &str) -> Result<Split> {
        let path = cache_path(&self.dir, name);
        let cache = ExampleCache::load(&path)?;
        if cache.header.vocab_size != self.vocab.len() {
            bail!(
                "{} was encoded with {} tokens but {} has {}",
                path.display(),
                cache.header.vocab_size,
                VOCAB_FILE,
                self.vocab.len()
            );
        }
        let provider = FeatureProvider::from_spec(&cache.header.features, &self.dir)?;
        let examples = cache.materialize(&provider)?;
        Ok(Split {
            backbone: provider.backbone(),
            cache,
            examples,
        })
    }
}
