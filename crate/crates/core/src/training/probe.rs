//! Capacity sanity check: a small model should memorise a handful of
//! synthetic stories.

use crate::dataset::{self, make_batches, FeatureProvider, StoryExample, TextPipeline};
use crate::error::Result;
use crate::generation::{generate_story, GenConfig};
use crate::model::{Model, ModelConfig, NormMode};
use crate::textproc::{TokenId, Vocabulary};

use super::{evaluate_loss, mix_seed, train_step, Adam, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    /// `feature_dim` and `vocab_size` are overwritten to fit the data.
    pub model: ModelConfig,
    pub n_stories: usize,
    pub seed: u64,
    pub max_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Stop once the training loss falls below this.
    pub stop_below: f64,
    /// Stop when the best loss has not improved by `plateau_tol` within this
    /// many epochs.
    pub plateau_window: usize,
    pub plateau_tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                hidden: 32,
                word_embed: 16,
                image_embed: 16,
                desc_embed: 16,
                dropout: 0.0,
                ..ModelConfig::tiny(16, 0)
            },
            n_stories: 8,
            seed: 0,
            max_epochs: 500,
            lr: 0.01,
            batch_size: 8,
            stop_below: 0.02,
            plateau_window: 50,
            plateau_tol: 1e-4,
        }
    }
}

pub struct ProbeOutcome {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Eval-mode training loss after each epoch.
    pub curve: Vec<f64>,
    pub model: Model,
    pub examples: Vec<StoryExample>,
    pub vocab: Vocabulary,
}

pub fn overfit_probe(cfg: &ProbeConfig) -> Result<ProbeOutcome> {
    let corpus = dataset::synthetic::generate(cfg.n_stories, cfg.seed, "probe");
    let pipeline = TextPipeline::default();
    let vocab = Vocabulary::build(&pipeline.story_corpus(&corpus.stories), 1)?;
    let provider = FeatureProvider::synthetic(cfg.seed, cfg.model.feature_dim)?;
    let examples = dataset::build_examples(
        &corpus.stories,
        &corpus.descriptions,
        &vocab,
        &pipeline,
        &provider,
    )?;
    let model_cfg = ModelConfig {
        vocab_size: vocab.len(),
        ..cfg.model.clone()
    };
    let mut model = Model::init(model_cfg, cfg.seed)?;
    let train_cfg = TrainConfig {
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let mut adam = Adam::new(model.params());

    let initial_loss = evaluate_loss(&model, &examples)?;
    let mut curve = Vec::new();
    let mut best = (initial_loss, 0usize);
    for epoch in 1..=cfg.max_epochs {
        let order = mix_seed(cfg.seed, "probe-order", epoch as u64);
        for batch in make_batches(&examples, cfg.batch_size, Some(order))? {
            let dropout = mix_seed(cfg.seed, "probe-dropout", adam.step());
            train_step(&mut model, &mut adam, &batch, &train_cfg, Some(dropout), NormMode::Batch)?;
        }
        let loss = evaluate_loss(&model, &examples)?;
        curve.push(loss);
        if loss < best.0 - cfg.plateau_tol {
            best = (loss, epoch);
        }
        if loss < cfg.stop_below || epoch - best.1 >= cfg.plateau_window {
            break;
        }
    }
    Ok(ProbeOutcome {
        initial_loss,
        final_loss: curve.last().copied().unwrap_or(initial_loss),
        curve,
        model,
        examples,
        vocab,
    })
}

/// Fraction of ground-truth sentence tokens (excluding SOS/EOS) reproduced
/// at the same position by generation.
pub fn token_reproduction(model: &Model, examples: &[StoryExample], gen: &GenConfig) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for ex in examples {
        let story = generate_story(model, &ex.features, &ex.desc_ids, gen)?;
        for (generated, truth) in story.sentences.iter().zip(&ex.sent_ids) {
            let truth: &[TokenId] = &truth[1..truth.len() - 1];
            total += truth.len();
            hits += truth
                .iter()
                .zip(generated)
                .filter(|(a, b)| a == b)
                .count();
        }
    }
    Ok(hits as f64 / total.max(1) as f64)
}
