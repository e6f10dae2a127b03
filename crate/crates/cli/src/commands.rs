use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;
use vstory::dataset::{
    self, build_examples, filter_stories, reference_records, synthetic, Backbone, CacheHeader, ExampleCache,
    ExampleRecord, FeatureProvider, RawStory, TextPipeline,
};
use vstory::generation::{generate_story, GenConfig, GeneratedRecord, Strategy};
use vstory::manifest::RunManifest;
use vstory::metrics::{self, CandidateRecord, ReferenceRecord};
use vstory::model::{Checkpoint, Model};
use vstory::textproc::{self, SpellingFixer, Vocabulary, SPECIALS};
use vstory::training::{train_from, TrainOutcome};

use crate::config::{manifest_value, LoadedConfig};
use crate::data::{cache_path, refs_path, DataDir, VOCAB_FILE};
use crate::{AblateArgs, DecodeFlags, EvaluateArgs, GenerateArgs, ModelFlags, PreprocessArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const STORIES_FILE: &str = "stories.jsonl";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

struct SplitSource {
    stories: Vec<RawStory>,
    descriptions: std::collections::HashMap<String, String>,
}

pub fn preprocess(a: &PreprocessArgs) -> Result<()> {
    let pipeline = TextPipeline {
        stoplist: match &a.stopwords {
            Some(p) => textproc::load_stoplist(p)?,
            None => textproc::default_stoplist(),
        },
        spelling: match &a.spelling {
            Some(p) => SpellingFixer::load(p)?,
            None => SpellingFixer::default(),
        },
    };
    let (train, val, provider, source) = match a.synthetic {
        Some(0) => bail!("--synthetic needs at least one story"),
        Some(n) => {
            let backbone = a.backbone.unwrap_or(Backbone::Synthetic);
            let dim = backbone.fixed_dim().unwrap_or(a.feature_dim);
            let provider = FeatureProvider::synthetic(a.seed, dim)?.with_backbone(backbone)?;
            let tr = synthetic::generate(n, a.seed, "train");
            let va = synthetic::generate((n / 5).max(1), a.seed.wrapping_add(1), "val");
            let source = json!({"synthetic": n});
            (
                SplitSource { stories: tr.stories, descriptions: tr.descriptions },
                SplitSource { stories: va.stories, descriptions: va.descriptions },
                provider,
                source,
            )
        }
        None => {
            let (Some(train_sis), Some(val_sis), Some(train_dii), Some(val_dii), Some(features)) =
                (&a.train_sis, &a.val_sis, &a.train_dii, &a.val_dii, &a.features)
            else {
                bail!("pass --synthetic N, or all of --train-sis, --val-sis, --train-dii, --val-dii and --features");
            };
            let features = fs::canonicalize(features).with_context(|| format!("feature store {}", features.display()))?;
            let provider = FeatureProvider::open_store(&features)?;
            if let Some(b) = a.backbone {
                if b != provider.backbone() {
                    bail!("--backbone {b} but the feature store holds {} features", provider.backbone());
                }
            }
            let load = |sis: &Path, dii: &Path, name: &str| -> Result<SplitSource> {
                let loaded = dataset::load_sis(sis)?;
                if loaded.rejected_length + loaded.skipped_missing_fields > 0 {
                    println!(
                        "{name}: skipped {} stories without exactly five entries and {} with incomplete annotations",
                        loaded.rejected_length, loaded.skipped_missing_fields
                    );
                }
                Ok(SplitSource {
                    stories: loaded.stories,
                    descriptions: dataset::load_dii(dii)?,
                })
            };
            let tr = load(train_sis, train_dii, "train")?;
            let va = load(val_sis, val_dii, "val")?;
            let source = json!({
                "train_sis": train_sis, "val_sis": val_sis,
                "train_dii": train_dii, "val_dii": val_dii,
                "features": features,
            });
            (tr, va, provider, source)
        }
    };

    let mut kept = Vec::new();
    for (name, split) in [("train", &train), ("val", &val)] {
        let stories = filter_stories(&split.stories, &split.descriptions);
        println!("{name}: {} → {} stories with every image described", split.stories.len(), stories.len());
        if stories.is_empty() {
            bail!("no {name} stories left after filtering");
        }
        kept.push(stories);
    }

    let vocab = Vocabulary::build(&pipeline.story_corpus(&kept[0]), a.min_count)?;
    println!(
        "vocabulary: {} words + {} special symbols = {} ids (min count {})",
        vocab.len() - SPECIALS.len(),
        SPECIALS.len(),
        vocab.len(),
        a.min_count
    );

    let config = json!({
        "source": source,
        "backbone": provider.backbone(),
        "feature_dim": provider.dim(),
        "min_count": a.min_count,
        "stopwords": a.stopwords,
        "spelling": a.spelling,
    });
    create_dir(&a.out)?;
    vocab.save(&a.out.join(VOCAB_FILE))?;
    for ((name, split), stories) in [("train", &train), ("val", &val)].into_iter().zip(&kept) {
        let examples = build_examples(stories, &split.descriptions, &vocab, &pipeline, &provider)?;
        let records: Vec<ExampleRecord> = examples.iter().map(ExampleRecord::from).collect();
        let manifest = RunManifest::new(config.clone(), a.seed).with_dataset(ExampleCache::fingerprint_records(&records));
        let cache = ExampleCache {
            header: CacheHeader {
                split: name.to_string(),
                features: provider.spec(),
                vocab_size: vocab.len(),
                manifest,
            },
            records,
        };
        cache.save(&cache_path(&a.out, name))?;
        metrics::write_jsonl(&refs_path(&a.out, name), &reference_records(stories, &pipeline))?;
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn apply_model_flags(loaded: &mut LoadedConfig, flags: &ModelFlags) {
    let cfg = &mut loaded.config;
    if let Some(seed) = flags.seed {
        cfg.train.seed = seed;
    }
    if let Some(epochs) = flags.epochs {
        cfg.train.max_epochs = epochs;
    }
    if flags.no_prev_sentence_attention {
        cfg.model.use_prev_sentence_attention = false;
    }
    if flags.no_description_attention {
        cfg.model.use_description_attention = false;
    }
}

fn run_training(flags: &ModelFlags, data_dir: &Path, out: &Path) -> Result<TrainOutcome> {
    let mut loaded = LoadedConfig::load(flags.config.as_deref())?;
    apply_model_flags(&mut loaded, flags);
    let data = DataDir::open(data_dir)?;
    let train_split = data.split("train")?;
    let val_split = data.split("val")?;
    if let Some(b) = flags.backbone {
        if b != train_split.backbone {
            bail!(
                "--backbone {b} but {} holds {} features; rerun preprocess with --backbone {b}",
                data_dir.display(),
                train_split.backbone
            );
        }
    }
    loaded.fit_model_dim("feature_dim", train_split.cache.header.features.dim, "the example cache")?;
    loaded.fit_model_dim("vocab_size", data.vocab.len(), VOCAB_FILE)?;
    create_dir(out)?;
    let mut cfg = loaded.config;
    cfg.train.checkpoint_dir = Some(out.to_path_buf());

    let manifest =
        RunManifest::new(manifest_value(&cfg), cfg.train.seed).with_dataset(train_split.cache.fingerprint());
    let model = Model::init(cfg.model.clone(), cfg.train.seed)?;
    let start = Checkpoint {
        model,
        optimizer: None,
        manifest: Some(manifest),
    };
    let outcome = train_from(start, &train_split.examples, &val_split.examples, &cfg.train)?;
    let history = out.join(HISTORY_FILE);
    fs::write(&history, outcome.history.to_csv()).with_context(|| format!("writing {}", history.display()))?;
    println!(
        "{}: {} epochs{}, best validation loss {:.4} at epoch {}; checkpoint {}",
        out.display(),
        outcome.history.epochs.len(),
        if outcome.stopped_early { " (stopped early)" } else { "" },
        outcome.history.epochs[outcome.best_epoch - 1].val_loss,
        outcome.best_epoch,
        out.join(CHECKPOINT_FILE).display()
    );
    Ok(outcome)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    run_training(&a.model, &a.data, &a.out).map(|_| ())
}

/// `--beam 1` selects greedy decoding, so both spellings record the same
/// configuration.
fn decode_config(mut cfg: GenConfig, flags: &DecodeFlags) -> Result<GenConfig> {
    match flags.beam {
        Some(0) => bail!("--beam must be at least 1"),
        Some(1) => cfg.strategy = Strategy::Greedy,
        Some(width) => {
            cfg.strategy = Strategy::Beam;
            cfg.beam_width = width;
        }
        None => {}
    }
    if let Some(n) = flags.max_len {
        cfg.max_sentence_len = n;
    }
    if flags.allow_unk {
        cfg.forbid_unk = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_generation(checkpoint: &Path, data_dir: &Path, split: &str, cfg: &GenConfig, out_file: &Path) -> Result<usize> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let data = DataDir::open(data_dir)?;
    let model_cfg = ckpt.model.config();
    if model_cfg.vocab_size != data.vocab.len() {
        bail!(
            "checkpoint expects {} vocabulary ids but {} has {}",
            model_cfg.vocab_size,
            data_dir.join(VOCAB_FILE).display(),
            data.vocab.len()
        );
    }
    let examples = data.split(split)?;
    if model_cfg.feature_dim != examples.cache.header.features.dim {
        bail!(
            "checkpoint expects {}-dimensional features but the {split} cache has {}",
            model_cfg.feature_dim,
            examples.cache.header.features.dim
        );
    }
    let checkpoint_id = ckpt.id();
    let records = examples
        .examples
        .iter()
        .map(|ex| {
            let story = generate_story(&ckpt.model, &ex.features, &ex.desc_ids, cfg)?;
            Ok(GeneratedRecord {
                story_id: ex.story_id.clone(),
                sentences: story.sentences.iter().map(|s| data.vocab.decode(s).join(" ")).collect(),
                config: cfg.clone(),
                checkpoint_id: checkpoint_id.clone(),
                description_fallback: story.description_fallback,
            })
        })
        .collect::<vstory::Result<Vec<_>>>()?;
    if let Some(dir) = out_file.parent() {
        create_dir(dir)?;
    }
    metrics::write_jsonl(out_file, &records)?;
    Ok(records.len())
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let base = LoadedConfig::load(a.config.as_deref())?.config.generate;
    let cfg = decode_config(base, &a.decode)?;
    let out = a.out.join(STORIES_FILE);
    let n = run_generation(&a.checkpoint, &a.data, &a.split, &cfg, &out)?;
    println!("wrote {n} stories to {}", out.display());
    Ok(())
}

fn score(systems: &BTreeMap<String, Vec<CandidateRecord>>, references: &Path, out: &Path) -> Result<()> {
    let refs: Vec<ReferenceRecord> = metrics::read_jsonl(references)?;
    let rows = metrics::report(systems, &refs)?;
    create_dir(out)?;
    let table = metrics::render_table(&rows);
    for (name, text) in [("metrics.csv", metrics::render_csv(&rows)), ("metrics.txt", table.clone())] {
        let path = out.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{table}");
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let mut systems = BTreeMap::new();
    for spec in &a.candidates {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => (spec.clone(), PathBuf::from(spec)),
        };
        let records: Vec<CandidateRecord> = metrics::read_jsonl(&path)?;
        if systems.insert(name.clone(), records).is_some() {
            bail!("system name {name:?} given twice");
        }
    }
    score(&systems, &a.references, &a.out)
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let base = ModelFlags {
        no_prev_sentence_attention: false,
        no_description_attention: false,
        backbone: None,
        ..a.model.clone()
    };
    let mut variants = vec![
        ("full".to_string(), base.clone(), a.data.clone()),
        (
            "no-prev-sentence-attention".to_string(),
            ModelFlags { no_prev_sentence_attention: true, ..base.clone() },
            a.data.clone(),
        ),
        (
            "no-description-attention".to_string(),
            ModelFlags { no_description_attention: true, ..base.clone() },
            a.data.clone(),
        ),
    ];
    if let Some(alt) = &a.alt_data {
        let backbone = DataDir::open(alt)?.split("train")?.backbone;
        variants.push((format!("backbone-{backbone}"), base.clone(), alt.clone()));
    }
    let gen_base = LoadedConfig::load(a.model.config.as_deref())?.config.generate;
    let gen_cfg = decode_config(gen_base, &a.decode)?;
    let mut systems = BTreeMap::new();
    for (name, flags, data_dir) in &variants {
        let dir = a.out.join(name);
        run_training(flags, data_dir, &dir)?;
        let stories = dir.join(STORIES_FILE);
        run_generation(&dir.join(CHECKPOINT_FILE), data_dir, "val", &gen_cfg, &stories)?;
        systems.insert(name.clone(), metrics::read_jsonl(&stories)?);
    }
    score(&systems, &refs_path(&a.data, "val"), &a.out)
}
