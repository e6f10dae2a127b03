use vstory::dataset::synthetic::random_examples;
use vstory::dataset::{Batch, STORY_LEN};
use vstory::model::{Checkpoint, Model, ModelConfig, Session};
use vstory::training::{evaluate_loss, learning_rate, train, DecayMode, TrainConfig};

const D: usize = 10;
const V: usize = 15;

fn train_config(dir: Option<&std::path::Path>) -> TrainConfig {
    TrainConfig {
        lr: 0.01,
        batch_size: 4,
        max_epochs: 3,
        seed: 7,
        checkpoint_dir: dir.map(|d| d.to_path_buf()),
        ..TrainConfig::default()
    }
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z = row.iter().map(|x| (x - m).exp()).sum::<f64>().ln() + m;
    row.iter().map(|x| x - z).collect()
}

#[test]
fn evaluate_loss_is_the_mean_of_per_story_token_means() {
    let model = Model::init(ModelConfig::tiny(D, V), 1).unwrap();
    let ex = random_examples(5, D, V, 6, 1);
    let mut expected = 0.0;
    for e in &ex {
        let batch = Batch::from_examples(&[e]).unwrap();
        let mut session = Session::eval(&model);
        let fwd = session.forward(&batch).unwrap();
        let mut nll = 0.0;
        let mut count = 0;
        for s in 0..STORY_LEN {
            let ids = &e.sent_ids[s];
            for t in 0..ids.len() - 1 {
                let row: Vec<f64> = session.tape.value(fwd.sentences[s][t]).row(0).to_vec();
                nll -= log_softmax(&row)[ids[t + 1] as usize];
                count += 1;
            }
        }
        expected += nll / count as f64;
    }
    expected /= ex.len() as f64;
    let got = evaluate_loss(&model, &ex).unwrap();
    assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
}

#[test]
fn checkpoint_round_trip_keeps_the_loss_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let train_set = random_examples(8, D, V, 4, 2);
    let val_set = random_examples(4, D, V, 4, 3);
    let out = train(Model::init(ModelConfig::tiny(D, V), 2).unwrap(), &train_set, &val_set, &train_config(Some(dir.path()))).unwrap();
    let before = evaluate_loss(&out.best.model, &val_set).unwrap();
    let path = dir.path().join("again.ckpt");
    out.best.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(evaluate_loss(&loaded.model, &val_set).unwrap().to_bits(), before.to_bits());
    let on_disk = Checkpoint::load(&dir.path().join("best.ckpt")).unwrap();
    assert_eq!(on_disk.model, out.best.model);
}

#[test]
fn training_is_deterministic_and_tracks_the_best_epoch() {
    let train_set = random_examples(8, D, V, 4, 4);
    let val_set = random_examples(4, D, V, 4, 5);
    let run = || train(Model::init(ModelConfig::tiny(D, V), 4).unwrap(), &train_set, &val_set, &train_config(None)).unwrap();
    let a = run();
    let b = run();
    assert_eq!(a.best.to_bytes(), b.best.to_bytes());
    assert_eq!(a.best_epoch, b.best_epoch);
    let losses = |o: &vstory::training::TrainOutcome| {
        o.history.epochs.iter().map(|e| (e.train_loss, e.val_loss, e.lr)).collect::<Vec<_>>()
    };
    assert_eq!(losses(&a), losses(&b));
    assert_eq!(a.history.epochs.len(), 3);
    let best = a
        .history
        .epochs
        .iter()
        .min_by(|x, y| x.val_loss.partial_cmp(&y.val_loss).unwrap())
        .unwrap();
    assert_eq!(best.epoch, a.best_epoch);
    assert_eq!(evaluate_loss(&a.best.model, &val_set).unwrap(), best.val_loss);
}

#[test]
fn validation_loss_falls_on_learnable_data() {
    let corpus = vstory::dataset::synthetic::generate(24, 3, "t");
    let pipeline = vstory::dataset::TextPipeline::default();
    let vocab = vstory::textproc::Vocabulary::build(&pipeline.story_corpus(&corpus.stories), 1).unwrap();
    let provider = vstory::dataset::FeatureProvider::synthetic(3, 12).unwrap();
    let ex = vstory::dataset::build_examples(&corpus.stories, &corpus.descriptions, &vocab, &pipeline, &provider).unwrap();
    let (train_set, val_set) = ex.split_at(18);
    let cfg = ModelConfig {
        hidden: 16,
        ..ModelConfig::tiny(12, vocab.len())
    };
    let out = train(
        Model::init(cfg, 3).unwrap(),
        train_set,
        val_set,
        &TrainConfig {
            max_epochs: 5,
            ..train_config(None)
        },
    )
    .unwrap();
    let first = out.history.epochs[0].val_loss;
    let last = out.history.epochs.last().unwrap().val_loss;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn weight_decay_mode_keeps_the_base_rate() {
    let cfg = TrainConfig {
        decay_mode: DecayMode::Weight,
        ..TrainConfig::default()
    };
    assert_eq!(cfg.learning_rate(100_000), 0.001);
    assert!((learning_rate(0.001, 1e-5, 100_000) - 0.0005).abs() < 1e-15);
}
