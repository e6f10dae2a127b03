use std::cmp::Ordering;

use ndarray::{array, Array1};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vstory::dataset::synthetic::random_examples;
use vstory::dataset::{Batch, STORY_LEN};
use vstory::generation::{
    beam_search, generate_story, greedy_search, mask_logits, GenConfig, Hypothesis,
};
use vstory::model::{Model, ModelConfig, Session};
use vstory::textproc::{TokenId, EOS, PAD, SOS, UNK};
use vstory::Result;

const NEG: f64 = f64::NEG_INFINITY;

/// Toy decoder: the state is the emitted prefix and `table` gives the
/// next-token logits for it.
fn toy<'a>(
    table: &'a dyn Fn(&[TokenId]) -> Array1<f64>,
) -> impl FnMut(TokenId, &Vec<TokenId>) -> Result<(Array1<f64>, Vec<TokenId>)> + 'a {
    move |last, prefix| {
        let mut p = prefix.clone();
        if last != SOS {
            p.push(last);
        }
        Ok((table(&p), p))
    }
}

fn log_softmax(l: &Array1<f64>) -> Vec<f64> {
    let m = l.iter().cloned().fold(NEG, f64::max);
    let z = l.iter().map(|x| (x - m).exp()).sum::<f64>().ln() + m;
    l.iter().map(|x| x - z).collect()
}

/// Every finished sequence reachable under `table` within `max_steps`
/// tokens, scored by mean token log-probability; best first with ties to the
/// lower sequence.
fn exhaustive(table: &dyn Fn(&[TokenId]) -> Array1<f64>, max_steps: usize) -> Vec<(Vec<TokenId>, f64)> {
    let mut done = Vec::new();
    let mut frontier = vec![(Vec::<TokenId>::new(), 0.0)];
    for _ in 0..max_steps {
        let mut next = Vec::new();
        for (prefix, lp) in frontier {
            for (tok, l) in log_softmax(&table(&prefix)).into_iter().enumerate() {
                if !l.is_finite() {
                    continue;
                }
                let mut seq = prefix.clone();
                seq.push(tok as TokenId);
                if tok as TokenId == EOS {
                    done.push((seq, lp + l));
                } else {
                    next.push((seq, lp + l));
                }
            }
        }
        frontier = next;
    }
    done.sort_by(|a, b| {
        let sa = a.1 / a.0.len() as f64;
        let sb = b.1 / b.0.len() as f64;
        sb.partial_cmp(&sa).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0))
    });
    done
}

#[test]
fn beam_of_two_finds_the_path_greedy_misses() {
    // Tokens 4 = A, 5 = B. EOS is only allowed (and forced) at step 3, so
    // every path has three tokens and scores compare joint probabilities.
    let ln = f64::ln;
    let table = |p: &[TokenId]| -> Array1<f64> {
        match p {
            [] => array![NEG, NEG, NEG, NEG, ln(0.55), ln(0.45)],
            [4] => array![NEG, NEG, NEG, NEG, ln(0.5), ln(0.5)],
            [5] => array![NEG, NEG, NEG, NEG, ln(0.1), ln(0.9)],
            _ => array![NEG, NEG, NEG, 0.0, NEG, NEG],
        }
    };
    let all = exhaustive(&table, 3);
    assert_eq!(all.len(), 4);
    let best = &all[0];
    assert_eq!(best.0, vec![5, 5, EOS]);

    let greedy = greedy_search(Vec::new(), toy(&table), 3).unwrap();
    assert_eq!(greedy.tokens, vec![4, 4, EOS]);
    assert!(greedy.score() < best.1 / 3.0);

    let beam = beam_search(Vec::new(), toy(&table), 2, 3).unwrap();
    assert_eq!(beam[0].tokens, best.0);
    assert!((beam[0].score() - best.1 / 3.0).abs() < 1e-12);
}

/// Seeded random logits per prefix over |V| = 6, masked as the model's
/// decoder would be with `max_len` content tokens.
fn random_table(seed: u64, cfg: GenConfig) -> impl Fn(&[TokenId]) -> Array1<f64> {
    move |p: &[TokenId]| {
        let mut h = seed;
        for &t in p {
            h = h.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(t as u64 + 1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let mut l = Array1::from_shape_fn(6, |_| rng.gen_range(-3.0..3.0));
        mask_logits(&mut l, p.len(), &cfg);
        l
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn wide_beam_equals_exhaustive_search(seed in any::<u64>(), forbid_unk in any::<bool>()) {
        let cfg = GenConfig { max_sentence_len: 4, forbid_unk, ..GenConfig::default() };
        let table = random_table(seed, cfg);
        let width = 6usize.pow(4);
        let all = exhaustive(&table, 5);
        let beam = beam_search(Vec::new(), toy(&table), width, 5).unwrap();
        prop_assert_eq!(beam.len(), all.len());
        for (b, (seq, lp)) in beam.iter().zip(&all) {
            prop_assert_eq!(&b.tokens, seq);
            prop_assert!((b.logprob - lp).abs() < 1e-12);
        }
    }

    #[test]
    fn width_one_beam_is_greedy(seed in any::<u64>()) {
        let cfg = GenConfig { max_sentence_len: 4, ..GenConfig::default() };
        let table = random_table(seed, cfg);
        let greedy = greedy_search(Vec::new(), toy(&table), 5).unwrap();
        let beam = beam_search(Vec::new(), toy(&table), 1, 5).unwrap();
        prop_assert_eq!(&beam[0].tokens, &greedy.tokens);
    }
}

#[test]
fn finished_hypotheses_stay_frozen() {
    let table = |_: &[TokenId]| array![NEG, NEG, NEG, -1.0, 0.0, NEG];
    let start = vec![
        Hypothesis { tokens: vec![4, EOS], logprob: -0.1, state: vec![4] },
        Hypothesis { tokens: vec![4], logprob: -0.2, state: vec![] },
    ];
    let out = vstory::generation::beam_step(start.clone(), toy(&table), 3).unwrap();
    assert_eq!(out[0], start[0]);
    assert_eq!(out.len(), 3);
}

fn tiny_model(seed: u64) -> Model {
    Model::init(ModelConfig::tiny(10, 15), seed).unwrap()
}

#[test]
fn generated_sentences_respect_the_length_limit_and_vocabulary() {
    let model = tiny_model(1);
    for cfg in [
        GenConfig { max_sentence_len: 2, ..GenConfig::greedy() },
        GenConfig { max_sentence_len: 3, ..GenConfig::beam(3) },
    ] {
        for ex in random_examples(4, 10, 15, 4, 1) {
            let story = generate_story(&model, &ex.features, &ex.desc_ids, &cfg).unwrap();
            assert_eq!(story.sentences.len(), STORY_LEN);
            assert!(!story.description_fallback);
            for s in &story.sentences {
                assert!(s.len() <= cfg.max_sentence_len);
                assert!(s.iter().all(|&t| t != PAD && t != SOS && t != EOS && t != UNK && (t as usize) < 15));
            }
        }
    }
}

#[test]
fn missing_description_falls_back_to_unk_and_is_flagged() {
    let model = tiny_model(2);
    let ex = &random_examples(1, 10, 15, 4, 2)[0];
    let mut desc = ex.desc_ids.clone();
    desc[3].clear();
    let story = generate_story(&model, &ex.features, &desc, &GenConfig::greedy()).unwrap();
    assert!(story.description_fallback);
    desc[3] = vec![UNK];
    let explicit = generate_story(&model, &ex.features, &desc, &GenConfig::greedy()).unwrap();
    assert_eq!(story.sentences, explicit.sentences);
}

#[test]
fn greedy_is_bit_deterministic_and_matches_width_one_beam() {
    let model = tiny_model(3);
    for ex in random_examples(6, 10, 15, 4, 3) {
        let a = generate_story(&model, &ex.features, &ex.desc_ids, &GenConfig::greedy()).unwrap();
        let b = generate_story(&model, &ex.features, &ex.desc_ids, &GenConfig::greedy()).unwrap();
        let c = generate_story(&model, &ex.features, &ex.desc_ids, &GenConfig::beam(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }
}

/// Replaying the generated words through the teacher-forced forward pass
/// must pick the same words: generation threads the story state exactly as
/// training does.
#[test]
fn generation_agrees_with_teacher_forced_replay() {
    let model = tiny_model(4);
    let cfg = GenConfig {
        max_sentence_len: 6,
        forbid_unk: false,
        ..GenConfig::greedy()
    };
    for mut ex in random_examples(3, 10, 15, 4, 4) {
        let story = generate_story(&model, &ex.features, &ex.desc_ids, &cfg).unwrap();
        for (s, words) in story.sentences.iter().enumerate() {
            let mut ids = vec![SOS];
            ids.extend(words);
            ids.push(EOS);
            ex.sent_ids[s] = ids;
        }
        let batch = Batch::from_examples(&[&ex]).unwrap();
        let mut session = Session::eval(&model);
        let fwd = session.forward(&batch).unwrap();
        for (s, words) in story.sentences.iter().enumerate() {
            let forced_eos = words.len() == cfg.max_sentence_len;
            let targets: Vec<TokenId> = words.iter().copied().chain([EOS]).collect();
            for (t, &target) in targets.iter().enumerate() {
                if forced_eos && t == words.len() {
                    continue;
                }
                let mut row = session.tape.value(fwd.sentences[s][t]).row(0).to_owned();
                mask_logits(&mut row, t, &cfg);
                let argmax = row
                    .iter()
                    .enumerate()
                    .fold((0, NEG), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0;
                assert_eq!(argmax as TokenId, target, "sentence {s} step {t}");
            }
        }
    }
}
