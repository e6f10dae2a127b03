//! Story generation: greedy and beam decoding, one sentence per image.

use std::cmp::Ordering;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::autograd::log_softmax_rows;
use crate::dataset::{Padded, STORY_LEN};
use crate::error::{Error, Result};
use crate::model::{Model, RecurrentState, SentenceContext, Session};
use crate::textproc::{TokenId, EOS, PAD, SOS, UNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Greedy,
    Beam,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub strategy: Strategy,
    pub beam_width: usize,
    /// Upper bound on content tokens per sentence; EOS is forced after it.
    pub max_sentence_len: usize,
    pub forbid_unk: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Greedy,
            beam_width: 3,
            max_sentence_len: 30,
            forbid_unk: true,
        }
    }
}

impl GenConfig {
    pub fn greedy() -> Self {
        Self::default()
    }

    pub fn beam(width: usize) -> Self {
        Self {
            strategy: Strategy::Beam,
            beam_width: width,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_width < 1 {
            return Err(Error::Config("beam_width must be at least 1".into()));
        }
        if self.max_sentence_len < 2 {
            return Err(Error::Config("max_sentence_len must be at least 2".into()));
        }
        Ok(())
    }
}

/// A partial or finished sentence. `state` is whatever produced the
/// distribution over the last token (the initial state for an empty one).
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis<S> {
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub state: S,
}

impl<S> Hypothesis<S> {
    pub fn start(state: S) -> Self {
        Self {
            tokens: Vec::new(),
            logprob: 0.0,
            state,
        }
    }

    pub fn finished(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }

    /// Token to feed the decoder next.
    pub fn last_token(&self) -> TokenId {
        self.tokens.last().copied().unwrap_or(SOS)
    }

    /// Log-probability per emitted token, EOS included.
    pub fn score(&self) -> f64 {
        if self.tokens.is_empty() {
            0.0
        } else {
            self.logprob / self.tokens.len() as f64
        }
    }

    /// Tokens without the trailing EOS.
    pub fn content(&self) -> &[TokenId] {
        match self.tokens.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.tokens,
        }
    }
}

/// Better score first; equal scores go to the lexicographically lower
/// token sequence.
fn rank<S>(a: &Hypothesis<S>, b: &Hypothesis<S>) -> Ordering {
    b.score()
        .partial_cmp(&a.score())
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Extends every unfinished hypothesis by every token with a finite
/// log-probability and keeps the best `width` of the extensions plus the
/// frozen finished ones. `logits_fn(last_token, state)` returns logits over
/// the vocabulary and the state after consuming `last_token`.
pub fn beam_step<S, F>(hyps: Vec<Hypothesis<S>>, mut logits_fn: F, width: usize) -> Result<Vec<Hypothesis<S>>>
where
    S: Clone,
    F: FnMut(TokenId, &S) -> Result<(Array1<f64>, S)>,
{
    if hyps.iter().all(Hypothesis::finished) {
        return Ok(hyps);
    }
    let mut pool = Vec::new();
    for hyp in hyps {
        if hyp.finished() {
            pool.push(hyp);
            continue;
        }
        let (logits, next) = logits_fn(hyp.last_token(), &hyp.state)?;
        let logp = log_softmax(logits.view());
        for (tok, &lp) in logp.iter().enumerate() {
            if !lp.is_finite() {
                continue;
            }
            let mut tokens = hyp.tokens.clone();
            tokens.push(tok as TokenId);
            pool.push(Hypothesis {
                tokens,
                logprob: hyp.logprob + lp,
                state: next.clone(),
            });
        }
    }
    pool.sort_by(rank);
    pool.truncate(width.max(1));
    Ok(pool)
}

/// Runs [`beam_step`] until every hypothesis is finished and returns them
/// best first.
pub fn beam_search<S, F>(init: S, mut logits_fn: F, width: usize, max_steps: usize) -> Result<Vec<Hypothesis<S>>>
where
    S: Clone,
    F: FnMut(TokenId, &S) -> Result<(Array1<f64>, S)>,
{
    let mut hyps = vec![Hypothesis::start(init)];
    for _ in 0..max_steps {
        hyps = beam_step(hyps, &mut logits_fn, width)?;
        if hyps.iter().all(Hypothesis::finished) {
            break;
        }
    }
    Ok(hyps)
}

/// Argmax decoding; ties go to the lower token id.
pub fn greedy_search<S, F>(init: S, mut logits_fn: F, max_steps: usize) -> Result<Hypothesis<S>>
where
    F: FnMut(TokenId, &S) -> Result<(Array1<f64>, S)>,
{
    let mut hyp = Hypothesis::start(init);
    for _ in 0..max_steps {
        if hyp.finished() {
            break;
        }
        let (logits, next) = logits_fn(hyp.last_token(), &hyp.state)?;
        let logp = log_softmax(logits.view());
        let mut best: Option<(usize, f64)> = None;
        for (tok, &lp) in logp.iter().enumerate() {
            if lp.is_finite() && best.map_or(true, |(_, b)| lp > b) {
                best = Some((tok, lp));
            }
        }
        let (tok, lp) = best.ok_or(Error::Empty("decoder distribution"))?;
        hyp.tokens.push(tok as TokenId);
        hyp.logprob += lp;
        hyp.state = next;
    }
    Ok(hyp)
}

fn log_softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let row = logits.to_owned().insert_axis(ndarray::Axis(0));
    log_softmax_rows(&row).row(0).to_owned()
}

/// Masks tokens that may never be emitted and, once `content_len` reaches
/// `max_len`, everything except EOS.
pub fn mask_logits(logits: &mut Array1<f64>, content_len: usize, cfg: &GenConfig) {
    if content_len >= cfg.max_sentence_len {
        for (tok, v) in logits.iter_mut().enumerate() {
            if tok as TokenId != EOS {
                *v = f64::NEG_INFINITY;
            }
        }
        return;
    }
    logits[PAD as usize] = f64::NEG_INFINITY;
    logits[SOS as usize] = f64::NEG_INFINITY;
    if cfg.forbid_unk {
        logits[UNK as usize] = f64::NEG_INFINITY;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedStory {
    /// Content tokens of each sentence, without SOS/EOS.
    pub sentences: Vec<Vec<TokenId>>,
    /// Some description was missing and a single UNK stood in for it.
    pub description_fallback: bool,
}

/// Generates five sentences for a `5 x D` feature matrix and per-image
/// description ids.
pub fn generate_story(
    model: &Model,
    features: &Array2<f64>,
    desc_ids: &[Vec<TokenId>],
    cfg: &GenConfig,
) -> Result<GeneratedStory> {
    cfg.validate()?;
    if features.nrows() != STORY_LEN || desc_ids.len() != STORY_LEN {
        return Err(Error::Shape(format!(
            "expected {STORY_LEN} images and descriptions, got {} and {}",
            features.nrows(),
            desc_ids.len()
        )));
    }
    let mut session = Session::eval(model);
    let inputs = (0..STORY_LEN)
        .map(|s| session.feature_input(&features.row(s).to_owned().insert_axis(ndarray::Axis(0))))
        .collect::<Result<Vec<_>>>()?;
    let seq_embed = session.encode_image_sequence(&inputs)?;
    let mut carry = session.start_story(seq_embed);
    let mut fallback = false;
    let mut sentences = Vec::with_capacity(STORY_LEN);
    for (s, desc) in desc_ids.iter().enumerate() {
        let desc: Vec<TokenId> = if desc.is_empty() {
            fallback = true;
            vec![UNK]
        } else {
            desc.clone()
        };
        let padded = Padded::from_sequences(&[&desc]);
        let ctx = session.begin_sentence(&mut carry, inputs[s], &padded)?;
        let (tokens, final_state) = decode_sentence(&mut session, &ctx, cfg)?;
        session.end_sentence(&mut carry, &final_state);
        sentences.push(tokens);
    }
    Ok(GeneratedStory {
        sentences,
        description_fallback: fallback,
    })
}

/// Decoder state paired with the number of content tokens consumed.
#[derive(Clone)]
struct DecodeState {
    sd: RecurrentState,
    len: usize,
}

fn decode_sentence(
    session: &mut Session<'_>,
    ctx: &SentenceContext,
    cfg: &GenConfig,
) -> Result<(Vec<TokenId>, RecurrentState)> {
    let init = DecodeState {
        sd: ctx.sd_state.clone(),
        len: 0,
    };
    let mut step = |last: TokenId, st: &DecodeState| -> Result<(Array1<f64>, DecodeState)> {
        let (logits, sd) = session.decode_step(ctx, &[last as usize], &st.sd)?;
        let mut row = session.tape.value(logits).row(0).to_owned();
        let len = if last == SOS { 0 } else { st.len + 1 };
        mask_logits(&mut row, len, cfg);
        Ok((row, DecodeState { sd, len }))
    };
    let steps = cfg.max_sentence_len + 1;
    let best = match cfg.strategy {
        Strategy::Greedy => greedy_search(init, &mut step, steps)?,
        Strategy::Beam => beam_search(init, &mut step, cfg.beam_width, steps)?
            .into_iter()
            .next()
            .ok_or(Error::Empty("beam"))?,
    };
    Ok((best.content().to_vec(), best.state.sd))
}

/// One line of generation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedRecord {
    pub story_id: String,
    pub sentences: Vec<String>,
    pub config: GenConfig,
    pub checkpoint_id: String,
    #[serde(default)]
    pub description_fallback: bool,
}
