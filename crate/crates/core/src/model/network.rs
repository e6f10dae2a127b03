use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{log_softmax_rows, ObservedStats, Tape, Var};
use crate::dataset::{Batch, Padded, STORY_LEN};
use crate::error::{Error, Result};

use super::{Linear, Lstm, Model, Norm};

/// How batch-normalized layers obtain their statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Statistics of the current batch. A batch of one falls back to the
    /// running statistics.
    Batch,
    /// Running statistics, held constant.
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerState {
    pub h: Var,
    pub c: Var,
}

/// Hidden and cell vectors for every layer of one recurrent stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecurrentState {
    pub layers: Vec<LayerState>,
}

impl RecurrentState {
    pub fn top(&self) -> LayerState {
        *self.layers.last().expect("at least one layer")
    }
}

/// State threaded across the five sentence iterations of a story.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoryCarry {
    pub seq_embed: Var,
    pub ie_state: RecurrentState,
    pub desc_state: RecurrentState,
    pub prev_sd_final: Var,
}

/// Everything the decoder needs for one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceContext {
    pub img_embed: Var,
    pub desc_embed: Var,
    pub sd_state: RecurrentState,
}

/// Teacher-forced logits: `sentences[s][t]` is `B x |V|` and predicts token
/// `t + 1` of sentence `s`.
#[derive(Debug, Clone)]
pub struct StoryForward {
    pub sentences: Vec<Vec<Var>>,
    pub carry: StoryCarry,
}

/// One forward evaluation of a [`Model`], recorded on a tape.
pub struct Session<'m> {
    pub tape: Tape<'m>,
    model: &'m Model,
    dropout: Option<ChaCha8Rng>,
    norm: NormMode,
    observed: Vec<(usize, ObservedStats)>,
}

impl<'m> Session<'m> {
    /// Dropout off, frozen batch-norm statistics.
    pub fn eval(model: &'m Model) -> Self {
        Self::new(model, None, NormMode::Frozen)
    }

    /// Dropout on (masks drawn from `seed`), batch statistics.
    pub fn train(model: &'m Model, seed: u64) -> Self {
        Self::new(model, Some(seed), NormMode::Batch)
    }

    pub fn new(model: &'m Model, dropout_seed: Option<u64>, norm: NormMode) -> Self {
        Self {
            tape: Tape::new(model.params()),
            model,
            dropout: dropout_seed.map(ChaCha8Rng::seed_from_u64),
            norm,
            observed: Vec::new(),
        }
    }

    pub fn model(&self) -> &'m Model {
        self.model
    }

    /// Batch statistics seen by training-mode batch norm, for
    /// [`Model::update_norms`].
    pub fn take_observed(&mut self) -> Vec<(usize, ObservedStats)> {
        std::mem::take(&mut self.observed)
    }

    fn batch_norm(&mut self, x: Var, norm: Norm) -> Var {
        let rows = self.tape.value(x).nrows();
        if self.norm == NormMode::Batch && rows > 1 {
            let (y, stats) = self.tape.batch_norm_train(x, norm.gamma, norm.beta);
            self.observed.push((norm.slot, stats));
            y
        } else {
            let running = &self.model.norms()[norm.slot];
            self.tape
                .batch_norm_frozen(x, norm.gamma, norm.beta, &running.mean, &running.var)
        }
    }

    fn dropout(&mut self, x: Var) -> Var {
        let p = self.model.config().dropout;
        let Some(rng) = self.dropout.as_mut() else { return x };
        if p == 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let shape = self.tape.value(x).raw_dim();
        let mask = Array2::from_shape_simple_fn(shape, || {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        self.tape.mul_const(x, mask)
    }

    fn linear(&mut self, x: Var, l: Linear) -> Var {
        self.tape.linear(x, l.w, l.b)
    }

    pub fn zero_state(&mut self, rows: usize) -> RecurrentState {
        let h = self.model.config().hidden;
        let layers = (0..self.model.config().layers)
            .map(|_| LayerState {
                h: self.tape.zeros(rows, h),
                c: self.tape.zeros(rows, h),
            })
            .collect();
        RecurrentState { layers }
    }

    /// One step through a stacked LSTM. Returns the (dropped-out) top-layer
    /// output and the new state; the state itself carries undropped values.
    fn lstm_step(&mut self, lstm: &Lstm, x: Var, state: &RecurrentState) -> (Var, RecurrentState) {
        let h = lstm.hidden;
        let mut input = x;
        let mut layers = Vec::with_capacity(lstm.layers.len());
        for (&(w_x, w_h, b), prev) in lstm.layers.iter().zip(&state.layers) {
            let w_x = self.tape.param(w_x);
            let w_h = self.tape.param(w_h);
            let b = self.tape.param(b);
            let xi = self.tape.matmul(input, w_x);
            let hh = self.tape.matmul(prev.h, w_h);
            let pre = self.tape.add(xi, hh);
            let gates = self.tape.add_row(pre, b);
            let i = self.tape.slice(gates, 0, h);
            let f = self.tape.slice(gates, h, h);
            let g = self.tape.slice(gates, 2 * h, h);
            let o = self.tape.slice(gates, 3 * h, h);
            let i = self.tape.sigmoid(i);
            let f = self.tape.sigmoid(f);
            let g = self.tape.tanh(g);
            let o = self.tape.sigmoid(o);
            let fc = self.tape.mul(f, prev.c);
            let ig = self.tape.mul(i, g);
            let c = self.tape.add(fc, ig);
            let tc = self.tape.tanh(c);
            let h_new = self.tape.mul(o, tc);
            layers.push(LayerState { h: h_new, c });
            input = self.dropout(h_new);
        }
        (input, RecurrentState { layers })
    }

    fn blend_state(&mut self, active: &[bool], new: &RecurrentState, old: &RecurrentState) -> RecurrentState {
        let layers = new
            .layers
            .iter()
            .zip(&old.layers)
            .map(|(n, o)| LayerState {
                h: self.tape.select_rows(active, n.h, o.h),
                c: self.tape.select_rows(active, n.c, o.c),
            })
            .collect();
        RecurrentState { layers }
    }

    fn check_state(&self, state: &RecurrentState, rows: usize) -> Result<()> {
        let cfg = self.model.config();
        if state.layers.len() != cfg.layers {
            return Err(Error::Shape(format!(
                "state has {} layers, model has {}",
                state.layers.len(),
                cfg.layers
            )));
        }
        for l in &state.layers {
            for v in [l.h, l.c] {
                if self.tape.value(v).dim() != (rows, cfg.hidden) {
                    return Err(Error::Shape(format!(
                        "state entry {:?}, expected ({rows}, {})",
                        self.tape.value(v).dim(),
                        cfg.hidden
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        let vocab = self.model.config().vocab_size;
        match ids.iter().find(|&&id| id >= vocab) {
            Some(&id) => Err(Error::TokenOutOfRange { id, vocab }),
            None => Ok(()),
        }
    }

    pub fn feature_input(&mut self, features: &Array2<f64>) -> Result<Var> {
        let d = self.model.config().feature_dim;
        if features.ncols() != d {
            return Err(Error::Shape(format!(
                "image feature has dimension {}, model expects {d}",
                features.ncols()
            )));
        }
        Ok(self.tape.input(features.clone()))
    }

    /// ISE: FC + batch norm + recurrent step per image, then FC + batch norm
    /// on the final top-layer hidden. Returns the `B x H` sequence embedding.
    pub fn encode_image_sequence(&mut self, features: &[Var]) -> Result<Var> {
        if features.len() != STORY_LEN {
            return Err(Error::Shape(format!(
                "image sequence has {} images, expected {STORY_LEN}",
                features.len()
            )));
        }
        let layout = self.model.layout();
        let rows = self.tape.value(features[0]).nrows();
        let mut state = self.zero_state(rows);
        let mut out = state.top().h;
        for &f in features {
            if self.tape.value(f).dim() != (rows, self.model.config().feature_dim) {
                return Err(Error::Shape("image features disagree in shape".into()));
            }
            let x = self.linear(f, layout.ise_feat);
            let x = self.batch_norm(x, layout.ise_feat_bn);
            (out, state) = self.lstm_step(&layout.ise_lstm, x, &state);
        }
        let e = self.linear(out, layout.ise_out);
        Ok(self.batch_norm(e, layout.ise_out_bn))
    }

    /// IE: one image through FC + batch norm, a recurrent step continuing
    /// `ie_state`, and the embedding FC.
    pub fn encode_image_step(&mut self, feature: Var, ie_state: &RecurrentState) -> Result<(Var, RecurrentState)> {
        let rows = self.tape.value(feature).nrows();
        self.check_state(ie_state, rows)?;
        if self.tape.value(feature).ncols() != self.model.config().feature_dim {
            return Err(Error::Shape("image feature dimension mismatch".into()));
        }
        let layout = self.model.layout();
        let x = self.linear(feature, layout.ie_feat);
        let x = self.batch_norm(x, layout.ie_feat_bn);
        let (out, state) = self.lstm_step(&layout.ie_lstm, x, ie_state);
        Ok((self.linear(out, layout.ie_embed), state))
    }

    /// DE: runs the description tokens from `init_state`; rows stop updating
    /// once their own description ends. The embedding is an FC of the final
    /// top-layer hidden.
    pub fn encode_description(&mut self, desc: &Padded, init_state: &RecurrentState) -> Result<(Var, RecurrentState)> {
        if desc.lengths.iter().any(|&l| l == 0) || desc.max_len() == 0 {
            return Err(Error::Empty("description"));
        }
        self.check_state(init_state, desc.rows())?;
        let layout = self.model.layout();
        let table = self.tape.param(layout.de_embedding);
        let mut state = init_state.clone();
        let mut out = state.top().h;
        for t in 0..desc.max_len() {
            let ids = desc.column(t);
            self.check_ids(&ids)?;
            let x = self.tape.gather(table, &ids);
            let (o, next) = self.lstm_step(&layout.de_lstm, x, &state);
            let active = desc.active(t);
            out = self.tape.select_rows(&active, o, out);
            state = self.blend_state(&active, &next, &state);
        }
        Ok((self.linear(out, layout.de_embed), state))
    }

    /// Layer-one hidden is `seq_embed`; every other entry is zero.
    pub fn seed_state_from(&mut self, seq_embed: Var) -> RecurrentState {
        let rows = self.tape.value(seq_embed).nrows();
        let mut state = self.zero_state(rows);
        state.layers[0].h = seq_embed;
        state
    }

    /// SD initial state. With previous-sentence attention the top-layer
    /// hidden becomes `FC([desc top h, prev_sd_final])`; everything else is
    /// copied from the description state.
    pub fn sd_initial_hidden(&mut self, desc_state: &RecurrentState, prev_sd_final: Var) -> RecurrentState {
        let Some(init) = self.model.layout().sd_init else {
            return desc_state.clone();
        };
        let joined = self.tape.concat(&[desc_state.top().h, prev_sd_final]);
        let h = self.linear(joined, init);
        let mut state = desc_state.clone();
        state.layers.last_mut().expect("layers").h = h;
        state
    }

    /// One decoder word step. The input is `[desc_embed, img_embed, word]`,
    /// or `[img_embed, word]` without description attention.
    pub fn decode_step(
        &mut self,
        ctx: &SentenceContext,
        prev_words: &[usize],
        sd_state: &RecurrentState,
    ) -> Result<(Var, RecurrentState)> {
        self.check_ids(prev_words)?;
        self.check_state(sd_state, prev_words.len())?;
        let layout = self.model.layout();
        let table = self.tape.param(layout.sd_embedding);
        let word = self.tape.gather(table, prev_words);
        let input = if self.model.config().use_description_attention {
            self.tape.concat(&[ctx.desc_embed, ctx.img_embed, word])
        } else {
            self.tape.concat(&[ctx.img_embed, word])
        };
        let (out, state) = self.lstm_step(&layout.sd_lstm, input, sd_state);
        Ok((self.linear(out, layout.sd_proj), state))
    }

    pub fn start_story(&mut self, seq_embed: Var) -> StoryCarry {
        let rows = self.tape.value(seq_embed).nrows();
        let ie_state = self.zero_state(rows);
        let desc_state = self.seed_state_from(seq_embed);
        let prev_sd_final = self.tape.zeros(rows, self.model.config().hidden);
        StoryCarry {
            seq_embed,
            ie_state,
            desc_state,
            prev_sd_final,
        }
    }

    /// IE step, DE pass and SD initialisation for the next sentence; advances
    /// the encoder states in `carry`. Shared by training and generation.
    pub fn begin_sentence(&mut self, carry: &mut StoryCarry, feature: Var, desc: &Padded) -> Result<SentenceContext> {
        let (img_embed, ie_state) = self.encode_image_step(feature, &carry.ie_state)?;
        let (desc_embed, desc_state) = self.encode_description(desc, &carry.desc_state)?;
        carry.ie_state = ie_state;
        carry.desc_state = desc_state;
        let sd_state = self.sd_initial_hidden(&carry.desc_state, carry.prev_sd_final);
        Ok(SentenceContext {
            img_embed,
            desc_embed,
            sd_state,
        })
    }

    pub fn end_sentence(&mut self, carry: &mut StoryCarry, final_sd_state: &RecurrentState) {
        carry.prev_sd_final = final_sd_state.top().h;
    }

    /// Teacher-forced pass over a batch.
    pub fn forward(&mut self, batch: &Batch) -> Result<StoryForward> {
        let features = batch
            .features
            .iter()
            .map(|f| self.feature_input(f))
            .collect::<Result<Vec<_>>>()?;
        let seq_embed = self.encode_image_sequence(&features)?;
        self.forward_with_context(batch, &features, seq_embed)
    }

    /// As [`forward`](Self::forward) with a caller-supplied sequence
    /// embedding in place of the ISE output.
    pub fn forward_with_context(&mut self, batch: &Batch, features: &[Var], seq_embed: Var) -> Result<StoryForward> {
        let mut carry = self.start_story(seq_embed);
        let mut sentences = Vec::with_capacity(STORY_LEN);
        for s in 0..STORY_LEN {
            let ctx = self.begin_sentence(&mut carry, features[s], &batch.descriptions[s])?;
            let sent = &batch.sentences[s];
            let mut state = ctx.sd_state.clone();
            let mut logits = Vec::with_capacity(sent.max_len() - 1);
            for t in 0..sent.max_len() - 1 {
                let (l, next) = self.decode_step(&ctx, &sent.column(t), &state)?;
                let active = sent.active(t + 1);
                state = self.blend_state(&active, &next, &state);
                logits.push(l);
            }
            self.end_sentence(&mut carry, &state);
            sentences.push(logits);
        }
        Ok(StoryForward { sentences, carry })
    }

    /// Mean negative log-likelihood over every target token in the batch, as
    /// a tape scalar.
    pub fn batch_loss(&mut self, batch: &Batch, fwd: &StoryForward) -> Result<Var> {
        let total = batch.num_targets();
        if total == 0 {
            return Err(Error::Empty("loss targets"));
        }
        let mut loss: Option<Var> = None;
        for (s, steps) in fwd.sentences.iter().enumerate() {
            let mask = batch.target_mask(s);
            for (t, &logits) in steps.iter().enumerate() {
                let targets = batch.sentences[s].column(t + 1);
                let weights: Vec<f64> = mask.column(t).iter().map(|m| m / total as f64).collect();
                let term = self.tape.softmax_xent(logits, &targets, &weights);
                loss = Some(match loss {
                    Some(acc) => self.tape.add(acc, term),
                    None => term,
                });
            }
        }
        Ok(loss.expect("at least one target"))
    }

    /// Per-story mean negative log-likelihood, read from recorded logits.
    pub fn story_losses(&self, batch: &Batch, fwd: &StoryForward) -> Vec<f64> {
        let mut nll = vec![0.0; batch.size()];
        let mut count = vec![0usize; batch.size()];
        for (s, steps) in fwd.sentences.iter().enumerate() {
            let sent = &batch.sentences[s];
            for (t, &logits) in steps.iter().enumerate() {
                let logp = log_softmax_rows(self.tape.value(logits));
                for r in 0..batch.size() {
                    if t + 1 < sent.lengths[r] {
                        nll[r] -= logp[[r, sent.ids[[r, t + 1]] as usize]];
                        count[r] += 1;
                    }
                }
            }
        }
        nll.iter().zip(count).map(|(n, c)| n / c as f64).collect()
    }
}
