//! The hierarchical storytelling network: an image-sequence encoder (ISE)
//! producing a global context vector, a per-step image encoder (IE) and
//! description encoder (DE), and a sentence decoder (SD).

mod checkpoint;
mod gradcheck;
mod loss;
mod network;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::ObservedStats;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

pub use checkpoint::{model_id, Checkpoint, OptimizerState, CHECKPOINT_MAGIC};
pub use gradcheck::{frozen_loss, gradient_check, GroupCheck};
pub use loss::story_loss;
pub use network::{
    LayerState, NormMode, RecurrentState, SentenceContext, Session, StoryCarry, StoryForward,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of the precomputed image features.
    pub feature_dim: usize,
    /// Recurrent hidden size, shared by every stack.
    pub hidden: usize,
    /// Layers per recurrent stack.
    pub layers: usize,
    pub word_embed: usize,
    /// Output of the image feature FC layers and of the IE embedding.
    pub image_embed: usize,
    pub desc_embed: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    pub use_prev_sentence_attention: bool,
    pub use_description_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 2048,
            hidden: 1024,
            layers: 2,
            word_embed: 256,
            image_embed: 512,
            desc_embed: 512,
            dropout: 0.5,
            vocab_size: 12985 + 4,
            use_prev_sentence_attention: true,
            use_description_attention: true,
        }
    }
}

impl ModelConfig {
    /// A small configuration for tests and probes.
    pub fn tiny(feature_dim: usize, vocab_size: usize) -> Self {
        Self {
            feature_dim,
            hidden: 8,
            layers: 2,
            word_embed: 6,
            image_embed: 6,
            desc_embed: 6,
            dropout: 0.5,
            vocab_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("feature_dim", self.feature_dim),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("word_embed", self.word_embed),
            ("image_embed", self.image_embed),
            ("desc_embed", self.desc_embed),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.vocab_size < crate::textproc::SPECIALS.len() {
            return Err(Error::Config(format!(
                "vocab_size {} cannot hold the special symbols",
                self.vocab_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Width of the sentence decoder input at each word step.
    pub fn decoder_input_width(&self) -> usize {
        let ctx = if self.use_description_attention {
            self.desc_embed + self.image_embed
        } else {
            self.image_embed
        };
        ctx + self.word_embed
    }

    /// Every parameter tensor with its shape, in creation order.
    pub fn parameter_shapes(&self) -> Vec<(String, (usize, usize))> {
        let h = self.hidden;
        let mut out = Vec::new();
        let mut push = |name: String, shape| out.push((name, shape));
        let linear = |push: &mut dyn FnMut(String, (usize, usize)), name: &str, i: usize, o: usize| {
            push(format!("{name}.w"), (i, o));
            push(format!("{name}.b"), (1, o));
        };
        let norm = |push: &mut dyn FnMut(String, (usize, usize)), name: &str, d: usize| {
            push(format!("{name}.gamma"), (1, d));
            push(format!("{name}.beta"), (1, d));
        };
        let lstm = |push: &mut dyn FnMut(String, (usize, usize)), name: &str, input: usize| {
            for l in 0..self.layers {
                let i = if l == 0 { input } else { h };
                push(format!("{name}.l{l}.w_x"), (i, 4 * h));
                push(format!("{name}.l{l}.w_h"), (h, 4 * h));
                push(format!("{name}.l{l}.b"), (1, 4 * h));
            }
        };

        linear(&mut push, "ise.feat", self.feature_dim, self.image_embed);
        norm(&mut push, "ise.feat_bn", self.image_embed);
        lstm(&mut push, "ise.lstm", self.image_embed);
        linear(&mut push, "ise.out", h, h);
        norm(&mut push, "ise.out_bn", h);

        linear(&mut push, "ie.feat", self.feature_dim, self.image_embed);
        norm(&mut push, "ie.feat_bn", self.image_embed);
        lstm(&mut push, "ie.lstm", self.image_embed);
        linear(&mut push, "ie.embed", h, self.image_embed);

        push("de.embedding".into(), (self.vocab_size, self.word_embed));
        lstm(&mut push, "de.lstm", self.word_embed);
        linear(&mut push, "de.embed", h, self.desc_embed);

        if self.use_prev_sentence_attention {
            linear(&mut push, "sd.init", 2 * h, h);
        }
        push("sd.embedding".into(), (self.vocab_size, self.word_embed));
        lstm(&mut push, "sd.lstm", self.decoder_input_width());
        linear(&mut push, "sd.proj", h, self.vocab_size);
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub slot: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Lstm {
    pub layers: Vec<(ParamId, ParamId, ParamId)>,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub ise_feat: Linear,
    pub ise_feat_bn: Norm,
    pub ise_lstm: Lstm,
    pub ise_out: Linear,
    pub ise_out_bn: Norm,
    pub ie_feat: Linear,
    pub ie_feat_bn: Norm,
    pub ie_lstm: Lstm,
    pub ie_embed: Linear,
    pub de_embedding: ParamId,
    pub de_lstm: Lstm,
    pub de_embed: Linear,
    pub sd_init: Option<Linear>,
    pub sd_embedding: ParamId,
    pub sd_lstm: Lstm,
    pub sd_proj: Linear,
}

/// Names of the batch-normalized layers, in running-statistics slot order.
pub const NORM_LAYERS: [&str; 3] = ["ise.feat_bn", "ise.out_bn", "ie.feat_bn"];

impl Layout {
    fn resolve(config: &ModelConfig, store: &ParamStore) -> Result<Self> {
        let id = |name: String| {
            store
                .lookup(&name)
                .ok_or_else(|| Error::Shape(format!("missing parameter {name}")))
        };
        let linear = |name: &str| -> Result<Linear> {
            Ok(Linear {
                w: id(format!("{name}.w"))?,
                b: id(format!("{name}.b"))?,
            })
        };
        let norm = |name: &str| -> Result<Norm> {
            Ok(Norm {
                gamma: id(format!("{name}.gamma"))?,
                beta: id(format!("{name}.beta"))?,
                slot: NORM_LAYERS.iter().position(|n| *n == name).expect("known norm layer"),
            })
        };
        let lstm = |name: &str| -> Result<Lstm> {
            let layers = (0..config.layers)
                .map(|l| {
                    Ok((
                        id(format!("{name}.l{l}.w_x"))?,
                        id(format!("{name}.l{l}.w_h"))?,
                        id(format!("{name}.l{l}.b"))?,
                    ))
                })
                .collect::<Result<_>>()?;
            Ok(Lstm {
                layers,
                hidden: config.hidden,
            })
        };
        Ok(Self {
            ise_feat: linear("ise.feat")?,
            ise_feat_bn: norm("ise.feat_bn")?,
            ise_lstm: lstm("ise.lstm")?,
            ise_out: linear("ise.out")?,
            ise_out_bn: norm("ise.out_bn")?,
            ie_feat: linear("ie.feat")?,
            ie_feat_bn: norm("ie.feat_bn")?,
            ie_lstm: lstm("ie.lstm")?,
            ie_embed: linear("ie.embed")?,
            de_embedding: id("de.embedding".into())?,
            de_lstm: lstm("de.lstm")?,
            de_embed: linear("de.embed")?,
            sd_init: if config.use_prev_sentence_attention {
                Some(linear("sd.init")?)
            } else {
                None
            },
            sd_embedding: id("sd.embedding".into())?,
            sd_lstm: lstm("sd.lstm")?,
            sd_proj: linear("sd.proj")?,
        })
    }
}

/// Running mean and variance of one batch-normalized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningNorm {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

pub const NORM_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
    norms: Vec<RunningNorm>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params && self.norms == other.norms
    }
}

fn is_bias(name: &str) -> bool {
    name.ends_with(".b") || name.ends_with(".beta")
}

impl Model {
    /// Scaled-uniform (Glorot) matrices, zero biases, unit batch-norm scales,
    /// and recurrent forget-gate biases of one.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        for (name, (rows, cols)) in config.parameter_shapes() {
            let value = if name.ends_with(".gamma") {
                Array2::ones((rows, cols))
            } else if is_bias(&name) {
                let mut b = Array2::zeros((rows, cols));
                if name.contains(".lstm.") {
                    let h = config.hidden;
                    b.slice_mut(ndarray::s![.., h..2 * h]).fill(1.0);
                }
                b
            } else {
                let limit = (6.0 / (rows + cols) as f64).sqrt();
                Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
            };
            store.insert(name, value);
        }
        Self::from_parts(config, store, None)
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        params: ParamStore,
        norms: Option<Vec<RunningNorm>>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = Layout::resolve(&config, &params)?;
        let norms = norms.unwrap_or_else(|| {
            let dims = [config.image_embed, config.hidden, config.image_embed];
            dims.iter()
                .map(|&d| RunningNorm {
                    mean: Array1::zeros(d),
                    var: Array1::ones(d),
                })
                .collect()
        });
        let model = Self {
            config,
            params,
            layout,
            norms,
        };
        model.shape_audit()?;
        Ok(model)
    }

    /// Checks every parameter and running statistic against the config.
    pub fn shape_audit(&self) -> Result<()> {
        let expected = self.config.parameter_shapes();
        if expected.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                self.params.len()
            )));
        }
        for (name, shape) in expected {
            let id = self
                .params
                .lookup(&name)
                .ok_or_else(|| Error::Shape(format!("missing parameter {name}")))?;
            let actual = self.params.get(id).dim();
            if actual != shape {
                return Err(Error::Shape(format!("{name}: expected {shape:?}, found {actual:?}")));
            }
        }
        let dims = [self.config.image_embed, self.config.hidden, self.config.image_embed];
        if self.norms.len() != NORM_LAYERS.len() {
            return Err(Error::Shape("wrong number of batch-norm statistics".into()));
        }
        for ((norm, d), name) in self.norms.iter().zip(dims).zip(NORM_LAYERS) {
            if norm.mean.len() != d || norm.var.len() != d {
                return Err(Error::Shape(format!("{name} running statistics must have length {d}")));
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn norms(&self) -> &[RunningNorm] {
        &self.norms
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Folds batch statistics observed in a training forward pass into the
    /// running averages (unbiased variance).
    pub fn update_norms(&mut self, observed: &[(usize, ObservedStats)]) {
        for (slot, stats) in observed {
            let n = stats.count as f64;
            let unbiased = if stats.count > 1 {
                &stats.var * (n / (n - 1.0))
            } else {
                stats.var.clone()
            };
            let running = &mut self.norms[*slot];
            running.mean = &running.mean * (1.0 - NORM_MOMENTUM) + &stats.mean * NORM_MOMENTUM;
            running.var = &running.var * (1.0 - NORM_MOMENTUM) + unbiased * NORM_MOMENTUM;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig::tiny(10, 20)
    }

    #[test]
    fn init_is_deterministic() {
        let a = Model::init(tiny(), 5).unwrap();
        let b = Model::init(tiny(), 5).unwrap();
        assert_eq!(a, b);
        let c = Model::init(tiny(), 6).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn shape_audit_passes_for_tiny_config() {
        let m = Model::init(tiny(), 0).unwrap();
        m.shape_audit().unwrap();
        let sd0 = m.params().lookup("sd.lstm.l0.w_x").unwrap();
        assert_eq!(m.params().get(sd0).dim(), (18, 32));
    }

    #[test]
    fn forget_gate_bias_is_one() {
        let m = Model::init(tiny(), 0).unwrap();
        let b = m.params().get(m.params().lookup("de.lstm.l1.b").unwrap());
        for (j, &v) in b.iter().enumerate() {
            let expected = if (8..16).contains(&j) { 1.0 } else { 0.0 };
            assert_eq!(v, expected);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = tiny();
        c.hidden = 0;
        assert!(Model::init(c, 0).is_err());
        let mut c = tiny();
        c.dropout = 1.0;
        assert!(Model::init(c, 0).is_err());
        let mut c = tiny();
        c.vocab_size = 2;
        assert!(Model::init(c, 0).is_err());
    }

    #[test]
    fn ablated_configs_change_the_parameter_set() {
        let mut c = tiny();
        c.use_prev_sentence_attention = false;
        c.use_description_attention = false;
        let m = Model::init(c.clone(), 0).unwrap();
        assert!(m.params().lookup("sd.init.w").is_none());
        assert_eq!(c.decoder_input_width(), c.image_embed + c.word_embed);
    }

    #[test]
    fn audit_catches_mismatched_shapes() {
        let mut m = Model::init(tiny(), 0).unwrap();
        let id = m.params().lookup("sd.proj.w").unwrap();
        *m.params_mut().get_mut(id) = Array2::zeros((3, 3));
        assert!(m.shape_audit().is_err());
    }
}
