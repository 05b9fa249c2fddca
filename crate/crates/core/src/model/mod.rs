//! The interval-censored selective state-space model.
//!
//! A post becomes a sequence of interval-aware rows (see [`sequence`]). Rows pass
//! through a stack of gated selective-scan blocks conditioned on a time
//! embedding plus the post's content embedding, then through a final norm.
//! Heads read the normalised hidden states:
//!
//! * next-step head: `log1p` engagement of the next interval per row;
//! * remainder head: final total given the state at the window end;
//! * classifier: opinion logits from the mean hidden state;
//! * tier-2: a second block over an opinion group's posts producing a
//!   horizon-dependent correction of summed per-post rollouts.

pub mod config;
pub mod forward;
pub mod sequence;
pub mod stream;
pub mod two_tier;

pub use config::ModelConfig;
pub use forward::TapeOutput;
pub use sequence::{History, RowPlan};
pub use stream::{Engine, ForecastSeries, PostForward, Rollout, StepOutput};
pub use two_tier::{GroupForecast, PostSummary, Tier2Input};

use crate::embeddings::TimeEmbedding;
use crate::encoder::{ExternalEncoder, MeanPoolEncoder, PostEncoder};
use crate::error::{Error, Result};
use crate::numerics::{Checkpoint, Dtype, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::ssm::{vec_mat, BlockParams, IntervalEmbedding};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::sync::Arc;

/// Two-layer perceptron with a `silu` hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        out_bias: f64,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            w1: store.add_uniform(format!("{prefix}.w1"), d_in, hidden, 1.0 / (d_in as f64).sqrt(), rng),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(1, hidden)),
            w2: store.add_uniform(format!("{prefix}.w2"), hidden, d_out, 0.5 / (hidden as f64).sqrt(), rng),
            b2: store.add(format!("{prefix}.b2"), Tensor::filled(1, d_out, out_bias)),
        }
    }

    pub fn node(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> NodeId {
        let (w1, b1, w2, b2) = (
            g.param(store, self.w1),
            g.param(store, self.b1),
            g.param(store, self.w2),
            g.param(store, self.b2),
        );
        let z = g.matmul(x, w1);
        let z = g.add_row(z, b1);
        let z = g.silu(z);
        let z = g.matmul(z, w2);
        g.add_row(z, b2)
    }

    pub fn eval(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = vec_mat(x, store.value(self.w1), store.value(self.b1).data())
            .into_iter()
            .map(crate::numerics::activations::silu)
            .collect();
        vec_mat(&z, store.value(self.w2), store.value(self.b2).data())
    }
}

/// Parameter handles of the tier-2 group model.
#[derive(Clone, Debug, PartialEq)]
pub struct Tier2Params {
    pub block: BlockParams,
    pub norm: ParamId,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub time: TimeEmbedding,
    /// Learned constant replacing the time embedding when time is ablated.
    pub time_const: ParamId,
    pub interval: IntervalEmbedding,
    pub blocks: Vec<BlockParams>,
    pub final_norm: ParamId,
    pub next_head: Mlp,
    pub remainder: Mlp,
    pub cls_w: ParamId,
    pub cls_b: ParamId,
    pub tier2: Tier2Params,
}

#[derive(Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub params: ModelParams,
    encoder: Arc<dyn PostEncoder>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("parameters", &self.store.num_scalars())
            .finish()
    }
}

impl Model {
    /// Fresh model with the built-in mean-pooling content encoder.
    pub fn new(config: ModelConfig) -> Result<Self> {
        Self::build(config, None)
    }

    /// Fresh model whose content embedding comes from an external, frozen encoder.
    pub fn with_encoder(config: ModelConfig, encoder: ExternalEncoder) -> Result<Self> {
        if encoder.width() != config.d_emb {
            return Err(Error::Config(format!(
                "external encoder width {} differs from d_emb {}",
                encoder.width(),
                config.d_emb
            )));
        }
        Self::build(config, Some(Arc::new(encoder)))
    }

    fn build(config: ModelConfig, external: Option<Arc<dyn PostEncoder>>) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.init_seed);
        let mut store = ParamStore::new();
        let time = TimeEmbedding::new(&mut store, "time", c.d_emb, c.sigma_init, c.ate_base, &mut rng)?;
        let time_const = store.add_uniform("time.const", 1, c.d_emb, 0.1, &mut rng);
        let encoder: Arc<dyn PostEncoder> = match external {
            Some(e) => e,
            None => Arc::new(MeanPoolEncoder::new(&mut store, "enc", c.d_emb, &mut rng)),
        };
        let interval = IntervalEmbedding::new(&mut store, "iv", c.d_v, &mut rng);
        let blocks = (0..c.n_blocks)
            .map(|i| {
                let d_in = if i == 0 { 4 * c.d_v } else { c.d_model };
                BlockParams::new(
                    &mut store,
                    &format!("block{i}"),
                    d_in,
                    c.d_emb,
                    c.d_model,
                    c.d_state,
                    c.conv_width,
                    &mut rng,
                )
            })
            .collect();
        let final_norm = store.add("final_norm", Tensor::filled(1, c.d_model, 1.0));
        let next_head = Mlp::new(&mut store, "head", c.d_model, c.head_hidden, 4, 0.0, &mut rng);
        let remainder = Mlp::new(
            &mut store,
            "rem",
            c.d_model + c.d_emb + 4,
            c.head_hidden,
            4,
            c.remainder_bias,
            &mut rng,
        );
        let k = c.num_classes();
        let cls_in = c.d_model + c.d_emb;
        let cls_w = store.add_uniform("cls.w", cls_in, k, 1.0 / (cls_in as f64).sqrt(), &mut rng);
        let cls_b = store.add("cls.b", Tensor::zeros(1, k));
        let tier2 = Tier2Params {
            block: BlockParams::new(
                &mut store,
                "t2.block",
                c.d_model + 4,
                c.d_emb,
                c.d_model,
                c.d_state,
                c.conv_width,
                &mut rng,
            ),
            norm: store.add("t2.norm", Tensor::filled(1, c.d_model, 1.0)),
            head_w: store.add("t2.head_w", Tensor::zeros(c.d_model, 8)),
            head_b: store.add("t2.head_b", Tensor::zeros(1, 8)),
        };
        Ok(Self {
            config,
            store,
            params: ModelParams {
                time,
                time_const,
                interval,
                blocks,
                final_norm,
                next_head,
                remainder,
                cls_w,
                cls_b,
                tier2,
            },
            encoder,
        })
    }

    pub fn encoder(&self) -> &dyn PostEncoder {
        self.encoder.as_ref()
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn to_checkpoint(&self, dtype: Dtype) -> Result<Checkpoint> {
        Ok(Checkpoint::from_store(serde_json::to_value(&self.config)?, &self.store, dtype))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint(Dtype::F64)?.save(path)
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(ck.model_config)
            .map_err(|e| Error::Checkpoint(format!("bad model config: {e}")))?;
        let mut model = Self::new(config)?;
        model.store.load_values(ck.tensors)?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}
