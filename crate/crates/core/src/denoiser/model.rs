use super::{CondPool, DenoiserConfig, SkipMode};
use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

const LN_EPS: f64 = 1e-5;

/// One batch of denoiser inputs: `B` sequences stacked row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseBatch {
    /// `(B·L)×3J` noisy coefficients `y_t`.
    pub noisy: Tensor,
    /// `(B·L)×3J` coefficients of the padded observation.
    pub cond: Tensor,
    /// Diffusion step per sequence.
    pub steps: Vec<usize>,
    /// Replace the history part of the condition with the learned null token.
    pub use_null: Vec<bool>,
}

impl DenoiseBatch {
    pub fn single(noisy: Tensor, cond: Tensor, step: usize, use_null: bool) -> Self {
        Self {
            noisy,
            cond,
            steps: vec![step],
            use_null: vec![use_null],
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Anything that can predict injected noise on a [`Graph`].
///
/// The returned node has shape `(B·L)×3J`.
pub trait Denoise {
    fn params(&self) -> &ParamStore;
    fn forward(&self, g: &mut Graph<'_>, batch: &DenoiseBatch) -> Result<Var>;
}

/// Runs `model` without recording gradients and returns `ε̂`.
pub fn predict_noise<M: Denoise + ?Sized>(model: &M, batch: &DenoiseBatch) -> Result<Tensor> {
    let mut g = Graph::new(model.params());
    let out = model.forward(&mut g, batch)?;
    Ok(g.value(out))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    fn apply(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        g.linear(x, w, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    fn apply(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.gain), g.param(self.bias));
        g.layer_norm(x, w, b, LN_EPS)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BlockParams {
    se: Option<(Linear, Linear)>,
    norm1: Norm,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    norm2: Norm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    tokens: Linear,
    history: Linear,
    step_fc1: Linear,
    step_fc2: Linear,
    null: ParamId,
    pos: ParamId,
    blocks: Vec<BlockParams>,
    // indexed by consuming block; `None` where no projection is needed
    skips: Vec<Option<Linear>>,
    head: Linear,
}

/// Intermediate nodes of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `(B·(L+1))×d` embedded tokens, condition token first in each sequence.
    pub tokens: Var,
    /// Output of every block, in order.
    pub block_outputs: Vec<Var>,
    /// `(B·L)×3J` predicted noise.
    pub output: Var,
}

/// SE-Transformer noise predictor with long skip connections.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    config: DenoiserConfig,
    params: ParamStore,
    layout: Layout,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: SeededRng,
}

impl Init<'_> {
    fn tensor(&mut self, name: String, t: Tensor) -> Result<ParamId> {
        self.store.register(name, t)
    }

    /// Weight uniform in `±1/√fan_in`, zero bias.
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<Linear> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = rng::uniform_vec(&mut self.rng, fan_in * fan_out, -bound, bound);
        Ok(Linear {
            weight: self.tensor(format!("{name}.weight"), Tensor::new([fan_in, fan_out], w)?)?,
            bias: self.tensor(format!("{name}.bias"), Tensor::zeros([fan_out]))?,
        })
    }

    fn zero_linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<Linear> {
        Ok(Linear {
            weight: self.tensor(format!("{name}.weight"), Tensor::zeros([fan_in, fan_out]))?,
            bias: self.tensor(format!("{name}.bias"), Tensor::zeros([fan_out]))?,
        })
    }

    fn norm(&mut self, name: &str, d: usize) -> Result<Norm> {
        Ok(Norm {
            gain: self.tensor(format!("{name}.gain"), Tensor::full([d], 1.0))?,
            bias: self.tensor(format!("{name}.bias"), Tensor::zeros([d]))?,
        })
    }

    fn small_normal(&mut self, name: &str, shape: [usize; 2]) -> Result<ParamId> {
        let v = rng::normal_vec(&mut self.rng, shape[0] * shape[1])
            .into_iter()
            .map(|x| 0.02 * x)
            .collect();
        self.tensor(name.to_string(), Tensor::new(shape, v)?)
    }
}

impl Denoiser {
    pub fn new(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let layout = {
            let mut init = Init {
                store: &mut params,
                rng: rng::seeded(config.init_seed),
            };
            Self::build_layout(&config, &mut init)?
        };
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    fn build_layout(c: &DenoiserConfig, init: &mut Init<'_>) -> Result<Layout> {
        let d = c.hidden;
        let tokens = init.linear("embed.tokens", c.features, d)?;
        let history_in = match c.cond_pool {
            CondPool::Flat => c.coeff_rows * c.features,
            CondPool::Mean | CondPool::Sum => c.features,
        };
        let history = init.linear("embed.history", history_in, d)?;
        let step_fc1 = init.linear("cond.step_mlp.0", c.step_dim, d)?;
        let step_fc2 = init.linear("cond.step_mlp.2", d, d)?;
        let null = init.small_normal("cond.null", [1, d])?;
        let pos = init.small_normal("pos_embed", [c.tokens(), d])?;

        let mut blocks = Vec::with_capacity(c.layers);
        for i in 0..c.layers {
            let p = format!("blocks.{i}");
            let se = if c.use_se {
                Some((
                    init.linear(&format!("{p}.se.fc1"), d, c.se_width())?,
                    init.linear(&format!("{p}.se.fc2"), c.se_width(), d)?,
                ))
            } else {
                None
            };
            blocks.push(BlockParams {
                se,
                norm1: init.norm(&format!("{p}.norm1"), d)?,
                q: init.linear(&format!("{p}.attn.q_proj"), d, d)?,
                k: init.linear(&format!("{p}.attn.k_proj"), d, d)?,
                v: init.linear(&format!("{p}.attn.v_proj"), d, d)?,
                out: init.linear(&format!("{p}.attn.out_proj"), d, d)?,
                norm2: init.norm(&format!("{p}.norm2"), d)?,
                fc1: init.linear(&format!("{p}.ffn.fc1"), d, c.ffn)?,
                fc2: init.linear(&format!("{p}.ffn.fc2"), c.ffn, d)?,
            });
        }

        let mut skips = vec![None; c.layers];
        if c.skip == SkipMode::Concat {
            for i in c.layers - c.skip_pairs()..c.layers {
                skips[i] = Some(init.linear(&format!("skips.{i}"), 2 * d, d)?);
            }
        }
        let head = init.zero_linear("head", d, c.features)?;
        Ok(Layout {
            tokens,
            history,
            step_fc1,
            step_fc2,
            null,
            pos,
            blocks,
            skips,
            head,
        })
    }

    /// Rebuilds a model around an existing store, e.g. from a checkpoint.
    pub fn from_params(config: DenoiserConfig, params: ParamStore) -> Result<Self> {
        let fresh = Self::new(config.clone())?;
        if fresh.params.len() != params.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                fresh.params.len(),
                params.len()
            )));
        }
        for ((name, t), (fname, ft)) in params.iter().zip(fresh.params.iter()) {
            if name != fname || t.shape() != ft.shape() {
                return Err(Error::Format(format!(
                    "tensor `{name}` {:?} does not match expected `{fname}` {:?}",
                    t.shape(),
                    ft.shape()
                )));
            }
        }
        Ok(Self {
            config,
            params,
            layout: fresh.layout,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    fn check_batch(&self, batch: &DenoiseBatch) -> Result<()> {
        let b = batch.len();
        let (l, w) = (self.config.coeff_rows, self.config.features);
        for (name, t) in [("noisy", &batch.noisy), ("cond", &batch.cond)] {
            if t.shape() != [b * l, w] {
                return Err(Error::dim(format!(
                    "{name} input {:?}, expected [{}, {w}]",
                    t.shape(),
                    b * l
                )));
            }
        }
        if batch.use_null.len() != b || b == 0 {
            return Err(Error::dim(
                "steps and use_null must be non-empty and equal length",
            ));
        }
        Ok(())
    }

    /// Condition token plus `L` coefficient tokens per sequence, with
    /// positional embeddings: `(B·(L+1))×d`.
    pub fn embed_tokens(&self, g: &mut Graph<'_>, batch: &DenoiseBatch) -> Result<Var> {
        self.check_batch(batch)?;
        let c = &self.config;
        let (b, l) = (batch.len(), c.coeff_rows);
        let lay = &self.layout;

        let noisy = g.constant(batch.noisy.clone());
        let tokens = lay.tokens.apply(g, noisy)?;

        let pooled = match c.cond_pool {
            CondPool::Flat => {
                let flat = Tensor::new([b, l * c.features], batch.cond.data().to_vec())?;
                let cond_in = g.constant(flat);
                lay.history.apply(g, cond_in)?
            }
            CondPool::Mean | CondPool::Sum => {
                let cond_in = g.constant(batch.cond.clone());
                let hist = lay.history.apply(g, cond_in)?;
                let mean = g.segment_mean(hist, l)?;
                if c.cond_pool == CondPool::Sum {
                    g.scale(mean, l as f64)
                } else {
                    mean
                }
            }
        };
        let null = g.param(lay.null);
        let null_rows = g.gather_rows(null, vec![0; b])?;
        let history = g.select_rows(null_rows, pooled, batch.use_null.clone())?;

        let enc = g.constant(step_encoding(&batch.steps, c.step_dim));
        let s = lay.step_fc1.apply(g, enc)?;
        let s = g.silu(s);
        let step = lay.step_fc2.apply(g, s)?;
        let cond = g.add(step, history)?;

        let stacked = g.concat_rows(cond, tokens)?;
        let order: Vec<usize> = (0..b)
            .flat_map(|i| std::iter::once(i).chain((0..l).map(move |k| b + i * l + k)))
            .collect();
        let seq = g.gather_rows(stacked, order)?;
        let pos = g.param(lay.pos);
        let pos_rows = g.gather_rows(pos, (0..b).flat_map(|_| 0..l + 1).collect())?;
        g.add(seq, pos_rows)
    }

    /// Squeeze-and-excitation: per-sequence channel means gate every token.
    pub fn se_block(&self, g: &mut Graph<'_>, block: usize, h: Var) -> Result<Var> {
        let Some((fc1, fc2)) = self.layout.blocks[block].se else {
            return Ok(h);
        };
        let n = self.config.tokens();
        let s = g.segment_mean(h, n)?;
        let z = fc1.apply(g, s)?;
        let z = g.relu(z);
        let z = fc2.apply(g, z)?;
        let gate = g.sigmoid(z);
        g.segment_scale(h, gate, n)
    }

    /// SE → pre-norm multi-head self-attention → pre-norm FFN, with residuals
    /// around attention and FFN.
    pub fn transformer_block(&self, g: &mut Graph<'_>, block: usize, h: Var) -> Result<Var> {
        let p = &self.layout.blocks[block];
        let n = self.config.tokens();
        let h1 = self.se_block(g, block, h)?;

        let a = p.norm1.apply(g, h1)?;
        let q = p.q.apply(g, a)?;
        let k = p.k.apply(g, a)?;
        let v = p.v.apply(g, a)?;
        let att = g.attention(q, k, v, n, self.config.heads)?;
        let att = p.out.apply(g, att)?;
        let h2 = g.add(h1, att)?;

        let f = p.norm2.apply(g, h2)?;
        let f = p.fc1.apply(g, f)?;
        let f = g.gelu(f);
        let f = p.fc2.apply(g, f)?;
        g.add(h2, f)
    }

    /// Merges a stashed shallow output into the input of deep block `block`.
    pub fn skip_fuse(&self, g: &mut Graph<'_>, block: usize, deep: Var, skip: Var) -> Result<Var> {
        if g.shape(deep) != g.shape(skip) {
            return Err(Error::dim(format!(
                "skip shapes {:?} and {:?} differ",
                g.shape(deep),
                g.shape(skip)
            )));
        }
        match (self.config.skip, self.layout.skips[block]) {
            (SkipMode::Concat, Some(lin)) => {
                let cat = g.concat_cols(deep, skip)?;
                lin.apply(g, cat)
            }
            (SkipMode::Add, _) => g.add(deep, skip),
            _ => Ok(deep),
        }
    }

    /// Full pass, keeping every block output.
    pub fn forward_traced(&self, g: &mut Graph<'_>, batch: &DenoiseBatch) -> Result<ForwardTrace> {
        let c = &self.config;
        let tokens = self.embed_tokens(g, batch)?;
        g.ensure_finite(tokens, "token embedding")?;

        let pairs = c.skip_pairs();
        let mut stash = Vec::with_capacity(pairs);
        let mut outputs = Vec::with_capacity(c.layers);
        let mut h = tokens;
        for i in 0..c.layers {
            if i >= c.layers - pairs {
                let skip = stash.pop().expect("one stashed output per deep block");
                h = self.skip_fuse(g, i, h, skip)?;
            }
            h = self.transformer_block(g, i, h)?;
            g.ensure_finite(h, &format!("block {}", i + 1))?;
            if i < pairs {
                stash.push(h);
            }
            outputs.push(h);
        }

        let (b, l) = (batch.len(), c.coeff_rows);
        let keep: Vec<usize> = (0..b)
            .flat_map(|i| (1..=l).map(move |k| i * (l + 1) + k))
            .collect();
        let coeff_tokens = g.gather_rows(h, keep)?;
        let output = self.layout.head.apply(g, coeff_tokens)?;
        g.ensure_finite(output, "output projection")?;
        Ok(ForwardTrace {
            tokens,
            block_outputs: outputs,
            output,
        })
    }
}

impl Denoise for Denoiser {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn forward(&self, g: &mut Graph<'_>, batch: &DenoiseBatch) -> Result<Var> {
        Ok(self.forward_traced(g, batch)?.output)
    }
}

/// Sinusoidal step encoding: `[sin(t·ω_i) …, cos(t·ω_i) …]`,
/// `ω_i = 10000^(−i/(dim/2))`.
pub fn step_encoding(steps: &[usize], dim: usize) -> Tensor {
    let half = dim / 2;
    let mut out = Tensor::zeros([steps.len(), dim]);
    for (r, &t) in steps.iter().enumerate() {
        let row = out.row_mut(r);
        for i in 0..half {
            let w = (-(10000f64.ln()) * i as f64 / half as f64).exp();
            let a = t as f64 * w;
            row[i] = a.sin();
            row[half + i] = a.cos();
        }
    }
    out
}
