//! Parameter layout and initialization.
//!
//! Parameters live in one flat, ordered list of named tensors so the
//! optimizer and checkpoint code can treat them uniformly. The typed
//! [`Layout`] maps each architectural role to its slot in that list. Both
//! are pure functions of [`ModelConfig`].

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Index of a tensor in [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
    Glorot,
    Ones,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Debug, Clone, Copy)]
pub struct NormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

/// Per-modality alignment: layer norm over the input width, projection to
/// the aligned width, and a `seq_len × tokens` sequence resampler.
#[derive(Debug, Clone, Copy)]
pub struct AlignParams {
    pub norm: NormParams,
    pub projection: ParamId,
    pub resample: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct CrossHeadParams {
    pub w_vq: ParamId,
    pub w_vk: ParamId,
    pub w_vv: ParamId,
    pub w_tq: ParamId,
    pub w_tk: ParamId,
    pub w_tv: ParamId,
}

#[derive(Debug, Clone)]
pub struct McamParams {
    pub heads: Vec<CrossHeadParams>,
    pub norm_visual: NormParams,
    pub norm_textual: NormParams,
    pub norm_fused: NormParams,
}

#[derive(Debug, Clone, Copy)]
pub struct SelfHeadParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
}

#[derive(Debug, Clone)]
pub struct MsaBlockParams {
    pub norm: NormParams,
    pub heads: Vec<SelfHeadParams>,
}

#[derive(Debug, Clone)]
pub struct SmsamParams {
    pub blocks: Vec<MsaBlockParams>,
    pub final_norm: NormParams,
}

#[derive(Debug, Clone, Copy)]
pub struct DenseParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Typed view of where every parameter lives.
#[derive(Debug, Clone)]
pub struct Layout {
    pub visual: AlignParams,
    pub textual: AlignParams,
    /// Present when cross attention is enabled.
    pub mcam: Option<McamParams>,
    /// Layer norm of the additive fallback fusion, present when cross
    /// attention is disabled.
    pub simple_fusion: Option<NormParams>,
    pub smsam: Option<SmsamParams>,
    /// Hidden layers followed by the output layer.
    pub ffn: Vec<DenseParams>,
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> ParamId {
        self.specs.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
        });
        ParamId(self.specs.len() - 1)
    }

    fn matrix(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        self.add(name, &[rows, cols], Init::Glorot)
    }

    fn norm(&mut self, prefix: &str, width: usize) -> NormParams {
        NormParams {
            gain: self.add(format!("{prefix}.gain"), &[width], Init::Ones),
            bias: self.add(format!("{prefix}.bias"), &[width], Init::Zeros),
        }
    }

    fn align(&mut self, prefix: &str, tokens: usize, width: usize, c: &ModelConfig) -> AlignParams {
        AlignParams {
            norm: self.norm(&format!("{prefix}.ln"), width),
            projection: self.matrix(format!("{prefix}.projection"), width, c.d_align),
            resample: self.matrix(format!("{prefix}.resample"), c.seq_len, tokens),
        }
    }
}

/// Derives the parameter specs and typed layout for a config.
pub fn layout(config: &ModelConfig) -> Result<(Layout, Vec<ParamSpec>)> {
    config.validate()?;
    let c = config;
    let mut b = Builder { specs: Vec::new() };
    let visual = b.align("align.visual", c.visual_tokens, c.d_visual_in, c);
    let textual = b.align("align.textual", c.textual_tokens, c.d_textual_in, c);

    let (mcam, simple_fusion) = if c.enable_mcam {
        let heads = (0..c.heads)
            .map(|h| {
                let p = format!("mcam.head{h}");
                CrossHeadParams {
                    w_vq: b.matrix(format!("{p}.w_vq"), c.d_align, c.d_key),
                    w_vk: b.matrix(format!("{p}.w_vk"), c.d_align, c.d_key),
                    w_vv: b.matrix(format!("{p}.w_vv"), c.d_align, c.d_value),
                    w_tq: b.matrix(format!("{p}.w_tq"), c.d_align, c.d_key),
                    w_tk: b.matrix(format!("{p}.w_tk"), c.d_align, c.d_key),
                    w_tv: b.matrix(format!("{p}.w_tv"), c.d_align, c.d_value),
                }
            })
            .collect();
        let mcam = McamParams {
            heads,
            norm_visual: b.norm("mcam.ln_visual", c.d_align),
            norm_textual: b.norm("mcam.ln_textual", c.d_align),
            norm_fused: b.norm("mcam.ln_fused", c.d_align),
        };
        (Some(mcam), None)
    } else {
        (None, Some(b.norm("fusion.ln", c.d_align)))
    };

    let d_vt = c.d_fused();
    let smsam = c.enable_smsam.then(|| {
        let blocks = (0..c.depth_smsam)
            .map(|l| MsaBlockParams {
                norm: b.norm(&format!("smsam.block{l}.ln"), d_vt),
                heads: (0..c.heads)
                    .map(|h| {
                        let p = format!("smsam.block{l}.head{h}");
                        SelfHeadParams {
                            w_q: b.matrix(format!("{p}.w_q"), d_vt, c.d_key),
                            w_k: b.matrix(format!("{p}.w_k"), d_vt, c.d_key),
                            w_v: b.matrix(format!("{p}.w_v"), d_vt, c.d_value),
                        }
                    })
                    .collect(),
            })
            .collect();
        SmsamParams {
            blocks,
            final_norm: b.norm("smsam.ln_final", d_vt),
        }
    });

    let mut ffn = Vec::new();
    let mut width = d_vt;
    for (i, &hidden) in c.ffn_hidden.iter().enumerate() {
        ffn.push(DenseParams {
            weight: b.matrix(format!("ffn.hidden{i}.weight"), width, hidden),
            bias: b.add(format!("ffn.hidden{i}.bias"), &[hidden], Init::Zeros),
        });
        width = hidden;
    }
    ffn.push(DenseParams {
        weight: b.matrix("ffn.output.weight".into(), width, c.n_genres),
        bias: b.add("ffn.output.bias".into(), &[c.n_genres], Init::Zeros),
    });

    let layout = Layout {
        visual,
        textual,
        mcam,
        simple_fusion,
        smsam,
        ffn,
    };
    Ok((layout, b.specs))
}

/// All learnable tensors of one model, in layout order.
#[derive(Debug, Clone)]
pub struct ModelParams {
    config: ModelConfig,
    layout: Layout,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Glorot-uniform matrices, unit gains, zero biases; deterministic in `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let (layout, specs) = layout(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs
            .iter()
            .map(|spec| match spec.init {
                Init::Ones => Tensor::ones(&spec.shape),
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::Glorot => {
                    let (fan_in, fan_out) = (spec.shape[0], spec.shape[1]);
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                    let data = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
                    Tensor::new(spec.shape.clone(), data).expect("spec shape")
                }
            })
            .collect();
        Ok(ModelParams {
            config: config.clone(),
            layout,
            names: specs.into_iter().map(|s| s.name).collect(),
            tensors,
        })
    }

    /// Rebuilds a parameter set from named tensors, auditing names and shapes
    /// against the layout of `config`.
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let (layout, specs) = layout(config)?;
        if named.len() != specs.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                named.len()
            )));
        }
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (spec, (name, t)) in specs.iter().zip(named) {
            if spec.name != name || spec.shape != t.shape() {
                return Err(Error::Format(format!(
                    "parameter {name} {:?} does not match expected {} {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(ModelParams {
            config: config.clone(),
            layout,
            names,
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Checks every tensor against the shapes derived from the config.
    pub fn audit(&self) -> Result<()> {
        let (_, specs) = layout(&self.config)?;
        let mut problems = Vec::new();
        if specs.len() != self.tensors.len() {
            problems.push(format!("{} tensors, layout has {}", self.tensors.len(), specs.len()));
        }
        for (spec, (name, t)) in specs.iter().zip(self.iter()) {
            if spec.name != name || spec.shape != t.shape() {
                problems.push(format!("{name} {:?} vs {} {:?}", t.shape(), spec.name, spec.shape));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Records every parameter on `tape`, trainable or constant.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        BoundParams { vars }
    }
}

/// Parameters recorded on a tape, addressable by [`ParamId`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Scalar parameter count implied by a config, without allocating tensors.
pub fn parameter_count(config: &ModelConfig) -> Result<usize> {
    let (_, specs) = layout(config)?;
    Ok(specs.iter().map(|s| s.shape.iter().product::<usize>()).sum())
}
