//! The enhancer network: dual CBAM encoders over the image and its band
//! maps, bidirectional attention fusion, and the two gamma heads.

mod layers;
mod fusion;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfae_autodiff::{Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::kv::KeyValues;

pub use fusion::{cross_fusion, from_tokens, gamma_heads, mha, mha_with_weights, to_tokens, GammaVars};
pub use layers::{cbam, cbam_resblock, freq_cbam_resblock, freq_encoder, spatial_encoder};

/// Smallest spatial side the network accepts: the deepest feature map is
/// `H/8 × W/8` and instance norm needs more than one position.
pub const MIN_SIDE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub n_bands: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub mha_heads: usize,
    pub ffn_expansion: usize,
    pub gamma_max: f64,
    pub f_max: f64,
    pub norm_eps: f64,
    pub pow_eps: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            n_bands: 8,
            in_channels: 4,
            height: 64,
            width: 64,
            mha_heads: 4,
            ffn_expansion: 4,
            gamma_max: 4.0,
            f_max: 0.5,
            norm_eps: 1e-5,
            pow_eps: 1e-6,
        }
    }
}

impl NetConfig {
    /// Embedding width shared by both feature streams.
    pub fn d_model(&self) -> usize {
        self.n_bands * self.in_channels
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_bands == 0 || self.in_channels == 0 || self.mha_heads == 0 || self.ffn_expansion == 0 {
            return bad("bands, channels, heads and ffn expansion must be positive".into());
        }
        if !self.d_model().is_multiple_of(self.mha_heads) {
            return bad(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model(),
                self.mha_heads
            ));
        }
        self.check_size(self.height, self.width)?;
        if !(self.gamma_max > 1.0 && self.gamma_max.is_finite()) {
            return bad(format!("gamma_max {} must exceed 1", self.gamma_max));
        }
        if !(self.pow_eps > 0.0 && self.norm_eps > 0.0) {
            return bad("epsilons must be positive".into());
        }
        if !(self.f_max > 0.0 && self.f_max <= 0.5 * std::f64::consts::SQRT_2) {
            return bad(format!("f_max {} outside (0, √0.5]", self.f_max));
        }
        Ok(())
    }

    /// Whether an `h × w` input can run through the network unpadded.
    pub fn check_size(&self, h: usize, w: usize) -> Result<()> {
        if !h.is_multiple_of(8) || !w.is_multiple_of(8) || h < MIN_SIDE || w < MIN_SIDE {
            return Err(Error::Config(format!(
                "spatial size {h}x{w} must be a multiple of 8 and at least {MIN_SIDE}"
            )));
        }
        Ok(())
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.insert("net.n_bands", self.n_bands);
        kv.insert("net.in_channels", self.in_channels);
        kv.insert("net.height", self.height);
        kv.insert("net.width", self.width);
        kv.insert("net.mha_heads", self.mha_heads);
        kv.insert("net.ffn_expansion", self.ffn_expansion);
        kv.insert("net.gamma_max", self.gamma_max);
        kv.insert("net.f_max", self.f_max);
        kv.insert("net.norm_eps", self.norm_eps);
        kv.insert("net.pow_eps", self.pow_eps);
    }

    /// Read `net.*` keys, defaulting absent ones.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = NetConfig::default();
        let cfg = NetConfig {
            n_bands: kv.parse_or("net.n_bands", d.n_bands)?,
            in_channels: kv.parse_or("net.in_channels", d.in_channels)?,
            height: kv.parse_or("net.height", d.height)?,
            width: kv.parse_or("net.width", d.width)?,
            mha_heads: kv.parse_or("net.mha_heads", d.mha_heads)?,
            ffn_expansion: kv.parse_or("net.ffn_expansion", d.ffn_expansion)?,
            gamma_max: kv.parse_or("net.gamma_max", d.gamma_max)?,
            f_max: kv.parse_or("net.f_max", d.f_max)?,
            norm_eps: kv.parse_or("net.norm_eps", d.norm_eps)?,
            pow_eps: kv.parse_or("net.pow_eps", d.pow_eps)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum InitKind {
    /// Uniform in `±√(1 / fan_in)`.
    Uniform { fan_in: usize },
    /// Like `Uniform`, but zero under the default scheme.
    Gate { fan_in: usize },
    NormScale,
    NormShift,
}

#[derive(Debug, Clone)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: InitKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitScheme {
    /// CBAM gate outputs and gamma-head final layers start at zero, so the
    /// network is an exact identity enhancer.
    #[default]
    Standard,
    /// Every tensor random, norm affines perturbed; no parameter sits at a
    /// symmetric point.
    FullyRandom,
}

/// Every parameter of the network, in forward order.
pub(crate) fn layout(cfg: &NetConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    layers::spatial_encoder_layout(&mut specs, cfg);
    layers::freq_encoder_layout(&mut specs, cfg);
    fusion::fusion_layout(&mut specs, cfg);
    fusion::heads_layout(&mut specs, cfg);
    specs
}

/// Named parameter tensors with a fixed iteration order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl NetParams {
    pub fn new(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut names = Vec::with_capacity(entries.len());
        let mut tensors = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (name, t)) in entries.into_iter().enumerate() {
            if !t.is_finite() {
                return Err(Error::Config(format!("parameter `{name}` is not finite")));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate parameter `{name}`")));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(NetParams {
            names,
            tensors,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
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

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total scalar count.
    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Record every parameter as a trainable leaf on `tape`.
    pub fn bind<'a, 't>(&'a self, tape: &'t Tape) -> Bound<'a, 't> {
        let vars = self.tensors.iter().map(|t| tape.param(t.clone())).collect();
        Bound { params: self, vars }
    }

    /// Check that these parameters have exactly the shapes `cfg` needs.
    pub fn check_against(&self, cfg: &NetConfig) -> Result<()> {
        let specs = layout(cfg);
        if specs.len() != self.len() {
            return Err(Error::Config(format!(
                "configuration needs {} parameter tensors, found {}",
                specs.len(),
                self.len()
            )));
        }
        for s in &specs {
            match self.get(&s.name) {
                None => return Err(Error::Config(format!("missing parameter `{}`", s.name))),
                Some(t) if t.shape() != s.shape.as_slice() => {
                    return Err(Error::Config(format!(
                        "parameter `{}` has shape {:?}, configuration needs {:?}",
                        s.name,
                        t.shape(),
                        s.shape
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Parameters recorded on one tape.
pub struct Bound<'a, 't> {
    params: &'a NetParams,
    vars: Vec<Var<'t>>,
}

impl<'a, 't> Bound<'a, 't> {
    /// Use existing tape variables, in `params` order, as the parameters.
    pub fn from_vars(params: &'a NetParams, vars: Vec<Var<'t>>) -> Result<Self> {
        if vars.len() != params.len() {
            return Err(Error::Config(format!(
                "{} variables for {} parameters",
                vars.len(),
                params.len()
            )));
        }
        Ok(Bound { params, vars })
    }

    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.params
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn params(&self) -> &'a NetParams {
        self.params
    }
}

pub fn init_params(cfg: &NetConfig, seed: u64) -> Result<NetParams> {
    init_params_with(cfg, seed, InitScheme::Standard)
}

/// Deterministic initialization. Both schemes draw the same random stream,
/// so they differ only in the tensors the standard scheme pins.
pub fn init_params_with(cfg: &NetConfig, seed: u64, scheme: InitScheme) -> Result<NetParams> {
    cfg.validate()?;
    init_specs(layout(cfg), seed, scheme)
}

fn init_specs(specs: Vec<ParamSpec>, seed: u64, scheme: InitScheme) -> Result<NetParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random = scheme == InitScheme::FullyRandom;
    let entries = specs
        .into_iter()
        .map(|s| {
            let t = match s.kind {
                InitKind::Uniform { fan_in } | InitKind::Gate { fan_in } => {
                    let bound = (1.0 / fan_in as f64).sqrt();
                    let t = Tensor::from_fn(&s.shape, |_| rng.random_range(-bound..=bound));
                    if matches!(s.kind, InitKind::Gate { .. }) && !random {
                        Tensor::zeros(&s.shape)
                    } else {
                        t
                    }
                }
                InitKind::NormScale => {
                    let t = Tensor::from_fn(&s.shape, |_| 1.0 + rng.random_range(-0.5..0.5));
                    if random {
                        t
                    } else {
                        Tensor::ones(&s.shape)
                    }
                }
                InitKind::NormShift => {
                    let t = Tensor::from_fn(&s.shape, |_| rng.random_range(-0.5..0.5));
                    if random {
                        t
                    } else {
                        Tensor::zeros(&s.shape)
                    }
                }
            };
            (s.name, t)
        })
        .collect();
    NetParams::new(entries)
}

/// A standalone building block, for exercising layers in isolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Cbam { channels: usize },
    ResBlock { cin: usize, cout: usize, stride: usize },
    FreqBlock { channels: usize, groups: usize },
    Mha { d: usize },
}

/// Parameters of one [`Block`], named under the prefix `block`.
pub fn block_params(block: Block, seed: u64, scheme: InitScheme) -> Result<NetParams> {
    let mut specs = Vec::new();
    match block {
        Block::Cbam { channels } => layers::cbam_layout(&mut specs, "block", channels),
        Block::ResBlock { cin, cout, stride } => layers::resblock_layout(&mut specs, "block", cin, cout, stride),
        Block::FreqBlock { channels, groups } => {
            if groups == 0 || channels % groups != 0 {
                return Err(Error::Config(format!("{channels} channels in {groups} groups")));
            }
            layers::freq_block_layout(&mut specs, "block", channels, groups)
        }
        Block::Mha { d } => fusion::mha_layout(&mut specs, "block", d),
    }
    init_specs(specs, seed, scheme)
}

/// Fail with the stage name if a forward activation went non-finite.
/// Active in debug builds only.
pub(crate) fn check_stage(stage: &'static str, v: Var<'_>) -> Result<()> {
    if cfg!(debug_assertions) && !v.value().is_finite() {
        return Err(Error::NonFinite {
            stage,
            detail: format!("activation of shape {:?}", v.shape()),
        });
    }
    Ok(())
}

/// Outputs of one network forward pass.
pub struct NetOutputs<'t> {
    pub z_spa: Var<'t>,
    pub z_freq: Var<'t>,
    pub z_spa_fused: Var<'t>,
    pub z_freq_fused: Var<'t>,
    pub gammas: GammaVars<'t>,
}

/// Image `[B, C, H, W]` and stacked bands `[B, N·C, H, W]` to gammas.
pub fn forward<'t>(
    p: &Bound<'_, 't>,
    cfg: &NetConfig,
    image: Var<'t>,
    bands: Var<'t>,
) -> Result<NetOutputs<'t>> {
    let z_spa = spatial_encoder(p, cfg, image)?;
    let z_freq = freq_encoder(p, cfg, bands)?;
    let (z_spa_fused, z_freq_fused) = cross_fusion(p, cfg, z_spa, z_freq)?;
    let gammas = gamma_heads(p, cfg, z_spa_fused, z_freq_fused)?;
    Ok(NetOutputs {
        z_spa,
        z_freq,
        z_spa_fused,
        z_freq_fused,
        gammas,
    })
}
