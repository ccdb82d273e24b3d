//! The gradient-check suite: every differentiable op, every network block,
//! the training loss, and the whole enhancement pipeline, each checked
//! against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfae_autodiff::{
    conv2d, gradcheck, instance_norm, layer_norm, Conv2dParams, ExecMode, GradCheckOptions,
    GradCheckReport, Tape, Tensor, TensorError, Var,
};

use crate::error::Result;
use crate::freq::{band_boundaries, decompose};
use crate::net::{
    block_params, cbam, cbam_resblock, cross_fusion, freq_cbam_resblock, gamma_heads,
    init_params_with, mha, Block, Bound, InitScheme, NetConfig, NetParams,
};
use crate::pipeline::{enhance_on_tape, safe_pow};
use crate::train::{loss, LossWeights};

/// Finite-difference step and pass threshold of every suite entry.
pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn lift<T>(r: Result<T>) -> sfae_autodiff::Result<T> {
    r.map_err(|e| TensorError::Invalid {
        op: "suite",
        msg: e.to_string(),
    })
}

/// Contract with fixed weights so every output element matters.
fn contract<'t>(tape: &'t Tape, y: Var<'t>, seed: u64) -> sfae_autodiff::Result<Var<'t>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, &y.shape(), -1.0, 1.0);
    y.mul(tape.constant(w))?.sum_all()
}

struct Suite {
    opts: GradCheckOptions,
    entries: Vec<SuiteEntry>,
}

impl Suite {
    fn run<F>(&mut self, name: &str, inputs: &[Tensor], coords: Option<usize>, f: F) -> Result<()>
    where
        F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> sfae_autodiff::Result<Var<'t>> + Sync,
    {
        let opts = GradCheckOptions {
            max_coords_per_input: coords,
            ..self.opts.clone()
        };
        let report = gradcheck(f, inputs, &opts)?;
        log::info!("{name}: max rel err {:.3e} over {} coords", report.max_rel_err, report.checked);
        self.entries.push(SuiteEntry {
            name: name.to_string(),
            report,
        });
        Ok(())
    }

    /// Parameters of `params` first, then `extra`; `f` sees the extras only.
    fn run_params<F>(&mut self, name: &str, params: &NetParams, extra: &[Tensor], coords: Option<usize>, f: F) -> Result<()>
    where
        F: for<'t> Fn(&'t Tape, &Bound<'_, 't>, &[Var<'t>]) -> Result<Var<'t>> + Sync,
    {
        let n = params.len();
        let mut inputs = params.tensors().to_vec();
        inputs.extend_from_slice(extra);
        self.run(name, &inputs, coords, |tape, v| {
            let bound = lift(Bound::from_vars(params, v[..n].to_vec()))?;
            let y = lift(f(tape, &bound, &v[n..]))?;
            contract(tape, y, 7)
        })
    }
}

fn op_checks(s: &mut Suite, rng: &mut ChaCha8Rng) -> Result<()> {
    let a = random(rng, &[2, 3, 4], 0.5, 2.0);
    let b = random(rng, &[3, 1], 0.5, 2.0);
    s.run("op add", &[a.clone(), b.clone()], None, |t, v| contract(t, v[0].add(v[1])?, 1))?;
    s.run("op sub", &[a.clone(), b.clone()], None, |t, v| contract(t, v[0].sub(v[1])?, 1))?;
    s.run("op mul", &[a.clone(), b.clone()], None, |t, v| contract(t, v[0].mul(v[1])?, 1))?;
    s.run("op div", &[a.clone(), b.clone()], None, |t, v| contract(t, v[0].div(v[1])?, 1))?;
    s.run("op pow", &[a, b], None, |t, v| contract(t, v[0].pow(v[1])?, 1))?;

    let x = random(rng, &[3, 5], -2.0, 2.0);
    let pos = random(rng, &[3, 5], 0.2, 2.0);
    s.run("op abs", &[x.clone()], None, |t, v| contract(t, v[0].abs(), 2))?;
    s.run("op clamp", &[x.clone()], None, |t, v| contract(t, v[0].clamp(-0.5, 0.7), 2))?;
    s.run("op exp", &[x.clone()], None, |t, v| contract(t, v[0].exp(), 2))?;
    s.run("op ln", &[pos], None, |t, v| contract(t, v[0].ln(), 2))?;
    s.run("op selu", &[x.clone()], None, |t, v| contract(t, v[0].selu(), 2))?;
    s.run("op sigmoid", &[x.clone()], None, |t, v| contract(t, v[0].sigmoid(), 2))?;
    s.run("op tanh", &[x.clone()], None, |t, v| contract(t, v[0].tanh(), 2))?;
    s.run("op softmax", &[x.clone()], None, |t, v| contract(t, v[0].softmax(), 2))?;
    s.run("op mean/max", &[x], None, |t, v| {
        contract(t, v[0].mean(&[0], true)?.add(v[0].max(&[0], true)?)?, 2)
    })?;

    let a = random(rng, &[2, 3, 4], -1.0, 1.0);
    let b = random(rng, &[4, 5], -1.0, 1.0);
    s.run("op matmul", &[a, b], None, |t, v| contract(t, v[0].matmul(v[1])?, 3))?;

    let x = random(rng, &[2, 3, 8, 8], -1.0, 1.0);
    let w = random(rng, &[4, 3, 3, 3], -0.5, 0.5);
    let bias = random(rng, &[4], -0.5, 0.5);
    s.run("op conv2d", &[x, w, bias], None, |t, v| {
        contract(t, conv2d(v[0], v[1], Some(v[2]), Conv2dParams::new(1, 1, 1))?, 4)
    })?;
    let x = random(rng, &[1, 4, 7, 6], -1.0, 1.0);
    let w = random(rng, &[6, 2, 3, 3], -0.5, 0.5);
    s.run("op conv2d strided grouped", &[x, w], None, |t, v| {
        contract(t, conv2d(v[0], v[1], None, Conv2dParams::new(2, 1, 2))?, 4)
    })?;

    let x = random(rng, &[2, 3, 4, 4], -1.0, 1.0);
    let g = random(rng, &[3], 0.5, 1.5);
    let b = random(rng, &[3], -0.5, 0.5);
    s.run("op instance_norm", &[x, g, b], None, |t, v| {
        contract(t, instance_norm(v[0], Some(v[1]), Some(v[2]), 1e-5)?, 5)
    })?;
    let x = random(rng, &[2, 3, 6], -1.0, 1.0);
    let g = random(rng, &[6], 0.5, 1.5);
    let b = random(rng, &[6], -0.5, 0.5);
    s.run("op layer_norm", &[x, g, b], None, |t, v| {
        contract(t, layer_norm(v[0], Some(v[1]), Some(v[2]), 1e-5)?, 5)
    })?;

    let x = random(rng, &[2, 2, 3, 3], -1.0, 1.0);
    let gamma = random(rng, &[2, 2, 1, 1], 0.3, 3.0);
    s.run("safe_pow", &[x, gamma], None, |t, v| contract(t, lift(safe_pow(v[0], v[1], 1e-6))?, 6))?;
    Ok(())
}

fn block_checks(s: &mut Suite, rng: &mut ChaCha8Rng, seed: u64) -> Result<()> {
    let scheme = InitScheme::FullyRandom;
    let p = block_params(Block::Cbam { channels: 8 }, seed, scheme)?;
    let x = random(rng, &[2, 8, 5, 6], -1.0, 1.0);
    s.run_params("cbam", &p, &[x], None, |_, p, v| cbam(p, "block", v[0]))?;

    let p = block_params(Block::ResBlock { cin: 3, cout: 4, stride: 2 }, seed, scheme)?;
    let x = random(rng, &[1, 3, 8, 8], -1.0, 1.0);
    s.run_params("cbam resblock", &p, &[x], None, |_, p, v| cbam_resblock(p, "block", v[0], 2, 1e-5))?;

    let p = block_params(Block::FreqBlock { channels: 4, groups: 2 }, seed, scheme)?;
    let x = random(rng, &[1, 4, 8, 8], -1.0, 1.0);
    s.run_params("freq cbam resblock", &p, &[x], None, |_, p, v| {
        freq_cbam_resblock(p, "block", v[0], 2, 1e-5)
    })?;

    let p = block_params(Block::Mha { d: 8 }, seed, scheme)?;
    let q = random(rng, &[1, 8, 2, 2], -1.0, 1.0);
    let k = random(rng, &[1, 8, 2, 3], -1.0, 1.0);
    s.run_params("multi-head attention", &p, &[q, k], None, |_, p, v| mha(p, "block", 2, v[0], v[1], v[1]))?;

    let cfg = NetConfig {
        n_bands: 4,
        in_channels: 1,
        height: 16,
        width: 16,
        mha_heads: 2,
        ..NetConfig::default()
    };
    let p = init_params_with(&cfg, seed, scheme)?;
    let zs = random(rng, &[1, 4, 2, 2], -1.0, 1.0);
    let zf = random(rng, &[1, 4, 2, 2], -1.0, 1.0);
    s.run_params("cross fusion", &p, &[zs.clone(), zf.clone()], Some(6), |_, p, v| {
        let (a, b) = cross_fusion(p, &cfg, v[0], v[1])?;
        Ok(a.add(b)?)
    })?;
    s.run_params("gamma heads", &p, &[zs, zf], Some(6), |_, p, v| {
        let g = gamma_heads(p, &cfg, v[0], v[1])?;
        Ok(g.orig.sum_all()?.add(g.freq.sum_all()?)?)
    })?;

    let out = random(rng, &[1, 2, 6, 6], 0.05, 0.95);
    let target = random(rng, &[1, 2, 6, 6], 0.0, 1.0);
    s.run("training loss", &[out], None, move |t, v| {
        let terms = lift(loss(v[0], t.constant(target.clone()), LossWeights::default()))?;
        Ok(terms.loss)
    })?;
    Ok(())
}

/// Gradient of the L1 loss of the enhanced image with respect to every
/// network parameter, on a `1 × C × 16 × 16` input with `N = 4` bands.
fn network_check(s: &mut Suite, rng: &mut ChaCha8Rng, seed: u64, coords: usize) -> Result<()> {
    let cfg = NetConfig {
        n_bands: 4,
        height: 16,
        width: 16,
        ..NetConfig::default()
    };
    let p = init_params_with(&cfg, seed, InitScheme::FullyRandom)?;
    let image = random(rng, &[1, cfg.in_channels, 16, 16], 0.01, 1.0);
    let bands = decompose(&image, &band_boundaries(cfg.n_bands, cfg.f_max)?, ExecMode::Sequential)?.stacked();
    let target = random(rng, &[1, cfg.in_channels, 16, 16], 0.0, 1.0);
    let params = &p;
    s.run("full network 1x4x16x16 N=4", p.tensors(), Some(coords), |t, v| {
        let bound = lift(Bound::from_vars(params, v.to_vec()))?;
        let out = lift(enhance_on_tape(&bound, &cfg, t.constant(image.clone()), &bands))?;
        out.enhanced.sub(t.constant(target.clone()))?.abs().mean_all()
    })
}

/// Run the whole suite. `network_coords` bounds the coordinates sampled per
/// parameter tensor in the full-network check.
pub fn gradient_suite(seed: u64, network_coords: usize, mode: ExecMode) -> Result<Vec<SuiteEntry>> {
    let mut s = Suite {
        opts: GradCheckOptions {
            step: STEP,
            tol: TOLERANCE,
            seed,
            mode,
            ..GradCheckOptions::default()
        },
        entries: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    op_checks(&mut s, &mut rng)?;
    block_checks(&mut s, &mut rng, seed)?;
    network_check(&mut s, &mut rng, seed, network_coords)?;
    Ok(s.entries)
}
