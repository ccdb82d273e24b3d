//! Desk-scale training of the enhancer on synthetic low-light RAW data.

mod adam;
mod checkpoint;
mod loss;

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfae_autodiff::{ExecMode, Tape, Tensor};

use crate::error::{Error, Result};
use crate::freq::{band_boundaries, decompose};
use crate::kv::KeyValues;
use crate::net::{init_params, NetConfig, NetParams};
use crate::pipeline::enhance_on_tape;
use crate::rawio::{entropy, histogram, normalize_pack, skewness, synthesize_raw, NoiseParams};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{CheckpointError, TensorFile, FORMAT_VERSION, MAGIC};
pub use loss::{
    loss, soft_entropy, tonemap_target, LossTerms, LossWeights, SoftHistogram, DISPLAY_GAMMA,
    SOFT_BANDWIDTH_BINS, SOFT_BINS,
};

/// Bins of the evaluation histograms.
pub const EVAL_BINS: usize = 256;

pub const METRICS_HEADER: &str = "step,loss,l1,entropy_bits,gamma_orig_mean,gamma_freq_mean";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Side of the packed 4-channel tensor; frames are twice this size.
    pub image_size: usize,
    pub n_bands: usize,
    pub lambda_recon: f64,
    pub lambda_entropy: f64,
    pub dataset_size: usize,
    pub exposure_min: f64,
    pub exposure_max: f64,
    pub noise_a: f64,
    pub noise_b: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let noise = NoiseParams::default();
        TrainConfig {
            seed: 42,
            steps: 300,
            batch_size: 4,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            image_size: 64,
            n_bands: 8,
            lambda_recon: 1.0,
            lambda_entropy: 0.05,
            dataset_size: 20,
            exposure_min: 0.05,
            exposure_max: 0.15,
            noise_a: noise.a,
            noise_b: noise.b,
        }
    }
}

const TRAIN_KEYS: [&str; 16] = [
    "seed",
    "steps",
    "batch_size",
    "learning_rate",
    "beta1",
    "beta2",
    "adam_eps",
    "image_size",
    "n_bands",
    "lambda_recon",
    "lambda_entropy",
    "dataset_size",
    "exposure_min",
    "exposure_max",
    "noise_a",
    "noise_b",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} outside [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive".into());
        }
        if self.batch_size == 0 || self.dataset_size == 0 {
            return bad("batch_size and dataset_size must be positive".into());
        }
        if self.batch_size > self.dataset_size {
            return bad(format!(
                "batch_size {} exceeds dataset_size {}",
                self.batch_size, self.dataset_size
            ));
        }
        if !(self.exposure_min > 0.0 && self.exposure_min <= self.exposure_max && self.exposure_max <= 1.0) {
            return bad(format!(
                "exposure range [{}, {}] must lie in (0, 1]",
                self.exposure_min, self.exposure_max
            ));
        }
        if self.noise_a < 0.0 || self.noise_b < 0.0 {
            return bad("noise variances must be nonnegative".into());
        }
        if !(self.lambda_recon >= 0.0 && self.lambda_entropy >= 0.0) {
            return bad("loss weights must be nonnegative".into());
        }
        self.net_config().validate()
    }

    /// Network configuration implied by this run: four packed channels at
    /// `image_size`, defaults elsewhere.
    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            n_bands: self.n_bands,
            in_channels: 4,
            height: self.image_size,
            width: self.image_size,
            ..NetConfig::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            recon: self.lambda_recon,
            entropy: self.lambda_entropy,
        }
    }

    pub fn write_kv(&self, kv: &mut KeyValues, prefix: &str) {
        kv.insert(format!("{prefix}seed"), self.seed);
        kv.insert(format!("{prefix}steps"), self.steps);
        kv.insert(format!("{prefix}batch_size"), self.batch_size);
        kv.insert(format!("{prefix}learning_rate"), self.learning_rate);
        kv.insert(format!("{prefix}beta1"), self.beta1);
        kv.insert(format!("{prefix}beta2"), self.beta2);
        kv.insert(format!("{prefix}adam_eps"), self.adam_eps);
        kv.insert(format!("{prefix}image_size"), self.image_size);
        kv.insert(format!("{prefix}n_bands"), self.n_bands);
        kv.insert(format!("{prefix}lambda_recon"), self.lambda_recon);
        kv.insert(format!("{prefix}lambda_entropy"), self.lambda_entropy);
        kv.insert(format!("{prefix}dataset_size"), self.dataset_size);
        kv.insert(format!("{prefix}exposure_min"), self.exposure_min);
        kv.insert(format!("{prefix}exposure_max"), self.exposure_max);
        kv.insert(format!("{prefix}noise_a"), self.noise_a);
        kv.insert(format!("{prefix}noise_b"), self.noise_b);
    }

    /// Read `prefix`-qualified keys, defaulting absent ones.
    pub fn from_kv(kv: &KeyValues, prefix: &str) -> Result<Self> {
        let d = TrainConfig::default();
        let k = |name: &str| format!("{prefix}{name}");
        let cfg = TrainConfig {
            seed: kv.parse_or(&k("seed"), d.seed)?,
            steps: kv.parse_or(&k("steps"), d.steps)?,
            batch_size: kv.parse_or(&k("batch_size"), d.batch_size)?,
            learning_rate: kv.parse_or(&k("learning_rate"), d.learning_rate)?,
            beta1: kv.parse_or(&k("beta1"), d.beta1)?,
            beta2: kv.parse_or(&k("beta2"), d.beta2)?,
            adam_eps: kv.parse_or(&k("adam_eps"), d.adam_eps)?,
            image_size: kv.parse_or(&k("image_size"), d.image_size)?,
            n_bands: kv.parse_or(&k("n_bands"), d.n_bands)?,
            lambda_recon: kv.parse_or(&k("lambda_recon"), d.lambda_recon)?,
            lambda_entropy: kv.parse_or(&k("lambda_entropy"), d.lambda_entropy)?,
            dataset_size: kv.parse_or(&k("dataset_size"), d.dataset_size)?,
            exposure_min: kv.parse_or(&k("exposure_min"), d.exposure_min)?,
            exposure_max: kv.parse_or(&k("exposure_max"), d.exposure_max)?,
            noise_a: kv.parse_or(&k("noise_a"), d.noise_a)?,
            noise_b: kv.parse_or(&k("noise_b"), d.noise_b)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse a standalone config file; unknown keys are rejected.
    pub fn parse_file_text(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        if let Some(k) = kv.keys().find(|k| !TRAIN_KEYS.contains(k)) {
            return Err(Error::Config(format!("unknown training key `{k}`")));
        }
        TrainConfig::from_kv(&kv, "")
    }
}

/// One cached training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Packed normalized RAW `[1, 4, S, S]`.
    pub input: Tensor,
    /// Band-major stack of `input`, `[1, 4N, S, S]`.
    pub bands: Tensor,
    /// Tone-mapped clean scene `[1, 4, S, S]`.
    pub target: Tensor,
    pub exposure: f64,
}

/// The fixed synthetic dataset determined by `cfg.seed`.
pub fn build_dataset(cfg: &TrainConfig, mode: ExecMode) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let draws: Vec<(u64, f64)> = (0..cfg.dataset_size)
        .map(|_| (rng.random(), rng.random_range(cfg.exposure_min..=cfg.exposure_max)))
        .collect();
    let noise = NoiseParams {
        a: cfg.noise_a,
        b: cfg.noise_b,
    };
    let spec = band_boundaries(cfg.n_bands, crate::freq::DEFAULT_F_MAX)?;
    let side = 2 * cfg.image_size;
    mode.map_indexed(draws.len(), |i| -> Result<Sample> {
        let (seed, exposure) = draws[i];
        let (frame, clean) = synthesize_raw(seed, side, side, exposure, noise)?;
        let input = normalize_pack(&frame).tensor;
        let bands = decompose(&input, &spec, ExecMode::Sequential)?.stacked();
        Ok(Sample {
            input,
            bands,
            target: tonemap_target(&clean.tensor),
            exposure,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub l1: f64,
    pub entropy_bits: f64,
    pub gamma_orig_mean: f64,
    pub gamma_freq_mean: f64,
}

pub fn write_metrics_csv<W: Write>(rows: &[StepMetrics], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.step, r.loss, r.l1, r.entropy_bits, r.gamma_orig_mean, r.gamma_freq_mean
        )?;
    }
    Ok(())
}

/// Dataset-wide quality measures, averaged over images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub l1: f64,
    pub raw_entropy: f64,
    pub enhanced_entropy: f64,
    pub raw_abs_skewness: f64,
    pub enhanced_abs_skewness: f64,
    pub gamma_abs_dev: f64,
}

/// Entropy in bits of the channel-pooled evaluation histogram.
pub fn pooled_entropy(x: &Tensor) -> Result<f64> {
    entropy(&histogram(x, EVAL_BINS)?.pooled())
}

/// Serializable ChaCha position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 || !s.is_ascii() {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub step: u64,
    pub rng: RngState,
    pub params: NetParams,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn to_file(&self) -> TensorFile {
        let mut kv = KeyValues::default();
        kv.insert("kind", "checkpoint");
        self.net.write_kv(&mut kv);
        self.train.write_kv(&mut kv, "train.");
        kv.insert("state.step", self.step);
        kv.insert("state.adam_t", self.adam.t);
        kv.insert("state.rng_seed", hex(&self.rng.seed));
        kv.insert("state.rng_stream", self.rng.stream);
        kv.insert("state.rng_word_pos", self.rng.word_pos);
        let mut records = Vec::with_capacity(3 * self.params.len());
        for (name, t) in self.params.iter() {
            records.push((format!("param/{name}"), t.clone()));
        }
        for (name, t) in self.params.names().iter().zip(&self.adam.m) {
            records.push((format!("adam_m/{name}"), t.clone()));
        }
        for (name, t) in self.params.names().iter().zip(&self.adam.v) {
            records.push((format!("adam_v/{name}"), t.clone()));
        }
        TensorFile { config: kv, records }
    }

    pub fn from_file(file: TensorFile) -> Result<Self> {
        let kv = &file.config;
        if kv.get("kind") != Some("checkpoint") {
            return Err(CheckpointError::Malformed("not a checkpoint (kind != checkpoint)".into()).into());
        }
        let net = NetConfig::from_kv(kv)?;
        let train = TrainConfig::from_kv(kv, "train.")?;
        let seed_text = kv.require("state.rng_seed")?;
        let seed = unhex(seed_text).ok_or_else(|| Error::BadValue {
            key: "state.rng_seed".into(),
            msg: "expected 64 hex digits".into(),
        })?;
        let rng = RngState {
            seed,
            stream: kv.parse_required("state.rng_stream")?,
            word_pos: kv.parse_required("state.rng_word_pos")?,
        };
        let mut params = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, t) in file.records {
            if let Some(n) = name.strip_prefix("param/") {
                params.push((n.to_string(), t));
            } else if let Some(n) = name.strip_prefix("adam_m/") {
                m.push((n.to_string(), t));
            } else if let Some(n) = name.strip_prefix("adam_v/") {
                v.push((n.to_string(), t));
            } else {
                return Err(CheckpointError::Malformed(format!("unexpected record `{name}`")).into());
            }
        }
        let params = NetParams::new(params)?;
        params.check_against(&net)?;
        let align = |moments: Vec<(String, Tensor)>, what: &str| -> Result<Vec<Tensor>> {
            if moments.len() != params.len() {
                return Err(CheckpointError::Malformed(format!(
                    "{} {what} records for {} parameters",
                    moments.len(),
                    params.len()
                ))
                .into());
            }
            moments
                .into_iter()
                .zip(params.iter())
                .map(|((n, t), (pn, pt))| {
                    if n != pn || t.shape() != pt.shape() {
                        Err(CheckpointError::Malformed(format!("{what} record `{n}` does not match parameter `{pn}`")).into())
                    } else {
                        Ok(t)
                    }
                })
                .collect()
        };
        let adam = AdamState {
            m: align(m, "adam_m")?,
            v: align(v, "adam_v")?,
            t: kv.parse_required("state.adam_t")?,
        };
        Ok(Checkpoint {
            net,
            train,
            step: kv.parse_required("state.step")?,
            rng,
            params,
            adam,
        })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.to_file().encode()
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.to_file().save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_file(TensorFile::load(path)?)
}

struct SampleResult {
    grads: Vec<Tensor>,
    loss: f64,
    l1: f64,
    entropy_bits: f64,
    gamma_orig_mean: f64,
    gamma_freq_mean: f64,
}

pub struct Trainer {
    cfg: TrainConfig,
    net: NetConfig,
    params: NetParams,
    adam: AdamState,
    rng: ChaCha8Rng,
    step: u64,
    data: Vec<Sample>,
    mode: ExecMode,
}

fn batch_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

impl Trainer {
    pub fn new(cfg: TrainConfig, mode: ExecMode) -> Result<Self> {
        cfg.validate()?;
        let net = cfg.net_config();
        let params = init_params(&net, cfg.seed)?;
        let data = build_dataset(&cfg, mode)?;
        Ok(Trainer {
            adam: AdamState::new(&params),
            rng: batch_rng(cfg.seed),
            cfg,
            net,
            params,
            step: 0,
            data,
            mode,
        })
    }

    /// Continue from a checkpoint; the dataset is regenerated from its seed.
    pub fn resume(ckpt: Checkpoint, mode: ExecMode) -> Result<Self> {
        ckpt.train.validate()?;
        if ckpt.net != ckpt.train.net_config() {
            return Err(Error::Config("checkpoint network and training configurations disagree".into()));
        }
        let data = build_dataset(&ckpt.train, mode)?;
        Ok(Trainer {
            cfg: ckpt.train,
            net: ckpt.net,
            params: ckpt.params,
            adam: ckpt.adam,
            rng: ckpt.rng.restore(),
            step: ckpt.step,
            data,
            mode,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }
    pub fn net_config(&self) -> &NetConfig {
        &self.net
    }
    pub fn params(&self) -> &NetParams {
        &self.params
    }
    pub fn step_count(&self) -> u64 {
        self.step
    }
    pub fn dataset(&self) -> &[Sample] {
        &self.data
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            net: self.net.clone(),
            train: self.cfg.clone(),
            step: self.step,
            rng: RngState::capture(&self.rng),
            params: self.params.clone(),
            adam: self.adam.clone(),
        }
    }

    fn sample_pass(&self, s: &Sample) -> Result<SampleResult> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        let out = enhance_on_tape(&bound, &self.net, tape.constant(s.input.clone()), &s.bands)?;
        let terms = loss(out.enhanced, tape.constant(s.target.clone()), self.cfg.loss_weights())?;
        tape.finite_status()?;
        let grads = tape.backward(terms.loss)?;
        let scalar = |v: sfae_autodiff::Var<'_>| v.value().data()[0];
        Ok(SampleResult {
            grads: bound.vars().iter().map(|&v| grads.get_or_zeros(v)).collect(),
            loss: scalar(terms.loss),
            l1: scalar(terms.l1),
            entropy_bits: scalar(terms.entropy_bits),
            gamma_orig_mean: out.gammas.orig.value().mean(),
            gamma_freq_mean: out.gammas.freq.value().mean(),
        })
    }

    /// One optimizer step on a freshly drawn batch.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let n = self.data.len();
        let mut idx = sample(&mut self.rng, n, self.cfg.batch_size).into_vec();
        idx.sort_unstable();
        let results = self.mode.map_indexed(idx.len(), |i| self.sample_pass(&self.data[idx[i]]));
        let b = idx.len() as f64;
        let mut grads: Vec<Tensor> = self.params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        let mut m = StepMetrics {
            step: self.step + 1,
            loss: 0.0,
            l1: 0.0,
            entropy_bits: 0.0,
            gamma_orig_mean: 0.0,
            gamma_freq_mean: 0.0,
        };
        for r in results {
            let r = match r {
                Ok(r) => r,
                Err(Error::Tensor(e @ sfae_autodiff::TensorError::NonFinite { .. })) => {
                    return Err(Error::Diverged {
                        step: self.step + 1,
                        cause: e.to_string(),
                    })
                }
                Err(e) => return Err(e),
            };
            for (acc, g) in grads.iter_mut().zip(&r.grads) {
                for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += v;
                }
            }
            m.loss += r.loss / b;
            m.l1 += r.l1 / b;
            m.entropy_bits += r.entropy_bits / b;
            m.gamma_orig_mean += r.gamma_orig_mean / b;
            m.gamma_freq_mean += r.gamma_freq_mean / b;
        }
        if !m.loss.is_finite() {
            return Err(Error::Diverged {
                step: m.step,
                cause: format!("loss = {}", m.loss),
            });
        }
        for g in &mut grads {
            for v in g.data_mut() {
                *v /= b;
            }
        }
        adam_step(&mut self.params, &grads, &mut self.adam, &self.cfg.adam())?;
        self.step += 1;
        Ok(m)
    }

    /// Run until `cfg.steps` steps are done, reporting each.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepMetrics)) -> Result<Vec<StepMetrics>> {
        let mut log = Vec::new();
        while self.step < self.cfg.steps {
            let m = self.step()?;
            on_step(&m);
            log.push(m);
        }
        Ok(log)
    }

    /// Run `n` more steps regardless of the configured total.
    pub fn run_steps(&mut self, n: u64) -> Result<Vec<StepMetrics>> {
        (0..n).map(|_| self.step()).collect()
    }

    pub fn evaluate(&self) -> Result<EvalReport> {
        let per = self.mode.map_indexed(self.data.len(), |i| -> Result<[f64; 6]> {
            let s = &self.data[i];
            let tape = Tape::new();
            let bound = self.params.bind(&tape);
            let out = enhance_on_tape(&bound, &self.net, tape.constant(s.input.clone()), &s.bands)?;
            let enhanced = out.enhanced.value();
            let l1 = enhanced
                .data()
                .iter()
                .zip(s.target.data())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / enhanced.numel() as f64;
            let go = out.gammas.orig.value();
            let gf = out.gammas.freq.value();
            let dev = go.data().iter().chain(gf.data()).map(|g| (g - 1.0).abs()).sum::<f64>()
                / (go.numel() + gf.numel()) as f64;
            Ok([
                l1,
                pooled_entropy(&s.input)?,
                pooled_entropy(&enhanced)?,
                skewness(s.input.data()).abs(),
                skewness(enhanced.data()).abs(),
                dev,
            ])
        });
        let mut acc = [0.0; 6];
        let n = self.data.len() as f64;
        for r in per {
            for (a, v) in acc.iter_mut().zip(r?) {
                *a += v / n;
            }
        }
        Ok(EvalReport {
            l1: acc[0],
            raw_entropy: acc[1],
            enhanced_entropy: acc[2],
            raw_abs_skewness: acc[3],
            enhanced_abs_skewness: acc[4],
            gamma_abs_dev: acc[5],
        })
    }
}

/// Train from scratch for `cfg.steps` steps.
pub fn train(cfg: TrainConfig, mode: ExecMode) -> Result<(Checkpoint, Vec<StepMetrics>)> {
    let mut t = Trainer::new(cfg, mode)?;
    let log = t.run(|_| {})?;
    Ok((t.checkpoint(), log))
}

/// One band count's run in a [`sweep`].
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub n_bands: usize,
    pub before: EvalReport,
    pub after: EvalReport,
    pub log: Vec<StepMetrics>,
    pub checkpoint: Checkpoint,
}

pub const SWEEP_HEADER: &str =
    "n_bands,steps,final_loss,initial_l1,final_l1,raw_entropy,enhanced_entropy,raw_abs_skewness,enhanced_abs_skewness";

/// Train `base` once per band count with every other setting held fixed.
pub fn sweep(base: &TrainConfig, bands: &[usize], mode: ExecMode, mut on_run: impl FnMut(&SweepRun)) -> Result<Vec<SweepRun>> {
    let mut runs = Vec::with_capacity(bands.len());
    for &n in bands {
        let mut t = Trainer::new(
            TrainConfig {
                n_bands: n,
                ..base.clone()
            },
            mode,
        )?;
        let before = t.evaluate()?;
        let log = t.run(|_| {})?;
        let run = SweepRun {
            n_bands: n,
            before,
            after: t.evaluate()?,
            log,
            checkpoint: t.checkpoint(),
        };
        on_run(&run);
        runs.push(run);
    }
    Ok(runs)
}

pub fn write_sweep_csv<W: Write>(runs: &[SweepRun], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in runs {
        let final_loss = r.log.last().map_or(f64::NAN, |m| m.loss);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.n_bands,
            r.log.len(),
            final_loss,
            r.before.l1,
            r.after.l1,
            r.before.raw_entropy,
            r.after.enhanced_entropy,
            r.before.raw_abs_skewness,
            r.after.enhanced_abs_skewness
        )?;
    }
    Ok(())
}
