//! Mini-batch SGD with alternating auxiliary and main updates, plus
//! checkpointing with exact resume.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{dim_err, Error, Result};
use crate::nn::{Arch, Group, ModelBundle, ParamStore};
use crate::objectives::{
    auxiliary_objective, total_objective, AuxLosses, Batch, CriticInput, Lambdas, LossBreakdown, NegativeMode,
    ObjectiveOptions, ParamGrads, StepNoise,
};
use crate::rng::{substream, StreamState, Substream};
use crate::Modality;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_encoders_critic_classifier: f64,
    pub lr_decoders: f64,
    pub lambdas: Lambdas,
    pub epochs: usize,
    pub seed: u64,
    pub critic_steps_per_main: usize,
    pub critic_input: CriticInput,
    pub negative_mode: NegativeMode,
    /// Loss rows are logged every this many main steps.
    pub log_interval: usize,
    /// Rescales each phase's gradient to at most this global L2 norm.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_encoders_critic_classifier: 0.01,
            lr_decoders: 0.001,
            lambdas: Lambdas::default(),
            epochs: 100,
            seed: 0,
            critic_steps_per_main: 1,
            critic_input: CriticInput::Mu,
            negative_mode: NegativeMode::FullMatrix,
            log_interval: 10,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        for (name, v) in [
            ("lr_encoders_critic_classifier", self.lr_encoders_critic_classifier),
            ("lr_decoders", self.lr_decoders),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [("momentum", self.momentum), ("weight_decay", self.weight_decay)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if let CriticInput::Samples(0) = self.critic_input {
            return Err(Error::Config("critic_input samples(k) needs k >= 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be > 0, got {c}")));
            }
        }
        if self.log_interval == 0 {
            return Err(Error::Config("log_interval must be >= 1".into()));
        }
        self.lambdas.validate()
    }

    pub fn objective_options(&self) -> ObjectiveOptions {
        ObjectiveOptions {
            critic_input: self.critic_input,
            negative_mode: self.negative_mode,
        }
    }

    fn lr_for(&self, group: Group) -> f64 {
        if group.is_decoder() {
            self.lr_decoders
        } else {
            self.lr_encoders_critic_classifier
        }
    }
}

/// Momentum buffers, one per registry entry.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<Tensor>,
}

impl OptimizerState {
    pub fn zeros_like(params: &ParamStore) -> Self {
        OptimizerState {
            velocity: params
                .iter()
                .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect(),
        }
    }
}

/// L2 norm over every tensor of a step's gradient.
pub fn global_norm(grads: &ParamGrads) -> f64 {
    grads
        .iter()
        .flat_map(|(_, g)| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// `v ← m·v + g + wd·p; p ← p − lr·v`.
pub fn sgd_step(
    param: &mut Tensor,
    grad: &Tensor,
    velocity: &mut Tensor,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return dim_err(format!(
            "sgd_step: param {:?}, grad {:?}, velocity {:?}",
            param.shape(),
            grad.shape(),
            velocity.shape()
        ));
    }
    for ((p, &g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: usize,
    pub breakdown: LossBreakdown,
    pub js_mi_critic: f64,
    pub tc_bce_i: f64,
    pub tc_bce_t: f64,
}

/// A logged main step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub breakdown: LossBreakdown,
}

pub const MAIN_GROUPS: [Group; 4] = [Group::EncoderI, Group::EncoderT, Group::DecoderI, Group::DecoderT];

#[derive(Debug, Clone)]
pub struct Trainer {
    pub bundle: ModelBundle,
    pub opt: OptimizerState,
    pub config: TrainConfig,
    pub epoch: usize,
    pub step: usize,
    shuffle_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    perm_rng: ChaCha8Rng,
}

impl Trainer {
    /// Fresh model for `arch`, initialised from `config.seed`.
    pub fn new(arch: Arch, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let bundle = ModelBundle::new(arch, config.seed)?;
        Self::from_bundle(bundle, config)
    }

    pub fn from_bundle(bundle: ModelBundle, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        Ok(Trainer {
            opt: OptimizerState::zeros_like(&bundle.params),
            bundle,
            config,
            epoch: 0,
            step: 0,
            shuffle_rng: substream(seed, Substream::Shuffle),
            noise_rng: substream(seed, Substream::Noise),
            perm_rng: substream(seed, Substream::Permutation),
        })
    }

    fn apply(&mut self, grads: &ParamGrads, sign: f64) -> Result<()> {
        let c = &self.config;
        let norm = global_norm(grads);
        if !norm.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        let scale = match c.grad_clip {
            Some(max) if norm > max => sign * max / norm,
            _ => sign,
        };
        for (idx, g) in grads {
            let group = self.bundle.params.get(*idx).group;
            let lr = c.lr_for(group);
            let g = if scale == 1.0 { g.clone() } else { g.map(|v| scale * v) };
            sgd_step(
                &mut self.bundle.params.get_mut(*idx).value,
                &g,
                &mut self.opt.velocity[*idx],
                lr,
                c.momentum,
                c.weight_decay,
            )?;
        }
        Ok(())
    }

    fn draw_noise(&mut self, b: usize) -> Result<StepNoise> {
        let k = self.config.critic_input.samples_needed();
        StepNoise::draw(&mut self.noise_rng, &mut self.perm_rng, b, self.bundle.arch.code_len, k)
    }

    /// Critic ascends the JS bound and the classifiers descend their
    /// cross-entropy; encoders and decoders stay fixed.
    pub fn auxiliary_step(&mut self, batch: &Batch) -> Result<AuxLosses> {
        let mu_i = self.bundle.encode(Modality::Image, &batch.x_i)?;
        let mu_t = self.bundle.encode(Modality::Text, &batch.x_t)?;
        let noise = self.draw_noise(batch.len())?;
        let (losses, grads) =
            auxiliary_objective(&self.bundle, &mu_i, &mu_t, &noise, &self.config.objective_options())?;
        self.apply(&grads, 1.0)?;
        Ok(losses)
    }

    /// Encoders and decoders ascend the total objective; critic and
    /// classifiers stay fixed.
    pub fn main_step(&mut self, batch: &Batch) -> Result<LossBreakdown> {
        let noise = self.draw_noise(batch.len())?;
        let (breakdown, grads) = total_objective(
            &self.bundle,
            batch,
            &self.config.lambdas,
            &noise,
            &self.config.objective_options(),
            &MAIN_GROUPS,
        )?;
        if !breakdown.total.is_finite() {
            return Err(Error::NonFinite("objective"));
        }
        self.apply(&grads, -1.0)?;
        self.step += 1;
        Ok(breakdown)
    }

    /// One pass over `(x_i, x_t)` in a fresh shuffled order, dropping the
    /// last short batch.
    pub fn train_epoch(&mut self, x_i: &Tensor, x_t: &Tensor, log: &mut Vec<StepLog>) -> Result<EpochMetrics> {
        let n = x_i.rows();
        if x_t.rows() != n {
            return dim_err(format!("train_epoch: {} image rows vs {} text rows", n, x_t.rows()));
        }
        let b = self.config.batch_size;
        if n < b {
            return Err(Error::Contract(format!(
                "{n} training rows are fewer than one batch of {b}"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.shuffle_rng);
        let mut main = Vec::with_capacity(n / b);
        let mut aux = Vec::with_capacity(n / b);
        for chunk in order.chunks_exact(b) {
            let batch = Batch {
                x_i: x_i.select_rows(chunk),
                x_t: x_t.select_rows(chunk),
            };
            for _ in 0..self.config.critic_steps_per_main {
                aux.push(self.auxiliary_step(&batch)?);
            }
            let bd = self.main_step(&batch)?;
            if self.step.is_multiple_of(self.config.log_interval) {
                log.push(StepLog {
                    step: self.step,
                    breakdown: bd,
                });
            }
            main.push(bd);
        }
        self.epoch += 1;
        let na = aux.len().max(1) as f64;
        Ok(EpochMetrics {
            epoch: self.epoch,
            steps: main.len(),
            breakdown: LossBreakdown::mean(&main),
            js_mi_critic: aux.iter().map(|a| a.js_mi).sum::<f64>() / na,
            tc_bce_i: aux.iter().map(|a| a.tc_bce_i).sum::<f64>() / na,
            tc_bce_t: aux.iter().map(|a| a.tc_bce_t).sum::<f64>() / na,
        })
    }

    /// Runs epochs until `config.epochs` have been completed.
    pub fn fit(&mut self, x_i: &Tensor, x_t: &Tensor, log: &mut Vec<StepLog>) -> Result<Vec<EpochMetrics>> {
        let mut out = Vec::new();
        while self.epoch < self.config.epochs {
            out.push(self.train_epoch(x_i, x_t, log)?);
        }
        Ok(out)
    }

    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            arch: self.bundle.arch,
            config: self.config.clone(),
            epoch: self.epoch,
            step: self.step,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.bundle.seed.to_le_bytes());
        for rng in [&self.shuffle_rng, &self.noise_rng, &self.perm_rng] {
            let s = StreamState::capture(self.config.seed, rng);
            out.extend_from_slice(&s.seed.to_le_bytes());
            out.extend_from_slice(&s.stream.to_le_bytes());
            out.extend_from_slice(&s.word_pos.to_le_bytes());
        }
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.bundle.params.len() as u32).to_le_bytes());
        for (p, v) in self.bundle.params.iter().zip(&self.opt.velocity) {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
            for &x in p.value.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
            for &x in v.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let seed = r.u64()?;
        let mut streams = Vec::with_capacity(3);
        for _ in 0..3 {
            let s = StreamState {
                seed: r.u64()?,
                stream: r.u64()?,
                word_pos: u128::from_le_bytes(r.take(16)?.try_into().unwrap()),
            };
            streams.push(s.restore());
        }
        let json_len = r.u32()? as usize;
        let header: CheckpointHeader =
            serde_json::from_slice(r.take(json_len)?).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let mut bundle = ModelBundle::new(header.arch, seed)?;
        let count = r.u32()? as usize;
        if count != bundle.params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {count} tensors, architecture has {}",
                bundle.params.len()
            )));
        }
        let mut velocity = Vec::with_capacity(count);
        for idx in 0..count {
            let name_len = r.u32()? as usize;
            let name =
                std::str::from_utf8(r.take(name_len)?).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            let p = bundle.params.get_mut(idx);
            if p.name != name || p.value.shape() != (rows, cols) {
                return Err(Error::Format(format!(
                    "tensor {idx}: found {name} {rows}x{cols}, expected {} {:?}",
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = Tensor::from_vec(rows, cols, r.f64s(rows * cols)?)?;
            velocity.push(Tensor::from_vec(rows, cols, r.f64s(rows * cols)?)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        header.config.validate()?;
        let mut it = streams.into_iter();
        Ok(Trainer {
            bundle,
            opt: OptimizerState { velocity },
            config: header.config,
            epoch: header.epoch,
            step: header.step,
            shuffle_rng: it.next().unwrap(),
            noise_rng: it.next().unwrap(),
            perm_rng: it.next().unwrap(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.checkpoint_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn restore(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"CMHK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    arch: Arch,
    config: TrainConfig,
    epoch: usize,
    step: usize,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("checkpoint is truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
