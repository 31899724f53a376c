//! The parameterised functions of the model: two Bernoulli encoders, two
//! decoders, the separable critic halves and the two total-correlation
//! classifiers, all plain MLPs over one shared parameter store.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var, LEAKY_RELU_SLOPE};
use crate::bernoulli::EPS;
use crate::error::{dim_err, Result};
use crate::rng::{substream, Substream};
use crate::Modality;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutActivation {
    Sigmoid,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub hidden: Vec<(usize, Activation)>,
    pub out_dim: usize,
    pub out_activation: OutActivation,
}

impl MlpSpec {
    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.in_dim];
        w.extend(self.hidden.iter().map(|h| h.0));
        w.push(self.out_dim);
        w
    }
}

/// Which network a parameter belongs to. Training phases freeze and update
/// whole groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    EncoderI,
    EncoderT,
    DecoderI,
    DecoderT,
    CriticI,
    CriticT,
    TcI,
    TcT,
}

impl Group {
    pub const ALL: [Group; 8] = [
        Group::EncoderI,
        Group::EncoderT,
        Group::DecoderI,
        Group::DecoderT,
        Group::CriticI,
        Group::CriticT,
        Group::TcI,
        Group::TcT,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            Group::EncoderI => "encoder_i",
            Group::EncoderT => "encoder_t",
            Group::DecoderI => "decoder_i",
            Group::DecoderT => "decoder_t",
            Group::CriticI => "critic_phi_i",
            Group::CriticT => "critic_phi_t",
            Group::TcI => "tc_classifier_i",
            Group::TcT => "tc_classifier_t",
        }
    }

    pub fn is_decoder(self) -> bool {
        matches!(self, Group::DecoderI | Group::DecoderT)
    }

    pub fn is_auxiliary(self) -> bool {
        matches!(self, Group::CriticI | Group::CriticT | Group::TcI | Group::TcT)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: Group,
    pub value: Tensor,
}

/// Ordered registry of every trainable tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    fn push(&mut self, name: String, group: Group, value: Tensor) -> usize {
        self.params.push(Param { name, group, value });
        self.params.len() - 1
    }
}

/// Lazily inserts parameters into a graph, as trainable leaves for the groups
/// being optimised and as constants otherwise.
pub struct Binder<'s> {
    store: &'s ParamStore,
    trainable: Vec<Group>,
    vars: Vec<Option<Var>>,
}

impl<'s> Binder<'s> {
    pub fn new(store: &'s ParamStore, trainable: &[Group]) -> Self {
        Binder {
            store,
            trainable: trainable.to_vec(),
            vars: vec![None; store.len()],
        }
    }

    pub fn var(&mut self, g: &mut Graph, idx: usize) -> Result<Var> {
        if let Some(v) = self.vars[idx] {
            return Ok(v);
        }
        let p = self.store.get(idx);
        let v = if self.trainable.contains(&p.group) {
            g.param(p.value.clone())?
        } else {
            g.constant(p.value.clone())?
        };
        self.vars[idx] = Some(v);
        Ok(v)
    }

    /// `(param index, var)` for every trainable parameter bound so far.
    pub fn bound_trainable(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.vars.iter().enumerate().filter_map(|(i, v)| {
            let v = (*v)?;
            self.trainable.contains(&self.store.get(i).group).then_some((i, v))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    weight: usize,
    bias: usize,
    activation: Option<Activation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    group: Group,
    layers: Vec<Layer>,
    out_activation: OutActivation,
}

impl Mlp {
    fn build<R: Rng>(spec: MlpSpec, group: Group, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        let widths = spec.widths();
        if widths.contains(&0) {
            return dim_err(format!("{}: zero layer width in {:?}", group.prefix(), widths));
        }
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            let weight = store.push(
                format!("{}.{i}.weight", group.prefix()),
                group,
                Tensor::from_vec(fan_in, fan_out, w)?,
            );
            let bias = store.push(format!("{}.{i}.bias", group.prefix()), group, Tensor::zeros(1, fan_out));
            let activation = spec.hidden.get(i).map(|h| h.1);
            layers.push(Layer {
                weight,
                bias,
                activation,
            });
        }
        Ok(Mlp {
            out_activation: spec.out_activation,
            spec,
            group,
            layers,
        })
    }

    pub fn group(&self) -> Group {
        self.group
    }

    pub fn in_dim(&self) -> usize {
        self.spec.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.spec.out_dim
    }

    /// `(weight, bias)` parameter indices per layer.
    pub fn layer_params(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.weight, l.bias)).collect()
    }

    pub fn forward(&self, g: &mut Graph, binder: &mut Binder<'_>, x: Var) -> Result<Var> {
        if g.value(x).cols() != self.spec.in_dim {
            return dim_err(format!(
                "{}: input has {} columns, expected {}",
                self.group.prefix(),
                g.value(x).cols(),
                self.spec.in_dim
            ));
        }
        let mut h = x;
        for layer in &self.layers {
            let w = binder.var(g, layer.weight)?;
            let b = binder.var(g, layer.bias)?;
            let y = g.matmul(h, w)?;
            h = g.add_row(y, b)?;
            h = match layer.activation {
                Some(Activation::Relu) => g.relu(h)?,
                Some(Activation::LeakyRelu) => g.leaky_relu(h, LEAKY_RELU_SLOPE)?,
                None => h,
            };
        }
        if self.out_activation == OutActivation::Sigmoid {
            h = g.sigmoid(h)?;
        }
        Ok(h)
    }

    /// Graph-free forward pass for inference.
    pub fn infer(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.spec.in_dim {
            return dim_err(format!(
                "{}: input has {} columns, expected {}",
                self.group.prefix(),
                x.cols(),
                self.spec.in_dim
            ));
        }
        let mut h = x.clone();
        for layer in &self.layers {
            h = h.matmul(&store.get(layer.weight).value)?;
            let b = store.get(layer.bias).value.data();
            let cols = h.cols();
            for row in h.data_mut().chunks_mut(cols) {
                for (v, bv) in row.iter_mut().zip(b) {
                    *v += bv;
                }
            }
            match layer.activation {
                Some(Activation::Relu) => h = h.map(|v| v.max(0.0)),
                Some(Activation::LeakyRelu) => h = h.map(|v| if v > 0.0 { v } else { LEAKY_RELU_SLOPE * v }),
                None => {}
            }
        }
        if self.out_activation == OutActivation::Sigmoid {
            h = h.map(|v| 1.0 / (1.0 + (-v).exp()));
        }
        Ok(h)
    }
}

/// Layer widths of a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arch {
    pub d_i: usize,
    pub d_t: usize,
    pub code_len: usize,
    #[serde(default = "default_enc_hidden")]
    pub enc_hidden: usize,
    #[serde(default = "default_aux_hidden")]
    pub critic_hidden: usize,
    #[serde(default = "default_aux_hidden")]
    pub critic_embed: usize,
    #[serde(default = "default_aux_hidden")]
    pub tc_hidden: usize,
}

fn default_enc_hidden() -> usize {
    1024
}

fn default_aux_hidden() -> usize {
    512
}

impl Arch {
    /// Encoders/decoders with two hidden ReLU layers of 1024, critic halves
    /// and classifiers with two hidden Leaky-ReLU layers of 512.
    pub fn new(d_i: usize, d_t: usize, code_len: usize) -> Self {
        Arch {
            d_i,
            d_t,
            code_len,
            enc_hidden: default_enc_hidden(),
            critic_hidden: default_aux_hidden(),
            critic_embed: default_aux_hidden(),
            tc_hidden: default_aux_hidden(),
        }
    }

    pub fn with_widths(mut self, enc_hidden: usize, aux_hidden: usize) -> Self {
        self.enc_hidden = enc_hidden;
        self.critic_hidden = aux_hidden;
        self.critic_embed = aux_hidden;
        self.tc_hidden = aux_hidden;
        self
    }

    pub fn spec(&self, group: Group) -> MlpSpec {
        let enc = vec![(self.enc_hidden, Activation::Relu); 2];
        let critic = vec![(self.critic_hidden, Activation::LeakyRelu); 2];
        let tc = vec![(self.tc_hidden, Activation::LeakyRelu); 2];
        let l = self.code_len;
        let (in_dim, hidden, out_dim, out_activation) = match group {
            Group::EncoderI => (self.d_i, enc, l, OutActivation::Sigmoid),
            Group::EncoderT => (self.d_t, enc, l, OutActivation::Sigmoid),
            Group::DecoderI => (l, enc, self.d_i, OutActivation::Linear),
            Group::DecoderT => (l, enc, self.d_t, OutActivation::Linear),
            Group::CriticI | Group::CriticT => (l, critic, self.critic_embed, OutActivation::Linear),
            Group::TcI | Group::TcT => (l, tc, 1, OutActivation::Linear),
        };
        MlpSpec {
            in_dim,
            hidden,
            out_dim,
            out_activation,
        }
    }

    /// Number of scalar parameters implied by the widths.
    pub fn expected_scalar_count(&self) -> usize {
        Group::ALL
            .iter()
            .map(|&g| {
                self.spec(g)
                    .widths()
                    .windows(2)
                    .map(|w| w[0] * w[1] + w[1])
                    .sum::<usize>()
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub arch: Arch,
    pub seed: u64,
    pub params: ParamStore,
    pub encoder_i: Mlp,
    pub encoder_t: Mlp,
    pub decoder_i: Mlp,
    pub decoder_t: Mlp,
    pub critic_phi_i: Mlp,
    pub critic_phi_t: Mlp,
    pub tc_classifier_i: Mlp,
    pub tc_classifier_t: Mlp,
}

pub fn init_bundle(d_i: usize, d_t: usize, code_len: usize, seed: u64) -> Result<ModelBundle> {
    ModelBundle::new(Arch::new(d_i, d_t, code_len), seed)
}

impl ModelBundle {
    /// Weights uniform in `±sqrt(6 / fan_in)`, biases zero, drawn in
    /// registry order from the seed's init stream.
    pub fn new(arch: Arch, seed: u64) -> Result<Self> {
        if arch.d_i == 0 || arch.d_t == 0 || arch.code_len == 0 {
            return dim_err(format!(
                "init_bundle: dims must be positive (d_i={}, d_t={}, L={})",
                arch.d_i, arch.d_t, arch.code_len
            ));
        }
        let mut rng = substream(seed, Substream::Init);
        let mut params = ParamStore::default();
        let mut mk = |g: Group| Mlp::build(arch.spec(g), g, &mut params, &mut rng);
        let encoder_i = mk(Group::EncoderI)?;
        let encoder_t = mk(Group::EncoderT)?;
        let decoder_i = mk(Group::DecoderI)?;
        let decoder_t = mk(Group::DecoderT)?;
        let critic_phi_i = mk(Group::CriticI)?;
        let critic_phi_t = mk(Group::CriticT)?;
        let tc_classifier_i = mk(Group::TcI)?;
        let tc_classifier_t = mk(Group::TcT)?;
        Ok(ModelBundle {
            arch,
            seed,
            params,
            encoder_i,
            encoder_t,
            decoder_i,
            decoder_t,
            critic_phi_i,
            critic_phi_t,
            tc_classifier_i,
            tc_classifier_t,
        })
    }

    pub fn encoder(&self, m: Modality) -> &Mlp {
        match m {
            Modality::Image => &self.encoder_i,
            Modality::Text => &self.encoder_t,
        }
    }

    pub fn decoder(&self, m: Modality) -> &Mlp {
        match m {
            Modality::Image => &self.decoder_i,
            Modality::Text => &self.decoder_t,
        }
    }

    pub fn tc_classifier(&self, m: Modality) -> &Mlp {
        match m {
            Modality::Image => &self.tc_classifier_i,
            Modality::Text => &self.tc_classifier_t,
        }
    }

    /// Clamped code probabilities `mu` for a batch of features.
    pub fn encode(&self, m: Modality, x: &Tensor) -> Result<Tensor> {
        Ok(self.encoder(m).infer(&self.params, x)?.map(|v| v.clamp(EPS, 1.0 - EPS)))
    }

    pub fn decode(&self, m: Modality, h: &Tensor) -> Result<Tensor> {
        self.decoder(m).infer(&self.params, h)
    }

    /// `S[r][c] = phi_i(a_r) · phi_t(b_c)`.
    pub fn critic_score(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        critic_score(&self.critic_phi_i, &self.critic_phi_t, &self.params, a, b)
    }

    pub fn tc_logit(&self, m: Modality, mu: &Tensor) -> Result<Tensor> {
        self.tc_classifier(m).infer(&self.params, mu)
    }
}

/// Graph-free separable critic scores; rows of `a` against rows of `b`.
pub fn critic_score(phi_i: &Mlp, phi_t: &Mlp, store: &ParamStore, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rows() != b.rows() {
        return dim_err(format!("critic_score: batch sizes {} and {}", a.rows(), b.rows()));
    }
    let ea = phi_i.infer(store, a)?;
    let eb = phi_t.infer(store, b)?;
    Tensor::gemm(&ea, false, &eb, true)
}

/// Differentiable encoder forward: `clamp(sigmoid(MLP(x)))`.
pub fn encode_graph(enc: &Mlp, g: &mut Graph, binder: &mut Binder<'_>, x: Var) -> Result<Var> {
    let mu = enc.forward(g, binder, x)?;
    g.clamp(mu, EPS, 1.0 - EPS)
}

/// Differentiable critic score matrix.
pub fn critic_score_graph(
    phi_i: &Mlp,
    phi_t: &Mlp,
    g: &mut Graph,
    binder: &mut Binder<'_>,
    a: Var,
    b: Var,
) -> Result<Var> {
    if g.value(a).rows() != g.value(b).rows() {
        return dim_err(format!(
            "critic_score: batch sizes {} and {}",
            g.value(a).rows(),
            g.value(b).rows()
        ));
    }
    let ea = phi_i.forward(g, binder, a)?;
    let eb = phi_t.forward(g, binder, b)?;
    g.matmul_nt(ea, eb)
}
