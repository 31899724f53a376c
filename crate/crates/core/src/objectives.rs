//! Loss terms of the training objective and their assembly.
//!
//! Everything is expressed in the maximisation orientation:
//!
//! ```text
//! total = recon_i + recon_t + λ1·js_mi − λ2·skl − λ3·(tc_i + tc_t) − λ4·bal
//! ```
//!
//! Reconstruction terms are the Gaussian-decoder log-likelihood with variance
//! ½ and the data entropy dropped, i.e. `−mean_batch Σ_d (x − x̂)²`.

use std::f64::consts::LN_2;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Graph, Tensor, Var};
use crate::bernoulli::{logistic_noise, EPS};
use crate::error::{dim_err, Error, Result};
use crate::nn::{critic_score_graph, encode_graph, Binder, Group, Mlp, ModelBundle, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lambdas {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl Default for Lambdas {
    /// Weights used for MIR-Flickr25k and NUS-WIDE.
    fn default() -> Self {
        Lambdas {
            lambda1: 1.5,
            lambda2: 1.0,
            lambda3: 0.25,
            lambda4: 0.01,
        }
    }
}

impl Lambdas {
    /// Weights used for MS-COCO.
    pub fn coco() -> Self {
        Lambdas {
            lambda1: 4.0,
            lambda2: 1.5,
            lambda3: 0.25,
            lambda4: 0.01,
        }
    }

    pub fn zero() -> Self {
        Lambdas {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            lambda4: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon_i: f64,
    pub recon_t: f64,
    pub js_mi: f64,
    pub skl: f64,
    pub tc_i: f64,
    pub tc_t: f64,
    pub bal: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "step,recon_i,recon_t,js_mi,skl,tc_i,tc_t,bal,total";

    pub fn assemble(&self, l: &Lambdas) -> f64 {
        self.recon_i + self.recon_t + l.lambda1 * self.js_mi
            - l.lambda2 * self.skl
            - l.lambda3 * (self.tc_i + self.tc_t)
            - l.lambda4 * self.bal
    }

    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{},{},{},{},{},{},{},{}",
            self.recon_i, self.recon_t, self.js_mi, self.skl, self.tc_i, self.tc_t, self.bal, self.total
        )
    }

    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut m = LossBreakdown::default();
        for b in items {
            m.recon_i += b.recon_i / n;
            m.recon_t += b.recon_t / n;
            m.js_mi += b.js_mi / n;
            m.skl += b.skl / n;
            m.tc_i += b.tc_i / n;
            m.tc_t += b.tc_t / n;
            m.bal += b.bal / n;
            m.total += b.total / n;
        }
        m
    }
}

/// Which off-diagonal critic scores stand in for product-of-marginals pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    /// All `B(B−1)` off-diagonal pairs.
    #[default]
    FullMatrix,
    /// One negative per row: pair `(r, r+1 mod B)`.
    CyclicShift,
}

/// What the critic consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticInput {
    /// Code probabilities `mu`.
    #[default]
    Mu,
    /// Scores averaged over `k` sampled binary code pairs.
    Samples(usize),
}

impl CriticInput {
    pub fn samples_needed(self) -> usize {
        match self {
            CriticInput::Mu => 1,
            CriticInput::Samples(k) => k.max(1),
        }
    }
}

/// `−mean_batch Σ_d (x − x̂)²`.
pub fn recon_bound(g: &mut Graph, x: Var, x_hat: Var) -> Result<Var> {
    let b = g.value(x).rows();
    if g.value(x).shape() != g.value(x_hat).shape() {
        return dim_err(format!(
            "recon_bound: {:?} vs {:?}",
            g.value(x).shape(),
            g.value(x_hat).shape()
        ));
    }
    let d = g.sub(x, x_hat)?;
    let sq = g.mul(d, d)?;
    let s = g.sum(sq, Axis::All)?;
    g.scale(s, -1.0 / b as f64)
}

fn negative_mask(b: usize, mode: NegativeMode) -> Tensor {
    let mut m = Tensor::zeros(b, b);
    match mode {
        NegativeMode::FullMatrix => {
            let w = 1.0 / (b * (b - 1)) as f64;
            for r in 0..b {
                for c in 0..b {
                    if r != c {
                        m.set(r, c, w);
                    }
                }
            }
        }
        NegativeMode::CyclicShift => {
            for r in 0..b {
                m.set(r, (r + 1) % b, 1.0 / b as f64);
            }
        }
    }
    m
}

/// Jensen-Shannon MI lower bound from a `B x B` critic score matrix:
/// `mean_diag(T̄) + mean_neg(log(2 − exp T̄))` with `T̄ = log 2 − softplus(−T)`.
///
/// `log(2 − exp T̄)` simplifies to `log 2 − softplus(T)`, which is what is
/// evaluated.
pub fn js_mi_bound(g: &mut Graph, scores: Var, mode: NegativeMode) -> Result<Var> {
    let (b, c) = g.value(scores).shape();
    if b != c {
        return dim_err(format!("js_mi_bound: score matrix is {b}x{c}"));
    }
    if b < 2 {
        return Err(Error::Contract(format!("js_mi_bound needs B >= 2, got {b}")));
    }
    let mut diag = Tensor::zeros(b, b);
    for r in 0..b {
        diag.set(r, r, 1.0 / b as f64);
    }
    let diag = g.constant(diag)?;
    let neg = g.constant(negative_mask(b, mode))?;

    let minus = g.neg(scores)?;
    let sp_neg = g.softplus(minus)?;
    let t_bar = g.scale(sp_neg, -1.0)?;
    let t_bar = g.add_scalar(t_bar, LN_2)?;
    let joint = g.mul(t_bar, diag)?;
    let joint = g.sum(joint, Axis::All)?;

    let sp = g.softplus(scores)?;
    let marg = g.scale(sp, -1.0)?;
    let marg = g.add_scalar(marg, LN_2)?;
    let marg = g.mul(marg, neg)?;
    let marg = g.sum(marg, Axis::All)?;
    g.add(joint, marg)
}

pub fn js_mi_bound_value(scores: &Tensor, mode: NegativeMode) -> Result<f64> {
    let mut g = Graph::new();
    let s = g.constant(scores.clone())?;
    let v = js_mi_bound(&mut g, s, mode)?;
    g.scalar(v)
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `T̄ = log 2 − log(1 + exp(−T))`.
pub fn t_bar(t: f64) -> f64 {
    LN_2 - softplus(-t)
}

/// Population form of the bound for a critic tabulated over a finite pair
/// space: `Σ p_joint·T̄ + Σ p_product·log(2 − exp T̄)`.
pub fn js_bound_population(p_joint: &[f64], p_product: &[f64], critic: &[f64]) -> Result<f64> {
    if p_joint.len() != critic.len() || p_product.len() != critic.len() {
        return dim_err("js_bound_population: table sizes differ");
    }
    Ok(p_joint
        .iter()
        .zip(p_product)
        .zip(critic)
        .map(|((&pj, &pq), &t)| pj * t_bar(t) + pq * (LN_2 - softplus(t)))
        .sum())
}

/// Mean over the batch of the per-pair symmetrised Bernoulli KL.
///
/// Per bit `KL[p‖q] + KL[q‖p] = (p − q)(logit p − logit q)`.
pub fn skl_loss(g: &mut Graph, mu_i: Var, mu_t: Var) -> Result<Var> {
    if g.value(mu_i).shape() != g.value(mu_t).shape() {
        return dim_err(format!(
            "skl_loss: {:?} vs {:?}",
            g.value(mu_i).shape(),
            g.value(mu_t).shape()
        ));
    }
    let b = g.value(mu_i).rows();
    let d = g.sub(mu_i, mu_t)?;
    let li = logit_var(g, mu_i)?;
    let lt = logit_var(g, mu_t)?;
    let dl = g.sub(li, lt)?;
    let p = g.mul(d, dl)?;
    let s = g.sum(p, Axis::All)?;
    g.scale(s, 1.0 / b as f64)
}

fn logit_var(g: &mut Graph, mu: Var) -> Result<Var> {
    let lp = g.log(mu)?;
    let one_minus = g.neg(mu)?;
    let one_minus = g.add_scalar(one_minus, 1.0)?;
    let lq = g.log(one_minus)?;
    g.sub(lp, lq)
}

/// `Σ_l |mean_j mu_i[j,l] − ½| + |mean_j mu_t[j,l] − ½|`.
pub fn balance_loss(g: &mut Graph, mu_i: Var, mu_t: Var) -> Result<Var> {
    if g.value(mu_i).shape() != g.value(mu_t).shape() {
        return dim_err(format!(
            "balance_loss: {:?} vs {:?}",
            g.value(mu_i).shape(),
            g.value(mu_t).shape()
        ));
    }
    let one = |g: &mut Graph, mu: Var| -> Result<Var> {
        let m = g.mean(mu, Axis::Rows)?;
        let c = g.add_scalar(m, -0.5)?;
        let a = g.abs(c)?;
        g.sum(a, Axis::All)
    };
    let a = one(g, mu_i)?;
    let b = one(g, mu_t)?;
    g.add(a, b)
}

/// Rows mixed independently per column: column `l` of the result is column
/// `l` of `mu` under its own random row permutation.
pub fn permute_columns<R: Rng + ?Sized>(mu: &Tensor, rng: &mut R) -> Tensor {
    let (b, l) = mu.shape();
    let mut out = Tensor::zeros(b, l);
    let mut idx: Vec<usize> = (0..b).collect();
    for c in 0..l {
        idx.shuffle(rng);
        for (r, &src) in idx.iter().enumerate() {
            out.set(r, c, mu.get(src, c));
        }
    }
    out
}

/// Anything producing a per-row log density ratio `log(D / (1 − D))`.
pub trait DensityRatio {
    fn logits(&self, rows: &Tensor) -> Result<Tensor>;
}

/// A trained classifier MLP viewed as a density-ratio estimator.
pub struct ClassifierRatio<'a> {
    pub net: &'a Mlp,
    pub store: &'a ParamStore,
}

impl DensityRatio for ClassifierRatio<'_> {
    fn logits(&self, rows: &Tensor) -> Result<Tensor> {
        self.net.infer(self.store, rows)
    }
}

/// Total-correlation terms for one batch:
/// `(encoder_term, classifier_loss)` where `encoder_term` is the mean logit on
/// real rows and `classifier_loss` is the binary cross-entropy of real rows
/// (label 1) against column-permuted rows (label 0).
pub fn tc_loss<D: DensityRatio, R: Rng + ?Sized>(classifier: &D, mu: &Tensor, rng: &mut R) -> Result<(f64, f64)> {
    let b = mu.rows();
    if b < 2 {
        return Err(Error::Contract(format!("tc_loss needs B >= 2, got {b}")));
    }
    let permuted = permute_columns(mu, rng);
    tc_loss_with(classifier, mu, &permuted)
}

pub fn tc_loss_with<D: DensityRatio>(classifier: &D, mu: &Tensor, permuted: &Tensor) -> Result<(f64, f64)> {
    let real = classifier.logits(mu)?;
    let fake = classifier.logits(permuted)?;
    let n = (real.len() + fake.len()) as f64;
    let enc = real.sum() / real.len() as f64;
    let bce = (real.data().iter().map(|&l| softplus(-l)).sum::<f64>()
        + fake.data().iter().map(|&l| softplus(l)).sum::<f64>())
        / n;
    Ok((enc, bce))
}

/// Differentiable `(encoder_term, classifier_loss)`.
pub fn tc_terms(g: &mut Graph, logits_real: Var, logits_perm: Var) -> Result<(Var, Var)> {
    let enc = g.mean(logits_real, Axis::All)?;
    let neg_real = g.neg(logits_real)?;
    let a = g.softplus(neg_real)?;
    let a = g.mean(a, Axis::All)?;
    let b = g.softplus(logits_perm)?;
    let b = g.mean(b, Axis::All)?;
    let s = g.add(a, b)?;
    let loss = g.scale(s, 0.5)?;
    Ok((enc, loss))
}

/// Paired mini-batch of features.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x_i: Tensor,
    pub x_t: Tensor,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x_i.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x_i.rows() == 0
    }
}

/// Fixed random inputs of one objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepNoise {
    /// Logistic noise `log(u/(1−u))`, one `B x L` tensor per sample, per modality.
    pub logistic_i: Vec<Tensor>,
    pub logistic_t: Vec<Tensor>,
    /// Column-permuted copies are built from these row orders, one per bit.
    pub perm_i: Vec<Vec<usize>>,
    pub perm_t: Vec<Vec<usize>>,
}

impl StepNoise {
    pub fn draw<R1: Rng + ?Sized, R2: Rng + ?Sized>(
        noise_rng: &mut R1,
        perm_rng: &mut R2,
        b: usize,
        l: usize,
        samples: usize,
    ) -> Result<Self> {
        let draw = |rng: &mut R1| -> Result<Vec<Tensor>> {
            (0..samples.max(1))
                .map(|_| Tensor::from_vec(b, l, logistic_noise(rng, b * l)))
                .collect()
        };
        let logistic_i = draw(noise_rng)?;
        let logistic_t = draw(noise_rng)?;
        let perms = |rng: &mut R2| -> Vec<Vec<usize>> {
            (0..l)
                .map(|_| {
                    let mut p: Vec<usize> = (0..b).collect();
                    p.shuffle(rng);
                    p
                })
                .collect()
        };
        let perm_i = perms(perm_rng);
        let perm_t = perms(perm_rng);
        Ok(StepNoise {
            logistic_i,
            logistic_t,
            perm_i,
            perm_t,
        })
    }
}

fn apply_perms(mu: &Tensor, perms: &[Vec<usize>]) -> Tensor {
    let (b, l) = mu.shape();
    let mut out = Tensor::zeros(b, l);
    for (c, p) in perms.iter().enumerate().take(l) {
        for (r, &src) in p.iter().enumerate() {
            out.set(r, c, mu.get(src, c));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveOptions {
    #[serde(default)]
    pub critic_input: CriticInput,
    #[serde(default)]
    pub negative_mode: NegativeMode,
}

/// `h = ste_sign(logit(mu) + noise)`.
fn sample_codes(g: &mut Graph, mu: Var, noise: &Tensor) -> Result<Var> {
    let l = logit_var(g, mu)?;
    let n = g.constant(noise.clone())?;
    let z = g.add(l, n)?;
    g.ste_sign(z)
}

fn critic_scores(
    bundle: &ModelBundle,
    g: &mut Graph,
    binder: &mut Binder<'_>,
    mu_i: Var,
    mu_t: Var,
    noise: &StepNoise,
    opts: &ObjectiveOptions,
) -> Result<Var> {
    match opts.critic_input {
        CriticInput::Mu => critic_score_graph(&bundle.critic_phi_i, &bundle.critic_phi_t, g, binder, mu_i, mu_t),
        CriticInput::Samples(k) => {
            let k = k.max(1);
            let mut acc: Option<Var> = None;
            for s in 0..k {
                let hi = sample_codes(g, mu_i, &noise.logistic_i[s])?;
                let ht = sample_codes(g, mu_t, &noise.logistic_t[s])?;
                let sc = critic_score_graph(&bundle.critic_phi_i, &bundle.critic_phi_t, g, binder, hi, ht)?;
                acc = Some(match acc {
                    Some(a) => g.add(a, sc)?,
                    None => sc,
                });
            }
            let sum = acc.expect("k >= 1");
            g.scale(sum, 1.0 / k as f64)
        }
    }
}

/// Nodes of one full forward pass.
pub struct ObjectiveNodes {
    pub recon_i: Var,
    pub recon_t: Var,
    pub js_mi: Var,
    pub skl: Var,
    pub tc_i: Var,
    pub tc_t: Var,
    pub bal: Var,
    pub total: Var,
    pub mu_i: Var,
    pub mu_t: Var,
}

/// Builds the full objective on `g`. Parameters of the groups listed in the
/// binder's trainable set become differentiable leaves.
pub fn build_objective(
    bundle: &ModelBundle,
    g: &mut Graph,
    binder: &mut Binder<'_>,
    batch: &Batch,
    lambdas: &Lambdas,
    noise: &StepNoise,
    opts: &ObjectiveOptions,
) -> Result<ObjectiveNodes> {
    let b = batch.len();
    if b < 2 {
        return Err(Error::Contract(format!("objective needs B >= 2, got {b}")));
    }
    if batch.x_t.rows() != b {
        return dim_err(format!("batch rows {} vs {}", b, batch.x_t.rows()));
    }
    let xi = g.constant(batch.x_i.clone())?;
    let xt = g.constant(batch.x_t.clone())?;
    let mu_i = encode_graph(&bundle.encoder_i, g, binder, xi)?;
    let mu_t = encode_graph(&bundle.encoder_t, g, binder, xt)?;

    let hi = sample_codes(g, mu_i, &noise.logistic_i[0])?;
    let ht = sample_codes(g, mu_t, &noise.logistic_t[0])?;
    let xi_hat = bundle.decoder_i.forward(g, binder, hi)?;
    let xt_hat = bundle.decoder_t.forward(g, binder, ht)?;
    let recon_i = recon_bound(g, xi, xi_hat)?;
    let recon_t = recon_bound(g, xt, xt_hat)?;

    let scores = critic_scores(bundle, g, binder, mu_i, mu_t, noise, opts)?;
    let js_mi = js_mi_bound(g, scores, opts.negative_mode)?;
    let skl = skl_loss(g, mu_i, mu_t)?;

    let li = bundle.tc_classifier_i.forward(g, binder, mu_i)?;
    let lt = bundle.tc_classifier_t.forward(g, binder, mu_t)?;
    let tc_i = g.mean(li, Axis::All)?;
    let tc_t = g.mean(lt, Axis::All)?;
    let bal = balance_loss(g, mu_i, mu_t)?;

    let recon = g.add(recon_i, recon_t)?;
    let js_w = g.scale(js_mi, lambdas.lambda1)?;
    let skl_w = g.scale(skl, -lambdas.lambda2)?;
    let tc = g.add(tc_i, tc_t)?;
    let tc_w = g.scale(tc, -lambdas.lambda3)?;
    let bal_w = g.scale(bal, -lambdas.lambda4)?;
    let mut total = g.add(recon, js_w)?;
    total = g.add(total, skl_w)?;
    total = g.add(total, tc_w)?;
    total = g.add(total, bal_w)?;

    Ok(ObjectiveNodes {
        recon_i,
        recon_t,
        js_mi,
        skl,
        tc_i,
        tc_t,
        bal,
        total,
        mu_i,
        mu_t,
    })
}

impl ObjectiveNodes {
    pub fn breakdown(&self, g: &Graph) -> Result<LossBreakdown> {
        Ok(LossBreakdown {
            recon_i: g.scalar(self.recon_i)?,
            recon_t: g.scalar(self.recon_t)?,
            js_mi: g.scalar(self.js_mi)?,
            skl: g.scalar(self.skl)?,
            tc_i: g.scalar(self.tc_i)?,
            tc_t: g.scalar(self.tc_t)?,
            bal: g.scalar(self.bal)?,
            total: g.scalar(self.total)?,
        })
    }
}

/// Gradient of one scalar for each trainable parameter, by registry index.
pub type ParamGrads = Vec<(usize, Tensor)>;

fn collect_grads(g: &Graph, binder: &Binder<'_>, store: &ParamStore) -> ParamGrads {
    binder
        .bound_trainable()
        .map(|(idx, v)| {
            let grad = g.grad(v).cloned().unwrap_or_else(|| {
                let p = &store.get(idx).value;
                Tensor::zeros(p.rows(), p.cols())
            });
            (idx, grad)
        })
        .collect()
}

/// Full forward pass and `∂ total / ∂ θ` (ascent direction) for the
/// parameters of `trainable`.
pub fn total_objective(
    bundle: &ModelBundle,
    batch: &Batch,
    lambdas: &Lambdas,
    noise: &StepNoise,
    opts: &ObjectiveOptions,
    trainable: &[Group],
) -> Result<(LossBreakdown, ParamGrads)> {
    let mut g = Graph::new();
    total_objective_on(&mut g, bundle, batch, lambdas, noise, opts, trainable)
}

/// As [`total_objective`] on a caller-supplied graph (used to pick the
/// straight-through mode for gradient checks).
pub fn total_objective_on(
    g: &mut Graph,
    bundle: &ModelBundle,
    batch: &Batch,
    lambdas: &Lambdas,
    noise: &StepNoise,
    opts: &ObjectiveOptions,
    trainable: &[Group],
) -> Result<(LossBreakdown, ParamGrads)> {
    let mut binder = Binder::new(&bundle.params, trainable);
    let nodes = build_objective(bundle, g, &mut binder, batch, lambdas, noise, opts)?;
    let breakdown = nodes.breakdown(g)?;
    g.backward(nodes.total)?;
    Ok((breakdown, collect_grads(g, &binder, &bundle.params)))
}

/// Values reported by one critic/classifier update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AuxLosses {
    pub js_mi: f64,
    pub tc_bce_i: f64,
    pub tc_bce_t: f64,
}

/// Loss of the auxiliary networks with the encoders frozen:
/// `−js_mi + bce_i + bce_t`, differentiated for critic and classifier
/// parameters.
pub fn auxiliary_objective(
    bundle: &ModelBundle,
    mu_i: &Tensor,
    mu_t: &Tensor,
    noise: &StepNoise,
    opts: &ObjectiveOptions,
) -> Result<(AuxLosses, ParamGrads)> {
    let b = mu_i.rows();
    if b < 2 {
        return Err(Error::Contract(format!("objective needs B >= 2, got {b}")));
    }
    let trainable = [Group::CriticI, Group::CriticT, Group::TcI, Group::TcT];
    let mut g = Graph::new();
    let mut binder = Binder::new(&bundle.params, &trainable);
    let mi = g.constant(mu_i.clone())?;
    let mt = g.constant(mu_t.clone())?;
    let scores = critic_scores(bundle, &mut g, &mut binder, mi, mt, noise, opts)?;
    let js = js_mi_bound(&mut g, scores, opts.negative_mode)?;

    let pi = g.constant(apply_perms(mu_i, &noise.perm_i))?;
    let pt = g.constant(apply_perms(mu_t, &noise.perm_t))?;
    let ri = bundle.tc_classifier_i.forward(&mut g, &mut binder, mi)?;
    let fi = bundle.tc_classifier_i.forward(&mut g, &mut binder, pi)?;
    let rt = bundle.tc_classifier_t.forward(&mut g, &mut binder, mt)?;
    let ft = bundle.tc_classifier_t.forward(&mut g, &mut binder, pt)?;
    let (_, bce_i) = tc_terms(&mut g, ri, fi)?;
    let (_, bce_t) = tc_terms(&mut g, rt, ft)?;

    let neg_js = g.neg(js)?;
    let loss = g.add(neg_js, bce_i)?;
    let loss = g.add(loss, bce_t)?;
    g.backward(loss)?;
    let losses = AuxLosses {
        js_mi: g.scalar(js)?,
        tc_bce_i: g.scalar(bce_i)?,
        tc_bce_t: g.scalar(bce_t)?,
    };
    Ok((losses, collect_grads(&g, &binder, &bundle.params)))
}

/// Clamped probabilities, for callers that build `mu` by hand.
pub fn clamp_mu(mu: &Tensor) -> Tensor {
    mu.map(|v| v.clamp(EPS, 1.0 - EPS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bernoulli::{skl_bernoulli, BernoulliCode};
    use crate::nn::Arch;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn value_of(f: impl FnOnce(&mut Graph) -> Result<Var>) -> f64 {
        let mut g = Graph::new();
        let v = f(&mut g).unwrap();
        g.scalar(v).unwrap()
    }

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn recon_examples() {
        let x = t(&[&[1.0, 0.0]]);
        let v = value_of(|g| {
            let a = g.constant(x.clone())?;
            let b = g.constant(x.clone())?;
            recon_bound(g, a, b)
        });
        assert_eq!(v, 0.0);
        let v = value_of(|g| {
            let a = g.constant(x.clone())?;
            let b = g.constant(t(&[&[0.0, 0.0]]))?;
            recon_bound(g, a, b)
        });
        assert_eq!(v, -1.0);
    }

    #[test]
    fn recon_gradient_is_twice_residual_over_batch() {
        let x = t(&[&[1.0, -2.0], &[0.5, 3.0], &[0.0, 1.0]]);
        let xh = t(&[&[0.2, -1.0], &[1.5, 2.0], &[-0.5, 0.0]]);
        let mut g = Graph::new();
        let a = g.constant(x.clone()).unwrap();
        let b = g.param(xh.clone()).unwrap();
        let r = recon_bound(&mut g, a, b).unwrap();
        g.backward(r).unwrap();
        let grad = g.grad(b).unwrap();
        for i in 0..x.len() {
            let want = 2.0 * (x.data()[i] - xh.data()[i]) / 3.0;
            assert!((grad.data()[i] - want).abs() < 1e-15);
        }
        let mut g = Graph::new();
        let a = g.constant(x).unwrap();
        let c = g.constant(Tensor::zeros(3, 3)).unwrap();
        assert!(matches!(recon_bound(&mut g, a, c), Err(Error::Dimension(_))));
    }

    #[test]
    fn js_zero_scores_give_zero() {
        let v = js_mi_bound_value(&Tensor::zeros(4, 4), NegativeMode::FullMatrix).unwrap();
        assert!(v.abs() < 1e-15);
        let v = js_mi_bound_value(&Tensor::zeros(4, 4), NegativeMode::CyclicShift).unwrap();
        assert!(v.abs() < 1e-15);
        assert!(matches!(
            js_mi_bound_value(&Tensor::zeros(1, 1), NegativeMode::FullMatrix),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn js_saturates_at_two_log_two() {
        let mut s = Tensor::full(3, 3, -200.0);
        for r in 0..3 {
            s.set(r, r, 200.0);
        }
        let v = js_mi_bound_value(&s, NegativeMode::FullMatrix).unwrap();
        assert!((v - 2.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn stable_forms_match_direct_formulas() {
        for &x in &[-8.0, -1.3, 0.0, 0.4, 2.7, 9.0] {
            let direct_tbar = LN_2 - (1.0 + f64::exp(-x)).ln();
            assert!((t_bar(x) - direct_tbar).abs() < 1e-12);
            let direct = (2.0 - t_bar(x).exp()).ln();
            assert!((LN_2 - softplus(x) - direct).abs() < 1e-9, "x={x}");
        }
    }

    #[test]
    fn js_batch_equals_weighted_population_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = 5;
        let s = Tensor::from_vec(b, b, (0..b * b).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let mut pj = vec![0.0; b * b];
        let mut pq = vec![0.0; b * b];
        for r in 0..b {
            for c in 0..b {
                if r == c {
                    pj[r * b + c] = 1.0 / b as f64;
                } else {
                    pq[r * b + c] = 1.0 / (b * (b - 1)) as f64;
                }
            }
        }
        let pop = js_bound_population(&pj, &pq, s.data()).unwrap();
        let batch = js_mi_bound_value(&s, NegativeMode::FullMatrix).unwrap();
        assert!((pop - batch).abs() < 1e-13);
    }

    #[test]
    fn skl_examples() {
        let v = value_of(|g| {
            let a = g.constant(t(&[&[0.8]]))?;
            let b = g.constant(t(&[&[0.5]]))?;
            skl_loss(g, a, b)
        });
        assert!((v - 0.3 * 4f64.ln()).abs() < 1e-12);
        let v = value_of(|g| {
            let a = g.constant(t(&[&[0.3, 0.9]]))?;
            skl_loss(g, a, a)
        });
        assert_eq!(v, 0.0);
    }

    #[test]
    fn balance_examples() {
        let half = Tensor::full(4, 3, 0.5);
        let v = value_of(|g| {
            let a = g.constant(half.clone())?;
            balance_loss(g, a, a)
        });
        assert_eq!(v, 0.0);
        let ones = Tensor::full(4, 3, 1.0 - EPS);
        let v = value_of(|g| {
            let a = g.constant(ones.clone())?;
            balance_loss(g, a, a)
        });
        assert!((v - 3.0).abs() < 1e-5);
        let mixed = t(&[&[0.2, 0.8], &[0.8, 0.2]]);
        let v = value_of(|g| {
            let a = g.constant(mixed.clone())?;
            balance_loss(g, a, a)
        });
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn balance_kink_has_zero_subgradient() {
        let mut g = Graph::new();
        let a = g.param(Tensor::full(2, 2, 0.5)).unwrap();
        let c = g.constant(Tensor::full(2, 2, 0.5)).unwrap();
        let v = balance_loss(&mut g, a, c).unwrap();
        g.backward(v).unwrap();
        assert!(g.grad(a).unwrap().data().iter().all(|&x| x == 0.0));
    }

    struct ConstRatio(f64);
    impl DensityRatio for ConstRatio {
        fn logits(&self, rows: &Tensor) -> Result<Tensor> {
            Ok(Tensor::full(rows.rows(), 1, self.0))
        }
    }

    #[test]
    fn tc_at_maximal_uncertainty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mu = Tensor::from_vec(4, 3, (0..12).map(|v| 0.05 + v as f64 * 0.07).collect()).unwrap();
        let (enc, bce) = tc_loss(&ConstRatio(0.0), &mu, &mut rng).unwrap();
        assert_eq!(enc, 0.0);
        assert!((bce - LN_2).abs() < 1e-15);
        assert!(matches!(
            tc_loss(&ConstRatio(0.0), &Tensor::zeros(1, 3), &mut rng),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn graph_tc_terms_match_value_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let arch = Arch::new(3, 3, 4).with_widths(6, 6);
        let bundle = ModelBundle::new(arch, 2).unwrap();
        let mu = Tensor::from_vec(6, 4, (0..24).map(|_| rng.random_range(0.01..0.99)).collect()).unwrap();
        let perm = permute_columns(&mu, &mut rng);
        let ratio = ClassifierRatio {
            net: &bundle.tc_classifier_i,
            store: &bundle.params,
        };
        let (enc, bce) = tc_loss_with(&ratio, &mu, &perm).unwrap();
        let mut g = Graph::new();
        let mut binder = Binder::new(&bundle.params, &[]);
        let m = g.constant(mu).unwrap();
        let p = g.constant(perm).unwrap();
        let r = bundle.tc_classifier_i.forward(&mut g, &mut binder, m).unwrap();
        let f = bundle.tc_classifier_i.forward(&mut g, &mut binder, p).unwrap();
        let (e, l) = tc_terms(&mut g, r, f).unwrap();
        assert!((g.scalar(e).unwrap() - enc).abs() < 1e-12);
        assert!((g.scalar(l).unwrap() - bce).abs() < 1e-12);
    }

    #[test]
    fn column_permutation_preserves_column_multisets() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mu = Tensor::from_vec(5, 3, (0..15).map(|v| v as f64).collect()).unwrap();
        let p = permute_columns(&mu, &mut rng);
        for c in 0..3 {
            let mut a: Vec<f64> = (0..5).map(|r| mu.get(r, c)).collect();
            let mut b: Vec<f64> = (0..5).map(|r| p.get(r, c)).collect();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert_eq!(a, b);
        }
    }

    fn toy(seed: u64) -> (ModelBundle, Batch, StepNoise) {
        let arch = Arch::new(8, 8, 4).with_widths(10, 9);
        let bundle = ModelBundle::new(arch, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let mut rand_t =
            |r, c| Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let batch = Batch {
            x_i: rand_t(5, 8),
            x_t: rand_t(5, 8),
        };
        let mut n1 = ChaCha8Rng::seed_from_u64(seed + 200);
        let mut n2 = ChaCha8Rng::seed_from_u64(seed + 300);
        let noise = StepNoise::draw(&mut n1, &mut n2, 5, 4, 2).unwrap();
        (bundle, batch, noise)
    }

    #[test]
    fn zero_lambdas_collapse_to_reconstruction() {
        let (bundle, batch, noise) = toy(1);
        let (b, _) = total_objective(&bundle, &batch, &Lambdas::zero(), &noise, &Default::default(), &[]).unwrap();
        assert_eq!(b.total, b.recon_i + b.recon_t);
    }

    #[test]
    fn breakdown_identity_for_random_lambdas() {
        let (bundle, batch, noise) = toy(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..5 {
            let l = Lambdas {
                lambda1: rng.random_range(0.0..5.0),
                lambda2: rng.random_range(0.0..5.0),
                lambda3: rng.random_range(0.0..5.0),
                lambda4: rng.random_range(0.0..5.0),
            };
            let (b, _) = total_objective(&bundle, &batch, &l, &noise, &Default::default(), &[]).unwrap();
            assert!((b.total - b.assemble(&l)).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_is_deterministic() {
        let (bundle, batch, noise) = toy(3);
        let opts = ObjectiveOptions {
            critic_input: CriticInput::Samples(2),
            negative_mode: NegativeMode::CyclicShift,
        };
        let a = total_objective(&bundle, &batch, &Lambdas::default(), &noise, &opts, &Group::ALL).unwrap();
        let b = total_objective(&bundle, &batch, &Lambdas::default(), &noise, &opts, &Group::ALL).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn aux_objective_touches_only_auxiliary_groups() {
        let (bundle, batch, noise) = toy(4);
        let mu_i = bundle.encode(crate::Modality::Image, &batch.x_i).unwrap();
        let mu_t = bundle.encode(crate::Modality::Text, &batch.x_t).unwrap();
        let (_, grads) = auxiliary_objective(&bundle, &mu_i, &mu_t, &noise, &Default::default()).unwrap();
        assert!(!grads.is_empty());
        for (idx, _) in grads {
            assert!(bundle.params.get(idx).group.is_auxiliary());
        }
    }

    proptest! {
        #[test]
        fn skl_graph_matches_closed_form(
            rows in proptest::collection::vec(proptest::collection::vec((0.001f64..0.999, 0.001f64..0.999), 3), 1..6)
        ) {
            let b = rows.len();
            let a: Vec<f64> = rows.iter().flatten().map(|p| p.0).collect();
            let c: Vec<f64> = rows.iter().flatten().map(|p| p.1).collect();
            let want: f64 = rows.iter().map(|r| {
                let (x, y): (Vec<f64>, Vec<f64>) = r.iter().copied().unzip();
                skl_bernoulli(&BernoulliCode::clamp(&x), &BernoulliCode::clamp(&y)).unwrap()
            }).sum::<f64>() / b as f64;
            let (ta, tc) = (Tensor::from_vec(b, 3, a).unwrap(), Tensor::from_vec(b, 3, c).unwrap());
            let got = value_of(|g| { let x = g.constant(ta.clone())?; let y = g.constant(tc.clone())?; skl_loss(g, x, y) });
            let swapped = value_of(|g| { let x = g.constant(tc.clone())?; let y = g.constant(ta.clone())?; skl_loss(g, x, y) });
            prop_assert!((got - want).abs() < 1e-10 * want.max(1.0));
            prop_assert!(got >= 0.0);
            prop_assert!((got - swapped).abs() < 1e-12 * got.max(1.0));
        }

        #[test]
        fn balance_is_row_permutation_invariant(
            vals in proptest::collection::vec(0.0f64..1.0, 12), shift in 0usize..4
        ) {
            let mu = Tensor::from_vec(4, 3, vals).unwrap();
            let order: Vec<usize> = (0..4).map(|r| (r + shift) % 4).collect();
            let perm = mu.select_rows(&order);
            let a = value_of(|g| { let x = g.constant(mu.clone())?; balance_loss(g, x, x) });
            let b = value_of(|g| { let x = g.constant(perm.clone())?; balance_loss(g, x, x) });
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a >= 0.0);
        }
    }
}
