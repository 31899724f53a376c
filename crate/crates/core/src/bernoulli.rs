//! Product-Bernoulli code distributions.
//!
//! A code of length `L` is parameterised by per-bit probabilities `mu`.
//! Samples use the logistic reparameterisation
//! `z = log(mu / (1 - mu)) + log(u / (1 - u))`, `h = [z >= 0]`, which gives
//! `P(h_l = 1) = mu_l` exactly.

use rand::Rng;

use crate::error::{dim_err, Error, Result};

/// Clamping margin applied to every probability before a log is taken.
pub const EPS: f64 = 1e-6;

/// Probabilities of one code, every entry inside `[EPS, 1 - EPS]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliCode {
    mu: Vec<f64>,
}

impl BernoulliCode {
    /// Clamps raw probabilities into `[EPS, 1 - EPS]`.
    pub fn clamp(mu_raw: &[f64]) -> Self {
        BernoulliCode {
            mu: mu_raw.iter().map(|&m| clamp_prob(m)).collect(),
        }
    }

    /// Takes probabilities as given, for exact enumeration where masses of
    /// exactly 0 or 1 are wanted. Entries must lie in `[0, 1]`.
    pub fn from_unclamped(mu: &[f64]) -> Self {
        BernoulliCode { mu: mu.to_vec() }
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// Probability of one bit pattern under the product distribution.
    pub fn prob(&self, bits: &[u8]) -> f64 {
        self.mu
            .iter()
            .zip(bits)
            .map(|(&m, &b)| if b == 1 { m } else { 1.0 - m })
            .product()
    }

    /// Entropy in nats.
    pub fn entropy(&self) -> f64 {
        self.mu.iter().map(|&m| binary_entropy(m)).sum()
    }
}

pub fn clamp_prob(m: f64) -> f64 {
    if m.is_nan() {
        return 0.5;
    }
    m.clamp(EPS, 1.0 - EPS)
}

pub fn binary_entropy(m: f64) -> f64 {
    let mut h = 0.0;
    if m > 0.0 {
        h -= m * m.ln();
    }
    if m < 1.0 {
        h -= (1.0 - m) * (1.0 - m).ln();
    }
    h
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One reparameterised draw: the bits together with the logits and uniforms
/// that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeSample {
    pub h: Vec<u8>,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
}

/// `u` must lie strictly inside `(0, 1)`.
pub fn reparam_sample(mu: &BernoulliCode, u: &[f64]) -> Result<CodeSample> {
    if u.len() != mu.len() {
        return dim_err(format!("reparam_sample: {} uniforms for {} bits", u.len(), mu.len()));
    }
    if let Some(bad) = u.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
        return Err(Error::Domain(format!("uniform draw {bad} outside (0, 1)")));
    }
    let z: Vec<f64> = mu.mu.iter().zip(u).map(|(&m, &u)| logit(m) + logit(u)).collect();
    let h = z.iter().map(|&z| u8::from(z >= 0.0)).collect();
    Ok(CodeSample { h, z, u: u.to_vec() })
}

/// Uniform draw from the open interval, resampling exact endpoints.
pub fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 && u < 1.0 {
            return u;
        }
    }
}

pub fn draw_uniforms<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| open_uniform(rng)).collect()
}

/// Standard logistic noise `log(u / (1 - u))`.
pub fn logistic_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| logit(open_uniform(rng))).collect()
}

/// Closed-form `KL[Bern(p) || Bern(q)]` for product distributions.
pub fn kl_bernoulli(p: &BernoulliCode, q: &BernoulliCode) -> Result<f64> {
    if p.len() != q.len() {
        return dim_err(format!("kl_bernoulli: lengths {} and {}", p.len(), q.len()));
    }
    Ok(p.mu
        .iter()
        .zip(&q.mu)
        .map(|(&a, &b)| kl_bit(a, b))
        .sum::<f64>()
        .max(0.0))
}

fn kl_bit(a: f64, b: f64) -> f64 {
    a * (a / b).ln() + (1.0 - a) * ((1.0 - a) / (1.0 - b)).ln()
}

/// `KL[p || q] + KL[q || p]`.
pub fn skl_bernoulli(p: &BernoulliCode, q: &BernoulliCode) -> Result<f64> {
    Ok(kl_bernoulli(p, q)? + kl_bernoulli(q, p)?)
}

/// Gradient of `kl_bernoulli(p, q)` with respect to `(p.mu, q.mu)`.
pub fn kl_bernoulli_grad(p: &BernoulliCode, q: &BernoulliCode) -> Result<(Vec<f64>, Vec<f64>)> {
    if p.len() != q.len() {
        return dim_err(format!("kl_bernoulli_grad: lengths {} and {}", p.len(), q.len()));
    }
    let dp = p.mu.iter().zip(&q.mu).map(|(&a, &b)| logit(a) - logit(b)).collect();
    let dq =
        p.mu.iter()
            .zip(&q.mu)
            .map(|(&a, &b)| -a / b + (1.0 - a) / (1.0 - b))
            .collect();
    Ok((dp, dq))
}
