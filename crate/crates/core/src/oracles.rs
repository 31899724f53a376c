//! Exact enumeration over small discrete spaces.
//!
//! Codes of length `L ≤ 6` are indexed by integers in `0..2^L`, bit `l` of
//! the index being bit `l` of the code.

use rand::Rng;

use crate::bernoulli::{binary_entropy, BernoulliCode};
use crate::error::{dim_err, Error, Result};

pub const MAX_ALPHABET: usize = 8;
pub const MAX_CODE_LEN: usize = 6;
const NORM_TOL: f64 = 1e-12;

fn xlogx_ratio(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (p / q).ln()
    }
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::Domain(format!("{what}: negative or non-finite mass")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > NORM_TOL {
        return Err(Error::Domain(format!("{what}: total mass {s} is not 1")));
    }
    Ok(())
}

/// Bits of code index `idx`.
pub fn bits_of(idx: usize, l: usize) -> Vec<u8> {
    (0..l).map(|b| ((idx >> b) & 1) as u8).collect()
}

/// Probability of every code under a product-Bernoulli distribution.
pub fn code_table(mu: &BernoulliCode) -> Vec<f64> {
    let l = mu.len();
    let mut t = vec![1.0; 1 << l];
    for (idx, p) in t.iter_mut().enumerate() {
        for (b, &m) in mu.mu().iter().enumerate() {
            *p *= if (idx >> b) & 1 == 1 { m } else { 1.0 - m };
        }
    }
    t
}

/// Row-major `na x nb` joint table of two discrete variables.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    pub na: usize,
    pub nb: usize,
    pub p: Vec<f64>,
}

impl JointTable {
    pub fn new(na: usize, nb: usize, p: Vec<f64>) -> Result<Self> {
        if p.len() != na * nb {
            return dim_err(format!("joint table: {} entries for {na}x{nb}", p.len()));
        }
        check_distribution(&p, "joint table")?;
        Ok(JointTable { na, nb, p })
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.p[a * self.nb + b]
    }

    pub fn marginal_a(&self) -> Vec<f64> {
        (0..self.na)
            .map(|a| (0..self.nb).map(|b| self.get(a, b)).sum())
            .collect()
    }

    pub fn marginal_b(&self) -> Vec<f64> {
        (0..self.nb)
            .map(|b| (0..self.na).map(|a| self.get(a, b)).sum())
            .collect()
    }

    /// Product of the two marginals, same layout.
    pub fn product(&self) -> Vec<f64> {
        let (ma, mb) = (self.marginal_a(), self.marginal_b());
        let mut out = Vec::with_capacity(self.na * self.nb);
        for &pa in &ma {
            for &pb in &mb {
                out.push(pa * pb);
            }
        }
        out
    }
}

/// `Σ p(a,b) log(p(a,b) / (p(a) p(b)))`.
pub fn exact_mi(joint: &JointTable) -> f64 {
    let (ma, mb) = (joint.marginal_a(), joint.marginal_b());
    let mut s = 0.0;
    for a in 0..joint.na {
        for b in 0..joint.nb {
            s += xlogx_ratio(joint.get(a, b), ma[a] * mb[b]);
        }
    }
    s.max(0.0)
}

/// `H(A) + H(B) − H(A,B)`, summed column-first.
pub fn exact_mi_entropy_form(joint: &JointTable) -> f64 {
    let mut h_ab = 0.0;
    for b in 0..joint.nb {
        for a in 0..joint.na {
            let v = joint.get(a, b);
            if v > 0.0 {
                h_ab -= v * v.ln();
            }
        }
    }
    (entropy(&joint.marginal_a()) + entropy(&joint.marginal_b()) - h_ab).max(0.0)
}

pub fn exact_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return dim_err(format!("exact_kl: {} vs {} outcomes", p.len(), q.len()));
    }
    Ok(p.iter().zip(q).map(|(&a, &b)| xlogx_ratio(a, b)).sum::<f64>().max(0.0))
}

/// Jensen-Shannon divergence with the standard ½-mixture, in `[0, log 2]`.
pub fn exact_jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return dim_err(format!("exact_jsd: {} vs {} outcomes", p.len(), q.len()));
    }
    check_distribution(p, "exact_jsd p")?;
    check_distribution(q, "exact_jsd q")?;
    let m: Vec<f64> = p.iter().zip(q).map(|(&a, &b)| 0.5 * (a + b)).collect();
    Ok(0.5 * exact_kl(p, &m)? + 0.5 * exact_kl(q, &m)?)
}

/// The divergence that the Jensen-Shannon MI estimator approaches at the
/// optimal critic: `2·JSD`, in `[0, 2 log 2]`.
pub fn exact_js_fdiv(p: &[f64], q: &[f64]) -> Result<f64> {
    Ok(2.0 * exact_jsd(p, q)?)
}

/// `KL[p‖q]` between product-Bernoulli codes by summing over `{0,1}^L`.
pub fn exhaustive_kl(p: &BernoulliCode, q: &BernoulliCode) -> Result<f64> {
    if p.len() != q.len() {
        return dim_err(format!("exhaustive_kl: lengths {} and {}", p.len(), q.len()));
    }
    exact_kl(&code_table(p), &code_table(q))
}

/// Finite mixture of product-Bernoulli components.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliMixture {
    pub weights: Vec<f64>,
    pub components: Vec<BernoulliCode>,
}

impl BernoulliMixture {
    pub fn new(weights: Vec<f64>, components: Vec<BernoulliCode>) -> Result<Self> {
        if weights.len() != components.len() || components.is_empty() {
            return dim_err("mixture: weights and components differ in number");
        }
        let l = components[0].len();
        if l > MAX_CODE_LEN || components.iter().any(|c| c.len() != l) {
            return dim_err(format!("mixture: code lengths must agree and be <= {MAX_CODE_LEN}"));
        }
        check_distribution(&weights, "mixture weights")?;
        Ok(BernoulliMixture { weights, components })
    }

    pub fn code_len(&self) -> usize {
        self.components[0].len()
    }

    pub fn table(&self) -> Vec<f64> {
        let mut q = vec![0.0; 1 << self.code_len()];
        for (w, c) in self.weights.iter().zip(&self.components) {
            for (acc, p) in q.iter_mut().zip(code_table(c)) {
                *acc += w * p;
            }
        }
        q
    }

    /// `q(z_l = 1)` for every bit.
    pub fn bit_marginals(&self) -> Vec<f64> {
        (0..self.code_len())
            .map(|l| {
                self.weights
                    .iter()
                    .zip(&self.components)
                    .map(|(w, c)| w * c.mu()[l])
                    .sum()
            })
            .collect()
    }

    /// `Π_l q(z_l)` on every code.
    pub fn factorised_table(&self) -> Vec<f64> {
        code_table(&BernoulliCode::from_unclamped(&self.bit_marginals()))
    }

    /// Bayes-optimal log density ratio `log(q(z) / Π q(z_l))` per code.
    pub fn log_ratio_table(&self) -> Vec<f64> {
        self.table()
            .iter()
            .zip(self.factorised_table())
            .map(|(&q, f)| (q / f).ln())
            .collect()
    }
}

/// `KL[q(z) ‖ Π q(z_l)]` by enumeration.
pub fn exact_tc(mix: &BernoulliMixture) -> f64 {
    let q = mix.table();
    let f = mix.factorised_table();
    q.iter().zip(&f).map(|(&a, &b)| xlogx_ratio(a, b)).sum::<f64>().max(0.0)
}

/// `Σ_l H(z_l) − H(z)`.
pub fn exact_tc_entropy_form(mix: &BernoulliMixture) -> f64 {
    let marg: f64 = mix.bit_marginals().iter().map(|&m| binary_entropy(m)).sum();
    (marg - entropy(&mix.table())).max(0.0)
}

/// Paired inputs over small alphabets with per-input product-Bernoulli
/// encoders of a shared code length.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    pub joint: JointTable,
    pub enc_i: Vec<BernoulliCode>,
    pub enc_t: Vec<BernoulliCode>,
}

impl DiscreteJoint {
    pub fn new(joint: JointTable, enc_i: Vec<BernoulliCode>, enc_t: Vec<BernoulliCode>) -> Result<Self> {
        if joint.na > MAX_ALPHABET || joint.nb > MAX_ALPHABET {
            return dim_err(format!("alphabets are capped at {MAX_ALPHABET}"));
        }
        if enc_i.len() != joint.na || enc_t.len() != joint.nb {
            return dim_err("one encoder table per input value is required");
        }
        let l = enc_i.first().map_or(0, |c| c.len());
        if l == 0 || l > MAX_CODE_LEN || enc_i.iter().chain(&enc_t).any(|c| c.len() != l) {
            return dim_err(format!("code length must be shared and in 1..={MAX_CODE_LEN}"));
        }
        Ok(DiscreteJoint { joint, enc_i, enc_t })
    }

    pub fn code_len(&self) -> usize {
        self.enc_i[0].len()
    }

    /// Random instance with alphabets in `2..=8` and `L` in `1..=max_l`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_l: usize) -> Self {
        let na = rng.random_range(2..=MAX_ALPHABET);
        let nb = rng.random_range(2..=MAX_ALPHABET);
        let l = rng.random_range(1..=max_l.clamp(1, MAX_CODE_LEN));
        let mut w: Vec<f64> = (0..na * nb)
            .map(|_| -crate::bernoulli::open_uniform(rng).ln())
            .collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        let mut enc = |n: usize| -> Vec<BernoulliCode> {
            (0..n)
                .map(|_| BernoulliCode::clamp(&(0..l).map(|_| rng.random::<f64>()).collect::<Vec<_>>()))
                .collect()
        };
        let enc_i = enc(na);
        let enc_t = enc(nb);
        DiscreteJoint {
            joint: JointTable::new(na, nb, w).expect("normalised by construction"),
            enc_i,
            enc_t,
        }
    }

    /// Joint table of `(h^i, h^t)` over `2^L x 2^L` codes, `h^i` indexing rows.
    pub fn code_joint(&self) -> JointTable {
        let n = 1 << self.code_len();
        let ti: Vec<Vec<f64>> = self.enc_i.iter().map(code_table).collect();
        let tt: Vec<Vec<f64>> = self.enc_t.iter().map(code_table).collect();
        let mut p = vec![0.0; n * n];
        for a in 0..self.joint.na {
            for b in 0..self.joint.nb {
                let w = self.joint.get(a, b);
                for (hi, &pi) in ti[a].iter().enumerate() {
                    let row = &mut p[hi * n..(hi + 1) * n];
                    for (acc, &pt) in row.iter_mut().zip(&tt[b]) {
                        *acc += w * pi * pt;
                    }
                }
            }
        }
        // Re-normalise away summation rounding before validation.
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        JointTable { na: n, nb: n, p }
    }
}

/// Quantities of the private-information identity for one direction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PrivateInfoTerms {
    /// `I(x; h | x')` as `H(h|x') − H(h|x)`.
    pub a_entropy: f64,
    /// `I(x; h | x')` as the expected log ratio `log P(h|x) / P(h|x')`.
    pub a_log_ratio: f64,
    /// `E_joint KL[P(h|x) ‖ P'(h|x')]`.
    pub b: f64,
    /// `E_{x'} KL[P(h|x') ‖ P'(h|x')]` with `P(h|x') = Σ_x p(x|x') P(h|x)`.
    pub c: f64,
}

impl PrivateInfoTerms {
    pub fn identity_error(&self) -> f64 {
        (self.a_entropy - (self.b - self.c))
            .abs()
            .max((self.a_log_ratio - (self.b - self.c)).abs())
            .max((self.a_entropy - self.a_log_ratio).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PrivateInfoReport {
    pub image: PrivateInfoTerms,
    pub text: PrivateInfoTerms,
    /// `E_joint SKL[P_i(h|x^i), P_t(h|x^t)]`.
    pub skl: f64,
    pub max_identity_error: f64,
    pub inequalities_hold: bool,
    pub skl_bound_holds: bool,
}

impl PrivateInfoReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_identity_error <= tol && self.inequalities_hold && self.skl_bound_holds
    }
}

/// `own[x]` encodes the conditioning-side input `x`, `other[x']` the paired
/// input; `cond[x][x']` holds `p(x, x')`.
fn private_terms(cond: &[Vec<f64>], own: &[Vec<f64>], other: &[Vec<f64>]) -> PrivateInfoTerms {
    let nx = own.len();
    let ny = other.len();
    let nh = own[0].len();
    let p_y: Vec<f64> = (0..ny).map(|y| (0..nx).map(|x| cond[x][y]).sum()).collect();
    // P(h | x') = Σ_x p(x | x') P(h | x)
    let mixed: Vec<Vec<f64>> = (0..ny)
        .map(|y| {
            let mut m = vec![0.0; nh];
            if p_y[y] > 0.0 {
                for x in 0..nx {
                    let w = cond[x][y] / p_y[y];
                    for (acc, &v) in m.iter_mut().zip(&own[x]) {
                        *acc += w * v;
                    }
                }
            }
            m
        })
        .collect();

    let h_given_x: f64 = (0..nx)
        .map(|x| {
            let px: f64 = (0..ny).map(|y| cond[x][y]).sum();
            px * entropy(&own[x])
        })
        .sum();
    let h_given_y: f64 = (0..ny).map(|y| p_y[y] * entropy(&mixed[y])).sum();

    let mut a_log_ratio = 0.0;
    let mut b = 0.0;
    for x in 0..nx {
        for y in 0..ny {
            let w = cond[x][y];
            if w == 0.0 {
                continue;
            }
            for h in 0..nh {
                let p = own[x][h];
                if p > 0.0 {
                    a_log_ratio += w * p * (p / mixed[y][h]).ln();
                    b += w * p * (p / other[y][h]).ln();
                }
            }
        }
    }
    let c: f64 = (0..ny)
        .map(|y| {
            p_y[y]
                * mixed[y]
                    .iter()
                    .zip(&other[y])
                    .map(|(&m, &o)| xlogx_ratio(m, o))
                    .sum::<f64>()
        })
        .sum();
    PrivateInfoTerms {
        a_entropy: h_given_y - h_given_x,
        a_log_ratio,
        b,
        c,
    }
}

/// Evaluates by enumeration `I(x^i; h^i | x^t) = E KL[P_i(h|x^i) ‖ P_t(h|x^t)]
/// − E KL[P_i(h|x^t) ‖ P_t(h|x^t)]`, its text-side mirror and the sum bound
/// `I(x^i; h^i | x^t) + I(x^t; h^t | x^i) ≤ E SKL`.
pub fn verify_private_info_identity(inst: &DiscreteJoint) -> Result<PrivateInfoReport> {
    check_distribution(&inst.joint.p, "instance joint")?;
    let ti: Vec<Vec<f64>> = inst.enc_i.iter().map(code_table).collect();
    let tt: Vec<Vec<f64>> = inst.enc_t.iter().map(code_table).collect();
    let (na, nb) = (inst.joint.na, inst.joint.nb);
    let cond_it: Vec<Vec<f64>> = (0..na)
        .map(|a| (0..nb).map(|b| inst.joint.get(a, b)).collect())
        .collect();
    let cond_ti: Vec<Vec<f64>> = (0..nb)
        .map(|b| (0..na).map(|a| inst.joint.get(a, b)).collect())
        .collect();
    let image = private_terms(&cond_it, &ti, &tt);
    let text = private_terms(&cond_ti, &tt, &ti);

    let mut skl = 0.0;
    for a in 0..na {
        for b in 0..nb {
            let w = inst.joint.get(a, b);
            skl += w * (exact_kl(&ti[a], &tt[b])? + exact_kl(&tt[b], &ti[a])?);
        }
    }
    let slack = 1e-12;
    let inequalities_hold = image.a_entropy <= image.b + slack
        && text.a_entropy <= text.b + slack
        && image.a_entropy >= -slack
        && text.a_entropy >= -slack
        && image.c >= -slack
        && text.c >= -slack;
    let skl_bound_holds = image.a_entropy + text.a_entropy <= skl + slack;
    Ok(PrivateInfoReport {
        image,
        text,
        skl,
        max_identity_error: image.identity_error().max(text.identity_error()),
        inequalities_hold,
        skl_bound_holds,
    })
}

/// Per-code counts summing to `n` that follow `p` as closely as integer
/// counts allow (largest remainder).
pub fn proportional_counts(p: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = p.iter().map(|&v| v * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|&v| v.floor() as usize).collect();
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| {
        (raw[b] - raw[b].floor())
            .total_cmp(&(raw[a] - raw[a].floor()))
            .then(a.cmp(&b))
    });
    for &i in &order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    #[test]
    fn mi_examples() {
        let ind = JointTable::new(2, 2, vec![0.25; 4]).unwrap();
        assert!(exact_mi(&ind).abs() < 1e-15);
        let corr = JointTable::new(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert!((exact_mi(&corr) - LN_2).abs() < 1e-15);
        assert!(matches!(JointTable::new(2, 2, vec![0.3; 4]), Err(Error::Domain(_))));
    }

    #[test]
    fn mi_summation_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let inst = DiscreteJoint::random(&mut rng, 3);
            let j = &inst.joint;
            assert!((exact_mi(j) - exact_mi_entropy_form(j)).abs() < 1e-12);
        }
    }

    #[test]
    fn jsd_examples() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(exact_jsd(&p, &p).unwrap(), 0.0);
        let a = [0.5, 0.5, 0.0, 0.0];
        let b = [0.0, 0.0, 0.5, 0.5];
        assert!((exact_jsd(&a, &b).unwrap() - LN_2).abs() < 1e-15);
        assert!((exact_js_fdiv(&a, &b).unwrap() - 2.0 * LN_2).abs() < 1e-15);
    }

    #[test]
    fn correlated_two_bit_instance_value() {
        let mut p = vec![0.0; 16];
        for h in 0..4 {
            p[h * 4 + h] = 0.25;
        }
        let j = JointTable::new(4, 4, p).unwrap();
        let want = 0.5 * (1.6f64.ln() + 0.25 * 0.4f64.ln() + 0.75 * LN_2);
        assert!((exact_jsd(&j.p, &j.product()).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn exhaustive_kl_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for l in 1..=6 {
            let mk =
                |rng: &mut ChaCha8Rng| BernoulliCode::clamp(&(0..l).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
            let (p, q) = (mk(&mut rng), mk(&mut rng));
            let a = exhaustive_kl(&p, &q).unwrap();
            let b = crate::bernoulli::kl_bernoulli(&p, &q).unwrap();
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn tc_examples() {
        let ind = BernoulliMixture::new(vec![1.0], vec![BernoulliCode::clamp(&[0.3, 0.8, 0.5])]).unwrap();
        assert!(exact_tc(&ind) < 1e-15);
        // z1 == z2 fair coins
        let copy = BernoulliMixture::new(
            vec![0.5, 0.5],
            vec![
                BernoulliCode::from_unclamped(&[0.0, 0.0]),
                BernoulliCode::from_unclamped(&[1.0, 1.0]),
            ],
        )
        .unwrap();
        assert!((exact_tc(&copy) - LN_2).abs() < 1e-15);
        assert!((exact_tc_entropy_form(&copy) - LN_2).abs() < 1e-15);
    }

    #[test]
    fn tc_routes_agree_on_random_mixtures() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let k = rng.random_range(1..5);
            let l = rng.random_range(1..=6);
            let mut w: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.01).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
            let comps = (0..k)
                .map(|_| BernoulliCode::clamp(&(0..l).map(|_| rng.random::<f64>()).collect::<Vec<_>>()))
                .collect();
            let mix = BernoulliMixture::new(w, comps).unwrap();
            assert!((exact_tc(&mix) - exact_tc_entropy_form(&mix)).abs() < 1e-12);
        }
    }

    fn indep(l: usize, same: bool) -> DiscreteJoint {
        let joint = JointTable::new(2, 3, vec![1.0 / 6.0; 6]).unwrap();
        let enc: Vec<BernoulliCode> = (0..3).map(|_| BernoulliCode::clamp(&vec![0.3; l])).collect();
        let enc_t = if same {
            enc.clone()
        } else {
            (0..3)
                .map(|x| BernoulliCode::clamp(&vec![0.2 + 0.2 * x as f64; l]))
                .collect()
        };
        DiscreteJoint::new(joint, enc[..2].to_vec(), enc_t).unwrap()
    }

    #[test]
    fn identity_degenerate_cases() {
        let r = verify_private_info_identity(&indep(3, true)).unwrap();
        for v in [
            r.image.a_entropy,
            r.image.b,
            r.image.c,
            r.text.a_entropy,
            r.text.b,
            r.skl,
        ] {
            assert!(v.abs() < 1e-12, "{r:?}");
        }

        // copy channel x^t = x^i with identical encoders
        let joint = JointTable::new(
            3,
            3,
            vec![1.0 / 3.0, 0.0, 0.0, 0.0, 1.0 / 3.0, 0.0, 0.0, 0.0, 1.0 / 3.0],
        )
        .unwrap();
        let enc: Vec<BernoulliCode> = (0..3)
            .map(|x| BernoulliCode::clamp(&[0.1 + 0.3 * x as f64, 0.7]))
            .collect();
        let inst = DiscreteJoint::new(joint, enc.clone(), enc).unwrap();
        let r = verify_private_info_identity(&inst).unwrap();
        assert!(r.image.a_entropy.abs() < 1e-12);
        assert!(r.image.b.abs() < 1e-12 && r.skl.abs() < 1e-12);
        assert!(r.passed(1e-12));
    }

    #[test]
    fn identity_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let inst = DiscreteJoint::random(&mut rng, 4);
            let r = verify_private_info_identity(&inst).unwrap();
            assert!(r.passed(1e-9), "{r:?}");
            // gap of the bound is exactly c
            assert!((r.image.b - r.image.a_entropy - r.image.c).abs() < 1e-9);
        }
    }

    #[test]
    fn enumeration_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let inst = DiscreteJoint::random(&mut rng, 3);
        let r = verify_private_info_identity(&inst).unwrap();
        let na = inst.joint.na;
        let nb = inst.joint.nb;
        let pa: Vec<usize> = (0..na).rev().collect();
        let pb: Vec<usize> = (0..nb).map(|b| (b + 1) % nb).collect();
        let mut p = vec![0.0; na * nb];
        for a in 0..na {
            for b in 0..nb {
                p[a * nb + b] = inst.joint.get(pa[a], pb[b]);
            }
        }
        let permuted = DiscreteJoint::new(
            JointTable::new(na, nb, p).unwrap(),
            pa.iter().map(|&a| inst.enc_i[a].clone()).collect(),
            pb.iter().map(|&b| inst.enc_t[b].clone()).collect(),
        )
        .unwrap();
        let q = verify_private_info_identity(&permuted).unwrap();
        assert!((r.image.a_entropy - q.image.a_entropy).abs() < 1e-12);
        assert!((r.skl - q.skl).abs() < 1e-12);
        let j = inst.code_joint();
        let k = permuted.code_joint();
        assert!((exact_mi(&j) - exact_mi(&k)).abs() < 1e-12);
    }

    #[test]
    fn proportional_counts_sum() {
        let c = proportional_counts(&[0.5, 0.3, 0.2], 7);
        assert_eq!(c.iter().sum::<usize>(), 7);
        assert_eq!(c, vec![4, 2, 1]);
    }
}
