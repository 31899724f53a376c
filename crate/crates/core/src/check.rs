//! Randomised property families run by the `check` command. Every family
//! compares a library routine against an enumeration or brute-force value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Graph, Tensor};
use crate::bernoulli::{kl_bernoulli, BernoulliCode};
use crate::error::Result;
use crate::nn::{Arch, ModelBundle};
use crate::objectives::{balance_loss, js_bound_population, tc_loss_with, DensityRatio};
use crate::oracles::{
    bits_of, exact_js_fdiv, exact_mi, exact_mi_entropy_form, exact_tc, exact_tc_entropy_form, exhaustive_kl,
    proportional_counts, verify_private_info_identity, BernoulliMixture, DiscreteJoint,
};
use crate::retrieval::{hamming, hamming_rank, PackedCodes};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyReport {
    pub family: &'static str,
    pub instances: usize,
    pub failures: usize,
    /// Largest observed deviation, in the family's own units.
    pub worst: f64,
    pub tolerance: f64,
}

impl FamilyReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub seed: u64,
    pub families: Vec<FamilyReport>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.families.iter().all(FamilyReport::passed)
    }
}

struct Tally {
    family: &'static str,
    instances: usize,
    failures: usize,
    worst: f64,
    tolerance: f64,
}

impl Tally {
    fn new(family: &'static str, tolerance: f64) -> Self {
        Tally {
            family,
            instances: 0,
            failures: 0,
            worst: 0.0,
            tolerance,
        }
    }

    /// Records a deviation that must not exceed the tolerance.
    fn record(&mut self, deviation: f64) {
        self.instances += 1;
        if deviation.is_nan() || deviation > self.tolerance {
            self.failures += 1;
        }
        if deviation.is_nan() || deviation > self.worst {
            self.worst = deviation;
        }
    }

    fn finish(self) -> FamilyReport {
        FamilyReport {
            family: self.family,
            instances: self.instances,
            failures: self.failures,
            worst: self.worst,
            tolerance: self.tolerance,
        }
    }
}

fn random_code(rng: &mut impl Rng, l: usize) -> BernoulliCode {
    BernoulliCode::clamp(&(0..l).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<_>>())
}

fn kl_closed_form(rng: &mut ChaCha8Rng, n: usize) -> Result<FamilyReport> {
    let mut t = Tally::new("kl_closed_form_vs_enumeration", 1e-10);
    for i in 0..n {
        let l = 1 + i % 10;
        let (p, q) = (random_code(rng, l), random_code(rng, l));
        t.record((kl_bernoulli(&p, &q)? - exhaustive_kl(&p, &q)?).abs());
    }
    Ok(t.finish())
}

fn private_info(rng: &mut ChaCha8Rng, n: usize) -> Result<FamilyReport> {
    let mut t = Tally::new("private_info_identity", 1e-9);
    for _ in 0..n {
        let r = verify_private_info_identity(&DiscreteJoint::random(rng, 6))?;
        let dev = if r.inequalities_hold && r.skl_bound_holds {
            r.max_identity_error
        } else {
            f64::INFINITY
        };
        t.record(dev);
    }
    Ok(t.finish())
}

fn all_codes(l: usize) -> Result<Tensor> {
    let n = 1 << l;
    Tensor::from_vec(n, l, (0..n).flat_map(|i| bits_of(i, l)).map(f64::from).collect())
}

/// Positive deviations are bound violations.
fn js_lower_bound(rng: &mut ChaCha8Rng, n: usize) -> Result<FamilyReport> {
    let mut t = Tally::new("js_bound_below_divergence", 1e-9);
    for i in 0..n {
        let inst = DiscreteJoint::random(rng, 3);
        let l = inst.code_len();
        let joint = inst.code_joint();
        let product = joint.product();
        let exact = exact_js_fdiv(&joint.p, &product)?;
        let bundle = ModelBundle::new(Arch::new(1, 1, l).with_widths(4, 16), rng.random::<u64>() ^ i as u64)?;
        let codes = all_codes(l)?;
        let scale = 10f64.powf(rng.random_range(-2.0..1.0));
        let critic = bundle.critic_score(&codes, &codes)?.map(|v| v * scale);
        let bound = js_bound_population(&joint.p, &product, critic.data())?;
        t.record((bound - exact).max(0.0));
    }
    Ok(t.finish())
}

fn random_mixture(rng: &mut ChaCha8Rng) -> Result<BernoulliMixture> {
    let l = rng.random_range(2..=6);
    let k = rng.random_range(2..=4);
    let mut w: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    let comps = (0..k)
        .map(|_| BernoulliCode::clamp(&(0..l).map(|_| rng.random_range(0.02..0.98)).collect::<Vec<_>>()))
        .collect();
    BernoulliMixture::new(w, comps)
}

struct LookupRatio(Vec<f64>);

impl DensityRatio for LookupRatio {
    fn logits(&self, rows: &Tensor) -> Result<Tensor> {
        let v = (0..rows.rows())
            .map(|r| {
                let idx: usize = rows
                    .row(r)
                    .iter()
                    .enumerate()
                    .map(|(b, &x)| usize::from(x > 0.5) << b)
                    .sum();
                self.0[idx]
            })
            .collect();
        Tensor::from_vec(rows.rows(), 1, v)
    }
}

/// Relative error of the encoder term under the Bayes-optimal ratio on a
/// batch stratified to the mixture.
fn tc_injected(rng: &mut ChaCha8Rng, n: usize) -> Result<FamilyReport> {
    let mut t = Tally::new("tc_estimator_with_optimal_ratio", 0.02);
    let rows = 100_000;
    for _ in 0..n {
        let mix = random_mixture(rng)?;
        let l = mix.code_len();
        let counts = proportional_counts(&mix.table(), rows);
        let mut data = Vec::with_capacity(rows * l);
        for (idx, &c) in counts.iter().enumerate() {
            let bits: Vec<f64> = bits_of(idx, l).into_iter().map(f64::from).collect();
            for _ in 0..c {
                data.extend_from_slice(&bits);
            }
        }
        let batch = Tensor::from_vec(rows, l, data)?;
        let exact = exact_tc(&mix);
        let (enc, _) = tc_loss_with(&LookupRatio(mix.log_ratio_table()), &batch, &batch)?;
        t.record((enc - exact).abs() / exact.max(1e-12));
    }
    Ok(t.finish())
}

fn information_forms(rng: &mut ChaCha8Rng, n: usize) -> Result<FamilyReport> {
    let mut t = Tally::new("mi_and_tc_form_agreement", 1e-10);
    for _ in 0..n {
        let joint = DiscreteJoint::random(rng, 3).code_joint();
        t.record((exact_mi(&joint) - exact_mi_entropy_form(&joint)).abs());
        let mix = random_mixture(rng)?;
        t.record((exact_tc(&mix) - exact_tc_entropy_form(&mix)).abs());
    }
    Ok(t.finish())
}

fn packed_hamming(rng: &mut ChaCha8Rng, n: usize) -> Result<FamilyReport> {
    let mut t = Tally::new("packed_vs_naive_hamming", 0.0);
    for _ in 0..n {
        let l = rng.random_range(1..=256);
        let a: Vec<u8> = (0..l).map(|_| rng.random_range(0..2u8)).collect();
        let b: Vec<u8> = (0..l).map(|_| rng.random_range(0..2u8)).collect();
        let naive = a.iter().zip(&b).filter(|(x, y)| x != y).count() as u32;
        let (pa, pb) = (PackedCodes::pack(&a, 1, l)?, PackedCodes::pack(&b, 1, l)?);
        t.record(f64::from(hamming(pa.row(0), pb.row(0)).abs_diff(naive)));
    }
    Ok(t.finish())
}

/// Ranked lists are sorted by (distance, index) and agree with a full sort.
fn ranking_order(rng: &mut ChaCha8Rng, n: usize) -> Result<FamilyReport> {
    let mut t = Tally::new("hamming_rank_vs_full_sort", 0.0);
    for _ in 0..n {
        let l = rng.random_range(1..=40);
        let n_db = rng.random_range(1..=60);
        let k = rng.random_range(1..=70);
        let db_bits: Vec<u8> = (0..n_db * l).map(|_| rng.random_range(0..2u8)).collect();
        let q_bits: Vec<u8> = (0..l).map(|_| rng.random_range(0..2u8)).collect();
        let db = PackedCodes::pack(&db_bits, n_db, l)?;
        let q = PackedCodes::pack(&q_bits, 1, l)?;
        let mut want: Vec<(usize, u32)> = (0..n_db)
            .map(|j| {
                let d = (0..l).filter(|&b| db_bits[j * l + b] != q_bits[b]).count() as u32;
                (j, d)
            })
            .collect();
        want.sort_by_key(|&(j, d)| (d, j));
        want.truncate(k);
        t.record(if hamming_rank(q.row(0), &db, k)? == want {
            0.0
        } else {
            1.0
        });
    }
    Ok(t.finish())
}

fn balance_zero(rng: &mut ChaCha8Rng, n: usize) -> Result<FamilyReport> {
    let mut t = Tally::new("balance_zero_at_half", 0.0);
    for _ in 0..n {
        let (b, l) = (rng.random_range(1..=16), rng.random_range(1..=32));
        let mut g = Graph::new();
        let a = g.constant(Tensor::full(b, l, 0.5))?;
        let c = g.constant(Tensor::full(b, l, 0.5))?;
        let bal = balance_loss(&mut g, a, c)?;
        t.record(g.scalar(bal)?.abs());
    }
    Ok(t.finish())
}

/// Runs every family with `instances` random cases each (the Hamming family
/// uses 100 times as many, since each case is a single pair).
pub fn run_checks(instances: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tc_n = instances.div_ceil(10);
    let families = vec![
        kl_closed_form(&mut rng, instances)?,
        private_info(&mut rng, instances)?,
        js_lower_bound(&mut rng, instances)?,
        tc_injected(&mut rng, tc_n)?,
        information_forms(&mut rng, instances)?,
        packed_hamming(&mut rng, instances * 100)?,
        ranking_order(&mut rng, instances)?,
        balance_zero(&mut rng, instances)?,
    ];
    Ok(CheckReport { seed, families })
}
