//! Bit-packed codes, Hamming ranking and retrieval metrics.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{dim_err, Error, Result};
use crate::Modality;

/// Rows of `l` bits packed little-endian into 64-bit words; bit `b` of a row
/// lives in word `b / 64` at position `b % 64`. Padding bits are zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    n: usize,
    l: usize,
    words: Vec<u64>,
}

impl PackedCodes {
    pub fn words_per_row(l: usize) -> usize {
        l.div_ceil(64)
    }

    /// Packs `n` rows of `l` bits given row-major as 0/1 bytes.
    pub fn pack(bits: &[u8], n: usize, l: usize) -> Result<Self> {
        if bits.len() != n * l {
            return dim_err(format!("pack: {} bits for {n}x{l}", bits.len()));
        }
        let w = Self::words_per_row(l);
        let mut words = vec![0u64; n * w];
        for (j, row) in bits.chunks(l.max(1)).take(n).enumerate() {
            for (b, &bit) in row.iter().enumerate() {
                if bit != 0 {
                    words[j * w + b / 64] |= 1 << (b % 64);
                }
            }
        }
        Ok(PackedCodes { n, l, words })
    }

    pub fn from_words(n: usize, l: usize, words: Vec<u64>) -> Result<Self> {
        let w = Self::words_per_row(l);
        if words.len() != n * w {
            return dim_err(format!("{} words for {n} codes of {l} bits", words.len()));
        }
        if !l.is_multiple_of(64) {
            let pad = !0u64 << (l % 64);
            if words.chunks(w).any(|r| r[w - 1] & pad != 0) {
                return Err(Error::Format("padding bits must be zero".into()));
            }
        }
        Ok(PackedCodes { n, l, words })
    }

    pub fn unpack(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.n * self.l);
        for j in 0..self.n {
            let row = self.row(j);
            out.extend((0..self.l).map(|b| ((row[b / 64] >> (b % 64)) & 1) as u8));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn code_len(&self) -> usize {
        self.l
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn row(&self, j: usize) -> &[u64] {
        let w = Self::words_per_row(self.l);
        &self.words[j * w..(j + 1) * w]
    }

    pub fn bit(&self, j: usize, b: usize) -> bool {
        (self.row(j)[b / 64] >> (b % 64)) & 1 == 1
    }

    pub fn select_rows(&self, idx: &[usize]) -> PackedCodes {
        let mut words = Vec::with_capacity(idx.len() * Self::words_per_row(self.l));
        for &i in idx {
            words.extend_from_slice(self.row(i));
        }
        PackedCodes {
            n: idx.len(),
            l: self.l,
            words,
        }
    }
}

#[inline]
pub fn hamming(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// `h = 1` iff `mu >= 0.5`.
pub fn binarize(mu: &Tensor) -> PackedCodes {
    let bits: Vec<u8> = mu.data().iter().map(|&m| u8::from(m >= 0.5)).collect();
    PackedCodes::pack(&bits, mu.rows(), mu.cols()).expect("shape matches by construction")
}

/// Hamming distance from `query` to every database row.
pub fn distances(query: &[u64], db: &PackedCodes) -> Vec<u32> {
    (0..db.len()).map(|j| hamming(query, db.row(j))).collect()
}

/// Database rows ordered by ascending distance, ties by ascending index.
/// Counting sort over the `L + 1` possible distances keeps this linear.
pub fn full_ranking(dist: &[u32], l: usize) -> Vec<usize> {
    let mut start = vec![0usize; l + 2];
    for &d in dist {
        start[d as usize + 1] += 1;
    }
    for i in 1..start.len() {
        start[i] += start[i - 1];
    }
    let mut out = vec![0usize; dist.len()];
    for (j, &d) in dist.iter().enumerate() {
        out[start[d as usize]] = j;
        start[d as usize] += 1;
    }
    out
}

/// Top-`k` `(index, distance)` pairs under the index tie rule.
pub fn hamming_rank(query: &[u64], db: &PackedCodes, k: usize) -> Result<Vec<(usize, u32)>> {
    if query.len() != PackedCodes::words_per_row(db.code_len()) {
        return dim_err(format!(
            "hamming_rank: query has {} words, database codes have {} bits",
            query.len(),
            db.code_len()
        ));
    }
    let dist = distances(query, db);
    Ok(full_ranking(&dist, db.code_len())
        .into_iter()
        .take(k)
        .map(|j| (j, dist[j]))
        .collect())
}

/// `Σ_{r≤k} Prec(r)·rel(r) / min(R, k)` where `R` counts every relevant
/// database item.
pub fn average_precision_at_k(relevance: &[bool], k: usize, total_relevant: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Contract("average precision needs k >= 1".into()));
    }
    if total_relevant == 0 {
        return Err(Error::Contract("query has no relevant database item".into()));
    }
    let mut hits = 0usize;
    let mut s = 0.0;
    for (r, &rel) in relevance.iter().take(k).enumerate() {
        if rel {
            hits += 1;
            s += hits as f64 / (r + 1) as f64;
        }
    }
    Ok(s / total_relevant.min(k) as f64)
}

/// Multi-hot labels packed like codes; two rows are relevant to each other
/// when they share at least one label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    codes: PackedCodes,
}

impl LabelSet {
    pub fn from_multi_hot(bits: &[u8], n: usize, classes: usize) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Format("labels must be 0/1".into()));
        }
        Ok(LabelSet {
            codes: PackedCodes::pack(bits, n, classes)?,
        })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.codes.code_len()
    }

    pub fn shares(&self, a: usize, other: &LabelSet, b: usize) -> bool {
        self.codes
            .row(a)
            .iter()
            .zip(other.codes.row(b))
            .any(|(x, y)| x & y != 0)
    }

    pub fn row_is_empty(&self, a: usize) -> bool {
        self.codes.row(a).iter().all(|&w| w == 0)
    }

    pub fn select_rows(&self, idx: &[usize]) -> LabelSet {
        LabelSet {
            codes: self.codes.select_rows(idx),
        }
    }

    pub fn to_multi_hot(&self) -> Vec<u8> {
        self.codes.unpack()
    }
}

pub const DEFAULT_PREC_GRID: [usize; 6] = [1, 10, 50, 100, 500, 1000];

/// Grid values above the database size are replaced by the size itself.
pub fn truncate_grid(grid: &[usize], n_db: usize) -> Vec<usize> {
    let mut out: Vec<usize> = grid.iter().map(|&k| k.min(n_db)).filter(|&k| k > 0).collect();
    out.dedup();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub radius: u32,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub k: usize,
    pub map_at_k: f64,
    pub average_precision: Vec<f64>,
    /// `(K, mean precision over the top K)`.
    pub prec_at_k: Vec<(usize, f64)>,
    pub pr_curve: Vec<PrPoint>,
    /// Top-`k` database indices per query.
    #[serde(skip)]
    pub ranked: Vec<Vec<usize>>,
}

struct QueryOutcome {
    ap: f64,
    prec: Vec<f64>,
    /// `(retrieved, relevant retrieved)` for each radius `0..=L`.
    within: Vec<(usize, usize)>,
    total_relevant: usize,
    ranked: Vec<usize>,
}

fn score_query(
    q: usize,
    queries: &PackedCodes,
    db: &PackedCodes,
    q_labels: &LabelSet,
    db_labels: &LabelSet,
    k: usize,
    grid: &[usize],
) -> Result<QueryOutcome> {
    let l = db.code_len();
    let dist = distances(queries.row(q), db);
    let order = full_ranking(&dist, l);
    let rel: Vec<bool> = order.iter().map(|&j| q_labels.shares(q, db_labels, j)).collect();
    let total_relevant = rel.iter().filter(|&&r| r).count();
    let ap = average_precision_at_k(&rel, k, total_relevant).map_err(|e| Error::Contract(format!("query {q}: {e}")))?;
    let mut prefix = Vec::with_capacity(rel.len() + 1);
    prefix.push(0usize);
    for &r in &rel {
        prefix.push(prefix.last().unwrap() + usize::from(r));
    }
    let prec = grid.iter().map(|&kk| prefix[kk] as f64 / kk as f64).collect();
    let mut within = vec![(0usize, 0usize); l + 1];
    for (j, &d) in dist.iter().enumerate() {
        within[d as usize].0 += 1;
        if q_labels.shares(q, db_labels, j) {
            within[d as usize].1 += 1;
        }
    }
    for r in 1..=l {
        within[r].0 += within[r - 1].0;
        within[r].1 += within[r - 1].1;
    }
    Ok(QueryOutcome {
        ap,
        prec,
        within,
        total_relevant,
        ranked: order.into_iter().take(k).collect(),
    })
}

/// mAP@k, Prec@K and the Hamming-radius PR curve for one retrieval task.
///
/// Precision and recall at radius `r` are averaged over queries; precision
/// only over queries that retrieve something within `r`.
pub fn evaluate(
    queries: &PackedCodes,
    db: &PackedCodes,
    q_labels: &LabelSet,
    db_labels: &LabelSet,
    k: usize,
    prec_grid: &[usize],
) -> Result<RetrievalResult> {
    if queries.code_len() != db.code_len() {
        return dim_err(format!(
            "evaluate: code lengths {} and {}",
            queries.code_len(),
            db.code_len()
        ));
    }
    if q_labels.classes() != db_labels.classes() {
        return dim_err(format!(
            "evaluate: label widths {} and {}",
            q_labels.classes(),
            db_labels.classes()
        ));
    }
    if q_labels.len() != queries.len() || db_labels.len() != db.len() {
        return dim_err(format!(
            "evaluate: {} query codes / {} labels, {} database codes / {} labels",
            queries.len(),
            q_labels.len(),
            db.len(),
            db_labels.len()
        ));
    }
    if queries.is_empty() || db.is_empty() {
        return Err(Error::Contract(
            "evaluate needs at least one query and one database item".into(),
        ));
    }
    if k == 0 {
        return Err(Error::Contract("evaluate needs k >= 1".into()));
    }
    let grid = truncate_grid(prec_grid, db.len());
    let outcomes: Vec<QueryOutcome> = (0..queries.len())
        .into_par_iter()
        .map(|q| score_query(q, queries, db, q_labels, db_labels, k, &grid))
        .collect::<Result<_>>()?;

    let nq = outcomes.len() as f64;
    let average_precision: Vec<f64> = outcomes.iter().map(|o| o.ap).collect();
    let map_at_k = average_precision.iter().sum::<f64>() / nq;
    let prec_at_k = grid
        .iter()
        .enumerate()
        .map(|(g, &kk)| (kk, outcomes.iter().map(|o| o.prec[g]).sum::<f64>() / nq))
        .collect();
    let l = db.code_len();
    let pr_curve = (0..=l)
        .map(|r| {
            let mut p_sum = 0.0;
            let mut p_n = 0usize;
            let mut r_sum = 0.0;
            for o in &outcomes {
                let (got, hit) = o.within[r];
                if got > 0 {
                    p_sum += hit as f64 / got as f64;
                    p_n += 1;
                }
                r_sum += hit as f64 / o.total_relevant as f64;
            }
            PrPoint {
                radius: r as u32,
                precision: if p_n > 0 { p_sum / p_n as f64 } else { 0.0 },
                recall: r_sum / nq,
            }
        })
        .collect();
    Ok(RetrievalResult {
        k,
        map_at_k,
        average_precision,
        prec_at_k,
        pr_curve,
        ranked: outcomes.into_iter().map(|o| o.ranked).collect(),
    })
}

pub const HIST_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeStats {
    pub corr_mse: f64,
    pub bit_means: Vec<f64>,
    /// Fraction of `mu` entries per bin of width 0.05; empty without `mu`.
    pub mu_histogram: Vec<f64>,
    /// Fraction of `mu` in `[0, 0.01] ∪ [0.99, 1]`.
    pub extreme_fraction: Option<f64>,
}

/// `‖(1/N) ĤᵀĤ − I‖²_F` with `Ĥ = 2H − 1`.
pub fn corr_mse(codes: &PackedCodes) -> f64 {
    let (n, l) = (codes.len(), codes.code_len());
    let signs: Vec<f64> = codes.unpack().iter().map(|&b| 2.0 * b as f64 - 1.0).collect();
    let h = Tensor::from_vec(n, l, signs).expect("shape");
    let c = Tensor::gemm(&h, true, &h, false).expect("shape");
    let mut s = 0.0;
    for a in 0..l {
        for b in 0..l {
            let v = c.get(a, b) / n as f64 - f64::from(u8::from(a == b));
            s += v * v;
        }
    }
    s
}

pub fn code_stats(codes: &PackedCodes, mu: Option<&Tensor>) -> Result<CodeStats> {
    let (n, l) = (codes.len(), codes.code_len());
    if n == 0 {
        return Err(Error::Contract("code_stats needs at least one code".into()));
    }
    let mut bit_means = vec![0.0; l];
    for j in 0..n {
        for (b, m) in bit_means.iter_mut().enumerate() {
            if codes.bit(j, b) {
                *m += 1.0;
            }
        }
    }
    bit_means.iter_mut().for_each(|m| *m /= n as f64);
    let (mu_histogram, extreme_fraction) = match mu {
        None => (Vec::new(), None),
        Some(mu) => {
            if mu.shape() != (n, l) {
                return dim_err(format!("code_stats: mu is {:?}, codes are {n}x{l}", mu.shape()));
            }
            let total = mu.len() as f64;
            let mut hist = vec![0.0; HIST_BINS];
            let mut extreme = 0usize;
            for &m in mu.data() {
                let bin = ((m * HIST_BINS as f64).floor() as usize).min(HIST_BINS - 1);
                hist[bin] += 1.0;
                if m <= 0.01 || m >= 0.99 {
                    extreme += 1;
                }
            }
            hist.iter_mut().for_each(|h| *h /= total);
            (hist, Some(extreme as f64 / total))
        }
    };
    Ok(CodeStats {
        corr_mse: corr_mse(codes),
        bit_means,
        mu_histogram,
        extreme_fraction,
    })
}

const CODES_MAGIC: &[u8; 4] = b"CMHC";
pub const CODES_VERSION: u32 = 1;

fn modality_tag(m: Option<Modality>) -> u32 {
    match m {
        Some(Modality::Image) => 0,
        Some(Modality::Text) => 1,
        None => u32::MAX,
    }
}

/// Serialises codes: magic `CMHC`, then little-endian `u32` version, `N`,
/// `L` and modality tag, then the packed words as little-endian `u64`.
pub fn codes_to_bytes(codes: &PackedCodes, modality: Option<Modality>) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + codes.words.len() * 8);
    out.extend_from_slice(CODES_MAGIC);
    for v in [CODES_VERSION, codes.n as u32, codes.l as u32, modality_tag(modality)] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for w in &codes.words {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

pub fn codes_from_bytes(bytes: &[u8]) -> Result<(PackedCodes, Option<Modality>)> {
    if bytes.len() < 20 || &bytes[..4] != CODES_MAGIC {
        return Err(Error::Format("not a codes file (bad magic)".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != CODES_VERSION {
        return Err(Error::Format(format!(
            "codes file version {version}, expected {CODES_VERSION}"
        )));
    }
    let (n, l) = (u32_at(8) as usize, u32_at(12) as usize);
    let modality = match u32_at(16) {
        0 => Some(Modality::Image),
        1 => Some(Modality::Text),
        u32::MAX => None,
        t => return Err(Error::Format(format!("unknown modality tag {t}"))),
    };
    let w = PackedCodes::words_per_row(l);
    let body = &bytes[20..];
    if body.len() != n * w * 8 {
        return Err(Error::Format(format!(
            "codes file body has {} bytes, header implies {}",
            body.len(),
            n * w * 8
        )));
    }
    let words = body
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((PackedCodes::from_words(n, l, words)?, modality))
}

pub fn write_codes(path: &Path, codes: &PackedCodes, modality: Option<Modality>) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&codes_to_bytes(codes, modality))
        .map_err(|e| Error::io(path, e))
}

pub fn read_codes(path: &Path) -> Result<(PackedCodes, Option<Modality>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    codes_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_bits(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
        (0..n).map(|_| rng.random_range(0..2u8)).collect()
    }

    #[test]
    fn binarize_examples() {
        let mu = Tensor::row_vector(&[0.49, 0.5, 0.51]);
        assert_eq!(binarize(&mu).unpack(), vec![0, 1, 1]);
        let half = Tensor::full(3, 5, 0.5);
        assert!(binarize(&half).unpack().iter().all(|&b| b == 1));
        assert_eq!(binarize(&half), binarize(&half));
    }

    #[test]
    fn pack_round_trip_and_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for l in [1, 7, 63, 64, 65, 130] {
            let bits = rand_bits(&mut rng, 9 * l);
            let p = PackedCodes::pack(&bits, 9, l).unwrap();
            assert_eq!(p.unpack(), bits);
            if l % 64 != 0 {
                let pad = !0u64 << (l % 64);
                let w = PackedCodes::words_per_row(l);
                assert!(p.words().chunks(w).all(|r| r[w - 1] & pad == 0));
            }
            let (back, m) = codes_from_bytes(&codes_to_bytes(&p, Some(Modality::Text))).unwrap();
            assert_eq!(back, p);
            assert_eq!(m, Some(Modality::Text));
        }
        assert!(matches!(
            PackedCodes::from_words(1, 3, vec![0b1000]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn hamming_examples() {
        let q = PackedCodes::pack(&[0, 0, 0, 0, 1, 1, 1, 1], 1, 8).unwrap();
        let d = PackedCodes::pack(&[0; 8], 1, 8).unwrap();
        assert_eq!(hamming(q.row(0), d.row(0)), 4);

        let db = PackedCodes::pack(&[1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 0, 0], 4, 4).unwrap();
        let r = hamming_rank(db.row(2), &db, 4).unwrap();
        assert_eq!(r[0], (2, 0));
        assert!(r[1..].iter().all(|&(_, d)| d > 0));
        assert!(hamming_rank(&[0, 0], &db, 1).is_err());
    }

    #[test]
    fn rank_matches_naive_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let db = PackedCodes::pack(&rand_bits(&mut rng, 200 * 64), 200, 64).unwrap();
        let q = PackedCodes::pack(&rand_bits(&mut rng, 64), 1, 64).unwrap();
        let bits = db.unpack();
        let qb = q.unpack();
        let mut naive: Vec<(u32, usize)> = (0..200)
            .map(|j| ((0..64).filter(|&b| bits[j * 64 + b] != qb[b]).count() as u32, j))
            .collect();
        naive.sort();
        let got = hamming_rank(q.row(0), &db, 200).unwrap();
        assert_eq!(got, naive.into_iter().map(|(d, j)| (j, d)).collect::<Vec<_>>());
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision_at_k(&[true, true, true], 3, 3).unwrap(), 1.0);
        let v = average_precision_at_k(&[true, false, true], 3, 2).unwrap();
        assert!((v - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(average_precision_at_k(&[false; 3], 3, 5).unwrap(), 0.0);
        assert!(matches!(
            average_precision_at_k(&[false], 1, 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn identical_sets_give_perfect_map() {
        // codes a function of the class, one code per class
        let codes = PackedCodes::pack(&[0, 0, 1, 1, 1, 0, 0, 0, 1, 0, 1, 0], 4, 3).unwrap();
        let labels = LabelSet::from_multi_hot(&[1, 0, 0, 0, 1, 0, 1, 0, 0, 0, 0, 1], 4, 3).unwrap();
        let r = evaluate(&codes, &codes, &labels, &labels, 1000, &DEFAULT_PREC_GRID).unwrap();
        assert_eq!(r.map_at_k, 1.0);
        assert_eq!(r.prec_at_k.last().unwrap().0, 4);
    }

    #[test]
    fn random_codes_map_near_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (nq, nd, l) = (200, 2000, 16);
        let q = PackedCodes::pack(&rand_bits(&mut rng, nq * l), nq, l).unwrap();
        let d = PackedCodes::pack(&rand_bits(&mut rng, nd * l), nd, l).unwrap();
        let onehot = |rng: &mut ChaCha8Rng, n: usize| -> Vec<u8> {
            (0..n)
                .flat_map(|_| if rng.random_bool(0.5) { [1, 0] } else { [0, 1] })
                .collect()
        };
        let ql = LabelSet::from_multi_hot(&onehot(&mut rng, nq), nq, 2).unwrap();
        let dl = LabelSet::from_multi_hot(&onehot(&mut rng, nd), nd, 2).unwrap();
        let r = evaluate(&q, &d, &ql, &dl, 100, &DEFAULT_PREC_GRID).unwrap();
        // With R >> k the min(R, k) normalisation makes the null AP close to
        // prior², while precision at every cut-off stays near the prior.
        assert!((r.map_at_k - 0.25).abs() < 0.05, "{}", r.map_at_k);
        for &(_, p) in &r.prec_at_k[1..] {
            assert!((p - 0.5).abs() < 0.05, "{p}");
        }
    }

    #[test]
    fn stats_examples() {
        let row = [1u8, 0, 1, 0];
        let bits: Vec<u8> = (0..10).flat_map(|_| row).collect();
        let codes = PackedCodes::pack(&bits, 10, 4).unwrap();
        let s = code_stats(&codes, None).unwrap();
        assert_eq!(s.bit_means, vec![1.0, 0.0, 1.0, 0.0]);
        let signs = [1.0, -1.0, 1.0, -1.0];
        let mut want = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                let v: f64 = signs[a] * signs[b] - if a == b { 1.0 } else { 0.0 };
                want += v * v;
            }
        }
        assert_eq!(s.corr_mse, want);

        let mu = Tensor::full(10, 4, 0.5);
        let s = code_stats(&binarize(&mu), Some(&mu)).unwrap();
        assert_eq!(s.mu_histogram[10], 1.0);
        assert_eq!(s.extreme_fraction, Some(0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let fair = PackedCodes::pack(&rand_bits(&mut rng, 10_000 * 16), 10_000, 16).unwrap();
        assert!(corr_mse(&fair) < 0.05);
    }
}
