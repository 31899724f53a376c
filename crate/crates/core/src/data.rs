//! Paired feature datasets: file formats, splits and a synthetic generator.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{dim_err, Error, Result};
use crate::retrieval::LabelSet;
use crate::rng::{substream, Substream};

const FEATURE_MAGIC: &[u8; 4] = b"CMHX";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Query,
    /// Database row not used for training.
    Database,
    /// Database row that is also a training row.
    Train,
}

impl SplitTag {
    pub fn in_database(self) -> bool {
        matches!(self, SplitTag::Database | SplitTag::Train)
    }

    fn as_str(self) -> &'static str {
        match self {
            SplitTag::Query => "query",
            SplitTag::Database => "database",
            SplitTag::Train => "train",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub x_i: Tensor,
    pub x_t: Tensor,
    pub labels: Option<LabelSet>,
    pub split: Option<Vec<SplitTag>>,
}

impl PairedDataset {
    pub fn new(x_i: Tensor, x_t: Tensor, labels: Option<LabelSet>, split: Option<Vec<SplitTag>>) -> Result<Self> {
        let n = x_i.rows();
        if x_t.rows() != n {
            return Err(Error::Format(format!(
                "row counts differ: {} image vs {} text",
                n,
                x_t.rows()
            )));
        }
        if !x_i.is_finite() || !x_t.is_finite() {
            return Err(Error::Format("features contain non-finite values".into()));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Format(format!("{} label rows for {n} feature rows", l.len())));
            }
        }
        if let Some(s) = &split {
            if s.len() != n {
                return Err(Error::Format(format!("{} split tags for {n} feature rows", s.len())));
            }
            if let Some(l) = &labels {
                if let Some(j) = (0..n).find(|&j| l.row_is_empty(j)) {
                    return Err(Error::Format(format!("row {j} has no label")));
                }
            }
        }
        Ok(PairedDataset {
            x_i,
            x_t,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.x_i.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x_i.rows() == 0
    }

    pub fn d_i(&self) -> usize {
        self.x_i.cols()
    }

    pub fn d_t(&self) -> usize {
        self.x_t.cols()
    }

    /// Row indices carrying a tag matching `pred`, ascending.
    pub fn indices(&self, pred: impl Fn(SplitTag) -> bool) -> Vec<usize> {
        match &self.split {
            Some(s) => (0..s.len()).filter(|&j| pred(s[j])).collect(),
            None => (0..self.len()).collect(),
        }
    }

    pub fn query_rows(&self) -> Vec<usize> {
        self.indices(|t| t == SplitTag::Query)
    }

    pub fn database_rows(&self) -> Vec<usize> {
        self.indices(SplitTag::in_database)
    }

    /// Training rows; every row when no split is attached.
    pub fn train_rows(&self) -> Vec<usize> {
        self.indices(|t| t == SplitTag::Train)
    }

    pub fn subset(&self, idx: &[usize]) -> PairedDataset {
        PairedDataset {
            x_i: self.x_i.select_rows(idx),
            x_t: self.x_t.select_rows(idx),
            labels: self.labels.as_ref().map(|l| l.select_rows(idx)),
            split: self.split.as_ref().map(|s| idx.iter().map(|&j| s[j]).collect()),
        }
    }
}

/// Binary feature container: magic `CMHX`, little-endian `u32` version, `N`,
/// `D`, then `N·D` little-endian `f32` row-major.
pub fn features_to_bytes(x: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + x.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    for v in [FEATURE_VERSION, x.rows() as u32, x.cols() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in x.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn features_from_bytes(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 16 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Format("bad magic for feature container".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!(
            "feature container version {version}, expected {FEATURE_VERSION}"
        )));
    }
    let (n, d) = (u32_at(8) as usize, u32_at(12) as usize);
    let body = &bytes[16..];
    if body.len() != n * d * 4 {
        return Err(Error::Format(format!(
            "feature body holds {} bytes, header implies {}",
            body.len(),
            n * d * 4
        )));
    }
    let data: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("feature container holds non-finite values".into()));
    }
    Tensor::from_vec(n, d, data)
}

fn parse_csv_rows(text: &str, path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Format(format!("{}:{}: not a number: {f:?}", path.display(), line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// CSV features are promoted through `f32` so both containers load alike.
pub fn features_from_csv(text: &str, path: &Path) -> Result<Tensor> {
    let rows = parse_csv_rows(text, path)?;
    let t = Tensor::from_rows(&rows).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if !t.is_finite() {
        return Err(Error::Format(format!("{}: non-finite values", path.display())));
    }
    Ok(t.map(|v| v as f32 as f64))
}

pub fn features_to_csv(x: &Tensor) -> String {
    let mut s = String::new();
    for r in 0..x.rows() {
        let row: Vec<String> = x.row(r).iter().map(|&v| format!("{}", v as f32)).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Loads a feature file; `.csv` files are parsed as text, anything else as
/// the binary container.
pub fn read_features(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if is_csv(path) && !bytes.starts_with(FEATURE_MAGIC) {
        let text = String::from_utf8(bytes).map_err(|_| Error::Format(format!("{}: not UTF-8", path.display())))?;
        return features_from_csv(&text, path);
    }
    features_from_bytes(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_features(path: &Path, x: &Tensor) -> Result<()> {
    let bytes = if is_csv(path) {
        features_to_csv(x).into_bytes()
    } else {
        features_to_bytes(x)
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<LabelSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows = parse_csv_rows(&text, path)?;
    let c = rows.first().map_or(0, Vec::len);
    let mut bits = Vec::with_capacity(rows.len() * c);
    for (j, r) in rows.iter().enumerate() {
        if r.len() != c {
            return Err(Error::Format(format!(
                "{}: row {} has {} labels, expected {c}",
                path.display(),
                j + 1,
                r.len()
            )));
        }
        for &v in r {
            if v != 0.0 && v != 1.0 {
                return Err(Error::Format(format!(
                    "{}: row {} is not multi-hot",
                    path.display(),
                    j + 1
                )));
            }
            bits.push(v as u8);
        }
    }
    LabelSet::from_multi_hot(&bits, rows.len(), c)
}

pub fn labels_to_csv(labels: &LabelSet) -> String {
    let bits = labels.to_multi_hot();
    let c = labels.classes();
    let mut s = String::new();
    for row in bits.chunks(c.max(1)).take(labels.len()) {
        let cells: Vec<&str> = row.iter().map(|&b| if b == 1 { "1" } else { "0" }).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn write_labels(path: &Path, labels: &LabelSet) -> Result<()> {
    fs::write(path, labels_to_csv(labels)).map_err(|e| Error::io(path, e))
}

/// One tag per line: `query`, `database` or `train`.
pub fn read_split(path: &Path) -> Result<Vec<SplitTag>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| match l.trim() {
            "query" => Ok(SplitTag::Query),
            "database" => Ok(SplitTag::Database),
            "train" => Ok(SplitTag::Train),
            other => Err(Error::Format(format!(
                "{}:{}: unknown split tag {other:?}",
                path.display(),
                i + 1
            ))),
        })
        .collect()
}

pub fn split_to_text(tags: &[SplitTag]) -> String {
    tags.iter().map(|t| format!("{}\n", t.as_str())).collect()
}

pub fn write_split(path: &Path, tags: &[SplitTag]) -> Result<()> {
    fs::write(path, split_to_text(tags)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(
    features_i: &Path,
    features_t: &Path,
    labels: Option<&Path>,
    split: Option<&Path>,
) -> Result<PairedDataset> {
    let x_i = read_features(features_i)?;
    let x_t = read_features(features_t)?;
    let labels = labels.map(read_labels).transpose()?;
    let split = split.map(read_split).transpose()?;
    PairedDataset::new(x_i, x_t, labels, split)
}

/// Random query/database partition with a training subset of the database.
pub fn split(dataset: &PairedDataset, n_query: usize, n_train: usize, seed: u64) -> Result<PairedDataset> {
    let n = dataset.len();
    if n_query + 1 > n {
        return Err(Error::Config(format!(
            "n_query {n_query} leaves no database rows out of {n}"
        )));
    }
    if n_train > n - n_query {
        return Err(Error::Config(format!(
            "n_train {n_train} exceeds the {} database rows",
            n - n_query
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, Substream::Split));
    let mut tags = vec![SplitTag::Database; n];
    for &j in &order[..n_query] {
        tags[j] = SplitTag::Query;
    }
    for &j in &order[n_query..n_query + n_train] {
        tags[j] = SplitTag::Train;
    }
    let mut out = dataset.clone();
    out.split = Some(tags);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub classes: usize,
    pub d_i: usize,
    pub d_t: usize,
    pub shared_dim: usize,
    pub private_dim_i: usize,
    pub private_dim_t: usize,
    pub noise_i: f64,
    pub noise_t: f64,
    /// Spread of the class means of the shared latent.
    #[serde(default = "default_class_sep")]
    pub class_sep: f64,
    /// Spread of class means of the private latents; 0 makes them
    /// class-independent.
    #[serde(default)]
    pub private_class_sep: f64,
    /// Within-class standard deviation of every latent coordinate.
    #[serde(default = "default_within")]
    pub within_class_std: f64,
    /// Z-score every feature column over the generated rows.
    #[serde(default = "default_standardize")]
    pub standardize: bool,
    pub seed: u64,
}

fn default_standardize() -> bool {
    true
}

fn default_class_sep() -> f64 {
    3.0
}

fn default_within() -> f64 {
    1.0
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 2000,
            classes: 10,
            d_i: 64,
            d_t: 48,
            shared_dim: 8,
            private_dim_i: 4,
            private_dim_t: 4,
            noise_i: 0.1,
            noise_t: 0.1,
            class_sep: default_class_sep(),
            private_class_sep: 0.0,
            within_class_std: default_within(),
            standardize: true,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.classes == 0 || self.d_i == 0 || self.d_t == 0 || self.shared_dim == 0 {
            return Err(Error::Config(
                "synthetic n, classes, dims and shared_dim must be positive".into(),
            ));
        }
        for (name, v) in [
            ("noise_i", self.noise_i),
            ("noise_t", self.noise_t),
            ("class_sep", self.class_sep),
            ("private_class_sep", self.private_class_sep),
            ("within_class_std", self.within_class_std),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

fn gauss<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// Class `c` uniform; shared latent `s ~ N(m_c, σ²I)`; private latents
/// `p ~ N(m'_c, σ²I)` with `σ = within_class_std`; `x = A·[s; p] + ε` with fixed Gaussian maps scaled by
/// `1/sqrt(k)` so every coordinate has unit-order variance; labels one-hot.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<PairedDataset> {
    spec.validate()?;
    let mut rng = substream(spec.seed, Substream::Synthetic);
    let k_i = spec.shared_dim + spec.private_dim_i;
    let k_t = spec.shared_dim + spec.private_dim_t;
    let shared_means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| gauss(&mut rng, spec.shared_dim, spec.class_sep))
        .collect();
    let priv_means_i: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| gauss(&mut rng, spec.private_dim_i, spec.private_class_sep))
        .collect();
    let priv_means_t: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| gauss(&mut rng, spec.private_dim_t, spec.private_class_sep))
        .collect();
    // stored k x d so that rows of latents multiply directly
    let a_i = Tensor::from_vec(
        k_i,
        spec.d_i,
        gauss(&mut rng, k_i * spec.d_i, 1.0 / (k_i as f64).sqrt()),
    )?;
    let a_t = Tensor::from_vec(
        k_t,
        spec.d_t,
        gauss(&mut rng, k_t * spec.d_t, 1.0 / (k_t as f64).sqrt()),
    )?;

    let mut lat_i = Vec::with_capacity(spec.n * k_i);
    let mut lat_t = Vec::with_capacity(spec.n * k_t);
    let mut labels = vec![0u8; spec.n * spec.classes];
    for j in 0..spec.n {
        let c = rng.random_range(0..spec.classes);
        labels[j * spec.classes + c] = 1;
        let w = spec.within_class_std;
        let s: Vec<f64> = shared_means[c].iter().map(|&m| m + gauss(&mut rng, 1, w)[0]).collect();
        let pi: Vec<f64> = priv_means_i[c].iter().map(|&m| m + gauss(&mut rng, 1, w)[0]).collect();
        let pt: Vec<f64> = priv_means_t[c].iter().map(|&m| m + gauss(&mut rng, 1, w)[0]).collect();
        lat_i.extend_from_slice(&s);
        lat_i.extend_from_slice(&pi);
        lat_t.extend_from_slice(&s);
        lat_t.extend_from_slice(&pt);
    }
    let mut x_i = Tensor::from_vec(spec.n, k_i, lat_i)?.matmul(&a_i)?;
    let mut x_t = Tensor::from_vec(spec.n, k_t, lat_t)?.matmul(&a_t)?;
    for v in x_i.data_mut() {
        *v += spec.noise_i * gauss(&mut rng, 1, 1.0)[0];
    }
    for v in x_t.data_mut() {
        *v += spec.noise_t * gauss(&mut rng, 1, 1.0)[0];
    }
    if spec.standardize {
        x_i = standardize_columns(&x_i);
        x_t = standardize_columns(&x_t);
    }
    // the binary container stores f32; keep in-memory data identical to disk
    let x_i = x_i.map(|v| v as f32 as f64);
    let x_t = x_t.map(|v| v as f32 as f64);
    let labels = LabelSet::from_multi_hot(&labels, spec.n, spec.classes)?;
    PairedDataset::new(x_i, x_t, Some(labels), None)
}

/// Column-wise `(x − mean) / std`; constant columns are only centred.
pub fn standardize_columns(x: &Tensor) -> Tensor {
    let (n, d) = x.shape();
    let mut mean = vec![0.0; d];
    let mut var = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
    for r in 0..n {
        for ((s, m), v) in var.iter_mut().zip(&mean).zip(x.row(r)) {
            *s += (v - m) * (v - m);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|&s| {
            let sd = (s / n.max(1) as f64).sqrt();
            if sd > 1e-12 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    let mut out = x.clone();
    for r in 0..n {
        for (c, v) in out.data_mut()[r * d..(r + 1) * d].iter_mut().enumerate() {
            *v = (*v - mean[c]) * scale[c];
        }
    }
    out
}

/// Class index of each row of one-hot labels.
pub fn class_of_rows(labels: &LabelSet) -> Result<Vec<usize>> {
    let bits = labels.to_multi_hot();
    let c = labels.classes();
    bits.chunks(c.max(1))
        .take(labels.len())
        .enumerate()
        .map(|(j, r)| {
            r.iter()
                .position(|&b| b == 1)
                .ok_or_else(|| Error::Format(format!("row {j} has no label")))
        })
        .collect()
}

/// Check used by loaders of externally supplied dimensions.
pub fn expect_dims(x: &Tensor, d: usize, what: &str) -> Result<()> {
    if x.cols() != d {
        return dim_err(format!("{what}: features have {} columns, expected {d}", x.cols()));
    }
    Ok(())
}
