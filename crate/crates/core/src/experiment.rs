//! Train, encode and score the four retrieval tasks on one dataset, plus
//! the random-code baseline and ablation sweeps built on top.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{generate_synthetic, split, PairedDataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::nn::Arch;
use crate::retrieval::{
    binarize, code_stats, evaluate, truncate_grid, CodeStats, LabelSet, PackedCodes, RetrievalResult, DEFAULT_PREC_GRID,
};
use crate::rng::{substream, Substream};
use crate::trainer::{EpochMetrics, StepLog, TrainConfig, Trainer};
use crate::Modality;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    ImgToTxt,
    TxtToImg,
    ImgToImg,
    TxtToTxt,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::ImgToTxt, Task::TxtToImg, Task::ImgToImg, Task::TxtToTxt];

    pub fn modalities(self) -> (Modality, Modality) {
        match self {
            Task::ImgToTxt => (Modality::Image, Modality::Text),
            Task::TxtToImg => (Modality::Text, Modality::Image),
            Task::ImgToImg => (Modality::Image, Modality::Image),
            Task::TxtToTxt => (Modality::Text, Modality::Text),
        }
    }

    pub fn is_cross_modal(self) -> bool {
        let (a, b) = self.modalities();
        a != b
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::ImgToTxt => "img_to_txt",
            Task::TxtToImg => "txt_to_img",
            Task::ImgToImg => "img_to_img",
            Task::TxtToTxt => "txt_to_txt",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub k: usize,
    pub prec_grid: Vec<usize>,
    /// Random-code draws for the baseline; 0 skips it.
    pub baseline_trials: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            k: 1000,
            prec_grid: DEFAULT_PREC_GRID.to_vec(),
            baseline_trials: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSettings {
    pub code_len: usize,
    #[serde(default = "default_enc_hidden")]
    pub enc_hidden: usize,
    #[serde(default = "default_aux_hidden")]
    pub aux_hidden: usize,
}

fn default_enc_hidden() -> usize {
    1024
}

fn default_aux_hidden() -> usize {
    512
}

impl ModelSettings {
    pub fn arch(&self, d_i: usize, d_t: usize) -> Arch {
        Arch::new(d_i, d_t, self.code_len).with_widths(self.enc_hidden, self.aux_hidden)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: Task,
    pub result: RetrievalResult,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trainer: Trainer,
    pub epochs: Vec<EpochMetrics>,
    pub log: Vec<StepLog>,
    pub tasks: Vec<TaskMetrics>,
    pub query_codes: [PackedCodes; 2],
    pub db_codes: [PackedCodes; 2],
    /// Per-modality statistics of the train-set codes and μ.
    pub stats: [CodeStats; 2],
    pub baseline_map: Option<f64>,
}

impl RunOutcome {
    pub fn map(&self, task: Task) -> f64 {
        self.tasks
            .iter()
            .find(|t| t.task == task)
            .map(|t| t.result.map_at_k)
            .unwrap_or(f64::NAN)
    }

    pub fn cross_modal_map(&self) -> f64 {
        0.5 * (self.map(Task::ImgToTxt) + self.map(Task::TxtToImg))
    }

    pub fn single_modal_map(&self) -> f64 {
        0.5 * (self.map(Task::ImgToImg) + self.map(Task::TxtToTxt))
    }

    pub fn corr_mse(&self) -> f64 {
        0.5 * (self.stats[0].corr_mse + self.stats[1].corr_mse)
    }
}

fn idx(m: Modality) -> usize {
    match m {
        Modality::Image => 0,
        Modality::Text => 1,
    }
}

fn require_labels(ds: &PairedDataset) -> Result<&LabelSet> {
    ds.labels
        .as_ref()
        .ok_or_else(|| Error::Contract("evaluation needs labels".into()))
}

/// Trains on the train rows of a split dataset, then scores all four tasks
/// with query rows against database rows.
pub fn run(ds: &PairedDataset, model: &ModelSettings, train: &TrainConfig, eval: &EvalSettings) -> Result<RunOutcome> {
    let labels = require_labels(ds)?;
    if ds.split.is_none() {
        return Err(Error::Contract("run needs a query/database split".into()));
    }
    let (q_rows, db_rows, tr_rows) = (ds.query_rows(), ds.database_rows(), ds.train_rows());
    let arch = model.arch(ds.d_i(), ds.d_t());
    let mut trainer = Trainer::new(arch, train.clone())?;
    let x_i = ds.x_i.select_rows(&tr_rows);
    let x_t = ds.x_t.select_rows(&tr_rows);
    let mut log = Vec::new();
    let epochs = trainer.fit(&x_i, &x_t, &mut log)?;

    let feats = [&ds.x_i, &ds.x_t];
    let mut q_codes = Vec::with_capacity(2);
    let mut db_codes = Vec::with_capacity(2);
    let mut stats = Vec::with_capacity(2);
    for m in [Modality::Image, Modality::Text] {
        let x = feats[idx(m)];
        let q_mu = trainer.bundle.encode(m, &x.select_rows(&q_rows))?;
        let db_mu = trainer.bundle.encode(m, &x.select_rows(&db_rows))?;
        let tr_mu = trainer.bundle.encode(m, &x.select_rows(&tr_rows))?;
        let db = binarize(&db_mu);
        stats.push(code_stats(&binarize(&tr_mu), Some(&tr_mu))?);
        q_codes.push(binarize(&q_mu));
        db_codes.push(db);
    }
    let q_labels = labels.select_rows(&q_rows);
    let db_labels = labels.select_rows(&db_rows);
    let grid = truncate_grid(&eval.prec_grid, db_rows.len());
    let mut tasks = Vec::with_capacity(4);
    for task in Task::ALL {
        let (qm, dm) = task.modalities();
        let result = evaluate(
            &q_codes[idx(qm)],
            &db_codes[idx(dm)],
            &q_labels,
            &db_labels,
            eval.k,
            &grid,
        )?;
        tasks.push(TaskMetrics { task, result });
    }
    let baseline_map = if eval.baseline_trials > 0 {
        Some(random_code_baseline(
            &q_labels,
            &db_labels,
            model.code_len,
            eval.k,
            eval.baseline_trials,
            train.seed,
        )?)
    } else {
        None
    };
    let mut stats = stats.into_iter();
    let mut qc = q_codes.into_iter();
    let mut dc = db_codes.into_iter();
    Ok(RunOutcome {
        trainer,
        epochs,
        log,
        tasks,
        query_codes: [qc.next().unwrap(), qc.next().unwrap()],
        db_codes: [dc.next().unwrap(), dc.next().unwrap()],
        stats: [stats.next().unwrap(), stats.next().unwrap()],
        baseline_map,
    })
}

/// Uniform random `l`-bit codes for `n` rows.
pub fn random_codes(n: usize, l: usize, rng: &mut impl Rng) -> Result<PackedCodes> {
    let bits: Vec<u8> = (0..n * l).map(|_| rng.random_range(0..2u8)).collect();
    PackedCodes::pack(&bits, n, l)
}

/// Mean mAP@k of independent uniform random codes over `trials` draws.
pub fn random_code_baseline(
    q_labels: &LabelSet,
    db_labels: &LabelSet,
    l: usize,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Config("baseline needs at least one trial".into()));
    }
    let mut rng = substream(seed, Substream::Baseline);
    let mut total = 0.0;
    for _ in 0..trials {
        let q = random_codes(q_labels.len(), l, &mut rng)?;
        let db = random_codes(db_labels.len(), l, &mut rng)?;
        total += evaluate(&q, &db, q_labels, db_labels, k, &[])?.map_at_k;
    }
    Ok(total / trials as f64)
}

/// Desk-scale synthetic experiment: data, split, model and training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticExperiment {
    pub data: SyntheticSpec,
    pub n_query: usize,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

impl SyntheticExperiment {
    /// n=2000, 10 classes, d=64/48, 16 bits, 100 epochs, 200 queries with
    /// the remaining rows as database and training set. Gradients are
    /// clipped to norm 5 so the first steps do not saturate the codes.
    pub fn desk() -> Self {
        SyntheticExperiment {
            data: SyntheticSpec::default(),
            n_query: 200,
            model: ModelSettings {
                code_len: 16,
                enc_hidden: 256,
                aux_hidden: 128,
            },
            train: TrainConfig {
                epochs: 100,
                grad_clip: Some(5.0),
                ..TrainConfig::default()
            },
            eval: EvalSettings {
                k: 100,
                prec_grid: DEFAULT_PREC_GRID.to_vec(),
                baseline_trials: 20,
            },
        }
    }

    pub fn dataset(&self) -> Result<PairedDataset> {
        let ds = generate_synthetic(&self.data)?;
        let n_db = ds.len().saturating_sub(self.n_query);
        split(&ds, self.n_query, n_db, self.data.seed)
    }

    pub fn run(&self) -> Result<RunOutcome> {
        run(&self.dataset()?, &self.model, &self.train, &self.eval)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Lambda1,
    Lambda2,
    /// λ3 weight of the independence term.
    LInd,
    /// λ4 weight of the balance term.
    LBal,
    /// `0` for μ, `k` for `k` sampled codes.
    CriticInput,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 5] = [
        AblationAxis::Lambda1,
        AblationAxis::Lambda2,
        AblationAxis::LInd,
        AblationAxis::LBal,
        AblationAxis::CriticInput,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Lambda1 => "lambda1",
            AblationAxis::Lambda2 => "lambda2",
            AblationAxis::LInd => "l_ind",
            AblationAxis::LBal => "l_bal",
            AblationAxis::CriticInput => "critic_input",
        }
    }

    pub fn parse(s: &str) -> Option<AblationAxis> {
        AblationAxis::ALL.into_iter().find(|a| a.name() == s)
    }

    /// Copy of `base` with this axis set to `value`.
    pub fn apply(self, base: &TrainConfig, value: f64) -> Result<TrainConfig> {
        let mut c = base.clone();
        match self {
            AblationAxis::Lambda1 => c.lambdas.lambda1 = value,
            AblationAxis::Lambda2 => c.lambdas.lambda2 = value,
            AblationAxis::LInd => c.lambdas.lambda3 = value,
            AblationAxis::LBal => c.lambdas.lambda4 = value,
            AblationAxis::CriticInput => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(Error::Config(format!(
                        "critic_input value must be a count, got {value}"
                    )));
                }
                c.critic_input = match value as usize {
                    0 => crate::objectives::CriticInput::Mu,
                    k => crate::objectives::CriticInput::Samples(k),
                };
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: f64,
    pub seed: u64,
    pub maps: Vec<(Task, f64)>,
    pub corr_mse: f64,
    pub baseline_map: Option<f64>,
}

impl AblationRow {
    pub fn map(&self, task: Task) -> f64 {
        self.maps
            .iter()
            .find(|(t, _)| *t == task)
            .map(|(_, m)| *m)
            .unwrap_or(f64::NAN)
    }

    pub fn cross_modal(&self) -> f64 {
        0.5 * (self.map(Task::ImgToTxt) + self.map(Task::TxtToImg))
    }

    pub fn single_modal(&self) -> f64 {
        0.5 * (self.map(Task::ImgToImg) + self.map(Task::TxtToTxt))
    }
}

pub const ABLATION_CSV_HEADER: &str = "axis,value,seed,img_to_txt,txt_to_img,img_to_img,txt_to_txt,corr_mse";

pub fn ablation_csv(axis: AblationAxis, rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            axis.name(),
            r.value,
            r.seed,
            r.map(Task::ImgToTxt),
            r.map(Task::TxtToImg),
            r.map(Task::ImgToImg),
            r.map(Task::TxtToTxt),
            r.corr_mse
        ));
    }
    out
}

/// Runs every `value` for every training seed on one dataset.
pub fn ablate(
    ds: &PairedDataset,
    model: &ModelSettings,
    base: &TrainConfig,
    eval: &EvalSettings,
    axis: AblationAxis,
    values: &[f64],
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(values.len() * seeds.len());
    for &value in values {
        let cfg = axis.apply(base, value)?;
        for &seed in seeds {
            let cfg = TrainConfig { seed, ..cfg.clone() };
            let out = run(ds, model, &cfg, eval)?;
            rows.push(AblationRow {
                value,
                seed,
                maps: out.tasks.iter().map(|t| (t.task, t.result.map_at_k)).collect(),
                corr_mse: out.corr_mse(),
                baseline_map: out.baseline_map,
            });
        }
    }
    Ok(rows)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Column means of μ.
pub fn bit_means(mu: &Tensor) -> Vec<f64> {
    let n = mu.rows().max(1) as f64;
    (0..mu.cols())
        .map(|c| (0..mu.rows()).map(|r| mu.get(r, c)).sum::<f64>() / n)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SyntheticExperiment {
        let mut e = SyntheticExperiment::desk();
        e.data.n = 120;
        e.data.classes = 3;
        e.data.d_i = 10;
        e.data.d_t = 8;
        e.n_query = 20;
        e.model = ModelSettings {
            code_len: 8,
            enc_hidden: 16,
            aux_hidden: 8,
        };
        e.train.epochs = 2;
        e.train.batch_size = 32;
        e.eval.k = 50;
        e.eval.baseline_trials = 2;
        e
    }

    #[test]
    fn run_scores_all_tasks() {
        let out = tiny().run().unwrap();
        assert_eq!(out.tasks.len(), 4);
        for t in &out.tasks {
            assert!((0.0..=1.0).contains(&t.result.map_at_k));
        }
        assert_eq!(out.query_codes[0].len(), 20);
        assert_eq!(out.db_codes[1].len(), 100);
        assert_eq!(out.epochs.len(), 2);
        assert!(out.baseline_map.unwrap() > 0.0);
    }

    #[test]
    fn ablation_rows_and_csv() {
        let e = tiny();
        let ds = e.dataset().unwrap();
        let rows = ablate(
            &ds,
            &e.model,
            &e.train,
            &e.eval,
            AblationAxis::Lambda2,
            &[0.0, 1.0, 10.0],
            &[1],
        )
        .unwrap();
        assert_eq!(rows.len(), 3);
        let csv = ablation_csv(AblationAxis::Lambda2, &rows);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().starts_with("lambda2,0,1,"));
    }

    #[test]
    fn axis_parsing_and_application() {
        assert_eq!(AblationAxis::parse("l_ind"), Some(AblationAxis::LInd));
        assert_eq!(AblationAxis::parse("lambda5"), None);
        let c = AblationAxis::CriticInput.apply(&TrainConfig::default(), 3.0).unwrap();
        assert_eq!(c.critic_input, crate::objectives::CriticInput::Samples(3));
        assert!(AblationAxis::CriticInput.apply(&TrainConfig::default(), 1.5).is_err());
        assert!(AblationAxis::Lambda1.apply(&TrainConfig::default(), -1.0).is_err());
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn task_names_round_trip() {
        for t in Task::ALL {
            assert_eq!(Task::parse(t.name()), Some(t));
        }
        assert!(Task::ImgToTxt.is_cross_modal());
        assert!(!Task::TxtToTxt.is_cross_modal());
    }
}
