mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use cmih_core::experiment::{AblationAxis, Task};
use cmih_core::Modality;

/// Cross-modal binary hashing: train paired encoders, encode features to
/// packed codes and evaluate Hamming retrieval.
///
/// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
/// 3 numeric failure (including failed checks).
#[derive(Debug, Parser)]
#[command(name = "cmih", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    Train(TrainArgs),
    Encode(EncodeArgs),
    Eval(EvalArgs),
    Ablate(AblateArgs),
    Synth(SynthArgs),
    Check(CheckArgs),
}

/// Train a model; writes checkpoint.bin, loss.csv, epochs.csv,
/// code_stats.json, split.txt and resolved_config.json.
#[derive(Debug, Args)]
struct TrainArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides train.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModalityArg {
    Image,
    Text,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Image => Modality::Image,
            ModalityArg::Text => Modality::Text,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SubsetArg {
    Query,
    Database,
    Train,
}

/// Encode one modality's features into a packed codes file.
#[derive(Debug, Args)]
struct EncodeArgs {
    /// Checkpoint written by train.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Feature file (binary container, or .csv).
    #[arg(long)]
    features: PathBuf,
    /// Which encoder to apply.
    #[arg(long, value_enum)]
    modality: ModalityArg,
    /// Output codes file.
    #[arg(long)]
    out: PathBuf,
    /// Split file used with --subset to encode only some rows.
    #[arg(long, requires = "subset")]
    split: Option<PathBuf>,
    /// Rows of the split to encode.
    #[arg(long, value_enum, requires = "split")]
    subset: Option<SubsetArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    #[value(name = "img_to_txt", alias = "img-to-txt")]
    ImgToTxt,
    #[value(name = "txt_to_img", alias = "txt-to-img")]
    TxtToImg,
    #[value(name = "img_to_img", alias = "img-to-img")]
    ImgToImg,
    #[value(name = "txt_to_txt", alias = "txt-to-txt")]
    TxtToTxt,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::ImgToTxt => Task::ImgToTxt,
            TaskArg::TxtToImg => Task::TxtToImg,
            TaskArg::ImgToImg => Task::ImgToImg,
            TaskArg::TxtToTxt => Task::TxtToTxt,
        }
    }
}

/// Score query codes against database codes; writes metrics.json,
/// pr_curve.csv and prec_at_k.csv.
#[derive(Debug, Args)]
struct EvalArgs {
    /// Query codes file.
    #[arg(long)]
    query: PathBuf,
    /// Database codes file.
    #[arg(long)]
    db: PathBuf,
    /// Multi-hot labels of the query rows.
    #[arg(long, conflicts_with_all = ["labels", "split"], requires = "db_labels")]
    query_labels: Option<PathBuf>,
    /// Multi-hot labels of the database rows.
    #[arg(long, requires = "query_labels")]
    db_labels: Option<PathBuf>,
    /// Labels of the whole dataset, split into query and database rows by --split.
    #[arg(long, requires = "split")]
    labels: Option<PathBuf>,
    /// Split file selecting query and database rows of --labels.
    #[arg(long, requires = "labels")]
    split: Option<PathBuf>,
    /// Retrieval direction; must match the codes' modality tags.
    #[arg(long, value_enum)]
    task: TaskArg,
    /// Cut-off of mAP@k.
    #[arg(long, default_value_t = 1000)]
    k: usize,
    /// Prec@K cut-offs, truncated at the database size.
    #[arg(long, value_delimiter = ',', default_values_t = cmih_core::retrieval::DEFAULT_PREC_GRID)]
    prec_grid: Vec<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AxisArg {
    Lambda1,
    Lambda2,
    #[value(name = "l_ind", alias = "l-ind")]
    LInd,
    #[value(name = "l_bal", alias = "l-bal")]
    LBal,
    #[value(name = "critic_input", alias = "critic-input")]
    CriticInput,
}

impl From<AxisArg> for AblationAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Lambda1 => AblationAxis::Lambda1,
            AxisArg::Lambda2 => AblationAxis::Lambda2,
            AxisArg::LInd => AblationAxis::LInd,
            AxisArg::LBal => AblationAxis::LBal,
            AxisArg::CriticInput => AblationAxis::CriticInput,
        }
    }
}

/// Train and evaluate every value of one axis; writes ablation.csv and
/// ablation_summary.csv (medians over seeds).
#[derive(Debug, Args)]
struct AblateArgs {
    /// Base JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// l_ind sweeps lambda3, l_bal sweeps lambda4; for critic_input 0 feeds
    /// mu to the critic and k feeds k sampled codes.
    #[arg(long, value_enum)]
    axis: AxisArg,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Training seeds; defaults to train.seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Overrides output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Generate a synthetic paired dataset; writes image.bin, text.bin,
/// labels.csv, synth_spec.json and, with --n-query, split.txt.
#[derive(Debug, Args)]
struct SynthArgs {
    /// Paired rows.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Number of classes.
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Image feature dimension.
    #[arg(long, default_value_t = 64)]
    d_i: usize,
    /// Text feature dimension.
    #[arg(long, default_value_t = 48)]
    d_t: usize,
    /// Latent dimension shared by both modalities.
    #[arg(long, default_value_t = 8)]
    shared_dim: usize,
    /// Latent dimension private to images.
    #[arg(long, default_value_t = 4)]
    private_dim_i: usize,
    /// Latent dimension private to text.
    #[arg(long, default_value_t = 4)]
    private_dim_t: usize,
    /// Observation noise std of image features.
    #[arg(long, default_value_t = 0.1)]
    noise_i: f64,
    /// Observation noise std of text features.
    #[arg(long, default_value_t = 0.1)]
    noise_t: f64,
    /// Spread of the class means of the shared latent.
    #[arg(long, default_value_t = 3.0)]
    class_sep: f64,
    /// Spread of the class means of the private latents; 0 makes them class-independent.
    #[arg(long, default_value_t = 0.0)]
    private_class_sep: f64,
    /// Within-class standard deviation of every latent coordinate.
    #[arg(long, default_value_t = 1.0)]
    within_class_std: f64,
    /// Keep raw feature scales instead of z-scoring columns.
    #[arg(long)]
    raw: bool,
    /// Generator seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write a query/database split with this many queries.
    #[arg(long)]
    n_query: Option<usize>,
    /// Training rows for the split; all database rows by default.
    #[arg(long, requires = "n_query")]
    n_train: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

/// Run the randomised property families against enumeration and
/// brute-force oracles; exit 0 iff all pass.
#[derive(Debug, Args)]
struct CheckArgs {
    /// Random cases per family.
    #[arg(long, default_value_t = 200)]
    instances: usize,
    /// Seed of the random case generator.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(&a.config, a.seed, a.out.as_deref()),
        Command::Encode(a) => commands::encode(
            &a.checkpoint,
            &a.features,
            a.modality.into(),
            &a.out,
            a.split.as_deref().zip(a.subset.map(commands::subset_tag)),
        ),
        Command::Eval(a) => {
            let labels = match (a.query_labels, a.db_labels, a.labels, a.split) {
                (Some(q), Some(d), None, None) => commands::EvalLabels::Separate(q, d),
                (None, None, Some(l), Some(s)) => commands::EvalLabels::Split(l, s),
                _ => {
                    eprintln!("error: give --query-labels with --db-labels, or --labels with --split");
                    return ExitCode::from(1);
                }
            };
            commands::eval(&a.query, &a.db, &labels, a.task.into(), a.k, &a.prec_grid, &a.out)
        }
        Command::Ablate(a) => commands::ablate(&a.config, a.axis.into(), &a.values, &a.seeds, a.out.as_deref()),
        Command::Synth(a) => {
            let spec = cmih_core::data::SyntheticSpec {
                n: a.n,
                classes: a.classes,
                d_i: a.d_i,
                d_t: a.d_t,
                shared_dim: a.shared_dim,
                private_dim_i: a.private_dim_i,
                private_dim_t: a.private_dim_t,
                noise_i: a.noise_i,
                noise_t: a.noise_t,
                class_sep: a.class_sep,
                private_class_sep: a.private_class_sep,
                within_class_std: a.within_class_std,
                standardize: !a.raw,
                seed: a.seed,
            };
            commands::synth(&spec, a.n_query.map(|q| (q, a.n_train)), &a.out)
        }
        Command::Check(a) => commands::check(a.instances, a.seed, a.out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
