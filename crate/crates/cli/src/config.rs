//! JSON run configuration with strict key checking.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cmih_core::data::{generate_synthetic, load_dataset, split, PairedDataset, SyntheticSpec};
use cmih_core::experiment::{EvalSettings, ModelSettings};
use cmih_core::trainer::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub image: PathBuf,
    pub text: PathBuf,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    /// Query/database/train tags; drawn from `split` settings when absent.
    #[serde(default)]
    pub split: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DataSource {
    Files(FileSource),
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSettings {
    pub n_query: usize,
    /// Training rows drawn from the database; all of it when absent.
    #[serde(default)]
    pub n_train: Option<usize>,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings {
            n_query: 2000,
            n_train: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    pub output_dir: PathBuf,
    pub model: ModelSettings,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub split: SplitSettings,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate()?;
        if self.model.code_len == 0 || self.model.enc_hidden == 0 || self.model.aux_hidden == 0 {
            return Err(CliError::Usage("model code_len and widths must be positive".into()));
        }
        if self.eval.k == 0 {
            return Err(CliError::Usage("eval.k must be >= 1".into()));
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        Ok(())
    }

    /// Fails before any work if an input file is missing.
    pub fn check_paths(&self) -> Result<(), CliError> {
        if let DataSource::Files(f) = &self.data {
            let inputs = [Some(&f.image), Some(&f.text), f.labels.as_ref(), f.split.as_ref()];
            for p in inputs.into_iter().flatten() {
                if !p.is_file() {
                    return Err(CliError::Data(format!("{}: no such file", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Loads or generates the dataset and makes sure it carries a split.
    pub fn dataset(&self) -> Result<PairedDataset, CliError> {
        let ds = match &self.data {
            DataSource::Files(f) => load_dataset(&f.image, &f.text, f.labels.as_deref(), f.split.as_deref())?,
            DataSource::Synthetic(spec) => generate_synthetic(spec)?,
        };
        if ds.split.is_some() {
            return Ok(ds);
        }
        let n_db = ds.len().saturating_sub(self.split.n_query);
        let n_train = self.split.n_train.unwrap_or(n_db);
        Ok(split(&ds, self.split.n_query, n_train, self.train.seed)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "data": {"synthetic": {"n": 100, "classes": 3, "d_i": 6, "d_t": 5, "shared_dim": 2,
                               "private_dim_i": 1, "private_dim_t": 1, "noise_i": 0.1, "noise_t": 0.1, "seed": 3}},
        "output_dir": "out",
        "model": {"code_len": 8}
    }"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.train.lambdas.lambda1, 1.5);
        assert_eq!(cfg.train.lambdas.lambda2, 1.0);
        assert_eq!(cfg.train.lambdas.lambda3, 0.25);
        assert_eq!(cfg.train.lambdas.lambda4, 0.01);
        assert_eq!(cfg.eval.k, 1000);
        assert_eq!(cfg.model.enc_hidden, 1024);
        assert_eq!(RunConfig::parse(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let typo = MINIMAL.replace("\"model\"", "\"modle\"");
        assert!(matches!(RunConfig::parse(&typo), Err(CliError::Usage(_))));
        let nested = MINIMAL.replace("{\"code_len\": 8}", "{\"code_len\": 8, \"lamda1\": 2}");
        assert!(matches!(RunConfig::parse(&nested), Err(CliError::Usage(_))));
    }

    #[test]
    fn missing_inputs_detected() {
        let cfg = RunConfig {
            data: DataSource::Files(FileSource {
                image: "/nonexistent/i.bin".into(),
                text: "/nonexistent/t.bin".into(),
                labels: None,
                split: None,
            }),
            ..RunConfig::parse(MINIMAL).unwrap()
        };
        let err = cfg.check_paths().unwrap_err();
        assert!(matches!(&err, CliError::Data(m) if m.contains("/nonexistent/i.bin")));
    }
}
