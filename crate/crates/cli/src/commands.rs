use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cmih_core::data::{
    expect_dims, generate_synthetic, read_features, read_split, split, split_to_text, write_features, write_labels,
    write_split, SplitTag, SyntheticSpec,
};
use cmih_core::experiment::{ablate as run_ablation, ablation_csv, median, AblationAxis, Task};
use cmih_core::report::{epoch_csv, loss_csv, pr_curve_csv, prec_at_k_csv, MetricsReport, TaskReport, METRICS_VERSION};
use cmih_core::retrieval::{binarize, code_stats, evaluate, read_codes, write_codes, CodeStats, LabelSet};
use cmih_core::trainer::Trainer;
use cmih_core::Modality;

use crate::config::RunConfig;
use crate::error::{io_err, CliError};

type Result<T> = std::result::Result<T, CliError>;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn load_config(path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = o.to_path_buf();
    }
    cfg.check_paths()?;
    create_dir(&cfg.output_dir)?;
    write(&cfg.output_dir.join("resolved_config.json"), cfg.to_json())?;
    Ok(cfg)
}

pub fn train(config: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config, seed, out)?;
    let ds = cfg.dataset()?;
    let dir = &cfg.output_dir;
    write(
        &dir.join("split.txt"),
        split_to_text(ds.split.as_deref().unwrap_or_default()),
    )?;
    let rows = ds.train_rows();
    let (x_i, x_t) = (ds.x_i.select_rows(&rows), ds.x_t.select_rows(&rows));
    let mut trainer = Trainer::new(cfg.model.arch(ds.d_i(), ds.d_t()), cfg.train.clone())?;
    let mut log = Vec::new();
    let epochs = trainer.fit(&x_i, &x_t, &mut log)?;
    trainer.save(&dir.join("checkpoint.bin"))?;
    write(&dir.join("loss.csv"), loss_csv(&log))?;
    write(&dir.join("epochs.csv"), epoch_csv(&epochs))?;

    let mut stats = serde_json::Map::new();
    for (m, x) in [(Modality::Image, &x_i), (Modality::Text, &x_t)] {
        let mu = trainer.bundle.encode(m, x)?;
        let s = code_stats(&binarize(&mu), Some(&mu))?;
        stats.insert(
            modality_name(m).into(),
            serde_json::to_value(s).expect("stats serialize"),
        );
    }
    write(&dir.join("code_stats.json"), to_json(&stats))?;
    if let Some(last) = epochs.last() {
        println!(
            "trained {} epochs ({} steps) on {} rows; final objective {:.6}, js_mi {:.6}",
            trainer.epoch,
            trainer.step,
            rows.len(),
            last.breakdown.total,
            last.breakdown.js_mi
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn modality_name(m: Modality) -> &'static str {
    match m {
        Modality::Image => "image",
        Modality::Text => "text",
    }
}

pub fn subset_tag(s: crate::SubsetArg) -> SplitTag {
    match s {
        crate::SubsetArg::Query => SplitTag::Query,
        crate::SubsetArg::Database => SplitTag::Database,
        crate::SubsetArg::Train => SplitTag::Train,
    }
}

fn rows_of(tags: &[SplitTag], subset: SplitTag) -> Vec<usize> {
    (0..tags.len())
        .filter(|&j| match subset {
            SplitTag::Database => tags[j].in_database(),
            t => tags[j] == t,
        })
        .collect()
}

pub fn encode(
    checkpoint: &Path,
    features: &Path,
    m: Modality,
    out: &Path,
    subset: Option<(&Path, SplitTag)>,
) -> Result<()> {
    let trainer = Trainer::restore(checkpoint)?;
    let mut x = read_features(features)?;
    let arch = trainer.bundle.arch;
    let d = match m {
        Modality::Image => arch.d_i,
        Modality::Text => arch.d_t,
    };
    expect_dims(&x, d, &features.display().to_string())?;
    if let Some((split_path, tag)) = subset {
        let tags = read_split(split_path)?;
        if tags.len() != x.rows() {
            return Err(CliError::Data(format!(
                "{} has {} rows, {} has {}",
                split_path.display(),
                tags.len(),
                features.display(),
                x.rows()
            )));
        }
        x = x.select_rows(&rows_of(&tags, tag));
    }
    let codes = binarize(&trainer.bundle.encode(m, &x)?);
    write_codes(out, &codes, Some(m))?;
    println!(
        "encoded {} rows to {} bits: {}",
        codes.len(),
        codes.code_len(),
        out.display()
    );
    Ok(())
}

pub enum EvalLabels {
    Separate(PathBuf, PathBuf),
    Split(PathBuf, PathBuf),
}

fn load_eval_labels(labels: &EvalLabels) -> Result<(LabelSet, LabelSet)> {
    match labels {
        EvalLabels::Separate(q, d) => Ok((cmih_core::data::read_labels(q)?, cmih_core::data::read_labels(d)?)),
        EvalLabels::Split(l, s) => {
            let all = cmih_core::data::read_labels(l)?;
            let tags = read_split(s)?;
            if tags.len() != all.len() {
                return Err(CliError::Data(format!(
                    "{} has {} rows, {} has {}",
                    s.display(),
                    tags.len(),
                    l.display(),
                    all.len()
                )));
            }
            Ok((
                all.select_rows(&rows_of(&tags, SplitTag::Query)),
                all.select_rows(&rows_of(&tags, SplitTag::Database)),
            ))
        }
    }
}

pub fn eval(
    query: &Path,
    db: &Path,
    labels: &EvalLabels,
    task: Task,
    k: usize,
    grid: &[usize],
    out: &Path,
) -> Result<()> {
    let (q_codes, q_mod) = read_codes(query)?;
    let (db_codes, db_mod) = read_codes(db)?;
    let (want_q, want_db) = task.modalities();
    for (path, found, want) in [(query, q_mod, want_q), (db, db_mod, want_db)] {
        if let Some(f) = found {
            if f != want {
                return Err(CliError::Usage(format!(
                    "{} holds {} codes but task {} needs {}",
                    path.display(),
                    modality_name(f),
                    task.name(),
                    modality_name(want)
                )));
            }
        }
    }
    let (q_labels, db_labels) = load_eval_labels(labels)?;
    if q_labels.len() != q_codes.len() || db_labels.len() != db_codes.len() {
        return Err(CliError::Data(format!(
            "{} query codes vs {} query labels, {} database codes vs {} database labels",
            q_codes.len(),
            q_labels.len(),
            db_codes.len(),
            db_labels.len()
        )));
    }
    if k == 0 {
        return Err(CliError::Usage("--k must be >= 1".into()));
    }
    let result = evaluate(&q_codes, &db_codes, &q_labels, &db_labels, k, grid)?;
    let stats = |c| -> Result<CodeStats> { Ok(code_stats(c, None)?) };
    let task_report = TaskReport::new(task, q_codes.len(), db_codes.len(), &result);
    create_dir(out)?;
    write(&out.join("pr_curve.csv"), pr_curve_csv(&task_report.pr_curve))?;
    write(&out.join("prec_at_k.csv"), prec_at_k_csv(&task_report.prec_at_k))?;
    let report = MetricsReport {
        version: METRICS_VERSION,
        tasks: vec![task_report],
        query_code_stats: Some(stats(&q_codes)?),
        database_code_stats: Some(stats(&db_codes)?),
        random_baseline_map: None,
    };
    write(&out.join("metrics.json"), report.to_json()?)?;
    println!("{} mAP@{k} = {:.6}", task.name(), result.map_at_k);
    Ok(())
}

pub fn ablate(config: &Path, axis: AblationAxis, values: &[f64], seeds: &[u64], out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config, None, out)?;
    for &v in values {
        axis.apply(&cfg.train, v)?;
    }
    let seeds = if seeds.is_empty() {
        vec![cfg.train.seed]
    } else {
        seeds.to_vec()
    };
    let ds = cfg.dataset()?;
    let rows = run_ablation(&ds, &cfg.model, &cfg.train, &cfg.eval, axis, values, &seeds)?;
    let dir = &cfg.output_dir;
    write(&dir.join("ablation.csv"), ablation_csv(axis, &rows))?;

    let mut summary = String::from("axis,value,seeds,img_to_txt,txt_to_img,img_to_img,txt_to_txt,corr_mse\n");
    for &v in values {
        let sel: Vec<_> = rows.iter().filter(|r| r.value == v).collect();
        let med = |f: &dyn Fn(&cmih_core::experiment::AblationRow) -> f64| {
            median(&sel.iter().map(|r| f(r)).collect::<Vec<_>>())
        };
        let _ = writeln!(
            summary,
            "{},{v},{},{},{},{},{},{}",
            axis.name(),
            sel.len(),
            med(&|r| r.map(Task::ImgToTxt)),
            med(&|r| r.map(Task::TxtToImg)),
            med(&|r| r.map(Task::ImgToImg)),
            med(&|r| r.map(Task::TxtToTxt)),
            med(&|r| r.corr_mse)
        );
    }
    write(&dir.join("ablation_summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn synth(spec: &SyntheticSpec, split_counts: Option<(usize, Option<usize>)>, out: &Path) -> Result<()> {
    let ds = generate_synthetic(spec)?;
    create_dir(out)?;
    write_features(&out.join("image.bin"), &ds.x_i)?;
    write_features(&out.join("text.bin"), &ds.x_t)?;
    write_labels(
        &out.join("labels.csv"),
        ds.labels.as_ref().expect("synthetic data has labels"),
    )?;
    write(&out.join("synth_spec.json"), to_json(spec))?;
    if let Some((n_query, n_train)) = split_counts {
        let n_db = ds.len().saturating_sub(n_query);
        let tagged = split(&ds, n_query, n_train.unwrap_or(n_db), spec.seed)?;
        write_split(
            &out.join("split.txt"),
            tagged.split.as_deref().expect("split was just drawn"),
        )?;
    }
    println!("wrote {} paired rows to {}", ds.len(), out.display());
    Ok(())
}

pub fn check(instances: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    if instances == 0 {
        return Err(CliError::Usage("--instances must be >= 1".into()));
    }
    let report = cmih_core::check::run_checks(instances, seed)?;
    println!(
        "{:<34} {:>9} {:>8} {:>12} {:>10}",
        "family", "instances", "failures", "worst", "tolerance"
    );
    for f in &report.families {
        println!(
            "{:<34} {:>9} {:>8} {:>12.3e} {:>10.1e}  {}",
            f.family,
            f.instances,
            f.failures,
            f.worst,
            f.tolerance,
            if f.passed() { "ok" } else { "FAILED" }
        );
    }
    if let Some(path) = out {
        write(path, to_json(&report))?;
    }
    let failed = report.families.iter().filter(|f| !f.passed()).count();
    if failed > 0 {
        return Err(CliError::ChecksFailed(failed, report.families.len()));
    }
    println!("all {} property families passed", report.families.len());
    Ok(())
}
