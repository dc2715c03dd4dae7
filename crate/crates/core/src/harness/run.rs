//! Run directories: what `train`, `eval`, `ablate` and `saliency` read and write.
//!
//! ```text
//! RUN/config.txt         full RunConfig
//! RUN/run.txt            data=<dataset dir>
//! RUN/folds.txt          id fold
//! RUN/predictions.txt    id fold label score
//! RUN/fold<k>/model.ckpt
//! RUN/fold<k>/log.txt
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::folds::{split_folds, FoldPlan};
use super::metrics::{bootstrap_auc, bootstrap_auc_ci, compute_metrics, BootstrapResult, MetricsReport};
use super::timing::time_inference;
use super::train::{cross_validate, prepare, EpochLog, FoldOutcome, Prediction};
use super::RunConfig;
use crate::arch::{forward, gradcam, Checkpoint, RunMode, Variant};
use crate::error::{Error, Result};
use crate::phantom::{load_dataset, write_volume, MultiPhaseSample};

const CONFIG: &str = "config.txt";
const RUN: &str = "run.txt";
const FOLDS: &str = "folds.txt";
const PREDICTIONS: &str = "predictions.txt";

fn fold_dir(run: &Path, fold: usize) -> PathBuf {
    run.join(format!("fold{fold}"))
}

pub fn checkpoint_path(run: &Path, fold: usize) -> PathBuf {
    fold_dir(run, fold).join("model.ckpt")
}

fn malformed(path: &Path, detail: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut out = String::from("# id fold label score\n");
    for p in preds {
        out.push_str(&format!("{} {} {} {}\n", p.id, p.fold, p.label, p.score));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_predictions(run: &Path) -> Result<Vec<Prediction>> {
    let path = run.join(PREDICTIONS);
    let text = fs::read_to_string(&path)?;
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let parts: Vec<&str> = l.split_whitespace().collect();
            let [id, fold, label, score] = parts[..] else {
                return Err(malformed(&path, format!("line `{l}`")));
            };
            let bad = |_| malformed(&path, format!("line `{l}`"));
            Ok(Prediction {
                id: id.to_string(),
                fold: fold.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                label: label.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                score: score.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            })
        })
        .collect()
}

/// Dataset directory recorded by [`train_run`].
pub fn run_data_dir(run: &Path) -> Result<PathBuf> {
    let path = run.join(RUN);
    let text = fs::read_to_string(&path)?;
    text.lines()
        .find_map(|l| l.strip_prefix("data="))
        .map(PathBuf::from)
        .ok_or_else(|| malformed(&path, "missing data="))
}

/// Cross-validate `cfg` on the dataset in `data`, writing a run directory at `out`.
pub fn train_run(
    data: &Path,
    cfg: &RunConfig,
    out: &Path,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<Vec<FoldOutcome>> {
    cfg.validate()?;
    let (entries, samples) = load_dataset(data)?;
    let plan = split_folds(&entries, cfg.train.folds, cfg.train.fold_seed)?;
    let prepared = prepare(&samples, &cfg.model)?;
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG), cfg.to_text())?;
    let data_abs = fs::canonicalize(data)?;
    fs::write(out.join(RUN), format!("data={}\n", data_abs.display()))?;
    plan.save(&out.join(FOLDS))?;
    let mut save_fold = |f: &FoldOutcome| -> Result<()> {
        let dir = fold_dir(out, f.fold);
        fs::create_dir_all(&dir)?;
        let mut ckpt = Checkpoint::new(cfg.model.clone(), f.params.clone());
        ckpt.meta.push(("fold".into(), f.fold.to_string()));
        ckpt.meta.push(("epochs".into(), cfg.train.epochs.to_string()));
        ckpt.save(&checkpoint_path(out, f.fold))?;
        let log: String = f.log.iter().map(|e| e.to_line() + "\n").collect();
        fs::write(dir.join("log.txt"), log)?;
        Ok(())
    };
    let outcomes = cross_validate(&cfg.model, &cfg.train, &prepared, &plan, on_epoch, &mut save_fold)?;
    let preds: Vec<Prediction> = outcomes.iter().flat_map(|f| f.predictions.clone()).collect();
    write_predictions(&out.join(PREDICTIONS), &preds)?;
    Ok(outcomes)
}

fn split_by_fold(preds: &[Prediction], k: usize) -> Vec<(Vec<u8>, Vec<f64>)> {
    (0..k)
        .map(|f| {
            let mine: Vec<&Prediction> = preds.iter().filter(|p| p.fold == f).collect();
            (mine.iter().map(|p| p.label).collect(), mine.iter().map(|p| p.score).collect())
        })
        .collect()
}

/// Per-fold metrics from stored predictions, a pooled bootstrap AUC interval and, when
/// `time` is set, the inference time of the fold-0 checkpoint on the run's dataset.
pub fn evaluate_run(run: &Path, time: bool) -> Result<MetricsReport> {
    let cfg = RunConfig::load(&run.join(CONFIG))?;
    let plan = FoldPlan::load(&run.join(FOLDS))?;
    let preds = read_predictions(run)?;
    let folds = split_by_fold(&preds, plan.k)
        .iter()
        .map(|(l, s)| compute_metrics(l, s, cfg.train.threshold))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<u8> = preds.iter().map(|p| p.label).collect();
    let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
    let ci = bootstrap_auc_ci(&labels, &scores, cfg.train.bootstrap_iters, cfg.train.fold_seed)?;
    let timing = if time {
        let ckpt = Checkpoint::<f32>::load(&checkpoint_path(run, 0))?;
        let (_, samples) = load_dataset(&run_data_dir(run)?)?;
        let some: Vec<MultiPhaseSample> = samples.into_iter().take(10).collect();
        let prepared = prepare(&some, &ckpt.config)?;
        Some(time_inference(&ckpt.params, &ckpt.config, &prepared, cfg.train.timing_reps)?)
    } else {
        None
    };
    Ok(MetricsReport::from_folds(folds, ci, timing))
}

/// `path` gets `key=value` lines and the same path with a `.json` extension the report as JSON.
pub fn write_report(report: &MetricsReport, path: &Path) -> Result<PathBuf> {
    fs::write(path, report.to_kv())?;
    let json = path.with_extension("json");
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    fs::write(&json, text + "\n")?;
    Ok(json)
}

/// One row of the ablation table.
#[derive(Clone, Debug, serde::Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub report: MetricsReport,
    /// Paired bootstrap of this variant's pooled AUC against the last variant's.
    pub vs_last: Option<BootstrapResult>,
}

/// Cross-validate each of `variants` on the same folds under `out/<variant>/`.
pub fn run_ablation(
    data: &Path,
    cfg: &RunConfig,
    variants: &[Variant],
    out: &Path,
    on_epoch: &mut dyn FnMut(&str, &EpochLog),
) -> Result<Vec<AblationRow>> {
    let mut pooled: Vec<(String, Vec<Prediction>)> = Vec::new();
    let mut rows = Vec::new();
    for &v in variants {
        let mut vcfg = cfg.clone();
        vcfg.model.variant = v;
        let dir = out.join(v.name());
        train_run(data, &vcfg, &dir, &mut |e| on_epoch(v.name(), e))?;
        let report = evaluate_run(&dir, false)?;
        let mut preds = read_predictions(&dir)?;
        preds.sort_by(|a, b| a.id.cmp(&b.id));
        pooled.push((v.name().to_string(), preds));
        rows.push(AblationRow {
            variant: v.name().to_string(),
            report,
            vs_last: None,
        });
    }
    if let Some((_, reference)) = pooled.last() {
        let labels: Vec<u8> = reference.iter().map(|p| p.label).collect();
        let ref_scores: Vec<f64> = reference.iter().map(|p| p.score).collect();
        for (row, (_, preds)) in rows.iter_mut().zip(&pooled).take(pooled.len() - 1) {
            let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
            row.vs_last = Some(bootstrap_auc(
                &labels,
                &scores,
                &ref_scores,
                cfg.train.bootstrap_iters,
                cfg.train.fold_seed,
            )?);
        }
    }
    let mut table = String::from("variant acc_mean acc_std auc_mean auc_std recall precision f1 delta_auc_vs_last p_value\n");
    for r in &rows {
        let (d, p) = r.vs_last.map_or(("-".into(), "-".into()), |b| {
            (format!("{:.4}", b.delta_auc), format!("{:.4}", b.p_value))
        });
        table.push_str(&format!(
            "{} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {d} {p}\n",
            r.variant,
            r.report.mean.acc,
            r.report.std.acc,
            r.report.mean.auc,
            r.report.std.auc,
            r.report.mean.recall,
            r.report.mean.precision,
            r.report.mean.f1,
        ));
    }
    fs::write(out.join("ablation.txt"), table)?;
    let json = serde_json::to_string_pretty(&rows).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    fs::write(out.join("ablation.json"), json + "\n")?;
    Ok(rows)
}

/// Grad-CAM of the predicted class at `stage` (1-based) for sample `id`, using the fold
/// that held it out, written as a three-phase `.mpv` volume at the stage resolution.
pub fn saliency(run: &Path, id: &str, stage: usize, out: &Path) -> Result<MultiPhaseSample> {
    let plan = FoldPlan::load(&run.join(FOLDS))?;
    let fold = plan
        .fold_of(id)
        .ok_or_else(|| Error::ConfigInvalid(format!("sample `{id}` is not part of this run")))?;
    let ckpt = Checkpoint::<f32>::load(&checkpoint_path(run, fold))?;
    let (_, samples) = load_dataset(&run_data_dir(run)?)?;
    let sample = samples
        .iter()
        .find(|s| s.id == id)
        .ok_or_else(|| Error::ConfigInvalid(format!("sample `{id}` is not in the dataset")))?;
    let prepared = prepare(std::slice::from_ref(sample), &ckpt.config)?.remove(0);
    let logits = forward(&ckpt.params, &ckpt.config, prepared.phases(), RunMode::eval())?;
    let target = usize::from(logits.data()[1] > logits.data()[0]);
    let maps = gradcam(&ckpt.params, &ckpt.config, prepared.phases(), target, stage)?;
    let roi = ckpt.config.roi_shape;
    let dims = maps[0].shape().to_vec();
    let cam = MultiPhaseSample {
        spacing: [0, 1, 2].map(|a| prepared.spacing[a] * roi[a] as f64 / dims[a] as f64),
        volumes: maps,
        label: sample.label,
        id: format!("{id}-cam-stage{stage}"),
        seed: sample.seed,
    };
    write_volume(&cam, out)?;
    Ok(cam)
}
