//! Cross-validated experiments and their run directories.
//!
//! ```text
//! <run>/config.json          resolved training config, model config, label space
//! <run>/report.json          per-fold summaries and fold means
//! <run>/timings.json         wall-clock seconds per fold (kept out of the report)
//! <run>/fold_NN/summary.json
//! <run>/fold_NN/metrics.json full metrics with confusion matrices
//! <run>/fold_NN/confusion_{posture,coarse,subject}.txt
//! <run>/fold_NN/curves.csv   one row per epoch
//! <run>/fold_NN/model.pnet   final checkpoint
//! ```

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataio::Taxonomy;
use crate::error::{Error, Result};
use crate::nn::ModelConfig;
use crate::tensor::SeededRng;

use super::metrics::mean_defined;
use super::split::{make_plan, Scheme};
use super::stats::{welch_t_test, WelchResult};
use super::train::{evaluate_model, save_checkpoint, train_model, EpochStats, EvalReport};
use super::{AugmentMode, FrameSet, LabelSpace, TrainConfig};

const FOLD_STREAM: u64 = 1 << 40;
const TEST_AUG_STREAM: u64 = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub held_out: String,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
    /// At the trained granularity, in percent.
    pub posture_acc: f64,
    pub coarse_acc: f64,
    pub coarse_precision: Vec<Option<f64>>,
    pub coarse_recall: Vec<Option<f64>>,
    pub coarse_specificity: Vec<Option<f64>>,
    pub subject_acc: Option<f64>,
    pub subject_by_category: Option<Vec<Option<f64>>>,
    pub last_epoch: Option<EpochStats>,
}

/// Unweighted means over folds. Per-class entries average the folds where
/// the rate is defined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub posture_acc: f64,
    pub coarse_acc: f64,
    pub coarse_precision: Vec<Option<f64>>,
    pub coarse_recall: Vec<Option<f64>>,
    pub coarse_specificity: Vec<Option<f64>>,
    pub subject_acc: Option<f64>,
    pub subject_by_category: Option<Vec<Option<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: TrainConfig,
    pub samples: usize,
    pub folds: Vec<FoldSummary>,
    pub mean: AggregateMetrics,
}

#[derive(Serialize)]
struct ConfigSnapshot<'a> {
    train: &'a TrainConfig,
    model: &'a ModelConfig,
    labels: &'a LabelSpace,
    samples: usize,
    folds: usize,
}

/// Exclusive marker preventing two processes from writing one run directory.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Usage(format!(
                "{} is locked by another run (remove {} if that run is dead)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn curves_csv(curves: &[EpochStats]) -> String {
    let mut s =
        String::from("epoch,lr,user_loss,posture_loss,combined_loss,subject_acc,posture_acc\n");
    for c in curves {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.epoch,
            c.lr,
            c.user_loss,
            c.posture_loss,
            c.combined_loss,
            c.subject_acc,
            c.posture_acc
        ));
    }
    s
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn mean_columns(rows: &[&Vec<Option<f64>>]) -> Vec<Option<f64>> {
    let width = rows.first().map_or(0, |r| r.len());
    (0..width)
        .map(|c| mean_defined(&rows.iter().map(|r| r[c]).collect::<Vec<_>>()))
        .collect()
}

pub(crate) fn aggregate(folds: &[FoldSummary]) -> AggregateMetrics {
    let subject_acc = folds
        .iter()
        .map(|f| f.subject_acc)
        .collect::<Option<Vec<f64>>>()
        .map(|v| mean(v.into_iter()));
    let by_cat: Option<Vec<&Vec<Option<f64>>>> = folds
        .iter()
        .map(|f| f.subject_by_category.as_ref())
        .collect();
    AggregateMetrics {
        posture_acc: mean(folds.iter().map(|f| f.posture_acc)),
        coarse_acc: mean(folds.iter().map(|f| f.coarse_acc)),
        coarse_precision: mean_columns(
            &folds
                .iter()
                .map(|f| &f.coarse_precision)
                .collect::<Vec<_>>(),
        ),
        coarse_recall: mean_columns(&folds.iter().map(|f| &f.coarse_recall).collect::<Vec<_>>()),
        coarse_specificity: mean_columns(
            &folds
                .iter()
                .map(|f| &f.coarse_specificity)
                .collect::<Vec<_>>(),
        ),
        subject_acc,
        subject_by_category: by_cat.map(|rows| mean_columns(&rows)),
    }
}

pub(crate) fn summarize(
    fold: usize,
    held_out: &str,
    sizes: (usize, usize),
    seed: u64,
    eval: &EvalReport,
    curves: &[EpochStats],
) -> FoldSummary {
    FoldSummary {
        fold,
        held_out: held_out.to_string(),
        train_size: sizes.0,
        test_size: sizes.1,
        seed,
        posture_acc: eval.posture.accuracy(),
        coarse_acc: eval.coarse.accuracy(),
        coarse_precision: eval.coarse.metrics.precision.clone(),
        coarse_recall: eval.coarse.metrics.recall.clone(),
        coarse_specificity: eval.coarse.metrics.specificity.clone(),
        subject_acc: eval.subject.as_ref().map(|s| s.accuracy()),
        subject_by_category: eval.subject_by_category.clone(),
        last_epoch: curves.last().cloned(),
    }
}

/// Seed of fold `fold` under master seed `seed`.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    SeededRng::derive(seed, FOLD_STREAM + fold as u64).next_u64()
}

/// Trains and evaluates one model per fold of `cfg.scheme`, writing all
/// artifacts to `out` when given. Any fold failure aborts with its index.
pub fn run_experiment(
    data: &FrameSet,
    taxonomy: &Taxonomy,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("no samples to run on".into()));
    }
    let labels = LabelSpace::new(data, taxonomy, cfg.granularity);
    let model_cfg = cfg.model_config(&labels)?;
    let plan = make_plan(cfg.scheme, &data.subjects, &data.sequences, cfg.seed)?;
    let _lock = out.map(RunLock::acquire).transpose()?;
    if let Some(dir) = out {
        write_json(
            &dir.join("config.json"),
            &ConfigSnapshot {
                train: cfg,
                model: &model_cfg,
                labels: &labels,
                samples: data.len(),
                folds: plan.folds.len(),
            },
        )?;
    }
    let score_subjects = cfg.scheme != Scheme::Loso;
    let mut summaries = Vec::with_capacity(plan.folds.len());
    let mut timings = Vec::new();
    for (i, fold) in plan.folds.iter().enumerate() {
        let started = Instant::now();
        let seed = fold_seed(cfg.seed, i);
        let run = || -> Result<FoldSummary> {
            let (state, curves) = train_model(data, &fold.train, &labels, cfg, seed)?;
            let mut aug_rng = SeededRng::derive(seed, TEST_AUG_STREAM);
            let augment =
                (cfg.augmentation == AugmentMode::TrainTest).then_some((&cfg.policy, &mut aug_rng));
            let eval = evaluate_model(
                &state.params,
                data,
                &fold.test,
                &labels,
                score_subjects,
                augment,
            )?;
            let summary = summarize(
                i,
                &fold.held_out,
                (fold.train.len(), fold.test.len()),
                seed,
                &eval,
                &curves,
            );
            if let Some(dir) = out {
                let fd = dir.join(format!("fold_{i:02}"));
                std::fs::create_dir_all(&fd)?;
                write_json(&fd.join("metrics.json"), &eval)?;
                std::fs::write(
                    fd.join("confusion_posture.txt"),
                    eval.posture.matrix.to_grid(),
                )?;
                std::fs::write(
                    fd.join("confusion_coarse.txt"),
                    eval.coarse.matrix.to_grid(),
                )?;
                if let Some(s) = &eval.subject {
                    std::fs::write(fd.join("confusion_subject.txt"), s.matrix.to_grid())?;
                }
                std::fs::write(fd.join("curves.csv"), curves_csv(&curves))?;
                save_checkpoint(&state, &fd.join("model.pnet"))?;
                write_json(&fd.join("summary.json"), &summary)?;
            }
            Ok(summary)
        };
        summaries.push(run().map_err(|e| Error::Fold {
            fold: i,
            source: Box::new(e),
        })?);
        timings.push(started.elapsed().as_secs_f64());
    }
    let report = ExperimentReport {
        config: cfg.clone(),
        samples: data.len(),
        mean: aggregate(&summaries),
        folds: summaries,
    };
    if let Some(dir) = out {
        write_json(&dir.join("report.json"), &report)?;
        write_json(&dir.join("timings.json"), &timings)?;
    }
    Ok(report)
}

pub fn load_report(dir: &Path) -> Result<ExperimentReport> {
    let text = std::fs::read_to_string(dir.join("report.json"))?;
    Ok(serde_json::from_str(&text)?)
}

/// Welch test on per-fold posture accuracy, `a` minus `b`.
pub fn compare_folds(a: &[FoldSummary], b: &[FoldSummary]) -> Result<WelchResult> {
    let acc = |r: &[FoldSummary]| r.iter().map(|f| f.posture_acc).collect::<Vec<_>>();
    welch_t_test(&acc(a), &acc(b))
}

/// The parts of a report shared by network and baseline runs.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct RunOutline {
    pub folds: Vec<FoldSummary>,
    pub mean: AggregateMetrics,
}

pub fn load_outline(dir: &Path) -> Result<RunOutline> {
    let text = std::fs::read_to_string(dir.join("report.json"))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::FRAME_LEN;

    fn fold(acc: f64, prec: Vec<Option<f64>>) -> FoldSummary {
        FoldSummary {
            fold: 0,
            held_out: String::new(),
            train_size: 1,
            test_size: 1,
            seed: 0,
            posture_acc: acc,
            coarse_acc: acc,
            coarse_precision: prec.clone(),
            coarse_recall: prec.clone(),
            coarse_specificity: prec,
            subject_acc: None,
            subject_by_category: None,
            last_epoch: None,
        }
    }

    #[test]
    fn aggregation_is_an_unweighted_mean() {
        let a = aggregate(&[
            fold(90.0, vec![Some(80.0), None]),
            fold(70.0, vec![Some(60.0), Some(50.0)]),
        ]);
        assert_eq!(a.posture_acc, 80.0);
        assert_eq!(a.coarse_precision, vec![Some(70.0), Some(50.0)]);
        assert_eq!(a.subject_acc, None);
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let l = RunLock::acquire(dir.path()).unwrap();
        assert!(RunLock::acquire(dir.path()).is_err());
        drop(l);
        assert!(RunLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn fold_failure_names_the_fold() {
        let mut data = FrameSet::default();
        for i in 0..4 {
            data.push(&vec![f32::NAN; FRAME_LEN], 1 + i % 2, 1, i)
                .unwrap();
        }
        let cfg = TrainConfig {
            scheme: Scheme::Loso,
            epochs: 1,
            conv_channels: vec![2, 2, 2, 2],
            dense_width: 4,
            ..Default::default()
        };
        let err = run_experiment(&data, &Taxonomy::default(), &cfg, None).unwrap_err();
        assert!(matches!(err, Error::Fold { fold: 0, .. }), "{err}");
        assert!(err.to_string().contains("epoch 0"), "{err}");
    }
}
