//! Feature-based comparison classifiers evaluated on the same fold plans
//! and report layout as the network.

mod features;
mod knn;
mod mlp;
mod trees;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use features::{extract_features, region_bounds, FeatureVector, Standardizer, ACTIVE_LEVEL, FEATURE_VERSION, NUM_FEATURES};
pub use knn::{knn_classify, Knn};
pub use mlp::{mlp_predict, train_mlp, Mlp, MlpConfig, MlpTrace};
pub use trees::{BaggedTrees, DecisionTree, ForestConfig};

use crate::dataio::{Category, Taxonomy};
use crate::error::{Error, Result};
use crate::harness::{
    aggregate, coarse_names, fold_seed, make_plan, summarize, write_json, AggregateMetrics,
    ConfusionMatrix, EvalReport, FoldSummary, FrameSet, Granularity, LabelSpace, MetricsReport,
    RunLock, Scheme,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Knn,
    BaggedTrees,
    Mlp,
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn" => Ok(Self::Knn),
            "bagged-trees" | "trees" => Ok(Self::BaggedTrees),
            "mlp" => Ok(Self::Mlp),
            _ => Err(Error::Config(format!("unknown baseline '{s}' (knn, bagged-trees, mlp)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub scheme: Scheme,
    pub granularity: Granularity,
    pub seed: u64,
    pub k: usize,
    pub forest: ForestConfig,
    pub mlp: MlpConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            kind: BaselineKind::Knn,
            scheme: Scheme::Kfold { k: 10 },
            granularity: Granularity::Fine,
            seed: 0,
            k: 10,
            forest: ForestConfig::default(),
            mlp: MlpConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub config: BaselineConfig,
    pub feature_version: u32,
    pub samples: usize,
    pub folds: Vec<FoldSummary>,
    pub mean: AggregateMetrics,
}

/// Feature rows for every frame of `data`.
pub fn feature_matrix(data: &FrameSet) -> Result<Vec<Vec<f64>>> {
    (0..data.len())
        .map(|i| extract_features(data.frame(i)).map(|f| f.to_vec()))
        .collect()
}

/// Fits on `train` rows, predicts `test` rows. Features are z-scored with
/// training statistics first.
pub fn fit_predict(
    cfg: &BaselineConfig,
    x: &[Vec<f64>],
    y: &[usize],
    classes: usize,
    train: &[usize],
    test: &[usize],
    seed: u64,
) -> Result<Vec<usize>> {
    let raw: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
    let scaler = Standardizer::fit(&raw);
    let xt: Vec<Vec<f64>> = raw.iter().map(|r| scaler.apply(r)).collect();
    let yt: Vec<usize> = train.iter().map(|&i| y[i]).collect();
    let xs: Vec<Vec<f64>> = test.iter().map(|&i| scaler.apply(&x[i])).collect();
    Ok(match cfg.kind {
        BaselineKind::Knn => {
            let m = Knn::new(xt, yt, cfg.k)?;
            xs.iter().map(|r| m.predict(r)).collect()
        }
        BaselineKind::BaggedTrees => {
            let fc = ForestConfig { seed, ..cfg.forest };
            let m = BaggedTrees::fit(&xt, &yt, classes, &fc)?;
            xs.iter().map(|r| m.predict(r)).collect()
        }
        BaselineKind::Mlp => {
            let mc = MlpConfig { seed, ..cfg.mlp.clone() };
            let (m, _) = train_mlp(&xt, &yt, classes, &mc)?;
            mlp_predict(&m, &xs)
        }
    })
}

fn score(labels: &LabelSpace, truth: &[usize], pred: &[usize]) -> Result<EvalReport> {
    let fine = ConfusionMatrix::from_pairs(labels.num_postures(), truth, pred)?;
    let coarse = fine.collapse(&labels.coarse_map()?, Category::ALL.len())?;
    Ok(EvalReport {
        posture: MetricsReport::new(labels.posture_names(), fine)?,
        coarse: MetricsReport::new(coarse_names(), coarse)?,
        subject: None,
        subject_by_category: None,
    })
}

/// Posture classification with a baseline under `cfg.scheme`. Writes
/// `report.json` and per-fold summaries and confusion grids when `out` is
/// given.
pub fn run_baseline(
    data: &FrameSet,
    taxonomy: &Taxonomy,
    cfg: &BaselineConfig,
    out: Option<&Path>,
) -> Result<BaselineReport> {
    if data.is_empty() {
        return Err(Error::Config("no samples to run on".into()));
    }
    let labels = LabelSpace::new(data, taxonomy, cfg.granularity);
    let y = data
        .postures
        .iter()
        .map(|&p| labels.posture_class(p))
        .collect::<Result<Vec<_>>>()?;
    let x = feature_matrix(data)?;
    let plan = make_plan(cfg.scheme, &data.subjects, &data.sequences, cfg.seed)?;
    let _lock = out.map(RunLock::acquire).transpose()?;
    if let Some(dir) = out {
        write_json(
            &dir.join("config.json"),
            &serde_json::json!({ "baseline": cfg, "samples": data.len(), "folds": plan.folds.len() }),
        )?;
    }
    let mut folds = Vec::with_capacity(plan.folds.len());
    for (i, fold) in plan.folds.iter().enumerate() {
        let seed = fold_seed(cfg.seed, i);
        let run = || -> Result<FoldSummary> {
            let pred = fit_predict(cfg, &x, &y, labels.num_postures(), &fold.train, &fold.test, seed)?;
            let truth: Vec<usize> = fold.test.iter().map(|&j| y[j]).collect();
            let eval = score(&labels, &truth, &pred)?;
            let summary = summarize(i, &fold.held_out, (fold.train.len(), fold.test.len()), seed, &eval, &[]);
            if let Some(dir) = out {
                let fd = dir.join(format!("fold_{i:02}"));
                std::fs::create_dir_all(&fd)?;
                write_json(&fd.join("metrics.json"), &eval)?;
                std::fs::write(fd.join("confusion_posture.txt"), eval.posture.matrix.to_grid())?;
                std::fs::write(fd.join("confusion_coarse.txt"), eval.coarse.matrix.to_grid())?;
                write_json(&fd.join("summary.json"), &summary)?;
            }
            Ok(summary)
        };
        folds.push(run().map_err(|e| Error::Fold {
            fold: i,
            source: Box::new(e),
        })?);
    }
    let report = BaselineReport {
        config: cfg.clone(),
        feature_version: FEATURE_VERSION,
        samples: data.len(),
        mean: aggregate(&folds),
        folds,
    };
    if let Some(dir) = out {
        write_json(&dir.join("report.json"), &report)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Taxonomy;
    use crate::harness::load_outline;
    use crate::signal::{preprocess_sequence, PreprocessConfig};
    use crate::dataio::{RawFrame, SampleSequence};
    use crate::synth::{generate_sequence, SynthSpec};

    fn synth_set(subjects: usize) -> FrameSet {
        let spec = SynthSpec {
            subjects,
            frames_per_sequence: 10,
            ..Default::default()
        };
        let tax = Taxonomy::default();
        let mut seqs = Vec::new();
        for s in 1..=subjects {
            for (p, _) in tax.postures() {
                let frames = generate_sequence(&spec, &tax, s, p).unwrap();
                let raw = SampleSequence {
                    frames: frames
                        .into_iter()
                        .enumerate()
                        .map(|(index, values)| RawFrame { values, index })
                        .collect(),
                    subject: s,
                    posture: p,
                    out_of_range: 0,
                };
                seqs.push(preprocess_sequence(&raw, &PreprocessConfig::default()).unwrap().0);
            }
        }
        FrameSet::from_sequences(&seqs, 1).unwrap()
    }

    #[test]
    fn baselines_classify_synthetic_postures() {
        let data = synth_set(3);
        let tax = Taxonomy::default();
        let dir = tempfile::tempdir().unwrap();
        for kind in [BaselineKind::Knn, BaselineKind::BaggedTrees] {
            let cfg = BaselineConfig {
                kind,
                scheme: Scheme::Kfold { k: 3 },
                forest: ForestConfig { trees: 10, ..Default::default() },
                ..Default::default()
            };
            let out = dir.path().join(format!("{kind:?}"));
            let r = run_baseline(&data, &tax, &cfg, Some(&out)).unwrap();
            assert_eq!(r.folds.len(), 3);
            assert!(r.mean.coarse_acc > 80.0, "{kind:?}: {}", r.mean.coarse_acc);
            let outline = load_outline(&out).unwrap();
            assert_eq!(outline.folds, r.folds);
            assert!(out.join("fold_02/confusion_coarse.txt").exists());
        }
    }

    #[test]
    fn knn_needs_enough_training_rows() {
        let data = synth_set(1).subset(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]);
        let cfg = BaselineConfig {
            scheme: Scheme::Kfold { k: 2 },
            ..Default::default()
        };
        let err = run_baseline(&data, &Taxonomy::default(), &cfg, None).unwrap_err();
        assert!(matches!(err, Error::Fold { fold: 0, .. }), "{err}");
    }

    #[test]
    fn kind_names() {
        assert_eq!("mlp".parse::<BaselineKind>().unwrap(), BaselineKind::Mlp);
        assert!("svm".parse::<BaselineKind>().is_err());
    }
}
