//! Minibatch training, inference over frame sets, and evaluation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{Category, FRAME_LEN};
use crate::error::{config_err, Error, Result};
use crate::nn::{
    adam_step, argmax_rows, model_backward, model_forward, AdamHyper, AdamState, Checkpoint, Mode,
    ModelConfig, ModelParams, FRAME_HEIGHT, FRAME_WIDTH,
};
use crate::signal::{augment_sample, AugmentPolicy};
use crate::tensor::{SeededRng, Tensor};

use super::metrics::{ConfusionMatrix, MetricsReport};
use super::{coarse_names, AugmentMode, FrameSet, LabelSpace, TrainConfig};

const INIT_STREAM: u64 = 1;
const EPOCH_STREAM: u64 = 1 << 20;
const EVAL_BATCH: usize = 256;

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
    /// Completed epochs.
    pub epoch: usize,
    /// Seed of every random stream used by this training run.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub user_loss: f64,
    pub posture_loss: f64,
    pub combined_loss: f64,
    /// Running accuracy (%) of the training-mode forward passes.
    pub subject_acc: f64,
    pub posture_acc: f64,
}

pub fn init_state(model: &ModelConfig, adam: AdamHyper, seed: u64) -> Result<TrainState> {
    let params = ModelParams::init(model, &mut SeededRng::derive(seed, INIT_STREAM))?;
    let adam = AdamState::new(&params, adam);
    Ok(TrainState {
        params,
        adam,
        epoch: 0,
        seed,
    })
}

fn gather(
    data: &FrameSet,
    idx: &[usize],
    augment: Option<(&AugmentPolicy, &mut SeededRng)>,
) -> Result<Tensor<f32>> {
    let mut buf = Vec::with_capacity(idx.len() * FRAME_LEN);
    match augment {
        None => {
            for &i in idx {
                buf.extend_from_slice(data.frame(i));
            }
        }
        Some((policy, rng)) => {
            for &i in idx {
                let (f, _) = augment_sample(data.frame(i), FRAME_HEIGHT, FRAME_WIDTH, policy, rng)?;
                buf.extend_from_slice(&f);
            }
        }
    }
    Tensor::from_vec(&[idx.len(), 1, FRAME_HEIGHT, FRAME_WIDTH], buf)
}

fn labels_of(
    data: &FrameSet,
    idx: &[usize],
    labels: &LabelSpace,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let s = idx
        .iter()
        .map(|&i| labels.subject_class(data.subjects[i]))
        .collect::<Result<_>>()?;
    let p = idx
        .iter()
        .map(|&i| labels.posture_class(data.postures[i]))
        .collect::<Result<_>>()?;
    Ok((s, p))
}

fn hits(pred: &[usize], truth: &[usize]) -> usize {
    pred.iter().zip(truth).filter(|(a, b)| a == b).count()
}

/// Trains from `state.epoch` up to (excluding) epoch `until`. Each epoch draws
/// its shuffle, dropout and augmentation from its own stream, so resuming
/// from a checkpoint reproduces an uninterrupted run.
pub fn train_epochs(
    state: &mut TrainState,
    data: &FrameSet,
    idx: &[usize],
    labels: &LabelSpace,
    cfg: &TrainConfig,
    until: usize,
) -> Result<Vec<EpochStats>> {
    if idx.len() < 2 {
        return config_err(format!(
            "training needs at least 2 samples, got {}",
            idx.len()
        ));
    }
    let mut curves = Vec::new();
    while state.epoch < until {
        let epoch = state.epoch;
        let mut rng = SeededRng::derive(state.seed, EPOCH_STREAM + epoch as u64);
        let mut order = idx.to_vec();
        rng.shuffle(&mut order);
        let mut sums = [0.0f64; 3];
        let (mut seen, mut s_hits, mut p_hits) = (0usize, 0usize, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            if batch.len() < 2 {
                continue;
            }
            let (s_lab, p_lab) = labels_of(data, batch, labels)?;
            let augment = match cfg.augmentation {
                AugmentMode::Off => None,
                _ => Some((&cfg.policy, &mut rng)),
            };
            let x = gather(data, batch, augment)?;
            let out = model_forward(&x, &state.params, Mode::Train(&mut rng))?;
            let cache = out.cache()?;
            let (grads, loss) = model_backward(&state.params, cache, &s_lab, &p_lab, cfg.lambda)?;
            if !loss.total.is_finite() || grads.tensors.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite loss or gradient at epoch {epoch}, batch {b} (loss {})",
                    loss.total
                )));
            }
            state.params.update_running_stats(cache);
            adam_step(&mut state.params, &grads, &mut state.adam, epoch)?;
            let n = batch.len();
            sums[0] += loss.user * n as f64;
            sums[1] += loss.posture * n as f64;
            sums[2] += loss.combined * n as f64;
            seen += n;
            s_hits += hits(
                &argmax_rows(out.subject_probs.data(), labels.num_subjects()),
                &s_lab,
            );
            p_hits += hits(
                &argmax_rows(out.posture_probs.data(), labels.num_postures()),
                &p_lab,
            );
        }
        if !state.params.is_finite() {
            return Err(Error::Numeric(format!(
                "parameters became non-finite in epoch {epoch}"
            )));
        }
        let seen_f = seen.max(1) as f64;
        curves.push(EpochStats {
            epoch,
            lr: state.adam.hyper.lr_at(epoch),
            user_loss: sums[0] / seen_f,
            posture_loss: sums[1] / seen_f,
            combined_loss: sums[2] / seen_f,
            subject_acc: 100.0 * s_hits as f64 / seen_f,
            posture_acc: 100.0 * p_hits as f64 / seen_f,
        });
        state.epoch += 1;
    }
    Ok(curves)
}

/// Fresh model trained for `cfg.epochs` on `idx`.
pub fn train_model(
    data: &FrameSet,
    idx: &[usize],
    labels: &LabelSpace,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(TrainState, Vec<EpochStats>)> {
    cfg.validate()?;
    if idx.is_empty() {
        return config_err("empty training set");
    }
    let mut state = init_state(&cfg.model_config(labels)?, cfg.adam, seed)?;
    let curves = train_epochs(&mut state, data, idx, labels, cfg, cfg.epochs)?;
    Ok((state, curves))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub subject_true: Vec<usize>,
    pub subject_pred: Vec<usize>,
    pub posture_true: Vec<usize>,
    pub posture_pred: Vec<usize>,
}

/// Inference-mode predictions (class indices) for the frames in `idx`.
pub fn predict_set(
    params: &ModelParams<f32>,
    data: &FrameSet,
    idx: &[usize],
    labels: &LabelSpace,
    mut augment: Option<(&AugmentPolicy, &mut SeededRng)>,
) -> Result<Predictions> {
    let cfg = params.config();
    if cfg.num_subjects != labels.num_subjects() || cfg.num_postures != labels.num_postures() {
        return Err(Error::Label(format!(
            "model has {}×{} classes, labels need {}×{}",
            cfg.num_subjects,
            cfg.num_postures,
            labels.num_subjects(),
            labels.num_postures()
        )));
    }
    let (subject_true, posture_true) = labels_of(data, idx, labels)?;
    let mut p = Predictions {
        subject_true,
        subject_pred: Vec::with_capacity(idx.len()),
        posture_true,
        posture_pred: Vec::with_capacity(idx.len()),
    };
    for chunk in idx.chunks(EVAL_BATCH) {
        let aug = augment.as_mut().map(|(pol, rng)| (*pol, &mut **rng));
        let x = gather(data, chunk, aug)?;
        let out = model_forward(&x, params, Mode::Infer)?;
        p.subject_pred
            .extend(argmax_rows(out.subject_probs.data(), cfg.num_subjects));
        p.posture_pred
            .extend(argmax_rows(out.posture_probs.data(), cfg.num_postures));
    }
    Ok(p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// At the trained granularity.
    pub posture: MetricsReport,
    /// Supine / right / left.
    pub coarse: MetricsReport,
    pub subject: Option<MetricsReport>,
    /// Subject accuracy (%) restricted to each true coarse category.
    pub subject_by_category: Option<Vec<Option<f64>>>,
}

/// Scores `params` on the frames in `idx`. The subject head is scored only
/// when `score_subjects` is set (it is meaningless for held-out subjects).
pub fn evaluate_model(
    params: &ModelParams<f32>,
    data: &FrameSet,
    idx: &[usize],
    labels: &LabelSpace,
    score_subjects: bool,
    augment: Option<(&AugmentPolicy, &mut SeededRng)>,
) -> Result<EvalReport> {
    if idx.is_empty() {
        return config_err("empty test set");
    }
    if !params.is_finite() {
        return Err(Error::Numeric(
            "cannot evaluate non-finite parameters".into(),
        ));
    }
    let pred = predict_set(params, data, idx, labels, augment)?;
    let k = labels.num_postures();
    let fine = ConfusionMatrix::from_pairs(k, &pred.posture_true, &pred.posture_pred)?;
    let map = labels.coarse_map()?;
    let coarse = fine.collapse(&map, Category::ALL.len())?;
    let (subject, subject_by_category) = if score_subjects {
        let m = labels.num_subjects();
        let cm = ConfusionMatrix::from_pairs(m, &pred.subject_true, &pred.subject_pred)?;
        let mut per = vec![(0usize, 0usize); Category::ALL.len()];
        for i in 0..idx.len() {
            let c = map[pred.posture_true[i]];
            per[c].1 += 1;
            per[c].0 += usize::from(pred.subject_true[i] == pred.subject_pred[i]);
        }
        let per = per
            .into_iter()
            .map(|(h, n)| (n > 0).then(|| 100.0 * h as f64 / n as f64))
            .collect();
        (
            Some(MetricsReport::new(labels.subject_names(), cm)?),
            Some(per),
        )
    } else {
        (None, None)
    };
    Ok(EvalReport {
        posture: MetricsReport::new(labels.posture_names(), fine)?,
        coarse: MetricsReport::new(coarse_names(), coarse)?,
        subject,
        subject_by_category,
    })
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    Checkpoint {
        params: state.params.clone(),
        adam: state.adam.clone(),
        epoch: state.epoch as u64,
        seed: state.seed,
    }
    .save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let ck = Checkpoint::<f32>::load(path)?;
    Ok(TrainState {
        params: ck.params,
        adam: ck.adam,
        epoch: ck.epoch as usize,
        seed: ck.seed,
    })
}
