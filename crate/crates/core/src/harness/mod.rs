//! Training loop, cross-validation, metrics and run management.

mod experiment;
mod metrics;
mod split;
mod stats;
mod train;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataio::{Category, Taxonomy, FRAME_LEN};
use crate::error::{config_err, Error, Result};
use crate::nn::{check_lambda, AdamHyper, ModelConfig};
use crate::signal::{AugmentPolicy, CleanSequence};

pub use experiment::{
    compare_folds, fold_seed, load_outline, load_report, run_experiment, AggregateMetrics,
    ExperimentReport, FoldSummary, RunLock, RunOutline,
};
pub(crate) use experiment::{aggregate, summarize, write_json};
pub use metrics::{compute_metrics, mean_defined, ClassMetrics, ConfusionMatrix, MetricsReport};
pub use split::{group_kfold_split, kfold_split, loso_split, make_plan, Fold, FoldPlan, Scheme};
pub use stats::{welch_t_test, WelchResult};
pub use train::{
    evaluate_model, init_state, load_checkpoint, predict_set, save_checkpoint, train_epochs,
    train_model, EpochStats, EvalReport, Predictions, TrainState,
};

/// Labelled preprocessed frames, stored contiguously.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameSet {
    data: Vec<f32>,
    /// Subject id per frame.
    pub subjects: Vec<usize>,
    /// Fine posture id per frame.
    pub postures: Vec<usize>,
    /// Index of the source recording per frame.
    pub sequences: Vec<usize>,
}

impl FrameSet {
    /// Every `stride`-th frame of every sequence.
    pub fn from_sequences(seqs: &[CleanSequence], stride: usize) -> Result<Self> {
        if stride == 0 {
            return config_err("frame stride must be at least 1");
        }
        let mut set = Self::default();
        for (i, seq) in seqs.iter().enumerate() {
            for f in seq.frames.iter().step_by(stride) {
                set.push(f, seq.subject, seq.posture, i)?;
            }
        }
        Ok(set)
    }

    pub fn push(
        &mut self,
        frame: &[f32],
        subject: usize,
        posture: usize,
        sequence: usize,
    ) -> Result<()> {
        if frame.len() != FRAME_LEN {
            return Err(Error::Shape(format!(
                "frame has {} values, expected {FRAME_LEN}",
                frame.len()
            )));
        }
        self.data.extend_from_slice(frame);
        self.subjects.push(subject);
        self.postures.push(posture);
        self.sequences.push(sequence);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.data[i * FRAME_LEN..(i + 1) * FRAME_LEN]
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut out = Self::default();
        for &i in idx {
            out.data.extend_from_slice(self.frame(i));
            out.subjects.push(self.subjects[i]);
            out.postures.push(self.postures[i]);
            out.sequences.push(self.sequences[i]);
        }
        out
    }
}

/// Which posture labels the posture head is trained on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    /// The 17 fine postures; coarse results come from collapsing.
    #[default]
    Fine,
    /// The 3 coarse categories directly.
    Coarse,
}

/// Mapping between dataset ids and network class indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    /// Subject id of each subject class.
    pub subjects: Vec<usize>,
    /// Fine posture id of each posture class (empty for coarse granularity).
    pub fine_postures: Vec<usize>,
    pub granularity: Granularity,
    pub taxonomy: Taxonomy,
}

impl LabelSpace {
    pub fn new(data: &FrameSet, taxonomy: &Taxonomy, granularity: Granularity) -> Self {
        let subjects: BTreeSet<usize> = data.subjects.iter().copied().collect();
        Self {
            subjects: subjects.into_iter().collect(),
            fine_postures: match granularity {
                Granularity::Fine => taxonomy.postures().map(|(id, _)| id).collect(),
                Granularity::Coarse => Vec::new(),
            },
            granularity,
            taxonomy: taxonomy.clone(),
        }
    }

    pub fn num_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn num_postures(&self) -> usize {
        match self.granularity {
            Granularity::Fine => self.fine_postures.len(),
            Granularity::Coarse => Category::ALL.len(),
        }
    }

    pub fn subject_class(&self, id: usize) -> Result<usize> {
        self.subjects
            .binary_search(&id)
            .map_err(|_| Error::Label(format!("subject {id} is not in the label space")))
    }

    pub fn posture_class(&self, id: usize) -> Result<usize> {
        match self.granularity {
            Granularity::Fine => self
                .fine_postures
                .binary_search(&id)
                .map_err(|_| Error::Label(format!("posture {id} is not in the label space"))),
            Granularity::Coarse => self
                .taxonomy
                .category(id)
                .map(Category::index)
                .map_err(|e| Error::Label(e.to_string())),
        }
    }

    /// Coarse category index of each posture class.
    pub fn coarse_map(&self) -> Result<Vec<usize>> {
        match self.granularity {
            Granularity::Fine => self
                .fine_postures
                .iter()
                .map(|&id| self.taxonomy.category(id).map(Category::index))
                .collect(),
            Granularity::Coarse => Ok((0..Category::ALL.len()).collect()),
        }
    }

    pub fn posture_names(&self) -> Vec<String> {
        match self.granularity {
            Granularity::Fine => self.fine_postures.iter().map(|p| format!("P{p}")).collect(),
            Granularity::Coarse => coarse_names(),
        }
    }

    pub fn subject_names(&self) -> Vec<String> {
        self.subjects.iter().map(|s| format!("S{s}")).collect()
    }
}

pub fn coarse_names() -> Vec<String> {
    Category::ALL.iter().map(|c| c.name().to_string()).collect()
}

/// When augmentation is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentMode {
    #[default]
    Off,
    /// Training batches only.
    Train,
    /// Training batches and test frames.
    TrainTest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the subject loss; the posture loss gets `1 - lambda`.
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamHyper,
    pub scheme: Scheme,
    pub granularity: Granularity,
    pub augmentation: AugmentMode,
    pub policy: AugmentPolicy,
    pub conv_channels: Vec<usize>,
    pub dense_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = ModelConfig::standard(2, 2);
        Self {
            lambda: 0.5,
            epochs: 40,
            batch_size: 64,
            seed: 0,
            adam: AdamHyper::default(),
            scheme: Scheme::default(),
            granularity: Granularity::default(),
            augmentation: AugmentMode::Off,
            policy: AugmentPolicy::default(),
            conv_channels: model.conv_channels,
            dense_width: model.dense_width,
        }
    }
}

/// Epoch count used for augmented runs.
pub const AUGMENTED_EPOCHS: usize = 50;

impl TrainConfig {
    /// 10-fold with λ = 0.5.
    pub fn kfold() -> Self {
        Self::default()
    }

    /// Leave-one-subject-out with λ = 0.2.
    pub fn loso() -> Self {
        Self {
            lambda: 0.2,
            scheme: Scheme::Loso,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if self.batch_size < 2 {
            return config_err(format!(
                "batch size {} is below 2 (batch norm needs 2)",
                self.batch_size
            ));
        }
        if self.epochs == 0 {
            return config_err("epochs must be at least 1");
        }
        if let Scheme::Kfold { k } | Scheme::SequenceKfold { k } = self.scheme {
            if k < 2 {
                return config_err(format!("k-fold needs k >= 2, got {k}"));
            }
        }
        self.policy.validate()
    }

    pub fn model_config(&self, labels: &LabelSpace) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            conv_channels: self.conv_channels.clone(),
            dense_width: self.dense_width,
            ..ModelConfig::standard(labels.num_subjects(), labels.num_postures())
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
