//! Confusion matrices and the per-class rates derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `K×K` counts; rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_pairs(k: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Usage(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut cm = Self::new(k);
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let k = self.k();
        if truth >= k || predicted >= k {
            return Err(Error::Label(format!(
                "pair ({truth}, {predicted}) outside {k} classes"
            )));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    /// Block sums through `map` (fine class → coarse class).
    pub fn collapse(&self, map: &[usize], k: usize) -> Result<Self> {
        if map.len() != self.k() || map.iter().any(|&c| c >= k) {
            return Err(Error::Usage(format!(
                "collapse map {map:?} does not fit {}→{k} classes",
                self.k()
            )));
        }
        let mut out = Self::new(k);
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                out.counts[map[i]][map[j]] += c;
            }
        }
        Ok(out)
    }

    /// Whitespace-separated grid, one row per true class.
    pub fn to_grid(&self) -> String {
        self.counts
            .iter()
            .map(|r| r.iter().map(u64::to_string).collect::<Vec<_>>().join(" ") + "\n")
            .collect()
    }

    pub fn parse_grid(text: &str) -> Result<Self> {
        let counts: Vec<Vec<u64>> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split_whitespace()
                    .map(|v| {
                        v.parse()
                            .map_err(|_| Error::Config(format!("bad count {v:?}")))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        if counts.iter().any(|r| r.len() != counts.len()) {
            return Err(Error::Config("confusion grid is not square".into()));
        }
        Ok(Self { counts })
    }
}

/// Per-class rates in percent. `None` marks an undefined rate (zero
/// denominator), which is distinct from 0%.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: Vec<Option<f64>>,
    pub recall: Vec<Option<f64>>,
    pub specificity: Vec<Option<f64>>,
    pub accuracy: f64,
}

fn pct(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<ClassMetrics> {
    let total = cm.total();
    if cm.k() == 0 || total == 0 {
        return Err(Error::Usage("metrics of an empty confusion matrix".into()));
    }
    let k = cm.k();
    let mut m = ClassMetrics {
        precision: Vec::with_capacity(k),
        recall: Vec::with_capacity(k),
        specificity: Vec::with_capacity(k),
        accuracy: 100.0 * cm.trace() as f64 / total as f64,
    };
    for c in 0..k {
        let tp = cm.counts[c][c];
        let fn_ = cm.row_sum(c) - tp;
        let fp = cm.col_sum(c) - tp;
        let tn = total - tp - fn_ - fp;
        m.precision.push(pct(tp, tp + fp));
        m.recall.push(pct(tp, tp + fn_));
        m.specificity.push(pct(tn, tn + fp));
    }
    Ok(m)
}

/// Mean over the defined entries.
pub fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// A confusion matrix with its class names and derived rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<String>,
    pub matrix: ConfusionMatrix,
    pub metrics: ClassMetrics,
}

impl MetricsReport {
    pub fn new(classes: Vec<String>, matrix: ConfusionMatrix) -> Result<Self> {
        let metrics = compute_metrics(&matrix)?;
        Ok(Self {
            classes,
            matrix,
            metrics,
        })
    }

    pub fn accuracy(&self) -> f64 {
        self.metrics.accuracy
    }

    pub fn mean_precision(&self) -> Option<f64> {
        mean_defined(&self.metrics.precision)
    }
}
