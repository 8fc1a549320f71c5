//! k-nearest-neighbour classification.

use crate::error::{config_err, Result};

#[derive(Clone, Debug)]
pub struct Knn {
    points: Vec<Vec<f64>>,
    labels: Vec<usize>,
    k: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Knn {
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return config_err("kNN needs k >= 1");
        }
        if points.len() < k {
            return config_err(format!("kNN with k={k} needs at least {k} training points, got {}", points.len()));
        }
        if points.len() != labels.len() {
            return config_err("kNN points and labels differ in length");
        }
        Ok(Self { points, labels, k })
    }

    /// Majority label among the `k` nearest points (Euclidean). Vote ties go
    /// to the smaller summed distance, then the lower label. Equidistant
    /// candidates at the cut-off are ranked by label, so the result does not
    /// depend on training-set order.
    pub fn predict(&self, query: &[f64]) -> usize {
        let mut d: Vec<(f64, usize)> = self
            .points
            .iter()
            .zip(&self.labels)
            .map(|(p, &l)| (sq_dist(p, query).sqrt(), l))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < d.len() {
            d.select_nth_unstable_by(self.k - 1, cmp);
            d.truncate(self.k);
        }
        let max_label = d.iter().map(|x| x.1).max().unwrap_or(0);
        let mut votes = vec![(0usize, 0.0f64); max_label + 1];
        for &(dist, l) in &d {
            votes[l].0 += 1;
            votes[l].1 += dist;
        }
        let mut best = None::<(usize, usize, f64)>;
        for (l, &(count, sum)) in votes.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((_, bc, bs)) => count > bc || (count == bc && sum < bs),
            };
            if better {
                best = Some((l, count, sum));
            }
        }
        best.map_or(0, |b| b.0)
    }
}

pub fn knn_classify(points: &[Vec<f64>], labels: &[usize], query: &[f64], k: usize) -> Result<usize> {
    Ok(Knn::new(points.to_vec(), labels.to_vec(), k)?.predict(query))
}
