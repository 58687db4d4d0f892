//! Extremely randomized regression trees, used only for their impurity
//! importances.

use log::warn;
use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CfsError, Result};
use crate::ranking::FactorMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeMode {
    /// Keep factors whose importance exceeds the mean importance `1/p`.
    AboveMean,
    TopK(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtraTreesConfig {
    pub n_trees: usize,
    /// Candidate features per split; `None` means `max(1, round(sqrt(p)))`.
    pub max_features: Option<usize>,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Rows drawn (without replacement) per tree; `None` uses every row.
    pub max_samples: Option<usize>,
    pub seed: u64,
}

impl Default for ExtraTreesConfig {
    fn default() -> Self {
        ExtraTreesConfig {
            n_trees: 50,
            max_features: None,
            max_depth: 10,
            min_samples_split: 10,
            max_samples: Some(20_000),
            seed: 0,
        }
    }
}

/// Total squared-error reduction per feature over the ensemble, normalized
/// to sum to one. All zeros when the target is constant.
pub fn extra_trees_importance(targets: &[f64], rows: &Array2<f64>, config: &ExtraTreesConfig) -> Result<Vec<f64>> {
    let (n, p) = rows.dim();
    if targets.len() != n {
        return Err(CfsError::Shape(format!("{n} rows but {} targets", targets.len())));
    }
    if n < 2 || p == 0 {
        return Err(CfsError::Shape("tree ensemble needs at least two rows and one factor".into()));
    }
    if config.n_trees == 0 {
        return Err(CfsError::Config("n_trees must be > 0".into()));
    }
    let max_features = config
        .max_features
        .unwrap_or(((p as f64).sqrt().round() as usize).max(1))
        .clamp(1, p);
    let mut importance = vec![0.0; p];
    for t in 0..config.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(t as u64);
        let mut idx: Vec<usize> = match config.max_samples {
            Some(m) if m < n => sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        let mut grower = Grower {
            rows,
            targets,
            max_features,
            config,
            rng,
            importance: &mut importance,
        };
        grower.split(&mut idx, 0);
    }
    let total: f64 = importance.iter().sum();
    if total <= 0.0 {
        warn!("tree importances are all zero (constant target?)");
        return Ok(vec![0.0; p]);
    }
    Ok(importance.into_iter().map(|v| v / total).collect())
}

struct Grower<'a> {
    rows: &'a Array2<f64>,
    targets: &'a [f64],
    max_features: usize,
    config: &'a ExtraTreesConfig,
    rng: ChaCha8Rng,
    importance: &'a mut [f64],
}

fn sse(targets: &[f64], idx: &[usize]) -> f64 {
    let n = idx.len() as f64;
    let (s, s2) = idx.iter().fold((0.0, 0.0), |(s, s2), &i| (s + targets[i], s2 + targets[i] * targets[i]));
    (s2 - s * s / n).max(0.0)
}

impl Grower<'_> {
    fn split(&mut self, idx: &mut [usize], depth: usize) {
        if depth >= self.config.max_depth || idx.len() < self.config.min_samples_split.max(2) {
            return;
        }
        let parent = sse(self.targets, idx);
        if parent <= 0.0 {
            return;
        }
        let p = self.rows.ncols();
        let mut best: Option<(f64, usize, f64)> = None;
        for k in sample(&mut self.rng, p, self.max_features).into_iter() {
            let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = self.rows[[i, k]];
                (lo.min(v), hi.max(v))
            });
            if hi <= lo {
                continue;
            }
            let threshold = self.rng.random_range(lo..hi);
            let (mut nl, mut sl, mut ql, mut sr, mut qr) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for &i in idx.iter() {
                let y = self.targets[i];
                if self.rows[[i, k]] <= threshold {
                    nl += 1.0;
                    sl += y;
                    ql += y * y;
                } else {
                    sr += y;
                    qr += y * y;
                }
            }
            let nr = idx.len() as f64 - nl;
            if nl == 0.0 || nr == 0.0 {
                continue;
            }
            let children = (ql - sl * sl / nl).max(0.0) + (qr - sr * sr / nr).max(0.0);
            let gain = parent - children;
            if best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, k, threshold));
            }
        }
        let Some((gain, k, threshold)) = best else { return };
        self.importance[k] += gain.max(0.0);
        let mut left = 0;
        for j in 0..idx.len() {
            if self.rows[[idx[j], k]] <= threshold {
                idx.swap(left, j);
                left += 1;
            }
        }
        let (l, r) = idx.split_at_mut(left);
        self.split(l, depth + 1);
        self.split(r, depth + 1);
    }
}

pub fn tree_select(targets: &[f64], rows: &Array2<f64>, mode: TreeMode, config: &ExtraTreesConfig) -> Result<FactorMask> {
    let p = rows.ncols();
    if rows.nrows() < p {
        return Err(CfsError::Shape(format!("tree selection needs at least p = {p} rows, got {}", rows.nrows())));
    }
    let imp = extra_trees_importance(targets, rows, config)?;
    Ok(match mode {
        TreeMode::AboveMean => {
            let mean = 1.0 / p as f64;
            FactorMask::new(imp.iter().map(|v| *v > mean).collect())
        }
        TreeMode::TopK(k) => {
            if k == 0 || k > p {
                return Err(CfsError::Config(format!("top-k = {k} must lie in [1, {p}]")));
            }
            FactorMask::from_indices(p, &super::top_k(&imp, k))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn planted(n: usize, p: usize, informative: usize, seed: u64) -> (Vec<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
        let y = (0..n).map(|i| 3.0 * x[[i, informative]]).collect();
        (y, x)
    }

    #[test]
    fn planted_factor_dominates() {
        let (y, x) = planted(2_000, 6, 3, 1);
        let imp = extra_trees_importance(&y, &x, &ExtraTreesConfig::default()).unwrap();
        assert!(imp[3] > 0.5, "{imp:?}");
        let mask = tree_select(&y, &x, TreeMode::AboveMean, &ExtraTreesConfig::default()).unwrap();
        assert!(mask.get(3));
    }

    #[test]
    fn importances_sum_to_one() {
        let (mut y, x) = planted(500, 5, 1, 2);
        for (i, v) in y.iter_mut().enumerate() {
            *v += x[[i, 4]] * 0.5;
        }
        let imp = extra_trees_importance(&y, &x, &ExtraTreesConfig::default()).unwrap();
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_target_gives_empty_mask() {
        let (_, x) = planted(200, 4, 0, 3);
        let y = vec![2.5; 200];
        let imp = extra_trees_importance(&y, &x, &ExtraTreesConfig::default()).unwrap();
        assert_eq!(imp, vec![0.0; 4]);
        let mask = tree_select(&y, &x, TreeMode::AboveMean, &ExtraTreesConfig::default()).unwrap();
        assert_eq!(mask, FactorMask::all_zeros(4));
    }

    #[test]
    fn seeded_and_top_k() {
        let (y, x) = planted(400, 6, 2, 4);
        let cfg = ExtraTreesConfig { seed: 7, ..Default::default() };
        let a = extra_trees_importance(&y, &x, &cfg).unwrap();
        let b = extra_trees_importance(&y, &x, &cfg).unwrap();
        assert_eq!(a, b);
        let mask = tree_select(&y, &x, TreeMode::TopK(2), &cfg).unwrap();
        assert_eq!(mask.kept_count(), 2);
        assert!(mask.get(2));
    }
}
