//! Synthetic page-view datasets.
//!
//! Each page view carries a context embedding, an `n_items × p` factor
//! matrix and the linear ranking weights for that request. Factors are
//! mixed from a small number of latent sources so they are correlated, and
//! every context cluster has its own effective factor subset: weights of
//! factors outside the subset are close to zero for that cluster.
//!
//! Factors also live on heterogeneous scales (a factor with a large value
//! range gets a proportionally small weight), so the magnitude of a raw
//! weight is not the same thing as the factor's influence on the ranking.

mod io;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CfsError, Result};
use crate::ranking::{CostVector, FactorMatrix, LinearRankingModel, RequestId};
use crate::scalar::Scalar;

pub use io::{load, save, FORMAT_VERSION, MAGIC};

#[derive(Debug, Clone, PartialEq)]
pub struct ContextVector<T> {
    pub embedding: Vec<T>,
    /// Latent regime the generator drew this context from. Never an input
    /// to learners; used by oracles and per-cluster reporting.
    pub cluster_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PageView<T> {
    pub context: ContextVector<T>,
    pub factors: FactorMatrix<T>,
    pub weights: Vec<T>,
}

impl<T: Scalar> PageView<T> {
    pub fn request_id(&self) -> RequestId {
        self.factors.request_id()
    }

    pub fn n_items(&self) -> usize {
        self.factors.n_items()
    }

    pub fn cluster_id(&self) -> Option<u32> {
        self.context.cluster_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    page_views: Vec<PageView<T>>,
    costs: CostVector<T>,
    p: usize,
    l: usize,
    n_items: usize,
    seed: u64,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(page_views: Vec<PageView<T>>, costs: CostVector<T>, l: usize, seed: u64) -> Result<Self> {
        let p = costs.len();
        let n_items = page_views.first().map(PageView::n_items).unwrap_or(0);
        for pv in &page_views {
            let id = pv.request_id();
            if pv.factors.p() != p || pv.weights.len() != p {
                return Err(CfsError::Shape(format!(
                    "page view {id}: factor/weight width does not match p = {p}"
                )));
            }
            if pv.n_items() != n_items {
                return Err(CfsError::Shape(format!(
                    "page view {id}: {} items, dataset uses {n_items}",
                    pv.n_items()
                )));
            }
            if pv.context.embedding.len() != l {
                return Err(CfsError::Shape(format!(
                    "page view {id}: context length {} != l = {l}",
                    pv.context.embedding.len()
                )));
            }
            if pv.context.embedding.iter().chain(&pv.weights).any(|v| !v.is_finite()) {
                return Err(CfsError::InvalidValue(format!(
                    "page view {id}: non-finite context or weight"
                )));
            }
        }
        Ok(Dataset {
            page_views,
            costs,
            p,
            l,
            n_items,
            seed,
        })
    }

    pub fn page_views(&self) -> &[PageView<T>] {
        &self.page_views
    }

    pub fn costs(&self) -> &CostVector<T> {
        &self.costs
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.page_views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.page_views.is_empty()
    }

    /// The black-box ranking function: one weight vector per request.
    pub fn ranking_model(&self) -> LinearRankingModel<T> {
        let mut model = LinearRankingModel::new(self.p);
        for pv in &self.page_views {
            model
                .insert(pv.request_id(), pv.weights.clone())
                .expect("weights validated at construction");
        }
        model
    }

    fn with_page_views(&self, page_views: Vec<PageView<T>>) -> Self {
        Dataset {
            page_views,
            costs: self.costs.clone(),
            ..*self
        }
    }

    pub fn subset(&self, range: std::ops::Range<usize>) -> Self {
        self.with_page_views(self.page_views[range].to_vec())
    }

    pub fn has_cluster_tags(&self) -> bool {
        !self.page_views.is_empty() && self.page_views.iter().all(|pv| pv.cluster_id().is_some())
    }
}

/// Positional split: the first `round(fraction · len)` page views train.
pub fn split<T: Scalar>(dataset: &Dataset<T>, fraction: f64) -> Result<(Dataset<T>, Dataset<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CfsError::InvalidValue(format!(
            "split fraction {fraction} must lie in (0, 1)"
        )));
    }
    let n = dataset.len();
    let cut = (fraction * n as f64).round() as usize;
    if cut == 0 || cut >= n {
        return Err(CfsError::InvalidValue(format!(
            "split of {n} page views at {fraction} leaves an empty side"
        )));
    }
    Ok((dataset.subset(0..cut), dataset.subset(cut..n)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub num_page_views: usize,
    pub p: usize,
    pub l: usize,
    pub n_items: usize,
    pub num_clusters: usize,
    /// 0 gives independent factors, 1 gives purely latent-driven factors.
    pub correlation_strength: f64,
    /// Number of latent sources; defaults to `max(1, p / 4)`.
    pub latent_dim: Option<usize>,
    /// Size of each cluster's effective subset; defaults to
    /// `max(1, p / max(num_clusters, 2))`.
    pub effective_size: Option<usize>,
    pub influence_min: f64,
    pub influence_max: f64,
    /// Standard deviation of the influence of factors outside the effective subset.
    pub off_subset_scale: f64,
    /// Relative per-request weight jitter.
    pub weight_jitter: f64,
    /// Factor value scales are `10^U(-scale_spread, scale_spread)`.
    pub scale_spread: f64,
    pub context_spread: f64,
    pub context_noise: f64,
    pub cost_log_mean: f64,
    pub cost_log_std: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            num_page_views: 10_000,
            p: 20,
            l: 16,
            n_items: 10,
            num_clusters: 2,
            correlation_strength: 0.5,
            latent_dim: None,
            effective_size: None,
            influence_min: 0.6,
            influence_max: 1.4,
            off_subset_scale: 0.02,
            weight_jitter: 0.05,
            scale_spread: 1.0,
            context_spread: 1.0,
            context_noise: 0.5,
            // median cost of 7 units
            cost_log_mean: 7f64.ln(),
            cost_log_std: 0.6,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn latent_dim(&self) -> usize {
        self.latent_dim.unwrap_or((self.p / 4).max(1))
    }

    pub fn effective_size(&self) -> usize {
        self.effective_size
            .unwrap_or((self.p / self.num_clusters.max(2)).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CfsError::Config(msg));
        if self.num_page_views == 0 || self.p == 0 || self.l == 0 || self.num_clusters == 0 {
            return bad("num_page_views, p, l and num_clusters must be positive".into());
        }
        if self.n_items < 2 {
            return bad(format!("n_items = {} must be at least 2", self.n_items));
        }
        if !(0.0..=1.0).contains(&self.correlation_strength) {
            return bad(format!(
                "correlation_strength = {} must lie in [0, 1]",
                self.correlation_strength
            ));
        }
        let q = self.latent_dim();
        if q == 0 || (q >= self.p && self.p > 1) {
            return bad(format!("latent_dim = {q} must be positive and below p = {}", self.p));
        }
        let e = self.effective_size();
        if e == 0 || e > self.p {
            return bad(format!("effective_size = {e} must lie in [1, p]"));
        }
        if !(self.influence_min > 0.0 && self.influence_max >= self.influence_min) {
            return bad("need 0 < influence_min <= influence_max".into());
        }
        for (name, v) in [
            ("off_subset_scale", self.off_subset_scale),
            ("weight_jitter", self.weight_jitter),
            ("scale_spread", self.scale_spread),
            ("context_spread", self.context_spread),
            ("context_noise", self.context_noise),
            ("cost_log_std", self.cost_log_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        if !self.cost_log_mean.is_finite() {
            return bad("cost_log_mean must be finite".into());
        }
        Ok(())
    }
}

/// Generator internals that learners never see; tests and reports use it.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Sorted factor indices of each cluster's effective subset.
    pub effective_subsets: Vec<Vec<usize>>,
    /// Per-cluster factor influence before per-request jitter and scaling.
    pub influence: Vec<Vec<f64>>,
    pub factor_scales: Vec<f64>,
}

pub fn generate<T: Scalar>(config: &GenConfig) -> Result<Dataset<T>> {
    generate_with_truth(config).map(|(d, _)| d)
}

pub fn generate_with_truth<T: Scalar>(config: &GenConfig) -> Result<(Dataset<T>, GroundTruth)> {
    config.validate()?;
    let GenConfig { p, l, n_items, num_clusters, .. } = *config;
    let q = config.latent_dim();
    let rho = config.correlation_strength;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = move |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let costs: Vec<f64> = (0..p)
        .map(|_| (config.cost_log_mean + config.cost_log_std * normal(&mut rng)).exp())
        .collect();
    let factor_scales: Vec<f64> = (0..p)
        .map(|_| 10f64.powf(rng.random_range(-1.0..=1.0) * config.scale_spread))
        .collect();

    // unit-norm mixing rows, one per observed factor
    let mixing: Vec<Vec<f64>> = (0..p)
        .map(|_| {
            let row: Vec<f64> = (0..q).map(|_| normal(&mut rng)).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            row.into_iter().map(|v| v / norm).collect()
        })
        .collect();

    let e = config.effective_size();
    let mut factor_order: Vec<usize> = (0..p).collect();
    factor_order.shuffle(&mut rng);
    let mut effective_subsets = Vec::with_capacity(num_clusters);
    let mut influence = Vec::with_capacity(num_clusters);
    let mut centers = Vec::with_capacity(num_clusters);
    for c in 0..num_clusters {
        // consecutive chunks of one shuffle: disjoint while num_clusters·e <= p
        let mut subset: Vec<usize> = (0..e).map(|i| factor_order[(c * e + i) % p]).collect();
        subset.sort_unstable();
        let mut u = vec![0.0; p];
        for (k, uk) in u.iter_mut().enumerate() {
            *uk = if subset.binary_search(&k).is_ok() {
                let magnitude = rng.random_range(config.influence_min..=config.influence_max);
                if rng.random_bool(0.5) { magnitude } else { -magnitude }
            } else {
                config.off_subset_scale * normal(&mut rng)
            };
        }
        let center: Vec<f64> = (0..l).map(|_| config.context_spread * normal(&mut rng)).collect();
        effective_subsets.push(subset);
        influence.push(u);
        centers.push(center);
    }

    let mut page_views = Vec::with_capacity(config.num_page_views);
    for i in 0..config.num_page_views {
        let cluster = rng.random_range(0..num_clusters);
        let embedding: Vec<T> = centers[cluster]
            .iter()
            .map(|&m| T::lit(m + config.context_noise * normal(&mut rng)))
            .collect();
        let weights: Vec<T> = (0..p)
            .map(|k| {
                let jitter = 1.0 + config.weight_jitter * normal(&mut rng);
                T::lit(influence[cluster][k] * jitter / factor_scales[k])
            })
            .collect();
        let mut values = Array2::<T>::zeros((n_items, p));
        let mut latent = vec![0.0; q];
        for mut row in values.outer_iter_mut() {
            latent.iter_mut().for_each(|z| *z = normal(&mut rng));
            for (k, x) in row.iter_mut().enumerate() {
                let shared: f64 = mixing[k].iter().zip(&latent).map(|(a, z)| a * z).sum();
                let own = normal(&mut rng);
                *x = T::lit(factor_scales[k] * (rho * shared + (1.0 - rho) * own));
            }
        }
        page_views.push(PageView {
            context: ContextVector {
                embedding,
                cluster_id: Some(cluster as u32),
            },
            factors: FactorMatrix::new(i as RequestId, values)?,
            weights,
        });
    }

    let costs = CostVector::new(costs.into_iter().map(T::lit).collect())?;
    let dataset = Dataset::new(page_views, costs, l, config.seed)?;
    Ok((
        dataset,
        GroundTruth {
            effective_subsets,
            influence,
            factor_scales,
        },
    ))
}

/// Pearson correlation matrix of factor columns pooled over every item of
/// every page view.
pub fn factor_correlation<T: Scalar>(dataset: &Dataset<T>) -> Vec<Vec<f64>> {
    let p = dataset.p();
    let mut n = 0.0;
    let mut sum = vec![0.0; p];
    let mut cross = vec![vec![0.0; p]; p];
    for pv in dataset.page_views() {
        for row in pv.factors.values().outer_iter() {
            n += 1.0;
            for a in 0..p {
                let xa = row[a].as_f64();
                sum[a] += xa;
                for b in a..p {
                    cross[a][b] += xa * row[b].as_f64();
                }
            }
        }
    }
    let mut cov = vec![vec![0.0; p]; p];
    for a in 0..p {
        for b in a..p {
            let c = cross[a][b] / n - (sum[a] / n) * (sum[b] / n);
            cov[a][b] = c;
            cov[b][a] = c;
        }
    }
    (0..p)
        .map(|a| {
            (0..p)
                .map(|b| {
                    let denom = (cov[a][a] * cov[b][b]).sqrt();
                    if denom > 0.0 { cov[a][b] / denom } else { 0.0 }
                })
                .collect()
        })
        .collect()
}

pub fn mean_abs_off_diagonal(corr: &[Vec<f64>]) -> f64 {
    let p = corr.len();
    if p < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for (a, row) in corr.iter().enumerate() {
        for (b, v) in row.iter().enumerate() {
            if a != b {
                total += v.abs();
            }
        }
    }
    total / (p * (p - 1)) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> GenConfig {
        GenConfig {
            num_page_views: 100,
            p: 6,
            l: 4,
            seed,
            ..GenConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a: Dataset<f64> = generate(&small(7)).unwrap();
        let b: Dataset<f64> = generate(&small(7)).unwrap();
        assert_eq!(a, b);
        let c: Dataset<f64> = generate(&small(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_shapes() {
        let (d, truth) = generate_with_truth::<f64>(&small(3)).unwrap();
        assert_eq!(d.len(), 100);
        assert_eq!((d.p(), d.l(), d.n_items()), (6, 4, 10));
        assert_eq!(d.costs().len(), 6);
        assert!(d.has_cluster_tags());
        assert_eq!(truth.effective_subsets.len(), 2);
        // default effective size p / 2 = 3, disjoint chunks
        assert_eq!(truth.effective_subsets[0].len(), 3);
        assert!(truth.effective_subsets[0]
            .iter()
            .all(|k| !truth.effective_subsets[1].contains(k)));
        let model = d.ranking_model();
        assert_eq!(model.len(), 100);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = small(0);
        c.correlation_strength = 1.5;
        assert!(matches!(generate::<f64>(&c), Err(CfsError::Config(_))));
        let mut c = small(0);
        c.n_items = 1;
        assert!(generate::<f64>(&c).is_err());
        let mut c = small(0);
        c.num_page_views = 0;
        assert!(generate::<f64>(&c).is_err());
        let mut c = small(0);
        c.latent_dim = Some(6);
        assert!(generate::<f64>(&c).is_err());
    }

    #[test]
    fn split_examples() {
        let d: Dataset<f64> = generate(&small(1)).unwrap();
        let (train, test) = split(&d, 0.5).unwrap();
        assert_eq!((train.len(), test.len()), (50, 50));
        assert_eq!(train.page_views()[0], d.page_views()[0]);
        assert_eq!(test.page_views()[0], d.page_views()[50]);
        let tiny = d.subset(0..10);
        assert!(split(&tiny, 0.999).is_err());
        assert!(split(&tiny, 0.0).is_err());
        assert!(split(&tiny, 1.0).is_err());
    }

    #[test]
    fn ten_thousand_split_in_half() {
        let cfg = GenConfig {
            num_page_views: 10_000,
            p: 4,
            l: 2,
            n_items: 2,
            ..GenConfig::default()
        };
        let d: Dataset<f32> = generate(&cfg).unwrap();
        let (train, test) = split(&d, 0.5).unwrap();
        assert_eq!((train.len(), test.len()), (5_000, 5_000));
    }

    #[test]
    fn correlation_increases_with_strength() {
        let mut last = -1.0;
        for strength in [0.0, 0.5, 0.9] {
            let cfg = GenConfig {
                num_page_views: 2_000,
                p: 8,
                l: 2,
                correlation_strength: strength,
                seed: 11,
                ..GenConfig::default()
            };
            let d: Dataset<f64> = generate(&cfg).unwrap();
            let m = mean_abs_off_diagonal(&factor_correlation(&d));
            assert!(m > last, "strength {strength}: {m} <= {last}");
            last = m;
        }
    }
}
