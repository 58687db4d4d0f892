//! Exhaustive search over all `2^p` factor masks.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{CfsError, Result};
use crate::ranking::{CostVector, FactorMask, LossEvaluator, Ranker};
use crate::scalar::Scalar;
use crate::synth::{Dataset, PageView};

pub const MAX_P_SINGLE: usize = 22;
pub const MAX_P_CLUSTER: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult<T> {
    pub best_mask: FactorMask,
    /// Always `best_distance + lambda * best_cost`.
    pub best_loss: T,
    pub best_distance: T,
    /// `n_items · Σ kept costs` (averaged for the cluster oracle).
    pub best_cost: T,
    pub evaluated_count: u64,
}

fn check_cap(p: usize, cap: usize) -> Result<()> {
    if p > cap {
        return Err(CfsError::OracleCap { p, cap });
    }
    Ok(())
}

/// Orders candidates: lower loss, then fewer kept factors, then the
/// lexicographically smaller bit string.
fn better<T: Scalar>(loss: T, mask: &FactorMask, best_loss: T, best: &FactorMask) -> bool {
    match loss.partial_cmp(&best_loss).expect("finite loss") {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => (mask.kept_count(), mask.bits()) < (best.kept_count(), best.bits()),
    }
}

fn argmin<T: Scalar>(p: usize, distance: &[T], cost: &[T], scale: T, lambda: T) -> OracleResult<T> {
    let mut best: Option<(usize, T)> = None;
    let mut best_mask = FactorMask::all_zeros(p);
    for code in 0..distance.len() {
        let loss = distance[code] * scale + lambda * (cost[code] * scale);
        let mask = FactorMask::from_code(p, code as u64);
        if best.is_none_or(|(_, bl)| better(loss, &mask, bl, &best_mask)) {
            best = Some((code, loss));
            best_mask = mask;
        }
    }
    let (code, _) = best.expect("at least one mask");
    let best_distance = distance[code] * scale;
    let best_cost = cost[code] * scale;
    OracleResult {
        best_mask,
        best_loss: best_distance + lambda * best_cost,
        best_distance,
        best_cost,
        evaluated_count: distance.len() as u64,
    }
}

/// Minimizes the loss of one request over all masks. `lambda` may be zero.
pub fn exhaustive_best_mask<T, R>(
    page_view: &PageView<T>,
    model: &R,
    costs: &CostVector<T>,
    lambda: T,
) -> Result<OracleResult<T>>
where
    T: Scalar,
    R: Ranker<T> + Sync + ?Sized,
{
    let p = page_view.factors.p();
    check_cap(p, MAX_P_SINGLE)?;
    LossEvaluator::new(model, &page_view.factors, costs, lambda)?;
    let total = 1usize << p;
    let chunk = 4096.min(total);
    let parts: Vec<(Vec<T>, Vec<T>)> = (0..total.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut eval = LossEvaluator::new(model, &page_view.factors, costs, lambda)?;
            let range = c * chunk..((c + 1) * chunk).min(total);
            let mut d = Vec::with_capacity(range.len());
            let mut k = Vec::with_capacity(range.len());
            for code in range {
                let mask = FactorMask::from_code(p, code as u64);
                d.push(eval.distance(&mask)?);
                k.push(eval.cost_term(&mask));
            }
            Ok((d, k))
        })
        .collect::<Result<_>>()?;
    let (distance, cost): (Vec<T>, Vec<T>) = parts.into_iter().fold((Vec::new(), Vec::new()), |mut acc, (d, k)| {
        acc.0.extend(d);
        acc.1.extend(k);
        acc
    });
    Ok(argmin(p, &distance, &cost, T::one(), lambda))
}

/// Sums of distance and cost term per mask, for one group of page views.
fn accumulate<T, R>(page_views: &[&PageView<T>], model: &R, costs: &CostVector<T>, p: usize) -> Result<(Vec<T>, Vec<T>)>
where
    T: Scalar,
    R: Ranker<T> + Sync + ?Sized,
{
    let total = 1usize << p;
    // fixed chunking keeps the floating point summation order reproducible
    const CHUNK: usize = 64;
    let partial: Vec<(Vec<T>, Vec<T>)> = page_views
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut d = vec![T::zero(); total];
            let mut k = vec![T::zero(); total];
            for pv in chunk {
                let mut eval = LossEvaluator::new(model, &pv.factors, costs, T::zero())?;
                for code in 0..total {
                    let mask = FactorMask::from_code(p, code as u64);
                    d[code] += eval.distance(&mask)?;
                    k[code] += eval.cost_term(&mask);
                }
            }
            Ok((d, k))
        })
        .collect::<Result<_>>()?;
    let mut d = vec![T::zero(); total];
    let mut k = vec![T::zero(); total];
    for (pd, pk) in partial {
        for code in 0..total {
            d[code] += pd[code];
            k[code] += pk[code];
        }
    }
    Ok((d, k))
}

/// The single mask minimizing the mean loss over every page view.
pub fn exhaustive_best_pooled<T, R>(dataset: &Dataset<T>, model: &R, lambda: T) -> Result<OracleResult<T>>
where
    T: Scalar,
    R: Ranker<T> + Sync + ?Sized,
{
    let p = dataset.p();
    check_cap(p, MAX_P_CLUSTER)?;
    check_lambda(lambda)?;
    if dataset.is_empty() {
        return Err(CfsError::State("oracle needs at least one page view".into()));
    }
    let all: Vec<&PageView<T>> = dataset.page_views().iter().collect();
    let (d, k) = accumulate(&all, model, dataset.costs(), p)?;
    Ok(argmin(p, &d, &k, T::one() / T::from_usize_lossy(all.len()), lambda))
}

/// Per cluster, the single mask minimizing the mean loss over that
/// cluster's page views.
pub fn exhaustive_best_per_cluster<T, R>(
    dataset: &Dataset<T>,
    model: &R,
    lambda: T,
) -> Result<BTreeMap<u32, OracleResult<T>>>
where
    T: Scalar,
    R: Ranker<T> + Sync + ?Sized,
{
    let p = dataset.p();
    check_cap(p, MAX_P_CLUSTER)?;
    check_lambda(lambda)?;
    if !dataset.has_cluster_tags() {
        return Err(CfsError::State("per-cluster oracle needs cluster tags on every page view".into()));
    }
    let mut groups: BTreeMap<u32, Vec<&PageView<T>>> = BTreeMap::new();
    for pv in dataset.page_views() {
        groups.entry(pv.cluster_id().expect("tags checked")).or_default().push(pv);
    }
    groups
        .into_iter()
        .map(|(id, pvs)| {
            let (d, k) = accumulate(&pvs, model, dataset.costs(), p)?;
            Ok((id, argmin(p, &d, &k, T::one() / T::from_usize_lossy(pvs.len()), lambda)))
        })
        .collect()
}

fn check_lambda<T: Scalar>(lambda: T) -> Result<()> {
    if !(lambda.is_finite() && lambda >= T::zero()) {
        return Err(CfsError::InvalidValue(format!("lambda = {lambda} must be finite and >= 0")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::{cfs_loss, CfsLossParams, FactorMatrix, LinearRankingModel};
    use crate::synth::{generate, generate_with_truth, ContextVector, GenConfig};
    use ndarray::array;
    use proptest::prelude::*;

    fn fixture() -> (PageView<f64>, LinearRankingModel<f64>, CostVector<f64>) {
        let factors = FactorMatrix::new(
            0,
            array![[1.0, 0.2, 0.4], [0.5, 0.9, 0.1], [0.0, 0.3, 0.8], [0.7, 0.6, 0.5]],
        )
        .unwrap();
        let weights = vec![1.0, 0.5, 0.2];
        let mut model = LinearRankingModel::new(3);
        model.insert(0, weights.clone()).unwrap();
        let pv = PageView {
            context: ContextVector { embedding: vec![0.0], cluster_id: Some(0) },
            factors,
            weights,
        };
        (pv, model, CostVector::new(vec![1.0, 2.0, 3.0]).unwrap())
    }

    #[test]
    fn lambda_zero_keeps_everything_free() {
        let (pv, model, costs) = fixture();
        let r = exhaustive_best_mask(&pv, &model, &costs, 0.0).unwrap();
        assert_eq!(r.best_distance, 0.0);
        assert_eq!(r.best_loss, 0.0);
        assert_eq!(r.evaluated_count, 8);
        // the all-ones mask is a minimizer
        let mut eval = LossEvaluator::new(&model, &pv.factors, &costs, 0.0).unwrap();
        assert_eq!(eval.evaluate(&FactorMask::all_ones(3)).unwrap().loss, r.best_loss);
    }

    #[test]
    fn huge_lambda_keeps_nothing() {
        let (pv, model, costs) = fixture();
        let r = exhaustive_best_mask(&pv, &model, &costs, 1e9).unwrap();
        assert_eq!(r.best_mask, FactorMask::all_zeros(3));
        assert_eq!(r.best_cost, 0.0);
    }

    #[test]
    fn hand_enumerated_instance() {
        // scores per mask (items 0..4), reference order by full scores
        // full          : 1.18 0.97 0.31 1.10 -> order 0 3 1 2
        // {0}           : 1.0  0.5  0.0  0.7  -> 0 3 1 2, D = 0
        // with n = 4 the cost term is 4·Σc, λ = 0.01:
        //   000: D = 2/6 (tie order 0 1 2 3 vs 0 3 1 2), loss 0.3333
        //   100: D = 0,   loss 0.04
        //   010: 0.1 0.45 0.15 0.3 -> 1 3 2 0, D = 4/6, loss 0.7467
        //   001: 0.08 0.02 0.16 0.1 -> 2 3 0 1, D = 4/6, loss 0.7867
        //   110: 1.1 0.95 0.15 1.0 -> 0 3 1 2, D = 0, loss 0.12
        // so {0} alone is optimal
        let (pv, model, costs) = fixture();
        let r = exhaustive_best_mask(&pv, &model, &costs, 0.01).unwrap();
        assert_eq!(r.best_mask.to_string(), "100");
        assert_eq!(r.best_distance, 0.0);
        assert!((r.best_loss - 0.04).abs() < 1e-15);
        let mut eval = LossEvaluator::new(&model, &pv.factors, &costs, 0.01).unwrap();
        let expected = [(0b000, 2.0 / 6.0), (0b010, 4.0 / 6.0), (0b100, 4.0 / 6.0), (0b011, 0.0)];
        for (code, d) in expected {
            let m = FactorMask::from_code(3, code);
            assert!((eval.distance(&m).unwrap() - d).abs() < 1e-15, "mask {m}");
        }
    }

    #[test]
    fn over_cap_is_refused() {
        let values = ndarray::Array2::<f64>::from_elem((2, 23), 1.0);
        let pv = PageView {
            context: ContextVector { embedding: vec![0.0], cluster_id: None },
            factors: FactorMatrix::new(0, values).unwrap(),
            weights: vec![1.0; 23],
        };
        let mut model = LinearRankingModel::new(23);
        model.insert(0, vec![1.0; 23]).unwrap();
        let costs = CostVector::new(vec![1.0; 23]).unwrap();
        assert!(matches!(
            exhaustive_best_mask(&pv, &model, &costs, 0.1),
            Err(CfsError::OracleCap { p: 23, cap: 22 })
        ));
    }

    fn clustered(num_clusters: usize, seed: u64) -> Dataset<f64> {
        generate(&GenConfig {
            num_page_views: 120,
            p: 6,
            l: 2,
            n_items: 8,
            num_clusters,
            seed,
            ..GenConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn single_cluster_matches_pooled() {
        let d = clustered(1, 3);
        let model = d.ranking_model();
        let per = exhaustive_best_per_cluster(&d, &model, 1e-3).unwrap();
        let pooled = exhaustive_best_pooled(&d, &model, 1e-3).unwrap();
        assert_eq!(per.len(), 1);
        assert_eq!(per[&0].best_mask, pooled.best_mask);
        assert_eq!(per[&0].best_loss, pooled.best_loss);
    }

    #[test]
    fn clusters_beat_pooled_mask() {
        let d = clustered(2, 5);
        let model = d.ranking_model();
        let lambda = 1e-3;
        let per = exhaustive_best_per_cluster(&d, &model, lambda).unwrap();
        let pooled = exhaustive_best_pooled(&d, &model, lambda).unwrap();
        for (id, r) in &per {
            let members: Vec<_> = d.page_views().iter().filter(|pv| pv.cluster_id() == Some(*id)).collect();
            let params = CfsLossParams::new(lambda).unwrap();
            let mean = members
                .iter()
                .map(|pv| cfs_loss(&pv.factors, &model, d.costs(), &pooled.best_mask, &params).unwrap().loss)
                .sum::<f64>()
                / members.len() as f64;
            assert!(r.best_loss <= mean + 1e-12, "cluster {id}");
            assert_eq!(r.best_loss, r.best_distance + lambda * r.best_cost);
        }
    }

    #[test]
    fn disjoint_effective_subsets_give_distinct_optima() {
        let (d, truth) = generate_with_truth::<f64>(&GenConfig {
            num_page_views: 200,
            p: 8,
            l: 2,
            n_items: 10,
            num_clusters: 2,
            seed: 17,
            ..GenConfig::default()
        })
        .unwrap();
        let per = exhaustive_best_per_cluster(&d, &d.ranking_model(), 1e-3).unwrap();
        assert_ne!(per[&0].best_mask, per[&1].best_mask);
        // each optimum stays inside its cluster's effective subset
        for (id, r) in &per {
            let subset = &truth.effective_subsets[*id as usize];
            assert!(r.best_mask.kept_indices().iter().all(|k| subset.contains(k)), "cluster {id}: {}", r.best_mask);
        }
    }

    #[test]
    fn missing_tags_are_an_error() {
        let d = clustered(2, 1);
        let mut pvs = d.page_views().to_vec();
        pvs[3].context.cluster_id = None;
        let untagged = Dataset::new(pvs, d.costs().clone(), d.l(), 0).unwrap();
        assert!(exhaustive_best_per_cluster(&untagged, &untagged.ranking_model(), 1e-3).is_err());
    }

    #[test]
    fn repeated_runs_agree() {
        let d = clustered(2, 8);
        let model = d.ranking_model();
        let a = exhaustive_best_per_cluster(&d, &model, 2e-3).unwrap();
        let b = exhaustive_best_per_cluster(&d, &model, 2e-3).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn oracle_is_a_lower_bound(seed in any::<u64>(), code in 0u64..64, lambda in 0.0f64..0.01) {
            let d = clustered(1, seed).subset(0..4);
            let model = d.ranking_model();
            for pv in d.page_views() {
                let best = exhaustive_best_mask(pv, &model, d.costs(), lambda).unwrap();
                let mut eval = LossEvaluator::new(&model, &pv.factors, d.costs(), lambda).unwrap();
                let any = eval.evaluate(&FactorMask::from_code(6, code)).unwrap();
                prop_assert!(best.best_loss <= any.loss + 1e-15);
                prop_assert_eq!(best.best_loss, best.best_distance + lambda * best.best_cost);
                let all = eval.evaluate(&FactorMask::all_ones(6)).unwrap();
                prop_assert_eq!(all.loss, lambda * (pv.n_items() as f64 * d.costs().total()));
            }
        }
    }
}
