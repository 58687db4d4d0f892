//! Offline comparison of factor selection policies.

mod report;

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{render_report, series_csv, write_series, SeriesField, SERIES};

use crate::baselines::MaskTable;
use crate::env::{rollout, EnvParams, Selection};
use crate::error::{CfsError, Result};
use crate::policy::Actor;
use crate::ranking::{CostVector, FactorMask, LossEvaluator, Ranker, RequestId};
use crate::scalar::Scalar;
use crate::synth::{Dataset, PageView};

/// Anything that yields one mask per page view.
pub trait MaskPolicy<T: Scalar>: Sync {
    fn mask_for(&self, page_view: &PageView<T>) -> Result<FactorMask>;
}

pub struct StaticMask(pub FactorMask);

impl<T: Scalar> MaskPolicy<T> for StaticMask {
    fn mask_for(&self, _: &PageView<T>) -> Result<FactorMask> {
        Ok(self.0.clone())
    }
}

impl<T: Scalar> MaskPolicy<T> for MaskTable {
    fn mask_for(&self, page_view: &PageView<T>) -> Result<FactorMask> {
        self.mask_for(page_view.request_id()).cloned()
    }
}

/// One mask per cluster tag, e.g. the per-cluster oracle.
pub struct ClusterMasks(pub BTreeMap<u32, FactorMask>);

impl<T: Scalar> MaskPolicy<T> for ClusterMasks {
    fn mask_for(&self, page_view: &PageView<T>) -> Result<FactorMask> {
        let id = page_view
            .cluster_id()
            .ok_or_else(|| CfsError::State(format!("page view {} has no cluster tag", page_view.request_id())))?;
        self.0
            .get(&id)
            .cloned()
            .ok_or_else(|| CfsError::State(format!("no mask for cluster {id}")))
    }
}

/// Greedy rollout of a trained actor.
pub struct GreedyActor<'a, T, R: ?Sized> {
    pub actor: &'a Actor<T>,
    pub model: &'a R,
    pub costs: &'a CostVector<T>,
    pub params: EnvParams<T>,
}

impl<T, R> MaskPolicy<T> for GreedyActor<'_, T, R>
where
    T: Scalar,
    R: Ranker<T> + Sync + ?Sized,
{
    fn mask_for(&self, page_view: &PageView<T>) -> Result<FactorMask> {
        let ep = rollout(
            page_view,
            self.actor,
            self.model,
            self.costs,
            self.params,
            Selection::<ChaCha8Rng>::Greedy,
        )?;
        Ok(ep.final_mask)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageTrace {
    pub request_id: RequestId,
    pub n_items: usize,
    pub distance: f64,
    pub usage: usize,
    pub weighted_usage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub policy: String,
    pub avg_pairwise_loss: f64,
    pub avg_factor_usage: f64,
    pub weighted_factor_usage: f64,
    /// Mean of `distance + lambda · n_items · weighted usage`.
    pub mean_objective: f64,
    pub simulated_mean_latency: Option<f64>,
    pub simulated_p99_latency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub row: EvalRow,
    pub traces: Vec<PageTrace>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub lambda: f64,
    pub evaluations: Vec<PolicyEvaluation>,
}

impl EvalReport {
    pub fn rows(&self) -> impl Iterator<Item = &EvalRow> {
        self.evaluations.iter().map(|e| &e.row)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

pub fn evaluate_policy<T, R, P>(
    name: &str,
    test: &Dataset<T>,
    model: &R,
    policy: &P,
    lambda: T,
) -> Result<PolicyEvaluation>
where
    T: Scalar,
    R: Ranker<T> + Sync + ?Sized,
    P: MaskPolicy<T> + ?Sized,
{
    if test.is_empty() {
        return Err(CfsError::State("evaluation needs at least one test page view".into()));
    }
    let costs = test.costs();
    let p = test.p();
    let traces: Vec<PageTrace> = test
        .page_views()
        .par_iter()
        .map(|pv| {
            let mask = policy.mask_for(pv)?;
            if mask.len() != p {
                return Err(CfsError::Shape(format!("policy produced {} bits for p = {p}", mask.len())));
            }
            let mut eval = LossEvaluator::new(model, &pv.factors, costs, lambda)?;
            Ok(PageTrace {
                request_id: pv.request_id(),
                n_items: pv.n_items(),
                distance: eval.distance(&mask)?.as_f64(),
                usage: mask.kept_count(),
                weighted_usage: costs.kept_cost(&mask).as_f64(),
            })
        })
        .collect::<Result<_>>()?;
    let n = traces.len() as f64;
    let lam = lambda.as_f64();
    let mut row = EvalRow {
        policy: name.to_string(),
        avg_pairwise_loss: 0.0,
        avg_factor_usage: 0.0,
        weighted_factor_usage: 0.0,
        mean_objective: 0.0,
        simulated_mean_latency: None,
        simulated_p99_latency: None,
    };
    for t in &traces {
        row.avg_pairwise_loss += t.distance;
        row.avg_factor_usage += t.usage as f64;
        row.weighted_factor_usage += t.weighted_usage;
        row.mean_objective += t.distance + lam * t.n_items as f64 * t.weighted_usage;
    }
    row.avg_pairwise_loss /= n;
    row.avg_factor_usage /= n;
    row.weighted_factor_usage /= n;
    row.mean_objective /= n;
    Ok(PolicyEvaluation { row, traces })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencySimConfig {
    /// Fixed per-request cost in abstract milliseconds.
    pub overhead: f64,
    /// Milliseconds per unit of factor cost per item.
    pub scale: f64,
    /// Load factor applied to the factor computation part.
    pub traffic_multiplier: f64,
}

impl Default for LatencySimConfig {
    fn default() -> Self {
        LatencySimConfig {
            overhead: 1.0,
            scale: 0.01,
            traffic_multiplier: 1.0,
        }
    }
}

impl LatencySimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.overhead >= 0.0 && self.scale > 0.0 && self.traffic_multiplier > 0.0;
        if !ok || !(self.overhead + self.scale + self.traffic_multiplier).is_finite() {
            return Err(CfsError::Config(format!(
                "latency config needs overhead >= 0 and positive scale and traffic_multiplier, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn latency(&self, trace: &PageTrace) -> f64 {
        self.overhead + self.scale * self.traffic_multiplier * trace.n_items as f64 * trace.weighted_usage
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencySummary {
    pub mean: f64,
    pub p99: f64,
}

/// Mean and nearest-rank 99th percentile of the simulated latencies.
pub fn simulate_latency(traces: &[PageTrace], config: &LatencySimConfig) -> Result<LatencySummary> {
    config.validate()?;
    if traces.is_empty() {
        return Err(CfsError::State("latency simulation needs traces".into()));
    }
    let mut lat: Vec<f64> = traces.iter().map(|t| config.latency(t)).collect();
    let mean = lat.iter().sum::<f64>() / lat.len() as f64;
    lat.sort_by(f64::total_cmp);
    let rank = ((0.99 * lat.len() as f64).ceil() as usize).max(1);
    Ok(LatencySummary { mean, p99: lat[rank - 1] })
}

impl PolicyEvaluation {
    pub fn with_latency(mut self, config: &LatencySimConfig) -> Result<Self> {
        let s = simulate_latency(&self.traces, config)?;
        self.row.simulated_mean_latency = Some(s.mean);
        self.row.simulated_p99_latency = Some(s.p99);
        Ok(self)
    }
}
