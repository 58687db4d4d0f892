//! Sequential Skip/Keep decisions over a fixed factor order.
//!
//! At step `k` the agent sees `(context, k/p, I')` where `I'` holds the
//! decisions taken so far and ones for every factor not yet visited. After
//! `p` steps the decisions form the request's [`FactorMask`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CfsError, Result};
use crate::ranking::{CostVector, FactorMask, LossEvaluator, LossParts, Ranker};
use crate::scalar::Scalar;
use crate::synth::PageView;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Zero reward until the last step, then `-loss` of the final mask.
    Terminal,
    /// Per-step cost penalty plus a constant penalty while the working
    /// ranking distortion exceeds `beta`.
    Shaped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorOrder {
    AscendingIndex,
    DescendingCost,
}

impl FactorOrder {
    pub fn visit_order<T: Scalar>(self, costs: &CostVector<T>) -> Vec<usize> {
        let mut order: Vec<usize> = (0..costs.len()).collect();
        if self == FactorOrder::DescendingCost {
            let c = costs.as_slice();
            order.sort_by(|&a, &b| c[b].partial_cmp(&c[a]).expect("finite costs"));
        }
        order
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvParams<T> {
    pub lambda: T,
    pub beta: T,
    pub r_c: T,
    pub gamma: T,
    pub reward_mode: RewardMode,
    pub factor_order: FactorOrder,
}

impl<T: Scalar> EnvParams<T> {
    pub fn new(lambda: T, beta: T, r_c: T) -> Self {
        EnvParams {
            lambda,
            beta,
            r_c,
            gamma: T::one(),
            reward_mode: RewardMode::Shaped,
            factor_order: FactorOrder::AscendingIndex,
        }
    }

    pub fn with_reward_mode(mut self, mode: RewardMode) -> Self {
        self.reward_mode = mode;
        self
    }

    pub fn with_gamma(mut self, gamma: T) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        let one = T::one();
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(CfsError::Config(msg)) };
        check(self.lambda.is_finite() && self.lambda > zero, format!("lambda = {} must be > 0", self.lambda))?;
        check(self.beta > zero && self.beta < one, format!("beta = {} must lie in (0, 1)", self.beta))?;
        check(self.r_c.is_finite() && self.r_c > zero, format!("r_c = {} must be > 0", self.r_c))?;
        check(self.gamma > zero && self.gamma <= one, format!("gamma = {} must lie in (0, 1]", self.gamma))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepAction {
    Skip,
    Keep,
}

impl StepAction {
    /// Index into the policy's `[P(Skip), P(Keep)]` output.
    pub fn index(self) -> usize {
        match self {
            StepAction::Skip => 0,
            StepAction::Keep => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 { StepAction::Skip } else { StepAction::Keep }
    }
}

/// Extended state. `memory[t]` is the working indicator of the `t`-th
/// visited factor, so visit positions `>= step` always hold one.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState<T> {
    context: Vec<T>,
    step: usize,
    memory: Vec<T>,
}

impl<T: Scalar> EnvState<T> {
    /// Checks the decision-memory invariants: entries are 0 or 1 and every
    /// position at or after `step` is 1.
    pub fn new(context: Vec<T>, step: usize, memory: Vec<T>) -> Result<Self> {
        if memory.is_empty() || step > memory.len() {
            return Err(CfsError::State(format!(
                "step {step} outside 0..={} for {} factors",
                memory.len(),
                memory.len()
            )));
        }
        let binary = memory.iter().all(|&m| m == T::zero() || m == T::one());
        if !binary || memory[step..].iter().any(|&m| m != T::one()) {
            return Err(CfsError::State("decision memory must be 0/1 with an all-ones suffix".into()));
        }
        Ok(EnvState { context, step, memory })
    }

    #[cfg(test)]
    pub(crate) fn for_tests(context: Vec<T>, step: usize, p: usize) -> Self {
        Self::new(context, step, vec![T::one(); p]).expect("valid test state")
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn p(&self) -> usize {
        self.memory.len()
    }

    pub fn context(&self) -> &[T] {
        &self.context
    }

    pub fn decision_memory(&self) -> &[T] {
        &self.memory
    }

    pub fn is_terminal(&self) -> bool {
        self.step == self.memory.len()
    }

    pub fn dim(&self) -> usize {
        self.context.len() + self.memory.len() + 1
    }

    /// `(context, k/p, memory)`.
    pub fn features(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.dim());
        self.write_features(&mut out);
        out
    }

    pub fn write_features(&self, out: &mut Vec<T>) {
        out.clear();
        out.extend_from_slice(&self.context);
        out.push(T::from_usize_lossy(self.step) / T::from_usize_lossy(self.memory.len()));
        out.extend_from_slice(&self.memory);
    }
}

/// Input dimensionality of any network acting in this environment.
pub fn state_dim(l: usize, p: usize) -> usize {
    l + p + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T> {
    pub state: EnvState<T>,
    pub action: StepAction,
    pub reward: T,
    /// Effectiveness part of the reward (zero in terminal mode).
    pub effectiveness: T,
    /// Efficiency part of the reward (zero in terminal mode).
    pub efficiency: T,
    pub next_state: EnvState<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode<T> {
    pub transitions: Vec<Transition<T>>,
    pub final_mask: FactorMask,
    pub final_loss_parts: LossParts<T>,
}

impl<T: Scalar> Episode<T> {
    pub fn undiscounted_return(&self) -> T {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    /// `Σ_k γ^k r_k`, accumulated backwards like the learner does.
    pub fn discounted_return(&self, gamma: T) -> T {
        self.transitions
            .iter()
            .rev()
            .fold(T::zero(), |acc, t| t.reward + gamma * acc)
    }
}

/// The environment for one page view. Holds the full-factor ranking so
/// steps only rank the working scores.
pub struct CfsEnv<'a, T: Scalar, R: Ranker<T> + ?Sized> {
    page_view: &'a PageView<T>,
    costs: &'a CostVector<T>,
    params: EnvParams<T>,
    order: Vec<usize>,
    evaluator: LossEvaluator<'a, T, R>,
}

impl<'a, T: Scalar, R: Ranker<T> + ?Sized> CfsEnv<'a, T, R> {
    pub fn new(
        page_view: &'a PageView<T>,
        model: &'a R,
        costs: &'a CostVector<T>,
        params: EnvParams<T>,
    ) -> Result<Self> {
        params.validate()?;
        if page_view.factors.p() != costs.len() || model.p() != costs.len() {
            return Err(CfsError::Shape(format!(
                "page view {}: p = {}, model p = {}, costs = {}",
                page_view.request_id(),
                page_view.factors.p(),
                model.p(),
                costs.len()
            )));
        }
        let evaluator = LossEvaluator::new(model, &page_view.factors, costs, params.lambda)?;
        Ok(CfsEnv {
            page_view,
            costs,
            params,
            order: params.factor_order.visit_order(costs),
            evaluator,
        })
    }

    pub fn p(&self) -> usize {
        self.order.len()
    }

    pub fn params(&self) -> &EnvParams<T> {
        &self.params
    }

    /// Factor decided at visit position `t`.
    pub fn factor_at(&self, t: usize) -> usize {
        self.order[t]
    }

    pub fn reset(&self) -> EnvState<T> {
        EnvState {
            context: self.page_view.context.embedding.clone(),
            step: 0,
            memory: vec![T::one(); self.p()],
        }
    }

    /// Working indicator in factor-index order.
    pub fn working_mask(&self, state: &EnvState<T>) -> FactorMask {
        let mut mask = FactorMask::all_ones(self.p());
        for (t, &m) in state.memory.iter().enumerate() {
            mask.set(self.order[t], m > T::zero());
        }
        mask
    }

    fn check_state(&self, state: &EnvState<T>) -> Result<()> {
        if state.memory.len() != self.p() || state.context.len() != self.page_view.context.embedding.len() {
            return Err(CfsError::Shape(format!(
                "state of dimension {} does not belong to this environment",
                state.dim()
            )));
        }
        if state.is_terminal() {
            return Err(CfsError::State(format!(
                "episode already finished after {} steps",
                state.step
            )));
        }
        Ok(())
    }

    /// Applies one decision. Returns the next state, the reward split into
    /// (total, effectiveness, efficiency) and whether the episode ended.
    pub fn step(&mut self, state: &EnvState<T>, action: StepAction) -> Result<StepOutcome<T>> {
        self.check_state(state)?;
        let k = state.step;
        let mut next = state.clone();
        next.memory[k] = if action == StepAction::Keep { T::one() } else { T::zero() };
        next.step = k + 1;
        let done = next.step == self.p();

        let (effectiveness, efficiency) = match self.params.reward_mode {
            RewardMode::Shaped => {
                let efficiency = match action {
                    StepAction::Skip => T::zero(),
                    StepAction::Keep => {
                        let n = T::from_usize_lossy(self.page_view.n_items());
                        -(self.params.lambda * n * self.costs.as_slice()[self.order[k]])
                    }
                };
                let distance = self.evaluator.distance(&self.working_mask(&next))?;
                let effectiveness = if distance > self.params.beta { -self.params.r_c } else { T::zero() };
                (effectiveness, efficiency)
            }
            RewardMode::Terminal => (T::zero(), T::zero()),
        };
        let reward = match self.params.reward_mode {
            RewardMode::Shaped => effectiveness + efficiency,
            RewardMode::Terminal if done => -self.evaluator.evaluate(&self.working_mask(&next))?.loss,
            RewardMode::Terminal => T::zero(),
        };
        Ok(StepOutcome {
            next_state: next,
            reward,
            effectiveness,
            efficiency,
            done,
        })
    }

    pub fn loss_parts(&mut self, mask: &FactorMask) -> Result<LossParts<T>> {
        self.evaluator.evaluate(mask)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<T> {
    pub next_state: EnvState<T>,
    pub reward: T,
    pub effectiveness: T,
    pub efficiency: T,
    pub done: bool,
}

/// Anything that maps a state feature vector to `[P(Skip), P(Keep)]`.
pub trait ActionPolicy<T: Scalar> {
    fn action_probs(&self, features: &[T]) -> Result<[T; 2]>;
}

/// Fixed action regardless of state.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub StepAction);

impl<T: Scalar> ActionPolicy<T> for ConstantPolicy {
    fn action_probs(&self, _features: &[T]) -> Result<[T; 2]> {
        Ok(match self.0 {
            StepAction::Skip => [T::one(), T::zero()],
            StepAction::Keep => [T::zero(), T::one()],
        })
    }
}

pub enum Selection<'r, G: Rng + ?Sized> {
    /// Keep iff `P(Keep) >= P(Skip)`.
    Greedy,
    Sample(&'r mut G),
}

impl<G: Rng + ?Sized> Selection<'_, G> {
    pub fn choose<T: Scalar>(&mut self, probs: [T; 2]) -> StepAction {
        match self {
            Selection::Greedy => {
                if probs[1] >= probs[0] { StepAction::Keep } else { StepAction::Skip }
            }
            Selection::Sample(rng) => {
                let u: f64 = rng.random();
                if u < probs[0].as_f64() { StepAction::Skip } else { StepAction::Keep }
            }
        }
    }
}

/// Runs one full episode and records every transition.
pub fn rollout<T, R, P, G>(
    page_view: &PageView<T>,
    policy: &P,
    model: &R,
    costs: &CostVector<T>,
    params: EnvParams<T>,
    mut selection: Selection<'_, G>,
) -> Result<Episode<T>>
where
    T: Scalar,
    R: Ranker<T> + ?Sized,
    P: ActionPolicy<T> + ?Sized,
    G: Rng + ?Sized,
{
    let mut env = CfsEnv::new(page_view, model, costs, params)?;
    let mut state = env.reset();
    let mut transitions = Vec::with_capacity(env.p());
    let mut features = Vec::with_capacity(state.dim());
    loop {
        state.write_features(&mut features);
        let action = selection.choose(policy.action_probs(&features)?);
        let out = env.step(&state, action)?;
        transitions.push(Transition {
            state,
            action,
            reward: out.reward,
            effectiveness: out.effectiveness,
            efficiency: out.efficiency,
            next_state: out.next_state.clone(),
        });
        state = out.next_state;
        if out.done {
            break;
        }
    }
    let final_mask = env.working_mask(&state);
    let final_loss_parts = env.loss_parts(&final_mask)?;
    Ok(Episode {
        transitions,
        final_mask,
        final_loss_parts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::cfs_loss;
    use crate::ranking::CfsLossParams;
    use crate::synth::{generate, Dataset, GenConfig};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn data(p: usize) -> Dataset<f64> {
        generate(&GenConfig {
            num_page_views: 30,
            p,
            l: 3,
            n_items: 10,
            seed: 21,
            ..GenConfig::default()
        })
        .unwrap()
    }

    fn shaped() -> EnvParams<f64> {
        EnvParams::new(0.01, 0.05, 1.0)
    }

    type NoRng = ChaCha8Rng;

    #[test]
    fn reset_state() {
        let d = data(4);
        let model = d.ranking_model();
        let pv = &d.page_views()[0];
        let env = CfsEnv::new(pv, &model, d.costs(), shaped()).unwrap();
        let s = env.reset();
        assert_eq!(s.decision_memory(), &[1.0; 4]);
        assert_eq!(s.step_index(), 0);
        assert_eq!(s.dim(), 3 + 5);
        assert_eq!(s.context(), pv.context.embedding.as_slice());
        assert_eq!(env.reset(), s);
        assert_eq!(s.features().len(), state_dim(3, 4));
    }

    #[test]
    fn shaped_rewards_on_a_hand_built_request() {
        use crate::ranking::FactorMatrix;
        use crate::synth::ContextVector;
        use ndarray::Array2;
        // factor 0 decides the ranking, factor 1 has zero weight
        let values = Array2::from_shape_fn((10, 2), |(j, k)| if k == 0 { j as f64 } else { 1.0 });
        let pv = PageView {
            context: ContextVector { embedding: vec![0.0], cluster_id: None },
            factors: FactorMatrix::new(0, values).unwrap(),
            weights: vec![1.0, 0.0],
        };
        let mut model = crate::ranking::LinearRankingModel::new(2);
        model.insert(0, pv.weights.clone()).unwrap();
        let costs = CostVector::new(vec![3.0, 2.0]).unwrap();
        let mut env = CfsEnv::new(&pv, &model, &costs, shaped()).unwrap();
        let s0 = env.reset();
        // keep factor 0: G = -0.01 · 10 · 3
        let kept = env.step(&s0, StepAction::Keep).unwrap();
        assert!((kept.reward - (-0.3)).abs() < 1e-15);
        assert_eq!(kept.effectiveness, 0.0);
        assert!(!kept.done);
        // skip factor 1: distance stays 0
        let skipped = env.step(&kept.next_state, StepAction::Skip).unwrap();
        assert_eq!(skipped.reward, 0.0);
        assert!(skipped.done);
        // skipping factor 0 destroys the ranking: -r_c
        let bad = env.step(&s0, StepAction::Skip).unwrap();
        assert_eq!(bad.effectiveness, -1.0);
        assert_eq!(bad.reward, -1.0);
        assert!(matches!(env.step(&skipped.next_state, StepAction::Keep), Err(CfsError::State(_))));
    }

    #[test]
    fn constant_policies() {
        let d = data(5);
        let model = d.ranking_model();
        let pv = &d.page_views()[3];
        let keep = rollout(pv, &ConstantPolicy(StepAction::Keep), &model, d.costs(), shaped(), Selection::<NoRng>::Greedy).unwrap();
        assert_eq!(keep.final_mask, FactorMask::all_ones(5));
        assert_eq!(keep.final_loss_parts.distance, 0.0);
        assert_eq!(keep.transitions.len(), 5);
        let skip = rollout(pv, &ConstantPolicy(StepAction::Skip), &model, d.costs(), shaped(), Selection::<NoRng>::Greedy).unwrap();
        assert_eq!(skip.final_mask, FactorMask::all_zeros(5));
        assert_eq!(skip.final_loss_parts.cost_term, 0.0);
    }

    struct Coin(f64);
    impl ActionPolicy<f64> for Coin {
        fn action_probs(&self, _: &[f64]) -> Result<[f64; 2]> {
            Ok([1.0 - self.0, self.0])
        }
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let d = data(6);
        let model = d.ranking_model();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            d.page_views()
                .iter()
                .map(|pv| rollout(pv, &Coin(0.5), &model, d.costs(), shaped(), Selection::Sample(&mut rng)).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn descending_cost_order() {
        let costs = CostVector::new(vec![1.0, 5.0, 3.0]).unwrap();
        assert_eq!(FactorOrder::DescendingCost.visit_order(&costs), vec![1, 2, 0]);
        assert_eq!(FactorOrder::AscendingIndex.visit_order(&costs), vec![0, 1, 2]);
    }

    #[test]
    fn params_validation() {
        assert!(EnvParams::new(0.0, 0.05, 1.0).validate().is_err());
        assert!(EnvParams::new(0.1, 1.0, 1.0).validate().is_err());
        assert!(EnvParams::new(0.1, 0.05, 0.0).validate().is_err());
        assert!(EnvParams::new(0.1, 0.05, 1.0).with_gamma(0.0).validate().is_err());
        assert!(EnvParams::new(0.1, 0.05, 1.0).validate().is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn terminal_return_is_negative_loss(code in 0u64..256, pv_index in 0usize..30) {
            let d = data(8);
            let model = d.ranking_model();
            let pv = &d.page_views()[pv_index];
            let params = shaped().with_reward_mode(RewardMode::Terminal);
            let mut env = CfsEnv::new(pv, &model, d.costs(), params).unwrap();
            let mask = FactorMask::from_code(8, code);
            let mut s = env.reset();
            let mut rewards = Vec::new();
            for k in 0..8 {
                prop_assert!(s.decision_memory()[k..].iter().all(|&m| m == 1.0));
                let a = if mask.get(k) { StepAction::Keep } else { StepAction::Skip };
                let out = env.step(&s, a).unwrap();
                rewards.push(out.reward);
                s = out.next_state;
            }
            let expected = cfs_loss(&pv.factors, &model, d.costs(), &mask, &CfsLossParams::new(0.01).unwrap()).unwrap();
            prop_assert!((rewards.iter().sum::<f64>() + expected.loss).abs() < 1e-12);
        }

        #[test]
        fn shaped_efficiency_sum(seed in any::<u64>(), pv_index in 0usize..30) {
            let d = data(7);
            let model = d.ranking_model();
            let pv = &d.page_views()[pv_index];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ep = rollout(pv, &Coin(0.6), &model, d.costs(), shaped(), Selection::Sample(&mut rng)).unwrap();
            let g: f64 = ep.transitions.iter().map(|t| t.efficiency).sum();
            let expected = -0.01 * 10.0 * d.costs().kept_cost(&ep.final_mask);
            prop_assert!((g - expected).abs() < 1e-12);
            for (k, t) in ep.transitions.iter().enumerate() {
                prop_assert_eq!(t.next_state.step_index(), k + 1);
                prop_assert!(t.next_state.decision_memory()[k + 1..].iter().all(|&m| m == 1.0));
                prop_assert_eq!(t.reward, t.effectiveness + t.efficiency);
            }
            // no prefix violated the threshold -> no effectiveness penalty at all
            let mut env = CfsEnv::new(pv, &model, d.costs(), shaped()).unwrap();
            let all_ok = ep.transitions.iter().all(|t| env.loss_parts(&env.working_mask(&t.next_state)).unwrap().distance <= 0.05);
            if all_ok {
                prop_assert_eq!(ep.transitions.iter().map(|t| t.effectiveness).sum::<f64>(), 0.0);
            }
        }
    }
}
