//! Actor and critic networks and the advantage policy-gradient update.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::mlp::{ForwardCache, Mlp, OutputInit};
use crate::env::{ActionPolicy, Episode, StepAction};
use crate::error::{CfsError, Result};
use crate::scalar::Scalar;

/// Numerically stable softmax and log-softmax of two logits.
pub fn softmax2<T: Scalar>(logits: [T; 2]) -> ([T; 2], [T; 2]) {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let log_z = (e0 + e1).ln();
    let log_p = [logits[0] - m - log_z, logits[1] - m - log_z];
    ([log_p[0].exp(), log_p[1].exp()], log_p)
}

/// Policy network: state features to Skip/Keep logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor<T> {
    net: Mlp<T>,
}

impl<T: Scalar> Actor<T> {
    /// Hidden layers drawn uniformly; the output layer starts at zero so the
    /// initial policy is uniform.
    pub fn new<G: Rng + ?Sized>(input_dim: usize, hidden: &[usize], rng: &mut G) -> Result<Self> {
        let sizes = layer_sizes(input_dim, hidden, 2);
        Ok(Actor { net: Mlp::random(&sizes, OutputInit::Zero, rng)? })
    }

    pub fn from_network(net: Mlp<T>) -> Result<Self> {
        if net.output_dim() != 2 {
            return Err(CfsError::Shape(format!("actor needs 2 outputs, network has {}", net.output_dim())));
        }
        Ok(Actor { net })
    }

    pub fn network(&self) -> &Mlp<T> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Mlp<T> {
        &mut self.net
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// `(P(Skip), P(Keep))`.
    pub fn forward(&self, features: &[T]) -> Result<[T; 2]> {
        let out = self.net.forward(features)?;
        Ok(softmax2([out[0], out[1]]).0)
    }

    pub fn log_prob(&self, features: &[T], action: StepAction) -> Result<T> {
        let out = self.net.forward(features)?;
        Ok(softmax2([out[0], out[1]]).1[action.index()])
    }

    /// Adds `scale · ∇ log π(action | s) + entropy_scale · ∇ H(π(·|s))` into
    /// `grad` and returns `log π(action | s)`.
    pub fn accumulate_gradient(
        &self,
        features: &[T],
        action: StepAction,
        scale: T,
        entropy_scale: T,
        cache: &mut ForwardCache<T>,
        grad: &mut [T],
    ) -> Result<T> {
        let out = self.net.forward_cached(features, cache)?;
        let (probs, log_p) = softmax2([out[0], out[1]]);
        // d log p_a / d z_i = 1[i = a] - p_i
        let mut g_logits = [-probs[0] * scale, -probs[1] * scale];
        g_logits[action.index()] += scale;
        if entropy_scale != T::zero() {
            // H = -Σ p log p;  dH/dz_i = -p_i (log p_i + H)
            let entropy = -(probs[0] * log_p[0] + probs[1] * log_p[1]);
            for i in 0..2 {
                g_logits[i] -= entropy_scale * probs[i] * (log_p[i] + entropy);
            }
        }
        self.net.backward(cache, &g_logits, grad);
        Ok(log_p[action.index()])
    }
}

impl<T: Scalar> ActionPolicy<T> for Actor<T> {
    fn action_probs(&self, features: &[T]) -> Result<[T; 2]> {
        self.forward(features)
    }
}

/// State-value network with a scalar linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic<T> {
    net: Mlp<T>,
}

impl<T: Scalar> Critic<T> {
    pub fn new<G: Rng + ?Sized>(input_dim: usize, hidden: &[usize], rng: &mut G) -> Result<Self> {
        let sizes = layer_sizes(input_dim, hidden, 1);
        Ok(Critic { net: Mlp::random(&sizes, OutputInit::Uniform, rng)? })
    }

    pub fn from_network(net: Mlp<T>) -> Result<Self> {
        if net.output_dim() != 1 {
            return Err(CfsError::Shape(format!("critic needs 1 output, network has {}", net.output_dim())));
        }
        Ok(Critic { net })
    }

    pub fn network(&self) -> &Mlp<T> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Mlp<T> {
        &mut self.net
    }

    pub fn forward(&self, features: &[T]) -> Result<T> {
        Ok(self.net.forward(features)?[0])
    }

    /// Adds `scale · ∇V(s)` into `grad` and returns `V(s)`.
    pub fn accumulate_gradient(&self, features: &[T], scale: T, cache: &mut ForwardCache<T>, grad: &mut [T]) -> Result<T> {
        let v = self.net.forward_cached(features, cache)?[0];
        self.net.backward(cache, &[scale], grad);
        Ok(v)
    }
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(input);
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// One Adam step per transition, in backward order.
    #[default]
    PerTransition,
    /// One Adam step per episode on the summed gradient.
    Batched,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateConfig<T> {
    pub gamma: T,
    pub entropy_coefficient: T,
    pub mode: UpdateMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats<T> {
    /// Return from the first step.
    pub episode_return: T,
    pub mean_abs_advantage: T,
}

/// Reusable buffers for [`policy_gradient_step`].
#[derive(Debug, Default)]
pub struct Workspace<T> {
    features: Vec<T>,
    actor_cache: ForwardCache<T>,
    critic_cache: ForwardCache<T>,
    actor_grad: Vec<T>,
    critic_grad: Vec<T>,
}

fn reset(buf: &mut Vec<impl Scalar>, len: usize) {
    buf.clear();
    buf.resize(len, Scalar::lit(0.0));
}

fn check_finite<T: Scalar>(what: &str, values: &[T]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(CfsError::Divergence {
            episode: 0,
            reason: format!("non-finite {what} at index {i}"),
        }),
    }
}

/// Walks the episode backwards accumulating `R ← r_k + γR` and applies the
/// actor update along `∇ log π(a_k|s_k) · (R − V(s_k))` and the critic
/// update along `(R − V(s_k)) · ∇V(s_k)`.
///
/// Transitions with a zero advantage (and no entropy bonus) leave the
/// corresponding network untouched.
pub fn policy_gradient_step<T: Scalar>(
    actor: &mut Actor<T>,
    critic: &mut Critic<T>,
    episode: &Episode<T>,
    actor_opt: &mut Adam<T>,
    critic_opt: &mut Adam<T>,
    config: &UpdateConfig<T>,
    ws: &mut Workspace<T>,
) -> Result<UpdateStats<T>> {
    if episode.transitions.is_empty() {
        return Err(CfsError::State("cannot update from an empty episode".into()));
    }
    let batched = config.mode == UpdateMode::Batched;
    let (na, nc) = (actor.net.num_params(), critic.net.num_params());
    reset(&mut ws.actor_grad, na);
    reset(&mut ws.critic_grad, nc);
    let mut ret = T::zero();
    let mut abs_adv = T::zero();
    for tr in episode.transitions.iter().rev() {
        ret = tr.reward + config.gamma * ret;
        tr.state.write_features(&mut ws.features);
        if !batched {
            reset(&mut ws.actor_grad, na);
            reset(&mut ws.critic_grad, nc);
        }
        // V(s_k) before either network moves
        let value = critic.forward(&ws.features)?;
        let advantage = ret - value;
        abs_adv += advantage.abs();

        let touch_actor = advantage != T::zero() || config.entropy_coefficient != T::zero();
        if touch_actor {
            // minimize the negated objective
            actor.accumulate_gradient(
                &ws.features,
                tr.action,
                -advantage,
                -config.entropy_coefficient,
                &mut ws.actor_cache,
                &mut ws.actor_grad,
            )?;
        }
        if advantage != T::zero() {
            // ½ (R − V)² has gradient −(R − V) ∇V
            critic.accumulate_gradient(&ws.features, -advantage, &mut ws.critic_cache, &mut ws.critic_grad)?;
        }
        if !batched {
            if touch_actor {
                check_finite("actor gradient", &ws.actor_grad)?;
                actor_opt.step(actor.net.params_mut(), &ws.actor_grad);
            }
            if advantage != T::zero() {
                check_finite("critic gradient", &ws.critic_grad)?;
                critic_opt.step(critic.net.params_mut(), &ws.critic_grad);
            }
        }
    }
    if batched {
        check_finite("actor gradient", &ws.actor_grad)?;
        check_finite("critic gradient", &ws.critic_grad)?;
        if ws.actor_grad.iter().any(|g| *g != T::zero()) {
            actor_opt.step(actor.net.params_mut(), &ws.actor_grad);
        }
        if ws.critic_grad.iter().any(|g| *g != T::zero()) {
            critic_opt.step(critic.net.params_mut(), &ws.critic_grad);
        }
    }
    check_finite("actor parameter", actor.net.params())?;
    check_finite("critic parameter", critic.net.params())?;
    Ok(UpdateStats {
        episode_return: ret,
        mean_abs_advantage: abs_adv / T::from_usize_lossy(episode.transitions.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvState, Transition};
    use crate::ranking::{FactorMask, LossParts};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_output_layer_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let actor = Actor::<f64>::new(6, &[16, 16], &mut rng).unwrap();
        for _ in 0..100 {
            let s: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
            assert_eq!(actor.forward(&s).unwrap(), [0.5, 0.5]);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut actor = Actor::<f64>::new(6, &[16, 16], &mut rng).unwrap();
        for p in actor.network_mut().params_mut() {
            *p = rng.random_range(-1.0..1.0);
        }
        for _ in 0..1_000 {
            let s: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let [a, b] = actor.forward(&s).unwrap();
            assert!(a > 0.0 && b > 0.0);
            assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn extreme_inputs_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut actor = Actor::<f64>::new(6, &[16, 16], &mut rng).unwrap();
        for p in actor.network_mut().params_mut() {
            *p = rng.random_range(-1.0..1.0);
        }
        for _ in 0..100 {
            let s: Vec<f64> = (0..6).map(|_| rng.random_range(-1e3..1e3)).collect();
            let [a, b] = actor.forward(&s).unwrap();
            assert!(a.is_finite() && b.is_finite());
            assert!((a + b - 1.0).abs() < 1e-12);
            for action in [StepAction::Skip, StepAction::Keep] {
                let lp = actor.log_prob(&s, action).unwrap();
                assert!(lp.is_finite());
            }
        }
    }

    #[test]
    fn critic_basics() {
        let zero = Critic::from_network(Mlp::<f64>::zeros(&[4, 8, 1]).unwrap()).unwrap();
        assert_eq!(zero.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut critic = Critic::<f64>::new(4, &[8], &mut rng).unwrap();
        let s = [0.5, -0.5, 1.0, 2.0];
        let before = critic.forward(&s).unwrap();
        let n = critic.network().num_params();
        critic.network_mut().params_mut()[n - 1] += 0.25;
        assert!((critic.forward(&s).unwrap() - before - 0.25).abs() < 1e-12);
        assert!(critic.forward(&[0.0; 3]).is_err());
    }

    fn one_step_episode(features_dim: usize, action: StepAction, reward: f64) -> Episode<f64> {
        let state = EnvState::<f64>::for_tests(vec![0.0; features_dim - 2], 0, 1);
        let next = EnvState::<f64>::for_tests(vec![0.0; features_dim - 2], 1, 1);
        Episode {
            transitions: vec![Transition {
                state,
                action,
                reward,
                effectiveness: 0.0,
                efficiency: reward,
                next_state: next,
            }],
            final_mask: FactorMask::all_ones(1),
            final_loss_parts: LossParts::from_parts(0.0, 0.0, 0.0),
        }
    }

    #[test]
    fn zero_advantage_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut actor = Actor::<f64>::new(4, &[8], &mut rng).unwrap();
        // zero critic and zero reward: advantage 0 everywhere
        let mut critic = Critic::from_network(Mlp::zeros(&[4, 8, 1]).unwrap()).unwrap();
        let (a0, c0) = (actor.clone(), critic.clone());
        let mut aopt = Adam::new(actor.network().num_params(), 1e-3);
        let mut copt = Adam::new(critic.network().num_params(), 1e-3);
        let cfg = UpdateConfig { gamma: 1.0, entropy_coefficient: 0.0, mode: UpdateMode::PerTransition };
        let ep = one_step_episode(4, StepAction::Keep, 0.0);
        let mut ws = Workspace::default();
        for _ in 0..10 {
            policy_gradient_step(&mut actor, &mut critic, &ep, &mut aopt, &mut copt, &cfg, &mut ws).unwrap();
        }
        assert_eq!(actor, a0);
        assert_eq!(critic, c0);
    }

    /// One factor: Keep pays +1, Skip pays -1.
    #[test]
    fn single_state_bandit_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut actor = Actor::<f64>::new(4, &[16, 16], &mut rng).unwrap();
        let mut critic = Critic::<f64>::new(4, &[16, 16], &mut rng).unwrap();
        let mut aopt = Adam::new(actor.network().num_params(), 1e-3);
        let mut copt = Adam::new(critic.network().num_params(), 1e-3);
        let cfg = UpdateConfig { gamma: 1.0, entropy_coefficient: 0.0, mode: UpdateMode::PerTransition };
        let features = EnvState::<f64>::for_tests(vec![0.0; 2], 0, 1).features();
        let mut ws = Workspace::default();
        for _ in 0..2_000 {
            let [p_skip, _] = actor.forward(&features).unwrap();
            let action = if rng.random::<f64>() < p_skip { StepAction::Skip } else { StepAction::Keep };
            let reward = if action == StepAction::Keep { 1.0 } else { -1.0 };
            let ep = one_step_episode(4, action, reward);
            policy_gradient_step(&mut actor, &mut critic, &ep, &mut aopt, &mut copt, &cfg, &mut ws).unwrap();
        }
        let [_, p_keep] = actor.forward(&features).unwrap();
        assert!(p_keep > 0.99, "P(Keep) = {p_keep}");
    }

    fn random_net(sizes: &[usize], rng: &mut ChaCha8Rng) -> Mlp<f64> {
        let n = Mlp::<f64>::zeros(sizes).unwrap().num_params();
        Mlp::from_params(sizes, (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / (na + nb).max(1e-300)
    }

    #[test]
    fn entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sizes = [5, 6, 2];
        let actor = Actor::from_network(random_net(&sizes, &mut rng)).unwrap();
        let s: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let entropy = |a: &Actor<f64>| {
            let [p0, p1] = a.forward(&s).unwrap();
            -(p0 * p0.ln() + p1 * p1.ln())
        };
        let mut grad = vec![0.0; actor.network().num_params()];
        let mut cache = ForwardCache::default();
        actor.accumulate_gradient(&s, StepAction::Keep, 0.0, 1.0, &mut cache, &mut grad).unwrap();
        let h = 1e-5;
        let fd: Vec<f64> = (0..grad.len())
            .map(|i| {
                let mut plus = actor.clone();
                plus.network_mut().params_mut()[i] += h;
                let mut minus = actor.clone();
                minus.network_mut().params_mut()[i] -= h;
                (entropy(&plus) - entropy(&minus)) / (2.0 * h)
            })
            .collect();
        assert!(rel_err(&grad, &fd) < 1e-6);
    }
}
