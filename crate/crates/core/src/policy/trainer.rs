//! Training loop: one sampled episode per page view, one update per episode.

use std::io::Write;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::actor_critic::{policy_gradient_step, Actor, Critic, UpdateConfig, UpdateMode, Workspace};
use super::adam::Adam;
use super::checkpoint::Checkpoint;
use crate::env::{rollout, state_dim, EnvParams, Selection};
use crate::error::{CfsError, Result};
use crate::ranking::Ranker;
use crate::scalar::Scalar;
use crate::synth::Dataset;

// streams reserved next to the per-episode ones
const INIT_STREAM: u64 = u64::MAX;
const ORDER_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    /// Total number of episodes (page views visited, with repetition).
    pub t_max: usize,
    pub entropy_coefficient: f64,
    /// Episodes over which the entropy coefficient falls linearly to zero;
    /// zero keeps it constant.
    pub entropy_decay_episodes: usize,
    pub seed: u64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: Vec<usize>,
    /// Episodes per log record.
    pub log_interval: usize,
    /// Zero disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub update_mode: UpdateMode,
    /// Visit page views in a fresh random order each pass.
    pub shuffle: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            t_max: 50_000,
            entropy_coefficient: 0.0,
            entropy_decay_episodes: 0,
            seed: 0,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            hidden: vec![128, 128],
            log_interval: 1_000,
            checkpoint_every: 0,
            update_mode: UpdateMode::PerTransition,
            shuffle: true,
        }
    }
}

impl TrainParams {
    pub fn entropy_at(&self, episode: usize) -> f64 {
        if self.entropy_decay_episodes == 0 {
            return self.entropy_coefficient;
        }
        let left = 1.0 - episode as f64 / self.entropy_decay_episodes as f64;
        self.entropy_coefficient * left.max(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CfsError::Config(m));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return fail(format!("hidden = {:?} needs at least one non-empty layer", self.hidden));
        }
        if !(self.actor_lr > 0.0 && self.actor_lr.is_finite()) {
            return fail(format!("actor_lr = {} must be > 0", self.actor_lr));
        }
        if !(self.critic_lr > 0.0 && self.critic_lr.is_finite()) {
            return fail(format!("critic_lr = {} must be > 0", self.critic_lr));
        }
        if !(self.entropy_coefficient >= 0.0 && self.entropy_coefficient.is_finite()) {
            return fail(format!("entropy_coefficient = {} must be >= 0", self.entropy_coefficient));
        }
        if self.log_interval == 0 {
            return fail("log_interval must be > 0".into());
        }
        Ok(())
    }
}

/// Averages over one logging interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    /// Episodes completed at the end of the interval.
    pub episode: usize,
    pub mean_loss: f64,
    pub mean_distance: f64,
    pub mean_usage: f64,
    pub mean_weighted_usage: f64,
    pub mean_return: f64,
}

impl LogRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log record serializes")
    }
}

pub fn write_log<W: Write>(records: &[LogRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_json_line())?;
    }
    Ok(())
}

pub enum TrainEvent<'a, T> {
    Log(&'a LogRecord),
    Checkpoint(&'a Checkpoint<T>),
}

#[derive(Default)]
struct Interval {
    count: usize,
    loss: f64,
    distance: f64,
    usage: f64,
    weighted: f64,
    ret: f64,
}

pub struct Trainer<T> {
    params: TrainParams,
    l: usize,
    p: usize,
    actor: Actor<T>,
    critic: Critic<T>,
    actor_opt: Adam<T>,
    critic_opt: Adam<T>,
    episodes_done: usize,
    ws: Workspace<T>,
    order: Option<(usize, Vec<usize>)>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(l: usize, p: usize, params: TrainParams) -> Result<Self> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(INIT_STREAM);
        let dim = state_dim(l, p);
        let actor = Actor::new(dim, &params.hidden, &mut rng)?;
        let critic = Critic::new(dim, &params.hidden, &mut rng)?;
        let actor_opt = Adam::new(actor.network().num_params(), T::lit(params.actor_lr));
        let critic_opt = Adam::new(critic.network().num_params(), T::lit(params.critic_lr));
        Ok(Trainer {
            params,
            l,
            p,
            actor,
            critic,
            actor_opt,
            critic_opt,
            episodes_done: 0,
            ws: Workspace::default(),
            order: None,
        })
    }

    /// Resumes from a checkpoint; `params` must match the original run for
    /// the continuation to be identical to an uninterrupted run.
    pub fn from_checkpoint(checkpoint: Checkpoint<T>, params: TrainParams) -> Result<Self> {
        params.validate()?;
        Ok(Trainer {
            params,
            l: checkpoint.l,
            p: checkpoint.p,
            actor: checkpoint.actor,
            critic: checkpoint.critic,
            actor_opt: checkpoint.actor_opt,
            critic_opt: checkpoint.critic_opt,
            episodes_done: checkpoint.episodes_done,
            ws: Workspace::default(),
            order: None,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            l: self.l,
            p: self.p,
            episodes_done: self.episodes_done,
            actor: self.actor.clone(),
            critic: self.critic.clone(),
            actor_opt: self.actor_opt.clone(),
            critic_opt: self.critic_opt.clone(),
        }
    }

    pub fn actor(&self) -> &Actor<T> {
        &self.actor
    }

    pub fn critic(&self) -> &Critic<T> {
        &self.critic
    }

    pub fn into_actor(self) -> Actor<T> {
        self.actor
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn params(&self) -> &TrainParams {
        &self.params
    }

    pub fn run<R>(
        &mut self,
        dataset: &Dataset<T>,
        model: &R,
        env: &EnvParams<T>,
        observer: impl FnMut(TrainEvent<'_, T>) -> Result<()>,
    ) -> Result<()>
    where
        R: Ranker<T> + ?Sized,
    {
        self.run_until(dataset, model, env, self.params.t_max, observer)
    }

    /// Trains until `end` episodes are done in total (at most `t_max`).
    pub fn run_until<R>(
        &mut self,
        dataset: &Dataset<T>,
        model: &R,
        env: &EnvParams<T>,
        end: usize,
        mut observer: impl FnMut(TrainEvent<'_, T>) -> Result<()>,
    ) -> Result<()>
    where
        R: Ranker<T> + ?Sized,
    {
        env.validate()?;
        if dataset.l() != self.l || dataset.p() != self.p {
            return Err(CfsError::Shape(format!(
                "trainer built for l = {}, p = {}; dataset has l = {}, p = {}",
                self.l,
                self.p,
                dataset.l(),
                dataset.p()
            )));
        }
        if dataset.is_empty() {
            return Err(CfsError::State("cannot train on an empty dataset".into()));
        }
        let end = end.min(self.params.t_max);
        let mut cfg = UpdateConfig {
            gamma: env.gamma,
            entropy_coefficient: T::zero(),
            mode: self.params.update_mode,
        };
        let costs = dataset.costs();
        let mut acc = Interval::default();
        while self.episodes_done < end {
            let e = self.episodes_done;
            cfg.entropy_coefficient = T::lit(self.params.entropy_at(e));
            let pv = &dataset.page_views()[self.page_view_index(e, dataset.len())];
            let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed);
            rng.set_stream(e as u64);
            let episode = rollout(pv, &self.actor, model, costs, *env, Selection::Sample(&mut rng))?;
            let stats = policy_gradient_step(
                &mut self.actor,
                &mut self.critic,
                &episode,
                &mut self.actor_opt,
                &mut self.critic_opt,
                &cfg,
                &mut self.ws,
            )
            .map_err(|err| match err {
                CfsError::Divergence { reason, .. } => CfsError::Divergence { episode: e, reason },
                other => other,
            })?;
            self.episodes_done += 1;

            let parts = &episode.final_loss_parts;
            acc.count += 1;
            acc.loss += parts.loss.as_f64();
            acc.distance += parts.distance.as_f64();
            acc.usage += episode.final_mask.kept_count() as f64;
            acc.weighted += costs.kept_cost(&episode.final_mask).as_f64();
            acc.ret += stats.episode_return.as_f64();

            let done = self.episodes_done;
            if done.is_multiple_of(self.params.log_interval) || done == end {
                let record = flush(&mut acc, done);
                if !record.mean_loss.is_finite() {
                    return Err(CfsError::Divergence {
                        episode: e,
                        reason: format!("mean loss over the last interval is {}", record.mean_loss),
                    });
                }
                debug!(
                    "episode {done}: loss {:.4} distance {:.4} usage {:.2}",
                    record.mean_loss, record.mean_distance, record.mean_usage
                );
                observer(TrainEvent::Log(&record))?;
            }
            if self.params.checkpoint_every > 0 && done.is_multiple_of(self.params.checkpoint_every) {
                observer(TrainEvent::Checkpoint(&self.checkpoint()))?;
            }
        }
        Ok(())
    }

    fn page_view_index(&mut self, episode: usize, n: usize) -> usize {
        if !self.params.shuffle {
            return episode % n;
        }
        let pass = episode / n;
        if self.order.as_ref().map(|(p, o)| *p != pass || o.len() != n).unwrap_or(true) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed ^ ORDER_SALT);
            rng.set_stream(pass as u64);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            self.order = Some((pass, order));
        }
        self.order.as_ref().expect("order cached").1[episode % n]
    }
}

fn flush(acc: &mut Interval, episode: usize) -> LogRecord {
    let n = acc.count.max(1) as f64;
    let r = LogRecord {
        episode,
        mean_loss: acc.loss / n,
        mean_distance: acc.distance / n,
        mean_usage: acc.usage / n,
        mean_weighted_usage: acc.weighted / n,
        mean_return: acc.ret / n,
    };
    *acc = Interval::default();
    r
}

/// Trains from scratch and returns the actor with the training log.
pub fn train<T, R>(
    dataset: &Dataset<T>,
    model: &R,
    env: &EnvParams<T>,
    params: &TrainParams,
) -> Result<(Actor<T>, Vec<LogRecord>)>
where
    T: Scalar,
    R: Ranker<T> + ?Sized,
{
    let mut trainer = Trainer::new(dataset.l(), dataset.p(), params.clone())?;
    let mut log = Vec::new();
    trainer.run(dataset, model, env, |ev| {
        if let TrainEvent::Log(r) = ev {
            log.push(r.clone());
        }
        Ok(())
    })?;
    info!("trained {} episodes", trainer.episodes_done());
    Ok((trainer.into_actor(), log))
}
