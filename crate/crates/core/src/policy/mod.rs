//! Actor-critic learner.

mod actor_critic;
mod adam;
mod checkpoint;
mod mlp;
mod trainer;

pub use actor_critic::{policy_gradient_step, softmax2, Actor, Critic, UpdateConfig, UpdateMode, UpdateStats, Workspace};
pub use adam::Adam;
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use mlp::{ForwardCache, Mlp, OutputInit};
pub use trainer::{train, write_log, LogRecord, TrainEvent, TrainParams, Trainer};
