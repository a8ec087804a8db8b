//! Reinforcement learning of a biasing force: the controlled Langevin
//! environment, the likelihood-ratio reward, a replay buffer and a TD3
//! trainer.

mod buffer;
mod networks;
mod td3;

pub use buffer::{Batch, ReplayBuffer};
pub use networks::{Actor, ActorCritic, Critic};
pub use td3::{
    rollout, soft_update, td3_target, td3_update, train_td3, GameRecord, RolloutResult, Td3Hyper, TrainOptions,
    TrainReport, UpdateStats,
};

use serde::{Deserialize, Serialize};

use crate::dynamics::{controlled_em_step, transition_log_density, SimParams};
use crate::landscape::{gradient, Position, PotentialSpec, WellSpec};
use crate::rng::RngStream;

/// Reward assigned to a step whose next position is not finite.
pub const NON_FINITE_REWARD: f64 = -1e3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Env {
    pub wells: WellSpec,
    pub potential: PotentialSpec,
    pub sim: SimParams,
    /// Start of every episode and centre of the distance bonus.
    pub q0: Position,
    pub episode_length: usize,
    pub alpha: f64,
    pub c_max: f64,
}

impl Default for Env {
    fn default() -> Self {
        Self {
            wells: WellSpec::default(),
            potential: PotentialSpec::default(),
            sim: SimParams::default().with_steps(600),
            q0: Position::new(-1.0, 0.0),
            episode_length: 600,
            alpha: 0.071,
            c_max: 10.0,
        }
    }
}

impl Env {
    pub fn validate(&self) -> crate::Result<()> {
        self.sim.validate()?;
        if !(self.alpha >= 0.0) || self.episode_length == 0 || !(self.c_max > 0.0) {
            return Err(crate::Error::InvalidArgument(format!(
                "env needs alpha >= 0, episode_length >= 1, c_max > 0 (got {}, {}, {})",
                self.alpha, self.episode_length, self.c_max
            )));
        }
        Ok(())
    }

    pub fn clamp_action(&self, a: [f64; 2]) -> [f64; 2] {
        [a[0].clamp(-self.c_max, self.c_max), a[1].clamp(-self.c_max, self.c_max)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub q: Position,
    pub a: [f64; 2],
    pub q_next: Position,
    pub reward: f64,
    pub done: bool,
    pub noise: [f64; 2],
}

/// `log T_0(q -> q') - log T_P(q -> q') + alpha |q - q0|^2`, with both kernel
/// log-densities evaluated exactly. `noise` is not needed by the exact form.
pub fn reward(q: Position, q_next: Position, action: [f64; 2], _noise: [f64; 2], env: &Env) -> f64 {
    let grad = gradient(q, &env.potential);
    let bias = Position::from(action);
    let log_ratio = transition_log_density(q, q_next, grad, Position::ORIGIN, &env.sim)
        - transition_log_density(q, q_next, grad, bias, &env.sim);
    log_ratio + env.alpha * q.distance(&env.q0).powi(2)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvState {
    pub q: Position,
    pub step: usize,
}

impl EnvState {
    pub fn reset(env: &Env) -> Self {
        Self { q: env.q0, step: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub transition: Transition,
    /// The integrator produced a non-finite position; the episode ends and
    /// the state is left where it was.
    pub blew_up: bool,
}

/// Advances one controlled step with a fresh noise draw.
pub fn env_step(state: &mut EnvState, action: [f64; 2], env: &Env, rng: &mut RngStream) -> StepOutcome {
    let a = env.clamp_action(action);
    let q = state.q;
    let noise = rng.normal2();
    let grad = gradient(q, &env.potential);
    let q_next = controlled_em_step(q, grad, Position::from(a), noise, &env.sim);
    state.step += 1;
    if !q_next.is_finite() {
        return StepOutcome {
            transition: Transition {
                q,
                a,
                q_next: q,
                reward: NON_FINITE_REWARD,
                done: true,
                noise,
            },
            blew_up: true,
        };
    }
    let r = reward(q, q_next, a, noise, env);
    state.q = q_next;
    StepOutcome {
        transition: Transition {
            q,
            a,
            q_next,
            reward: r,
            done: state.step >= env.episode_length,
            noise,
        },
        blew_up: false,
    }
}
