use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{env_step, ActorCritic, Actor, Batch, Env, EnvState, ReplayBuffer};
use crate::dataset::classify_trajectory;
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::landscape::{classify_region, Region};
use crate::rng::RngStream;
use crate::tensornet::{optimizer_step, Graph, OptimHyper, ParameterStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Td3Hyper {
    pub discount: f64,
    pub tau: f64,
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub policy_frequency: u64,
    pub exploration_noise: f64,
    pub batch: usize,
    pub lr: f64,
    pub n_games: usize,
    /// Environment rounds between two updates.
    pub train_period: u64,
    pub random_decay: f64,
    /// Environment rounds between two decays of the random-action probability.
    pub random_decay_period: u64,
    pub random_init: f64,
    pub buffer_size: usize,
    /// Zero the bootstrap term on the final step of an episode.
    pub terminal_mask: bool,
    /// Games between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for Td3Hyper {
    fn default() -> Self {
        Self {
            discount: 0.99,
            tau: 0.05,
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_frequency: 60,
            exploration_noise: 0.1,
            batch: 512,
            lr: 3e-4,
            n_games: 50_000,
            train_period: 100,
            random_decay: 0.99,
            random_decay_period: 2000,
            random_init: 1.0,
            buffer_size: 30_000,
            terminal_mask: false,
            checkpoint_every: 0,
        }
    }
}

impl Td3Hyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.discount > 0.0
            && self.discount < 1.0
            && self.tau > 0.0
            && self.tau <= 1.0
            && self.policy_noise >= 0.0
            && self.noise_clip >= 0.0
            && self.exploration_noise >= 0.0
            && self.policy_frequency >= 1
            && self.train_period >= 1
            && self.random_decay_period >= 1
            && self.batch >= 1
            && self.buffer_size >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid TD3 hyperparameters {self:?}")))
        }
    }
}

fn tensor2(data: &[f64]) -> Tensor {
    Tensor::from_vec(&[data.len() / 2, 2], data.to_vec()).expect("even length")
}

/// Bootstrapped regression targets for a sampled batch.
pub fn td3_target(batch: &Batch, ac: &ActorCritic, hyper: &Td3Hyper, rng: &mut RngStream) -> Result<Vec<f64>> {
    let c_max = ac.actor.c_max;
    let q_next = tensor2(&batch.q_next);
    let mut a_next = ac.actor_target.forward(&q_next)?;
    for v in a_next.data_mut() {
        let eps = (hyper.policy_noise * rng.normal()).clamp(-hyper.noise_clip, hyper.noise_clip);
        *v = (*v + eps).clamp(-c_max, c_max);
    }
    let q1 = ac.critic1_target.forward(&q_next, &a_next)?;
    let q2 = ac.critic2_target.forward(&q_next, &a_next)?;
    Ok((0..batch.len())
        .map(|i| {
            let mask = if hyper.terminal_mask && batch.done[i] { 0.0 } else { 1.0 };
            batch.reward[i] + hyper.discount * mask * q1.data()[i].min(q2.data()[i])
        })
        .collect())
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn soft_update(target: &mut ParameterStore, online: &ParameterStore, tau: f64) -> Result<()> {
    target.soft_update_from(online, tau)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    /// Present on delayed policy steps only.
    pub actor_loss: Option<f64>,
}

/// Critic regression on one sampled batch; every `policy_frequency`-th call
/// also takes an actor step and soft-updates all targets.
pub fn td3_update(
    buffer: &ReplayBuffer,
    ac: &mut ActorCritic,
    hyper: &Td3Hyper,
    rng: &mut RngStream,
) -> Result<UpdateStats> {
    let batch = buffer.sample(hyper.batch, rng)?;
    ac.total_it += 1;
    let y = td3_target(&batch, ac, hyper, rng)?;
    let opt = OptimHyper::adam(hyper.lr);
    let n = batch.len();

    let mut g = Graph::new();
    let q = g.input(tensor2(&batch.q));
    let a = g.input(tensor2(&batch.a));
    let yv = g.input(Tensor::from_vec(&[n, 1], y)?);
    let q1 = ac.critic1.forward_graph(&mut g, &ac.critic1.store, q, a)?;
    let q2 = ac.critic2.forward_graph(&mut g, &ac.critic2.store, q, a)?;
    let d1 = g.sub(q1, yv)?;
    let d2 = g.sub(q2, yv)?;
    let s1 = g.square(d1);
    let s2 = g.square(d2);
    let l1 = g.mean(s1);
    let l2 = g.mean(s2);
    let loss = g.add(l1, l2)?;
    let critic_loss = g.value(loss).item();
    if !critic_loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            value: critic_loss,
            context: format!("critic update {}", ac.total_it),
        });
    }
    let grads = g.backward(loss)?;
    optimizer_step(&mut ac.critic1.store, &grads, &opt)?;
    optimizer_step(&mut ac.critic2.store, &grads, &opt)?;

    let mut actor_loss = None;
    if ac.total_it.is_multiple_of(hyper.policy_frequency) {
        let mut g = Graph::new();
        let q = g.input(tensor2(&batch.q));
        let pi = ac.actor.forward_graph(&mut g, &ac.actor.store, q)?;
        let v = ac.critic1.forward_graph(&mut g, &ac.critic1.store, q, pi)?;
        let m = g.mean(v);
        let loss = g.scale(m, -1.0);
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                value,
                context: format!("actor update {}", ac.total_it),
            });
        }
        let grads = g.backward(loss)?;
        optimizer_step(&mut ac.actor.store, &grads, &opt)?;
        actor_loss = Some(value);
        soft_update(&mut ac.actor_target.store, &ac.actor.store, hyper.tau)?;
        soft_update(&mut ac.critic1_target.store, &ac.critic1.store, hyper.tau)?;
        soft_update(&mut ac.critic2_target.store, &ac.critic2.store, hyper.tau)?;
    }
    Ok(UpdateStats {
        critic_loss,
        actor_loss,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GameRecord {
    pub game: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub success: bool,
    /// Mean over the game's critic updates.
    pub critic_loss: Option<f64>,
    /// Last actor loss seen in the game.
    pub actor_loss: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub games: Vec<GameRecord>,
    pub updates: u64,
    pub rounds: u64,
    pub random_prob: f64,
    pub blow_ups: usize,
}

impl TrainReport {
    /// Success rate over the last `window` games.
    pub fn rolling_success(&self, window: usize) -> f64 {
        let tail = &self.games[self.games.len().saturating_sub(window)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().filter(|g| g.success).count() as f64 / tail.len() as f64
    }
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// CSV sink for per-game records.
    pub log: Option<&'a mut dyn Write>,
    pub checkpoint_dir: Option<&'a Path>,
    pub on_game: Option<&'a mut dyn FnMut(&GameRecord, &TrainReport)>,
}

const STREAM_INIT: u64 = 0;
const STREAM_ENV: u64 = 1;
const STREAM_ACT: u64 = 2;
const STREAM_UPDATE: u64 = 3;

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v}"))
}

/// Runs `hyper.n_games` episodes from `env.q0`, training as it goes.
pub fn train_td3(env: &Env, hyper: &Td3Hyper, seed: u64, opts: TrainOptions<'_>) -> Result<(ActorCritic, TrainReport)> {
    env.validate()?;
    hyper.validate()?;
    let TrainOptions {
        mut log,
        checkpoint_dir,
        mut on_game,
    } = opts;
    let mut ac = ActorCritic::new(env.c_max, &mut RngStream::new(seed, STREAM_INIT));
    let mut env_rng = RngStream::new(seed, STREAM_ENV);
    let mut act_rng = RngStream::new(seed, STREAM_ACT);
    let mut upd_rng = RngStream::new(seed, STREAM_UPDATE);
    let mut buffer = ReplayBuffer::new(hyper.buffer_size);
    let mut report = TrainReport {
        random_prob: hyper.random_init,
        ..Default::default()
    };
    if let Some(w) = log.as_mut() {
        writeln!(w, "game,return,success,critic_loss,actor_loss")?;
    }
    let save = |ac: &ActorCritic, report: &TrainReport, dir: &Path| {
        ac.save(
            dir,
            serde_json::json!({
                "env": env,
                "hyper": hyper,
                "seed": seed,
                "games": report.games.len(),
                "rounds": report.rounds,
                "random_prob": report.random_prob,
            }),
        )
    };

    for game in 0..hyper.n_games {
        let mut state = EnvState::reset(env);
        let mut ret = 0.0;
        let mut success = false;
        let mut closs_sum = 0.0;
        let mut closs_n = 0usize;
        let mut actor_loss = None;
        for _ in 0..env.episode_length {
            let action = if act_rng.uniform() < report.random_prob {
                [
                    act_rng.uniform_range(-env.c_max, env.c_max),
                    act_rng.uniform_range(-env.c_max, env.c_max),
                ]
            } else {
                let a = ac.actor.act(state.q);
                env.clamp_action([
                    a[0] + hyper.exploration_noise * act_rng.normal(),
                    a[1] + hyper.exploration_noise * act_rng.normal(),
                ])
            };
            let out = env_step(&mut state, action, env, &mut env_rng);
            buffer.push(out.transition);
            ret += out.transition.reward;
            success |= out.transition.q_next.x > env.wells.transition_x_threshold;
            report.rounds += 1;
            if report.rounds.is_multiple_of(hyper.random_decay_period) {
                report.random_prob *= hyper.random_decay;
            }
            if report.rounds.is_multiple_of(hyper.train_period) && buffer.len() >= hyper.batch {
                let stats = td3_update(&buffer, &mut ac, hyper, &mut upd_rng)?;
                report.updates += 1;
                closs_sum += stats.critic_loss;
                closs_n += 1;
                if stats.actor_loss.is_some() {
                    actor_loss = stats.actor_loss;
                }
            }
            if out.blew_up {
                report.blow_ups += 1;
                break;
            }
        }
        let rec = GameRecord {
            game,
            ret,
            success,
            critic_loss: (closs_n > 0).then(|| closs_sum / closs_n as f64),
            actor_loss,
        };
        if let Some(w) = log.as_mut() {
            writeln!(
                w,
                "{},{},{},{},{}",
                game,
                ret,
                u8::from(success),
                fmt_opt(rec.critic_loss),
                fmt_opt(rec.actor_loss)
            )?;
        }
        report.games.push(rec);
        if let Some(cb) = on_game.as_mut() {
            cb(&rec, &report);
        }
        if let Some(dir) = checkpoint_dir {
            if hyper.checkpoint_every > 0 && (game + 1) % hyper.checkpoint_every == 0 {
                save(&ac, &report, dir)?;
            }
        }
    }
    if let Some(w) = log.as_mut() {
        w.flush()?;
    }
    if let Some(dir) = checkpoint_dir {
        save(&ac, &report, dir)?;
    }
    Ok((ac, report))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    pub trajectory: Trajectory,
    /// Some `x_k` past the transition threshold.
    pub success: bool,
    /// Some `q_k` inside the B disc.
    pub reached_b: bool,
    pub ret: f64,
    pub blew_up: bool,
}

/// Deterministic policy run of `env.episode_length` steps from `env.q0`.
pub fn rollout(actor: &Actor, env: &Env, rng: &mut RngStream) -> RolloutResult {
    let mut state = EnvState::reset(env);
    let mut positions = Vec::with_capacity(env.episode_length + 1);
    let mut noises = Vec::with_capacity(env.episode_length);
    positions.push(state.q);
    let mut ret = 0.0;
    let mut blew_up = false;
    for _ in 0..env.episode_length {
        let a = actor.act(state.q);
        let out = env_step(&mut state, a, env, rng);
        if out.blew_up {
            blew_up = true;
            break;
        }
        ret += out.transition.reward;
        positions.push(out.transition.q_next);
        noises.push(out.transition.noise);
    }
    let mut params = env.sim;
    params.n_steps = positions.len() - 1;
    params.seed = rng.seed();
    let trajectory = Trajectory {
        positions,
        params,
        noises: Some(noises),
    };
    let success = classify_trajectory(&trajectory, &env.wells).is_transition();
    let reached_b = trajectory
        .positions
        .iter()
        .any(|q| classify_region(*q, &env.wells) == Region::InB);
    RolloutResult {
        trajectory,
        success,
        reached_b,
        ret,
        blew_up,
    }
}
