use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{intervals_overlap, wilson_interval, Z95};
use crate::error::{Error, Result};
use crate::landscape::Position;
use crate::rng::RngStream;
use crate::tensornet::Tensor;
use crate::tpsrl::{rollout, Actor, ActorCritic, Env};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub success_count: usize,
    /// Rollouts that visited the B disc.
    pub success_count_b: usize,
    pub success_rate: f64,
    pub success_interval: (f64, f64),
    pub mean_return: f64,
    pub std_return: f64,
    pub blow_ups: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_rollouts: usize,
    pub seed: u64,
    pub policy: RolloutSummary,
    /// The same rollouts with the force switched off.
    pub baseline: Option<RolloutSummary>,
    /// Wilson intervals of policy and baseline success rates overlap.
    pub indistinguishable_from_baseline: Option<bool>,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn success_count(&self) -> usize {
        self.policy.success_count
    }

    pub fn success_rate(&self) -> f64 {
        self.policy.success_rate
    }
}

fn summarize(actor: &Actor, env: &Env, n: usize, seed: u64) -> RolloutSummary {
    let runs: Vec<(bool, bool, f64, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let r = rollout(actor, env, &mut RngStream::new(seed, i as u64));
            (r.success, r.reached_b, r.ret, r.blew_up)
        })
        .collect();
    let success_count = runs.iter().filter(|r| r.0).count();
    let mean = runs.iter().map(|r| r.2).sum::<f64>() / n as f64;
    let var = runs.iter().map(|r| (r.2 - mean).powi(2)).sum::<f64>() / n as f64;
    RolloutSummary {
        success_count,
        success_count_b: runs.iter().filter(|r| r.1).count(),
        success_rate: success_count as f64 / n as f64,
        success_interval: wilson_interval(success_count, n, Z95),
        mean_return: mean,
        std_return: var.sqrt(),
        blow_ups: runs.iter().filter(|r| r.3).count(),
    }
}

/// `n_rollouts` deterministic-policy episodes; rollout `i` uses stream `i` of
/// `seed`. With `baseline`, the same noise drives a zero force for a paired
/// comparison.
pub fn evaluate_actor(actor: &Actor, env: &Env, n_rollouts: usize, seed: u64, baseline: bool) -> Result<EvalReport> {
    if n_rollouts == 0 {
        return Err(Error::EmptyEvaluation);
    }
    env.validate()?;
    let policy = summarize(actor, env, n_rollouts, seed);
    let baseline = baseline.then(|| {
        let mut zero = actor.clone();
        zero.zero_weights();
        summarize(&zero, env, n_rollouts, seed)
    });
    Ok(EvalReport {
        n_rollouts,
        seed,
        indistinguishable_from_baseline: baseline
            .as_ref()
            .map(|b| intervals_overlap(b.success_interval, policy.success_interval)),
        policy,
        baseline,
        config: serde_json::to_value(env)?,
    })
}

/// Loads the policy of a checkpoint directory and evaluates it.
pub fn evaluate_policy(ckpt: &Path, env: &Env, n_rollouts: usize, seed: u64) -> Result<EvalReport> {
    if n_rollouts == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let actor = ActorCritic::load_actor(ckpt)?;
    evaluate_actor(&actor, env, n_rollouts, seed, true)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    /// Row-major points, `x` varying fastest; a single point sits at the low end.
    pub fn points(&self) -> Vec<Position> {
        let axis = |(lo, hi): (f64, f64), n: usize| -> Vec<f64> {
            if n == 1 {
                vec![lo]
            } else {
                (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
            }
        };
        let xs = axis(self.x_range, self.nx);
        let ys = axis(self.y_range, self.ny);
        ys.iter().flat_map(|&y| xs.iter().map(move |&x| Position::new(x, y))).collect()
    }
}

pub const POLICY_FIELD_HEADER: &str = "x,y,P_x,P_y,Q";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldRow {
    pub q: Position,
    pub action: [f64; 2],
    /// First critic at `(q, P(q))`.
    pub value: f64,
}

pub fn policy_field(ac: &ActorCritic, grid: &GridSpec) -> Result<Vec<FieldRow>> {
    let pts = grid.points();
    if pts.is_empty() {
        return Ok(Vec::new());
    }
    let q = Tensor::from_vec(&[pts.len(), 2], pts.iter().flat_map(|p| [p.x, p.y]).collect())?;
    let a = ac.actor.forward(&q)?;
    let v = ac.critic1.forward(&q, &a)?;
    Ok(pts
        .iter()
        .enumerate()
        .map(|(i, &p)| FieldRow {
            q: p,
            action: [a.data()[2 * i], a.data()[2 * i + 1]],
            value: v.data()[i],
        })
        .collect())
}

/// Writes the policy and critic over `grid` with header [`POLICY_FIELD_HEADER`].
pub fn export_policy_field<W: Write>(ac: &ActorCritic, grid: &GridSpec, w: &mut W) -> Result<Vec<FieldRow>> {
    let rows = policy_field(ac, grid)?;
    writeln!(w, "{POLICY_FIELD_HEADER}")?;
    for r in &rows {
        writeln!(w, "{},{},{},{},{}", r.q.x, r.q.y, r.action[0], r.action[1], r.value)?;
    }
    Ok(rows)
}

/// Mean `|P(q)|` over rows within `radius` of `center`; `None` if no row is.
pub fn mean_action_magnitude_near(rows: &[FieldRow], center: Position, radius: f64) -> Option<f64> {
    let near: Vec<f64> = rows
        .iter()
        .filter(|r| r.q.distance(&center) < radius)
        .map(|r| r.action[0].hypot(r.action[1]))
        .collect();
    (!near.is_empty()).then(|| near.iter().sum::<f64>() / near.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_ac() -> ActorCritic {
        let mut ac = ActorCritic::new(10.0, &mut RngStream::new(1, 0));
        ac.actor.zero_weights();
        ac
    }

    fn short_env() -> Env {
        Env {
            episode_length: 100,
            ..Env::default()
        }
    }

    #[test]
    fn zero_rollouts_is_an_error() {
        let ac = zero_ac();
        assert!(matches!(
            evaluate_actor(&ac.actor, &short_env(), 0, 0, false),
            Err(Error::EmptyEvaluation)
        ));
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            evaluate_policy(dir.path(), &short_env(), 0, 0),
            Err(Error::EmptyEvaluation)
        ));
    }

    #[test]
    fn zero_actor_matches_baseline() {
        let ac = zero_ac();
        let r = evaluate_actor(&ac.actor, &short_env(), 50, 4, true).unwrap();
        assert!(r.policy.success_count <= r.n_rollouts);
        assert_eq!(Some(&r.policy), r.baseline.as_ref());
        assert_eq!(r.indistinguishable_from_baseline, Some(true));
    }

    #[test]
    fn evaluation_is_reproducible() {
        let ac = ActorCritic::new(10.0, &mut RngStream::new(2, 0));
        let dir = tempfile::tempdir().unwrap();
        ac.save(dir.path(), serde_json::json!({})).unwrap();
        let a = evaluate_policy(dir.path(), &short_env(), 20, 9).unwrap();
        let b = evaluate_policy(dir.path(), &short_env(), 20, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_checkpoint_kind_is_a_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let vae = crate::vae::VaeModel::new(
            crate::vae::VaeArch::tiny(crate::vae::VaeVariant::Bottleneck2D),
            &mut RngStream::new(0, 0),
        )
        .unwrap();
        vae.save(dir.path()).unwrap();
        assert!(matches!(
            evaluate_policy(dir.path(), &short_env(), 5, 0),
            Err(Error::CheckpointMismatch(_))
        ));
    }

    #[test]
    fn two_by_two_grid() {
        let grid = GridSpec {
            x_range: (-1.0, 1.0),
            y_range: (0.0, 1.0),
            nx: 2,
            ny: 2,
        };
        let mut out = Vec::new();
        let rows = export_policy_field(&zero_ac(), &grid, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], POLICY_FIELD_HEADER);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 5));
        assert!(rows.iter().all(|r| r.action == [0.0, 0.0]));
        assert_eq!(rows[1].q, Position::new(1.0, 0.0));
    }

    #[test]
    fn magnitude_near_a_point() {
        let rows = vec![
            FieldRow {
                q: Position::new(0.0, 0.0),
                action: [3.0, 4.0],
                value: 0.0,
            },
            FieldRow {
                q: Position::new(5.0, 0.0),
                action: [1.0, 0.0],
                value: 0.0,
            },
        ];
        assert_eq!(mean_action_magnitude_near(&rows, Position::ORIGIN, 1.0), Some(5.0));
        assert_eq!(mean_action_magnitude_near(&rows, Position::new(9.0, 9.0), 1.0), None);
    }
}
