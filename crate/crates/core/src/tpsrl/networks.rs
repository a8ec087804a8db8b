use std::path::Path;

use crate::error::{Error, Result};
use crate::landscape::Position;
use crate::rng::RngStream;
use crate::tensornet::{activation, checkpoint, dense_forward, Activation, Dense, Graph, ParameterStore, Tensor, Var};

/// Policy `2 -> 128 -> 256 -> 2` with ReLU, ReLU, Tanh, scaled by `c_max`.
#[derive(Clone, Debug)]
pub struct Actor {
    pub store: ParameterStore,
    pub layers: [Dense; 3],
    pub c_max: f64,
}

/// Action value `(q, a) -> 256 -> 256 -> 1` with ReLU, ReLU, affine.
#[derive(Clone, Debug)]
pub struct Critic {
    pub store: ParameterStore,
    pub layers: [Dense; 3],
}

fn mlp_eval(store: &ParameterStore, layers: &[Dense; 3], x: Tensor, last: Option<Activation>) -> Result<Tensor> {
    let mut h = x;
    for (i, l) in layers.iter().enumerate() {
        h = dense_forward(&h, store.value(l.w), Some(store.value(l.b)))?;
        let act = if i < 2 { Some(Activation::Relu) } else { last };
        if let Some(a) = act {
            h = activation(&h, a);
        }
    }
    Ok(h)
}

fn mlp_graph(
    g: &mut Graph,
    store: &ParameterStore,
    layers: &[Dense; 3],
    x: Var,
    last: Option<Activation>,
) -> Result<Var> {
    let mut h = x;
    for (i, l) in layers.iter().enumerate() {
        h = l.forward(g, store, h)?;
        let act = if i < 2 { Some(Activation::Relu) } else { last };
        if let Some(a) = act {
            h = g.activation(h, a);
        }
    }
    Ok(h)
}

impl Actor {
    pub fn new(c_max: f64, rng: &mut RngStream) -> Self {
        let mut store = ParameterStore::new();
        let layers = [
            Dense::new(&mut store, "l1", 2, 128, rng),
            Dense::new(&mut store, "l2", 128, 256, rng),
            Dense::new(&mut store, "l3", 256, 2, rng),
        ];
        Self { store, layers, c_max }
    }

    /// Records the policy on `(batch, 2)` states using parameters from `s`.
    pub fn forward_graph(&self, g: &mut Graph, s: &ParameterStore, q: Var) -> Result<Var> {
        let h = mlp_graph(g, s, &self.layers, q, Some(Activation::Tanh))?;
        Ok(g.scale(h, self.c_max))
    }

    /// Actions for `(batch, 2)` states.
    pub fn forward(&self, q: &Tensor) -> Result<Tensor> {
        let h = mlp_eval(&self.store, &self.layers, q.clone(), Some(Activation::Tanh))?;
        Ok(h.map(|v| self.c_max * v))
    }

    pub fn act(&self, q: Position) -> [f64; 2] {
        let out = self
            .forward(&Tensor::from_vec(&[1, 2], vec![q.x, q.y]).expect("sized"))
            .expect("fixed shapes");
        [out.data()[0], out.data()[1]]
    }

    pub fn zero_weights(&mut self) {
        let n = self.store.num_trainable();
        self.store.set_flat_values(&vec![0.0; n]).expect("sized");
    }
}

impl Critic {
    pub fn new(rng: &mut RngStream) -> Self {
        let mut store = ParameterStore::new();
        let layers = [
            Dense::new(&mut store, "l1", 4, 256, rng),
            Dense::new(&mut store, "l2", 256, 256, rng),
            Dense::new(&mut store, "l3", 256, 1, rng),
        ];
        Self { store, layers }
    }

    pub fn forward_graph(&self, g: &mut Graph, s: &ParameterStore, q: Var, a: Var) -> Result<Var> {
        let x = g.concat(q, a)?;
        mlp_graph(g, s, &self.layers, x, None)
    }

    /// Values for `(batch, 2)` states and `(batch, 2)` actions, shape `(batch, 1)`.
    pub fn forward(&self, q: &Tensor, a: &Tensor) -> Result<Tensor> {
        if q.ndim() != 2 || a.ndim() != 2 || q.dim(0) != a.dim(0) || q.dim(1) != 2 || a.dim(1) != 2 {
            return Err(Error::shape(format!("critic inputs {:?} and {:?}", q.shape(), a.shape())));
        }
        let n = q.dim(0);
        let mut x = Vec::with_capacity(4 * n);
        for i in 0..n {
            x.extend_from_slice(q.row(i));
            x.extend_from_slice(a.row(i));
        }
        mlp_eval(&self.store, &self.layers, Tensor::from_vec(&[n, 4], x)?, None)
    }
}

/// Online networks, their delayed targets and the update counter.
#[derive(Clone, Debug)]
pub struct ActorCritic {
    pub actor: Actor,
    pub critic1: Critic,
    pub critic2: Critic,
    pub actor_target: Actor,
    pub critic1_target: Critic,
    pub critic2_target: Critic,
    /// Number of `td3_update` calls so far.
    pub total_it: u64,
}

const STORES: [&str; 6] = ["actor", "critic1", "critic2", "actor_target", "critic1_target", "critic2_target"];

impl ActorCritic {
    pub fn new(c_max: f64, rng: &mut RngStream) -> Self {
        let actor = Actor::new(c_max, rng);
        let critic1 = Critic::new(rng);
        let critic2 = Critic::new(rng);
        Self {
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            total_it: 0,
        }
    }

    pub fn save(&self, dir: &Path, extra: serde_json::Value) -> Result<()> {
        let mut extra = extra;
        if let Some(obj) = extra.as_object_mut() {
            obj.insert("kind".into(), "td3".into());
            obj.insert("c_max".into(), self.actor.c_max.into());
            obj.insert("total_it".into(), self.total_it.into());
        }
        checkpoint::save(
            dir,
            &[
                (STORES[0], &self.actor.store),
                (STORES[1], &self.critic1.store),
                (STORES[2], &self.critic2.store),
                (STORES[3], &self.actor_target.store),
                (STORES[4], &self.critic1_target.store),
                (STORES[5], &self.critic2_target.store),
            ],
            true,
            extra,
        )
    }

    /// Restores every network; returns the checkpoint's metadata.
    pub fn load(dir: &Path) -> Result<(Self, serde_json::Value)> {
        let manifest = checkpoint::read_manifest(dir)?;
        if manifest.extra.get("kind").and_then(|k| k.as_str()) != Some("td3") {
            return Err(Error::CheckpointMismatch("not a TD3 checkpoint".into()));
        }
        let c_max = manifest.extra["c_max"].as_f64().unwrap_or(10.0);
        let mut ac = ActorCritic::new(c_max, &mut RngStream::new(0, 0));
        ac.total_it = manifest.extra["total_it"].as_u64().unwrap_or(0);
        checkpoint::load_into(
            dir,
            &mut [
                (STORES[0], &mut ac.actor.store),
                (STORES[1], &mut ac.critic1.store),
                (STORES[2], &mut ac.critic2.store),
                (STORES[3], &mut ac.actor_target.store),
                (STORES[4], &mut ac.critic1_target.store),
                (STORES[5], &mut ac.critic2_target.store),
            ],
        )?;
        Ok((ac, manifest.extra))
    }

    /// Loads only the policy from a checkpoint.
    pub fn load_actor(dir: &Path) -> Result<Actor> {
        let manifest = checkpoint::read_manifest(dir)?;
        if manifest.extra.get("kind").and_then(|k| k.as_str()) != Some("td3") {
            return Err(Error::CheckpointMismatch("not a TD3 checkpoint".into()));
        }
        let c_max = manifest.extra["c_max"].as_f64().unwrap_or(10.0);
        let mut actor = Actor::new(c_max, &mut RngStream::new(0, 0));
        checkpoint::load_into(dir, &mut [(STORES[0], &mut actor.store)])?;
        Ok(actor)
    }
}
