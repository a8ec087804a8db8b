//! Convolutional variational autoencoder over fixed-length trajectories.
//!
//! Trajectories enter as `(batch, 2, T)` tensors (channel 0 is `x`, channel 1
//! is `y`). The encoder is a stack of strided 1D convolutions; the decoder is
//! its transposed mirror. Two bottlenecks are supported: a flattened affine
//! head to a 2D latent, and a per-position head producing a `2 x T_z` latent.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::landscape::Position;
use crate::rng::RngStream;
use crate::tensornet::{
    checkpoint, conv1d_output_length, optimizer_step, BatchNorm1d, Conv1d, ConvSpec, ConvTranspose1d, Dense,
    Graph, Mode, OptimHyper, ParameterStore, Tensor, Var,
};

pub const TRAJECTORY_LEN: usize = 1984;
pub const LATENT_DIM: usize = 2;
pub const SIGMA_THETA: f64 = 1.2e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VaeVariant {
    /// Flattened encoder output mapped to a single 2D latent.
    #[serde(alias = "naive")]
    Bottleneck2D,
    /// One 2D latent per encoder output position.
    #[serde(alias = "wide")]
    Wide31x2,
}

impl std::str::FromStr for VaeVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" | "bottleneck2d" | "Bottleneck2D" => Ok(Self::Bottleneck2D),
            "wide" | "wide31x2" | "Wide31x2" => Ok(Self::Wide31x2),
            _ => Err(Error::InvalidArgument(format!("unknown VAE variant {s}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub spec: ConvSpec,
    pub batch_norm: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeArch {
    pub variant: VaeVariant,
    pub input_len: usize,
    pub encoder_layers: Vec<EncoderLayer>,
}

impl VaeArch {
    /// The six-layer stack over length-1984 inputs.
    pub fn standard(variant: VaeVariant) -> Self {
        let layer = |m_in, m_out, kernel, padding, batch_norm| EncoderLayer {
            spec: ConvSpec::new(m_in, m_out, kernel, 2, padding),
            batch_norm,
        };
        Self {
            variant,
            input_len: TRAJECTORY_LEN,
            encoder_layers: vec![
                layer(2, 30, 4, 1, true),
                layer(30, 20, 4, 1, true),
                layer(20, 15, 4, 1, true),
                layer(15, 10, 4, 1, true),
                layer(10, 20, 4, 1, true),
                layer(20, 20, 2, 0, false),
            ],
        }
    }

    /// Two-layer stack over length-32 inputs, for gradient checks.
    pub fn tiny(variant: VaeVariant) -> Self {
        Self {
            variant,
            input_len: 32,
            encoder_layers: vec![
                EncoderLayer {
                    spec: ConvSpec::new(2, 4, 4, 2, 1),
                    batch_norm: true,
                },
                EncoderLayer {
                    spec: ConvSpec::new(4, 3, 2, 2, 0),
                    batch_norm: false,
                },
            ],
        }
    }

    /// Output length after each encoder layer.
    pub fn intermediate_lengths(&self) -> Result<Vec<usize>> {
        let mut t = self.input_len;
        let mut out = Vec::with_capacity(self.encoder_layers.len());
        for l in &self.encoder_layers {
            t = conv1d_output_length(t, &l.spec)?;
            out.push(t);
        }
        Ok(out)
    }

    pub fn latent_len(&self) -> Result<usize> {
        Ok(*self.intermediate_lengths()?.last().unwrap_or(&self.input_len))
    }

    pub fn encoder_channels(&self) -> usize {
        self.encoder_layers.last().map_or(2, |l| l.spec.m_out)
    }

    /// Number of input positions one encoder output depends on.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for l in &self.encoder_layers {
            rf += (l.spec.kernel - 1) * jump;
            jump *= l.spec.stride;
        }
        rf
    }

    /// Input distance between the windows of consecutive outputs.
    pub fn jump(&self) -> usize {
        self.encoder_layers.iter().map(|l| l.spec.stride).product()
    }

    /// Shared span of two consecutive windows.
    pub fn overlap(&self) -> usize {
        self.receptive_field().saturating_sub(self.jump())
    }

    /// Shape of one latent sample (without batch axis).
    pub fn latent_shape(&self) -> Result<Vec<usize>> {
        Ok(match self.variant {
            VaeVariant::Bottleneck2D => vec![LATENT_DIM],
            VaeVariant::Wide31x2 => vec![LATENT_DIM, self.latent_len()?],
        })
    }
}

#[derive(Clone, Debug)]
enum Head {
    Flat(Dense),
    PerPosition(Conv1d),
}

#[derive(Clone, Debug)]
enum DecoderInput {
    Flat(Dense),
    PerPosition(Conv1d),
}

/// Encoder, decoder and the fixed decoder scale.
#[derive(Clone, Debug)]
pub struct VaeModel {
    pub arch: VaeArch,
    pub store: ParameterStore,
    pub sigma_theta: f64,
    /// Use the `1/2` prefactor of the Gaussian KL divergence.
    pub kl_half: bool,
    enc_convs: Vec<Conv1d>,
    enc_bns: Vec<Option<BatchNorm1d>>,
    head: Head,
    dec_in: DecoderInput,
    dec_convs: Vec<ConvTranspose1d>,
    dec_bns: Vec<Option<BatchNorm1d>>,
}

/// Closed-form `KL(N(mu, sigma^2) || N(0, 1))` summed over components.
pub fn kl_divergence(mu: &[f64], sigma: &[f64], half: bool) -> f64 {
    let s: f64 = mu
        .iter()
        .zip(sigma)
        .map(|(m, s)| m * m + s * s - 1.0 - (s * s).ln())
        .sum();
    if half {
        0.5 * s
    } else {
        s
    }
}

/// `log N(q; mu, sigma^2 I)` over flattened vectors.
pub fn gaussian_log_likelihood(q: &[f64], mu: &[f64], sigma: f64) -> f64 {
    let d = q.len() as f64;
    let r2: f64 = q.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * d * (2.0 * PI).ln() - d * sigma.ln() - r2 / (2.0 * sigma * sigma)
}

pub fn reparametrize(mu: &Tensor, sigma: &Tensor, eps: &Tensor) -> Result<Tensor> {
    if mu.shape() != sigma.shape() || mu.shape() != eps.shape() {
        return Err(Error::shape(format!(
            "reparametrize: {:?} {:?} {:?}",
            mu.shape(),
            sigma.shape(),
            eps.shape()
        )));
    }
    let data = mu
        .data()
        .iter()
        .zip(sigma.data())
        .zip(eps.data())
        .map(|((m, s), e)| m + s * e)
        .collect();
    Tensor::from_vec(mu.shape(), data)
}

/// Stacks the first `len` positions of each trajectory into `(batch, 2, len)`.
pub fn trajectories_tensor<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>, len: usize) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut n = 0;
    for t in trajs {
        if t.positions.len() < len {
            return Err(Error::shape(format!("trajectory has {} points, need {len}", t.positions.len())));
        }
        data.extend(t.positions[..len].iter().map(|p| p.x));
        data.extend(t.positions[..len].iter().map(|p| p.y));
        n += 1;
    }
    Tensor::from_vec(&[n, 2, len], data)
}

/// Inverse of [`trajectories_tensor`] for one batch row.
pub fn tensor_to_positions(t: &Tensor, row: usize) -> Vec<Position> {
    let len = t.dim(2);
    let r = t.row(row);
    (0..len).map(|i| Position::new(r[i], r[len + i])).collect()
}

impl VaeModel {
    pub fn new(arch: VaeArch, rng: &mut RngStream) -> Result<Self> {
        let t_z = arch.latent_len()?;
        let c_z = arch.encoder_channels();
        let mut store = ParameterStore::new();
        let mut enc_convs = Vec::new();
        let mut enc_bns = Vec::new();
        for (i, l) in arch.encoder_layers.iter().enumerate() {
            enc_convs.push(Conv1d::new(&mut store, &format!("enc.conv{i}"), l.spec, rng));
            enc_bns.push(
                l.batch_norm
                    .then(|| BatchNorm1d::new(&mut store, &format!("enc.bn{i}"), l.spec.m_out)),
            );
        }
        let (head, dec_in) = match arch.variant {
            VaeVariant::Bottleneck2D => (
                Head::Flat(Dense::new(&mut store, "head", c_z * t_z, 2 * LATENT_DIM, rng)),
                DecoderInput::Flat(Dense::new(&mut store, "dec.in", LATENT_DIM, c_z * t_z, rng)),
            ),
            VaeVariant::Wide31x2 => (
                Head::PerPosition(Conv1d::new(
                    &mut store,
                    "head",
                    ConvSpec::new(c_z, 2 * LATENT_DIM, 1, 1, 0),
                    rng,
                )),
                DecoderInput::PerPosition(Conv1d::new(
                    &mut store,
                    "dec.in",
                    ConvSpec::new(LATENT_DIM, c_z, 1, 1, 0),
                    rng,
                )),
            ),
        };
        let mut dec_convs = Vec::new();
        let mut dec_bns = Vec::new();
        for (i, l) in arch.encoder_layers.iter().enumerate().rev() {
            dec_convs.push(ConvTranspose1d::new(&mut store, &format!("dec.tconv{i}"), l.spec, rng));
            let norm = i > 0 && arch.encoder_layers[i - 1].batch_norm;
            dec_bns.push(norm.then(|| BatchNorm1d::new(&mut store, &format!("dec.bn{i}"), l.spec.m_in)));
        }
        Ok(Self {
            arch,
            store,
            sigma_theta: SIGMA_THETA,
            kl_half: true,
            enc_convs,
            enc_bns,
            head,
            dec_in,
            dec_convs,
            dec_bns,
        })
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.ndim() != 3 || x.dim(1) != 2 || x.dim(2) != self.arch.input_len {
            return Err(Error::shape(format!(
                "VAE expects (batch, 2, {}), got {:?}",
                self.arch.input_len,
                x.shape()
            )));
        }
        Ok(())
    }

    fn check_latent(&self, z: &Tensor) -> Result<()> {
        let mut want = vec![z.shape().first().copied().unwrap_or(0)];
        want.extend(self.arch.latent_shape()?);
        if z.shape() != want.as_slice() {
            return Err(Error::shape(format!("latent must be {want:?}, got {:?}", z.shape())));
        }
        Ok(())
    }

    /// Records the encoder; returns `(mu, log_sigma)`.
    /// `s` must share this model's layout (the model's own store or a copy).
    pub fn encode_graph(&self, g: &mut Graph, s: &ParameterStore, x: Var, mode: Mode) -> Result<(Var, Var)> {
        let mut h = x;
        for (conv, bn) in self.enc_convs.iter().zip(&self.enc_bns) {
            h = conv.forward(g, s, h)?;
            h = g.relu(h);
            if let Some(bn) = bn {
                h = bn.forward(g, s, h, mode)?;
            }
        }
        let out = match &self.head {
            Head::Flat(d) => {
                let b = g.value(h).dim(0);
                let n = g.value(h).len() / b.max(1);
                let flat = g.reshape(h, &[b, n])?;
                d.forward(g, s, flat)?
            }
            Head::PerPosition(c) => c.forward(g, s, h)?,
        };
        let mu = g.narrow(out, 0, LATENT_DIM)?;
        let log_sigma = g.narrow(out, LATENT_DIM, LATENT_DIM)?;
        Ok((mu, log_sigma))
    }

    /// The encoder's layer sequence run backwards with each convolution
    /// replaced by its transpose, so blocks read tconv, batch norm, ReLU.
    pub fn decode_graph(&self, g: &mut Graph, s: &ParameterStore, z: Var, mode: Mode) -> Result<Var> {
        let mut h = match &self.dec_in {
            DecoderInput::Flat(d) => {
                let b = g.value(z).dim(0);
                let h = d.forward(g, s, z)?;
                let h = g.relu(h);
                g.reshape(h, &[b, self.arch.encoder_channels(), self.arch.latent_len()?])?
            }
            DecoderInput::PerPosition(c) => {
                let h = c.forward(g, s, z)?;
                g.relu(h)
            }
        };
        let last = self.dec_convs.len() - 1;
        for (i, (tconv, bn)) in self.dec_convs.iter().zip(&self.dec_bns).enumerate() {
            h = tconv.forward(g, s, h)?;
            if let Some(bn) = bn {
                h = bn.forward(g, s, h, mode)?;
            }
            if i < last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    /// Mean-over-batch negative ELBO with one decoder pass per draw in `eps`.
    pub fn elbo_loss_graph(
        &self,
        g: &mut Graph,
        s: &ParameterStore,
        x: &Tensor,
        eps: &[Tensor],
        mode: Mode,
    ) -> Result<Var> {
        self.check_input(x)?;
        if eps.is_empty() {
            return Err(Error::InvalidArgument("ELBO needs at least one draw".into()));
        }
        let batch = x.dim(0) as f64;
        let d = (x.len() / x.dim(0)) as f64;
        let xv = g.input(x.clone());
        let (mu, log_sigma) = self.encode_graph(g, s, xv, mode)?;
        let sigma = g.exp(log_sigma);
        let mut recon = None;
        for e in eps {
            if e.shape() != g.value(mu).shape() {
                return Err(Error::shape(format!(
                    "noise {:?} vs latent {:?}",
                    e.shape(),
                    g.value(mu).shape()
                )));
            }
            let ev = g.input(e.clone());
            let se = g.mul(sigma, ev)?;
            let z = g.add(mu, se)?;
            let xr = self.decode_graph(g, s, z, mode)?;
            let r = g.sub(xv, xr)?;
            let r2 = g.square(r);
            let s = g.sum(r2);
            recon = Some(match recon {
                None => s,
                Some(acc) => g.add(acc, s)?,
            });
        }
        let sig2 = self.sigma_theta * self.sigma_theta;
        let recon = g.scale(recon.expect("non-empty"), 1.0 / (2.0 * sig2 * eps.len() as f64));
        let mu2 = g.square(mu);
        let s2 = g.square(sigma);
        let two_log = g.scale(log_sigma, 2.0);
        let kl = g.add(mu2, s2)?;
        let kl = g.sub(kl, two_log)?;
        let kl = g.add_scalar(kl, -1.0);
        let kl = g.sum(kl);
        let kl = g.scale(kl, if self.kl_half { 0.5 } else { 1.0 });
        let total = g.add(recon, kl)?;
        let total = g.scale(total, 1.0 / batch);
        let constant = 0.5 * d * (2.0 * PI).ln() + d * self.sigma_theta.ln();
        Ok(g.add_scalar(total, constant))
    }

    pub fn elbo_loss(&self, x: &Tensor, eps: &[Tensor], mode: Mode) -> Result<f64> {
        let mut g = Graph::inference();
        let l = self.elbo_loss_graph(&mut g, &self.store, x, eps, mode)?;
        Ok(g.value(l).item())
    }

    /// Posterior mean and standard deviation (eval-mode normalization).
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input(x)?;
        let mut g = Graph::inference();
        let xv = g.input(x.clone());
        let (mu, log_sigma) = self.encode_graph(&mut g, &self.store, xv, Mode::Eval)?;
        Ok((g.value(mu).clone(), g.value(log_sigma).map(f64::exp)))
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.check_latent(z)?;
        let mut g = Graph::inference();
        let zv = g.input(z.clone());
        let out = self.decode_graph(&mut g, &self.store, zv, Mode::Eval)?;
        Ok(g.value(out).clone())
    }

    /// Decodes the posterior mean.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        let (mu, _) = self.encode(x)?;
        self.decode(&mu)
    }

    /// Decodes a single 2D latent point into a trajectory.
    pub fn generate_from_latent(&self, z: [f64; 2]) -> Result<Vec<Position>> {
        if self.arch.variant != VaeVariant::Bottleneck2D {
            return Err(Error::WrongVariant);
        }
        let out = self.decode(&Tensor::from_vec(&[1, 2], z.to_vec())?)?;
        Ok(tensor_to_positions(&out, 0))
    }

    /// Per-row mean squared reconstruction error.
    pub fn reconstruction_mse(&self, x: &Tensor) -> Result<Vec<f64>> {
        let r = self.reconstruct(x)?;
        Ok((0..x.dim(0))
            .map(|i| {
                let (a, b) = (x.row(i), r.row(i));
                a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / a.len() as f64
            })
            .collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let extra = serde_json::json!({
            "kind": "vae",
            "arch": self.arch,
            "sigma_theta": self.sigma_theta,
            "kl_half": self.kl_half,
        });
        checkpoint::save(dir, &[("vae", &self.store)], true, extra)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = checkpoint::read_manifest(dir)?;
        if manifest.extra.get("kind").and_then(|k| k.as_str()) != Some("vae") {
            return Err(Error::CheckpointMismatch("not a VAE checkpoint".into()));
        }
        let arch: VaeArch = serde_json::from_value(manifest.extra["arch"].clone())?;
        let mut model = VaeModel::new(arch, &mut RngStream::new(0, 0))?;
        model.sigma_theta = manifest.extra["sigma_theta"].as_f64().unwrap_or(SIGMA_THETA);
        model.kl_half = manifest.extra["kl_half"].as_bool().unwrap_or(true);
        checkpoint::load_into(dir, &mut [("vae", &mut model.store)])?;
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeTrainHyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub weight_decay: f64,
    /// Monte Carlo draws per sample.
    pub samples: usize,
}

impl Default for VaeTrainHyper {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 1400,
            batch: 64,
            weight_decay: 1e-2,
            samples: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VaeTrainReport {
    /// Mean minibatch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Minibatch AdamW on the negative ELBO. Batches are reshuffled every epoch;
/// a trailing batch of one sample is dropped since batch statistics need two.
pub fn train_vae(
    model: &mut VaeModel,
    data: &Tensor,
    hyper: &VaeTrainHyper,
    rng: &mut RngStream,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<VaeTrainReport> {
    model.check_input(data)?;
    if data.dim(0) == 0 {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let opt = OptimHyper::adamw(hyper.lr, hyper.weight_decay);
    let n = data.dim(0);
    let row = data.len() / n;
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = VaeTrainReport::default();
    let latent = model.arch.latent_shape()?;
    for epoch in 0..hyper.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(hyper.batch.max(1)) {
            if chunk.len() < 2 {
                continue;
            }
            let mut xb = Vec::with_capacity(chunk.len() * row);
            for &i in chunk {
                xb.extend_from_slice(data.row(i));
            }
            let xb = Tensor::from_vec(&[chunk.len(), 2, model.arch.input_len], xb)?;
            let mut eshape = vec![chunk.len()];
            eshape.extend(&latent);
            let eps: Vec<Tensor> = (0..hyper.samples.max(1))
                .map(|_| {
                    let mut e = Tensor::zeros(&eshape);
                    rng.fill_normal(e.data_mut());
                    e
                })
                .collect();
            let mut g = Graph::new();
            let l = model.elbo_loss_graph(&mut g, &model.store, &xb, &eps, Mode::Train)?;
            let value = g.value(l).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    value,
                    context: format!("VAE epoch {epoch} batch {batches}"),
                });
            }
            let grads = g.backward(l)?;
            g.commit_running_stats(&mut model.store);
            optimizer_step(&mut model.store, &grads, &opt)?;
            total += value;
            batches += 1;
        }
        let mean = total / batches.max(1) as f64;
        on_epoch(epoch, mean);
        report.epoch_losses.push(mean);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornet::gradcheck;
    use proptest::prelude::*;

    fn random(shape: &[usize], rng: &mut RngStream) -> Tensor {
        let mut t = Tensor::zeros(shape);
        rng.fill_normal(t.data_mut());
        t
    }

    #[test]
    fn standard_stack_halves_down_to_31() {
        let arch = VaeArch::standard(VaeVariant::Bottleneck2D);
        assert_eq!(arch.intermediate_lengths().unwrap(), vec![992, 496, 248, 124, 62, 31]);
        let ch: Vec<_> = std::iter::once(2)
            .chain(arch.encoder_layers.iter().map(|l| l.spec.m_out))
            .collect();
        assert_eq!(ch, vec![2, 30, 20, 15, 10, 20, 20]);
        assert_eq!(arch.jump(), 64);
    }

    /// Counts input positions reachable from output 0 by walking windows back.
    fn brute_force_receptive_field(arch: &VaeArch) -> usize {
        let mut lo = 0i64;
        let mut hi = 0i64;
        for l in arch.encoder_layers.iter().rev() {
            let (s, k) = (l.spec.stride as i64, l.spec.kernel as i64);
            lo *= s;
            hi = hi * s + k - 1;
        }
        (hi - lo + 1) as usize
    }

    #[test]
    fn receptive_field_matches_window_walk() {
        for arch in [VaeArch::standard(VaeVariant::Bottleneck2D), VaeArch::tiny(VaeVariant::Wide31x2)] {
            assert_eq!(arch.receptive_field(), brute_force_receptive_field(&arch));
        }
        let arch = VaeArch::standard(VaeVariant::Bottleneck2D);
        assert_eq!(arch.overlap(), arch.receptive_field() - 64);
    }

    #[test]
    fn encode_shapes_and_positive_sigma() {
        let mut rng = RngStream::new(1, 0);
        for (variant, want) in [(VaeVariant::Bottleneck2D, vec![3, 2]), (VaeVariant::Wide31x2, vec![3, 2, 31])] {
            let model = VaeModel::new(VaeArch::standard(variant), &mut rng).unwrap();
            let x = random(&[3, 2, 1984], &mut rng);
            let (mu, sigma) = model.encode(&x).unwrap();
            assert_eq!(mu.shape(), want.as_slice());
            assert_eq!(sigma.shape(), want.as_slice());
            assert!(sigma.data().iter().all(|s| *s > 0.0));
            let r = model.reconstruct(&x).unwrap();
            assert_eq!(r.shape(), x.shape());
        }
        let model = VaeModel::new(VaeArch::standard(VaeVariant::Wide31x2), &mut rng).unwrap();
        assert!(matches!(model.encode(&Tensor::zeros(&[1, 2, 1000])), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn sigma_positive_for_many_random_inputs() {
        let mut rng = RngStream::new(2, 0);
        for trial in 0..10 {
            let model = VaeModel::new(VaeArch::tiny(VaeVariant::Bottleneck2D), &mut RngStream::new(trial, 1)).unwrap();
            let x = random(&[100, 2, 32], &mut rng).map(|v| 5.0 * v);
            let (_, sigma) = model.encode(&x).unwrap();
            assert!(sigma.data().iter().all(|s| *s > 0.0 && s.is_finite()));
        }
    }

    #[test]
    fn reparametrize_examples() {
        let mut rng = RngStream::new(3, 0);
        let mu = random(&[4, 2], &mut rng);
        let sigma = random(&[4, 2], &mut rng).map(f64::abs);
        let eps = random(&[4, 2], &mut rng);
        assert_eq!(reparametrize(&mu, &sigma, &Tensor::zeros(&[4, 2])).unwrap(), mu);
        let tiny = sigma.map(|_| 1e-300);
        assert!(reparametrize(&mu, &tiny, &eps)
            .unwrap()
            .data()
            .iter()
            .zip(mu.data())
            .all(|(a, b)| (a - b).abs() < 1e-290));
        assert_eq!(
            reparametrize(&Tensor::zeros(&[4, 2]), &Tensor::full(&[4, 2], 1.0), &eps).unwrap(),
            eps
        );
    }

    #[test]
    fn decode_is_deterministic_and_nonlinear() {
        let mut rng = RngStream::new(4, 0);
        let model = VaeModel::new(VaeArch::standard(VaeVariant::Bottleneck2D), &mut rng).unwrap();
        let z = random(&[2, 2], &mut rng);
        let a = model.decode(&z).unwrap();
        assert_eq!(a.shape(), &[2, 2, 1984]);
        assert_eq!(a, model.decode(&z).unwrap());
        let b = model.decode(&z.map(|v| 2.0 * v)).unwrap();
        let diff = b.data().iter().zip(a.data()).map(|(u, v)| (u - 2.0 * v).abs()).fold(0.0, f64::max);
        assert!(diff > 1e-6);
    }

    #[test]
    fn log_likelihood_examples() {
        let mut rng = RngStream::new(5, 0);
        let q: Vec<f64> = (0..3968).map(|_| rng.normal()).collect();
        let d = q.len() as f64;
        let s = SIGMA_THETA;
        let base = -0.5 * d * (2.0 * PI).ln() - d * s.ln();
        assert!((gaussian_log_likelihood(&q, &q, s) - base).abs() < 1e-9);
        let mu: Vec<f64> = q.iter().map(|v| v + 0.01 * rng.normal()).collect();
        let mu2: Vec<f64> = q.iter().zip(&mu).map(|(a, b)| a + 2.0 * (b - a)).collect();
        let quad1 = base - gaussian_log_likelihood(&q, &mu, s);
        let quad2 = base - gaussian_log_likelihood(&q, &mu2, s);
        assert!((quad2 / quad1 - 4.0).abs() < 1e-9);
        let mut direct = 0.0;
        for (a, b) in q.iter().zip(&mu) {
            direct += -0.5 * (2.0 * PI).ln() - s.ln() - (a - b) * (a - b) / (2.0 * s * s);
        }
        assert!((gaussian_log_likelihood(&q, &mu, s) - direct).abs() < 1e-10 * direct.abs().max(1.0));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.0, 0.0], &[1.0, 1.0], true), 0.0);
        assert!((kl_divergence(&[1.0, 0.0], &[1.0, 1.0], true) - 0.5).abs() < 1e-15);
        assert!((kl_divergence(&[1.0, 0.0], &[1.0, 1.0], false) - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(mu in -5.0f64..5.0, s in 1e-3f64..10.0) {
            let k = kl_divergence(&[mu], &[s], true);
            prop_assert!(k >= -1e-15);
            if mu.abs() > 1e-6 || (s - 1.0).abs() > 1e-6 {
                prop_assert!(k > 0.0);
            }
        }
    }

    #[test]
    fn elbo_matches_independent_formula() {
        let mut rng = RngStream::new(6, 0);
        for variant in [VaeVariant::Bottleneck2D, VaeVariant::Wide31x2] {
            let model = VaeModel::new(VaeArch::tiny(variant), &mut rng).unwrap();
            let x = random(&[3, 2, 32], &mut rng);
            let (mu, sigma) = model.encode(&x).unwrap();
            let eps: Vec<Tensor> = (0..2).map(|_| random(mu.shape(), &mut rng)).collect();
            let loss = model.elbo_loss(&x, &eps, Mode::Eval).unwrap();

            let mut expected = 0.0;
            for i in 0..3 {
                let mut rec = 0.0;
                for e in &eps {
                    let z = reparametrize(&mu, &sigma, e).unwrap();
                    let xr = model.decode(&z).unwrap();
                    rec += gaussian_log_likelihood(x.row(i), xr.row(i), SIGMA_THETA);
                }
                expected += -rec / eps.len() as f64 + kl_divergence(mu.row(i), sigma.row(i), true);
            }
            expected /= 3.0;
            assert!((loss - expected).abs() < 1e-10 * expected.abs().max(1.0), "{loss} vs {expected}");
        }
    }

    #[test]
    fn elbo_gradients_match_finite_differences() {
        for variant in [VaeVariant::Bottleneck2D, VaeVariant::Wide31x2] {
            let mut rng = RngStream::new(7, 0);
            let mut model = VaeModel::new(VaeArch::tiny(variant), &mut rng).unwrap();
            model.sigma_theta = 0.5;
            let x = random(&[4, 2, 32], &mut rng).map(|v| 0.3 * v);
            let mut shape = vec![4];
            shape.extend(model.arch.latent_shape().unwrap());
            let eps = vec![random(&shape, &mut rng)];
            let mut store = model.store.clone();
            let report = gradcheck::check_store(&mut store, 1e-5, 1, |g, s| {
                model.elbo_loss_graph(g, s, &x, &eps, Mode::Train)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{variant:?}: {report:?}");
        }
    }

    #[test]
    fn generation_contract() {
        let mut rng = RngStream::new(8, 0);
        let model = VaeModel::new(VaeArch::standard(VaeVariant::Bottleneck2D), &mut rng).unwrap();
        let path = model.generate_from_latent([-7.5, 17.5]).unwrap();
        assert_eq!(path.len(), 1984);
        assert!(path.iter().all(|p| p.is_finite()));
        let wide = VaeModel::new(VaeArch::tiny(VaeVariant::Wide31x2), &mut rng).unwrap();
        assert!(matches!(wide.generate_from_latent([0.0, 0.0]), Err(Error::WrongVariant)));
    }

    #[test]
    fn zero_epochs_keeps_initialization_and_training_lowers_loss() {
        let mut rng = RngStream::new(9, 0);
        let mut model = VaeModel::new(VaeArch::tiny(VaeVariant::Bottleneck2D), &mut rng).unwrap();
        let x = random(&[40, 2, 32], &mut rng).map(|v| 0.2 * v - 1.0);
        let before = model.store.flat_values();
        let hyper = VaeTrainHyper {
            epochs: 0,
            batch: 8,
            lr: 1e-2,
            ..Default::default()
        };
        train_vae(&mut model, &x, &hyper, &mut rng, |_, _| {}).unwrap();
        assert_eq!(model.store.flat_values(), before);
        let hyper = VaeTrainHyper { epochs: 20, ..hyper };
        let report = train_vae(&mut model, &x, &hyper, &mut rng, |_, _| {}).unwrap();
        assert!(report.epoch_losses.last().unwrap() < &report.epoch_losses[0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = RngStream::new(10, 0);
        let model = VaeModel::new(VaeArch::tiny(VaeVariant::Wide31x2), &mut rng).unwrap();
        model.save(dir.path()).unwrap();
        let back = VaeModel::load(dir.path()).unwrap();
        assert_eq!(back.arch, model.arch);
        assert_eq!(back.store.flat_values(), model.store.flat_values());
        let x = random(&[2, 2, 32], &mut rng);
        assert_eq!(back.reconstruct(&x).unwrap(), model.reconstruct(&x).unwrap());
    }
}
