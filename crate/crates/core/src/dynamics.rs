//! Euler–Maruyama integration of overdamped Langevin dynamics, with an
//! optional additive bias force, and the Gaussian one-step kernel.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landscape::{gradient, Position, PotentialSpec};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    pub dt: f64,
    pub beta: f64,
    pub n_steps: usize,
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            dt: 5e-3,
            beta: 3.5,
            n_steps: 2000,
            seed: 0,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be > 0, got {}", self.beta)));
        }
        Ok(())
    }

    /// Standard deviation of the noise increment, `sqrt(2 dt / beta)`.
    pub fn noise_scale(&self) -> f64 {
        (2.0 * self.dt / self.beta).sqrt()
    }

    pub fn with_steps(mut self, n_steps: usize) -> Self {
        self.n_steps = n_steps;
        self
    }
}

/// One unbiased step: `q - grad dt + sqrt(2 dt / beta) noise`.
pub fn em_step(q: Position, grad: Position, noise: [f64; 2], params: &SimParams) -> Position {
    controlled_em_step(q, grad, Position::ORIGIN, noise, params)
}

/// One biased step: `q + (bias - grad) dt + sqrt(2 dt / beta) noise`.
pub fn controlled_em_step(
    q: Position,
    grad: Position,
    bias: Position,
    noise: [f64; 2],
    params: &SimParams,
) -> Position {
    let s = params.noise_scale();
    let dt = params.dt;
    Position::new(
        q.x + (bias.x - grad.x) * dt + s * noise[0],
        q.y + (bias.y - grad.y) * dt + s * noise[1],
    )
}

/// Log-density of the biased one-step kernel from `q` to `q_next` in two dimensions.
pub fn transition_log_density(
    q: Position,
    q_next: Position,
    grad: Position,
    bias: Position,
    params: &SimParams,
) -> f64 {
    let dt = params.dt;
    let beta = params.beta;
    let rx = q_next.x - q.x - dt * (bias.x - grad.x);
    let ry = q_next.y - q.y - dt * (bias.y - grad.y);
    (beta / (4.0 * std::f64::consts::PI * dt)).ln() - beta * (rx * rx + ry * ry) / (4.0 * dt)
}

/// A sampled path `(q_0, ..., q_n)` with the noise draws that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<Position>,
    pub params: SimParams,
    pub noises: Option<Vec<[f64; 2]>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn start(&self) -> Position {
        self.positions[0]
    }

    pub fn end(&self) -> Position {
        *self.positions.last().expect("trajectory has at least one position")
    }

    /// Any `x_k > threshold` for `k >= 1`.
    pub fn crosses(&self, x_threshold: f64) -> bool {
        self.positions.iter().skip(1).any(|q| q.x > x_threshold)
    }
}

/// Integration stopped on a NaN or infinite position. `partial` holds the
/// finite prefix.
#[derive(Clone, Debug)]
pub struct BlowUp {
    pub step: usize,
    pub partial: Trajectory,
}

impl From<BlowUp> for Error {
    fn from(b: BlowUp) -> Self {
        Error::NonFinitePosition { step: b.step }
    }
}

/// Integrates `params.n_steps` biased steps driven by `grad_fn`.
pub fn simulate_with<G, B>(
    q0: Position,
    params: &SimParams,
    grad_fn: G,
    bias_field: Option<B>,
    rng: &mut RngStream,
    record_noise: bool,
) -> std::result::Result<Trajectory, BlowUp>
where
    G: Fn(Position) -> Position,
    B: Fn(Position) -> Position,
{
    let mut params = *params;
    params.seed = rng.seed();
    let mut positions = Vec::with_capacity(params.n_steps + 1);
    let mut noises = record_noise.then(|| Vec::with_capacity(params.n_steps));
    positions.push(q0);
    let mut q = q0;
    for step in 0..params.n_steps {
        let noise = rng.normal2();
        let bias = bias_field.as_ref().map_or(Position::ORIGIN, |b| b(q));
        let next = controlled_em_step(q, grad_fn(q), bias, noise, &params);
        if !next.is_finite() {
            params.n_steps = positions.len() - 1;
            return Err(BlowUp {
                step: step + 1,
                partial: Trajectory {
                    positions,
                    params,
                    noises,
                },
            });
        }
        if let Some(n) = noises.as_mut() {
            n.push(noise);
        }
        positions.push(next);
        q = next;
    }
    Ok(Trajectory {
        positions,
        params,
        noises,
    })
}

/// Integrates the dynamics in the potential `spec`.
pub fn simulate(
    q0: Position,
    params: &SimParams,
    spec: &PotentialSpec,
    bias_field: Option<&dyn Fn(Position) -> Position>,
    rng: &mut RngStream,
    record_noise: bool,
) -> std::result::Result<Trajectory, BlowUp> {
    simulate_with(q0, params, |q| gradient(q, spec), bias_field, rng, record_noise)
}

// ---------------------------------------------------------------------------
// serialization

pub const TRAJ_MAGIC: [u8; 4] = *b"TPTJ";
pub const TRAJ_VERSION: u32 = 1;
pub const FLAG_NOISE: u32 = 1;
pub const FLAG_TRUNCATED: u32 = 2;

impl Trajectory {
    /// Little-endian record: magic, version, n_steps, dt, beta, seed, flags,
    /// then positions and (if flagged) noises as interleaved `f64` pairs.
    pub fn write_binary<W: Write>(&self, w: &mut W, truncated: bool) -> io::Result<()> {
        let n_steps = self.positions.len() - 1;
        let mut flags = 0;
        if self.noises.is_some() {
            flags |= FLAG_NOISE;
        }
        if truncated {
            flags |= FLAG_TRUNCATED;
        }
        w.write_all(&TRAJ_MAGIC)?;
        w.write_all(&TRAJ_VERSION.to_le_bytes())?;
        w.write_all(&(n_steps as u64).to_le_bytes())?;
        w.write_all(&self.params.dt.to_le_bytes())?;
        w.write_all(&self.params.beta.to_le_bytes())?;
        w.write_all(&self.params.seed.to_le_bytes())?;
        w.write_all(&flags.to_le_bytes())?;
        let mut buf = Vec::with_capacity(16 * (n_steps + 1));
        for q in &self.positions {
            buf.extend_from_slice(&q.x.to_le_bytes());
            buf.extend_from_slice(&q.y.to_le_bytes());
        }
        if let Some(noises) = &self.noises {
            for g in noises {
                buf.extend_from_slice(&g[0].to_le_bytes());
                buf.extend_from_slice(&g[1].to_le_bytes());
            }
        }
        w.write_all(&buf)
    }

    /// Reads one record; `Ok(None)` at a clean end of stream.
    pub fn read_binary<R: Read>(r: &mut R) -> io::Result<Option<Self>> {
        let mut magic = [0u8; 4];
        match r.read_exact(&mut magic) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e),
        }
        if magic != TRAJ_MAGIC {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "bad trajectory magic"));
        }
        let version = read_u32(r)?;
        if version != TRAJ_VERSION {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("unsupported trajectory version {version}"),
            ));
        }
        let n_steps = read_u64(r)? as usize;
        let dt = read_f64(r)?;
        let beta = read_f64(r)?;
        let seed = read_u64(r)?;
        let flags = read_u32(r)?;
        let mut positions = Vec::with_capacity(n_steps + 1);
        for _ in 0..=n_steps {
            positions.push(Position::new(read_f64(r)?, read_f64(r)?));
        }
        let noises = if flags & FLAG_NOISE != 0 {
            let mut v = Vec::with_capacity(n_steps);
            for _ in 0..n_steps {
                v.push([read_f64(r)?, read_f64(r)?]);
            }
            Some(v)
        } else {
            None
        };
        Ok(Some(Trajectory {
            positions,
            params: SimParams {
                dt,
                beta,
                n_steps,
                seed,
            },
            noises,
        }))
    }

    /// Lossy plotting export with header `step,x,y`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "step,x,y")?;
        for (k, q) in self.positions.iter().enumerate() {
            writeln!(w, "{k},{},{}", q.x, q.y)?;
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn defaults() -> SimParams {
        SimParams::default()
    }

    #[test]
    fn zero_force_zero_noise_is_identity() {
        let q = Position::new(0.3, -0.2);
        assert_eq!(em_step(q, Position::ORIGIN, [0.0, 0.0], &defaults()), q);
    }

    #[test]
    fn quadratic_contraction() {
        let p = SimParams {
            dt: 0.1,
            ..defaults()
        };
        let q = Position::new(1.0, 0.0);
        let next = em_step(q, q, [0.0, 0.0], &p);
        assert!((next.x - 0.9).abs() < 1e-15 && next.y == 0.0);
    }

    #[test]
    fn step_from_dataset_start() {
        let spec = PotentialSpec::default();
        let q = Position::new(-1.05, -0.04);
        let g = gradient(q, &spec);
        let next = em_step(q, g, [0.3, -0.7], &defaults());
        // independent evaluation: gradient from the closed form by hand,
        // then q - g dt + sqrt(2 dt / beta) G
        let e1 = (-(q.x * q.x) - (q.y - 1.0 / 3.0).powi(2)).exp();
        let e2 = (-(q.x * q.x) - (q.y - 5.0 / 3.0).powi(2)).exp();
        let e3 = (-(q.x - 1.0).powi(2) - q.y * q.y).exp();
        let e4 = (-(q.x + 1.0).powi(2) - q.y * q.y).exp();
        let gx = -6.0 * q.x * e1 + 6.0 * q.x * e2 + 10.0 * (q.x - 1.0) * e3
            + 10.0 * (q.x + 1.0) * e4
            + 0.8 * q.x.powi(3);
        let gy = -6.0 * (q.y - 1.0 / 3.0) * e1 + 6.0 * (q.y - 5.0 / 3.0) * e2
            + 10.0 * q.y * e3
            + 10.0 * q.y * e4
            + 0.8 * (q.y - 1.0 / 3.0).powi(3);
        let s = (2.0f64 * 5e-3 / 3.5).sqrt();
        let ex = -1.05 - gx * 5e-3 + s * 0.3;
        let ey = -0.04 - gy * 5e-3 - s * 0.7;
        assert!((next.x - ex).abs() < 1e-13 && (next.y - ey).abs() < 1e-13);
    }

    #[test]
    fn controlled_step_reductions() {
        let p = defaults();
        let q = Position::new(-0.4, 0.9);
        let g = Position::new(1.5, -2.0);
        let noise = [0.1, 0.2];
        assert_eq!(
            controlled_em_step(q, g, Position::ORIGIN, noise, &p),
            em_step(q, g, noise, &p)
        );
        assert_eq!(controlled_em_step(q, g, g, [0.0, 0.0], &p), q);
        let pushed = controlled_em_step(q, Position::ORIGIN, Position::new(10.0, 0.0), [0.0, 0.0], &p);
        assert!((pushed.x - (q.x + 0.05)).abs() < 1e-15 && pushed.y == q.y);
    }

    #[test]
    fn zero_steps_keeps_start() {
        let mut rng = RngStream::new(1, 0);
        let t = simulate(
            Position::new(-1.0, 0.0),
            &defaults().with_steps(0),
            &PotentialSpec::default(),
            None,
            &mut rng,
            true,
        )
        .unwrap();
        assert_eq!(t.positions, vec![Position::new(-1.0, 0.0)]);
        assert_eq!(t.noises.unwrap().len(), 0);
    }

    #[test]
    fn same_stream_same_path() {
        let run = || {
            let mut rng = RngStream::new(42, 9);
            simulate(
                Position::new(-1.05, -0.04),
                &defaults(),
                &PotentialSpec::default(),
                None,
                &mut rng,
                true,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!(a.len(), 2001);
        assert_eq!(a.noises.as_ref().unwrap().len(), 2000);
    }

    #[test]
    fn blow_up_is_reported() {
        // unstable linear force: q_{k+1} = q_k (1 + 1e3 dt)
        let p = SimParams {
            n_steps: 10_000,
            ..defaults()
        };
        let mut rng = RngStream::new(0, 0);
        let err = simulate_with(
            Position::new(1.0, 1.0),
            &p,
            |q| q * -1e3,
            None::<fn(Position) -> Position>,
            &mut rng,
            false,
        )
        .unwrap_err();
        assert!(err.step > 1 && err.step < 10_000);
        assert_eq!(err.partial.len(), err.step);
        assert!(err.partial.positions.iter().all(Position::is_finite));
    }

    #[test]
    fn kernel_peak_value() {
        let p = defaults();
        let q = Position::new(0.2, 0.1);
        let g = Position::new(-1.0, 3.0);
        let b = Position::new(4.0, -2.0);
        let mean = q + (b - g) * p.dt;
        let v = transition_log_density(q, mean, g, b, &p);
        let expected = (p.beta / (4.0 * std::f64::consts::PI * p.dt)).ln();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn kernel_normalizes() {
        // midpoint rule on a 400 x 400 grid covering +-8 standard deviations
        let p = defaults();
        let q = Position::new(-0.7, 0.3);
        let g = Position::new(0.8, -0.5);
        let b = Position::new(2.0, 1.0);
        let mean = q + (b - g) * p.dt;
        let sd = (2.0 * p.dt / p.beta).sqrt();
        let n = 400;
        let half = 8.0 * sd;
        let h = 2.0 * half / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = mean.x - half + (i as f64 + 0.5) * h;
                let y = mean.y - half + (j as f64 + 0.5) * h;
                total += transition_log_density(q, Position::new(x, y), g, b, &p).exp();
            }
        }
        total *= h * h;
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn binary_and_csv_export() {
        let mut rng = RngStream::new(3, 1);
        let t = simulate(
            Position::new(-1.05, -0.04),
            &defaults().with_steps(50),
            &PotentialSpec::default(),
            None,
            &mut rng,
            true,
        )
        .unwrap();
        let mut bytes = Vec::new();
        t.write_binary(&mut bytes, false).unwrap();
        assert_eq!(bytes.len(), 44 + 16 * 51 + 16 * 50);
        let back = Trajectory::read_binary(&mut bytes.as_slice()).unwrap().unwrap();
        assert_eq!(back, t);

        let mut csv = Vec::new();
        t.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("step,x,y\n0,-1.05,-0.04\n"));
        assert_eq!(text.lines().count(), 52);
    }

    #[test]
    fn rejects_bad_magic() {
        let bytes = b"XXXX0000".to_vec();
        assert!(Trajectory::read_binary(&mut bytes.as_slice()).is_err());
        assert!(Trajectory::read_binary(&mut [].as_slice()).unwrap().is_none());
    }

    proptest! {
        #[test]
        fn kernel_matches_noise_identity(
            qx in -2.0f64..2.0, qy in -2.0f64..2.0,
            bx in -10.0f64..10.0, by in -10.0f64..10.0,
            g0 in -4.0f64..4.0, g1 in -4.0f64..4.0,
        ) {
            let p = defaults();
            let q = Position::new(qx, qy);
            let grad = gradient(q, &PotentialSpec::default());
            let bias = Position::new(bx, by);
            let next = controlled_em_step(q, grad, bias, [g0, g1], &p);
            let s = p.noise_scale();
            let expected = (p.beta / (4.0 * std::f64::consts::PI * p.dt)).ln()
                - p.beta / (4.0 * p.dt) * s * s * (g0 * g0 + g1 * g1);
            let got = transition_log_density(q, next, grad, bias, &p);
            prop_assert!((got - expected).abs() < 1e-9 * (1.0 + expected.abs()));
        }
    }
}
