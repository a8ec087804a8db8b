use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate, SimParams};
use crate::error::{Error, Result};
use crate::landscape::{Position, PotentialSpec, WellSpec};
use crate::rng::RngStream;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

pub fn intervals_overlap(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionEstimate {
    pub n: usize,
    pub transitions: usize,
    pub rate: f64,
    pub interval: (f64, f64),
    /// Trajectories that hit a non-finite position; their finite prefix counts.
    pub blow_ups: usize,
}

/// Fraction of `n` unbiased trajectories from `q0` with some `x_k` past the
/// transition threshold. Trajectory `i` uses stream `i` of `seed`, so the
/// result does not depend on the worker count.
pub fn estimate_transition_probability(
    n: usize,
    q0: Position,
    params: &SimParams,
    spec: &PotentialSpec,
    wells: &WellSpec,
    seed: u64,
) -> Result<TransitionEstimate> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one trajectory".into()));
    }
    params.validate()?;
    let (transitions, blow_ups) = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, i as u64);
            match simulate(q0, params, spec, None, &mut rng, false) {
                Ok(t) => (usize::from(t.crosses(wells.transition_x_threshold)), 0),
                Err(b) => (usize::from(b.partial.crosses(wells.transition_x_threshold)), 1),
            }
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(TransitionEstimate {
        n,
        transitions,
        rate: transitions as f64 / n as f64,
        interval: wilson_interval(transitions, n, Z95),
        blow_ups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wilson_at_zero_of_one() {
        let (lo, hi) = wilson_interval(0, 1, Z95);
        assert_eq!(lo, 0.0);
        let z2 = Z95 * Z95;
        assert!((hi - z2 / (1.0 + z2)).abs() < 1e-12);
        assert!((hi - 0.7935).abs() < 1e-3);
    }

    #[test]
    fn wilson_reference_value() {
        // 10 of 100: centre 0.1 shifted towards one half.
        let (lo, hi) = wilson_interval(10, 100, Z95);
        assert!((lo - 0.05523).abs() < 1e-4, "{lo}");
        assert!((hi - 0.17437).abs() < 1e-4, "{hi}");
    }

    proptest! {
        #[test]
        fn wilson_contains_the_rate(n in 1usize..5000, frac in 0.0..1.0f64) {
            let k = ((n as f64) * frac) as usize;
            let (lo, hi) = wilson_interval(k, n, Z95);
            let p = k as f64 / n as f64;
            prop_assert!(0.0 <= lo && lo <= p + 1e-12 && p <= hi + 1e-12 && hi <= 1.0);
        }
    }

    #[test]
    fn single_seeded_trajectory() {
        let est = estimate_transition_probability(
            1,
            Position::new(-1.05, -0.04),
            &SimParams::default(),
            &PotentialSpec::default(),
            &WellSpec::default(),
            7,
        )
        .unwrap();
        assert_eq!(est.n, 1);
        if est.transitions == 0 {
            assert_eq!(est.interval.0, 0.0);
            assert!((est.interval.1 - 0.7935).abs() < 1e-3);
        }
    }

    #[test]
    fn zero_trajectories_is_an_error() {
        let r = estimate_transition_probability(
            0,
            Position::ORIGIN,
            &SimParams::default(),
            &PotentialSpec::default(),
            &WellSpec::default(),
            0,
        );
        assert!(r.is_err());
    }

    #[test]
    fn estimate_is_reproducible() {
        let p = SimParams::default().with_steps(300);
        let run = || {
            estimate_transition_probability(64, Position::new(-1.05, -0.04), &p, &PotentialSpec::default(), &WellSpec::default(), 3)
                .unwrap()
        };
        assert_eq!(run(), run());
    }
}
