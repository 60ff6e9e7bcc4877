//! Fine-grained compute-time noise with controlled integrated power.
//!
//! Draws are a pure function of `(seed, rank, iteration)`, so a simulation
//! can evaluate them in any order and still be reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::Rank;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("invalid noise spec: {0}")]
    Invalid(String),
    #[error("calibration: {0}")]
    Calibration(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NoiseDistribution {
    /// `amplitude_s` with probability `probability`, else nothing.
    Shot {
        amplitude_s: f64,
        probability: f64,
    },
    Exponential {
        mean_s: f64,
    },
    Uniform {
        lo_s: f64,
        hi_s: f64,
    },
}

impl NoiseDistribution {
    pub fn family(&self) -> &'static str {
        match self {
            NoiseDistribution::Shot { .. } => "shot",
            NoiseDistribution::Exponential { .. } => "exponential",
            NoiseDistribution::Uniform { .. } => "uniform",
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            NoiseDistribution::Shot {
                amplitude_s,
                probability,
            } => amplitude_s * probability,
            NoiseDistribution::Exponential { mean_s } => mean_s,
            NoiseDistribution::Uniform { lo_s, hi_s } => 0.5 * (lo_s + hi_s),
        }
    }

    /// Multiplies every duration parameter by `factor`.
    fn scaled(self, factor: f64) -> Self {
        match self {
            NoiseDistribution::Shot {
                amplitude_s,
                probability,
            } => NoiseDistribution::Shot {
                amplitude_s: amplitude_s * factor,
                probability,
            },
            NoiseDistribution::Exponential { mean_s } => NoiseDistribution::Exponential {
                mean_s: mean_s * factor,
            },
            NoiseDistribution::Uniform { lo_s, hi_s } => NoiseDistribution::Uniform {
                lo_s: lo_s * factor,
                hi_s: hi_s * factor,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub distribution: NoiseDistribution,
    /// Integrated noise power as a fraction of the silent runtime.
    pub target_power: f64,
    pub seed: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn stream_key(seed: u64, rank: Rank, iteration: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ rank as u64) ^ iteration as u64)
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), NoiseError> {
        let bad = |m: String| Err(NoiseError::Invalid(m));
        if !(0.0..1.0).contains(&self.target_power) {
            return bad(format!("target power {} not in [0, 1)", self.target_power));
        }
        match self.distribution {
            NoiseDistribution::Shot {
                amplitude_s,
                probability,
            } => {
                if !(amplitude_s >= 0.0 && amplitude_s.is_finite()) {
                    return bad(format!("shot amplitude {amplitude_s} must be >= 0"));
                }
                if !(0.0..=1.0).contains(&probability) {
                    return bad(format!("shot probability {probability} not in [0, 1]"));
                }
            }
            NoiseDistribution::Exponential { mean_s } => {
                if !(mean_s >= 0.0 && mean_s.is_finite()) {
                    return bad(format!("exponential mean {mean_s} must be >= 0"));
                }
            }
            NoiseDistribution::Uniform { lo_s, hi_s } => {
                if !(lo_s >= 0.0 && hi_s >= lo_s && hi_s.is_finite()) {
                    return bad(format!("uniform bounds [{lo_s}, {hi_s}] invalid"));
                }
            }
        }
        Ok(())
    }

    /// Extra compute seconds for `rank` in `iteration`.
    pub fn draw(&self, rank: Rank, iteration: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_key(self.seed, rank, iteration));
        match self.distribution {
            NoiseDistribution::Shot {
                amplitude_s,
                probability,
            } => {
                let u: f64 = rng.random();
                if u < probability {
                    amplitude_s
                } else {
                    0.0
                }
            }
            NoiseDistribution::Exponential { mean_s } => {
                let e: f64 = rng.sample(Exp1);
                mean_s * e
            }
            NoiseDistribution::Uniform { lo_s, hi_s } => {
                let u: f64 = rng.random();
                lo_s + (hi_s - lo_s) * u
            }
        }
    }

    /// Sum of all draws over a `num_ranks x iterations` run.
    pub fn realized_total(&self, num_ranks: usize, iterations: usize) -> f64 {
        (0..num_ranks)
            .flat_map(|r| (0..iterations).map(move |t| (r, t)))
            .map(|(r, t)| self.draw(r, t))
            .sum()
    }
}

/// Rescales `spec` so the *expected* sum of all draws equals
/// `target_power * silent_total_s`.
///
/// Shot noise keeps its amplitude and solves for the occurrence
/// probability; the continuous families scale their duration parameters.
pub fn calibrate_power(
    spec: &NoiseSpec,
    num_ranks: usize,
    iterations: usize,
    silent_total_s: f64,
) -> Result<NoiseSpec, NoiseError> {
    spec.validate()?;
    if num_ranks == 0 || iterations == 0 || !(silent_total_s > 0.0) {
        return Err(NoiseError::Calibration(format!(
            "need positive ranks/iterations/runtime, got {num_ranks}/{iterations}/{silent_total_s}"
        )));
    }
    let draws = (num_ranks * iterations) as f64;
    let per_draw = spec.target_power * silent_total_s / draws;
    let distribution = if spec.target_power == 0.0 {
        spec.distribution.scaled(0.0)
    } else {
        match spec.distribution {
            NoiseDistribution::Shot { amplitude_s, .. } => {
                let probability = per_draw / amplitude_s;
                if !(probability <= 1.0) {
                    return Err(NoiseError::Calibration(format!(
                        "shot amplitude {amplitude_s} s needs occurrence probability {probability} > 1"
                    )));
                }
                NoiseDistribution::Shot {
                    amplitude_s,
                    probability,
                }
            }
            NoiseDistribution::Exponential { .. } => {
                NoiseDistribution::Exponential { mean_s: per_draw }
            }
            NoiseDistribution::Uniform { lo_s, hi_s } => {
                let mean = 0.5 * (lo_s + hi_s);
                if mean > 0.0 {
                    spec.distribution.scaled(per_draw / mean)
                } else {
                    NoiseDistribution::Uniform {
                        lo_s: 0.0,
                        hi_s: 2.0 * per_draw,
                    }
                }
            }
        }
    };
    Ok(NoiseSpec {
        distribution,
        ..*spec
    })
}

/// Like [`calibrate_power`], then rescales the durations so the concrete
/// seeded stream injects exactly `target_power * silent_total_s`.
pub fn calibrate_realized(
    spec: &NoiseSpec,
    num_ranks: usize,
    iterations: usize,
    silent_total_s: f64,
) -> Result<NoiseSpec, NoiseError> {
    let expected = calibrate_power(spec, num_ranks, iterations, silent_total_s)?;
    if spec.target_power == 0.0 {
        return Ok(expected);
    }
    let realized = expected.realized_total(num_ranks, iterations);
    if !(realized > 0.0) {
        return Err(NoiseError::Calibration(
            "seeded stream produced no noise; raise probability or change seed".into(),
        ));
    }
    let factor = spec.target_power * silent_total_s / realized;
    Ok(NoiseSpec {
        distribution: expected.distribution.scaled(factor),
        ..expected
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(distribution: NoiseDistribution, target_power: f64) -> NoiseSpec {
        NoiseSpec {
            distribution,
            target_power,
            seed: 42,
        }
    }

    #[test]
    fn zero_probability_shot_is_silent() {
        let s = spec(
            NoiseDistribution::Shot {
                amplitude_s: 1.0,
                probability: 0.0,
            },
            0.0,
        );
        assert!((0..50).all(|r| (0..50).all(|t| s.draw(r, t) == 0.0)));
    }

    #[test]
    fn draws_are_deterministic_and_keyed() {
        let s = spec(NoiseDistribution::Exponential { mean_s: 0.01 }, 0.1);
        assert_eq!(s.draw(3, 7), s.draw(3, 7));
        assert_ne!(s.draw(3, 7), s.draw(7, 3));
        let other = NoiseSpec { seed: 43, ..s };
        assert_ne!(s.draw(3, 7), other.draw(3, 7));
    }

    #[test]
    fn uniform_mean_within_three_standard_errors() {
        let m = 0.005;
        let s = spec(
            NoiseDistribution::Uniform {
                lo_s: 0.0,
                hi_s: 2.0 * m,
            },
            0.1,
        );
        let n = 1_000_000usize;
        let sum: f64 = (0..n).map(|i| s.draw(i % 1000, i / 1000)).sum();
        let mean = sum / n as f64;
        // variance of U(0, 2m) is m^2 / 3
        let se = (m * m / 3.0 / n as f64).sqrt();
        assert!((mean - m).abs() < 3.0 * se, "mean {mean} vs {m} (se {se})");
    }

    #[test]
    fn calibrate_matches_reference_budget() {
        let s = spec(NoiseDistribution::Exponential { mean_s: 1.0 }, 0.091);
        let c = calibrate_power(&s, 18, 100, 142.0).unwrap();
        let expected_total = c.distribution.mean() * 1800.0;
        assert!((expected_total - 12.922).abs() < 1e-9);
    }

    #[test]
    fn calibrate_zero_target_silences() {
        for d in [
            NoiseDistribution::Shot {
                amplitude_s: 0.1,
                probability: 0.5,
            },
            NoiseDistribution::Exponential { mean_s: 0.1 },
            NoiseDistribution::Uniform {
                lo_s: 0.0,
                hi_s: 0.2,
            },
        ] {
            let c = calibrate_power(&spec(d, 0.0), 4, 10, 1.0).unwrap();
            assert_eq!(c.realized_total(4, 10), 0.0);
        }
    }

    #[test]
    fn shot_probability_closed_form() {
        let a = 0.05;
        let s = spec(
            NoiseDistribution::Shot {
                amplitude_s: a,
                probability: 0.9,
            },
            0.05,
        );
        let c = calibrate_power(&s, 18, 200, 142.0).unwrap();
        let NoiseDistribution::Shot {
            probability,
            amplitude_s,
        } = c.distribution
        else {
            panic!()
        };
        assert_eq!(amplitude_s, a);
        assert!((probability - 0.05 * 142.0 / (a * 18.0 * 200.0)).abs() < 1e-15);
    }

    #[test]
    fn unreachable_shot_target_errors() {
        let s = spec(
            NoiseDistribution::Shot {
                amplitude_s: 1e-6,
                probability: 0.1,
            },
            0.5,
        );
        assert!(matches!(
            calibrate_power(&s, 2, 2, 100.0),
            Err(NoiseError::Calibration(_))
        ));
    }

    #[test]
    fn realized_calibration_is_exact() {
        for d in [
            NoiseDistribution::Shot {
                amplitude_s: 0.05,
                probability: 0.2,
            },
            NoiseDistribution::Exponential { mean_s: 0.01 },
            NoiseDistribution::Uniform {
                lo_s: 0.0,
                hi_s: 0.02,
            },
        ] {
            let c = calibrate_realized(&spec(d, 0.091), 18, 200, 142.0).unwrap();
            let realized = c.realized_total(18, 200) / 142.0;
            assert!((realized - 0.091).abs() / 0.091 < 1e-9, "{d:?}: {realized}");
        }
    }

    #[test]
    fn expected_calibration_realizes_within_two_percent() {
        for d in [
            NoiseDistribution::Exponential { mean_s: 1.0 },
            NoiseDistribution::Uniform {
                lo_s: 0.0,
                hi_s: 1.0,
            },
        ] {
            let c = calibrate_power(&spec(d, 0.091), 100, 200, 142.0).unwrap();
            let realized = c.realized_total(100, 200) / 142.0;
            assert!((realized - 0.091).abs() / 0.091 < 0.02, "{d:?}: {realized}");
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(spec(
            NoiseDistribution::Uniform {
                lo_s: 0.2,
                hi_s: 0.1
            },
            0.1
        )
        .validate()
        .is_err());
        assert!(spec(NoiseDistribution::Exponential { mean_s: 0.1 }, 1.0)
            .validate()
            .is_err());
        assert!(spec(
            NoiseDistribution::Shot {
                amplitude_s: -1.0,
                probability: 0.1
            },
            0.1
        )
        .validate()
        .is_err());
    }
}
