//! Few-shot regression task families.
//!
//! | family        | function                                    | parameter ranges                                   |
//! |---------------|---------------------------------------------|----------------------------------------------------|
//! | sinusoid      | `A sin(x - phi)`                            | `A in [0.1, 5]`, `phi in [0, pi]`                  |
//! | line          | `m x + b`                                   | `m, b in [-3, 3]`                                  |
//! | harmonic      | `a1 sin(f x + p1) + a2 sin(2 f x + p2)`     | `f in [0.5, 1.5]`, `a in [0.1, 5]`, `p in [0, 2pi]` |
//!
//! Inputs are drawn uniformly from `[-5, 5]` for every family. The
//! sinusoid-and-line family picks each of its two members with probability ½.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::Serialize;

use crate::error::Error;
use crate::rng::{fnv1a, StreamRng};

pub const X_RANGE: (f64, f64) = (-5.0, 5.0);
pub const AMPLITUDE_RANGE: (f64, f64) = (0.1, 5.0);
pub const PHASE_RANGE: (f64, f64) = (0.0, PI);
pub const SLOPE_RANGE: (f64, f64) = (-3.0, 3.0);
pub const INTERCEPT_RANGE: (f64, f64) = (-3.0, 3.0);
pub const FREQUENCY_RANGE: (f64, f64) = (0.5, 1.5);
pub const HARMONIC_PHASE_RANGE: (f64, f64) = (0.0, 2.0 * PI);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionFamily {
    Sinusoid,
    SinusoidLine,
    Harmonic,
}

impl RegressionFamily {
    pub fn name(self) -> &'static str {
        match self {
            RegressionFamily::Sinusoid => "sinusoid",
            RegressionFamily::SinusoidLine => "sinusoid-line",
            RegressionFamily::Harmonic => "harmonic",
        }
    }
}

impl fmt::Display for RegressionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegressionFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "sinusoid" => Ok(Self::Sinusoid),
            "sinusoid-line" | "sinusoid_line" => Ok(Self::SinusoidLine),
            "harmonic" => Ok(Self::Harmonic),
            other => Err(Error::InvalidArgument(format!(
                "unknown regression family `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressionFn {
    Sinusoid {
        amplitude: f64,
        phase: f64,
    },
    Line {
        slope: f64,
        intercept: f64,
    },
    Harmonic {
        frequency: f64,
        a1: f64,
        phase1: f64,
        a2: f64,
        phase2: f64,
    },
}

impl RegressionFn {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            RegressionFn::Sinusoid { amplitude, phase } => amplitude * (x - phase).sin(),
            RegressionFn::Line { slope, intercept } => slope * x + intercept,
            RegressionFn::Harmonic {
                frequency,
                a1,
                phase1,
                a2,
                phase2,
            } => a1 * (frequency * x + phase1).sin() + a2 * (2.0 * frequency * x + phase2).sin(),
        }
    }

    fn param_bits(&self) -> Vec<u64> {
        match *self {
            RegressionFn::Sinusoid { amplitude, phase } => vec![1, amplitude.to_bits(), phase.to_bits()],
            RegressionFn::Line { slope, intercept } => vec![2, slope.to_bits(), intercept.to_bits()],
            RegressionFn::Harmonic {
                frequency,
                a1,
                phase1,
                a2,
                phase2,
            } => vec![
                3,
                frequency.to_bits(),
                a1.to_bits(),
                phase1.to_bits(),
                a2.to_bits(),
                phase2.to_bits(),
            ],
        }
    }
}

/// One regression task: a function and the interval its inputs come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionTask {
    pub family: RegressionFamily,
    pub function: RegressionFn,
    pub domain: (f64, f64),
}

impl RegressionTask {
    pub fn eval(&self, x: f64) -> f64 {
        self.function.eval(x)
    }

    /// Stable identity derived from the parameter bits.
    pub fn task_id(&self) -> u64 {
        let bytes: Vec<u8> = self
            .function
            .param_bits()
            .iter()
            .flat_map(|b| b.to_le_bytes())
            .collect();
        fnv1a(&bytes)
    }
}

fn uniform(rng: &mut StreamRng, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo..=hi)
}

fn sinusoid(rng: &mut StreamRng) -> RegressionFn {
    RegressionFn::Sinusoid {
        amplitude: uniform(rng, AMPLITUDE_RANGE),
        phase: uniform(rng, PHASE_RANGE),
    }
}

pub fn sample_regression_task(family: RegressionFamily, rng: &mut StreamRng) -> RegressionTask {
    let function = match family {
        RegressionFamily::Sinusoid => sinusoid(rng),
        RegressionFamily::SinusoidLine => {
            if rng.random_bool(0.5) {
                sinusoid(rng)
            } else {
                RegressionFn::Line {
                    slope: uniform(rng, SLOPE_RANGE),
                    intercept: uniform(rng, INTERCEPT_RANGE),
                }
            }
        }
        RegressionFamily::Harmonic => RegressionFn::Harmonic {
            frequency: uniform(rng, FREQUENCY_RANGE),
            a1: uniform(rng, AMPLITUDE_RANGE),
            phase1: uniform(rng, HARMONIC_PHASE_RANGE),
            a2: uniform(rng, AMPLITUDE_RANGE),
            phase2: uniform(rng, HARMONIC_PHASE_RANGE),
        },
    };
    RegressionTask {
        family,
        function,
        domain: X_RANGE,
    }
}

/// Noiseless `(x, y)` support and query points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionEpisode {
    pub support: Vec<(f64, f64)>,
    pub query: Vec<(f64, f64)>,
}

pub fn draw_regression_episode(
    task: &RegressionTask,
    k_shot: usize,
    q_queries: usize,
    rng: &mut StreamRng,
) -> RegressionEpisode {
    let mut point = || {
        let x = uniform(rng, task.domain);
        (x, task.eval(x))
    };
    let support = (0..k_shot).map(|_| point()).collect();
    let query = (0..q_queries).map(|_| point()).collect();
    RegressionEpisode { support, query }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn sinusoid_vanishes_at_its_phase() {
        let f = RegressionFn::Sinusoid {
            amplitude: 3.2,
            phase: 1.1,
        };
        assert_eq!(f.eval(1.1), 0.0);
        let f = RegressionFn::Sinusoid {
            amplitude: 1.0,
            phase: 0.0,
        };
        assert_eq!(f.eval(PI / 2.0), 1.0);
    }

    #[test]
    fn flat_line() {
        let f = RegressionFn::Line {
            slope: 0.0,
            intercept: 2.0,
        };
        for x in [-5.0, 0.0, 3.3] {
            assert_eq!(f.eval(x), 2.0);
        }
    }

    #[test]
    fn sinusoid_amplitudes_stay_in_range() {
        let mut r = stream(1, "amp", 0);
        for _ in 0..10_000 {
            match sample_regression_task(RegressionFamily::Sinusoid, &mut r).function {
                RegressionFn::Sinusoid { amplitude, phase } => {
                    assert!((0.1..=5.0).contains(&amplitude));
                    assert!((0.0..=PI).contains(&phase));
                }
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn sinusoid_line_mixes_both_members() {
        let mut r = stream(2, "mix", 0);
        let lines = (0..4000)
            .filter(|_| {
                matches!(
                    sample_regression_task(RegressionFamily::SinusoidLine, &mut r).function,
                    RegressionFn::Line { .. }
                )
            })
            .count();
        // Binomial(4000, 0.5): 5 sd is about 158.
        assert!((lines as i64 - 2000).abs() < 160, "{lines}");
    }

    #[test]
    fn episode_points_lie_on_the_function() {
        let mut r = stream(3, "ep", 0);
        let task = sample_regression_task(RegressionFamily::Harmonic, &mut r);
        let ep = draw_regression_episode(&task, 5, 15, &mut r);
        assert_eq!(ep.support.len(), 5);
        assert_eq!(ep.query.len(), 15);
        let RegressionFn::Harmonic {
            frequency,
            a1,
            phase1,
            a2,
            phase2,
        } = task.function
        else {
            unreachable!()
        };
        for &(x, y) in ep.support.iter().chain(&ep.query) {
            assert!((-5.0..=5.0).contains(&x));
            let oracle = a1 * (frequency * x + phase1).sin() + a2 * (2.0 * frequency * x + phase2).sin();
            assert!((y - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn family_names_round_trip() {
        for f in [
            RegressionFamily::Sinusoid,
            RegressionFamily::SinusoidLine,
            RegressionFamily::Harmonic,
        ] {
            assert_eq!(f.name().parse::<RegressionFamily>().unwrap(), f);
        }
        assert!("cosine".parse::<RegressionFamily>().is_err());
    }
}
