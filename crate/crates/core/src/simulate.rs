//! Trajectory sampling and observation likelihoods.
//!
//! Randomness comes from ChaCha8 with an explicit stream per replicate:
//! replicate `k` of master seed `s` draws from
//! `ChaCha8Rng::seed_from_u64(s)` with `set_stream(k)`. Discrete draws use
//! inverse-CDF search over atoms in index order, so a trajectory is a pure
//! function of `(model, initial density, horizon, seed, replicate)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Density, FiniteModel, Observation, ObservationModel};

/// RNG for replicate `replicate` under master seed `seed`.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Likelihood vector `(γ(x_1, y), …, γ(x_d, y))`.
pub fn likelihood_vector(obs: &ObservationModel, y: Observation) -> Result<Vec<f64>> {
    match (obs, y) {
        (ObservationModel::Finite { gamma, .. }, Observation::Symbol(k)) => {
            if k >= gamma.cols() {
                return Err(Error::SymbolOutOfRange {
                    symbol: k,
                    alphabet: gamma.cols(),
                });
            }
            Ok(gamma.column(k))
        }
        (ObservationModel::Gaussian { means, sigma }, Observation::Real(v)) => {
            let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            Ok(means
                .iter()
                .map(|mu| {
                    let z = (v - mu) / sigma;
                    norm * (-0.5 * z * z).exp()
                })
                .collect())
        }
        (ObservationModel::Finite { .. }, Observation::Real(_)) => {
            Err(Error::ObservationKind("finite alphabet expects integer symbols"))
        }
        (ObservationModel::Gaussian { .. }, Observation::Symbol(_)) => {
            Err(Error::ObservationKind("gaussian model expects real values"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `X_0, …, X_N`.
    pub states: Vec<usize>,
    /// `Y_1, …, Y_N`; `observations[k]` belongs to `states[k + 1]`.
    pub observations: Vec<Observation>,
    pub seed: u64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.observations.len()
    }
}

/// Samples `X_0..X_horizon` and `Y_1..Y_horizon` using replicate stream 0
/// of `seed`.
pub fn sample_trajectory(
    model: &FiniteModel,
    initial: &Density,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = replicate_rng(seed, 0);
    let mut traj = sample_with_rng(model, initial, horizon, &mut rng)?;
    traj.seed = seed;
    Ok(traj)
}

/// Samples a trajectory from an explicit RNG. The returned `seed` field
/// is zero; callers that own the seed fill it in.
pub fn sample_with_rng<R: Rng + ?Sized>(
    model: &FiniteModel,
    initial: &Density,
    horizon: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    if horizon < 1 {
        return Err(Error::InvalidHorizon);
    }
    if initial.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            what: "initial density",
            expected: model.dim(),
            found: initial.dim(),
        });
    }
    let psi = model.space.psi();
    let initial_probs = initial.probabilities(&model.space);
    let transition_cdfs: Vec<Vec<f64>> = (0..model.dim())
        .map(|i| {
            cumulative(
                model
                    .kernel
                    .row(i)
                    .iter()
                    .zip(psi)
                    .map(|(l, w)| l * w),
            )
        })
        .collect();
    let emission_cdfs: Option<Vec<Vec<f64>>> = match &model.observation {
        ObservationModel::Finite { gamma, theta } => Some(
            (0..gamma.rows())
                .map(|i| cumulative(gamma.row(i).iter().zip(theta).map(|(g, t)| g * t)))
                .collect(),
        ),
        ObservationModel::Gaussian { .. } => None,
    };

    let mut states = Vec::with_capacity(horizon + 1);
    let mut observations = Vec::with_capacity(horizon);
    let mut x = draw(&cumulative(initial_probs.into_iter()), rng);
    states.push(x);
    for _ in 0..horizon {
        x = draw(&transition_cdfs[x], rng);
        states.push(x);
        let y = match (&model.observation, &emission_cdfs) {
            (_, Some(cdfs)) => Observation::Symbol(draw(&cdfs[x], rng)),
            (ObservationModel::Gaussian { means, sigma }, None) => {
                let z: f64 = rng.sample(StandardNormal);
                Observation::Real(means[x] + sigma * z)
            }
            (ObservationModel::Finite { .. }, None) => unreachable!(),
        };
        observations.push(y);
    }
    Ok(Trajectory {
        states,
        observations,
        seed: 0,
    })
}

fn cumulative(probs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    probs
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

/// Inverse-CDF draw; the last atom with positive probability absorbs any
/// rounding shortfall in the total.
fn draw<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> usize {
    let total = *cdf.last().expect("nonempty distribution");
    let u: f64 = rng.random::<f64>() * total;
    match cdf.iter().position(|&c| u < c) {
        Some(i) => i,
        None => {
            let mut i = cdf.len() - 1;
            while i > 0 && cdf[i] == cdf[i - 1] {
                i -= 1;
            }
            i
        }
    }
}
