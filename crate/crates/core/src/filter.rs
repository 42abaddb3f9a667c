//! Forward filtering recursion for arbitrary priors, correct/misspecified
//! filter pairs, total-variation distance and decay-rate estimation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Density, FiniteModel, Observation, StateSpace, TransitionKernel};
use crate::simulate::likelihood_vector;

/// Normalizers at or below this are treated as zero.
pub const UNDERFLOW_FLOOR: f64 = 1e-300;
/// TV entries below this are skipped by [`decay_rate`].
pub const TV_FLOOR: f64 = 1e-280;
const BRUTE_FORCE_PATH_LIMIT: f64 = 1e7;

/// Which prior seeded a filter run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriorLabel {
    Nu,
    Beta,
    Custom(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRun {
    pub prior_label: PriorLabel,
    /// `π_0, …, π_N`.
    pub densities: Vec<Density>,
    /// The observation record that drove the run.
    pub observations: Vec<Observation>,
}

impl FilterRun {
    pub fn last(&self) -> &Density {
        self.densities.last().expect("a run always holds its prior")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRun {
    /// Filter started from `nu`.
    pub run_correct: FilterRun,
    /// Filter started from `beta` on the same observations.
    pub run_wrong: FilterRun,
    /// `‖π_n^ν − π_n^{βν}‖` for `n = 0..N`.
    pub tv: Vec<f64>,
}

/// One prediction step: `out[x] = Σ_z λ(z, x) π(z) ψ(z)`.
pub fn predict(pi: &Density, kernel: &TransitionKernel, space: &StateSpace) -> Density {
    Density::from_raw(kernel.push_forward(pi.values(), space))
}

fn unnormalized_update(
    v: &[f64],
    likelihood: &[f64],
    kernel: &TransitionKernel,
    space: &StateSpace,
) -> Vec<f64> {
    let mut out = kernel.push_forward(v, space);
    out.iter_mut().zip(likelihood).for_each(|(o, l)| *o *= l);
    out
}

fn normalize(mut v: Vec<f64>, space: &StateSpace, step: usize) -> Result<(Vec<f64>, f64)> {
    let c = space.integrate(&v);
    if !(c > UNDERFLOW_FLOOR) {
        return Err(Error::ZeroLikelihood { step });
    }
    v.iter_mut().for_each(|x| *x /= c);
    Ok((v, c))
}

/// Bayes update with a precomputed likelihood vector.
pub fn filter_step_with_likelihood(
    pi_prev: &Density,
    likelihood: &[f64],
    model: &FiniteModel,
) -> Result<Density> {
    let raw = unnormalized_update(pi_prev.values(), likelihood, &model.kernel, &model.space);
    let (v, _) = normalize(raw, &model.space, 1)?;
    Ok(Density::from_raw(v))
}

/// One step of the recursive Bayes formula.
pub fn filter_step(pi_prev: &Density, y: Observation, model: &FiniteModel) -> Result<Density> {
    let likelihood = likelihood_vector(&model.observation, y)?;
    filter_step_with_likelihood(pi_prev, &likelihood, model)
}

pub fn run_filter(
    prior: &Density,
    observations: &[Observation],
    model: &FiniteModel,
    label: PriorLabel,
) -> Result<FilterRun> {
    check_dim(prior, model, "prior")?;
    let mut densities = Vec::with_capacity(observations.len() + 1);
    densities.push(prior.clone());
    for (k, &y) in observations.iter().enumerate() {
        let step = k + 1;
        let likelihood = likelihood_vector(&model.observation, y)?;
        let raw = unnormalized_update(
            densities[k].values(),
            &likelihood,
            &model.kernel,
            &model.space,
        );
        let (v, _) = normalize(raw, &model.space, step)?;
        densities.push(Density::from_raw(v));
    }
    Ok(FilterRun {
        prior_label: label,
        densities,
        observations: observations.to_vec(),
    })
}

/// Runs the filter from `nu` and from `beta` on the same observations.
///
/// The gap `π^ν − π^{βν}` is propagated by its own linear recursion
/// instead of being recomputed as a difference of two normalized
/// densities. Subtracting two nearly equal densities loses all relative
/// accuracy once the gap reaches rounding level; the propagated gap keeps
/// it until it underflows.
pub fn run_filter_pair(
    nu: &Density,
    beta: &Density,
    observations: &[Observation],
    model: &FiniteModel,
) -> Result<PairRun> {
    check_dim(nu, model, "nu")?;
    check_dim(beta, model, "beta")?;
    if let Some(state) = beta.values().iter().position(|&b| b <= 0.0) {
        return Err(Error::BetaNotBoundedBelow { state });
    }
    let space = &model.space;
    let kernel = &model.kernel;
    let n = observations.len();
    let mut correct = Vec::with_capacity(n + 1);
    let mut wrong = Vec::with_capacity(n + 1);
    let mut tv = Vec::with_capacity(n + 1);
    correct.push(nu.clone());
    wrong.push(beta.clone());
    let mut gap: Vec<f64> = nu.values().iter().zip(beta.values()).map(|(a, b)| a - b).collect();
    tv.push(l1_norm(&gap, space));

    for (k, &y) in observations.iter().enumerate() {
        let step = k + 1;
        let likelihood = likelihood_vector(&model.observation, y)?;
        let (pi_nu, c_nu) = normalize(
            unnormalized_update(correct[k].values(), &likelihood, kernel, space),
            space,
            step,
        )?;
        let (pi_beta, _) = normalize(
            unnormalized_update(wrong[k].values(), &likelihood, kernel, space),
            space,
            step,
        )?;
        // π^ν_n − π^β_n = (A e − π^β_n ⟨A e⟩) / c_ν with A e the unnormalized
        // update of the previous gap.
        let moved = unnormalized_update(&gap, &likelihood, kernel, space);
        let shift = space.integrate(&moved);
        gap = moved
            .iter()
            .zip(&pi_beta)
            .map(|(m, p)| (m - p * shift) / c_nu)
            .collect();
        tv.push(l1_norm(&gap, space).min(2.0));
        correct.push(Density::from_raw(pi_nu));
        wrong.push(Density::from_raw(pi_beta));
    }
    Ok(PairRun {
        run_correct: FilterRun {
            prior_label: PriorLabel::Nu,
            densities: correct,
            observations: observations.to_vec(),
        },
        run_wrong: FilterRun {
            prior_label: PriorLabel::Beta,
            densities: wrong,
            observations: observations.to_vec(),
        },
        tv,
    })
}

fn l1_norm(v: &[f64], space: &StateSpace) -> f64 {
    v.iter().zip(space.psi()).map(|(a, w)| a.abs() * w).sum()
}

fn check_dim(p: &Density, model: &FiniteModel, what: &'static str) -> Result<()> {
    if p.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            what,
            expected: model.dim(),
            found: p.dim(),
        });
    }
    Ok(())
}

/// Total variation in the L1-against-ψ convention, range `[0, 2]`.
pub fn tv_norm(p: &Density, q: &Density, space: &StateSpace) -> Result<f64> {
    if p.dim() != q.dim() || p.dim() != space.dim() {
        return Err(Error::DimensionMismatch {
            what: "tv_norm operands",
            expected: space.dim(),
            found: if p.dim() != space.dim() { p.dim() } else { q.dim() },
        });
    }
    let diff: Vec<f64> = p.values().iter().zip(q.values()).map(|(a, b)| a - b).collect();
    Ok(l1_norm(&diff, space))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayRate {
    /// Least-squares slope of `log tv[n]` against `n`; `-inf` once converged.
    pub slope: f64,
    /// The trailing window fell below [`TV_FLOOR`].
    pub converged: bool,
    /// Number of points that entered the fit.
    pub points: usize,
}

/// Empirical exponential decay rate over the trailing `window_fraction`
/// of the sequence.
///
/// Entries below [`TV_FLOOR`] are skipped. A window in which fewer than
/// two entries survive because the rest underflowed reports `converged`
/// with a `-inf` slope.
pub fn decay_rate(tv: &[f64], window_fraction: f64) -> Result<DecayRate> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "window fraction {window_fraction} outside (0, 1]"
        )));
    }
    if tv.is_empty() {
        return Err(Error::InsufficientData { usable: 0 });
    }
    let len = tv.len();
    let width = ((window_fraction * len as f64).ceil() as usize).clamp(1, len);
    let start = len - width;
    let mut underflowed = 0usize;
    let points: Vec<(f64, f64)> = tv[start..]
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| {
            if v >= TV_FLOOR && v.is_finite() {
                Some(((start + i) as f64, v.ln()))
            } else {
                underflowed += 1;
                None
            }
        })
        .collect();
    if points.len() < 2 {
        if underflowed > 0 {
            return Ok(DecayRate {
                slope: f64::NEG_INFINITY,
                converged: true,
                points: points.len(),
            });
        }
        return Err(Error::InsufficientData {
            usable: points.len(),
        });
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (sxy, sxx) = points.iter().fold((0.0, 0.0), |(sxy, sxx), (x, y)| {
        let dx = x - mean_x;
        (sxy + dx * (y - mean_y), sxx + dx * dx)
    });
    Ok(DecayRate {
        slope: sxy / sxx,
        converged: false,
        points: points.len(),
    })
}

/// Number of paths a brute-force enumeration over `steps` transitions visits.
pub(crate) fn path_count(d: usize, steps: usize) -> f64 {
    (d as f64).powi(steps as i32 + 1)
}

/// Posterior density of `X_N` by enumerating every state path.
///
/// Independent of the recursion; intended as a test oracle.
pub fn brute_force_posterior(
    model: &FiniteModel,
    prior: &Density,
    observations: &[Observation],
) -> Result<Density> {
    let d = model.dim();
    let n = observations.len();
    let paths = path_count(d, n);
    if paths > BRUTE_FORCE_PATH_LIMIT {
        return Err(Error::InstanceTooLarge { paths });
    }
    let psi = model.space.psi();
    let likelihoods: Vec<Vec<f64>> = observations
        .iter()
        .map(|&y| likelihood_vector(&model.observation, y))
        .collect::<Result<_>>()?;
    let mut marginal = vec![0.0; d];
    let mut path = vec![0usize; n + 1];
    for index in 0..paths as usize {
        let mut rest = index;
        for slot in path.iter_mut() {
            *slot = rest % d;
            rest /= d;
        }
        let mut weight = prior.values()[path[0]] * psi[path[0]];
        for k in 1..=n {
            let (from, to) = (path[k - 1], path[k]);
            weight *= model.kernel.get(from, to) * psi[to] * likelihoods[k - 1][to];
        }
        marginal[path[n]] += weight;
    }
    let total: f64 = marginal.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ConditioningProbabilityZero);
    }
    Ok(Density::from_raw(
        marginal.iter().zip(psi).map(|(p, w)| p / total / w).collect(),
    ))
}
