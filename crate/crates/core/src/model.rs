//! Finite-state hidden Markov model: state space with atomic reference
//! weights, transition density, observation likelihoods, priors, the
//! invariant density and the stability coefficients derived from it.
//!
//! All densities are taken with respect to the reference weights `psi`:
//! the probability of atom `i` under a density `p` is `p[i] * psi[i]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Tolerance applied to kernel and likelihood row sums by the direct
/// constructors. Rows within it are renormalized.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;
/// Normalization tolerance of a [`Density`].
pub const DENSITY_TOLERANCE: f64 = 1e-10;

const INVARIANT_MAX_ITERATIONS: usize = 1_000_000;
const INVARIANT_STEP_TOLERANCE: f64 = 1e-13;
const INVARIANT_POLISH_ITERATIONS: usize = 1_000;
const INVARIANT_RESIDUAL_TOLERANCE: f64 = 1e-10;

/// Divides by `mass` unless it is already 1 up to rounding, so that
/// normalized input is left bit-for-bit unchanged.
fn rescale(values: &mut [f64], mass: f64) {
    if (mass - 1.0).abs() > values.len() as f64 * f64::EPSILON {
        values.iter_mut().for_each(|v| *v /= mass);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    psi: Vec<f64>,
}

impl StateSpace {
    pub fn new(psi: Vec<f64>) -> Result<Self> {
        if psi.is_empty() {
            return Err(Error::InvalidStateSpace("state space must have at least one atom".into()));
        }
        if let Some(i) = psi.iter().position(|&w| !(w.is_finite() && w > 0.0)) {
            return Err(Error::InvalidStateSpace(format!(
                "psi[{i}] = {} is not a positive finite weight",
                psi[i]
            )));
        }
        Ok(Self { psi })
    }

    /// Counting measure on `d` atoms.
    pub fn counting(d: usize) -> Result<Self> {
        Self::new(vec![1.0; d])
    }

    pub fn dim(&self) -> usize {
        self.psi.len()
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn total_weight(&self) -> f64 {
        self.psi.iter().sum()
    }

    /// `Σ_i f[i] * psi[i]`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.psi).map(|(a, w)| a * w).sum()
    }
}

/// One-step transition density `lambda[i][j]` with respect to `psi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionKernel {
    lambda: Matrix,
}

impl TransitionKernel {
    pub fn new(lambda: Matrix, space: &StateSpace) -> Result<Self> {
        Self::with_tolerance(lambda, space, ROW_SUM_TOLERANCE)
    }

    /// Validates row sums against `psi` within `tolerance`, then
    /// renormalizes every row.
    pub fn with_tolerance(mut lambda: Matrix, space: &StateSpace, tolerance: f64) -> Result<Self> {
        let d = space.dim();
        if lambda.rows() != d || lambda.cols() != d {
            return Err(Error::DimensionMismatch {
                what: "transition matrix",
                expected: d,
                found: if lambda.rows() != d { lambda.rows() } else { lambda.cols() },
            });
        }
        for i in 0..d {
            if let Some(j) = lambda.row(i).iter().position(|&v| !(v.is_finite() && v >= 0.0)) {
                return Err(Error::InvalidKernel(format!(
                    "entry ({i}, {j}) = {} is negative or not finite",
                    lambda[(i, j)]
                )));
            }
            let sum = space.integrate(lambda.row(i));
            if (sum - 1.0).abs() > tolerance {
                return Err(Error::InvalidKernel(format!(
                    "row {i} integrates to {sum} against psi"
                )));
            }
            rescale(lambda.row_mut(i), sum);
        }
        Ok(Self { lambda })
    }

    pub fn dim(&self) -> usize {
        self.lambda.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.lambda
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.lambda[(from, to)]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        self.lambda.row(from)
    }

    /// Essential infimum of each row (minimum over atoms; every atom has
    /// positive weight).
    pub fn row_minima(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.row(i).iter().copied().fold(f64::INFINITY, f64::min))
            .collect()
    }

    /// Adjoint action on densities: `out[y] = Σ_x lambda[x][y] p[x] psi[x]`.
    pub fn push_forward(&self, p: &[f64], space: &StateSpace) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d];
        for (x, (&px, &wx)) in p.iter().zip(space.psi()).enumerate() {
            let mass = px * wx;
            if mass == 0.0 {
                continue;
            }
            for (o, &l) in out.iter_mut().zip(self.row(x)) {
                *o += l * mass;
            }
        }
        out
    }

    /// Forward action on functions: `out[x] = Σ_y lambda[x][y] f[y] psi[y]`.
    pub fn apply(&self, f: &[f64], space: &StateSpace) -> Vec<f64> {
        (0..self.dim())
            .map(|x| {
                self.row(x)
                    .iter()
                    .zip(f)
                    .zip(space.psi())
                    .map(|((l, v), w)| l * v * w)
                    .sum()
            })
            .collect()
    }
}

/// Observation law `P(Y_n ∈ · | X_n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ObservationModel {
    /// Finite alphabet: `gamma[i][k]` is the likelihood of symbol `k` in
    /// state `i` with respect to symbol weights `theta`.
    Finite { gamma: Matrix, theta: Vec<f64> },
    /// Additive Gaussian noise around a per-state mean.
    Gaussian { means: Vec<f64>, sigma: f64 },
}

impl ObservationModel {
    pub fn finite(gamma: Matrix, theta: Option<Vec<f64>>) -> Result<Self> {
        Self::finite_with_tolerance(gamma, theta, ROW_SUM_TOLERANCE)
    }

    pub fn finite_with_tolerance(
        mut gamma: Matrix,
        theta: Option<Vec<f64>>,
        tolerance: f64,
    ) -> Result<Self> {
        let p = gamma.cols();
        if p == 0 {
            return Err(Error::InvalidObservationModel("empty observation alphabet".into()));
        }
        let theta = theta.unwrap_or_else(|| vec![1.0; p]);
        if theta.len() != p {
            return Err(Error::DimensionMismatch {
                what: "observation weights theta",
                expected: p,
                found: theta.len(),
            });
        }
        if let Some(k) = theta.iter().position(|&t| !(t.is_finite() && t > 0.0)) {
            return Err(Error::InvalidObservationModel(format!(
                "theta[{k}] = {} is not a positive weight",
                theta[k]
            )));
        }
        for i in 0..gamma.rows() {
            if let Some(k) = gamma.row(i).iter().position(|&v| !(v.is_finite() && v >= 0.0)) {
                return Err(Error::InvalidObservationModel(format!(
                    "gamma entry ({i}, {k}) = {} is negative or not finite",
                    gamma[(i, k)]
                )));
            }
            let sum: f64 = gamma.row(i).iter().zip(&theta).map(|(g, t)| g * t).sum();
            if (sum - 1.0).abs() > tolerance {
                return Err(Error::InvalidObservationModel(format!(
                    "gamma row {i} integrates to {sum} against theta"
                )));
            }
            rescale(gamma.row_mut(i), sum);
        }
        Ok(Self::Finite { gamma, theta })
    }

    pub fn gaussian(means: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidObservationModel(format!(
                "sigma = {sigma} must be positive"
            )));
        }
        if let Some(i) = means.iter().position(|m| !m.is_finite()) {
            return Err(Error::InvalidObservationModel(format!("means[{i}] is not finite")));
        }
        Ok(Self::Gaussian { means, sigma })
    }

    /// Number of states the model is defined for.
    pub fn states(&self) -> usize {
        match self {
            Self::Finite { gamma, .. } => gamma.rows(),
            Self::Gaussian { means, .. } => means.len(),
        }
    }

    /// Size of the alphabet for finite models.
    pub fn alphabet(&self) -> Option<usize> {
        match self {
            Self::Finite { gamma, .. } => Some(gamma.cols()),
            Self::Gaussian { .. } => None,
        }
    }
}

/// A single observation value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Observation {
    Symbol(usize),
    Real(f64),
}

impl std::fmt::Display for Observation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Observation::Symbol(s) => write!(f, "{s}"),
            Observation::Real(v) => write!(f, "{v:.16e}"),
        }
    }
}

/// Nonnegative density with respect to `psi`, normalized to total mass 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    values: Vec<f64>,
}

impl Density {
    pub fn new(values: Vec<f64>, space: &StateSpace) -> Result<Self> {
        Self::check_entries(&values, space)?;
        let mass = space.integrate(&values);
        if (mass - 1.0).abs() > DENSITY_TOLERANCE {
            return Err(Error::InvalidDensity(format!(
                "total mass {mass} differs from 1"
            )));
        }
        Ok(Self { values })
    }

    /// Accepts values whose total mass is within `tolerance` of 1 and
    /// rescales them to unit mass.
    pub fn normalized(values: Vec<f64>, space: &StateSpace, tolerance: f64) -> Result<Self> {
        Self::check_entries(&values, space)?;
        let mass = space.integrate(&values);
        if !(mass > 0.0) || (mass - 1.0).abs() > tolerance {
            return Err(Error::InvalidDensity(format!(
                "total mass {mass} differs from 1"
            )));
        }
        let mut values = values;
        rescale(&mut values, mass);
        Ok(Self { values })
    }

    pub fn uniform(space: &StateSpace) -> Self {
        let total = space.total_weight();
        Self {
            values: vec![1.0 / total; space.dim()],
        }
    }

    pub fn point_mass(space: &StateSpace, state: usize) -> Self {
        let mut values = vec![0.0; space.dim()];
        values[state] = 1.0 / space.psi()[state];
        Self { values }
    }

    /// Rescales an unnormalized nonnegative vector; fails when its mass
    /// is not positive.
    pub(crate) fn from_unnormalized(mut values: Vec<f64>, space: &StateSpace) -> Option<Self> {
        let mass = space.integrate(&values);
        if !(mass > 0.0 && mass.is_finite()) {
            return None;
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Some(Self { values })
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self { values }
    }

    fn check_entries(values: &[f64], space: &StateSpace) -> Result<()> {
        if values.len() != space.dim() {
            return Err(Error::DimensionMismatch {
                what: "density",
                expected: space.dim(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(Error::InvalidDensity(format!(
                "entry {i} = {} is negative or not finite",
                values[i]
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Atom probabilities `values[i] * psi[i]`.
    pub fn probabilities(&self, space: &StateSpace) -> Vec<f64> {
        self.values.iter().zip(space.psi()).map(|(v, w)| v * w).collect()
    }

    /// `π⟨f⟩ = Σ_i f[i] values[i] psi[i]`.
    pub fn expect(&self, f: &[f64], space: &StateSpace) -> f64 {
        self.values
            .iter()
            .zip(f)
            .zip(space.psi())
            .map(|((v, fx), w)| v * fx * w)
            .sum()
    }

    pub fn max_abs_diff(&self, other: &Density) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Validated hidden Markov model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteModel {
    pub space: StateSpace,
    pub kernel: TransitionKernel,
    pub observation: ObservationModel,
}

impl FiniteModel {
    pub fn new(
        space: StateSpace,
        kernel: TransitionKernel,
        observation: ObservationModel,
    ) -> Result<Self> {
        if kernel.dim() != space.dim() {
            return Err(Error::DimensionMismatch {
                what: "transition matrix",
                expected: space.dim(),
                found: kernel.dim(),
            });
        }
        if observation.states() != space.dim() {
            return Err(Error::DimensionMismatch {
                what: "observation model states",
                expected: space.dim(),
                found: observation.states(),
            });
        }
        Ok(Self {
            space,
            kernel,
            observation,
        })
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }
}

/// A model together with the true prior `nu` and the assumed prior `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSetup {
    pub model: FiniteModel,
    pub nu: Density,
    pub beta: Density,
}

impl ModelSetup {
    /// Fails when `beta` has a zero atom: the wrong prior must be bounded
    /// below for the likelihood ratio `nu / beta` to exist.
    pub fn new(model: FiniteModel, nu: Density, beta: Density) -> Result<Self> {
        for (what, p) in [("nu", &nu), ("beta", &beta)] {
            if p.dim() != model.dim() {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: model.dim(),
                    found: p.dim(),
                });
            }
        }
        if let Some(state) = beta.values().iter().position(|&b| b <= 0.0) {
            return Err(Error::BetaNotBoundedBelow { state });
        }
        Ok(Self { model, nu, beta })
    }

    /// The Radon–Nikodym ratio `nu / beta` on atoms.
    pub fn nu_over_beta(&self) -> Vec<f64> {
        self.nu
            .values()
            .iter()
            .zip(self.beta.values())
            .map(|(n, b)| n / b)
            .collect()
    }
}

/// Invariant density of the chain by power iteration on the adjoint
/// action, started from the uniform density.
///
/// If plain iteration does not settle (a periodic chain), the average of
/// two successive iterates is accepted when it is a fixed point.
pub fn invariant_density(kernel: &TransitionKernel, space: &StateSpace) -> Result<Density> {
    let mut current = Density::uniform(space).into_values();
    let iterate = |p: &[f64]| {
        let mut next = kernel.push_forward(p, space);
        let mass = space.integrate(&next);
        next.iter_mut().for_each(|v| *v /= mass);
        let step = max_abs_diff(&next, p);
        (next, step)
    };
    for _ in 0..INVARIANT_MAX_ITERATIONS {
        let (next, mut step) = iterate(&current);
        current = next;
        if step < INVARIANT_STEP_TOLERANCE {
            // Polish down to rounding level while the iteration still contracts.
            for _ in 0..INVARIANT_POLISH_ITERATIONS {
                let (next, next_step) = iterate(&current);
                if next_step >= step {
                    break;
                }
                current = next;
                step = next_step;
            }
            return Ok(Density::from_raw(current));
        }
    }

    let next = kernel.push_forward(&current, space);
    let averaged: Vec<f64> = current.iter().zip(&next).map(|(a, b)| 0.5 * (a + b)).collect();
    let averaged = Density::from_unnormalized(averaged, space).ok_or(Error::NoInvariantDensity {
        iterations: INVARIANT_MAX_ITERATIONS,
    })?;
    if invariance_residual(kernel, space, &averaged) <= INVARIANT_RESIDUAL_TOLERANCE {
        Ok(averaged)
    } else {
        Err(Error::NoInvariantDensity {
            iterations: INVARIANT_MAX_ITERATIONS,
        })
    }
}

/// `max_y |m[y] - Σ_x lambda[x][y] m[x] psi[x]|`.
pub fn invariance_residual(kernel: &TransitionKernel, space: &StateSpace, m: &Density) -> f64 {
    max_abs_diff(&kernel.push_forward(m.values(), space), m.values())
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Stability coefficients of a kernel together with the invariant density
/// they were computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    /// Minimum of the transition density.
    pub lambda_lower: f64,
    /// Maximum of the transition density.
    pub lambda_upper: f64,
    /// Invariant-density average of the row minima.
    pub lambda_diamond: f64,
    /// `lambda_diamond / lambda_upper`, the guaranteed decay rate.
    pub rate: f64,
    /// Geometric-ergodicity prefactor, when `0 < lambda_diamond < lambda_upper`.
    pub c: Option<f64>,
    /// Geometric-ergodicity ratio `1 - rate`, under the same condition.
    pub r: Option<f64>,
    /// `lambda_diamond == lambda_upper`: the kernel is constant.
    pub degenerate: bool,
    pub invariant: Density,
}

impl Coefficients {
    /// True when the relaxed mixing condition `lambda_diamond > 0` holds.
    pub fn is_mixing(&self) -> bool {
        self.lambda_diamond > 0.0
    }
}

pub fn mixing_coefficients(model: &FiniteModel, m: &Density) -> Coefficients {
    let kernel = &model.kernel;
    let space = &model.space;
    let minima = kernel.row_minima();
    let lambda_lower = minima.iter().copied().fold(f64::INFINITY, f64::min);
    let lambda_upper = kernel
        .matrix()
        .as_slice()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let lambda_diamond: f64 = minima
        .iter()
        .zip(m.values())
        .zip(space.psi())
        .map(|((lo, mi), w)| lo * mi * w)
        .sum();
    let rate = lambda_diamond / lambda_upper;
    let degenerate = (lambda_upper - lambda_diamond).abs() <= 1e-12 * lambda_upper;
    let (c, r) = if lambda_diamond > 0.0 && !degenerate {
        let c = lambda_upper * lambda_upper / (lambda_diamond * (lambda_upper - lambda_diamond));
        (Some(c), Some(1.0 - rate))
    } else {
        (None, None)
    };
    Coefficients {
        lambda_lower,
        lambda_upper,
        lambda_diamond,
        rate,
        c,
        r,
        degenerate,
        invariant: m.clone(),
    }
}

/// Smallest `r <= r_max` such that every entry of the `r`-step transition
/// density is positive. `r_max` defaults to `2 d²`.
pub fn primitivity_check(kernel: &TransitionKernel, r_max: Option<usize>) -> Option<usize> {
    let d = kernel.dim();
    let r_max = r_max.unwrap_or(2 * d * d).max(1);
    let one_step: Vec<bool> = kernel.matrix().as_slice().iter().map(|&v| v > 0.0).collect();
    let mut reach = one_step.clone();
    for r in 1..=r_max {
        if reach.iter().all(|&b| b) {
            return Some(r);
        }
        let mut next = vec![false; d * d];
        for i in 0..d {
            for k in 0..d {
                if !reach[i * d + k] {
                    continue;
                }
                for j in 0..d {
                    next[i * d + j] |= one_step[k * d + j];
                }
            }
        }
        reach = next;
    }
    None
}
