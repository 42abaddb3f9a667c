//! Backward conditional density of the initial state,
//! `ρ_n(u, x) = P(X_0 ∈ du | X_n = x, Y_1..Y_n) / ψ(du)`,
//! its oscillation, the contraction bound on that oscillation, and the
//! likelihood ratio of the observation laws under two priors.
//!
//! `ρ_n` is stored as a reference column `ρ_n(·, 0)` plus offsets
//! `ρ_n(u, x) − ρ_n(u, 0)`. The offsets obey their own linear recursion,
//! so the oscillation stays accurate long after it drops below the
//! rounding level of the density values themselves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{filter_step, path_count, FilterRun};
use crate::matrix::Matrix;
use crate::model::{Coefficients, Density, FiniteModel, Observation, StateSpace, TransitionKernel};
use crate::simulate::likelihood_vector;

const BRUTE_FORCE_PATH_LIMIT: f64 = 1e7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardDensity {
    step: usize,
    reference: Vec<f64>,
    offsets: Matrix,
}

impl BackwardDensity {
    /// `ρ_0(u, x) = 1{u = x} / ψ(u)`: at time zero the initial state is
    /// the conditioning state.
    pub fn identity(space: &StateSpace) -> Self {
        let d = space.dim();
        let psi = space.psi();
        let reference: Vec<f64> = (0..d).map(|u| if u == 0 { 1.0 / psi[0] } else { 0.0 }).collect();
        let offsets = Matrix::from_fn(d, d, |u, x| {
            let own = if u == x { 1.0 / psi[u] } else { 0.0 };
            own - reference[u]
        });
        Self {
            step: 0,
            reference,
            offsets,
        }
    }

    fn from_columns(step: usize, columns: &Matrix) -> Self {
        let d = columns.rows();
        let reference = columns.column(0);
        let offsets = Matrix::from_fn(d, d, |u, x| columns[(u, x)] - reference[u]);
        Self {
            step,
            reference,
            offsets,
        }
    }

    /// Time index `n` of `ρ_n`.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn dim(&self) -> usize {
        self.reference.len()
    }

    pub fn get(&self, u: usize, x: usize) -> f64 {
        self.reference[u] + self.offsets[(u, x)]
    }

    /// Density in `u` conditioned on `X_n = x`.
    pub fn column(&self, x: usize) -> Vec<f64> {
        (0..self.dim()).map(|u| self.get(u, x)).collect()
    }

    /// Full matrix `rho[u][x]`.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.dim(), self.dim(), |u, x| self.get(u, x))
    }

    /// Per-`u` extrema over conditioning states and their difference.
    pub fn oscillation(&self) -> Oscillation {
        let d = self.dim();
        let mut delta = Vec::with_capacity(d);
        let mut sup = Vec::with_capacity(d);
        let mut inf = Vec::with_capacity(d);
        for u in 0..d {
            let row = self.offsets.row(u);
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            delta.push(hi - lo);
            sup.push(self.reference[u] + hi);
            inf.push(self.reference[u] + lo);
        }
        Oscillation {
            delta,
            rho_sup: sup,
            rho_inf: inf,
        }
    }

    fn renormalize(&mut self, space: &StateSpace) {
        let d = self.dim();
        let psi = space.psi();
        let s0 = space.integrate(&self.reference);
        let shifts: Vec<f64> = (0..d)
            .map(|x| (0..d).map(|u| self.offsets[(u, x)] * psi[u]).sum())
            .collect();
        for u in 0..d {
            for (x, &sx) in shifts.iter().enumerate() {
                let g = self.offsets[(u, x)];
                self.offsets[(u, x)] = (s0 * g - sx * self.reference[u]) / (s0 * (s0 + sx));
            }
        }
        self.reference.iter_mut().for_each(|r| *r /= s0);
    }
}

/// `δ_n(u) = max_x ρ_n(u, x) − min_x ρ_n(u, x)` with the extrema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oscillation {
    pub delta: Vec<f64>,
    pub rho_sup: Vec<f64>,
    pub rho_inf: Vec<f64>,
}

pub fn oscillation(rho: &BackwardDensity) -> Oscillation {
    rho.oscillation()
}

/// `ρ_1(u; x) = λ(u; x) ϑ(u) / Σ_v λ(v; x) ϑ(v) ψ(v)`.
pub fn backward_init(
    theta0: &Density,
    kernel: &TransitionKernel,
    space: &StateSpace,
) -> Result<BackwardDensity> {
    let d = space.dim();
    if theta0.dim() != d {
        return Err(Error::DimensionMismatch {
            what: "initial density",
            expected: d,
            found: theta0.dim(),
        });
    }
    if theta0.values().iter().any(|&t| t <= 0.0) {
        return Err(Error::InvalidDensity(
            "backward recursion needs an initial density bounded below".into(),
        ));
    }
    let theta = theta0.values();
    let psi = space.psi();
    let mut columns = Matrix::zeros(d, d);
    for x in 0..d {
        let norm: f64 = (0..d).map(|v| kernel.get(v, x) * theta[v] * psi[v]).sum();
        if !(norm > 0.0) {
            return Err(Error::StateUnreachable { state: x });
        }
        for u in 0..d {
            columns[(u, x)] = kernel.get(u, x) * theta[u] / norm;
        }
    }
    Ok(BackwardDensity::from_columns(1, &columns))
}

/// Mixing weights `w_x(x') = λ(x', x) π(x') ψ(x') / Σ_v λ(v, x) π(v) ψ(v)`,
/// stored as `weights[x][x']`.
fn mixing_weights(
    pi: &Density,
    kernel: &TransitionKernel,
    space: &StateSpace,
    step: usize,
) -> Result<Matrix> {
    let d = space.dim();
    let psi = space.psi();
    let p = pi.values();
    let mut weights = Matrix::zeros(d, d);
    for x in 0..d {
        let mut norm = 0.0;
        for xp in 0..d {
            let w = kernel.get(xp, x) * p[xp] * psi[xp];
            weights[(x, xp)] = w;
            norm += w;
        }
        if !(norm > 0.0) {
            return Err(Error::ZeroPredictedMass { state: x, step });
        }
        weights.row_mut(x).iter_mut().for_each(|w| *w /= norm);
    }
    Ok(weights)
}

/// `ρ_n` from `ρ_{n−1}` and the filter density `π_{n−1}` of the same prior.
pub fn backward_step(
    rho_prev: &BackwardDensity,
    pi_prev: &Density,
    kernel: &TransitionKernel,
    space: &StateSpace,
) -> Result<BackwardDensity> {
    let d = space.dim();
    let step = rho_prev.step + 1;
    let weights = mixing_weights(pi_prev, kernel, space, step)?;
    let base = weights.row(0);
    let mut reference = rho_prev.reference.clone();
    let mut offsets = Matrix::zeros(d, d);
    for u in 0..d {
        let g = rho_prev.offsets.row(u);
        reference[u] += base.iter().zip(g).map(|(w, gv)| w * gv).sum::<f64>();
        for x in 1..d {
            offsets[(u, x)] = weights
                .row(x)
                .iter()
                .zip(base)
                .zip(g)
                .map(|((wx, w0), gv)| (wx - w0) * gv)
                .sum();
        }
    }
    let mut next = BackwardDensity {
        step,
        reference,
        offsets,
    };
    next.renormalize(space);
    Ok(next)
}

/// `1 − (1/λ*) Σ_x' π(x') min_r λ(x', r) ψ(x')`, the per-step contraction
/// factor of the oscillation.
pub fn contraction_factor(pi: &Density, minima: &[f64], lambda_upper: f64, space: &StateSpace) -> f64 {
    1.0 - pi.expect(minima, space) / lambda_upper
}

/// Bound on `δ_n`, or a vacuous marker when the relaxed
/// mixing coefficient is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationBound {
    pub vacuous: bool,
    /// `bounds[n - 1][u]` bounds `δ_n(u)` for `n = 1..`; infinite when vacuous.
    pub bounds: Vec<Vec<f64>>,
    /// `Σ_{k=2}^n Σ_x' π_{k−1}(x') min_r λ(x', r) ψ(x')` for each `n`.
    pub exponent_sums: Vec<f64>,
}

fn oscillation_prefactor(coeffs: &Coefficients, theta0: &Density) -> Option<f64> {
    let theta_min = theta0.values().iter().copied().fold(f64::INFINITY, f64::min);
    if coeffs.lambda_diamond > 0.0 && theta_min > 0.0 {
        Some(coeffs.lambda_upper * coeffs.lambda_upper / (theta_min * coeffs.lambda_diamond))
    } else {
        None
    }
}

fn bound_at(prefactor: Option<f64>, theta0: &Density, exponent_sum: f64, lambda_upper: f64) -> Vec<f64> {
    match prefactor {
        Some(c) => {
            let decay = (-exponent_sum / lambda_upper).exp();
            theta0.values().iter().map(|t| c * t * decay).collect()
        }
        None => vec![f64::INFINITY; theta0.dim()],
    }
}

/// Bounds on `δ_n(u)` for `n = 1..=pi_history.len()`, where
/// `pi_history[k]` is the filter density `π_k` started from `theta0`.
pub fn oscillation_bound(
    pi_history: &[Density],
    coeffs: &Coefficients,
    theta0: &Density,
    kernel: &TransitionKernel,
    space: &StateSpace,
) -> OscillationBound {
    let prefactor = oscillation_prefactor(coeffs, theta0);
    let minima = kernel.row_minima();
    let mut exponent_sum = 0.0;
    let mut bounds = Vec::with_capacity(pi_history.len());
    let mut sums = Vec::with_capacity(pi_history.len());
    for n in 1..=pi_history.len() {
        if n >= 2 {
            exponent_sum += pi_history[n - 1].expect(&minima, space);
        }
        sums.push(exponent_sum);
        bounds.push(bound_at(prefactor, theta0, exponent_sum, coeffs.lambda_upper));
    }
    OscillationBound {
        vacuous: prefactor.is_none(),
        bounds,
        exponent_sums: sums,
    }
}

/// Oscillation of `ρ_n` together with its bound at the same `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationRecord {
    pub step: usize,
    pub delta: Vec<f64>,
    pub rho_sup: Vec<f64>,
    pub rho_inf: Vec<f64>,
    /// Bound on `delta`; infinite entries when vacuous or at `n = 0`.
    pub bound: Vec<f64>,
    pub exponent_sum: f64,
    /// Factor relating `δ_n` to `δ_{n−1}`; `None` for `n ≤ 1`.
    pub contraction: Option<f64>,
}

/// Expected value of `ν/β(X_0)` given the observations, from `ρ_n` and
/// the `β`-filter `π_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodRatio {
    pub value: f64,
}

pub fn likelihood_ratio(
    rho: &BackwardDensity,
    pi: &Density,
    nu_over_beta: &[f64],
    space: &StateSpace,
) -> LikelihoodRatio {
    let conditional = conditional_ratio(rho, nu_over_beta, space);
    LikelihoodRatio {
        value: pi.expect(&conditional, space),
    }
}

/// `h(x) = Σ_u (ν/β)(u) ρ_n(u, x) ψ(u)`.
fn conditional_ratio(rho: &BackwardDensity, nu_over_beta: &[f64], space: &StateSpace) -> Vec<f64> {
    (0..rho.dim())
        .map(|x| space.integrate(&(0..rho.dim()).map(|u| nu_over_beta[u] * rho.get(u, x)).collect::<Vec<_>>()))
        .collect()
}

/// Residual of the change-of-prior identities at the last step of two
/// runs on the same observations.
///
/// Checks, for every state `x`,
/// `L (π^ν(x) − π^β(x)) = π^β(x) (h(x) − L)` and
/// `L π^ν(x) = π^β(x) h(x)`, with `h` the conditional ratio and `L` the
/// likelihood ratio. Returns the largest absolute residual.
pub fn check_prior_identities(
    run_beta: &FilterRun,
    run_nu: &FilterRun,
    rho: &BackwardDensity,
    nu_over_beta: &[f64],
    space: &StateSpace,
) -> Result<f64> {
    if run_beta.observations != run_nu.observations {
        return Err(Error::ObservationMismatch);
    }
    if rho.step() != run_beta.observations.len() {
        return Err(Error::InvalidArgument(format!(
            "backward density at step {} does not match a run of length {}",
            rho.step(),
            run_beta.observations.len()
        )));
    }
    Ok(identity_residual(
        run_beta.last(),
        run_nu.last(),
        rho,
        nu_over_beta,
        space,
    ))
}

pub(crate) fn identity_residual(
    pi_beta: &Density,
    pi_nu: &Density,
    rho: &BackwardDensity,
    nu_over_beta: &[f64],
    space: &StateSpace,
) -> f64 {
    let h = conditional_ratio(rho, nu_over_beta, space);
    let l = pi_beta.expect(&h, space);
    let mut worst: f64 = 0.0;
    for x in 0..space.dim() {
        let pb = pi_beta.values()[x];
        let pn = pi_nu.values()[x];
        let gap = l * (pn - pb) - pb * (h[x] - l);
        let joint = l * pn - pb * h[x];
        worst = worst.max(gap.abs()).max(joint.abs());
    }
    worst
}

/// Co-evolves `ρ_n` and the filter density `π_n` started from the same
/// prior, so the two can never be paired inconsistently.
#[derive(Debug, Clone)]
pub struct BackwardContext<'a> {
    model: &'a FiniteModel,
    theta: Density,
    rho: BackwardDensity,
    pi: Density,
    minima: Vec<f64>,
    lambda_upper: f64,
    prefactor: Option<f64>,
    exponent_sum: f64,
    contraction: Option<f64>,
}

impl<'a> BackwardContext<'a> {
    pub fn new(model: &'a FiniteModel, theta: &Density, coeffs: &Coefficients) -> Result<Self> {
        if theta.dim() != model.dim() {
            return Err(Error::DimensionMismatch {
                what: "initial density",
                expected: model.dim(),
                found: theta.dim(),
            });
        }
        if theta.values().iter().any(|&t| t <= 0.0) {
            return Err(Error::InvalidDensity(
                "backward recursion needs an initial density bounded below".into(),
            ));
        }
        Ok(Self {
            model,
            theta: theta.clone(),
            rho: BackwardDensity::identity(&model.space),
            pi: theta.clone(),
            minima: model.kernel.row_minima(),
            lambda_upper: coeffs.lambda_upper,
            prefactor: oscillation_prefactor(coeffs, theta),
            exponent_sum: 0.0,
            contraction: None,
        })
    }

    pub fn step(&self) -> usize {
        self.rho.step()
    }

    pub fn rho(&self) -> &BackwardDensity {
        &self.rho
    }

    pub fn pi(&self) -> &Density {
        &self.pi
    }

    pub fn exponent_sum(&self) -> f64 {
        self.exponent_sum
    }

    /// Consumes `Y_{n+1}`: advances `ρ_n → ρ_{n+1}` using `π_n`, then
    /// `π_n → π_{n+1}`.
    pub fn advance(&mut self, y: Observation) -> Result<()> {
        let space = &self.model.space;
        let kernel = &self.model.kernel;
        let n = self.rho.step();
        if n == 0 {
            self.rho = backward_init(&self.pi, kernel, space)?;
            self.contraction = None;
        } else {
            self.rho = backward_step(&self.rho, &self.pi, kernel, space)?;
            let mass = self.pi.expect(&self.minima, space);
            self.exponent_sum += mass;
            self.contraction = Some(1.0 - mass / self.lambda_upper);
        }
        self.pi = filter_step(&self.pi, y, self.model).map_err(|e| match e {
            Error::ZeroLikelihood { .. } => Error::ZeroLikelihood { step: n + 1 },
            other => other,
        })?;
        Ok(())
    }

    pub fn record(&self) -> OscillationRecord {
        let osc = self.rho.oscillation();
        let bound = if self.rho.step() == 0 {
            vec![f64::INFINITY; self.model.dim()]
        } else {
            bound_at(self.prefactor, &self.theta, self.exponent_sum, self.lambda_upper)
        };
        OscillationRecord {
            step: self.rho.step(),
            delta: osc.delta,
            rho_sup: osc.rho_sup,
            rho_inf: osc.rho_inf,
            bound,
            exponent_sum: self.exponent_sum,
            contraction: self.contraction,
        }
    }

    pub fn bound_is_vacuous(&self) -> bool {
        self.prefactor.is_none()
    }

    pub fn likelihood_ratio(&self, nu_over_beta: &[f64]) -> LikelihoodRatio {
        likelihood_ratio(&self.rho, &self.pi, nu_over_beta, &self.model.space)
    }
}

/// `P(X_0 = u | X_n = x_n, Y_1..Y_n) / ψ(u)` by enumerating every path.
///
/// Independent of the recursion; intended as a test oracle.
pub fn brute_force_backward(
    model: &FiniteModel,
    theta0: &Density,
    observations: &[Observation],
    x_n: usize,
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
    let mut by_start = vec![0.0; d];
    let mut path = vec![0usize; n + 1];
    for index in 0..paths as usize {
        let mut rest = index;
        for slot in path.iter_mut() {
            *slot = rest % d;
            rest /= d;
        }
        if path[n] != x_n {
            continue;
        }
        let mut weight = theta0.values()[path[0]] * psi[path[0]];
        for k in 1..=n {
            let (from, to) = (path[k - 1], path[k]);
            weight *= model.kernel.get(from, to) * psi[to] * likelihoods[k - 1][to];
        }
        by_start[path[0]] += weight;
    }
    let total: f64 = by_start.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ConditioningProbabilityZero);
    }
    Ok(Density::from_raw(
        by_start.iter().zip(psi).map(|(p, w)| p / total / w).collect(),
    ))
}
