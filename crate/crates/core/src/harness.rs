//! Built-in scenarios, replicate orchestration and the closed-form check
//! of the four-state counterexample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backward::{identity_residual, BackwardContext};
use crate::ergodicity::BOUND_SLACK;
use crate::error::{Error, Result};
use crate::filter::{decay_rate, run_filter_pair, DecayRate};
use crate::matrix::Matrix;
use crate::model::{
    invariant_density, mixing_coefficients, Coefficients, Density, FiniteModel, ModelSetup,
    Observation, ObservationModel, StateSpace, TransitionKernel,
};
use crate::simulate::{replicate_rng, sample_trajectory, sample_with_rng};

pub const SCENARIO_NAMES: [&str; 4] = ["kaijser", "example11", "mixing2", "uniformK"];
pub const DEFAULT_WINDOW_FRACTION: f64 = 0.5;
const KAIJSER_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub setup: ModelSetup,
    pub horizon: usize,
    pub replicates: usize,
    pub seed: u64,
}

fn build(rows: &[Vec<f64>], gamma: &[Vec<f64>], nu: Vec<f64>) -> Result<ModelSetup> {
    let space = StateSpace::counting(rows.len())?;
    let kernel = TransitionKernel::new(Matrix::from_rows(rows).expect("square literal"), &space)?;
    let obs = ObservationModel::finite(Matrix::from_rows(gamma).expect("rectangular literal"), None)?;
    let model = FiniteModel::new(space, kernel, obs)?;
    let nu = Density::new(nu, &model.space)?;
    let beta = Density::uniform(&model.space);
    ModelSetup::new(model, nu, beta)
}

/// Four-state cycle with lazy steps, observed through the parity of the state.
pub fn kaijser_setup(nu: Vec<f64>) -> Result<ModelSetup> {
    build(
        &[
            vec![0.5, 0.5, 0.0, 0.0],
            vec![0.0, 0.5, 0.5, 0.0],
            vec![0.0, 0.0, 0.5, 0.5],
            vec![0.5, 0.0, 0.0, 0.5],
        ],
        &[
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
        ],
        nu,
    )
}

pub fn scenario(name: &str) -> Result<Scenario> {
    let (setup, horizon, replicates, seed) = match name {
        "kaijser" => (kaijser_setup(vec![0.5, 0.2, 0.2, 0.1])?, 10_000, 1, 7),
        "example11" => (
            build(
                &[
                    vec![0.25, 0.25, 0.25, 0.25],
                    vec![0.0, 0.5, 0.5, 0.0],
                    vec![0.0, 0.0, 0.5, 0.5],
                    vec![0.5, 0.0, 0.0, 0.5],
                ],
                &[
                    vec![0.8, 0.2],
                    vec![0.2, 0.8],
                    vec![0.8, 0.2],
                    vec![0.2, 0.8],
                ],
                vec![0.7, 0.1, 0.1, 0.1],
            )?,
            500,
            20,
            11,
        ),
        "mixing2" => (
            build(
                &[vec![0.5, 0.5], vec![0.3, 0.7]],
                &[vec![0.8, 0.2], vec![0.2, 0.8]],
                vec![0.9, 0.1],
            )?,
            500,
            50,
            1,
        ),
        "uniformK" => (
            build(
                &vec![vec![1.0 / 3.0; 3]; 3],
                &[vec![0.8, 0.2], vec![0.5, 0.5], vec![0.2, 0.8]],
                vec![0.8, 0.1, 0.1],
            )?,
            100,
            5,
            3,
        ),
        other => return Err(Error::UnknownScenario(other.to_string())),
    };
    Ok(Scenario {
        name: name.to_string(),
        setup,
        horizon,
        replicates,
        seed,
    })
}

/// The two floor constants of the four-state example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KaijserConstants {
    /// Gap after observing an even state.
    pub c1: f64,
    /// Gap after observing an odd state.
    pub c2: f64,
}

impl KaijserConstants {
    pub fn new(nu: &Density, beta: &Density) -> Result<Self> {
        let e = kaijser_gap(nu, beta)?;
        Ok(Self {
            c1: (e[0] + e[3]).abs() + (e[2] + e[1]).abs(),
            c2: (e[1] + e[0]).abs() + (e[3] + e[2]).abs(),
        })
    }

    pub fn floor(&self) -> f64 {
        self.c1.min(self.c2)
    }
}

fn kaijser_gap(nu: &Density, beta: &Density) -> Result<[f64; 4]> {
    for p in [nu, beta] {
        if p.dim() != 4 {
            return Err(Error::DimensionMismatch {
                what: "four-state prior",
                expected: 4,
                found: p.dim(),
            });
        }
    }
    let mut e = [0.0; 4];
    for (i, slot) in e.iter_mut().enumerate() {
        *slot = nu.values()[i] - beta.values()[i];
    }
    Ok(e)
}

/// Per-state absolute gaps `|π_n^ν(x) − π_n^β(x)|` for `n = 0..=N`, from
/// the explicit two-point recursion of the four-state example.
///
/// Observing `1` puts each filter on states `{0, 2}` with
/// `π_n(0) = π_{n−1}(0) + π_{n−1}(3)` and `π_n(2) = π_{n−1}(2) + π_{n−1}(1)`;
/// observing `0` puts it on `{1, 3}` symmetrically. Being linear, the same
/// recursion carries the signed gap.
pub fn kaijser_closed_form(
    nu: &Density,
    beta: &Density,
    observations: &[Observation],
) -> Result<Vec<[f64; 4]>> {
    let mut e = kaijser_gap(nu, beta)?;
    let mut out = Vec::with_capacity(observations.len() + 1);
    out.push(e.map(f64::abs));
    for &y in observations {
        let y = match y {
            Observation::Symbol(s @ (0 | 1)) => s as f64,
            Observation::Symbol(s) => return Err(Error::SymbolOutOfRange { symbol: s, alphabet: 2 }),
            Observation::Real(_) => return Err(Error::ObservationKind("binary observations expected")),
        };
        e = [
            (e[0] + e[3]) * y,
            (e[1] + e[0]) * (1.0 - y),
            (e[2] + e[1]) * y,
            (e[3] + e[2]) * (1.0 - y),
        ];
        out.push(e.map(f64::abs));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KaijserReport {
    pub constants: KaijserConstants,
    /// `min(c1, c2)`.
    pub floor: f64,
    /// Whether the floor is positive, so the lower-bound claim is checked.
    pub floor_applicable: bool,
    /// `tv[n] = tv[1]` within tolerance for every `n ≥ 1`.
    pub constant: bool,
    pub max_drift: f64,
    /// Largest per-state difference between the generic filter and the
    /// explicit recursion.
    pub agreement: f64,
    pub min_tv: f64,
    pub tv_first: f64,
    pub first_observation: Observation,
    pub horizon: usize,
    pub seed: u64,
    pub failures: Vec<String>,
}

impl KaijserReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Simulates the four-state example under `nu` and checks the generic
/// filter pair against the explicit recursion, constancy of the gap, and
/// the floor `min(c1, c2)`.
pub fn kaijser_verify(nu: &Density, beta: &Density, horizon: usize, seed: u64) -> Result<KaijserReport> {
    let setup = kaijser_setup(nu.values().to_vec())?;
    let beta = Density::new(beta.values().to_vec(), &setup.model.space)?;
    let model = &setup.model;
    let traj = sample_trajectory(model, &setup.nu, horizon, seed)?;
    let pair = run_filter_pair(&setup.nu, &beta, &traj.observations, model)?;
    let closed = kaijser_closed_form(&setup.nu, &beta, &traj.observations)?;
    let constants = KaijserConstants::new(&setup.nu, &beta)?;
    let floor = constants.floor();

    let mut agreement: f64 = 0.0;
    for (n, gaps) in closed.iter().enumerate() {
        let a = pair.run_correct.densities[n].values();
        let b = pair.run_wrong.densities[n].values();
        for x in 0..4 {
            agreement = agreement.max(((a[x] - b[x]).abs() - gaps[x]).abs());
        }
        agreement = agreement.max((pair.tv[n] - gaps.iter().sum::<f64>()).abs());
    }
    let tv_first = pair.tv[1];
    let max_drift = pair.tv[1..]
        .iter()
        .map(|t| (t - tv_first).abs())
        .fold(0.0, f64::max);
    let min_tv = pair.tv[1..].iter().copied().fold(f64::INFINITY, f64::min);
    let constant = max_drift <= KAIJSER_TOLERANCE;
    let floor_applicable = floor > KAIJSER_TOLERANCE;

    let mut failures = Vec::new();
    if agreement > KAIJSER_TOLERANCE {
        failures.push(format!("generic filter differs from explicit recursion by {agreement:e}"));
    }
    if !constant {
        failures.push(format!("gap drifts from its first value by {max_drift:e}"));
    }
    if floor_applicable && min_tv < floor - KAIJSER_TOLERANCE {
        failures.push(format!("gap {min_tv} falls below floor {floor}"));
    }
    Ok(KaijserReport {
        constants,
        floor,
        floor_applicable,
        constant,
        max_drift,
        agreement,
        min_tv,
        tv_first,
        first_observation: traj.observations[0],
        horizon,
        seed,
        failures,
    })
}

/// One replicate of a stability experiment. Per-step vectors are indexed
/// by `n − 1` for `n = 1..=horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub replicate: usize,
    pub seed: u64,
    pub tv: Vec<f64>,
    pub decay: DecayRate,
    /// `max_u δ_n(u)` of the backward density started from `beta`.
    pub delta_max: Vec<f64>,
    /// `max_u` of the oscillation bound; infinite when vacuous.
    pub oscillation_bound_max: Vec<f64>,
    pub likelihood_ratio: Vec<f64>,
    /// Largest `δ_n(u) / bound_n(u)`; `None` when the bound is vacuous.
    pub oscillation_worst_ratio: Option<f64>,
    /// Largest `δ_n(u) / (factor_n δ_{n−1}(u))` over steps with `δ_{n−1}(u) > 0`.
    pub contraction_worst_ratio: Option<f64>,
    /// Residual of the change-of-prior identities at the horizon.
    pub identity_residual: f64,
}

impl RunRecord {
    pub fn bounds_hold(&self) -> bool {
        self.oscillation_worst_ratio.is_none_or(|r| r <= 1.0 + BOUND_SLACK)
            && self.contraction_worst_ratio.is_none_or(|r| r <= 1.0 + BOUND_SLACK)
    }
}

pub fn scenario_coefficients(setup: &ModelSetup) -> Result<Coefficients> {
    let m = invariant_density(&setup.model.kernel, &setup.model.space)?;
    Ok(mixing_coefficients(&setup.model, &m))
}

/// Runs every replicate of `s` in parallel; records come back ordered by
/// replicate index. Replicate `k` uses stream `k` of `s.seed`.
pub fn run_scenario(s: &Scenario, window_fraction: f64) -> Result<Vec<RunRecord>> {
    if s.horizon < 1 {
        return Err(Error::InvalidHorizon);
    }
    let coeffs = scenario_coefficients(&s.setup)?;
    (0..s.replicates)
        .into_par_iter()
        .map(|index| {
            run_replicate(&s.setup, &coeffs, s.horizon, s.seed, index, window_fraction).map_err(|e| {
                Error::Replicate {
                    index,
                    seed: s.seed,
                    source: Box::new(e),
                }
            })
        })
        .collect()
}

pub fn run_replicate(
    setup: &ModelSetup,
    coeffs: &Coefficients,
    horizon: usize,
    seed: u64,
    index: usize,
    window_fraction: f64,
) -> Result<RunRecord> {
    let model = &setup.model;
    let mut rng = replicate_rng(seed, index as u64);
    let traj = sample_with_rng(model, &setup.nu, horizon, &mut rng)?;
    let pair = run_filter_pair(&setup.nu, &setup.beta, &traj.observations, model)?;
    let ratio = setup.nu_over_beta();

    let mut ctx = BackwardContext::new(model, &setup.beta, coeffs)?;
    let mut delta_max = Vec::with_capacity(horizon);
    let mut bound_max = Vec::with_capacity(horizon);
    let mut likelihood = Vec::with_capacity(horizon);
    let mut oscillation_worst: Option<f64> = None;
    let mut contraction_worst: Option<f64> = None;
    let mut previous: Option<Vec<f64>> = None;
    for &y in &traj.observations {
        ctx.advance(y)?;
        let rec = ctx.record();
        delta_max.push(rec.delta.iter().copied().fold(0.0, f64::max));
        bound_max.push(rec.bound.iter().copied().fold(0.0, f64::max));
        likelihood.push(ctx.likelihood_ratio(&ratio).value);
        if !ctx.bound_is_vacuous() {
            for (d, b) in rec.delta.iter().zip(&rec.bound) {
                let r = if *b > 0.0 { d / b } else { 0.0 };
                oscillation_worst = Some(oscillation_worst.map_or(r, |w| w.max(r)));
            }
        }
        if let (Some(prev), Some(factor)) = (&previous, rec.contraction) {
            for (d, p) in rec.delta.iter().zip(prev) {
                if *p > 0.0 {
                    let allowed = factor * p;
                    let r = if allowed > 0.0 {
                        d / allowed
                    } else if *d == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    };
                    contraction_worst = Some(contraction_worst.map_or(r, |w| w.max(r)));
                }
            }
        }
        previous = Some(rec.delta);
    }
    let identity = identity_residual(
        pair.run_wrong.last(),
        pair.run_correct.last(),
        ctx.rho(),
        &ratio,
        &model.space,
    );
    let tv = pair.tv[1..].to_vec();
    let decay = decay_rate(&tv, window_fraction)?;
    Ok(RunRecord {
        replicate: index,
        seed,
        tv,
        decay,
        delta_max,
        oscillation_bound_max: bound_max,
        likelihood_ratio: likelihood,
        oscillation_worst_ratio: oscillation_worst,
        contraction_worst_ratio: contraction_worst,
        identity_residual: identity,
    })
}

/// Seeded random model with `d` states and a finite alphabet.
///
/// With `positive`, every transition entry is at least `0.05` before
/// normalization; otherwise each off-diagonal entry is zero with
/// probability one half (the diagonal stays positive, so every state is
/// reachable).
pub fn random_model(seed: u64, d: usize, alphabet: usize, positive: bool) -> Result<FiniteModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = StateSpace::counting(d)?;
    let rows: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let raw: Vec<f64> = (0..d)
                .map(|j| {
                    let v = rng.random_range(0.05..1.0);
                    if positive || i == j || rng.random_bool(0.5) {
                        v
                    } else {
                        0.0
                    }
                })
                .collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        })
        .collect();
    let gamma: Vec<Vec<f64>> = (0..d)
        .map(|_| {
            let raw: Vec<f64> = (0..alphabet).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        })
        .collect();
    let kernel = TransitionKernel::new(Matrix::from_rows(&rows).expect("square"), &space)?;
    let obs = ObservationModel::finite(Matrix::from_rows(&gamma).expect("rectangular"), None)?;
    FiniteModel::new(space, kernel, obs)
}

/// Seeded random density with entries bounded below by `floor` before
/// normalization.
pub fn random_density(seed: u64, space: &StateSpace, floor: f64) -> Density {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..space.dim()).map(|_| rng.random_range(floor..1.0 + floor)).collect();
    let mass = space.integrate(&raw);
    Density::new(raw.into_iter().map(|v| v / mass).collect(), space)
        .expect("positive weights")
}
