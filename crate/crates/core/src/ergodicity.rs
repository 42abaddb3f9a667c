//! Geometric ergodicity of the signal kernel, the stationary backward
//! density and its oscillation bound, the Poisson equation, and running
//! averages of filter expectations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backward::{backward_init, backward_step};
use crate::error::{Error, Result};
use crate::filter::FilterRun;
use crate::matrix::Matrix;
use crate::model::{Coefficients, Density, FiniteModel, StateSpace, TransitionKernel};

/// Series terms at or below this max-norm end the Poisson sum.
pub const POISSON_TAIL: f64 = 1e-13;
pub const POISSON_MAX_TERMS: usize = 100_000;
pub const POISSON_RESIDUAL: f64 = 1e-10;
/// Relative slack allowed when comparing a computed quantity with its bound.
pub const BOUND_SLACK: f64 = 1e-9;
/// Quantities at or below this count as zero against a zero bound.
const ZERO_FLOOR: f64 = 1e-14;

/// `n`-step transition density, composed with `ψ` weights.
pub fn n_step_density(kernel: &TransitionKernel, space: &StateSpace, n: usize) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::InvalidArgument("step count must be at least 1".into()));
    }
    let mut power = kernel.matrix().clone();
    for _ in 1..n {
        power = power.weighted_product(space.psi(), kernel.matrix());
    }
    Ok(power)
}

/// Whether the explicit ergodicity constants are available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundStatus {
    /// `0 < λ_◇ < λ*`.
    Applicable,
    /// `λ_◇ = λ*`: the kernel does not depend on its starting point.
    Degenerate,
    /// `λ_◇ = 0`: no bound, although the chain may still be ergodic.
    Inapplicable,
}

impl BoundStatus {
    pub fn of(coeffs: &Coefficients) -> Self {
        if coeffs.degenerate {
            BoundStatus::Degenerate
        } else if coeffs.lambda_diamond > 0.0 {
            BoundStatus::Applicable
        } else {
            BoundStatus::Inapplicable
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicityReport {
    pub status: BoundStatus,
    /// `gaps[(u, n - 1)] = Σ_x |λ^{(n)}(u, x) − m(x)| ψ(x)`.
    pub gaps: Matrix,
    pub c: Option<f64>,
    pub r: Option<f64>,
    /// `C rⁿ` for `n = 1..=n_max` when applicable.
    pub bounds: Option<Vec<f64>>,
    /// Largest `gap / C rⁿ` and the `(u, n)` where it occurs.
    pub worst_ratio: Option<f64>,
    pub worst_at: Option<(usize, usize)>,
}

impl ErgodicityReport {
    pub fn n_max(&self) -> usize {
        self.gaps.cols()
    }

    pub fn gap(&self, u: usize, n: usize) -> f64 {
        self.gaps[(u, n - 1)]
    }

    /// `true` when the inequality holds everywhere, or there is nothing to check.
    pub fn holds(&self) -> bool {
        match self.status {
            BoundStatus::Applicable => self.worst_ratio.is_some_and(|w| w <= 1.0 + BOUND_SLACK),
            BoundStatus::Degenerate => self.gaps.as_slice().iter().all(|&g| g <= ZERO_FLOOR),
            BoundStatus::Inapplicable => true,
        }
    }
}

/// L1 distance of the `n`-step densities from `m` for `n = 1..=n_max`,
/// against `C rⁿ` when the constants exist.
///
/// Propagates the deviation `λ^{(n)}(u, ·) − m` directly,
/// `D_n(u, ·) = Σ_x D_{n−1}(u, x) ψ(x) (λ(x, ·) − m)`, so gaps far below
/// rounding level are still resolved.
pub fn geometric_ergodicity_report(
    model: &FiniteModel,
    m: &Density,
    coeffs: &Coefficients,
    n_max: usize,
) -> Result<ErgodicityReport> {
    let d = model.dim();
    if m.dim() != d {
        return Err(Error::DimensionMismatch {
            what: "invariant density",
            expected: d,
            found: m.dim(),
        });
    }
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    let psi = model.space.psi();
    let lambda = model.kernel.matrix();
    let mv = m.values();
    let centered = Matrix::from_fn(d, d, |x, y| lambda[(x, y)] - mv[y]);

    let rows: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|u| {
            let mut dev = centered.row(u).to_vec();
            let mut gaps = Vec::with_capacity(n_max);
            for n in 1..=n_max {
                if n > 1 {
                    let mut next = vec![0.0; d];
                    for (x, &dx) in dev.iter().enumerate() {
                        let a = dx * psi[x];
                        if a == 0.0 {
                            continue;
                        }
                        for (o, &c) in next.iter_mut().zip(centered.row(x)) {
                            *o += a * c;
                        }
                    }
                    dev = next;
                }
                gaps.push(dev.iter().zip(psi).map(|(v, w)| v.abs() * w).sum::<f64>().min(2.0));
            }
            gaps
        })
        .collect();
    let gaps = Matrix::from_fn(d, n_max, |u, k| rows[u][k]);

    let status = BoundStatus::of(coeffs);
    let (bounds, worst_ratio, worst_at) = match (status, coeffs.c, coeffs.r) {
        (BoundStatus::Applicable, Some(c), Some(r)) => {
            let bounds: Vec<f64> = (1..=n_max).map(|n| c * r.powi(n as i32)).collect();
            let mut worst = f64::NEG_INFINITY;
            let mut at = (0, 1);
            for u in 0..d {
                for n in 1..=n_max {
                    let ratio = bound_ratio(gaps[(u, n - 1)], bounds[n - 1]);
                    if ratio > worst {
                        worst = ratio;
                        at = (u, n);
                    }
                }
            }
            (Some(bounds), Some(worst), Some(at))
        }
        _ => (None, None, None),
    };
    Ok(ErgodicityReport {
        status,
        gaps,
        c: coeffs.c,
        r: coeffs.r,
        bounds,
        worst_ratio,
        worst_at,
    })
}

fn bound_ratio(value: f64, bound: f64) -> f64 {
    if bound > 0.0 {
        value / bound
    } else if value <= ZERO_FLOOR {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Density of `X_0` given `X_n = x` for the stationary chain without
/// observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryBackward {
    pub step: usize,
    /// `q[(u, x)]`; each column is a density in `u`.
    pub q: Matrix,
    /// `max_x q(u, x) − min_x q(u, x)`.
    pub delta: Vec<f64>,
}

/// `q_1, …, q_n`.
///
/// Under the stationary law with uninformative observations every filter
/// density equals `m`, so `q_n` is the backward density started from `m`
/// and stepped with `π = m` throughout.
pub fn stationary_backward_sequence(
    model: &FiniteModel,
    m: &Density,
    n: usize,
) -> Result<Vec<StationaryBackward>> {
    let d = model.dim();
    if n == 0 {
        return Err(Error::InvalidArgument("step count must be at least 1".into()));
    }
    if m.dim() != d {
        return Err(Error::DimensionMismatch {
            what: "invariant density",
            expected: d,
            found: m.dim(),
        });
    }
    if let Some(state) = m.values().iter().position(|&v| v <= 0.0) {
        return Err(Error::DegenerateInvariantDensity { state });
    }
    let mut rho = backward_init(m, &model.kernel, &model.space)?;
    let mut out = Vec::with_capacity(n);
    loop {
        out.push(StationaryBackward {
            step: rho.step(),
            q: rho.to_matrix(),
            delta: rho.oscillation().delta,
        });
        if rho.step() == n {
            return Ok(out);
        }
        rho = backward_step(&rho, m, &model.kernel, &model.space)?;
    }
}

pub fn stationary_backward(model: &FiniteModel, m: &Density, n: usize) -> Result<StationaryBackward> {
    Ok(stationary_backward_sequence(model, m, n)?.pop().expect("n >= 1"))
}

/// Outcome of comparing an oscillation sequence with its bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub status: BoundStatus,
    pub worst_ratio: Option<f64>,
    pub worst_at: Option<(usize, usize)>,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.worst_ratio.is_none_or(|w| w <= 1.0 + BOUND_SLACK)
    }
}

/// `Δ_n(u) ≤ m(u) (λ*/λ_◇) (1 − λ_◇/λ*)^{n−1}` over the given sequence.
pub fn delta_bound_check(sequence: &[StationaryBackward], m: &Density, coeffs: &Coefficients) -> BoundCheck {
    let status = BoundStatus::of(coeffs);
    if status == BoundStatus::Inapplicable {
        return BoundCheck {
            status,
            worst_ratio: None,
            worst_at: None,
        };
    }
    let scale = coeffs.lambda_upper / coeffs.lambda_diamond;
    let r = (1.0 - coeffs.rate).max(0.0);
    let mut worst = 0.0;
    let mut at = None;
    for sb in sequence {
        let decay = r.powi(sb.step as i32 - 1);
        for (u, (&delta, &mu)) in sb.delta.iter().zip(m.values()).enumerate() {
            let ratio = bound_ratio(delta, mu * scale * decay);
            if at.is_none() || ratio > worst {
                worst = ratio;
                at = Some((u, sb.step));
            }
        }
    }
    BoundCheck {
        status,
        worst_ratio: at.map(|_| worst),
        worst_at: at,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonSolution {
    pub g: Vec<f64>,
    pub f_centered: Vec<f64>,
    pub terms: usize,
    /// `max_x |g(x) − f°(x) − Σ_y λ(x, y) g(y) ψ(y)|`.
    pub residual: f64,
}

/// Solves `g = f° + K g` with `f° = f − ⟨f, m⟩` by summing `Kⁿ f°`.
pub fn solve_poisson(model: &FiniteModel, m: &Density, f: &[f64]) -> Result<PoissonSolution> {
    let d = model.dim();
    if f.len() != d {
        return Err(Error::DimensionMismatch {
            what: "test function",
            expected: d,
            found: f.len(),
        });
    }
    let space = &model.space;
    let center = |v: &[f64]| {
        let mean = m.expect(v, space);
        v.iter().map(|x| x - mean).collect::<Vec<f64>>()
    };
    let f_centered = center(f);
    let mut g = f_centered.clone();
    let mut term = f_centered.clone();
    let mut terms = 0;
    loop {
        if term.iter().fold(0.0_f64, |a, v| a.max(v.abs())) <= POISSON_TAIL {
            break;
        }
        if terms >= POISSON_MAX_TERMS {
            return Err(Error::SeriesNotConvergent { terms });
        }
        term = center(&model.kernel.apply(&term, space));
        g.iter_mut().zip(&term).for_each(|(a, t)| *a += t);
        terms += 1;
    }
    let kg = model.kernel.apply(&g, space);
    let residual = (0..d)
        .map(|x| (g[x] - f_centered[x] - kg[x]).abs())
        .fold(0.0, f64::max);
    if residual > POISSON_RESIDUAL {
        return Err(Error::SeriesNotConvergent { terms });
    }
    Ok(PoissonSolution {
        g,
        f_centered,
        terms,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LlnAverage {
    pub average: f64,
    pub target: f64,
    pub gap: f64,
}

/// `(1/n) Σ_{k=1}^n π_{k−1}⟨f⟩` against `⟨f, m⟩`.
pub fn lln_average(run: &FilterRun, f: &[f64], m: &Density, space: &StateSpace) -> Result<LlnAverage> {
    let n = run.observations.len();
    if n == 0 {
        return Err(Error::InsufficientData { usable: 0 });
    }
    if f.len() != space.dim() {
        return Err(Error::DimensionMismatch {
            what: "test function",
            expected: space.dim(),
            found: f.len(),
        });
    }
    let average = run.densities[..n].iter().map(|p| p.expect(f, space)).sum::<f64>() / n as f64;
    let target = m.expect(f, space);
    Ok(LlnAverage {
        average,
        target,
        gap: (average - target).abs(),
    })
}

/// Running averages `(1/k) Σ_{j<k} π_j⟨f⟩` for `k = 1..=n`.
pub fn lln_running(run: &FilterRun, f: &[f64], space: &StateSpace) -> Vec<f64> {
    let n = run.observations.len();
    let mut acc = 0.0;
    run.densities[..n]
        .iter()
        .enumerate()
        .map(|(k, p)| {
            acc += p.expect(f, space);
            acc / (k + 1) as f64
        })
        .collect()
}
