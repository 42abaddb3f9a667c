use std::fs;

use anyhow::{Context, Result};
use serde::Serialize;

use filterstab::backward::BackwardContext;
use filterstab::config::INPUT_TOLERANCE;
use filterstab::ergodicity::{
    delta_bound_check, geometric_ergodicity_report, lln_average, lln_running, solve_poisson,
    stationary_backward_sequence, BoundCheck, BoundStatus, BOUND_SLACK,
};
use filterstab::filter::run_filter;
use filterstab::harness::{self, kaijser_verify, run_scenario, scenario_coefficients, KaijserReport};
use filterstab::model::{invariance_residual, invariant_density, mixing_coefficients, primitivity_check};
use filterstab::simulate::{replicate_rng, sample_with_rng};
use filterstab::{
    parse_config, Density, Error, ModelSetup, Observation, PriorLabel, Scenario, StateSpace,
};

use crate::output::{Cell, Sink, Table};
use crate::{PriorChoice, RunArgs};

const MODEL_HORIZON: usize = 1_000;
const MODEL_REPLICATES: usize = 1;
const MODEL_SEED: u64 = 0;
const IDENTITY_TOLERANCE: f64 = 1e-9;
const SLOPE_MARGIN: f64 = 0.1;

fn parse_prior(text: &str, flag: &str, space: &StateSpace) -> Result<Density> {
    let values = text
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Config {
            path: flag.into(),
            message: e.to_string(),
        })?;
    if values.len() != space.dim() {
        return Err(Error::Config {
            path: flag.into(),
            message: format!("expected {} entries, found {}", space.dim(), values.len()),
        }
        .into());
    }
    Density::normalized(values, space, INPUT_TOLERANCE)
        .map_err(|e| Error::Config {
            path: flag.into(),
            message: e.to_string(),
        })
        .map_err(Into::into)
}

/// Resolves `--model`/`--scenario` and applies flag overrides.
fn load(args: &RunArgs) -> Result<Scenario> {
    let mut s = match (&args.scenario, &args.model) {
        (Some(name), _) => harness::scenario(name)?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Scenario {
                name: path.display().to_string(),
                setup: parse_config(&text)?,
                horizon: MODEL_HORIZON,
                replicates: MODEL_REPLICATES,
                seed: MODEL_SEED,
            }
        }
        (None, None) => {
            return Err(Error::InvalidArgument("one of --model or --scenario is required".into()).into())
        }
    };
    override_priors(&mut s.setup, args)?;
    if let Some(h) = args.horizon {
        s.horizon = h;
    }
    if s.horizon < 1 {
        return Err(Error::InvalidHorizon.into());
    }
    if let Some(r) = args.replicates {
        s.replicates = r;
    }
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if !(args.window_fraction > 0.0 && args.window_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "window fraction {} outside (0, 1]",
            args.window_fraction
        ))
        .into());
    }
    Ok(s)
}

fn override_priors(setup: &mut ModelSetup, args: &RunArgs) -> Result<()> {
    let space = &setup.model.space;
    let nu = match &args.nu {
        Some(t) => parse_prior(t, "--nu", space)?,
        None => setup.nu.clone(),
    };
    let beta = match &args.beta {
        Some(t) => parse_prior(t, "--beta", space)?,
        None => setup.beta.clone(),
    };
    *setup = ModelSetup::new(setup.model.clone(), nu, beta)?;
    Ok(())
}

fn sink(command: &str, args: &RunArgs) -> Sink {
    Sink::resolve(command, args.output.as_deref(), args.format)
}

fn observation_cell(y: Observation) -> Cell {
    match y {
        Observation::Symbol(s) => Cell::from(s),
        Observation::Real(v) => Cell::from(v),
    }
}

#[derive(Serialize)]
struct ValidateReport {
    model: String,
    states: usize,
    psi: Vec<f64>,
    invariant_density: Vec<f64>,
    invariance_residual: f64,
    lambda_lower: f64,
    lambda_upper: f64,
    lambda_diamond: f64,
    rate: f64,
    c: Option<f64>,
    r: Option<f64>,
    degenerate: bool,
    mixing: bool,
    relaxed_mixing: bool,
    primitivity_index: Option<usize>,
    ergodicity_bound: BoundStatus,
}

pub fn validate(args: &RunArgs) -> Result<bool> {
    let s = load(args)?;
    let model = &s.setup.model;
    let m = invariant_density(&model.kernel, &model.space)?;
    let coeffs = mixing_coefficients(model, &m);
    let report = ValidateReport {
        model: s.name.clone(),
        states: model.dim(),
        psi: model.space.psi().to_vec(),
        invariance_residual: invariance_residual(&model.kernel, &model.space, &m),
        invariant_density: m.values().to_vec(),
        lambda_lower: coeffs.lambda_lower,
        lambda_upper: coeffs.lambda_upper,
        lambda_diamond: coeffs.lambda_diamond,
        rate: coeffs.rate,
        c: coeffs.c,
        r: coeffs.r,
        degenerate: coeffs.degenerate,
        mixing: coeffs.lambda_lower > 0.0,
        relaxed_mixing: coeffs.is_mixing(),
        primitivity_index: primitivity_check(&model.kernel, None),
        ergodicity_bound: BoundStatus::of(&coeffs),
    };
    sink("validate", args).report(&report)?;
    Ok(true)
}

#[derive(Serialize)]
struct SimulateSummary {
    model: String,
    horizon: usize,
    replicates: usize,
    seed: u64,
}

pub fn simulate(args: &RunArgs) -> Result<bool> {
    let s = load(args)?;
    let model = &s.setup.model;
    let mut table = Table::new(&["replicate", "n", "state", "observation"]);
    for k in 0..s.replicates {
        let traj = sample_with_rng(model, &s.setup.nu, s.horizon, &mut replicate_rng(s.seed, k as u64))?;
        for (n, &x) in traj.states.iter().enumerate() {
            let y = if n == 0 { Cell::Empty } else { observation_cell(traj.observations[n - 1]) };
            table.push(vec![k.into(), n.into(), x.into(), y]);
        }
    }
    let out = sink("simulate", args);
    out.table(&table)?;
    out.summary(&SimulateSummary {
        model: s.name,
        horizon: s.horizon,
        replicates: s.replicates,
        seed: s.seed,
    })?;
    Ok(true)
}

#[derive(Serialize)]
struct ReplicateSummary {
    replicate: usize,
    slope: f64,
    converged: bool,
    window_points: usize,
    oscillation_worst_ratio: Option<f64>,
    contraction_worst_ratio: Option<f64>,
    identity_residual: f64,
    final_log_likelihood_ratio_per_step: f64,
}

#[derive(Serialize)]
struct StabilitySummary {
    model: String,
    horizon: usize,
    replicates: usize,
    seed: u64,
    window_fraction: f64,
    lambda_lower: f64,
    lambda_upper: f64,
    lambda_diamond: f64,
    /// `−λ_◇/λ*`, the guaranteed asymptotic slope of `log tv`.
    rate_bound: f64,
    slope_threshold: f64,
    slope_max: Option<f64>,
    slope_pass: bool,
    bounds_vacuous: bool,
    bounds_pass: bool,
    identity_residual_max: f64,
    identity_pass: bool,
    kaijser: Option<KaijserReport>,
    passed: bool,
    per_replicate: Vec<ReplicateSummary>,
}

pub fn stability(args: &RunArgs) -> Result<bool> {
    let s = load(args)?;
    let coeffs = scenario_coefficients(&s.setup)?;
    let records = run_scenario(&s, args.window_fraction)?;
    let rate_bound = 0.0 - coeffs.rate;

    let mut table = Table::new(&[
        "replicate",
        "n",
        "tv",
        "log_tv",
        "bound_log_tv",
        "delta_max",
        "lemma32_bound_max",
        "likelihood_ratio",
    ]);
    for r in &records {
        for (i, &tv) in r.tv.iter().enumerate() {
            let n = i + 1;
            table.push(vec![
                r.replicate.into(),
                n.into(),
                tv.into(),
                tv.ln().into(),
                (n as f64 * rate_bound).into(),
                r.delta_max[i].into(),
                r.oscillation_bound_max[i].into(),
                r.likelihood_ratio[i].into(),
            ]);
        }
    }

    let slope_threshold = rate_bound + SLOPE_MARGIN;
    let slope_max = records.iter().map(|r| r.decay.slope).reduce(f64::max);
    let identity_residual_max = records.iter().map(|r| r.identity_residual).fold(0.0, f64::max);
    let kaijser = if s.name == "kaijser" {
        Some(kaijser_verify(&s.setup.nu, &s.setup.beta, s.horizon, s.seed)?)
    } else {
        None
    };
    let bounds_pass = records.iter().all(|r| r.bounds_hold());
    let identity_pass = identity_residual_max <= IDENTITY_TOLERANCE;
    let passed = bounds_pass && identity_pass && kaijser.as_ref().is_none_or(|k| k.passed());
    let per_replicate = records
        .iter()
        .map(|r| ReplicateSummary {
            replicate: r.replicate,
            slope: r.decay.slope,
            converged: r.decay.converged,
            window_points: r.decay.points,
            oscillation_worst_ratio: r.oscillation_worst_ratio,
            contraction_worst_ratio: r.contraction_worst_ratio,
            identity_residual: r.identity_residual,
            final_log_likelihood_ratio_per_step: r
                .likelihood_ratio
                .last()
                .map_or(0.0, |l| l.ln() / r.likelihood_ratio.len() as f64),
        })
        .collect();
    let summary = StabilitySummary {
        model: s.name.clone(),
        horizon: s.horizon,
        replicates: s.replicates,
        seed: s.seed,
        window_fraction: args.window_fraction,
        lambda_lower: coeffs.lambda_lower,
        lambda_upper: coeffs.lambda_upper,
        lambda_diamond: coeffs.lambda_diamond,
        rate_bound,
        slope_threshold,
        slope_max,
        slope_pass: slope_max.is_none_or(|m| m <= slope_threshold),
        bounds_vacuous: !coeffs.is_mixing(),
        bounds_pass,
        identity_residual_max,
        identity_pass,
        kaijser,
        passed,
        per_replicate,
    };
    let out = sink("stability", args);
    out.table(&table)?;
    out.summary(&summary)?;
    Ok(passed)
}

#[derive(Serialize)]
struct ErgodicitySummary {
    model: String,
    n_max: usize,
    status: BoundStatus,
    c: Option<f64>,
    r: Option<f64>,
    worst_ratio: Option<f64>,
    worst_at: Option<(usize, usize)>,
    holds: bool,
    stationary_backward: BoundCheck,
    stationary_backward_holds: bool,
}

pub fn ergodicity(args: &RunArgs) -> Result<bool> {
    let s = load(args)?;
    let model = &s.setup.model;
    let m = invariant_density(&model.kernel, &model.space)?;
    let coeffs = mixing_coefficients(model, &m);
    let report = geometric_ergodicity_report(model, &m, &coeffs, args.n_max)?;
    let sequence = stationary_backward_sequence(model, &m, args.n_max)?;
    let check = delta_bound_check(&sequence, &m, &coeffs);

    let mut table = Table::new(&["u", "n", "gap", "bound", "ratio"]);
    for u in 0..model.dim() {
        for n in 1..=args.n_max {
            let gap = report.gap(u, n);
            let bound = report.bounds.as_ref().map(|b| b[n - 1]);
            table.push(vec![u.into(), n.into(), gap.into(), bound.into(), bound.map(|b| gap / b).into()]);
        }
    }
    let holds = report.holds();
    let sb_holds = check.holds();
    let out = sink("ergodicity", args);
    out.table(&table)?;
    out.summary(&ErgodicitySummary {
        model: s.name,
        n_max: args.n_max,
        status: report.status,
        c: report.c,
        r: report.r,
        worst_ratio: report.worst_ratio,
        worst_at: report.worst_at,
        holds,
        stationary_backward: check,
        stationary_backward_holds: sb_holds,
    })?;
    Ok(holds && sb_holds)
}

#[derive(Serialize)]
struct BackwardSummary {
    model: String,
    horizon: usize,
    seed: u64,
    prior: &'static str,
    vacuous: bool,
    oscillation_worst_ratio: Option<f64>,
    contraction_worst_ratio: Option<f64>,
    likelihood_ratio: Option<f64>,
    identity_residual: Option<f64>,
    passed: bool,
}

pub fn backward(args: &RunArgs) -> Result<bool> {
    let s = load(args)?;
    let model = &s.setup.model;
    let coeffs = scenario_coefficients(&s.setup)?;
    let prior = args.prior.unwrap_or(PriorChoice::Beta);
    let (theta, label) = match prior {
        PriorChoice::Beta => (&s.setup.beta, "beta"),
        PriorChoice::Nu => (&s.setup.nu, "nu"),
    };
    let traj = sample_with_rng(model, &s.setup.nu, s.horizon, &mut replicate_rng(s.seed, 0))?;
    let mut ctx = BackwardContext::new(model, theta, &coeffs)?;
    let mut table = Table::new(&["n", "u", "delta", "bound", "rho_sup", "rho_inf", "exponent_sum"]);
    let mut oscillation_worst: Option<f64> = None;
    let mut contraction_worst: Option<f64> = None;
    let mut previous: Option<Vec<f64>> = None;
    for &y in &traj.observations {
        ctx.advance(y)?;
        let rec = ctx.record();
        for u in 0..model.dim() {
            table.push(vec![
                rec.step.into(),
                u.into(),
                rec.delta[u].into(),
                rec.bound[u].into(),
                rec.rho_sup[u].into(),
                rec.rho_inf[u].into(),
                rec.exponent_sum.into(),
            ]);
            if !ctx.bound_is_vacuous() && rec.bound[u] > 0.0 {
                let r = rec.delta[u] / rec.bound[u];
                oscillation_worst = Some(oscillation_worst.map_or(r, |w| w.max(r)));
            }
            if let (Some(prev), Some(factor)) = (&previous, rec.contraction) {
                if prev[u] > 0.0 && factor > 0.0 {
                    let r = rec.delta[u] / (factor * prev[u]);
                    contraction_worst = Some(contraction_worst.map_or(r, |w| w.max(r)));
                }
            }
        }
        previous = Some(rec.delta);
    }
    let (likelihood_ratio, identity_residual) = if prior == PriorChoice::Beta {
        let ratio = s.setup.nu_over_beta();
        let run_nu = run_filter(&s.setup.nu, &traj.observations, model, PriorLabel::Nu)?;
        let run_beta = run_filter(&s.setup.beta, &traj.observations, model, PriorLabel::Beta)?;
        let residual =
            filterstab::backward::check_prior_identities(&run_beta, &run_nu, ctx.rho(), &ratio, &model.space)?;
        (Some(ctx.likelihood_ratio(&ratio).value), Some(residual))
    } else {
        (None, None)
    };
    let within = |w: Option<f64>| w.is_none_or(|w| w <= 1.0 + BOUND_SLACK);
    let passed = within(oscillation_worst)
        && within(contraction_worst)
        && identity_residual.is_none_or(|r| r <= IDENTITY_TOLERANCE);
    let out = sink("backward", args);
    out.table(&table)?;
    out.summary(&BackwardSummary {
        model: s.name,
        horizon: s.horizon,
        seed: s.seed,
        prior: label,
        vacuous: ctx.bound_is_vacuous(),
        oscillation_worst_ratio: oscillation_worst,
        contraction_worst_ratio: contraction_worst,
        likelihood_ratio,
        identity_residual,
        passed,
    })?;
    Ok(passed)
}

pub fn kaijser(args: &RunArgs) -> Result<bool> {
    if let Some(name) = args.scenario.as_deref().filter(|n| *n != "kaijser") {
        return Err(Error::InvalidArgument(format!("kaijser check does not apply to scenario `{name}`")).into());
    }
    if args.model.is_some() {
        return Err(Error::InvalidArgument("kaijser check uses the built-in model".into()).into());
    }
    let mut s = harness::scenario("kaijser")?;
    override_priors(&mut s.setup, args)?;
    let horizon = args.horizon.unwrap_or(s.horizon);
    let seed = args.seed.unwrap_or(s.seed);
    let report = kaijser_verify(&s.setup.nu, &s.setup.beta, horizon, seed)?;
    sink("kaijser", args).report(&report)?;
    Ok(report.passed())
}

#[derive(Serialize)]
struct LlnStateSummary {
    state: usize,
    target: f64,
    max_gap: f64,
    poisson_residual: Option<f64>,
    poisson_terms: Option<usize>,
    poisson_error: Option<String>,
}

#[derive(Serialize)]
struct LlnSummary {
    model: String,
    horizon: usize,
    replicates: usize,
    seed: u64,
    prior: &'static str,
    misspecified: bool,
    states: Vec<LlnStateSummary>,
}

pub fn lln(args: &RunArgs) -> Result<bool> {
    let s = load(args)?;
    let model = &s.setup.model;
    let d = model.dim();
    let m = invariant_density(&model.kernel, &model.space)?;
    let prior = args.prior.unwrap_or(PriorChoice::Nu);
    let (theta, label) = match prior {
        PriorChoice::Nu => (&s.setup.nu, "nu"),
        PriorChoice::Beta => (&s.setup.beta, "beta"),
    };
    let indicators: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut table = Table::new(&["replicate", "n", "state", "running_average", "target"]);
    let mut max_gap = vec![0.0_f64; d];
    for k in 0..s.replicates {
        let traj = sample_with_rng(model, &s.setup.nu, s.horizon, &mut replicate_rng(s.seed, k as u64))?;
        let run = run_filter(theta, &traj.observations, model, PriorLabel::Custom(label.into()))?;
        let running: Vec<Vec<f64>> = indicators.iter().map(|f| lln_running(&run, f, &model.space)).collect();
        for n in 1..=s.horizon {
            for (i, series) in running.iter().enumerate() {
                let target = m.values()[i] * model.space.psi()[i];
                table.push(vec![k.into(), n.into(), i.into(), series[n - 1].into(), target.into()]);
            }
        }
        for (i, f) in indicators.iter().enumerate() {
            max_gap[i] = max_gap[i].max(lln_average(&run, f, &m, &model.space)?.gap);
        }
    }
    let states = indicators
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let target = m.values()[i] * model.space.psi()[i];
            match solve_poisson(model, &m, f) {
                Ok(sol) => LlnStateSummary {
                    state: i,
                    target,
                    max_gap: max_gap[i],
                    poisson_residual: Some(sol.residual),
                    poisson_terms: Some(sol.terms),
                    poisson_error: None,
                },
                Err(e) => LlnStateSummary {
                    state: i,
                    target,
                    max_gap: max_gap[i],
                    poisson_residual: None,
                    poisson_terms: None,
                    poisson_error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let out = sink("lln", args);
    out.table(&table)?;
    out.summary(&LlnSummary {
        model: s.name,
        horizon: s.horizon,
        replicates: s.replicates,
        seed: s.seed,
        prior: label,
        misspecified: prior != PriorChoice::Nu,
        states,
    })?;
    Ok(true)
}
