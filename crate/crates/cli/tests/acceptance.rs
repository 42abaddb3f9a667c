//! Acceptance criteria AC-1 through AC-9. Prints one PASS/FAIL line per
//! criterion and exits nonzero if any fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use filterstab::backward::{backward_init, backward_step, check_prior_identities, BackwardContext};
use filterstab::ergodicity::{
    delta_bound_check, geometric_ergodicity_report, lln_average, solve_poisson,
    stationary_backward_sequence, BOUND_SLACK,
};
use filterstab::filter::{run_filter, run_filter_pair, PriorLabel};
use filterstab::harness::{
    kaijser_setup, kaijser_verify, random_density, random_model, run_scenario, scenario,
    scenario_coefficients,
};
use filterstab::model::{invariant_density, mixing_coefficients};
use filterstab::simulate::{likelihood_vector, replicate_rng, sample_trajectory, sample_with_rng};
use filterstab::{BoundStatus, Density, FiniteModel, Observation};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: filterstab::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(elapsed < limit, || format!("{what} took {elapsed:?}, limit {limit:?}"))
}

// Path-enumeration oracles. Every path x_0..x_n is weighted by
// θ(x_0)ψ(x_0) Π λ(x_{k-1}, x_k)ψ(x_k) g_k(x_k).

fn for_each_path(d: usize, n: usize, mut visit: impl FnMut(&[usize])) {
    let mut path = vec![0usize; n + 1];
    loop {
        visit(&path);
        let mut k = 0;
        loop {
            if k > n {
                return;
            }
            path[k] += 1;
            if path[k] < d {
                break;
            }
            path[k] = 0;
            k += 1;
        }
    }
}

fn path_weight(model: &FiniteModel, prior: &Density, lik: &[Vec<f64>], path: &[usize]) -> f64 {
    let psi = model.space.psi();
    let mut w = prior.values()[path[0]] * psi[path[0]];
    for k in 1..path.len() {
        w *= model.kernel.get(path[k - 1], path[k]) * psi[path[k]] * lik[k - 1][path[k]];
    }
    w
}

/// Filter density of `X_n` for `n = obs.len()`.
fn enumerate_filter(model: &FiniteModel, prior: &Density, obs: &[Observation]) -> Vec<f64> {
    let d = model.dim();
    let lik: Vec<Vec<f64>> = obs.iter().map(|&y| likelihood_vector(&model.observation, y).unwrap()).collect();
    let mut mass = vec![0.0; d];
    for_each_path(d, obs.len(), |p| mass[p[obs.len()]] += path_weight(model, prior, &lik, p));
    let total: f64 = mass.iter().sum();
    let psi = model.space.psi();
    (0..d).map(|x| mass[x] / total / psi[x]).collect()
}

/// `rho[u][x]`: density of `X_0 = u` given `X_n = x` and the observations.
fn enumerate_backward(model: &FiniteModel, prior: &Density, obs: &[Observation]) -> Vec<Vec<f64>> {
    let d = model.dim();
    let n = obs.len();
    let lik: Vec<Vec<f64>> = obs.iter().map(|&y| likelihood_vector(&model.observation, y).unwrap()).collect();
    let mut joint = vec![vec![0.0; d]; d];
    for_each_path(d, n, |p| joint[p[0]][p[n]] += path_weight(model, prior, &lik, p));
    let psi = model.space.psi();
    (0..d)
        .map(|u| {
            (0..d)
                .map(|x| {
                    let col: f64 = (0..d).map(|v| joint[v][x]).sum();
                    if col > 0.0 {
                        joint[u][x] / col / psi[u]
                    } else {
                        f64::NAN
                    }
                })
                .collect()
        })
        .collect()
}

fn ac1() -> Outcome {
    let start = Instant::now();
    let setup = lib(kaijser_setup(vec![0.5, 0.2, 0.2, 0.1]))?;
    let horizon = 10_000;
    let mut seen = Vec::new();
    for seed in [1u64, 7, 42, 1234] {
        let traj = lib(sample_trajectory(&setup.model, &setup.nu, horizon, seed))?;
        let pair = lib(run_filter_pair(&setup.nu, &setup.beta, &traj.observations, &setup.model))?;
        let first = pair.tv[1];
        let expected = match traj.observations[0] {
            Observation::Symbol(1) => 0.2,
            Observation::Symbol(0) => 0.4,
            other => return Err(format!("unexpected observation {other}")),
        };
        ensure((first - expected).abs() <= 1e-12, || {
            format!("seed {seed}: tv[1] = {first}, expected {expected}")
        })?;
        for (n, tv) in pair.tv.iter().enumerate().skip(1) {
            ensure((tv - first).abs() <= 1e-12, || format!("seed {seed}: tv[{n}] = {tv} drifts from {first}"))?;
            ensure(*tv >= 0.2 - 1e-12, || format!("seed {seed}: tv[{n}] = {tv} below floor 0.2"))?;
        }
        let report = lib(kaijser_verify(&setup.nu, &setup.beta, horizon, seed))?;
        ensure(report.passed(), || format!("seed {seed}: {:?}", report.failures))?;
        ensure((report.floor - 0.2).abs() <= 1e-12, || format!("floor {}", report.floor))?;
        seen.push(first);
    }
    let per_run = start.elapsed() / 4;
    within(per_run, Duration::from_secs(1), "one horizon-10^4 run")?;
    Ok(format!("tv[1] per seed {seen:?}, floor 0.2, {per_run:.2?} per run"))
}

fn ac2() -> Outcome {
    let kaijser = lib(kaijser_setup(vec![0.5, 0.2, 0.2, 0.1]))?;
    let m = lib(invariant_density(&kaijser.model.kernel, &kaijser.model.space))?;
    let err4 = m.values().iter().map(|v| (v - 0.25).abs()).fold(0.0, f64::max);
    ensure(err4 <= 1e-10, || format!("kaijser invariant {:?}", m.values()))?;

    // [[1-a, a], [b, 1-b]] has invariant (b, a) / (a + b).
    let (a, b) = (0.5, 0.3);
    let mixing = lib(scenario("mixing2"))?;
    let m2 = lib(invariant_density(&mixing.setup.model.kernel, &mixing.setup.model.space))?;
    let oracle = [b / (a + b), a / (a + b)];
    let err2 = m2.values().iter().zip(oracle).map(|(v, o)| (v - o).abs()).fold(0.0, f64::max);
    ensure(err2 <= 1e-12, || format!("two-state invariant {:?}", m2.values()))?;
    Ok(format!("kaijser error {err4:.1e}, two-state error {err2:.1e}"))
}

fn ac3() -> Outcome {
    let start = Instant::now();
    let mut worst_filter: f64 = 0.0;
    let mut worst_backward: f64 = 0.0;
    for seed in 0..100u64 {
        let d = 1 + (seed % 3) as usize;
        let horizon = 1 + (seed % 6) as usize;
        let model = lib(random_model(seed, d, 2, seed % 2 == 0))?;
        let prior = random_density(seed + 1000, &model.space, 0.05);
        let traj = lib(sample_trajectory(&model, &prior, horizon, seed))?;
        let run = lib(run_filter(&prior, &traj.observations, &model, PriorLabel::Nu))?;
        let mut rho = lib(backward_init(&prior, &model.kernel, &model.space))?;
        for n in 1..=horizon {
            let obs = &traj.observations[..n];
            let oracle = enumerate_filter(&model, &prior, obs);
            let diff = run.densities[n].values().iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst_filter = worst_filter.max(diff);
            ensure(diff <= 1e-10, || format!("seed {seed}: filter step {n} off by {diff:e}"))?;

            if n > 1 {
                rho = lib(backward_step(&rho, &run.densities[n - 1], &model.kernel, &model.space))?;
            }
            let oracle = enumerate_backward(&model, &prior, obs);
            for x in 0..d {
                for u in 0..d {
                    let o = oracle[u][x];
                    if o.is_nan() {
                        continue;
                    }
                    let diff = (rho.get(u, x) - o).abs();
                    worst_backward = worst_backward.max(diff);
                    ensure(diff <= 1e-10, || format!("seed {seed}: backward step {n} ({u},{x}) off by {diff:e}"))?;
                }
            }
        }
    }
    within(start.elapsed(), Duration::from_secs(30), "100 models")?;
    Ok(format!("filter error {worst_filter:.1e}, backward error {worst_backward:.1e}"))
}

fn ac4() -> Outcome {
    let start = Instant::now();
    let s = lib(scenario("mixing2"))?;
    let coeffs = lib(scenario_coefficients(&s.setup))?;
    ensure((coeffs.rate - 0.5357142857142857).abs() < 1e-9, || format!("rate {}", coeffs.rate))?;
    let records = lib(run_scenario(&s, 0.5))?;
    ensure(records.len() == 50, || format!("{} records", records.len()))?;
    let threshold = -coeffs.rate + 0.1;
    let mut slope_max = f64::NEG_INFINITY;
    for r in &records {
        slope_max = slope_max.max(r.decay.slope);
        ensure(r.decay.slope <= threshold, || {
            format!("replicate {}: slope {} above {threshold}", r.replicate, r.decay.slope)
        })?;
    }
    within(start.elapsed(), Duration::from_secs(10), "50 replicates")?;
    Ok(format!("max slope {slope_max:.4} <= {threshold:.4}"))
}

fn ac5() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let d = 2 + (seed % 5) as usize;
        let model = lib(random_model(seed, d, 2, true))?;
        let m = lib(invariant_density(&model.kernel, &model.space))?;
        let coeffs = mixing_coefficients(&model, &m);
        let report = lib(geometric_ergodicity_report(&model, &m, &coeffs, 50))?;
        ensure(report.status == BoundStatus::Applicable, || format!("seed {seed}: {:?}", report.status))?;
        let w = report.worst_ratio.unwrap_or(f64::INFINITY);
        worst = worst.max(w);
        ensure(w <= 1.0, || format!("seed {seed}: worst ratio {w}"))?;
    }
    let s = lib(scenario("mixing2"))?;
    let model = &s.setup.model;
    let m = lib(invariant_density(&model.kernel, &model.space))?;
    let coeffs = mixing_coefficients(model, &m);
    let report = lib(geometric_ergodicity_report(model, &m, &coeffs, 50))?;
    let g = report.gap(0, 1);
    let bound = report.bounds.as_ref().map(|b| b[0]).unwrap_or(f64::NAN);
    ensure((g - 0.25).abs() <= 1e-12, || format!("g(1,1) = {g}"))?;
    ensure((bound - 28.0 / 15.0).abs() <= 1e-9, || format!("C r = {bound}"))?;
    ensure(g <= bound, || format!("{g} > {bound}"))?;
    Ok(format!("worst ratio {worst:.4}, g(1,1) = {g:.4} <= {bound:.4}"))
}

fn ac6() -> Outcome {
    let mut runs = 0;
    let mut oscillation_worst: f64 = 0.0;
    let mut delta_worst: f64 = 0.0;
    for name in ["mixing2", "example11", "uniformK"] {
        let mut s = lib(scenario(name))?;
        s.horizon = s.horizon.min(200);
        let coeffs = lib(scenario_coefficients(&s.setup))?;
        ensure(coeffs.lambda_diamond > 0.0, || format!("{name}: lambda_diamond is zero"))?;
        for r in lib(run_scenario(&s, 0.5))? {
            runs += 1;
            oscillation_worst = oscillation_worst.max(r.oscillation_worst_ratio.unwrap_or(f64::INFINITY));
            ensure(r.bounds_hold(), || {
                format!("{name} replicate {}: {:?} {:?}", r.replicate, r.oscillation_worst_ratio, r.contraction_worst_ratio)
            })?;
        }
        let m = lib(invariant_density(&s.setup.model.kernel, &s.setup.model.space))?;
        let seq = lib(stationary_backward_sequence(&s.setup.model, &m, 50))?;
        let check = delta_bound_check(&seq, &m, &coeffs);
        delta_worst = delta_worst.max(check.worst_ratio.unwrap_or(0.0));
        ensure(check.holds(), || format!("{name}: stationary worst ratio {:?}", check.worst_ratio))?;
    }
    for seed in 0..100u64 {
        let d = 2 + (seed % 5) as usize;
        let model = lib(random_model(seed, d, 2, true))?;
        let m = lib(invariant_density(&model.kernel, &model.space))?;
        let coeffs = mixing_coefficients(&model, &m);
        let seq = lib(stationary_backward_sequence(&model, &m, 50))?;
        let check = delta_bound_check(&seq, &m, &coeffs);
        delta_worst = delta_worst.max(check.worst_ratio.unwrap_or(0.0));
        ensure(check.holds(), || format!("seed {seed}: stationary worst ratio {:?}", check.worst_ratio))?;

        let theta = random_density(seed + 500, &model.space, 0.05);
        let traj = lib(sample_trajectory(&model, &theta, 50, seed))?;
        let mut ctx = lib(BackwardContext::new(&model, &theta, &coeffs))?;
        for &y in &traj.observations {
            lib(ctx.advance(y))?;
            let rec = ctx.record();
            for (delta, bound) in rec.delta.iter().zip(&rec.bound) {
                let ratio = delta / bound;
                oscillation_worst = oscillation_worst.max(ratio);
                ensure(*delta <= bound * (1.0 + BOUND_SLACK), || {
                    format!("seed {seed} step {}: delta {delta} > bound {bound}", rec.step)
                })?;
            }
        }
        runs += 1;
    }

    let mut kaijser = lib(scenario("kaijser"))?;
    kaijser.horizon = 200;
    let records = lib(run_scenario(&kaijser, 0.5))?;
    ensure(records.iter().all(|r| r.oscillation_worst_ratio.is_none()), || "kaijser bound not vacuous".into())?;
    ensure(records.iter().all(|r| r.oscillation_bound_max.iter().all(|b| b.is_infinite())), || {
        "kaijser bound values are finite".into()
    })?;
    let model = &kaijser.setup.model;
    let m = lib(invariant_density(&model.kernel, &model.space))?;
    let coeffs = mixing_coefficients(model, &m);
    let seq = lib(stationary_backward_sequence(model, &m, 50))?;
    let check = delta_bound_check(&seq, &m, &coeffs);
    ensure(check.status == BoundStatus::Inapplicable && check.worst_ratio.is_none(), || {
        format!("kaijser stationary check {check:?}")
    })?;
    Ok(format!(
        "{runs} runs, oscillation worst ratio {oscillation_worst:.4}, stationary worst ratio {delta_worst:.4}, kaijser vacuous"
    ))
}

fn ac7() -> Outcome {
    let s = lib(scenario("mixing2"))?;
    let model = &s.setup.model;
    let m = lib(invariant_density(&model.kernel, &model.space))?;
    let horizon = 10_000;
    let mut worst_gap: f64 = 0.0;
    for replicate in 0..20u64 {
        let mut rng = replicate_rng(s.seed, replicate);
        let traj = lib(sample_with_rng(model, &s.setup.nu, horizon, &mut rng))?;
        let run = lib(run_filter(&s.setup.nu, &traj.observations, model, PriorLabel::Nu))?;
        for state in 0..model.dim() {
            let f: Vec<f64> = (0..model.dim()).map(|x| if x == state { 1.0 } else { 0.0 }).collect();
            let avg = lib(lln_average(&run, &f, &m, &model.space))?;
            worst_gap = worst_gap.max(avg.gap);
            ensure(avg.gap <= 0.05, || format!("replicate {replicate} state {state}: gap {}", avg.gap))?;
        }
    }
    let mut worst_residual: f64 = 0.0;
    for state in 0..model.dim() {
        let f: Vec<f64> = (0..model.dim()).map(|x| if x == state { 1.0 } else { 0.0 }).collect();
        let sol = lib(solve_poisson(model, &m, &f))?;
        worst_residual = worst_residual.max(sol.residual);
        ensure(sol.residual <= 1e-10, || format!("state {state}: residual {}", sol.residual))?;
    }
    Ok(format!("worst gap {worst_gap:.4}, poisson residual {worst_residual:.1e}"))
}

fn ac8() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let d = 1 + (seed % 4) as usize;
        let horizon = 1 + (seed % 20) as usize;
        let model = lib(random_model(seed, d, 3, seed % 3 == 0))?;
        let nu = random_density(seed + 2000, &model.space, 0.0);
        let beta = random_density(seed + 3000, &model.space, 0.05);
        let ratio: Vec<f64> = nu.values().iter().zip(beta.values()).map(|(n, b)| n / b).collect();
        let traj = lib(sample_trajectory(&model, &nu, horizon, seed))?;
        let run_nu = lib(run_filter(&nu, &traj.observations, &model, PriorLabel::Nu))?;
        let run_beta = lib(run_filter(&beta, &traj.observations, &model, PriorLabel::Beta))?;
        let m = lib(invariant_density(&model.kernel, &model.space))?;
        let coeffs = mixing_coefficients(&model, &m);
        let mut ctx = lib(BackwardContext::new(&model, &beta, &coeffs))?;
        for &y in &traj.observations {
            lib(ctx.advance(y))?;
        }
        let residual = lib(check_prior_identities(&run_beta, &run_nu, ctx.rho(), &ratio, &model.space))?;
        worst = worst.max(residual);
        ensure(residual <= 1e-9, || format!("seed {seed}: identity residual {residual:e}"))?;
    }

    let s = lib(scenario("mixing2"))?;
    let model = &s.setup.model;
    let coeffs = lib(scenario_coefficients(&s.setup))?;
    let horizon = 10_000;
    let traj = lib(sample_trajectory(model, &s.setup.nu, horizon, s.seed))?;
    let mut ctx = lib(BackwardContext::new(model, &s.setup.beta, &coeffs))?;
    for &y in &traj.observations {
        lib(ctx.advance(y))?;
    }
    let l = ctx.likelihood_ratio(&s.setup.nu_over_beta()).value;
    let rate = l.ln().abs() / horizon as f64;
    ensure(rate <= 0.01, || format!("|log L_n|/n = {rate}"))?;
    Ok(format!("worst identity residual {worst:.1e}, |log L_n|/n = {rate:.2e}"))
}

/// Result bytes and, for commands that write one, the summary bytes.
fn run_cli(out_dir: &Path, tag: &str, args: &[&str]) -> Result<(Vec<u8>, Option<Vec<u8>>), String> {
    let output = out_dir.join(format!("{tag}.csv"));
    let status = Command::new(env!("CARGO_BIN_EXE_filterstab"))
        .args(args)
        .arg("--output")
        .arg(&output)
        .env_remove("FILTERSTAB_OUTPUT_DIR")
        .status()
        .map_err(|e| e.to_string())?;
    ensure(status.code() == Some(0), || format!("{args:?} exited with {status}"))?;
    let results = std::fs::read(&output).map_err(|e| format!("{}: {e}", output.display()))?;
    Ok((results, std::fs::read(output.with_extension("summary.json")).ok()))
}

fn ac9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let invocations: [&[&str]; 6] = [
        &["simulate", "--scenario", "example11", "--horizon", "200", "--replicates", "3"],
        &["stability", "--scenario", "mixing2", "--horizon", "300"],
        &["ergodicity", "--scenario", "example11"],
        &["backward", "--scenario", "uniformK", "--horizon", "50"],
        &["lln", "--scenario", "mixing2", "--horizon", "1000", "--replicates", "4"],
        &["kaijser", "--horizon", "1000"],
    ];
    for (i, args) in invocations.iter().enumerate() {
        let first = run_cli(dir.path(), &format!("a{i}"), args)?;
        let second = run_cli(dir.path(), &format!("b{i}"), args)?;
        ensure(!first.0.is_empty(), || format!("{args:?} wrote an empty result"))?;
        ensure(first == second, || format!("{args:?} differs between runs"))?;
    }
    Ok(format!("{} commands byte-identical across runs", invocations.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("AC-1", ac1),
        ("AC-2", ac2),
        ("AC-3", ac3),
        ("AC-4", ac4),
        ("AC-5", ac5),
        ("AC-6", ac6),
        ("AC-7", ac7),
        ("AC-8", ac8),
        ("AC-9", ac9),
    ];
    let mut failed = 0;
    for (id, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {id}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id}: {detail}");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
