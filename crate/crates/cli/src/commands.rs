use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use eh_core::bounds::{
    additive_gap, asymptotic_sweep, gap_report, optimize_gap_over_q, upper_bound,
};
use eh_core::dp::{solve_dp, DpConfig};
use eh_core::policy::{
    evaluate_bernoulli, optimize_fraction, renewal_ffp_value, solve_bernoulli_optimal, Evaluator,
};
use eh_core::utility::{classify, parse_params};
use eh_core::{sim, ArrivalSpec, Builtin, Error, Policy, SimConfig, Support, Utility};
use serde::Serialize;
use serde_json::{json, Value};

use crate::{
    criteria, BernoulliOptArgs, ClassifyArgs, Cli, Command, CompareArgs, DpArgs, DpOptions,
    EvaluatorKind, GapArgs, GlobalArgs, OptimizeFractionArgs, Outcome, ProblemArgs,
    ReproduceArgs, SimArgs, SimulateArgs, SweepArgs,
};

pub(crate) fn dispatch(cli: &Cli, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    let g = &cli.global;
    let (value, outcome) = match &cli.command {
        Command::Simulate(a) => (simulate(a, g)?, Outcome::Success),
        Command::BernoulliOpt(a) => (bernoulli_opt(a, g)?, Outcome::Success),
        Command::OptimizeFraction(a) => (optimize(a, g)?, Outcome::Success),
        Command::Gap(a) => (gap(a, g)?, Outcome::Success),
        Command::Sweep(a) => (sweep(a, g)?, Outcome::Success),
        Command::Classify(a) => (classify_cmd(a, g)?, Outcome::Success),
        Command::Dp(a) => (dp(a, g)?, Outcome::Success),
        Command::Compare(a) => (compare(a, g)?, Outcome::Success),
        Command::Reproduce(a) => reproduce(a)?,
    };
    emit(out, value, g)?;
    Ok(outcome)
}

fn emit(out: &mut dyn Write, mut value: Value, g: &GlobalArgs) -> anyhow::Result<()> {
    if !g.deterministic {
        if let Value::Object(map) = &mut value {
            let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
            map.insert("timestamp".into(), json!(secs));
        }
    }
    serde_json::to_writer_pretty(&mut *out, &value)?;
    writeln!(out)?;
    Ok(())
}

fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(())
}

fn no_csv(g: &GlobalArgs, command: &str) {
    if g.emit_csv.is_some() {
        eprintln!("warning: `{command}` has no tabular output; --emit-csv ignored");
    }
}

fn problem(a: &ProblemArgs) -> eh_core::Result<ArrivalSpec> {
    ArrivalSpec::parse(&a.arrivals, a.battery)
}

fn sim_config(a: &SimArgs, seed: u64) -> SimConfig {
    SimConfig {
        horizon: a.horizon,
        trials: a.trials,
        seed,
        initial_battery: a.initial_battery,
        warmup: a.warmup,
    }
}

fn dp_config(a: &DpOptions) -> DpConfig {
    DpConfig {
        grid_points: a.grid,
        action_points: a.actions,
        vi_tol: a.vi_tol,
        max_iters: a.max_iters,
        ..DpConfig::default()
    }
}

/// Parses `ffp`, `ffp:theta=Q`, `bernoulli-opt` or `dp`.
fn parse_policy(s: &str, u: &Builtin, spec: &ArrivalSpec) -> eh_core::Result<Policy> {
    let (name, rest) = s.split_once(':').unwrap_or((s, ""));
    let params = parse_params(rest)?;
    let theta = match params.as_slice() {
        [] => None,
        [(k, v)] if k == "theta" && name == "ffp" => Some(
            v.parse::<f64>()
                .map_err(|_| Error::Config(format!("theta is not a number: `{v}`")))?,
        ),
        _ => return Err(Error::Config(format!("unexpected parameters in policy `{s}`"))),
    };
    match name {
        "ffp" => Policy::fixed_fraction(theta.unwrap_or_else(|| spec.fraction_q())),
        "bernoulli-opt" => {
            let p = bernoulli_only(spec, "bernoulli-opt")?;
            Ok(Policy::BernoulliOptimal(solve_bernoulli_optimal(u, p, spec.battery())?))
        }
        "dp" => Ok(Policy::Tabular(solve_dp(u, spec, &DpConfig::default())?.policy)),
        other => Err(Error::Config(format!(
            "unknown policy `{other}` (expected ffp, ffp:theta=Q, bernoulli-opt or dp)"
        ))),
    }
}

fn bernoulli_only(spec: &ArrivalSpec, what: &str) -> eh_core::Result<f64> {
    spec.bernoulli_p()
        .ok_or_else(|| Error::Config(format!("{what} needs bernoulli arrivals, got {spec}")))
}

fn simulate(a: &SimulateArgs, g: &GlobalArgs) -> anyhow::Result<Value> {
    let u = a.problem.utility;
    let spec = problem(&a.problem)?;
    let policy = parse_policy(&a.policy, &u, &spec)?;
    let cfg = sim_config(&a.sim, g.seed);
    let r = sim::run(&policy, &spec, &u, &cfg)?;
    let upper = upper_bound(&u, spec.mean())?;
    if let Some(path) = &g.emit_csv {
        let rows = r.per_trial_means.iter().enumerate().map(|(i, m)| format!("{i},{m}"));
        write_csv(path, "trial,mean", rows)?;
    }
    Ok(json!({
        "command": "simulate",
        "utility": u.name(),
        "arrivals": spec.to_string(),
        "battery": spec.battery(),
        "policy": policy.label(),
        "mean_reward": r.mean_reward,
        "ci_half_width": r.ci_half_width,
        "upper_bound": upper,
        "ratio": ratio(r.mean_reward, upper),
        "config": r.config,
    }))
}

fn ratio(value: f64, upper: f64) -> f64 {
    if upper > 0.0 {
        value / upper
    } else {
        1.0
    }
}

fn bernoulli_opt(a: &BernoulliOptArgs, g: &GlobalArgs) -> anyhow::Result<Value> {
    let u = a.utility;
    let s = solve_bernoulli_optimal(&u, a.p, a.battery)?;
    let (budget, stationarity) = s.kkt_residuals(&u);
    let schedule = s.terms(&u, a.terms.max(s.schedule.len()));
    if let Some(path) = &g.emit_csv {
        let rows = schedule.iter().enumerate().map(|(i, x)| format!("{},{x}", i + 1));
        write_csv(path, "slot,power", rows)?;
    }
    Ok(json!({
        "command": "bernoulli-opt",
        "utility": u.name(),
        "p": a.p,
        "battery": a.battery,
        "lambda": s.lambda,
        "N": s.horizon(),
        "support": match s.support {
            Support::Finite(_) => "finite",
            Support::Infinite => "infinite",
        },
        "schedule": schedule,
        "value": evaluate_bernoulli(&s.schedule, &u, a.p),
        "kkt_budget_residual": budget,
        "kkt_stationarity_residual": stationarity,
    }))
}

fn evaluator_for(kind: Option<EvaluatorKind>, spec: &ArrivalSpec, sim: &SimArgs, seed: u64) -> Evaluator {
    let kind = kind.unwrap_or(if spec.bernoulli_p().is_some() {
        EvaluatorKind::Renewal
    } else {
        EvaluatorKind::MonteCarlo
    });
    match kind {
        EvaluatorKind::Renewal => Evaluator::Renewal,
        EvaluatorKind::MonteCarlo => Evaluator::MonteCarlo(sim_config(sim, seed)),
    }
}

fn evaluator_name(e: &Evaluator) -> &'static str {
    match e {
        Evaluator::Renewal => "renewal",
        Evaluator::MonteCarlo(_) => "monte_carlo",
    }
}

fn optimize(a: &OptimizeFractionArgs, g: &GlobalArgs) -> anyhow::Result<Value> {
    no_csv(g, "optimize-fraction");
    let u = a.problem.utility;
    let spec = problem(&a.problem)?;
    let evaluator = evaluator_for(a.evaluator, &spec, &a.sim, g.seed);
    let opt = optimize_fraction(&u, &spec, &evaluator)?;
    Ok(json!({
        "command": "optimize-fraction",
        "utility": u.name(),
        "arrivals": spec.to_string(),
        "battery": spec.battery(),
        "evaluator": evaluator_name(&evaluator),
        "q": spec.fraction_q(),
        "theta_star": opt.theta_star,
        "value": opt.value,
        "value_at_q": opt.value_at_q,
        "upper_bound": upper_bound(&u, spec.mean())?,
    }))
}

fn gap(a: &GapArgs, g: &GlobalArgs) -> anyhow::Result<Value> {
    no_csv(g, "gap");
    let report = gap_report(&a.utility, a.q, a.mu)?;
    let mut value = serde_json::to_value(&report)?;
    value["command"] = json!("gap");
    if a.optimize_q {
        let opt = serde_json::to_value(optimize_gap_over_q(&a.utility)?)?;
        if let (Value::Object(map), Value::Object(extra)) = (&mut value, opt) {
            map.extend(extra);
        }
    }
    Ok(value)
}

/// Parses `lo:hi:log[:n]`, `lo:hi:lin:n`, or `a,b,c`.
fn parse_mu_range(s: &str) -> eh_core::Result<Vec<f64>> {
    let bad = || Error::Config(format!("bad --mu `{s}` (expected lo:hi:log[:n], lo:hi:lin:n or a,b,c)"));
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
    let parts: Vec<&str> = s.split(':').collect();
    let values = match parts.as_slice() {
        [list] => list.split(',').map(num).collect::<eh_core::Result<Vec<_>>>()?,
        [lo, hi, scale, rest @ ..] if rest.len() <= 1 => {
            let (lo, hi) = (num(lo)?, num(hi)?);
            if !(lo > 0.0 && hi >= lo) {
                return Err(bad());
            }
            let count = match rest.first() {
                Some(n) => n.trim().parse::<usize>().map_err(|_| bad())?,
                None if *scale == "log" => (hi / lo).log10().round() as usize + 1,
                None => return Err(bad()),
            };
            if count < 2 {
                return Ok(vec![lo]);
            }
            let at = |i: usize| i as f64 / (count - 1) as f64;
            match *scale {
                "log" => (0..count).map(|i| lo * (hi / lo).powf(at(i))).collect(),
                "lin" => (0..count).map(|i| lo + (hi - lo) * at(i)).collect(),
                _ => return Err(bad()),
            }
        }
        _ => return Err(bad()),
    };
    if values.iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
        return Err(bad());
    }
    Ok(values)
}

fn sweep(a: &SweepArgs, g: &GlobalArgs) -> anyhow::Result<Value> {
    let mus = parse_mu_range(&a.mu)?;
    let rows = asymptotic_sweep(&a.utility, a.q, &mus)?;
    if let Some(path) = &g.emit_csv {
        let lines = rows
            .iter()
            .map(|r| format!("{},{},{},{}", r.mu, r.ffp_value, r.upper, r.deficit));
        write_csv(path, "mu,ffp_value,upper,deficit", lines)?;
    }
    Ok(json!({
        "command": "sweep",
        "utility": a.utility.name(),
        "q": a.q,
        "rows": rows,
    }))
}

fn classify_cmd(a: &ClassifyArgs, g: &GlobalArgs) -> anyhow::Result<Value> {
    no_csv(g, "classify");
    let c = classify(&a.utility);
    Ok(json!({
        "command": "classify",
        "utility": a.utility.name(),
        "class": c.class,
        "evidence": c.evidence,
    }))
}

fn dp(a: &DpArgs, g: &GlobalArgs) -> anyhow::Result<Value> {
    let u = a.problem.utility;
    let spec = problem(&a.problem)?;
    let sol = solve_dp(&u, &spec, &dp_config(&a.dp))?;
    if !sol.converged {
        eprintln!("warning: value iteration stopped at span {} after {} iterations", sol.span, sol.iters);
    }
    if let Some(path) = &g.emit_csv {
        let rows = sol
            .policy
            .levels
            .iter()
            .zip(&sol.policy.actions)
            .map(|(b, x)| format!("{b},{x}"));
        write_csv(path, "b,action", rows)?;
    }
    let upper = upper_bound(&u, spec.mean())?;
    Ok(json!({
        "command": "dp",
        "utility": u.name(),
        "arrivals": spec.to_string(),
        "battery": spec.battery(),
        "grid": a.dp.grid,
        "gain": sol.gain,
        "iters": sol.iters,
        "span": sol.span,
        "converged": sol.converged,
        "upper_bound": upper,
        "ratio": ratio(sol.gain, upper),
    }))
}

#[derive(Debug, Serialize)]
struct CompareRow {
    policy: String,
    value: f64,
    /// Monte Carlo half width, when the value is an estimate.
    ci_half_width: Option<f64>,
    ratio: f64,
    deficit: f64,
    /// `u(μ) + α(q)`, when `α(q)` is finite.
    alpha_bound: Option<f64>,
}

fn compare(a: &CompareArgs, g: &GlobalArgs) -> anyhow::Result<Value> {
    let u = a.problem.utility;
    let spec = problem(&a.problem)?;
    let mu = spec.mean();
    let q = spec.fraction_q();
    let upper = upper_bound(&u, mu)?;
    let alpha = additive_gap(&u, q)?.alpha;
    let alpha_bound = alpha.is_finite().then_some(upper + alpha);
    let row = |policy: String, value: f64, ci: Option<f64>| CompareRow {
        policy,
        value,
        ci_half_width: ci,
        ratio: ratio(value, upper),
        deficit: upper - value,
        alpha_bound,
    };

    let cfg = sim_config(&a.sim, g.seed);
    let evaluator = evaluator_for(None, &spec, &a.sim, g.seed);
    let score = |theta: f64| -> anyhow::Result<(f64, Option<f64>)> {
        Ok(match spec.bernoulli_p() {
            Some(p) => (renewal_ffp_value(&u, theta, p, spec.battery()), None),
            None => {
                let r = sim::run(&Policy::fixed_fraction(theta)?, &spec, &u, &cfg)?;
                (r.mean_reward, Some(r.ci_half_width))
            }
        })
    };

    let mut rows = Vec::new();
    let (v, ci) = score(q)?;
    rows.push(row(format!("ffp:theta={q}"), v, ci));
    let opt = optimize_fraction(&u, &spec, &evaluator)?;
    let (v, ci) = score(opt.theta_star)?;
    rows.push(row(format!("ffp:theta={}", opt.theta_star), v, ci));
    if let Some(p) = spec.bernoulli_p() {
        let s = solve_bernoulli_optimal(&u, p, spec.battery())?;
        rows.push(row("bernoulli-opt".into(), evaluate_bernoulli(&s.schedule, &u, p), None));
    }
    let sol = solve_dp(&u, &spec, &dp_config(&a.dp))?;
    if !sol.converged {
        eprintln!("warning: value iteration stopped at span {}", sol.span);
    }
    rows.push(row("dp".into(), sol.gain, None));
    rows.sort_by(|x, y| y.value.total_cmp(&x.value));

    if let Some(path) = &g.emit_csv {
        let opt_str = |o: Option<f64>| o.map_or(String::new(), |x| x.to_string());
        let lines = rows.iter().map(|r| {
            format!("{},{},{},{},{}", r.policy, r.value, r.ratio, r.deficit, opt_str(r.alpha_bound))
        });
        write_csv(path, "policy,value,ratio,deficit,alpha_bound", lines)?;
    }
    Ok(json!({
        "command": "compare",
        "utility": u.name(),
        "arrivals": spec.to_string(),
        "battery": spec.battery(),
        "mu": mu,
        "q": q,
        "upper_bound": upper,
        "alpha": if alpha.is_finite() { json!(alpha) } else { json!("-inf") },
        "evaluator": evaluator_name(&evaluator),
        "rows": rows,
    }))
}

fn reproduce(a: &ReproduceArgs) -> anyhow::Result<(Value, Outcome)> {
    let ids = if a.criteria.is_empty() {
        criteria::ALL.to_vec()
    } else {
        a.criteria.clone()
    };
    let mut results = Vec::new();
    for id in ids {
        let r = criteria::run(id)?;
        eprintln!("{r}");
        results.push(r);
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    let outcome = if failed == 0 {
        Outcome::Success
    } else {
        Outcome::CriteriaFailed
    };
    let value = json!({
        "command": "reproduce",
        "passed": results.len() - failed,
        "failed": failed,
        "criteria": results,
    });
    Ok((value, outcome))
}
