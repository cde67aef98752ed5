//! The acceptance battery behind `eh-policy reproduce`.
//!
//! Each criterion returns a [`CriterionResult`]; a criterion that cannot
//! even be evaluated (a library error) counts as a failure with the error
//! recorded, never as a pass.

use std::fmt;

use eh_core::bounds::{additive_gap, asymptotic_sweep, upper_bound};
use eh_core::dp::{solve_dp, DpConfig};
use eh_core::policy::{evaluate_bernoulli, renewal_ffp_value};
use eh_core::utility::{h_inf, NumericalOnly};
use eh_core::{sim, ArrivalSpec, Builtin, Policy, SimConfig, Utility};
use serde::Serialize;
use serde_json::Value;

use crate::run_json;

pub const ALL: [u8; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    /// Headline measurements.
    pub summary: String,
    /// One line per violated check.
    pub failures: Vec<String>,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "criterion {:>2} [{verdict}] {}: {}", self.id, self.name, self.summary)?;
        for line in self.failures.iter().take(5) {
            write!(f, "\n    - {line}")?;
        }
        if self.failures.len() > 5 {
            write!(f, "\n    - ... {} more", self.failures.len() - 5)?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct Checks {
    count: usize,
    failures: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.count += 1;
        if !ok {
            self.failures.push(what());
        }
    }

    fn finish(self, id: u8, name: &'static str, summary: String) -> CriterionResult {
        CriterionResult {
            id,
            name,
            pass: self.failures.is_empty() && self.count > 0,
            summary: format!("{summary} ({} checks)", self.count),
            failures: self.failures,
        }
    }
}

/// Runs criterion `id` (1 to 10).
pub fn run(id: u8) -> anyhow::Result<CriterionResult> {
    let name = name(id)?;
    let body = match id {
        1 => sqrt_fractional_optimum,
        2 => log_gap,
        3 => multiplicative_sandwich,
        4 => additive_lower_bound,
        5 => class_detection,
        6 => asymptotic_optimality,
        7 => renewal_vs_monte_carlo,
        8 => dp_coherence,
        9 => kernel_infimum_shape,
        _ => determinism,
    };
    let mut checks = Checks::default();
    let summary = match body(&mut checks) {
        Ok(s) => s,
        Err(e) => {
            checks.check(false, || format!("could not evaluate: {e:#}"));
            "error".into()
        }
    };
    Ok(checks.finish(id, name, summary))
}

pub fn name(id: u8) -> anyhow::Result<&'static str> {
    Ok(match id {
        1 => "sqrt fractional optimum",
        2 => "log_awgn additive gap",
        3 => "multiplicative sandwich",
        4 => "additive lower bound",
        5 => "class detection",
        6 => "asymptotic optimality",
        7 => "renewal vs Monte Carlo",
        8 => "DP oracle coherence",
        9 => "gap kernel infimum shape",
        10 => "determinism",
        other => anyhow::bail!(eh_core::Error::Config(format!("no criterion {other} (expected 1-10)"))),
    })
}

fn field(v: &Value, key: &str) -> anyhow::Result<f64> {
    v[key]
        .as_f64()
        .ok_or_else(|| anyhow::anyhow!("output has no numeric `{key}`: {v}"))
}

fn theta_grid() -> Vec<f64> {
    (1..=19).map(|k| 0.05 * k as f64).collect()
}

fn sqrt_fractional_optimum(c: &mut Checks) -> anyhow::Result<String> {
    let mut worst_rel = 0.0f64;
    let mut worst_kkt = 0.0f64;
    for p in [0.5, 0.1, 0.3, 0.9] {
        let ps = p.to_string();
        let out = run_json(&[
            "eh-policy", "bernoulli-opt", "--utility", "sqrt", "--p", &ps, "--battery", "1",
            "--terms", "30", "--deterministic",
        ])?;
        let schedule: Vec<f64> = out["schedule"]
            .as_array()
            .map(|a| a.iter().filter_map(Value::as_f64).collect())
            .unwrap_or_default();
        c.check(schedule.len() >= 30, || format!("p={p}: only {} terms", schedule.len()));
        let p_hat: f64 = 1.0 - (1.0 - p) * (1.0 - p);
        for (i, g) in schedule.iter().take(30).enumerate() {
            let expected = p_hat * (1.0 - p_hat).powi(i as i32);
            let rel = (g - expected).abs() / expected;
            worst_rel = worst_rel.max(rel);
            c.check(rel <= 1e-6, || format!("p={p}, slot {}: {g} vs {expected} (rel {rel:.2e})", i + 1));
        }
        for key in ["kkt_budget_residual", "kkt_stationarity_residual"] {
            let r = field(&out, key)?;
            worst_kkt = worst_kkt.max(r);
            c.check(r <= 1e-8, || format!("p={p}: {key} = {r:.2e}"));
        }
    }
    Ok(format!("max rel err {worst_rel:.2e}, max KKT residual {worst_kkt:.2e}"))
}

fn log_gap(c: &mut Checks) -> anyhow::Result<String> {
    let out = run_json(&["eh-policy", "gap", "--utility", "log_awgn", "--optimize-q", "--deterministic"])?;
    let nats = field(&out, "alpha_star")?;
    let bits = field(&out, "alpha_star_bits")?;
    c.check((0.70..=0.74).contains(&bits.abs()), || format!("|alpha*| = {:.4} bits", bits.abs()));
    let mut ratios = Vec::new();
    for q in [0.1, 0.5, 0.9] {
        let qs = q.to_string();
        let out = run_json(&["eh-policy", "gap", "--utility", "log_awgn", "--q", &qs, "--deterministic"])?;
        let r = field(&out, "ratio_r")?;
        c.check((r - (1.0 - q)).abs() <= 1e-3, || format!("q={q}: ratio_r {r} vs {}", 1.0 - q));
        ratios.push(format!("{r:.5}"));
    }
    Ok(format!(
        "alpha* = {nats:.4} nats = {bits:.4} bits; ratio_r at q=0.1,0.5,0.9: {}",
        ratios.join(", ")
    ))
}

fn multiplicative_sandwich(c: &mut Checks) -> anyhow::Result<String> {
    let mut min_ratio = f64::INFINITY;
    for u in Builtin::all() {
        for k in 1..=9 {
            let q = k as f64 / 10.0;
            for battery in [1.0, 10.0, 100.0] {
                let mu = q * battery;
                let v = renewal_ffp_value(&u, q, q, battery);
                let upper = u.eval(mu);
                min_ratio = min_ratio.min(v / upper);
                c.check(v >= 0.5 * upper && v <= upper, || {
                    format!("{} q={q} B={battery}: {v} not in [{}, {upper}]", u.name(), 0.5 * upper)
                });
            }
        }
    }
    let mut min_mc_ratio = f64::INFINITY;
    let cfg = SimConfig::new(100_000, 100, 2024);
    for u in Builtin::all() {
        for battery in [1.0, 10.0, 100.0] {
            let specs = [
                ArrivalSpec::uniform(0.0, battery, battery)?,
                ArrivalSpec::discrete(
                    vec![0.0, 0.5 * battery, battery],
                    vec![0.5, 0.3, 0.2],
                    battery,
                )?,
            ];
            for spec in specs {
                let policy = Policy::fixed_fraction(spec.fraction_q())?;
                let r = sim::run(&policy, &spec, &u, &cfg)?;
                let upper = upper_bound(&u, spec.mean())?;
                min_mc_ratio = min_mc_ratio.min(r.mean_reward / upper);
                let (v, ci) = (r.mean_reward, r.ci_half_width);
                c.check(v >= 0.5 * upper - ci && v <= upper + ci, || {
                    format!("{} {spec}: MC {v} ± {ci} outside [{}, {upper}]", u.name(), 0.5 * upper)
                });
            }
        }
    }
    Ok(format!(
        "min renewal value/u(mu) = {min_ratio:.4}, min MC value/u(mu) = {min_mc_ratio:.4}"
    ))
}

fn additive_lower_bound(c: &mut Checks) -> anyhow::Result<String> {
    let utilities = [Builtin::LogAwgn, Builtin::ExpSat { beta: 1.0 }, Builtin::RatioSat, Builtin::LogSqrt];
    let mut min_margin = f64::INFINITY;
    let mut finite = 0;
    for u in utilities {
        for q in [0.2, 0.5, 0.8] {
            let alpha = additive_gap(&u, q)?.alpha;
            if !alpha.is_finite() {
                continue;
            }
            finite += 1;
            for mu in [0.1, 1.0, 10.0, 100.0] {
                let v = renewal_ffp_value(&u, q, q, mu / q);
                let bound = u.eval(mu) + alpha;
                min_margin = min_margin.min(v - bound);
                c.check(v >= bound - 1e-9, || {
                    format!("{} q={q} mu={mu}: {v} < u(mu) + alpha = {bound}", u.name())
                });
            }
        }
    }
    Ok(format!("{finite}/12 finite alphas, min value - (u(mu) + alpha) = {min_margin:.3e}"))
}

fn class_detection(c: &mut Checks) -> anyhow::Result<String> {
    let expected = [
        ("log_awgn", "A"),
        ("log_sqrt", "A"),
        ("sqrt", "A"),
        ("exp_sat", "B"),
        ("ratio_sat", "B"),
        ("sqrt_log", "B"),
    ];
    let mut seen = Vec::new();
    for (name, class) in expected {
        let args = ["eh-policy", "classify", "--utility", name, "--deterministic"];
        let first = run_json(&args)?;
        let again = run_json(&args)?;
        let got = first["class"].as_str().unwrap_or("?").to_string();
        c.check(got == class, || format!("{name}: class {got}, expected {class}"));
        c.check(first == again, || format!("{name}: repeated classification differs"));
        seen.push(format!("{name}={got}"));
    }
    Ok(seen.join(" "))
}

fn asymptotic_optimality(c: &mut Checks) -> anyhow::Result<String> {
    let mus: Vec<f64> = (1..=6).map(|k| 10f64.powi(k)).collect();
    let mut parts = Vec::new();
    for u in [Builtin::SqrtLog, Builtin::ExpSat { beta: 1.0 }] {
        let deficits: Vec<f64> = asymptotic_sweep(&u, 0.5, &mus)?.iter().map(|r| r.deficit).collect();
        for (k, w) in deficits.windows(2).enumerate() {
            c.check(w[1] < w[0], || {
                format!("{}: deficit rises from mu=1e{} to 1e{}: {} -> {}", u.name(), k + 1, k + 2, w[0], w[1])
            });
        }
        let last = deficits[5];
        c.check(last < 1e-2, || format!("{}: deficit at mu=1e6 is {last:.4}, not < 1e-2", u.name()));
        parts.push(format!("{} deficit(1e6) = {last:.3e}", u.name()));
    }
    let u = Builtin::LogAwgn;
    let target = additive_gap(&u, 0.5)?.alpha.abs();
    let d = asymptotic_sweep(&u, 0.5, &[1e6])?[0].deficit;
    c.check((d - target).abs() <= 1e-3, || format!("log_awgn: deficit(1e6) = {d} vs |alpha| = {target}"));
    parts.push(format!("log_awgn deficit(1e6) = {d:.6} vs |alpha(0.5)| = {target:.6}"));
    Ok(parts.join("; "))
}

fn renewal_vs_monte_carlo(c: &mut Checks) -> anyhow::Result<String> {
    let spec = ArrivalSpec::bernoulli(0.25, 8.0)?;
    let u = Builtin::LogAwgn;
    let q = spec.fraction_q();
    let exact = renewal_ffp_value(&u, q, 0.25, 8.0);
    let r = sim::run(&Policy::fixed_fraction(q)?, &spec, &u, &SimConfig::new(100_000, 100, 7))?;
    let diff = (r.mean_reward - exact).abs();
    let allowed = r.ci_half_width + 1e-3 * exact;
    c.check(diff <= allowed, || format!("|MC - renewal| = {diff:.3e} > {allowed:.3e}"));
    Ok(format!(
        "renewal {exact:.6}, MC {:.6} ± {:.2e}, |diff| {diff:.2e}",
        r.mean_reward, r.ci_half_width
    ))
}

fn dp_coherence(c: &mut Checks) -> anyhow::Result<String> {
    let cfg = DpConfig::default();
    let spec = ArrivalSpec::bernoulli(0.5, 1.0)?;
    let u = Builtin::Sqrt;
    let sol = solve_dp(&u, &spec, &cfg)?;
    let p_hat: f64 = 0.75;
    let closed: Vec<f64> = (0..400).map(|i| p_hat * (1.0 - p_hat).powi(i)).collect();
    let exact = evaluate_bernoulli(&closed, &u, 0.5);
    c.check((sol.gain - exact).abs() <= 1e-3, || format!("sqrt: DP {} vs closed form {exact}", sol.gain));
    let ffp = renewal_ffp_value(&u, 0.5, 0.5, 1.0);
    c.check(sol.gain >= ffp - 1e-3, || format!("sqrt: DP {} below FFP {ffp}", sol.gain));
    c.check(sol.gain <= u.eval(0.5) + 1e-6, || format!("sqrt: DP {} above u(mu)", sol.gain));
    let mut summary = vec![format!("sqrt Bernoulli DP {:.6} vs exact {exact:.6}", sol.gain)];

    let spec = ArrivalSpec::constant(2.0, 10.0)?;
    let mut worst = 0.0f64;
    for u in Builtin::all() {
        let sol = solve_dp(&u, &spec, &cfg)?;
        let target = u.eval(2.0);
        worst = worst.max((sol.gain - target).abs());
        c.check((sol.gain - target).abs() <= 1e-6, || format!("{}: DP {} vs u(2) = {target}", u.name(), sol.gain));
        let ffp = sim::run(&Policy::fixed_fraction(spec.fraction_q())?, &spec, &u, &SimConfig::new(1_000, 1, 0))?;
        c.check(sol.gain >= ffp.mean_reward - 1e-6, || {
            format!("{}: DP {} below FFP {}", u.name(), sol.gain, ffp.mean_reward)
        });
        c.check(sol.gain <= target + 1e-6, || format!("{}: DP {} above u(mu)", u.name(), sol.gain));
        c.check(sol.converged, || format!("{}: value iteration did not converge", u.name()));
    }
    summary.push(format!("constant(2) max |DP - u(2)| = {worst:.2e}"));
    Ok(summary.join("; "))
}

fn kernel_infimum_shape(c: &mut Checks) -> anyhow::Result<String> {
    const TOL: f64 = 1e-6;
    let utilities: [Box<dyn Utility>; 3] = [
        Box::new(NumericalOnly(Builtin::LogAwgn)),
        Box::new(Builtin::ExpSat { beta: 1.0 }),
        Box::new(Builtin::RatioSat),
    ];
    let grid = theta_grid();
    for u in &utilities {
        let h = grid
            .iter()
            .map(|&t| h_inf(u.as_ref(), t).map(|r| r.value))
            .collect::<eh_core::Result<Vec<_>>>()?;
        for (t, v) in grid.iter().zip(&h) {
            c.check(*v <= TOL, || format!("{}: h({t:.2}) = {v} > 0", u.name()));
        }
        for (i, w) in h.windows(2).enumerate() {
            c.check(w[1] >= w[0] - TOL, || {
                format!("{}: h decreases between theta {:.2} and {:.2}", u.name(), grid[i], grid[i + 1])
            });
        }
        for (i, w) in h.windows(3).enumerate() {
            c.check(w[1] >= 0.5 * (w[0] + w[2]) - TOL, || {
                format!("{}: midpoint concavity fails at theta {:.2}", u.name(), grid[i + 1])
            });
        }
    }
    Ok(format!("{} utilities x {} theta values", utilities.len(), grid.len()))
}

fn determinism(c: &mut Checks) -> anyhow::Result<String> {
    let invocations: [&[&str]; 3] = [
        &[
            "eh-policy", "simulate", "--utility", "log_awgn", "--arrivals", "uniform:lo=0,hi=10",
            "--battery", "10", "--horizon", "5000", "--trials", "16", "--seed", "11", "--deterministic",
        ],
        &[
            "eh-policy", "simulate", "--utility", "sqrt", "--arrivals", "bernoulli:p=0.3",
            "--battery", "4", "--policy", "bernoulli-opt", "--horizon", "5000", "--trials", "16",
            "--seed", "5", "--deterministic",
        ],
        &[
            "eh-policy", "compare", "--utility", "ratio_sat", "--arrivals", "discrete:v=0|2|4,p=0.5|0.3|0.2",
            "--battery", "4", "--horizon", "2000", "--trials", "8", "--grid", "101", "--actions", "51",
            "--seed", "3", "--deterministic",
        ],
    ];
    for argv in invocations {
        let mut first = Vec::new();
        let mut second = Vec::new();
        crate::run(argv.iter().copied(), &mut first)?;
        crate::run(argv.iter().copied(), &mut second)?;
        c.check(first == second, || format!("`{}` output differs between runs", argv[1]));
        c.check(!String::from_utf8_lossy(&first).contains("timestamp"), || {
            format!("`{}` prints a timestamp under --deterministic", argv[1])
        });
    }
    Ok("simulate x2, compare x1 repeated byte-identically".into())
}
