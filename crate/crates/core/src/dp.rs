//! Average-reward dynamic programming on a discretized battery.
//!
//! States are `grid_points` evenly spaced battery levels on `[0, B]`. From
//! level `b` the actions are `action_points` evenly spaced powers on
//! `[0, b]` plus the fixed-fraction action `q b`. An off-grid next level is
//! split between its two neighbors in proportion to distance, which keeps
//! the expected battery level exact. Relative value iteration runs until
//! the span of successive differences drops below `vi_tol`.

use rayon::prelude::*;
use serde::Serialize;

use crate::arrivals::ArrivalSpec;
use crate::error::{Error, Result};
use crate::policy::TabularPolicy;
use crate::utility::Utility;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DpConfig {
    pub grid_points: usize,
    pub action_points: usize,
    pub vi_tol: f64,
    pub max_iters: usize,
    /// Atom budget for continuous arrival distributions.
    pub max_atoms: usize,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            grid_points: 401,
            action_points: 201,
            vi_tol: 1e-9,
            max_iters: 100_000,
            max_atoms: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DpSolution {
    /// Long-run average reward of the discretized problem.
    pub gain: f64,
    /// Relative values, zero at the full battery.
    pub bias: Vec<f64>,
    pub policy: TabularPolicy,
    pub iters: usize,
    pub span: f64,
    pub converged: bool,
}

struct Model<'a> {
    u: &'a dyn Utility,
    levels: Vec<f64>,
    step: f64,
    cap: f64,
    atoms: Vec<(f64, f64)>,
    action_points: usize,
    ffp_fraction: f64,
}

impl Model<'_> {
    fn actions(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        let b = self.levels[i];
        let n = self.action_points;
        (0..n)
            .map(move |k| b * k as f64 / (n - 1) as f64)
            .chain(std::iter::once(self.ffp_fraction * b))
    }

    /// Expected continuation value after leaving `rest` in the battery.
    fn continuation(&self, rest: f64, values: &[f64]) -> f64 {
        let last = self.levels.len() - 1;
        self.atoms
            .iter()
            .map(|&(e, pe)| {
                let next = (rest + e).clamp(0.0, self.cap);
                let pos = next / self.step;
                let j = (pos.floor() as usize).min(last);
                if j == last {
                    return pe * values[last];
                }
                let w = pos - j as f64;
                pe * ((1.0 - w) * values[j] + w * values[j + 1])
            })
            .sum()
    }

    /// Best one-step lookahead value and action at state `i`.
    fn backup(&self, i: usize, values: &[f64]) -> (f64, f64) {
        let b = self.levels[i];
        self.actions(i).fold((f64::NEG_INFINITY, 0.0), |best, g| {
            let q = self.u.eval(g) + self.continuation(b - g, values);
            if q > best.0 {
                (q, g)
            } else {
                best
            }
        })
    }
}

/// Near-optimal long-run average reward for `u` under `spec`.
///
/// Returns the last iterate flagged `converged = false` if `max_iters`
/// runs out first.
pub fn solve_dp(u: &dyn Utility, spec: &ArrivalSpec, cfg: &DpConfig) -> Result<DpSolution> {
    if cfg.grid_points < 2 || cfg.action_points < 2 {
        return Err(Error::Config("grid_points and action_points must be at least 2".into()));
    }
    if !(cfg.vi_tol > 0.0) || cfg.max_iters == 0 {
        return Err(Error::Config("vi_tol must be positive and max_iters nonzero".into()));
    }
    let cap = spec.battery();
    let n = cfg.grid_points;
    let step = cap / (n - 1) as f64;
    let levels: Vec<f64> = (0..n).map(|i| if i + 1 == n { cap } else { step * i as f64 }).collect();
    let model = Model {
        u,
        levels,
        step,
        cap,
        atoms: spec.atoms(cfg.max_atoms),
        action_points: cfg.action_points,
        ffp_fraction: spec.fraction_q(),
    };

    let reference = n - 1;
    let mut values = vec![0.0; n];
    let mut gain = 0.0;
    let mut span = f64::INFINITY;
    let mut iters = 0;
    while iters < cfg.max_iters {
        iters += 1;
        let next: Vec<f64> = (0..n).into_par_iter().map(|i| model.backup(i, &values).0).collect();
        let (lo, hi) = next
            .iter()
            .zip(&values)
            .map(|(a, b)| a - b)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
        span = hi - lo;
        gain = 0.5 * (lo + hi);
        let offset = next[reference];
        values = next.into_iter().map(|v| v - offset).collect();
        if span < cfg.vi_tol {
            break;
        }
    }
    let actions: Vec<f64> = (0..n).into_par_iter().map(|i| model.backup(i, &values).1).collect();
    Ok(DpSolution {
        gain,
        bias: values,
        policy: TabularPolicy::new(model.levels, actions)?,
        iters,
        span,
        converged: span < cfg.vi_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{evaluate_bernoulli, renewal_ffp_value};
    use crate::utility::Builtin;

    #[test]
    fn constant_arrivals_reach_the_upper_bound() {
        let spec = ArrivalSpec::constant(2.0, 10.0).unwrap();
        for u in Builtin::all() {
            let sol = solve_dp(&u, &spec, &DpConfig::default()).unwrap();
            assert!(sol.converged, "{}", u.name());
            assert!((sol.gain - u.eval(2.0)).abs() < 1e-6, "{}: {}", u.name(), sol.gain);
        }
    }

    #[test]
    fn sqrt_bernoulli_matches_closed_form_optimum() {
        let spec = ArrivalSpec::bernoulli(0.5, 1.0).unwrap();
        let u = Builtin::Sqrt;
        let sol = solve_dp(&u, &spec, &DpConfig::default()).unwrap();
        let p_hat: f64 = 0.75;
        let sched: Vec<f64> = (0..200).map(|i| p_hat * (1.0 - p_hat).powi(i)).collect();
        let exact = evaluate_bernoulli(&sched, &u, 0.5);
        assert!((sol.gain - exact).abs() < 1e-3, "{} vs {exact}", sol.gain);
    }

    #[test]
    fn log_awgn_gain_is_sandwiched() {
        let spec = ArrivalSpec::bernoulli(0.3, 5.0).unwrap();
        let u = Builtin::LogAwgn;
        let sol = solve_dp(&u, &spec, &DpConfig::default()).unwrap();
        let mu = spec.mean();
        let ffp = renewal_ffp_value(&u, 0.3, 0.3, 5.0);
        assert!(sol.gain <= u.eval(mu) + 1e-6);
        assert!(sol.gain >= 0.5 * u.eval(mu));
        assert!(sol.gain >= ffp - 1e-4, "{} < {ffp}", sol.gain);
    }

    #[test]
    fn refining_the_grid_shrinks_the_change() {
        let spec = ArrivalSpec::bernoulli(0.5, 1.0).unwrap();
        let u = Builtin::Sqrt;
        let gains: Vec<f64> = [51, 101, 201, 401]
            .iter()
            .map(|&g| {
                let cfg = DpConfig {
                    grid_points: g,
                    ..DpConfig::default()
                };
                solve_dp(&u, &spec, &cfg).unwrap().gain
            })
            .collect();
        let diffs: Vec<f64> = gains.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        assert!(diffs.windows(2).all(|d| d[1] < d[0]), "{gains:?}");
    }

    #[test]
    fn extracted_policy_is_feasible() {
        let spec = ArrivalSpec::uniform(0.0, 4.0, 4.0).unwrap();
        let cfg = DpConfig {
            grid_points: 101,
            action_points: 51,
            ..DpConfig::default()
        };
        let sol = solve_dp(&Builtin::RatioSat, &spec, &cfg).unwrap();
        for (b, a) in sol.policy.levels.iter().zip(&sol.policy.actions) {
            assert!(*a >= 0.0 && a <= b);
        }
        assert_eq!(sol.bias[cfg.grid_points - 1], 0.0);
    }

    #[test]
    fn iteration_cap_flags_unconverged() {
        let spec = ArrivalSpec::uniform(0.0, 4.0, 4.0).unwrap();
        let cfg = DpConfig {
            grid_points: 21,
            action_points: 11,
            max_iters: 2,
            ..DpConfig::default()
        };
        let sol = solve_dp(&Builtin::Sqrt, &spec, &cfg).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iters, 2);
    }
}
