//! Monte Carlo evaluation of a policy against the battery dynamics
//! `b_{t+1} = min(b_t - g_t + E_{t+1}, B)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::arrivals::{trial_rng, ArrivalSpec};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::utility::Utility;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;
/// Rounding allowance when checking `g <= b`.
const FEAS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    /// Starting battery; `None` means full.
    pub initial_battery: Option<f64>,
    /// Leading slots left out of the average.
    pub warmup: usize,
}

impl SimConfig {
    pub fn new(horizon: usize, trials: usize, seed: u64) -> Self {
        Self {
            horizon,
            trials,
            seed,
            initial_battery: None,
            warmup: 0,
        }
    }

    fn validate(&self, battery: f64) -> Result<()> {
        if self.horizon == 0 || self.trials == 0 {
            return Err(Error::Config("horizon and trials must be at least 1".into()));
        }
        if self.warmup >= self.horizon {
            return Err(Error::Config("warmup must be shorter than the horizon".into()));
        }
        if let Some(b) = self.initial_battery {
            if !(0.0..=battery).contains(&b) {
                return Err(Error::Domain(format!("initial battery {b} outside [0, {battery}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub mean_reward: f64,
    /// 95% normal-approximation half width over trial means.
    pub ci_half_width: f64,
    pub per_trial_means: Vec<f64>,
    pub config: SimConfig,
}

/// Battery after spending `g` and receiving `e`, capped at `cap`.
pub fn step(battery: f64, g: f64, e: f64, cap: f64) -> Result<f64> {
    if !(g >= 0.0 && g <= battery + FEAS_EPS) {
        return Err(Error::Feasibility {
            slot: 0,
            battery,
            power: g,
        });
    }
    Ok((battery - g + e).clamp(0.0, cap))
}

/// Runs `cfg.trials` independent trajectories and averages the per-slot
/// reward of each.
///
/// Trial `i` draws from `trial_rng(seed, i)`, so results do not depend on
/// thread scheduling. The slot-within-renewal counter restarts whenever an
/// arrival alone fills the battery.
pub fn run(policy: &Policy, spec: &ArrivalSpec, u: &dyn Utility, cfg: &SimConfig) -> Result<SimResult> {
    let cap = spec.battery();
    cfg.validate(cap)?;
    let per_trial_means = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|trial| run_trial(policy, spec, u, cfg, trial))
        .collect::<Result<Vec<_>>>()?;
    let n = per_trial_means.len() as f64;
    let mean_reward = pairwise_sum(&per_trial_means) / n;
    let ci_half_width = if per_trial_means.len() > 1 {
        let sq: Vec<f64> = per_trial_means.iter().map(|m| (m - mean_reward).powi(2)).collect();
        let var = pairwise_sum(&sq) / (n - 1.0);
        Z95 * (var / n).sqrt()
    } else {
        0.0
    };
    Ok(SimResult {
        mean_reward,
        ci_half_width,
        per_trial_means,
        config: cfg.clone(),
    })
}

fn run_trial(policy: &Policy, spec: &ArrivalSpec, u: &dyn Utility, cfg: &SimConfig, trial: u64) -> Result<f64> {
    let cap = spec.battery();
    let mut rng = trial_rng(cfg.seed, trial);
    let mut battery = cfg.initial_battery.unwrap_or(cap);
    let mut slot_in_renewal = 1;
    let mut total = 0.0;
    for t in 0..cfg.horizon {
        let g = policy.action(battery, slot_in_renewal);
        if t >= cfg.warmup {
            total += u.eval(g);
        }
        let e = spec.sample(&mut rng);
        battery = step(battery, g, e, cap).map_err(|err| match err {
            Error::Feasibility { battery, power, .. } => Error::Feasibility {
                slot: t + 1,
                battery,
                power,
            },
            other => other,
        })?;
        slot_in_renewal = if e >= cap { 1 } else { slot_in_renewal + 1 };
    }
    Ok(total / (cfg.horizon - cfg.warmup) as f64)
}

/// Pairwise summation in index order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{renewal_ffp_value, solve_bernoulli_optimal, evaluate_bernoulli, TabularPolicy};
    use crate::utility::Builtin;
    use proptest::prelude::*;

    #[test]
    fn step_examples() {
        assert_eq!(step(5.0, 2.0, 10.0, 8.0).unwrap(), 8.0);
        assert_eq!(step(5.0, 5.0, 0.0, 8.0).unwrap(), 0.0);
        assert_eq!(step(3.0, 1.0, 2.0, 8.0).unwrap(), 4.0);
        assert!(matches!(step(3.0, 4.0, 0.0, 8.0), Err(Error::Feasibility { .. })));
    }

    #[test]
    fn single_slot_from_full_battery() {
        let spec = ArrivalSpec::constant(2.0, 10.0).unwrap();
        let u = Builtin::Sqrt;
        let pol = Policy::fixed_fraction(spec.fraction_q()).unwrap();
        let r = run(&pol, &spec, &u, &SimConfig::new(1, 1, 0)).unwrap();
        assert_eq!(r.mean_reward, u.eval(0.2 * 10.0));
        assert_eq!(r.ci_half_width, 0.0);
    }

    #[test]
    fn constant_arrivals_reach_the_fixed_point() {
        // q b* = e at the fixed point b* = B, so every slot spends exactly e
        let spec = ArrivalSpec::constant(2.0, 10.0).unwrap();
        let u = Builtin::LogAwgn;
        let pol = Policy::fixed_fraction(spec.fraction_q()).unwrap();
        let mut cfg = SimConfig::new(10_000, 2, 1);
        cfg.initial_battery = Some(3.0);
        let r = run(&pol, &spec, &u, &cfg).unwrap();
        assert!((r.mean_reward - u.eval(2.0)).abs() < 1e-3);
    }

    #[test]
    fn monte_carlo_matches_renewal_for_ffp() {
        let spec = ArrivalSpec::bernoulli(0.5, 4.0).unwrap();
        let u = Builtin::LogAwgn;
        let pol = Policy::fixed_fraction(0.5).unwrap();
        let r = run(&pol, &spec, &u, &SimConfig::new(100_000, 100, 42)).unwrap();
        let exact = renewal_ffp_value(&u, 0.5, 0.5, 4.0);
        assert!((r.mean_reward - exact).abs() <= r.ci_half_width + 1e-3 * exact);
    }

    #[test]
    fn monte_carlo_matches_renewal_for_the_optimal_schedule() {
        let spec = ArrivalSpec::bernoulli(0.3, 2.0).unwrap();
        let u = Builtin::SqrtLog;
        let opt = solve_bernoulli_optimal(&u, 0.3, 2.0).unwrap();
        let exact = evaluate_bernoulli(&opt.schedule, &u, 0.3);
        let r = run(&Policy::BernoulliOptimal(opt), &spec, &u, &SimConfig::new(50_000, 60, 9)).unwrap();
        assert!((r.mean_reward - exact).abs() <= r.ci_half_width + 1e-3 * exact);
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let spec = ArrivalSpec::uniform(0.0, 6.0, 6.0).unwrap();
        let u = Builtin::RatioSat;
        let pol = Policy::fixed_fraction(0.5).unwrap();
        let cfg = SimConfig::new(2_000, 16, 77);
        let a = run(&pol, &spec, &u, &cfg).unwrap();
        let b = run(&pol, &spec, &u, &cfg).unwrap();
        assert_eq!(a.per_trial_means, b.per_trial_means);
        assert_eq!(a.mean_reward.to_bits(), b.mean_reward.to_bits());
    }

    #[test]
    fn warmup_and_config_validation() {
        let spec = ArrivalSpec::bernoulli(0.5, 1.0).unwrap();
        let pol = Policy::fixed_fraction(0.5).unwrap();
        let u = Builtin::Sqrt;
        let mut cfg = SimConfig::new(10, 1, 0);
        cfg.warmup = 10;
        assert!(matches!(run(&pol, &spec, &u, &cfg), Err(Error::Config(_))));
        cfg.warmup = 0;
        cfg.initial_battery = Some(2.0);
        assert!(matches!(run(&pol, &spec, &u, &cfg), Err(Error::Domain(_))));
        assert!(run(&pol, &spec, &u, &SimConfig::new(0, 1, 0)).is_err());
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_inputs() {
        let xs: Vec<f64> = (1..=100).map(|k| k as f64).collect();
        assert_eq!(pairwise_sum(&xs), 5050.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    proptest! {
        #[test]
        fn step_stays_in_range(b in 0.0f64..10.0, frac in 0.0f64..=1.0, e in 0.0f64..10.0) {
            let next = step(b, frac * b, e, 10.0).unwrap();
            prop_assert!((0.0..=10.0).contains(&next));
        }

        #[test]
        fn policies_never_overspend(b in 0.0f64..5.0, slot in 1usize..40, theta in 0.0f64..=1.0) {
            let ffp = Policy::fixed_fraction(theta).unwrap();
            prop_assert!(ffp.action(b, slot) <= b);
            let opt = Policy::BernoulliOptimal(solve_bernoulli_optimal(&Builtin::LogSqrt, 0.4, 5.0).unwrap());
            let g = opt.action(b, slot);
            prop_assert!(g >= 0.0 && g <= b);
            let tab = Policy::Tabular(TabularPolicy::new(vec![0.0, 2.5, 5.0], vec![0.0, 1.0, 4.0]).unwrap());
            let g = tab.action(b, slot);
            prop_assert!(g >= 0.0 && g <= b);
        }
    }
}
