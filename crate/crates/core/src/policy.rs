//! Power-control policies: fixed fractions of the battery, the exact
//! optimum under Bernoulli-full arrivals, and tabular policies produced by
//! the DP oracle.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::arrivals::ArrivalSpec;
use crate::error::{Error, Result};
use crate::search::golden_max;
use crate::sim::{self, SimConfig};
use crate::utility::{Slope, Utility};

/// Schedule entries below `SCHEDULE_TAIL * B` end an infinite schedule.
pub const SCHEDULE_TAIL: f64 = 1e-12;
/// Renewal weights below this end the renewal sum.
pub const WEIGHT_TAIL: f64 = 1e-15;
/// Relative width at which the multiplier bisection stops.
pub const LAMBDA_REL_TOL: f64 = 1e-12;
pub const MAX_BISECTIONS: usize = 200;
pub const MAX_BRACKET_DOUBLINGS: usize = 200;
/// Smallest fraction tried by [`optimize_fraction`].
pub const MIN_FRACTION: f64 = 0.001;

const MAX_SCHEDULE_LEN: usize = 50_000_000;

/// Power spent by the fixed-fraction rule: `θ b`.
#[inline]
pub fn ffp_action(theta: f64, battery: f64) -> f64 {
    theta * battery
}

/// Whether the optimal schedule is positive in finitely many slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    Finite(usize),
    Infinite,
}

/// Optimal per-renewal power sequence under Bernoulli-full arrivals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BernoulliSchedule {
    /// `g_t` for slots `t = 1, 2, ...` after each refill; zero afterwards.
    pub schedule: Vec<f64>,
    pub lambda: f64,
    pub support: Support,
    pub p: f64,
    pub battery: f64,
}

impl BernoulliSchedule {
    /// `N` for the finite branch, `None` for the infinite one.
    pub fn horizon(&self) -> Option<usize> {
        match self.support {
            Support::Finite(n) => Some(n),
            Support::Infinite => None,
        }
    }

    /// Power for the `t`-th slot (1-based) of the current renewal.
    pub fn power(&self, slot: usize) -> f64 {
        slot.checked_sub(1)
            .and_then(|i| self.schedule.get(i))
            .copied()
            .unwrap_or(0.0)
    }

    /// The first `len` entries of the schedule, recomputing from `λ` the
    /// ones dropped below the storage tail.
    pub fn terms(&self, u: &dyn Utility, len: usize) -> Vec<f64> {
        (1..=len)
            .map(|t| match self.support {
                Support::Infinite if t > self.schedule.len() => {
                    u.inv_deriv(self.lambda / slot_weight(self.p, t))
                }
                _ => self.power(t),
            })
            .collect()
    }

    /// `(|Σ g_t - B|, max_t |u'(g_t) p (1-p)^{t-1} - λ|)` over positive entries.
    pub fn kkt_residuals(&self, u: &dyn Utility) -> (f64, f64) {
        let budget = (self.schedule.iter().sum::<f64>() - self.battery).abs();
        if self.p >= 1.0 {
            return (budget, 0.0);
        }
        let stationarity = self
            .schedule
            .iter()
            .enumerate()
            .filter(|(_, g)| **g > 0.0)
            .map(|(i, g)| (u.deriv(*g) * slot_weight(self.p, i + 1) - self.lambda).abs())
            .fold(0.0, f64::max);
        (budget, stationarity)
    }
}

/// A tabulated battery-to-power map, linearly interpolated between levels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TabularPolicy {
    pub levels: Vec<f64>,
    pub actions: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(levels: Vec<f64>, actions: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 || levels.len() != actions.len() {
            return Err(Error::Config("tabular policy needs matching grids of length >= 2".into()));
        }
        if levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("tabular levels must be strictly increasing".into()));
        }
        if let Some((b, a)) = levels.iter().zip(&actions).find(|(b, a)| !(**a >= 0.0 && **a <= **b)) {
            return Err(Error::Domain(format!("tabular action {a} infeasible at level {b}")));
        }
        Ok(Self { levels, actions })
    }

    pub fn action(&self, battery: f64) -> f64 {
        let n = self.levels.len();
        let idx = self.levels.partition_point(|l| *l <= battery);
        let a = if idx == 0 {
            self.actions[0]
        } else if idx >= n {
            self.actions[n - 1]
        } else {
            let (l0, l1) = (self.levels[idx - 1], self.levels[idx]);
            let w = (battery - l0) / (l1 - l0);
            self.actions[idx - 1] * (1.0 - w) + self.actions[idx] * w
        };
        a.clamp(0.0, battery.max(0.0))
    }
}

/// A power-control rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Policy {
    FixedFraction { theta: f64 },
    BernoulliOptimal(BernoulliSchedule),
    Tabular(TabularPolicy),
}

impl Policy {
    pub fn fixed_fraction(theta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::Domain(format!("fraction must lie in [0, 1], got {theta}")));
        }
        Ok(Policy::FixedFraction { theta })
    }

    /// Power to spend with `battery` stored, `slot` slots (1-based) into
    /// the current renewal.
    pub fn action(&self, battery: f64, slot: usize) -> f64 {
        match self {
            Policy::FixedFraction { theta } => ffp_action(*theta, battery),
            Policy::BernoulliOptimal(s) => s.power(slot).min(battery),
            Policy::Tabular(t) => t.action(battery),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Policy::FixedFraction { theta } => format!("ffp:theta={theta}"),
            Policy::BernoulliOptimal(s) => format!("bernoulli-opt:p={}", s.p),
            Policy::Tabular(t) => format!("tabular:{}", t.levels.len()),
        }
    }
}

/// Renewal weight `p (1-p)^{t-1}` of slot `t >= 1`.
#[inline]
fn slot_weight(p: f64, t: usize) -> f64 {
    if p >= 1.0 {
        return if t == 1 { 1.0 } else { 0.0 };
    }
    p * (1.0 - p).powf((t - 1) as f64)
}

/// Budget used by multiplier `lambda` over the first `n` slots (all slots
/// when `n` is `None`, truncated once entries fall below the tail).
fn budget(u: &dyn Utility, p: f64, lambda: f64, n: Option<usize>, tail: f64) -> f64 {
    let mut total = 0.0;
    let mut t = 1;
    loop {
        if let Some(n) = n {
            if t > n {
                break;
            }
        }
        let g = u.inv_deriv(lambda / slot_weight(p, t));
        if n.is_none() && (g < tail || t > MAX_SCHEDULE_LEN) {
            break;
        }
        total += g;
        t += 1;
    }
    total
}

/// Solves `budget(λ) = B` for the nonincreasing `budget`, bracketing
/// from `[lo, hi]` by doubling.
fn solve_multiplier<F>(mut spend: F, target: f64, mut lo: f64, mut hi: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let mut grown = 0;
    while spend(lo) < target {
        lo *= 0.5;
        grown += 1;
        if grown > MAX_BRACKET_DOUBLINGS || lo == 0.0 {
            return Err(Error::Numerical("multiplier bracket failed at the low end".into()));
        }
    }
    grown = 0;
    while spend(hi) > target {
        hi *= 2.0;
        grown += 1;
        if grown > MAX_BRACKET_DOUBLINGS || !hi.is_finite() {
            return Err(Error::Numerical("multiplier bracket failed at the high end".into()));
        }
    }
    for _ in 0..MAX_BISECTIONS {
        if hi / lo - 1.0 <= LAMBDA_REL_TOL {
            break;
        }
        let mid = (lo * hi).sqrt();
        if spend(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Optimal online schedule for Bernoulli-full arrivals with refill
/// probability `p` and battery `B`.
///
/// Within a renewal, slot `t` is still reached with probability
/// `(1-p)^{t-1}`, so the problem is water-filling with weights
/// `p (1-p)^{t-1}`: `g_t = f(λ / (p (1-p)^{t-1}))` with `f = (u')⁻¹`, and
/// `λ` spends the whole battery. With `u'(0) = ∞` every slot gets power.
/// Otherwise only the first `N` do, `N` being the smallest count whose
/// multiplier satisfies `λ >= p (1-p)^N u'(0)`.
pub fn solve_bernoulli_optimal(u: &dyn Utility, p: f64, battery: f64) -> Result<BernoulliSchedule> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Domain(format!("refill probability must lie in (0, 1], got {p}")));
    }
    if !(battery > 0.0 && battery.is_finite()) {
        return Err(Error::Domain(format!("battery must be positive, got {battery}")));
    }
    if p == 1.0 {
        return Ok(BernoulliSchedule {
            schedule: vec![battery],
            lambda: u.deriv(battery),
            support: Support::Finite(1),
            p,
            battery,
        });
    }
    let tail = SCHEDULE_TAIL * battery;
    match u.deriv_at_zero() {
        Slope::Infinite => {
            let lambda = solve_multiplier(|l| budget(u, p, l, None, tail), battery, 1e-12, 1e12)?;
            let mut schedule = Vec::new();
            for t in 1.. {
                let g = u.inv_deriv(lambda / slot_weight(p, t));
                if g < tail || t > MAX_SCHEDULE_LEN {
                    break;
                }
                schedule.push(g);
            }
            Ok(BernoulliSchedule {
                schedule,
                lambda,
                support: Support::Infinite,
                p,
                battery,
            })
        }
        Slope::Finite(slope0) => {
            let mut cache: BTreeMap<usize, f64> = BTreeMap::new();
            let mut lambda_for = |n: usize| -> Result<f64> {
                if let Some(l) = cache.get(&n) {
                    return Ok(*l);
                }
                let hi = slot_weight(p, 1) * slope0;
                let l = solve_multiplier(|l| budget(u, p, l, Some(n), 0.0), battery, hi * 1e-12, hi)?;
                cache.insert(n, l);
                Ok(l)
            };
            // Stop rule is monotone in N (λ_N grows, the threshold shrinks),
            // so gallop then bisect for the first N that satisfies it.
            let accepted = |n: usize, l: f64| l >= slot_weight(p, n + 1) * slope0;
            let (mut bad, mut good) = (0usize, 1usize);
            loop {
                let l = lambda_for(good)?;
                if accepted(good, l) {
                    break;
                }
                bad = good;
                good = good.checked_mul(2).filter(|n| *n <= MAX_SCHEDULE_LEN).ok_or_else(|| {
                    Error::Numerical("no finite horizon satisfies the stopping rule".into())
                })?;
            }
            while good - bad > 1 {
                let mid = bad + (good - bad) / 2;
                let l = lambda_for(mid)?;
                if accepted(mid, l) {
                    good = mid;
                } else {
                    bad = mid;
                }
            }
            let n = good;
            let lambda = lambda_for(n)?;
            if lambda >= slot_weight(p, n) * slope0 {
                return Err(Error::Numerical(format!(
                    "multiplier {lambda} leaves slot {n} without power"
                )));
            }
            let schedule = (1..=n).map(|t| u.inv_deriv(lambda / slot_weight(p, t))).collect();
            Ok(BernoulliSchedule {
                schedule,
                lambda,
                support: Support::Finite(n),
                p,
                battery,
            })
        }
    }
}

/// Long-run average reward of a per-renewal schedule under Bernoulli-full
/// arrivals: `Σ_t p (1-p)^{t-1} u(g_t)`. Slots past the end of `schedule`
/// spend nothing.
pub fn evaluate_bernoulli(schedule: &[f64], u: &dyn Utility, p: f64) -> f64 {
    renewal_sum(p, |t| schedule.get(t - 1).map_or(0.0, |g| u.eval(*g)))
}

/// Renewal value of the fixed fraction `θ` under Bernoulli-full arrivals
/// with refill probability `p` and battery `B`; in slot `t` of a renewal
/// the policy spends `θ (1-θ)^{t-1} B`.
pub fn renewal_ffp_value(u: &dyn Utility, theta: f64, p: f64, battery: f64) -> f64 {
    renewal_sum(p, |t| u.eval(theta * (1.0 - theta).powf((t - 1) as f64) * battery))
}

/// The first `len` entries of the fixed-fraction schedule within a renewal.
pub fn ffp_schedule(theta: f64, battery: f64, len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| theta * (1.0 - theta).powf(i as f64) * battery)
        .collect()
}

fn renewal_sum<F: FnMut(usize) -> f64>(p: f64, mut reward: F) -> f64 {
    let mut total = 0.0;
    for t in 1.. {
        let w = slot_weight(p, t);
        if w < WEIGHT_TAIL {
            break;
        }
        total += w * reward(t);
    }
    total
}

/// How a fixed-fraction policy is scored.
#[derive(Debug, Clone)]
pub enum Evaluator {
    /// Exact renewal formula; Bernoulli-full arrivals only.
    Renewal,
    MonteCarlo(SimConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FractionOptimum {
    pub theta_star: f64,
    pub value: f64,
    /// Value of the default fraction `q = μ/B`.
    pub value_at_q: f64,
}

/// Best fixed fraction on `[MIN_FRACTION, 1]` by golden section; never
/// worse than `θ = q`.
pub fn optimize_fraction(
    u: &dyn Utility,
    spec: &ArrivalSpec,
    evaluator: &Evaluator,
) -> Result<FractionOptimum> {
    let score = |theta: f64| -> Result<f64> {
        match evaluator {
            Evaluator::Renewal => {
                let p = spec.bernoulli_p().ok_or_else(|| {
                    Error::Config("the renewal evaluator needs bernoulli arrivals".into())
                })?;
                Ok(renewal_ffp_value(u, theta, p, spec.battery()))
            }
            Evaluator::MonteCarlo(cfg) => {
                let policy = Policy::fixed_fraction(theta)?;
                Ok(sim::run(&policy, spec, u, cfg)?.mean_reward)
            }
        }
    };
    let q = spec.fraction_q();
    let value_at_q = score(q)?;
    let tol = match evaluator {
        Evaluator::Renewal => 1e-10,
        Evaluator::MonteCarlo(_) => 1e-5,
    };
    let mut failure = None;
    let opt = golden_max(
        |t| match score(t) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NEG_INFINITY
            }
        },
        MIN_FRACTION,
        1.0,
        tol,
        200,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let (theta_star, value) = if value_at_q > opt.value {
        (q, value_at_q)
    } else {
        (opt.x, opt.value)
    };
    Ok(FractionOptimum {
        theta_star,
        value,
        value_at_q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::{Builtin, Linear};

    #[test]
    fn ffp_action_examples() {
        assert_eq!(ffp_action(0.3, 10.0), 3.0);
        assert_eq!(ffp_action(1.0, 7.5), 7.5);
        // battery after t-1 empty slots is (1-p)^{t-1} B
        let (p, b) = (0.3, 10.0);
        let mut battery = b;
        for t in 1..=6 {
            let g = ffp_action(p, battery);
            let expected = p * (1.0 - p).powi(t - 1) * b;
            assert!((g - expected).abs() < 1e-12);
            battery -= g;
        }
    }

    #[test]
    fn sqrt_optimum_is_a_fixed_fraction() {
        let s = solve_bernoulli_optimal(&Builtin::Sqrt, 0.5, 1.0).unwrap();
        assert_eq!(s.support, Support::Infinite);
        let p_hat: f64 = 1.0 - 0.25;
        for (i, g) in s.terms(&Builtin::Sqrt, 30).iter().enumerate() {
            let expected = p_hat * (1.0 - p_hat).powi(i as i32);
            assert!((g - expected).abs() <= 1e-9 * expected, "slot {}", i + 1);
        }
        let (budget, stat) = s.kkt_residuals(&Builtin::Sqrt);
        assert!(budget < 1e-8 && stat < 1e-8);
    }

    #[test]
    fn full_refill_spends_everything_at_once() {
        for u in Builtin::all() {
            let s = solve_bernoulli_optimal(&u, 1.0, 3.0).unwrap();
            assert_eq!(s.schedule, vec![3.0]);
            assert_eq!(s.power(2), 0.0);
            assert!((evaluate_bernoulli(&s.schedule, &u, 1.0) - u.eval(3.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn log_awgn_finite_support() {
        let u = Builtin::LogAwgn;
        let s = solve_bernoulli_optimal(&u, 0.5, 10.0).unwrap();
        let n = s.horizon().expect("finite support");
        assert_eq!(s.schedule.len(), n);
        let (budget, stat) = s.kkt_residuals(&u);
        assert!(budget < 1e-8, "{budget}");
        assert!(stat < 1e-8, "{stat}");
        // the stopping rule and the positivity of the last slot
        let slope0 = 0.5;
        assert!(s.lambda >= 0.5 * 0.5f64.powi(n as i32) * slope0);
        assert!(s.lambda < 0.5 * 0.5f64.powi(n as i32 - 1) * slope0);
        assert!(s.schedule.iter().all(|g| *g > 0.0));
    }

    /// Linear scan over N, the textbook form of the search.
    fn first_n_by_scan(u: &dyn Utility, p: f64, b: f64) -> usize {
        let slope0 = u.deriv_at_zero().value();
        (1..)
            .find(|&n| {
                let hi = p * slope0;
                let l = solve_multiplier(|l| budget(u, p, l, Some(n), 0.0), b, hi * 1e-12, hi).unwrap();
                l >= p * (1.0 - p).powi(n as i32) * slope0
            })
            .unwrap()
    }

    #[test]
    fn galloping_search_matches_linear_scan() {
        let cases: [(Builtin, f64, f64); 5] = [
            (Builtin::LogAwgn, 0.5, 10.0),
            (Builtin::LogAwgn, 0.1, 50.0),
            (Builtin::LogAwgn, 0.9, 0.2),
            (Builtin::ExpSat { beta: 1.0 }, 0.3, 4.0),
            (Builtin::RatioSat, 0.2, 7.0),
        ];
        for (u, p, b) in cases {
            let s = solve_bernoulli_optimal(&u, p, b).unwrap();
            assert_eq!(s.horizon(), Some(first_n_by_scan(&u, p, b)), "{} {p} {b}", u.name());
        }
    }

    #[test]
    fn schedules_are_nonincreasing_and_feasible() {
        for u in Builtin::all() {
            for p in [0.05, 0.3, 0.7] {
                for b in [0.1, 1.0, 25.0] {
                    let s = solve_bernoulli_optimal(&u, p, b).unwrap();
                    assert!(s.schedule.windows(2).all(|w| w[1] <= w[0]), "{}", u.name());
                    assert!(s.schedule.iter().all(|g| *g >= 0.0));
                    let mut spent = 0.0;
                    for g in &s.schedule {
                        spent += g;
                        assert!(spent <= b * (1.0 + 1e-10));
                    }
                    let (budget, _) = s.kkt_residuals(&u);
                    assert!(budget <= 1e-8 * b.max(1.0), "{} p={p} b={b}: {budget}", u.name());
                }
            }
        }
    }

    #[test]
    fn budget_is_strictly_decreasing_in_lambda() {
        let u = Builtin::SqrtLog;
        let vals: Vec<f64> = (0..40)
            .map(|k| budget(&u, 0.4, 10f64.powf(-3.0 + 0.1 * k as f64), None, 1e-14))
            .collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(solve_bernoulli_optimal(&Builtin::Sqrt, 0.0, 1.0), Err(Error::Domain(_))));
        assert!(solve_bernoulli_optimal(&Builtin::Sqrt, 0.5, -1.0).is_err());
        assert!(Policy::fixed_fraction(1.2).is_err());
    }

    #[test]
    fn linear_ffp_renewal_closed_form() {
        // Σ p(1-p)^{2(t-1)} μ = μ / (2 - p)
        for p in [0.1, 0.5, 0.9] {
            let b = 4.0;
            let mu = p * b;
            let v = renewal_ffp_value(&Linear, p, p, b);
            assert!((v - mu / (2.0 - p)).abs() < 1e-12, "{p}");
            let sched = ffp_schedule(p, b, 2000);
            assert!((evaluate_bernoulli(&sched, &Linear, p) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn optimum_beats_every_fixed_fraction() {
        let u = Builtin::Sqrt;
        let opt = solve_bernoulli_optimal(&u, 0.5, 1.0).unwrap();
        let best = evaluate_bernoulli(&opt.schedule, &u, 0.5);
        for k in 1..=10 {
            let theta = k as f64 / 10.0;
            assert!(best >= renewal_ffp_value(&u, theta, 0.5, 1.0) - 1e-12);
        }
        for u in [Builtin::LogAwgn, Builtin::ExpSat { beta: 1.0 }, Builtin::LogSqrt] {
            let opt = solve_bernoulli_optimal(&u, 0.3, 5.0).unwrap();
            let best = evaluate_bernoulli(&opt.schedule, &u, 0.3);
            for k in 1..=10 {
                let v = renewal_ffp_value(&u, k as f64 / 10.0, 0.3, 5.0);
                assert!(best >= v - 1e-10, "{} {k}", u.name());
            }
        }
    }

    #[test]
    fn optimize_fraction_examples() {
        let spec = ArrivalSpec::bernoulli(0.5, 1.0).unwrap();
        let r = optimize_fraction(&Builtin::Sqrt, &spec, &Evaluator::Renewal).unwrap();
        assert!((r.theta_star - 0.75).abs() < 0.01, "{}", r.theta_star);

        let spec = ArrivalSpec::bernoulli(0.3, 2.0).unwrap();
        let r = optimize_fraction(&Linear, &spec, &Evaluator::Renewal).unwrap();
        assert_eq!(r.theta_star, 1.0);
        // sweep oracle: value increases with θ for linear reward
        let sweep: Vec<f64> = (1..=20).map(|k| renewal_ffp_value(&Linear, k as f64 / 20.0, 0.3, 2.0)).collect();
        assert!(sweep.windows(2).all(|w| w[1] > w[0]));

        let spec = ArrivalSpec::bernoulli(0.5, 3.0).unwrap();
        let r = optimize_fraction(&Builtin::LogAwgn, &spec, &Evaluator::Renewal).unwrap();
        assert!(r.value >= renewal_ffp_value(&Builtin::LogAwgn, 0.5, 0.5, 3.0) - 1e-9);

        let spec = ArrivalSpec::uniform(0.0, 2.0, 2.0).unwrap();
        assert!(matches!(
            optimize_fraction(&Builtin::Sqrt, &spec, &Evaluator::Renewal),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn tabular_interpolates_and_stays_feasible() {
        let t = TabularPolicy::new(vec![0.0, 1.0, 2.0], vec![0.0, 0.5, 2.0]).unwrap();
        assert_eq!(t.action(0.5), 0.25);
        assert_eq!(t.action(1.5), 1.25);
        assert_eq!(t.action(2.0), 2.0);
        assert!(TabularPolicy::new(vec![0.0, 1.0], vec![0.0, 1.5]).is_err());
    }
}
