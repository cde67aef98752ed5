//! Performance guarantees for fixed-fraction policies.
//!
//! Every online policy is capped by `u(μ)`. The fixed fraction `q = μ/B`
//! earns at least `u(μ)/2` and, when `h(θ) = inf_x u(θx) - u(x)` is finite
//! and the series below converges, at least `u(μ) + α` with
//! `α = Σ_{t>=0} q (1-q)^t h((1-q)^t)`.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::policy::renewal_ffp_value;
use crate::search::golden_min;
use crate::utility::{classify, h_inf, Utility, UtilityClass};

/// Largest number of gap-series terms.
pub const T_MAX: usize = 10_000;
/// Terms smaller than this end the gap series.
pub const TERM_TOL: f64 = 1e-12;
/// Number of trailing term ratios inspected for the ratio test.
pub const RATIO_WINDOW: usize = 20;
/// Ratio-test verdict margin below one.
pub const RATIO_MARGIN: f64 = 1e-6;
/// Below this `q` the series decays slowly and may be truncated.
pub const SMALL_Q: f64 = 1e-3;
/// Range searched by [`optimize_gap_over_q`].
pub const Q_RANGE: (f64, f64) = (0.01, 0.99);

const RATIO_SPREAD_TOL: f64 = 1e-7;
/// Smallest `(1-q)^t` for which `h` is evaluated.
const THETA_FLOOR: f64 = 1e-250;

/// Serializes non-finite reals as strings, since JSON has no infinities.
pub fn extended_real<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

/// `ρ* <= u(μ)`.
pub fn upper_bound(u: &dyn Utility, mu: f64) -> Result<f64> {
    if !(mu >= 0.0) {
        return Err(Error::Domain(format!("mean arrival must be nonnegative, got {mu}")));
    }
    Ok(u.eval(mu))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MultCheck {
    pub ratio: f64,
    pub pass: bool,
}

/// Checks `1/2 <= value / u(μ) <= 1`, widened by `slack` on both sides.
pub fn mult_gap_check(policy_value: f64, u: &dyn Utility, mu: f64, slack: f64) -> Result<MultCheck> {
    let upper = upper_bound(u, mu)?;
    if mu == 0.0 || upper == 0.0 {
        return Ok(MultCheck {
            ratio: 1.0,
            pass: true,
        });
    }
    let ratio = policy_value / upper;
    let rel = slack / upper;
    Ok(MultCheck {
        ratio,
        pass: ratio >= 0.5 - rel && ratio <= 1.0 + rel,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdditiveGap {
    /// `α`, or `-∞` when no additive guarantee holds.
    #[serde(serialize_with = "extended_real")]
    pub alpha: f64,
    /// Limit of `|a_{t+1} / a_t|` estimated from the terms.
    pub ratio_r: Option<f64>,
    pub converged: bool,
    pub terms: usize,
    /// Bound on the neglected tail when the series hit `T_MAX`.
    pub truncation_bound: Option<f64>,
    pub notes: Vec<String>,
}

/// `α(q)` together with the ratio-test statistic of its series.
pub fn additive_gap(u: &dyn Utility, q: f64) -> Result<AdditiveGap> {
    gap_series(u, q, true)
}

fn gap_series(u: &dyn Utility, q: f64, probe_ratio: bool) -> Result<AdditiveGap> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Domain(format!("q must lie in (0, 1], got {q}")));
    }
    let mut notes = Vec::new();
    if q == 1.0 {
        notes.push("q = 1 drains the battery every slot, which is optimal; gap is zero".into());
        return Ok(AdditiveGap {
            alpha: 0.0,
            ratio_r: Some(0.0),
            converged: true,
            terms: 1,
            truncation_bound: None,
            notes,
        });
    }
    if q < SMALL_Q {
        notes.push(format!("q < {SMALL_Q}: slow geometric decay, series may be truncated"));
    }
    let keep = 1.0 - q;
    let h_at = |t: usize| -> Result<Option<f64>> {
        if t == 0 {
            return Ok(Some(0.0));
        }
        let r = h_inf(u, keep.powf(t as f64))?;
        Ok(r.exists.then_some(r.value))
    };
    let diverged = |t: usize, mut notes: Vec<String>| {
        notes.push(format!("h((1-q)^{t}) does not exist; no additive guarantee"));
        AdditiveGap {
            alpha: f64::NEG_INFINITY,
            ratio_r: None,
            converged: false,
            terms: t,
            truncation_bound: None,
            notes,
        }
    };

    let mut hs = vec![0.0];
    let mut sum = 0.0;
    let mut prev_abs = 0.0;
    let mut small_stop = false;
    let mut t = 0;
    loop {
        let h = match h_at(t)? {
            Some(h) => h,
            None => return Ok(diverged(t, notes)),
        };
        if t > 0 {
            hs.push(h);
        }
        let theta = keep.powf(t as f64);
        let a = q * theta * h;
        sum += a;
        if t >= 1 && a.abs() < TERM_TOL && a.abs() <= prev_abs {
            small_stop = true;
            break;
        }
        prev_abs = a.abs();
        if t + 1 >= T_MAX || keep.powf((t + 1) as f64) < THETA_FLOOR {
            break;
        }
        t += 1;
    }
    let terms = t + 1;

    let ratios = |hs: &[f64]| -> Vec<f64> {
        hs.windows(2)
            .skip(1)
            .filter(|w| w[0] != 0.0)
            .map(|w| keep * (w[1] / w[0]).abs())
            .collect()
    };
    let spread = |r: &[f64]| {
        let tail = &r[r.len().saturating_sub(RATIO_WINDOW)..];
        let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        hi - lo
    };
    if probe_ratio {
        let mut k = hs.len();
        loop {
            let r = ratios(&hs);
            if r.len() >= RATIO_WINDOW && spread(&r) < RATIO_SPREAD_TOL {
                break;
            }
            if k >= T_MAX || keep.powf(k as f64) < THETA_FLOOR {
                break;
            }
            match h_at(k)? {
                Some(h) => hs.push(h),
                None => return Ok(diverged(k, notes)),
            }
            k += 1;
        }
    }
    let r = ratios(&hs);
    let ratio_r = r.last().copied();
    if let Some(ratio) = ratio_r {
        if r.len() >= RATIO_WINDOW && spread(&r) >= RATIO_SPREAD_TOL {
            notes.push(format!(
                "term ratios still drifting (spread {:.1e} over last {RATIO_WINDOW})",
                spread(&r)
            ));
        }
        if ratio >= 1.0 - RATIO_MARGIN {
            notes.push(format!("ratio test inconclusive or divergent: r = {ratio}"));
        }
    }
    let converged = small_stop || ratio_r.is_some_and(|r| r < 1.0 - RATIO_MARGIN);
    let truncation_bound = if small_stop {
        None
    } else {
        ratio_r
            .filter(|r| *r < 1.0)
            .map(|r| prev_abs * r / (1.0 - r))
    };
    if !converged {
        notes.push("gap series terms did not decay; reporting -inf".into());
        return Ok(AdditiveGap {
            alpha: f64::NEG_INFINITY,
            ratio_r,
            converged,
            terms,
            truncation_bound,
            notes,
        });
    }
    Ok(AdditiveGap {
        alpha: sum,
        ratio_r,
        converged,
        terms,
        truncation_bound,
        notes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapOptimum {
    pub q_star: f64,
    /// Most negative `α(q)` over [`Q_RANGE`], in nats.
    #[serde(serialize_with = "extended_real")]
    pub alpha_star: f64,
    /// The same gap in bits.
    #[serde(serialize_with = "extended_real")]
    pub alpha_star_bits: f64,
}

/// Worst case of `α(q)` over `q` in [`Q_RANGE`]: the additive gap that
/// holds whatever the battery size and arrival mean.
pub fn optimize_gap_over_q(u: &dyn Utility) -> Result<GapOptimum> {
    let alpha = |q: f64| gap_series(u, q, false).map(|g| g.alpha);
    let (lo, hi) = Q_RANGE;
    let probes: Vec<f64> = (0..=10).map(|k| lo + (hi - lo) * k as f64 / 10.0).collect();
    let values = probes.iter().map(|&q| alpha(q)).collect::<Result<Vec<_>>>()?;
    if values.iter().all(|a| !a.is_finite()) {
        return Err(unsupported(u));
    }
    if let Some(i) = values.iter().position(|a| !a.is_finite()) {
        return Ok(GapOptimum {
            q_star: probes[i],
            alpha_star: f64::NEG_INFINITY,
            alpha_star_bits: f64::NEG_INFINITY,
        });
    }
    let mut failure = None;
    let opt = golden_min(
        |q| match alpha(q) {
            Ok(a) => a,
            Err(e) => {
                failure.get_or_insert(e);
                f64::INFINITY
            }
        },
        lo,
        hi,
        1e-6,
        200,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(GapOptimum {
        q_star: opt.x,
        alpha_star: opt.value,
        alpha_star_bits: opt.value / std::f64::consts::LN_2,
    })
}

fn unsupported(u: &dyn Utility) -> Error {
    Error::Unsupported(format!("{} admits no finite additive gap", u.name()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub mu: f64,
    pub ffp_value: f64,
    pub upper: f64,
    pub deficit: f64,
}

/// Renewal value of the fixed fraction `q` against `u(μ)` as `μ` grows,
/// with battery `B = μ/q` and Bernoulli-full arrivals.
pub fn asymptotic_sweep(u: &dyn Utility, q: f64, mus: &[f64]) -> Result<Vec<SweepRow>> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Domain(format!("q must lie in (0, 1], got {q}")));
    }
    mus.iter()
        .map(|&mu| {
            let upper = upper_bound(u, mu)?;
            let ffp_value = if mu == 0.0 {
                0.0
            } else {
                renewal_ffp_value(u, q, q, mu / q)
            };
            Ok(SweepRow {
                mu,
                ffp_value,
                upper,
                deficit: upper - ffp_value,
            })
        })
        .collect()
}

/// Everything known about the fixed fraction `q` for `u` at mean `μ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub utility: String,
    pub utility_class: UtilityClass,
    pub q: f64,
    pub mu: f64,
    pub battery: f64,
    pub upper_bound: f64,
    /// Renewal-exact value under Bernoulli-full arrivals with `p = q`,
    /// the worst case among i.i.d. arrivals with this mean.
    pub policy_value: f64,
    pub mult_ratio: f64,
    pub mult_pass: bool,
    #[serde(serialize_with = "extended_real")]
    pub alpha: f64,
    pub ratio_r: Option<f64>,
    pub converged: bool,
    /// `u(μ) + α`, when finite.
    pub additive_lower_bound: Option<f64>,
    pub notes: Vec<String>,
}

pub fn gap_report(u: &dyn Utility, q: f64, mu: f64) -> Result<GapReport> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Domain(format!("q must lie in (0, 1], got {q}")));
    }
    let upper = upper_bound(u, mu)?;
    let battery = mu / q;
    let mut notes = Vec::new();
    let policy_value = if mu == 0.0 {
        notes.push("mu = 0: every bound is zero".into());
        0.0
    } else {
        renewal_ffp_value(u, q, q, battery)
    };
    let mult = mult_gap_check(policy_value, u, mu, 0.0)?;
    let gap = additive_gap(u, q)?;
    notes.extend(gap.notes.iter().cloned());
    let classification = classify(u);
    notes.push(classification.evidence.note.to_string());
    Ok(GapReport {
        utility: u.name(),
        utility_class: classification.class,
        q,
        mu,
        battery,
        upper_bound: upper,
        policy_value,
        mult_ratio: mult.ratio,
        mult_pass: mult.pass,
        alpha: gap.alpha,
        ratio_r: gap.ratio_r,
        converged: gap.converged,
        additive_lower_bound: gap.alpha.is_finite().then_some(upper + gap.alpha),
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::{Builtin, Linear, NumericalOnly};

    fn log_alpha(q: f64) -> f64 {
        // Σ q (1-q)^t · t ln(1-q)/2 = ln(1-q)(1-q)/(2q)
        0.5 * (1.0 - q).ln() * (1.0 - q) / q
    }

    #[test]
    fn upper_bound_examples() {
        assert_eq!(upper_bound(&Builtin::LogAwgn, 0.0).unwrap(), 0.0);
        assert_eq!(upper_bound(&Builtin::Sqrt, 4.0).unwrap(), 2.0);
        assert!((upper_bound(&Builtin::LogAwgn, 1.0).unwrap() - 0.5 * 2f64.ln()).abs() < 1e-15);
        assert!(upper_bound(&Builtin::Sqrt, -1.0).is_err());
    }

    #[test]
    fn mult_check_examples() {
        for p in [0.1, 0.5, 0.9] {
            let b = 3.0;
            let v = renewal_ffp_value(&Linear, p, p, b);
            let c = mult_gap_check(v, &Linear, p * b, 0.0).unwrap();
            assert!((c.ratio - 1.0 / (2.0 - p)).abs() < 1e-12);
            assert!(c.pass);
        }
        for u in Builtin::all() {
            let v = renewal_ffp_value(&u, 1.0, 1.0, 5.0);
            assert!((mult_gap_check(v, &u, 5.0, 0.0).unwrap().ratio - 1.0).abs() < 1e-15);
        }
        let u = Builtin::LogAwgn;
        let v = renewal_ffp_value(&u, 0.2, 0.2, 50.0);
        let c = mult_gap_check(v, &u, 10.0, 0.0).unwrap();
        assert!(c.pass && c.ratio >= 0.5 && c.ratio <= 1.0);
        assert_eq!(mult_gap_check(0.0, &u, 0.0, 0.0).unwrap(), MultCheck { ratio: 1.0, pass: true });
    }

    #[test]
    fn log_awgn_gap_closed_form() {
        for q in [0.1, 0.3, 0.5, 0.9] {
            let g = additive_gap(&Builtin::LogAwgn, q).unwrap();
            assert!(g.converged);
            assert!((g.alpha - log_alpha(q)).abs() < 1e-9, "q={q}: {} vs {}", g.alpha, log_alpha(q));
            assert!((g.ratio_r.unwrap() - (1.0 - q)).abs() < 1e-3, "q={q}: r={:?}", g.ratio_r);
        }
    }

    #[test]
    fn numerical_log_gap_matches_closed_form() {
        let u = NumericalOnly(Builtin::LogAwgn);
        let g = gap_series(&u, 0.5, false).unwrap();
        assert!((g.alpha - log_alpha(0.5)).abs() < 1e-6);
    }

    #[test]
    fn sqrt_has_no_additive_gap() {
        for q in [0.1, 0.5, 0.9] {
            let g = additive_gap(&Builtin::Sqrt, q).unwrap();
            assert_eq!(g.alpha, f64::NEG_INFINITY);
            assert!(!g.converged);
        }
        assert!(matches!(optimize_gap_over_q(&Builtin::Sqrt), Err(Error::Unsupported(_))));
    }

    #[test]
    fn gap_edge_cases() {
        assert!(additive_gap(&Builtin::LogAwgn, 0.0).is_err());
        assert!(additive_gap(&Builtin::LogAwgn, 1.5).is_err());
        assert_eq!(additive_gap(&Builtin::LogAwgn, 1.0).unwrap().alpha, 0.0);
        let g = additive_gap(&Builtin::LogAwgn, 5e-4).unwrap();
        assert!(g.notes.iter().any(|n| n.contains("slow geometric decay")));
    }

    #[test]
    fn bounded_utilities_respect_half_m() {
        // α >= Σ q(1-q)^t ((1-q)^t - 1) M = -M (1-q)/(2-q)
        for u in [Builtin::ExpSat { beta: 1.0 }, Builtin::RatioSat] {
            for q in [0.1, 0.5, 0.9] {
                let a = additive_gap(&u, q).unwrap().alpha;
                assert!(a <= 0.0 && a >= -(1.0 - q) / (2.0 - q) - 1e-12, "{} {q}: {a}", u.name());
            }
        }
    }

    #[test]
    fn worst_case_gaps() {
        let g = optimize_gap_over_q(&Builtin::LogAwgn).unwrap();
        assert!((g.alpha_star - log_alpha(Q_RANGE.0)).abs() < 1e-9);
        assert!(g.alpha_star_bits.abs() > 0.70 && g.alpha_star_bits.abs() < 0.74);
        let e = optimize_gap_over_q(&Builtin::ExpSat { beta: 1.0 }).unwrap();
        assert!(e.alpha_star.abs() <= 0.5);
        let l = optimize_gap_over_q(&Builtin::LogSqrt).unwrap();
        assert!(l.alpha_star.abs() <= g.alpha_star.abs() + 1e-9);
    }

    #[test]
    fn sweep_examples() {
        let mus: Vec<f64> = (1..=6).map(|k| 10f64.powi(k)).collect();
        let rows = asymptotic_sweep(&Builtin::SqrtLog, 0.5, &mus).unwrap();
        assert!(rows.last().unwrap().deficit < rows[0].deficit);
        let rows = asymptotic_sweep(&Builtin::ExpSat { beta: 1.0 }, 0.5, &[1e3]).unwrap();
        assert!(rows[0].deficit < 1e-3);
        let rows = asymptotic_sweep(&Builtin::LogAwgn, 0.5, &[1e6]).unwrap();
        assert!((rows[0].deficit - 0.5 * 2f64.ln()).abs() < 1e-3);
        let rows = asymptotic_sweep(&Builtin::LogAwgn, 0.5, &[0.0]).unwrap();
        assert_eq!(rows[0].deficit, 0.0);
    }

    #[test]
    fn report_fields_are_consistent() {
        let r = gap_report(&Builtin::LogAwgn, 0.5, 4.0).unwrap();
        assert_eq!(r.battery, 8.0);
        assert!(r.mult_pass);
        assert!(r.alpha <= 0.0);
        assert!(r.policy_value >= r.additive_lower_bound.unwrap());
        assert!(r.policy_value <= r.upper_bound);
        let r = gap_report(&Builtin::Sqrt, 0.5, 4.0).unwrap();
        assert_eq!(r.alpha, f64::NEG_INFINITY);
        assert_eq!(r.additive_lower_bound, None);
    }
}
