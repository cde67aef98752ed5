//! Concave increasing utilities and the calculus the policies need:
//! marginal utility, its inverse (the water-filling map), the gap kernel
//! `u(θx) - u(x)` with its infimum over `x`, and the class (A)/(B) test.
//!
//! All logarithms are natural; reward is measured in nats.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::golden_min;

/// Right end of the gap-kernel search window for `θ` close to one. The
/// window is stretched to `X_MAX / θ` for smaller `θ`.
pub const X_MAX: f64 = 1e12;
/// Left end of the gap-kernel search window.
pub const X_MIN: f64 = 1e-9;
/// `|h_θ(X_max)|` beyond which a still-decreasing kernel is declared unbounded.
pub const DIVERGENCE_CAP: f64 = 1e6;
/// Decrease at the right end that counts as "still decreasing".
pub const SLOPE_TOL: f64 = 1e-9;
/// Magnitude under which `h_{1/2}(10^12)` counts as vanished.
pub const CLASS_TOL: f64 = 1e-4;

const GRID_POINTS: usize = 400;
const GRID_POINTS_PER_DECADE: usize = 20;
const GOLDEN_REL_WIDTH: f64 = 1e-10;

/// Marginal utility at zero, `u'(0)`, as an extended real.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slope {
    Finite(f64),
    Infinite,
}

impl Slope {
    pub fn is_finite(&self) -> bool {
        matches!(self, Slope::Finite(_))
    }

    pub fn value(&self) -> f64 {
        match *self {
            Slope::Finite(v) => v,
            Slope::Infinite => f64::INFINITY,
        }
    }
}

/// A known closed form for `inf_x h_θ(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormInf {
    pub value: f64,
    /// Minimizer, `+∞` when the infimum is a limit.
    pub arg_inf: f64,
}

/// A differentiable, concave, nondecreasing reward with `u(0) = 0`.
///
/// `inv_deriv` is `(u')⁻¹`, extended by `0` for `y >= u'(0)` and by `+∞`
/// for `y <= 0`.
pub trait Utility: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    fn eval(&self, x: f64) -> f64;
    fn deriv(&self, x: f64) -> f64;
    fn inv_deriv(&self, y: f64) -> f64;
    fn deriv_at_zero(&self) -> Slope;

    /// `sup_x u(x)` for bounded utilities.
    fn upper_bound(&self) -> Option<f64> {
        None
    }

    fn analytic_h(&self, _theta: f64) -> Option<ClosedFormInf> {
        None
    }
}

/// The built-in utility registry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name")]
pub enum Builtin {
    /// `½ ln(1 + x)`, the AWGN capacity.
    LogAwgn,
    /// `1 - exp(-βx)`.
    ExpSat { beta: f64 },
    /// `x / (1 + x)`.
    RatioSat,
    /// `sqrt(ln(1 + x))`.
    SqrtLog,
    /// `½ ln(1 + sqrt(x))`.
    LogSqrt,
    /// `sqrt(x)`.
    Sqrt,
}

impl Builtin {
    pub const NAMES: [&'static str; 6] = [
        "log_awgn", "exp_sat", "ratio_sat", "sqrt_log", "log_sqrt", "sqrt",
    ];

    /// Looks up a builtin by registry name. `exp_sat` reads `beta` from
    /// `params` (default 1).
    pub fn make(name: &str, params: &[(String, f64)]) -> Result<Self> {
        let param = |key: &str| params.iter().find(|(k, _)| k == key).map(|(_, v)| *v);
        let known: &[&str] = match name {
            "exp_sat" => &["beta"],
            _ => &[],
        };
        if let Some((k, _)) = params.iter().find(|(k, _)| !known.contains(&k.as_str())) {
            return Err(Error::Config(format!("utility `{name}` takes no parameter `{k}`")));
        }
        match name {
            "log_awgn" => Ok(Builtin::LogAwgn),
            "exp_sat" => {
                let beta = param("beta").unwrap_or(1.0);
                if !(beta > 0.0 && beta.is_finite()) {
                    return Err(Error::Domain(format!("exp_sat needs beta > 0, got {beta}")));
                }
                Ok(Builtin::ExpSat { beta })
            }
            "ratio_sat" => Ok(Builtin::RatioSat),
            "sqrt_log" => Ok(Builtin::SqrtLog),
            "log_sqrt" => Ok(Builtin::LogSqrt),
            "sqrt" => Ok(Builtin::Sqrt),
            other => Err(Error::Config(format!(
                "unknown utility `{other}` (expected one of {})",
                Builtin::NAMES.join(", ")
            ))),
        }
    }

    /// Every builtin with default parameters.
    pub fn all() -> Vec<Builtin> {
        vec![
            Builtin::LogAwgn,
            Builtin::ExpSat { beta: 1.0 },
            Builtin::RatioSat,
            Builtin::SqrtLog,
            Builtin::LogSqrt,
            Builtin::Sqrt,
        ]
    }
}

impl FromStr for Builtin {
    type Err = Error;

    /// Parses `name` or `name:key=value,key=value`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, rest) = match s.split_once(':') {
            Some((n, r)) => (n.trim(), r),
            None => (s.trim(), ""),
        };
        let params = parse_params(rest)?
            .into_iter()
            .map(|(k, v)| {
                v.parse::<f64>()
                    .map(|x| (k.clone(), x))
                    .map_err(|_| Error::Config(format!("parameter `{k}` is not a number: `{v}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Builtin::make(name, &params)
    }
}

/// Splits `k=v,k=v` into pairs.
pub fn parse_params(s: &str) -> Result<Vec<(String, String)>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{p}`")))
        })
        .collect()
}

impl Utility for Builtin {
    fn name(&self) -> String {
        match self {
            Builtin::LogAwgn => "log_awgn".into(),
            Builtin::ExpSat { beta } => format!("exp_sat:beta={beta}"),
            Builtin::RatioSat => "ratio_sat".into(),
            Builtin::SqrtLog => "sqrt_log".into(),
            Builtin::LogSqrt => "log_sqrt".into(),
            Builtin::Sqrt => "sqrt".into(),
        }
    }

    fn eval(&self, x: f64) -> f64 {
        match *self {
            Builtin::LogAwgn => 0.5 * x.ln_1p(),
            Builtin::ExpSat { beta } => -(-beta * x).exp_m1(),
            Builtin::RatioSat => x / (1.0 + x),
            Builtin::SqrtLog => x.ln_1p().sqrt(),
            Builtin::LogSqrt => 0.5 * x.sqrt().ln_1p(),
            Builtin::Sqrt => x.sqrt(),
        }
    }

    fn deriv(&self, x: f64) -> f64 {
        match *self {
            Builtin::LogAwgn => 0.5 / (1.0 + x),
            Builtin::ExpSat { beta } => beta * (-beta * x).exp(),
            Builtin::RatioSat => 1.0 / ((1.0 + x) * (1.0 + x)),
            Builtin::SqrtLog => 1.0 / (2.0 * (1.0 + x) * x.ln_1p().sqrt()),
            Builtin::LogSqrt => {
                let r = x.sqrt();
                1.0 / (4.0 * r * (1.0 + r))
            }
            Builtin::Sqrt => 0.5 / x.sqrt(),
        }
    }

    fn inv_deriv(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return f64::INFINITY;
        }
        if y >= self.deriv_at_zero().value() {
            return 0.0;
        }
        match *self {
            Builtin::LogAwgn => 0.5 / y - 1.0,
            Builtin::ExpSat { beta } => (beta / y).ln() / beta,
            Builtin::RatioSat => 1.0 / y.sqrt() - 1.0,
            Builtin::SqrtLog => sqrt_log_inv_deriv(y),
            Builtin::LogSqrt => {
                // sqrt(x)(1 + sqrt(x)) = c, take the positive root stably.
                let c = 0.25 / y;
                let r = 2.0 * c / (1.0 + (1.0 + 4.0 * c).sqrt());
                r * r
            }
            Builtin::Sqrt => 0.25 / (y * y),
        }
    }

    fn deriv_at_zero(&self) -> Slope {
        match *self {
            Builtin::LogAwgn => Slope::Finite(0.5),
            Builtin::ExpSat { beta } => Slope::Finite(beta),
            Builtin::RatioSat => Slope::Finite(1.0),
            Builtin::SqrtLog | Builtin::LogSqrt | Builtin::Sqrt => Slope::Infinite,
        }
    }

    fn upper_bound(&self) -> Option<f64> {
        match self {
            Builtin::ExpSat { .. } | Builtin::RatioSat => Some(1.0),
            _ => None,
        }
    }

    fn analytic_h(&self, theta: f64) -> Option<ClosedFormInf> {
        match self {
            Builtin::LogAwgn => Some(ClosedFormInf {
                value: 0.5 * theta.ln(),
                arg_inf: f64::INFINITY,
            }),
            _ => None,
        }
    }
}

/// Inverts `u'(x) = 1 / (2(1+x) sqrt(ln(1+x)))`.
///
/// With `s = ln(1+x)` and `w = ln s` the equation becomes
/// `e^w + w/2 = -ln(2y)`, which is strictly increasing in `w`.
fn sqrt_log_inv_deriv(y: f64) -> f64 {
    let c = -(2.0 * y).ln();
    let phi = |w: f64| w.exp() + 0.5 * w - c;
    let mut lo = c.min(0.0) * 2.0 - 2.0;
    let mut hi = c.max(1.0).ln() + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + mid.abs()) {
            break;
        }
    }
    let mut w = 0.5 * (lo + hi);
    for _ in 0..3 {
        let step = phi(w) / (w.exp() + 0.5);
        if !step.is_finite() {
            break;
        }
        w -= step;
    }
    w.exp().exp_m1()
}

/// The identity utility `u(x) = x`.
///
/// Linear, so concave only in the weak sense; `inv_deriv` is a step.
/// Not part of the registry; handy for closed-form checks because every
/// concavity bound holds with equality.
#[derive(Debug, Clone, Copy, Default)]
pub struct Linear;

impl Utility for Linear {
    fn name(&self) -> String {
        "linear".into()
    }
    fn eval(&self, x: f64) -> f64 {
        x
    }
    fn deriv(&self, _x: f64) -> f64 {
        1.0
    }
    fn inv_deriv(&self, y: f64) -> f64 {
        if y < 1.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
    fn deriv_at_zero(&self) -> Slope {
        Slope::Finite(1.0)
    }
    fn analytic_h(&self, theta: f64) -> Option<ClosedFormInf> {
        (theta < 1.0).then_some(ClosedFormInf {
            value: f64::NEG_INFINITY,
            arg_inf: f64::INFINITY,
        })
    }
}

/// Forwards to a utility but hides its closed-form `h`, forcing the
/// numerical infimum path.
#[derive(Debug, Clone, Copy)]
pub struct NumericalOnly<U>(pub U);

impl<U: Utility> Utility for NumericalOnly<U> {
    fn name(&self) -> String {
        self.0.name()
    }
    fn eval(&self, x: f64) -> f64 {
        self.0.eval(x)
    }
    fn deriv(&self, x: f64) -> f64 {
        self.0.deriv(x)
    }
    fn inv_deriv(&self, y: f64) -> f64 {
        self.0.inv_deriv(y)
    }
    fn deriv_at_zero(&self) -> Slope {
        self.0.deriv_at_zero()
    }
    fn upper_bound(&self) -> Option<f64> {
        self.0.upper_bound()
    }
}

/// Gap kernel `h_θ(x) = u(θx) - u(x)`.
pub fn h_theta(u: &dyn Utility, theta: f64, x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Domain(format!("theta must lie in [0, 1], got {theta}")));
    }
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("x must be nonnegative, got {x}")));
    }
    Ok(kernel(u, theta, x))
}

#[inline]
fn kernel(u: &dyn Utility, theta: f64, x: f64) -> f64 {
    u.eval(theta * x) - u.eval(x)
}

/// Outcome of minimizing the gap kernel over `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HInf {
    /// `inf_x h_θ(x)`; `-∞` when the infimum does not exist.
    pub value: f64,
    /// Minimizer; `+∞` when the infimum is approached as `x → ∞`.
    pub arg_inf: f64,
    pub exists: bool,
    pub at_infinity: bool,
    pub analytic: bool,
}

/// `h(θ) = inf_x h_θ(x)` for `0 < θ < 1`.
///
/// Uses the closed form when the utility supplies one. Otherwise scans a
/// log-spaced grid on `[X_MIN, X_MAX/θ]`, then refines the best cell by
/// golden section in `ln x`. A kernel still falling at the right end of
/// the window is unbounded if its magnitude exceeds [`DIVERGENCE_CAP`] or
/// its per-decade drops have stopped shrinking; otherwise its value at the
/// window end is reported as a limit at infinity.
pub fn h_inf(u: &dyn Utility, theta: f64) -> Result<HInf> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Domain(format!("theta must lie in (0, 1), got {theta}")));
    }
    if let Some(cf) = u.analytic_h(theta) {
        return Ok(HInf {
            value: cf.value,
            arg_inf: cf.arg_inf,
            exists: cf.value.is_finite(),
            at_infinity: cf.arg_inf.is_infinite(),
            analytic: true,
        });
    }

    let x_max = (X_MAX / theta).min(1e300);
    let (l0, l1) = (X_MIN.ln(), x_max.ln());
    let decades = (l1 - l0) / std::f64::consts::LN_10;
    let n = GRID_POINTS.max((decades * GRID_POINTS_PER_DECADE as f64).ceil() as usize);
    let logs: Vec<f64> = (0..n)
        .map(|k| l0 + (l1 - l0) * k as f64 / (n - 1) as f64)
        .collect();
    let hs: Vec<f64> = logs
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            let x = if k + 1 == n { x_max } else { l.exp() };
            kernel(u, theta, x)
        })
        .collect();
    let best = hs
        .iter()
        .enumerate()
        .fold(0, |b, (k, &h)| if h < hs[b] { k } else { b });

    if best + 1 == n {
        let end = hs[n - 1];
        let still_decreasing = end < hs[n - 2] - SLOPE_TOL;
        if still_decreasing {
            let at = |decades_back: f64| kernel(u, theta, x_max / 10f64.powf(decades_back));
            let drops = [at(3.0) - at(2.0), at(2.0) - at(1.0), at(1.0) - end];
            let not_shrinking = drops[0] > 0.0 && drops[1] >= drops[0] && drops[2] >= drops[1];
            if end.abs() > DIVERGENCE_CAP || not_shrinking {
                return Ok(HInf {
                    value: f64::NEG_INFINITY,
                    arg_inf: f64::INFINITY,
                    exists: false,
                    at_infinity: true,
                    analytic: false,
                });
            }
        }
        return Ok(HInf {
            value: end,
            arg_inf: f64::INFINITY,
            exists: true,
            at_infinity: true,
            analytic: false,
        });
    }

    let lo = logs[best.saturating_sub(1)];
    let hi = logs[(best + 1).min(n - 1)];
    let refined = golden_min(|l| kernel(u, theta, l.exp()), lo, hi, GOLDEN_REL_WIDTH, 500);
    let (value, arg) = if refined.value < hs[best] {
        (refined.value, refined.x.exp())
    } else {
        (hs[best], logs[best].exp())
    };
    Ok(HInf {
        value,
        arg_inf: arg,
        exists: true,
        at_infinity: false,
        analytic: false,
    })
}

/// Utility class by the large-`x` behavior of the gap kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UtilityClass {
    /// `h_θ(x)` does not vanish as `x → ∞`.
    A,
    /// `h_θ(x) → 0` as `x → ∞`.
    B,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassEvidence {
    pub theta: f64,
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub note: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct Classification {
    pub class: UtilityClass,
    pub evidence: ClassEvidence,
}

/// Tail window (as exponents of ten) whose magnitudes must be strictly
/// shrinking for class (B).
const TAIL_FROM: i32 = 8;

/// Classifies `u` from `h_{1/2}(10^k)`, `k = 3..=12`.
///
/// Class (B) when the kernel has already vanished (`|h| < CLASS_TOL` at
/// `10^12`) or when `|h|` is strictly shrinking over `k = 8..=12`; class (A)
/// otherwise.
pub fn classify(u: &dyn Utility) -> Classification {
    let theta = 0.5;
    let x: Vec<f64> = (3..=12).map(|k| 10f64.powi(k)).collect();
    let h: Vec<f64> = x.iter().map(|&x| kernel(u, theta, x)).collect();
    let mags: Vec<f64> = h.iter().map(|v| v.abs()).collect();
    let tail = &mags[(TAIL_FROM - 3) as usize..];
    let vanished = *mags.last().unwrap() < CLASS_TOL;
    let shrinking = tail.windows(2).all(|w| w[1] < w[0]);
    let class = if vanished || shrinking {
        UtilityClass::B
    } else {
        UtilityClass::A
    };
    Classification {
        class,
        evidence: ClassEvidence {
            theta,
            x,
            h,
            note: "single probe theta = 0.5; class may depend on theta for exotic utilities",
        },
    }
}

/// `(θ - 1) M`, a lower bound on `h(θ)` for a utility bounded by `M`.
pub fn bounded_h_lower_bound(u: &dyn Utility, theta: f64) -> Result<f64> {
    let m = u
        .upper_bound()
        .ok_or_else(|| Error::Unsupported(format!("utility {} is unbounded", u.name())))?;
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Domain(format!("theta must lie in [0, 1], got {theta}")));
    }
    Ok((theta - 1.0) * m)
}
