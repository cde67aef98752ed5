//! I.i.d. energy arrivals with support inside `[0, B]`.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::utility::parse_params;

const PROB_SUM_TOL: f64 = 1e-12;

/// Shape of the per-slot arrival distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ArrivalKind {
    /// `B` with probability `p`, else nothing. Every arrival refills the battery.
    BernoulliFull { p: f64 },
    Constant { e: f64 },
    Uniform { lo: f64, hi: f64 },
    Discrete { values: Vec<f64>, probs: Vec<f64> },
}

/// An arrival distribution together with the battery it feeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArrivalSpec {
    kind: ArrivalKind,
    battery: f64,
}

impl ArrivalSpec {
    pub fn new(kind: ArrivalKind, battery: f64) -> Result<Self> {
        if !(battery > 0.0 && battery.is_finite()) {
            return Err(Error::Domain(format!("battery capacity must be positive, got {battery}")));
        }
        let in_range = |v: f64| (0.0..=battery).contains(&v);
        match &kind {
            ArrivalKind::BernoulliFull { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::Domain(format!("bernoulli p must lie in [0, 1], got {p}")));
                }
            }
            ArrivalKind::Constant { e } => {
                if !in_range(*e) {
                    return Err(Error::Domain(format!("constant arrival {e} outside [0, {battery}]")));
                }
            }
            ArrivalKind::Uniform { lo, hi } => {
                if !(lo <= hi) || !in_range(*lo) || !in_range(*hi) {
                    return Err(Error::Domain(format!(
                        "uniform support [{lo}, {hi}] must be ordered and inside [0, {battery}]"
                    )));
                }
            }
            ArrivalKind::Discrete { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return Err(Error::Config(
                        "discrete arrivals need equally many values and probabilities".into(),
                    ));
                }
                if let Some(v) = values.iter().find(|v| !in_range(**v)) {
                    return Err(Error::Domain(format!("discrete value {v} outside [0, {battery}]")));
                }
                if probs.iter().any(|p| !(*p >= 0.0)) {
                    return Err(Error::Domain("discrete probabilities must be nonnegative".into()));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > PROB_SUM_TOL {
                    return Err(Error::Domain(format!("discrete probabilities sum to {total}, not 1")));
                }
            }
        }
        Ok(Self { kind, battery })
    }

    pub fn bernoulli(p: f64, battery: f64) -> Result<Self> {
        Self::new(ArrivalKind::BernoulliFull { p }, battery)
    }

    pub fn constant(e: f64, battery: f64) -> Result<Self> {
        Self::new(ArrivalKind::Constant { e }, battery)
    }

    pub fn uniform(lo: f64, hi: f64, battery: f64) -> Result<Self> {
        Self::new(ArrivalKind::Uniform { lo, hi }, battery)
    }

    pub fn discrete(values: Vec<f64>, probs: Vec<f64>, battery: f64) -> Result<Self> {
        Self::new(ArrivalKind::Discrete { values, probs }, battery)
    }

    /// Parses the command-line form, e.g. `bernoulli:p=0.25`,
    /// `uniform:lo=0,hi=10` or `discrete:v=0|2|4,p=0.25|0.5|0.25`.
    pub fn parse(s: &str, battery: f64) -> Result<Self> {
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let params = parse_params(rest)?;
        let get = |key: &str| -> Result<&str> {
            params
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Config(format!("arrivals `{name}` need parameter `{key}`")))
        };
        let num = |key: &str| -> Result<f64> {
            let v = get(key)?;
            v.parse()
                .map_err(|_| Error::Config(format!("parameter `{key}` is not a number: `{v}`")))
        };
        let list = |key: &str| -> Result<Vec<f64>> {
            get(key)?
                .split('|')
                .map(|v| {
                    v.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad number `{v}` in `{key}`")))
                })
                .collect()
        };
        let allowed: &[&str] = match name.trim() {
            "bernoulli" => &["p"],
            "constant" => &["e"],
            "uniform" => &["lo", "hi"],
            "discrete" => &["v", "p"],
            other => {
                return Err(Error::Config(format!(
                    "unknown arrivals `{other}` (expected bernoulli, constant, uniform, discrete)"
                )))
            }
        };
        if let Some((k, _)) = params.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            return Err(Error::Config(format!("arrivals `{name}` take no parameter `{k}`")));
        }
        let kind = match name.trim() {
            "bernoulli" => ArrivalKind::BernoulliFull { p: num("p")? },
            "constant" => ArrivalKind::Constant { e: num("e")? },
            "uniform" => ArrivalKind::Uniform {
                lo: num("lo")?,
                hi: num("hi")?,
            },
            _ => ArrivalKind::Discrete {
                values: list("v")?,
                probs: list("p")?,
            },
        };
        Self::new(kind, battery)
    }

    pub fn kind(&self) -> &ArrivalKind {
        &self.kind
    }

    pub fn battery(&self) -> f64 {
        self.battery
    }

    /// `μ = E[E_t]`.
    pub fn mean(&self) -> f64 {
        match &self.kind {
            ArrivalKind::BernoulliFull { p } => p * self.battery,
            ArrivalKind::Constant { e } => *e,
            ArrivalKind::Uniform { lo, hi } => 0.5 * (lo + hi),
            ArrivalKind::Discrete { values, probs } => {
                values.iter().zip(probs).map(|(v, p)| v * p).sum()
            }
        }
    }

    /// `q = μ / B`.
    pub fn fraction_q(&self) -> f64 {
        (self.mean() / self.battery).clamp(0.0, 1.0)
    }

    /// Variance of one arrival.
    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        match &self.kind {
            ArrivalKind::BernoulliFull { p } => p * (1.0 - p) * self.battery * self.battery,
            ArrivalKind::Constant { .. } => 0.0,
            ArrivalKind::Uniform { lo, hi } => (hi - lo).powi(2) / 12.0,
            ArrivalKind::Discrete { values, probs } => {
                values.iter().zip(probs).map(|(v, p)| p * (v - mu).powi(2)).sum()
            }
        }
    }

    /// The `p` of a Bernoulli-full process, if this is one.
    pub fn bernoulli_p(&self) -> Option<f64> {
        match self.kind {
            ArrivalKind::BernoulliFull { p } => Some(p),
            _ => None,
        }
    }

    /// One draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            ArrivalKind::BernoulliFull { p } => {
                if rng.gen::<f64>() < *p {
                    self.battery
                } else {
                    0.0
                }
            }
            ArrivalKind::Constant { e } => *e,
            ArrivalKind::Uniform { lo, hi } => (lo + (hi - lo) * rng.gen::<f64>()).min(*hi),
            ArrivalKind::Discrete { values, probs } => {
                let r = rng.gen::<f64>();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if r < acc {
                        return *v;
                    }
                }
                *values.last().unwrap()
            }
        }
    }

    /// Finite atoms `(value, prob)` describing the distribution.
    ///
    /// Continuous kinds are split into `max_atoms` equal-probability bins
    /// placed at their conditional means; any residual mean drift from
    /// rounding is removed by shifting the atoms.
    pub fn atoms(&self, max_atoms: usize) -> Vec<(f64, f64)> {
        let mut atoms = match &self.kind {
            ArrivalKind::BernoulliFull { p } => {
                let mut a = Vec::new();
                if *p < 1.0 {
                    a.push((0.0, 1.0 - p));
                }
                if *p > 0.0 {
                    a.push((self.battery, *p));
                }
                a
            }
            ArrivalKind::Constant { e } => vec![(*e, 1.0)],
            ArrivalKind::Uniform { lo, hi } => {
                let k = max_atoms.max(1);
                let w = (hi - lo) / k as f64;
                (0..k).map(|i| (lo + w * (i as f64 + 0.5), 1.0 / k as f64)).collect()
            }
            ArrivalKind::Discrete { values, probs } => values
                .iter()
                .zip(probs)
                .filter(|(_, p)| **p > 0.0)
                .map(|(v, p)| (*v, *p))
                .collect(),
        };
        let drift = self.mean() - atoms.iter().map(|(v, p)| v * p).sum::<f64>();
        if drift != 0.0 {
            for (v, _) in atoms.iter_mut() {
                *v = (*v + drift).clamp(0.0, self.battery);
            }
        }
        atoms
    }
}

impl fmt::Display for ArrivalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("|");
        match &self.kind {
            ArrivalKind::BernoulliFull { p } => write!(f, "bernoulli:p={p}"),
            ArrivalKind::Constant { e } => write!(f, "constant:e={e}"),
            ArrivalKind::Uniform { lo, hi } => write!(f, "uniform:lo={lo},hi={hi}"),
            ArrivalKind::Discrete { values, probs } => {
                write!(f, "discrete:v={},p={}", join(values), join(probs))
            }
        }
    }
}

/// Generator for trial `trial` of a run seeded with `seed`: the seed picks
/// the ChaCha key and the trial index picks the stream, so streams never
/// overlap and draws are identical across platforms.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}
