//! Radio-link arithmetic: the bandwidth needed to push `|B|` coded bits
//! through an AWGN link within a delay budget, code rates, and user request
//! sampling.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::ScenarioConfig;

/// A channel code rate from the fixed allowed set, kept exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CodeRate(Ratio<u32>);

impl CodeRate {
    /// Allowed rates in increasing order.
    pub const ALLOWED: [(u32, u32); 8] = [
        (1, 2),
        (3, 5),
        (2, 3),
        (3, 4),
        (4, 5),
        (5, 6),
        (8, 9),
        (9, 10),
    ];

    pub fn new(numer: u32, denom: u32) -> Result<Self> {
        if denom == 0 {
            return Err(Error::invalid("code rate with zero denominator"));
        }
        let r = Ratio::new(numer, denom);
        Self::all()
            .find(|c| c.0 == r)
            .ok_or_else(|| Error::invalid(format!("code rate {numer}/{denom} is not in the allowed set")))
    }

    pub fn all() -> impl Iterator<Item = CodeRate> {
        Self::ALLOWED
            .iter()
            .map(|&(n, d)| CodeRate(Ratio::new_raw(n, d)))
    }

    pub fn lowest() -> Self {
        CodeRate(Ratio::new_raw(1, 2))
    }

    pub fn highest() -> Self {
        CodeRate(Ratio::new_raw(9, 10))
    }

    pub fn numer(&self) -> u32 {
        *self.0.numer()
    }

    pub fn denom(&self) -> u32 {
        *self.0.denom()
    }

    pub fn value(&self) -> f64 {
        f64::from(self.numer()) / f64::from(self.denom())
    }

    /// Nearest allowed rate; ties go to the lower rate.
    pub fn snap(value: f64) -> Self {
        let mut best = Self::lowest();
        let mut best_dist = f64::INFINITY;
        for c in Self::all() {
            let d = (c.value() - value).abs();
            // exact midpoints land within rounding noise; keep the lower
            if d < best_dist - 1e-12 {
                best = c;
                best_dist = d;
            }
        }
        best
    }
}

impl fmt::Display for CodeRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer(), self.denom())
    }
}

impl FromStr for CodeRate {
    type Err = Error;

    /// Accepts `n/d` or a decimal that matches an allowed rate within 1e-9.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n = n.trim().parse().map_err(|_| Error::invalid(format!("bad code rate {s:?}")))?;
            let d = d.trim().parse().map_err(|_| Error::invalid(format!("bad code rate {s:?}")))?;
            return Self::new(n, d);
        }
        let v: f64 = s.parse().map_err(|_| Error::invalid(format!("bad code rate {s:?}")))?;
        Self::all()
            .find(|c| (c.value() - v).abs() < 1e-9)
            .ok_or_else(|| Error::invalid(format!("code rate {v} is not in the allowed set")))
    }
}

impl Serialize for CodeRate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CodeRate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub snr_db: f64,
    pub code_rate: CodeRate,
    pub delay_budget_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QosTier {
    Low,
    Medium,
    High,
}

impl QosTier {
    pub const ALL: [QosTier; 3] = [QosTier::Low, QosTier::Medium, QosTier::High];

    /// Required top-1 accuracy.
    pub fn min_accuracy(self) -> f64 {
        match self {
            QosTier::Low => 0.70,
            QosTier::Medium => 0.80,
            QosTier::High => 0.90,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QosTier::Low => "low",
            QosTier::Medium => "medium",
            QosTier::High => "high",
        }
    }
}

impl fmt::Display for QosTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QosTier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(QosTier::Low),
            "medium" => Ok(QosTier::Medium),
            "high" => Ok(QosTier::High),
            other => Err(Error::invalid(format!("unknown QoS tier {other:?}"))),
        }
    }
}

/// A new user asking for admission. The code rate is chosen by the planner,
/// so the request only carries channel conditions and QoS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserRequest {
    pub user_id: u64,
    pub snr_db: f64,
    pub delay_budget_s: f64,
    pub tier: QosTier,
}

impl UserRequest {
    pub fn link(&self, code_rate: CodeRate) -> LinkParams {
        LinkParams {
            snr_db: self.snr_db,
            code_rate,
            delay_budget_s: self.delay_budget_s,
        }
    }

    pub fn min_accuracy(&self) -> f64 {
        self.tier.min_accuracy()
    }
}

/// `log2(1 + 10^(snr_db / 10))` in bit/s/Hz.
pub fn spectral_efficiency(snr_db: f64) -> f64 {
    (1.0 + 10f64.powf(snr_db / 10.0)).log2()
}

/// Bandwidth in MHz to carry `bits` payload bits at the given code rate
/// within the delay budget.
pub fn required_bandwidth_mhz(bits: f64, link: &LinkParams) -> Result<f64> {
    if !(bits >= 0.0) || !bits.is_finite() {
        return Err(Error::invalid(format!("bit count {bits} must be finite and nonnegative")));
    }
    if !(link.delay_budget_s > 0.0) || !link.delay_budget_s.is_finite() {
        return Err(Error::invalid(format!(
            "delay budget {} s must be positive",
            link.delay_budget_s
        )));
    }
    if !link.snr_db.is_finite() {
        return Err(Error::invalid("snr must be finite"));
    }
    let coded_bits = bits / link.code_rate.value();
    let bit_rate = coded_bits / link.delay_budget_s;
    Ok(bit_rate / (spectral_efficiency(link.snr_db) * 1e6))
}

const RULE_SNR_LOW_DB: f64 = 5.0;
const RULE_SNR_HIGH_DB: f64 = 30.0;

/// Heuristic code rate: linear in SNR from 1/2 at 5 dB to 9/10 at 30 dB,
/// clamped, then snapped to the allowed set.
pub fn rule_based_code_rate(snr_db: f64) -> CodeRate {
    let lo = CodeRate::lowest().value();
    let hi = CodeRate::highest().value();
    let frac = ((snr_db - RULE_SNR_LOW_DB) / (RULE_SNR_HIGH_DB - RULE_SNR_LOW_DB)).clamp(0.0, 1.0);
    CodeRate::snap(lo + frac * (hi - lo))
}

const USER_STREAM: u64 = 0x5eed_0001;

/// Draws request `index` of the scenario's queue. Depends only on
/// `(seed, index)` and the configured ranges.
pub fn sample_user(seed: u64, index: u64, cfg: &ScenarioConfig) -> Result<UserRequest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ USER_STREAM);
    rng.set_stream(index);
    let weights = WeightedIndex::new(cfg.tier_weights)
        .map_err(|e| Error::Config(format!("tier_weights: {e}")))?;
    let snr_db = uniform(&mut rng, cfg.snr_range_db);
    let delay_ms = uniform(&mut rng, cfg.delay_range_ms);
    let tier = QosTier::ALL[weights.sample(&mut rng)];
    Ok(UserRequest {
        user_id: index,
        snr_db,
        delay_budget_s: delay_ms * 1e-3,
        tier,
    })
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn link(snr_db: f64, rate: (u32, u32), delay_ms: f64) -> LinkParams {
        LinkParams {
            snr_db,
            code_rate: CodeRate::new(rate.0, rate.1).unwrap(),
            delay_budget_s: delay_ms * 1e-3,
        }
    }

    #[test]
    fn spectral_efficiency_examples() {
        assert_relative_eq!(spectral_efficiency(0.0), 1.0, max_relative = 1e-12);
        assert_relative_eq!(spectral_efficiency(30.0), 1001f64.log2(), max_relative = 1e-12);
        assert_relative_eq!(spectral_efficiency(30.0), 9.967226, max_relative = 1e-6);
        // log2(1 + sqrt(10)) = 2.0573732...
        assert_relative_eq!(spectral_efficiency(5.0), 2.0573732086, max_relative = 1e-9);
    }

    #[test]
    fn bandwidth_examples() {
        assert_eq!(required_bandwidth_mhz(0.0, &link(30.0, (1, 2), 0.5)).unwrap(), 0.0);
        // 2000 coded bits over 0.5 ms = 4e6 b/s
        let bw = required_bandwidth_mhz(1000.0, &link(30.0, (1, 2), 0.5)).unwrap();
        assert_relative_eq!(bw, 4e6 / (1001f64.log2() * 1e6), max_relative = 1e-12);
        assert_relative_eq!(bw, 0.401315, max_relative = 1e-6);
        // 3200 coded bits over 0.1 ms = 3.2e7 b/s
        let bw = required_bandwidth_mhz(2400.0, &link(5.0, (3, 4), 0.1)).unwrap();
        assert_relative_eq!(bw, 3.2e7 / ((1.0 + 10f64.sqrt()).log2() * 1e6), max_relative = 1e-12);
        assert_relative_eq!(bw, 15.5538139, max_relative = 1e-7);
    }

    #[test]
    fn bandwidth_errors() {
        assert!(required_bandwidth_mhz(10.0, &link(5.0, (1, 2), 0.0)).is_err());
        assert!(required_bandwidth_mhz(-1.0, &link(5.0, (1, 2), 0.1)).is_err());
    }

    #[test]
    fn rule_based_rates() {
        assert_eq!(rule_based_code_rate(5.0), CodeRate::new(1, 2).unwrap());
        assert_eq!(rule_based_code_rate(30.0), CodeRate::new(9, 10).unwrap());
        assert_eq!(rule_based_code_rate(17.5), CodeRate::new(2, 3).unwrap());
        assert_eq!(rule_based_code_rate(-10.0), CodeRate::lowest());
        assert_eq!(rule_based_code_rate(45.0), CodeRate::highest());
    }

    #[test]
    fn snapping() {
        assert_eq!(CodeRate::snap(0.71), CodeRate::new(3, 4).unwrap());
        assert_eq!(CodeRate::snap(0.0), CodeRate::lowest());
        assert_eq!(CodeRate::snap(2.0), CodeRate::highest());
        // midway between 1/2 and 3/5 goes low
        assert_eq!(CodeRate::snap(0.55), CodeRate::lowest());
    }

    #[test]
    fn code_rate_parsing() {
        assert_eq!("0.5".parse::<CodeRate>().unwrap(), CodeRate::lowest());
        assert_eq!("8/9".parse::<CodeRate>().unwrap(), CodeRate::new(8, 9).unwrap());
        assert_eq!("6/12".parse::<CodeRate>().unwrap(), CodeRate::lowest());
        assert!("0.7".parse::<CodeRate>().is_err());
        assert!("1/3".parse::<CodeRate>().is_err());
        assert_eq!(CodeRate::new(5, 6).unwrap().to_string(), "5/6");
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        let cfg = ScenarioConfig::default();
        assert_eq!(sample_user(7, 0, &cfg).unwrap(), sample_user(7, 0, &cfg).unwrap());
        assert_ne!(sample_user(7, 0, &cfg).unwrap(), sample_user(7, 1, &cfg).unwrap());
        let n = 10_000;
        let mut mean = 0.0;
        for i in 0..n {
            let u = sample_user(3, i, &cfg).unwrap();
            assert!((5.0..=30.0).contains(&u.snr_db));
            assert!((0.05e-3..=0.5e-3).contains(&u.delay_budget_s));
            mean += u.snr_db / n as f64;
        }
        assert!((mean - 17.5).abs() <= 0.5, "mean snr {mean}");
    }

    #[test]
    fn tier_weights_select_low_only() {
        let cfg = ScenarioConfig {
            tier_weights: [1.0, 0.0, 0.0],
            ..ScenarioConfig::default()
        };
        assert!((0..500).all(|i| sample_user(1, i, &cfg).unwrap().tier == QosTier::Low));
    }

    proptest! {
        #[test]
        fn bandwidth_monotonicity(
            bits in 1.0f64..1e6,
            snr in 5.0f64..30.0,
            delay_ms in 0.05f64..0.5,
            ri in 0usize..7,
        ) {
            let rates: Vec<_> = CodeRate::all().collect();
            let l = LinkParams { snr_db: snr, code_rate: rates[ri], delay_budget_s: delay_ms * 1e-3 };
            let bw = required_bandwidth_mhz(bits, &l).unwrap();
            prop_assert!(required_bandwidth_mhz(bits * 1.01, &l).unwrap() > bw);
            prop_assert_eq!(required_bandwidth_mhz(bits * 2.0, &l).unwrap(), bw * 2.0);
            let faster = LinkParams { code_rate: rates[ri + 1], ..l };
            prop_assert!(required_bandwidth_mhz(bits, &faster).unwrap() < bw);
            let longer = LinkParams { delay_budget_s: l.delay_budget_s * 1.01, ..l };
            prop_assert!(required_bandwidth_mhz(bits, &longer).unwrap() < bw);
            let cleaner = LinkParams { snr_db: snr + 0.1, ..l };
            prop_assert!(required_bandwidth_mhz(bits, &cleaner).unwrap() < bw);
        }
    }
}
