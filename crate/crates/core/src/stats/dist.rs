use serde::{Deserialize, Serialize};

use super::special::{erfc, gamma_lr};

/// Candidate families, declared in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    Exponential,
    Gamma,
    LogLogistic,
    Normal,
    Weibull,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Exponential,
        Family::Gamma,
        Family::LogLogistic,
        Family::Normal,
        Family::Weibull,
    ];

    /// One-letter code used in summary tables.
    pub fn code(self) -> char {
        match self {
            Family::Exponential => 'E',
            Family::Gamma => 'G',
            Family::LogLogistic => 'L',
            Family::Normal => 'N',
            Family::Weibull => 'W',
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        let lower = s.to_ascii_lowercase();
        Family::ALL.into_iter().find(|f| {
            lower == format!("{f:?}").to_ascii_lowercase()
                || lower.len() == 1 && lower.starts_with(f.code().to_ascii_lowercase())
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params")]
pub enum Distribution {
    Exponential { rate: f64 },
    Normal { mean: f64, std_dev: f64 },
    Gamma { shape: f64, scale: f64 },
    Weibull { shape: f64, scale: f64 },
    LogLogistic { scale: f64, shape: f64 },
}

impl Distribution {
    pub fn family(&self) -> Family {
        match self {
            Distribution::Exponential { .. } => Family::Exponential,
            Distribution::Normal { .. } => Family::Normal,
            Distribution::Gamma { .. } => Family::Gamma,
            Distribution::Weibull { .. } => Family::Weibull,
            Distribution::LogLogistic { .. } => Family::LogLogistic,
        }
    }

    /// Named parameters in a fixed order.
    pub fn params(&self) -> Vec<(&'static str, f64)> {
        match *self {
            Distribution::Exponential { rate } => vec![("rate", rate)],
            Distribution::Normal { mean, std_dev } => vec![("mean", mean), ("std_dev", std_dev)],
            Distribution::Gamma { shape, scale } | Distribution::Weibull { shape, scale } => {
                vec![("shape", shape), ("scale", scale)]
            }
            Distribution::LogLogistic { scale, shape } => vec![("scale", scale), ("shape", shape)],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.params().iter().all(|&(name, v)| {
            v.is_finite() && (name == "mean" || v > 0.0)
        })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        match *self {
            Distribution::Normal { mean, std_dev } => {
                0.5 * erfc(-(x - mean) / (std_dev * std::f64::consts::SQRT_2))
            }
            _ if x <= 0.0 => 0.0,
            _ if x == f64::INFINITY => 1.0,
            Distribution::Exponential { rate } => -(-rate * x).exp_m1(),
            Distribution::Gamma { shape, scale } => gamma_lr(shape, x / scale),
            Distribution::Weibull { shape, scale } => -(-(x / scale).powf(shape)).exp_m1(),
            Distribution::LogLogistic { scale, shape } => 1.0 / (1.0 + (x / scale).powf(-shape)),
        }
    }

    /// Inverse CDF where a closed form exists.
    pub fn quantile(&self, u: f64) -> Option<f64> {
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        match *self {
            Distribution::Exponential { rate } => Some(-(-u).ln_1p() / rate),
            Distribution::Weibull { shape, scale } => {
                Some(scale * (-(-u).ln_1p()).powf(1.0 / shape))
            }
            Distribution::LogLogistic { scale, shape } => {
                Some(scale * (u / (1.0 - u)).powf(1.0 / shape))
            }
            Distribution::Normal { .. } | Distribution::Gamma { .. } => None,
        }
    }

    pub fn mean(&self) -> Option<f64> {
        match *self {
            Distribution::Exponential { rate } => Some(1.0 / rate),
            Distribution::Normal { mean, .. } => Some(mean),
            Distribution::Gamma { shape, scale } => Some(shape * scale),
            Distribution::Weibull { shape, scale } => {
                Some(scale * super::special::ln_gamma(1.0 + 1.0 / shape).exp())
            }
            Distribution::LogLogistic { scale, shape } if shape > 1.0 => {
                let b = std::f64::consts::PI / shape;
                Some(scale * b / b.sin())
            }
            Distribution::LogLogistic { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const E1: f64 = 0.632_120_558_828_557_7; // 1 - e^-1

    #[test]
    fn cdf_anchor_values() {
        assert_eq!(Distribution::LogLogistic { scale: 5.0, shape: 2.0 }.cdf(5.0), 0.5);
        assert_eq!(Distribution::Exponential { rate: 1.0 }.cdf(0.0), 0.0);
        let n = Distribution::Normal { mean: 0.0, std_dev: 1.0 }.cdf(1.96);
        assert!((n - 0.975002).abs() < 5e-7, "{n}");
        let g = Distribution::Gamma { shape: 1.0, scale: 2.0 }.cdf(2.0);
        assert!((g - E1).abs() < 1e-12);
        let w = Distribution::Weibull { shape: 1.0, scale: 2.0 }.cdf(2.0);
        assert!((w - E1).abs() < 1e-15);
    }

    #[test]
    fn support_endpoints() {
        for d in [
            Distribution::Exponential { rate: 2.0 },
            Distribution::Gamma { shape: 2.5, scale: 1.0 },
            Distribution::Weibull { shape: 0.7, scale: 3.0 },
            Distribution::LogLogistic { scale: 1.0, shape: 3.0 },
        ] {
            assert_eq!(d.cdf(-1.0), 0.0);
            assert_eq!(d.cdf(0.0), 0.0);
            assert_eq!(d.cdf(f64::INFINITY), 1.0);
        }
        let n = Distribution::Normal { mean: 1.0, std_dev: 2.0 };
        assert_eq!(n.cdf(f64::NEG_INFINITY), 0.0);
        assert_eq!(n.cdf(f64::INFINITY), 1.0);
    }

    #[test]
    fn quantiles_invert_cdf() {
        for d in [
            Distribution::Exponential { rate: 1.5 },
            Distribution::Weibull { shape: 1.5, scale: 2.0 },
            Distribution::LogLogistic { scale: 3.0, shape: 4.0 },
        ] {
            for &u in &[0.01, 0.3, 0.5, 0.77, 0.999] {
                let x = d.quantile(u).unwrap();
                assert!((d.cdf(x) - u).abs() < 1e-12);
            }
        }
        let ll = Distribution::LogLogistic { scale: 3.0, shape: 4.0 };
        assert_eq!(ll.quantile(0.5), Some(3.0));
        let e = Distribution::Exponential { rate: 1.0 }.quantile(0.5).unwrap();
        assert!((e - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn serde_shape() {
        let d = Distribution::Gamma { shape: 2.0, scale: 3.0 };
        let v = serde_json::to_value(d).unwrap();
        assert_eq!(v, serde_json::json!({"family": "Gamma", "params": {"shape": 2.0, "scale": 3.0}}));
        assert_eq!(serde_json::from_value::<Distribution>(v).unwrap(), d);
    }

    #[test]
    fn family_parse_and_order() {
        assert_eq!(Family::parse("loglogistic"), Some(Family::LogLogistic));
        assert_eq!(Family::parse("W"), Some(Family::Weibull));
        assert_eq!(Family::parse("cauchy"), None);
        let mut v = vec![Family::Weibull, Family::Exponential, Family::Normal];
        v.sort();
        assert_eq!(v, vec![Family::Exponential, Family::Normal, Family::Weibull]);
    }
}
