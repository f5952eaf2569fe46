//! Regression metrics, residual statistics, ANOVA, trend-line tests and the
//! Monte Carlo bias-variance decomposition.

mod bvd;
mod grouping;
mod hypothesis;
mod special;

pub use bvd::{
    bias_variance_decompose, BiasVarianceEstimate, DataSource, FRESH_DRAWS, MIN_REPEATS,
};
pub use grouping::{
    compute_residuals, icd_count_key, residual_group_report, AgeGroup, AnalysisReport, FlagAnova,
    GroupMoments, Outcome, Prediction, ResidualRecord, DEFAULT_AGE_THRESHOLD,
};
pub use hypothesis::{
    one_way_anova, trendline_equality_test, AnovaResult, GroupLine, TrendMode, TrendTestResult,
};
pub use special::{beta_inc, f_survival, ln_gamma};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("need at least {needed} values, got {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("R² is undefined: actual values have zero variance (MAE {mae}, MSE {mse})")]
    UndefinedR2 { mae: f64, mse: f64 },
    #[error(
        "skewness and kurtosis are undefined for zero variance (mean {mean}, median {median})"
    )]
    UndefinedMoments { mean: f64, median: f64 },
    #[error("invalid degrees of freedom ({df1}, {df2})")]
    InvalidDf { df1: f64, df2: f64 },
    #[error("invalid test statistic {0}")]
    InvalidStatistic(f64),
    #[error("need at least {needed} groups, got {found}")]
    TooFewGroups { needed: usize, found: usize },
    #[error("group {index} is empty")]
    EmptyGroup { index: usize },
    #[error("not enough observations ({n}) for {groups} groups")]
    InsufficientDf { n: usize, groups: usize },
    #[error("group {label:?} has {size} points; at least 3 are required")]
    GroupTooSmall { label: String, size: usize },
    #[error("group {label:?} has zero variance in x")]
    ZeroXVariance { label: String },
    #[error("need at least {needed} repeats, got {found}")]
    TooFewRepeats { needed: usize, found: usize },
    #[error("trainer produced a non-finite prediction in repeat {repeat}")]
    Divergence { repeat: usize },
}

pub type Result<T> = std::result::Result<T, StatsError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub r2: f64,
    pub mae: f64,
    pub mse: f64,
}

/// R², MAE and MSE of `predicted` against `actual`.
pub fn regression_metrics(actual: &[f64], predicted: &[f64]) -> Result<RegressionMetrics> {
    if actual.len() != predicted.len() {
        return Err(StatsError::LengthMismatch {
            left: actual.len(),
            right: predicted.len(),
        });
    }
    if actual.len() < 2 {
        return Err(StatsError::TooFewPoints {
            needed: 2,
            found: actual.len(),
        });
    }
    if actual.iter().chain(predicted).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = actual.len() as f64;
    let mean = actual.iter().sum::<f64>() / n;
    let (mut sae, mut sse, mut sst) = (0.0, 0.0, 0.0);
    for (a, p) in actual.iter().zip(predicted) {
        let r = a - p;
        sae += r.abs();
        sse += r * r;
        sst += (a - mean).powi(2);
    }
    let (mae, mse) = (sae / n, sse / n);
    if sst == 0.0 {
        return Err(StatsError::UndefinedR2 { mae, mse });
    }
    Ok(RegressionMetrics {
        r2: 1.0 - sse / sst,
        mae,
        mse,
    })
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance (denominator `n - 1`); zero for fewer than two values.
pub fn sample_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64
}

/// Midpoint of the two central values for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// Fisher-Pearson g1 = m3 / m2^(3/2).
    pub skewness: f64,
    /// g2 = m4 / m2² - 3.
    pub excess_kurtosis: f64,
}

/// Population-moment skewness and excess kurtosis together with mean and median.
pub fn moment_stats(values: &[f64]) -> Result<Moments> {
    if values.len() < 2 {
        return Err(StatsError::TooFewPoints {
            needed: 2,
            found: values.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = values.len() as f64;
    let m = mean(values);
    let med = median(values);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let d = v - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    // relative to the data scale, not an absolute zero test
    let scale = values
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    if m2 <= (scale * 1e-14).powi(2) {
        return Err(StatsError::UndefinedMoments {
            mean: m,
            median: med,
        });
    }
    Ok(Moments {
        count: values.len(),
        mean: m,
        median: med,
        skewness: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
    })
}

/// Four decimals; anything that would print as zero becomes `<0.0001`.
pub fn format_p(p: f64) -> String {
    if p < 0.000_05 {
        "<0.0001".to_string()
    } else {
        format!("{p:.4}")
    }
}

/// Serde helpers for floats that may be infinite or NaN (stored as strings).
pub mod float_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
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

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad float {other:?}"))),
            },
        }
    }
}
