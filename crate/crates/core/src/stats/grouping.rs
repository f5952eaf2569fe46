use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    median, moment_stats, one_way_anova, trendline_equality_test, AnovaResult, StatsError,
    TrendMode, TrendTestResult,
};
use crate::subject::{Condition, IcdFlags};

/// Residual analyses split subjects "older than" this many years.
pub const DEFAULT_AGE_THRESHOLD: f64 = 49.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgeGroup {
    AtOrBelow,
    Above,
}

impl AgeGroup {
    pub fn of(age: f64, threshold: f64) -> Self {
        if age > threshold {
            AgeGroup::Above
        } else {
            AgeGroup::AtOrBelow
        }
    }
}

/// Input to [`compute_residuals`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub subject_id: String,
    pub actual: f64,
    pub predicted: f64,
    pub flags: IcdFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub subject_id: String,
    pub actual: f64,
    pub predicted: f64,
    /// `actual - predicted`; negative means an older-looking brain.
    pub residual: f64,
    pub icd_count: usize,
    pub flags: IcdFlags,
    pub age_group: AgeGroup,
}

pub fn compute_residuals(predictions: &[Prediction], age_threshold: f64) -> Vec<ResidualRecord> {
    predictions
        .iter()
        .map(|p| ResidualRecord {
            subject_id: p.subject_id.clone(),
            actual: p.actual,
            predicted: p.predicted,
            residual: p.actual - p.predicted,
            icd_count: p.flags.count(),
            flags: p.flags,
            age_group: AgeGroup::of(p.actual, age_threshold),
        })
        .collect()
}

/// A statistic that may not be computable for the data at hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome<T> {
    Ok { result: T },
    NotApplicable { reason: String },
}

impl<T> Outcome<T> {
    pub fn result(&self) -> Option<&T> {
        match self {
            Outcome::Ok { result } => Some(result),
            Outcome::NotApplicable { .. } => None,
        }
    }

    fn from_result(r: Result<T, StatsError>) -> Self {
        match r {
            Ok(result) => Outcome::Ok { result },
            Err(e) => Outcome::NotApplicable {
                reason: e.to_string(),
            },
        }
    }
}

/// Summary of one residual group. Fields that cannot be computed are `None`;
/// an empty group has `count == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMoments {
    pub key: String,
    pub count: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub skewness: Option<f64>,
    pub excess_kurtosis: Option<f64>,
}

impl GroupMoments {
    pub fn describe(key: impl Into<String>, values: &[f64]) -> Self {
        let key = key.into();
        if values.is_empty() {
            return Self {
                key,
                count: 0,
                mean: None,
                median: None,
                skewness: None,
                excess_kurtosis: None,
            };
        }
        let (skewness, excess_kurtosis) = match moment_stats(values) {
            Ok(m) => (Some(m.skewness), Some(m.excess_kurtosis)),
            Err(_) => (None, None),
        };
        Self {
            key,
            count: values.len(),
            mean: Some(values.iter().sum::<f64>() / values.len() as f64),
            median: Some(median(values)),
            skewness,
            excess_kurtosis,
        }
    }

    pub fn is_absent(&self) -> bool {
        self.count == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagAnova {
    pub condition: Condition,
    pub with_flag: usize,
    pub without_flag: usize,
    pub anova: Outcome<AnovaResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub age_threshold: f64,
    pub subjects: usize,
    pub subjects_over_threshold: usize,
    /// Keys `0 codes` .. `5 codes`.
    pub by_icd_count: Vec<GroupMoments>,
    pub by_icd_count_over_threshold: Vec<GroupMoments>,
    pub by_flag: Vec<GroupMoments>,
    /// Each flag split at the age threshold (`HTN <=49`, `HTN >49`, ...).
    pub by_flag_and_age: Vec<GroupMoments>,
    pub anova_icd_count: Outcome<AnovaResult>,
    pub anova_icd_count_over_threshold: Outcome<AnovaResult>,
    /// Flag set vs not set, per flag.
    pub anova_per_flag: Vec<FlagAnova>,
    /// Groups are the distinct flag combinations present.
    pub anova_flag_combination: Outcome<AnovaResult>,
    /// Predicted on actual age, one line per ICD-count group.
    pub trend_icd_count: Outcome<TrendTestResult>,
    /// ICD-count groups left out of the trend test (too few points or no age spread).
    pub trend_excluded: Vec<String>,
}

pub fn icd_count_key(count: usize) -> String {
    if count == 1 {
        "1 code".to_string()
    } else {
        format!("{count} codes")
    }
}

fn anova_of_nonempty(groups: Vec<Vec<f64>>) -> Outcome<AnovaResult> {
    let groups: Vec<Vec<f64>> = groups.into_iter().filter(|g| !g.is_empty()).collect();
    if groups.len() < 2 {
        return Outcome::NotApplicable {
            reason: format!("{} non-empty group(s); at least 2 are needed", groups.len()),
        };
    }
    Outcome::from_result(one_way_anova(&groups))
}

fn by_count(records: &[&ResidualRecord]) -> Vec<Vec<f64>> {
    let mut groups = vec![Vec::new(); Condition::ALL.len() + 1];
    for r in records {
        groups[r.icd_count].push(r.residual);
    }
    groups
}

/// Residual moments by ICD count, flag and age side, ANOVAs over those
/// groupings and the trend-line test across ICD-count groups.
pub fn residual_group_report(
    records: &[ResidualRecord],
    age_threshold: f64,
    trend_mode: TrendMode,
) -> AnalysisReport {
    let all: Vec<&ResidualRecord> = records.iter().collect();
    let over: Vec<&ResidualRecord> = records
        .iter()
        .filter(|r| AgeGroup::of(r.actual, age_threshold) == AgeGroup::Above)
        .collect();
    let describe_counts = |groups: &[Vec<f64>]| -> Vec<GroupMoments> {
        groups
            .iter()
            .enumerate()
            .map(|(k, g)| GroupMoments::describe(icd_count_key(k), g))
            .collect()
    };
    let count_groups = by_count(&all);
    let over_groups = by_count(&over);
    let threshold_label = format!("{age_threshold}");

    let mut by_flag = Vec::new();
    let mut by_flag_and_age = Vec::new();
    let mut anova_per_flag = Vec::new();
    for c in Condition::ALL {
        let (with, without): (Vec<&ResidualRecord>, Vec<&ResidualRecord>) =
            records.iter().partition(|r| r.flags.get(c));
        let with_vals: Vec<f64> = with.iter().map(|r| r.residual).collect();
        let without_vals: Vec<f64> = without.iter().map(|r| r.residual).collect();
        by_flag.push(GroupMoments::describe(c.label(), &with_vals));
        for side in [AgeGroup::AtOrBelow, AgeGroup::Above] {
            let vals: Vec<f64> = with
                .iter()
                .filter(|r| AgeGroup::of(r.actual, age_threshold) == side)
                .map(|r| r.residual)
                .collect();
            let op = if side == AgeGroup::Above { ">" } else { "<=" };
            by_flag_and_age.push(GroupMoments::describe(
                format!("{} {op}{threshold_label}", c.label()),
                &vals,
            ));
        }
        anova_per_flag.push(FlagAnova {
            condition: c,
            with_flag: with_vals.len(),
            without_flag: without_vals.len(),
            anova: anova_of_nonempty(vec![with_vals, without_vals]),
        });
    }

    let mut combos: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        combos
            .entry(r.flags.combination_label())
            .or_default()
            .push(r.residual);
    }

    let mut trend_groups = Vec::new();
    let mut trend_excluded = Vec::new();
    for k in 0..=Condition::ALL.len() {
        let pts: Vec<(f64, f64)> = records
            .iter()
            .filter(|r| r.icd_count == k)
            .map(|r| (r.actual, r.predicted))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let spread = pts.iter().any(|p| p.0 != pts[0].0);
        if pts.len() < 3 || !spread {
            trend_excluded.push(icd_count_key(k));
        } else {
            trend_groups.push((icd_count_key(k), pts));
        }
    }
    let trend_icd_count = if trend_groups.len() < 2 {
        Outcome::NotApplicable {
            reason: format!(
                "{} usable ICD-count group(s); at least 2 are needed",
                trend_groups.len()
            ),
        }
    } else {
        Outcome::from_result(trendline_equality_test(&trend_groups, trend_mode))
    };

    AnalysisReport {
        age_threshold,
        subjects: records.len(),
        subjects_over_threshold: over.len(),
        by_icd_count: describe_counts(&count_groups),
        by_icd_count_over_threshold: describe_counts(&over_groups),
        by_flag,
        by_flag_and_age,
        anova_icd_count: anova_of_nonempty(count_groups),
        anova_icd_count_over_threshold: anova_of_nonempty(over_groups),
        anova_per_flag,
        anova_flag_combination: anova_of_nonempty(combos.into_values().collect()),
        trend_icd_count,
        trend_excluded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pred(id: &str, actual: f64, predicted: f64, flags: &[Condition]) -> Prediction {
        Prediction {
            subject_id: id.into(),
            actual,
            predicted,
            flags: IcdFlags::from_conditions(flags),
        }
    }

    #[test]
    fn residual_sign_and_count() {
        let r = compute_residuals(
            &[
                pred("a", 60.0, 65.0, &[Condition::Htn, Condition::Dm]),
                pred("b", 60.0, 60.0, &[]),
            ],
            DEFAULT_AGE_THRESHOLD,
        );
        assert_eq!(r[0].residual, -5.0);
        assert_eq!(r[0].icd_count, 2);
        assert_eq!(r[0].age_group, AgeGroup::Above);
        assert_eq!(r[1].residual, 0.0);
        let edge = compute_residuals(&[pred("c", 49.0, 49.0, &[])], 49.0);
        assert_eq!(edge[0].age_group, AgeGroup::AtOrBelow);
    }

    #[test]
    fn single_group_report() {
        let preds: Vec<Prediction> = (0..10)
            .map(|i| {
                pred(
                    &i.to_string(),
                    30.0 + 4.0 * f64::from(i),
                    31.0 + 4.0 * f64::from(i),
                    &[],
                )
            })
            .collect();
        let report =
            residual_group_report(&compute_residuals(&preds, 49.0), 49.0, TrendMode::default());
        assert_eq!(report.by_icd_count.len(), 6);
        assert_eq!(report.by_icd_count[0].count, 10);
        assert!(report.by_icd_count[1].is_absent());
        assert!(matches!(
            report.anova_icd_count,
            Outcome::NotApplicable { .. }
        ));
        assert!(matches!(
            report.trend_icd_count,
            Outcome::NotApplicable { .. }
        ));
        assert_eq!(report.by_flag_and_age[1].key, "HTN >49");
    }

    #[test]
    fn report_serializes_and_round_trips() {
        let preds = vec![
            pred("a", 50.0, 52.0, &[Condition::Htn]),
            pred("b", 55.0, 53.0, &[]),
            pred("c", 60.0, 61.5, &[Condition::Htn]),
            pred("d", 65.0, 64.0, &[]),
        ];
        let report =
            residual_group_report(&compute_residuals(&preds, 49.0), 49.0, TrendMode::default());
        let json = serde_json::to_string(&report).unwrap();
        let back: AnalysisReport = serde_json::from_str(&json).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }

    proptest! {
        // exact whenever actual and predicted are within a factor of two
        #[test]
        fn residual_identity(actual in 20.0f64..90.0, ratio in 0.5f64..2.0) {
            let predicted = actual * ratio;
            let r = compute_residuals(&[pred("x", actual, predicted, &[])], 49.0);
            prop_assert_eq!(r[0].residual + r[0].predicted, r[0].actual);
        }
    }
}
