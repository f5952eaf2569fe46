use serde::{Deserialize, Serialize};

use super::{f_survival, float_repr, Result, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    #[serde(with = "float_repr")]
    pub f: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p: f64,
}

/// One-way ANOVA across groups.
///
/// With no within-group spread at all the result is `F = 0, p = 1` when the
/// group means agree and `F = inf, p = 0` otherwise.
pub fn one_way_anova<G: AsRef<[f64]>>(groups: &[G]) -> Result<AnovaResult> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups {
            needed: 2,
            found: groups.len(),
        });
    }
    let mut n = 0usize;
    let mut total = 0.0;
    for (index, g) in groups.iter().enumerate() {
        let g = g.as_ref();
        if g.is_empty() {
            return Err(StatsError::EmptyGroup { index });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        n += g.len();
        total += g.iter().sum::<f64>();
    }
    let k = groups.len();
    if n <= k {
        return Err(StatsError::InsufficientDf { n, groups: k });
    }
    let grand = total / n as f64;
    let (mut ssb, mut ssw) = (0.0, 0.0);
    for g in groups {
        let g = g.as_ref();
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ssb += g.len() as f64 * (m - grand).powi(2);
        ssw += g.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    let (df_between, df_within) = (k - 1, n - k);
    // sums of squares this small relative to the data are rounding noise
    let scale = groups
        .iter()
        .flat_map(|g| g.as_ref().iter())
        .map(|v| (v - grand).powi(2))
        .sum::<f64>();
    let noise = 1e-24 * scale.max(f64::MIN_POSITIVE);
    let f = if ssw <= noise {
        if ssb <= noise.max(1e-12 * scale) {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (ssb / df_between as f64) / (ssw / df_within as f64)
    };
    let p = f_survival(f, df_between as f64, df_within as f64)?;
    Ok(AnovaResult {
        f,
        df_between,
        df_within,
        p,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrendMode {
    /// Reduced model is a single pooled line.
    #[default]
    SlopesAndIntercepts,
    /// Reduced model keeps per-group intercepts with one common slope.
    SlopesOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLine {
    pub label: String,
    pub n: usize,
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendTestResult {
    pub mode: TrendMode,
    pub groups: Vec<GroupLine>,
    pub rss_pooled: f64,
    pub rss_full: f64,
    #[serde(with = "float_repr")]
    pub f: f64,
    pub df_num: usize,
    pub df_den: usize,
    pub p: f64,
}

struct Centered {
    mx: f64,
    my: f64,
    sxx: f64,
    sxy: f64,
}

fn centered(points: &[(f64, f64)]) -> Centered {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - mx).powi(2);
        sxy += (x - mx) * (y - my);
    }
    Centered { mx, my, sxx, sxy }
}

fn rss_line(points: &[(f64, f64)], slope: f64, intercept: f64) -> f64 {
    points
        .iter()
        .map(|&(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum()
}

/// Tests whether per-group regression lines of y on x differ (nested-model F-test).
pub fn trendline_equality_test(
    groups: &[(String, Vec<(f64, f64)>)],
    mode: TrendMode,
) -> Result<TrendTestResult> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups {
            needed: 2,
            found: groups.len(),
        });
    }
    let mut lines = Vec::with_capacity(groups.len());
    let mut stats = Vec::with_capacity(groups.len());
    let mut rss_full = 0.0;
    for (label, pts) in groups {
        if pts.len() < 3 {
            return Err(StatsError::GroupTooSmall {
                label: label.clone(),
                size: pts.len(),
            });
        }
        if pts.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        let c = centered(pts);
        let xscale = pts.iter().fold(0.0f64, |a, p| a.max(p.0.abs())).max(1.0);
        if c.sxx <= (1e-12 * xscale).powi(2) * pts.len() as f64 {
            return Err(StatsError::ZeroXVariance {
                label: label.clone(),
            });
        }
        let slope = c.sxy / c.sxx;
        let intercept = c.my - slope * c.mx;
        rss_full += rss_line(pts, slope, intercept);
        lines.push(GroupLine {
            label: label.clone(),
            n: pts.len(),
            slope,
            intercept,
        });
        stats.push(c);
    }
    let all: Vec<(f64, f64)> = groups.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let n = all.len();
    let g = groups.len();
    if n <= 2 * g {
        return Err(StatsError::InsufficientDf { n, groups: g });
    }
    let rss_reduced = match mode {
        TrendMode::SlopesAndIntercepts => {
            let c = centered(&all);
            let slope = c.sxy / c.sxx;
            rss_line(&all, slope, c.my - slope * c.mx)
        }
        TrendMode::SlopesOnly => {
            let slope =
                stats.iter().map(|c| c.sxy).sum::<f64>() / stats.iter().map(|c| c.sxx).sum::<f64>();
            groups
                .iter()
                .zip(&stats)
                .map(|((_, pts), c)| rss_line(pts, slope, c.my - slope * c.mx))
                .sum()
        }
    };
    let df_num = match mode {
        TrendMode::SlopesAndIntercepts => 2 * g - 2,
        TrendMode::SlopesOnly => g - 1,
    };
    let df_den = n - 2 * g;
    // the full model nests the reduced one
    let rss_pooled = rss_reduced.max(rss_full);
    let c = centered(&all);
    let syy: f64 = all.iter().map(|p| (p.1 - c.my).powi(2)).sum();
    let noise = 1e-20 * syy.max(f64::MIN_POSITIVE) + 1e-300;
    let gain = rss_pooled - rss_full;
    let f = if gain <= noise {
        0.0
    } else if rss_full <= noise {
        f64::INFINITY
    } else {
        (gain / df_num as f64) / (rss_full / df_den as f64)
    };
    let p = f_survival(f, df_num as f64, df_den as f64)?;
    Ok(TrendTestResult {
        mode,
        groups: lines,
        rss_pooled,
        rss_full,
        f,
        df_num,
        df_den,
        p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn anova_hand_example() {
        let r = one_way_anova(&[vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0]]).unwrap();
        assert!((r.f - 1.5).abs() < 1e-12);
        assert_eq!((r.df_between, r.df_within), (1, 4));
        assert!((r.p - 0.2879).abs() < 1e-3);
    }

    #[test]
    fn anova_degenerate_cases() {
        let same = one_way_anova(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!((same.f, same.p), (0.0, 1.0));
        let flat = one_way_anova(&[vec![3.0, 3.0], vec![3.0, 3.0]]).unwrap();
        assert_eq!((flat.f, flat.p), (0.0, 1.0));
        let split = one_way_anova(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!((split.f, split.p), (f64::INFINITY, 0.0));
        assert!(matches!(
            one_way_anova(&[vec![1.0], vec![2.0]]),
            Err(StatsError::InsufficientDf { .. })
        ));
        assert!(one_way_anova(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn trend_same_line_is_null() {
        let line = |xs: &[f64]| xs.iter().map(|&x| (x, 3.0 + 0.5 * x)).collect::<Vec<_>>();
        let groups = vec![
            ("a".to_string(), line(&[20.0, 30.0, 40.0, 55.0])),
            ("b".to_string(), line(&[25.0, 35.0, 60.0])),
        ];
        for mode in [TrendMode::SlopesAndIntercepts, TrendMode::SlopesOnly] {
            let r = trendline_equality_test(&groups, mode).unwrap();
            assert_eq!((r.f, r.p), (0.0, 1.0));
        }
    }

    #[test]
    fn trend_detects_slope_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut group = |slope: f64| -> Vec<(f64, f64)> {
            (0..40)
                .map(|_| {
                    let x: f64 = rng.random_range(20.0..80.0);
                    (x, 5.0 + slope * x + rng.random_range(-1.0..1.0))
                })
                .collect()
        };
        let groups = vec![("a".to_string(), group(1.0)), ("b".to_string(), group(0.7))];
        let r = trendline_equality_test(&groups, TrendMode::SlopesAndIntercepts).unwrap();
        assert!(r.p < 0.01 && r.f > 10.0);
        assert!(
            trendline_equality_test(&groups, TrendMode::SlopesOnly)
                .unwrap()
                .p
                < 0.01
        );
    }

    #[test]
    fn trend_errors_name_group() {
        let groups = vec![
            ("ok".to_string(), vec![(1.0, 1.0), (2.0, 2.0), (3.0, 2.5)]),
            ("tiny".to_string(), vec![(1.0, 1.0), (2.0, 2.0)]),
        ];
        assert!(matches!(
            trendline_equality_test(&groups, TrendMode::default()),
            Err(StatsError::GroupTooSmall { label, .. }) if label == "tiny"
        ));
        let groups = vec![
            ("ok".to_string(), vec![(1.0, 1.0), (2.0, 2.0), (3.0, 2.5)]),
            ("flat".to_string(), vec![(4.0, 1.0), (4.0, 2.0), (4.0, 3.0)]),
        ];
        assert!(matches!(
            trendline_equality_test(&groups, TrendMode::default()),
            Err(StatsError::ZeroXVariance { label }) if label == "flat"
        ));
    }

    fn groups_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 2..12), 2..5)
    }

    proptest! {
        #[test]
        fn anova_invariances(groups in groups_strategy(), c in -100.0f64..100.0, s in 0.1f64..20.0) {
            let base = one_way_anova(&groups).unwrap();
            prop_assume!(base.f.is_finite() && base.f > 1e-6);
            let shift: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|v| v + c).collect()).collect();
            let scale: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|v| v * -s).collect()).collect();
            let tol = 1e-6 * base.f;
            prop_assert!((one_way_anova(&shift).unwrap().f - base.f).abs() <= tol);
            prop_assert!((one_way_anova(&scale).unwrap().f - base.f).abs() <= tol);
            prop_assert!((0.0..=1.0).contains(&base.p));
        }

        #[test]
        fn f_tail_monotone(f in 0.0f64..50.0, d in 0.01f64..5.0, df1 in 1u32..20, df2 in 1u32..200) {
            let a = f_survival(f, f64::from(df1), f64::from(df2)).unwrap();
            let b = f_survival(f + d, f64::from(df1), f64::from(df2)).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(b < a || (a == 0.0 && b == 0.0), "{} {}", a, b);
        }

        #[test]
        fn trend_full_never_worse(pts in prop::collection::vec(prop::collection::vec((0.0f64..100.0, -50.0f64..50.0), 3..15), 2..4)) {
            let groups: Vec<(String, Vec<(f64, f64)>)> = pts.into_iter().enumerate().map(|(i, p)| (i.to_string(), p)).collect();
            if let Ok(r) = trendline_equality_test(&groups, TrendMode::SlopesAndIntercepts) {
                prop_assert!(r.rss_full <= r.rss_pooled && r.f >= 0.0);
            }
        }
    }
}
