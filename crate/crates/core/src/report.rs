//! Study report: JSON document, residual CSV, markdown tables and SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::DataError;
use crate::ensemble::{CvReport, EnsembleModel, MetricSummary};
use crate::modality::Modality;
use crate::stats::{format_p, AgeGroup, AnalysisReport, GroupMoments, Outcome, ResidualRecord};
use crate::subject::Condition;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";
pub const RESIDUALS_CSV: &str = "residuals.csv";
pub const SCATTER_SVG: &str = "scatter_actual_vs_predicted.svg";
pub const HISTOGRAM_SVG: &str = "residual_hist_by_flag.svg";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub complete: usize,
    pub incomplete: usize,
    pub train: usize,
    pub test: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseModelMetrics {
    pub modality: Modality,
    pub train: Outcome<MetricSummary>,
    pub test: Outcome<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub schema_version: u32,
    pub generator: String,
    pub split: SplitSummary,
    pub base_models: Vec<BaseModelMetrics>,
    pub ensemble: EnsembleModel,
    pub ensemble_train: Outcome<MetricSummary>,
    /// Held-out metrics; not applicable when the test split is empty.
    pub ensemble_test: Outcome<MetricSummary>,
    pub cross_validation: Option<CvReport>,
    /// Which subjects the residual analysis covers: `train`, `test` or `all`.
    pub residual_set: String,
    pub analysis: AnalysisReport,
}

impl StudyReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), DataError> {
    fs::write(path, contents).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `report.json`, `report.md`, the two SVG plots and, when given,
/// `residuals.csv`. Returns the written paths.
pub fn emit_report(
    report: &StudyReport,
    residuals: Option<&[ResidualRecord]>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, DataError> {
    fs::create_dir_all(out_dir).map_err(|source| DataError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<(), DataError> {
        let p = out_dir.join(name);
        write_file(&p, &text)?;
        written.push(p);
        Ok(())
    };
    put(REPORT_JSON, report.to_json())?;
    put(REPORT_MD, render_markdown(report))?;
    if let Some(res) = residuals {
        put(RESIDUALS_CSV, residuals_csv(res))?;
        put(SCATTER_SVG, scatter_svg(res, report.analysis.age_threshold))?;
        put(
            HISTOGRAM_SVG,
            histogram_svg(res, report.analysis.age_threshold),
        )?;
    }
    Ok(written)
}

pub fn residuals_csv(records: &[ResidualRecord]) -> String {
    let mut s = String::from(
        "subject_id,actual,predicted,residual,icd_count,htn,dm,mtbi,sad,aad,age_group\n",
    );
    for r in records {
        let flag = |c| u8::from(r.flags.get(c));
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.subject_id,
            r.actual,
            r.predicted,
            r.residual,
            r.icd_count,
            flag(Condition::Htn),
            flag(Condition::Dm),
            flag(Condition::Mtbi),
            flag(Condition::Sad),
            flag(Condition::Aad),
            match r.age_group {
                AgeGroup::AtOrBelow => "at_or_below",
                AgeGroup::Above => "above",
            }
        );
    }
    s
}

/// Parses `residuals.csv` back into records (used by the `report` command).
pub fn parse_residuals_csv(
    text: &str,
    age_threshold: f64,
) -> Result<Vec<ResidualRecord>, DataError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let num = |i: usize| -> Result<f64, DataError> {
            row.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| {
                DataError::Schema(format!("residuals.csv: bad number in column {i}"))
            })
        };
        let mut flags = crate::subject::IcdFlags::default();
        for (k, c) in Condition::ALL.into_iter().enumerate() {
            flags.set(c, row.get(5 + k) == Some("1"));
        }
        let actual = num(1)?;
        out.push(ResidualRecord {
            subject_id: row.get(0).unwrap_or("").to_string(),
            actual,
            predicted: num(2)?,
            residual: num(3)?,
            icd_count: flags.count(),
            flags,
            age_group: AgeGroup::of(actual, age_threshold),
        });
    }
    Ok(out)
}

fn metric_row(label: &str, m: &Outcome<MetricSummary>) -> String {
    match m {
        Outcome::Ok { result } => format!(
            "| {label} | {:.3} | {:.3} | {:.3} |\n",
            result.r2, result.mae, result.mse
        ),
        Outcome::NotApplicable { reason } => {
            format!("| {label} | n/a | n/a | n/a |  <!-- {reason} -->\n")
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

fn moments_table(groups: &[GroupMoments]) -> String {
    let mut s = String::from("| |");
    for g in groups {
        let _ = write!(s, " {} |", g.key);
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(groups.len()));
    s.push('\n');
    let rows: [(&str, fn(&GroupMoments) -> String); 5] = [
        ("Count", |g| g.count.to_string()),
        ("Mean Residual", |g| opt(g.mean)),
        ("Median Residual", |g| opt(g.median)),
        ("Skewness", |g| opt(g.skewness)),
        ("Kurtosis", |g| opt(g.excess_kurtosis)),
    ];
    for (name, f) in rows {
        let _ = write!(s, "| {name} |");
        for g in groups {
            let _ = write!(s, " {} |", f(g));
        }
        s.push('\n');
    }
    s
}

fn anova_line(label: &str, a: &Outcome<crate::stats::AnovaResult>) -> String {
    match a {
        Outcome::Ok { result } => format!(
            "- {label}: F({}, {}) = {:.3}, p = {}\n",
            result.df_between,
            result.df_within,
            result.f,
            format_p(result.p)
        ),
        Outcome::NotApplicable { reason } => format!("- {label}: not applicable ({reason})\n"),
    }
}

/// CV table: one row per candidate, split columns then mean and variance,
/// for each of R², MAE and MSE.
pub fn cv_table(cv: &CvReport) -> String {
    let mut s = String::new();
    let metrics: [(&str, fn(&MetricSummary) -> f64); 3] =
        [("R²", |m| m.r2), ("MAE", |m| m.mae), ("MSE", |m| m.mse)];
    let _ = writeln!(
        s,
        "Metrics from cross-validation of various ensemble models ({}-fold, seed {}).\n",
        cv.k, cv.seed
    );
    s.push_str("| Model | Metric |");
    for i in 1..=cv.k {
        let _ = write!(s, " split {i} |");
    }
    s.push_str(" Mean | Variance |\n|---|---|");
    s.push_str(&"---|".repeat(cv.k + 2));
    s.push('\n');
    for c in &cv.candidates {
        for (name, f) in metrics {
            let _ = write!(s, "| {} | {name} |", c.title);
            if c.mean.is_none() {
                for _ in 0..cv.k + 2 {
                    s.push_str(" failed |");
                }
                s.push('\n');
                continue;
            }
            for m in &c.splits {
                let _ = write!(s, " {:.3} |", f(m));
            }
            let _ = writeln!(
                s,
                " {:.3} | {:.3} |",
                c.mean.as_ref().map_or(f64::NAN, f),
                c.variance.as_ref().map_or(f64::NAN, f)
            );
        }
    }
    if let Some(sel) = cv.selected {
        let _ = writeln!(s, "\nSelected: {}", sel.title());
    }
    s
}

pub fn render_markdown(report: &StudyReport) -> String {
    let mut s = String::from("# Brain age study report\n\n");
    let sp = &report.split;
    let _ = writeln!(
        s,
        "{} complete subjects ({} incomplete); {} for training and {} testing.\n",
        sp.complete, sp.incomplete, sp.train, sp.test
    );
    s.push_str("## Model test set metrics\n\n");
    if let Outcome::NotApplicable { reason } = &report.ensemble_test {
        let _ = writeln!(s, "Absent: {reason}.\n");
    } else {
        s.push_str("| Model | R² | MAE | MSE |\n|---|---|---|---|\n");
        for b in &report.base_models {
            s.push_str(&metric_row(b.modality.as_str(), &b.test));
        }
        s.push_str(&metric_row(
            &format!("ensemble ({})", report.ensemble.spec.title()),
            &report.ensemble_test,
        ));
        s.push('\n');
    }
    if let Some(cv) = &report.cross_validation {
        s.push_str("## Cross-validation\n\n");
        s.push_str(&cv_table(cv));
        s.push('\n');
    }
    let a = &report.analysis;
    let _ = writeln!(
        s,
        "## Statistics for residuals in the {} set\n\nResidual = actual age - predicted age. {} subjects, {} older than {}.\n",
        report.residual_set, a.subjects, a.subjects_over_threshold, a.age_threshold
    );
    s.push_str(&moments_table(&a.by_icd_count));
    let _ = writeln!(s, "\nOlder than {}:\n", a.age_threshold);
    s.push_str(&moments_table(&a.by_icd_count_over_threshold));
    s.push_str("\nBy condition:\n\n");
    s.push_str(&moments_table(&a.by_flag));
    s.push_str("\n## Tests\n\n");
    s.push_str(&anova_line(
        "ANOVA by ICD count, all ages",
        &a.anova_icd_count,
    ));
    s.push_str(&anova_line(
        &format!("ANOVA by ICD count, older than {}", a.age_threshold),
        &a.anova_icd_count_over_threshold,
    ));
    s.push_str(&anova_line(
        "ANOVA by flag combination",
        &a.anova_flag_combination,
    ));
    for f in &a.anova_per_flag {
        s.push_str(&anova_line(
            &format!("{} vs not", f.condition.label()),
            &f.anova,
        ));
    }
    match &a.trend_icd_count {
        Outcome::Ok { result } => {
            let _ = writeln!(
                s,
                "\nTrendlines of the ICD-count groups: F-statistic {:.3}, p-value {}",
                result.f,
                format_p(result.p)
            );
        }
        Outcome::NotApplicable { reason } => {
            let _ = writeln!(s, "\nTrend-line test not applicable: {reason}");
        }
    }
    s
}

const PALETTE: [&str; 6] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02",
];

fn nice_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 100.0);
    }
    let (lo, hi) = ((lo / 10.0).floor() * 10.0, (hi / 10.0).ceil() * 10.0);
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 10.0, hi + 10.0)
    }
}

/// Actual vs predicted age, one colour per ICD count, with the identity line.
pub fn scatter_svg(records: &[ResidualRecord], age_threshold: f64) -> String {
    let (w, h, m) = (640.0, 480.0, 60.0);
    let (lo, hi) = nice_range(records.iter().flat_map(|r| [r.actual, r.predicted]));
    let sx = |v: f64| m + (v - lo) / (hi - lo) * (w - 2.0 * m);
    let sy = |v: f64| h - m - (v - lo) / (hi - lo) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">Actual vs predicted age ({} subjects)</text>"#,
        w / 2.0,
        records.len()
    );
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="4 4"/>"##,
        sx(lo),
        sy(lo),
        sx(hi),
        sy(hi)
    );
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#ccc"/>"##,
        sx(age_threshold.clamp(lo, hi)),
        sy(lo),
        sx(age_threshold.clamp(lo, hi)),
        sy(hi)
    );
    let mut tick = lo;
    while tick <= hi + 1e-9 {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="11">{tick:.0}</text>"#,
            sx(tick),
            h - m + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{tick:.0}</text>"#,
            m - 6.0,
            sy(tick) + 4.0
        );
        tick += 10.0;
    }
    let _ = writeln!(
        s,
        r##"<rect x="{m}" y="{m}" width="{:.1}" height="{:.1}" fill="none" stroke="#333"/>"##,
        w - 2.0 * m,
        h - 2.0 * m
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="13">actual age (years)</text>"#,
        w / 2.0,
        h - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 16 {:.1})">predicted age (years)</text>"#,
        h / 2.0,
        h / 2.0
    );
    for r in records {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" fill-opacity="0.75"/>"#,
            sx(r.actual),
            sy(r.predicted),
            PALETTE[r.icd_count.min(PALETTE.len() - 1)]
        );
    }
    for (k, colour) in PALETTE.iter().enumerate() {
        let y = m + 14.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{y:.1}" r="4" fill="{colour}"/>"#,
            m + 14.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11">{}</text>"#,
            m + 24.0,
            y + 4.0,
            crate::stats::icd_count_key(k)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Residual histograms, one row per condition, split at the age threshold.
pub fn histogram_svg(records: &[ResidualRecord], age_threshold: f64) -> String {
    const BINS: usize = 20;
    let (pw, ph, left, top, gap) = (280.0, 90.0, 70.0, 50.0, 24.0);
    let width = left + 2.0 * pw + gap + 20.0;
    let height = top + Condition::ALL.len() as f64 * (ph + gap) + 30.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in records {
        lo = lo.min(r.residual);
        hi = hi.max(r.residual);
    }
    if !lo.is_finite() || hi <= lo {
        (lo, hi) = (-10.0, 10.0);
    }
    let (lo, hi) = (lo.floor(), hi.ceil());
    let bw = (hi - lo) / BINS as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">Residuals by condition, at or below vs above {age_threshold} years</text>"#,
        width / 2.0
    );
    for (col, (side, label)) in [
        (AgeGroup::AtOrBelow, format!("<= {age_threshold}")),
        (AgeGroup::Above, format!("> {age_threshold}")),
    ]
    .into_iter()
    .enumerate()
    {
        let x0 = left + col as f64 * (pw + gap);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
            x0 + pw / 2.0,
            top - 8.0,
            label.replace('<', "&lt;").replace('>', "&gt;")
        );
        for (row, c) in Condition::ALL.into_iter().enumerate() {
            let y0 = top + row as f64 * (ph + gap);
            let mut counts = [0usize; BINS];
            for r in records
                .iter()
                .filter(|r| r.flags.get(c) && r.age_group == side)
            {
                let b = (((r.residual - lo) / bw) as usize).min(BINS - 1);
                counts[b] += 1;
            }
            let peak = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
            let _ = writeln!(
                s,
                r##"<rect x="{x0:.1}" y="{y0:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#333"/>"##
            );
            if col == 0 {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="12">{}</text>"#,
                    left - 8.0,
                    y0 + ph / 2.0,
                    c.label()
                );
            }
            let n: usize = counts.iter().sum();
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="10">n={n}</text>"#,
                x0 + pw - 4.0,
                y0 + 12.0
            );
            for (b, &cnt) in counts.iter().enumerate() {
                if cnt == 0 {
                    continue;
                }
                let bh = cnt as f64 / peak * (ph - 16.0);
                let _ = writeln!(
                    s,
                    r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{bh:.2}" fill="#4a7fb5"/>"##,
                    x0 + b as f64 * pw / BINS as f64,
                    y0 + ph - bh,
                    pw / BINS as f64 - 1.0
                );
            }
            let zero = x0 + (0.0 - lo) / (hi - lo) * pw;
            if (x0..=x0 + pw).contains(&zero) {
                let _ = writeln!(
                    s,
                    r##"<line x1="{zero:.2}" y1="{y0:.1}" x2="{zero:.2}" y2="{:.1}" stroke="#c00" stroke-dasharray="3 3"/>"##,
                    y0 + ph
                );
            }
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="12">residual (years), range {lo:.0} to {hi:.0}</text>"#,
        width / 2.0,
        height - 10.0
    );
    s.push_str("</svg>\n");
    s
}
