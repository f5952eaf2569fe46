use brainage::ensemble::{
    cross_validate_select, fit_ensemble, predict_many, EnsembleSpec, MetricSummary,
};
use brainage::experiment::StackingSource;
use brainage::report::{
    emit_report, parse_residuals_csv, render_markdown, BaseModelMetrics, SplitSummary, StudyReport,
    REPORT_SCHEMA_VERSION,
};
use brainage::stats::{
    compute_residuals, format_p, regression_metrics, residual_group_report, Outcome, Prediction,
    ResidualRecord, TrendMode,
};
use brainage::{Condition, IcdFlags, Modality};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn study(test_rows: usize) -> (StudyReport, Vec<ResidualRecord>) {
    let table = StackingSource::default().table(120 + test_rows, 1);
    let (train, test) = table.split_at(120);
    let (xtr, ytr): (Vec<_>, Vec<_>) = train.iter().copied().unzip();
    let (xte, yte): (Vec<_>, Vec<_>) = test.iter().copied().unzip();
    let ensemble = fit_ensemble(&xtr, &ytr, &EnsembleSpec::THIRD).unwrap();
    let ptr = predict_many(&ensemble, &xtr).unwrap();
    let pte = predict_many(&ensemble, &xte).unwrap();
    let m = |a: &[f64], p: &[f64]| match regression_metrics(a, p) {
        Ok(r) => Outcome::Ok {
            result: MetricSummary::from(r),
        },
        Err(e) => Outcome::NotApplicable {
            reason: e.to_string(),
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let preds: Vec<Prediction> = ytr
        .iter()
        .zip(&ptr)
        .enumerate()
        .map(|(i, (&a, &p))| {
            let mut flags = IcdFlags::default();
            for c in Condition::ALL {
                flags.set(c, rng.random_bool(0.25));
            }
            Prediction {
                subject_id: format!("S{i:04}"),
                actual: a,
                predicted: p,
                flags,
            }
        })
        .collect();
    let residuals = compute_residuals(&preds, 49.0);
    let report = StudyReport {
        schema_version: REPORT_SCHEMA_VERSION,
        generator: "test".into(),
        split: SplitSummary {
            complete: 120 + test_rows,
            incomplete: 0,
            train: 120,
            test: test_rows,
            train_fraction: 0.8,
            seed: 0,
        },
        base_models: Modality::ALL
            .iter()
            .map(|&md| {
                let col = |x: &[[f64; 4]]| x.iter().map(|r| r[md.index()]).collect::<Vec<_>>();
                BaseModelMetrics {
                    modality: md,
                    train: m(&ytr, &col(&xtr)),
                    test: m(&yte, &col(&xte)),
                }
            })
            .collect(),
        ensemble_train: m(&ytr, &ptr),
        ensemble_test: m(&yte, &pte),
        ensemble,
        cross_validation: Some(
            cross_validate_select(&xtr, &ytr, &EnsembleSpec::default_candidates(), 5, 0).unwrap(),
        ),
        residual_set: "train".into(),
        analysis: residual_group_report(&residuals, 49.0, TrendMode::SlopesAndIntercepts),
    };
    (report, residuals)
}

#[test]
fn json_round_trips_byte_identically() {
    let (report, _) = study(30);
    let json = report.to_json();
    let back = StudyReport::from_json(&json).unwrap();
    assert_eq!(back, report);
    assert_eq!(back.to_json(), json);
}

#[test]
fn emitted_files_and_row_count() {
    let (report, residuals) = study(30);
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&report, Some(&residuals), dir.path()).unwrap();
    let names: Vec<String> = files
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(
        names,
        [
            "report.json",
            "report.md",
            "residuals.csv",
            "scatter_actual_vs_predicted.svg",
            "residual_hist_by_flag.svg"
        ]
    );
    let csv = std::fs::read_to_string(dir.path().join("residuals.csv")).unwrap();
    assert_eq!(csv.lines().count(), residuals.len() + 1);
    let parsed = parse_residuals_csv(&csv, 49.0).unwrap();
    assert_eq!(parsed.len(), residuals.len());
    for (a, b) in parsed.iter().zip(&residuals) {
        assert_eq!(a.subject_id, b.subject_id);
        assert_eq!(a.residual, b.residual);
        assert_eq!(a.flags, b.flags);
    }
    for svg in [
        "scatter_actual_vs_predicted.svg",
        "residual_hist_by_flag.svg",
    ] {
        let text = std::fs::read_to_string(dir.path().join(svg)).unwrap();
        assert!(
            text.starts_with("<svg") && text.trim_end().ends_with("</svg>"),
            "{svg}"
        );
    }
    let hist = std::fs::read_to_string(dir.path().join("residual_hist_by_flag.svg")).unwrap();
    assert!(hist.contains("&lt;= 49") && hist.contains("&gt; 49"));
}

#[test]
fn rendering_is_deterministic() {
    let (a, ra) = study(30);
    let (b, rb) = study(30);
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    emit_report(&a, Some(&ra), da.path()).unwrap();
    emit_report(&b, Some(&rb), db.path()).unwrap();
    for f in [
        "report.json",
        "report.md",
        "residuals.csv",
        "scatter_actual_vs_predicted.svg",
        "residual_hist_by_flag.svg",
    ] {
        assert_eq!(
            std::fs::read(da.path().join(f)).unwrap(),
            std::fs::read(db.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn empty_test_set_marks_section_absent() {
    let (report, residuals) = study(0);
    assert!(matches!(
        report.ensemble_test,
        Outcome::NotApplicable { .. }
    ));
    let md = render_markdown(&report);
    let section = md.split("## Model test set metrics").nth(1).unwrap();
    assert!(section.trim_start().starts_with("Absent:"), "{section}");
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, Some(&residuals), dir.path()).unwrap();
    let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert!(json.contains("\"status\": \"not_applicable\""));
}

#[test]
fn reference_formatting() {
    // the reference test table row, the narrative p-values and the trend caption
    assert_eq!(format_p(0.188), "0.1880");
    assert_eq!(format_p(0.0069), "0.0069");
    assert_eq!(format_p(0.0), "<0.0001");
    let (mut report, _) = study(30);
    report.ensemble_test = Outcome::Ok {
        result: MetricSummary {
            r2: 0.816,
            mae: 5.450,
            mse: 48.348,
        },
    };
    let md = render_markdown(&report);
    assert!(
        md.contains("| ensemble (Third Order) | 0.816 | 5.450 | 48.348 |"),
        "{md}"
    );
    assert!(
        md.contains("Trendlines of the ICD-count groups: F-statistic ")
            || md.contains("Trend-line test not applicable")
    );
    assert!(md.contains("| | 0 codes | 1 code | 2 codes |"));
    for row in ["Mean Residual", "Median Residual", "Skewness", "Kurtosis"] {
        assert!(md.contains(&format!("| {row} |")), "{row}");
    }
    assert!(md.contains(
        "| Model | Metric | split 1 | split 2 | split 3 | split 4 | split 5 | Mean | Variance |"
    ));
}
