//! Polynomial stacking over the four per-modality age predictions.
//!
//! Feature layout (intercept excluded), highest power first:
//!
//! * without interactions, degree d: `ŷ1^d..ŷ4^d, ŷ1^(d-1)..ŷ4^(d-1), …, ŷ1..ŷ4`
//!   (so degree 3 is `a1..a4, b1..b4, c1..c4` followed by the intercept `d`);
//! * with interactions: every monomial of total degree d, then d-1, …, 1,
//!   each block in lexicographic order of exponents (degree 2 gives
//!   `ŷ1², ŷ1ŷ2, ŷ1ŷ3, ŷ1ŷ4, ŷ2², …, ŷ4², ŷ1..ŷ4`, 14 features).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{kfold_indices, DataError};
use crate::linalg::lstsq;
use crate::stats::{self, RegressionMetrics, StatsError};

pub const BASE_MODELS: usize = 4;
pub type BasePredictions = [f64; BASE_MODELS];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnsembleError {
    #[error("degree {0} is not supported (expected 0-4)")]
    InvalidDegree(u8),
    #[error("the averaging model has no design matrix")]
    NotApplicable,
    #[error("{n} samples cannot determine {width} features plus an intercept")]
    Underdetermined { n: usize, width: usize },
    #[error("inputs contain non-finite values")]
    NonFinite,
    #[error("{predictions} prediction rows but {targets} targets")]
    LengthMismatch { predictions: usize, targets: usize },
    #[error("model has {found} coefficients, expected {expected}")]
    Coefficients { expected: usize, found: usize },
    #[error("cross-validation needs k >= 2 and at least 2k samples (k = {k}, n = {n})")]
    InvalidFolds { k: usize, n: usize },
    #[error("no candidate models")]
    NoCandidates,
}

impl From<DataError> for EnsembleError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidFolds { k, n } => EnsembleError::InvalidFolds { k, n },
            _ => EnsembleError::NonFinite,
        }
    }
}

pub type Result<T> = std::result::Result<T, EnsembleError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub degree: u8,
    #[serde(default)]
    pub include_interactions: bool,
}

impl EnsembleSpec {
    pub fn new(degree: u8, include_interactions: bool) -> Result<Self> {
        if degree > 4 {
            return Err(EnsembleError::InvalidDegree(degree));
        }
        Ok(Self {
            degree,
            include_interactions: include_interactions && degree >= 2,
        })
    }

    pub const AVERAGE: Self = Self {
        degree: 0,
        include_interactions: false,
    };
    pub const LINEAR: Self = Self {
        degree: 1,
        include_interactions: false,
    };
    pub const SECOND: Self = Self {
        degree: 2,
        include_interactions: false,
    };
    pub const THIRD: Self = Self {
        degree: 3,
        include_interactions: false,
    };
    pub const FOURTH: Self = Self {
        degree: 4,
        include_interactions: false,
    };

    /// Average, linear, second, third and fourth order, no interactions.
    pub fn default_candidates() -> Vec<Self> {
        vec![
            Self::AVERAGE,
            Self::LINEAR,
            Self::SECOND,
            Self::THIRD,
            Self::FOURTH,
        ]
    }

    pub fn name(&self) -> String {
        let base = match self.degree {
            0 => "average",
            1 => "linear",
            2 => "second",
            3 => "third",
            4 => "fourth",
            _ => "invalid",
        };
        if self.include_interactions {
            format!("{base}+interactions")
        } else {
            base.to_string()
        }
    }

    /// Human-readable table label.
    pub fn title(&self) -> String {
        let base = match self.degree {
            0 => "Arithmetic Average",
            1 => "Linear",
            2 => "Second Order",
            3 => "Third Order",
            4 => "Fourth Order",
            _ => "Invalid",
        };
        if self.include_interactions {
            format!("{base} (interactions)")
        } else {
            base.to_string()
        }
    }

    /// Number of design features, intercept excluded.
    pub fn width(&self) -> usize {
        if self.include_interactions {
            monomials(self.degree).len()
        } else {
            BASE_MODELS * self.degree as usize
        }
    }
}

impl std::str::FromStr for EnsembleSpec {
    type Err = String;

    /// Accepts `average`, `linear`, `second`, `third`, `fourth` or a digit,
    /// optionally followed by `+interactions`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (base, inter) = match s.strip_suffix("+interactions") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let degree = match base {
            "average" | "avg" | "0" => 0,
            "linear" | "first" | "1" => 1,
            "second" | "2nd" | "2" => 2,
            "third" | "3rd" | "3" => 3,
            "fourth" | "4th" | "4" => 4,
            other => return Err(format!("unknown ensemble {other:?}")),
        };
        EnsembleSpec::new(degree, inter).map_err(|e| e.to_string())
    }
}

/// Exponent tuples for the interaction layout, highest total degree first.
fn monomials(degree: u8) -> Vec<[u8; BASE_MODELS]> {
    let mut out = Vec::new();
    for total in (1..=degree).rev() {
        let mut block = Vec::new();
        collect_exponents(total, 0, [0; BASE_MODELS], &mut block);
        out.extend(block);
    }
    out
}

fn collect_exponents(
    left: u8,
    pos: usize,
    cur: [u8; BASE_MODELS],
    out: &mut Vec<[u8; BASE_MODELS]>,
) {
    if pos == BASE_MODELS - 1 {
        let mut e = cur;
        e[pos] = left;
        out.push(e);
        return;
    }
    for k in (0..=left).rev() {
        let mut e = cur;
        e[pos] = k;
        collect_exponents(left - k, pos + 1, e, out);
    }
}

pub fn design_row(preds: &BasePredictions, spec: &EnsembleSpec) -> Result<Vec<f64>> {
    if spec.degree > 4 {
        return Err(EnsembleError::InvalidDegree(spec.degree));
    }
    if spec.degree == 0 {
        return Err(EnsembleError::NotApplicable);
    }
    if preds.iter().any(|p| !p.is_finite()) {
        return Err(EnsembleError::NonFinite);
    }
    if spec.include_interactions {
        Ok(monomials(spec.degree)
            .iter()
            .map(|e| {
                preds
                    .iter()
                    .zip(e)
                    .map(|(p, &k)| p.powi(i32::from(k)))
                    .product()
            })
            .collect())
    } else {
        let mut row = Vec::with_capacity(spec.width());
        for power in (1..=i32::from(spec.degree)).rev() {
            row.extend(preds.iter().map(|p| p.powi(power)));
        }
        Ok(row)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub rss: f64,
    pub rank: usize,
    /// Ratio of largest to smallest retained pivot of the standardized design.
    #[serde(with = "stats::float_repr")]
    pub condition: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub spec: EnsembleSpec,
    /// Feature coefficients in design order followed by the intercept;
    /// empty for the averaging model.
    pub coefficients: Vec<f64>,
    pub diagnostics: Option<FitDiagnostics>,
}

impl EnsembleModel {
    pub fn average() -> Self {
        Self {
            spec: EnsembleSpec::AVERAGE,
            coefficients: Vec::new(),
            diagnostics: None,
        }
    }

    pub fn intercept(&self) -> Option<f64> {
        self.coefficients.last().copied()
    }
}

fn check_inputs(preds: &[BasePredictions], ages: &[f64]) -> Result<()> {
    if preds.len() != ages.len() {
        return Err(EnsembleError::LengthMismatch {
            predictions: preds.len(),
            targets: ages.len(),
        });
    }
    if preds.iter().flatten().chain(ages).any(|v| !v.is_finite()) {
        return Err(EnsembleError::NonFinite);
    }
    Ok(())
}

/// Ordinary least squares with intercept.
///
/// Columns are centred and scaled before a pivoted QR solve; a rank-deficient
/// design gets the minimum-norm solution in those standardized coordinates.
pub fn fit_ensemble(
    preds: &[BasePredictions],
    ages: &[f64],
    spec: &EnsembleSpec,
) -> Result<EnsembleModel> {
    if spec.degree > 4 {
        return Err(EnsembleError::InvalidDegree(spec.degree));
    }
    check_inputs(preds, ages)?;
    if spec.degree == 0 {
        return Ok(EnsembleModel::average());
    }
    let width = spec.width();
    let n = preds.len();
    if n <= width + 1 {
        return Err(EnsembleError::Underdetermined { n, width });
    }
    let rows: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| design_row(p, spec))
        .collect::<Result<_>>()?;
    let nf = n as f64;
    let y_mean = ages.iter().sum::<f64>() / nf;
    let yc: Vec<f64> = ages.iter().map(|a| a - y_mean).collect();

    let mut means = vec![0.0; width];
    let mut scales = vec![0.0; width];
    let mut columns = Vec::with_capacity(width);
    for j in 0..width {
        let m = rows.iter().map(|r| r[j]).sum::<f64>() / nf;
        let col: Vec<f64> = rows.iter().map(|r| r[j] - m).collect();
        let s = (col.iter().map(|v| v * v).sum::<f64>() / nf).sqrt();
        means[j] = m;
        scales[j] = s;
        columns.push(if s > 0.0 {
            col.iter().map(|v| v / s).collect()
        } else {
            vec![0.0; n]
        });
    }
    let sol = lstsq(&columns, &yc);
    let mut coefficients: Vec<f64> = sol
        .x
        .iter()
        .zip(&scales)
        .map(|(b, s)| if *s > 0.0 { b / s } else { 0.0 })
        .collect();
    let intercept = y_mean
        - coefficients
            .iter()
            .zip(&means)
            .map(|(b, m)| b * m)
            .sum::<f64>();
    coefficients.push(intercept);
    let mut model = EnsembleModel {
        spec: *spec,
        coefficients,
        diagnostics: None,
    };
    let rss = preds
        .iter()
        .zip(ages)
        .map(|(p, a)| (a - predict_ensemble(&model, p).unwrap_or(f64::NAN)).powi(2))
        .sum();
    model.diagnostics = Some(FitDiagnostics {
        rss,
        rank: sol.rank,
        condition: sol.condition,
    });
    Ok(model)
}

/// Evaluates the fitted polynomial; the averaging model returns the mean.
pub fn predict_ensemble(model: &EnsembleModel, preds: &BasePredictions) -> Result<f64> {
    if preds.iter().any(|p| !p.is_finite()) {
        return Err(EnsembleError::NonFinite);
    }
    if model.spec.degree == 0 {
        return Ok(preds.iter().sum::<f64>() / BASE_MODELS as f64);
    }
    let row = design_row(preds, &model.spec)?;
    if model.coefficients.len() != row.len() + 1 {
        return Err(EnsembleError::Coefficients {
            expected: row.len() + 1,
            found: model.coefficients.len(),
        });
    }
    let (beta, intercept) = model.coefficients.split_at(row.len());
    Ok(intercept[0] + row.iter().zip(beta).map(|(x, b)| x * b).sum::<f64>())
}

pub fn predict_many(model: &EnsembleModel, preds: &[BasePredictions]) -> Result<Vec<f64>> {
    preds.iter().map(|p| predict_ensemble(model, p)).collect()
}

/// Largest `|X_jᵀ r| / (‖X_j‖ ‖r‖)` over design columns (intercept included).
pub fn residual_orthogonality(
    model: &EnsembleModel,
    preds: &[BasePredictions],
    ages: &[f64],
) -> Result<f64> {
    let resid: Vec<f64> = preds
        .iter()
        .zip(ages)
        .map(|(p, a)| Ok(a - predict_ensemble(model, p)?))
        .collect::<Result<_>>()?;
    let rnorm = resid.iter().map(|r| r * r).sum::<f64>().sqrt();
    if rnorm == 0.0 {
        return Ok(0.0);
    }
    let rows: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| design_row(p, &model.spec))
        .collect::<Result<_>>()?;
    let width = model.spec.width();
    let mut worst = 0.0f64;
    for j in 0..=width {
        let col: Vec<f64> = if j == width {
            vec![1.0; rows.len()]
        } else {
            rows.iter().map(|r| r[j]).collect()
        };
        let cnorm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if cnorm == 0.0 {
            continue;
        }
        let dot: f64 = col.iter().zip(&resid).map(|(c, r)| c * r).sum();
        worst = worst.max(dot.abs() / (cnorm * rnorm));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub r2: f64,
    pub mae: f64,
    pub mse: f64,
}

impl From<RegressionMetrics> for MetricSummary {
    fn from(m: RegressionMetrics) -> Self {
        Self {
            r2: m.r2,
            mae: m.mae,
            mse: m.mse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CandidateStatus {
    Ok,
    Failed { fold: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateCv {
    pub spec: EnsembleSpec,
    pub name: String,
    pub title: String,
    pub status: CandidateStatus,
    /// One entry per held-out fold, in fold order.
    pub splits: Vec<MetricSummary>,
    pub mean: Option<MetricSummary>,
    /// Sample variance across splits (denominator k - 1).
    pub variance: Option<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub seed: u64,
    pub samples: usize,
    pub fold_sizes: Vec<usize>,
    pub candidates: Vec<CandidateCv>,
    pub selected: Option<EnsembleSpec>,
}

impl CvReport {
    pub fn candidate(&self, spec: &EnsembleSpec) -> Option<&CandidateCv> {
        self.candidates.iter().find(|c| c.spec == *spec)
    }
}

fn summarize(splits: &[MetricSummary]) -> (MetricSummary, MetricSummary) {
    let pick = |f: fn(&MetricSummary) -> f64| splits.iter().map(f).collect::<Vec<f64>>();
    let (r2, mae, mse) = (pick(|m| m.r2), pick(|m| m.mae), pick(|m| m.mse));
    (
        MetricSummary {
            r2: stats::mean(&r2),
            mae: stats::mean(&mae),
            mse: stats::mean(&mse),
        },
        MetricSummary {
            r2: stats::sample_variance(&r2),
            mae: stats::sample_variance(&mae),
            mse: stats::sample_variance(&mse),
        },
    )
}

/// k-fold cross-validation of each candidate; selects the highest mean R²,
/// then the lower mean MSE, then the lower degree.
pub fn cross_validate_select(
    preds: &[BasePredictions],
    ages: &[f64],
    candidates: &[EnsembleSpec],
    k: usize,
    seed: u64,
) -> Result<CvReport> {
    check_inputs(preds, ages)?;
    if candidates.is_empty() {
        return Err(EnsembleError::NoCandidates);
    }
    let n = preds.len();
    if k < 2 || n < 2 * k {
        return Err(EnsembleError::InvalidFolds { k, n });
    }
    let folds = kfold_indices(n, k, seed)?;
    let mut held_out = vec![usize::MAX; n];
    for (f, fold) in folds.iter().enumerate() {
        for &i in fold {
            held_out[i] = f;
        }
    }

    let mut results = Vec::with_capacity(candidates.len());
    for spec in candidates {
        let mut splits = Vec::with_capacity(k);
        let mut status = CandidateStatus::Ok;
        for (f, fold) in folds.iter().enumerate() {
            let (mut tp, mut ta) = (Vec::new(), Vec::new());
            for i in (0..n).filter(|&i| held_out[i] != f) {
                tp.push(preds[i]);
                ta.push(ages[i]);
            }
            let outcome = fit_ensemble(&tp, &ta, spec).and_then(|model| {
                let vp: Vec<BasePredictions> = fold.iter().map(|&i| preds[i]).collect();
                let va: Vec<f64> = fold.iter().map(|&i| ages[i]).collect();
                let yhat = predict_many(&model, &vp)?;
                Ok((va, yhat))
            });
            match outcome {
                Ok((va, yhat)) => match stats::regression_metrics(&va, &yhat) {
                    Ok(m) => splits.push(m.into()),
                    Err(e) => {
                        status = CandidateStatus::Failed {
                            fold: f,
                            reason: stats_reason(e),
                        };
                        break;
                    }
                },
                Err(e) => {
                    status = CandidateStatus::Failed {
                        fold: f,
                        reason: e.to_string(),
                    };
                    break;
                }
            }
        }
        let (mean, variance) = if status == CandidateStatus::Ok {
            let (m, v) = summarize(&splits);
            (Some(m), Some(v))
        } else {
            (None, None)
        };
        results.push(CandidateCv {
            spec: *spec,
            name: spec.name(),
            title: spec.title(),
            status,
            splits,
            mean,
            variance,
        });
    }

    let selected = results
        .iter()
        .filter_map(|c| c.mean.map(|m| (c.spec, m)))
        .min_by(|(sa, a), (sb, b)| {
            b.r2.total_cmp(&a.r2)
                .then(a.mse.total_cmp(&b.mse))
                .then(sa.degree.cmp(&sb.degree))
                .then(sa.include_interactions.cmp(&sb.include_interactions))
        })
        .map(|(s, _)| s);

    Ok(CvReport {
        k,
        seed,
        samples: n,
        fold_sizes: folds.iter().map(Vec::len).collect(),
        candidates: results,
        selected,
    })
}

fn stats_reason(e: StatsError) -> String {
    e.to_string()
}
