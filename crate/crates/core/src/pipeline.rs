//! End-to-end commands: cohort synthesis, per-modality training, ensemble
//! fitting, cross-validated selection, residual analysis, bias-variance
//! experiments and report rendering. Every command writes a run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cnn::{
    build_model, mirror_augment, predict_ages, train_cnn, CnnConfig, CnnError, CnnModel,
};
use crate::dataio::{
    self, load_image, load_metadata, load_model, save_model, split_indices, DataError,
};
use crate::ensemble::{
    cross_validate_select, fit_ensemble, predict_many, BasePredictions, CvReport, EnsembleError,
    EnsembleModel, EnsembleSpec, MetricSummary,
};
use crate::experiment::{ensemble_trainer, sample_mean_trainer, ConstantSource, StackingSource};
use crate::modality::Modality;
use crate::raster::LabeledImage;
use crate::report::{
    self, emit_report, parse_residuals_csv, BaseModelMetrics, SplitSummary, StudyReport,
    REPORT_SCHEMA_VERSION,
};
use crate::stats::{
    self, bias_variance_decompose, compute_residuals, residual_group_report, BiasVarianceEstimate,
    Outcome, Prediction, StatsError, TrendMode, DEFAULT_AGE_THRESHOLD,
};
use crate::subject::SubjectRecord;
use crate::synth::{self, Cohort, SynthConfig, SynthError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Cnn(#[from] CnnError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| {
        PipelineError::Data(DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io(path))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool: String,
    pub command: String,
    /// Every option of the command, defaults included.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timings_seconds: BTreeMap<String, f64>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<FileDigest>,
    timings: BTreeMap<String, f64>,
    clock: Instant,
}

impl ManifestBuilder {
    fn new<C: Serialize>(command: &str, config: &C) -> Self {
        Self {
            command: command.to_string(),
            config: serde_json::to_value(config).expect("serializable config"),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            timings: BTreeMap::new(),
            clock: Instant::now(),
        }
    }

    fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// One digest over many files (e.g. all images of a cohort).
    fn input_set(&mut self, label: &Path, paths: &[PathBuf]) -> Result<()> {
        let mut h = Sha256::new();
        for p in paths {
            h.update(p.to_string_lossy().as_bytes());
            h.update(sha256_file(p)?.as_bytes());
        }
        self.inputs.push(FileDigest {
            path: label.to_path_buf(),
            sha256: hex::encode(h.finalize()),
        });
        Ok(())
    }

    fn lap(&mut self, stage: &str) {
        self.timings
            .insert(stage.to_string(), self.clock.elapsed().as_secs_f64());
    }

    fn finish(mut self, out_dir: &Path, name: &str, outputs: &[PathBuf]) -> Result<PathBuf> {
        self.lap("total");
        let outputs = outputs
            .iter()
            .map(|p| {
                Ok(FileDigest {
                    path: p.clone(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            tool: format!("brainage {}", env!("CARGO_PKG_VERSION")),
            command: self.command,
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs,
            timings_seconds: self.timings,
        };
        let path = out_dir.join(name);
        write(&path, &to_json(&manifest))?;
        Ok(path)
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io(dir))
}

/// A cohort directory (containing `metadata.csv`) or the CSV itself.
pub fn resolve_metadata(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(synth::METADATA_FILE)
    } else {
        data.to_path_buf()
    }
}

/// Complete records split into train and test, plus the incomplete records.
#[derive(Debug, Clone)]
pub struct CohortSplit {
    pub train: Vec<SubjectRecord>,
    pub test: Vec<SubjectRecord>,
    pub incomplete: Vec<SubjectRecord>,
    pub train_fraction: f64,
    pub seed: u64,
}

impl CohortSplit {
    pub fn summary(&self) -> SplitSummary {
        SplitSummary {
            complete: self.train.len() + self.test.len(),
            incomplete: self.incomplete.len(),
            train: self.train.len(),
            test: self.test.len(),
            train_fraction: self.train_fraction,
            seed: self.seed,
        }
    }
}

pub fn split_cohort(
    records: &[SubjectRecord],
    train_fraction: f64,
    seed: u64,
) -> Result<CohortSplit> {
    let (complete, incomplete): (Vec<_>, Vec<_>) =
        records.iter().cloned().partition(|r| r.is_complete());
    let (tr, te) = split_indices(complete.len(), train_fraction, seed)?;
    Ok(CohortSplit {
        train: tr.iter().map(|&i| complete[i].clone()).collect(),
        test: te.iter().map(|&i| complete[i].clone()).collect(),
        incomplete,
        train_fraction,
        seed,
    })
}

fn load_cohort(
    data: &Path,
    train_fraction: f64,
    seed: u64,
) -> Result<(PathBuf, Vec<SubjectRecord>, CohortSplit)> {
    let meta = resolve_metadata(data);
    let (records, _) = load_metadata(&meta)?;
    let split = split_cohort(&records, train_fraction, seed)?;
    Ok((meta, records, split))
}

pub fn model_file(models_dir: &Path, modality: Modality) -> PathBuf {
    models_dir.join(format!("{}.barb", modality.as_str()))
}

pub fn load_models(models_dir: &Path) -> Result<Vec<CnnModel>> {
    Modality::ALL
        .iter()
        .map(|&m| {
            let model = load_model(model_file(models_dir, m))?;
            if model.modality != m {
                return Err(PipelineError::Invalid(format!(
                    "{} holds a {} model",
                    model_file(models_dir, m).display(),
                    model.modality
                )));
            }
            Ok(model)
        })
        .collect()
}

fn image_paths(records: &[SubjectRecord]) -> Vec<PathBuf> {
    records
        .iter()
        .flat_map(|r| r.images.iter().flatten().cloned())
        .collect()
}

/// Base-model predictions in [`Modality::ALL`] order for complete records.
pub fn base_predictions(
    models: &[CnnModel],
    records: &[SubjectRecord],
) -> Result<Vec<BasePredictions>> {
    let mut out = vec![[0.0; 4]; records.len()];
    for model in models {
        let m = model.modality;
        let side = model.config.input_side;
        let images = records
            .iter()
            .map(|r| {
                let path = r.image(m).ok_or_else(|| {
                    PipelineError::Invalid(format!("{} has no {m} image", r.subject_id))
                })?;
                Ok(load_image(path, side)?)
            })
            .collect::<Result<Vec<_>>>()?;
        for (row, p) in out.iter_mut().zip(predict_ages(model, &images)?) {
            row[m.index()] = p;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasePredictionRow {
    pub subject_id: String,
    pub age_years: f64,
    pub split: String,
    pub preds: BasePredictions,
}

pub const BASE_PREDICTIONS_CSV: &str = "base_predictions.csv";

pub fn write_base_predictions(path: &Path, rows: &[BasePredictionRow]) -> Result<()> {
    let mut s = String::from("subject_id,age_years,split,flair_ac,flair_lv,t2_ac,t2_lv\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.subject_id, r.age_years, r.split, r.preds[0], r.preds[1], r.preds[2], r.preds[3]
        );
    }
    write(path, &s)
}

/// Reads a base-prediction table; the `split` column is optional.
pub fn read_base_predictions(path: &Path) -> Result<Vec<BasePredictionRow>> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(DataError::from)?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let need = |name: &str| {
        col(name).ok_or_else(|| {
            PipelineError::Data(DataError::Schema(format!(
                "{}: missing column {name:?}",
                path.display()
            )))
        })
    };
    let id = need("subject_id")?;
    let age = need("age_years")?;
    let split = col("split");
    let pcols = Modality::ALL.map(|m| need(m.as_str()));
    let pcols = [
        pcols[0].as_ref(),
        pcols[1].as_ref(),
        pcols[2].as_ref(),
        pcols[3].as_ref(),
    ];
    let mut idx = [0usize; 4];
    for (slot, c) in idx.iter_mut().zip(pcols) {
        *slot = *c.map_err(|e| PipelineError::Invalid(e.to_string()))?;
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(DataError::from)?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    PipelineError::Invalid(format!(
                        "{}: bad number on line {}",
                        path.display(),
                        line + 2
                    ))
                })
        };
        rows.push(BasePredictionRow {
            subject_id: rec.get(id).unwrap_or("").to_string(),
            age_years: num(age)?,
            split: split.and_then(|s| rec.get(s)).unwrap_or("").to_string(),
            preds: [num(idx[0])?, num(idx[1])?, num(idx[2])?, num(idx[3])?],
        });
    }
    Ok(rows)
}

fn outcome<T>(r: std::result::Result<T, StatsError>) -> Outcome<T> {
    match r {
        Ok(result) => Outcome::Ok { result },
        Err(e) => Outcome::NotApplicable {
            reason: e.to_string(),
        },
    }
}

fn metrics(actual: &[f64], predicted: &[f64]) -> Outcome<MetricSummary> {
    outcome(stats::regression_metrics(actual, predicted).map(MetricSummary::from))
}

// ---------------------------------------------------------------- synth

pub fn run_synth(config: &SynthConfig, out: &Path) -> Result<(Cohort, PathBuf)> {
    let mut mb = ManifestBuilder::new("synth", config);
    mb.seed("master", config.seed);
    ensure_dir(out)?;
    let cohort = synth::generate_cohort(config, out)?;
    mb.lap("generate");
    let mut outputs = vec![cohort.metadata_path.clone(), cohort.truth_path.clone()];
    let images = image_paths(&cohort.records);
    let manifest = {
        // paths relative to the cohort root so a moved cohort keeps its digest
        let mut h = Sha256::new();
        for p in &images {
            h.update(
                p.strip_prefix(out)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .as_bytes(),
            );
            h.update(sha256_file(p)?.as_bytes());
        }
        let digest_path = out.join("images.sha256");
        write(
            &digest_path,
            &format!("{}  {}\n", hex::encode(h.finalize()), "images"),
        )?;
        outputs.push(digest_path);
        mb.finish(out, "manifest_synth.json", &outputs)?
    };
    Ok((cohort, manifest))
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOptions {
    pub data: PathBuf,
    pub modality: Modality,
    pub cnn: CnnConfig,
    pub train_fraction: f64,
    pub split_seed: u64,
    /// Also train on incomplete records that have this modality.
    pub use_incomplete: bool,
    pub mirror: bool,
    pub out: PathBuf,
}

impl TrainOptions {
    pub fn new(data: impl Into<PathBuf>, modality: Modality, out: impl Into<PathBuf>) -> Self {
        Self {
            data: data.into(),
            modality,
            cnn: CnnConfig::default(),
            train_fraction: 0.8,
            split_seed: 0,
            use_incomplete: true,
            mirror: true,
            out: out.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: CnnModel,
    pub model_path: PathBuf,
    pub history_path: PathBuf,
    pub manifest_path: PathBuf,
    pub training_images: usize,
}

fn training_set(
    sources: &[&SubjectRecord],
    m: Modality,
    side: usize,
    mirror: bool,
) -> Result<Vec<LabeledImage>> {
    let base = sources
        .iter()
        .filter_map(|r| r.image(m).map(|path| (r, path)))
        .map(|(r, path)| {
            Ok(LabeledImage {
                image: load_image(path, side)?,
                age: r.age_years,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(if mirror { mirror_augment(&base) } else { base })
}

pub fn run_train(opts: &TrainOptions) -> Result<TrainOutput> {
    let mut mb = ManifestBuilder::new("train", opts);
    mb.seed("cnn", opts.cnn.seed);
    mb.seed("split", opts.split_seed);
    let (meta, _, split) = load_cohort(&opts.data, opts.train_fraction, opts.split_seed)?;
    mb.input(&meta)?;
    let m = opts.modality;
    let mut sources: Vec<&SubjectRecord> = split.train.iter().collect();
    if opts.use_incomplete {
        sources.extend(split.incomplete.iter().filter(|r| r.image(m).is_some()));
    }
    let paths: Vec<PathBuf> = sources.iter().filter_map(|r| r.image(m).cloned()).collect();
    mb.input_set(&opts.data.join(format!("images[{m}]")), &paths)?;
    let set = training_set(&sources, m, opts.cnn.input_side, opts.mirror)?;
    mb.lap("load");
    let model = train_cnn(build_model(&opts.cnn, m)?, &set)?;
    mb.lap("train");

    ensure_dir(&opts.out)?;
    let model_path = model_file(&opts.out, m);
    save_model(&model, &model_path)?;
    let history_path = opts.out.join(format!("{}_history.csv", m.as_str()));
    let mut hist = String::from("epoch,train_mse\n");
    for (e, v) in model.history.iter().enumerate() {
        let _ = writeln!(hist, "{},{v}", e + 1);
    }
    write(&history_path, &hist)?;
    let manifest_path = mb.finish(
        &opts.out,
        &format!("manifest_train_{}.json", m.as_str()),
        &[model_path.clone(), history_path.clone()],
    )?;
    Ok(TrainOutput {
        model,
        model_path,
        history_path,
        manifest_path,
        training_images: set.len(),
    })
}

// ---------------------------------------------------------------- ensemble-fit

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleFitOptions {
    pub data: PathBuf,
    pub models: PathBuf,
    pub spec: EnsembleSpec,
    pub train_fraction: f64,
    pub split_seed: u64,
    /// Fit the stacker on out-of-fold base predictions: each modality is
    /// retrained this many times, once per held-out fold of the training
    /// split, with the stored model's configuration.
    #[serde(default)]
    pub out_of_fold: Option<usize>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFile {
    pub model: EnsembleModel,
    pub train: Outcome<MetricSummary>,
    pub test: Outcome<MetricSummary>,
}

pub const ENSEMBLE_JSON: &str = "ensemble.json";

struct Stacked {
    meta: PathBuf,
    split: CohortSplit,
    train_x: Vec<BasePredictions>,
    test_x: Vec<BasePredictions>,
    rows: Vec<BasePredictionRow>,
}

fn stack(data: &Path, models_dir: &Path, frac: f64, seed: u64) -> Result<(Stacked, Vec<CnnModel>)> {
    let (meta, _, split) = load_cohort(data, frac, seed)?;
    let models = load_models(models_dir)?;
    let train_x = base_predictions(&models, &split.train)?;
    let test_x = base_predictions(&models, &split.test)?;
    let mut rows = Vec::new();
    for (name, recs, xs) in [
        ("train", &split.train, &train_x),
        ("test", &split.test, &test_x),
    ] {
        for (r, x) in recs.iter().zip(xs) {
            rows.push(BasePredictionRow {
                subject_id: r.subject_id.clone(),
                age_years: r.age_years,
                split: name.to_string(),
                preds: *x,
            });
        }
    }
    Ok((
        Stacked {
            meta,
            split,
            train_x,
            test_x,
            rows,
        },
        models,
    ))
}

/// Base predictions for every training record, each made by networks that
/// never saw it. Incomplete records with the modality train every fold.
fn out_of_fold_predictions(
    split: &CohortSplit,
    models: &[CnnModel],
    k: usize,
    seed: u64,
) -> Result<Vec<BasePredictions>> {
    let folds = dataio::kfold_indices(split.train.len(), k, seed)?;
    let mut out = vec![[0.0; 4]; split.train.len()];
    for (f, held) in folds.iter().enumerate() {
        let held_set: std::collections::BTreeSet<usize> = held.iter().copied().collect();
        let rest: Vec<&SubjectRecord> = (0..split.train.len())
            .filter(|i| !held_set.contains(i))
            .map(|i| &split.train[i])
            .chain(split.incomplete.iter())
            .collect();
        let held_records: Vec<SubjectRecord> =
            held.iter().map(|&i| split.train[i].clone()).collect();
        for model in models {
            let m = model.modality;
            let config = CnnConfig {
                seed: model.config.seed.wrapping_add(1 + f as u64),
                ..model.config.clone()
            };
            let set = training_set(&rest, m, config.input_side, true)?;
            let fold_model = train_cnn(build_model(&config, m)?, &set)?;
            let images = held_records
                .iter()
                .map(|r| {
                    let path = r.image(m).ok_or_else(|| {
                        PipelineError::Invalid(format!("{} lacks {m}", r.subject_id))
                    })?;
                    Ok(load_image(path, config.input_side)?)
                })
                .collect::<Result<Vec<_>>>()?;
            for (&i, p) in held.iter().zip(predict_ages(&fold_model, &images)?) {
                out[i][m.index()] = p;
            }
        }
    }
    Ok(out)
}

fn ages(records: &[SubjectRecord]) -> Vec<f64> {
    records.iter().map(|r| r.age_years).collect()
}

pub fn run_ensemble_fit(opts: &EnsembleFitOptions) -> Result<(EnsembleFile, PathBuf)> {
    let mut mb = ManifestBuilder::new("ensemble-fit", opts);
    mb.seed("split", opts.split_seed);
    let (mut st, models) = stack(
        &opts.data,
        &opts.models,
        opts.train_fraction,
        opts.split_seed,
    )?;
    mb.input(&st.meta)?;
    for m in Modality::ALL {
        mb.input(&model_file(&opts.models, m))?;
    }
    mb.lap("predict");
    if let Some(k) = opts.out_of_fold {
        mb.seed("folds", opts.split_seed);
        st.train_x = out_of_fold_predictions(&st.split, &models, k, opts.split_seed)?;
        for (row, x) in st
            .rows
            .iter_mut()
            .filter(|r| r.split == "train")
            .zip(&st.train_x)
        {
            row.preds = *x;
        }
        mb.lap("out_of_fold");
    }
    let (ytr, yte) = (ages(&st.split.train), ages(&st.split.test));
    let model = fit_ensemble(&st.train_x, &ytr, &opts.spec)?;
    let file = EnsembleFile {
        train: metrics(&ytr, &predict_many(&model, &st.train_x)?),
        test: metrics(&yte, &predict_many(&model, &st.test_x)?),
        model,
    };
    ensure_dir(&opts.out)?;
    let ens = opts.out.join(ENSEMBLE_JSON);
    write(&ens, &to_json(&file))?;
    let preds = opts.out.join(BASE_PREDICTIONS_CSV);
    write_base_predictions(&preds, &st.rows)?;
    let manifest = mb.finish(&opts.out, "manifest_ensemble_fit.json", &[ens, preds])?;
    Ok((file, manifest))
}

// ---------------------------------------------------------------- cv-select

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CvSource {
    /// A base-prediction table; rows marked `test` are left out.
    Predictions { path: PathBuf },
    /// Predict with trained models on the training split of a cohort.
    Cohort {
        data: PathBuf,
        models: PathBuf,
        train_fraction: f64,
        split_seed: u64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvOptions {
    pub source: CvSource,
    pub candidates: Vec<EnsembleSpec>,
    pub folds: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub const CV_JSON: &str = "cv_report.json";
pub const CV_MD: &str = "cv_table.md";

pub fn run_cv_select(opts: &CvOptions) -> Result<(CvReport, PathBuf)> {
    let mut mb = ManifestBuilder::new("cv-select", opts);
    mb.seed("folds", opts.seed);
    let (x, y) = match &opts.source {
        CvSource::Predictions { path } => {
            mb.input(path)?;
            let rows: Vec<BasePredictionRow> = read_base_predictions(path)?
                .into_iter()
                .filter(|r| r.split != "test")
                .collect();
            (
                rows.iter().map(|r| r.preds).collect(),
                rows.iter().map(|r| r.age_years).collect(),
            )
        }
        CvSource::Cohort {
            data,
            models,
            train_fraction,
            split_seed,
        } => {
            mb.seed("split", *split_seed);
            let (meta, _, split) = load_cohort(data, *train_fraction, *split_seed)?;
            mb.input(&meta)?;
            let models = load_models(models)?;
            (base_predictions(&models, &split.train)?, ages(&split.train))
        }
    };
    let report = cross_validate_select(&x, &y, &opts.candidates, opts.folds, opts.seed)?;
    mb.lap("cross_validate");
    ensure_dir(&opts.out)?;
    let json = opts.out.join(CV_JSON);
    write(&json, &to_json(&report))?;
    let md = opts.out.join(CV_MD);
    write(&md, &report::cv_table(&report))?;
    let manifest = mb.finish(&opts.out, "manifest_cv_select.json", &[json, md])?;
    Ok((report, manifest))
}

// ---------------------------------------------------------------- analyze

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResidualSet {
    #[default]
    Train,
    Test,
    All,
}

impl ResidualSet {
    pub fn as_str(self) -> &'static str {
        match self {
            ResidualSet::Train => "train",
            ResidualSet::Test => "test",
            ResidualSet::All => "all",
        }
    }
}

impl std::str::FromStr for ResidualSet {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(ResidualSet::Train),
            "test" => Ok(ResidualSet::Test),
            "all" => Ok(ResidualSet::All),
            other => Err(format!(
                "unknown residual set {other:?}; expected train, test or all"
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyzeOptions {
    pub data: PathBuf,
    pub models: PathBuf,
    pub spec: EnsembleSpec,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub cv_candidates: Vec<EnsembleSpec>,
    pub cv_folds: usize,
    pub cv_seed: u64,
    pub residual_set: ResidualSet,
    pub age_threshold: f64,
    pub trend_mode: TrendMode,
    pub out: PathBuf,
}

impl AnalyzeOptions {
    pub fn new(
        data: impl Into<PathBuf>,
        models: impl Into<PathBuf>,
        out: impl Into<PathBuf>,
    ) -> Self {
        Self {
            data: data.into(),
            models: models.into(),
            spec: EnsembleSpec::THIRD,
            train_fraction: 0.8,
            split_seed: 0,
            cv_candidates: EnsembleSpec::default_candidates(),
            cv_folds: 5,
            cv_seed: 0,
            residual_set: ResidualSet::Train,
            age_threshold: DEFAULT_AGE_THRESHOLD,
            trend_mode: TrendMode::SlopesAndIntercepts,
            out: out.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnalyzeOutput {
    pub report: StudyReport,
    pub residuals: Vec<stats::ResidualRecord>,
    pub files: Vec<PathBuf>,
    pub manifest_path: PathBuf,
}

pub fn run_analyze(opts: &AnalyzeOptions) -> Result<AnalyzeOutput> {
    let mut mb = ManifestBuilder::new("analyze", opts);
    mb.seed("split", opts.split_seed);
    mb.seed("cv", opts.cv_seed);
    let (st, models) = stack(
        &opts.data,
        &opts.models,
        opts.train_fraction,
        opts.split_seed,
    )?;
    mb.input(&st.meta)?;
    for m in Modality::ALL {
        mb.input(&model_file(&opts.models, m))?;
    }
    mb.lap("predict");
    let (ytr, yte) = (ages(&st.split.train), ages(&st.split.test));
    let ensemble = fit_ensemble(&st.train_x, &ytr, &opts.spec)?;
    let ptr = predict_many(&ensemble, &st.train_x)?;
    let pte = predict_many(&ensemble, &st.test_x)?;
    let base_models = models
        .iter()
        .map(|m| {
            let col = |xs: &[BasePredictions]| {
                xs.iter().map(|x| x[m.modality.index()]).collect::<Vec<_>>()
            };
            BaseModelMetrics {
                modality: m.modality,
                train: metrics(&ytr, &col(&st.train_x)),
                test: metrics(&yte, &col(&st.test_x)),
            }
        })
        .collect();
    let cross_validation = if opts.cv_candidates.is_empty() {
        None
    } else {
        Some(cross_validate_select(
            &st.train_x,
            &ytr,
            &opts.cv_candidates,
            opts.cv_folds,
            opts.cv_seed,
        )?)
    };

    let mut chosen: Vec<Prediction> = Vec::new();
    let mut add = |recs: &[SubjectRecord], preds: &[f64]| {
        chosen.extend(recs.iter().zip(preds).map(|(r, &p)| Prediction {
            subject_id: r.subject_id.clone(),
            actual: r.age_years,
            predicted: p,
            flags: r.flags,
        }))
    };
    match opts.residual_set {
        ResidualSet::Train => add(&st.split.train, &ptr),
        ResidualSet::Test => add(&st.split.test, &pte),
        ResidualSet::All => {
            add(&st.split.train, &ptr);
            add(&st.split.test, &pte);
        }
    }
    let residuals = compute_residuals(&chosen, opts.age_threshold);
    let analysis = residual_group_report(&residuals, opts.age_threshold, opts.trend_mode);
    mb.lap("analyze");

    let report = StudyReport {
        schema_version: REPORT_SCHEMA_VERSION,
        generator: format!("brainage {}", env!("CARGO_PKG_VERSION")),
        split: st.split.summary(),
        base_models,
        ensemble_train: metrics(&ytr, &ptr),
        ensemble_test: metrics(&yte, &pte),
        ensemble,
        cross_validation,
        residual_set: opts.residual_set.as_str().to_string(),
        analysis,
    };
    let mut files = emit_report(&report, Some(&residuals), &opts.out)?;
    let preds_path = opts.out.join(BASE_PREDICTIONS_CSV);
    write_base_predictions(&preds_path, &st.rows)?;
    files.push(preds_path);
    let manifest_path = mb.finish(&opts.out, "manifest_analyze.json", &files)?;
    Ok(AnalyzeOutput {
        report,
        residuals,
        files,
        manifest_path,
    })
}

// ---------------------------------------------------------------- bvd

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BvdSourceKind {
    /// Stacking over four noisy base predictions with a mildly cubic truth.
    #[default]
    Stacking,
    /// Constant target; the predictor is the training-sample mean.
    Constant,
}

impl std::str::FromStr for BvdSourceKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "stacking" => Ok(BvdSourceKind::Stacking),
            "constant" => Ok(BvdSourceKind::Constant),
            other => Err(format!(
                "unknown source {other:?}; expected stacking or constant"
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BvdOptions {
    pub source: BvdSourceKind,
    pub candidates: Vec<EnsembleSpec>,
    pub train_size: usize,
    pub eval_points: usize,
    pub repeats: usize,
    pub noise_sd: f64,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BvdRow {
    pub model: String,
    pub estimate: BiasVarianceEstimate,
}

pub const BVD_JSON: &str = "bvd.json";
pub const BVD_MD: &str = "bvd.md";

pub fn run_bvd(opts: &BvdOptions) -> Result<(Vec<BvdRow>, PathBuf)> {
    let mut mb = ManifestBuilder::new("bvd", opts);
    mb.seed("monte_carlo", opts.seed);
    let rows = match opts.source {
        BvdSourceKind::Constant => {
            let src = ConstantSource {
                value: 50.0,
                sigma: opts.noise_sd,
            };
            let points = vec![(); opts.eval_points.max(1)];
            let est = bias_variance_decompose(
                &src,
                sample_mean_trainer,
                opts.train_size,
                &points,
                opts.repeats,
                opts.seed,
            )?;
            vec![BvdRow {
                model: "sample mean".into(),
                estimate: est,
            }]
        }
        BvdSourceKind::Stacking => {
            let src = StackingSource {
                target_noise: opts.noise_sd,
                ..StackingSource::default()
            };
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(opts.seed);
            rng.set_stream(u64::MAX);
            let points: Vec<BasePredictions> = (0..opts.eval_points.max(1))
                .map(|_| src.draw_x(&mut rng))
                .collect();
            opts.candidates
                .iter()
                .map(|spec| {
                    let est = bias_variance_decompose(
                        &src,
                        ensemble_trainer(*spec),
                        opts.train_size,
                        &points,
                        opts.repeats,
                        opts.seed,
                    )?;
                    Ok(BvdRow {
                        model: spec.title(),
                        estimate: est,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    mb.lap("monte_carlo");
    ensure_dir(&opts.out)?;
    let json = opts.out.join(BVD_JSON);
    write(&json, &to_json(&rows))?;
    let mut md = String::from("| Model | Bias² | Variance | Irreducible | Total | Empirical E[(y-ŷ)²] |\n|---|---|---|---|---|---|\n");
    for r in &rows {
        let e = &r.estimate;
        let _ = writeln!(
            md,
            "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
            r.model, e.bias_squared, e.variance, e.irreducible, e.total, e.empirical_error
        );
    }
    let mdp = opts.out.join(BVD_MD);
    write(&mdp, &md)?;
    let manifest = mb.finish(&opts.out, "manifest_bvd.json", &[json, mdp])?;
    Ok((rows, manifest))
}

// ---------------------------------------------------------------- report

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Directory holding `report.json` (and optionally `residuals.csv`).
    pub input: PathBuf,
    pub out: PathBuf,
}

/// Re-renders markdown and plots from an existing `report.json`.
pub fn run_report(opts: &ReportOptions) -> Result<(StudyReport, PathBuf)> {
    let mut mb = ManifestBuilder::new("report", opts);
    let json_path = if opts.input.is_dir() {
        opts.input.join(report::REPORT_JSON)
    } else {
        opts.input.clone()
    };
    mb.input(&json_path)?;
    let text = fs::read_to_string(&json_path).map_err(io(&json_path))?;
    let rep = StudyReport::from_json(&text)
        .map_err(|e| PipelineError::Invalid(format!("{}: {e}", json_path.display())))?;
    if rep.schema_version != REPORT_SCHEMA_VERSION {
        return Err(PipelineError::Invalid(format!(
            "report schema version {} is not supported (expected {REPORT_SCHEMA_VERSION})",
            rep.schema_version
        )));
    }
    let res_path = json_path.with_file_name(report::RESIDUALS_CSV);
    let residuals = if res_path.exists() {
        mb.input(&res_path)?;
        let text = fs::read_to_string(&res_path).map_err(io(&res_path))?;
        Some(parse_residuals_csv(&text, rep.analysis.age_threshold)?)
    } else {
        None
    };
    let files = emit_report(&rep, residuals.as_deref(), &opts.out)?;
    let manifest = mb.finish(&opts.out, "manifest_report.json", &files)?;
    Ok((rep, manifest))
}

/// Loads a container, for `inspect`-style use from examples.
pub fn describe_model(path: &Path) -> Result<dataio::ContainerHeader> {
    Ok(dataio::inspect_container(path)?)
}
