//! Synthetic cohort generator.
//!
//! Each subject gets an effective age (chronological age plus per-condition
//! offsets) and four phantom slices whose geometry is a function of that age:
//! ventricles widen, the sulcal CSF gap opens, the cortical band thins and
//! white-matter lesions become more frequent. A subject-level anatomical
//! jitter, shared by all four slices, keeps the age signal imperfect.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{self, DataError};
use crate::modality::Modality;
use crate::raster::Raster;
use crate::subject::{Condition, IcdFlags, Sex, SubjectRecord};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthesis config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// Effective-age offsets in years, one per condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionOffsets {
    pub htn: f64,
    pub dm: f64,
    pub mtbi: f64,
    pub sad: f64,
    pub aad: f64,
}

impl Default for ConditionOffsets {
    fn default() -> Self {
        Self {
            htn: -3.0,
            dm: 3.0,
            mtbi: 0.0,
            sad: 4.0,
            aad: 4.0,
        }
    }
}

impl ConditionOffsets {
    pub const ZERO: Self = Self {
        htn: 0.0,
        dm: 0.0,
        mtbi: 0.0,
        sad: 0.0,
        aad: 0.0,
    };

    pub fn get(&self, c: Condition) -> f64 {
        match c {
            Condition::Htn => self.htn,
            Condition::Dm => self.dm,
            Condition::Mtbi => self.mtbi,
            Condition::Sad => self.sad,
            Condition::Aad => self.aad,
        }
    }
}

/// Prevalence rising (or falling) linearly from `at_min_age` to `at_max_age`
/// across the configured age range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prevalence {
    pub at_min_age: f64,
    pub at_max_age: f64,
}

impl Prevalence {
    pub fn at(&self, age: f64, min: f64, max: f64) -> f64 {
        let t = if max > min {
            ((age - min) / (max - min)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (self.at_min_age + t * (self.at_max_age - self.at_min_age)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceTable {
    pub htn: Prevalence,
    pub dm: Prevalence,
    pub mtbi: Prevalence,
    pub sad: Prevalence,
    pub aad: Prevalence,
}

impl Default for PrevalenceTable {
    fn default() -> Self {
        let p = |a, b| Prevalence {
            at_min_age: a,
            at_max_age: b,
        };
        Self {
            htn: p(0.10, 0.50),
            dm: p(0.05, 0.30),
            mtbi: p(0.20, 0.10),
            sad: p(0.05, 0.25),
            aad: p(0.10, 0.25),
        }
    }
}

impl PrevalenceTable {
    pub fn get(&self, c: Condition) -> Prevalence {
        match c {
            Condition::Htn => self.htn,
            Condition::Dm => self.dm,
            Condition::Mtbi => self.mtbi,
            Condition::Sad => self.sad,
            Condition::Aad => self.aad,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub subjects: usize,
    pub age_min: f64,
    pub age_max: f64,
    pub image_side: usize,
    /// Standard deviation of the additive Gaussian pixel noise.
    pub pixel_noise: f64,
    /// Standard deviation (years) of the per-subject apparent-age jitter.
    pub anatomical_jitter: f64,
    pub offsets: ConditionOffsets,
    /// Extra offset for subjects carrying two or more conditions.
    pub multi_flag_offset: f64,
    pub prevalence: PrevalenceTable,
    /// Independent per-modality chance that an image is missing.
    pub missing_probability: f64,
    /// Fraction of male subjects.
    pub male_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            subjects: 400,
            age_min: 20.0,
            age_max: 80.0,
            image_side: 64,
            pixel_noise: 0.03,
            anatomical_jitter: 2.5,
            offsets: ConditionOffsets::default(),
            multi_flag_offset: 0.0,
            prevalence: PrevalenceTable::default(),
            missing_probability: 0.024,
            male_fraction: 0.9,
            seed: 0,
        }
    }
}

pub const MIN_IMAGE_SIDE: usize = 22;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::Config(m));
        if !(self.age_min.is_finite() && self.age_max.is_finite() && self.age_min < self.age_max) {
            return bad(format!(
                "age range [{}, {}] is empty",
                self.age_min, self.age_max
            ));
        }
        if self.age_min <= 0.0 || self.age_max >= 130.0 {
            return bad("ages must lie in (0, 130)".into());
        }
        if self.image_side < MIN_IMAGE_SIDE {
            return bad(format!(
                "image side {} is below the minimum of {MIN_IMAGE_SIDE}",
                self.image_side
            ));
        }
        let probs = [
            ("missing_probability", self.missing_probability),
            ("male_fraction", self.male_fraction),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        for c in Condition::ALL {
            let p = self.prevalence.get(c);
            if !(0.0..=1.0).contains(&p.at_min_age) || !(0.0..=1.0).contains(&p.at_max_age) {
                return bad(format!("prevalence of {c} is not a probability"));
            }
            if !self.offsets.get(c).is_finite() {
                return bad(format!("offset for {c} is not finite"));
            }
        }
        if !(self.pixel_noise >= 0.0
            && self.anatomical_jitter >= 0.0
            && self.multi_flag_offset.is_finite())
        {
            return bad("noise levels must be non-negative and offsets finite".into());
        }
        Ok(())
    }
}

/// Chronological age plus the offsets of every set flag.
pub fn effective_age(age: f64, flags: &IcdFlags, config: &SynthConfig) -> f64 {
    let mut eff = age
        + flags
            .conditions()
            .iter()
            .map(|&c| config.offsets.get(c))
            .sum::<f64>();
    if flags.count() >= 2 {
        eff += config.multi_flag_offset;
    }
    eff
}

/// Drawn subject, before any image is rendered.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticSubject {
    pub subject_id: String,
    pub age_years: f64,
    pub sex: Sex,
    pub flags: IcdFlags,
    pub effective_age: f64,
    /// Per-modality presence, in [`Modality::ALL`] order.
    pub present: [bool; 4],
    pub seed: u64,
}

/// Draws ages, sexes, flags, missing-image masks and per-subject seeds.
/// Ages are uniform over the range and rounded to hundredths of a year.
pub fn draw_subjects(config: &SynthConfig) -> Result<Vec<SyntheticSubject>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = config.subjects.max(1).to_string().len().max(4);
    let mut out = Vec::with_capacity(config.subjects);
    for i in 0..config.subjects {
        let raw = rng.random_range(config.age_min..config.age_max);
        let age_years = ((raw * 100.0).round() / 100.0).clamp(config.age_min, config.age_max);
        let sex = if rng.random_bool(config.male_fraction) {
            Sex::M
        } else {
            Sex::F
        };
        let mut flags = IcdFlags::default();
        for c in Condition::ALL {
            let p = config
                .prevalence
                .get(c)
                .at(age_years, config.age_min, config.age_max);
            flags.set(c, rng.random_bool(p));
        }
        let mut present = [true; 4];
        for slot in &mut present {
            *slot = !rng.random_bool(config.missing_probability);
        }
        let seed = rng.random::<u64>();
        out.push(SyntheticSubject {
            subject_id: format!("S{:0width$}", i + 1),
            age_years,
            sex,
            effective_age: effective_age(age_years, &flags, config),
            flags,
            present,
            seed,
        });
    }
    Ok(out)
}

/// Subject-level anatomy shared by all four slices.
#[derive(Debug, Clone, Copy)]
struct Anatomy {
    /// Age-driven growth coordinate, 0 at 20 years and 1 at 80.
    growth: f64,
    head_ax: f64,
    head_ay: f64,
    cx: f64,
    cy: f64,
    tilt: f64,
}

impl Anatomy {
    fn new(subject_seed: u64, effective_age: f64, config: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(subject_seed);
        let jitter = if config.anatomical_jitter > 0.0 {
            Normal::new(0.0, config.anatomical_jitter)
                .expect("positive sd")
                .sample(&mut rng)
        } else {
            0.0
        };
        let t = (effective_age + jitter - 20.0) / 60.0;
        let scale = rng.random_range(0.94..1.0);
        Self {
            growth: 0.7 * t + 0.3 * t * t.abs(),
            head_ax: 0.80 * scale,
            head_ay: 0.93 * scale,
            cx: rng.random_range(-0.02..0.02),
            cy: rng.random_range(-0.02..0.02),
            tilt: rng.random_range(-0.06..0.06),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tissue {
    Background,
    Skull,
    Csf,
    Grey,
    White,
    Ventricle,
    Lesion,
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    x: f64,
    y: f64,
    a: f64,
    b: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, u: f64, v: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (u - self.x, v - self.y);
        let (p, q) = (c * dx + s * dy, -s * dx + c * dy);
        (p / self.a).powi(2) + (q / self.b).powi(2) <= 1.0
    }
}

fn ventricles(kind: Modality, g: f64) -> Vec<Ellipse> {
    let grow = |base: f64, rate: f64| (base + rate * g).max(0.005);
    if kind.is_ventricle_slice() {
        // frontal horns
        let sep = grow(0.08, 0.04);
        let (a, b) = (grow(0.05, 0.08), grow(0.19, 0.10));
        vec![
            Ellipse {
                x: -sep,
                y: -0.10,
                a,
                b,
                angle: 0.25,
            },
            Ellipse {
                x: sep,
                y: -0.10,
                a,
                b,
                angle: -0.25,
            },
        ]
    } else {
        // third ventricle and temporal horns
        let (a3, b3) = (grow(0.02, 0.035), grow(0.12, 0.06));
        let (at, bt) = (grow(0.025, 0.05), grow(0.10, 0.05));
        vec![
            Ellipse {
                x: 0.0,
                y: 0.04,
                a: a3,
                b: b3,
                angle: 0.0,
            },
            Ellipse {
                x: -0.52,
                y: 0.02,
                a: at,
                b: bt,
                angle: 0.35,
            },
            Ellipse {
                x: 0.52,
                y: 0.02,
                a: at,
                b: bt,
                angle: -0.35,
            },
        ]
    }
}

fn lesions(rng: &mut ChaCha8Rng, g: f64) -> Vec<Ellipse> {
    let g = g.max(0.0);
    let lambda = 0.3 + 5.0 * g * g;
    let count = Poisson::new(lambda).expect("positive rate").sample(rng) as usize;
    (0..count)
        .map(|_| {
            let r = 0.55 * rng.random::<f64>().sqrt();
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let size = rng.random_range(0.025..0.05);
            Ellipse {
                x: r * theta.cos(),
                y: r * theta.sin(),
                a: size,
                b: size * rng.random_range(0.6..1.0),
                angle: rng.random_range(0.0..std::f64::consts::PI),
            }
        })
        .collect()
}

fn classify(anat: &Anatomy, vents: &[Ellipse], les: &[Ellipse], x: f64, y: f64) -> Tissue {
    let (s, c) = anat.tilt.sin_cos();
    let (dx, dy) = (x - anat.cx, y - anat.cy);
    let (u, v) = (
        (c * dx + s * dy) / anat.head_ax,
        (-s * dx + c * dy) / anat.head_ay,
    );
    let rho = (u * u + v * v).sqrt();
    let g = anat.growth;
    let brain_edge = 0.90 - 0.07 * g;
    if rho > 1.0 {
        Tissue::Background
    } else if rho > 0.92 {
        Tissue::Skull
    } else if rho > brain_edge {
        Tissue::Csf
    } else if vents.iter().any(|e| e.contains(u, v)) {
        Tissue::Ventricle
    } else if rho > brain_edge - (0.12 - 0.04 * g).max(0.03) {
        Tissue::Grey
    } else if les.iter().any(|e| e.contains(u, v)) {
        Tissue::Lesion
    } else {
        Tissue::White
    }
}

fn intensity(kind: Modality, tissue: Tissue) -> f64 {
    let flair = kind.is_flair();
    match tissue {
        Tissue::Background => 0.0,
        Tissue::Skull => {
            if flair {
                0.72
            } else {
                0.30
            }
        }
        Tissue::Csf | Tissue::Ventricle => {
            if flair {
                0.08
            } else {
                0.95
            }
        }
        Tissue::Grey => {
            if flair {
                0.56
            } else {
                0.58
            }
        }
        Tissue::White => {
            if flair {
                0.44
            } else {
                0.34
            }
        }
        Tissue::Lesion => {
            if flair {
                0.96
            } else {
                0.80
            }
        }
    }
}

fn check_side(side: usize) -> Result<()> {
    if side < MIN_IMAGE_SIDE {
        return Err(SynthError::Config(format!(
            "image side {side} is below the minimum of {MIN_IMAGE_SIDE}"
        )));
    }
    Ok(())
}

/// Fraction-of-pixel coverage of `pred` over an `ss`×`ss` subsample grid.
fn coverage(side: usize, ss: usize, mut pred: impl FnMut(f64, f64) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    let step = 2.0 / side as f64;
    let n = (ss * ss) as f64;
    for py in 0..side {
        for px in 0..side {
            let mut acc = 0.0;
            for sy in 0..ss {
                for sx in 0..ss {
                    let x = -1.0 + step * (px as f64 + (sx as f64 + 0.5) / ss as f64);
                    let y = -1.0 + step * (py as f64 + (sy as f64 + 0.5) / ss as f64);
                    acc += pred(x, y);
                }
            }
            out[py * side + px] = acc / n;
        }
    }
    out
}

const SUPERSAMPLE: usize = 3;

/// Renders one slice. Deterministic in `(subject_seed, kind, effective_age, config)`.
pub fn generate_image(
    subject_seed: u64,
    kind: Modality,
    effective_age: f64,
    config: &SynthConfig,
) -> Result<Raster> {
    check_side(config.image_side)?;
    let side = config.image_side;
    let anat = Anatomy::new(subject_seed, effective_age, config);
    let mut rng = ChaCha8Rng::seed_from_u64(subject_seed);
    rng.set_stream(1 + kind.index() as u64);
    let vents = ventricles(kind, anat.growth);
    let les = lesions(&mut rng, anat.growth);
    let mut pixels = coverage(side, SUPERSAMPLE, |x, y| {
        intensity(kind, classify(&anat, &vents, &les, x, y))
    });
    if config.pixel_noise > 0.0 {
        let noise = Normal::new(0.0, config.pixel_noise).expect("positive sd");
        for p in &mut pixels {
            *p = (*p + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    Ok(Raster::new(side, side, pixels).expect("non-empty raster"))
}

/// Ventricular area of a slice in pixels, measured at high subsampling.
pub fn ventricle_pixel_area(
    subject_seed: u64,
    kind: Modality,
    effective_age: f64,
    config: &SynthConfig,
) -> Result<f64> {
    check_side(config.image_side)?;
    let anat = Anatomy::new(subject_seed, effective_age, config);
    let vents = ventricles(kind, anat.growth);
    let cover = coverage(config.image_side, 8, |x, y| {
        f64::from(u8::from(
            classify(&anat, &vents, &[], x, y) == Tissue::Ventricle,
        ))
    });
    Ok(cover.iter().sum())
}

/// Generated cohort on disk.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub dir: PathBuf,
    pub metadata_path: PathBuf,
    pub truth_path: PathBuf,
    pub subjects: Vec<SyntheticSubject>,
    pub records: Vec<SubjectRecord>,
}

impl Cohort {
    pub fn complete_count(&self) -> usize {
        self.records.iter().filter(|r| r.is_complete()).count()
    }
}

pub const METADATA_FILE: &str = "metadata.csv";
pub const TRUTH_FILE: &str = "truth.csv";

/// Writes `images/<id>_<modality>.pgm`, `metadata.csv` and `truth.csv`
/// (effective ages) under `out_dir`.
pub fn generate_cohort(config: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Cohort> {
    let dir = out_dir.as_ref().to_path_buf();
    let subjects = draw_subjects(config)?;
    let image_dir = dir.join("images");
    fs::create_dir_all(&image_dir).map_err(dataio_io(&image_dir))?;

    let records = subjects
        .par_iter()
        .map(|s| -> Result<SubjectRecord> {
            let mut images: [Option<PathBuf>; 4] = Default::default();
            for m in Modality::ALL {
                if !s.present[m.index()] {
                    continue;
                }
                let raster = generate_image(s.seed, m, s.effective_age, config)?;
                let path = image_dir.join(format!("{}_{}.pgm", s.subject_id, m.as_str()));
                dataio::write_pgm(&path, &raster)?;
                images[m.index()] = Some(path);
            }
            Ok(SubjectRecord {
                subject_id: s.subject_id.clone(),
                age_years: s.age_years,
                sex: s.sex,
                flags: s.flags,
                images,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let metadata_path = dir.join(METADATA_FILE);
    dataio::write_metadata(&metadata_path, &records)?;
    let truth_path = dir.join(TRUTH_FILE);
    let mut truth = String::from("subject_id,age_years,effective_age\n");
    for s in &subjects {
        truth.push_str(&format!(
            "{},{:.2},{:.2}\n",
            s.subject_id, s.age_years, s.effective_age
        ));
    }
    fs::write(&truth_path, truth).map_err(dataio_io(&truth_path))?;

    Ok(Cohort {
        dir,
        metadata_path,
        truth_path,
        subjects,
        records,
    })
}

fn dataio_io(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| {
        SynthError::Data(DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> SynthConfig {
        SynthConfig {
            image_side: 32,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn older_means_bigger_ventricles() {
        for m in Modality::ALL {
            let young = ventricle_pixel_area(11, m, 20.0, &cfg()).unwrap();
            let old = ventricle_pixel_area(11, m, 80.0, &cfg()).unwrap();
            assert!(old > young, "{m}: {old} <= {young}");
        }
    }

    #[test]
    fn render_is_deterministic_and_offsets_act_through_age() {
        let c = cfg();
        let a = generate_image(5, Modality::T2Lv, 47.0, &c).unwrap();
        assert_eq!(a, generate_image(5, Modality::T2Lv, 47.0, &c).unwrap());
        let htn = IcdFlags::from_conditions(&[Condition::Htn]);
        let eff = effective_age(50.0, &htn, &c);
        assert_eq!(eff, 47.0);
        assert_eq!(generate_image(5, Modality::T2Lv, eff, &c).unwrap(), a);
        assert_ne!(generate_image(5, Modality::FlairLv, 47.0, &c).unwrap(), a);
    }

    #[test]
    fn multi_flag_offset() {
        let c = SynthConfig {
            offsets: ConditionOffsets::ZERO,
            multi_flag_offset: 4.0,
            ..cfg()
        };
        let one = IcdFlags::from_conditions(&[Condition::Dm]);
        let two = IcdFlags::from_conditions(&[Condition::Dm, Condition::Sad]);
        assert_eq!(effective_age(60.0, &one, &c), 60.0);
        assert_eq!(effective_age(60.0, &two, &c), 64.0);
    }

    #[test]
    fn small_side_rejected() {
        let c = SynthConfig {
            image_side: 21,
            ..cfg()
        };
        assert!(generate_image(1, Modality::FlairAc, 40.0, &c).is_err());
        assert!(draw_subjects(&c).is_err());
    }

    #[test]
    fn missing_rate_matches_complete_case_count() {
        let c = SynthConfig {
            subjects: 1220,
            seed: 2024,
            ..SynthConfig::default()
        };
        let complete = draw_subjects(&c)
            .unwrap()
            .iter()
            .filter(|s| s.present.iter().all(|&p| p))
            .count();
        assert!((1074..=1134).contains(&complete), "{complete}");
        let none_missing = SynthConfig {
            missing_probability: 0.0,
            ..c
        };
        assert!(draw_subjects(&none_missing)
            .unwrap()
            .iter()
            .all(|s| s.present == [true; 4]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn ventricle_area_strictly_increasing(seed in any::<u64>(), k in 0usize..4) {
            let c = cfg();
            let m = Modality::ALL[k];
            let mut last = f64::NEG_INFINITY;
            for age in (20..=80).step_by(2) {
                let area = ventricle_pixel_area(seed, m, f64::from(age), &c).unwrap();
                prop_assert!(area > last, "age {}: {} <= {}", age, area, last);
                last = area;
            }
        }
    }
}
