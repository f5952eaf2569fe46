use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{io_err, DataError, Result};
use crate::modality::Modality;
use crate::subject::{Condition, IcdFlags, Sex, SubjectRecord};

pub const METADATA_COLUMNS: [&str; 12] = [
    "subject_id",
    "age_years",
    "sex",
    "htn",
    "dm",
    "mtbi",
    "sad",
    "aad",
    "flair_ac",
    "flair_lv",
    "t2_ac",
    "t2_lv",
];

/// Why a metadata row was not accepted.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    FieldCount { expected: usize, found: usize },
    EmptySubjectId,
    InvalidAge { value: String },
    InvalidSex { value: String },
    InvalidFlag { column: String, value: String },
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::FieldCount { expected, found } => {
                write!(f, "expected {expected} fields, found {found}")
            }
            RejectReason::EmptySubjectId => f.write_str("subject_id is empty"),
            RejectReason::InvalidAge { value } => {
                write!(f, "age_years {value:?} is not a number in (0, 130)")
            }
            RejectReason::InvalidSex { value } => write!(f, "sex {value:?} is not one of M, F, U"),
            RejectReason::InvalidFlag { column, value } => {
                write!(f, "{column} {value:?} is not 0 or 1")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowRejection {
    /// 1-based line number in the file (the header is line 1).
    pub line: usize,
    #[serde(flatten)]
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationSummary {
    pub accepted: usize,
    pub complete: usize,
    pub incomplete: usize,
    pub rejected: Vec<RowRejection>,
}

/// Reads the metadata CSV. Image paths are resolved against the file's directory.
pub fn load_metadata(path: impl AsRef<Path>) -> Result<(Vec<SubjectRecord>, ValidationSummary)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_metadata(file, base)
}

pub fn parse_metadata<R: Read>(
    reader: R,
    base_dir: &Path,
) -> Result<(Vec<SubjectRecord>, ValidationSummary)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut index = [0usize; 12];
    for (slot, name) in index.iter_mut().zip(METADATA_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::Schema(format!("missing required column {name:?}")))?;
    }

    let mut records = Vec::new();
    let mut summary = ValidationSummary::default();
    let mut seen = HashSet::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = row.position().map_or(i + 2, |p| p.line() as usize);
        match parse_row(&row, &index, headers.len(), base_dir) {
            Ok(record) => {
                if !seen.insert(record.subject_id.clone()) {
                    return Err(DataError::DuplicateSubject(record.subject_id));
                }
                if record.is_complete() {
                    summary.complete += 1;
                } else {
                    summary.incomplete += 1;
                }
                summary.accepted += 1;
                records.push(record);
            }
            Err(reason) => summary.rejected.push(RowRejection { line, reason }),
        }
    }
    Ok((records, summary))
}

fn parse_row(
    row: &csv::StringRecord,
    index: &[usize; 12],
    width: usize,
    base_dir: &Path,
) -> std::result::Result<SubjectRecord, RejectReason> {
    if row.len() != width {
        return Err(RejectReason::FieldCount {
            expected: width,
            found: row.len(),
        });
    }
    let field = |i: usize| row.get(index[i]).unwrap_or("").trim();
    let subject_id = field(0).to_string();
    if subject_id.is_empty() {
        return Err(RejectReason::EmptySubjectId);
    }
    let age_years = field(1)
        .parse::<f64>()
        .ok()
        .filter(|a| a.is_finite() && *a > 0.0 && *a < 130.0)
        .ok_or_else(|| RejectReason::InvalidAge {
            value: field(1).to_string(),
        })?;
    let sex = match field(2) {
        "M" => Sex::M,
        "F" => Sex::F,
        "U" => Sex::U,
        other => {
            return Err(RejectReason::InvalidSex {
                value: other.to_string(),
            })
        }
    };
    let mut flags = IcdFlags::default();
    for (k, condition) in Condition::ALL.into_iter().enumerate() {
        let value = match field(3 + k) {
            "0" => false,
            "1" => true,
            other => {
                return Err(RejectReason::InvalidFlag {
                    column: METADATA_COLUMNS[3 + k].to_string(),
                    value: other.to_string(),
                })
            }
        };
        flags.set(condition, value);
    }
    let mut images: [Option<PathBuf>; 4] = Default::default();
    for m in Modality::ALL {
        let cell = field(8 + m.index());
        if !cell.is_empty() {
            images[m.index()] = Some(base_dir.join(cell));
        }
    }
    Ok(SubjectRecord {
        subject_id,
        age_years,
        sex,
        flags,
        images,
    })
}

/// Writes the metadata CSV. Paths under the file's directory are stored relative to it.
pub fn write_metadata(path: impl AsRef<Path>, records: &[SubjectRecord]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut out = String::new();
    out.push_str(&METADATA_COLUMNS.join(","));
    out.push('\n');
    for r in records {
        let mut cells = vec![
            r.subject_id.clone(),
            format!("{:.2}", r.age_years),
            r.sex.as_str().to_string(),
        ];
        for c in Condition::ALL {
            cells.push(if r.flags.get(c) { "1" } else { "0" }.to_string());
        }
        for m in Modality::ALL {
            cells.push(match r.image(m) {
                Some(p) => p
                    .strip_prefix(base)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .replace('\\', "/"),
                None => String::new(),
            });
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    let mut file = File::create(path).map_err(io_err(path))?;
    file.write_all(out.as_bytes()).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str =
        "subject_id,age_years,sex,htn,dm,mtbi,sad,aad,flair_ac,flair_lv,t2_ac,t2_lv\n";

    fn parse(body: &str) -> Result<(Vec<SubjectRecord>, ValidationSummary)> {
        parse_metadata(format!("{HEADER}{body}").as_bytes(), Path::new("/data"))
    }

    #[test]
    fn fractional_age_and_paths() {
        let (recs, summary) = parse("S1,26.25,M,1,0,0,0,0,a.pgm,b.pgm,c.pgm,d.pgm\n").unwrap();
        assert_eq!(recs[0].age_years, 26.25);
        assert!(recs[0].flags.htn);
        assert_eq!(
            recs[0].image(Modality::T2Ac).unwrap(),
            Path::new("/data/c.pgm")
        );
        assert_eq!(summary.complete, 1);
    }

    #[test]
    fn bad_flag_rejected_with_line() {
        let (recs, summary) = parse(
            "S1,40,F,0,0,0,0,0,a,b,c,d\nS2,41,F,0,2,0,0,0,a,b,c,d\nS3,42,X,0,0,0,0,0,a,b,c,d\n",
        )
        .unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(summary.rejected.len(), 2);
        assert_eq!(summary.rejected[0].line, 3);
        assert_eq!(
            summary.rejected[0].reason,
            RejectReason::InvalidFlag {
                column: "dm".into(),
                value: "2".into()
            }
        );
        assert!(matches!(
            summary.rejected[1].reason,
            RejectReason::InvalidSex { .. }
        ));
    }

    #[test]
    fn missing_path_is_incomplete_not_rejected() {
        let (recs, summary) = parse("S1,50.5,U,0,0,0,0,0,a,b,c,\n").unwrap();
        assert!(!recs[0].is_complete());
        assert_eq!((summary.accepted, summary.incomplete), (1, 1));
    }

    #[test]
    fn schema_and_duplicates() {
        let err =
            parse_metadata("subject_id,age_years\nS1,3\n".as_bytes(), Path::new(".")).unwrap_err();
        assert!(matches!(err, DataError::Schema(_)));
        let err = parse("S1,40,M,0,0,0,0,0,a,b,c,d\nS1,41,M,0,0,0,0,0,a,b,c,d\n").unwrap_err();
        assert!(matches!(err, DataError::DuplicateSubject(id) if id == "S1"));
    }

    #[test]
    fn out_of_range_age() {
        let (_, summary) = parse("S1,0,M,0,0,0,0,0,a,b,c,d\nS2,abc,M,0,0,0,0,0,a,b,c,d\n").unwrap();
        assert_eq!(summary.rejected.len(), 2);
    }
}
