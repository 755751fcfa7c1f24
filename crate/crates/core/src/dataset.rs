//! Cross-sectional biomarker cohorts.
//!
//! Values are stored in sign-normalized form: biomarkers whose abnormal
//! level is lower than normal are negated on construction, so every
//! downstream computation can assume abnormality means a larger value.
//! [`BiomarkerDataset::write_csv`] restores the original units.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SUBJECT_COLUMN: &str = "subject_id";
pub const DIAGNOSIS_COLUMN: &str = "diagnosis";
pub const GROUP_COLUMN: &str = "group";

const MISSING_SENTINELS: [&str; 3] = ["", "NA", "NaN"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error("row {row}: unknown diagnosis label `{label}` (expected CN, MCI or AD)")]
    UnknownDiagnosis { row: usize, label: String },
    #[error("biomarker `{biomarker}` has {cn} non-missing CN and {ad} non-missing AD values; at least 2 of each are required")]
    InsufficientReference { biomarker: String, cn: usize, ad: usize },
    #[error("dataset has no subjects")]
    NoSubjects,
    #[error("dataset has no biomarkers")]
    NoBiomarkers,
    #[error("subject `{subject}` has {found} values, expected {expected}")]
    RaggedRow { subject: String, found: usize, expected: usize },
    #[error("subject `{subject}`: non-finite value for biomarker `{biomarker}`")]
    NonFinite { subject: String, biomarker: String },
    #[error("subject `{0}` has no group id")]
    MissingGroup(String),
    #[error("group id must be a positive integer, got {0}")]
    InvalidGroup(u32),
    #[error("direction override names unknown biomarker `{0}`")]
    UnknownBiomarker(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DiagnosisLabel {
    CN,
    MCI,
    AD,
}

impl DiagnosisLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosisLabel::CN => "CN",
            DiagnosisLabel::MCI => "MCI",
            DiagnosisLabel::AD => "AD",
        }
    }
}

impl fmt::Display for DiagnosisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DiagnosisLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "CN" => Ok(DiagnosisLabel::CN),
            "MCI" => Ok(DiagnosisLabel::MCI),
            "AD" => Ok(DiagnosisLabel::AD),
            other => Err(other.to_string()),
        }
    }
}

/// Whether abnormality raises or lowers a biomarker's raw value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Direction {
    Increasing,
    Decreasing,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Increasing => 1.0,
            Direction::Decreasing => -1.0,
        }
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "increasing" | "inc" | "up" => Ok(Direction::Increasing),
            "decreasing" | "dec" | "down" => Ok(Direction::Decreasing),
            other => Err(format!("unknown direction `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub diagnosis: DiagnosisLabel,
    pub group: Option<u32>,
    /// Raw values in source units; `None` marks a missing measurement.
    pub values: Vec<Option<f64>>,
}

/// An immutable, validated cohort of M subjects by N biomarkers.
#[derive(Debug, Clone, PartialEq)]
pub struct BiomarkerDataset {
    biomarker_names: Vec<String>,
    directions: Vec<Direction>,
    subjects: Vec<Subject>,
}

impl BiomarkerDataset {
    /// Builds a dataset from raw values, inferring each biomarker's direction.
    pub fn new(biomarker_names: Vec<String>, subjects: Vec<Subject>) -> Result<Self, DatasetError> {
        Self::with_overrides(biomarker_names, subjects, &HashMap::new())
    }

    /// Like [`BiomarkerDataset::new`], but directions named in `overrides`
    /// replace the inferred ones.
    pub fn with_overrides(
        biomarker_names: Vec<String>,
        subjects: Vec<Subject>,
        overrides: &HashMap<String, Direction>,
    ) -> Result<Self, DatasetError> {
        check_shape(&biomarker_names, &subjects)?;
        for name in overrides.keys() {
            if !biomarker_names.contains(name) {
                return Err(DatasetError::UnknownBiomarker(name.clone()));
            }
        }
        let directions = (0..biomarker_names.len())
            .map(|i| match overrides.get(&biomarker_names[i]) {
                Some(&d) => d,
                None => direction_of(&subjects, i),
            })
            .collect();
        Self::with_directions(biomarker_names, subjects, directions)
    }

    /// Builds a dataset from raw values with explicitly declared directions.
    pub fn with_directions(
        biomarker_names: Vec<String>,
        mut subjects: Vec<Subject>,
        directions: Vec<Direction>,
    ) -> Result<Self, DatasetError> {
        check_shape(&biomarker_names, &subjects)?;
        assert_eq!(directions.len(), biomarker_names.len(), "one direction per biomarker");
        for s in &mut subjects {
            for (v, d) in s.values.iter_mut().zip(&directions) {
                if let Some(x) = v {
                    *x *= d.sign();
                }
            }
        }
        let dataset = BiomarkerDataset { biomarker_names, directions, subjects };
        dataset.validate()?;
        Ok(dataset)
    }

    /// Builds a dataset without the reference-sample check, for cohorts that
    /// are only staged against an existing model.
    pub fn for_staging(
        biomarker_names: Vec<String>,
        mut subjects: Vec<Subject>,
        directions: Vec<Direction>,
    ) -> Result<Self, DatasetError> {
        check_shape(&biomarker_names, &subjects)?;
        assert_eq!(directions.len(), biomarker_names.len(), "one direction per biomarker");
        for s in &mut subjects {
            for (v, d) in s.values.iter_mut().zip(&directions) {
                if let Some(x) = v {
                    *x *= d.sign();
                }
            }
        }
        Ok(BiomarkerDataset { biomarker_names, directions, subjects })
    }

    /// Checks the reference-sample requirement: every biomarker needs at
    /// least two non-missing CN and two non-missing AD values.
    pub fn validate(&self) -> Result<(), DatasetError> {
        for (i, name) in self.biomarker_names.iter().enumerate() {
            let cn = self.values_for(i, DiagnosisLabel::CN).len();
            let ad = self.values_for(i, DiagnosisLabel::AD).len();
            if cn < 2 || ad < 2 {
                return Err(DatasetError::InsufficientReference { biomarker: name.clone(), cn, ad });
            }
        }
        Ok(())
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_biomarkers(&self) -> usize {
        self.biomarker_names.len()
    }

    pub fn biomarker_names(&self) -> &[String] {
        &self.biomarker_names
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    /// Subjects with sign-normalized values.
    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn missing_mask(&self) -> Vec<Vec<bool>> {
        self.subjects
            .iter()
            .map(|s| s.values.iter().map(Option::is_none).collect())
            .collect()
    }

    pub fn has_groups(&self) -> bool {
        self.subjects.iter().any(|s| s.group.is_some())
    }

    /// Sign-normalized value of biomarker `i` for subject `j`.
    pub fn value(&self, j: usize, i: usize) -> Option<f64> {
        self.subjects[j].values[i]
    }

    /// Non-missing sign-normalized values of biomarker `i` among subjects
    /// with the given diagnosis, in row order.
    pub fn values_for(&self, i: usize, label: DiagnosisLabel) -> Vec<f64> {
        self.subjects
            .iter()
            .filter(|s| s.diagnosis == label)
            .filter_map(|s| s.values[i])
            .collect()
    }

    /// All non-missing sign-normalized values of biomarker `i`, in row order.
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.subjects.iter().filter_map(|s| s.values[i]).collect()
    }

    /// Re-expresses a raw vector in this dataset's sign-normalized space.
    pub fn normalize_raw(&self, raw: &[Option<f64>]) -> Vec<Option<f64>> {
        raw.iter()
            .zip(&self.directions)
            .map(|(v, d)| v.map(|x| x * d.sign()))
            .collect()
    }

    /// Builds a dataset sharing this one's biomarkers and directions from
    /// already-normalized subjects. Does not run [`BiomarkerDataset::validate`].
    pub fn derive(&self, subjects: Vec<Subject>) -> BiomarkerDataset {
        BiomarkerDataset {
            biomarker_names: self.biomarker_names.clone(),
            directions: self.directions.clone(),
            subjects,
        }
    }

    /// Writes the dataset in original units with the reserved columns first.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_writer(writer);
        let with_group = self.has_groups();
        let mut header = vec![SUBJECT_COLUMN.to_string(), DIAGNOSIS_COLUMN.to_string()];
        if with_group {
            header.push(GROUP_COLUMN.to_string());
        }
        header.extend(self.biomarker_names.iter().cloned());
        w.write_record(&header)?;
        for s in &self.subjects {
            let mut record = vec![s.id.clone(), s.diagnosis.to_string()];
            if with_group {
                record.push(s.group.map(|g| g.to_string()).unwrap_or_default());
            }
            for (v, d) in s.values.iter().zip(&self.directions) {
                record.push(match v {
                    Some(x) => format!("{}", x * d.sign()),
                    None => String::new(),
                });
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn check_shape(names: &[String], subjects: &[Subject]) -> Result<(), DatasetError> {
    if names.is_empty() {
        return Err(DatasetError::NoBiomarkers);
    }
    if subjects.is_empty() {
        return Err(DatasetError::NoSubjects);
    }
    for s in subjects {
        if s.values.len() != names.len() {
            return Err(DatasetError::RaggedRow {
                subject: s.id.clone(),
                found: s.values.len(),
                expected: names.len(),
            });
        }
        if let Some(g) = s.group {
            if g == 0 {
                return Err(DatasetError::InvalidGroup(g));
            }
        }
        for (v, name) in s.values.iter().zip(names) {
            if matches!(v, Some(x) if !x.is_finite()) {
                return Err(DatasetError::NonFinite { subject: s.id.clone(), biomarker: name.clone() });
            }
        }
    }
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn direction_of(subjects: &[Subject], i: usize) -> Direction {
    let of = |label| {
        mean(
            subjects
                .iter()
                .filter(move |s| s.diagnosis == label)
                .filter_map(move |s| s.values[i]),
        )
    };
    if of(DiagnosisLabel::AD) < of(DiagnosisLabel::CN) {
        Direction::Decreasing
    } else {
        Direction::Increasing
    }
}

/// Direction of biomarker `i` from its CN and AD means in the dataset's
/// source units. Ties resolve to [`Direction::Increasing`].
pub fn infer_direction(dataset: &BiomarkerDataset, i: usize) -> Direction {
    let raw_mean = |label| mean(dataset.values_for(i, label).into_iter()) * dataset.directions[i].sign();
    if raw_mean(DiagnosisLabel::AD) < raw_mean(DiagnosisLabel::CN) {
        Direction::Decreasing
    } else {
        Direction::Increasing
    }
}

/// Partitions a dataset by group id, preserving row order within groups.
/// Groups are returned in ascending id order.
pub fn split_groups(dataset: &BiomarkerDataset) -> Result<Vec<(u32, BiomarkerDataset)>, DatasetError> {
    let mut by_group: BTreeMap<u32, Vec<Subject>> = BTreeMap::new();
    for s in &dataset.subjects {
        let g = s.group.ok_or_else(|| DatasetError::MissingGroup(s.id.clone()))?;
        by_group.entry(g).or_default().push(s.clone());
    }
    Ok(by_group.into_iter().map(|(g, subjects)| (g, dataset.derive(subjects))).collect())
}

/// One stratum of a cohort: the subjects of a single group, or the whole
/// cohort when it carries no group column.
#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    pub group: Option<u32>,
    pub data: BiomarkerDataset,
}

/// Splits by group when the dataset has group ids, otherwise returns the
/// whole dataset as a single ungrouped stratum.
pub fn stratify(dataset: &BiomarkerDataset) -> Result<Vec<Stratum>, DatasetError> {
    if dataset.has_groups() {
        Ok(split_groups(dataset)?
            .into_iter()
            .map(|(g, data)| Stratum { group: Some(g), data })
            .collect())
    } else {
        Ok(vec![Stratum { group: None, data: dataset.clone() }])
    }
}

/// Column mapping for [`load_csv`].
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub subject_column: String,
    pub diagnosis_column: String,
    /// Used when present in the header; ignored otherwise.
    pub group_column: Option<String>,
    /// Biomarker columns to load. `None` takes every non-reserved column.
    pub biomarkers: Option<Vec<String>>,
    pub direction_overrides: HashMap<String, Direction>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            subject_column: SUBJECT_COLUMN.to_string(),
            diagnosis_column: DIAGNOSIS_COLUMN.to_string(),
            group_column: Some(GROUP_COLUMN.to_string()),
            biomarkers: None,
            direction_overrides: HashMap::new(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<BiomarkerDataset, DatasetError> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file), schema)
}

/// Parses a cohort from CSV text. Row numbers in errors count the header as
/// row 1.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<BiomarkerDataset, DatasetError> {
    let (names, subjects) = read_records(reader, schema)?;
    BiomarkerDataset::with_overrides(names, subjects, &schema.direction_overrides)
}

/// Loads a cohort to be staged against a model fitted elsewhere. Biomarker
/// columns and directions come from the model; no reference-sample check
/// is applied.
pub fn load_csv_for_staging(
    path: impl AsRef<Path>,
    biomarkers: &[String],
    directions: &[Direction],
) -> Result<BiomarkerDataset, DatasetError> {
    let file = std::fs::File::open(path)?;
    let schema = CsvSchema { biomarkers: Some(biomarkers.to_vec()), ..CsvSchema::default() };
    let (names, subjects) = read_records(std::io::BufReader::new(file), &schema)?;
    BiomarkerDataset::for_staging(names, subjects, directions.to_vec())
}

/// Lists the non-reserved columns of a CSV header.
pub fn csv_biomarker_columns(path: impl AsRef<Path>) -> Result<Vec<String>, DatasetError> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .filter(|h| h != SUBJECT_COLUMN && h != DIAGNOSIS_COLUMN && h != GROUP_COLUMN)
        .collect())
}

fn read_records<R: Read>(reader: R, schema: &CsvSchema) -> Result<(Vec<String>, Vec<Subject>), DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let subject_idx = find(&schema.subject_column)?;
    let diagnosis_idx = find(&schema.diagnosis_column)?;
    let group_idx = schema
        .group_column
        .as_deref()
        .and_then(|g| header.iter().position(|h| h == g));

    let (names, columns): (Vec<String>, Vec<usize>) = match &schema.biomarkers {
        Some(list) => {
            let mut cols = Vec::with_capacity(list.len());
            for name in list {
                cols.push(find(name)?);
            }
            (list.clone(), cols)
        }
        None => header
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != subject_idx && k != diagnosis_idx && Some(k) != group_idx)
            .map(|(k, h)| (h.clone(), k))
            .unzip(),
    };
    if names.is_empty() {
        return Err(DatasetError::NoBiomarkers);
    }

    let mut subjects = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 2;
        let record = record.map_err(|e| DatasetError::MalformedRow { row, message: e.to_string() })?;
        if record.len() != header.len() {
            return Err(DatasetError::MalformedRow {
                row,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let label = record[diagnosis_idx].trim();
        let diagnosis = label
            .parse::<DiagnosisLabel>()
            .map_err(|label| DatasetError::UnknownDiagnosis { row, label })?;
        let group = match group_idx.map(|g| record[g].trim()) {
            None => None,
            Some(cell) if MISSING_SENTINELS.contains(&cell) => None,
            Some(cell) => match cell.parse::<u32>() {
                Ok(g) if g > 0 => Some(g),
                _ => {
                    return Err(DatasetError::MalformedRow {
                        row,
                        message: format!("group `{cell}` is not a positive integer"),
                    })
                }
            },
        };
        let mut values = Vec::with_capacity(columns.len());
        for (&c, name) in columns.iter().zip(&names) {
            let cell = record[c].trim();
            if MISSING_SENTINELS.contains(&cell) {
                values.push(None);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(x) if x.is_finite() => values.push(Some(x)),
                _ => {
                    return Err(DatasetError::MalformedRow {
                        row,
                        message: format!("biomarker `{name}`: cannot parse `{cell}` as a finite number"),
                    })
                }
            }
        }
        subjects.push(Subject { id: record[subject_idx].trim().to_string(), diagnosis, group, values });
    }
    Ok((names, subjects))
}
