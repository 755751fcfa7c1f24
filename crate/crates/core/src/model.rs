//! End-to-end fitting and staging: mixtures per stratum, then one disease
//! timeline per stratum.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{stratify, BiomarkerDataset, DatasetError};
use crate::mixture::{fit_mixtures, MixtureError, MixtureSet, OptimizerOptions, Strategy, StratumFits};
use crate::ordering::{fit_timeline, DiseaseTimeline, OrderingError, TimelineRecord};
use crate::staging::{stage_values, PatientStage, StagingError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
    #[error("stratified strategy requires group column")]
    StratifiedWithoutGroups,
    #[error("{}: {source}", group_label(*.group))]
    Ordering { group: Option<u32>, source: OrderingError },
    #[error("timeline file does not match the mixture model: {0}")]
    TimelineMismatch(String),
    #[error("biomarker mismatch between model and data: {0}")]
    BiomarkerMismatch(String),
}

fn group_label(group: Option<u32>) -> String {
    match group {
        Some(g) => format!("group {g}"),
        None => "cohort".to_string(),
    }
}

/// Mixtures plus one timeline per stratum, aligned with `mixtures.strata`.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub mixtures: MixtureSet,
    pub timelines: Vec<DiseaseTimeline>,
}

/// Serialized timelines of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineFile {
    pub biomarkers: Vec<String>,
    pub timelines: Vec<TimelineRecord>,
}

pub fn fit_model(dataset: &BiomarkerDataset, strategy: Strategy, options: &OptimizerOptions) -> Result<FittedModel, ModelError> {
    if strategy != Strategy::Independent && !dataset.has_groups() {
        return Err(ModelError::StratifiedWithoutGroups);
    }
    let strata = stratify(dataset)?;
    let mixtures = fit_mixtures(strategy, &strata, options)?;
    let timelines = strata
        .iter()
        .zip(&mixtures.strata)
        .map(|(s, fits)| fit_timeline(&s.data, fits).map_err(|source| ModelError::Ordering { group: s.group, source }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FittedModel { mixtures, timelines })
}

/// Outcome of staging one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct StagedSubject {
    pub subject: String,
    pub group: Option<u32>,
    pub result: Result<PatientStage, String>,
}

impl FittedModel {
    pub fn biomarkers(&self) -> &[String] {
        &self.mixtures.biomarkers
    }

    pub fn timeline(&self, group: Option<u32>) -> Option<(&StratumFits, &DiseaseTimeline)> {
        let k = self.mixtures.strata.iter().position(|s| s.group == group)?;
        Some((&self.mixtures.strata[k], &self.timelines[k]))
    }

    /// Stratum used to stage a subject: its own group, or the single
    /// ungrouped stratum of a model fitted without groups.
    fn stratum_for(&self, group: Option<u32>) -> Option<(&StratumFits, &DiseaseTimeline)> {
        self.timeline(group).or_else(|| match self.mixtures.strata.as_slice() {
            [only] if only.group.is_none() => Some((only, &self.timelines[0])),
            _ => None,
        })
    }

    pub fn timeline_file(&self) -> TimelineFile {
        TimelineFile {
            biomarkers: self.mixtures.biomarkers.clone(),
            timelines: self
                .mixtures
                .strata
                .iter()
                .zip(&self.timelines)
                .map(|(s, t)| t.to_record(&self.mixtures.biomarkers, s.group))
                .collect(),
        }
    }

    pub fn from_parts(mixtures: MixtureSet, file: &TimelineFile) -> Result<FittedModel, ModelError> {
        if file.biomarkers != mixtures.biomarkers {
            return Err(ModelError::TimelineMismatch("biomarker lists differ".into()));
        }
        let timelines = mixtures
            .strata
            .iter()
            .map(|s| {
                let record = file
                    .timelines
                    .iter()
                    .find(|r| r.group == s.group)
                    .ok_or_else(|| ModelError::TimelineMismatch(format!("no timeline for {}", group_label(s.group))))?;
                DiseaseTimeline::from_record(record, &mixtures.biomarkers).map_err(ModelError::TimelineMismatch)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FittedModel { mixtures, timelines })
    }

    /// Checks that `names` lists exactly the model's biomarkers.
    pub fn check_biomarkers(&self, names: &[String]) -> Result<(), ModelError> {
        let model = &self.mixtures.biomarkers;
        let missing: Vec<&str> = model.iter().filter(|m| !names.contains(m)).map(String::as_str).collect();
        let extra: Vec<&str> = names.iter().filter(|n| !model.contains(n)).map(String::as_str).collect();
        if missing.is_empty() && extra.is_empty() {
            return Ok(());
        }
        let mut parts = Vec::new();
        if !missing.is_empty() {
            parts.push(format!("missing from data: {}", missing.join(", ")));
        }
        if !extra.is_empty() {
            parts.push(format!("not in model: {}", extra.join(", ")));
        }
        Err(ModelError::BiomarkerMismatch(parts.join("; ")))
    }

    /// Stages every subject of a sign-normalized dataset whose biomarkers are
    /// in model order. Subjects that cannot be staged carry the reason.
    pub fn stage_dataset(&self, dataset: &BiomarkerDataset) -> Result<Vec<StagedSubject>, ModelError> {
        if dataset.biomarker_names() != self.biomarkers() {
            self.check_biomarkers(dataset.biomarker_names())?;
            return Err(ModelError::BiomarkerMismatch("biomarker columns are not in model order".into()));
        }
        Ok(dataset
            .subjects()
            .iter()
            .map(|s| {
                let result = match self.stratum_for(s.group) {
                    None => Err(format!("no timeline for {}", group_label(s.group))),
                    Some((fits, timeline)) => stage_values(&s.values, timeline, fits).map_err(|e| match e {
                        StagingError::NoObservations => "all biomarkers missing".to_string(),
                        other => other.to_string(),
                    }),
                };
                StagedSubject { subject: s.id.clone(), group: s.group, result }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DiagnosisLabel, Subject};

    fn cohort(groups: bool) -> BiomarkerDataset {
        let mut subjects = Vec::new();
        for j in 0..40 {
            let (label, t) = match j % 3 {
                0 => (DiagnosisLabel::CN, 0.0),
                1 => (DiagnosisLabel::MCI, 0.5),
                _ => (DiagnosisLabel::AD, 1.0),
            };
            let jitter = (j as f64 * 0.37).sin() * 0.05;
            subjects.push(Subject {
                id: format!("s{j}"),
                diagnosis: label,
                group: groups.then_some(1 + (j % 2) as u32),
                values: vec![Some(t + jitter), Some(2.0 * t - jitter), Some(-t + jitter)],
            });
        }
        BiomarkerDataset::new(vec!["a".into(), "b".into(), "c".into()], subjects).unwrap()
    }

    #[test]
    fn stratified_strategies_need_groups() {
        let ds = cohort(false);
        for s in [Strategy::Coupled, Strategy::Coinit] {
            let err = fit_model(&ds, s, &OptimizerOptions::default()).unwrap_err();
            assert_eq!(err.to_string(), "stratified strategy requires group column");
        }
        assert!(fit_model(&ds, Strategy::Independent, &OptimizerOptions::default()).is_ok());
    }

    #[test]
    fn one_timeline_per_group() {
        let model = fit_model(&cohort(true), Strategy::Coinit, &OptimizerOptions::default()).unwrap();
        assert_eq!(model.timelines.len(), 2);
        assert!(model.timeline(Some(1)).is_some() && model.timeline(Some(2)).is_some());
    }

    #[test]
    fn timeline_file_round_trip() {
        let model = fit_model(&cohort(true), Strategy::Coupled, &OptimizerOptions::default()).unwrap();
        let back = FittedModel::from_parts(model.mixtures.clone(), &model.timeline_file()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn mismatch_lists_difference() {
        let model = fit_model(&cohort(false), Strategy::Independent, &OptimizerOptions::default()).unwrap();
        let err = model.check_biomarkers(&["a".into(), "b".into(), "z".into()]).unwrap_err().to_string();
        assert!(err.contains("missing from data: c") && err.contains("not in model: z"), "{err}");
    }
}
