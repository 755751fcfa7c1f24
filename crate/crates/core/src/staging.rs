//! Placing subjects on a fitted disease timeline.

use thiserror::Error;

use crate::mixture::StratumFits;
use crate::ordering::DiseaseTimeline;

#[derive(Debug, Error, PartialEq)]
pub enum StagingError {
    #[error("every stage has zero likelihood")]
    Underflow,
    #[error("subject has no observed biomarkers")]
    NoObservations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientStage {
    /// Probability that exactly the first `i` events of the ordering have
    /// occurred, for `i = 0..=N`.
    pub stage_posterior: Vec<f64>,
    pub upsilon: f64,
}

/// Stage posterior from event posteriors indexed by biomarker (`None` for a
/// missing value, which contributes a neutral factor).
///
/// The weight of stage `i` is the product of the event posteriors of the
/// first `i` events and the complementary posteriors of the rest, evaluated
/// in log space and normalized over `i = 0..=N`.
pub fn stage_posterior(event_posteriors: &[Option<f64>], timeline: &DiseaseTimeline) -> Result<Vec<f64>, StagingError> {
    let n = timeline.ordering.len();
    assert_eq!(event_posteriors.len(), n, "posteriors must cover every biomarker");
    let (ln_e, ln_not): (Vec<f64>, Vec<f64>) = timeline
        .ordering
        .iter()
        .map(|&b| match event_posteriors[b] {
            Some(p) => (p.ln(), (-p).ln_1p()),
            None => (0.0, 0.0),
        })
        .unzip();

    // log w_i = sum_{l < i} ln p_l + sum_{l >= i} ln(1 - p_l), from prefix and
    // suffix sums so no infinite factor is ever subtracted
    let mut prefix = vec![0.0; n + 1];
    for l in 0..n {
        prefix[l + 1] = prefix[l] + ln_e[l];
    }
    let mut suffix = vec![0.0; n + 1];
    for l in (0..n).rev() {
        suffix[l] = suffix[l + 1] + ln_not[l];
    }
    let log_w: Vec<f64> = (0..=n).map(|i| prefix[i] + suffix[i]).collect();

    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(StagingError::Underflow);
    }
    let weights: Vec<f64> = log_w.iter().map(|w| (w - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Expected event-center over stages `1..=N`; zero when those stages carry
/// no mass.
pub fn upsilon(stage_posterior: &[f64], event_centers: &[f64]) -> f64 {
    let mass: f64 = stage_posterior[1..].iter().sum();
    if mass <= 0.0 {
        return 0.0;
    }
    let weighted: f64 = stage_posterior[1..].iter().zip(event_centers).map(|(p, l)| p * l).sum();
    weighted / mass
}

pub fn stage(event_posteriors: &[Option<f64>], timeline: &DiseaseTimeline) -> Result<PatientStage, StagingError> {
    let stage_posterior = stage_posterior(event_posteriors, timeline)?;
    let upsilon = upsilon(&stage_posterior, &timeline.event_centers);
    Ok(PatientStage { stage_posterior, upsilon })
}

/// Stages a sign-normalized biomarker vector under one stratum's fits.
/// Subjects without any observed value are rejected.
pub fn stage_values(values: &[Option<f64>], timeline: &DiseaseTimeline, fits: &StratumFits) -> Result<PatientStage, StagingError> {
    if values.iter().all(Option::is_none) {
        return Err(StagingError::NoObservations);
    }
    let posteriors: Vec<Option<f64>> =
        values.iter().zip(&fits.fits).map(|(v, f)| v.map(|x| f.posterior(x))).collect();
    stage(&posteriors, timeline)
}
