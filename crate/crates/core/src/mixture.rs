//! Two-component Gaussian mixtures of normal and abnormal biomarker values.
//!
//! Each biomarker is modelled as a mixture of a normal and an abnormal
//! Gaussian. Fitting starts from a robust initialization on the CN and AD
//! reference subjects, with the overlapping tails of the two label
//! distributions discarded, and then alternates a Gaussian update with a
//! mixing-fraction update over every subject (MCI included).
//!
//! For stratified cohorts three strategies are provided:
//!
//! * [`fit_independent`]: every group is fitted on its own.
//! * [`fit_coupled`]: Gaussians are shared by all groups, mixing fractions
//!   are per group.
//! * [`fit_coinit`]: a single initialization on the pooled reference
//!   subjects, followed by an independent optimization in each group.
//!
//! All three route through the same joint optimizer, so with a single group
//! they produce bit-identical results.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, DiagnosisLabel, Direction, Stratum};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Posterior probabilities are clamped into this range.
pub const POSTERIOR_FLOOR: f64 = 1e-300;
pub const POSTERIOR_CEIL: f64 = 1.0 - 1e-16;

#[derive(Debug, Error)]
pub enum MixtureError {
    #[error("degenerate fit: {0}")]
    Degenerate(String),
    #[error("mixture log-likelihood became non-finite")]
    NonFinite,
    #[error("no values to fit")]
    Empty,
    #[error("no groups to fit")]
    NoGroups,
    #[error("{}biomarker `{biomarker}`: {source}", group.map(|g| format!("group {g}, ")).unwrap_or_default())]
    Biomarker {
        group: Option<u32>,
        biomarker: String,
        #[source]
        source: Box<MixtureError>,
    },
    #[error("{}{source}", group.map(|g| format!("group {g}: ")).unwrap_or_default())]
    Dataset {
        group: Option<u32>,
        #[source]
        source: DatasetError,
    },
}

impl MixtureError {
    fn in_biomarker(self, group: Option<u32>, biomarker: &str) -> Self {
        MixtureError::Biomarker { group, biomarker: biomarker.to_string(), source: Box::new(self) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPair {
    pub mu_normal: f64,
    pub sigma_normal: f64,
    pub mu_abnormal: f64,
    pub sigma_abnormal: f64,
}

impl GaussianPair {
    pub fn ln_pdf_normal(&self, x: f64) -> f64 {
        ln_normal_pdf(x, self.mu_normal, self.sigma_normal)
    }

    pub fn ln_pdf_abnormal(&self, x: f64) -> f64 {
        ln_normal_pdf(x, self.mu_abnormal, self.sigma_abnormal)
    }

    /// Log-odds of abnormality at `x` for mixing fraction `theta`.
    fn log_odds(&self, x: f64, theta: f64) -> f64 {
        (theta.ln() + self.ln_pdf_abnormal(x)) - ((1.0 - theta).ln() + self.ln_pdf_normal(x))
    }

    fn max_abs_change(&self, other: &GaussianPair) -> f64 {
        [
            self.mu_normal - other.mu_normal,
            self.sigma_normal - other.sigma_normal,
            self.mu_abnormal - other.mu_abnormal,
            self.sigma_abnormal - other.sigma_abnormal,
        ]
        .iter()
        .fold(0.0, |m, d| m.max(d.abs()))
    }
}

fn ln_normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - LN_SQRT_2PI
}

fn logistic(t: f64) -> f64 {
    if t.is_nan() {
        return 0.5;
    }
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Fitted mixture for one biomarker (in one group).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    pub gaussians: GaussianPair,
    /// Mixing fraction of the abnormal component, used as the prior p(E).
    pub theta: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl MixtureFit {
    pub fn posterior(&self, x: f64) -> f64 {
        posterior(x, self)
    }
}

/// Posterior probability that `x` was drawn from the abnormal component.
///
/// Computed from log densities and clamped to
/// [`POSTERIOR_FLOOR`, `POSTERIOR_CEIL`] so products of posteriors never
/// hit an exact zero through rounding.
pub fn posterior(x: f64, fit: &MixtureFit) -> f64 {
    logistic(fit.gaussians.log_odds(x, fit.theta)).clamp(POSTERIOR_FLOOR, POSTERIOR_CEIL)
}

/// Log-likelihood of `values` under the two-component mixture.
pub fn log_likelihood(values: &[f64], gaussians: &GaussianPair, theta: f64) -> f64 {
    let ln_a = theta.ln();
    let ln_n = (1.0 - theta).ln();
    values
        .iter()
        .map(|&x| log_add_exp(ln_a + gaussians.ln_pdf_abnormal(x), ln_n + gaussians.ln_pdf_normal(x)))
        .sum()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population (maximum-likelihood) standard deviation.
fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / values.len() as f64).sqrt()
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Number of extreme values kept when truncation leaves too few points.
fn fallback_count(n: usize) -> usize {
    n.div_ceil(2).max(2).min(n)
}

/// Initial normal and abnormal Gaussians from the CN and AD reference values
/// (sign-normalized, so CN is nominally lower).
///
/// When the two label distributions overlap, the normal component is
/// estimated from CN values at or below the smallest AD value and the
/// abnormal component from AD values at or above the largest CN value. A
/// side left with fewer than two values falls back to its most extreme
/// half. Standard deviations are floored at `1e-6` times the global range.
pub fn init_truncated(cn_values: &[f64], ad_values: &[f64]) -> Result<GaussianPair, MixtureError> {
    if cn_values.len() < 2 || ad_values.len() < 2 {
        return Err(MixtureError::Degenerate(format!(
            "need at least 2 CN and 2 AD values, got {} and {}",
            cn_values.len(),
            ad_values.len()
        )));
    }
    let max_cn = cn_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_ad = ad_values.iter().copied().fold(f64::INFINITY, f64::min);
    let lo = cn_values.iter().chain(ad_values).copied().fold(f64::INFINITY, f64::min);
    let hi = cn_values.iter().chain(ad_values).copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(MixtureError::Degenerate("reference values have no spread".into()));
    }

    let (normal, abnormal) = if max_cn > min_ad {
        let mut normal: Vec<f64> = cn_values.iter().copied().filter(|&x| x <= min_ad).collect();
        if normal.len() < 2 {
            let s = sorted(cn_values);
            normal = s[..fallback_count(s.len())].to_vec();
        }
        let mut abnormal: Vec<f64> = ad_values.iter().copied().filter(|&x| x >= max_cn).collect();
        if abnormal.len() < 2 {
            let s = sorted(ad_values);
            abnormal = s[s.len() - fallback_count(s.len())..].to_vec();
        }
        (normal, abnormal)
    } else {
        (cn_values.to_vec(), ad_values.to_vec())
    };

    let floor = 1e-6 * range;
    Ok(GaussianPair {
        mu_normal: mean(&normal),
        sigma_normal: std_dev(&normal).max(floor),
        mu_abnormal: mean(&abnormal),
        sigma_abnormal: std_dev(&abnormal).max(floor),
    })
}

/// Box constraints applied after every Gaussian update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub mu_normal: (f64, f64),
    pub mu_abnormal: (f64, f64),
    pub sigma: (f64, f64),
}

impl Bounds {
    /// The normal mean may move between the smallest CN value and one slack
    /// above its initial value; the abnormal mean mirrors this on the AD
    /// side. The slack is the larger of the initial component standard
    /// deviation and the pooled standard deviation, since truncation can
    /// leave a component estimated from a handful of extreme values.
    /// Standard deviations stay within `[1e-3, 2]` times the pooled standard
    /// deviation.
    pub fn from_reference(init: &GaussianPair, cn_values: &[f64], ad_values: &[f64], pooled: &[f64]) -> Bounds {
        let min_cn = cn_values.iter().copied().fold(f64::INFINITY, f64::min);
        let max_ad = ad_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sd = std_dev(pooled);
        Bounds {
            mu_normal: (min_cn.min(init.mu_normal), init.mu_normal + init.sigma_normal.max(sd)),
            mu_abnormal: (init.mu_abnormal - init.sigma_abnormal.max(sd), max_ad.max(init.mu_abnormal)),
            sigma: (1e-3 * sd, 2.0 * sd),
        }
    }

    pub fn unbounded() -> Bounds {
        Bounds {
            mu_normal: (f64::NEG_INFINITY, f64::INFINITY),
            mu_abnormal: (f64::NEG_INFINITY, f64::INFINITY),
            sigma: (f64::MIN_POSITIVE, f64::INFINITY),
        }
    }

    fn clamp_sigma(&self, s: f64) -> f64 {
        s.max(self.sigma.0).min(self.sigma.1)
    }

    fn project(&self, g: &GaussianPair) -> GaussianPair {
        GaussianPair {
            mu_normal: g.mu_normal.max(self.mu_normal.0).min(self.mu_normal.1),
            sigma_normal: self.clamp_sigma(g.sigma_normal),
            mu_abnormal: g.mu_abnormal.max(self.mu_abnormal.0).min(self.mu_abnormal.1),
            sigma_abnormal: self.clamp_sigma(g.sigma_abnormal),
        }
    }
}

/// Which parameters the optimizer may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreeParams {
    pub gaussians: bool,
    pub theta: bool,
}

impl FreeParams {
    pub const ALL: FreeParams = FreeParams { gaussians: true, theta: true };
    pub const NONE: FreeParams = FreeParams { gaussians: false, theta: false };
    pub const THETA: FreeParams = FreeParams { gaussians: false, theta: true };
    pub const GAUSSIANS: FreeParams = FreeParams { gaussians: true, theta: false };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerOptions {
    pub free: FreeParams,
    pub bounds: Bounds,
    /// Convergence threshold on the largest parameter change, with means and
    /// standard deviations measured in units of the pooled data scale.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            free: FreeParams::ALL,
            bounds: Bounds::unbounded(),
            tolerance: 1e-4,
            max_iterations: 200,
        }
    }
}

/// Output of the joint optimizer: one Gaussian pair shared by all value
/// sets, one mixing fraction per set.
#[derive(Debug, Clone, PartialEq)]
pub struct JointFit {
    pub gaussians: GaussianPair,
    pub thetas: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Summed log-likelihood before the first and after every iteration.
    pub log_likelihood: Vec<f64>,
}

/// Alternating maximum-likelihood fit of a Gaussian pair shared by several
/// value sets, each with its own mixing fraction.
///
/// Every iteration (a) updates the Gaussians by a bounded EM step using
/// responsibilities from each set's current mixing fraction, then (b)
/// applies the closed-form EM update to every mixing fraction. Both steps
/// maximize the expected complete-data log-likelihood over the feasible
/// set, so the summed log-likelihood never decreases.
pub fn optimize_joint(
    value_sets: &[&[f64]],
    init: GaussianPair,
    thetas0: &[f64],
    options: &OptimizerOptions,
) -> Result<JointFit, MixtureError> {
    if value_sets.is_empty() {
        return Err(MixtureError::NoGroups);
    }
    if value_sets.iter().any(|v| v.is_empty()) {
        return Err(MixtureError::Empty);
    }
    assert_eq!(value_sets.len(), thetas0.len(), "one initial mixing fraction per value set");

    let free = options.free;
    let mut gaussians = init;
    let mut thetas = thetas0.to_vec();
    if free == FreeParams::NONE {
        return Ok(JointFit { gaussians, thetas, converged: true, iterations: 0, log_likelihood: vec![] });
    }
    if free.gaussians {
        gaussians = options.bounds.project(&gaussians);
    }

    let scale = {
        let all: Vec<f64> = value_sets.iter().flat_map(|v| v.iter().copied()).collect();
        let sd = std_dev(&all);
        if sd > 0.0 { sd } else { 1.0 }
    };
    let total_ll = |g: &GaussianPair, th: &[f64]| -> f64 {
        value_sets.iter().zip(th).map(|(v, &t)| log_likelihood(v, g, t)).sum()
    };

    let mut trace = vec![total_ll(&gaussians, &thetas)];
    if !trace[0].is_finite() {
        return Err(MixtureError::NonFinite);
    }
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        let previous = (gaussians, thetas.clone());

        if free.gaussians {
            gaussians = gaussian_step(value_sets, &gaussians, &thetas, &options.bounds);
        }
        if free.theta {
            for (v, t) in value_sets.iter().zip(thetas.iter_mut()) {
                *t = v.iter().map(|&x| logistic(gaussians.log_odds(x, *t))).sum::<f64>() / v.len() as f64;
            }
        }

        let ll = total_ll(&gaussians, &thetas);
        if !ll.is_finite() {
            return Err(MixtureError::NonFinite);
        }
        let last = *trace.last().unwrap();
        debug_assert!(
            ll >= last - 1e-9 * last.abs().max(1.0),
            "log-likelihood decreased: {last} -> {ll}"
        );
        trace.push(ll);

        let theta_change = previous.1.iter().zip(&thetas).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let change = (gaussians.max_abs_change(&previous.0) / scale).max(theta_change);
        if change < options.tolerance {
            converged = true;
            break;
        }
    }

    Ok(JointFit { gaussians, thetas, converged, iterations, log_likelihood: trace })
}

/// Bounded EM update of the Gaussian pair with mixing fractions held fixed.
fn gaussian_step(value_sets: &[&[f64]], g: &GaussianPair, thetas: &[f64], bounds: &Bounds) -> GaussianPair {
    let (mut w_a, mut wx_a, mut w_n, mut wx_n) = (0.0, 0.0, 0.0, 0.0);
    let mut responsibilities: Vec<Vec<f64>> = Vec::with_capacity(value_sets.len());
    for (v, &t) in value_sets.iter().zip(thetas) {
        let r: Vec<f64> = v.iter().map(|&x| logistic(g.log_odds(x, t))).collect();
        for (&x, &p) in v.iter().zip(&r) {
            w_a += p;
            wx_a += p * x;
            w_n += 1.0 - p;
            wx_n += (1.0 - p) * x;
        }
        responsibilities.push(r);
    }

    let mut next = *g;
    if w_a > 0.0 {
        next.mu_abnormal = (wx_a / w_a).max(bounds.mu_abnormal.0).min(bounds.mu_abnormal.1);
    }
    if w_n > 0.0 {
        next.mu_normal = (wx_n / w_n).max(bounds.mu_normal.0).min(bounds.mu_normal.1);
    }
    // variances about the projected means
    let (mut ss_a, mut ss_n) = (0.0, 0.0);
    for (v, r) in value_sets.iter().zip(&responsibilities) {
        for (&x, &p) in v.iter().zip(r) {
            ss_a += p * (x - next.mu_abnormal).powi(2);
            ss_n += (1.0 - p) * (x - next.mu_normal).powi(2);
        }
    }
    if w_a > 0.0 {
        next.sigma_abnormal = bounds.clamp_sigma((ss_a / w_a).sqrt());
    }
    if w_n > 0.0 {
        next.sigma_normal = bounds.clamp_sigma((ss_n / w_n).sqrt());
    }
    next
}

/// Alternating fit on a single value set.
pub fn optimize_alternating(
    values: &[f64],
    init: GaussianPair,
    theta0: f64,
    options: &OptimizerOptions,
) -> Result<MixtureFit, MixtureError> {
    optimize_joint(&[values], init, &[theta0], options).map(|j| MixtureFit {
        gaussians: j.gaussians,
        theta: j.thetas[0],
        converged: j.converged,
        iterations: j.iterations,
    })
}

/// Fraction of values closer, in z-score, to the abnormal component.
pub fn initial_theta(values: &[f64], init: &GaussianPair) -> f64 {
    if values.is_empty() {
        return 0.5;
    }
    let abnormal = values
        .iter()
        .filter(|&&x| {
            ((x - init.mu_abnormal) / init.sigma_abnormal).abs() < ((x - init.mu_normal) / init.sigma_normal).abs()
        })
        .count();
    abnormal as f64 / values.len() as f64
}

/// Stratification strategy for mixture fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Independent,
    Coupled,
    Coinit,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Independent, Strategy::Coupled, Strategy::Coinit];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Independent => "independent",
            Strategy::Coupled => "coupled",
            Strategy::Coinit => "coinit",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "independent" => Ok(Strategy::Independent),
            "coupled" => Ok(Strategy::Coupled),
            "coinit" | "co-init" => Ok(Strategy::Coinit),
            other => Err(format!("unknown strategy `{other}` (expected independent, coupled or coinit)")),
        }
    }
}

/// Per-biomarker fits for one stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumFits {
    pub group: Option<u32>,
    pub fits: Vec<MixtureFit>,
}

/// Fitted mixtures for every biomarker, either for a whole cohort (a single
/// stratum with no group id) or for every group of a stratified cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSet {
    pub biomarkers: Vec<String>,
    pub directions: Vec<Direction>,
    pub strata: Vec<StratumFits>,
}

/// One row of the serialized mixture set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRecord {
    pub biomarker: String,
    pub group: Option<u32>,
    pub direction: Direction,
    pub mu_normal: f64,
    pub sigma_normal: f64,
    pub mu_abnormal: f64,
    pub sigma_abnormal: f64,
    pub theta: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl MixtureSet {
    pub fn stratum(&self, group: Option<u32>) -> Option<&StratumFits> {
        self.strata.iter().find(|s| s.group == group)
    }

    pub fn to_records(&self) -> Vec<MixtureRecord> {
        let mut out = Vec::new();
        for stratum in &self.strata {
            for ((name, dir), fit) in self.biomarkers.iter().zip(&self.directions).zip(&stratum.fits) {
                out.push(MixtureRecord {
                    biomarker: name.clone(),
                    group: stratum.group,
                    direction: *dir,
                    mu_normal: fit.gaussians.mu_normal,
                    sigma_normal: fit.gaussians.sigma_normal,
                    mu_abnormal: fit.gaussians.mu_abnormal,
                    sigma_abnormal: fit.gaussians.sigma_abnormal,
                    theta: fit.theta,
                    converged: fit.converged,
                    iterations: fit.iterations,
                });
            }
        }
        out
    }

    /// Rebuilds a set from records. Biomarker order follows first
    /// appearance; every stratum must cover every biomarker.
    pub fn from_records(records: &[MixtureRecord]) -> Result<MixtureSet, String> {
        let mut biomarkers: Vec<String> = Vec::new();
        let mut directions = Vec::new();
        let mut groups: Vec<Option<u32>> = Vec::new();
        for r in records {
            if !biomarkers.contains(&r.biomarker) {
                biomarkers.push(r.biomarker.clone());
                directions.push(r.direction);
            }
            if !groups.contains(&r.group) {
                groups.push(r.group);
            }
        }
        if groups.len() > 1 && groups.contains(&None) {
            return Err("mixture records mix grouped and ungrouped fits".into());
        }
        let mut strata = Vec::new();
        for g in groups {
            let mut fits = Vec::with_capacity(biomarkers.len());
            for name in &biomarkers {
                let r = records
                    .iter()
                    .find(|r| r.group == g && &r.biomarker == name)
                    .ok_or_else(|| format!("no fit for biomarker `{name}` in group {g:?}"))?;
                fits.push(MixtureFit {
                    gaussians: GaussianPair {
                        mu_normal: r.mu_normal,
                        sigma_normal: r.sigma_normal,
                        mu_abnormal: r.mu_abnormal,
                        sigma_abnormal: r.sigma_abnormal,
                    },
                    theta: r.theta,
                    converged: r.converged,
                    iterations: r.iterations,
                });
            }
            strata.push(StratumFits { group: g, fits });
        }
        Ok(MixtureSet { biomarkers, directions, strata })
    }
}

impl Serialize for MixtureSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_records().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for MixtureSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let records = Vec::<MixtureRecord>::deserialize(deserializer)?;
        MixtureSet::from_records(&records).map_err(serde::de::Error::custom)
    }
}

/// Reference values of one biomarker gathered from one or more strata.
struct Reference {
    cn: Vec<f64>,
    ad: Vec<f64>,
    all: Vec<f64>,
}

impl Reference {
    fn gather<'a>(strata: impl IntoIterator<Item = &'a Stratum>, i: usize) -> Reference {
        let mut r = Reference { cn: vec![], ad: vec![], all: vec![] };
        for s in strata {
            r.cn.extend(s.data.values_for(i, DiagnosisLabel::CN));
            r.ad.extend(s.data.values_for(i, DiagnosisLabel::AD));
            r.all.extend(s.data.column(i));
        }
        r
    }

    fn init(&self, options: &OptimizerOptions) -> Result<(GaussianPair, OptimizerOptions), MixtureError> {
        let init = init_truncated(&self.cn, &self.ad)?;
        let bounds = Bounds::from_reference(&init, &self.cn, &self.ad, &self.all);
        Ok((init, OptimizerOptions { bounds, ..*options }))
    }
}

fn check_strata(strata: &[Stratum]) -> Result<(), MixtureError> {
    if strata.is_empty() {
        return Err(MixtureError::NoGroups);
    }
    for s in strata {
        s.data
            .validate()
            .map_err(|source| MixtureError::Dataset { group: s.group, source })?;
    }
    let names = strata[0].data.biomarker_names();
    assert!(
        strata.iter().all(|s| s.data.biomarker_names() == names),
        "strata must share biomarkers"
    );
    Ok(())
}

/// Assembles per-biomarker results (outer index) into per-stratum fits.
fn assemble(strata: &[Stratum], per_biomarker: Vec<Vec<MixtureFit>>) -> MixtureSet {
    let first = &strata[0].data;
    MixtureSet {
        biomarkers: first.biomarker_names().to_vec(),
        directions: first.directions().to_vec(),
        strata: strata
            .iter()
            .enumerate()
            .map(|(k, s)| StratumFits { group: s.group, fits: per_biomarker.iter().map(|b| b[k]).collect() })
            .collect(),
    }
}

fn single_fit(values: &[f64], init: GaussianPair, options: &OptimizerOptions) -> Result<MixtureFit, MixtureError> {
    optimize_alternating(values, init, initial_theta(values, &init), options)
}

/// Fits every stratum as an independent dataset.
pub fn fit_independent(strata: &[Stratum], options: &OptimizerOptions) -> Result<MixtureSet, MixtureError> {
    check_strata(strata)?;
    let names = strata[0].data.biomarker_names();
    let per_biomarker = (0..names.len())
        .into_par_iter()
        .map(|i| {
            strata
                .iter()
                .map(|s| {
                    let reference = Reference::gather([s], i);
                    let (init, opts) = reference.init(options)?;
                    single_fit(&reference.all, init, &opts)
                })
                .collect::<Result<Vec<_>, MixtureError>>()
                .map_err(|e| e.in_biomarker(None, &names[i]))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(strata, per_biomarker))
}

/// Shares the Gaussians across strata while estimating one mixing fraction
/// per stratum. Initialization uses the pooled reference subjects.
pub fn fit_coupled(strata: &[Stratum], options: &OptimizerOptions) -> Result<MixtureSet, MixtureError> {
    check_strata(strata)?;
    let names = strata[0].data.biomarker_names();
    let per_biomarker = (0..names.len())
        .into_par_iter()
        .map(|i| {
            let pooled = Reference::gather(strata, i);
            let (init, opts) = pooled.init(options).map_err(|e| e.in_biomarker(None, &names[i]))?;
            let columns: Vec<Vec<f64>> = strata.iter().map(|s| s.data.column(i)).collect();
            let sets: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
            let thetas0: Vec<f64> = columns.iter().map(|c| initial_theta(c, &init)).collect();
            let joint = optimize_joint(&sets, init, &thetas0, &opts).map_err(|e| e.in_biomarker(None, &names[i]))?;
            Ok(joint
                .thetas
                .iter()
                .map(|&theta| MixtureFit {
                    gaussians: joint.gaussians,
                    theta,
                    converged: joint.converged,
                    iterations: joint.iterations,
                })
                .collect())
        })
        .collect::<Result<Vec<_>, MixtureError>>()?;
    Ok(assemble(strata, per_biomarker))
}

/// Initializes once on the pooled reference subjects, then optimizes every
/// stratum independently from that shared starting point.
pub fn fit_coinit(strata: &[Stratum], options: &OptimizerOptions) -> Result<MixtureSet, MixtureError> {
    check_strata(strata)?;
    let names = strata[0].data.biomarker_names();
    let per_biomarker = (0..names.len())
        .into_par_iter()
        .map(|i| {
            let pooled = Reference::gather(strata, i);
            let (init, opts) = pooled.init(options).map_err(|e| e.in_biomarker(None, &names[i]))?;
            strata
                .iter()
                .map(|s| single_fit(&s.data.column(i), init, &opts).map_err(|e| e.in_biomarker(s.group, &names[i])))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, MixtureError>>()?;
    Ok(assemble(strata, per_biomarker))
}

pub fn fit_mixtures(strategy: Strategy, strata: &[Stratum], options: &OptimizerOptions) -> Result<MixtureSet, MixtureError> {
    match strategy {
        Strategy::Independent => fit_independent(strata, options),
        Strategy::Coupled => fit_coupled(strata, options),
        Strategy::Coinit => fit_coinit(strata, options),
    }
}
