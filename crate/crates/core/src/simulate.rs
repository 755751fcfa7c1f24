//! Synthetic stratified cohorts with known ground truth.
//!
//! Each biomarker follows a sigmoid in disease time from a subject-specific
//! normal level to a subject-specific abnormal level; both levels are drawn
//! from population Gaussians. Event times are spaced evenly along each
//! group's ground-truth ordering. Group 1 uses the canonical ordering,
//! later groups are drawn uniformly at a fixed Kendall distance from it.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{BiomarkerDataset, DatasetError, DiagnosisLabel, Direction, Subject};
use crate::seeds;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("unrealizable Kendall distance: epsilon_O = {epsilon_o} must lie in [0, 1]")]
    UnrealizableDistance { epsilon_o: f64 },
    #[error("cannot place {k} inversions among {n} items (at most {max})")]
    TooManyInversions { k: usize, n: usize, max: usize },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Generating parameters of one biomarker in one group, in sign-normalized
/// units (abnormal above normal) and disease-time units on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryParams {
    pub normal_mean: f64,
    pub normal_std: f64,
    pub abnormal_mean: f64,
    pub abnormal_std: f64,
    pub steepness: f64,
    pub event_time: f64,
}

impl TrajectoryParams {
    /// Value at `time` for given subject-specific normal and abnormal levels.
    pub fn level(&self, time: f64, normal: f64, abnormal: f64) -> f64 {
        normal + (abnormal - normal) / (1.0 + (-self.steepness * (time - self.event_time)).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelFractions {
    pub cn: f64,
    pub mci: f64,
    pub ad: f64,
}

impl Default for LabelFractions {
    fn default() -> Self {
        LabelFractions { cn: 1.0 / 3.0, mci: 1.0 / 3.0, ad: 1.0 / 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub n_biomarkers: usize,
    pub group_sizes: Vec<usize>,
    /// Normalized Kendall distance between group 1's ordering and every
    /// other group's ordering.
    pub epsilon_o: f64,
    /// Shift of the abnormal mean in groups after the first, as a multiple
    /// of group 1's normal-to-abnormal distance.
    pub epsilon_g: f64,
    pub label_fractions: LabelFractions,
    pub normal_mean: f64,
    pub abnormal_mean: f64,
    pub population_std: f64,
    pub noise_std: f64,
    /// Sigmoid steepness in 1 / disease-time units (the axis has length 1).
    pub steepness: f64,
    /// Event times are spaced evenly on this window.
    pub event_window: (f64, f64),
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n_biomarkers: 7,
            group_sizes: vec![100, 900],
            epsilon_o: 0.0,
            epsilon_g: 0.0,
            label_fractions: LabelFractions::default(),
            normal_mean: 0.0,
            abnormal_mean: 1.0,
            population_std: 0.1,
            noise_std: 0.05,
            steepness: 10.0,
            event_window: (0.2, 0.8),
            seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: &str| Err(SimulationError::InvalidConfig(m.to_string()));
        if self.n_biomarkers == 0 {
            return bad("n_biomarkers must be at least 1");
        }
        if self.group_sizes.is_empty() || self.group_sizes.contains(&0) {
            return bad("every group needs at least one subject");
        }
        inversions_for(self.epsilon_o, self.n_biomarkers)?;
        let f = &self.label_fractions;
        if [f.cn, f.mci, f.ad].iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (f.cn + f.mci + f.ad - 1.0).abs() > 1e-9 {
            return bad("label fractions must be non-negative and sum to 1");
        }
        if !(self.abnormal_mean > self.normal_mean) {
            return bad("abnormal_mean must exceed normal_mean");
        }
        if !(self.steepness > 0.0) {
            return bad("steepness must be positive");
        }
        if !(self.population_std >= 0.0 && self.noise_std >= 0.0) {
            return bad("standard deviations must be non-negative");
        }
        let (lo, hi) = self.event_window;
        if !(lo <= hi && (self.n_biomarkers == 1 || lo < hi)) {
            return bad("event window must be increasing");
        }
        if !self.epsilon_g.is_finite() {
            return bad("epsilon_G must be finite");
        }
        Ok(())
    }

    /// Evenly spaced event times on the configured window.
    pub fn event_times(&self) -> Vec<f64> {
        let (lo, hi) = self.event_window;
        let n = self.n_biomarkers;
        if n == 1 {
            return vec![(lo + hi) / 2.0];
        }
        (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
    }
}

pub fn n_pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Inversion count realizing a normalized Kendall distance: the nearest
/// integer to `epsilon_o * C(n, 2)`.
pub fn inversions_for(epsilon_o: f64, n: usize) -> Result<usize, SimulationError> {
    if !(0.0..=1.0).contains(&epsilon_o) {
        return Err(SimulationError::UnrealizableDistance { epsilon_o });
    }
    Ok((epsilon_o * n_pairs(n) as f64).round() as usize)
}

/// Number of permutations of `n` items with each inversion count
/// (Mahonian numbers), for prefixes of length `0..=n`.
fn mahonian_table(n: usize) -> Vec<Vec<u128>> {
    let mut table = vec![vec![1u128]];
    for i in 0..n {
        let prev = &table[i];
        let len = prev.len() + i;
        let mut row = vec![0u128; len];
        for (s, slot) in row.iter_mut().enumerate() {
            let lo = s.saturating_sub(i);
            *slot = (lo..=s.min(prev.len() - 1)).map(|t| prev[t]).sum();
        }
        table.push(row);
    }
    table
}

/// A permutation drawn uniformly among those with exactly `k` inversions
/// relative to `reference`.
pub fn ordering_at_distance<R: Rng + ?Sized>(reference: &[usize], k: usize, rng: &mut R) -> Result<Vec<usize>, SimulationError> {
    let n = reference.len();
    let max = n_pairs(n);
    if k > max {
        return Err(SimulationError::TooManyInversions { k, n, max });
    }
    if n > 33 {
        return Err(SimulationError::InvalidConfig("at most 33 biomarkers are supported".into()));
    }
    let table = mahonian_table(n);
    // codes[t] = how many of reference[..t] end up after reference[t]
    let mut codes = vec![0usize; n];
    let mut remaining = k;
    for t in (0..n).rev() {
        let prefix = &table[t];
        let weight = |c: usize| prefix.get(remaining - c).copied().unwrap_or(0);
        let choices = 0..=t.min(remaining);
        let total: u128 = choices.clone().map(weight).sum();
        let mut u = rng.random_range(0..total);
        let mut chosen = 0;
        for c in choices {
            let w = weight(c);
            if u < w {
                chosen = c;
                break;
            }
            u -= w;
        }
        codes[t] = chosen;
        remaining -= chosen;
    }
    let mut out: Vec<usize> = Vec::with_capacity(n);
    for (t, &item) in reference.iter().enumerate() {
        out.insert(t - codes[t], item);
    }
    Ok(out)
}

/// Group-2 ordering at normalized Kendall distance `epsilon_o` from `s1`.
pub fn make_group2_ordering(s1: &[usize], epsilon_o: f64, seed: u64) -> Result<Vec<usize>, SimulationError> {
    let k = inversions_for(epsilon_o, s1.len())?;
    ordering_at_distance(s1, k, &mut seeds::stream(seed, "group-ordering", 2))
}

/// Draws one subject's biomarker vector at disease time `time`.
pub fn simulate_subject<R: Rng + ?Sized>(time: f64, params: &[TrajectoryParams], noise_std: f64, rng: &mut R) -> Vec<f64> {
    params
        .iter()
        .map(|p| {
            let normal = p.normal_mean + p.normal_std * standard_normal(rng);
            let abnormal = p.abnormal_mean + p.abnormal_std * standard_normal(rng);
            p.level(time, normal, abnormal) + noise_std * standard_normal(rng)
        })
        .collect()
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Normal::new(0.0, 1.0).unwrap().sample(rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTruth {
    pub group: u32,
    /// Biomarker indices in order of their events.
    pub ordering: Vec<usize>,
    /// Indexed by biomarker.
    pub params: Vec<TrajectoryParams>,
    /// Disease time of every subject in the group, in dataset order.
    pub disease_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub biomarkers: Vec<String>,
    pub groups: Vec<GroupTruth>,
    pub seed: u64,
    pub config: SimulationConfig,
}

impl GroundTruth {
    /// Disease times of all subjects in dataset order.
    pub fn disease_times(&self) -> Vec<f64> {
        self.groups.iter().flat_map(|g| g.disease_times.iter().copied()).collect()
    }
}

fn label_counts(n: usize, f: &LabelFractions) -> [(DiagnosisLabel, usize); 3] {
    let cn = ((f.cn * n as f64).round() as usize).min(n);
    let ad = ((f.ad * n as f64).round() as usize).min(n - cn);
    [(DiagnosisLabel::CN, cn), (DiagnosisLabel::MCI, n - cn - ad), (DiagnosisLabel::AD, ad)]
}

/// Disease-time interval of each diagnosis: thirds of the unit axis.
fn time_range(label: DiagnosisLabel) -> (f64, f64) {
    match label {
        DiagnosisLabel::CN => (0.0, 1.0 / 3.0),
        DiagnosisLabel::MCI => (1.0 / 3.0, 2.0 / 3.0),
        DiagnosisLabel::AD => (2.0 / 3.0, 1.0),
    }
}

pub fn biomarker_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("B{i}")).collect()
}

/// Generating parameters of every group, indexed by group then biomarker,
/// together with each group's ordering.
pub fn group_parameters(config: &SimulationConfig) -> Result<Vec<(Vec<usize>, Vec<TrajectoryParams>)>, SimulationError> {
    config.validate()?;
    let n = config.n_biomarkers;
    let canonical: Vec<usize> = (0..n).collect();
    let times = config.event_times();
    let d = config.abnormal_mean - config.normal_mean;
    let k = inversions_for(config.epsilon_o, n)?;

    let mut out = Vec::with_capacity(config.group_sizes.len());
    for g in 0..config.group_sizes.len() {
        let ordering = if g == 0 {
            canonical.clone()
        } else {
            ordering_at_distance(&canonical, k, &mut seeds::stream(config.seed, "group-ordering", g as u64 + 1))?
        };
        let shift = if g == 0 { 0.0 } else { config.epsilon_g * d };
        let mut params = vec![
            TrajectoryParams {
                normal_mean: config.normal_mean,
                normal_std: config.population_std,
                abnormal_mean: config.abnormal_mean + shift,
                abnormal_std: config.population_std,
                steepness: config.steepness,
                event_time: 0.0,
            };
            n
        ];
        for (pos, &b) in ordering.iter().enumerate() {
            params[b].event_time = times[pos];
        }
        out.push((ordering, params));
    }
    Ok(out)
}

/// Simulates a stratified cohort. Group ids are `1..=G`; within a group,
/// subjects are listed CN, then MCI, then AD.
pub fn simulate_dataset(config: &SimulationConfig) -> Result<(BiomarkerDataset, GroundTruth), SimulationError> {
    let groups = group_parameters(config)?;
    let names = biomarker_names(config.n_biomarkers);
    let mut subjects = Vec::new();
    let mut truths = Vec::with_capacity(groups.len());

    for (g, ((ordering, params), &size)) in groups.into_iter().zip(&config.group_sizes).enumerate() {
        let group = g as u32 + 1;
        let mut times = Vec::with_capacity(size);
        let mut index = 0usize;
        for (label, count) in label_counts(size, &config.label_fractions) {
            let (lo, hi) = time_range(label);
            for _ in 0..count {
                let mut rng = seeds::stream(config.seed, "subject", ((group as u64) << 32) | index as u64);
                let t = lo + (hi - lo) * rng.random::<f64>();
                let values = simulate_subject(t, &params, config.noise_std, &mut rng);
                subjects.push(Subject {
                    id: format!("g{group}-s{index:05}"),
                    diagnosis: label,
                    group: Some(group),
                    values: values.into_iter().map(Some).collect(),
                });
                times.push(t);
                index += 1;
            }
        }
        truths.push(GroupTruth { group, ordering, params, disease_times: times });
    }

    let directions = vec![Direction::Increasing; names.len()];
    let dataset = BiomarkerDataset::with_directions(names.clone(), subjects, directions)?;
    Ok((dataset, GroundTruth { biomarkers: names, groups: truths, seed: config.seed, config: config.clone() }))
}
