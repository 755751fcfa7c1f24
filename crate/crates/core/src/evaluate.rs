//! Ordering error, bootstrap positional variance, staging correlation and
//! the simulation benchmark drivers.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::dataset::{BiomarkerDataset, Subject};
use crate::mixture::{OptimizerOptions, Strategy};
use crate::model::{fit_model, ModelError};
use crate::seeds;
use crate::simulate::{n_pairs, simulate_dataset, SimulationConfig, SimulationError};

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("orderings cover different biomarker sets")]
    MismatchedOrderings,
    #[error("correlation needs at least 3 complete pairs, got {0}")]
    TooFewPairs(usize),
    #[error("correlation is undefined: {0} has zero variance")]
    ZeroVariance(&'static str),
    #[error("stage and score lists differ in length ({0} vs {1})")]
    Misaligned(usize, usize),
    #[error("bootstrap needs at least one repetition")]
    NoRepetitions,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Number of discordant pairs between two orderings of the same items,
/// counted by merge sort.
pub fn kendall_distance(a: &[usize], b: &[usize]) -> Result<usize, EvaluateError> {
    let n = a.len();
    if b.len() != n {
        return Err(EvaluateError::MismatchedOrderings);
    }
    let mut pos_in_b = vec![usize::MAX; n];
    for (k, &x) in b.iter().enumerate() {
        if x >= n || pos_in_b[x] != usize::MAX {
            return Err(EvaluateError::MismatchedOrderings);
        }
        pos_in_b[x] = k;
    }
    let mut seq = Vec::with_capacity(n);
    for &x in a {
        match pos_in_b.get(x) {
            Some(&p) if p != usize::MAX => seq.push(p),
            _ => return Err(EvaluateError::MismatchedOrderings),
        }
    }
    let mut sorted = seq.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != n {
        return Err(EvaluateError::MismatchedOrderings);
    }
    let mut buffer = vec![0; n];
    Ok(count_inversions(&mut seq, &mut buffer))
}

fn count_inversions(seq: &mut [usize], buffer: &mut [usize]) -> usize {
    let n = seq.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = {
        let (left, right) = seq.split_at_mut(mid);
        let (bl, br) = buffer.split_at_mut(mid);
        count_inversions(left, bl) + count_inversions(right, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if seq[i] <= seq[j] {
            buffer[k] = seq[i];
            i += 1;
        } else {
            buffer[k] = seq[j];
            count += mid - i;
            j += 1;
        }
        k += 1;
    }
    buffer[k..k + mid - i].copy_from_slice(&seq[i..mid]);
    k += mid - i;
    buffer[k..k + n - j].copy_from_slice(&seq[j..n]);
    seq.copy_from_slice(&buffer[..n]);
    count
}

/// Kendall distance normalized by the number of pairs, in `[0, 1]`.
pub fn normalized_kendall_error(s: &[usize], s_gt: &[usize]) -> Result<f64, EvaluateError> {
    let k = kendall_distance(s, s_gt)?;
    let pairs = n_pairs(s.len());
    Ok(if pairs == 0 { 0.0 } else { k as f64 / pairs as f64 })
}

/// Counts of how often each biomarker landed at each position.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalVariance {
    pub group: Option<u32>,
    /// `counts[biomarker][position]`.
    pub counts: Vec<Vec<usize>>,
    /// Central ordering on the full dataset, used to order rows for display.
    pub reference_ordering: Vec<usize>,
    pub completed: usize,
    pub skipped: usize,
}

/// Sidecar describing a positional-variance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionalVarianceSidecar {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<u32>,
    /// Biomarker names in central-ordering order, matching the matrix rows.
    pub biomarkers: Vec<String>,
    pub repetitions: usize,
    pub completed: usize,
    pub skipped: usize,
}

impl PositionalVariance {
    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<usize> {
        let n = self.counts.len();
        (0..n).map(|p| self.counts.iter().map(|r| r[p]).sum()).collect()
    }

    /// Matrix with rows in reference order: `biomarker,pos_1,...,pos_N`.
    pub fn write_csv<W: Write>(&self, names: &[String], writer: W) -> Result<(), EvaluateError> {
        let mut w = csv::Writer::from_writer(writer);
        let n = self.counts.len();
        let mut header = vec!["biomarker".to_string()];
        header.extend((1..=n).map(|p| format!("pos_{p}")));
        w.write_record(&header)?;
        for &b in &self.reference_ordering {
            let mut row = vec![names[b].clone()];
            row.extend(self.counts[b].iter().map(usize::to_string));
            w.write_record(&row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn sidecar(&self, names: &[String]) -> PositionalVarianceSidecar {
        PositionalVarianceSidecar {
            group: self.group,
            biomarkers: self.reference_ordering.iter().map(|&b| names[b].clone()).collect(),
            repetitions: self.completed + self.skipped,
            completed: self.completed,
            skipped: self.skipped,
        }
    }
}

pub const BOOTSTRAP_ATTEMPTS: usize = 10;

/// Resamples subjects with replacement within each group (or within the
/// whole cohort when it has no groups), keeping group sizes.
pub fn resample_stratified<R: Rng + ?Sized>(dataset: &BiomarkerDataset, rng: &mut R) -> BiomarkerDataset {
    let mut by_group: BTreeMap<Option<u32>, Vec<&Subject>> = BTreeMap::new();
    for s in dataset.subjects() {
        by_group.entry(s.group).or_default().push(s);
    }
    let mut subjects = Vec::with_capacity(dataset.n_subjects());
    for members in by_group.values() {
        for _ in 0..members.len() {
            subjects.push(members[rng.random_range(0..members.len())].clone());
        }
    }
    dataset.derive(subjects)
}

/// Positional variance per stratum over `repetitions` bootstrap fits.
/// Each replicate that fails is redrawn up to [`BOOTSTRAP_ATTEMPTS`] times,
/// then skipped.
pub fn bootstrap_positional_variance(
    dataset: &BiomarkerDataset,
    strategy: Strategy,
    repetitions: usize,
    seed: u64,
    options: &OptimizerOptions,
) -> Result<Vec<PositionalVariance>, EvaluateError> {
    if repetitions == 0 {
        return Err(EvaluateError::NoRepetitions);
    }
    let reference = fit_model(dataset, strategy, options)?;
    let n = dataset.n_biomarkers();
    let replicates: Vec<Option<Vec<Vec<usize>>>> = (0..repetitions)
        .into_par_iter()
        .map(|b| {
            let mut rng = seeds::stream(seed, "bootstrap", b as u64);
            (0..BOOTSTRAP_ATTEMPTS).find_map(|_| {
                let sample = resample_stratified(dataset, &mut rng);
                fit_model(&sample, strategy, options).ok().map(|m| m.timelines.into_iter().map(|t| t.ordering).collect())
            })
        })
        .collect();

    let mut out: Vec<PositionalVariance> = reference
        .mixtures
        .strata
        .iter()
        .zip(&reference.timelines)
        .map(|(s, t)| PositionalVariance {
            group: s.group,
            counts: vec![vec![0; n]; n],
            reference_ordering: t.ordering.clone(),
            completed: 0,
            skipped: 0,
        })
        .collect();
    for replicate in replicates {
        match replicate {
            Some(orderings) => {
                for (pv, ordering) in out.iter_mut().zip(orderings) {
                    for (pos, b) in ordering.into_iter().enumerate() {
                        pv.counts[b][pos] += 1;
                    }
                    pv.completed += 1;
                }
            }
            None => out.iter_mut().for_each(|pv| pv.skipped += 1),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub n: usize,
    pub pearson_r: f64,
    pub pearson_p: f64,
    pub spearman_rho: f64,
    pub spearman_p: f64,
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvaluateError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(EvaluateError::ZeroVariance("stages"));
    }
    if syy == 0.0 {
        return Err(EvaluateError::ZeroVariance("scores"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

/// Two-sided p-value of a correlation coefficient from the t approximation.
fn correlation_p(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.cdf(-t.abs())).min(1.0)
}

/// Pearson and Spearman correlation between stages and scores; pairs with a
/// missing or non-finite score are dropped.
pub fn staging_correlation(stages: &[f64], scores: &[Option<f64>]) -> Result<Correlation, EvaluateError> {
    if stages.len() != scores.len() {
        return Err(EvaluateError::Misaligned(stages.len(), scores.len()));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = stages
        .iter()
        .zip(scores)
        .filter_map(|(&s, c)| c.filter(|v| v.is_finite() && s.is_finite()).map(|v| (s, v)))
        .unzip();
    let n = x.len();
    if n < 3 {
        return Err(EvaluateError::TooFewPairs(n));
    }
    let pearson_r = pearson(&x, &y)?;
    let spearman_rho = pearson(&average_ranks(&x), &average_ranks(&y))?;
    Ok(Correlation {
        n,
        pearson_r,
        pearson_p: correlation_p(pearson_r, n),
        spearman_rho,
        spearman_p: correlation_p(spearman_rho, n),
    })
}

/// Benchmark grid: every combination of the listed values, `reps` times.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentGrid {
    pub epsilon_o: Vec<f64>,
    pub epsilon_g: Vec<f64>,
    pub n1: Vec<usize>,
    pub n2: usize,
    pub reps: usize,
    pub seed: u64,
    pub strategies: Vec<Strategy>,
    /// Template for every simulated cohort; sizes, distances and seed are
    /// overwritten per cell.
    pub base: SimulationConfig,
    pub options: OptimizerOptions,
}

pub const DEFAULT_REPS: usize = 10;
pub const DEFAULT_BOOTSTRAPS: usize = 100;

impl ExperimentGrid {
    /// Inter-group ordering distance against group-1 size, no mean shift.
    pub fn experiment1(reps: usize, seed: u64) -> ExperimentGrid {
        ExperimentGrid {
            epsilon_o: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            epsilon_g: vec![0.0],
            n1: vec![100, 300, 500, 700, 900],
            n2: 900,
            reps,
            seed,
            strategies: Strategy::ALL.to_vec(),
            base: SimulationConfig::default(),
            options: OptimizerOptions::default(),
        }
    }

    /// Abnormal-mean shift against group-1 size at a fixed ordering distance.
    pub fn experiment2(reps: usize, seed: u64) -> ExperimentGrid {
        ExperimentGrid { epsilon_o: vec![0.4], epsilon_g: vec![-0.2, 0.0, 0.2], ..ExperimentGrid::experiment1(reps, seed) }
    }

    fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &epsilon_g in &self.epsilon_g {
            for &epsilon_o in &self.epsilon_o {
                for &n1 in &self.n1 {
                    cells.push(Cell { epsilon_o, epsilon_g, n1 });
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cell {
    epsilon_o: f64,
    epsilon_g: f64,
    n1: usize,
}

/// One line of a benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub strategy: Strategy,
    pub group: u32,
    pub epsilon_o: f64,
    pub epsilon_g: f64,
    pub n1: usize,
    pub n2: usize,
    pub reps: usize,
    pub mean_eps_s: f64,
    pub std_eps_s: f64,
    pub failures: usize,
}

/// Ordering error per group for one strategy on one simulated cohort.
type Outcome = Result<Vec<f64>, String>;

fn run_replicate(grid: &ExperimentGrid, cell: Cell, rep: usize) -> Vec<Outcome> {
    // the simulation seed depends on the repetition only, so cells share
    // their group-1 subjects
    let config = SimulationConfig {
        group_sizes: vec![cell.n1, grid.n2],
        epsilon_o: cell.epsilon_o,
        epsilon_g: cell.epsilon_g,
        seed: seeds::derive_seed(grid.seed, "replicate", rep as u64),
        ..grid.base.clone()
    };
    let simulated = simulate_dataset(&config);
    grid.strategies
        .iter()
        .map(|&strategy| {
            let (dataset, truth) = simulated.as_ref().map_err(|e| e.to_string())?;
            let model = fit_model(dataset, strategy, &grid.options).map_err(|e| e.to_string())?;
            truth
                .groups
                .iter()
                .zip(&model.timelines)
                .map(|(g, t)| normalized_kendall_error(&t.ordering, &g.ordering).map_err(|e| e.to_string()))
                .collect()
        })
        .collect()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Runs every cell and repetition of the grid in parallel and tabulates the
/// mean and sample standard deviation of the ordering error per strategy,
/// group and cell. Failed fits are counted, not averaged.
pub fn run_grid(grid: &ExperimentGrid) -> Vec<ResultRow> {
    let cells = grid.cells();
    let work: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..grid.reps).map(move |r| (c, r))).collect();
    let outcomes: Vec<Vec<Outcome>> = work.par_iter().map(|&(c, r)| run_replicate(grid, cells[c], r)).collect();

    let mut rows = Vec::new();
    for (c, cell) in cells.iter().enumerate() {
        let cell_outcomes = &outcomes[c * grid.reps..(c + 1) * grid.reps];
        for (k, &strategy) in grid.strategies.iter().enumerate() {
            let ok: Vec<&Vec<f64>> = cell_outcomes.iter().filter_map(|o| o[k].as_ref().ok()).collect();
            let failures = grid.reps - ok.len();
            for group in 0..2 {
                let errors: Vec<f64> = ok.iter().map(|e| e[group]).collect();
                let (mean_eps_s, std_eps_s) = mean_std(&errors);
                rows.push(ResultRow {
                    strategy,
                    group: group as u32 + 1,
                    epsilon_o: cell.epsilon_o,
                    epsilon_g: cell.epsilon_g,
                    n1: cell.n1,
                    n2: grid.n2,
                    reps: grid.reps,
                    mean_eps_s,
                    std_eps_s,
                    failures,
                });
            }
        }
    }
    rows
}

pub fn run_experiment1(reps: usize, seed: u64) -> Vec<ResultRow> {
    run_grid(&ExperimentGrid::experiment1(reps, seed))
}

pub fn run_experiment2(reps: usize, seed: u64) -> Vec<ResultRow> {
    run_grid(&ExperimentGrid::experiment2(reps, seed))
}

pub fn write_results<W: Write>(rows: &[ResultRow], writer: W) -> Result<(), EvaluateError> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
