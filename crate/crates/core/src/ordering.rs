//! Subject-specific orderings and their aggregation into a central ordering.
//!
//! The central ordering minimizes the summed probabilistic Kendall distance
//! to every subject ordering. The objective decomposes over biomarker pairs,
//! so it is evaluated through a precomputed pairwise cost matrix: the cost of
//! placing `a` before `b` is the total penalty of all subjects that rank `b`
//! above `a`. Minimizing over orderings is then a linear ordering problem,
//! solved exactly by subset dynamic programming up to [`EXACT_SEARCH_LIMIT`]
//! biomarkers and by local search beyond.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::BiomarkerDataset;
use crate::mixture::StratumFits;

/// Largest biomarker count searched exhaustively.
pub const EXACT_SEARCH_LIMIT: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum OrderingError {
    #[error("no subject has two or more observed biomarkers")]
    NoUsableSubjects,
    #[error("posterior matrix has no biomarkers")]
    Empty,
}

/// Posterior event probabilities p(E_i | x_ji); `None` where the value is
/// missing.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    n_biomarkers: usize,
    rows: Vec<Vec<Option<f64>>>,
}

impl PosteriorMatrix {
    pub fn new(n_biomarkers: usize, rows: Vec<Vec<Option<f64>>>) -> PosteriorMatrix {
        for row in &rows {
            assert_eq!(row.len(), n_biomarkers, "ragged posterior matrix");
            assert!(
                row.iter().flatten().all(|p| (0.0..=1.0).contains(p)),
                "posteriors must lie in [0, 1]"
            );
        }
        PosteriorMatrix { n_biomarkers, rows }
    }

    /// Posteriors of every subject in `dataset` under per-biomarker fits.
    pub fn from_dataset(dataset: &BiomarkerDataset, fits: &StratumFits) -> PosteriorMatrix {
        let rows = dataset
            .subjects()
            .iter()
            .map(|s| s.values.iter().zip(&fits.fits).map(|(v, f)| v.map(|x| f.posterior(x))).collect())
            .collect();
        PosteriorMatrix { n_biomarkers: dataset.n_biomarkers(), rows }
    }

    pub fn n_subjects(&self) -> usize {
        self.rows.len()
    }

    pub fn n_biomarkers(&self) -> usize {
        self.n_biomarkers
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.rows
    }

    pub fn row(&self, j: usize) -> &[Option<f64>] {
        &self.rows[j]
    }

    /// Mean posterior per biomarker over subjects where it is observed;
    /// zero for a biomarker that is never observed.
    pub fn mean_posteriors(&self) -> Vec<f64> {
        (0..self.n_biomarkers)
            .map(|i| {
                let (sum, n) = self
                    .rows
                    .iter()
                    .filter_map(|r| r[i])
                    .fold((0.0, 0usize), |(s, n), p| (s + p, n + 1));
                if n == 0 { 0.0 } else { sum / n as f64 }
            })
            .collect()
    }
}

/// A subject's observed biomarkers sorted by decreasing posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectOrdering {
    pub subject: usize,
    pub order: Vec<usize>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectOrderings {
    pub orderings: Vec<SubjectOrdering>,
    /// Subjects without any observed biomarker.
    pub excluded: Vec<usize>,
}

/// Sorts every subject's observed biomarkers by posterior, highest first,
/// breaking ties by biomarker index.
pub fn subject_orderings(posteriors: &PosteriorMatrix) -> SubjectOrderings {
    let mut orderings = Vec::with_capacity(posteriors.n_subjects());
    let mut excluded = Vec::new();
    for (j, row) in posteriors.rows.iter().enumerate() {
        let mut observed: Vec<(usize, f64)> = row.iter().enumerate().filter_map(|(i, p)| p.map(|p| (i, p))).collect();
        if observed.is_empty() {
            excluded.push(j);
            continue;
        }
        observed.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let (order, weights) = observed.into_iter().unzip();
        orderings.push(SubjectOrdering { subject: j, order, weights });
    }
    SubjectOrderings { orderings, excluded }
}

/// Penalty charged when a candidate ordering reverses a pair that a subject
/// ranks as `earlier` (posterior `p_earlier`) before `later`.
pub trait DiscordancePenalty: Sync {
    fn penalty(&self, p_earlier: f64, p_later: f64) -> f64;
}

/// `|p_a - p_b|`: zero for tied posteriors, one for a fully certain pair.
#[derive(Debug, Clone, Copy, Default)]
pub struct AbsoluteDifference;

impl DiscordancePenalty for AbsoluteDifference {
    fn penalty(&self, p_earlier: f64, p_later: f64) -> f64 {
        (p_earlier - p_later).abs()
    }
}

/// Position of each biomarker in `ordering`.
pub fn positions(ordering: &[usize]) -> Vec<usize> {
    let mut pos = vec![usize::MAX; ordering.len()];
    for (k, &b) in ordering.iter().enumerate() {
        pos[b] = k;
    }
    pos
}

/// Probabilistic Kendall distance between a subject ordering and a complete
/// candidate ordering, using the default penalty.
pub fn prob_kendall_distance(subject: &SubjectOrdering, candidate: &[usize]) -> f64 {
    prob_kendall_distance_with(subject, candidate, &AbsoluteDifference)
}

pub fn prob_kendall_distance_with(
    subject: &SubjectOrdering,
    candidate: &[usize],
    penalty: &dyn DiscordancePenalty,
) -> f64 {
    let pos = positions(candidate);
    let mut total = 0.0;
    for u in 0..subject.order.len() {
        for v in u + 1..subject.order.len() {
            if pos[subject.order[u]] > pos[subject.order[v]] {
                total += penalty.penalty(subject.weights[u], subject.weights[v]);
            }
        }
    }
    total
}

/// `cost[a][b]`: summed penalty incurred when `a` is placed before `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseCosts {
    n: usize,
    cost: Vec<f64>,
}

impl PairwiseCosts {
    pub fn from_orderings(n: usize, orderings: &[SubjectOrdering], penalty: &dyn DiscordancePenalty) -> Self {
        let mut cost = vec![0.0; n * n];
        for s in orderings {
            for u in 0..s.order.len() {
                for v in u + 1..s.order.len() {
                    // subject ranks order[u] first; placing order[v] first is discordant
                    cost[s.order[v] * n + s.order[u]] += penalty.penalty(s.weights[u], s.weights[v]);
                }
            }
        }
        PairwiseCosts { n, cost }
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.cost[a * self.n + b]
    }

    pub fn total(&self, ordering: &[usize]) -> f64 {
        let mut t = 0.0;
        for u in 0..ordering.len() {
            for v in u + 1..ordering.len() {
                t += self.get(ordering[u], ordering[v]);
            }
        }
        t
    }
}

/// Biomarkers sorted by mean posterior, highest first, ties by index.
pub fn mean_posterior_order(posteriors: &PosteriorMatrix) -> Vec<usize> {
    let means = posteriors.mean_posteriors();
    let mut order: Vec<usize> = (0..means.len()).collect();
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
    order
}

fn tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

/// Exact minimizer of [`PairwiseCosts::total`] by dynamic programming over
/// subsets of still-unplaced biomarkers. Among optimal orderings the one
/// that is lexicographically first with respect to `preference` is returned.
pub fn exact_search(costs: &PairwiseCosts, preference: &[usize]) -> Vec<usize> {
    let n = costs.n;
    assert!(n <= 24, "exact search is exponential in the number of biomarkers");
    let full = (1usize << n) - 1;
    // best[mask]: minimal cost of ordering the biomarkers in `mask` (relabelled)
    let label = preference;
    let mut best = vec![0.0f64; 1 << n];
    for mask in 1..=full {
        let mut m = f64::INFINITY;
        let mut bits = mask;
        while bits != 0 {
            let k = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            let rest = mask & !(1 << k);
            let v = best[rest] + lead_cost(costs, label, k, rest);
            if v < m {
                m = v;
            }
        }
        best[mask] = m;
    }
    let mut ordering = Vec::with_capacity(n);
    let mut mask = full;
    while mask != 0 {
        let mut choice = None;
        let mut choice_value = f64::INFINITY;
        let mut bits = mask;
        while bits != 0 {
            let k = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            let rest = mask & !(1 << k);
            let v = best[rest] + lead_cost(costs, label, k, rest);
            if choice.is_none() || (v < choice_value && !tied(v, choice_value)) {
                choice = Some(k);
                choice_value = v;
            }
        }
        let k = choice.expect("non-empty mask");
        ordering.push(label[k]);
        mask &= !(1 << k);
    }
    ordering
}

/// Cost of putting relabelled biomarker `k` ahead of every member of `rest`.
fn lead_cost(costs: &PairwiseCosts, label: &[usize], k: usize, rest: usize) -> f64 {
    let mut c = 0.0;
    let mut bits = rest;
    while bits != 0 {
        let r = bits.trailing_zeros() as usize;
        bits &= bits - 1;
        c += costs.get(label[k], label[r]);
    }
    c
}

/// Local search from `start`: adjacent transpositions and single-element
/// moves, applied while any of them strictly lowers the total cost. The
/// result is optimal with respect to every adjacent swap.
pub fn local_search(costs: &PairwiseCosts, start: &[usize]) -> Vec<usize> {
    let mut s = start.to_vec();
    let n = s.len();
    loop {
        let mut improved = false;
        for k in 0..n.saturating_sub(1) {
            let delta = costs.get(s[k + 1], s[k]) - costs.get(s[k], s[k + 1]);
            if delta < 0.0 && !tied(delta, 0.0) {
                s.swap(k, k + 1);
                improved = true;
            }
        }
        if improved {
            continue;
        }
        // best single insertion move
        let mut best = (0.0, 0, 0);
        for from in 0..n {
            let b = s[from];
            let mut delta = 0.0;
            for to in (0..from).rev() {
                delta += costs.get(b, s[to]) - costs.get(s[to], b);
                if delta < best.0 {
                    best = (delta, from, to);
                }
            }
            delta = 0.0;
            for to in from + 1..n {
                delta += costs.get(s[to], b) - costs.get(b, s[to]);
                if delta < best.0 {
                    best = (delta, from, to);
                }
            }
        }
        if best.0 < 0.0 && !tied(best.0, 0.0) {
            let b = s.remove(best.1);
            s.insert(best.2, b);
        } else {
            return s;
        }
    }
}

/// Central ordering `S` and event-centers `lambda`; `lambda[k]` belongs to
/// the event at position `k` of `ordering`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiseaseTimeline {
    pub ordering: Vec<usize>,
    pub event_centers: Vec<f64>,
    pub total_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchMethod {
    /// Exact search up to [`EXACT_SEARCH_LIMIT`] biomarkers, local search beyond.
    #[default]
    Auto,
    Exact,
    Local,
}

/// Ordering that minimizes the summed probabilistic Kendall distance to the
/// subject orderings. `event_centers` is left empty.
pub fn central_ordering(posteriors: &PosteriorMatrix) -> Result<DiseaseTimeline, OrderingError> {
    central_ordering_with(posteriors, &AbsoluteDifference, SearchMethod::Auto)
}

pub fn central_ordering_with(
    posteriors: &PosteriorMatrix,
    penalty: &dyn DiscordancePenalty,
    method: SearchMethod,
) -> Result<DiseaseTimeline, OrderingError> {
    let n = posteriors.n_biomarkers();
    if n == 0 {
        return Err(OrderingError::Empty);
    }
    let subjects = subject_orderings(posteriors);
    let needed = n.min(2);
    if !subjects.orderings.iter().any(|s| s.order.len() >= needed) {
        return Err(OrderingError::NoUsableSubjects);
    }
    let costs = PairwiseCosts::from_orderings(n, &subjects.orderings, penalty);
    let start = mean_posterior_order(posteriors);
    let ordering = match method {
        SearchMethod::Exact => exact_search(&costs, &start),
        SearchMethod::Local => local_search(&costs, &start),
        SearchMethod::Auto if n <= EXACT_SEARCH_LIMIT => exact_search(&costs, &start),
        SearchMethod::Auto => local_search(&costs, &start),
    };
    let total_distance = costs.total(&ordering);
    Ok(DiseaseTimeline { ordering, event_centers: Vec::new(), total_distance })
}

/// Maps mixing fractions along an ordering to event-centers on `[0, 1]`.
pub trait EventCenterEstimator {
    fn estimate(&self, thetas_along_ordering: &[f64]) -> Vec<f64>;
}

/// Raw center `1 - theta` per event, made non-decreasing by isotonic
/// regression and rescaled onto `[1/(N+1), N/(N+1)]`. A constant sequence
/// maps to even spacing.
#[derive(Debug, Clone, Copy, Default)]
pub struct IsotonicThetaCenters;

impl EventCenterEstimator for IsotonicThetaCenters {
    fn estimate(&self, thetas: &[f64]) -> Vec<f64> {
        let n = thetas.len();
        let lo = 1.0 / (n as f64 + 1.0);
        let hi = n as f64 / (n as f64 + 1.0);
        let raw: Vec<f64> = thetas.iter().map(|t| 1.0 - t).collect();
        let fitted = isotonic_increasing(&raw);
        let min = fitted.first().copied().unwrap_or(0.0);
        let max = fitted.last().copied().unwrap_or(0.0);
        if !(max - min > 1e-12) {
            return (1..=n).map(|k| k as f64 / (n as f64 + 1.0)).collect();
        }
        fitted.iter().map(|v| lo + (v - min) / (max - min) * (hi - lo)).collect()
    }
}

/// Least-squares non-decreasing fit with unit weights (pool adjacent
/// violators).
pub fn isotonic_increasing(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, w2) = blocks[blocks.len() - 1];
            let (m1, w1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let w = w1 + w2;
            *blocks.last_mut().unwrap() = ((m1 * w1 as f64 + m2 * w2 as f64) / w as f64, w);
        }
    }
    blocks.into_iter().flat_map(|(m, w)| std::iter::repeat_n(m, w)).collect()
}

/// Event-centers for `ordering`, from per-biomarker mixing fractions
/// (indexed by biomarker).
pub fn event_centers(ordering: &[usize], thetas: &[f64]) -> Vec<f64> {
    event_centers_with(ordering, thetas, &IsotonicThetaCenters)
}

pub fn event_centers_with(ordering: &[usize], thetas: &[f64], estimator: &dyn EventCenterEstimator) -> Vec<f64> {
    let along: Vec<f64> = ordering.iter().map(|&b| thetas[b]).collect();
    estimator.estimate(&along)
}

/// Central ordering plus event-centers for one stratum.
pub fn fit_timeline(dataset: &BiomarkerDataset, fits: &StratumFits) -> Result<DiseaseTimeline, OrderingError> {
    let posteriors = PosteriorMatrix::from_dataset(dataset, fits);
    let mut timeline = central_ordering(&posteriors)?;
    let thetas: Vec<f64> = fits.fits.iter().map(|f| f.theta).collect();
    timeline.event_centers = event_centers(&timeline.ordering, &thetas);
    Ok(timeline)
}

/// Serialized form of a timeline with biomarker names in ordering order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<u32>,
    pub ordering: Vec<String>,
    pub event_centers: Vec<f64>,
    pub total_distance: f64,
}

impl DiseaseTimeline {
    pub fn to_record(&self, names: &[String], group: Option<u32>) -> TimelineRecord {
        TimelineRecord {
            group,
            ordering: self.ordering.iter().map(|&i| names[i].clone()).collect(),
            event_centers: self.event_centers.clone(),
            total_distance: self.total_distance,
        }
    }

    pub fn from_record(record: &TimelineRecord, names: &[String]) -> Result<DiseaseTimeline, String> {
        let ordering = record
            .ordering
            .iter()
            .map(|n| names.iter().position(|m| m == n).ok_or_else(|| format!("unknown biomarker `{n}` in timeline")))
            .collect::<Result<Vec<_>, _>>()?;
        if ordering.len() != names.len() || record.event_centers.len() != names.len() {
            return Err(format!("timeline covers {} biomarkers, model has {}", ordering.len(), names.len()));
        }
        let mut seen = vec![false; names.len()];
        for &i in &ordering {
            if std::mem::replace(&mut seen[i], true) {
                return Err(format!("biomarker `{}` appears twice in timeline", names[i]));
            }
        }
        Ok(DiseaseTimeline {
            ordering,
            event_centers: record.event_centers.clone(),
            total_distance: record.total_distance,
        })
    }
}
