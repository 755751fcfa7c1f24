use debm::dataset::{BiomarkerDataset, DiagnosisLabel, Subject};
use debm::evaluate::{
    bootstrap_positional_variance, normalized_kendall_error, run_grid, staging_correlation, ExperimentGrid, ResultRow,
};
use debm::mixture::{OptimizerOptions, Strategy};
use debm::model::fit_model;
use debm::ordering::{subject_orderings, PosteriorMatrix};
use debm::simulate::{group_parameters, simulate_dataset, SimulationConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::beta::beta_reg;

/// Nearly noiseless cohort with steep, well-separated trajectories.
fn separable() -> SimulationConfig {
    SimulationConfig { population_std: 0.01, noise_std: 0.0, steepness: 200.0, ..Default::default() }
}

fn single_cell(base: SimulationConfig, epsilon_o: f64, epsilon_g: f64, n1: usize, reps: usize, seed: u64) -> ExperimentGrid {
    ExperimentGrid {
        epsilon_o: vec![epsilon_o],
        epsilon_g: vec![epsilon_g],
        n1: vec![n1],
        base,
        ..ExperimentGrid::experiment1(reps, seed)
    }
}

#[test]
fn perfect_posteriors_recover_the_true_ordering() {
    let cfg = SimulationConfig { population_std: 0.0, noise_std: 0.0, epsilon_o: 0.6, group_sizes: vec![5, 5], ..Default::default() };
    let groups = group_parameters(&cfg).unwrap();
    for (truth, params) in groups {
        // a late subject: each posterior is the fraction of the way to abnormal
        let t = 0.95;
        let row: Vec<Option<f64>> = params.iter().map(|p| Some(p.level(t, 0.0, 1.0))).collect();
        let orderings = subject_orderings(&PosteriorMatrix::new(row.len(), vec![row]));
        assert_eq!(orderings.orderings[0].order, truth);
    }
}

#[test]
fn separable_preset_is_recovered_exactly_by_every_strategy() {
    for eps_o in [0.0, 0.4, 1.0] {
        let rows = run_grid(&single_cell(separable(), eps_o, 0.0, 300, 2, 5));
        for r in &rows {
            assert_eq!(r.failures, 0, "{r:?}");
            assert_eq!(r.mean_eps_s, 0.0, "{r:?}");
        }
    }
}

#[test]
fn single_cell_table_has_one_row_per_strategy_and_group() {
    let rows = run_grid(&single_cell(SimulationConfig::default(), 0.4, 0.0, 100, 1, 3));
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert!((0.0..=1.0).contains(&r.mean_eps_s));
        assert_eq!((r.n1, r.n2, r.reps), (100, 900, 1));
    }
}

#[test]
fn drivers_are_seed_deterministic() {
    let grid = single_cell(SimulationConfig::default(), 0.2, 0.0, 100, 2, 4);
    assert_eq!(run_grid(&grid), run_grid(&grid));
}

#[test]
fn unshifted_experiment2_row_matches_experiment1() {
    let pick = |rows: Vec<ResultRow>| rows.into_iter().filter(|r| r.epsilon_g == 0.0).collect::<Vec<_>>();
    let e1 = run_grid(&ExperimentGrid { epsilon_o: vec![0.4], n1: vec![100], ..ExperimentGrid::experiment1(2, 21) });
    let e2 = run_grid(&ExperimentGrid { n1: vec![100], ..ExperimentGrid::experiment2(2, 21) });
    assert_eq!(e2.iter().filter(|r| r.strategy == Strategy::Coinit && r.group == 1).count(), 3);
    assert_eq!(pick(e1), pick(e2));
}

#[test]
fn training_stages_follow_diagnosis() {
    let cfg = SimulationConfig { group_sizes: vec![600], ..separable() };
    let (ds, _) = simulate_dataset(&cfg).unwrap();
    let model = fit_model(&ds, Strategy::Independent, &OptimizerOptions::default()).unwrap();
    let staged = model.stage_dataset(&ds).unwrap();
    let mean = |label: DiagnosisLabel| {
        let v: Vec<f64> = ds
            .subjects()
            .iter()
            .zip(&staged)
            .filter(|(s, _)| s.diagnosis == label)
            .map(|(_, st)| st.result.as_ref().unwrap().upsilon)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean(DiagnosisLabel::AD) > mean(DiagnosisLabel::MCI));
    assert!(mean(DiagnosisLabel::MCI) > mean(DiagnosisLabel::CN));
}

#[test]
fn bootstrap_single_replicate_is_a_permutation_matrix() {
    let (ds, _) = simulate_dataset(&SimulationConfig { group_sizes: vec![150, 150], seed: 2, ..Default::default() }).unwrap();
    let pvs = bootstrap_positional_variance(&ds, Strategy::Coinit, 1, 7, &OptimizerOptions::default()).unwrap();
    assert_eq!(pvs.len(), 2);
    for pv in pvs {
        assert_eq!(pv.completed + pv.skipped, 1);
        if pv.completed == 1 {
            assert!(pv.counts.iter().all(|r| r.iter().sum::<usize>() == 1 && r.iter().all(|&c| c <= 1)));
            assert_eq!(pv.column_sums(), vec![1; 7]);
        }
    }
}

#[test]
fn bootstrap_counts_sum_to_completed_replicates() {
    let (ds, _) = simulate_dataset(&SimulationConfig { group_sizes: vec![60, 120], seed: 3, ..Default::default() }).unwrap();
    let a = bootstrap_positional_variance(&ds, Strategy::Independent, 12, 9, &OptimizerOptions::default()).unwrap();
    for pv in &a {
        assert_eq!(pv.completed + pv.skipped, 12);
        assert!(pv.row_sums().iter().all(|&s| s == pv.completed));
        assert!(pv.column_sums().iter().all(|&s| s == pv.completed));
    }
    let b = bootstrap_positional_variance(&ds, Strategy::Independent, 12, 9, &OptimizerOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dominant_biomarker_stays_first() {
    // biomarker 0 is abnormal in every non-CN subject, the others only in AD
    let mut subjects = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, 0.1).unwrap();
    for j in 0..90 {
        let label = [DiagnosisLabel::CN, DiagnosisLabel::MCI, DiagnosisLabel::AD][j % 3];
        let first = if label == DiagnosisLabel::CN { 0.0 } else { 5.0 };
        let rest = if label == DiagnosisLabel::AD { 5.0 } else { 0.0 };
        let mut values = vec![Some(first + noise.sample(&mut rng))];
        values.extend((0..3).map(|_| Some(rest + noise.sample(&mut rng))));
        subjects.push(Subject { id: format!("s{j}"), diagnosis: label, group: None, values });
    }
    let ds = BiomarkerDataset::new((0..4).map(|i| format!("m{i}")).collect(), subjects).unwrap();
    let pv = bootstrap_positional_variance(&ds, Strategy::Independent, 25, 1, &OptimizerOptions::default()).unwrap();
    assert_eq!(pv[0].counts[0][0], pv[0].completed);
    assert_eq!(pv[0].reference_ordering[0], 0);
}

/// Pearson r from raw sums and its two-sided p-value through the regularized
/// incomplete beta function.
fn oracle_pearson(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let r = (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
    let df = n - 2.0;
    let t2 = r * r * df / (1.0 - r * r);
    (r, beta_reg(df / 2.0, 0.5, df / (df + t2)))
}

#[test]
fn correlation_agrees_with_independent_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let u = rand_distr::Uniform::new(0.0, 1.0).unwrap();
    let noise = Normal::new(0.0, 0.1).unwrap();
    let stages: Vec<f64> = (0..200).map(|_| u.sample(&mut rng)).collect();
    let scores: Vec<f64> = stages.iter().map(|s| s + noise.sample(&mut rng)).collect();
    let c = staging_correlation(&stages, &scores.iter().copied().map(Some).collect::<Vec<_>>()).unwrap();
    let (r, p) = oracle_pearson(&stages, &scores);
    assert!((c.pearson_r - r).abs() < 1e-10);
    assert!((c.pearson_p - p).abs() <= 1e-8 * p.max(1e-300) || (c.pearson_p - p).abs() < 1e-300);

    // Spearman equals Pearson on ranks, here without ties
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (k, &i) in idx.iter().enumerate() {
            r[i] = k as f64 + 1.0;
        }
        r
    };
    let (rho, _) = oracle_pearson(&rank(&stages), &rank(&scores));
    assert!((c.spearman_rho - rho).abs() < 1e-10);
    // closed form for untied ranks
    let n = stages.len() as f64;
    let d2: f64 = rank(&stages).iter().zip(rank(&scores)).map(|(a, b)| (a - b).powi(2)).sum();
    assert!((c.spearman_rho - (1.0 - 6.0 * d2 / (n * (n * n - 1.0)))).abs() < 1e-10);
}

#[test]
fn simulated_ground_truth_distance_is_exact() {
    for (eps, k) in [(0.2, 4.0), (0.4, 8.0), (0.6, 13.0), (0.8, 17.0)] {
        let (_, truth) = simulate_dataset(&SimulationConfig { epsilon_o: eps, group_sizes: vec![20, 20], ..Default::default() }).unwrap();
        let e = normalized_kendall_error(&truth.groups[0].ordering, &truth.groups[1].ordering).unwrap();
        assert!((e - k / 21.0).abs() < 1e-12, "{eps}: {e}");
        assert!((e - eps).abs() <= 0.5 / 21.0 + 1e-12);
    }
}
