use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn debm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_debm"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path).unwrap()
}

fn simulate(dir: &Path, extra: &[&str]) {
    let mut args = vec!["simulate", "--n1", "100", "--n2", "300", "--eps-o", "0.4", "--seed", "7"];
    args.extend_from_slice(extra);
    ok(&debm(dir, &args));
}

#[test]
fn simulate_is_byte_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&debm(a.path(), &["simulate", "--n1", "100", "--n2", "900", "--eps-o", "0.4", "--seed", "7"]));
    ok(&debm(b.path(), &["simulate", "--n1", "100", "--n2", "900", "--eps-o", "0.4", "--seed", "7"]));
    for f in ["dataset.csv", "ground_truth.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn simulate_defaults_have_documented_shape() {
    let dir = tempfile::tempdir().unwrap();
    ok(&debm(dir.path(), &["simulate"]));
    let csv = read(dir.path().join("dataset.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "subject_id,diagnosis,group,B1,B2,B3,B4,B5,B6,B7");
    assert_eq!(lines.count(), 1000);
    let truth: serde_json::Value = serde_json::from_str(&read(dir.path().join("ground_truth.json"))).unwrap();
    assert_eq!(truth["groups"].as_array().unwrap().len(), 2);
    assert_eq!(truth["groups"][1]["disease_times"].as_array().unwrap().len(), 900);
    assert_eq!(truth["seed"], 20190);
}

#[test]
fn unrealizable_distance_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = debm(dir.path(), &["simulate", "--eps-o", "1.5", "--n-biomarkers", "7"]);
    assert!(!out.status.success());
    assert!(stderr(&out).starts_with("error: unrealizable Kendall distance"), "{}", stderr(&out));
}

#[test]
fn single_group_fit_is_identical_across_strategies() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), &[]);
    let csv = read(dir.path().join("dataset.csv"));
    let single: String = csv.lines().filter(|l| !l.contains(",2,")).map(|l| format!("{l}\n")).collect();
    let input = dir.path().join("single.csv");
    fs::write(&input, single).unwrap();
    let mut timelines = Vec::new();
    for s in ["independent", "coupled", "coinit"] {
        let out_dir = dir.path().join(s);
        ok(&debm(&out_dir, &["fit", input.to_str().unwrap(), "--strategy", s]));
        timelines.push(read(out_dir.join("timeline.json")));
    }
    assert_eq!(timelines[0], timelines[1]);
    assert_eq!(timelines[0], timelines[2]);
}

#[test]
fn coinit_fit_has_a_timeline_per_group() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), &[]);
    ok(&debm(dir.path(), &["fit", dir.path().join("dataset.csv").to_str().unwrap(), "--strategy", "coinit"]));
    let t: serde_json::Value = serde_json::from_str(&read(dir.path().join("timeline.json"))).unwrap();
    let groups: Vec<u64> = t["timelines"].as_array().unwrap().iter().map(|x| x["group"].as_u64().unwrap()).collect();
    assert_eq!(groups, vec![1, 2]);
    let m: serde_json::Value = serde_json::from_str(&read(dir.path().join("mixtures.json"))).unwrap();
    assert_eq!(m.as_array().unwrap().len(), 14);
}

#[test]
fn stratified_strategy_without_group_column_fails() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("nogroup.csv");
    fs::write(&input, "subject_id,diagnosis,x\na,CN,0\nb,CN,0.2\nc,AD,1\nd,AD,1.1\ne,MCI,0.5\n").unwrap();
    let out = debm(dir.path(), &["fit", input.to_str().unwrap(), "--strategy", "coupled"]);
    assert!(!out.status.success());
    assert_eq!(stderr(&out).trim(), "error: stratified strategy requires group column");
}

#[test]
fn malformed_input_reports_row() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    fs::write(&input, "subject_id,diagnosis,x\na,CN,0\nb,CN,zero\n").unwrap();
    let out = debm(dir.path(), &["fit", input.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).starts_with("error:") && stderr(&out).contains("row 3"), "{}", stderr(&out));
}

fn fitted(dir: &Path) -> (String, String) {
    simulate(dir, &[]);
    ok(&debm(dir, &["fit", dir.join("dataset.csv").to_str().unwrap(), "--strategy", "coupled"]));
    (dir.join("mixtures.json").to_string_lossy().into_owned(), dir.join("timeline.json").to_string_lossy().into_owned())
}

#[test]
fn stage_flags_unstageable_rows_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let (m, t) = fitted(dir.path());
    let test = dir.path().join("test.csv");
    fs::write(
        &test,
        "subject_id,diagnosis,group,B1,B2,B3,B4,B5,B6,B7\n\
         x1,AD,1,1,1,1,1,1,1,1\n\
         x2,CN,2,,,,,,,\n\
         x3,MCI,2,0.9,0.1,NA,0.5,0.2,0.8,0\n",
    )
    .unwrap();
    ok(&debm(dir.path(), &["stage", test.to_str().unwrap(), "--mixtures", &m, "--timeline", &t]));
    let stages = read(dir.path().join("stages.csv"));
    let lines: Vec<&str> = stages.lines().collect();
    assert!(lines[0].starts_with("subject_id,group,status,upsilon,p_stage_0"));
    assert_eq!(lines[0].split(',').count(), 4 + 8);
    assert!(lines[1].starts_with("x1,1,ok,"));
    assert!(lines[2].starts_with("x2,2,unstageable: all biomarkers missing,"));
    assert!(lines[3].starts_with("x3,2,ok,"));
}

#[test]
fn stage_rejects_biomarker_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (m, t) = fitted(dir.path());
    let test = dir.path().join("test.csv");
    fs::write(&test, "subject_id,diagnosis,group,B1,B2,B3,B4,B5,B6,Bx\ns,AD,1,1,1,1,1,1,1,1\n").unwrap();
    let out = debm(dir.path(), &["stage", test.to_str().unwrap(), "--mixtures", &m, "--timeline", &t]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.starts_with("error:") && err.contains("B7") && err.contains("Bx"), "{err}");
}

#[test]
fn experiment_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&debm(d.path(), &["experiment", "--id", "1", "--reps", "2", "--seed", "3"]));
    }
    let table = read(a.path().join("experiment1.csv"));
    assert_eq!(table, read(b.path().join("experiment1.csv")));
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "strategy,group,epsilon_o,epsilon_g,n1,n2,reps,mean_eps_s,std_eps_s,failures"
    );
    assert_eq!(lines.count(), 6 * 5 * 3 * 2);
}

#[test]
fn experiment2_has_three_shift_levels() {
    let dir = tempfile::tempdir().unwrap();
    ok(&debm(dir.path(), &["experiment", "--id", "2", "--reps", "1", "--n1", "100"]));
    let table = read(dir.path().join("experiment2.csv"));
    let mut levels: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
    levels.sort();
    levels.dedup();
    assert_eq!(levels, vec!["-0.2", "0.0", "0.2"]);
}

#[test]
fn unknown_experiment_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = debm(dir.path(), &["experiment", "--id", "9"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error:"));
}

fn matrix(path: &Path) -> Vec<Vec<usize>> {
    read(path).lines().skip(1).map(|l| l.split(',').skip(1).map(|c| c.parse().unwrap()).collect()).collect()
}

#[test]
fn bootstrap_single_replicate_is_a_permutation_matrix() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), &[]);
    ok(&debm(dir.path(), &["bootstrap", dir.path().join("dataset.csv").to_str().unwrap(), "-B", "1"]));
    for g in [1, 2] {
        let m = matrix(&dir.path().join(format!("positional_variance_group{g}.csv")));
        assert_eq!(m.len(), 7);
        for k in 0..7 {
            assert_eq!(m[k].iter().sum::<usize>(), 1);
            assert_eq!(m.iter().map(|r| r[k]).sum::<usize>(), 1);
        }
        let side: serde_json::Value =
            serde_json::from_str(&read(dir.path().join(format!("positional_variance_group{g}.json")))).unwrap();
        assert_eq!(side["completed"], 1);
        assert_eq!(side["biomarkers"].as_array().unwrap().len(), 7);
    }
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let one = tempfile::tempdir().unwrap();
    let many = tempfile::tempdir().unwrap();
    simulate(one.path(), &[]);
    let input = one.path().join("dataset.csv");
    for (dir, jobs) in [(&one, "1"), (&many, "4")] {
        ok(&debm(dir.path(), &["--jobs", jobs, "bootstrap", input.to_str().unwrap(), "-B", "8", "--strategy", "coinit"]));
        ok(&debm(dir.path(), &["--jobs", jobs, "experiment", "--id", "2", "--reps", "2", "--n1", "100"]));
    }
    for f in ["positional_variance_group1.csv", "positional_variance_group2.json", "experiment2.csv"] {
        assert_eq!(read(one.path().join(f)), read(many.path().join(f)), "{f}");
    }
}
