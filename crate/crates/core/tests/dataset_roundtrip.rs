use debm::dataset::{load_csv, read_csv, split_groups, CsvSchema, DiagnosisLabel, Direction, Subject};
use debm::BiomarkerDataset;
use proptest::prelude::*;

fn label(k: u8) -> DiagnosisLabel {
    match k % 3 {
        0 => DiagnosisLabel::CN,
        1 => DiagnosisLabel::MCI,
        _ => DiagnosisLabel::AD,
    }
}

fn cohort(values: Vec<(u8, Option<u32>, Vec<Option<f64>>)>, n: usize) -> Result<BiomarkerDataset, debm::dataset::DatasetError> {
    // two fixed CN and AD subjects per biomarker keep every cohort valid
    let mut subjects: Vec<Subject> = (0..4)
        .map(|k| Subject {
            id: format!("ref{k}"),
            diagnosis: if k < 2 { DiagnosisLabel::CN } else { DiagnosisLabel::AD },
            group: values.first().and_then(|v| v.1),
            values: (0..n).map(|i| Some(k as f64 + i as f64 * 0.5)).collect(),
        })
        .collect();
    for (j, (l, g, v)) in values.into_iter().enumerate() {
        subjects.push(Subject { id: format!("s{j}"), diagnosis: label(l), group: g, values: v });
    }
    BiomarkerDataset::new((0..n).map(|i| format!("m{i}")).collect(), subjects)
}

fn rows(n: usize, grouped: bool) -> impl Strategy<Value = Vec<(u8, Option<u32>, Vec<Option<f64>>)>> {
    let value = prop_oneof![9 => (-1e6f64..1e6).prop_map(Some), 1 => Just(None)];
    let group = if grouped { (1u32..4).prop_map(Some).boxed() } else { Just(None).boxed() };
    prop::collection::vec((any::<u8>(), group, prop::collection::vec(value, n)), 0..30)
}

proptest! {
    #[test]
    fn csv_round_trip_preserves_everything(n in 1usize..5, grouped in any::<bool>(), seed_rows in rows(4, true)) {
        let data: Vec<_> = seed_rows
            .into_iter()
            .map(|(l, g, v)| (l, if grouped { g } else { None }, v[..n].to_vec()))
            .collect();
        let ds = cohort(data, n).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &CsvSchema::default()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn missing_mask_matches_input(data in rows(3, false)) {
        let expected: Vec<Vec<bool>> = data.iter().map(|(_, _, v)| v.iter().map(Option::is_none).collect()).collect();
        let ds = cohort(data, 3).unwrap();
        prop_assert_eq!(&ds.missing_mask()[4..], expected.as_slice());
    }
}

#[test]
fn decreasing_biomarker_is_negated_and_restored() {
    let text = "subject_id,diagnosis,vol\na,CN,10\nb,CN,11\nc,AD,5\nd,AD,4\ne,MCI,NA\n";
    let ds = read_csv(text.as_bytes(), &CsvSchema::default()).unwrap();
    assert_eq!(ds.directions(), &[Direction::Decreasing]);
    assert_eq!(ds.value(0, 0), Some(-10.0));
    assert_eq!(ds.value(4, 0), None);
    let mut out = Vec::new();
    ds.write_csv(&mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "subject_id,diagnosis,vol\na,CN,10\nb,CN,11\nc,AD,5\nd,AD,4\ne,MCI,\n");
}

#[test]
fn groups_split_in_id_order() {
    let text = "subject_id,diagnosis,group,x\n\
                a,CN,2,0\nb,CN,2,1\nc,AD,2,5\nd,AD,2,6\n\
                e,CN,1,0\nf,CN,1,1\ng,AD,1,5\nh,AD,1,6\ni,MCI,1,3\n";
    let ds = read_csv(text.as_bytes(), &CsvSchema::default()).unwrap();
    let groups = split_groups(&ds).unwrap();
    assert_eq!(groups.iter().map(|(g, d)| (*g, d.n_subjects())).collect::<Vec<_>>(), vec![(1, 5), (2, 4)]);
}

#[test]
fn loads_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.csv");
    std::fs::write(&path, "subject_id,diagnosis,x,y\na,CN,0,1\nb,CN,1,2\nc,AD,5,7\nd,AD,6,8\n").unwrap();
    let ds = load_csv(&path, &CsvSchema::default()).unwrap();
    assert_eq!(ds.n_subjects(), 4);
    assert_eq!(ds.biomarker_names(), &["x".to_string(), "y".to_string()]);
    assert!(!ds.has_groups());
}
