mod common;

use std::collections::BTreeMap;

use bevmt::dataset::{
    build_design, clean, compute_vif, load_wave, write_wave, CleanEntry, CleanPolicy, Column, HierarchicalWave,
    Level, Schema, TermSpec, VariableSpec,
};
use bevmt::interpret::KnotSet;
use proptest::prelude::*;

use common::*;

const FLEX: [&str; 3] = ["Unemployed", "Fixed", "Flexible"];

fn schema() -> Schema {
    Schema::new(
        "VMT_Person",
        vec![
            VariableSpec::numeric("Age", Level::Person),
            VariableSpec::categorical("Flex_Time", Level::Person, &FLEX, "Unemployed"),
            VariableSpec::numeric("HH_Income", Level::Household),
            VariableSpec::numeric("Dist_CBD", Level::Zone),
        ],
    )
    .unwrap()
}

struct PersonRow {
    household: usize,
    age: Option<f64>,
    flex: Option<usize>,
    vmt: Option<f64>,
}

/// Household `h` lies in zone `h % zones`; zone `z` sits `cbd[z]` miles
/// from the centre.
fn wave(persons: &[PersonRow], households: usize, cbd: &[f64]) -> HierarchicalWave {
    let zones = cbd.len();
    let mut pc = BTreeMap::new();
    pc.insert("Age".to_string(), Column::Numeric(persons.iter().map(|p| p.age).collect()));
    pc.insert("Flex_Time".to_string(), Column::Categorical(persons.iter().map(|p| p.flex).collect()));
    let mut hc = BTreeMap::new();
    hc.insert(
        "HH_Income".to_string(),
        Column::Numeric((0..households).map(|h| Some(20.0 + 7.0 * h as f64)).collect()),
    );
    let mut zc = BTreeMap::new();
    zc.insert("Dist_CBD".to_string(), Column::Numeric(cbd.iter().map(|&d| Some(d)).collect()));
    HierarchicalWave::from_parts(
        "w",
        schema(),
        (0..persons.len()).map(|i| format!("P{i}")).collect(),
        persons.iter().map(|p| format!("H{}", p.household)).collect(),
        pc,
        persons.iter().map(|p| p.vmt).collect(),
        (0..households).map(|h| format!("H{h}")).collect(),
        (0..households).map(|h| format!("Z{}", h % zones)).collect(),
        hc,
        (0..zones).map(|z| format!("Z{z}")).collect(),
        zc,
        None,
    )
    .unwrap()
}

fn full_row(household: usize, age: f64, flex: usize, vmt: f64) -> PersonRow {
    PersonRow {
        household,
        age: Some(age),
        flex: Some(flex),
        vmt: Some(vmt),
    }
}

#[test]
fn synthetic_fixture_loads_with_its_counts() {
    let (w, _) = gen(&synth_with(4459, 1854, 485, 3));
    let dir = tempfile::tempdir().unwrap();
    write_wave(&w, dir.path()).unwrap();
    let loaded = load_wave(
        "1997",
        &dir.path().join("persons.csv"),
        &dir.path().join("households.csv"),
        &dir.path().join("zones.csv"),
        &w.schema,
    )
    .unwrap();
    assert_eq!(loaded.counts(), (4459, 1854, 485));
    assert_eq!(loaded.response, w.response);
}

#[test]
fn dangling_household_reference_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("zones.csv"), "zone_id,Dist_CBD\nZ1,3\n").unwrap();
    std::fs::write(d.join("households.csv"), "household_id,zone_id,HH_Income\nH1,Z1,50\n").unwrap();
    std::fs::write(
        d.join("persons.csv"),
        "person_id,household_id,Age,Flex_Time,VMT_Person\nP1,H9,30,Fixed,4\n",
    )
    .unwrap();
    let err = load_wave("w", &d.join("persons.csv"), &d.join("households.csv"), &d.join("zones.csv"), &schema())
        .unwrap_err();
    assert!(err.to_string().contains("H9"), "{err}");
}

#[test]
fn correlated_pair_has_textbook_vif() {
    // two centred columns with sample correlation exactly 0.9
    let mut r = rng(11);
    let n = 300;
    let center = |v: Vec<f64>| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.into_iter().map(|x| x - m).collect::<Vec<f64>>()
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let a = center(normal_draws(n, 1.0, &mut r));
    let b = center(normal_draws(n, 1.0, &mut r));
    let a: Vec<f64> = a.iter().map(|x| x / norm(&a)).collect();
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let b: Vec<f64> = b.iter().zip(&a).map(|(y, x)| y - dot * x).collect();
    let b: Vec<f64> = b.iter().map(|x| x / norm(&b)).collect();
    let c: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.9 * x + 0.19f64.sqrt() * y).collect();
    assert!((pearson(&a, &c) - 0.9).abs() < 1e-12);

    let x: Vec<f64> = (0..n).flat_map(|i| [a[i], c[i]]).collect();
    let rows = compute_vif(&strings(&["a", "c"]), &x, n).unwrap();
    let textbook = 1.0 / (1.0 - 0.81);
    // independent least-squares oracle
    let oracle = {
        let others: Vec<Vec<f64>> = c.iter().map(|&v| vec![v]).collect();
        let beta = ols(&others, &a);
        let pred: Vec<f64> = others.iter().map(|o| ols_predict(&beta, o)).collect();
        1.0 / (1.0 - r_squared(&a, &pred))
    };
    for row in &rows {
        assert!((row.vif - textbook).abs() < 1e-9, "{}", row.vif);
        assert!(((row.vif - oracle) / oracle).abs() < 1e-9);
    }
}

#[test]
fn piecewise_and_reference_columns() {
    let persons = vec![full_row(0, 30.0, 0, 5.0), full_row(1, 40.0, 1, 6.0), full_row(2, 50.0, 2, 7.0)];
    let w = wave(&persons, 3, &[10.0, 20.0, 2.0]);
    let mut knots = KnotSet::default();
    knots.insert("Dist_CBD", vec![5.0, 15.0]).unwrap();
    let d = build_design(
        &w,
        &[TermSpec::linear("Flex_Time"), TermSpec::piecewise("Dist_CBD")],
        &knots,
    )
    .unwrap();
    assert_eq!(
        d.columns,
        strings(&[
            "Intercept",
            "Flex_Time [Fixed]",
            "Flex_Time [Flexible]",
            "Dist_CBD [0-5]",
            "Dist_CBD [5-15]",
            "Dist_CBD [>15]"
        ])
    );
    assert_eq!(d.row(0), &[1.0, 0.0, 0.0, 5.0, 5.0, 0.0]);
    assert_eq!(d.row(1), &[1.0, 1.0, 0.0, 5.0, 10.0, 5.0]);
    assert_eq!(d.row(2), &[1.0, 0.0, 1.0, 2.0, 0.0, 0.0]);
}

#[test]
fn winsorizing_the_textbook_tail() {
    let mut persons: Vec<PersonRow> = (1..=99).map(|v| full_row(v % 10, 30.0, 1, v as f64)).collect();
    persons.push(full_row(0, 30.0, 1, 1000.0));
    let w = wave(&persons, 10, &[1.0, 2.0]);
    let (c, log) = clean(&w, &CleanPolicy::winsorize(99.0)).unwrap();
    let mut sorted: Vec<f64> = w.response.iter().map(|v| v.unwrap()).collect();
    sorted.sort_by(f64::total_cmp);
    let cap = sorted[(0.99f64 * 100.0).ceil() as usize - 1];
    assert_eq!(c.response[99], Some(cap));
    assert_eq!(log.entries.len(), 1);
    assert!(matches!(log.entries[0], CleanEntry::Winsorized { old, new, .. } if old == 1000.0 && new == cap));
}

fn arb_wave() -> impl Strategy<Value = HierarchicalWave> {
    (2usize..6, 3usize..12, 5usize..40).prop_flat_map(|(zones, households, persons)| {
        let person = (
            0..households,
            proptest::option::weighted(0.9, 16.0f64..90.0),
            proptest::option::weighted(0.95, 0usize..3),
            proptest::option::weighted(0.95, 0.0f64..80.0),
        );
        (
            proptest::collection::vec(person, persons),
            proptest::collection::vec(0.0f64..30.0, zones),
        )
            .prop_map(move |(ps, cbd)| {
                let rows: Vec<PersonRow> = ps
                    .into_iter()
                    .map(|(household, age, flex, vmt)| PersonRow {
                        household,
                        age,
                        flex,
                        vmt,
                    })
                    .collect();
                wave(&rows, households, &cbd)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clean_is_idempotent(w in arb_wave(), p in prop_oneof![Just(None), (51.0f64..99.9).prop_map(Some)]) {
        let policy = p.map(CleanPolicy::winsorize).unwrap_or_default();
        if let Ok((once, _)) = clean(&w, &policy) {
            let (twice, _) = clean(&once, &policy).unwrap();
            prop_assert_eq!(twice, once);
        }
    }

    #[test]
    fn design_rows_are_nested(w in arb_wave()) {
        let Ok((c, _)) = clean(&w, &CleanPolicy::default()) else { return Ok(()) };
        if c.persons.is_empty() {
            return Ok(());
        }
        let d = build_design(&c, &[TermSpec::linear("Age")], &KnotSet::default()).unwrap();
        let mut zone_of = BTreeMap::new();
        for i in 0..d.n_rows() {
            let z = *zone_of.entry(d.hh_index[i]).or_insert(d.zone_index[i]);
            prop_assert_eq!(z, d.zone_index[i]);
        }
    }

    #[test]
    fn dummies_sum_to_non_reference_indicator(w in arb_wave()) {
        let Ok((c, _)) = clean(&w, &CleanPolicy::default()) else { return Ok(()) };
        if c.persons.is_empty() {
            return Ok(());
        }
        let d = build_design(&c, &[TermSpec::linear("Flex_Time")], &KnotSet::default()).unwrap();
        let flex = c.person_categorical("Flex_Time").unwrap();
        let cols: Vec<usize> = (1..d.n_cols()).collect();
        for i in 0..d.n_rows() {
            let s: f64 = cols.iter().map(|&j| d.row(i)[j]).sum();
            let expect = if flex[i] == Some(0) { 0.0 } else { 1.0 };
            // a category absent after cleaning leaves a constant column that is dropped
            if d.n_cols() == 3 {
                prop_assert_eq!(s, expect);
            } else {
                prop_assert!(s <= expect);
            }
        }
    }

    #[test]
    fn vif_matches_per_column_regression(seed in 0u64..1_000_000) {
        let mut r = rng(seed);
        let n = 200;
        let base = normal_draws(n, 1.0, &mut r);
        let cols: Vec<Vec<f64>> = (0..5)
            .map(|j| {
                let e = normal_draws(n, 1.0, &mut r);
                base.iter().zip(&e).map(|(b, e)| 0.3 * j as f64 * b + e).collect()
            })
            .collect();
        let x: Vec<f64> = (0..n).flat_map(|i| cols.iter().map(move |c| c[i])).collect();
        let got = compute_vif(&strings(&["a", "b", "c", "d", "e"]), &x, n).unwrap();
        for (j, row) in got.iter().enumerate() {
            let others: Vec<Vec<f64>> = (0..n).map(|i| (0..5).filter(|&k| k != j).map(|k| cols[k][i]).collect()).collect();
            let beta = ols(&others, &cols[j]);
            let pred: Vec<f64> = others.iter().map(|o| ols_predict(&beta, o)).collect();
            let want = 1.0 / (1.0 - r_squared(&cols[j], &pred));
            prop_assert!(((row.vif - want) / want).abs() < 1e-8, "{} vs {}", row.vif, want);
            prop_assert!(row.vif >= 1.0);
        }
    }

    #[test]
    fn winsorized_response_matches_sort_oracle(ys in proptest::collection::vec(0.0f64..500.0, 5..80), p in 51.0f64..99.9) {
        let persons: Vec<PersonRow> = ys.iter().enumerate().map(|(i, &v)| full_row(i % 4, 30.0, 1, v)).collect();
        let w = wave(&persons, 4, &[1.0, 2.0]);
        let (c, _) = clean(&w, &CleanPolicy::winsorize(p)).unwrap();
        let mut sorted = ys.clone();
        sorted.sort_by(f64::total_cmp);
        let rank = ((p / 100.0 * ys.len() as f64).ceil() as usize).max(1);
        let cap = sorted[rank - 1];
        let got: Vec<f64> = c.response.iter().map(|v| v.unwrap()).collect();
        let want: Vec<f64> = ys.iter().map(|v| v.min(cap)).collect();
        prop_assert_eq!(got, want);
    }
}
