mod common;

use common::{random_mixed_table, tables_match};
use margot::rng::seeded;
use margot::tabular::{decode, encode, fit, subset, Column, ColumnSpec, Table, TableSchema};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn decode_inverts_encode(seed in any::<u64>()) {
        let (schema, table) = random_mixed_table(&mut seeded(seed));
        let tr = fit(&schema, &table).unwrap();
        let enc = encode(&tr, &table).unwrap();
        prop_assert_eq!(enc.clamped, 0);
        prop_assert!(enc.matrix.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let back = decode(&tr, &enc.matrix).unwrap();
        prop_assert!(tables_match(&table, &back, 1e-12));
    }

    #[test]
    fn decode_always_yields_valid_values(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let (schema, table) = random_mixed_table(&mut rng);
        let tr = fit(&schema, &table).unwrap();
        let noise = common::random_tensor(&mut rng, 7, tr.width);
        let back = decode(&tr, &noise).unwrap();
        for (spec, col) in schema.columns.iter().zip(&back.columns) {
            if let Column::Labels(v) = col {
                prop_assert!(v.iter().all(|s| spec.labels.contains(s)));
            }
        }
    }
}

#[test]
fn subset_matches_refit_on_columns() {
    let (schema, table) = random_mixed_table(&mut seeded(12));
    let tr = fit(&schema, &table).unwrap();
    let keep: Vec<usize> = (0..schema.columns.len()).rev().step_by(2).collect();
    let sub = subset(&tr, &keep).unwrap();
    let sub_schema =
        TableSchema::new(keep.iter().map(|&c| schema.columns[c].clone()).collect()).unwrap();
    let sub_table = Table::new(
        keep.iter().map(|&c| table.names[c].clone()).collect(),
        keep.iter().map(|&c| table.columns[c].clone()).collect(),
    )
    .unwrap();
    assert_eq!(sub, fit(&sub_schema, &sub_table).unwrap());
}

#[test]
fn out_of_range_values_are_clamped_and_counted() {
    let schema = TableSchema::new(vec![ColumnSpec::continuous("x")]).unwrap();
    let t = Table::new(vec!["x".into()], vec![Column::Numeric(vec![0.0, 10.0])]).unwrap();
    let tr = fit(&schema, &t).unwrap();
    let wide = Table::new(
        vec!["x".into()],
        vec![Column::Numeric(vec![-5.0, 5.0, 20.0])],
    )
    .unwrap();
    let enc = encode(&tr, &wide).unwrap();
    assert_eq!(enc.clamped, 2);
    assert_eq!(enc.matrix.data(), &[0.0, 0.5, 1.0]);
}

#[test]
fn unknown_label_is_rejected() {
    let schema = TableSchema::new(vec![ColumnSpec::categorical("c", &["a", "b"])]).unwrap();
    let t = Table::new(
        vec!["c".into()],
        vec![Column::Labels(vec!["a".into(), "z".into()])],
    )
    .unwrap();
    assert!(fit(&schema, &t).is_err() || encode(&fit(&schema, &t).unwrap(), &t).is_err());
}
