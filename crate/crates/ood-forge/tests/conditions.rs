#[path = "../../core/tests/support/mod.rs"]
mod support;

use ood_forge::config::RunConfig;
use ood_forge::run::{execute, Inputs};
use ood_forge_core::cider::CiderConfig;
use ood_forge_core::dataset::{generate_synthetic, SyntheticSpec};
use ood_forge_core::eval::{compare_conditions, EvalReport};
use std::path::PathBuf;

fn config(condition: &str, cider: Option<CiderConfig>, detectors: &[&str]) -> RunConfig {
    let text = format!(
        r#"{{"id_train": "-", "id_test": "-", "ood": ["-"], "condition": "{condition}", "cider": {{}}, "detectors": {}}}"#,
        serde_json::to_string(detectors).unwrap()
    );
    let mut cfg = RunConfig::parse(&text, &PathBuf::new()).unwrap();
    cfg.cider = cider;
    cfg
}

fn inputs(spec: &SyntheticSpec) -> Inputs {
    let s = generate_synthetic(spec).unwrap();
    Inputs {
        id_train: s.id_train,
        id_val: None,
        id_test: s.id_test,
        ood: vec![s.ood],
    }
}

fn report(cfg: &RunConfig, data: &Inputs) -> EvalReport {
    execute(cfg, data, 2).unwrap().report
}

/// Cells of the markdown row for `detector`, without the two label columns.
fn row_cells(table: &str, detector: &str) -> Vec<String> {
    let line = table
        .lines()
        .find(|l| l.split('|').nth(2).map(str::trim) == Some(detector))
        .unwrap_or_else(|| panic!("no {detector} row in\n{table}"));
    line.split('|')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .skip(2)
        .map(String::from)
        .collect()
}

#[test]
fn bold_moves_to_cider_for_mahalanobis() {
    let data = inputs(&support::scenarios::overlapping());
    let base = report(&config("baseline", None, &["mahalanobis"]), &data);
    let cider = report(
        &config("cider", Some(support::scenarios::overlapping_cider()), &["mahalanobis"]),
        &data,
    );
    let (b, c) = (base.rows[0].auroc().unwrap(), cider.rows[0].auroc().unwrap());
    assert!(c > b, "cider {c} vs baseline {b}");
    let table = compare_conditions(&[base, cider]).unwrap();
    let cells = row_cells(&table, "Mahalanobis");
    assert!(!cells[0].starts_with("**"), "{table}");
    assert!(cells[1].starts_with("**"), "{table}");
}

#[test]
fn untrained_head_without_compactness_tracks_baseline() {
    let data = inputs(&support::scenarios::sanity());
    let all = ["mahalanobis", "maxlogit", "maxsoftmax", "odin", "openmax", "energy", "klmatching"];
    let base = report(&config("baseline", None, &all), &data);
    let frozen = CiderConfig {
        epochs: 0,
        compactness_weight: 0.0,
        ..CiderConfig::default()
    };
    let cider = report(&config("cider", Some(frozen), &all), &data);
    assert_eq!(base.rows.len(), 7);
    for (b, c) in base.rows.iter().zip(&cider.rows) {
        assert_eq!(b.detector, c.detector);
        let (x, y) = (b.auroc().unwrap(), c.auroc().unwrap());
        assert!((x - y).abs() <= 0.02, "{}: baseline {x}, cider {y}", b.detector);
    }
}

#[test]
fn identical_reports_bold_the_first_condition() {
    let data = inputs(&support::scenarios::sanity());
    let base = report(&config("baseline", None, &["maxlogit"]), &data);
    let mut twin = base.clone();
    for r in &mut twin.rows {
        r.condition = "again".into();
    }
    let table = compare_conditions(&[base, twin]).unwrap();
    let cells = row_cells(&table, "MaxLogit");
    assert!(cells[0].starts_with("**") && !cells[1].starts_with("**"), "{table}");
}
