use std::fs;

use sat2qubo::annealer::ScheduleParams;
use sat2qubo::cnf::{generate_random, write_dimacs};
use sat2qubo::harness::{self, ExperimentConfig, HarnessError, InstanceSource};
use sat2qubo::transforms::TransformKind;
use sat2qubo::Exec;

#[test]
fn metrics_are_a_fold_over_persisted_runs() {
    let cfg = ExperimentConfig {
        source: InstanceSource::Generate { n: 7, m: 30, count: 4, seed: 2, require_sat: true },
        transforms: vec![TransformKind::ChancellorJ5, TransformKind::CountTrue],
        budgets: vec![300, 3_000],
        runs: 6,
        precision: 64,
        schedule: ScheduleParams::default(),
        seed: 8,
        exec: Exec::Parallel,
    };
    let out = harness::run_experiment(&cfg).unwrap();
    assert_eq!(out.runs.len(), 4 * 2 * 2 * 6);
    assert!(out.errors.is_empty());

    let set = harness::load_instances(&cfg.source).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    harness::write_outputs(tmp.path(), &cfg, &set, &out).unwrap();
    let back = harness::read_runs_csv(&tmp.path().join("runs.csv")).unwrap();
    assert_eq!(back, out.runs);
    assert_eq!(harness::aggregate(&back), out.metrics);
    for m in &out.metrics {
        assert!((0.0..=100.0).contains(&m.solved_instances_pct));
        assert!((0.0..=100.0).contains(&m.correct_solutions_pct));
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 8);
    assert_eq!(manifest["instances"].as_array().unwrap().len(), 4);
}

#[test]
fn paper_shaped_config_is_expressible() {
    let mut cfg = ExperimentConfig::desk_scale(1);
    assert!(matches!(cfg.source, InstanceSource::Generate { n: 11, m: 46, count: 50, .. }));
    assert_eq!(cfg.budgets, vec![1_000, 10_000, 100_000, 1_000_000]);
    cfg.source = InstanceSource::Generate { n: 11, m: 46, count: 1000, seed: 1, require_sat: true };
    cfg.budgets = (3..=8).map(|e| 10u64.pow(e)).collect();
    cfg.validate().unwrap();
    let json = serde_json::to_string(&cfg).unwrap();
    let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn stats_bits_follow_construction() {
    let set = harness::generate_instances(11, 46, 20, 4, false).unwrap();
    let rows = harness::stats_report(&set, &TransformKind::ALL);
    assert_eq!(rows.len(), 80);
    let mut count_true_bits = Vec::new();
    for r in &rows {
        match r.transform {
            TransformKind::ChancellorJ1 | TransformKind::ChancellorJ5 | TransformKind::Algorithm => assert_eq!(r.bits, 57),
            TransformKind::CountTrue => {
                assert!(r.bits <= 57);
                count_true_bits.push(r.bits);
            }
        }
    }
    count_true_bits.sort_unstable();
    count_true_bits.dedup();
    assert!(count_true_bits.len() > 1, "CountTrue bit counts should vary: {count_true_bits:?}");
}

#[test]
fn directory_source_reads_cnf_files_in_name_order() {
    let tmp = tempfile::tempdir().unwrap();
    let a = generate_random(5, 10, 1).unwrap();
    let b = generate_random(6, 12, 2).unwrap();
    fs::write(tmp.path().join("b.cnf"), write_dimacs(&b)).unwrap();
    fs::write(tmp.path().join("a.cnf"), write_dimacs(&a)).unwrap();
    fs::write(tmp.path().join("notes.txt"), "ignored").unwrap();
    let set = harness::load_directory(tmp.path()).unwrap();
    assert_eq!(set.len(), 2);
    assert_eq!((set[0].name.as_str(), &set[0].formula), ("a.cnf", &a));
    assert_eq!(set[1].formula, b);
    assert!(set.iter().all(|i| i.satisfiable.is_some()));

    fs::write(tmp.path().join("c.cnf"), "p cnf 3 1\n1 2 0\n").unwrap();
    assert!(matches!(harness::load_directory(tmp.path()), Err(HarnessError::Parse { .. })));
    assert!(matches!(
        harness::load_directory(&tmp.path().join("missing")),
        Err(HarnessError::Read { .. })
    ));
}
