mod common;

use latentwire::bench::{run_cell, run_experiment, Transport};
use latentwire::zoo::count_parameters;
use latentwire::CompressionRatio;

fn ratios(list: &[u64]) -> Vec<CompressionRatio> {
    list.iter().map(|&r| CompressionRatio::integer(r).unwrap()).collect()
}

#[test]
fn baseline_only_normalizes_to_one() {
    let report = run_experiment(&common::tiny_experiment()).unwrap();
    assert_eq!(report.rows.len(), 1);
    let row = &report.rows[0];
    assert!(row.cr.is_baseline());
    for norm in [row.acc_norm, row.params_norm, row.train_norm, row.test_norm] {
        assert_eq!(norm, Some(1.0));
    }
}

#[test]
fn seeds_are_isolated_and_runs_repeat() {
    let cfg = latentwire::bench::ExperimentConfig { ratios: ratios(&[1, 4, 16]), seeds: vec![0, 1], ..common::tiny_experiment() };
    let a = run_experiment(&cfg).unwrap();
    assert_eq!(a.rows.len(), 6);
    let hashes: std::collections::HashSet<_> = a.rows.iter().map(|r| r.classifier_hash).collect();
    assert_eq!(hashes.len(), 6);
    // Parameter counts come from the shape walk and shrink with cr.
    let params: Vec<u64> = a.rows.iter().filter(|r| r.seed == 0).map(|r| r.params).collect();
    assert!(params.windows(2).all(|w| w[0] > w[1]), "{params:?}");

    let b = run_experiment(&cfg).unwrap();
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!((x.cr, x.seed, x.accuracy, x.params, x.classifier_hash), (y.cr, y.seed, y.accuracy, y.params, y.classifier_hash));
        assert_eq!(x.device_accuracy, y.device_accuracy);
    }
}

#[test]
fn failed_cells_do_not_disturb_others() {
    let cfg = latentwire::bench::ExperimentConfig { ratios: ratios(&[1, 5]), ..common::tiny_experiment() };
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].cr, CompressionRatio::integer(5).unwrap());
    let alone = run_experiment(&common::tiny_experiment()).unwrap();
    assert_eq!(report.rows[0].classifier_hash, alone.rows[0].classifier_hash);
    assert_eq!(report.rows[0].acc_norm, Some(1.0));
}

#[test]
fn parallel_jobs_match_serial() {
    let serial = latentwire::bench::ExperimentConfig { ratios: ratios(&[1, 8]), seeds: vec![3, 4], ..common::tiny_experiment() };
    let parallel = latentwire::bench::ExperimentConfig { jobs: 3, ..serial.clone() };
    let (a, b) = (run_experiment(&serial).unwrap(), run_experiment(&parallel).unwrap());
    let key = |r: &latentwire::bench::ExperimentRow| (r.cr, r.seed, r.accuracy, r.classifier_hash);
    assert_eq!(a.rows.iter().map(key).collect::<Vec<_>>(), b.rows.iter().map(key).collect::<Vec<_>>());
}

#[test]
fn tcp_transport_matches_in_process() {
    let cfg = latentwire::bench::ExperimentConfig { ratios: ratios(&[4]), ..common::tiny_experiment() };
    let (train, test) = cfg.dataset.load(cfg.data_seed).unwrap();
    let cr = CompressionRatio::integer(4).unwrap();
    let local = run_cell(&cfg, &train, &test, cr, 0).unwrap();
    let tcp_cfg = latentwire::bench::ExperimentConfig { transport: Transport::Tcp, ..cfg.clone() };
    let tcp = run_cell(&tcp_cfg, &train, &test, cr, 0).unwrap();
    assert_eq!(local.row.accuracy, tcp.row.accuracy);
    assert_eq!(local.row.classifier_hash, tcp.row.classifier_hash);
    assert_eq!(local.hub.records(latentwire::Split::Test), tcp.hub.records(latentwire::Split::Test));
    let spec = local.classifier.spec();
    assert_eq!(local.row.params as usize, common::recount_parameters(spec));
    assert_eq!(local.row.params as usize, count_parameters(spec, &[16, 16, 3]).unwrap());
}

#[test]
fn served_accuracy_equals_local_training() {
    for cr in [1, 8] {
        let eq = common::pipeline_equivalence(cr, 11);
        assert_eq!(eq.records, 96);
        assert_eq!(eq.served_hash, eq.local_hash, "cr {cr}");
        assert_eq!(eq.served_accuracy, eq.local_accuracy, "cr {cr}");
    }
}
