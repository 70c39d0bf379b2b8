//! Benchmark harness: dataset loading and generation, the compression-ratio
//! experiment grid, metric normalization and report I/O.

mod data;
mod experiment;
mod report;

pub use data::{
    class_centroids, class_separation, gen_synthetic, load_cifar10, nearest_centroid_accuracy, parse_cifar_batch,
    read_cifar_batch, take_subset, write_cifar_batch, Subset, SyntheticSpec, CIFAR_CHANNELS, CIFAR_CLASSES, CIFAR_RECORD_LEN, CIFAR_SIDE, CIFAR_TEST_FILE, CIFAR_TRAIN_FILES,
    DATA_DIR_ENV,
};
pub use experiment::{
    run_cell, run_experiment, run_transfer_experiment, CellResult, DatasetSource, ExperimentConfig, TransferConfig,
    TransferRow, Transport, CONFIG_VERSION,
};
pub use report::{
    emit_report, format_summary, median, normalize_metrics, parse_report, read_report, render_report, summarize,
    CellFailure, ExperimentReport, ExperimentRow, ReportFormat, SummaryRow, CSV_HEADER, REPORT_VERSION,
};
