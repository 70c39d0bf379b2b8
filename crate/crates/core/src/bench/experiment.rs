use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{gen_synthetic, load_cifar10, take_subset, Subset, SyntheticSpec, DATA_DIR_ENV};
use super::report::{normalize_metrics, CellFailure, ExperimentReport, ExperimentRow, ReportFormat};
use crate::edge::{partition_dataset, DeviceNode, PartitionMode, Sink};
use crate::error::{Error, Result};
use crate::hub::{ClassifierChoice, Hub, HubSink, Server, WireClient};
use crate::model::Model;
use crate::nn::OptimizerConfig;
use crate::train::{
    assemble_transfer, base_fingerprint, evaluate, pretrain_base, transfer_stage_one, transfer_stage_two, LabeledDataset,
    Split, TrainConfig,
};
use crate::zoo::{count_parameters, standin_base, CompressionRatio, Family};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    /// Falls back to the data-dir environment variable when `dir` is absent.
    Cifar10 {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dir: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subset: Option<Subset>,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        Self::Synthetic(SyntheticSpec::default())
    }
}

impl DatasetSource {
    pub fn name(&self) -> String {
        match self {
            Self::Synthetic(_) => "synthetic".into(),
            Self::Cifar10 { subset: None, .. } => "cifar10".into(),
            Self::Cifar10 { subset: Some(s), .. } => format!("cifar10-{s}"),
        }
    }

    pub fn load(&self, data_seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
        match self {
            Self::Synthetic(spec) => gen_synthetic(spec, data_seed),
            Self::Cifar10 { dir, subset } => {
                let dir = dir
                    .clone()
                    .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
                    .ok_or_else(|| Error::Config(format!("no cifar10 directory given and {DATA_DIR_ENV} is unset")))?;
                let (train, test) = load_cifar10(&dir)?;
                Ok(match subset {
                    None => (train, test),
                    Some(s) => (take_subset(&train, s.classes, Some(s.per_class)), take_subset(&test, s.classes, None)),
                })
            }
        }
    }
}

/// How devices reach the hub.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transport {
    /// Frames are encoded and decoded but never leave the process.
    #[default]
    InProcess,
    /// A loopback TCP server per cell, one connection per device.
    Tcp,
}

impl std::str::FromStr for Transport {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in-process" => Ok(Self::InProcess),
            "tcp" => Ok(Self::Tcp),
            _ => Err(Error::Parse(format!("unknown transport `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub version: u32,
    pub dataset: DatasetSource,
    /// Seed for dataset generation; fixed across cells.
    pub data_seed: u64,
    pub ratios: Vec<CompressionRatio>,
    pub family: Family,
    pub pool_stride: usize,
    pub devices: usize,
    pub partition: PartitionMode,
    pub hidden_width: usize,
    pub autoencoder: TrainConfig,
    pub classifier: TrainConfig,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub format: ReportFormat,
    pub transport: Transport,
    /// Cells run concurrently up to this bound.
    pub jobs: usize,
    /// Test time is the fastest of this many evaluation passes.
    pub timing_repeats: usize,
}

impl Default for ExperimentConfig {
    /// Desk-scale defaults for the synthetic benchmark.
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            dataset: DatasetSource::default(),
            data_seed: 0,
            ratios: [1, 4, 8, 16].map(|r| CompressionRatio::integer(r).expect("positive")).to_vec(),
            family: Family::A,
            // Stride-1 pooling keeps parameter counts ordered in cr; stride 2 inverts cr 4 and 8.
            pool_stride: 1,
            devices: 4,
            partition: PartitionMode::Iid,
            hidden_width: 16,
            autoencoder: TrainConfig::autoencoder().with_epochs(8),
            classifier: TrainConfig::classifier().with_epochs(8).with_augment(false),
            seeds: vec![0, 1, 2],
            output: None,
            format: ReportFormat::Csv,
            transport: Transport::InProcess,
            jobs: 1,
            timing_repeats: 20,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("unsupported config version {}", self.version)));
        }
        if self.ratios.is_empty() {
            return Err(Error::Config("at least one compression ratio is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.devices == 0 || self.jobs == 0 || self.timing_repeats == 0 || self.pool_stride == 0 {
            return Err(Error::Config("devices, jobs, timing_repeats and pool_stride must be >= 1".into()));
        }
        self.autoencoder.validate()?;
        self.classifier.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Everything a finished cell knows beyond its report row.
#[derive(Debug)]
pub struct CellResult {
    pub row: ExperimentRow,
    pub classifier: Arc<Model>,
    pub hub: Arc<Hub>,
}

fn send_all(devices: &mut [DeviceNode], sink: &dyn Sink) -> Result<usize> {
    let mut emitted = 0;
    for device in devices.iter_mut() {
        emitted += device.export_latents(Split::Train, sink)?;
        emitted += device.export_latents(Split::Test, sink)?;
    }
    Ok(emitted)
}

/// Run one (cr, seed) cell end to end: partition, fit devices, ship latents,
/// train and evaluate the hub classifier.
pub fn run_cell(
    cfg: &ExperimentConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
    cr: CompressionRatio,
    seed: u64,
) -> Result<CellResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train_shards = partition_dataset(train, cfg.devices, cfg.partition, &mut rng)?;
    let test_shards = partition_dataset(test, cfg.devices, cfg.partition, &mut rng)?;
    let mut devices: Vec<DeviceNode> = train_shards
        .into_iter()
        .zip(test_shards)
        .enumerate()
        .map(|(i, (tr, te))| DeviceNode::new(i as u32, tr, te))
        .collect();

    let hub = Arc::new(Hub::new(train.num_classes));
    let ae_cfg = cfg.autoencoder.clone().with_seed(seed);
    for device in &mut devices {
        device.fit_autoencoder(cr, cfg.hidden_width, &ae_cfg)?;
        hub.register_decoder(device.id(), device.export_decoder()?)?;
    }

    let emitted = match cfg.transport {
        Transport::InProcess => send_all(&mut devices, &HubSink::new(hub.clone()))?,
        Transport::Tcp => {
            let server = Server::spawn(hub.clone(), "127.0.0.1:0")?;
            let mut emitted = 0;
            for device in &mut devices {
                let client = WireClient::connect(server.local_addr())?;
                emitted += send_all(std::slice::from_mut(device), &client)?;
                client.finish()?;
            }
            server.shutdown();
            emitted
        }
    };
    if hub.store_len() != emitted {
        return Err(Error::Dataset(format!("hub stored {} of {emitted} emitted records", hub.store_len())));
    }

    let choice = ClassifierChoice::Vanilla { family: cfg.family, pool_stride: cfg.pool_stride };
    let started = Instant::now();
    hub.train_classifier(&choice, &cfg.classifier.clone().with_seed(seed))?;
    let train_s = started.elapsed().as_secs_f64();
    let classifier = hub.classifier().ok_or(Error::NoClassifier)?;

    let test_latents = hub.assemble(Split::Test)?;
    let mut eval = evaluate(&classifier, &test_latents)?;
    for _ in 1..cfg.timing_repeats {
        eval.seconds = eval.seconds.min(evaluate(&classifier, &test_latents)?.seconds);
    }
    let (_, device_accuracy) = hub.accuracy(Split::Test)?;
    let params = count_parameters(classifier.spec(), classifier.input_shape())?;

    let row = ExperimentRow {
        dataset: cfg.dataset.name(),
        cr,
        seed,
        accuracy: eval.accuracy,
        params: params as u64,
        train_s,
        test_s: eval.seconds,
        acc_norm: None,
        params_norm: None,
        train_norm: None,
        test_norm: None,
        device_accuracy,
        classifier_hash: classifier.fingerprint(),
    };
    log::info!("cell cr={cr} seed={seed}: accuracy {:.4}, {params} params, train {train_s:.3}s", eval.accuracy);
    Ok(CellResult { row, classifier, hub })
}

/// Run every (cr, seed) cell. Failed cells are listed in the report and do not
/// affect the others; rows keep grid order regardless of `jobs`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (train, test) = cfg.dataset.load(cfg.data_seed)?;
    let cells: Vec<(CompressionRatio, u64)> =
        cfg.ratios.iter().flat_map(|&cr| cfg.seeds.iter().map(move |&s| (cr, s))).collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<ExperimentRow>)>> = Mutex::new(Vec::with_capacity(cells.len()));
    std::thread::scope(|scope| {
        for _ in 0..cfg.jobs.min(cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(cr, seed)) = cells.get(i) else { break };
                let outcome = run_cell(cfg, &train, &test, cr, seed).map(|c| c.row);
                results.lock().expect("results poisoned").push((i, outcome));
            });
        }
    });
    let mut results = results.into_inner().expect("results poisoned");
    results.sort_by_key(|(i, _)| *i);

    let mut report = ExperimentReport::default();
    for (i, outcome) in results {
        match outcome {
            Ok(row) => report.rows.push(row),
            Err(e) => {
                let (cr, seed) = cells[i];
                log::warn!("cell cr={cr} seed={seed} failed: {e}");
                report.failures.push(CellFailure { dataset: cfg.dataset.name(), cr, seed, error: e.to_string() });
            }
        }
    }
    // Groups whose baseline failed keep raw metrics only.
    match normalize_metrics(report.clone()) {
        Ok(normalized) => Ok(normalized),
        Err(Error::MissingBaseline { .. }) => Ok(report),
        Err(e) => Err(e),
    }
}

/// Two-stage transfer run on synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    pub data: SyntheticSpec,
    pub data_seed: u64,
    pub seeds: Vec<u64>,
    /// Training of the stand-in base on a separately generated source set.
    pub pretrain: TrainConfig,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub head_width: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            data: SyntheticSpec::default(),
            data_seed: 0,
            seeds: vec![0, 1, 2],
            pretrain: TrainConfig::classifier().with_epochs(3).with_augment(false),
            stage1: TrainConfig::classifier().with_epochs(4).with_augment(false),
            stage2: TrainConfig::classifier()
                .with_epochs(3)
                .with_augment(false)
                .with_optimizer(OptimizerConfig::sgd_momentum()),
            head_width: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub seed: u64,
    pub stage1_accuracy: f64,
    pub two_stage_accuracy: f64,
    /// Frozen base fingerprint identical before and after stage one.
    pub base_unchanged: bool,
}

pub fn run_transfer_experiment(cfg: &TransferConfig) -> Result<Vec<TransferRow>> {
    let (train, test) = gen_synthetic(&cfg.data, cfg.data_seed)?;
    let (source, _) = gen_synthetic(&cfg.data, cfg.data_seed.wrapping_add(0x5EED))?;
    let base_spec = standin_base(&cfg.data.shape());
    cfg.seeds
        .iter()
        .map(|&seed| {
            let base = pretrain_base(base_spec.clone(), &source, &cfg.pretrain.clone().with_seed(seed))?;
            let model = assemble_transfer(&base, cfg.head_width, train.num_classes, &mut ChaCha8Rng::seed_from_u64(seed))?;
            let before = base_fingerprint(&model);
            let (model, _) = transfer_stage_one(model, &train, &cfg.stage1.clone().with_seed(seed))?;
            let base_unchanged = base_fingerprint(&model) == before;
            let stage1_accuracy = evaluate(&model, &test)?.accuracy;
            let (model, _) = transfer_stage_two(model, &train, &cfg.stage2.clone().with_seed(seed))?;
            let two_stage_accuracy = evaluate(&model, &test)?.accuracy;
            Ok(TransferRow { seed, stage1_accuracy, two_stage_accuracy, base_unchanged })
        })
        .collect()
}
