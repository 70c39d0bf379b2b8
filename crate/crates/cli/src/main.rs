use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use latentwire::bench::{
    emit_report, format_summary, gen_synthetic, load_cifar10, read_report, render_report, run_experiment, summarize,
    take_subset, write_cifar_batch, DatasetSource, ExperimentConfig, ReportFormat, Subset, SyntheticSpec, Transport,
    CIFAR_TEST_FILE, CIFAR_TRAIN_FILES, DATA_DIR_ENV,
};
use latentwire::hub::Server;
use latentwire::train::{train_autoencoder, train_classifier, Autoencoder, Content};
use latentwire::zoo::{build_autoencoder, build_vanilla_classifier, DEFAULT_HIDDEN_WIDTH};
use latentwire::{
    evaluate, CompressionRatio, Family, Hub, LabeledDataset, Model, PartitionMode, TrainConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Parser)]
#[command(name = "latentwire", version, about = "Edge/server image classification over autoencoder latents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset in the CIFAR-10 binary layout
    GenData(GenData),
    /// Train an autoencoder for one compression ratio
    TrainAe(TrainAe),
    /// Train and evaluate a vanilla classifier, optionally on encoded latents
    TrainClassifier(TrainClassifierCmd),
    /// Run the compression-ratio experiment grid
    Run(Run),
    /// Accept latent frames over TCP
    Serve(Serve),
    /// Re-read a report and print or convert it
    Report(Report),
}

#[derive(Debug, Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 150)]
    samples_per_class: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory of CIFAR-10 binary batches
    #[arg(long, env = DATA_DIR_ENV)]
    data: PathBuf,
    /// Keep the first C classes, N training images each (e.g. 2x1000)
    #[arg(long)]
    cifar10_subset: Option<Subset>,
}

impl DataArgs {
    /// Load and drop label slots no sample uses.
    fn load(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        let (train, test) = load_cifar10(&self.data)?;
        let (classes, per_class) = match self.cifar10_subset {
            Some(s) => (s.classes, Some(s.per_class)),
            None => (train.labels().chain(test.labels()).max().map_or(0, |m| m + 1), None),
        };
        Ok((take_subset(&train, classes, per_class), take_subset(&test, classes, None)))
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainArgs {
    fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(lr) = self.lr {
            cfg.optimizer = cfg.optimizer.with_lr(lr);
        }
        cfg.with_seed(self.seed)
    }
}

#[derive(Debug, Args)]
struct TrainAe {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "4")]
    cr: CompressionRatio,
    #[arg(long, default_value_t = DEFAULT_HIDDEN_WIDTH)]
    hidden_width: usize,
    #[command(flatten)]
    train: TrainArgs,
    /// Directory for encoder.json and decoder.json
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainClassifierCmd {
    #[command(flatten)]
    data: DataArgs,
    /// Encoder model (JSON) applied to every image first
    #[arg(long)]
    encoder: Option<PathBuf>,
    #[arg(long, default_value = "A")]
    family: Family,
    #[arg(long, default_value_t = 2)]
    pool_stride: usize,
    #[arg(long)]
    no_augment: bool,
    #[command(flatten)]
    train: TrainArgs,
    /// Where to write the trained classifier (JSON)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Run {
    /// Experiment config (TOML); its values take precedence over flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated compression ratios
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<CompressionRatio>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    family: Option<Family>,
    #[arg(long)]
    pool_stride: Option<usize>,
    #[arg(long)]
    devices: Option<usize>,
    #[arg(long)]
    partition: Option<PartitionMode>,
    #[arg(long)]
    transport: Option<Transport>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    hidden_width: Option<usize>,
    #[arg(long)]
    ae_epochs: Option<usize>,
    #[arg(long)]
    classifier_epochs: Option<usize>,
    /// Use CIFAR-10 from this directory instead of synthetic data
    #[arg(long)]
    cifar10: Option<PathBuf>,
    #[arg(long)]
    cifar10_subset: Option<Subset>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<ReportFormat>,
    /// Print the effective config and exit
    #[arg(long)]
    print_config: bool,
}

#[derive(Debug, Args)]
struct Serve {
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: String,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Exit after this many records are stored
    #[arg(long)]
    max_records: Option<usize>,
    /// Write stored records as frames to this file on exit
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Report {
    #[arg(long)]
    input: PathBuf,
    /// Convert to this file (format from the extension unless --format is given)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<ReportFormat>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::GenData(a) => gen_data(a),
        Command::TrainAe(a) => train_ae(a),
        Command::TrainClassifier(a) => train_cls(a),
        Command::Run(a) => run(a),
        Command::Serve(a) => serve(a),
        Command::Report(a) => report(a),
    }
}

fn gen_data(a: GenData) -> Result<()> {
    if a.classes > 10 {
        bail!("the CIFAR-10 layout holds at most 10 classes");
    }
    let spec = SyntheticSpec { classes: a.classes, samples_per_class: a.samples_per_class, ..Default::default() };
    let (train, test) = gen_synthetic(&spec, a.seed)?;
    fs::create_dir_all(&a.out)?;
    // Spread training samples over the five batch files like the real archive.
    let per_file = train.len().div_ceil(CIFAR_TRAIN_FILES.len());
    for (i, name) in CIFAR_TRAIN_FILES.iter().enumerate() {
        let chunk: Vec<_> = train.samples.iter().skip(i * per_file).take(per_file).cloned().collect();
        let part = LabeledDataset { samples: chunk, ..LabeledDataset::empty(train.split, train.num_classes, train.content) };
        write_cifar_batch(&part, fs::File::create(a.out.join(name))?)?;
    }
    write_cifar_batch(&test, fs::File::create(a.out.join(CIFAR_TEST_FILE))?)?;
    log::info!("wrote {} train / {} test images to {}", train.len(), test.len(), a.out.display());
    Ok(())
}

fn train_ae(a: TrainAe) -> Result<()> {
    let (train, _) = a.data.load()?;
    let shape = train.sample_shape().context("empty training set")?.to_vec();
    let spec = build_autoencoder(&shape, a.cr, a.hidden_width)?;
    let cfg = a.train.apply(TrainConfig::autoencoder());
    let ae = Autoencoder::init(&spec, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let images: Vec<_> = train.images().cloned().collect();
    let (ae, history) = train_autoencoder(ae, &images, &cfg)?;
    fs::create_dir_all(&a.out)?;
    let (encoder, decoder) = ae.split()?;
    fs::write(a.out.join("encoder.json"), encoder.to_json()?)?;
    fs::write(a.out.join("decoder.json"), decoder.to_json()?)?;
    println!(
        "latent {:?}, final mse {:.6}, {:.1}s",
        spec.latent_shape,
        history.final_loss().unwrap_or(0.0),
        history.train_seconds
    );
    Ok(())
}

fn encode_all(encoder: &Model, data: &LabeledDataset) -> Result<LabeledDataset> {
    let samples =
        data.samples.iter().map(|(x, l)| Ok((encoder.forward(x)?, *l))).collect::<latentwire::Result<Vec<_>>>()?;
    Ok(LabeledDataset::new(samples, data.split, data.num_classes, Content::Latents)?)
}

fn train_cls(a: TrainClassifierCmd) -> Result<()> {
    let (mut train, mut test) = a.data.load()?;
    if let Some(path) = &a.encoder {
        let encoder = Model::from_json(&fs::read_to_string(path)?)?;
        train = encode_all(&encoder, &train)?;
        test = encode_all(&encoder, &test)?;
    }
    let shape = train.sample_shape().context("empty training set")?.to_vec();
    let spec = build_vanilla_classifier(&shape, a.family, train.num_classes, a.pool_stride)?;
    let cfg = a.train.apply(TrainConfig::classifier().with_augment(!a.no_augment));
    let model = Model::init(spec, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let (model, history) = train_classifier(model, &train, &cfg)?;
    let eval = evaluate(&model, &test)?;
    println!(
        "input {shape:?}, {} params, test accuracy {:.4}, train {:.1}s, test {:.3}s",
        model.parameter_count(),
        eval.accuracy,
        history.train_seconds,
        eval.seconds
    );
    if let Some(out) = a.out {
        fs::write(out, model.to_json()?)?;
    }
    Ok(())
}

/// Recursively overlay `top` onto `base`.
fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn effective_config(a: &Run) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(v) = &a.ratios {
        cfg.ratios = v.clone();
    }
    if let Some(v) = &a.seeds {
        cfg.seeds = v.clone();
    }
    if let Some(v) = a.family {
        cfg.family = v;
    }
    if let Some(v) = a.pool_stride {
        cfg.pool_stride = v;
    }
    if let Some(v) = a.devices {
        cfg.devices = v;
    }
    if let Some(v) = a.partition {
        cfg.partition = v;
    }
    if let Some(v) = a.transport {
        cfg.transport = v;
    }
    if let Some(v) = a.jobs {
        cfg.jobs = v;
    }
    if let Some(v) = a.hidden_width {
        cfg.hidden_width = v;
    }
    if let Some(v) = a.ae_epochs {
        cfg.autoencoder.epochs = v;
    }
    if let Some(v) = a.classifier_epochs {
        cfg.classifier.epochs = v;
    }
    if a.cifar10.is_some() || a.cifar10_subset.is_some() {
        cfg.dataset = DatasetSource::Cifar10 { dir: a.cifar10.clone(), subset: a.cifar10_subset };
    }
    if let Some(v) = &a.out {
        cfg.output = Some(v.clone());
    }
    if let Some(v) = a.format {
        cfg.format = v;
    }
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: toml::Value = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let mut merged = toml::Value::try_from(&cfg)?;
        merge(&mut merged, file);
        cfg = merged.try_into().with_context(|| format!("invalid config {}", path.display()))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(a: Run) -> Result<()> {
    let cfg = effective_config(&a)?;
    if a.print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let report = run_experiment(&cfg)?;
    for f in &report.failures {
        eprintln!("cell cr={} seed={} failed: {}", f.cr, f.seed, f.error);
    }
    match &cfg.output {
        Some(path) => {
            emit_report(&report, path, cfg.format)?;
            log::info!("report written to {}", path.display());
        }
        None => print!("{}", render_report(&report, cfg.format)?),
    }
    eprint!("{}", format_summary(&summarize(&report)));
    if report.rows.is_empty() {
        bail!("every cell failed");
    }
    Ok(())
}

fn serve(a: Serve) -> Result<()> {
    let hub = Arc::new(Hub::new(a.classes));
    let server = Server::spawn(hub.clone(), a.addr.as_str())?;
    log::info!("listening on {}", server.local_addr());
    let limit = a.max_records.unwrap_or(usize::MAX);
    while hub.store_len() < limit {
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    log::info!("stored {} records: {:?}", hub.store_len(), hub.counters());
    if let Some(path) = &a.dump {
        let n = hub.dump(std::io::BufWriter::new(fs::File::create(path)?))?;
        log::info!("dumped {n} frames to {}", path.display());
    }
    drop(server);
    Ok(())
}

fn report(a: Report) -> Result<()> {
    let report = read_report(&a.input)?;
    match (&a.out, a.format) {
        (Some(out), fmt) => emit_report(&report, out, fmt.unwrap_or_else(|| ReportFormat::from_path(out)))?,
        (None, Some(fmt)) => print!("{}", render_report(&report, fmt)?),
        (None, None) => print!("{}", format_summary(&summarize(&report))),
    }
    Ok(())
}
