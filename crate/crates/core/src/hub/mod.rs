//! Server side: frame ingestion, latent aggregation, classifier training and serving,
//! and per-device reconstruction.

mod server;
pub mod wire;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use server::{serve_stream, ServeStats, Server, WireClient};
use wire::{ScanEvent, WireError, FLAG_TEST_SPLIT};

use crate::edge::{LatentRecord, Sink};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::Tensor;
use crate::train::{train_classifier, Content, LabeledDataset, Split, TrainConfig, TrainHistory};
use crate::zoo::{build_vanilla_classifier, Family, ModelSpec};

/// One-byte per-frame status returned to senders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Ack {
    Accepted = 0x00,
    BadMagic = 0x01,
    BadVersion = 0x02,
    BadCrc = 0x03,
    Truncated = 0x04,
    ShapeMismatch = 0x05,
    Duplicate = 0x06,
}

impl Ack {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0x00 => Self::Accepted,
            0x01 => Self::BadMagic,
            0x02 => Self::BadVersion,
            0x03 => Self::BadCrc,
            0x04 => Self::Truncated,
            0x05 => Self::ShapeMismatch,
            0x06 => Self::Duplicate,
            _ => return None,
        })
    }

    pub fn is_accepted(self) -> bool {
        self == Self::Accepted
    }
}

impl From<&WireError> for Ack {
    fn from(e: &WireError) -> Self {
        match e {
            WireError::BadMagic => Self::BadMagic,
            WireError::BadVersion(_) => Self::BadVersion,
            WireError::BadCrc { .. } => Self::BadCrc,
            // An over-long frame can never be completed within the limit.
            WireError::Truncated { .. } | WireError::FrameTooLarge(_) => Self::Truncated,
            WireError::ShapeMismatch(_) | WireError::Oversize(_) => Self::ShapeMismatch,
        }
    }
}

pub fn split_flags(split: Split) -> u8 {
    match split {
        Split::Train => 0,
        Split::Test => FLAG_TEST_SPLIT,
    }
}

pub fn flags_split(flags: u8) -> Split {
    if flags & FLAG_TEST_SPLIT != 0 {
        Split::Test
    } else {
        Split::Train
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceCounters {
    pub accepted: u64,
    pub duplicates: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestCounters {
    pub devices: BTreeMap<u32, DeviceCounters>,
    /// Frames rejected before a device id could be read.
    pub malformed: u64,
}

/// Which classifier the hub should train on the assembled latents.
#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierChoice {
    Vanilla { family: Family, pool_stride: usize },
    Spec(ModelSpec),
}

#[derive(Debug, Default)]
struct HubState {
    decoders: HashMap<u32, Arc<Model>>,
    store: Vec<(LatentRecord, Split)>,
    seen: HashSet<(u32, u64)>,
    counters: IngestCounters,
}

/// Aggregation point for latents from all devices.
#[derive(Debug)]
pub struct Hub {
    num_classes: usize,
    state: Mutex<HubState>,
    /// Write-locked for the whole of training so predictions never overlap it.
    classifier: RwLock<Option<Arc<Model>>>,
}

impl Hub {
    pub fn new(num_classes: usize) -> Self {
        Self { num_classes, state: Mutex::default(), classifier: RwLock::default() }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn state(&self) -> MutexGuard<'_, HubState> {
        self.state.lock().expect("hub state poisoned")
    }

    /// Install or replace the decoder used to reconstruct `device_id`'s latents.
    pub fn register_decoder(&self, device_id: u32, decoder: Model) -> Result<()> {
        decoder.spec().validate()?;
        self.state().decoders.insert(device_id, Arc::new(decoder));
        Ok(())
    }

    pub fn has_decoder(&self, device_id: u32) -> bool {
        self.state().decoders.contains_key(&device_id)
    }

    /// Decode one frame and append it. The split argument is authoritative.
    pub fn ingest(&self, frame: &[u8], split: Split) -> Ack {
        match wire::decode_frame(frame) {
            Ok((frame, _)) => self.ingest_record(frame.record, split),
            Err(e) => {
                self.note_malformed();
                Ack::from(&e)
            }
        }
    }

    pub(crate) fn ingest_event(&self, event: ScanEvent) -> Ack {
        match event {
            ScanEvent::Frame(f) => self.ingest_record(f.record, flags_split(f.flags)),
            ScanEvent::Rejected(e) => {
                self.note_malformed();
                Ack::from(&e)
            }
        }
    }

    fn note_malformed(&self) {
        self.state().counters.malformed += 1;
    }

    /// Append an already-decoded record unless its (device, record) id was seen.
    pub fn ingest_record(&self, record: LatentRecord, split: Split) -> Ack {
        if record.validate().is_err() {
            self.note_malformed();
            return Ack::ShapeMismatch;
        }
        let mut state = self.state();
        let key = (record.device_id, record.record_id);
        let fresh = state.seen.insert(key);
        let counters = state.counters.devices.entry(record.device_id).or_default();
        if !fresh {
            counters.duplicates += 1;
            return Ack::Duplicate;
        }
        counters.accepted += 1;
        state.store.push((record, split));
        Ack::Accepted
    }

    pub fn store_len(&self) -> usize {
        self.state().store.len()
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.state().store.iter().filter(|(_, s)| *s == split).count()
    }

    pub fn records(&self, split: Split) -> Vec<LatentRecord> {
        self.state().store.iter().filter(|(_, s)| *s == split).map(|(r, _)| r.clone()).collect()
    }

    pub fn counters(&self) -> IngestCounters {
        self.state().counters.clone()
    }

    /// Stored latents of one split as a dataset, in ingestion order.
    pub fn assemble(&self, split: Split) -> Result<LabeledDataset> {
        let state = self.state();
        let mut first: Option<&[u32]> = None;
        let mut samples = Vec::new();
        for (record, _) in state.store.iter().filter(|(_, s)| *s == split) {
            match first {
                None => first = Some(&record.shape),
                Some(shape) if shape != record.shape.as_slice() => {
                    return Err(Error::HeterogeneousShapes { first: shape.to_vec(), other: record.shape.clone() })
                }
                _ => {}
            }
            let label = record
                .label_index()
                .ok_or_else(|| Error::Dataset(format!("record {}/{} is unlabeled", record.device_id, record.record_id)))?;
            samples.push((record.to_tensor()?, label));
        }
        LabeledDataset::new(samples, split, self.num_classes, Content::Latents)
    }

    /// Train a classifier on the assembled training split and install it.
    pub fn train_classifier(&self, choice: &ClassifierChoice, cfg: &TrainConfig) -> Result<TrainHistory> {
        let mut slot = self.classifier.write().expect("classifier lock poisoned");
        let data = self.assemble(Split::Train)?;
        let shape = data.sample_shape().ok_or_else(|| Error::Dataset("hub holds no training latents".into()))?;
        let spec = match choice {
            ClassifierChoice::Vanilla { family, pool_stride } => {
                build_vanilla_classifier(shape, *family, self.num_classes, *pool_stride)?
            }
            ClassifierChoice::Spec(spec) => {
                if spec.input_shape != shape {
                    return Err(Error::ShapeMismatch(format!(
                        "classifier expects {:?}, latents are {shape:?}",
                        spec.input_shape
                    )));
                }
                spec.clone()
            }
        };
        let model = Model::init(spec, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
        let (model, history) = train_classifier(model, &data, cfg)?;
        *slot = Some(Arc::new(model));
        Ok(history)
    }

    /// Install an externally trained classifier.
    pub fn set_classifier(&self, model: Model) {
        *self.classifier.write().expect("classifier lock poisoned") = Some(Arc::new(model));
    }

    pub fn classifier(&self) -> Option<Arc<Model>> {
        self.classifier.read().expect("classifier lock poisoned").clone()
    }

    pub fn predict(&self, record: &LatentRecord) -> Result<usize> {
        let model = self.classifier().ok_or(Error::NoClassifier)?;
        let x = record.to_tensor()?;
        x.expect_shape(model.input_shape())?;
        model.predict(&x)
    }

    /// Accuracy of served predictions over one stored split, overall and per device.
    pub fn accuracy(&self, split: Split) -> Result<(f64, BTreeMap<u32, f64>)> {
        let records = self.records(split);
        let mut per: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
        let mut correct = 0;
        for r in &records {
            let hit = Some(self.predict(r)?) == r.label_index();
            let entry = per.entry(r.device_id).or_default();
            entry.0 += usize::from(hit);
            entry.1 += 1;
            correct += usize::from(hit);
        }
        let overall = if records.is_empty() { 0.0 } else { correct as f64 / records.len() as f64 };
        Ok((overall, per.into_iter().map(|(d, (c, n))| (d, c as f64 / n as f64)).collect()))
    }

    /// Run the record's device decoder on its latent.
    pub fn reconstruct(&self, record: &LatentRecord) -> Result<Tensor> {
        let decoder = self.state().decoders.get(&record.device_id).cloned().ok_or(Error::MissingDecoder(record.device_id))?;
        let z = record.to_tensor()?;
        z.expect_shape(decoder.input_shape())?;
        decoder.forward(&z)
    }

    /// Write the store as back-to-back frames; the split travels in the flags.
    pub fn dump<W: Write>(&self, mut out: W) -> Result<usize> {
        let state = self.state();
        for (record, split) in &state.store {
            out.write_all(&wire::encode_frame(record, split_flags(*split))?)?;
        }
        out.flush()?;
        Ok(state.store.len())
    }
}

/// In-process sink that still goes through frame encoding and decoding.
#[derive(Debug, Clone)]
pub struct HubSink {
    hub: Arc<Hub>,
}

impl HubSink {
    pub fn new(hub: Arc<Hub>) -> Self {
        Self { hub }
    }
}

impl Sink for HubSink {
    fn push(&self, record: &LatentRecord, split: Split) -> Result<()> {
        let bytes = wire::encode_frame(record, split_flags(split))?;
        match self.hub.ingest(&bytes, split) {
            Ack::Accepted => Ok(()),
            ack => Err(Error::Rejected(ack)),
        }
    }
}
