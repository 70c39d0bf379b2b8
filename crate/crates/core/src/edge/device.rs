use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::record::{LatentRecord, UNLABELED};
use super::Sink;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::Tensor;
use crate::train::{train_autoencoder, Autoencoder, LabeledDataset, Split, TrainConfig, TrainHistory};
use crate::zoo::{build_autoencoder, CompressionRatio};

/// Mix a device id into a run seed so each device draws its own init and batch order.
pub fn device_seed(seed: u64, device_id: u32) -> u64 {
    seed ^ u64::from(device_id).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone)]
struct Fitted {
    ratio: CompressionRatio,
    encoder: Model,
    /// Held for out-of-band registration with the hub; never placed on the record path.
    decoder: Model,
}

/// A simulated edge device with a private data shard and its own autoencoder.
#[derive(Debug, Clone)]
pub struct DeviceNode {
    id: u32,
    train: LabeledDataset,
    test: LabeledDataset,
    fitted: Option<Fitted>,
    next_record: u64,
}

impl DeviceNode {
    pub fn new(id: u32, train: LabeledDataset, test: LabeledDataset) -> Self {
        Self { id, train, test, fitted: None, next_record: 0 }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn dataset(&self, split: Split) -> &LabeledDataset {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted.is_some()
    }

    pub fn ratio(&self) -> Option<CompressionRatio> {
        self.fitted.as_ref().map(|f| f.ratio)
    }

    pub fn encoder(&self) -> Option<&Model> {
        self.fitted.as_ref().map(|f| &f.encoder)
    }

    /// Next record id to be issued.
    pub fn next_record_id(&self) -> u64 {
        self.next_record
    }

    /// Train this device's autoencoder on its local training shard.
    ///
    /// The seed in `cfg` is mixed with the device id. Refitting replaces the
    /// previous weights; record ids keep counting up.
    pub fn fit_autoencoder(&mut self, cr: CompressionRatio, hidden_width: usize, cfg: &TrainConfig) -> Result<TrainHistory> {
        let shape = self
            .train
            .sample_shape()
            .ok_or_else(|| Error::Dataset(format!("device {} has an empty training shard", self.id)))?
            .to_vec();
        let spec = build_autoencoder(&shape, cr, hidden_width)?;
        let seed = device_seed(cfg.seed, self.id);
        let ae = Autoencoder::init(&spec, &mut ChaCha8Rng::seed_from_u64(seed))?;
        let images: Vec<Tensor> = self.train.images().cloned().collect();
        let (ae, history) = train_autoencoder(ae, &images, &cfg.clone().with_seed(seed))?;
        let (encoder, decoder) = ae.split()?;
        log::debug!("device {} fitted cr={cr} latent={:?}", self.id, encoder.output_shape());
        self.fitted = Some(Fitted { ratio: cr, encoder, decoder });
        Ok(history)
    }

    /// Decoder to register with the hub out of band.
    pub fn export_decoder(&self) -> Result<Model> {
        self.fitted.as_ref().map(|f| f.decoder.clone()).ok_or(Error::NotFitted(self.id))
    }

    /// Run the encoder in inference mode and wrap the latent in a fresh record.
    pub fn encode(&mut self, sample: &Tensor, label: u16) -> Result<LatentRecord> {
        let fitted = self.fitted.as_ref().ok_or(Error::NotFitted(self.id))?;
        encode_with(fitted, self.id, &mut self.next_record, sample, label)
    }

    /// Encode every sample of `split` in order and push it to `sink`.
    pub fn export_latents(&mut self, split: Split, sink: &dyn Sink) -> Result<usize> {
        let fitted = self.fitted.as_ref().ok_or(Error::NotFitted(self.id))?;
        let data = match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        };
        for (emitted, (x, label)) in data.samples.iter().enumerate() {
            let label = u16::try_from(*label)
                .ok()
                .filter(|&l| l != UNLABELED)
                .ok_or(Error::LabelOutOfRange { label: *label, classes: UNLABELED as usize })?;
            let record = encode_with(fitted, self.id, &mut self.next_record, x, label)?;
            sink.push(&record, split).map_err(|e| Error::Sink { emitted, reason: e.to_string() })?;
        }
        Ok(data.len())
    }
}

fn encode_with(fitted: &Fitted, id: u32, next: &mut u64, sample: &Tensor, label: u16) -> Result<LatentRecord> {
    sample.expect_shape(fitted.encoder.input_shape())?;
    let latent = fitted.encoder.forward(sample)?;
    let record = LatentRecord::from_tensor(id, *next, label, &latent)?;
    *next += 1;
    Ok(record)
}
