//! Simulated edge devices: local shards, per-device autoencoders, latent export.

mod device;
mod partition;
mod record;

use std::sync::Mutex;

pub use device::{device_seed, DeviceNode};
pub use partition::{partition_dataset, PartitionMode};
pub use record::{LatentRecord, MAX_DIMS, UNLABELED};

use crate::error::Result;
use crate::train::Split;

/// Destination for exported latent records; shared by concurrently exporting devices.
pub trait Sink: Sync {
    fn push(&self, record: &LatentRecord, split: Split) -> Result<()>;
}

/// Sink that keeps everything in memory, in push order.
#[derive(Debug, Default)]
pub struct CollectSink {
    records: Mutex<Vec<(LatentRecord, Split)>>,
}

impl CollectSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("sink poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_records(self) -> Vec<(LatentRecord, Split)> {
        self.records.into_inner().expect("sink poisoned")
    }
}

impl Sink for CollectSink {
    fn push(&self, record: &LatentRecord, split: Split) -> Result<()> {
        self.records.lock().expect("sink poisoned").push((record.clone(), split));
        Ok(())
    }
}
